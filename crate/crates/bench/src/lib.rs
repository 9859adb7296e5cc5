//! Fixtures shared by the benchmarks.

use fisst_core::{
    BirthModel, ClutterModel, GaussianBelief, HypothesisForest, MeasurementModel, MotionModel, PixelGrid, ScenarioModels, SurvivalModel,
};
use nalgebra::{DMatrix, DVector};

/// 1-D random walk over `[0, 40)` with 40 birth pixels.
pub fn line_models(p_d: f64, lambda_c: f64, alpha: f64) -> ScenarioModels {
    ScenarioModels::new(
        MotionModel::random_walk(1, 0.1).unwrap(),
        MeasurementModel::new(DMatrix::identity(1, 1), DMatrix::from_element(1, 1, 0.1), p_d).unwrap(),
        ClutterModel::new(lambda_c, 40.0).unwrap(),
        BirthModel::full_state(PixelGrid::new(vec![0.0], vec![40.0], vec![40]).unwrap(), alpha).unwrap(),
        SurvivalModel::new(0.99).unwrap(),
    )
    .unwrap()
}

/// `n` targets spaced `spacing` apart starting at 5.
pub fn spaced_forest(n: usize, spacing: f64) -> HypothesisForest {
    HypothesisForest::from_initial((0..n).map(|i| GaussianBelief::scalar(5.0 + spacing * i as f64, 0.3).unwrap()).collect())
}

/// One measurement on each target plus evenly spread clutter points.
pub fn measurements(n: usize, spacing: f64, clutter: usize) -> Vec<DVector<f64>> {
    let mut z: Vec<DVector<f64>> = (0..n).map(|i| DVector::from_element(1, 5.1 + spacing * i as f64)).collect();
    z.extend((0..clutter).map(|k| DVector::from_element(1, 40.0 * (k as f64 + 0.5) / clutter as f64)));
    z
}
