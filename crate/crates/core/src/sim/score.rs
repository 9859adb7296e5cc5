//! Scoring tracker output against ground truth.

use nalgebra::DVector;
use pathfinding::kuhn_munkres::kuhn_munkres_min;
use pathfinding::matrix::Matrix;
use serde::{Deserialize, Serialize};

use super::generate::TruthScan;
use super::run::ScanRecord;
use crate::models::ScenarioModels;

/// Squared distances are matched as integers in these units.
const COST_SCALE: f64 = 1e6;
const COST_CAP: f64 = 1e15;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanScore {
    pub scan: u32,
    pub true_count: usize,
    pub map_count: usize,
    /// Root mean square distance over optimally matched pairs, compared in
    /// measurement space. `None` when nothing can be matched.
    pub rmse: Option<f64>,
    pub dropped_mass: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub scans: Vec<ScanScore>,
    /// Fraction of scans whose most probable hypothesis has the true count.
    pub cardinality_accuracy: f64,
    pub mean_abs_cardinality_error: f64,
    pub mean_rmse: Option<f64>,
    pub total_dropped_mass: f64,
}

/// Minimum-cost matching between two point sets; returns the matched
/// squared distances.
pub fn matched_squared_distances(a: &[DVector<f64>], b: &[DVector<f64>]) -> Vec<f64> {
    if a.is_empty() || b.is_empty() {
        return Vec::new();
    }
    let (rows, cols) = if a.len() <= b.len() { (a, b) } else { (b, a) };
    let d2 = |i: usize, j: usize| (&rows[i] - &cols[j]).norm_squared();
    let costs =
        Matrix::from_rows((0..rows.len()).map(|i| (0..cols.len()).map(move |j| (d2(i, j) * COST_SCALE).min(COST_CAP).round() as i64)))
            .expect("rectangular cost matrix");
    let (_, assignment) = kuhn_munkres_min(&costs);
    assignment.iter().enumerate().map(|(i, &j)| d2(i, j)).collect()
}

pub fn score(truth: &[TruthScan], records: &[ScanRecord], models: &ScenarioModels) -> Metrics {
    let h = models.measurement.h();
    let project = |x: &[f64]| h * DVector::from_column_slice(x);
    let scans: Vec<ScanScore> = records
        .iter()
        .filter_map(|r| {
            let t = truth.iter().find(|t| t.scan == r.scan)?;
            let true_pts: Vec<_> = t.targets.iter().map(|x| project(&x.state)).collect();
            let est_pts: Vec<_> = r.estimates.iter().map(|e| project(&e.mean)).collect();
            let d2 = matched_squared_distances(&true_pts, &est_pts);
            let rmse = (!d2.is_empty()).then(|| (d2.iter().sum::<f64>() / d2.len() as f64).sqrt());
            Some(ScanScore {
                scan: r.scan,
                true_count: t.targets.len(),
                map_count: r.map_cardinality,
                rmse,
                dropped_mass: r.stats.dropped_mass,
            })
        })
        .collect();
    let n = scans.len().max(1) as f64;
    let rmses: Vec<f64> = scans.iter().filter_map(|s| s.rmse).collect();
    Metrics {
        cardinality_accuracy: scans.iter().filter(|s| s.true_count == s.map_count).count() as f64 / n,
        mean_abs_cardinality_error: scans.iter().map(|s| s.true_count.abs_diff(s.map_count) as f64).sum::<f64>() / n,
        mean_rmse: (!rmses.is_empty()).then(|| rmses.iter().sum::<f64>() / rmses.len() as f64),
        total_dropped_mass: scans.iter().map(|s| s.dropped_mass).sum(),
        scans,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pts(v: &[f64]) -> Vec<DVector<f64>> {
        v.iter().map(|x| DVector::from_element(1, *x)).collect()
    }

    #[test]
    fn matching_prefers_the_cheap_pairing() {
        let d = matched_squared_distances(&pts(&[0.0, 10.0]), &pts(&[10.5, 0.2]));
        let mut d = d;
        d.sort_by(f64::total_cmp);
        assert!((d[0] - 0.04).abs() < 1e-12 && (d[1] - 0.25).abs() < 1e-12);
    }

    fn record(scan: u32, means: &[f64]) -> ScanRecord {
        use crate::sim::run::Estimate;
        ScanRecord {
            scan,
            measurements: 0,
            stats: Default::default(),
            hypotheses: vec![],
            cardinality: [(means.len(), 1.0)].into(),
            map_cardinality: means.len(),
            estimates: means.iter().map(|m| Estimate { label: String::new(), mean: vec![*m] }).collect(),
        }
    }

    fn truth(scan: u32, xs: &[f64]) -> TruthScan {
        use crate::sim::generate::TruthTarget;
        TruthScan { scan, targets: xs.iter().enumerate().map(|(i, x)| TruthTarget { id: i as u32, state: vec![*x] }).collect() }
    }

    fn models() -> ScenarioModels {
        use crate::models::*;
        use nalgebra::DMatrix;
        ScenarioModels::new(
            MotionModel::random_walk(1, 0.1).unwrap(),
            MeasurementModel::new(DMatrix::identity(1, 1), DMatrix::from_element(1, 1, 0.1), 0.9).unwrap(),
            ClutterModel::new(0.0, 10.0).unwrap(),
            BirthModel::full_state(PixelGrid::new(vec![0.0], vec![10.0], vec![10]).unwrap(), 0.0).unwrap(),
            SurvivalModel::new(1.0).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn perfect_estimates_score_zero() {
        let m = score(&[truth(1, &[3.0]), truth(2, &[4.0])], &[record(1, &[3.0]), record(2, &[4.0])], &models());
        assert_eq!(m.mean_rmse, Some(0.0));
        assert_eq!(m.mean_abs_cardinality_error, 0.0);
        assert_eq!(m.cardinality_accuracy, 1.0);
    }

    #[test]
    fn missing_track_is_a_cardinality_error_of_one() {
        let m = score(&[truth(1, &[1.0, 5.0, 9.0])], &[record(1, &[1.0, 9.0])], &models());
        assert_eq!(m.scans[0].true_count.abs_diff(m.scans[0].map_count), 1);
        assert_eq!(m.mean_abs_cardinality_error, 1.0);
        assert_eq!(m.scans[0].rmse, Some(0.0));
    }

    #[test]
    fn unequal_sizes_match_the_smaller_set() {
        assert_eq!(matched_squared_distances(&pts(&[0.0, 5.0, 9.0]), &pts(&[5.1])).len(), 1);
        assert!(matched_squared_distances(&pts(&[]), &pts(&[1.0])).is_empty());
    }
}
