//! Track uniqueness: with continuous measurement noise, two different
//! association histories almost surely end in different beliefs.
//!
//! Every history of every initial component is enumerated, so the cost is
//! `n (m + 1)^scans` Kalman updates.

use nalgebra::DVector;
use rand::Rng;

use crate::belief::{GaussianBelief, MeasIndex, TrackLabel};
use crate::error::{Error, Result};
use crate::models::ScenarioModels;
use crate::sim::generate::{generate_measurements, generate_truth_with, measurement_rng, truth_rng};

pub const MAX_TRACKS: usize = 200_000;

/// Beliefs closer than this count as equal.
pub const COLLISION_DISTANCE: f64 = 1e-9;

/// End-of-horizon belief of every `(origin, history)` pair, origins being
/// the initial components.
pub fn enumerate_tracks(
    initial: &[GaussianBelief],
    scans: &[Vec<DVector<f64>>],
    models: &ScenarioModels,
) -> Result<Vec<(TrackLabel, GaussianBelief)>> {
    let total = scans.iter().try_fold(initial.len(), |acc, z| acc.checked_mul(z.len() + 1).filter(|t| *t <= MAX_TRACKS));
    if total.is_none() {
        return Err(Error::ResourceGuard(format!("more than {MAX_TRACKS} track histories")));
    }
    let mut tracks: Vec<(TrackLabel, GaussianBelief)> =
        initial.iter().enumerate().map(|(k, b)| (TrackLabel::initial(k), b.clone())).collect();
    for zs in scans {
        let mut next = Vec::with_capacity(tracks.len() * (zs.len() + 1));
        for (label, belief) in &tracks {
            let predicted = belief.predict(&models.motion)?;
            for (j, z) in zs.iter().enumerate() {
                let (post, _) = predicted.update(z, &models.measurement)?;
                next.push((label.extended(MeasIndex::new(j)), post));
            }
            next.push((label.extended(MeasIndex::NULL), predicted));
        }
        tracks = next;
    }
    Ok(tracks)
}

#[derive(Debug, Clone, PartialEq)]
pub struct UniquenessReport {
    pub tracks: usize,
    /// Smallest [`GaussianBelief::distance`] over pairs of distinct labels.
    pub min_distance: f64,
    pub closest: Option<(TrackLabel, TrackLabel)>,
}

impl UniquenessReport {
    pub fn all_distinct(&self) -> bool {
        self.min_distance > COLLISION_DISTANCE
    }
}

/// Exact minimum of the pairwise distance. The distance bounds the gap in
/// the first mean component, so a sweep in that component can stop early.
pub fn min_pairwise_distance(tracks: &[(TrackLabel, GaussianBelief)]) -> UniquenessReport {
    let mut order: Vec<usize> = (0..tracks.len()).collect();
    let key = |i: usize| tracks[i].1.mean.get(0).copied().unwrap_or(0.0);
    order.sort_by(|&a, &b| key(a).total_cmp(&key(b)));
    let mut best = f64::INFINITY;
    let mut closest = None;
    for (pos, &i) in order.iter().enumerate() {
        for &j in &order[pos + 1..] {
            if key(j) - key(i) > best {
                break;
            }
            let d = tracks[i].1.distance(&tracks[j].1);
            if d < best {
                best = d;
                closest = Some((tracks[i].0.clone(), tracks[j].0.clone()));
            }
        }
    }
    UniquenessReport { tracks: tracks.len(), min_distance: best, closest }
}

/// Simulates `scans` scans from `initial` with the sim generators (seeded
/// from `seed`) and checks every enumerated track for collisions. With
/// `inject_collision` the first measurement of scan 1 is duplicated, which
/// must show up as a zero distance.
pub fn track_uniqueness_experiment(
    seed: u64,
    scans: u32,
    models: &ScenarioModels,
    initial: &[GaussianBelief],
    inject_collision: bool,
) -> Result<UniquenessReport> {
    let truth = generate_truth_with(models, initial, scans, &mut truth_rng(seed));
    let (measured, _) = generate_measurements(&truth, models, &mut measurement_rng(seed));
    let mut zs: Vec<Vec<DVector<f64>>> = measured.iter().map(|s| s.vectors()).collect();
    if inject_collision {
        let first = &mut zs[0];
        if first.is_empty() {
            let mut rng = truth_rng(seed ^ 0x5eed);
            let x = &initial[0].mean;
            first.push(models.measurement.h() * x + DVector::from_fn(models.measurement.meas_dim(), |_, _| rng.random::<f64>()));
        }
        first.push(first[0].clone());
    }
    Ok(min_pairwise_distance(&enumerate_tracks(initial, &zs, models)?))
}
