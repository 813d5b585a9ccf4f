//! Movement of probe-state logit rows in a shared two-component PCA plane.

use nalgebra::{DMatrix, SymmetricEigen, Vector2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gridworld::{GridWorld, NUM_ACTIONS};
use crate::guidance::RailSet;
use crate::policy::{PolicyTable, StateKey};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RowShift {
    /// Post minus base coordinate on the first component.
    pub delta_m1: f64,
    /// Post coordinate on the second component.
    pub m2: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriftReport {
    pub per_row_shifts: Vec<RowShift>,
    pub base_centroid: [f64; 2],
    pub post_centroid: [f64; 2],
    /// Distance between the two centroids.
    pub d: f64,
    /// Top two eigenvalues of the pooled covariance.
    pub explained: [f64; 2],
}

/// Fits one 2-component basis on the centered concatenation of both
/// matrices, projects the uncentered rows, and compares centroids.
pub fn pca_drift(base: &DMatrix<f64>, post: &DMatrix<f64>) -> Result<DriftReport> {
    if base.shape() != post.shape() {
        return Err(Error::InvalidArgument(format!(
            "base is {:?} but post is {:?}",
            base.shape(),
            post.shape()
        )));
    }
    let (n, p) = base.shape();
    if n == 0 || p < 2 {
        return Err(Error::DegenerateProbeSet(format!("{n} probes of dimension {p}")));
    }
    let mut pooled = DMatrix::zeros(2 * n, p);
    pooled.rows_mut(0, n).copy_from(base);
    pooled.rows_mut(n, n).copy_from(post);
    let mean = pooled.row_mean();
    for mut row in pooled.row_iter_mut() {
        row -= &mean;
    }
    let cov = pooled.transpose() * &pooled / (2 * n - 1).max(1) as f64;
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..p).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let (l1, l2) = (eig.eigenvalues[order[0]], eig.eigenvalues[order[1]]);
    if !(l1 > 0.0 && l2 > 1e-12 * l1) {
        return Err(Error::DegenerateProbeSet(format!(
            "pooled probe rows have rank below 2 (eigenvalues {l1:e}, {l2:e})"
        )));
    }
    let v1 = eig.eigenvectors.column(order[0]).into_owned();
    let v2 = eig.eigenvectors.column(order[1]).into_owned();
    let project = |m: &DMatrix<f64>| -> Vec<Vector2<f64>> {
        m.row_iter()
            .map(|r| Vector2::new(r.dot(&v1.transpose()), r.dot(&v2.transpose())))
            .collect()
    };
    let zb = project(base);
    let zp = project(post);
    let centroid = |z: &[Vector2<f64>]| z.iter().sum::<Vector2<f64>>() / z.len() as f64;
    let (cb, cp) = (centroid(&zb), centroid(&zp));
    let per_row_shifts = zb
        .iter()
        .zip(&zp)
        .map(|(b, q)| RowShift {
            delta_m1: q.x - b.x,
            m2: q.y,
        })
        .collect();
    Ok(DriftReport {
        per_row_shifts,
        base_centroid: [cb.x, cb.y],
        post_centroid: [cp.x, cp.y],
        d: (cp - cb).norm(),
        explained: [l1, l2],
    })
}

/// Rail cells plus every open cell that cannot reach the clean start once the
/// junction is walled off, in key order.
pub fn probe_keys(world: &GridWorld, rail: &RailSet) -> Result<Vec<StateKey>> {
    let junction = world.junction()?;
    let from_start = world.distances(world.clean_start()?, &[junction]);
    let mut keys: Vec<StateKey> = world
        .open_cells()
        .filter(|&c| rail.contains(c) || (c != junction && from_start[world.key(c).0].is_none()))
        .map(|c| world.key(c))
        .collect();
    keys.sort();
    Ok(keys)
}

/// One logit row per probe key.
pub fn probe_matrix(policy: &PolicyTable, keys: &[StateKey]) -> DMatrix<f64> {
    DMatrix::from_fn(keys.len(), NUM_ACTIONS, |i, j| policy.row(keys[i])[j])
}

/// Drift of `post` from `base` on the probe set of `world` and `rail`.
pub fn policy_drift(
    world: &GridWorld,
    rail: &RailSet,
    base: &PolicyTable,
    post: &PolicyTable,
) -> Result<DriftReport> {
    let keys = probe_keys(world, rail)?;
    pca_drift(&probe_matrix(base, &keys), &probe_matrix(post, &keys))
}
