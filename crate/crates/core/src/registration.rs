//! Rigid registration of 3D correspondences.
//!
//! [`register`] rejects outliers with a length-preservation test between
//! correspondence pairs: a rigid motion keeps `|src_i - src_j|` equal to
//! `|dst_i - dst_j|`, so pairs violating this beyond `beta` are incompatible.
//! The most compatible correspondences seed consensus sets that grow as
//! cliques of the compatibility graph; each set is solved with [`kabsch`] and
//! scored by its inlier count over all correspondences.

use nalgebra::{Matrix3, Vector3, SVD};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Point3, PointCloud, RigidTransform};

/// Singular values below this fraction of the largest one count as zero.
const RANK_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct CorrespondenceSet3D {
    pub src: PointCloud,
    pub dst: PointCloud,
}

impl CorrespondenceSet3D {
    pub fn new(src: PointCloud, dst: PointCloud) -> Result<Self> {
        if src.len() != dst.len() {
            return Err(Error::mismatch("correspondence clouds", src.len(), dst.len()));
        }
        Ok(Self { src, dst })
    }

    pub fn len(&self) -> usize {
        self.src.len()
    }

    pub fn is_empty(&self) -> bool {
        self.src.is_empty()
    }

    fn subset(&self, idx: &[usize]) -> (Vec<Point3>, Vec<Point3>) {
        (
            idx.iter().map(|&i| self.src.points[i]).collect(),
            idx.iter().map(|&i| self.dst.points[i]).collect(),
        )
    }
}

/// Symmetric binary compatibility matrix with unit diagonal.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CompatibilityMatrix {
    pub n: usize,
    data: Vec<bool>,
}

impl CompatibilityMatrix {
    #[inline]
    pub fn get(&self, i: usize, j: usize) -> bool {
        self.data[i * self.n + j]
    }

    pub fn row(&self, i: usize) -> &[bool] {
        &self.data[i * self.n..(i + 1) * self.n]
    }

    pub fn degrees(&self) -> Vec<usize> {
        (0..self.n)
            .map(|i| self.row(i).iter().filter(|b| **b).count())
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegistrationMethod {
    #[default]
    SpatialConsistency,
    /// Plain minimal-sample RANSAC, for ablating the compatibility stage.
    Ransac { iterations: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegistrationParams {
    /// Length-compatibility tolerance, meters.
    pub beta: f64,
    /// Residual bound for inliers, meters.
    pub inlier_threshold: f64,
    pub max_seeds: usize,
    pub local_rounds: usize,
    pub seed: u64,
    #[serde(default)]
    pub method: RegistrationMethod,
}

impl Default for RegistrationParams {
    fn default() -> Self {
        Self {
            beta: 0.01,
            inlier_threshold: 0.01,
            max_seeds: 32,
            local_rounds: 3,
            seed: 0,
            method: RegistrationMethod::SpatialConsistency,
        }
    }
}

impl RegistrationParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.beta > 0.0) {
            return Err(Error::invalid("registration params", "beta must be > 0"));
        }
        if !(self.inlier_threshold > 0.0) {
            return Err(Error::invalid(
                "registration params",
                "inlier threshold must be > 0",
            ));
        }
        if self.max_seeds == 0 {
            return Err(Error::invalid("registration params", "max_seeds must be >= 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PoseEstimate {
    pub transform: RigidTransform,
    /// Sorted indices of correspondences within `inlier_threshold`.
    pub inliers: Vec<usize>,
    /// Root-mean-square residual over the inliers.
    pub rmse: f64,
}

/// Weighted least-squares rigid alignment of `src` onto `dst` (no scale).
pub fn kabsch(src: &[Point3], dst: &[Point3], weights: Option<&[f64]>) -> Result<RigidTransform> {
    let n = src.len();
    if n != dst.len() {
        return Err(Error::mismatch("kabsch inputs", n, dst.len()));
    }
    if n < 3 {
        return Err(Error::Degenerate(format!("{n} correspondences, need 3")));
    }
    if let Some(w) = weights {
        if w.len() != n {
            return Err(Error::mismatch("kabsch weights", n, w.len()));
        }
        if w.iter().any(|x| !(*x >= 0.0) || !x.is_finite()) {
            return Err(Error::invalid("kabsch weights", "must be finite and >= 0"));
        }
    }
    let weight = |i: usize| weights.map_or(1.0, |w| w[i]);
    let total: f64 = (0..n).map(weight).sum();
    if !(total > 0.0) {
        return Err(Error::Degenerate("weights sum to zero".into()));
    }

    let mut mu_s = Vector3::zeros();
    let mut mu_d = Vector3::zeros();
    for i in 0..n {
        mu_s += weight(i) * src[i];
        mu_d += weight(i) * dst[i];
    }
    mu_s /= total;
    mu_d /= total;

    // H = sum w (dst - mu_d)(src - mu_s)^T
    let mut h = Matrix3::zeros();
    for i in 0..n {
        h += weight(i) * (dst[i] - mu_d) * (src[i] - mu_s).transpose();
    }

    let svd = SVD::new(h, true, true);
    let sv = svd.singular_values;
    let smax = sv.max();
    let rank = sv.iter().filter(|s| **s > RANK_TOL * smax.max(f64::MIN_POSITIVE)).count();
    if smax <= 0.0 || rank < 2 {
        return Err(Error::Degenerate(format!(
            "covariance rank {rank} < 2 (collinear or coincident points)"
        )));
    }
    let u = svd.u.expect("u requested");
    let v_t = svd.v_t.expect("v_t requested");
    let d = (u * v_t).determinant().signum();
    let correction = Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, d));
    let rotation = u * correction * v_t;
    let translation = mu_d - rotation * mu_s;
    Ok(RigidTransform {
        rotation,
        translation,
    })
}

/// Entry `(i, j)` is set iff `| |src_i - src_j| - |dst_i - dst_j| | <= beta`.
pub fn build_spatial_compatibility(corr: &CorrespondenceSet3D, beta: f64) -> CompatibilityMatrix {
    let n = corr.len();
    let (s, d) = (&corr.src.points, &corr.dst.points);
    let rows: Vec<Vec<bool>> = (0..n)
        .into_par_iter()
        .map(|i| {
            (0..n)
                .map(|j| {
                    i == j || ((s[i] - s[j]).norm() - (d[i] - d[j]).norm()).abs() <= beta
                })
                .collect()
        })
        .collect();
    CompatibilityMatrix {
        n,
        data: rows.concat(),
    }
}

fn residuals(t: &RigidTransform, corr: &CorrespondenceSet3D) -> Vec<f64> {
    corr.src
        .points
        .iter()
        .zip(&corr.dst.points)
        .map(|(s, d)| (t.transform_point(s) - d).norm())
        .collect()
}

fn inliers_of(t: &RigidTransform, corr: &CorrespondenceSet3D, threshold: f64) -> (Vec<usize>, f64) {
    let r = residuals(t, corr);
    let inliers: Vec<usize> = (0..r.len()).filter(|&i| r[i] <= threshold).collect();
    let rmse = if inliers.is_empty() {
        0.0
    } else {
        (inliers.iter().map(|&i| r[i] * r[i]).sum::<f64>() / inliers.len() as f64).sqrt()
    };
    (inliers, rmse)
}

/// Consensus of a seed: its compatible neighbours, added greedily in order
/// of their degree inside the neighbourhood, keeping the set a clique.
fn grow_consensus(compat: &CompatibilityMatrix, seed: usize) -> Vec<usize> {
    let neighbours: Vec<usize> = (0..compat.n)
        .filter(|&j| j != seed && compat.get(seed, j))
        .collect();
    let mut ranked: Vec<(usize, usize)> = neighbours
        .iter()
        .map(|&j| {
            let local = neighbours.iter().filter(|&&k| compat.get(j, k)).count();
            (local, j)
        })
        .collect();
    ranked.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
    let mut clique = vec![seed];
    for (_, j) in ranked {
        if clique.iter().all(|&k| compat.get(j, k)) {
            clique.push(j);
        }
    }
    clique.sort_unstable();
    clique
}

#[derive(Debug, Clone)]
struct Hypothesis {
    transform: RigidTransform,
    inliers: Vec<usize>,
    rmse: f64,
}

impl Hypothesis {
    fn better_than(&self, other: &Hypothesis) -> bool {
        self.inliers.len() > other.inliers.len()
            || (self.inliers.len() == other.inliers.len() && self.rmse < other.rmse)
    }
}

fn best_of(hyps: impl IntoIterator<Item = Hypothesis>) -> Option<Hypothesis> {
    let mut best: Option<Hypothesis> = None;
    for h in hyps {
        if best.as_ref().is_none_or(|b| h.better_than(b)) {
            best = Some(h);
        }
    }
    best
}

fn hypothesis(corr: &CorrespondenceSet3D, idx: &[usize], threshold: f64) -> Option<Hypothesis> {
    let (s, d) = corr.subset(idx);
    let transform = kabsch(&s, &d, None).ok()?;
    let (inliers, rmse) = inliers_of(&transform, corr, threshold);
    Some(Hypothesis {
        transform,
        inliers,
        rmse,
    })
}

fn spatial_consistency_hypothesis(
    corr: &CorrespondenceSet3D,
    params: &RegistrationParams,
) -> Option<Hypothesis> {
    let compat = build_spatial_compatibility(corr, params.beta);
    let degrees = compat.degrees();
    let mut order: Vec<usize> = (0..corr.len()).collect();
    order.sort_by(|&a, &b| degrees[b].cmp(&degrees[a]).then(a.cmp(&b)));
    order.truncate(params.max_seeds);
    let hyps: Vec<Option<Hypothesis>> = order
        .par_iter()
        .map(|&seed| {
            let consensus = grow_consensus(&compat, seed);
            if consensus.len() < 3 {
                return None;
            }
            hypothesis(corr, &consensus, params.inlier_threshold)
        })
        .collect();
    best_of(hyps.into_iter().flatten())
}

fn ransac_hypothesis(
    corr: &CorrespondenceSet3D,
    params: &RegistrationParams,
    iterations: usize,
) -> Option<Hypothesis> {
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let samples: Vec<Vec<usize>> = (0..iterations)
        .map(|_| sample(&mut rng, corr.len(), 3).into_vec())
        .collect();
    let hyps: Vec<Option<Hypothesis>> = samples
        .par_iter()
        .map(|idx| hypothesis(corr, idx, params.inlier_threshold))
        .collect();
    best_of(hyps.into_iter().flatten())
}

/// Estimates the transform mapping `corr.src` onto `corr.dst`.
pub fn register(corr: &CorrespondenceSet3D, params: &RegistrationParams) -> Result<PoseEstimate> {
    params.validate()?;
    if corr.src.len() != corr.dst.len() {
        return Err(Error::mismatch("correspondence clouds", corr.src.len(), corr.dst.len()));
    }
    if corr.len() < 3 {
        return Err(Error::RegistrationFailed { inliers: corr.len() });
    }
    let best = match params.method {
        RegistrationMethod::SpatialConsistency => spatial_consistency_hypothesis(corr, params),
        RegistrationMethod::Ransac { iterations } => ransac_hypothesis(corr, params, iterations),
    };
    let Some(mut best) = best else {
        return Err(Error::RegistrationFailed { inliers: 0 });
    };
    if best.inliers.len() < 3 {
        return Err(Error::RegistrationFailed {
            inliers: best.inliers.len(),
        });
    }
    for _ in 0..params.local_rounds {
        match hypothesis(corr, &best.inliers, params.inlier_threshold) {
            Some(h) if h.inliers.len() >= best.inliers.len() => {
                let unchanged = h.inliers == best.inliers;
                best = h;
                if unchanged {
                    break;
                }
            }
            _ => break,
        }
    }
    Ok(PoseEstimate {
        transform: best.transform,
        inliers: best.inliers,
        rmse: best.rmse,
    })
}
