//! Symmetry-aware pose error metrics, threshold recalls and mask IoU.
//!
//! Poses passed to the metrics map model-frame points into the camera frame
//! of the evaluated view. Symmetries are model-frame transforms `s` such that
//! the object at pose `T` is indistinguishable from the object at `T ∘ s`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{project_point, CameraIntrinsics, DepthMap, Point3, RigidTransform};
use crate::matching::Mask;
use crate::render::{render_points, Render, SplatRadius};
use crate::spatial::GridIndex;

/// Fractions of the diameter (or image width) forming every threshold grid.
pub const THRESHOLD_FRACTIONS: [f64; 10] = [0.05, 0.10, 0.15, 0.20, 0.25, 0.30, 0.35, 0.40, 0.45, 0.50];

#[derive(Debug, Clone, PartialEq)]
pub struct ObjectModel {
    pub points: Vec<Point3>,
    pub diameter: f64,
    /// Always contains the identity.
    pub symmetries: Vec<RigidTransform>,
    spacing: f64,
}

impl ObjectModel {
    /// Computes the diameter as the maximum pairwise distance.
    pub fn new(points: Vec<Point3>, symmetries: Vec<RigidTransform>) -> Result<Self> {
        let diameter = max_pairwise_distance(&points);
        Self::with_diameter(points, diameter, symmetries)
    }

    /// Uses a supplied diameter, which must cover every pairwise distance.
    pub fn with_diameter(
        points: Vec<Point3>,
        diameter: f64,
        mut symmetries: Vec<RigidTransform>,
    ) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::EmptyModel);
        }
        if points.iter().any(|p| !p.iter().all(|x| x.is_finite())) {
            return Err(Error::invalid("object model", "non-finite point"));
        }
        if !(diameter > 0.0) {
            return Err(Error::invalid("object model", "diameter must be > 0"));
        }
        let actual = max_pairwise_distance(&points);
        if diameter < actual - 1e-6 {
            return Err(Error::invalid(
                "object model",
                format!("diameter {diameter} below max pairwise distance {actual}"),
            ));
        }
        for s in &symmetries {
            s.validate()?;
        }
        let identity = RigidTransform::identity();
        if !symmetries
            .iter()
            .any(|s| s.rotation_error(&identity) < 1e-9 && s.translation.norm() < 1e-9)
        {
            symmetries.insert(0, identity);
        }
        let spacing = median_spacing(&points, diameter);
        Ok(Self {
            points,
            diameter,
            symmetries,
            spacing,
        })
    }

    pub fn is_symmetric(&self) -> bool {
        self.symmetries.len() > 1
    }

    /// Median nearest-neighbor distance between model points.
    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    pub fn splat_radius(&self) -> SplatRadius {
        SplatRadius::FromSpacing(self.spacing)
    }
}

pub fn max_pairwise_distance(points: &[Point3]) -> f64 {
    (0..points.len())
        .into_par_iter()
        .map(|i| {
            points[i + 1..]
                .iter()
                .map(|q| (points[i] - q).norm_squared())
                .fold(0.0, f64::max)
        })
        .reduce(|| 0.0, f64::max)
        .sqrt()
}

fn median_spacing(points: &[Point3], diameter: f64) -> f64 {
    if points.len() < 2 {
        return diameter;
    }
    let index = GridIndex::auto(points, 4.0);
    let mut nn: Vec<f64> = (0..points.len())
        .into_par_iter()
        .map(|i| index.nearest(&points[i], Some(i)).map_or(0.0, |(_, d)| d))
        .collect();
    nn.sort_by(f64::total_cmp);
    let m = nn[nn.len() / 2];
    if m > 0.0 {
        m
    } else {
        // heavily duplicated samples; fall back to the smallest positive gap
        nn.into_iter().find(|d| *d > 0.0).unwrap_or(diameter)
    }
}

fn transformed(model: &ObjectModel, t: &RigidTransform) -> Vec<Point3> {
    model.points.iter().map(|p| t.transform_point(p)).collect()
}

/// Mean distance between corresponding model points under the two poses.
pub fn add_error(model: &ObjectModel, gt: &RigidTransform, pred: &RigidTransform) -> Result<f64> {
    if model.points.is_empty() {
        return Err(Error::EmptyModel);
    }
    let sum: f64 = model
        .points
        .iter()
        .map(|p| (gt.transform_point(p) - pred.transform_point(p)).norm())
        .sum();
    Ok(sum / model.points.len() as f64)
}

/// Mean distance from each ground-truth model point to the closest predicted one.
pub fn adds_error(model: &ObjectModel, gt: &RigidTransform, pred: &RigidTransform) -> Result<f64> {
    if model.points.is_empty() {
        return Err(Error::EmptyModel);
    }
    let pred_pts = transformed(model, pred);
    let index = GridIndex::new(&pred_pts, model.spacing().max(model.diameter * 1e-3) * 2.0);
    let dists: Vec<f64> = model
        .points
        .par_iter()
        .map(|p| {
            index
                .nearest(&gt.transform_point(p), None)
                .map_or(0.0, |(_, d)| d)
        })
        .collect();
    Ok(dists.iter().sum::<f64>() / dists.len() as f64)
}

/// ADD-S for symmetric models, ADD otherwise.
pub fn add_or_adds(model: &ObjectModel, gt: &RigidTransform, pred: &RigidTransform) -> Result<f64> {
    if model.is_symmetric() {
        adds_error(model, gt, pred)
    } else {
        add_error(model, gt, pred)
    }
}

/// True when the (symmetry-appropriate) ADD error is below 10% of the diameter.
pub fn add_recall_01d(model: &ObjectModel, gt: &RigidTransform, pred: &RigidTransform) -> Result<bool> {
    Ok(add_or_adds(model, gt, pred)? < 0.1 * model.diameter)
}

/// `min_s max_i |gt(s(p_i)) - pred(p_i)|`.
pub fn mssd(model: &ObjectModel, gt: &RigidTransform, pred: &RigidTransform) -> Result<f64> {
    if model.points.is_empty() {
        return Err(Error::EmptyModel);
    }
    let pred_pts = transformed(model, pred);
    Ok(model
        .symmetries
        .par_iter()
        .map(|s| {
            let t = gt.compose(s);
            model
                .points
                .iter()
                .zip(&pred_pts)
                .map(|(p, q)| (t.transform_point(p) - q).norm())
                .fold(0.0, f64::max)
        })
        .reduce(|| f64::INFINITY, f64::min))
}

/// `min_s max_i |proj(gt(s(p_i))) - proj(pred(p_i))|` in pixels.
pub fn mspd(
    model: &ObjectModel,
    gt: &RigidTransform,
    pred: &RigidTransform,
    k: &CameraIntrinsics,
) -> Result<f64> {
    if model.points.is_empty() {
        return Err(Error::EmptyModel);
    }
    let project = |p: &Point3| project_point(k, p).map(|(u, v, _)| (u, v));
    let pred_px: Vec<(f64, f64)> = model
        .points
        .iter()
        .map(|p| project(&pred.transform_point(p)))
        .collect::<Result<_>>()?;
    let per_sym: Vec<f64> = model
        .symmetries
        .par_iter()
        .map(|s| {
            let t = gt.compose(s);
            let mut worst: f64 = 0.0;
            for (p, q) in model.points.iter().zip(&pred_px) {
                let g = project(&t.transform_point(p))?;
                worst = worst.max(((g.0 - q.0).powi(2) + (g.1 - q.1).powi(2)).sqrt());
            }
            Ok(worst)
        })
        .collect::<Result<_>>()?;
    Ok(per_sym.into_iter().fold(f64::INFINITY, f64::min))
}

fn render_model(model: &ObjectModel, pose: &RigidTransform, k: &CameraIntrinsics) -> Render {
    render_points(&transformed(model, pose), k, model.splat_radius())
}

#[inline]
fn visible(rendered: f64, scene: f64, tolerance: f64) -> bool {
    rendered > 0.0 && (scene <= 0.0 || rendered <= scene + tolerance)
}

/// Visible-surface discrepancy for each misalignment tolerance.
///
/// A rendered pixel is visible when the scene has no measurement there or
/// the rendered surface is not behind the measured one by more than the
/// tolerance. The error is the fraction of pixels in the union of the two
/// visibility masks that are outside their intersection or whose rendered
/// depths differ by more than the tolerance.
pub fn vsd_errors(
    model: &ObjectModel,
    gt: &RigidTransform,
    pred: &RigidTransform,
    scene_depth: &DepthMap,
    k: &CameraIntrinsics,
    tolerances: &[f64],
) -> Result<Vec<f64>> {
    if model.points.is_empty() {
        return Err(Error::EmptyModel);
    }
    scene_depth.check_matches(k)?;
    let rg = render_model(model, gt, k);
    let rp = render_model(model, pred, k);
    if rg.is_empty() && rp.is_empty() {
        return Err(Error::EmptyRender);
    }
    Ok(tolerances
        .iter()
        .map(|&tol| {
            let mut union = 0usize;
            let mut bad = 0usize;
            for ((&dg, &dp), &ds) in rg
                .depth
                .values
                .iter()
                .zip(&rp.depth.values)
                .zip(&scene_depth.values)
            {
                let vg = visible(dg, ds, tol);
                let vp = visible(dp, ds, tol);
                if vg || vp {
                    union += 1;
                    if !(vg && vp) || (dg - dp).abs() > tol {
                        bad += 1;
                    }
                }
            }
            if union == 0 {
                1.0
            } else {
                bad as f64 / union as f64
            }
        })
        .collect())
}

pub fn vsd(
    model: &ObjectModel,
    gt: &RigidTransform,
    pred: &RigidTransform,
    scene_depth: &DepthMap,
    k: &CameraIntrinsics,
    misalignment_tolerance: f64,
) -> Result<f64> {
    Ok(vsd_errors(model, gt, pred, scene_depth, k, &[misalignment_tolerance])?[0])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricMetadata {
    pub threshold_fractions: Vec<f64>,
    /// Reference length for the projection-distance thresholds.
    pub mspd_threshold_basis: String,
    /// How the visible-surface recall is aggregated.
    pub vsd_grid: String,
}

impl Default for MetricMetadata {
    fn default() -> Self {
        Self {
            threshold_fractions: THRESHOLD_FRACTIONS.to_vec(),
            mspd_threshold_basis: "image_width".into(),
            vsd_grid: "misalignment tolerance (fraction of diameter) x error threshold".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub add_err: f64,
    pub adds_err: f64,
    pub add_recall_flag: bool,
    pub mssd_err: f64,
    pub mspd_err: f64,
    pub vsd_recall: f64,
    pub mssd_recall: f64,
    pub mspd_recall: f64,
    pub ar: f64,
    pub metadata: MetricMetadata,
}

/// Fraction of `thresholds` strictly above `error`.
pub fn recall(error: f64, thresholds: impl IntoIterator<Item = f64>) -> f64 {
    let mut n = 0usize;
    let mut pass = 0usize;
    for t in thresholds {
        n += 1;
        if error < t {
            pass += 1;
        }
    }
    if n == 0 {
        0.0
    } else {
        pass as f64 / n as f64
    }
}

/// Evaluates a predicted object pose in the query view. `scene_depth` is the
/// query depth map.
pub fn average_recall(
    model: &ObjectModel,
    gt: &RigidTransform,
    pred: &RigidTransform,
    k: &CameraIntrinsics,
    scene_depth: &DepthMap,
) -> Result<MetricReport> {
    let d = model.diameter;
    let add_err = add_error(model, gt, pred)?;
    let adds_err = adds_error(model, gt, pred)?;
    let chosen = if model.is_symmetric() { adds_err } else { add_err };
    let mssd_err = mssd(model, gt, pred)?;
    let mspd_err = mspd(model, gt, pred, k)?;

    let tolerances: Vec<f64> = THRESHOLD_FRACTIONS.iter().map(|f| f * d).collect();
    let vsd_errs = vsd_errors(model, gt, pred, scene_depth, k, &tolerances)?;
    let vsd_recall = vsd_errs
        .iter()
        .map(|e| recall(*e, THRESHOLD_FRACTIONS))
        .sum::<f64>()
        / vsd_errs.len() as f64;
    let mssd_recall = recall(mssd_err, THRESHOLD_FRACTIONS.iter().map(|f| f * d));
    let w = k.width as f64;
    let mspd_recall = recall(mspd_err, THRESHOLD_FRACTIONS.iter().map(|f| f * w));
    let ar = (vsd_recall + mssd_recall + mspd_recall) / 3.0;

    Ok(MetricReport {
        add_err,
        adds_err,
        add_recall_flag: chosen < 0.1 * d,
        mssd_err,
        mspd_err,
        vsd_recall,
        mssd_recall,
        mspd_recall,
        ar,
        metadata: MetricMetadata::default(),
    })
}

/// Intersection over union; two empty masks count as a perfect match.
pub fn mask_iou(pred: &Mask, gt: &Mask) -> Result<f64> {
    if pred.height != gt.height || pred.width != gt.width {
        return Err(Error::mismatch(
            "mask sizes",
            format!("{}x{}", gt.width, gt.height),
            format!("{}x{}", pred.width, pred.height),
        ));
    }
    let (mut inter, mut union) = (0usize, 0usize);
    for (&p, &g) in pred.values.iter().zip(&gt.values) {
        inter += (p && g) as usize;
        union += (p || g) as usize;
    }
    Ok(if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    })
}

/// IoU averaged over the anchor and query views.
pub fn mask_miou(pred_a: &Mask, gt_a: &Mask, pred_q: &Mask, gt_q: &Mask) -> Result<f64> {
    Ok(0.5 * (mask_iou(pred_a, gt_a)? + mask_iou(pred_q, gt_q)?))
}

/// Dataset-level mIoU over per-pair values.
pub fn mean_miou(per_pair: &[f64]) -> f64 {
    if per_pair.is_empty() {
        0.0
    } else {
        per_pair.iter().sum::<f64>() / per_pair.len() as f64
    }
}
