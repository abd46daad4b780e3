//! Match, lift, register and evaluate: the stages shared by the library API
//! and the command-line tool.

use serde::{Deserialize, Serialize};

use crate::config::Config;
use crate::error::Result;
use crate::geometry::{CameraIntrinsics, DepthMap, RigidTransform};
use crate::loss::{total_loss, MatchSupervision, SoftMask};
use crate::matching::{extract_masked_features, lift_matches_to_3d, match_nearest_neighbor, FeatureMap, Mask, MatchSet};
use crate::metrics::{average_recall, mask_miou, MetricReport, ObjectModel};
use crate::registration::{register, CorrespondenceSet3D, PoseEstimate};
use crate::synth::{PoseRecord, ScenePair};

/// One view of a pair: descriptors, object mask, depth and camera.
#[derive(Debug, Clone, Copy)]
pub struct View<'a> {
    pub fmap: &'a FeatureMap,
    pub mask: &'a Mask,
    pub depth: &'a DepthMap,
    pub intrinsics: &'a CameraIntrinsics,
}

pub fn match_views(a: View, q: View, config: &Config) -> Result<MatchSet> {
    let fa = extract_masked_features(a.fmap, a.mask)?;
    let fq = extract_masked_features(q.fmap, q.mask)?;
    match_nearest_neighbor(&fa, &fq, &config.matching())
}

pub fn register_matches(
    matches: &MatchSet,
    a: View,
    q: View,
    config: &Config,
    seed: u64,
) -> Result<PoseEstimate> {
    let (src, dst) = lift_matches_to_3d(matches, a.depth, q.depth, a.intrinsics, q.intrinsics)?;
    let corr = CorrespondenceSet3D::new(src, dst)?;
    register(&corr, &config.registration(seed))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossSummary {
    pub positive: f64,
    pub negative: f64,
    pub segmentation: f64,
    pub total: f64,
}

/// Everything known about one evaluated pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairReport {
    pub matches: usize,
    pub correspondences: usize,
    pub inliers: usize,
    pub inlier_ratio: f64,
    pub rmse: f64,
    pub rotation_error_deg: f64,
    pub translation_error_m: f64,
    pub pose: PoseRecord,
    pub metrics: MetricReport,
    pub miou: f64,
    pub loss: Option<LossSummary>,
}

/// Scores a predicted anchor-to-query transform. The object's query pose is
/// predicted as `pred ∘ object_pose_a`.
pub fn evaluate_pose(
    model: &ObjectModel,
    pred: &RigidTransform,
    object_pose_a: &RigidTransform,
    object_pose_q: &RigidTransform,
    k_q: &CameraIntrinsics,
    depth_q: &DepthMap,
) -> Result<MetricReport> {
    let pred_object = pred.compose(object_pose_a);
    average_recall(model, object_pose_q, &pred_object, k_q, depth_q)
}

pub fn loss_summary(
    fa: &FeatureMap,
    fq: &FeatureMap,
    mask_a: &Mask,
    mask_q: &Mask,
    sup: &MatchSupervision,
    config: &Config,
) -> Result<LossSummary> {
    let r = total_loss(
        fa,
        fq,
        &SoftMask::from(mask_a),
        &SoftMask::from(mask_q),
        mask_a,
        mask_q,
        sup,
        &config.loss(),
    )?;
    Ok(LossSummary {
        positive: r.positive,
        negative: r.negative,
        segmentation: r.segmentation,
        total: r.total,
    })
}

/// Full pipeline on a generated pair, using the ground-truth masks as the
/// segmentation prediction.
pub fn run_scene(scene: &ScenePair, config: &Config, seed: u64) -> Result<PairReport> {
    let a = View {
        fmap: &scene.fmap_a,
        mask: &scene.mask_a,
        depth: &scene.depth_a,
        intrinsics: &scene.intrinsics_a,
    };
    let q = View {
        fmap: &scene.fmap_q,
        mask: &scene.mask_q,
        depth: &scene.depth_q,
        intrinsics: &scene.intrinsics_q,
    };
    let matches = match_views(a, q, config)?;
    let (src, dst) = lift_matches_to_3d(&matches, a.depth, q.depth, a.intrinsics, q.intrinsics)?;
    let corr = CorrespondenceSet3D::new(src, dst)?;
    let estimate = register(&corr, &config.registration(seed))?;
    let metrics = evaluate_pose(
        &scene.model,
        &estimate.transform,
        &scene.object_pose_a,
        &scene.object_pose_q,
        &scene.intrinsics_q,
        &scene.depth_q,
    )?;
    let loss = if scene.gt_matches.is_empty() {
        None
    } else {
        Some(loss_summary(&scene.fmap_a, &scene.fmap_q, &scene.mask_a, &scene.mask_q, &scene.gt_matches, config)?)
    };
    Ok(PairReport {
        matches: matches.len(),
        correspondences: corr.len(),
        inliers: estimate.inliers.len(),
        inlier_ratio: estimate.inliers.len() as f64 / corr.len() as f64,
        rmse: estimate.rmse,
        rotation_error_deg: estimate.transform.rotation_error(&scene.gt_pose).to_degrees(),
        translation_error_m: estimate.transform.translation_error(&scene.gt_pose),
        pose: PoseRecord::from(&estimate.transform),
        metrics,
        miou: mask_miou(&scene.mask_a, &scene.mask_a, &scene.mask_q, &scene.mask_q)?,
        loss,
    })
}
