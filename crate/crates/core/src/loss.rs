//! Hardest-contrastive matching loss and Dice segmentation loss with
//! analytic gradients.
//!
//! Distances are [`cosine_distance`](crate::matching::cosine_distance)
//! values. The positive term pulls supervised pairs below `pos_margin`; the
//! negative term pushes each matched feature's hardest negative (closest
//! descriptor at least `exclusion_radius` pixels away, on the same map) above
//! `neg_margin`. Each side of the negative term is averaged over the matched
//! features that have at least one candidate negative.

use std::collections::HashSet;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matching::{dot, norm, FeatureMap, Mask, Pixel};

pub const DICE_EPS: f64 = 1e-6;

/// Ground-truth pixel correspondences `(anchor, query)`.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct MatchSupervision {
    pub pairs: Vec<(Pixel, Pixel)>,
}

impl MatchSupervision {
    pub fn new(pairs: Vec<(Pixel, Pixel)>) -> Result<Self> {
        let mut seen = HashSet::with_capacity(pairs.len());
        for p in &pairs {
            if !seen.insert(*p) {
                return Err(Error::invalid(
                    "match supervision",
                    format!("duplicate pair {:?}", p),
                ));
            }
        }
        Ok(Self { pairs })
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// Uniform subsample without replacement to at most `capacity` pairs,
    /// preserving the original order.
    pub fn subsample(&self, capacity: usize, seed: u64) -> Self {
        if self.pairs.len() <= capacity {
            return self.clone();
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut idx = rand::seq::index::sample(&mut rng, self.pairs.len(), capacity).into_vec();
        idx.sort_unstable();
        Self {
            pairs: idx.into_iter().map(|i| self.pairs[i]).collect(),
        }
    }

    fn check_inside(&self, fa: &FeatureMap, fq: &FeatureMap) -> Result<()> {
        if self.pairs.is_empty() {
            return Err(Error::EmptySupervision);
        }
        if fa.dim != fq.dim {
            return Err(Error::mismatch("descriptor dimension", fa.dim, fq.dim));
        }
        for (a, q) in &self.pairs {
            if !fa.contains(*a) || !fq.contains(*q) {
                return Err(Error::invalid(
                    "match supervision",
                    format!("pair {a:?} -> {q:?} outside the feature maps"),
                ));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NegativePool {
    /// Negatives are drawn from the supervised pixels of the same map.
    #[default]
    Matched,
    /// Negatives are drawn from every pixel of the same map.
    AllPixels,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossParams {
    pub pos_margin: f64,
    pub neg_margin: f64,
    /// Pixels closer than this are never negatives of each other.
    pub exclusion_radius: f64,
    pub pos_weight: f64,
    pub neg_weight: f64,
    #[serde(default)]
    pub negative_pool: NegativePool,
}

impl Default for LossParams {
    fn default() -> Self {
        Self {
            pos_margin: 0.2,
            neg_margin: 0.9,
            exclusion_radius: 20.0,
            pos_weight: 0.5,
            neg_weight: 0.5,
            negative_pool: NegativePool::Matched,
        }
    }
}

impl LossParams {
    pub fn validate(&self) -> Result<()> {
        if !(0.0 <= self.pos_margin && self.pos_margin < self.neg_margin && self.neg_margin <= 1.0) {
            return Err(Error::invalid(
                "loss params",
                "margins must satisfy 0 <= pos < neg <= 1",
            ));
        }
        if !(self.exclusion_radius > 0.0) {
            return Err(Error::invalid("loss params", "exclusion radius must be > 0"));
        }
        if !(self.pos_weight >= 0.0 && self.neg_weight >= 0.0) {
            return Err(Error::invalid("loss params", "weights must be >= 0"));
        }
        Ok(())
    }
}

/// A loss value with its gradient with respect to both feature maps.
#[derive(Debug, Clone, PartialEq)]
pub struct LossTerm {
    pub value: f64,
    pub grad_a: FeatureMap,
    pub grad_q: FeatureMap,
}

/// Soft segmentation prediction, row-major, values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftMask {
    pub height: u32,
    pub width: u32,
    pub values: Vec<f64>,
}

impl SoftMask {
    pub fn new(height: u32, width: u32, values: Vec<f64>) -> Result<Self> {
        if values.len() != height as usize * width as usize {
            return Err(Error::mismatch(
                "soft mask buffer",
                height as usize * width as usize,
                values.len(),
            ));
        }
        if values.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::invalid("soft mask", "values must lie in [0, 1]"));
        }
        Ok(Self {
            height,
            width,
            values,
        })
    }
}

impl From<&Mask> for SoftMask {
    fn from(m: &Mask) -> Self {
        Self {
            height: m.height,
            width: m.width,
            values: m.values.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiceTerm {
    pub value: f64,
    pub grad: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossReport {
    pub positive: f64,
    pub negative: f64,
    pub segmentation: f64,
    pub total: f64,
    pub grad_a: FeatureMap,
    pub grad_q: FeatureMap,
    pub grad_mask_a: Vec<f64>,
    pub grad_mask_q: Vec<f64>,
}

/// Distance and its partial derivatives with respect to both arguments.
fn distance_with_grad(a: &[f64], b: &[f64]) -> Result<(f64, Vec<f64>, Vec<f64>)> {
    let (na, nb) = (norm(a), norm(b));
    if na == 0.0 || nb == 0.0 {
        return Err(Error::ZeroVector);
    }
    let inv = 1.0 / (na * nb);
    let cos = dot(a, b) * inv;
    let d = 0.5 * (1.0 - cos.clamp(-1.0, 1.0));
    // d/da (1 - cos)/2 = -(b / (|a||b|) - cos a / |a|^2) / 2
    let ga = a
        .iter()
        .zip(b)
        .map(|(x, y)| -0.5 * (y * inv - cos * x / (na * na)))
        .collect();
    let gb = a
        .iter()
        .zip(b)
        .map(|(x, y)| -0.5 * (x * inv - cos * y / (nb * nb)))
        .collect();
    Ok((d, ga, gb))
}

fn accumulate(grad: &mut FeatureMap, p: Pixel, g: &[f64], scale: f64) {
    for (dst, src) in grad.descriptor_mut(p).iter_mut().zip(g) {
        *dst += scale * src;
    }
}

pub fn positive_loss(
    fa: &FeatureMap,
    fq: &FeatureMap,
    sup: &MatchSupervision,
    pos_margin: f64,
) -> Result<LossTerm> {
    sup.check_inside(fa, fq)?;
    let mut grad_a = FeatureMap::zeros(fa.height, fa.width, fa.dim);
    let mut grad_q = FeatureMap::zeros(fq.height, fq.width, fq.dim);
    let w = 1.0 / sup.len() as f64;
    let mut value = 0.0;
    for (a, q) in &sup.pairs {
        let (d, ga, gq) = distance_with_grad(fa.descriptor(*a), fq.descriptor(*q))?;
        if d > pos_margin {
            value += w * (d - pos_margin);
            accumulate(&mut grad_a, *a, &ga, w);
            accumulate(&mut grad_q, *q, &gq, w);
        }
    }
    Ok(LossTerm {
        value,
        grad_a,
        grad_q,
    })
}

/// `{k : k != i, |x_i - x_k| >= radius}`.
pub fn candidate_negative_set(coords: &[Pixel], i: usize, radius: f64) -> Vec<usize> {
    let xi = coords[i];
    coords
        .iter()
        .enumerate()
        .filter(|(k, xk)| *k != i && xi.distance(xk) >= radius)
        .map(|(k, _)| k)
        .collect()
}

/// Closest-descriptor negative of one feature: pool index and distance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HardestNegative {
    pub index: usize,
    pub pixel: Pixel,
    pub distance: f64,
}

/// Hardest negative of every entry of `coords` within `pool` on `fmap`.
/// Ties go to the lowest pool index. `None` when the candidate set is empty.
pub fn hardest_negatives(
    fmap: &FeatureMap,
    coords: &[Pixel],
    pool: &[Pixel],
    radius: f64,
) -> Result<Vec<Option<HardestNegative>>> {
    let pool_norms: Vec<f64> = pool.iter().map(|p| norm(fmap.descriptor(*p))).collect();
    if pool_norms.contains(&0.0) {
        return Err(Error::ZeroVector);
    }
    coords
        .par_iter()
        .map(|xi| {
            let fi = fmap.descriptor(*xi);
            let ni = norm(fi);
            if ni == 0.0 {
                return Err(Error::ZeroVector);
            }
            let mut best: Option<HardestNegative> = None;
            for (k, xk) in pool.iter().enumerate() {
                if xi.distance(xk) < radius {
                    continue;
                }
                let cos = (dot(fi, fmap.descriptor(*xk)) / (ni * pool_norms[k])).clamp(-1.0, 1.0);
                let d = 0.5 * (1.0 - cos);
                if best.is_none_or(|b| d < b.distance) {
                    best = Some(HardestNegative {
                        index: k,
                        pixel: *xk,
                        distance: d,
                    });
                }
            }
            Ok(best)
        })
        .collect()
}

fn all_pixels(fmap: &FeatureMap) -> Vec<Pixel> {
    (0..fmap.height)
        .flat_map(|v| (0..fmap.width).map(move |u| Pixel::new(u, v)))
        .collect()
}

/// One bracketed half of the negative term: `sum_i (margin - d_i)_+ / (2 n)`
/// over features with a non-empty candidate set, `n` being their count.
fn negative_side(
    fmap: &FeatureMap,
    coords: &[Pixel],
    params: &LossParams,
) -> Result<(f64, FeatureMap)> {
    let pool_storage;
    let pool: &[Pixel] = match params.negative_pool {
        NegativePool::Matched => coords,
        NegativePool::AllPixels => {
            pool_storage = all_pixels(fmap);
            &pool_storage
        }
    };
    let hardest = hardest_negatives(fmap, coords, pool, params.exclusion_radius)?;
    let mut grad = FeatureMap::zeros(fmap.height, fmap.width, fmap.dim);
    let n = hardest.iter().filter(|h| h.is_some()).count();
    if n == 0 {
        return Ok((0.0, grad));
    }
    let w = 1.0 / (2.0 * n as f64);
    let mut value = 0.0;
    for (xi, h) in coords.iter().zip(&hardest) {
        let Some(h) = h else { continue };
        if h.distance < params.neg_margin {
            let (d, gi, gk) = distance_with_grad(fmap.descriptor(*xi), fmap.descriptor(h.pixel))?;
            value += w * (params.neg_margin - d);
            accumulate(&mut grad, *xi, &gi, -w);
            accumulate(&mut grad, h.pixel, &gk, -w);
        }
    }
    Ok((value, grad))
}

pub fn negative_loss(
    fa: &FeatureMap,
    fq: &FeatureMap,
    sup: &MatchSupervision,
    params: &LossParams,
) -> Result<LossTerm> {
    sup.check_inside(fa, fq)?;
    let xa: Vec<Pixel> = sup.pairs.iter().map(|p| p.0).collect();
    let xq: Vec<Pixel> = sup.pairs.iter().map(|p| p.1).collect();
    let (va, grad_a) = negative_side(fa, &xa, params)?;
    let (vq, grad_q) = negative_side(fq, &xq, params)?;
    Ok(LossTerm {
        value: va + vq,
        grad_a,
        grad_q,
    })
}

/// `1 - (2 sum(p g) + eps) / (sum(p) + sum(g) + eps)`.
pub fn dice_loss(pred: &SoftMask, gt: &Mask) -> Result<DiceTerm> {
    if pred.height != gt.height || pred.width != gt.width {
        return Err(Error::mismatch(
            "dice prediction vs ground truth",
            format!("{}x{}", gt.width, gt.height),
            format!("{}x{}", pred.width, pred.height),
        ));
    }
    let mut inter = 0.0;
    let mut sum = 0.0;
    for (p, &g) in pred.values.iter().zip(&gt.values) {
        let g = if g { 1.0 } else { 0.0 };
        inter += p * g;
        sum += p + g;
    }
    let num = 2.0 * inter + DICE_EPS;
    let den = sum + DICE_EPS;
    let grad = gt
        .values
        .iter()
        .map(|&g| {
            let g = if g { 1.0 } else { 0.0 };
            -(2.0 * g * den - num) / (den * den)
        })
        .collect();
    Ok(DiceTerm {
        value: 1.0 - num / den,
        grad,
    })
}

fn add_scaled(dst: &mut FeatureMap, src: &FeatureMap, s: f64) {
    for (d, x) in dst.data.iter_mut().zip(&src.data) {
        *d += s * x;
    }
}

/// `segmentation + neg_weight * negative + pos_weight * positive`, where the
/// segmentation term is the mean Dice loss of the two views.
#[allow(clippy::too_many_arguments)]
pub fn total_loss(
    fa: &FeatureMap,
    fq: &FeatureMap,
    pred_a: &SoftMask,
    pred_q: &SoftMask,
    gt_a: &Mask,
    gt_q: &Mask,
    sup: &MatchSupervision,
    params: &LossParams,
) -> Result<LossReport> {
    params.validate()?;
    let pos = positive_loss(fa, fq, sup, params.pos_margin)?;
    let neg = negative_loss(fa, fq, sup, params)?;
    let dice_a = dice_loss(pred_a, gt_a)?;
    let dice_q = dice_loss(pred_q, gt_q)?;
    let segmentation = 0.5 * (dice_a.value + dice_q.value);

    let mut grad_a = FeatureMap::zeros(fa.height, fa.width, fa.dim);
    let mut grad_q = FeatureMap::zeros(fq.height, fq.width, fq.dim);
    add_scaled(&mut grad_a, &pos.grad_a, params.pos_weight);
    add_scaled(&mut grad_a, &neg.grad_a, params.neg_weight);
    add_scaled(&mut grad_q, &pos.grad_q, params.pos_weight);
    add_scaled(&mut grad_q, &neg.grad_q, params.neg_weight);

    Ok(LossReport {
        positive: pos.value,
        negative: neg.value,
        segmentation,
        total: combine(segmentation, neg.value, pos.value, params),
        grad_a,
        grad_q,
        grad_mask_a: dice_a.grad.iter().map(|g| 0.5 * g).collect(),
        grad_mask_q: dice_q.grad.iter().map(|g| 0.5 * g).collect(),
    })
}

/// Weighted sum of the three components.
pub fn combine(segmentation: f64, negative: f64, positive: f64, params: &LossParams) -> f64 {
    segmentation + params.neg_weight * negative + params.pos_weight * positive
}
