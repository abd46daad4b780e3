//! Masked descriptor extraction and thresholded nearest-neighbor matching.

use std::cmp::Ordering;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{backproject_pixel, CameraIntrinsics, DepthMap, PointCloud};

/// Integer pixel coordinate. Ordering is row-major: by `v`, then `u`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Pixel {
    pub u: u32,
    pub v: u32,
}

impl Pixel {
    pub fn new(u: u32, v: u32) -> Self {
        Self { u, v }
    }

    pub fn distance(&self, other: &Pixel) -> f64 {
        let du = self.u as f64 - other.u as f64;
        let dv = self.v as f64 - other.v as f64;
        (du * du + dv * dv).sqrt()
    }
}

impl Ord for Pixel {
    fn cmp(&self, other: &Self) -> Ordering {
        (self.v, self.u).cmp(&(other.v, other.u))
    }
}

impl PartialOrd for Pixel {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Dense `height x width x dim` descriptor grid, row-major `(v, u, channel)`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    pub height: u32,
    pub width: u32,
    pub dim: usize,
    pub data: Vec<f64>,
}

impl FeatureMap {
    pub fn new(height: u32, width: u32, dim: usize, data: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("feature map", "descriptor dimension must be >= 1"));
        }
        let expected = height as usize * width as usize * dim;
        if data.len() != expected {
            return Err(Error::mismatch("feature map buffer", expected, data.len()));
        }
        if data.iter().any(|x| !x.is_finite()) {
            return Err(Error::invalid("feature map", "non-finite value"));
        }
        Ok(Self {
            height,
            width,
            dim,
            data,
        })
    }

    pub fn zeros(height: u32, width: u32, dim: usize) -> Self {
        Self {
            height,
            width,
            dim,
            data: vec![0.0; height as usize * width as usize * dim],
        }
    }

    #[inline]
    pub fn offset(&self, p: Pixel) -> usize {
        (p.v as usize * self.width as usize + p.u as usize) * self.dim
    }

    #[inline]
    pub fn descriptor(&self, p: Pixel) -> &[f64] {
        let o = self.offset(p);
        &self.data[o..o + self.dim]
    }

    #[inline]
    pub fn descriptor_mut(&mut self, p: Pixel) -> &mut [f64] {
        let o = self.offset(p);
        let d = self.dim;
        &mut self.data[o..o + d]
    }

    pub fn contains(&self, p: Pixel) -> bool {
        p.u < self.width && p.v < self.height
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    pub height: u32,
    pub width: u32,
    pub values: Vec<bool>,
}

impl Mask {
    pub fn new(height: u32, width: u32, values: Vec<bool>) -> Result<Self> {
        if values.len() != height as usize * width as usize {
            return Err(Error::mismatch(
                "mask buffer",
                height as usize * width as usize,
                values.len(),
            ));
        }
        Ok(Self {
            height,
            width,
            values,
        })
    }

    pub fn empty(height: u32, width: u32) -> Self {
        Self {
            height,
            width,
            values: vec![false; height as usize * width as usize],
        }
    }

    #[inline]
    pub fn get(&self, p: Pixel) -> bool {
        self.values[p.v as usize * self.width as usize + p.u as usize]
    }

    #[inline]
    pub fn set(&mut self, p: Pixel, value: bool) {
        let w = self.width as usize;
        self.values[p.v as usize * w + p.u as usize] = value;
    }

    pub fn count(&self) -> usize {
        self.values.iter().filter(|b| **b).count()
    }

    /// True pixels in row-major order.
    pub fn pixels(&self) -> impl Iterator<Item = Pixel> + '_ {
        let w = self.width;
        self.values
            .iter()
            .enumerate()
            .filter(|(_, b)| **b)
            .map(move |(i, _)| Pixel::new(i as u32 % w, i as u32 / w))
    }
}

/// Descriptors gathered from the masked pixels of a feature map.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureList {
    pub dim: usize,
    pub coords: Vec<Pixel>,
    /// `coords.len() x dim`, row per entry.
    pub vectors: Vec<f64>,
}

impl FeatureList {
    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    #[inline]
    pub fn vector(&self, i: usize) -> &[f64] {
        &self.vectors[i * self.dim..(i + 1) * self.dim]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Match {
    pub a: Pixel,
    pub q: Pixel,
    pub distance: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MatchSet {
    pub pairs: Vec<Match>,
    pub capacity: usize,
}

impl MatchSet {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatchParams {
    /// Maximum accepted descriptor distance.
    pub max_distance: f64,
    /// Maximum number of retained matches.
    pub capacity: usize,
    /// Keep only pairs that are also nearest neighbors in the query-to-anchor direction.
    pub mutual: bool,
}

impl Default for MatchParams {
    fn default() -> Self {
        Self {
            max_distance: 0.25,
            capacity: 2000,
            mutual: false,
        }
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub(crate) fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

#[inline]
fn distance_from_parts(dot_ab: f64, norm_a: f64, norm_b: f64) -> f64 {
    let cos = (dot_ab / (norm_a * norm_b)).clamp(-1.0, 1.0);
    0.5 * (1.0 - cos)
}

/// Inverted, normalised cosine similarity `(1 - cos(a, b)) / 2`, in `[0, 1]`.
pub fn cosine_distance(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::mismatch("descriptor length", a.len(), b.len()));
    }
    let (na, nb) = (norm(a), norm(b));
    if na == 0.0 || nb == 0.0 {
        return Err(Error::ZeroVector);
    }
    Ok(distance_from_parts(dot(a, b), na, nb))
}

pub fn extract_masked_features(fmap: &FeatureMap, mask: &Mask) -> Result<FeatureList> {
    if fmap.height != mask.height || fmap.width != mask.width {
        return Err(Error::mismatch(
            "mask vs feature map",
            format!("{}x{}", fmap.width, fmap.height),
            format!("{}x{}", mask.width, mask.height),
        ));
    }
    let coords: Vec<Pixel> = mask.pixels().collect();
    if coords.is_empty() {
        return Err(Error::EmptyMask);
    }
    let mut vectors = Vec::with_capacity(coords.len() * fmap.dim);
    for p in &coords {
        vectors.extend_from_slice(fmap.descriptor(*p));
    }
    Ok(FeatureList {
        dim: fmap.dim,
        coords,
        vectors,
    })
}

fn norms(list: &FeatureList) -> Result<Vec<f64>> {
    (0..list.len())
        .map(|i| {
            let n = norm(list.vector(i));
            if n == 0.0 {
                Err(Error::ZeroVector)
            } else {
                Ok(n)
            }
        })
        .collect()
}

/// Index of the nearest entry of `to` for `from[i]`, ties broken by the
/// row-major order of the candidate's pixel.
fn nearest(
    v: &[f64],
    nv: f64,
    to: &FeatureList,
    to_norms: &[f64],
) -> (usize, f64) {
    let mut best = (0usize, f64::INFINITY);
    for (j, &nj) in to_norms.iter().enumerate() {
        let d = distance_from_parts(dot(v, to.vector(j)), nv, nj);
        if d < best.1 || (d == best.1 && to.coords[j] < to.coords[best.0]) {
            best = (j, d);
        }
    }
    best
}

/// For each anchor feature, its nearest query feature under
/// [`cosine_distance`]. Pairs farther than `max_distance` are dropped and, if
/// more than `capacity` remain, the lowest-distance ones are kept. Output is
/// sorted by anchor pixel (row-major), then query pixel.
pub fn match_nearest_neighbor(
    fa: &FeatureList,
    fq: &FeatureList,
    params: &MatchParams,
) -> Result<MatchSet> {
    if fa.is_empty() || fq.is_empty() {
        return Err(Error::EmptyMask);
    }
    if fa.dim != fq.dim {
        return Err(Error::mismatch("descriptor dimension", fa.dim, fq.dim));
    }
    let na = norms(fa)?;
    let nq = norms(fq)?;

    let forward: Vec<(usize, f64)> = (0..fa.len())
        .into_par_iter()
        .map(|i| nearest(fa.vector(i), na[i], fq, &nq))
        .collect();

    let backward: Option<Vec<usize>> = params.mutual.then(|| {
        (0..fq.len())
            .into_par_iter()
            .map(|j| nearest(fq.vector(j), nq[j], fa, &na).0)
            .collect()
    });

    let mut pairs: Vec<Match> = forward
        .iter()
        .enumerate()
        .filter(|(_, (_, d))| *d <= params.max_distance)
        .filter(|(i, (j, _))| backward.as_ref().is_none_or(|b| b[*j] == *i))
        .map(|(i, &(j, d))| Match {
            a: fa.coords[i],
            q: fq.coords[j],
            distance: d,
        })
        .collect();

    if pairs.is_empty() {
        return Err(Error::NoMatches);
    }
    if pairs.len() > params.capacity {
        pairs.sort_by(|x, y| {
            x.distance
                .total_cmp(&y.distance)
                .then(x.a.cmp(&y.a))
                .then(x.q.cmp(&y.q))
        });
        pairs.truncate(params.capacity);
    }
    pairs.sort_by(|x, y| x.a.cmp(&y.a).then(x.q.cmp(&y.q)));
    Ok(MatchSet {
        pairs,
        capacity: params.capacity,
    })
}

/// Backprojects both ends of every match. Pairs with missing depth in either
/// view are dropped; the two clouds stay index-aligned.
pub fn lift_matches_to_3d(
    matches: &MatchSet,
    depth_a: &DepthMap,
    depth_q: &DepthMap,
    k_a: &CameraIntrinsics,
    k_q: &CameraIntrinsics,
) -> Result<(PointCloud, PointCloud)> {
    depth_a.check_matches(k_a)?;
    depth_q.check_matches(k_q)?;
    let mut src = Vec::with_capacity(matches.len());
    let mut dst = Vec::with_capacity(matches.len());
    for m in &matches.pairs {
        for (p, k) in [(m.a, k_a), (m.q, k_q)] {
            if p.u >= k.width || p.v >= k.height {
                return Err(Error::OutOfBounds {
                    u: p.u as f64,
                    v: p.v as f64,
                    width: k.width,
                    height: k.height,
                });
            }
        }
        let da = depth_a.get(m.a.u, m.a.v);
        let dq = depth_q.get(m.q.u, m.q.v);
        if da <= 0.0 || dq <= 0.0 {
            continue;
        }
        src.push(backproject_pixel(k_a, m.a.u as f64, m.a.v as f64, da)?);
        dst.push(backproject_pixel(k_q, m.q.u as f64, m.q.v as f64, dq)?);
    }
    if src.is_empty() {
        return Err(Error::AllInvalidDepth);
    }
    Ok((PointCloud::new(src), PointCloud::new(dst)))
}
