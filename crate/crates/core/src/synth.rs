//! Synthetic anchor/query scene pairs with complete ground truth.
//!
//! Objects are sampled surfaces (lattices on each primitive) rendered by
//! point splatting. Every surface point carries a unit descriptor taken from
//! a seeded random Fourier field over model coordinates, so descriptors are
//! view-invariant and vary smoothly enough for nearest-neighbor matching to
//! localize correspondences to a fraction of a pixel. Per-view corruption is
//! explicit: isotropic descriptor noise, a fraction of object pixels with
//! fresh random descriptors, additive depth noise and distractor boxes placed
//! behind the object.

use std::f64::consts::{PI, TAU};

use nalgebra::{Matrix3, Quaternion, UnitQuaternion, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{CameraIntrinsics, DepthMap, Point3, RigidTransform};
use crate::loss::MatchSupervision;
use crate::matching::{FeatureMap, Mask, Pixel};
use crate::metrics::ObjectModel;
use crate::render::{render_points, Render, SplatRadius};

/// Angular discretization of rotational symmetries.
pub const SYMMETRY_STEPS: usize = 36;

/// Evaluation models sample the surface at `scale / EVAL_SAMPLES_PER_SIDE`.
pub const EVAL_SAMPLES_PER_SIDE: f64 = 40.0;

// rng streams
const STREAM_POSES: u64 = 1;
const STREAM_FIELD: u64 = 2;
const STREAM_DISTRACTORS: u64 = 3;
const STREAM_FEATURES_A: u64 = 4;
const STREAM_FEATURES_Q: u64 = 5;
const STREAM_DEPTH: u64 = 6;
const STREAM_SUBSAMPLE: u64 = 7;
const STREAM_SHAPE: u64 = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectShape {
    Box,
    Cylinder,
    Sphere,
    Composite,
}

/// Rotation (row-major) and translation of a rigid transform.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoseRecord {
    pub rotation: [f64; 9],
    pub translation: [f64; 3],
}

impl From<&RigidTransform> for PoseRecord {
    fn from(t: &RigidTransform) -> Self {
        let r = &t.rotation;
        Self {
            rotation: [
                r[(0, 0)],
                r[(0, 1)],
                r[(0, 2)],
                r[(1, 0)],
                r[(1, 1)],
                r[(1, 2)],
                r[(2, 0)],
                r[(2, 1)],
                r[(2, 2)],
            ],
            translation: [t.translation.x, t.translation.y, t.translation.z],
        }
    }
}

impl PoseRecord {
    pub fn to_transform(&self) -> Result<RigidTransform> {
        RigidTransform::new(
            Matrix3::from_row_slice(&self.rotation),
            Vector3::from(self.translation),
        )
    }
}

fn default_dim() -> usize {
    32
}
fn default_image_size() -> u32 {
    192
}
fn default_focal() -> f64 {
    240.0
}
fn default_max_relative_rotation() -> f64 {
    45.0
}
fn default_capacity() -> usize {
    2000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSceneSpec {
    pub object_shape: ObjectShape,
    /// Box side, cylinder diameter and height, sphere diameter (meters).
    pub object_scale: f64,
    /// Object pose in the anchor camera; sampled when absent.
    #[serde(default)]
    pub pose_a: Option<PoseRecord>,
    /// Object pose in the query camera; sampled when absent.
    #[serde(default)]
    pub pose_q: Option<PoseRecord>,
    #[serde(default = "default_dim")]
    pub descriptor_dim: usize,
    #[serde(default)]
    pub descriptor_noise_sigma: f64,
    #[serde(default)]
    pub outlier_fraction: f64,
    #[serde(default)]
    pub depth_noise_sigma: f64,
    #[serde(default)]
    pub distractor_count: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_image_size")]
    pub image_size: u32,
    #[serde(default = "default_focal")]
    pub focal_length: f64,
    /// Upper bound of the sampled anchor-to-query rotation angle, degrees.
    #[serde(default = "default_max_relative_rotation")]
    pub max_relative_rotation_deg: f64,
    /// Ground-truth matches are subsampled to at most this many.
    #[serde(default = "default_capacity")]
    pub match_capacity: usize,
}

impl SyntheticSceneSpec {
    pub fn new(shape: ObjectShape, scale: f64, seed: u64) -> Self {
        Self {
            object_shape: shape,
            object_scale: scale,
            pose_a: None,
            pose_q: None,
            descriptor_dim: default_dim(),
            descriptor_noise_sigma: 0.0,
            outlier_fraction: 0.0,
            depth_noise_sigma: 0.0,
            distractor_count: 0,
            seed,
            image_size: default_image_size(),
            focal_length: default_focal(),
            max_relative_rotation_deg: default_max_relative_rotation(),
            match_capacity: default_capacity(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.object_scale > 0.0) {
            return Err(Error::invalid("scene spec", "object_scale must be > 0"));
        }
        if !(0.0..1.0).contains(&self.outlier_fraction) {
            return Err(Error::invalid("scene spec", "outlier_fraction must lie in [0, 1)"));
        }
        if !(self.descriptor_noise_sigma >= 0.0 && self.depth_noise_sigma >= 0.0) {
            return Err(Error::invalid("scene spec", "noise levels must be >= 0"));
        }
        if self.descriptor_dim == 0 || self.image_size < 8 || !(self.focal_length > 0.0) {
            return Err(Error::invalid(
                "scene spec",
                "descriptor_dim >= 1, image_size >= 8 and focal_length > 0 required",
            ));
        }
        Ok(())
    }

    pub fn intrinsics(&self) -> CameraIntrinsics {
        let c = 0.5 * (self.image_size as f64 - 1.0);
        CameraIntrinsics {
            fx: self.focal_length,
            fy: self.focal_length,
            cx: c,
            cy: c,
            width: self.image_size,
            height: self.image_size,
        }
    }
}

/// A generated anchor/query pair with ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenePair {
    pub depth_a: DepthMap,
    pub depth_q: DepthMap,
    pub mask_a: Mask,
    pub mask_q: Mask,
    pub fmap_a: FeatureMap,
    pub fmap_q: FeatureMap,
    pub intrinsics_a: CameraIntrinsics,
    pub intrinsics_q: CameraIntrinsics,
    /// Maps anchor-camera points onto query-camera points.
    pub gt_pose: RigidTransform,
    /// Model to anchor camera.
    pub object_pose_a: RigidTransform,
    /// Model to query camera.
    pub object_pose_q: RigidTransform,
    pub gt_matches: MatchSupervision,
    pub model: ObjectModel,
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

pub fn random_rotation(rng: &mut impl Rng) -> Matrix3<f64> {
    let q = Quaternion::new(
        rng.sample::<f64, _>(StandardNormal),
        rng.sample::<f64, _>(StandardNormal),
        rng.sample::<f64, _>(StandardNormal),
        rng.sample::<f64, _>(StandardNormal),
    );
    UnitQuaternion::from_quaternion(q).to_rotation_matrix().into_inner()
}

fn random_unit(rng: &mut impl Rng, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-12 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

fn rotation_about(axis: Vector3<f64>, angle: f64) -> RigidTransform {
    RigidTransform::from_axis_angle(&axis, angle, Vector3::zeros())
}

/// Rotations of a cube onto itself: signed permutation matrices with det +1.
fn cube_symmetries() -> Vec<RigidTransform> {
    let perms = [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];
    let mut out = Vec::with_capacity(24);
    for p in perms {
        for signs in 0..8u8 {
            let mut m = Matrix3::zeros();
            for (row, &col) in p.iter().enumerate() {
                m[(row, col)] = if signs >> row & 1 == 1 { -1.0 } else { 1.0 };
            }
            if m.determinant() > 0.0 {
                out.push(RigidTransform {
                    rotation: m,
                    translation: Vector3::zeros(),
                });
            }
        }
    }
    out
}

/// `steps` rotations about z, each with and without a half turn about x.
fn axial_symmetries(steps: usize) -> Vec<RigidTransform> {
    let flip = rotation_about(Vector3::x(), PI);
    let mut out = Vec::with_capacity(2 * steps);
    for i in 0..steps {
        let r = rotation_about(Vector3::z(), TAU * i as f64 / steps as f64);
        out.push(r);
        out.push(r.compose(&flip));
    }
    out
}

pub fn shape_symmetries(shape: ObjectShape) -> Vec<RigidTransform> {
    match shape {
        ObjectShape::Box => cube_symmetries(),
        ObjectShape::Cylinder | ObjectShape::Sphere => axial_symmetries(SYMMETRY_STEPS),
        ObjectShape::Composite => vec![RigidTransform::identity()],
    }
}

fn round_up_to(n: usize, multiple: usize) -> usize {
    n.div_ceil(multiple).max(1) * multiple
}

fn cube_surface(side: f64, spacing: f64, center: Point3, out: &mut Vec<Point3>) {
    let n = (side / spacing).ceil().max(1.0) as i64;
    let step = side / n as f64;
    let h = 0.5 * side;
    for i in 0..=n {
        for j in 0..=n {
            for k in 0..=n {
                let on_surface = [i, j, k].iter().any(|&c| c == 0 || c == n);
                if on_surface {
                    out.push(
                        center
                            + Point3::new(
                                -h + i as f64 * step,
                                -h + j as f64 * step,
                                -h + k as f64 * step,
                            ),
                    );
                }
            }
        }
    }
}

fn ring(radius: f64, z: f64, spacing: f64, center: Point3, out: &mut Vec<Point3>) {
    let count = round_up_to((TAU * radius / spacing).ceil() as usize, SYMMETRY_STEPS);
    for a in 0..count {
        let t = TAU * a as f64 / count as f64;
        out.push(center + Point3::new(radius * t.cos(), radius * t.sin(), z));
    }
}

fn cylinder_surface(diameter: f64, height: f64, spacing: f64, center: Point3, out: &mut Vec<Point3>) {
    let r = 0.5 * diameter;
    let levels = (height / spacing).ceil().max(1.0) as usize;
    for l in 0..=levels {
        ring(r, -0.5 * height + height * l as f64 / levels as f64, spacing, center, out);
    }
    let rings = (r / spacing).ceil().max(1.0) as usize;
    for z in [-0.5 * height, 0.5 * height] {
        out.push(center + Point3::new(0.0, 0.0, z));
        for j in 1..rings {
            ring(r * j as f64 / rings as f64, z, spacing, center, out);
        }
    }
}

fn sphere_surface(diameter: f64, spacing: f64, rng: &mut impl Rng, out: &mut Vec<Point3>) {
    let r = 0.5 * diameter;
    let n = ((4.0 * PI * r * r) / (spacing * spacing)).ceil().max(4.0) as usize;
    let golden = PI * (3.0 - 5f64.sqrt());
    let spin = random_rotation(rng);
    for i in 0..n {
        let z = 1.0 - 2.0 * (i as f64 + 0.5) / n as f64;
        let rho = (1.0 - z * z).sqrt();
        let t = golden * i as f64;
        out.push(spin * Point3::new(r * rho * t.cos(), r * rho * t.sin(), r * z));
    }
}

/// Surface sample of a primitive centered at the model origin.
pub fn surface_points(shape: ObjectShape, scale: f64, spacing: f64, seed: u64) -> Vec<Point3> {
    let mut out = Vec::new();
    match shape {
        ObjectShape::Box => cube_surface(scale, spacing, Point3::zeros(), &mut out),
        ObjectShape::Cylinder => cylinder_surface(scale, scale, spacing, Point3::zeros(), &mut out),
        ObjectShape::Sphere => {
            let mut rng = stream(seed, STREAM_SHAPE);
            sphere_surface(scale, spacing, &mut rng, &mut out)
        }
        ObjectShape::Composite => {
            let body = 0.6 * scale;
            cube_surface(body, spacing, Point3::new(-0.1 * scale, 0.0, -0.1 * scale), &mut out);
            let handle_h = 0.4 * scale;
            cylinder_surface(
                0.3 * scale,
                handle_h,
                spacing,
                Point3::new(0.0, 0.1 * scale, 0.2 * scale + 0.5 * handle_h),
                &mut out,
            );
        }
    }
    out
}

/// Object model sampled at `spacing` meters with the shape's discrete symmetries.
/// Sphere symmetries are discretized to rotations about z with half-turn flips.
pub fn sample_object(shape: ObjectShape, scale: f64, spacing: f64, seed: u64) -> Result<ObjectModel> {
    if !(scale > 0.0) || !(spacing > 0.0) {
        return Err(Error::invalid("object sampling", "scale and spacing must be > 0"));
    }
    ObjectModel::new(surface_points(shape, scale, spacing, seed), shape_symmetries(shape))
}

/// Smooth random unit-vector field over model coordinates: cosine/sine pairs
/// of random plane waves with wavelengths between 4% and 15% of the object size.
#[derive(Debug, Clone)]
pub struct DescriptorField {
    dim: usize,
    waves: Vec<(Vector3<f64>, f64)>,
}

impl DescriptorField {
    pub fn new(dim: usize, scale: f64, rng: &mut impl Rng) -> Self {
        let count = dim.div_ceil(2);
        let (lo, hi) = ((0.04 * scale).ln(), (0.15 * scale).ln());
        let waves = (0..count)
            .map(|_| {
                let dir = Vector3::from(random_unit(rng, 3).as_slice().try_into().unwrap_or([1.0, 0.0, 0.0]));
                let wavelength = rng.random_range(lo..=hi).exp();
                (dir * (TAU / wavelength), rng.random_range(0.0..TAU))
            })
            .collect();
        Self { dim, waves }
    }

    pub fn eval(&self, p: &Point3) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.dim);
        for (w, phase) in &self.waves {
            let t = w.dot(p) + phase;
            v.push(t.cos());
            if v.len() < self.dim {
                v.push(t.sin());
            }
        }
        normalize(&mut v);
        v
    }
}

fn normalize(v: &mut [f64]) {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
}

/// For each anchor mask pixel (row-major), the model point owning it, when
/// that point projects into the pixel, paired with its pixel in the query
/// when it is visible there too.
/// Subsampled to `capacity`.
#[allow(clippy::too_many_arguments)]
pub fn generate_gt_matches(
    points: &[Point3],
    pose_a: &RigidTransform,
    pose_q: &RigidTransform,
    render_a: &Render,
    mask_a: &Mask,
    render_q: &Render,
    mask_q: &Mask,
    capacity: usize,
    seed: u64,
) -> Result<MatchSupervision> {
    let mut pairs = Vec::new();
    for pa in mask_a.pixels() {
        let idx = pa.v as usize * mask_a.width as usize + pa.u as usize;
        let Some(p) = render_a.owner[idx].and_then(|i| points.get(i as usize)) else {
            continue;
        };
        if render_a.visible_pixel(&pose_a.transform_point(p)) != Some(pa) {
            continue;
        }
        let Some(pq) = render_q.visible_pixel(&pose_q.transform_point(p)) else {
            continue;
        };
        if mask_q.get(pq) {
            pairs.push((pa, pq));
        }
    }
    if pairs.is_empty() {
        return Err(Error::NoCovisiblePoints);
    }
    Ok(MatchSupervision { pairs }.subsample(capacity, seed))
}

/// Descriptor map of one view. Object pixels take their owner point's field
/// value, or a fresh random descriptor with probability `outlier_fraction`;
/// noise of std `noise_sigma` is added per component before renormalizing.
/// All other pixels receive random unit descriptors. Values are rounded to
/// `f32` so maps survive the binary file format unchanged.
pub fn synth_feature_map(
    render: &Render,
    object_points: &[Point3],
    field: &DescriptorField,
    noise_sigma: f64,
    outlier_fraction: f64,
    rng: &mut impl Rng,
) -> Result<FeatureMap> {
    let (w, h) = (render.depth.width, render.depth.height);
    let dim = field.dim;
    let noise = Normal::new(0.0, noise_sigma.max(0.0))
        .map_err(|e| Error::invalid("descriptor noise", e.to_string()))?;
    let mut fmap = FeatureMap::zeros(h, w, dim);
    for v in 0..h {
        for u in 0..w {
            let px = Pixel::new(u, v);
            let owner = render.owner[(v * w + u) as usize]
                .map(|i| i as usize)
                .filter(|&i| i < object_points.len());
            let mut d = match owner {
                Some(i) if !(outlier_fraction > 0.0 && rng.random_bool(outlier_fraction)) => {
                    let mut d = field.eval(&object_points[i]);
                    if noise_sigma > 0.0 {
                        d.iter_mut().for_each(|x| *x += noise.sample(rng));
                        normalize(&mut d);
                    }
                    d
                }
                _ => random_unit(rng, dim),
            };
            d.iter_mut().for_each(|x| *x = *x as f32 as f64);
            fmap.descriptor_mut(px).copy_from_slice(&d);
        }
    }
    Ok(fmap)
}

/// Samples the anchor object pose (uniform rotation) and the query pose
/// (anchor rotation perturbed by a uniform-axis rotation of bounded angle).
pub fn sample_poses(spec: &SyntheticSceneSpec) -> (RigidTransform, RigidTransform) {
    let mut rng = stream(spec.seed, STREAM_POSES);
    let s = spec.object_scale;
    let place = |rng: &mut ChaCha8Rng| {
        Vector3::new(
            rng.random_range(-0.2 * s..=0.2 * s),
            rng.random_range(-0.2 * s..=0.2 * s),
            rng.random_range(4.5 * s..=5.5 * s),
        )
    };
    let ra = random_rotation(&mut rng);
    let ta = place(&mut rng);
    let axis = Vector3::from(random_unit(&mut rng, 3).as_slice().try_into().unwrap_or([0.0, 0.0, 1.0]));
    let angle = rng.random_range(0.0..=spec.max_relative_rotation_deg.to_radians());
    let rel = RigidTransform::from_axis_angle(&axis, angle, Vector3::zeros());
    let tq = place(&mut rng);
    (
        RigidTransform {
            rotation: ra,
            translation: ta,
        },
        RigidTransform {
            rotation: rel.rotation * ra,
            translation: tq,
        },
    )
}

fn distractor_points(
    spec: &SyntheticSceneSpec,
    object_pose: &RigidTransform,
    spacing: f64,
    rng: &mut impl Rng,
) -> Vec<Point3> {
    let s = spec.object_scale;
    let mut pts = Vec::new();
    for _ in 0..spec.distractor_count {
        let mut local = Vec::new();
        cube_surface(0.5 * s, spacing, Point3::zeros(), &mut local);
        let side = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
        let offset = Vector3::new(
            side * rng.random_range(0.3 * s..=0.6 * s),
            rng.random_range(-0.4 * s..=0.4 * s),
            rng.random_range(1.2 * s..=1.8 * s),
        );
        let t = RigidTransform {
            rotation: random_rotation(rng),
            translation: object_pose.translation + offset,
        };
        pts.extend(local.iter().map(|p| t.transform_point(p)));
    }
    pts
}

fn noisy_depth(render: &Render, sigma: f64, rng: &mut impl Rng) -> Result<DepthMap> {
    let noise = Normal::new(0.0, sigma.max(0.0)).map_err(|e| Error::invalid("depth noise", e.to_string()))?;
    let mut d = render.depth.clone();
    for x in d.values.iter_mut() {
        if *x > 0.0 {
            let mut z = *x;
            if sigma > 0.0 {
                z += noise.sample(rng);
            }
            // millimeter quantization of the depth file format
            *x = ((z * 1000.0).round() / 1000.0).max(0.001);
        }
    }
    Ok(d)
}

/// Builds a complete scene pair from `spec`. Identical specs give identical pairs.
pub fn generate_scene(spec: &SyntheticSceneSpec) -> Result<ScenePair> {
    spec.validate()?;
    let k = spec.intrinsics();
    let (sampled_a, sampled_q) = sample_poses(spec);
    let pose_a = spec.pose_a.map(|p| p.to_transform()).transpose()?.unwrap_or(sampled_a);
    let pose_q = spec.pose_q.map(|p| p.to_transform()).transpose()?.unwrap_or(sampled_q);

    let s = spec.object_scale;
    let z_near = (pose_a.translation.z.min(pose_q.translation.z) - s).max(0.25 * s);
    // half a pixel at the nearest surface
    let dense_spacing = 0.5 * z_near / k.fx;
    let dense = surface_points(spec.object_shape, s, dense_spacing, spec.seed);
    let model = sample_object(spec.object_shape, s, s / EVAL_SAMPLES_PER_SIDE, spec.seed)?;

    let mut distractor_rng = stream(spec.seed, STREAM_DISTRACTORS);
    let radius = SplatRadius::FromSpacing(dense_spacing);
    let n_obj = dense.len() as u32;
    let render_view = |pose: &RigidTransform, rng: &mut ChaCha8Rng| {
        let mut cam: Vec<Point3> = dense.iter().map(|p| pose.transform_point(p)).collect();
        cam.extend(distractor_points(spec, pose, dense_spacing, rng));
        let r = render_points(&cam, &k, radius);
        let mask = r.mask_of(0..n_obj);
        (r, mask)
    };
    let (render_a, mask_a) = render_view(&pose_a, &mut distractor_rng);
    let (render_q, mask_q) = render_view(&pose_q, &mut distractor_rng);
    if mask_a.count() == 0 || mask_q.count() == 0 {
        return Err(Error::EmptyRender);
    }

    let gt_matches = generate_gt_matches(
        &dense,
        &pose_a,
        &pose_q,
        &render_a,
        &mask_a,
        &render_q,
        &mask_q,
        spec.match_capacity,
        stream(spec.seed, STREAM_SUBSAMPLE).random(),
    )?;

    let field = DescriptorField::new(spec.descriptor_dim, s, &mut stream(spec.seed, STREAM_FIELD));
    let fmap_a = synth_feature_map(
        &render_a,
        &dense,
        &field,
        spec.descriptor_noise_sigma,
        spec.outlier_fraction,
        &mut stream(spec.seed, STREAM_FEATURES_A),
    )?;
    let fmap_q = synth_feature_map(
        &render_q,
        &dense,
        &field,
        spec.descriptor_noise_sigma,
        spec.outlier_fraction,
        &mut stream(spec.seed, STREAM_FEATURES_Q),
    )?;

    let mut depth_rng = stream(spec.seed, STREAM_DEPTH);
    let depth_a = noisy_depth(&render_a, spec.depth_noise_sigma, &mut depth_rng)?;
    let depth_q = noisy_depth(&render_q, spec.depth_noise_sigma, &mut depth_rng)?;

    Ok(ScenePair {
        depth_a,
        depth_q,
        mask_a,
        mask_q,
        fmap_a,
        fmap_q,
        intrinsics_a: k,
        intrinsics_q: k,
        gt_pose: pose_q.compose(&pose_a.inverse()),
        object_pose_a: pose_a,
        object_pose_q: pose_q,
        gt_matches,
        model,
    })
}
