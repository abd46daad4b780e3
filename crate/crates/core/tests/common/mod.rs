//! Independent reference implementations and instance generators shared by
//! the integration tests and the acceptance suite.
#![allow(dead_code)]

use std::path::Path;

use nalgebra::{Matrix3, Matrix6, Vector3, Vector6};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use relpose::geometry::{CameraIntrinsics, DepthMap, Point3, PointCloud, RigidTransform};
use relpose::loss::MatchSupervision;
use relpose::matching::{cosine_distance, FeatureList, FeatureMap, Mask, Match, MatchSet, Pixel};
use relpose::metrics::ObjectModel;
use relpose::registration::CorrespondenceSet3D;
use relpose::synth::{ObjectShape, SyntheticSceneSpec};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_unit_axis(rng: &mut impl Rng) -> Vector3<f64> {
    loop {
        let v = Vector3::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        );
        let n = v.norm();
        if n > 0.1 && n <= 1.0 {
            return v / n;
        }
    }
}

pub fn random_transform(rng: &mut impl Rng, max_angle: f64, max_translation: f64) -> RigidTransform {
    let axis = random_unit_axis(rng);
    let angle = rng.random_range(0.0..max_angle);
    let t = Vector3::new(
        rng.random_range(-max_translation..max_translation),
        rng.random_range(-max_translation..max_translation),
        rng.random_range(-max_translation..max_translation),
    );
    RigidTransform::from_axis_angle(&axis, angle, t)
}

pub fn random_points(rng: &mut impl Rng, n: usize, half_extent: f64) -> Vec<Point3> {
    (0..n)
        .map(|_| {
            Point3::new(
                rng.random_range(-half_extent..half_extent),
                rng.random_range(-half_extent..half_extent),
                rng.random_range(-half_extent..half_extent),
            )
        })
        .collect()
}

pub fn random_descriptor(rng: &mut impl Rng, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        if v.iter().map(|x| x * x).sum::<f64>() > 1e-3 {
            return v;
        }
    }
}

pub fn random_feature_map(rng: &mut impl Rng, h: u32, w: u32, dim: usize) -> FeatureMap {
    let mut f = FeatureMap::zeros(h, w, dim);
    for v in 0..h {
        for u in 0..w {
            let d = random_descriptor(rng, dim);
            f.descriptor_mut(Pixel::new(u, v)).copy_from_slice(&d);
        }
    }
    f
}

pub fn random_pixel(rng: &mut impl Rng, w: u32, h: u32) -> Pixel {
    Pixel::new(rng.random_range(0..w), rng.random_range(0..h))
}

/// `n` distinct anchor pixels paired with distinct query pixels.
pub fn random_supervision(rng: &mut impl Rng, w: u32, h: u32, n: usize) -> MatchSupervision {
    let n = n.min((w * h) as usize);
    let a = rand::seq::index::sample(rng, (w * h) as usize, n).into_vec();
    let q = rand::seq::index::sample(rng, (w * h) as usize, n).into_vec();
    let px = |i: usize| Pixel::new(i as u32 % w, i as u32 / w);
    MatchSupervision::new(a.into_iter().zip(q).map(|(i, j)| (px(i), px(j))).collect()).unwrap()
}

pub fn random_feature_list(rng: &mut impl Rng, n: usize, dim: usize, w: u32, h: u32) -> FeatureList {
    let idx = rand::seq::index::sample(rng, (w * h) as usize, n).into_vec();
    let mut coords: Vec<Pixel> = idx.iter().map(|&i| Pixel::new(i as u32 % w, i as u32 / w)).collect();
    coords.sort();
    let mut vectors = Vec::with_capacity(n * dim);
    for _ in 0..n {
        vectors.extend(random_descriptor(rng, dim));
    }
    FeatureList { dim, coords, vectors }
}

// ---- matching ----

/// Exhaustive anchor-to-query nearest neighbours, thresholded and capped.
/// Returns `(anchor pixel, query pixel, distance)` sorted by pixels.
pub fn brute_force_matches(
    fa: &FeatureList,
    fq: &FeatureList,
    max_distance: f64,
    capacity: usize,
) -> Vec<(Pixel, Pixel, f64)> {
    let mut out = Vec::new();
    for i in 0..fa.len() {
        let mut best: Option<(Pixel, f64)> = None;
        for j in 0..fq.len() {
            let d = cosine_distance(fa.vector(i), fq.vector(j)).unwrap();
            let better = match best {
                None => true,
                Some((p, bd)) => d < bd || (d == bd && fq.coords[j] < p),
            };
            if better {
                best = Some((fq.coords[j], d));
            }
        }
        let (q, d) = best.unwrap();
        if d <= max_distance {
            out.push((fa.coords[i], q, d));
        }
    }
    out.sort_by(|x, y| x.2.total_cmp(&y.2).then(x.0.cmp(&y.0)).then(x.1.cmp(&y.1)));
    out.truncate(capacity);
    out.sort_by(|x, y| x.0.cmp(&y.0).then(x.1.cmp(&y.1)));
    out
}

// ---- loss ----

/// Double loop with integer squared distances.
pub fn brute_candidates(coords: &[Pixel], i: usize, radius: f64) -> Vec<usize> {
    let mut out = Vec::new();
    for k in 0..coords.len() {
        if k == i {
            continue;
        }
        let du = coords[i].u as i64 - coords[k].u as i64;
        let dv = coords[i].v as i64 - coords[k].v as i64;
        if ((du * du + dv * dv) as f64).sqrt() >= radius {
            out.push(k);
        }
    }
    out
}

/// Exhaustive hardest negative: `(pool index, distance)`, lowest index on ties.
pub fn brute_hardest(fmap: &FeatureMap, coords: &[Pixel], pool: &[Pixel], radius: f64) -> Vec<Option<(usize, f64)>> {
    coords
        .iter()
        .map(|xi| {
            let mut best: Option<(usize, f64)> = None;
            for (k, xk) in pool.iter().enumerate() {
                let du = xi.u as f64 - xk.u as f64;
                let dv = xi.v as f64 - xk.v as f64;
                if (du * du + dv * dv).sqrt() < radius {
                    continue;
                }
                let d = cosine_distance(fmap.descriptor(*xi), fmap.descriptor(*xk)).unwrap();
                if best.is_none_or(|(_, bd)| d < bd) {
                    best = Some((k, d));
                }
            }
            best
        })
        .collect()
}

/// Copies of both maps with one entry shifted by `delta`.
pub fn with_entry(fa: &FeatureMap, fq: &FeatureMap, side: usize, idx: usize, delta: f64) -> (FeatureMap, FeatureMap) {
    let (mut a, mut q) = (fa.clone(), fq.clone());
    if side == 0 {
        a.data[idx] += delta;
    } else {
        q.data[idx] += delta;
    }
    (a, q)
}

/// Relative max-norm error of an analytic gradient against central
/// differences of `f` at step `h`, over the entries in `entries`
/// (`(side, flat index)`). Entries outside the list must have zero
/// analytic gradient; a nonzero one is reported as error 1.
pub fn gradient_error(
    f: &dyn Fn(&FeatureMap, &FeatureMap) -> f64,
    fa: &FeatureMap,
    fq: &FeatureMap,
    grad_a: &FeatureMap,
    grad_q: &FeatureMap,
    entries: &[(usize, usize)],
    h: f64,
) -> f64 {
    let mut listed = [vec![false; fa.data.len()], vec![false; fq.data.len()]];
    let mut max_diff = 0.0f64;
    let mut scale = 0.0f64;
    for &(side, idx) in entries {
        listed[side][idx] = true;
        let (ap, qp) = with_entry(fa, fq, side, idx, h);
        let (am, qm) = with_entry(fa, fq, side, idx, -h);
        let numeric = (f(&ap, &qp) - f(&am, &qm)) / (2.0 * h);
        let analytic = if side == 0 { grad_a.data[idx] } else { grad_q.data[idx] };
        max_diff = max_diff.max((numeric - analytic).abs());
        scale = scale.max(numeric.abs()).max(analytic.abs());
    }
    for (side, g) in [&grad_a.data, &grad_q.data].into_iter().enumerate() {
        if g.iter().enumerate().any(|(i, x)| !listed[side][i] && *x != 0.0) {
            return 1.0;
        }
    }
    if scale == 0.0 {
        0.0
    } else {
        max_diff / scale
    }
}

/// Flat indices of every channel of the given pixels.
pub fn entries_of(fmap: &FeatureMap, side: usize, pixels: impl IntoIterator<Item = Pixel>) -> Vec<(usize, usize)> {
    let mut out: Vec<(usize, usize)> = pixels
        .into_iter()
        .flat_map(|p| {
            let o = fmap.offset(p);
            (o..o + fmap.dim).map(move |i| (side, i))
        })
        .collect();
    out.sort_unstable();
    out.dedup();
    out
}

// ---- registration ----

pub fn brute_compatibility(src: &[Point3], dst: &[Point3], beta: f64) -> Vec<Vec<bool>> {
    let len = |a: &Point3, b: &Point3| {
        let (dx, dy, dz) = (a.x - b.x, a.y - b.y, a.z - b.z);
        (dx * dx + dy * dy + dz * dz).sqrt()
    };
    (0..src.len())
        .map(|i| {
            (0..src.len())
                .map(|j| i == j || (len(&src[i], &src[j]) - len(&dst[i], &dst[j])).abs() <= beta)
                .collect()
        })
        .collect()
}

fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

fn exp_so3(w: &Vector3<f64>) -> Matrix3<f64> {
    let theta = w.norm();
    let k = skew(w);
    if theta < 1e-12 {
        return Matrix3::identity() + k;
    }
    Matrix3::identity() + k * (theta.sin() / theta) + k * k * ((1.0 - theta.cos()) / (theta * theta))
}

/// Weighted least-squares pose by Levenberg-Marquardt over a left rotation
/// increment and translation, started from the identity.
pub fn least_squares_pose(src: &[Point3], dst: &[Point3], weights: &[f64]) -> RigidTransform {
    let cost = |r: &Matrix3<f64>, t: &Vector3<f64>| -> f64 {
        src.iter()
            .zip(dst)
            .zip(weights)
            .map(|((s, d), w)| w * (r * s + t - d).norm_squared())
            .sum()
    };
    let mut r = Matrix3::identity();
    let mut t = Vector3::zeros();
    let mut lambda = 1e-3;
    let mut c = cost(&r, &t);
    for _ in 0..500 {
        let mut jtj = Matrix6::zeros();
        let mut jtr = Vector6::zeros();
        for ((s, d), w) in src.iter().zip(dst).zip(weights) {
            let rs = r * s;
            let res = rs + t - d;
            // d(res)/d(rot) = -[R s]x, d(res)/d(t) = I
            let mut j = nalgebra::Matrix3x6::zeros();
            j.fixed_view_mut::<3, 3>(0, 0).copy_from(&(-skew(&rs)));
            j.fixed_view_mut::<3, 3>(0, 3).copy_from(&Matrix3::identity());
            jtj += *w * j.transpose() * j;
            jtr += *w * j.transpose() * res;
        }
        let mut improved = false;
        for _ in 0..50 {
            let mut a = jtj;
            for i in 0..6 {
                a[(i, i)] += lambda * (1.0 + jtj[(i, i)]);
            }
            let Some(step) = a.lu().solve(&(-jtr)) else {
                lambda *= 10.0;
                continue;
            };
            let w = Vector3::new(step[0], step[1], step[2]);
            let r_new = exp_so3(&w) * r;
            // re-orthonormalize
            let svd = r_new.svd(true, true);
            let r_new = svd.u.unwrap() * svd.v_t.unwrap();
            let t_new = t + Vector3::new(step[3], step[4], step[5]);
            let c_new = cost(&r_new, &t_new);
            if c_new <= c {
                let done = step.norm() < 1e-15 || c - c_new <= 1e-30;
                r = r_new;
                t = t_new;
                c = c_new;
                lambda = (lambda * 0.1).max(1e-12);
                improved = true;
                if done {
                    return RigidTransform { rotation: r, translation: t };
                }
                break;
            }
            lambda *= 10.0;
        }
        if !improved {
            break;
        }
    }
    RigidTransform { rotation: r, translation: t }
}

/// 200 correspondences in a 0.5 m box, half of them replaced by uniform
/// outliers, inliers perturbed by isotropic Gaussian noise.
pub fn contaminated_correspondences(
    seed: u64,
    n: usize,
    outlier_fraction: f64,
    noise_sigma: f64,
) -> (CorrespondenceSet3D, RigidTransform) {
    use rand_distr::{Distribution, Normal};
    let mut rng = rng(seed);
    let gt = random_transform(&mut rng, std::f64::consts::PI, 0.5);
    let src = random_points(&mut rng, n, 0.25);
    let noise = Normal::new(0.0, noise_sigma).unwrap();
    let n_out = (n as f64 * outlier_fraction).round() as usize;
    let outliers = rand::seq::index::sample(&mut rng, n, n_out).into_vec();
    let mut is_outlier = vec![false; n];
    for i in outliers {
        is_outlier[i] = true;
    }
    let dst = src
        .iter()
        .enumerate()
        .map(|(i, s)| {
            if is_outlier[i] {
                gt.translation + random_points(&mut rng, 1, 0.25)[0]
            } else {
                gt.transform_point(s)
                    + Vector3::new(noise.sample(&mut rng), noise.sample(&mut rng), noise.sample(&mut rng))
            }
        })
        .collect();
    (
        CorrespondenceSet3D::new(PointCloud::new(src), PointCloud::new(dst)).unwrap(),
        gt,
    )
}

// ---- metrics ----

/// Regularly sampled flat square of side `side` in the model z = 0 plane.
pub fn flat_square(side: f64, spacing: f64) -> ObjectModel {
    let n = (side / spacing).round() as usize;
    let mut pts = Vec::new();
    for i in 0..=n {
        for j in 0..=n {
            pts.push(Point3::new(
                -0.5 * side + side * i as f64 / n as f64,
                -0.5 * side + side * j as f64 / n as f64,
                0.0,
            ));
        }
    }
    ObjectModel::new(pts, vec![RigidTransform::identity()]).unwrap()
}

pub struct HalfOverlap {
    pub model: ObjectModel,
    pub k: CameraIntrinsics,
    pub gt: RigidTransform,
    pub pred: RigidTransform,
    pub scene: DepthMap,
    /// Footprint sizes in pixels of the continuous projection.
    pub side_px: f64,
    pub shift_px: f64,
}

/// Fronto-parallel square at 1 m; the prediction is shifted sideways by half
/// the side. The scene holds the true square in front of a plane at 2 m.
pub fn half_overlap_case() -> HalfOverlap {
    let k = CameraIntrinsics::new(100.0, 100.0, 49.5, 49.5, 100, 100).unwrap();
    let side = 0.2;
    let model = flat_square(side, 0.002);
    let gt = RigidTransform::from_translation(Vector3::new(0.0, 0.0, 1.0));
    let pred = RigidTransform::from_translation(Vector3::new(0.5 * side, 0.0, 1.0));
    let (lo, hi) = (-0.5 * side * 100.0 + 49.5, 0.5 * side * 100.0 + 49.5);
    let mut scene = DepthMap::zeros(100, 100);
    for v in 0..100u32 {
        for u in 0..100u32 {
            let inside = (lo..=hi).contains(&(u as f64)) && (lo..=hi).contains(&(v as f64));
            scene.values[(v * 100 + u) as usize] = if inside { 1.0 } else { 2.0 };
        }
    }
    HalfOverlap {
        model,
        k,
        gt,
        pred,
        scene,
        side_px: side * 100.0,
        shift_px: 0.5 * side * 100.0,
    }
}

/// Error of two `side x side` pixel squares offset by `shift` columns:
/// `(union - intersection) / union`, plus the extreme values reachable when
/// every footprint edge moves by up to one pixel.
pub fn half_overlap_expected(side: f64, shift: f64) -> (f64, f64, f64) {
    let err = |wg: f64, wp: f64, overlap: f64, h: f64| {
        let union = (wg + wp - overlap) * h;
        (union - overlap * h) / union
    };
    let exact = err(side, side, side - shift, side);
    let (mut lo, mut hi) = (exact, exact);
    // gt left/right, pred left/right edges, common top/bottom
    for gl in [-1.0, 0.0, 1.0] {
        for gr in [-1.0, 0.0, 1.0] {
            for pl in [-1.0, 0.0, 1.0] {
                for pr in [-1.0, 0.0, 1.0] {
                    for dh in [-2.0, -1.0, 0.0, 1.0, 2.0] {
                        let (g0, g1): (f64, f64) = (-gl, side + gr);
                        let (p0, p1): (f64, f64) = (shift - pl, shift + side + pr);
                        let overlap = (g1.min(p1) - g0.max(p0)).max(0.0);
                        let e = err(g1 - g0, p1 - p0, overlap, side + dh);
                        lo = lo.min(e);
                        hi = hi.max(e);
                    }
                }
            }
        }
    }
    (exact, lo, hi)
}

// ---- synthetic benchmark ----

pub const SHAPES: [ObjectShape; 4] = [
    ObjectShape::Box,
    ObjectShape::Cylinder,
    ObjectShape::Sphere,
    ObjectShape::Composite,
];

/// Descriptor noise 0.1, 30% outlier pixels, one distractor; shapes cycle with the seed.
pub fn benchmark_spec(seed: u64) -> SyntheticSceneSpec {
    let mut spec = SyntheticSceneSpec::new(SHAPES[seed as usize % 4], 0.1, seed);
    spec.descriptor_noise_sigma = 0.1;
    spec.outlier_fraction = 0.3;
    spec.distractor_count = 1;
    spec
}

pub fn noiseless_spec(seed: u64) -> SyntheticSceneSpec {
    SyntheticSceneSpec::new(SHAPES[seed as usize % 4], 0.1, seed)
}

// ---- gradient-check instances ----

/// Smallest slack of the piecewise structure of the positive and negative
/// losses: distance of every positive pair from its hinge, of every hardest
/// negative from its hinge, and the gap between the best and second-best
/// negative candidate. Finite differences are only meaningful when the
/// stencil stays inside one smooth piece.
pub fn loss_slack(fa: &FeatureMap, fq: &FeatureMap, sup: &MatchSupervision, pos_margin: f64, neg_margin: f64, radius: f64) -> f64 {
    let mut slack = f64::INFINITY;
    for (a, q) in &sup.pairs {
        let d = cosine_distance(fa.descriptor(*a), fq.descriptor(*q)).unwrap();
        slack = slack.min((d - pos_margin).abs());
    }
    let xa: Vec<Pixel> = sup.pairs.iter().map(|p| p.0).collect();
    let xq: Vec<Pixel> = sup.pairs.iter().map(|p| p.1).collect();
    for (fmap, coords) in [(fa, &xa), (fq, &xq)] {
        for (i, xi) in coords.iter().enumerate() {
            let mut ds: Vec<f64> = brute_candidates(coords, i, radius)
                .into_iter()
                .map(|k| cosine_distance(fmap.descriptor(*xi), fmap.descriptor(coords[k])).unwrap())
                .collect();
            ds.sort_by(f64::total_cmp);
            if let Some(best) = ds.first() {
                slack = slack.min((best - neg_margin).abs());
                if let Some(second) = ds.get(1) {
                    slack = slack.min(second - best);
                }
            }
        }
    }
    slack
}

pub const GRADIENT_SLACK: f64 = 1e-3;

/// Random instance (maps up to 16x16x8, up to 50 supervised pairs) redrawn
/// until [`loss_slack`] is at least [`GRADIENT_SLACK`].
pub fn gradient_instance(seed: u64, radius: f64) -> (FeatureMap, FeatureMap, MatchSupervision) {
    let mut r = rng(seed);
    loop {
        let (h, w) = (r.random_range(4..=16), r.random_range(4..=16));
        let dim = r.random_range(2..=8);
        let fa = random_feature_map(&mut r, h, w, dim);
        let fq = random_feature_map(&mut r, h, w, dim);
        let n = r.random_range(1..=50);
        let sup = random_supervision(&mut r, w, h, n);
        if loss_slack(&fa, &fq, &sup, 0.2, 0.9, radius) >= GRADIENT_SLACK {
            return (fa, fq, sup);
        }
    }
}

// ---- file formats ----

fn check<T: PartialEq + std::fmt::Debug>(what: &str, before: &T, after: &T) -> Result<(), String> {
    if before == after {
        Ok(())
    } else {
        Err(format!("{what} changed: {before:?} -> {after:?}"))
    }
}

fn io_err(e: relpose::Error) -> String {
    e.to_string()
}

pub fn roundtrip_feature_map(seed: u64, dir: &Path) -> Result<(), String> {
    let mut r = rng(seed);
    let (h, w, dim) = (r.random_range(1..=24), r.random_range(1..=24), r.random_range(1..=16));
    let data: Vec<f64> = (0..h as usize * w as usize * dim)
        .map(|_| f32::from_bits(r.random::<u32>() & 0xbfff_ffff) as f64)
        .collect();
    let fmap = FeatureMap::new(h, w, dim, data).map_err(io_err)?;
    let path = dir.join(format!("f{seed}.fmap"));
    relpose::io::save_feature_map(&path, &fmap).map_err(io_err)?;
    let back = relpose::io::load_feature_map(&path).map_err(io_err)?;
    let bits = |f: &FeatureMap| f.data.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
    check("shape", &(fmap.height, fmap.width, fmap.dim), &(back.height, back.width, back.dim))?;
    check("feature bits", &bits(&fmap), &bits(&back))
}

pub fn roundtrip_depth(seed: u64, dir: &Path) -> Result<(), String> {
    let mut r = rng(seed);
    let (w, h) = (r.random_range(1..=40), r.random_range(1..=40));
    let values = (0..w * h)
        .map(|_| if r.random_bool(0.2) { 0.0 } else { r.random_range(0..=u16::MAX) as f64 / 1000.0 })
        .collect();
    let depth = DepthMap::new(w, h, values).map_err(io_err)?;
    let path = dir.join(format!("d{seed}.png"));
    relpose::io::save_depth(&path, &depth).map_err(io_err)?;
    check("depth", &depth, &relpose::io::load_depth(&path).map_err(io_err)?)
}

pub fn roundtrip_mask(seed: u64, dir: &Path) -> Result<(), String> {
    let mut r = rng(seed);
    let (w, h) = (r.random_range(1..=40), r.random_range(1..=40));
    let mask = Mask::new(h, w, (0..w * h).map(|_| r.random_bool(0.4)).collect()).map_err(io_err)?;
    let path = dir.join(format!("m{seed}.png"));
    relpose::io::save_mask(&path, &mask).map_err(io_err)?;
    check("mask", &mask, &relpose::io::load_mask(&path).map_err(io_err)?)
}

pub fn roundtrip_intrinsics(seed: u64, dir: &Path) -> Result<(), String> {
    let mut r = rng(seed);
    let (w, h) = (r.random_range(1..=4096), r.random_range(1..=4096));
    let k = CameraIntrinsics::new(
        r.random_range(10.0..5000.0),
        r.random_range(10.0..5000.0),
        r.random_range(0.0..w as f64),
        r.random_range(0.0..h as f64),
        w,
        h,
    )
    .map_err(io_err)?;
    let path = dir.join(format!("k{seed}.json"));
    relpose::io::save_intrinsics(&path, &k).map_err(io_err)?;
    check("intrinsics", &k, &relpose::io::load_intrinsics(&path).map_err(io_err)?)
}

pub fn roundtrip_pose(seed: u64, dir: &Path) -> Result<(), String> {
    let mut r = rng(seed);
    let t = random_transform(&mut r, std::f64::consts::PI, 2.0);
    let path = dir.join(format!("p{seed}.json"));
    relpose::io::save_pose(&path, &t, relpose::io::FRAME_A_TO_Q).map_err(io_err)?;
    check("pose", &t, &relpose::io::load_pose(&path, relpose::io::FRAME_A_TO_Q).map_err(io_err)?)
}

/// Distances are drawn on the 6-decimal grid the format stores.
pub fn roundtrip_matches(seed: u64, dir: &Path) -> Result<(), String> {
    let mut r = rng(seed);
    let n = r.random_range(0..=200);
    let pairs = (0..n)
        .map(|_| Match {
            a: random_pixel(&mut r, 4096, 4096),
            q: random_pixel(&mut r, 4096, 4096),
            distance: r.random_range(0..=2_000_000u32) as f64 / 1e6,
        })
        .collect();
    let set = MatchSet { pairs, capacity: n };
    let path = dir.join(format!("x{seed}.csv"));
    relpose::io::save_matches(&path, &set).map_err(io_err)?;
    check("matches", &set, &relpose::io::load_matches(&path).map_err(io_err)?)
}

pub fn roundtrip_supervision(seed: u64, dir: &Path) -> Result<(), String> {
    let mut r = rng(seed);
    let n = r.random_range(1..=100);
    let sup = random_supervision(&mut r, 64, 48, n);
    let path = dir.join(format!("s{seed}.csv"));
    relpose::io::save_supervision(&path, &sup).map_err(io_err)?;
    check("supervision", &sup, &relpose::io::load_supervision(&path).map_err(io_err)?)
}

pub fn roundtrip_object_model(seed: u64, dir: &Path) -> Result<(), String> {
    let mut r = rng(seed);
    let n = r.random_range(2..=80);
    let extent = r.random_range(0.01..1.0);
    let points = random_points(&mut r, n, extent);
    let symmetries = (0..r.random_range(1..5))
        .map(|_| {
            let mut s = random_transform(&mut r, std::f64::consts::PI, 1.0);
            s.translation = Vector3::zeros();
            s
        })
        .collect();
    let model = ObjectModel::new(points, symmetries).map_err(io_err)?;
    let path = dir.join(format!("o{seed}.json"));
    relpose::io::save_object_model(&path, &model).map_err(io_err)?;
    check("object model", &model, &relpose::io::load_object_model(&path).map_err(io_err)?)
}

pub type Roundtrip = fn(u64, &Path) -> Result<(), String>;

pub const ROUNDTRIPS: [(&str, Roundtrip); 8] = [
    ("feature map", roundtrip_feature_map),
    ("depth", roundtrip_depth),
    ("mask", roundtrip_mask),
    ("intrinsics", roundtrip_intrinsics),
    ("pose", roundtrip_pose),
    ("matches", roundtrip_matches),
    ("supervision", roundtrip_supervision),
    ("object model", roundtrip_object_model),
];

// ---- loss gradients ----

pub const FD_STEP: f64 = 1e-5;

fn involved_entries(fa: &FeatureMap, fq: &FeatureMap, sup: &MatchSupervision) -> Vec<(usize, usize)> {
    let mut e = entries_of(fa, 0, sup.pairs.iter().map(|p| p.0));
    e.extend(entries_of(fq, 1, sup.pairs.iter().map(|p| p.1)));
    e
}

/// Relative finite-difference errors of the positive and negative terms on
/// one conditioned random instance.
pub fn matching_gradient_errors(seed: u64) -> (f64, f64) {
    use relpose::loss::{negative_loss, positive_loss, LossParams};
    let radius = 2.0 + (seed % 3) as f64;
    let (fa, fq, sup) = gradient_instance(seed, radius);
    let params = LossParams {
        exclusion_radius: radius,
        ..LossParams::default()
    };
    let entries = involved_entries(&fa, &fq, &sup);
    let pos = positive_loss(&fa, &fq, &sup, params.pos_margin).unwrap();
    let f = |a: &FeatureMap, q: &FeatureMap| positive_loss(a, q, &sup, params.pos_margin).unwrap().value;
    let pos_err = gradient_error(&f, &fa, &fq, &pos.grad_a, &pos.grad_q, &entries, FD_STEP);
    let neg = negative_loss(&fa, &fq, &sup, &params).unwrap();
    let f = |a: &FeatureMap, q: &FeatureMap| negative_loss(a, q, &sup, &params).unwrap().value;
    let neg_err = gradient_error(&f, &fa, &fq, &neg.grad_a, &neg.grad_q, &entries, FD_STEP);
    (pos_err, neg_err)
}

/// Relative finite-difference error of the Dice term on a random soft mask.
pub fn dice_gradient_error(seed: u64) -> f64 {
    use relpose::loss::{dice_loss, SoftMask};
    let mut r = rng(seed);
    let (h, w) = (r.random_range(4..=16u32), r.random_range(4..=16u32));
    let n = (h * w) as usize;
    let values: Vec<f64> = (0..n).map(|_| r.random_range(0.0..1.0)).collect();
    let gt = Mask::new(h, w, (0..n).map(|_| r.random_bool(0.4)).collect()).unwrap();
    let term = dice_loss(&SoftMask::new(h, w, values.clone()).unwrap(), &gt).unwrap();
    let eval = |p: Vec<f64>| dice_loss(&SoftMask::new(h, w, p).unwrap(), &gt).unwrap().value;
    let mut max_diff = 0.0f64;
    let mut scale = 0.0f64;
    for i in 0..n {
        let mut p = values.clone();
        p[i] += FD_STEP;
        let fp = eval(p.clone());
        p[i] -= 2.0 * FD_STEP;
        let fm = eval(p);
        let numeric = (fp - fm) / (2.0 * FD_STEP);
        max_diff = max_diff.max((numeric - term.grad[i]).abs());
        scale = scale.max(numeric.abs()).max(term.grad[i].abs());
    }
    if scale == 0.0 {
        0.0
    } else {
        max_diff / scale
    }
}
