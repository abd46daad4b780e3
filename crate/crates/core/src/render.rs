//! Z-buffered point splatting.
//!
//! Each point covers the pixels whose centers lie within its disk radius of
//! its projection. A pixel takes the depth of the front-most surface: among
//! the splats within a surface tolerance of the nearest one, the splat whose
//! projection is closest to the pixel center wins. The tolerance is the
//! splat's metric diameter scaled by [`SURFACE_SLACK`], which keeps neighbours
//! on a slanted surface together while separating surfaces farther apart.

use crate::error::{Error, Result};
use crate::geometry::{project_point, CameraIntrinsics, DepthMap, Point3, RigidTransform};
use crate::matching::{Mask, Pixel};

pub const SURFACE_SLACK: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SplatRadius {
    /// Disk radius in pixels, identical for every point.
    Fixed(f64),
    /// `max(1, round(0.5 * f * spacing / z))` with `spacing` the model's
    /// point spacing in meters.
    FromSpacing(f64),
}

impl SplatRadius {
    #[inline]
    pub fn pixels(&self, k: &CameraIntrinsics, z: f64) -> f64 {
        match *self {
            SplatRadius::Fixed(r) => r,
            SplatRadius::FromSpacing(s) => (0.5 * k.fx.max(k.fy) * s / z).round().max(1.0),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Render {
    /// Rendered depth, 0 where nothing was splatted.
    pub depth: DepthMap,
    /// Depth of the nearest splat covering each pixel (0 if none).
    pub front: DepthMap,
    /// Index of the point owning each pixel.
    pub owner: Vec<Option<u32>>,
    pub intrinsics: CameraIntrinsics,
    radius: SplatRadius,
}

struct Splat {
    u: f64,
    v: f64,
    z: f64,
    radius: f64,
    tolerance: f64,
}

fn splats(points: &[Point3], k: &CameraIntrinsics, radius: SplatRadius) -> Vec<Option<Splat>> {
    points
        .iter()
        .map(|p| {
            let (u, v, z) = project_point(k, p).ok()?;
            let r = radius.pixels(k, z);
            if u < -0.5 - r || v < -0.5 - r || u > k.width as f64 - 0.5 + r || v > k.height as f64 - 0.5 + r {
                return None;
            }
            let tolerance = SURFACE_SLACK * 2.0 * r * z / k.fx.min(k.fy);
            Some(Splat {
                u,
                v,
                z,
                radius: r,
                tolerance,
            })
        })
        .collect()
}

fn for_each_covered(s: &Splat, k: &CameraIntrinsics, mut f: impl FnMut(usize, f64)) {
    let r2 = s.radius * s.radius;
    let u0 = (s.u - s.radius).ceil().max(0.0) as i64;
    let u1 = (s.u + s.radius).floor().min(k.width as f64 - 1.0) as i64;
    let v0 = (s.v - s.radius).ceil().max(0.0) as i64;
    let v1 = (s.v + s.radius).floor().min(k.height as f64 - 1.0) as i64;
    for v in v0..=v1 {
        for u in u0..=u1 {
            let du = u as f64 - s.u;
            let dv = v as f64 - s.v;
            let d2 = du * du + dv * dv;
            if d2 <= r2 {
                f(v as usize * k.width as usize + u as usize, d2);
            }
        }
    }
}

/// Renders camera-frame points. Points behind the camera are skipped.
pub fn render_points(points: &[Point3], k: &CameraIntrinsics, radius: SplatRadius) -> Render {
    let n = k.width as usize * k.height as usize;
    let splats = splats(points, k, radius);

    let mut front = vec![f64::INFINITY; n];
    for s in splats.iter().flatten() {
        for_each_covered(s, k, |px, _| {
            if s.z < front[px] {
                front[px] = s.z;
            }
        });
    }

    // (image distance^2, depth, index)
    let mut best: Vec<Option<(f64, f64, u32)>> = vec![None; n];
    for (i, s) in splats.iter().enumerate() {
        let Some(s) = s else { continue };
        for_each_covered(s, k, |px, d2| {
            if s.z > front[px] + s.tolerance {
                return;
            }
            let cand = (d2, s.z, i as u32);
            let replace = match best[px] {
                None => true,
                Some(b) => (cand.0, cand.1, cand.2) < (b.0, b.1, b.2),
            };
            if replace {
                best[px] = Some(cand);
            }
        });
    }

    let mut depth = DepthMap::zeros(k.width, k.height);
    let mut front_map = DepthMap::zeros(k.width, k.height);
    let mut owner = vec![None; n];
    for px in 0..n {
        if let Some((_, z, i)) = best[px] {
            depth.values[px] = z;
            owner[px] = Some(i);
        }
        if front[px].is_finite() {
            front_map.values[px] = front[px];
        }
    }
    Render {
        depth,
        front: front_map,
        owner,
        intrinsics: *k,
        radius,
    }
}

impl Render {
    pub fn mask(&self) -> Mask {
        Mask {
            height: self.depth.height,
            width: self.depth.width,
            values: self.depth.values.iter().map(|d| *d > 0.0).collect(),
        }
    }

    /// Mask of pixels owned by points with index in `range`.
    pub fn mask_of(&self, range: std::ops::Range<u32>) -> Mask {
        Mask {
            height: self.depth.height,
            width: self.depth.width,
            values: self
                .owner
                .iter()
                .map(|o| o.is_some_and(|i| range.contains(&i)))
                .collect(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.owner.iter().all(|o| o.is_none())
    }

    /// Pixel containing the projection of `p` when `p` lies on the visible
    /// surface there.
    pub fn visible_pixel(&self, p: &Point3) -> Option<Pixel> {
        let k = &self.intrinsics;
        let (u, v, z) = project_point(k, p).ok()?;
        let (pu, pv) = k.pixel_of(u, v)?;
        let front = self.front.get(pu, pv);
        if front <= 0.0 {
            return None;
        }
        let r = self.radius.pixels(k, z);
        let tolerance = SURFACE_SLACK * 2.0 * r * z / k.fx.min(k.fy);
        (z <= front + tolerance).then_some(Pixel::new(pu, pv))
    }
}

/// Renders model-frame `points` placed at `pose` in the camera frame.
pub fn render_depth(
    points: &[Point3],
    pose: &RigidTransform,
    k: &CameraIntrinsics,
    radius: SplatRadius,
) -> Result<(DepthMap, Mask)> {
    let cam: Vec<Point3> = points.iter().map(|p| pose.transform_point(p)).collect();
    let r = render_points(&cam, k, radius);
    if r.is_empty() {
        return Err(Error::EmptyRender);
    }
    let mask = r.mask();
    Ok((r.depth, mask))
}
