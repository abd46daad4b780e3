//! Uniform-grid index for exact nearest-neighbor queries on 3D point sets.

use std::collections::HashMap;

use crate::geometry::Point3;

type Cell = (i64, i64, i64);

pub struct GridIndex<'a> {
    points: &'a [Point3],
    cell: f64,
    cells: HashMap<Cell, Vec<u32>>,
    min_cell: Cell,
    max_cell: Cell,
}

impl<'a> GridIndex<'a> {
    /// `cell` should be on the order of the typical point spacing.
    pub fn new(points: &'a [Point3], cell: f64) -> Self {
        assert!(cell > 0.0 && cell.is_finite());
        let mut cells: HashMap<Cell, Vec<u32>> = HashMap::new();
        let mut min_cell = (i64::MAX, i64::MAX, i64::MAX);
        let mut max_cell = (i64::MIN, i64::MIN, i64::MIN);
        for (i, p) in points.iter().enumerate() {
            let c = Self::key(p, cell);
            min_cell = (min_cell.0.min(c.0), min_cell.1.min(c.1), min_cell.2.min(c.2));
            max_cell = (max_cell.0.max(c.0), max_cell.1.max(c.1), max_cell.2.max(c.2));
            cells.entry(c).or_default().push(i as u32);
        }
        Self {
            points,
            cell,
            cells,
            min_cell,
            max_cell,
        }
    }

    /// Cell size giving roughly `per_cell` points per occupied cell for a
    /// surface sample of `points`.
    pub fn auto(points: &'a [Point3], per_cell: f64) -> Self {
        let (lo, hi) = bounds(points);
        let extent = (hi - lo).max().max(1e-9);
        // surface samples scale with the square of the cell count per axis
        let per_axis = ((points.len() as f64 / per_cell).sqrt()).max(1.0);
        Self::new(points, extent / per_axis)
    }

    fn key(p: &Point3, cell: f64) -> Cell {
        (
            (p.x / cell).floor() as i64,
            (p.y / cell).floor() as i64,
            (p.z / cell).floor() as i64,
        )
    }

    /// Nearest indexed point to `q` (ties: lowest index), skipping `exclude`.
    pub fn nearest(&self, q: &Point3, exclude: Option<usize>) -> Option<(usize, f64)> {
        if self.points.is_empty() {
            return None;
        }
        let c = Self::key(q, self.cell);
        let mut best: Option<(usize, f64)> = None;
        let max_ring = [
            (c.0 - self.min_cell.0).abs(),
            (c.0 - self.max_cell.0).abs(),
            (c.1 - self.min_cell.1).abs(),
            (c.1 - self.max_cell.1).abs(),
            (c.2 - self.min_cell.2).abs(),
            (c.2 - self.max_cell.2).abs(),
        ]
        .into_iter()
        .max()
        .unwrap_or(0);
        let gap = |v: i64, lo: i64, hi: i64| (lo - v).max(v - hi).max(0);
        let first_ring = gap(c.0, self.min_cell.0, self.max_cell.0)
            .max(gap(c.1, self.min_cell.1, self.max_cell.1))
            .max(gap(c.2, self.min_cell.2, self.max_cell.2));
        let consider = |i: usize, best: &mut Option<(usize, f64)>| {
            if Some(i) == exclude {
                return;
            }
            let d = (self.points[i] - q).norm();
            if best.is_none_or(|(bi, bd)| d < bd || (d == bd && i < bi)) {
                *best = Some((i, d));
            }
        };
        for ring in first_ring..=max_ring {
            // every point outside the searched cube is at least this far away
            if let Some((_, d)) = best {
                let reach = (ring - 1).max(0) as f64 * self.cell;
                if d < reach {
                    break;
                }
            }
            let shell = (2 * ring + 1).pow(3) - (2 * ring - 1).max(0).pow(3);
            if shell as usize > self.cells.len() {
                // sparse grid: a full scan is cheaper than the remaining rings
                for i in 0..self.points.len() {
                    consider(i, &mut best);
                }
                break;
            }
            self.visit_ring(c, ring, |i| consider(i, &mut best));
        }
        best
    }

    fn visit_ring(&self, c: Cell, ring: i64, mut f: impl FnMut(usize)) {
        for dx in -ring..=ring {
            for dy in -ring..=ring {
                for dz in -ring..=ring {
                    if dx.abs().max(dy.abs()).max(dz.abs()) != ring {
                        continue;
                    }
                    if let Some(ids) = self.cells.get(&(c.0 + dx, c.1 + dy, c.2 + dz)) {
                        for &i in ids {
                            f(i as usize);
                        }
                    }
                }
            }
        }
    }
}

pub fn bounds(points: &[Point3]) -> (Point3, Point3) {
    let mut lo = Point3::repeat(f64::INFINITY);
    let mut hi = Point3::repeat(f64::NEG_INFINITY);
    for p in points {
        lo = lo.inf(p);
        hi = hi.sup(p);
    }
    if points.is_empty() {
        (Point3::zeros(), Point3::zeros())
    } else {
        (lo, hi)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn nearest_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let pts: Vec<Point3> = (0..500)
            .map(|_| {
                Point3::new(
                    rng.random_range(-0.1..0.1),
                    rng.random_range(-0.1..0.1),
                    rng.random_range(0.0..0.02),
                )
            })
            .collect();
        for cell in [0.001, 0.01, 0.05, 1.0] {
            let idx = GridIndex::new(&pts, cell);
            for _ in 0..200 {
                let q = Point3::new(
                    rng.random_range(-0.3..0.3),
                    rng.random_range(-0.3..0.3),
                    rng.random_range(-0.3..0.3),
                );
                let (bi, bd) = pts
                    .iter()
                    .enumerate()
                    .map(|(i, p)| (i, (p - q).norm()))
                    .fold((usize::MAX, f64::INFINITY), |a, b| if b.1 < a.1 { b } else { a });
                let (i, d) = idx.nearest(&q, None).unwrap();
                assert_eq!(d, bd);
                assert_eq!(i, bi);
            }
            // exclusion
            let (i, _) = idx.nearest(&pts[3], Some(3)).unwrap();
            assert_ne!(i, 3);
        }
    }
}
