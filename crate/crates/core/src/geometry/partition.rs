//! Voronoi partitions of a convex region, used to build synthetic area maps.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Point2, Polygon};
use crate::error::{Error, Result};

/// Convex, roughly Kenya-shaped outline in degrees (lon, lat).
pub fn demo_country() -> Polygon {
    let v = [
        (33.9, 0.1),
        (34.0, -1.05),
        (39.25, -4.68),
        (41.55, -1.68),
        (41.95, 3.95),
        (40.9, 4.25),
        (38.0, 4.6),
        (35.8, 4.65),
        (34.4, 4.5),
        (33.95, 1.2),
    ];
    Polygon::new(
        "country",
        vec![v.iter().map(|&(x, y)| Point2::new(x, y)).collect()],
    )
    .expect("demo outline is valid")
}

/// Keeps the part of `ring` on the side of the line through `a` with normal `n`
/// where `(p - a)·n <= 0` (Sutherland–Hodgman step).
fn clip_half_plane(ring: &[Point2], a: &Point2, n: (f64, f64)) -> Vec<Point2> {
    let side = |p: &Point2| (p.x - a.x) * n.0 + (p.y - a.y) * n.1;
    let mut out = Vec::with_capacity(ring.len() + 2);
    for i in 0..ring.len() {
        let p = ring[i];
        let q = ring[(i + 1) % ring.len()];
        let (sp, sq) = (side(&p), side(&q));
        if sp <= 0.0 {
            out.push(p);
        }
        if (sp < 0.0 && sq > 0.0) || (sp > 0.0 && sq < 0.0) {
            out.push(p.lerp(&q, sp / (sp - sq)));
        }
    }
    out
}

fn clean_ring(ring: Vec<Point2>, tol: f64) -> Vec<Point2> {
    let mut out: Vec<Point2> = Vec::with_capacity(ring.len());
    for p in ring {
        if out.last().is_none_or(|q| q.dist(&p) > tol) {
            out.push(p);
        }
    }
    while out.len() > 1 && out[0].dist(out.last().unwrap()) <= tol {
        out.pop();
    }
    out
}

/// Voronoi cells of `seeds` intersected with the convex polygon `region`.
/// Returns one ring per seed (possibly empty for seeds outside the region).
pub fn voronoi_cells(region: &Polygon, seeds: &[Point2]) -> Vec<Vec<Point2>> {
    let tol = 1e-12 * region.bbox().diagonal();
    seeds
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let mut ring = region.outer().to_vec();
            for (j, t) in seeds.iter().enumerate() {
                if i == j || ring.is_empty() {
                    continue;
                }
                let mid = s.midpoint(t);
                ring = clip_half_plane(&ring, &mid, (t.x - s.x, t.y - s.y));
            }
            clean_ring(ring, tol)
        })
        .collect()
}

fn ring_centroid(ring: &[Point2]) -> Point2 {
    let (mut a, mut cx, mut cy) = (0.0, 0.0, 0.0);
    for i in 0..ring.len() {
        let (p, q) = (ring[i], ring[(i + 1) % ring.len()]);
        let c = p.x * q.y - q.x * p.y;
        a += c;
        cx += (p.x + q.x) * c;
        cy += (p.y + q.y) * c;
    }
    Point2::new(cx / (3.0 * a), cy / (3.0 * a))
}

/// Splits a convex `region` into `n` areas by a Voronoi tessellation of random
/// seeds relaxed with `lloyd_iters` Lloyd steps. Area ids are `area_01`, ...
pub fn voronoi_partition(
    region: &Polygon,
    n: usize,
    lloyd_iters: usize,
    seed: u64,
) -> Result<Vec<Polygon>> {
    if n == 0 {
        return Err(Error::InvalidInput(
            "partition needs at least one area".into(),
        ));
    }
    if region.rings().len() != 1 {
        return Err(Error::InvalidGeometry(
            "partition region must have no holes".into(),
        ));
    }
    let outer = region.outer();
    let k = outer.len();
    if (0..k).any(|i| super::orient(&outer[i], &outer[(i + 1) % k], &outer[(i + 2) % k]) < 0.0) {
        return Err(Error::InvalidGeometry(
            "partition region must be convex".into(),
        ));
    }
    let bb = region.bbox();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut seeds = Vec::with_capacity(n);
    while seeds.len() < n {
        let p = Point2::new(
            rng.random_range(bb.min.x..bb.max.x),
            rng.random_range(bb.min.y..bb.max.y),
        );
        if region.contains(&p) {
            seeds.push(p);
        }
    }
    for _ in 0..lloyd_iters {
        seeds = voronoi_cells(region, &seeds)
            .iter()
            .zip(&seeds)
            .map(|(c, s)| if c.len() >= 3 { ring_centroid(c) } else { *s })
            .collect();
    }
    let width = n.to_string().len().max(2);
    voronoi_cells(region, &seeds)
        .into_iter()
        .enumerate()
        .map(|(i, ring)| Polygon::new(format!("area_{:0width$}", i + 1), vec![ring]))
        .collect()
}

/// The synthetic 47-area map of the demo country.
pub fn demo_areas(seed: u64) -> Result<Vec<Polygon>> {
    voronoi_partition(&demo_country(), 47, 8, seed)
}
