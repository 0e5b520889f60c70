//! Planar geometry: polygons, triangular meshes, finite-element matrices and
//! point-to-mesh projection.

mod fem;
pub mod io;
mod mesh;
pub mod partition;
mod project;

pub use fem::{fem_matrices, FemMatrices};
pub use mesh::{build_mesh, build_mesh_with, MeshOptions, TriMesh};
pub use project::{project, project_with, Projector, TriangleLocator};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Default, Serialize, Deserialize)]
pub struct Point2 {
    pub x: f64,
    pub y: f64,
}

impl Point2 {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }

    pub fn dist(&self, other: &Point2) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    pub fn dist2(&self, other: &Point2) -> f64 {
        let (dx, dy) = (self.x - other.x, self.y - other.y);
        dx * dx + dy * dy
    }

    pub fn midpoint(&self, other: &Point2) -> Point2 {
        Point2::new(0.5 * (self.x + other.x), 0.5 * (self.y + other.y))
    }

    pub fn lerp(&self, other: &Point2, t: f64) -> Point2 {
        Point2::new(
            self.x + t * (other.x - self.x),
            self.y + t * (other.y - self.y),
        )
    }
}

/// Twice the signed area of triangle `(a, b, c)`; positive when counter-clockwise.
pub fn orient(a: &Point2, b: &Point2, c: &Point2) -> f64 {
    (b.x - a.x) * (c.y - a.y) - (b.y - a.y) * (c.x - a.x)
}

/// Distance from `p` to the segment `[a, b]`.
pub fn segment_distance(p: &Point2, a: &Point2, b: &Point2) -> f64 {
    let (dx, dy) = (b.x - a.x, b.y - a.y);
    let len2 = dx * dx + dy * dy;
    if len2 == 0.0 {
        return p.dist(a);
    }
    let t = (((p.x - a.x) * dx + (p.y - a.y) * dy) / len2).clamp(0.0, 1.0);
    p.dist(&Point2::new(a.x + t * dx, a.y + t * dy))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BBox {
    pub min: Point2,
    pub max: Point2,
}

impl BBox {
    pub fn from_points<'a>(points: impl IntoIterator<Item = &'a Point2>) -> Option<Self> {
        let mut it = points.into_iter();
        let first = *it.next()?;
        let mut b = BBox {
            min: first,
            max: first,
        };
        for p in it {
            b.min.x = b.min.x.min(p.x);
            b.min.y = b.min.y.min(p.y);
            b.max.x = b.max.x.max(p.x);
            b.max.y = b.max.y.max(p.y);
        }
        Some(b)
    }

    pub fn width(&self) -> f64 {
        self.max.x - self.min.x
    }

    pub fn height(&self) -> f64 {
        self.max.y - self.min.y
    }

    pub fn diagonal(&self) -> f64 {
        self.width().hypot(self.height())
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn expanded(&self, margin: f64) -> BBox {
        BBox {
            min: Point2::new(self.min.x - margin, self.min.y - margin),
            max: Point2::new(self.max.x + margin, self.max.y + margin),
        }
    }

    pub fn contains(&self, p: &Point2) -> bool {
        p.x >= self.min.x && p.x <= self.max.x && p.y >= self.min.y && p.y <= self.max.y
    }
}

/// Polygon with one outer ring and optional holes. Rings are stored open (the
/// closing vertex is implicit); the outer ring is counter-clockwise and holes are
/// clockwise.
#[derive(Clone, Debug, PartialEq)]
pub struct Polygon {
    id: String,
    rings: Vec<Vec<Point2>>,
}

impl Polygon {
    /// Normalizes ring closure and orientation and validates the polygon.
    pub fn new(id: impl Into<String>, rings: Vec<Vec<Point2>>) -> Result<Self> {
        let id = id.into();
        if rings.is_empty() {
            return Err(Error::InvalidGeometry(format!("polygon {id}: no rings")));
        }
        let mut out = Vec::with_capacity(rings.len());
        for (r, mut ring) in rings.into_iter().enumerate() {
            if ring.len() > 1 && ring.first() == ring.last() {
                ring.pop();
            }
            ring.dedup();
            if ring.iter().any(|p| !p.is_finite()) {
                return Err(Error::InvalidGeometry(format!(
                    "polygon {id}: non-finite vertex in ring {r}"
                )));
            }
            if ring.len() < 3 {
                return Err(Error::InvalidGeometry(format!(
                    "polygon {id}: ring {r} has fewer than 3 vertices"
                )));
            }
            let a = ring_signed_area(&ring);
            if a == 0.0 || !a.is_finite() {
                return Err(Error::InvalidGeometry(format!(
                    "polygon {id}: ring {r} has zero area"
                )));
            }
            let want_ccw = r == 0;
            if (a > 0.0) != want_ccw {
                ring.reverse();
            }
            out.push(ring);
        }
        let poly = Self { id, rings: out };
        if poly.area() <= 0.0 {
            return Err(Error::InvalidGeometry(format!(
                "polygon {}: non-positive area",
                poly.id
            )));
        }
        if let Some((a, b)) = poly.find_self_intersection() {
            return Err(Error::InvalidGeometry(format!(
                "polygon {}: edges {a} and {b} intersect",
                poly.id
            )));
        }
        Ok(poly)
    }

    /// Axis-aligned rectangle, counter-clockwise from the lower-left corner.
    pub fn rectangle(id: impl Into<String>, min: Point2, max: Point2) -> Result<Self> {
        Self::new(
            id,
            vec![vec![
                min,
                Point2::new(max.x, min.y),
                max,
                Point2::new(min.x, max.y),
            ]],
        )
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn rings(&self) -> &[Vec<Point2>] {
        &self.rings
    }

    pub fn outer(&self) -> &[Point2] {
        &self.rings[0]
    }

    pub fn edges(&self) -> impl Iterator<Item = (Point2, Point2)> + '_ {
        self.rings.iter().flat_map(|ring| {
            let n = ring.len();
            (0..n).map(move |i| (ring[i], ring[(i + 1) % n]))
        })
    }

    pub fn area(&self) -> f64 {
        self.rings.iter().map(|r| ring_signed_area(r)).sum()
    }

    pub fn bbox(&self) -> BBox {
        BBox::from_points(self.outer()).expect("validated ring is nonempty")
    }

    pub fn centroid(&self) -> Point2 {
        let (mut cx, mut cy, mut a) = (0.0, 0.0, 0.0);
        for ring in &self.rings {
            let n = ring.len();
            for i in 0..n {
                let (p, q) = (ring[i], ring[(i + 1) % n]);
                let cross = p.x * q.y - q.x * p.y;
                cx += (p.x + q.x) * cross;
                cy += (p.y + q.y) * cross;
                a += cross;
            }
        }
        Point2::new(cx / (3.0 * a), cy / (3.0 * a))
    }

    /// Even-odd containment; points on the boundary count as inside.
    pub fn contains(&self, p: &Point2) -> bool {
        let scale = self.bbox().diagonal().max(1.0);
        if self.boundary_distance(p) <= 1e-12 * scale {
            return true;
        }
        let mut inside = false;
        for (a, b) in self.edges() {
            if (a.y > p.y) != (b.y > p.y) {
                let x = a.x + (p.y - a.y) / (b.y - a.y) * (b.x - a.x);
                if p.x < x {
                    inside = !inside;
                }
            }
        }
        inside
    }

    pub fn boundary_distance(&self, p: &Point2) -> f64 {
        self.edges()
            .map(|(a, b)| segment_distance(p, &a, &b))
            .fold(f64::INFINITY, f64::min)
    }

    /// Distance to the polygon: zero inside, distance to the boundary outside.
    pub fn distance(&self, p: &Point2) -> f64 {
        if self.contains(p) {
            0.0
        } else {
            self.boundary_distance(p)
        }
    }

    fn find_self_intersection(&self) -> Option<(usize, usize)> {
        // (ring, index within ring, ring length, start, end)
        let edges: Vec<(usize, usize, usize, Point2, Point2)> = self
            .rings
            .iter()
            .enumerate()
            .flat_map(|(r, ring)| {
                let n = ring.len();
                (0..n).map(move |i| (r, i, n, ring[i], ring[(i + 1) % n]))
            })
            .collect();
        for (a, ea) in edges.iter().enumerate() {
            for (b, eb) in edges.iter().enumerate().skip(a + 1) {
                if ea.0 == eb.0 {
                    let n = ea.2;
                    if (ea.1 + 1) % n == eb.1 || (eb.1 + 1) % n == ea.1 {
                        continue;
                    }
                }
                if segments_intersect(&ea.3, &ea.4, &eb.3, &eb.4) {
                    return Some((a, b));
                }
            }
        }
        None
    }
}

fn ring_signed_area(ring: &[Point2]) -> f64 {
    let n = ring.len();
    0.5 * (0..n)
        .map(|i| {
            let (p, q) = (ring[i], ring[(i + 1) % n]);
            p.x * q.y - q.x * p.y
        })
        .sum::<f64>()
}

fn segments_intersect(a: &Point2, b: &Point2, c: &Point2, d: &Point2) -> bool {
    let d1 = orient(c, d, a);
    let d2 = orient(c, d, b);
    let d3 = orient(a, b, c);
    let d4 = orient(a, b, d);
    if ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0))
        && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0))
    {
        return true;
    }
    let on = |p: &Point2, q: &Point2, r: &Point2, o: f64| {
        o == 0.0
            && r.x >= p.x.min(q.x)
            && r.x <= p.x.max(q.x)
            && r.y >= p.y.min(q.y)
            && r.y <= p.y.max(q.y)
    };
    on(c, d, a, d1) || on(c, d, b, d2) || on(a, b, c, d3) || on(a, b, d, d4)
}

/// Even-odd containment test with boundary points counted as inside.
pub fn point_in_area(point: &Point2, polygon: &Polygon) -> bool {
    polygon.contains(point)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn square_with_hole() -> Polygon {
        Polygon::new(
            "h",
            vec![
                vec![
                    Point2::new(0.0, 0.0),
                    Point2::new(4.0, 0.0),
                    Point2::new(4.0, 4.0),
                    Point2::new(0.0, 4.0),
                ],
                vec![
                    Point2::new(1.0, 1.0),
                    Point2::new(3.0, 1.0),
                    Point2::new(3.0, 3.0),
                    Point2::new(1.0, 3.0),
                ],
            ],
        )
        .unwrap()
    }

    #[test]
    fn orientation_is_normalized() {
        let p = square_with_hole();
        assert!(ring_signed_area(&p.rings()[0]) > 0.0);
        assert!(ring_signed_area(&p.rings()[1]) < 0.0);
        assert!((p.area() - 12.0).abs() < 1e-12);
    }

    #[test]
    fn containment_with_hole_and_boundary() {
        let p = square_with_hole();
        assert!(point_in_area(&Point2::new(0.5, 0.5), &p));
        assert!(!point_in_area(&Point2::new(2.0, 2.0), &p));
        assert!(point_in_area(&Point2::new(4.0, 2.0), &p));
        assert!(point_in_area(&Point2::new(1.0, 2.0), &p));
        assert!(!point_in_area(&Point2::new(5.0, 2.0), &p));
    }

    #[test]
    fn centroid_of_convex_polygon_is_inside() {
        let tri = Polygon::new(
            "t",
            vec![vec![
                Point2::new(0.0, 0.0),
                Point2::new(3.0, 0.5),
                Point2::new(1.0, 2.0),
            ]],
        )
        .unwrap();
        let c = tri.centroid();
        assert!((c.x - 4.0 / 3.0).abs() < 1e-12 && (c.y - 2.5 / 3.0).abs() < 1e-12);
        assert!(point_in_area(&c, &tri));
    }

    #[test]
    fn monte_carlo_acceptance_matches_area_ratio() {
        // Unit square inside the box [-0.5, 1.5]²: acceptance 1/4.
        let sq = Polygon::rectangle("s", Point2::new(0.0, 0.0), Point2::new(1.0, 1.0)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 10_000;
        let hits = (0..n)
            .filter(|_| {
                let p = Point2::new(rng.random_range(-0.5..1.5), rng.random_range(-0.5..1.5));
                point_in_area(&p, &sq)
            })
            .count();
        let frac = hits as f64 / n as f64;
        let se = (0.25f64 * 0.75 / n as f64).sqrt();
        assert!((frac - 0.25).abs() < 3.0 * se, "frac = {frac}");
    }

    #[test]
    fn degenerate_and_self_intersecting_rings_are_rejected() {
        let flat = Polygon::new(
            "f",
            vec![vec![
                Point2::new(0.0, 0.0),
                Point2::new(1.0, 0.0),
                Point2::new(2.0, 0.0),
            ]],
        );
        assert!(matches!(flat, Err(Error::InvalidGeometry(_))));
        let bowtie = Polygon::new(
            "b",
            vec![vec![
                Point2::new(0.0, 0.0),
                Point2::new(2.0, 2.0),
                Point2::new(2.0, 0.0),
                Point2::new(0.0, 2.0),
            ]],
        );
        assert!(matches!(bowtie, Err(Error::InvalidGeometry(_))));
    }
}
