//! Two-zone triangular meshes: fine triangles over the study region, coarse
//! triangles in a surrounding extension zone that pushes the boundary effects of
//! the SPDE away from the region of interest.

use std::collections::{HashMap, HashSet};

use spade::{DelaunayTriangulation, HasPosition, Triangulation};

use super::{orient, BBox, Point2, Polygon};
use crate::error::{Error, Result};

/// Tolerance under which two vertices are considered duplicates.
pub const DUPLICATE_TOL: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MeshOptions {
    pub interior_max_edge: f64,
    /// Outer box half-width beyond the polygon's bounding box is
    /// `(extension_factor - 1) × diagonal`.
    pub extension_factor: f64,
    pub exterior_max_edge: f64,
    pub min_angle_deg: f64,
    /// Growth of the target edge length per unit distance outside the polygon.
    pub grading: f64,
    pub max_vertices: usize,
}

impl MeshOptions {
    pub fn new(interior_max_edge: f64, extension_factor: f64, exterior_max_edge: f64) -> Self {
        Self {
            interior_max_edge,
            extension_factor,
            exterior_max_edge,
            min_angle_deg: 20.0,
            grading: 0.5,
            max_vertices: 2_000_000,
        }
    }

    fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidInput(msg));
        if !(self.interior_max_edge > 0.0) || !self.interior_max_edge.is_finite() {
            return bad(format!(
                "interior_max_edge must be > 0, got {}",
                self.interior_max_edge
            ));
        }
        if !(self.extension_factor >= 1.0) || !self.extension_factor.is_finite() {
            return bad(format!(
                "extension_factor must be >= 1, got {}",
                self.extension_factor
            ));
        }
        if !(self.exterior_max_edge >= self.interior_max_edge)
            || !self.exterior_max_edge.is_finite()
        {
            return bad(format!(
                "exterior_max_edge ({}) must be >= interior_max_edge ({})",
                self.exterior_max_edge, self.interior_max_edge
            ));
        }
        if !(self.min_angle_deg > 0.0 && self.min_angle_deg <= 30.0) {
            return bad(format!(
                "min_angle_deg must lie in (0, 30], got {}",
                self.min_angle_deg
            ));
        }
        Ok(())
    }
}

/// Planar triangulation carrying piecewise-linear basis functions, one per vertex.
#[derive(Clone, Debug, PartialEq)]
pub struct TriMesh {
    vertices: Vec<Point2>,
    triangles: Vec<[usize; 3]>,
    interior: Vec<bool>,
}

impl TriMesh {
    /// Validates and wraps a triangulation. Clockwise triangles are reoriented.
    pub fn new(
        vertices: Vec<Point2>,
        mut triangles: Vec<[usize; 3]>,
        interior: Vec<bool>,
    ) -> Result<Self> {
        let n = vertices.len();
        if interior.len() != n {
            return Err(Error::InvalidGeometry(format!(
                "interior flags ({}) do not match vertex count ({n})",
                interior.len()
            )));
        }
        if triangles.is_empty() {
            return Err(Error::InvalidGeometry("mesh has no triangles".into()));
        }
        if let Some(i) = vertices.iter().position(|p| !p.is_finite()) {
            return Err(Error::InvalidGeometry(format!("vertex {i} is not finite")));
        }
        let scale = BBox::from_points(&vertices).map_or(1.0, |b| b.diagonal().max(1e-300));
        for (t, tri) in triangles.iter_mut().enumerate() {
            if tri.iter().any(|&v| v >= n)
                || tri[0] == tri[1]
                || tri[1] == tri[2]
                || tri[0] == tri[2]
            {
                return Err(Error::InvalidGeometry(format!(
                    "triangle {t} has invalid vertex indices {tri:?}"
                )));
            }
            let o = orient(&vertices[tri[0]], &vertices[tri[1]], &vertices[tri[2]]);
            if o.abs() <= 1e-14 * scale * scale {
                return Err(Error::InvalidGeometry(format!(
                    "triangle {t} is degenerate"
                )));
            }
            if o < 0.0 {
                tri.swap(1, 2);
            }
        }
        let mesh = Self {
            vertices,
            triangles,
            interior,
        };
        mesh.check_topology()?;
        Ok(mesh)
    }

    fn check_topology(&self) -> Result<()> {
        let n = self.vertices.len();
        let mut edge_count: HashMap<(usize, usize), u8> = HashMap::new();
        for tri in &self.triangles {
            for k in 0..3 {
                let (a, b) = (tri[k], tri[(k + 1) % 3]);
                let c = edge_count.entry((a.min(b), a.max(b))).or_insert(0);
                *c += 1;
                if *c > 2 {
                    return Err(Error::InvalidGeometry(format!(
                        "edge ({a}, {b}) shared by more than two triangles"
                    )));
                }
            }
        }

        // Duplicate vertices: sort by x and compare within the tolerance window.
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| self.vertices[a].x.total_cmp(&self.vertices[b].x));
        for (k, &a) in order.iter().enumerate() {
            for &b in &order[k + 1..] {
                if self.vertices[b].x - self.vertices[a].x > DUPLICATE_TOL {
                    break;
                }
                if self.vertices[a].dist(&self.vertices[b]) <= DUPLICATE_TOL {
                    return Err(Error::InvalidGeometry(format!(
                        "vertices {a} and {b} coincide"
                    )));
                }
            }
        }

        // Single connected component over vertices referenced by triangles.
        let mut parent: Vec<usize> = (0..n).collect();
        fn find(p: &mut [usize], mut x: usize) -> usize {
            while p[x] != x {
                p[x] = p[p[x]];
                x = p[x];
            }
            x
        }
        let mut used = vec![false; n];
        for tri in &self.triangles {
            for &v in tri {
                used[v] = true;
            }
            let r0 = find(&mut parent, tri[0]);
            for &v in &tri[1..] {
                let r = find(&mut parent, v);
                parent[r] = r0;
            }
        }
        if let Some(v) = used.iter().position(|u| !u) {
            return Err(Error::InvalidGeometry(format!(
                "vertex {v} is not used by any triangle"
            )));
        }
        let root = find(&mut parent, 0);
        if (0..n).any(|v| find(&mut parent, v) != root) {
            return Err(Error::InvalidGeometry(
                "mesh has more than one connected component".into(),
            ));
        }
        Ok(())
    }

    pub fn num_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn num_triangles(&self) -> usize {
        self.triangles.len()
    }

    pub fn vertices(&self) -> &[Point2] {
        &self.vertices
    }

    pub fn triangles(&self) -> &[[usize; 3]] {
        &self.triangles
    }

    pub fn interior_flags(&self) -> &[bool] {
        &self.interior
    }

    pub fn is_interior(&self, v: usize) -> bool {
        self.interior[v]
    }

    pub fn triangle_points(&self, t: usize) -> [Point2; 3] {
        self.triangles[t].map(|v| self.vertices[v])
    }

    pub fn triangle_area(&self, t: usize) -> f64 {
        let [a, b, c] = self.triangle_points(t);
        0.5 * orient(&a, &b, &c)
    }

    pub fn area(&self) -> f64 {
        (0..self.triangles.len())
            .map(|t| self.triangle_area(t))
            .sum()
    }

    pub fn bbox(&self) -> BBox {
        BBox::from_points(&self.vertices).expect("mesh has vertices")
    }

    /// Unique undirected edges `(a, b)` with `a < b`, sorted.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut set: HashSet<(usize, usize)> = HashSet::new();
        for tri in &self.triangles {
            for k in 0..3 {
                let (a, b) = (tri[k], tri[(k + 1) % 3]);
                set.insert((a.min(b), a.max(b)));
            }
        }
        let mut edges: Vec<_> = set.into_iter().collect();
        edges.sort_unstable();
        edges
    }

    /// Smallest interior angle of triangle `t`, in degrees.
    pub fn min_angle_deg(&self, t: usize) -> f64 {
        let p = self.triangle_points(t);
        triangle_min_angle(&p).to_degrees()
    }

    pub fn max_edge(&self, t: usize) -> f64 {
        let p = self.triangle_points(t);
        p[0].dist(&p[1]).max(p[1].dist(&p[2])).max(p[2].dist(&p[0]))
    }

    /// Triangles touching at least one interior vertex.
    pub fn interior_triangles(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.triangles.len()).filter(|&t| self.triangles[t].iter().any(|&v| self.interior[v]))
    }
}

pub(crate) fn triangle_min_angle(p: &[Point2; 3]) -> f64 {
    let a = p[1].dist(&p[2]);
    let b = p[2].dist(&p[0]);
    let c = p[0].dist(&p[1]);
    let angle = |opp: f64, s1: f64, s2: f64| {
        ((s1 * s1 + s2 * s2 - opp * opp) / (2.0 * s1 * s2))
            .clamp(-1.0, 1.0)
            .acos()
    };
    angle(a, b, c).min(angle(b, c, a)).min(angle(c, a, b))
}

fn circumcenter(p: &[Point2; 3]) -> (Point2, f64) {
    let (ax, ay) = (p[0].x, p[0].y);
    let (bx, by) = (p[1].x - ax, p[1].y - ay);
    let (cx, cy) = (p[2].x - ax, p[2].y - ay);
    let d = 2.0 * (bx * cy - by * cx);
    let b2 = bx * bx + by * by;
    let c2 = cx * cx + cy * cy;
    let ux = (cy * b2 - by * c2) / d;
    let uy = (bx * c2 - cx * b2) / d;
    (Point2::new(ax + ux, ay + uy), ux.hypot(uy))
}

#[derive(Clone, Copy, Debug)]
struct Vertex(Point2);

impl HasPosition for Vertex {
    type Scalar = f64;
    fn position(&self) -> spade::Point2<f64> {
        spade::Point2::new(self.0.x, self.0.y)
    }
}

/// Local target edge length: the interior size inside the polygon, growing
/// linearly with distance outside it up to the exterior size.
struct SizeField<'a> {
    polygon: &'a Polygon,
    opts: &'a MeshOptions,
}

impl SizeField<'_> {
    fn at(&self, p: &Point2) -> f64 {
        let d = self.polygon.distance(p);
        (self.opts.interior_max_edge + self.opts.grading * d).min(self.opts.exterior_max_edge)
    }
}

/// Builds a conforming two-zone mesh over `boundary` plus an extension ring.
///
/// Seeds are a triangular lattice inside the polygon, the polygon boundary
/// resampled at the interior edge length, and the outer box boundary. Delaunay
/// refinement then inserts circumcenters of triangles that are too large for the
/// local size target or have an angle below the minimum, splitting outer-box
/// segments instead whenever a circumcenter would encroach on them.
pub fn build_mesh(
    boundary: &Polygon,
    interior_max_edge: f64,
    extension_factor: f64,
    exterior_max_edge: f64,
) -> Result<TriMesh> {
    build_mesh_with(
        boundary,
        &MeshOptions::new(interior_max_edge, extension_factor, exterior_max_edge),
    )
}

pub fn build_mesh_with(boundary: &Polygon, opts: &MeshOptions) -> Result<TriMesh> {
    opts.validate()?;
    if !(boundary.area() > 0.0) {
        return Err(Error::InvalidGeometry(format!(
            "boundary {} has zero area",
            boundary.id()
        )));
    }
    let h = opts.interior_max_edge;
    let bb = boundary.bbox();
    let width = (opts.extension_factor - 1.0) * bb.diagonal();
    let outer = bb.expanded(width);

    let mut seeds: Vec<Point2> = Vec::new();
    let mut segments: Vec<(Point2, Point2)> = Vec::new();

    // Outer box, split to the exterior edge length.
    let corners = [
        outer.min,
        Point2::new(outer.max.x, outer.min.y),
        outer.max,
        Point2::new(outer.min.x, outer.max.y),
    ];
    for k in 0..4 {
        let (a, b) = (corners[k], corners[(k + 1) % 4]);
        let pieces = (a.dist(&b) / opts.exterior_max_edge).ceil().max(1.0) as usize;
        for s in 0..pieces {
            let p = a.lerp(&b, s as f64 / pieces as f64);
            let q = a.lerp(&b, (s + 1) as f64 / pieces as f64);
            seeds.push(p);
            segments.push((p, q));
        }
    }

    // Polygon boundary resampled at the interior edge length.
    for (a, b) in boundary.edges() {
        let pieces = (a.dist(&b) / h).ceil().max(1.0) as usize;
        for s in 0..pieces {
            seeds.push(a.lerp(&b, s as f64 / pieces as f64));
        }
    }

    // Interior triangular lattice, kept away from the boundary samples.
    let spacing = 0.95 * h;
    let row_h = spacing * 3f64.sqrt() / 2.0;
    let rows = (bb.height() / row_h).floor() as usize + 1;
    let cols = (bb.width() / spacing).floor() as usize + 2;
    for r in 0..=rows {
        let y = bb.min.y + r as f64 * row_h;
        let shift = if r % 2 == 1 { 0.5 * spacing } else { 0.0 };
        for c in 0..=cols {
            let p = Point2::new(bb.min.x + shift + c as f64 * spacing, y);
            if boundary.contains(&p) && boundary.boundary_distance(&p) > 0.5 * spacing {
                seeds.push(p);
            }
        }
    }

    dedup_points(&mut seeds);
    let vertices: Vec<Vertex> = seeds.iter().map(|&p| Vertex(p)).collect();
    let mut tri: DelaunayTriangulation<Vertex> = DelaunayTriangulation::bulk_load_stable(vertices)
        .map_err(|e| Error::InvalidGeometry(format!("triangulation failed: {e:?}")))?;

    let size = SizeField {
        polygon: boundary,
        opts,
    };
    refine(&mut tri, &mut segments, &size, opts, &outer)?;

    let verts: Vec<Point2> = tri.vertices().map(|v| v.data().0).collect();
    let mut triangles = Vec::with_capacity(tri.num_inner_faces());
    for face in tri.inner_faces() {
        let vs = face.vertices();
        let mut t = [
            vs[0].fix().index(),
            vs[1].fix().index(),
            vs[2].fix().index(),
        ];
        if orient(&verts[t[0]], &verts[t[1]], &verts[t[2]]) < 0.0 {
            t.swap(1, 2);
        }
        triangles.push(t);
    }
    let interior = verts.iter().map(|p| boundary.contains(p)).collect();
    TriMesh::new(verts, triangles, interior)
}

fn dedup_points(points: &mut Vec<Point2>) {
    let mut order: Vec<usize> = (0..points.len()).collect();
    order.sort_by(|&a, &b| points[a].x.total_cmp(&points[b].x));
    let mut drop = vec![false; points.len()];
    for (k, &a) in order.iter().enumerate() {
        if drop[a] {
            continue;
        }
        for &b in &order[k + 1..] {
            if points[b].x - points[a].x > DUPLICATE_TOL {
                break;
            }
            if !drop[b] && points[a].dist(&points[b]) <= DUPLICATE_TOL {
                drop[b] = true;
            }
        }
    }
    let mut i = 0;
    points.retain(|_| {
        let keep = !drop[i];
        i += 1;
        keep
    });
}

fn refine(
    tri: &mut DelaunayTriangulation<Vertex>,
    segments: &mut Vec<(Point2, Point2)>,
    size: &SizeField<'_>,
    opts: &MeshOptions,
    outer: &BBox,
) -> Result<()> {
    let min_angle = opts.min_angle_deg.to_radians();
    let tiny = 1e-6 * opts.interior_max_edge;
    let mut pass = 0;
    loop {
        pass += 1;
        // (priority, circumcenter, circumradius)
        let mut bad: Vec<(f64, Point2, f64)> = Vec::new();
        for face in tri.inner_faces() {
            let p = face.vertices().map(|v| v.data().0);
            let edges = [p[0].dist(&p[1]), p[1].dist(&p[2]), p[2].dist(&p[0])];
            let longest = edges.iter().cloned().fold(0.0, f64::max);
            let shortest = edges.iter().cloned().fold(f64::INFINITY, f64::min);
            let centroid = Point2::new(
                (p[0].x + p[1].x + p[2].x) / 3.0,
                (p[0].y + p[1].y + p[2].y) / 3.0,
            );
            let target = p
                .iter()
                .chain(std::iter::once(&centroid))
                .map(|q| size.at(q))
                .fold(f64::INFINITY, f64::min);
            let angle = triangle_min_angle(&p);
            let size_ratio = longest / target;
            let angle_bad = angle < min_angle && shortest > tiny;
            if size_ratio > 1.0 + 1e-12 || angle_bad {
                let (cc, r) = circumcenter(&p);
                let priority = size_ratio.max(if angle_bad { min_angle / angle } else { 0.0 });
                bad.push((priority, cc, r));
            }
        }
        if bad.is_empty() {
            return Ok(());
        }
        if tri.num_vertices() > opts.max_vertices || pass > 500 {
            let worst = bad.iter().map(|b| b.0).fold(0.0, f64::max);
            return Err(Error::RefinementFailure(format!(
                "{} triangles still violate the size/angle criteria after {pass} passes \
                 ({} vertices, worst violation ratio {worst:.3})",
                bad.len(),
                tri.num_vertices()
            )));
        }
        bad.sort_by(|a, b| {
            b.0.total_cmp(&a.0)
                .then(a.1.x.total_cmp(&b.1.x))
                .then(a.1.y.total_cmp(&b.1.y))
        });

        let mut inserted = 0usize;
        for (_, cc, r) in bad {
            let encroached = segments.iter().position(|(a, b)| {
                let mid = a.midpoint(b);
                cc.dist(&mid) < 0.5 * a.dist(b) * (1.0 - 1e-12)
            });
            let target = if let Some(k) = encroached {
                Some(split_segment(segments, k))
            } else if !outer.contains(&cc) {
                // Fall back on the nearest outer segment.
                let k = (0..segments.len())
                    .min_by(|&i, &j| {
                        let di = super::segment_distance(&cc, &segments[i].0, &segments[i].1);
                        let dj = super::segment_distance(&cc, &segments[j].0, &segments[j].1);
                        di.total_cmp(&dj)
                    })
                    .expect("outer box has segments");
                Some(split_segment(segments, k))
            } else {
                let near = tri
                    .nearest_neighbor(spade::Point2::new(cc.x, cc.y))
                    .map(|v| v.data().0.dist(&cc))
                    .unwrap_or(f64::INFINITY);
                (near >= 0.5 * r).then_some(cc)
            };
            if let Some(p) = target {
                tri.insert(Vertex(p))
                    .map_err(|e| Error::RefinementFailure(format!("insertion failed: {e:?}")))?;
                inserted += 1;
            }
        }
        if inserted == 0 {
            return Err(Error::RefinementFailure(format!(
                "refinement stalled after {pass} passes with {} vertices",
                tri.num_vertices()
            )));
        }
    }
}

fn split_segment(segments: &mut Vec<(Point2, Point2)>, k: usize) -> Point2 {
    let (a, b) = segments[k];
    let mid = a.midpoint(&b);
    segments[k] = (a, mid);
    segments.push((mid, b));
    mid
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_square() -> Polygon {
        Polygon::rectangle("sq", Point2::new(0.0, 0.0), Point2::new(1.0, 1.0)).unwrap()
    }

    #[test]
    fn unit_square_mesh_meets_quality_constraints() {
        let mesh = build_mesh(&unit_square(), 0.1, 1.5, 0.5).unwrap();
        for t in 0..mesh.num_triangles() {
            assert!(
                mesh.min_angle_deg(t) >= 20.0 - 1e-9,
                "angle {}",
                mesh.min_angle_deg(t)
            );
            assert!(mesh.triangle_area(t) > 0.0);
        }
        for t in mesh.interior_triangles() {
            assert!(mesh.max_edge(t) <= 0.1 + 1e-12, "edge {}", mesh.max_edge(t));
        }
        let bb = mesh.bbox();
        let width = 0.5 * 2f64.sqrt();
        assert!((bb.min.x + width).abs() < 1e-12 && (bb.max.y - 1.0 - width).abs() < 1e-12);
        assert!((mesh.area() - bb.area()).abs() < 1e-9 * bb.area());
    }

    #[test]
    fn exterior_triangles_are_coarser() {
        let mesh = build_mesh(&unit_square(), 0.05, 2.0, 0.8).unwrap();
        let interior: Vec<f64> = mesh
            .interior_triangles()
            .map(|t| mesh.max_edge(t))
            .collect();
        let far: Vec<f64> = (0..mesh.num_triangles())
            .filter(|&t| {
                mesh.triangle_points(t)
                    .iter()
                    .all(|p| unit_square().distance(p) > 1.0)
            })
            .map(|t| mesh.max_edge(t))
            .collect();
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        assert!(!far.is_empty());
        assert!(mean(&far) > 4.0 * mean(&interior));
    }

    #[test]
    fn degenerate_inputs_are_rejected() {
        assert!(matches!(
            build_mesh(&unit_square(), 0.0, 1.5, 1.0),
            Err(Error::InvalidInput(_))
        ));
        assert!(matches!(
            build_mesh(&unit_square(), 0.2, 0.5, 1.0),
            Err(Error::InvalidInput(_))
        ));
        assert!(matches!(
            build_mesh(&unit_square(), 0.2, 1.5, 0.1),
            Err(Error::InvalidInput(_))
        ));
    }

    #[test]
    fn topology_checks_catch_bad_meshes() {
        let v = vec![
            Point2::new(0.0, 0.0),
            Point2::new(1.0, 0.0),
            Point2::new(0.0, 1.0),
            Point2::new(5.0, 5.0),
            Point2::new(6.0, 5.0),
            Point2::new(5.0, 6.0),
        ];
        let disconnected = TriMesh::new(v.clone(), vec![[0, 1, 2], [3, 4, 5]], vec![false; 6]);
        assert!(disconnected.is_err());
        let cw = TriMesh::new(v[..3].to_vec(), vec![[0, 2, 1]], vec![true; 3]).unwrap();
        assert!(cw.triangle_area(0) > 0.0);
        let dup = TriMesh::new(
            vec![
                Point2::new(0.0, 0.0),
                Point2::new(1.0, 0.0),
                Point2::new(1.0, 1e-12),
            ],
            vec![[0, 1, 2]],
            vec![true; 3],
        );
        assert!(dup.is_err());
    }
}
