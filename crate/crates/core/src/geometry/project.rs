use super::{orient, BBox, Point2, TriMesh};
use crate::sparse::CscMatrix;

/// Uniform-grid bucket index of mesh triangles for point location.
#[derive(Clone, Debug)]
pub struct TriangleLocator {
    bbox: BBox,
    nx: usize,
    ny: usize,
    cell_w: f64,
    cell_h: f64,
    cell_start: Vec<usize>,
    cell_tris: Vec<usize>,
}

impl TriangleLocator {
    pub fn new(mesh: &TriMesh) -> Self {
        let bbox = mesh.bbox();
        let ntri = mesh.num_triangles().max(1);
        let aspect = (bbox.width() / bbox.height().max(1e-300)).clamp(1e-3, 1e3);
        let ny = ((ntri as f64 / aspect).sqrt().ceil() as usize).clamp(1, 4096);
        let nx = ((ntri as f64 * aspect).sqrt().ceil() as usize).clamp(1, 4096);
        let cell_w = bbox.width().max(1e-300) / nx as f64;
        let cell_h = bbox.height().max(1e-300) / ny as f64;

        let mut buckets: Vec<Vec<usize>> = vec![Vec::new(); nx * ny];
        for t in 0..mesh.num_triangles() {
            let p = mesh.triangle_points(t);
            let tb = BBox::from_points(&p).unwrap();
            let (x0, y0) = Self::cell_of(&bbox, cell_w, cell_h, nx, ny, &tb.min);
            let (x1, y1) = Self::cell_of(&bbox, cell_w, cell_h, nx, ny, &tb.max);
            for cy in y0..=y1 {
                for cx in x0..=x1 {
                    buckets[cy * nx + cx].push(t);
                }
            }
        }
        let mut cell_start = Vec::with_capacity(nx * ny + 1);
        let mut cell_tris = Vec::new();
        cell_start.push(0);
        for b in buckets {
            cell_tris.extend(b);
            cell_start.push(cell_tris.len());
        }
        Self {
            bbox,
            nx,
            ny,
            cell_w,
            cell_h,
            cell_start,
            cell_tris,
        }
    }

    fn cell_of(bbox: &BBox, w: f64, h: f64, nx: usize, ny: usize, p: &Point2) -> (usize, usize) {
        let cx = ((p.x - bbox.min.x) / w).floor().clamp(0.0, (nx - 1) as f64) as usize;
        let cy = ((p.y - bbox.min.y) / h).floor().clamp(0.0, (ny - 1) as f64) as usize;
        (cx, cy)
    }

    /// Containing triangle and barycentric weights, or `None` outside the mesh.
    pub fn locate(&self, mesh: &TriMesh, p: &Point2) -> Option<(usize, [f64; 3])> {
        let tol = 1e-12 * self.bbox.diagonal().max(1e-300);
        if p.x < self.bbox.min.x - tol
            || p.x > self.bbox.max.x + tol
            || p.y < self.bbox.min.y - tol
            || p.y > self.bbox.max.y + tol
        {
            return None;
        }
        let (cx, cy) = Self::cell_of(&self.bbox, self.cell_w, self.cell_h, self.nx, self.ny, p);
        let cell = cy * self.nx + cx;
        for &t in &self.cell_tris[self.cell_start[cell]..self.cell_start[cell + 1]] {
            let [a, b, c] = mesh.triangle_points(t);
            let total = orient(&a, &b, &c);
            let mut w = [
                orient(p, &b, &c) / total,
                orient(&a, p, &c) / total,
                orient(&a, &b, p) / total,
            ];
            if w.iter().all(|&x| x >= -1e-12) {
                let mut sum = 0.0;
                for x in w.iter_mut() {
                    if *x < 0.0 {
                        *x = 0.0;
                    }
                    sum += *x;
                }
                if (sum - 1.0).abs() > 1e-15 {
                    w.iter_mut().for_each(|x| *x /= sum);
                }
                return Some((t, w));
            }
        }
        None
    }
}

/// Sparse `points × vertices` interpolation matrix of barycentric weights.
#[derive(Clone, Debug)]
pub struct Projector {
    matrix: CscMatrix,
    outside: Vec<bool>,
}

impl Projector {
    pub fn matrix(&self) -> &CscMatrix {
        &self.matrix
    }

    pub fn num_points(&self) -> usize {
        self.outside.len()
    }

    /// True where the point fell outside the mesh hull (its row is all zero).
    pub fn is_outside(&self, i: usize) -> bool {
        self.outside[i]
    }

    pub fn outside_flags(&self) -> &[bool] {
        &self.outside
    }

    pub fn num_outside(&self) -> usize {
        self.outside.iter().filter(|&&o| o).count()
    }

    /// Interpolates vertex values at the projected points.
    pub fn apply(&self, values: &[f64]) -> Vec<f64> {
        self.matrix.mul_vec(values)
    }

    /// Row `i` as `(vertex, weight)` pairs.
    pub fn row(&self, i: usize) -> Vec<(usize, f64)> {
        // Row access on CSC is only needed for small diagnostics; scan via transpose.
        let t = self.matrix.transpose();
        let (cols, vals) = t.col(i);
        cols.iter().copied().zip(vals.iter().copied()).collect()
    }

    /// Row-compressed view: for each point, its `(vertex, weight)` entries.
    pub fn rows(&self) -> Vec<Vec<(usize, f64)>> {
        let t = self.matrix.transpose();
        (0..self.num_points())
            .map(|i| {
                let (cols, vals) = t.col(i);
                cols.iter().copied().zip(vals.iter().copied()).collect()
            })
            .collect()
    }
}

/// Projects `points` onto the piecewise-linear basis of `mesh`.
pub fn project(mesh: &TriMesh, points: &[Point2]) -> Projector {
    let locator = TriangleLocator::new(mesh);
    project_with(mesh, &locator, points)
}

pub fn project_with(mesh: &TriMesh, locator: &TriangleLocator, points: &[Point2]) -> Projector {
    let mut trip = Vec::with_capacity(3 * points.len());
    let mut outside = vec![false; points.len()];
    for (i, p) in points.iter().enumerate() {
        match locator.locate(mesh, p) {
            Some((t, w)) => {
                for (k, &v) in mesh.triangles()[t].iter().enumerate() {
                    if w[k] > 0.0 {
                        trip.push((i, v, w[k]));
                    }
                }
            }
            None => outside[i] = true,
        }
    }
    Projector {
        matrix: CscMatrix::from_triplets(points.len(), mesh.num_vertices(), &trip),
        outside,
    }
}
