use super::TriMesh;
use crate::sparse::SparseSym;

/// Lumped mass matrix `C` (diagonal) and stiffness matrix `G` of the
/// piecewise-linear basis on a mesh.
#[derive(Clone, Debug)]
pub struct FemMatrices {
    pub c: SparseSym,
    pub g: SparseSym,
}

impl FemMatrices {
    pub fn c_diag(&self) -> Vec<f64> {
        self.c.diagonal()
    }
}

/// `C_ii = ∫ φ_i` (one third of the adjacent triangle area) and
/// `G_ij = ∫ ∇φ_i · ∇φ_j`.
pub fn fem_matrices(mesh: &TriMesh) -> FemMatrices {
    let n = mesh.num_vertices();
    let mut c = vec![0.0; n];
    let mut trip = Vec::with_capacity(6 * mesh.num_triangles());
    for (t, tri) in mesh.triangles().iter().enumerate() {
        let p = mesh.triangle_points(t);
        let area = mesh.triangle_area(t);
        // Edge opposite vertex k.
        let e: [(f64, f64); 3] = std::array::from_fn(|k| {
            let (a, b) = (p[(k + 1) % 3], p[(k + 2) % 3]);
            (b.x - a.x, b.y - a.y)
        });
        for i in 0..3 {
            c[tri[i]] += area / 3.0;
            for j in 0..=i {
                let v = (e[i].0 * e[j].0 + e[i].1 * e[j].1) / (4.0 * area);
                let (a, b) = (tri[i].max(tri[j]), tri[i].min(tri[j]));
                trip.push((a, b, v));
            }
        }
    }
    FemMatrices {
        c: SparseSym::from_diagonal(&c),
        g: SparseSym::from_lower_triplets(n, &trip),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{build_mesh, Point2, Polygon};

    fn right_triangle() -> TriMesh {
        TriMesh::new(
            vec![
                Point2::new(0.0, 0.0),
                Point2::new(1.0, 0.0),
                Point2::new(0.0, 1.0),
            ],
            vec![[0, 1, 2]],
            vec![true; 3],
        )
        .unwrap()
    }

    #[test]
    fn single_triangle_hat_integrals() {
        let fem = fem_matrices(&right_triangle());
        for d in fem.c_diag() {
            assert!((d - 1.0 / 6.0).abs() < 1e-15);
        }
        // Analytic stiffness of the reference triangle.
        let want = [[1.0, -0.5, -0.5], [-0.5, 0.5, 0.0], [-0.5, 0.0, 0.5]];
        for (i, row) in want.iter().enumerate() {
            for (j, &w) in row.iter().enumerate() {
                assert!((fem.g.get(i, j) - w).abs() < 1e-15, "G[{i},{j}]");
            }
        }
    }

    #[test]
    fn mass_conservation_and_stiffness_null_space() {
        let poly = Polygon::new(
            "p",
            vec![vec![
                Point2::new(0.0, 0.0),
                Point2::new(3.0, 0.2),
                Point2::new(2.5, 2.0),
                Point2::new(0.4, 1.6),
            ]],
        )
        .unwrap();
        let mesh = build_mesh(&poly, 0.3, 1.3, 1.0).unwrap();
        let fem = fem_matrices(&mesh);
        let trace: f64 = fem.c_diag().iter().sum();
        assert!((trace - mesh.area()).abs() < 1e-9 * mesh.area());
        let g1 = fem.g.mul_vec(&vec![1.0; mesh.num_vertices()]);
        for (i, r) in g1.iter().enumerate() {
            let (_, vals) = fem.g.col(i);
            let row_max = vals.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            assert!(r.abs() <= 1e-10 * row_max, "row {i}: {r}");
        }
    }
}
