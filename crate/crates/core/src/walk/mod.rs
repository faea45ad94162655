//! Diffusion operators `D_v(η)`, the reflections `R_A(η)` and `R_B`, and the
//! walk operator `R_B·R_A(η)`.
//!
//! Every diffusion operator acts on the star `{v} ∪ children(v)`. The stars of
//! even-depth vertices partition the vertex set, and so do the stars of
//! odd-depth vertices together with `{r}`, so both reflections are block
//! diagonal and are stored as lists of `(star, ψ_v)` pairs.

mod spectral;
mod states;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::tree::{shallowest_marked_uncounted, MarkedSet, MarkingOracle, Tree, VertexId};

pub use spectral::{SpectralDecomposition, SPECTRAL_TOLERANCE};
pub use states::{
    beta, phi_m_state, phi_perp_state, phi_state, spectral_gap_check, xi_checks, xi_vector,
};

/// `ψ_v(η)` as a dense vector over all vertices.
///
/// Errors with [`Error::MarkedVertex`] for `v ∈ M`, where `D_v` is the identity.
pub fn psi_v(tree: &Tree, marked: &MarkedSet, v: VertexId, eta: f64) -> Result<DVector<f64>> {
    let local = local_psi(tree, marked, v, eta)?;
    let mut out = DVector::zeros(tree.len());
    out[v] = local[0];
    for (i, &c) in tree.children(v).iter().enumerate() {
        out[c] = local[i + 1];
    }
    Ok(out)
}

/// Coefficients of `ψ_v` on `[v, c₁, c₂, …]`.
fn local_psi(tree: &Tree, marked: &MarkedSet, v: VertexId, eta: f64) -> Result<Vec<f64>> {
    if marked.contains(v) {
        return Err(Error::MarkedVertex(v));
    }
    let children = tree.children(v).len();
    let mut psi = Vec::with_capacity(children + 1);
    if v == tree.root() {
        let norm = (1.0 + tree.degree(v) as f64 * eta).sqrt();
        psi.push(1.0 / norm);
        psi.extend(std::iter::repeat_n(eta.sqrt() / norm, children));
    } else {
        let norm = (tree.degree(v) as f64).sqrt();
        psi.extend(std::iter::repeat_n(1.0 / norm, children + 1));
    }
    Ok(psi)
}

#[derive(Clone, Debug)]
struct Star {
    vertices: Vec<VertexId>,
    psi: Vec<f64>,
}

impl Star {
    fn reflect(&self, x: &mut [f64]) {
        let overlap: f64 = self
            .vertices
            .iter()
            .zip(&self.psi)
            .map(|(&v, p)| x[v] * p)
            .sum();
        for (&v, p) in self.vertices.iter().zip(&self.psi) {
            x[v] -= 2.0 * overlap * p;
        }
    }
}

/// `R_B·R_A(η)` for one tree, one `M` and one `η`.
#[derive(Clone, Debug)]
pub struct WalkOperator {
    eta: f64,
    matrix: DMatrix<f64>,
    stars_a: Vec<Star>,
    stars_b: Vec<Star>,
    in_a: Vec<bool>,
}

impl WalkOperator {
    /// Builds the walk for the shallowest marked set `marked`; `D_m = I` for `m ∈ M`.
    pub fn new(tree: &Tree, marked: &MarkedSet, eta: f64) -> Result<WalkOperator> {
        if !(eta > 0.0 && eta.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "η must be positive and finite, got {eta}"
            )));
        }
        let n = tree.len();
        let in_a: Vec<bool> = tree
            .vertices()
            .map(|v| tree.depth(v).is_multiple_of(2))
            .collect();
        let mut stars_a = Vec::new();
        let mut stars_b = Vec::new();
        for v in tree.vertices().filter(|&v| !marked.contains(v)) {
            let mut vertices = vec![v];
            vertices.extend_from_slice(tree.children(v));
            let star = Star {
                vertices,
                psi: local_psi(tree, marked, v, eta)?,
            };
            if in_a[v] {
                stars_a.push(star);
            } else {
                stars_b.push(star);
            }
        }

        // O = R_B·R_A: reflect every column of R_A through the B stars
        let mut matrix = DMatrix::<f64>::identity(n, n);
        let mut column = vec![0.0; n];
        for j in 0..n {
            column.iter_mut().for_each(|x| *x = 0.0);
            column[j] = 1.0;
            for star in &stars_a {
                star.reflect(&mut column);
            }
            for star in &stars_b {
                star.reflect(&mut column);
            }
            matrix.set_column(j, &DVector::from_column_slice(&column));
        }
        Ok(WalkOperator {
            eta,
            matrix,
            stars_a,
            stars_b,
            in_a,
        })
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.matrix
    }

    /// True for even-depth vertices (the set `A`).
    pub fn in_a(&self, v: VertexId) -> bool {
        self.in_a[v]
    }

    pub fn apply_ra(&self, x: &DVector<f64>) -> DVector<f64> {
        let mut y = x.clone();
        for star in &self.stars_a {
            star.reflect(y.as_mut_slice());
        }
        y
    }

    pub fn apply_rb(&self, x: &DVector<f64>) -> DVector<f64> {
        let mut y = x.clone();
        for star in &self.stars_b {
            star.reflect(y.as_mut_slice());
        }
        y
    }

    pub fn apply(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.matrix * x
    }

    /// `Π_A x = (x + R_A x)/2`, the projector onto the +1 eigenspace of `R_A`.
    pub fn project_a(&self, x: &DVector<f64>) -> DVector<f64> {
        (x + self.apply_ra(x)) * 0.5
    }

    pub fn project_b(&self, x: &DVector<f64>) -> DVector<f64> {
        (x + self.apply_rb(x)) * 0.5
    }

    /// Dense `R_A(η)`.
    pub fn reflection_a(&self) -> DMatrix<f64> {
        self.dense(&self.stars_a)
    }

    /// Dense `R_B`.
    pub fn reflection_b(&self) -> DMatrix<f64> {
        self.dense(&self.stars_b)
    }

    fn dense(&self, stars: &[Star]) -> DMatrix<f64> {
        let mut m = DMatrix::identity(self.dim(), self.dim());
        for star in stars {
            for (i, &u) in star.vertices.iter().enumerate() {
                for (j, &w) in star.vertices.iter().enumerate() {
                    m[(u, w)] -= 2.0 * star.psi[i] * star.psi[j];
                }
            }
        }
        m
    }

    /// `max(‖OᵀO − I‖_max)`.
    pub fn orthogonality_defect(&self) -> f64 {
        let n = self.dim();
        (self.matrix.transpose() * &self.matrix - DMatrix::<f64>::identity(n, n)).amax()
    }

    pub fn decompose(&self) -> Result<SpectralDecomposition> {
        SpectralDecomposition::new(&self.matrix)
    }
}

/// Walk operator for the shallowest marked set of `f`, read without counting queries.
pub fn build_walk_operator(tree: &Tree, f: &MarkingOracle, eta: f64) -> Result<WalkOperator> {
    WalkOperator::new(tree, &shallowest_marked_uncounted(tree, f), eta)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tree::{build_path, build_random_tree, build_star, shallowest_marked};

    #[test]
    fn root_psi_of_two_leaf_star() {
        let (tree, f) = build_star(2, 0).unwrap();
        let m = shallowest_marked(&tree, &f);
        let psi = psi_v(&tree, &m, 0, 1.0).unwrap();
        let third = 1.0 / 3f64.sqrt();
        for x in psi.iter() {
            assert!((x - third).abs() < 1e-15);
        }
    }

    #[test]
    fn psi_is_normalized_everywhere() {
        let (tree, f) = build_random_tree(120, 4, 0.05, 3).unwrap();
        let m = shallowest_marked(&tree, &f);
        for v in tree.vertices().filter(|&v| !m.contains(v)) {
            let psi = psi_v(&tree, &m, v, 0.37).unwrap();
            assert!((psi.norm() - 1.0).abs() < 1e-14, "vertex {v}");
        }
    }

    #[test]
    fn internal_vertex_with_one_child() {
        let (tree, f) = build_path(3, false).unwrap();
        let m = shallowest_marked(&tree, &f);
        let psi = psi_v(&tree, &m, 1, 2.0).unwrap();
        let h = 0.5f64.sqrt();
        for (x, y) in psi.iter().zip([0.0, h, h, 0.0]) {
            assert!((x - y).abs() < 1e-15);
        }
    }

    #[test]
    fn root_psi_tends_to_root_as_eta_vanishes() {
        let (tree, f) = build_star(5, 1).unwrap();
        let m = shallowest_marked(&tree, &f);
        let psi = psi_v(&tree, &m, 0, 1e-14).unwrap();
        assert!((psi[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn marked_vertex_has_no_psi() {
        let (tree, f) = build_star(3, 1).unwrap();
        let m = shallowest_marked(&tree, &f);
        assert!(matches!(
            psi_v(&tree, &m, 1, 1.0),
            Err(Error::MarkedVertex(1))
        ));
    }

    #[test]
    fn reflections_are_orthogonal_involutions() {
        for seed in 0..10 {
            let (tree, f) = build_random_tree(60, 3, 0.1, seed).unwrap();
            let op = build_walk_operator(&tree, &f, 0.7).unwrap();
            let n = tree.len();
            let id = DMatrix::<f64>::identity(n, n);
            let ra = op.reflection_a();
            let rb = op.reflection_b();
            assert!((&ra * &ra - &id).amax() < 1e-12);
            assert!((&rb * &rb - &id).amax() < 1e-12);
            assert!((&ra - ra.transpose()).amax() < 1e-15);
            assert!((&rb * &ra - op.matrix()).amax() < 1e-12);
            assert!(op.orthogonality_defect() < 1e-12);
        }
    }

    #[test]
    fn rb_fixes_root() {
        let (tree, f) = build_random_tree(30, 3, 0.1, 1).unwrap();
        let op = build_walk_operator(&tree, &f, 2.0).unwrap();
        let mut r = DVector::zeros(tree.len());
        r[0] = 1.0;
        assert_eq!(op.apply_rb(&r), r);
    }

    #[test]
    fn single_edge_path_state_is_fixed() {
        let (tree, f) = build_star(1, 1).unwrap();
        for eta in [0.1, 1.0, 5.0] {
            let op = build_walk_operator(&tree, &f, eta).unwrap();
            let phi = DVector::from_vec(vec![eta.sqrt(), -1.0]);
            assert!((op.apply(&phi) - &phi).norm() < 1e-14);
        }
    }

    #[test]
    fn unmarked_star_moves_root() {
        let (tree, f) = build_star(4, 0).unwrap();
        let op = build_walk_operator(&tree, &f, 0.3).unwrap();
        let mut r = DVector::zeros(tree.len());
        r[0] = 1.0;
        assert!((op.apply(&r) - &r).norm() > 1e-3);
    }

    #[test]
    fn rejects_nonpositive_eta() {
        let (tree, f) = build_star(2, 1).unwrap();
        assert!(build_walk_operator(&tree, &f, 0.0).is_err());
        assert!(build_walk_operator(&tree, &f, f64::INFINITY).is_err());
    }
}
