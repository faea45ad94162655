//! The analytic vectors attached to the walk: the path eigenvectors `φ_m`,
//! `Φ` and its complement `Φ⊥` in `span{r, Φ}`, and the certificate `ξ`
//! used with the effective spectral gap lemma.

use nalgebra::DVector;

use super::{SpectralDecomposition, WalkOperator};
use crate::error::{Error, Result};
use crate::report::CheckReport;
use crate::resistance::KappaAssignment;
use crate::tree::{MarkedSet, SolutionTree, Tree, VertexId};

fn parity(tree: &Tree, v: VertexId) -> f64 {
    if tree.depth(v).is_multiple_of(2) {
        1.0
    } else {
        -1.0
    }
}

/// `β = arctan(√η·κ_r)`, so that `⟨r|Φ⟩ = sin β`.
pub fn beta(ka: &KappaAssignment, eta: f64) -> f64 {
    (eta.sqrt() * ka.root()).atan()
}

/// Unnormalized `φ_m = √η|r⟩ + Σ_{v ∈ P(r,m)\{r}} (−1)^{ℓ_v}|v⟩`.
pub fn phi_m_state(tree: &Tree, marked: &MarkedSet, m: VertexId, eta: f64) -> Result<DVector<f64>> {
    if !marked.contains(m) {
        return Err(Error::NotInMarkedSet(m));
    }
    let mut phi = DVector::zeros(tree.len());
    phi[tree.root()] = eta.sqrt();
    for v in tree.path(tree.root(), m).into_iter().skip(1) {
        phi[v] = parity(tree, v);
    }
    Ok(phi)
}

/// `Φ = sin β|r⟩ + cos β Σ_{v≠r} (−1)^{ℓ_v} κ_v|v⟩`.
pub fn phi_state(tree: &Tree, st: &SolutionTree, ka: &KappaAssignment, eta: f64) -> DVector<f64> {
    let (s, c) = beta(ka, eta).sin_cos();
    signed_kappa(tree, st, ka, s, c)
}

/// `Φ⊥ = cos β|r⟩ − sin β Σ_{v≠r} (−1)^{ℓ_v} κ_v|v⟩`.
pub fn phi_perp_state(
    tree: &Tree,
    st: &SolutionTree,
    ka: &KappaAssignment,
    eta: f64,
) -> DVector<f64> {
    let (s, c) = beta(ka, eta).sin_cos();
    signed_kappa(tree, st, ka, c, -s)
}

fn signed_kappa(
    tree: &Tree,
    st: &SolutionTree,
    ka: &KappaAssignment,
    at_root: f64,
    scale: f64,
) -> DVector<f64> {
    let mut out = DVector::zeros(tree.len());
    out[tree.root()] = at_root;
    for &v in st.vertices().iter().filter(|&&v| v != tree.root()) {
        out[v] = scale * parity(tree, v) * ka.get(v);
    }
    out
}

/// `ξ = Σ_v α_v|v⟩` with `α_r = cos β` and, for `v ≠ r`,
/// `α_v = sin β·(1/κ_r − Σ_{u ∈ P(r,v)\{r}} κ_u)`, plus `sin β·κ_v` when `v` has odd depth.
pub fn xi_vector(tree: &Tree, ka: &KappaAssignment, eta: f64) -> DVector<f64> {
    let (s, c) = beta(ka, eta).sin_cos();
    let root = tree.root();
    let mut prefix = vec![0.0; tree.len()];
    let mut alpha = DVector::zeros(tree.len());
    alpha[root] = c;
    for v in tree.vertices().filter(|&v| v != root) {
        let p = tree.parent(v).expect("non-root vertex has a parent");
        prefix[v] = prefix[p] + ka.get(v);
        let odd = if tree.depth(v) % 2 == 1 {
            ka.get(v)
        } else {
            0.0
        };
        alpha[v] = s * (1.0 / ka.root() - prefix[v] + odd);
    }
    alpha
}

/// `Π_A ξ = 0`, `Π_B ξ = Φ⊥`, the boundary values of `ξ` on `M`, and the norm bounds on `ξ`.
///
/// The bound `‖ξ‖² ≤ 2(T−1)η cos²β` is only claimed for `η ≥ 1/(T−1)`; the
/// sharper `(1 + (T−1)η) cos²β` is checked for every `η`.
pub fn xi_checks(
    tree: &Tree,
    marked: &MarkedSet,
    op: &WalkOperator,
    ka: &KappaAssignment,
    xi: &DVector<f64>,
    phi_perp: &DVector<f64>,
    tol: f64,
) -> CheckReport {
    let eta = op.eta();
    let (s, c) = beta(ka, eta).sin_cos();
    let mut report = CheckReport::new();
    report.record("xi_projector_a", op.project_a(xi).norm(), tol);
    report.record("xi_projector_b", (op.project_b(xi) - phi_perp).norm(), tol);

    let mut boundary = 0.0f64;
    for &m in marked.members() {
        let expected = if op.in_a(m) { 0.0 } else { ka.get(m) * s };
        boundary = boundary.max((xi[m] - expected).abs());
    }
    report.record("xi_marked_boundary", boundary, tol);

    let t = tree.len() as f64;
    let norm_sq = xi.norm_squared();
    let general = (1.0 + (t - 1.0) * eta) * c * c;
    report.record("xi_norm_general", excess(norm_sq, general), tol);
    if eta * (t - 1.0) >= 1.0 {
        report.record(
            "xi_norm_bound",
            excess(norm_sq, 2.0 * (t - 1.0) * eta * c * c),
            tol,
        );
    }
    report
}

/// Relative amount by which `lhs` exceeds `bound`, zero when within.
fn excess(lhs: f64, bound: f64) -> f64 {
    (lhs - bound).max(0.0) / bound.abs().max(f64::MIN_POSITIVE)
}

/// `‖P_ε Φ⊥‖ ≤ ε‖ξ‖` for each `ε`, and the scaling ratio `‖P_ε Φ⊥‖/(ε√(Tη)) ≤ 2`.
pub fn spectral_gap_check(
    sd: &SpectralDecomposition,
    phi_perp: &DVector<f64>,
    xi: &DVector<f64>,
    eps: &[f64],
    t_eta: f64,
    tol: f64,
) -> CheckReport {
    let mut report = CheckReport::new();
    let mut gap = 0.0f64;
    let mut ratio = 0.0f64;
    let xi_norm = xi.norm();
    for &e in eps {
        let projected = sd.projected_norm(phi_perp, e);
        gap = gap.max(excess(projected, e * xi_norm));
        ratio = ratio.max(projected / (e * t_eta.sqrt()));
    }
    report.record("spectral_gap", gap, tol);
    report.record("spectral_gap_scaling", excess(ratio, 2.0), 0.0);
    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::resistance::{kappa_assignment, resistance_profile};
    use crate::tree::{
        build_path, build_random_tree, build_star, shallowest_marked, solution_tree, MarkingOracle,
    };

    struct Fixture {
        tree: Tree,
        marked: MarkedSet,
        st: SolutionTree,
        ka: KappaAssignment,
        eta_bar: f64,
    }

    fn fixture(tree: Tree, f: &MarkingOracle) -> Fixture {
        let marked = shallowest_marked(&tree, f);
        let st = solution_tree(&tree, &marked).unwrap();
        let rp = resistance_profile(&tree, &marked);
        let ka = kappa_assignment(&tree, &st, &rp);
        Fixture {
            eta_bar: rp.root(),
            tree,
            marked,
            st,
            ka,
        }
    }

    #[test]
    fn phi_m_examples() {
        let (tree, f) = build_star(1, 1).unwrap();
        let m = shallowest_marked(&tree, &f);
        assert_eq!(
            phi_m_state(&tree, &m, 1, 4.0).unwrap().as_slice(),
            &[2.0, -1.0]
        );
        let (tree, f) = build_path(2, true).unwrap();
        let m = shallowest_marked(&tree, &f);
        assert_eq!(
            phi_m_state(&tree, &m, 2, 1.0).unwrap().as_slice(),
            &[1.0, -1.0, 1.0]
        );
        assert!(matches!(
            phi_m_state(&tree, &m, 1, 1.0),
            Err(Error::NotInMarkedSet(1))
        ));
    }

    #[test]
    fn path_states_are_fixed_points() {
        for seed in 0..12 {
            let (tree, f) = build_random_tree(70, 3, 0.08, seed).unwrap();
            let fx = fixture(tree, &f);
            for eta in [fx.eta_bar / 4.0, fx.eta_bar, 4.0 * fx.eta_bar] {
                let op = WalkOperator::new(&fx.tree, &fx.marked, eta).unwrap();
                for &m in fx.marked.members() {
                    let phi = phi_m_state(&fx.tree, &fx.marked, m, eta).unwrap();
                    assert!((op.apply(&phi) - &phi).norm() < 1e-10);
                }
                let big_phi = phi_state(&fx.tree, &fx.st, &fx.ka, eta);
                assert!((big_phi.norm() - 1.0).abs() < 1e-12);
                assert!((op.apply(&big_phi) - &big_phi).norm() < 1e-10);
            }
        }
    }

    #[test]
    fn star_at_resistance_has_half_root_weight() {
        let (tree, f) = build_star(12, 3).unwrap();
        let fx = fixture(tree, &f);
        let phi = phi_state(&fx.tree, &fx.st, &fx.ka, 1.0 / 3.0);
        assert!((phi[0] * phi[0] - 0.5).abs() < 1e-14);
    }

    #[test]
    fn phi_perp_completes_root() {
        let (tree, f) = build_random_tree(50, 4, 0.1, 9).unwrap();
        let fx = fixture(tree, &f);
        let eta = 0.8;
        let (s, c) = beta(&fx.ka, eta).sin_cos();
        let phi = phi_state(&fx.tree, &fx.st, &fx.ka, eta);
        let perp = phi_perp_state(&fx.tree, &fx.st, &fx.ka, eta);
        assert!(phi.dot(&perp).abs() < 1e-14);
        let mut r = &phi * s + &perp * c;
        r[0] -= 1.0;
        assert!(r.norm() < 1e-14);
        for &m in fx.marked.members() {
            let phi_m = phi_m_state(&fx.tree, &fx.marked, m, eta).unwrap();
            assert!(perp.dot(&phi_m).abs() < 1e-12);
        }
    }

    #[test]
    fn xi_satisfies_projector_conditions() {
        for seed in 0..12 {
            let (tree, f) = build_random_tree(80, 3, 0.06, seed).unwrap();
            let fx = fixture(tree, &f);
            for eta in [fx.eta_bar / 4.0, fx.eta_bar, 4.0 * fx.eta_bar] {
                let op = WalkOperator::new(&fx.tree, &fx.marked, eta).unwrap();
                let xi = xi_vector(&fx.tree, &fx.ka, eta);
                let perp = phi_perp_state(&fx.tree, &fx.st, &fx.ka, eta);
                let report = xi_checks(&fx.tree, &fx.marked, &op, &fx.ka, &xi, &perp, 1e-10);
                assert!(report.passed(), "seed {seed} η {eta}\n{report}");
            }
        }
    }

    #[test]
    fn spectral_gap_holds_on_random_trees() {
        for seed in 0..6 {
            let (tree, f) = build_random_tree(60, 3, 0.08, seed).unwrap();
            let fx = fixture(tree, &f);
            let op = WalkOperator::new(&fx.tree, &fx.marked, fx.eta_bar).unwrap();
            let sd = op.decompose().unwrap();
            let xi = xi_vector(&fx.tree, &fx.ka, fx.eta_bar);
            let perp = phi_perp_state(&fx.tree, &fx.st, &fx.ka, fx.eta_bar);
            let t_eta = fx.tree.len() as f64 * fx.eta_bar;
            let report = spectral_gap_check(&sd, &perp, &xi, &[1e-3, 1e-2, 1e-1], t_eta, 1e-10);
            assert!(report.passed(), "{report}");
        }
    }

    #[test]
    fn single_edge_gap_by_hand() {
        // O has eigenvalues {+1, −1}; Φ⊥ lies entirely in the −1 eigenspace.
        let (tree, f) = build_star(1, 1).unwrap();
        let fx = fixture(tree, &f);
        let op = WalkOperator::new(&fx.tree, &fx.marked, 1.0).unwrap();
        let sd = op.decompose().unwrap();
        let perp = phi_perp_state(&fx.tree, &fx.st, &fx.ka, 1.0);
        assert!(sd.projected_norm(&perp, 0.1) < 1e-14);
        assert!((sd.projected_norm(&perp, std::f64::consts::FRAC_PI_2) - 1.0).abs() < 1e-14);
    }
}
