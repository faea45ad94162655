//! Effective resistance of trees with unit edges, the κ assignment derived
//! from it, and the identities κ must satisfy.
//!
//! Two independent routes to the root resistance exist here: the
//! series/parallel recursion in [`resistance_profile`] and a dense Laplacian
//! solve in [`resistance_bruteforce`]. Tests compare them; neither calls the
//! other.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::report::{rel_diff, CheckReport};
use crate::tree::{MarkedSet, SolutionTree, Tree, VertexId};

/// `η̄(v)` for every vertex, `∞` where `M(v) = ∅`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ResistanceProfile {
    eta_bar: Vec<f64>,
    eta_max: f64,
}

impl ResistanceProfile {
    pub fn eta_bar(&self, v: VertexId) -> f64 {
        self.eta_bar[v]
    }

    pub fn root(&self) -> f64 {
        self.eta_bar[0]
    }

    /// Largest finite `η̄(v)` over the whole tree.
    pub fn eta_max(&self) -> f64 {
        self.eta_max
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.eta_bar
    }
}

/// Bottom-up evaluation of `1/η̄(v) = Σ_{c←v, η̄(c)<∞} 1/(η̄(c)+1)`, with `η̄(m) = 0` on `M`.
pub fn resistance_profile(tree: &Tree, marked: &MarkedSet) -> ResistanceProfile {
    let mut eta_bar = vec![f64::INFINITY; tree.len()];
    for v in tree.vertices().rev() {
        if marked.contains(v) {
            eta_bar[v] = 0.0;
            continue;
        }
        let conductance: f64 = tree
            .children(v)
            .iter()
            .map(|&c| eta_bar[c])
            .filter(|eta| eta.is_finite())
            .map(|eta| 1.0 / (eta + 1.0))
            .sum();
        if conductance > 0.0 {
            eta_bar[v] = 1.0 / conductance;
        }
    }
    let eta_max = eta_bar
        .iter()
        .copied()
        .filter(|e| e.is_finite())
        .fold(f64::NEG_INFINITY, f64::max);
    ResistanceProfile { eta_bar, eta_max }
}

/// Resistance between the root and the merged sink `M`, from the grounded
/// graph Laplacian of the full tree.
///
/// Returns `∞` when `M` is empty.
pub fn resistance_bruteforce(tree: &Tree, marked: &MarkedSet) -> Result<f64> {
    if marked.is_empty() {
        return Ok(f64::INFINITY);
    }
    if marked.contains(tree.root()) {
        return Ok(0.0);
    }
    // every vertex outside M is a free node; all of M is ground
    let mut node = vec![usize::MAX; tree.len()];
    let mut count = 0;
    for v in tree.vertices() {
        if !marked.contains(v) {
            node[v] = count;
            count += 1;
        }
    }
    let mut laplacian = DMatrix::<f64>::zeros(count, count);
    for v in tree.vertices() {
        for &c in tree.children(v) {
            let (a, b) = (node[v], node[c]);
            if a != usize::MAX {
                laplacian[(a, a)] += 1.0;
            }
            if b != usize::MAX {
                laplacian[(b, b)] += 1.0;
            }
            if a != usize::MAX && b != usize::MAX {
                laplacian[(a, b)] -= 1.0;
                laplacian[(b, a)] -= 1.0;
            }
        }
    }
    let mut current = DVector::<f64>::zeros(count);
    current[node[tree.root()]] = 1.0;
    let chol = laplacian
        .cholesky()
        .ok_or_else(|| Error::Numerical("grounded Laplacian is singular".into()))?;
    let potential = chol.solve(&current);
    Ok(potential[node[tree.root()]])
}

/// κ on every vertex (zero outside `T̃`).
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct KappaAssignment {
    kappa: Vec<f64>,
}

impl KappaAssignment {
    pub fn new(kappa: Vec<f64>) -> Self {
        KappaAssignment { kappa }
    }

    pub fn get(&self, v: VertexId) -> f64 {
        self.kappa[v]
    }

    pub fn root(&self) -> f64 {
        self.kappa[0]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.kappa
    }

    /// Copy with `κ_v` shifted by `delta`; used to inject faults into checks.
    pub fn perturbed(&self, v: VertexId, delta: f64) -> Self {
        let mut kappa = self.kappa.clone();
        kappa[v] += delta;
        KappaAssignment { kappa }
    }
}

/// Builds κ top-down from `κ_c/κ_v = η̄(v)/(η̄(c)+1)` and rescales so that
/// `Σ_{v≠r} κ_v² = 1`.
pub fn kappa_assignment(tree: &Tree, st: &SolutionTree, rp: &ResistanceProfile) -> KappaAssignment {
    let mut kappa = vec![0.0; tree.len()];
    kappa[tree.root()] = 1.0;
    for &v in st.vertices() {
        for c in st.children(tree, v) {
            kappa[c] = kappa[v] * rp.eta_bar(v) / (rp.eta_bar(c) + 1.0);
        }
    }
    let non_root: f64 = st
        .vertices()
        .iter()
        .filter(|&&v| v != tree.root())
        .map(|&v| kappa[v] * kappa[v])
        .sum();
    let scale = non_root.sqrt().recip();
    for k in &mut kappa {
        *k *= scale;
    }
    KappaAssignment { kappa }
}

/// Checks the defining equations of κ and the identities that follow from them.
///
/// Residuals are relative (`|a − b| / max(1, |b|)`) so deep trees and wide
/// stars share one tolerance.
pub fn verify_kappa(
    tree: &Tree,
    st: &SolutionTree,
    rp: &ResistanceProfile,
    ka: &KappaAssignment,
    tol: f64,
) -> CheckReport {
    let k = ka.as_slice();
    let root = tree.root();
    let marked = st.marked();
    let mut report = CheckReport::new();

    // flow: κ_v = Σ_{c←v} κ_c off M
    let mut flow = 0.0f64;
    for &v in st.vertices() {
        if !marked.contains(v) {
            let sum: f64 = tree.children(v).iter().map(|&c| k[c]).sum();
            flow = flow.max(rel_diff(k[v], sum));
        }
    }
    report.record("flow_conservation", flow, tol);

    let norm: f64 = tree
        .vertices()
        .filter(|&v| v != root)
        .map(|v| k[v] * k[v])
        .sum();
    report.record("normalization", (norm - 1.0).abs(), tol);

    // prefix[v] = Σ_{u ∈ P(r, v)} κ_u
    let mut prefix = vec![0.0; tree.len()];
    for v in tree.vertices() {
        prefix[v] = k[v] + tree.parent(v).map_or(0.0, |p| prefix[p]);
    }
    let path_sum = |v: VertexId, m: VertexId| prefix[m] - prefix[v] + k[v];

    let mut balance = 0.0f64;
    let mut lemma9 = 0.0f64;
    // Σ_{u ∈ T̃(v)} κ_u², accumulated bottom-up
    let mut energy = vec![0.0; tree.len()];
    for &v in st.vertices().iter().rev() {
        energy[v] += k[v] * k[v];
        if let Some(p) = tree.parent(v) {
            energy[p] += energy[v];
        }
    }
    for &v in st.vertices() {
        let sums: Vec<f64> = marked.under(v).iter().map(|&m| path_sum(v, m)).collect();
        let lo = sums.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = sums.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        balance = balance.max((hi - lo) / hi.abs().max(1.0));
        for s in sums {
            lemma9 = lemma9.max(rel_diff(k[v] * s, energy[v]));
        }
    }
    report.record("path_balance", balance, tol);
    report.record("path_energy", lemma9, tol);

    // (Σ_m κ_m) · Σ_{v ∈ P(r,m₀)\{r}} Σ_{m' ∈ M(v)} κ_m' = 1, with leaf sums taken directly
    let leaf_total: f64 = marked.members().iter().map(|&m| k[m]).sum();
    let leaf_sum = |v: VertexId| -> f64 { marked.under(v).iter().map(|&m| k[m]).sum() };
    let mut leaf_system = 0.0f64;
    let mut root_path = 0.0f64;
    for &m0 in marked.members() {
        let path = tree.path(root, m0);
        let nested: f64 = path.iter().skip(1).map(|&v| leaf_sum(v)).sum();
        leaf_system = leaf_system.max((leaf_total * nested - 1.0).abs());
        let direct: f64 = path.iter().skip(1).map(|&v| k[v]).sum();
        root_path = root_path.max((k[root] * direct - 1.0).abs());
    }
    report.record("leaf_system", leaf_system, tol);
    report.record("root_path_product", root_path, tol);

    let mut sign = 0.0f64;
    for v in tree.vertices() {
        if st.contains(v) {
            sign = sign.max((-k[v]).max(0.0));
            if k[v] == 0.0 {
                sign = sign.max(1.0);
            }
        } else {
            sign = sign.max(k[v].abs());
        }
    }
    report.record("sign_uniformity", sign, tol);

    let mut ratio = 0.0f64;
    let mut invariance = 0.0f64;
    for &v in st.vertices() {
        for c in st.children(tree, v) {
            let lhs = (rp.eta_bar(c) + 1.0) / rp.eta_bar(v);
            ratio = ratio.max(rel_diff(lhs, k[v] / k[c]));
        }
        let from_kappa = energy[v] / (k[v] * k[v]) - 1.0;
        invariance = invariance.max(rel_diff(from_kappa, rp.eta_bar(v)));
    }
    report.record("child_ratio", ratio, tol);
    report.record("resistance_invariance", invariance, tol);
    report.record(
        "root_resistance",
        rel_diff(1.0 / (k[root] * k[root]), rp.root()),
        tol,
    );
    report
}
