//! The classical descent chain on the solution tree: from `v`, jump to
//! `u ∈ T̃(v) \ {v}` with probability `κ_u² / Σ_{w ∈ T̃(v)\{v}} κ_w²`, absorbing
//! at `M`. One step models one conditioned vertex measurement of the search.

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::estimation::{pe_distribution_with_register, register_for, total_variation};
use crate::report::CheckReport;
use crate::resistance::{kappa_assignment, resistance_profile, KappaAssignment, ResistanceProfile};
use crate::tree::{
    shallowest_marked_uncounted, solution_tree, MarkingOracle, SolutionTree, Tree, VertexId,
};
use crate::walk::WalkOperator;

/// Constant `C` in the bound `TV ≤ C·δ` between the measured and chain laws.
pub const TV_CONSTANT: f64 = 10.0;

#[derive(Clone, Debug)]
pub struct DescentChain {
    tree: Tree,
    solution: SolutionTree,
    kappa: KappaAssignment,
    profile: ResistanceProfile,
    /// `κ_c²` per vertex of `T̃`, zero elsewhere.
    weight: Vec<f64>,
    /// `W(v) = Σ_{u ∈ T̃(v)\{v}} κ_u²`.
    below: Vec<f64>,
}

impl DescentChain {
    /// Builds the chain for the shallowest marked set of `f`; errors when no
    /// vertex is marked.
    pub fn new(tree: &Tree, f: &MarkingOracle) -> Result<Self> {
        let marked = shallowest_marked_uncounted(tree, f);
        let solution = solution_tree(tree, &marked)?;
        let profile = resistance_profile(tree, &marked);
        let kappa = kappa_assignment(tree, &solution, &profile);
        let mut weight = vec![0.0; tree.len()];
        for &v in solution.vertices() {
            weight[v] = kappa.get(v).powi(2);
        }
        let mut below = vec![0.0; tree.len()];
        for &v in solution.vertices().iter().rev() {
            below[v] = solution
                .children(tree, v)
                .map(|c| weight[c] + below[c])
                .sum();
        }
        Ok(DescentChain {
            tree: tree.clone(),
            solution,
            kappa,
            profile,
            weight,
            below,
        })
    }

    pub fn tree(&self) -> &Tree {
        &self.tree
    }

    pub fn solution(&self) -> &SolutionTree {
        &self.solution
    }

    pub fn kappa(&self) -> &KappaAssignment {
        &self.kappa
    }

    pub fn profile(&self) -> &ResistanceProfile {
        &self.profile
    }

    /// `P(u | v)`.
    pub fn transition(&self, v: VertexId, u: VertexId) -> f64 {
        if u == v
            || self.below[v] == 0.0
            || !self.solution.contains(u)
            || !self.tree.is_descendant(u, v)
        {
            return 0.0;
        }
        self.weight[u] / self.below[v]
    }

    /// The law of the first step from the root, indexed by vertex.
    pub fn first_step_law(&self) -> Vec<f64> {
        let r = self.tree.root();
        self.tree
            .vertices()
            .map(|u| self.transition(r, u))
            .collect()
    }

    /// One trajectory from the root; returns the number of steps to reach `M`.
    ///
    /// Sampling is hierarchical: from `v` a child `c` is chosen with
    /// probability `(κ_c² + W(c)) / W(v)`, and the jump stops at `c` with
    /// probability `κ_c² / (κ_c² + W(c))`, else continues below `c`.
    pub fn sample_steps<R: Rng + ?Sized>(&self, rng: &mut R) -> u64 {
        let marked = self.solution.marked();
        let mut v = self.tree.root();
        let mut steps = 0;
        while !marked.contains(v) {
            let mut at = v;
            v = loop {
                let mut x = rng.gen::<f64>() * self.below[at];
                let mut next = at;
                for c in self.solution.children(&self.tree, at) {
                    next = c;
                    x -= self.weight[c] + self.below[c];
                    if x < 0.0 {
                        break;
                    }
                }
                let stop = self.weight[next] / (self.weight[next] + self.below[next]);
                if rng.gen::<f64>() < stop {
                    break next;
                }
                at = next;
            };
            steps += 1;
        }
        steps
    }
}

/// Expected absorption times `E_v` on `T̃` (zero off `T̃` and on `M`).
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct HittingTimes {
    pub expected: Vec<f64>,
}

impl HittingTimes {
    pub fn get(&self, v: VertexId) -> f64 {
        self.expected[v]
    }

    pub fn root(&self) -> f64 {
        self.expected[0]
    }
}

/// `E_v = 1 + X(v)/W(v)` with `X(v) = Σ_{u ∈ T̃(v)\{v}} κ_u² E_u`, bottom-up.
pub fn exact_hitting_times(dc: &DescentChain) -> HittingTimes {
    let len = dc.tree.len();
    let mut expected = vec![0.0; len];
    let mut weighted = vec![0.0; len];
    for &v in dc.solution.vertices().iter().rev() {
        if dc.solution.marked().contains(v) {
            continue;
        }
        let x: f64 = dc
            .solution
            .children(&dc.tree, v)
            .map(|c| dc.weight[c] * expected[c] + weighted[c])
            .sum();
        weighted[v] = x;
        expected[v] = 1.0 + x / dc.below[v];
    }
    HittingTimes { expected }
}

/// Mean steps to absorption over independent trajectories.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct MonteCarlo {
    pub trials: u64,
    pub mean: f64,
    pub stderr: f64,
}

/// Simulates `trials` trajectories; trial `i` uses the ChaCha8 stream `i` of
/// `seed`, so the result does not depend on the thread count.
pub fn simulate_descent(dc: &DescentChain, trials: u64, seed: u64) -> Result<MonteCarlo> {
    if trials == 0 {
        return Err(Error::InvalidArgument("need at least one trial".into()));
    }
    let samples: Vec<f64> = (0..trials)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i);
            dc.sample_steps(&mut rng) as f64
        })
        .collect();
    let n = trials as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let var = if trials > 1 {
        samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    Ok(MonteCarlo {
        trials,
        mean,
        stderr: (var / n).sqrt(),
    })
}

/// `E_r` against `log(|M|(η̄ + 1))` in both bases; only base 2 is asserted.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct DescentBound {
    pub e_root: f64,
    pub bound_log2: f64,
    pub bound_ln: f64,
    pub margin_log2: f64,
    pub margin_ln: f64,
    pub violated: bool,
}

pub fn descent_bound(dc: &DescentChain, ht: &HittingTimes) -> DescentBound {
    let x = dc.solution.marked().len() as f64 * (dc.profile.root() + 1.0);
    let e_root = ht.root();
    let bound_log2 = x.log2();
    let bound_ln = x.ln();
    DescentBound {
        e_root,
        bound_log2,
        bound_ln,
        margin_log2: bound_log2 - e_root,
        margin_ln: bound_ln - e_root,
        violated: e_root > bound_log2 + 1e-12,
    }
}

/// `E_v ≤ Σ_{m ∈ M(v)} (κ_m/κ_v) log₂(κ_v (η̄(v) + 1)/κ_m)` for every `v ∈ T̃`.
pub fn vertex_bound(dc: &DescentChain, v: VertexId) -> f64 {
    let kv = dc.kappa.get(v);
    let scale = kv * (dc.profile.eta_bar(v) + 1.0);
    dc.solution
        .marked()
        .under(v)
        .iter()
        .map(|&m| dc.kappa.get(m) / kv * (scale / dc.kappa.get(m)).log2())
        .sum()
}

/// Root bound and per-vertex refinement as residuals `max(0, E − bound)`.
pub fn descent_checks(dc: &DescentChain, ht: &HittingTimes, tol: f64) -> CheckReport {
    let mut report = CheckReport::new();
    let b = descent_bound(dc, ht);
    report.record(
        "descent_root_bound",
        (b.e_root - b.bound_log2).max(0.0),
        tol,
    );
    let worst = dc
        .solution
        .vertices()
        .iter()
        .map(|&v| (ht.get(v) - vertex_bound(dc, v)).max(0.0))
        .fold(0.0, f64::max);
    report.record("descent_vertex_bound", worst, tol);
    report
}

/// Phase estimation at the root versus the chain's first step.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct QuantumChainReport {
    pub eta: f64,
    pub delta: f64,
    pub register: u64,
    pub p_zero: f64,
    /// TV between the non-root vertex law given outcome 0 and the chain's first step.
    pub total_variation: f64,
    pub bound: f64,
    pub passed: bool,
}

/// Runs exact phase estimation on `|r⟩` with register `M = ⌈√(Tη)/δ³⌉`,
/// conditions on outcome 0 and on a non-root vertex, and compares with
/// [`DescentChain::first_step_law`].
pub fn quantum_vs_chain_check(
    tree: &Tree,
    f: &MarkingOracle,
    eta: f64,
    delta: f64,
) -> Result<QuantumChainReport> {
    if !(delta > 0.0 && delta <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "δ = {delta} outside (0, 1]"
        )));
    }
    let dc = DescentChain::new(tree, f)?;
    let marked = dc.solution.marked();
    let register = register_for((tree.bounds().size as f64 * eta).sqrt() / delta.powi(3))?;
    let op = WalkOperator::new(tree, marked, eta)?;
    let sd = op.decompose()?;
    let root = DVector::from_fn(tree.len(), |i, _| if i == tree.root() { 1.0 } else { 0.0 });
    let pe = pe_distribution_with_register(&sd, &root, register, false)?;

    let mut measured = pe.conditional_zero.clone();
    measured[tree.root()] = 0.0;
    let mass: f64 = measured.iter().sum();
    if mass <= 0.0 {
        return Err(Error::Numerical(
            "outcome 0 never yields a non-root vertex".into(),
        ));
    }
    measured.iter_mut().for_each(|p| *p /= mass);
    let tv = total_variation(&measured, &dc.first_step_law());
    let bound = TV_CONSTANT * delta;
    Ok(QuantumChainReport {
        eta,
        delta,
        register,
        p_zero: pe.p_zero,
        total_variation: tv,
        bound,
        passed: tv <= bound,
    })
}
