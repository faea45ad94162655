//! Seeded corpora, the corpus-wide verification suites, the Grover scaling
//! study and serializable experiment descriptions.
//!
//! All randomness derives from one 64-bit master seed. A run in domain `D`
//! with index `i` uses `ChaCha8Rng::seed_from_u64(master)` switched to stream
//! `D·2^40 + i`, so results do not depend on thread count or scheduling.

use std::io::Write;
use std::path::PathBuf;

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use crate::algorithms::{Engine, EstimateResConfig, Outcome, RunRecord};
use crate::descent::{
    descent_bound, descent_checks, exact_hitting_times, simulate_descent, DescentChain,
};
use crate::error::{Error, Result};
use crate::estimation::{
    gate_level_pe, p_zero_with_register, pe_distribution, register_for, total_variation,
};
use crate::report::{rel_diff, CheckReport};
use crate::resistance::{
    kappa_assignment, resistance_bruteforce, resistance_profile, verify_kappa,
};
use crate::tree::{
    build_dpll_tree, build_path, build_random_tree, build_star, read_tree_json,
    shallowest_marked_uncounted, solution_tree, tree_to_json, MarkingOracle, Tree,
};
use crate::walk::{
    beta, phi_m_state, phi_perp_state, phi_state, spectral_gap_check, xi_checks, xi_vector,
    WalkOperator,
};

/// Stream domains.
pub mod domain {
    pub const CORPUS: u64 = 1;
    pub const TRIALS: u64 = 2;
    pub const GROVER: u64 = 3;
    pub const MONTE_CARLO: u64 = 4;
}

/// The generator for run `index` of `domain` under `master`.
pub fn stream(master: u64, domain: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    rng.set_stream((domain << 40) + index);
    rng
}

/// Runs `f` inside a pool of `jobs` threads (`0` = rayon's default).
pub fn with_jobs<T: Send>(jobs: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?;
    Ok(pool.install(f))
}

// ---------------------------------------------------------------------------
// corpus

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CorpusSpec {
    pub random_trees: usize,
    pub min_size: usize,
    pub max_size: usize,
    pub max_degree: usize,
    pub min_mark_prob: f64,
    pub max_mark_prob: f64,
    pub fixtures: bool,
    pub seed: u64,
}

impl Default for CorpusSpec {
    fn default() -> Self {
        CorpusSpec {
            random_trees: 500,
            min_size: 2,
            max_size: 500,
            max_degree: 5,
            min_mark_prob: 0.01,
            max_mark_prob: 0.2,
            fixtures: true,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct CorpusEntry {
    pub name: String,
    pub tree: Tree,
    pub f: MarkingOracle,
}

fn entry(name: &str, (tree, f): (Tree, MarkingOracle)) -> CorpusEntry {
    CorpusEntry {
        name: name.to_string(),
        tree,
        f,
    }
}

/// Hand-built trees with known answers.
pub fn fixtures() -> Result<Vec<CorpusEntry>> {
    let mut out = vec![
        entry("single_edge", build_path(1, true)?),
        entry("star_4_2", build_star(4, 2)?),
        entry("star_8_1", build_star(8, 1)?),
        entry("star_8_2", build_star(8, 2)?),
        entry("star_16_3", build_star(16, 3)?),
        entry("star_16_16", build_star(16, 16)?),
        entry("star_64_4", build_star(64, 4)?),
        entry("path_4", build_path(4, true)?),
        entry("path_5", build_path(5, true)?),
        entry("path_6", build_path(6, true)?),
        entry("path_3_unmarked", build_path(3, false)?),
    ];

    let (tree, mut f) = build_path(4, true)?;
    f.set(2, true);
    out.push(entry("path_4_nested", (tree, f)));

    let children = vec![
        vec![1, 2],
        vec![3],
        vec![4],
        vec![5],
        vec![6],
        vec![],
        vec![],
    ];
    let (tree, _) = Tree::from_children(0, &children)?;
    let mut f = MarkingOracle::unmarked(tree.len());
    f.set(6, true);
    out.push(entry("branching_one_leaf", (tree, f)));

    let (tree, _) = Tree::from_children(0, &[vec![]])?;
    out.push(entry("root_only", (tree, MarkingOracle::unmarked(1))));

    let (tree, mut f) = build_star(3, 0)?;
    f.set(0, true);
    out.push(entry("marked_root", (tree, f)));

    let cnf = vec![vec![1, 2], vec![-1, 3], vec![-2, -3], vec![2, 3, 4]];
    out.push(entry("dpll_4var", build_dpll_tree(&cnf, &[1, 2, 3, 4])?));
    Ok(out)
}

/// Random trees with log-uniform size, uniform degree bound in `2..=max_degree`
/// and uniform marking probability, followed by the fixtures.
pub fn build_corpus(spec: &CorpusSpec) -> Result<Vec<CorpusEntry>> {
    if spec.min_size < 2 || spec.max_size < spec.min_size || spec.max_degree < 2 {
        return Err(Error::InvalidArgument(format!("corpus spec {spec:?}")));
    }
    if !(0.0..=1.0).contains(&spec.min_mark_prob)
        || !(spec.min_mark_prob..=1.0).contains(&spec.max_mark_prob)
    {
        return Err(Error::InvalidArgument(format!(
            "marking probabilities {spec:?}"
        )));
    }
    let (lo, hi) = ((spec.min_size as f64).ln(), (spec.max_size as f64).ln());
    let mut out = (0..spec.random_trees)
        .map(|i| {
            let mut rng = stream(spec.seed, domain::CORPUS, i as u64);
            let size = rng
                .gen_range(lo..=hi)
                .exp()
                .round()
                .clamp(spec.min_size as f64, spec.max_size as f64) as usize;
            let degree = rng.gen_range(2..=spec.max_degree);
            let p = rng.gen_range(spec.min_mark_prob..=spec.max_mark_prob);
            let built = build_random_tree(size, degree, p, rng.gen())?;
            Ok(entry(&format!("random_{i:03}"), built))
        })
        .collect::<Result<Vec<_>>>()?;
    if spec.fixtures {
        out.extend(fixtures()?);
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// verification suites

/// Deliberate faults used to check that the suites can fail.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Fault {
    /// Adds `10⁻³` to `κ` of the first non-root vertex of the solution tree
    /// before the κ identity suite.
    KappaPerturbation,
}

/// Tolerances and sizes for [`verify_all`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VerifyOptions {
    pub fault: Option<Fault>,
    pub resistance_tol: f64,
    pub identity_tol: f64,
    pub root_amplitude_tol: f64,
    pub gap_epsilons: Vec<f64>,
    pub precision_deltas: Vec<f64>,
    pub precision_constant: f64,
    pub precision_max_size: usize,
    pub backend_max_size: usize,
    pub backend_ancillas: Vec<u32>,
    pub backend_tol: f64,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        VerifyOptions {
            fault: None,
            resistance_tol: 1e-9,
            identity_tol: 1e-10,
            root_amplitude_tol: 1e-12,
            gap_epsilons: vec![1e-3, 1e-2, 1e-1],
            precision_deltas: vec![0.2, 0.1, 0.05],
            precision_constant: 10.0,
            precision_max_size: 200,
            backend_max_size: 64,
            backend_ancillas: vec![1, 3, 6],
            backend_tol: 1e-10,
        }
    }
}

pub const SUITES: [&str; 9] = [
    "resistance_oracle",
    "resistance_interval",
    "kappa_identities",
    "eigenvectors",
    "xi_identities",
    "spectral_gap",
    "precision_law",
    "descent_bound",
    "backend_equivalence",
];

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SuiteReport {
    pub name: String,
    pub trees_checked: usize,
    pub report: CheckReport,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct VerifyReport {
    pub trees: usize,
    pub suites: Vec<SuiteReport>,
    /// Names of the trees with at least one failed check.
    pub failing_trees: Vec<String>,
    pub passed: bool,
}

impl VerifyReport {
    pub fn suite(&self, name: &str) -> Option<&SuiteReport> {
        self.suites.iter().find(|s| s.name == name)
    }
}

impl std::fmt::Display for VerifyReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(
            f,
            "{} trees, {}",
            self.trees,
            if self.passed {
                "all suites pass"
            } else {
                "FAILURES"
            }
        )?;
        for s in &self.suites {
            writeln!(f, "[{}] {} trees", s.name, s.trees_checked)?;
            write!(f, "{}", s.report)?;
        }
        if !self.failing_trees.is_empty() {
            writeln!(f, "failing trees: {}", self.failing_trees.join(", "))?;
        }
        Ok(())
    }
}

/// Runs every suite that applies to one tree.
pub fn verify_tree(
    e: &CorpusEntry,
    opts: &VerifyOptions,
) -> Result<Vec<(&'static str, CheckReport)>> {
    let tree = &e.tree;
    let marked = shallowest_marked_uncounted(tree, &e.f);
    let profile = resistance_profile(tree, &marked);
    let mut out = Vec::new();

    let brute = resistance_bruteforce(tree, &marked)?;
    let residual = if brute.is_infinite() && profile.root().is_infinite() {
        0.0
    } else {
        rel_diff(profile.root(), brute)
    };
    let mut r = CheckReport::new();
    r.record("resistance_vs_laplacian", residual, opts.resistance_tol);
    out.push(("resistance_oracle", r));

    let root = tree.root();
    if marked.is_empty() || marked.contains(root) {
        return Ok(out);
    }

    let eta_bar = profile.root();
    let bounds = tree.bounds();
    let lower = (1.0 / marked.len() as f64).max(1.0 / tree.children(root).len() as f64);
    let mut r = CheckReport::new();
    r.record("eta_bar_lower", (lower - eta_bar).max(0.0), 1e-12);
    r.record(
        "eta_bar_upper",
        (eta_bar - bounds.depth as f64).max(0.0),
        1e-12,
    );
    out.push(("resistance_interval", r));

    let st = solution_tree(tree, &marked)?;
    let ka = kappa_assignment(tree, &st, &profile);
    let checked = match opts.fault {
        Some(Fault::KappaPerturbation) => ka.perturbed(st.vertices()[1], 1e-3),
        None => ka.clone(),
    };
    out.push((
        "kappa_identities",
        verify_kappa(tree, &st, &profile, &checked, opts.identity_tol),
    ));

    let mut eig = CheckReport::new();
    let mut xi_report = CheckReport::new();
    for eta in [eta_bar / 4.0, eta_bar, 4.0 * eta_bar] {
        let op = WalkOperator::new(tree, &marked, eta)?;
        let mut worst = 0.0f64;
        for &m in marked.members() {
            let phi = phi_m_state(tree, &marked, m, eta)?;
            worst = worst.max((op.apply(&phi) - &phi).norm());
        }
        eig.record("phi_m_fixed", worst, opts.identity_tol);
        let phi = phi_state(tree, &st, &ka, eta);
        eig.record(
            "phi_root_amplitude",
            (phi[root] - beta(&ka, eta).sin()).abs(),
            opts.root_amplitude_tol,
        );
        let xi = xi_vector(tree, &ka, eta);
        let perp = phi_perp_state(tree, &st, &ka, eta);
        xi_report.merge(xi_checks(
            tree,
            &marked,
            &op,
            &ka,
            &xi,
            &perp,
            opts.identity_tol,
        ));
    }
    out.push(("eigenvectors", eig));
    out.push(("xi_identities", xi_report));

    let op = WalkOperator::new(tree, &marked, eta_bar)?;
    let sd = op.decompose()?;
    let xi = xi_vector(tree, &ka, eta_bar);
    let perp = phi_perp_state(tree, &st, &ka, eta_bar);
    let t = bounds.size as f64;
    out.push((
        "spectral_gap",
        spectral_gap_check(
            &sd,
            &perp,
            &xi,
            &opts.gap_epsilons,
            t * eta_bar,
            opts.identity_tol,
        ),
    ));

    if tree.len() <= opts.precision_max_size {
        let mut r = CheckReport::new();
        let mut worst = 0.0f64;
        for &delta in &opts.precision_deltas {
            let m = register_for((t * eta_bar).sqrt() / delta.powi(3))?;
            let leak = p_zero_with_register(&sd, &perp, m)?;
            worst = worst.max(leak / (delta * delta));
        }
        r.record("leakage_over_delta_sq", worst, opts.precision_constant);
        out.push(("precision_law", r));
    }

    let dc = DescentChain::new(tree, &e.f)?;
    let ht = exact_hitting_times(&dc);
    out.push(("descent_bound", descent_checks(&dc, &ht, 1e-12)));

    if tree.len() <= opts.backend_max_size {
        let mut r = CheckReport::new();
        let input = DVector::from_fn(tree.len(), |i, _| if i == root { 1.0 } else { 0.0 });
        let mut worst = 0.0f64;
        for &s in &opts.backend_ancillas {
            let a = pe_distribution(&sd, &input, s, true)?;
            let b = gate_level_pe(&op, &input, s)?;
            let (ja, jb) = (
                a.joint.as_deref().unwrap_or_default(),
                b.joint.as_deref().unwrap_or_default(),
            );
            worst = worst.max(total_variation(ja, jb));
        }
        r.record("spectral_vs_gate_level_tv", worst, opts.backend_tol);
        out.push(("backend_equivalence", r));
    }
    Ok(out)
}

/// Runs all suites over `corpus`. Errors with "no trees" on an empty corpus.
pub fn verify_all(corpus: &[CorpusEntry], opts: &VerifyOptions) -> Result<VerifyReport> {
    if corpus.is_empty() {
        return Err(Error::InvalidArgument("no trees".into()));
    }
    let per_tree: Vec<Vec<(&'static str, CheckReport)>> = corpus
        .par_iter()
        .map(|e| verify_tree(e, opts))
        .collect::<Result<_>>()?;
    let mut suites: Vec<SuiteReport> = SUITES
        .iter()
        .map(|&name| SuiteReport {
            name: name.to_string(),
            trees_checked: 0,
            report: CheckReport::new(),
        })
        .collect();
    let mut failing_trees = Vec::new();
    for (e, reports) in corpus.iter().zip(per_tree) {
        let mut failed = false;
        for (name, report) in reports {
            failed |= !report.passed();
            let suite = suites
                .iter_mut()
                .find(|s| s.name == name)
                .expect("suite names are fixed");
            suite.trees_checked += 1;
            suite.report.merge(report);
        }
        if failed {
            failing_trees.push(e.name.clone());
        }
    }
    let passed = suites.iter().all(|s| s.report.passed());
    Ok(VerifyReport {
        trees: corpus.len(),
        suites,
        failing_trees,
        passed,
    })
}

// ---------------------------------------------------------------------------
// Grover scaling

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroverRow {
    pub n: usize,
    pub k: usize,
    pub trials: u64,
    pub mean_walk_queries: f64,
    pub stderr: f64,
    pub mean_guesses: f64,
    pub success_rate: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroverTable {
    pub rows: Vec<GroverRow>,
    /// Least-squares slope of `ln(mean walk queries)` on `ln N`.
    pub slope: f64,
    pub intercept: f64,
}

/// Least-squares fit `y = a + b x`; returns `(b, a)`.
pub fn fit_line(xs: &[f64], ys: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let b = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    (b, my - b * mx)
}

/// Mean walk queries of the doubling search on `star(N, k)` for each `N`.
pub fn grover_scaling(
    n_list: &[usize],
    k: usize,
    trials: u64,
    seed: u64,
    cfg: &EstimateResConfig,
) -> Result<GroverTable> {
    if n_list.is_empty() || trials == 0 {
        return Err(Error::InvalidArgument(
            "need at least one N and one trial".into(),
        ));
    }
    if k == 0 || n_list.iter().any(|&n| n < k) {
        return Err(Error::InvalidArgument(format!(
            "need N ≥ k ≥ 1; got k = {k}, N = {n_list:?}"
        )));
    }
    let mut rows = Vec::with_capacity(n_list.len());
    for &n in n_list {
        let (tree, f) = build_star(n, k)?;
        let engine = Engine::new(&tree, *cfg)?;
        let runs: Vec<RunRecord> = (0..trials)
            .into_par_iter()
            .map(|i| {
                engine.k_doubling_find(
                    &f,
                    &mut stream(seed, domain::GROVER, ((n as u64) << 24) + i),
                )
            })
            .collect::<Result<_>>()?;
        let w: Vec<f64> = runs.iter().map(|r| r.walk_queries as f64).collect();
        let t = trials as f64;
        let mean = w.iter().sum::<f64>() / t;
        let var = if trials > 1 {
            w.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (t - 1.0)
        } else {
            0.0
        };
        let successes = runs
            .iter()
            .filter(|r| matches!(r.outcome, Outcome::Vertex(v) if f.peek(v)))
            .count();
        rows.push(GroverRow {
            n,
            k,
            trials,
            mean_walk_queries: mean,
            stderr: (var / t).sqrt(),
            mean_guesses: runs.iter().map(|r| r.guesses as f64).sum::<f64>() / t,
            success_rate: successes as f64 / t,
        });
    }
    let xs: Vec<f64> = rows.iter().map(|r| (r.n as f64).ln()).collect();
    let ys: Vec<f64> = rows.iter().map(|r| r.mean_walk_queries.ln()).collect();
    let (slope, intercept) = fit_line(&xs, &ys);
    Ok(GroverTable {
        rows,
        slope,
        intercept,
    })
}

// ---------------------------------------------------------------------------
// experiment descriptions

/// Where a tree comes from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum TreeSource {
    File {
        path: PathBuf,
    },
    Star {
        leaves: usize,
        marked: usize,
    },
    Path {
        edges: usize,
        marked_leaf: bool,
    },
    Random {
        size: usize,
        degree: usize,
        mark_prob: f64,
        seed: u64,
    },
}

impl TreeSource {
    /// Parses `star:N:K`, `path:N[:unmarked]`, `random:SIZE:D:P:SEED`, or a file path.
    pub fn parse(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split(':').collect();
        let bad = || Error::InvalidArgument(format!("cannot parse tree source {s:?}"));
        let num = |i: usize| {
            parts
                .get(i)
                .ok_or_else(bad)?
                .parse::<usize>()
                .map_err(|_| bad())
        };
        match parts[0] {
            "star" if parts.len() == 3 => Ok(TreeSource::Star {
                leaves: num(1)?,
                marked: num(2)?,
            }),
            "path" if parts.len() == 2 || parts.len() == 3 => {
                let marked_leaf = match parts.get(2) {
                    None | Some(&"marked") => true,
                    Some(&"unmarked") => false,
                    _ => return Err(bad()),
                };
                Ok(TreeSource::Path {
                    edges: num(1)?,
                    marked_leaf,
                })
            }
            "random" if parts.len() == 5 => Ok(TreeSource::Random {
                size: num(1)?,
                degree: num(2)?,
                mark_prob: parts[3].parse().map_err(|_| bad())?,
                seed: parts[4].parse().map_err(|_| bad())?,
            }),
            _ => Ok(TreeSource::File {
                path: PathBuf::from(s),
            }),
        }
    }

    pub fn load(&self) -> Result<(Tree, MarkingOracle)> {
        match self {
            TreeSource::File { path } => read_tree_json(path).map(|(t, f, _)| (t, f)),
            TreeSource::Star { leaves, marked } => build_star(*leaves, *marked),
            TreeSource::Path { edges, marked_leaf } => build_path(*edges, *marked_leaf),
            TreeSource::Random {
                size,
                degree,
                mark_prob,
                seed,
            } => build_random_tree(*size, *degree, *mark_prob, *seed),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "kebab-case")]
pub enum Command {
    GenTree {
        tree: TreeSource,
    },
    Resistance {
        tree: TreeSource,
    },
    Spectrum {
        tree: TreeSource,
        eta: Option<f64>,
    },
    EstimateRes {
        tree: TreeSource,
        #[serde(default)]
        vertex: usize,
    },
    FindMarked {
        tree: TreeSource,
    },
    FindAll {
        tree: TreeSource,
    },
    Detect {
        tree: TreeSource,
    },
    DescentSim {
        tree: TreeSource,
    },
    GroverScaling {
        n_list: Vec<usize>,
        k: usize,
    },
    VerifyAll {
        #[serde(default)]
        corpus: CorpusSpec,
        #[serde(default)]
        options: VerifyOptions,
    },
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OutputFormat {
    #[default]
    Json,
    Csv,
}

/// A complete, reproducible description of one run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub command: Command,
    #[serde(default)]
    pub config: EstimateResConfig,
    #[serde(default)]
    pub seed: u64,
    /// Repetitions of the command (Monte Carlo trajectories for `descent-sim`).
    #[serde(default = "one")]
    pub trials: u64,
    #[serde(default)]
    pub format: OutputFormat,
    #[serde(default)]
    pub output: Option<PathBuf>,
    /// Worker threads; `0` uses every core. Does not affect results.
    #[serde(default)]
    pub jobs: usize,
}

fn one() -> u64 {
    1
}

impl ExperimentSpec {
    pub fn new(command: Command) -> Self {
        ExperimentSpec {
            command,
            config: EstimateResConfig::default(),
            seed: 0,
            trials: 1,
            format: OutputFormat::Json,
            output: None,
            jobs: 0,
        }
    }
}

/// Result of [`run_experiment`]: nested JSON plus a flat table for CSV.
#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentOutput {
    pub json: Value,
    pub rows: Vec<Map<String, Value>>,
    /// False when a verification or bound check failed.
    pub passed: bool,
}

impl ExperimentOutput {
    /// Serializes in `format` with full float precision.
    pub fn write(&self, format: OutputFormat, mut w: impl Write) -> Result<()> {
        match format {
            OutputFormat::Json => {
                serde_json::to_writer_pretty(&mut w, &self.json)?;
                writeln!(w)?;
            }
            OutputFormat::Csv => {
                let mut csv = csv::Writer::from_writer(w);
                if let Some(first) = self.rows.first() {
                    csv.write_record(first.keys())
                        .map_err(|e| Error::InvalidArgument(format!("csv: {e}")))?;
                }
                for row in &self.rows {
                    csv.write_record(row.values().map(cell))
                        .map_err(|e| Error::InvalidArgument(format!("csv: {e}")))?;
                }
                csv.flush()?;
            }
        }
        Ok(())
    }
}

fn cell(v: &Value) -> String {
    match v {
        Value::String(s) => s.clone(),
        Value::Null => String::new(),
        other => other.to_string(),
    }
}

fn row(value: Value) -> Map<String, Value> {
    match value {
        Value::Object(m) => m,
        _ => unreachable!("rows are built from object literals"),
    }
}

/// Finite numbers as JSON numbers, `∞` as the string `"inf"`.
fn real(x: f64) -> Value {
    if x.is_finite() {
        json!(x)
    } else if x > 0.0 {
        json!("inf")
    } else {
        json!("nan")
    }
}

fn run_row(trial: u64, rec: &RunRecord) -> Map<String, Value> {
    let outcome = match &rec.outcome {
        Outcome::Estimate(x) => real(*x),
        other => json!(other.to_string()),
    };
    row(json!({
        "trial": trial,
        "outcome": outcome,
        "walk_queries": rec.walk_queries,
        "f_queries": rec.f_queries,
        "h_queries": rec.h_queries,
        "steps": rec.steps,
        "rounds": rec.rounds,
        "guesses": rec.guesses,
    }))
}

fn runs_output(rows: Vec<Map<String, Value>>) -> ExperimentOutput {
    ExperimentOutput {
        json: json!({ "runs": rows.clone() }),
        rows,
        passed: true,
    }
}

/// Executes `spec`. Identical specs give identical outputs.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<ExperimentOutput> {
    with_jobs(spec.jobs, || run_inner(spec))?
}

fn run_inner(spec: &ExperimentSpec) -> Result<ExperimentOutput> {
    let trials = spec.trials.max(1);
    let runs = |tree: &Tree,
                f: &MarkingOracle,
                job: &(dyn Fn(&Engine, &MarkingOracle, &mut ChaCha8Rng) -> Result<RunRecord>
                      + Sync)| {
        let engine = Engine::new(tree, spec.config)?;
        let records: Vec<RunRecord> = (0..trials)
            .into_par_iter()
            .map(|i| job(&engine, f, &mut stream(spec.seed, domain::TRIALS, i)))
            .collect::<Result<_>>()?;
        Ok::<_, Error>(runs_output(
            records
                .iter()
                .enumerate()
                .map(|(i, r)| run_row(i as u64, r))
                .collect(),
        ))
    };

    match &spec.command {
        Command::GenTree { tree } => {
            let (t, f) = tree.load()?;
            let file = tree_to_json(&t, &f);
            let rows = file
                .vertices
                .iter()
                .map(|v| {
                    row(json!({ "id": v.id, "children": v.children.len(), "marked": v.marked }))
                })
                .collect();
            Ok(ExperimentOutput {
                json: serde_json::to_value(&file)?,
                rows,
                passed: true,
            })
        }
        Command::Resistance { tree } => {
            let (t, f) = tree.load()?;
            let marked = shallowest_marked_uncounted(&t, &f);
            let profile = resistance_profile(&t, &marked);
            let brute = resistance_bruteforce(&t, &marked)?;
            let kappa = solution_tree(&t, &marked)
                .ok()
                .map(|st| kappa_assignment(&t, &st, &profile));
            let rows: Vec<Map<String, Value>> = t
                .vertices()
                .map(|v| {
                    row(json!({
                        "vertex": v,
                        "eta_bar": real(profile.eta_bar(v)),
                        "kappa": kappa.as_ref().map(|k| k.get(v)).unwrap_or(0.0),
                        "marked": marked.contains(v),
                    }))
                })
                .collect();
            let json = json!({
                "eta_bar": real(profile.root()),
                "laplacian": real(brute),
                "marked": marked.members(),
                "vertices": rows.clone(),
            });
            Ok(ExperimentOutput {
                json,
                rows,
                passed: true,
            })
        }
        Command::Spectrum { tree, eta } => {
            let (t, f) = tree.load()?;
            let marked = shallowest_marked_uncounted(&t, &f);
            let eta = match eta {
                Some(e) => *e,
                None => resistance_profile(&t, &marked).root(),
            };
            if !(eta.is_finite() && eta > 0.0) {
                return Err(Error::InvalidArgument(format!(
                    "η = {eta}; pass an explicit positive η"
                )));
            }
            let op = WalkOperator::new(&t, &marked, eta)?;
            let sd = op.decompose()?;
            let root = DVector::from_fn(t.len(), |i, _| if i == t.root() { 1.0 } else { 0.0 });
            let weights = sd.amplitudes(&root);
            let rows: Vec<Map<String, Value>> = sd
                .eigenphases()
                .iter()
                .zip(&weights)
                .enumerate()
                .map(|(j, (theta, w))| {
                    row(json!({ "index": j, "theta": theta, "root_weight": w.norm_sqr() }))
                })
                .collect();
            let json = json!({
                "eta": eta,
                "reconstruction_error": sd.reconstruction_error(),
                "eigenphases": rows.clone(),
            });
            Ok(ExperimentOutput {
                json,
                rows,
                passed: true,
            })
        }
        Command::EstimateRes { tree, vertex } => {
            let (t, f) = tree.load()?;
            if *vertex >= t.len() {
                return Err(Error::InvalidArgument(format!(
                    "vertex {vertex} not in the tree"
                )));
            }
            runs(&t, &f, &|e: &Engine,
                           f: &MarkingOracle,
                           rng: &mut ChaCha8Rng| {
                Ok(e.estimate_res(f, *vertex, rng)?.1)
            })
        }
        Command::FindMarked { tree } => {
            let (t, f) = tree.load()?;
            runs(&t, &f, &|e: &Engine,
                           f: &MarkingOracle,
                           rng: &mut ChaCha8Rng| {
                e.find_marked(f, 1.0, rng)
            })
        }
        Command::FindAll { tree } => {
            let (t, f) = tree.load()?;
            runs(&t, &f, &|e: &Engine,
                           f: &MarkingOracle,
                           rng: &mut ChaCha8Rng| {
                Ok(e.find_all(f, rng)?.1)
            })
        }
        Command::Detect { tree } => {
            let (t, f) = tree.load()?;
            runs(&t, &f, &|e: &Engine,
                           f: &MarkingOracle,
                           rng: &mut ChaCha8Rng| {
                Ok(e.detect_existence(f, rng)?.1)
            })
        }
        Command::DescentSim { tree } => {
            let (t, f) = tree.load()?;
            let dc = DescentChain::new(&t, &f)?;
            let ht = exact_hitting_times(&dc);
            let bound = descent_bound(&dc, &ht);
            let mc =
                simulate_descent(&dc, trials, stream(spec.seed, domain::MONTE_CARLO, 0).gen())?;
            let r = row(json!({
                "e_root_exact": ht.root(),
                "e_root_mc": mc.mean,
                "mc_stderr": mc.stderr,
                "trials": mc.trials,
                "bound_log2": bound.bound_log2,
                "bound_ln": bound.bound_ln,
                "margin_log2": bound.margin_log2,
                "margin_ln": bound.margin_ln,
                "violated": bound.violated,
            }));
            Ok(ExperimentOutput {
                json: Value::Object(r.clone()),
                rows: vec![r],
                passed: !bound.violated,
            })
        }
        Command::GroverScaling { n_list, k } => {
            let table = grover_scaling(n_list, *k, trials, spec.seed, &spec.config)?;
            let rows = table
                .rows
                .iter()
                .map(|r| row(serde_json::to_value(r).expect("plain struct")))
                .collect();
            Ok(ExperimentOutput {
                json: serde_json::to_value(&table)?,
                rows,
                passed: true,
            })
        }
        Command::VerifyAll { corpus, options } => {
            let entries = build_corpus(corpus)?;
            let report = verify_all(&entries, options)?;
            let rows = report
                .suites
                .iter()
                .flat_map(|s| {
                    s.report.checks.iter().map(move |c| {
                        row(json!({
                            "suite": s.name,
                            "check": c.name,
                            "max_residual": c.max_residual,
                            "tolerance": c.tolerance,
                            "passed": c.passed,
                        }))
                    })
                })
                .collect();
            Ok(ExperimentOutput {
                json: serde_json::to_value(&report)?,
                rows,
                passed: report.passed,
            })
        }
    }
}
