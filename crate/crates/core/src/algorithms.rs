//! Effective-resistance estimation, marked-vertex search and the wrappers built
//! on them, with query accounting.
//!
//! Every quantum subroutine is simulated through exact outcome distributions:
//! phase estimation from a spectral decomposition of the walk operator on the
//! current subtree, amplitude estimation from its closed-form outcome law.
//! Only the algorithm-level randomness is sampled.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::fmt;
use std::sync::{Arc, Mutex};

use nalgebra::DVector;
use rand::distributions::{Distribution, WeightedIndex};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimation::{
    pe_distribution_with_register, pe_kernel, register_for, AmplitudeEstimator,
};
use crate::tree::{shallowest_marked_uncounted, MarkedSet, MarkingOracle, Tree, VertexId};
use crate::walk::WalkOperator;

/// Constants of the resistance estimator and of the search built on it.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EstimateResConfig {
    /// Failure probability `δ₀`.
    pub delta0: f64,
    /// Repetition constant `γ₁`; each loop runs `⌈γ₁ log₂(1/δ₀)⌉` estimates.
    pub gamma1: f64,
    /// Amplitude-estimation precision `γ₂`; `None` means `min(1/16, 1/(8√n))`.
    pub gamma2: Option<f64>,
    /// Multiplier `S` of the `η` sweep.
    pub step: f64,
    /// Amplitude-estimation error parameter `Δ`.
    pub big_delta: f64,
    /// Amplitude-estimation constant `c`: `2^s ≥ c/γ₂`.
    pub ae_constant: f64,
    /// Constant in `δ = c_δ / log₂(k̂(η̃ + 1))` for the search.
    pub delta_constant: f64,
    /// Guard on the number of search iterations.
    pub max_rounds: u64,
}

impl Default for EstimateResConfig {
    fn default() -> Self {
        EstimateResConfig {
            delta0: 0.05,
            gamma1: 4.0,
            gamma2: None,
            step: 2.0,
            big_delta: 0.1,
            ae_constant: 1.0,
            delta_constant: 0.25,
            max_rounds: 10_000,
        }
    }
}

impl EstimateResConfig {
    /// `γ₂` for depth bound `n`.
    pub fn gamma2_for(&self, n: usize) -> f64 {
        self.gamma2
            .unwrap_or_else(|| (1.0 / 16.0f64).min(1.0 / (8.0 * (n.max(1) as f64).sqrt())))
    }

    pub fn repetitions(&self) -> usize {
        (self.gamma1 * (1.0 / self.delta0).log2()).ceil().max(1.0) as usize
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidArgument(msg));
        if !(self.delta0 > 0.0 && self.delta0 < 1.0) {
            return bad(format!("δ₀ = {} outside (0, 1)", self.delta0));
        }
        if !(self.gamma1 > 2.0) {
            return bad(format!("γ₁ = {} must exceed 2", self.gamma1));
        }
        if !(self.ae_constant > 0.0) {
            return bad(format!("c = {} must be positive", self.ae_constant));
        }
        let g2 = self.gamma2_for(n);
        let limit = 1.0 / (8.0 * self.ae_constant * (n.max(1) as f64).sqrt());
        if !(g2 > 0.0 && g2 < limit + 1e-15) {
            return bad(format!(
                "γ₂ = {g2} must lie in (0, 1/(8c√n)] = (0, {limit}]"
            ));
        }
        if !(self.step > 1.0 && self.step <= 2.0) {
            return bad(format!("S = {} outside (1, 2]", self.step));
        }
        if !(self.big_delta > 0.0 && self.big_delta < 0.125) {
            return bad(format!("Δ = {} outside (0, 1/8)", self.big_delta));
        }
        if !(self.delta_constant > 0.0) {
            return bad(format!("c_δ = {} must be positive", self.delta_constant));
        }
        Ok(())
    }
}

/// Result of one run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Vertex(VertexId),
    NoMarkedVertex,
    Estimate(f64),
    Infinite,
    Exists(bool),
    Found(Vec<VertexId>),
}

impl fmt::Display for Outcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Outcome::Vertex(v) => write!(f, "{v}"),
            Outcome::NoMarkedVertex => write!(f, "none"),
            Outcome::Estimate(x) => write!(f, "{x:?}"),
            Outcome::Infinite => write!(f, "inf"),
            Outcome::Exists(b) => write!(f, "{b}"),
            Outcome::Found(vs) => {
                let items: Vec<String> = vs.iter().map(|v| v.to_string()).collect();
                write!(f, "{}", items.join(" "))
            }
        }
    }
}

/// Query counts and outcome of one run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    /// Controlled walk-operator applications.
    pub walk_queries: u64,
    pub f_queries: u64,
    pub h_queries: u64,
    /// Vertices moved to by a vertex measurement.
    pub steps: u64,
    /// Search-loop iterations.
    pub rounds: u64,
    /// Guesses `k̂` tried by the doubling search.
    pub guesses: u64,
    pub outcome: Outcome,
}

impl Default for RunRecord {
    fn default() -> Self {
        RunRecord {
            walk_queries: 0,
            f_queries: 0,
            h_queries: 0,
            steps: 0,
            rounds: 0,
            guesses: 0,
            outcome: Outcome::NoMarkedVertex,
        }
    }
}

impl RunRecord {
    fn absorb(&mut self, other: &RunRecord) {
        self.walk_queries += other.walk_queries;
        self.f_queries += other.f_queries;
        self.h_queries += other.h_queries;
        self.steps += other.steps;
        self.rounds += other.rounds;
        self.guesses += other.guesses;
    }

    /// Each walk step evaluates `f` and `h` once in each of its two reflections.
    fn add_walks(&mut self, walks: u64) {
        self.walk_queries += walks;
        self.f_queries += 2 * walks;
        self.h_queries += 2 * walks;
    }
}

/// The subtree `T(v)` with its local marked set.
struct Local {
    tree: Tree,
    map: Vec<VertexId>,
    marked: MarkedSet,
}

type Key = (VertexId, u64, u64);
/// `(P(0), P(u | 0))` for one phase-estimation run.
type ZeroLaw = Arc<(f64, Vec<f64>)>;

#[derive(Default)]
struct Caches {
    /// `(θ_j, |⟨v_j|root⟩|²)` per walk.
    root_spectra: HashMap<Key, Arc<Vec<(f64, f64)>>>,
    /// Per walk and register size.
    pe: HashMap<(Key, u64), ZeroLaw>,
}

const CACHE_LIMIT: usize = 4096;

/// Runs the algorithms on one tree, caching spectral data across runs.
///
/// The caches key on the subtree root, `η`, and the local marked set, so the
/// same engine stays valid when the marking changes between runs.
pub struct Engine<'t> {
    tree: &'t Tree,
    cfg: EstimateResConfig,
    caches: Mutex<Caches>,
}

impl<'t> Engine<'t> {
    pub fn new(tree: &'t Tree, cfg: EstimateResConfig) -> Result<Self> {
        cfg.validate(tree.bounds().depth)?;
        Ok(Engine {
            tree,
            cfg,
            caches: Mutex::new(Caches::default()),
        })
    }

    pub fn tree(&self) -> &Tree {
        self.tree
    }

    pub fn config(&self) -> &EstimateResConfig {
        &self.cfg
    }

    fn local(&self, f: &MarkingOracle, v: VertexId) -> Local {
        let (tree, map) = self.tree.subtree(v);
        let local_f = MarkingOracle::new(map.iter().map(|&g| f.peek(g)).collect());
        let marked = shallowest_marked_uncounted(&tree, &local_f);
        Local { tree, map, marked }
    }

    fn key(&self, v: VertexId, local: &Local, eta: f64) -> Key {
        (v, eta.to_bits(), local.marked.fingerprint())
    }

    fn root_spectrum(&self, v: VertexId, local: &Local, eta: f64) -> Result<Arc<Vec<(f64, f64)>>> {
        let key = self.key(v, local, eta);
        if let Some(hit) = self.caches.lock().unwrap().root_spectra.get(&key) {
            return Ok(hit.clone());
        }
        let op = WalkOperator::new(&local.tree, &local.marked, eta)?;
        let sd = op.decompose()?;
        let root = DVector::from_fn(sd.dim(), |i, _| if i == 0 { 1.0 } else { 0.0 });
        let spectrum: Vec<(f64, f64)> = sd
            .eigenphases()
            .iter()
            .zip(sd.amplitudes(&root))
            .map(|(&t, l)| (t, l.norm_sqr()))
            .collect();
        let spectrum = Arc::new(spectrum);
        let mut caches = self.caches.lock().unwrap();
        if caches.root_spectra.len() >= CACHE_LIMIT {
            caches.root_spectra.clear();
        }
        caches.root_spectra.insert(key, spectrum.clone());
        Ok(spectrum)
    }

    fn root_pe(&self, v: VertexId, local: &Local, eta: f64, m: u64) -> Result<ZeroLaw> {
        let key = (self.key(v, local, eta), m);
        if let Some(hit) = self.caches.lock().unwrap().pe.get(&key) {
            return Ok(hit.clone());
        }
        let op = WalkOperator::new(&local.tree, &local.marked, eta)?;
        let sd = op.decompose()?;
        let root = DVector::from_fn(sd.dim(), |i, _| if i == 0 { 1.0 } else { 0.0 });
        let out = pe_distribution_with_register(&sd, &root, m, false)?;
        let entry = Arc::new((out.p_zero, out.conditional_zero));
        let mut caches = self.caches.lock().unwrap();
        if caches.pe.len() >= CACHE_LIMIT {
            caches.pe.clear();
        }
        caches.pe.insert(key, entry.clone());
        Ok(entry)
    }

    /// Estimates `η̄(v)` on the subtree `T(v)`; `∞` when no marked vertex is
    /// detected. A marked `v` has `η̄(v) = 0`.
    pub fn estimate_res<R: Rng + ?Sized>(
        &self,
        f: &MarkingOracle,
        v: VertexId,
        rng: &mut R,
    ) -> Result<(f64, RunRecord)> {
        let mut rec = RunRecord::default();
        rec.f_queries += 1;
        let eta = if f.query(v) {
            0.0
        } else {
            self.estimate_unmarked(f, v, &self.cfg, &mut rec, rng)?
        };
        rec.outcome = if eta.is_finite() {
            Outcome::Estimate(eta)
        } else {
            Outcome::Infinite
        };
        Ok((eta, rec))
    }

    fn estimate_unmarked<R: Rng + ?Sized>(
        &self,
        f: &MarkingOracle,
        v: VertexId,
        cfg: &EstimateResConfig,
        rec: &mut RunRecord,
        rng: &mut R,
    ) -> Result<f64> {
        let bounds = self.tree.bounds();
        let n = bounds.depth.saturating_sub(self.tree.depth(v)).max(1) as f64;
        let d = bounds.degree.max(1) as f64;
        let t = bounds.size as f64;
        let reps = cfg.repetitions();
        let m_ae = register_for(cfg.ae_constant / cfg.gamma2_for(bounds.depth))?;
        let local = self.local(f, v);

        let mut power = 1.0;
        loop {
            let eta = (power / d).min(n);
            let m_pe = register_for((t * eta / cfg.big_delta.powi(3)).sqrt())?;
            let p0: f64 = self
                .root_spectrum(v, &local, eta)?
                .iter()
                .map(|&(theta, w)| w * pe_kernel(0, theta, m_pe).norm_sqr())
                .sum();
            // Q = A S₀ A† S_good with A the inner estimation: M_ae − 1 uses of Q plus A
            rec.add_walks(reps as u64 * (2 * (m_ae - 1) + 1) * (m_pe - 1));

            let ae = AmplitudeEstimator::with_register(p0.clamp(0.0, 1.0), m_ae)?;
            let mut counts: HashMap<u64, usize> = HashMap::new();
            for _ in 0..reps {
                *counts.entry(ae.sample_index(rng)).or_default() += 1;
            }
            let angle = |y: u64| PI * y as f64 / m_ae as f64;
            let in_band: Vec<(u64, usize)> = counts
                .into_iter()
                .filter(|&(y, _)| (angle(y) - PI / 4.0).abs() <= PI / 16.0 + 1e-12)
                .collect();
            let hits: usize = in_band.iter().map(|&(_, c)| c).sum();
            if 2 * hits > reps {
                let (y, _) = in_band
                    .into_iter()
                    .max_by(|a, b| {
                        a.1.cmp(&b.1).then_with(|| {
                            let da = (angle(a.0) - PI / 4.0).abs();
                            let db = (angle(b.0) - PI / 4.0).abs();
                            db.total_cmp(&da).then(b.0.cmp(&a.0))
                        })
                    })
                    .expect("majority implies a sample");
                let beta = angle(y);
                return Ok(eta / beta.tan().powi(2));
            }
            if eta >= n {
                return Ok(f64::INFINITY);
            }
            power *= cfg.step;
        }
    }

    /// `δ = c_δ / max(1, log₂(k̂(η̃ + 1)))`.
    pub fn search_delta(&self, k_hat: f64, eta_tilde: f64) -> f64 {
        self.cfg.delta_constant / (k_hat * (eta_tilde + 1.0)).log2().max(1.0)
    }

    /// Searches for a marked vertex, descending by vertex measurements after
    /// phase estimation at the estimated resistance. `k_hat` tunes `δ`.
    pub fn find_marked<R: Rng + ?Sized>(
        &self,
        f: &MarkingOracle,
        k_hat: f64,
        rng: &mut R,
    ) -> Result<RunRecord> {
        let mut rec = RunRecord::default();
        let t = self.tree.bounds().size;
        let mut v = self.tree.root();
        rec.f_queries += 1;
        if f.query(v) {
            rec.outcome = Outcome::Vertex(v);
            return Ok(rec);
        }
        let mut eta_tilde = self.estimate_unmarked(f, v, &self.cfg, &mut rec, rng)?;
        while eta_tilde.is_finite() {
            if rec.rounds >= self.cfg.max_rounds {
                break;
            }
            rec.rounds += 1;
            let local = self.local(f, v);
            let delta = self.search_delta(k_hat, eta_tilde);
            let m = register_for((t as f64 * eta_tilde).sqrt() / delta.powi(3))?;
            let entry = self.root_pe(v, &local, eta_tilde, m)?;
            rec.add_walks(m - 1);
            let (p0, conditional) = (&entry.0, &entry.1);
            if !(rng.gen::<f64>() < *p0) {
                continue;
            }
            let u = WeightedIndex::new(conditional.iter())
                .map_err(|e| Error::Numerical(format!("vertex distribution: {e}")))?
                .sample(rng);
            if local.map[u] != v {
                v = local.map[u];
                rec.steps += 1;
            }
            rec.f_queries += 1;
            if f.query(v) {
                rec.outcome = Outcome::Vertex(v);
                return Ok(rec);
            }
            eta_tilde = self.estimate_unmarked(f, v, &self.cfg, &mut rec, rng)?;
        }
        rec.outcome = Outcome::NoMarkedVertex;
        Ok(rec)
    }

    /// `true` iff the resistance estimate at the root is finite.
    pub fn detect_existence<R: Rng + ?Sized>(
        &self,
        f: &MarkingOracle,
        rng: &mut R,
    ) -> Result<(bool, RunRecord)> {
        let (eta, mut rec) = self.estimate_res(f, self.tree.root(), rng)?;
        let found = eta.is_finite();
        rec.outcome = Outcome::Exists(found);
        Ok((found, rec))
    }

    /// Doubles `k̂` from 1 while `log₂ k̂ ≤ n`, then falls back to
    /// [`Engine::classical_descent`].
    pub fn k_doubling_find<R: Rng + ?Sized>(
        &self,
        f: &MarkingOracle,
        rng: &mut R,
    ) -> Result<RunRecord> {
        let mut rec = RunRecord::default();
        let n = self.tree.bounds().depth.max(1) as i32;
        for e in 0..=n {
            rec.guesses += 1;
            let run = self.find_marked(f, 2f64.powi(e), rng)?;
            rec.absorb(&run);
            if let Outcome::Vertex(v) = run.outcome {
                rec.outcome = Outcome::Vertex(v);
                return Ok(rec);
            }
        }
        let run = self.classical_descent(f, rng)?;
        rec.absorb(&run);
        rec.outcome = run.outcome;
        Ok(rec)
    }

    /// Descends by running the resistance estimator on each child in turn and
    /// moving into the first one with a finite estimate. Uses `δ₀ ≤ 1/n`.
    pub fn classical_descent<R: Rng + ?Sized>(
        &self,
        f: &MarkingOracle,
        rng: &mut R,
    ) -> Result<RunRecord> {
        let n = self.tree.bounds().depth.max(1) as f64;
        let mut cfg = self.cfg;
        cfg.delta0 = cfg.delta0.min(1.0 / n);
        self.descend(f, &cfg, rng)
    }

    fn descend<R: Rng + ?Sized>(
        &self,
        f: &MarkingOracle,
        cfg: &EstimateResConfig,
        rng: &mut R,
    ) -> Result<RunRecord> {
        let mut rec = RunRecord::default();
        let mut v = self.tree.root();
        rec.f_queries += 1;
        if f.query(v) {
            rec.outcome = Outcome::Vertex(v);
            return Ok(rec);
        }
        if !self
            .estimate_unmarked(f, v, cfg, &mut rec, rng)?
            .is_finite()
        {
            rec.outcome = Outcome::NoMarkedVertex;
            return Ok(rec);
        }
        'descent: loop {
            rec.rounds += 1;
            rec.h_queries += 1;
            for &c in self.tree.children(v) {
                rec.f_queries += 1;
                if f.query(c) {
                    rec.steps += 1;
                    rec.outcome = Outcome::Vertex(c);
                    return Ok(rec);
                }
                if self
                    .estimate_unmarked(f, c, cfg, &mut rec, rng)?
                    .is_finite()
                {
                    v = c;
                    rec.steps += 1;
                    continue 'descent;
                }
            }
            rec.outcome = Outcome::NoMarkedVertex;
            return Ok(rec);
        }
    }

    /// Repeats the search, unmarking each returned vertex in a private copy of
    /// `f`, until no marked vertex is reported. Each round is a
    /// [`Engine::k_doubling_find`], since the number of remaining marked
    /// vertices is unknown.
    pub fn find_all<R: Rng + ?Sized>(
        &self,
        f: &MarkingOracle,
        rng: &mut R,
    ) -> Result<(Vec<VertexId>, RunRecord)> {
        let mut overlay = f.clone();
        let mut found = Vec::new();
        let mut rec = RunRecord::default();
        loop {
            let run = self.k_doubling_find(&overlay, rng)?;
            rec.absorb(&run);
            match run.outcome {
                Outcome::Vertex(v) => {
                    overlay.unmark(v);
                    found.push(v);
                }
                _ => break,
            }
        }
        rec.outcome = Outcome::Found(found.clone());
        Ok((found, rec))
    }
}

/// One-shot [`Engine::estimate_res`].
pub fn estimate_res<R: Rng + ?Sized>(
    tree: &Tree,
    f: &MarkingOracle,
    v: VertexId,
    cfg: EstimateResConfig,
    rng: &mut R,
) -> Result<(f64, RunRecord)> {
    Engine::new(tree, cfg)?.estimate_res(f, v, rng)
}

/// One-shot [`Engine::find_marked`] with `k̂ = 1`.
pub fn find_marked<R: Rng + ?Sized>(
    tree: &Tree,
    f: &MarkingOracle,
    cfg: EstimateResConfig,
    rng: &mut R,
) -> Result<RunRecord> {
    Engine::new(tree, cfg)?.find_marked(f, 1.0, rng)
}

/// One-shot [`Engine::detect_existence`].
pub fn detect_existence<R: Rng + ?Sized>(
    tree: &Tree,
    f: &MarkingOracle,
    cfg: EstimateResConfig,
    rng: &mut R,
) -> Result<(bool, RunRecord)> {
    Engine::new(tree, cfg)?.detect_existence(f, rng)
}

/// One-shot [`Engine::find_all`].
pub fn find_all<R: Rng + ?Sized>(
    tree: &Tree,
    f: &MarkingOracle,
    cfg: EstimateResConfig,
    rng: &mut R,
) -> Result<(Vec<VertexId>, RunRecord)> {
    Engine::new(tree, cfg)?.find_all(f, rng)
}

/// One-shot [`Engine::k_doubling_find`].
pub fn k_doubling_find<R: Rng + ?Sized>(
    tree: &Tree,
    f: &MarkingOracle,
    cfg: EstimateResConfig,
    rng: &mut R,
) -> Result<RunRecord> {
    Engine::new(tree, cfg)?.k_doubling_find(f, rng)
}

/// One-shot [`Engine::classical_descent`].
pub fn classical_descent<R: Rng + ?Sized>(
    tree: &Tree,
    f: &MarkingOracle,
    cfg: EstimateResConfig,
    rng: &mut R,
) -> Result<RunRecord> {
    Engine::new(tree, cfg)?.classical_descent(f, rng)
}
