//! Exact measurement statistics of phase estimation and amplitude estimation.
//!
//! Phase estimation with `s` ancillas on an eigencomponent `e^{2iθ}` leaves the
//! ancilla register in `Σ_ω a(ω, θ)|ω⟩` with
//! `a(ω, θ) = (1/M) Σ_{t<M} e^{it(2θ − 2πω/M)}`, `M = 2^s`. Everything here is
//! computed from that kernel and a spectral decomposition, except
//! [`gate_level_pe`], which simulates the register literally.

use nalgebra::{Complex, DMatrix, DVector};
use rand::distributions::{Distribution, WeightedIndex};
use rand::Rng;
use rustfft::FftPlanner;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::walk::{SpectralDecomposition, WalkOperator};

type C64 = Complex<f64>;

/// Largest ancilla count accepted by the spectral backend.
pub const MAX_ANCILLAS: u32 = 24;

/// Largest register size `M`; `2^s` for `s = MAX_ANCILLAS`.
pub const MAX_REGISTER: u64 = 1 << MAX_ANCILLAS;

/// Largest `|V|·2^s` for which joint `(ω, v)` distributions are materialized.
pub const MAX_JOINT_SIZE: usize = 1 << 22;

/// Ancilla count and the precision targets it was derived from.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct EstimationConfig {
    pub s: u32,
    pub two_s: u64,
    pub epsilon: f64,
    pub delta: f64,
}

impl EstimationConfig {
    pub fn with_ancillas(s: u32) -> Result<Self> {
        if s == 0 || s > MAX_ANCILLAS {
            return Err(Error::ResourceLimit(format!(
                "ancilla count {s} outside 1..={MAX_ANCILLAS}"
            )));
        }
        let two_s = 1u64 << s;
        Ok(EstimationConfig {
            s,
            two_s,
            epsilon: 1.0 / two_s as f64,
            delta: f64::NAN,
        })
    }

    /// `2^s = ⌈c·√(Tη)/δ³⌉` rounded up to a power of two, `ε = δ/√(Tη)`.
    pub fn for_precision(t: usize, eta: f64, delta: f64, c: f64) -> Result<Self> {
        if !(delta > 0.0 && eta > 0.0 && c > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "need δ, η, c > 0; got {delta}, {eta}, {c}"
            )));
        }
        let scale = (t as f64 * eta).sqrt();
        let mut cfg = Self::with_ancillas(ancillas_for(c * scale / delta.powi(3))?)?;
        cfg.epsilon = delta / scale;
        cfg.delta = delta;
        Ok(cfg)
    }
}

/// Smallest `s ≥ 1` with `2^s ≥ target`.
pub fn ancillas_for(target: f64) -> Result<u32> {
    if !target.is_finite() {
        return Err(Error::ResourceLimit(format!("ancilla target {target}")));
    }
    let mut s = 1;
    while ((1u64 << s) as f64) < target {
        s += 1;
        if s > MAX_ANCILLAS {
            return Err(Error::ResourceLimit(format!(
                "2^s ≥ {target:.3e} needs more than {MAX_ANCILLAS} ancillas"
            )));
        }
    }
    Ok(s)
}

/// Smallest register size `M ≥ max(2, target)`.
///
/// Phase estimation runs with any register size through the Fourier
/// transform over `Z_M`; the `2^s` forms are the special case `M = 2^s`.
pub fn register_for(target: f64) -> Result<u64> {
    if !(target.is_finite() && target <= MAX_REGISTER as f64) {
        return Err(Error::ResourceLimit(format!(
            "register size {target:.3e} exceeds 2^{MAX_ANCILLAS}"
        )));
    }
    Ok((target.ceil() as u64).max(2))
}

fn check_register(m: u64) -> Result<()> {
    if (2..=MAX_REGISTER).contains(&m) {
        Ok(())
    } else {
        Err(Error::ResourceLimit(format!(
            "register size {m} outside 2..=2^{MAX_ANCILLAS}"
        )))
    }
}

/// `a(ω, θ)`, the ancilla amplitude of outcome `ω` for eigenphase `θ`.
pub fn pe_kernel(omega: u64, theta: f64, two_s: u64) -> C64 {
    let m = two_s as f64;
    // half the per-step phase h = θ − πω/M, reduced mod π through an integer
    // numerator so that h near a nonzero multiple of π keeps full precision
    let q = (theta / std::f64::consts::PI - omega as f64 / m).round();
    let j = omega as f64 + q * m;
    let h = theta - std::f64::consts::PI * j / m;
    let ratio = if h == 0.0 {
        1.0
    } else {
        (m * h).sin() / (m * h.sin())
    };
    C64::from_polar(ratio, h * (m - 1.0))
}

/// Outcome statistics of one phase-estimation run.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PEOutcome {
    /// Register size `M`.
    pub register: u64,
    /// `P(ω = 0^s)`.
    pub p_zero: f64,
    /// `P(v | ω = 0^s)`; all zero when `p_zero = 0`.
    pub conditional_zero: Vec<f64>,
    /// `P(ω, v)` row-major over `ω`, when `|V|·2^s ≤ MAX_JOINT_SIZE` was requested.
    pub joint: Option<Vec<f64>>,
}

impl PEOutcome {
    pub fn marginal(&self) -> Option<Vec<f64>> {
        let n = self.conditional_zero.len();
        self.joint
            .as_ref()
            .map(|j| j.chunks(n).map(|row| row.iter().sum()).collect())
    }
}

fn check_input(x: &DVector<f64>) -> Result<()> {
    let norm = x.norm();
    if (norm - 1.0).abs() > 1e-10 {
        return Err(Error::NotNormalized(norm));
    }
    Ok(())
}

fn normalize_conditional(amplitudes: &[C64]) -> (f64, Vec<f64>) {
    let weights: Vec<f64> = amplitudes.iter().map(|a| a.norm_sqr()).collect();
    let total: f64 = weights.iter().sum();
    if total > 0.0 {
        (total, weights.iter().map(|w| w / total).collect())
    } else {
        (0.0, vec![0.0; weights.len()])
    }
}

/// `P(0^s) = Σ_j |λ_j|² sin²(2^s θ_j)/(2^{2s} sin²θ_j)` for `input = Σ_j λ_j v_j`.
pub fn p_zero(sd: &SpectralDecomposition, input: &DVector<f64>, s: u32) -> Result<f64> {
    p_zero_with_register(sd, input, EstimationConfig::with_ancillas(s)?.two_s)
}

/// [`p_zero`] for a register of size `m`.
pub fn p_zero_with_register(
    sd: &SpectralDecomposition,
    input: &DVector<f64>,
    m: u64,
) -> Result<f64> {
    check_input(input)?;
    check_register(m)?;
    Ok(sd
        .amplitudes(input)
        .iter()
        .zip(sd.eigenphases())
        .map(|(l, &t)| l.norm_sqr() * pe_kernel(0, t, m).norm_sqr())
        .sum())
}

/// `Σ_j |λ_j μ_j|²` with `μ_j = a(0, θ_j)`; identical to [`p_zero`], named for
/// its use as the leakage of `Φ⊥` into the `0^s` outcome.
pub fn zero_leakage(sd: &SpectralDecomposition, input: &DVector<f64>, s: u32) -> Result<f64> {
    p_zero(sd, input, s)
}

/// Exact phase-estimation statistics from a spectral decomposition.
///
/// With `joint = true` the full `(ω, v)` table is built, which requires
/// `|V|·2^s ≤ MAX_JOINT_SIZE`.
pub fn pe_distribution(
    sd: &SpectralDecomposition,
    input: &DVector<f64>,
    s: u32,
    joint: bool,
) -> Result<PEOutcome> {
    pe_distribution_with_register(sd, input, EstimationConfig::with_ancillas(s)?.two_s, joint)
}

/// [`pe_distribution`] for a register of size `m`.
pub fn pe_distribution_with_register(
    sd: &SpectralDecomposition,
    input: &DVector<f64>,
    m: u64,
    joint: bool,
) -> Result<PEOutcome> {
    check_input(input)?;
    check_register(m)?;
    let lambda = sd.amplitudes(input);
    let thetas = sd.eigenphases();
    let at = |omega: u64| -> Vec<C64> {
        let coeffs: Vec<C64> = lambda
            .iter()
            .zip(thetas)
            .map(|(l, &t)| l * pe_kernel(omega, t, m))
            .collect();
        sd.synthesize(&coeffs)
    };
    let (p0, conditional_zero) = normalize_conditional(&at(0));
    let joint = if joint {
        let n = sd.dim();
        if n as u64 * m > MAX_JOINT_SIZE as u64 {
            return Err(Error::ResourceLimit(format!(
                "joint table |V|·M = {} exceeds 2^22",
                n as u64 * m
            )));
        }
        let mut table = Vec::with_capacity(n * m as usize);
        for omega in 0..m {
            table.extend(at(omega).iter().map(|a| a.norm_sqr()));
        }
        Some(table)
    } else {
        None
    };
    Ok(PEOutcome {
        register: m,
        p_zero: p0,
        conditional_zero,
        joint,
    })
}

/// Literal simulation of the phase-estimation circuit on a `|V|·2^s` register:
/// Hadamards on the ancillas, controlled `O^{2^k}` from the `k`-th ancilla
/// (powers by repeated squaring), then an inverse Fourier transform on the
/// ancilla register.
pub fn gate_level_pe(op: &WalkOperator, input: &DVector<f64>, s: u32) -> Result<PEOutcome> {
    gate_level_pe_with_register(op, input, EstimationConfig::with_ancillas(s)?.two_s)
}

/// [`gate_level_pe`] for a register of size `m`; column `t` receives `O^t`
/// through the binary digits of `t`.
pub fn gate_level_pe_with_register(
    op: &WalkOperator,
    input: &DVector<f64>,
    m: u64,
) -> Result<PEOutcome> {
    check_input(input)?;
    check_register(m)?;
    let n = op.dim();
    let register_size = m;
    let m = m as usize;
    let bits = u64::BITS - (register_size - 1).leading_zeros();
    if n * m > MAX_JOINT_SIZE {
        return Err(Error::ResourceLimit(format!(
            "register |V|·2^s = {} exceeds 2^22",
            n * m
        )));
    }
    // column t holds the vertex state paired with ancilla |t⟩
    let mut register = DMatrix::<f64>::from_fn(n, m, |v, _| input[v] / (m as f64).sqrt());
    let mut power = op.matrix().clone();
    for k in 0..bits {
        let controlled: Vec<usize> = (0..m).filter(|t| t >> k & 1 == 1).collect();
        let block = register.select_columns(controlled.iter());
        let moved = &power * block;
        for (i, &t) in controlled.iter().enumerate() {
            register.set_column(t, &moved.column(i));
        }
        if k + 1 < bits {
            power = &power * &power;
        }
    }

    let fft = FftPlanner::<f64>::new().plan_fft_forward(m);
    let scale = 1.0 / (m as f64).sqrt();
    let mut table = vec![0.0; n * m];
    let mut row = vec![C64::new(0.0, 0.0); m];
    for v in 0..n {
        for (t, x) in row.iter_mut().enumerate() {
            *x = C64::new(register[(v, t)], 0.0);
        }
        fft.process(&mut row);
        for (omega, x) in row.iter().enumerate() {
            table[omega * n + v] = (x * scale).norm_sqr();
        }
    }
    let zero_row: Vec<C64> = table[..n]
        .iter()
        .map(|&p| C64::new(p.sqrt(), 0.0))
        .collect();
    let (p0, conditional_zero) = normalize_conditional(&zero_row);
    Ok(PEOutcome {
        register: register_size,
        p_zero: p0,
        conditional_zero,
        joint: Some(table),
    })
}

/// `½ Σ |p − q|`.
pub fn total_variation(p: &[f64], q: &[f64]) -> f64 {
    assert_eq!(p.len(), q.len(), "distributions over different supports");
    0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>()
}

/// Fejér kernel `sin²(Mπx)/(M² sin²(πx))`, equal to 1 at integer `x`.
fn fejer(x: f64, m: f64) -> f64 {
    let s = (std::f64::consts::PI * x).sin();
    if s.abs() < 1e-12 {
        1.0
    } else {
        let num = (m * std::f64::consts::PI * x).sin();
        (num * num) / (m * m * s * s)
    }
}

/// Outcome distribution of amplitude estimation with `2^s` outcomes for a
/// state with good amplitude `sin θ`, `θ ∈ [0, π/2]`:
/// `P(y) = ½[F(y/M − θ/π) + F(y/M + θ/π)]`.
pub fn ae_distribution(theta: f64, s: u32) -> Result<Vec<f64>> {
    ae_distribution_with_register(theta, EstimationConfig::with_ancillas(s)?.two_s)
}

/// [`ae_distribution`] with `M` outcomes.
pub fn ae_distribution_with_register(theta: f64, register: u64) -> Result<Vec<f64>> {
    if !(0.0..=std::f64::consts::FRAC_PI_2 + 1e-12).contains(&theta) {
        return Err(Error::InvalidArgument(format!(
            "amplitude angle {theta} outside [0, π/2]"
        )));
    }
    check_register(register)?;
    let m = register as f64;
    let x = theta / std::f64::consts::PI;
    Ok((0..register)
        .map(|y| {
            let u = y as f64 / m;
            0.5 * (fejer(u - x, m) + fejer(u + x, m))
        })
        .collect())
}

/// Outcome `y` folded onto `min(y, M − y)`.
///
/// The outcomes `y` and `M − y` are equally likely for every input, so only
/// the folded index carries information about `θ`.
pub fn ae_fold(y: u64, register: u64) -> u64 {
    y.min(register - y)
}

/// Estimate `π·min(y, M − y)/M ∈ [0, π/2]` for outcome `y`.
pub fn ae_estimate(y: u64, register: u64) -> f64 {
    std::f64::consts::PI * ae_fold(y, register) as f64 / register as f64
}

/// Sampler over the amplitude-estimation outcomes for one good amplitude.
#[derive(Clone, Debug)]
pub struct AmplitudeEstimator {
    register: u64,
    dist: WeightedIndex<f64>,
}

impl AmplitudeEstimator {
    /// For a good-subspace probability `p_good = sin²θ`.
    pub fn from_probability(p_good: f64, s: u32) -> Result<Self> {
        Self::with_register(p_good, EstimationConfig::with_ancillas(s)?.two_s)
    }

    /// [`AmplitudeEstimator::from_probability`] with `M` outcomes.
    pub fn with_register(p_good: f64, register: u64) -> Result<Self> {
        if !(-1e-12..=1.0 + 1e-12).contains(&p_good) {
            return Err(Error::InvalidArgument(format!(
                "probability {p_good} outside [0, 1]"
            )));
        }
        let theta = p_good.clamp(0.0, 1.0).sqrt().asin();
        Self::angle_with_register(theta, register)
    }

    pub fn from_angle(theta: f64, s: u32) -> Result<Self> {
        Self::angle_with_register(theta, EstimationConfig::with_ancillas(s)?.two_s)
    }

    fn angle_with_register(theta: f64, register: u64) -> Result<Self> {
        let weights = ae_distribution_with_register(theta, register)?;
        let dist = WeightedIndex::new(&weights)
            .map_err(|e| Error::Numerical(format!("amplitude-estimation weights: {e}")))?;
        Ok(AmplitudeEstimator { register, dist })
    }

    pub fn register(&self) -> u64 {
        self.register
    }

    /// One folded outcome index in `0..=M/2`.
    pub fn sample_index<R: Rng + ?Sized>(&self, rng: &mut R) -> u64 {
        ae_fold(self.dist.sample(rng) as u64, self.register)
    }

    /// One folded estimate `β̃ ∈ [0, π/2]`.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        ae_estimate(self.dist.sample(rng) as u64, self.register)
    }
}

/// Draws one amplitude-estimation outcome for `input` against the good
/// subspace spanned by the orthonormal columns of `good`.
pub fn ae_sample<R: Rng + ?Sized>(
    input: &DVector<f64>,
    good: &DMatrix<f64>,
    s: u32,
    rng: &mut R,
) -> Result<f64> {
    check_input(input)?;
    let p_good = good.tr_mul(input).norm_squared();
    Ok(AmplitudeEstimator::from_probability(p_good, s)?.sample(rng))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::resistance::{kappa_assignment, resistance_profile};
    use crate::tree::{build_random_tree, build_star, shallowest_marked, solution_tree};
    use crate::walk::{phi_state, WalkOperator};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::{FRAC_PI_2, FRAC_PI_4, PI};

    /// `a(ω, θ)` by direct summation of the geometric series.
    fn kernel_by_sum(omega: u64, theta: f64, m: u64) -> C64 {
        let x = 2.0 * theta - 2.0 * PI * omega as f64 / m as f64;
        (0..m)
            .map(|t| C64::from_polar(1.0, x * t as f64))
            .sum::<C64>()
            / m as f64
    }

    #[test]
    fn kernel_matches_direct_sum() {
        for &theta in &[0.0, 1e-7, 0.3, FRAC_PI_4, 1.2, FRAC_PI_2, -0.7] {
            for &m in &[2u64, 8, 64] {
                for omega in 0..m {
                    let d = pe_kernel(omega, theta, m) - kernel_by_sum(omega, theta, m);
                    assert!(d.norm() < 1e-12, "θ {theta} M {m} ω {omega}");
                }
            }
        }
    }

    #[test]
    fn kernel_rows_are_normalized() {
        for &theta in &[0.0, 0.11, 0.5, 1.4, FRAC_PI_2] {
            let total: f64 = (0..32).map(|w| pe_kernel(w, theta, 32).norm_sqr()).sum();
            assert!((total - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_outcome_examples() {
        assert!(pe_kernel(0, FRAC_PI_2, 2).norm_sqr() < 1e-30);
        assert!((pe_kernel(0, FRAC_PI_4, 2).norm_sqr() - 0.5).abs() < 1e-15);
        assert_eq!(pe_kernel(0, 0.0, 1 << 20).norm_sqr(), 1.0);
    }

    #[test]
    fn eigenvector_input_lands_on_zero() {
        let (tree, f) = build_random_tree(40, 3, 0.1, 4).unwrap();
        let m = shallowest_marked(&tree, &f);
        let st = solution_tree(&tree, &m).unwrap();
        let rp = resistance_profile(&tree, &m);
        let ka = kappa_assignment(&tree, &st, &rp);
        let op = WalkOperator::new(&tree, &m, rp.root()).unwrap();
        let sd = op.decompose().unwrap();
        let phi = phi_state(&tree, &st, &ka, rp.root());
        let out = pe_distribution(&sd, &phi, 6, false).unwrap();
        assert!((out.p_zero - 1.0).abs() < 1e-10);
        let gate = gate_level_pe(&op, &phi, 4).unwrap();
        assert!((gate.p_zero - 1.0).abs() < 1e-10);
    }

    #[test]
    fn backends_agree_on_small_trees() {
        for (seed, s) in [(0u64, 3u32), (1, 5), (2, 7)] {
            let (tree, f) = build_random_tree(12, 3, 0.2, seed).unwrap();
            let op = crate::walk::build_walk_operator(&tree, &f, 0.6).unwrap();
            let sd = op.decompose().unwrap();
            let mut r = DVector::zeros(tree.len());
            r[0] = 1.0;
            let a = pe_distribution(&sd, &r, s, true).unwrap();
            let b = gate_level_pe(&op, &r, s).unwrap();
            let tv = total_variation(a.joint.as_ref().unwrap(), b.joint.as_ref().unwrap());
            assert!(tv < 1e-10, "seed {seed}: {tv}");
            assert!((a.p_zero - b.p_zero).abs() < 1e-12);
            let total: f64 = a.joint.unwrap().iter().sum();
            assert!((total - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn single_edge_backends_agree() {
        let (tree, f) = build_star(1, 1).unwrap();
        let op = crate::walk::build_walk_operator(&tree, &f, 1.0).unwrap();
        let sd = op.decompose().unwrap();
        let r = DVector::from_vec(vec![1.0, 0.0]);
        let a = pe_distribution(&sd, &r, 3, true).unwrap();
        let b = gate_level_pe(&op, &r, 3).unwrap();
        assert!(total_variation(a.joint.as_ref().unwrap(), b.joint.as_ref().unwrap()) < 1e-12);
    }

    #[test]
    fn resource_limits() {
        let (tree, f) = build_star(3, 1).unwrap();
        let op = crate::walk::build_walk_operator(&tree, &f, 1.0).unwrap();
        let sd = op.decompose().unwrap();
        let mut r = DVector::zeros(4);
        r[0] = 1.0;
        assert!(matches!(
            pe_distribution(&sd, &r, 25, false),
            Err(Error::ResourceLimit(_))
        ));
        assert!(matches!(
            gate_level_pe(&op, &r, 21),
            Err(Error::ResourceLimit(_))
        ));
        assert!(matches!(
            pe_distribution(&sd, &(r * 2.0), 3, false),
            Err(Error::NotNormalized(_))
        ));
    }

    #[test]
    fn ae_extremes_are_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let good = AmplitudeEstimator::from_probability(1.0, 6).unwrap();
        let bad = AmplitudeEstimator::from_probability(0.0, 6).unwrap();
        for _ in 0..100 {
            assert_eq!(good.sample(&mut rng), FRAC_PI_2);
            assert_eq!(bad.sample(&mut rng), 0.0);
        }
    }

    #[test]
    fn ae_distribution_is_normalized() {
        for &theta in &[0.0, 0.1, FRAC_PI_4, 1.3, FRAC_PI_2] {
            let total: f64 = ae_distribution(theta, 7).unwrap().iter().sum();
            assert!((total - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn ae_concentrates_at_quarter_pi() {
        let s = 10;
        let window = PI / (1u64 << 9) as f64;
        // exact tail mass inside the window, computed from the distribution
        let dist = ae_distribution(FRAC_PI_4, s).unwrap();
        let inside: f64 = dist
            .iter()
            .enumerate()
            .filter(|(y, _)| (ae_estimate(*y as u64, 1 << s) - FRAC_PI_4).abs() <= window + 1e-15)
            .map(|(_, p)| p)
            .sum();
        assert!(inside >= 0.95, "exact mass {inside}");
        let est = AmplitudeEstimator::from_angle(FRAC_PI_4, s).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let hits = (0..1000)
            .filter(|_| (est.sample(&mut rng) - FRAC_PI_4).abs() <= window + 1e-15)
            .count();
        assert!(hits >= 950, "{hits}");
    }

    #[test]
    fn ae_sample_against_projector() {
        let x = DVector::from_vec(vec![0.6, 0.8]);
        let good = DMatrix::from_column_slice(2, 1, &[0.0, 1.0]);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let samples: Vec<f64> = (0..400)
            .map(|_| ae_sample(&x, &good, 8, &mut rng).unwrap())
            .collect();
        let near = samples
            .iter()
            .filter(|&&b| (b - 0.8f64.asin()).abs() < 0.05)
            .count();
        assert!(near > 320);
    }

    #[test]
    fn precision_config_rounds_up() {
        let cfg = EstimationConfig::for_precision(100, 1.0, 0.5, 1.0).unwrap();
        // √100/0.125 = 80 → 128
        assert_eq!(cfg.two_s, 128);
        assert!((cfg.epsilon - 0.05).abs() < 1e-15);
        assert!(EstimationConfig::for_precision(100, 1.0, 1e-4, 1.0).is_err());
    }
}
