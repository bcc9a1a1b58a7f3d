//! Closed-form concentration bounds for bounded martingale differences.
//!
//! For differences bounded above by b with conditional second moment at most
//! k, the moment generating function of their sum V_n is at most
//! ((b²e^{−λk/b} + k·e^{λb})/(b² + k))^n, which yields
//! Prob(V_n/n ≥ ε) ≤ exp(−n·H(p | p′)) with p = (bε + k)/(b² + k),
//! p′ = k/(b² + k) and H the binary relative entropy.

use serde::{Deserialize, Serialize};

use crate::domain::BoxDomain;
use crate::error::{bail, Error, Result};
use crate::estimator::envelope_from;
use crate::problems::ProblemInstance;

/// H(p|p′) = p ln(p/p′) + (1−p) ln((1−p)/(1−p′)).
pub fn relative_entropy(p: f64, p_prime: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0 && p_prime > 0.0 && p_prime < 1.0) {
        bail!(Domain, "relative entropy needs p, p′ in (0,1), got p={p}, p′={p_prime}");
    }
    let h = p * (p / p_prime).ln() + (1.0 - p) * ((1.0 - p) / (1.0 - p_prime)).ln();
    // Rounding can push values at p ≈ p′ a hair below zero.
    Ok(h.max(0.0))
}

/// Below this magnitude the remainders are summed as series.
const SERIES_LIMIT: f64 = 0.1;
/// Arguments up to this size use the cancellation-free forms.
const SMALL_ARGUMENT_LIMIT: f64 = 0.5;

/// ln(1+x) − x.
fn log1p_remainder(x: f64) -> f64 {
    if x.abs() >= SERIES_LIMIT {
        return x.ln_1p() - x;
    }
    let (mut sum, mut power) = (0.0, x);
    for j in 2..40 {
        power *= -x;
        let term = power / j as f64;
        sum += term;
        if term.abs() <= 0.25 * f64::EPSILON * sum.abs() {
            break;
        }
    }
    sum
}

/// e^x − 1 − x.
fn expm1_remainder(x: f64) -> f64 {
    if x.abs() >= SERIES_LIMIT {
        return x.exp_m1() - x;
    }
    let (mut sum, mut term) = (0.0, x);
    for j in 2..40 {
        term *= x / j as f64;
        sum += term;
        if term.abs() <= 0.25 * f64::EPSILON * sum.abs() {
            break;
        }
    }
    sum
}

/// (b, k, ε, n) of a single Bennett-type tail bound.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TailBoundSpec {
    pub b: f64,
    pub k: f64,
    pub epsilon: f64,
    pub n: u64,
}

impl TailBoundSpec {
    pub fn new(b: f64, k: f64, epsilon: f64, n: u64) -> Result<Self> {
        if !(b.is_finite() && b > 0.0) {
            bail!(Domain, "b must be finite and positive, got {b}");
        }
        if !(k.is_finite() && k > 0.0) {
            bail!(Domain, "k must be finite and positive, got {k}");
        }
        if !(epsilon > 0.0 && epsilon < b) {
            bail!(Domain, "need 0 < ε < b, got ε={epsilon}, b={b}");
        }
        if n == 0 {
            bail!(Domain, "n must be positive");
        }
        Ok(Self { b, k, epsilon, n })
    }

    /// (p, p′) of the exponent.
    pub fn entropy_arguments(&self) -> (f64, f64) {
        let d = self.b * self.b + self.k;
        ((self.b * self.epsilon + self.k) / d, self.k / d)
    }

    /// Per-sample exponent H(p|p′).
    pub fn exponent(&self) -> f64 {
        let (b, k, e) = (self.b, self.k, self.epsilon);
        let d = b * b + k;
        let (p, q) = self.entropy_arguments();
        let gap = b * e / d;
        let (u, v) = (gap / q, -gap / (b * b / d));
        if u.abs() > SMALL_ARGUMENT_LIMIT || v.abs() > SMALL_ARGUMENT_LIMIT {
            return relative_entropy(p, q).expect("validated spec gives arguments in (0,1)");
        }
        // p·ln(1+u) + (1−p)·ln(1+v) with the first-order part summed exactly.
        let linear = gap * gap / (q * (b * b / d));
        (linear + p * log1p_remainder(u) + (b * (b - e) / d) * log1p_remainder(v)).max(0.0)
    }
}

/// ln of the MGF bound at λ.
pub fn log_bennett_mgf_bound(spec: &TailBoundSpec, lambda: f64) -> Result<f64> {
    if !(lambda >= 0.0) {
        bail!(Domain, "λ must be nonnegative, got {lambda}");
    }
    if lambda == 0.0 {
        return Ok(0.0);
    }
    let (b, k) = (spec.b, spec.k);
    let b2 = b * b;
    if lambda * b <= SMALL_ARGUMENT_LIMIT {
        // The first-order terms of w₁e^{−λk/b} + w₂e^{λb} cancel exactly.
        let (w1, w2) = (b2 / (b2 + k), k / (b2 + k));
        let excess = w1 * expm1_remainder(-lambda * k / b) + w2 * expm1_remainder(lambda * b);
        return Ok(spec.n as f64 * excess.ln_1p());
    }
    // λb + ln(k/(b²+k)) + ln(1 + (b²/k)e^{−λ(b²+k)/b}).
    let ratio = (b2 / k).ln() - lambda * (b2 + k) / b;
    let tail = if ratio > 0.0 { ratio + (-ratio).exp().ln_1p() } else { ratio.exp().ln_1p() };
    Ok(spec.n as f64 * (lambda * b - (b2 / k).ln_1p() + tail))
}

/// ((b²e^{−λk/b} + k·e^{λb})/(b² + k))^n.
pub fn bennett_mgf_bound(spec: &TailBoundSpec, lambda: f64) -> Result<f64> {
    Ok(log_bennett_mgf_bound(spec, lambda)?.exp())
}

/// exp(−n·H(p|p′)).
pub fn tail_bound(spec: &TailBoundSpec) -> f64 {
    (-(spec.n as f64) * spec.exponent()).exp()
}

/// The minimizing λ = (b/(b²+k))·ln(b(bε+k)/(k(b−ε))).
pub fn optimal_lambda(spec: &TailBoundSpec) -> f64 {
    let (b, k, e) = (spec.b, spec.k, spec.epsilon);
    b / (b * b + k) * (b * (b * e + k) / (k * (b - e))).ln()
}

/// Pointwise bounds on Prob(H_n(x) ≥ ε) (one side) and Prob(|H_n(x)| ≥ ε).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PointwiseBound {
    pub b: f64,
    pub k: f64,
    pub epsilon: f64,
    pub n: u64,
    pub exponent: f64,
    pub one_sided_raw: f64,
    pub two_sided_raw: f64,
    pub one_sided: f64,
    pub two_sided: f64,
}

pub fn pointwise_bound(b: f64, k: f64, epsilon: f64, n: u64) -> Result<PointwiseBound> {
    let spec = TailBoundSpec::new(b, k, epsilon, n)?;
    let one = tail_bound(&spec);
    Ok(PointwiseBound {
        b,
        k,
        epsilon,
        n,
        exponent: spec.exponent(),
        one_sided_raw: one,
        two_sided_raw: 2.0 * one,
        one_sided: one.min(1.0),
        two_sided: (2.0 * one).min(1.0),
    })
}

/// Pointwise bound at x with b = L(x), k = C(x) built from β(x) scaled by
/// `envelope_factor` (1 for the reference proposal).
pub fn two_sided_pointwise_bound(p: &ProblemInstance, envelope_factor: f64, x: &[f64], epsilon: f64, n: u64) -> Result<PointwiseBound> {
    let (l, c) = envelope_from(envelope_factor * p.envelope_beta(x), p.true_objective(x));
    pointwise_bound(l, c, epsilon, n)
}

/// Centers of an axis-aligned grid of δ-balls covering a box.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CoveringSpec {
    pub box_x: BoxDomain,
    pub delta: f64,
    pub per_dim: Vec<usize>,
    pub centers: Vec<Vec<f64>>,
}

impl CoveringSpec {
    pub fn len(&self) -> usize {
        self.centers.len()
    }
    pub fn is_empty(&self) -> bool {
        self.centers.is_empty()
    }
}

/// Cells of side at most 2δ/√m per axis, whose circumradius is at most δ;
/// the centers are the cell midpoints.
pub fn covering(box_x: &BoxDomain, delta: f64) -> Result<CoveringSpec> {
    box_x.validate()?;
    if !(delta.is_finite() && delta > 0.0) {
        bail!(Domain, "covering radius must be positive, got {delta}");
    }
    let m = box_x.dim();
    let spacing = 2.0 * delta / (m as f64).sqrt();
    let per_dim: Vec<usize> = box_x.widths().iter().map(|w| ((w / spacing) - 1e-12).ceil().max(1.0) as usize).collect();
    let axes: Vec<Vec<f64>> = (0..m)
        .map(|k| {
            let cell = (box_x.hi[k] - box_x.lo[k]) / per_dim[k] as f64;
            (0..per_dim[k]).map(|j| box_x.lo[k] + (j as f64 + 0.5) * cell).collect()
        })
        .collect();
    Ok(CoveringSpec { box_x: box_x.clone(), delta, per_dim, centers: crate::domain::tensor(&axes) })
}

/// ϖ: a strictly increasing modulus with ϖ(0⁺) = 0.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModulusOfContinuity {
    #[default]
    Linear,
    /// ϖ(d) = d^exponent with exponent in (0,1].
    Power { exponent: f64 },
}

impl ModulusOfContinuity {
    pub fn validate(&self) -> Result<()> {
        if let Self::Power { exponent } = self {
            if !(*exponent > 0.0 && *exponent <= 1.0) {
                bail!(Domain, "power modulus exponent must lie in (0,1], got {exponent}");
            }
        }
        Ok(())
    }

    pub fn eval(&self, d: f64) -> f64 {
        match self {
            Self::Linear => d,
            Self::Power { exponent } => d.powf(*exponent),
        }
    }

    /// Factor turning a Lipschitz coefficient into a coefficient for this
    /// modulus on a set of the given diameter: d ≤ diam^{1−a}·d^a.
    pub fn lipschitz_scale(&self, diameter: f64) -> f64 {
        match self {
            Self::Linear => 1.0,
            Self::Power { exponent } => diameter.powf(1.0 - exponent),
        }
    }
}

/// How M(ε) is chosen for the calmness average bound.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MRule {
    /// εM(ε) = k̂ + ξ for a fixed slack ξ.
    Slack { xi: f64 },
    /// M(ε) = m for every ε.
    Fixed { m: f64 },
    /// The largest M ≤ m_max with ξ = εM − k̂ below b̂ (just inside the
    /// admissible range), which gives the largest exponent the covering
    /// radius allows.
    Largest { m_max: f64 },
}

/// Bound on the calmness average A_n = (1/n)Σ α_i(θ_i)/ψ_i(θ_i) given
/// sup A_i ≤ k̂.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CalmnessSpec {
    pub k_hat: f64,
    pub b_hat: f64,
    pub m_rule: MRule,
}

const LARGEST_MARGIN: f64 = 1e-6;

impl CalmnessSpec {
    pub fn new(k_hat: f64, m_rule: MRule) -> Result<Self> {
        if !(k_hat.is_finite() && k_hat >= 0.0) {
            bail!(Domain, "k̂ must be finite and nonnegative, got {k_hat}");
        }
        Ok(Self { k_hat, b_hat: k_hat * k_hat, m_rule })
    }

    /// k̂ for a problem under a policy with the given envelope factor and a
    /// chosen modulus.
    pub fn for_problem(p: &ProblemInstance, envelope_factor: f64, modulus: &ModulusOfContinuity, m_rule: MRule) -> Result<Self> {
        modulus.validate()?;
        let k_hat = envelope_factor * p.alpha_ratio_bound() * modulus.lipschitz_scale(p.domain().diameter());
        Self::new(k_hat, m_rule)
    }

    pub fn m_of_eps(&self, epsilon: f64) -> f64 {
        match self.m_rule {
            MRule::Slack { xi } => (self.k_hat + xi) / epsilon,
            MRule::Fixed { m } => m,
            MRule::Largest { m_max } => m_max.min((self.k_hat + self.b_hat * (1.0 - LARGEST_MARGIN)) / epsilon),
        }
    }

    /// τ(ε) = H((b̂ξ+k̂)/(b̂²+k̂) | k̂/(b̂²+k̂)) with ξ = εM(ε) − k̂; infinite when
    /// k̂ = 0 (A_n vanishes identically).
    pub fn tau_of_eps(&self, epsilon: f64) -> Result<f64> {
        if self.k_hat == 0.0 {
            return Ok(f64::INFINITY);
        }
        let xi = epsilon * self.m_of_eps(epsilon) - self.k_hat;
        if !(xi > 0.0) {
            bail!(Domain, "need εM(ε) > k̂, got εM(ε)={} and k̂={}", epsilon * self.m_of_eps(epsilon), self.k_hat);
        }
        if !(xi < self.b_hat) {
            bail!(Domain, "need ξ = εM(ε) − k̂ < b̂, got ξ={xi} and b̂={}", self.b_hat);
        }
        let d = self.b_hat * self.b_hat + self.k_hat;
        relative_entropy((self.b_hat * xi + self.k_hat) / d, self.k_hat / d)
    }
}

/// Prob(A_n ≥ εM(ε)) ≤ exp(−n·τ(ε)).
pub fn calmness_bound(calm: &CalmnessSpec, epsilon: f64, n: u64) -> Result<f64> {
    Ok((-(n as f64) * calm.tau_of_eps(epsilon)?).exp())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CenterTerm {
    pub center: Vec<f64>,
    pub b: f64,
    pub k: f64,
    pub exponent: f64,
    pub bound: f64,
}

/// Finite-n uniform bound assembled from a covering: one-sided pointwise
/// bounds at ε/2 on every center plus the calmness term at ε/4.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UniformBound {
    pub epsilon: f64,
    pub n: u64,
    pub b0: f64,
    pub m_value: f64,
    pub tau: f64,
    pub terms: Vec<CenterTerm>,
    pub calmness_term: f64,
    /// Σ_j term_j + calmness term: Prob(sup H_n ≥ ε) or Prob(inf H_n ≤ −ε).
    pub one_sided_raw: f64,
    /// 2Σ_j term_j + calmness term: Prob(sup |H_n| ≥ ε). The calmness event
    /// is the same for both sides, so it enters once.
    pub two_sided_raw: f64,
    pub one_sided: f64,
    pub two_sided: f64,
    /// Slowest per-sample exponent among all terms.
    pub dominant_exponent: f64,
}

pub fn uniform_bound(
    p: &ProblemInstance,
    envelope_factor: f64,
    cover: &CoveringSpec,
    calm: &CalmnessSpec,
    modulus: &ModulusOfContinuity,
    epsilon: f64,
    n: u64,
) -> Result<UniformBound> {
    if !(epsilon > 0.0) || n == 0 {
        bail!(Domain, "need ε > 0 and n ≥ 1");
    }
    if cover.is_empty() {
        bail!(Input, "covering has no centers");
    }
    let envelopes: Vec<(f64, f64)> =
        cover.centers.iter().map(|x| envelope_from(envelope_factor * p.envelope_beta(x), p.true_objective(x))).collect();
    let b0 = envelopes.iter().map(|e| e.0).fold(f64::INFINITY, f64::min);
    if !(epsilon / 2.0 < b0) {
        bail!(Precondition, "ε/2 < min_j b(x_j) fails: ε/2 = {}, min_j b(x_j) = {b0}", epsilon / 2.0);
    }
    let quarter = epsilon / 4.0;
    let tau = calm.tau_of_eps(quarter).map_err(|e| {
        Error::Precondition(format!("calmness condition 0 < (ε/4)M(ε/4) − k̂ < b̂ fails at ε/4 = {quarter}: {e}"))
    })?;
    let m_value = if calm.k_hat == 0.0 { 0.0 } else { calm.m_of_eps(quarter) };
    let w = modulus.eval(cover.delta);
    if m_value > 0.0 && w > 1.0 / m_value {
        bail!(Precondition, "ϖ(δ) ≤ 1/M(ε/4) fails: ϖ(δ) = {w}, 1/M(ε/4) = {}", 1.0 / m_value);
    }
    let lip_f = p.objective_lipschitz();
    if lip_f * cover.delta > quarter * (1.0 + 1e-12) {
        bail!(
            Precondition,
            "|f(x) − f(x′)| ≤ ε/4 for ‖x − x′‖ ≤ δ fails: Lip(f)·δ = {} > ε/4 = {quarter}",
            lip_f * cover.delta
        );
    }
    let mut terms = Vec::with_capacity(cover.len());
    let mut sum = 0.0;
    let mut dominant = tau;
    for (x, (b, k)) in cover.centers.iter().zip(envelopes) {
        let spec = TailBoundSpec::new(b, k, epsilon / 2.0, n)?;
        let bound = tail_bound(&spec);
        dominant = dominant.min(spec.exponent());
        sum += bound;
        terms.push(CenterTerm { center: x.clone(), b, k, exponent: spec.exponent(), bound });
    }
    let calmness_term = (-(n as f64) * tau).exp();
    let one = sum + calmness_term;
    let two = 2.0 * sum + calmness_term;
    Ok(UniformBound {
        epsilon,
        n,
        b0,
        m_value,
        tau,
        terms,
        calmness_term,
        one_sided_raw: one,
        two_sided_raw: two,
        one_sided: one.min(1.0),
        two_sided: two.min(1.0),
        dominant_exponent: dominant,
    })
}

/// Least-squares slope of ln(frequency) against n over the positive
/// frequencies. A positive frequency followed only by zeros at larger n
/// counts as decay faster than any exponential (slope −∞). `None` when no
/// frequency is positive.
pub fn fit_log_decay(ns: &[f64], frequencies: &[f64]) -> Option<f64> {
    let pts: Vec<(f64, f64)> = ns.iter().zip(frequencies).filter(|(_, p)| **p > 0.0).map(|(n, p)| (*n, p.ln())).collect();
    let last_positive = ns.iter().zip(frequencies).filter(|(_, p)| **p > 0.0).map(|(n, _)| *n).fold(f64::NEG_INFINITY, f64::max);
    let zeros_after = ns.iter().zip(frequencies).any(|(n, p)| *p == 0.0 && *n > last_positive);
    match pts.len() {
        0 => None,
        1 => Some(if zeros_after { f64::NEG_INFINITY } else { 0.0 }),
        _ => {
            let m = pts.len() as f64;
            let mx = pts.iter().map(|p| p.0).sum::<f64>() / m;
            let my = pts.iter().map(|p| p.1).sum::<f64>() / m;
            let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
            let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
            Some(sxy / sxx)
        }
    }
}
