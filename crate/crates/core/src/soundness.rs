//! Monte Carlo check of the concentration bounds: exceedance frequencies of
//! H_n(x) at chosen points and of sup_x H_n(x) over a grid, compared with the
//! pointwise and uniform bounds at the same (n, ε).

use std::io::Write;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::amis::{AdaptionPolicy, Sampler};
use crate::bounds::{
    covering, fit_log_decay, pointwise_bound, uniform_bound, CalmnessSpec, MRule, ModulusOfContinuity, PointwiseBound, UniformBound,
};
use crate::error::{bail, Result};
use crate::estimator::envelope_from;
use crate::problems::ProblemInstance;
use crate::rng::derive_seed;
use crate::summation::NeumaierSum;

/// Multiple of the Monte Carlo standard error allowed above a bound.
pub const STDERR_MULTIPLE: f64 = 3.0;
/// Empirical log-frequency slope must not exceed this fraction of the
/// bound's slope −(dominant exponent).
pub const DECAY_SLOPE_FRACTION: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EpsilonMode {
    /// ε values are used as given.
    Absolute,
    /// ε values are fractions of the envelope b(x) at each evaluation point.
    RelativeToEnvelope,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SoundnessConfig {
    pub n_schedule: Vec<usize>,
    pub replications: usize,
    pub epsilons: Vec<f64>,
    pub epsilon_mode: EpsilonMode,
    pub x_eval: Vec<Vec<f64>>,
    /// Covering radius for the uniform bound; `None` skips the uniform part.
    pub delta: Option<f64>,
    /// Grid points per axis for the empirical supremum.
    pub grid_per_dim: usize,
    pub modulus: ModulusOfContinuity,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "status", content = "reason", rename_all = "snake_case")]
pub enum RowStatus {
    Ok,
    Violated,
    Skipped(String),
}

impl RowStatus {
    pub fn label(&self) -> String {
        match self {
            Self::Ok => "ok".into(),
            Self::Violated => "violated".into(),
            Self::Skipped(r) => format!("skipped: {r}"),
        }
    }
}

/// Empirical frequency with its binomial standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Frequency {
    pub value: f64,
    pub stderr: f64,
}

impl Frequency {
    fn from_count(count: usize, total: usize) -> Self {
        let p = count as f64 / total as f64;
        Self { value: p, stderr: (p * (1.0 - p) / total as f64).sqrt() }
    }

    /// Whether the frequency stays within the allowed margin of `bound`.
    pub fn within(&self, bound: f64) -> bool {
        self.value <= bound + STDERR_MULTIPLE * self.stderr
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PointwiseRow {
    pub n: usize,
    pub epsilon: f64,
    pub x: Vec<f64>,
    /// Frequency of H_n(x) ≥ ε.
    pub upper: Frequency,
    /// Frequency of H_n(x) ≤ −ε.
    pub lower: Frequency,
    /// Frequency of |H_n(x)| ≥ ε.
    pub two_sided: Frequency,
    pub bound: Option<PointwiseBound>,
    pub status: RowStatus,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UniformRow {
    pub n: usize,
    pub epsilon: f64,
    /// Frequency of max over the grid of H_n ≥ ε.
    pub sup_upper: Frequency,
    /// Frequency of max over the grid of |H_n| ≥ ε.
    pub sup_two_sided: Frequency,
    #[serde(skip)]
    pub bound: Option<UniformBound>,
    pub one_sided_bound: Option<f64>,
    pub two_sided_bound: Option<f64>,
    pub dominant_exponent: Option<f64>,
    pub status: RowStatus,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DecayRow {
    pub epsilon: f64,
    /// Least-squares slope of ln(frequency) against n; −∞ when frequencies
    /// hit zero after a positive value, `None` when all are zero.
    pub fitted_slope: Option<f64>,
    /// −(dominant exponent) of the uniform bound.
    pub bound_slope: f64,
    /// `None` when the fit carries no information.
    pub passed: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SoundnessReport {
    pub problem: String,
    pub policy: String,
    pub replications: usize,
    pub n_schedule: Vec<usize>,
    pub delta: Option<f64>,
    pub grid_points: usize,
    pub pointwise: Vec<PointwiseRow>,
    pub uniform: Vec<UniformRow>,
    pub decay: Vec<DecayRow>,
    pub violations: usize,
}

impl SoundnessReport {
    pub fn valid_pointwise_rows(&self) -> usize {
        self.pointwise.iter().filter(|r| !matches!(r.status, RowStatus::Skipped(_))).count()
    }

    pub fn valid_uniform_rows(&self) -> usize {
        self.uniform.iter().filter(|r| !matches!(r.status, RowStatus::Skipped(_))).count()
    }

    pub fn decay_failures(&self) -> usize {
        self.decay.iter().filter(|d| d.passed == Some(false)).count()
    }
}

/// H_n at the evaluation points and extremes over the grid, per checkpoint.
struct ChainTrace {
    h_points: Vec<Vec<f64>>,
    grid_max: Vec<f64>,
    grid_max_abs: Vec<f64>,
}

fn run_chain(p: &Arc<ProblemInstance>, policy: &AdaptionPolicy, cfg: &SoundnessConfig, grid: &[Vec<f64>], seed: u64) -> ChainTrace {
    let points: Vec<&Vec<f64>> = cfg.x_eval.iter().chain(grid).collect();
    let f: Vec<f64> = points.iter().map(|x| p.true_objective(x)).collect();
    let mut sums = vec![NeumaierSum::new(); points.len()];
    let mut sampler = Sampler::for_problem(p, policy.clone(), seed).without_history();
    let k = cfg.x_eval.len();
    let mut trace = ChainTrace { h_points: Vec::new(), grid_max: Vec::new(), grid_max_abs: Vec::new() };
    let mut next = 0;
    for i in 1..=*cfg.n_schedule.last().expect("validated schedule") {
        let rec = sampler.next_sample();
        let feat = p.theta_features(&rec.theta);
        let inv_psi = 1.0 / rec.proposal_density_value;
        for (s, x) in sums.iter_mut().zip(&points) {
            s.add(p.integrand_with(x, &feat) * inv_psi);
        }
        if i == cfg.n_schedule[next] {
            let h: Vec<f64> = sums.iter().zip(&f).map(|(s, f)| s.value() / i as f64 - f).collect();
            trace.h_points.push(h[..k].to_vec());
            trace.grid_max.push(h[k..].iter().copied().fold(f64::NEG_INFINITY, f64::max));
            trace.grid_max_abs.push(h[k..].iter().fold(0.0, |m, v| m.max(v.abs())));
            next += 1;
        }
    }
    trace
}

fn validate(p: &ProblemInstance, cfg: &SoundnessConfig) -> Result<()> {
    if cfg.n_schedule.is_empty() || cfg.n_schedule[0] == 0 || cfg.n_schedule.windows(2).any(|w| w[0] >= w[1]) {
        bail!(Input, "n_schedule must be a nonempty strictly increasing list of positive sizes");
    }
    if cfg.replications == 0 {
        bail!(Input, "replications must be positive");
    }
    if cfg.epsilons.is_empty() || cfg.epsilons.iter().any(|e| !(*e > 0.0 && e.is_finite())) {
        bail!(Input, "epsilon values must be positive and finite");
    }
    if cfg.grid_per_dim < 2 {
        bail!(Input, "the supremum grid needs at least 2 points per axis");
    }
    for x in &cfg.x_eval {
        if !p.domain().contains(x) {
            bail!(Domain, "evaluation point {x:?} lies outside the decision box");
        }
    }
    cfg.modulus.validate()
}

/// Runs `replications` independent chains and tabulates every (n, ε, x)
/// row. Bounds that cannot be formed (no analytic envelope for the policy,
/// ε outside its admissible range, uniform-bound preconditions) mark the
/// affected rows as skipped; the remaining rows are still evaluated.
pub fn exceedance_experiment(p: &Arc<ProblemInstance>, policy: &AdaptionPolicy, cfg: &SoundnessConfig) -> Result<SoundnessReport> {
    validate(p, cfg)?;
    policy.validate()?;
    let grid = p.domain().grid(cfg.grid_per_dim);
    let traces: Vec<ChainTrace> =
        (0..cfg.replications as u64).into_par_iter().map(|r| run_chain(p, policy, cfg, &grid, derive_seed(cfg.seed, r))).collect();
    let factor = policy.envelope_factor(p.reference_proposal());
    let no_envelope = || format!("no analytic envelope for a {:?} policy", policy.kind);
    let r = cfg.replications;

    let mut pointwise = Vec::new();
    for (j, &n) in cfg.n_schedule.iter().enumerate() {
        for (xi, x) in cfg.x_eval.iter().enumerate() {
            let env = factor.map(|fac| envelope_from(fac * p.envelope_beta(x), p.true_objective(x)));
            for &e in &cfg.epsilons {
                let epsilon = match (cfg.epsilon_mode, env) {
                    (EpsilonMode::Absolute, _) => e,
                    (EpsilonMode::RelativeToEnvelope, Some((b, _))) => e * b,
                    (EpsilonMode::RelativeToEnvelope, None) => bail!(
                        Capability,
                        "relative ε needs an envelope, which a {:?} policy does not provide",
                        policy.kind
                    ),
                };
                let count = |pred: &dyn Fn(f64) -> bool| traces.iter().filter(|t| pred(t.h_points[j][xi])).count();
                let upper = Frequency::from_count(count(&|h| h >= epsilon), r);
                let lower = Frequency::from_count(count(&|h| h <= -epsilon), r);
                let two_sided = Frequency::from_count(count(&|h| h.abs() >= epsilon), r);
                let (bound, status) = match env {
                    None => (None, RowStatus::Skipped(no_envelope())),
                    Some((b, _)) if epsilon >= b => (None, RowStatus::Skipped(format!("ε = {epsilon} ≥ b(x) = {b}"))),
                    Some((b, k)) => {
                        let pb = pointwise_bound(b, k, epsilon, n as u64)?;
                        let ok = upper.within(pb.one_sided) && lower.within(pb.one_sided) && two_sided.within(pb.two_sided);
                        (Some(pb), if ok { RowStatus::Ok } else { RowStatus::Violated })
                    }
                };
                pointwise.push(PointwiseRow { n, epsilon, x: x.clone(), upper, lower, two_sided, bound, status });
            }
        }
    }

    // Uniform rows use the distinct ε values of the pointwise rows.
    let mut eps_values: Vec<f64> = pointwise.iter().filter(|r| r.n == cfg.n_schedule[0]).map(|r| r.epsilon).collect();
    eps_values.sort_by(f64::total_cmp);
    eps_values.dedup();
    let mut uniform = Vec::new();
    let mut decay = Vec::new();
    if let Some(delta) = cfg.delta {
        let cover = covering(p.domain(), delta)?;
        for &epsilon in &eps_values {
            let mut freqs = Vec::new();
            let mut bound_slope = None;
            for (j, &n) in cfg.n_schedule.iter().enumerate() {
                let sup_upper = Frequency::from_count(traces.iter().filter(|t| t.grid_max[j] >= epsilon).count(), r);
                let sup_two_sided = Frequency::from_count(traces.iter().filter(|t| t.grid_max_abs[j] >= epsilon).count(), r);
                freqs.push(sup_two_sided.value);
                let built = match factor {
                    None => Err(no_envelope()),
                    Some(fac) => {
                        let m_max = 1.0 / cfg.modulus.eval(delta);
                        CalmnessSpec::for_problem(p, fac, &cfg.modulus, MRule::Largest { m_max })
                            .and_then(|calm| uniform_bound(p, fac, &cover, &calm, &cfg.modulus, epsilon, n as u64))
                            .map_err(|e| e.to_string())
                    }
                };
                let row = match built {
                    Err(reason) => UniformRow {
                        n,
                        epsilon,
                        sup_upper,
                        sup_two_sided,
                        bound: None,
                        one_sided_bound: None,
                        two_sided_bound: None,
                        dominant_exponent: None,
                        status: RowStatus::Skipped(reason),
                    },
                    Ok(ub) => {
                        let ok = sup_upper.within(ub.one_sided) && sup_two_sided.within(ub.two_sided);
                        bound_slope = Some(-ub.dominant_exponent);
                        UniformRow {
                            n,
                            epsilon,
                            sup_upper,
                            sup_two_sided,
                            one_sided_bound: Some(ub.one_sided),
                            two_sided_bound: Some(ub.two_sided),
                            dominant_exponent: Some(ub.dominant_exponent),
                            bound: Some(ub),
                            status: if ok { RowStatus::Ok } else { RowStatus::Violated },
                        }
                    }
                };
                uniform.push(row);
            }
            if let Some(bound_slope) = bound_slope {
                let ns: Vec<f64> = cfg.n_schedule.iter().map(|n| *n as f64).collect();
                let fitted_slope = fit_log_decay(&ns, &freqs);
                let passed = match fitted_slope {
                    None => None,
                    // A single positive frequency at the largest n gives no slope.
                    Some(s) if s == 0.0 && freqs.iter().filter(|f| **f > 0.0).count() == 1 => None,
                    Some(s) => Some(s <= DECAY_SLOPE_FRACTION * bound_slope),
                };
                decay.push(DecayRow { epsilon, fitted_slope, bound_slope, passed });
            }
        }
    }

    let violations = pointwise.iter().filter(|r| r.status == RowStatus::Violated).count()
        + uniform.iter().filter(|r| r.status == RowStatus::Violated).count();
    Ok(SoundnessReport {
        problem: p.name().to_string(),
        policy: format!("{:?}", policy.kind),
        replications: r,
        n_schedule: cfg.n_schedule.clone(),
        delta: cfg.delta,
        grid_points: grid.len(),
        pointwise,
        uniform,
        decay,
        violations,
    })
}

fn fmt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |v| format!("{v:.16e}"))
}

/// Bound-versus-empirical table: one row per (n, ε, x), with the uniform
/// columns of the matching (n, ε) when a covering radius was given.
pub fn write_bound_table_csv<W: Write>(report: &SoundnessReport, writer: W) -> Result<()> {
    let m = report.pointwise.first().map_or(0, |r| r.x.len());
    let mut w = csv::Writer::from_writer(writer);
    let mut header: Vec<String> = vec!["n".into(), "epsilon".into()];
    header.extend((1..=m).map(|k| format!("x_{k}")));
    header.extend(
        [
            "pointwise_bound",
            "two_sided_bound",
            "empirical_upper",
            "empirical_lower",
            "empirical_probability",
            "mc_stderr",
            "status",
            "uniform_bound",
            "uniform_empirical_probability",
            "uniform_mc_stderr",
            "uniform_status",
        ]
        .map(String::from),
    );
    w.write_record(&header)?;
    for row in &report.pointwise {
        let u = report.uniform.iter().find(|u| u.n == row.n && u.epsilon == row.epsilon);
        let mut rec = vec![row.n.to_string(), format!("{:.16e}", row.epsilon)];
        rec.extend(row.x.iter().map(|v| format!("{v:.16e}")));
        rec.extend([
            fmt(row.bound.map(|b| b.one_sided)),
            fmt(row.bound.map(|b| b.two_sided)),
            fmt(Some(row.upper.value)),
            fmt(Some(row.lower.value)),
            fmt(Some(row.two_sided.value)),
            fmt(Some(row.two_sided.stderr)),
            row.status.label(),
            fmt(u.and_then(|u| u.two_sided_bound)),
            fmt(u.map(|u| u.sup_two_sided.value)),
            fmt(u.map(|u| u.sup_two_sided.stderr)),
            u.map_or_else(String::new, |u| u.status.label()),
        ]);
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}
