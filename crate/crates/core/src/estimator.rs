//! The sample-average objective f_n(x) = (1/n) Σ F(x,θ_i)/ψ_i(θ_i) and its
//! deviation H_n(x) = f_n(x) − f(x) = S_n(x)/n, with S_n the partial sum of the
//! martingale differences Υ_i(x) = F(x,θ_i)/ψ_i(θ_i) − f(x).

use std::io::Write;
use std::sync::Arc;

use rayon::prelude::*;
use serde::Serialize;

use crate::amis::{AdaptionPolicy, SampleRecord};
use crate::error::{bail, Error, Result};
use crate::problems::{ProblemInstance, ThetaFeatures};
use crate::summation::NeumaierSum;

#[derive(Debug, Clone)]
struct Tracked {
    x: Vec<f64>,
    f: f64,
    weights: NeumaierSum,
    upsilon_sq: NeumaierSum,
    upsilons: Option<Vec<f64>>,
}

/// Running state of f_n over a growing sample.
///
/// Points registered with [`EstimatorSnapshot::track`] keep compensated
/// running sums updated on every [`EstimatorSnapshot::push`]; any other point
/// is evaluated by a full pass over the stored draws in the same order, so
/// both routes give identical values.
#[derive(Debug, Clone)]
pub struct EstimatorSnapshot {
    problem: Arc<ProblemInstance>,
    features: Vec<ThetaFeatures>,
    psi: Vec<f64>,
    tracked: Vec<Tracked>,
    retain_upsilons: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DeviationSample {
    pub x: Vec<f64>,
    /// H_n(x) = f_n(x) − f(x).
    pub h_n: f64,
    /// S_n(x) = n·H_n(x).
    pub s_n: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub upsilons: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GridProfile {
    pub points: Vec<Vec<f64>>,
    pub f_n: Vec<f64>,
    pub h_n: Vec<f64>,
    pub sup_abs_h: f64,
}

impl EstimatorSnapshot {
    pub fn new(problem: Arc<ProblemInstance>) -> Self {
        Self { problem, features: Vec::new(), psi: Vec::new(), tracked: Vec::new(), retain_upsilons: false }
    }

    pub fn from_history(problem: Arc<ProblemInstance>, history: &[SampleRecord]) -> Self {
        let mut s = Self::new(problem);
        s.extend(history);
        s
    }

    /// Keep every Υ_i at tracked points (memory grows as n × points).
    pub fn retain_upsilons(mut self, on: bool) -> Self {
        self.retain_upsilons = on;
        self
    }

    pub fn problem(&self) -> &Arc<ProblemInstance> {
        &self.problem
    }

    pub fn n(&self) -> usize {
        self.psi.len()
    }

    fn check_point(&self, x: &[f64]) -> Result<()> {
        if !self.problem.domain().contains(x) {
            bail!(Domain, "x={x:?} lies outside the decision box {:?}", self.problem.domain());
        }
        Ok(())
    }

    /// Registers a point for incremental updates; returns its handle.
    pub fn track(&mut self, x: &[f64]) -> Result<usize> {
        self.check_point(x)?;
        let f = self.problem.true_objective(x);
        let mut t = Tracked {
            x: x.to_vec(),
            f,
            weights: NeumaierSum::new(),
            upsilon_sq: NeumaierSum::new(),
            upsilons: self.retain_upsilons.then(Vec::new),
        };
        for (feat, psi) in self.features.iter().zip(&self.psi) {
            Self::fold(&self.problem, &mut t, feat, *psi);
        }
        self.tracked.push(t);
        Ok(self.tracked.len() - 1)
    }

    #[inline]
    fn fold(problem: &ProblemInstance, t: &mut Tracked, feat: &ThetaFeatures, psi: f64) {
        let w = problem.integrand_with(&t.x, feat) / psi;
        t.weights.add(w);
        let u = w - t.f;
        t.upsilon_sq.add(u * u);
        if let Some(v) = &mut t.upsilons {
            v.push(u);
        }
    }

    /// Appends draw θ with proposal value ψ(θ) > 0.
    pub fn push(&mut self, theta: &[f64], psi: f64) {
        debug_assert!(psi > 0.0);
        let feat = self.problem.theta_features(theta);
        for t in &mut self.tracked {
            Self::fold(&self.problem, t, &feat, psi);
        }
        self.features.push(feat);
        self.psi.push(psi);
    }

    pub fn push_record(&mut self, record: &SampleRecord) {
        self.push(&record.theta, record.proposal_density_value);
    }

    pub fn extend(&mut self, history: &[SampleRecord]) {
        self.features.reserve(history.len());
        self.psi.reserve(history.len());
        for r in history {
            self.push_record(r);
        }
    }

    /// Σ F(x,θ_i)/ψ_i(θ_i) by a full pass; no domain check.
    pub fn weight_sum_unchecked(&self, x: &[f64]) -> f64 {
        let mut s = NeumaierSum::new();
        for (feat, psi) in self.features.iter().zip(&self.psi) {
            s.add(self.problem.integrand_with(x, feat) / psi);
        }
        s.value()
    }

    /// f_n(x) without the domain check, for optimizers working inside 𝒳.
    pub fn value_unchecked(&self, x: &[f64]) -> f64 {
        self.weight_sum_unchecked(x) / self.n() as f64
    }

    /// f_n(x) for x ∈ 𝒳.
    pub fn evaluate_fn(&self, x: &[f64]) -> Result<f64> {
        self.check_point(x)?;
        if self.n() == 0 {
            bail!(Input, "f_n needs at least one sample");
        }
        Ok(self.value_unchecked(x))
    }

    /// F(x,θ_i)/ψ_i(θ_i) for every stored draw.
    pub fn weights(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_point(x)?;
        Ok(self.features.iter().zip(&self.psi).map(|(f, p)| self.problem.integrand_with(x, f) / p).collect())
    }

    pub fn deviation(&self, x: &[f64]) -> Result<DeviationSample> {
        let fn_x = self.evaluate_fn(x)?;
        let h = fn_x - self.problem.true_objective(x);
        Ok(DeviationSample { x: x.to_vec(), h_n: h, s_n: self.n() as f64 * h, upsilons: None })
    }

    pub fn tracked_point(&self, handle: usize) -> &[f64] {
        &self.tracked[handle].x
    }

    /// f_n at a tracked point, from its running sum.
    pub fn tracked_value(&self, handle: usize) -> f64 {
        self.tracked[handle].weights.value() / self.n() as f64
    }

    /// H_n at a tracked point, from its running sum.
    pub fn tracked_deviation(&self, handle: usize) -> DeviationSample {
        let t = &self.tracked[handle];
        let h = self.tracked_value(handle) - t.f;
        DeviationSample { x: t.x.clone(), h_n: h, s_n: self.n() as f64 * h, upsilons: t.upsilons.clone() }
    }

    /// (1/n) Σ Υ_i(x)² at a tracked point.
    pub fn tracked_mean_square(&self, handle: usize) -> f64 {
        self.tracked[handle].upsilon_sq.value() / self.n() as f64
    }

    /// f_n and H_n over a grid in one pass over the draws; grid points are
    /// processed in parallel.
    pub fn grid_profile(&self, grid: &[Vec<f64>]) -> Result<GridProfile> {
        if grid.is_empty() {
            bail!(Input, "grid_profile needs a nonempty grid");
        }
        if self.n() == 0 {
            bail!(Input, "f_n needs at least one sample");
        }
        for x in grid {
            self.check_point(x)?;
        }
        let f_n: Vec<f64> = grid.par_iter().map(|x| self.value_unchecked(x)).collect();
        let h_n: Vec<f64> = grid.iter().zip(&f_n).map(|(x, v)| v - self.problem.true_objective(x)).collect();
        let sup_abs_h = h_n.iter().fold(0.0f64, |m, h| m.max(h.abs()));
        Ok(GridProfile { points: grid.to_vec(), f_n, h_n, sup_abs_h })
    }
}

/// L = β + |f| and C = β(|f| + 1).
pub fn envelope_from(beta: f64, f: f64) -> (f64, f64) {
    (beta + f.abs(), beta * (f.abs() + 1.0))
}

/// (L(x), C(x)) from the problem's analytic β for its reference proposal.
pub fn envelope(p: &ProblemInstance, x: &[f64]) -> (f64, f64) {
    envelope_from(p.envelope_beta(x), p.true_objective(x))
}

/// (L(x), C(x)) for draws produced by `policy`, with β scaled by the policy's
/// envelope factor.
pub fn envelope_for_policy(p: &ProblemInstance, policy: &AdaptionPolicy, x: &[f64]) -> Result<(f64, f64)> {
    match policy.envelope_factor(p.reference_proposal()) {
        Some(factor) => Ok(envelope_from(factor * p.envelope_beta(x), p.true_objective(x))),
        None => Err(Error::Capability(format!(
            "no analytic weight envelope for a {:?} policy on '{}'; envelopes exist for the fixed reference proposal \
             and defensive mixtures over it",
            policy.kind,
            p.name()
        ))),
    }
}

/// Writes `x_1..x_m, f_n, H_n` rows.
pub fn write_profile_csv<W: Write>(profile: &GridProfile, writer: W) -> Result<()> {
    let m = profile.points.first().map_or(0, Vec::len);
    let mut w = csv::Writer::from_writer(writer);
    let mut header: Vec<String> = (1..=m).map(|k| format!("x_{k}")).collect();
    header.push("f_n".into());
    header.push("H_n".into());
    w.write_record(&header)?;
    for ((x, f), h) in profile.points.iter().zip(&profile.f_n).zip(&profile.h_n) {
        let mut row: Vec<String> = x.iter().map(|v| format!("{v:.16e}")).collect();
        row.push(format!("{f:.16e}"));
        row.push(format!("{h:.16e}"));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::densities::Density;
    use crate::domain::BoxDomain;
    use crate::problems::{builtin_problem, Template};

    fn self_normalizing() -> Arc<ProblemInstance> {
        let factor = Density::gaussian(vec![0.0], vec![1.0]).unwrap();
        Arc::new(ProblemInstance::new("sn", Template::SelfNormalizing { factor }, BoxDomain::unit(1)).unwrap())
    }

    #[test]
    fn envelope_formulas() {
        assert_eq!(envelope_from(2.0, 1.0), (3.0, 4.0));
        assert_eq!(envelope_from(1.0, 0.0), (1.0, 1.0));
    }

    #[test]
    fn mean_of_two_weights() {
        // abs_uniform with uniform proposal: weight at x=1 is 1−θ.
        let p = Arc::new(builtin_problem("abs_uniform_1d").unwrap());
        let mut s = EstimatorSnapshot::new(p);
        s.push(&[-1.0], 0.5); // outside Θ: zero weight
        s.push(&[0.0], 0.5); // |1−0|/0.5 = 2
        s.push(&[0.0], 0.25); // 4
        let w = s.weights(&[1.0]).unwrap();
        assert_eq!(w, vec![0.0, 2.0, 4.0]);
        assert_eq!(s.evaluate_fn(&[1.0]).unwrap(), 2.0);
    }

    #[test]
    fn self_normalizing_fixture_is_exact() {
        let p = self_normalizing();
        let d = p.reference_proposal().clone();
        let mut s = EstimatorSnapshot::new(Arc::clone(&p));
        let mut r = crate::rng::stream(1, 0);
        for _ in 0..100 {
            let t = d.sample(&mut r);
            s.push(&t, d.pdf(&t));
        }
        let prof = s.grid_profile(&BoxDomain::unit(1).grid(11)).unwrap();
        assert!(prof.f_n.iter().all(|v| *v == 1.0));
        assert_eq!(prof.sup_abs_h, 0.0);
        assert_eq!(s.deviation(&[0.2]).unwrap().h_n, 0.0);
    }

    #[test]
    fn single_sample_deviation() {
        let p = Arc::new(builtin_problem("abs_uniform_1d").unwrap());
        let mut s = EstimatorSnapshot::new(Arc::clone(&p));
        s.push(&[0.1], 1.0);
        let d = s.deviation(&[0.5]).unwrap();
        assert!((d.h_n - (0.4 - 0.25)).abs() < 1e-15);
        assert_eq!(d.s_n, d.h_n);
    }

    #[test]
    fn outside_box_is_domain_error() {
        let s = EstimatorSnapshot::new(self_normalizing());
        assert!(matches!(s.evaluate_fn(&[1.5]), Err(Error::Domain(_))));
        assert!(matches!(s.grid_profile(&[]), Err(Error::Input(_))));
    }

    #[test]
    fn tracked_and_full_pass_agree() {
        let p = Arc::new(builtin_problem("quad_gauss_1d").unwrap());
        let d = p.reference_proposal().clone();
        let mut s = EstimatorSnapshot::new(Arc::clone(&p)).retain_upsilons(true);
        let h = s.track(&[0.7]).unwrap();
        let mut r = crate::rng::stream(4, 0);
        for _ in 0..5000 {
            let t = d.sample(&mut r);
            s.push(&t, d.pdf(&t));
        }
        assert_eq!(s.tracked_value(h), s.evaluate_fn(&[0.7]).unwrap());
        let dev = s.tracked_deviation(h);
        let ups: f64 = dev.upsilons.as_ref().unwrap().iter().sum();
        assert!((dev.s_n - ups).abs() < 1e-10);
        let late = s.track(&[0.7]).unwrap();
        assert_eq!(s.tracked_value(late), s.tracked_value(h));
    }

    #[test]
    fn profile_csv_layout() {
        let prof = GridProfile { points: vec![vec![0.0, 1.0]], f_n: vec![2.0], h_n: vec![0.5], sup_abs_h: 0.5 };
        let mut buf = Vec::new();
        write_profile_csv(&prof, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(
            text,
            "x_1,x_2,f_n,H_n\n0.0000000000000000e0,1.0000000000000000e0,2.0000000000000000e0,5.0000000000000000e-1\n"
        );
    }
}
