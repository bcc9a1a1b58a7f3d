//! Sequential adaptive multiple importance sampling.
//!
//! Draw i uses proposal ψ_i, which is a deterministic function of the policy
//! and of draws 1..i−1 only. Adaptation happens after a draw is recorded, at
//! multiples of the update period, so ψ_i is always fixed before θ_i exists.

use std::io::{Read, Write};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::densities::{Density, DensitySpec, SupportRegion};
use crate::error::{bail, Error, Result};
use crate::problems::ProblemInstance;
use crate::rng::{self, ChainRng};
use crate::summation::NeumaierSum;

/// Adapted proposals with a coordinate variance below this floor are rejected.
pub const VARIANCE_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyKind {
    /// Classical importance sampling: ψ_i = initial proposal.
    Fixed,
    /// Gaussian (truncated to the initial box when the initial proposal is
    /// bounded) matched to the weighted mean and variance of the history.
    MomentMatching,
    /// Mixture of the initial proposal (weight w) and the moment-matched one.
    DefensiveMixture,
    /// Negative control: a gaussian whose scale grows linearly with every
    /// update. Its weights are not uniformly bounded.
    Diverging,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdaptionPolicy {
    pub kind: PolicyKind,
    pub update_period: usize,
    pub defensive_weight: f64,
    /// Scale growth per update for [`PolicyKind::Diverging`].
    #[serde(default = "default_growth")]
    pub growth: f64,
    pub initial_proposal: Density,
}

fn default_growth() -> f64 {
    1.0
}

pub const DEFAULT_UPDATE_PERIOD: usize = 50;
pub const DEFAULT_DEFENSIVE_WEIGHT: f64 = 0.8;

impl AdaptionPolicy {
    pub fn new(kind: PolicyKind, initial_proposal: Density, update_period: usize, defensive_weight: f64) -> Result<Self> {
        let p = Self { kind, update_period, defensive_weight, growth: default_growth(), initial_proposal };
        p.validate()?;
        Ok(p)
    }

    pub fn fixed(initial_proposal: Density) -> Self {
        Self::new(PolicyKind::Fixed, initial_proposal, DEFAULT_UPDATE_PERIOD, DEFAULT_DEFENSIVE_WEIGHT).expect("valid defaults")
    }

    pub fn moment_matching(initial_proposal: Density, update_period: usize) -> Result<Self> {
        Self::new(PolicyKind::MomentMatching, initial_proposal, update_period, DEFAULT_DEFENSIVE_WEIGHT)
    }

    pub fn defensive_mixture(initial_proposal: Density, update_period: usize, defensive_weight: f64) -> Result<Self> {
        Self::new(PolicyKind::DefensiveMixture, initial_proposal, update_period, defensive_weight)
    }

    pub fn diverging(initial_proposal: Density, update_period: usize, growth: f64) -> Result<Self> {
        let mut p = Self::new(PolicyKind::Diverging, initial_proposal, update_period, DEFAULT_DEFENSIVE_WEIGHT)?;
        if !(growth.is_finite() && growth > 0.0) {
            bail!(Input, "growth must be positive, got {growth}");
        }
        p.growth = growth;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if self.update_period < 1 {
            bail!(Input, "update_period must be at least 1");
        }
        if !(0.05..=0.95).contains(&self.defensive_weight) {
            bail!(Input, "defensive_weight must lie in [0.05, 0.95], got {}", self.defensive_weight);
        }
        Ok(())
    }

    /// Factor by which the reference-proposal envelopes (β, k̂) grow under
    /// this policy, when the policy guarantees one.
    ///
    /// A fixed reference proposal needs no factor; a defensive mixture keeps
    /// weight w on it, so ψ_i ≥ w·ψ_ref and every ratio grows by at most 1/w.
    pub fn envelope_factor(&self, reference: &Density) -> Option<f64> {
        if &self.initial_proposal != reference {
            return None;
        }
        match self.kind {
            PolicyKind::Fixed => Some(1.0),
            PolicyKind::DefensiveMixture => Some(1.0 / self.defensive_weight),
            PolicyKind::MomentMatching | PolicyKind::Diverging => None,
        }
    }
}

/// One recorded draw.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleRecord {
    /// 1-based position in the chain.
    pub index: usize,
    pub theta: Vec<f64>,
    /// ψ_i(θ_i), evaluated on `proposal`.
    pub proposal_density_value: f64,
    pub proposal: Arc<Density>,
}

/// Importance target used to weight the history when matching moments.
pub type Target = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

/// Deterministic fold of the history into weighted moments.
#[derive(Debug, Clone)]
struct Adapter {
    weight: NeumaierSum,
    first: Vec<NeumaierSum>,
    second: Vec<NeumaierSum>,
    updates: usize,
}

impl Adapter {
    fn new(dim: usize) -> Self {
        Self { weight: NeumaierSum::new(), first: vec![NeumaierSum::new(); dim], second: vec![NeumaierSum::new(); dim], updates: 0 }
    }

    fn observe(&mut self, theta: &[f64], psi: f64, target: Option<&Target>) {
        let w = match target {
            Some(t) => t(theta) / psi,
            None => 1.0,
        };
        if !(w.is_finite() && w > 0.0) {
            return;
        }
        self.weight.add(w);
        for (k, t) in theta.iter().enumerate() {
            self.first[k].add(w * t);
            self.second[k].add(w * t * t);
        }
    }

    fn matched(&self, initial: &Density) -> Result<Density> {
        let total = self.weight.value();
        if !(total > 0.0) {
            bail!(Adaptation, "no draw carries positive importance weight");
        }
        let mean: Vec<f64> = self.first.iter().map(|s| s.value() / total).collect();
        let mut sd = Vec::with_capacity(mean.len());
        for (k, m) in mean.iter().enumerate() {
            let var = self.second[k].value() / total - m * m;
            if !(var >= VARIANCE_FLOOR) {
                bail!(Adaptation, "adapted variance {var:e} in coordinate {k} is below the floor {VARIANCE_FLOOR:e}");
            }
            sd.push(var.sqrt());
        }
        match initial.support() {
            SupportRegion::AllOfRr { .. } => Density::gaussian(mean, sd),
            SupportRegion::Box(b) => Density::truncated_gaussian(mean, sd, b.clone()),
        }
        .map_err(|e| Error::Adaptation(format!("adapted proposal rejected: {e}")))
    }

    fn diverging(&self, initial: &Density, growth: f64) -> Result<Density> {
        let scale = 1.0 + growth * self.updates as f64;
        let (mean, sd) = match (initial.location_scale(), initial.support()) {
            (Some((m, s)), _) => (m.to_vec(), s.to_vec()),
            (None, SupportRegion::Box(b)) => (b.center(), b.widths()),
            (None, SupportRegion::AllOfRr { dim }) => (vec![0.0; *dim], vec![1.0; *dim]),
        };
        Density::gaussian(mean, sd.iter().map(|s| s * scale).collect())
    }

    /// Proposal after the current update, or the error that forced a fallback
    /// to the initial proposal.
    fn propose(&mut self, policy: &AdaptionPolicy) -> (Density, Option<Error>) {
        self.updates += 1;
        let initial = &policy.initial_proposal;
        let attempt = match policy.kind {
            PolicyKind::Fixed => return (initial.clone(), None),
            PolicyKind::MomentMatching => self.matched(initial),
            PolicyKind::DefensiveMixture => self.matched(initial).and_then(|adapted| {
                let w = policy.defensive_weight;
                Density::mixture(vec![w, 1.0 - w], vec![initial.clone(), adapted])
            }),
            PolicyKind::Diverging => self.diverging(initial, policy.growth),
        };
        match attempt {
            Ok(d) => (d, None),
            Err(e) => (initial.clone(), Some(e)),
        }
    }
}

/// State of one chain: policy, history, current proposal and generator.
pub struct Sampler {
    policy: AdaptionPolicy,
    target: Option<Target>,
    history: Vec<SampleRecord>,
    current: Arc<Density>,
    rng: ChainRng,
    adapter: Adapter,
    adaptation_errors: Vec<(usize, String)>,
    scratch: Vec<f64>,
    keep_history: bool,
}

impl Sampler {
    pub fn new(policy: AdaptionPolicy, target: Option<Target>, seed: u64) -> Self {
        let current = Arc::new(policy.initial_proposal.clone());
        let adapter = Adapter::new(current.dim());
        Self {
            policy,
            target,
            history: Vec::new(),
            current,
            rng: rng::rng_from_seed(seed),
            adapter,
            adaptation_errors: Vec::new(),
            scratch: Vec::new(),
            keep_history: true,
        }
    }

    /// A chain whose adaptive policies chase the problem's importance target.
    pub fn for_problem(problem: &Arc<ProblemInstance>, policy: AdaptionPolicy, seed: u64) -> Self {
        let p = Arc::clone(problem);
        Self::new(policy, Some(Arc::new(move |t: &[f64]| p.adaptation_target(t))), seed)
    }

    /// Keeps only the latest record, for long chains consumed on the fly.
    pub fn without_history(mut self) -> Self {
        self.keep_history = false;
        self.history.clear();
        self
    }

    pub fn policy(&self) -> &AdaptionPolicy {
        &self.policy
    }
    pub fn history(&self) -> &[SampleRecord] {
        &self.history
    }
    pub fn current_proposal(&self) -> &Arc<Density> {
        &self.current
    }
    /// Update indices at which adaptation fell back to the initial proposal.
    pub fn adaptation_errors(&self) -> &[(usize, String)] {
        &self.adaptation_errors
    }
    pub fn into_history(self) -> Vec<SampleRecord> {
        self.history
    }

    /// Draws θ_i from the current proposal, records it, then adapts.
    pub fn next_sample(&mut self) -> &SampleRecord {
        self.current.sample_into(&mut self.rng, &mut self.scratch);
        let theta = self.scratch.clone();
        let psi = self.current.pdf(&theta);
        debug_assert!(psi > 0.0, "draw outside proposal support");
        let index = self.history.last().map_or(0, |r| r.index) + 1;
        if !self.keep_history {
            self.history.clear();
        }
        self.adapter.observe(&theta, psi, self.target.as_ref());
        self.history.push(SampleRecord { index, theta, proposal_density_value: psi, proposal: Arc::clone(&self.current) });
        if self.policy.kind != PolicyKind::Fixed && index.is_multiple_of(self.policy.update_period) {
            let (next, err) = self.adapter.propose(&self.policy);
            if let Some(e) = err {
                self.adaptation_errors.push((index, e.to_string()));
            }
            if *self.current != next {
                self.current = Arc::new(next);
            }
        }
        self.history.last().expect("just pushed")
    }

    pub fn run(&mut self, n: usize) {
        if self.keep_history {
            self.history.reserve(n);
        }
        for _ in 0..n {
            self.next_sample();
        }
    }
}

/// Replays the policy on a recorded history: element i is the proposal that
/// draws 1..i−1 determine for step i.
pub fn regenerate_proposals(policy: &AdaptionPolicy, target: Option<&Target>, history: &[SampleRecord]) -> Vec<Density> {
    let mut adapter = Adapter::new(policy.initial_proposal.dim());
    let mut current = policy.initial_proposal.clone();
    let mut out = Vec::with_capacity(history.len());
    for rec in history {
        out.push(current.clone());
        adapter.observe(&rec.theta, rec.proposal_density_value, target);
        if policy.kind != PolicyKind::Fixed && rec.index.is_multiple_of(policy.update_period) {
            current = adapter.propose(policy).0;
        }
    }
    out
}

/// F(x,θ_i)/ψ_i(θ_i) for every recorded draw.
pub fn weight_stream(p: &ProblemInstance, history: &[SampleRecord], x: &[f64]) -> Vec<f64> {
    history.iter().map(|r| p.integrand(x, &r.theta) / r.proposal_density_value).collect()
}

/// Writes columns `i, theta_1..theta_r, psi_value, proposal_params`, the last
/// being the compact JSON of the proposal.
pub fn export_history<W: Write>(history: &[SampleRecord], writer: W) -> Result<()> {
    let r = history.first().map_or(0, |h| h.theta.len());
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["i".to_string()];
    header.extend((1..=r).map(|k| format!("theta_{k}")));
    header.push("psi_value".into());
    header.push("proposal_params".into());
    w.write_record(&header)?;
    let mut last: Option<(*const Density, String)> = None;
    for rec in history {
        let ptr = Arc::as_ptr(&rec.proposal);
        let json = match &last {
            Some((p, s)) if *p == ptr => s.clone(),
            _ => serde_json::to_string(&rec.proposal.to_spec())?,
        };
        let mut row = vec![rec.index.to_string()];
        row.extend(rec.theta.iter().map(|t| format!("{t:.16e}")));
        row.push(format!("{:.16e}", rec.proposal_density_value));
        row.push(json.clone());
        w.write_record(&row)?;
        last = Some((ptr, json));
    }
    w.flush()?;
    Ok(())
}

/// Reads a history written by [`export_history`], checking that every
/// stored ψ value matches its proposal.
pub fn import_history<R: Read>(reader: R) -> Result<Vec<SampleRecord>> {
    let mut rd = csv::Reader::from_reader(reader);
    let headers = rd.headers()?.clone();
    if headers.len() < 4 || &headers[0] != "i" || &headers[headers.len() - 1] != "proposal_params" {
        bail!(Input, "not a sample history: unexpected header {headers:?}");
    }
    let r = headers.len() - 3;
    let mut out: Vec<SampleRecord> = Vec::new();
    let mut last: Option<(String, Arc<Density>)> = None;
    for row in rd.records() {
        let row = row?;
        let parse = |s: &str| s.parse::<f64>().map_err(|e| Error::Input(format!("bad number '{s}': {e}")));
        let index: usize = row[0].parse().map_err(|e| Error::Input(format!("bad index '{}': {e}", &row[0])))?;
        let theta = (1..=r).map(|k| parse(&row[k])).collect::<Result<Vec<_>>>()?;
        let psi = parse(&row[r + 1])?;
        let json = &row[r + 2];
        let proposal = match &last {
            Some((s, d)) if s == json => Arc::clone(d),
            _ => {
                let spec: DensitySpec = serde_json::from_str(json)?;
                Arc::new(Density::try_from(spec)?)
            }
        };
        let recomputed = proposal.evaluate(&theta)?;
        if recomputed != psi {
            bail!(Input, "row {index}: stored psi {psi:e} differs from the proposal's value {recomputed:e}");
        }
        out.push(SampleRecord { index, theta, proposal_density_value: psi, proposal: Arc::clone(&proposal) });
        last = Some((json.to_string(), proposal));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::BoxDomain;

    fn uniform() -> Density {
        Density::uniform_box(BoxDomain::unit(1)).unwrap()
    }

    #[test]
    fn policy_ranges_are_validated() {
        assert!(AdaptionPolicy::moment_matching(uniform(), 0).is_err());
        assert!(AdaptionPolicy::defensive_mixture(uniform(), 10, 0.01).is_err());
        assert!(AdaptionPolicy::defensive_mixture(uniform(), 10, 0.96).is_err());
        assert!(AdaptionPolicy::defensive_mixture(uniform(), 10, 0.05).is_ok());
    }

    #[test]
    fn fixed_policy_never_changes_proposal() {
        let mut s = Sampler::new(AdaptionPolicy::fixed(Density::standard_gaussian(1)), None, 1);
        s.run(100);
        let first = Arc::clone(&s.history()[0].proposal);
        assert!(s.history().iter().all(|r| Arc::ptr_eq(&r.proposal, &first)));
    }

    #[test]
    fn psi_matches_snapshot_exactly() {
        let policy = AdaptionPolicy::defensive_mixture(Density::standard_gaussian(1), 7, 0.5).unwrap();
        let mut s = Sampler::new(policy, Some(Arc::new(|t: &[f64]| (-t[0] * t[0]).exp())), 3);
        s.run(200);
        for r in s.history() {
            assert_eq!(r.proposal_density_value, r.proposal.evaluate(&r.theta).unwrap());
            assert!(r.proposal_density_value > 0.0);
        }
    }

    #[test]
    fn moment_matching_tracks_the_uniform_mean() {
        let policy = AdaptionPolicy::moment_matching(uniform(), 50).unwrap();
        let mut s = Sampler::new(policy, None, 17);
        s.run(50);
        let draws: Vec<f64> = s.history().iter().map(|r| r.theta[0]).collect();
        let (mean, _) = s.current_proposal().location_scale().unwrap();
        let m = draws.iter().sum::<f64>() / 50.0;
        assert!((mean[0] - m).abs() < 1e-12);
        // Sample mean of 50 uniform draws against 1/2, stderr √(1/12/50).
        assert!((mean[0] - 0.5).abs() < 4.0 * (1.0 / 600.0f64).sqrt());
    }

    #[test]
    fn degenerate_adaptation_falls_back() {
        // A target that vanishes everywhere leaves no weight to match.
        let policy = AdaptionPolicy::moment_matching(uniform(), 5).unwrap();
        let mut s = Sampler::new(policy, Some(Arc::new(|_: &[f64]| 0.0)), 2);
        s.run(10);
        assert_eq!(s.adaptation_errors().len(), 2);
        assert_eq!(**s.current_proposal(), uniform());
    }

    #[test]
    fn tiny_variance_is_rejected() {
        let policy = AdaptionPolicy::moment_matching(Density::gaussian(vec![0.0], vec![1e-6]).unwrap(), 10).unwrap();
        let mut s = Sampler::new(policy, None, 2);
        s.run(10);
        assert_eq!(s.adaptation_errors().len(), 1);
        assert!(s.adaptation_errors()[0].1.contains("floor"));
    }

    #[test]
    fn regeneration_reproduces_every_snapshot() {
        let target: Target = Arc::new(|t: &[f64]| (-(t[0] - 0.3).powi(2)).exp());
        for kind in [PolicyKind::Fixed, PolicyKind::MomentMatching, PolicyKind::DefensiveMixture, PolicyKind::Diverging] {
            let policy = AdaptionPolicy::new(kind, Density::gaussian(vec![0.0], vec![1.5]).unwrap(), 13, 0.7).unwrap();
            let mut s = Sampler::new(policy.clone(), Some(Arc::clone(&target)), 99);
            s.run(500);
            let regen = regenerate_proposals(&policy, Some(&target), s.history());
            for (r, d) in s.history().iter().zip(&regen) {
                assert_eq!(*r.proposal, *d, "{kind:?} step {}", r.index);
            }
        }
    }

    #[test]
    fn same_seed_same_history() {
        let policy = AdaptionPolicy::defensive_mixture(uniform(), 10, 0.5).unwrap();
        let run = || {
            let mut s = Sampler::new(policy.clone(), None, 5);
            s.run(300);
            s.into_history()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let policy = AdaptionPolicy::defensive_mixture(Density::gaussian(vec![0.1, -0.2], vec![1.0, 2.0]).unwrap(), 25, 0.6).unwrap();
        let mut s = Sampler::new(policy, None, 8);
        s.run(120);
        let mut buf = Vec::new();
        export_history(s.history(), &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("i,theta_1,theta_2,psi_value,proposal_params\n"));
        let back = import_history(buf.as_slice()).unwrap();
        assert_eq!(back, s.history());
    }
}
