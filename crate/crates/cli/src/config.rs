//! Flat JSON experiment configuration with `--key=value` overrides.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use saa_amis::amis::{AdaptionPolicy, PolicyKind, DEFAULT_DEFENSIVE_WEIGHT, DEFAULT_UPDATE_PERIOD};
use saa_amis::asymptotics::{VarianceMode, MIN_REPLICATIONS, MIN_SAMPLE_SIZE};
use saa_amis::bounds::ModulusOfContinuity;
use saa_amis::densities::Density;
use saa_amis::optimizer::{GRID_PER_DIM, MIN_BUDGET};
use saa_amis::problems::{resolve_problem, ProblemInstance};
use saa_amis::soundness::EpsilonMode;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::CliError;

pub const SEED_ENV: &str = "AMIS_SEED";

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub problem: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub policy: Option<PolicyKind>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub proposal: Option<Density>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub update_period: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub defensive_weight: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub growth: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_schedule: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub replications: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epsilon_mode: Option<EpsilonMode>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub modulus: Option<ModulusOfContinuity>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x_eval: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threads: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub budget: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tol: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid_points: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub variance_mode: Option<VarianceMode>,
}

fn config_err(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self, CliError> {
        serde_json::from_str(text).map_err(|e| config_err(format!("invalid config: {e}")))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Builds a config from an optional file, the seed environment value and
    /// `--key=value` / `--key value` overrides, in increasing precedence.
    pub fn assemble(file: Option<&Path>, env_seed: Option<&str>, overrides: &[String]) -> Result<Self, CliError> {
        let mut map = match file {
            Some(path) => {
                let text = std::fs::read_to_string(path).map_err(|e| config_err(format!("cannot read config {}: {e}", path.display())))?;
                match serde_json::from_str::<Value>(&text) {
                    Ok(Value::Object(m)) => m,
                    Ok(_) => return Err(config_err(format!("config {} must hold a JSON object", path.display()))),
                    Err(e) => return Err(config_err(format!("invalid JSON in {}: {e}", path.display()))),
                }
            }
            None => Map::new(),
        };
        if let Some(s) = env_seed {
            let seed: u64 = s.trim().parse().map_err(|_| config_err(format!("{SEED_ENV} must be an unsigned integer, got '{s}'")))?;
            map.insert("seed".into(), Value::from(seed));
        }
        for (key, raw) in split_overrides(overrides)? {
            map.insert(key.clone(), override_value(&key, &raw));
        }
        serde_json::from_value(Value::Object(map)).map_err(|e| config_err(format!("invalid config: {e}")))
    }
}

fn split_overrides(args: &[String]) -> Result<Vec<(String, String)>, CliError> {
    let mut out = Vec::new();
    let mut it = args.iter();
    while let Some(arg) = it.next() {
        let Some(body) = arg.strip_prefix("--") else {
            return Err(config_err(format!("unexpected argument '{arg}'; overrides take the form --key=value")));
        };
        let (key, value) = match body.split_once('=') {
            Some((k, v)) => (k.to_string(), v.to_string()),
            None => {
                let v = it.next().ok_or_else(|| config_err(format!("override --{body} has no value")))?;
                (body.to_string(), v.clone())
            }
        };
        out.push((key.replace('-', "_"), value));
    }
    Ok(out)
}

const LIST_KEYS: [&str; 2] = ["epsilon", "n_schedule"];

/// JSON when the text parses as JSON, a comma-separated list for list keys,
/// and a plain string otherwise.
fn override_value(key: &str, raw: &str) -> Value {
    if let Ok(v) = serde_json::from_str::<Value>(raw) {
        if LIST_KEYS.contains(&key) && !v.is_array() {
            return Value::Array(vec![v]);
        }
        return v;
    }
    if LIST_KEYS.contains(&key) {
        let items: Option<Vec<Value>> = raw.split(',').map(|s| serde_json::from_str(s.trim()).ok()).collect();
        if let Some(items) = items {
            return Value::Array(items);
        }
    }
    Value::String(raw.to_string())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CommandKind {
    Estimate,
    Tailbound,
    Clt,
    Conditions,
    VerifyProblem,
}

/// A config checked against the command's preconditions.
pub struct Resolved {
    pub config: ExperimentConfig,
    pub problem: Arc<ProblemInstance>,
    pub policy: AdaptionPolicy,
    pub seed: u64,
    pub output_dir: PathBuf,
    pub budget: usize,
    pub tol: f64,
    pub grid_points: usize,
}

fn check_schedule(s: &[usize], min: usize) -> Result<(), CliError> {
    if s.is_empty() || s.windows(2).any(|w| w[0] >= w[1]) {
        return Err(config_err("n_schedule must be a nonempty strictly increasing list"));
    }
    if s[0] < min {
        return Err(config_err(format!("n_schedule entries must be at least {min}, got {}", s[0])));
    }
    Ok(())
}

impl Resolved {
    pub fn new(config: ExperimentConfig, command: CommandKind) -> Result<Self, CliError> {
        let name = config.problem.as_deref().ok_or_else(|| config_err("missing required field 'problem'"))?;
        let problem = Arc::new(resolve_problem(name).map_err(|e| config_err(format!("field 'problem': {e}")))?);
        let dim = problem.dim_x();

        let kind = config.policy.unwrap_or(PolicyKind::Fixed);
        let initial = config.proposal.clone().unwrap_or_else(|| problem.reference_proposal().clone());
        if initial.dim() != problem.dim_theta() {
            return Err(config_err(format!("field 'proposal': dimension {} does not match Θ dimension {}", initial.dim(), problem.dim_theta())));
        }
        if !initial.support().covers(problem.theta_support()) {
            return Err(config_err("field 'proposal': support must cover Θ"));
        }
        let mut policy = AdaptionPolicy::new(
            kind,
            initial,
            config.update_period.unwrap_or(DEFAULT_UPDATE_PERIOD),
            config.defensive_weight.unwrap_or(DEFAULT_DEFENSIVE_WEIGHT),
        )
        .map_err(|e| config_err(format!("policy: {e}")))?;
        if let Some(g) = config.growth {
            if !(g.is_finite() && g > 0.0) {
                return Err(config_err(format!("field 'growth' must be positive, got {g}")));
            }
            policy.growth = g;
        }

        let grid_points = config.grid_points.unwrap_or(if dim == 1 { 101 } else { 21 });
        if grid_points < 2 {
            return Err(config_err("field 'grid_points' must be at least 2"));
        }
        let min_budget = MIN_BUDGET.max(GRID_PER_DIM.pow(dim as u32) + 64);
        let budget = config.budget.unwrap_or(if dim == 1 { 600 } else { 1600 });
        if budget < min_budget {
            return Err(config_err(format!("field 'budget' must be at least {min_budget} for a {dim}-dimensional box, got {budget}")));
        }
        let tol = config.tol.unwrap_or(1e-8);
        if !(tol > 0.0 && tol.is_finite()) {
            return Err(config_err(format!("field 'tol' must be positive, got {tol}")));
        }
        if config.threads == Some(0) {
            return Err(config_err("field 'threads' must be at least 1"));
        }
        if let Some(n) = config.n {
            if n == 0 {
                return Err(config_err("field 'n' must be positive"));
            }
        }
        if let Some(eps) = &config.epsilon {
            if eps.is_empty() || eps.iter().any(|e| !(*e > 0.0 && e.is_finite())) {
                return Err(config_err("field 'epsilon' must be a nonempty list of positive values"));
            }
        }
        if let Some(d) = config.delta {
            if !(d > 0.0 && d.is_finite()) {
                return Err(config_err(format!("field 'delta' must be positive, got {d}")));
            }
        }
        if let Some(m) = &config.modulus {
            m.validate().map_err(|e| config_err(format!("field 'modulus': {e}")))?;
        }
        if let Some(xs) = &config.x_eval {
            for x in xs {
                if x.len() != dim || !problem.domain().contains(x) {
                    return Err(config_err(format!("field 'x_eval': point {x:?} is not in the {dim}-dimensional decision box")));
                }
            }
        }
        if let Some(s) = &config.n_schedule {
            check_schedule(s, 1)?;
        }
        match command {
            CommandKind::Clt => {
                let r = config.replications.unwrap_or(MIN_REPLICATIONS);
                if r < MIN_REPLICATIONS {
                    return Err(config_err(format!("field 'replications' must be at least {MIN_REPLICATIONS}, got {r}")));
                }
                let n = config.n.unwrap_or(4096);
                if n < MIN_SAMPLE_SIZE {
                    return Err(config_err(format!("field 'n' must be at least {MIN_SAMPLE_SIZE}, got {n}")));
                }
                if let Some(s) = &config.n_schedule {
                    check_schedule(s, MIN_SAMPLE_SIZE)?;
                }
            }
            CommandKind::Tailbound => {
                if config.replications == Some(0) {
                    return Err(config_err("field 'replications' must be positive"));
                }
            }
            CommandKind::Estimate | CommandKind::Conditions | CommandKind::VerifyProblem => {}
        }
        if command == CommandKind::VerifyProblem && grid_points < 11 {
            return Err(config_err("field 'grid_points' must be at least 11 for verification"));
        }
        Ok(Self {
            seed: config.seed.unwrap_or(0),
            output_dir: config.output_dir.clone().unwrap_or_else(|| PathBuf::from("amis-lab-output")),
            config,
            problem,
            policy,
            budget,
            tol,
            grid_points,
        })
    }

    /// Evaluation points: the configured list, or the anchor followed by the
    /// known minimizers.
    pub fn x_eval(&self) -> Vec<Vec<f64>> {
        self.config.x_eval.clone().unwrap_or_else(|| {
            let mut xs = vec![self.problem.anchor().to_vec()];
            for t in self.problem.true_solution_set() {
                if !xs.contains(&t) {
                    xs.push(t);
                }
            }
            xs
        })
    }
}
