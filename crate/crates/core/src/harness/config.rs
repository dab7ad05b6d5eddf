use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::christoffel::{
    christoffel_exact_subspace, christoffel_monte_carlo, linear_christoffel, ChristoffelEstimate, Refinement,
    DEFAULT_FLOOR,
};
use crate::error::{invalid, Error, Result};
use crate::generators::{
    enumerate_cones, ConditionId, ConditionalGenerator, ConeOptions, FamilySpec, Generator, LatentLaw,
};
use crate::measurement::{DrawMode, WeightMode};
use crate::recovery::RecoveryConfig;

/// Where a generator comes from: a synthetic family, a JSON file, or inline JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GeneratorSource {
    Family(FamilySpec),
    Path(PathBuf),
    Inline(Generator),
}

impl GeneratorSource {
    /// Builds the generator; relative paths resolve against `base`.
    pub fn load(&self, base: &Path) -> Result<Generator> {
        match self {
            GeneratorSource::Family(spec) => spec.build(),
            GeneratorSource::Path(p) => Generator::from_json(&std::fs::read_to_string(base.join(p))?),
            GeneratorSource::Inline(g) => Ok(g.clone()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChristoffelMethod {
    /// Closed form for linear classes, cone-pair subspace bound for ReLU classes.
    Exact,
    MonteCarlo,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChristoffelConfig {
    pub method: ChristoffelMethod,
    pub trials: usize,
    pub floor: f64,
    pub latent_law: LatentLaw,
    pub cones: ConeOptions,
    pub seed: u64,
}

impl Default for ChristoffelConfig {
    fn default() -> Self {
        Self {
            method: ChristoffelMethod::Exact,
            trials: 2000,
            floor: DEFAULT_FLOOR,
            latent_law: LatentLaw::default(),
            cones: ConeOptions::default(),
            seed: 0,
        }
    }
}

impl ChristoffelConfig {
    /// `K(F_{c1} − F_{c2})` by the configured method.
    pub fn estimate(&self, g: &Generator, c1: &ConditionId, c2: &ConditionId) -> Result<ChristoffelEstimate> {
        g.check_condition(c1)?;
        g.check_condition(c2)?;
        match (self.method, g) {
            (ChristoffelMethod::MonteCarlo, _) => {
                christoffel_monte_carlo(g, c1, c2, self.latent_law, self.trials, self.seed)
            }
            (ChristoffelMethod::Exact, Generator::Linear(_)) => {
                let b1 = g.linear_basis(c1).expect("linear class");
                let b2 = g.linear_basis(c2).expect("linear class");
                linear_christoffel(b1, b2, g.channels(), g.per_channel_len())
            }
            (ChristoffelMethod::Exact, Generator::Relu(_)) => {
                let d1 = enumerate_cones(g, c1, &self.cones)?;
                let d2 = if c1 == c2 { d1.clone() } else { enumerate_cones(g, c2, &self.cones)? };
                christoffel_exact_subspace(
                    &d1,
                    &d2,
                    Refinement {
                        trials: self.trials,
                        seed: self.seed,
                    },
                )
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    InRangeMatched,
    InRangeMismatched,
    OutOfRange,
}

impl Scenario {
    pub fn as_str(self) -> &'static str {
        match self {
            Scenario::InRangeMatched => "in_range_matched",
            Scenario::InRangeMismatched => "in_range_mismatched",
            Scenario::OutOfRange => "out_of_range",
        }
    }
}

/// Ground truth outside the recovery prompts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetSource {
    /// Random in-range draws from a (typically held-out) prompt.
    Prompt(String),
    /// Fixed signal from a CSV file.
    Signal(PathBuf),
    /// Spike train with `count` spikes, orthogonalized against every linear class.
    Spikes(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: Option<String>,
    pub generator: GeneratorSource,
    /// Sampling prompts; empty means every condition of the generator.
    pub prompts: Vec<String>,
    /// Recovery prompts; empty means the sampling prompts.
    pub recovery_prompts: Vec<String>,
    pub ratios: Vec<f64>,
    pub trials: usize,
    pub draw_mode: DrawMode,
    pub weight_mode: WeightMode,
    pub recovery: RecoveryConfig,
    pub christoffel: ChristoffelConfig,
    pub seed: u64,
    pub scenario: Scenario,
    pub target: Option<TargetSource>,
    /// Standard deviation of the unweighted noise `u`.
    pub noise: f64,
    /// Adds a uniform-law sampling row (`c_s = "uniform"`) to every cell.
    pub uniform_control: bool,
    /// Adds a zero-filled baseline row to every cell.
    pub baseline: bool,
    /// PSNR peak; defaults to `max |f*|` per row.
    pub peak: Option<f64>,
    pub record_wall_time: bool,
    pub workers: Option<usize>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            name: None,
            generator: GeneratorSource::Family(FamilySpec::linear(64, 4, &["a", "b", "c", "d"], 2.0, 0)),
            prompts: Vec::new(),
            recovery_prompts: Vec::new(),
            ratios: vec![0.1, 0.25],
            trials: 5,
            draw_mode: DrawMode::WithoutReplacementDc,
            weight_mode: WeightMode::Unweighted,
            recovery: RecoveryConfig::default(),
            christoffel: ChristoffelConfig::default(),
            seed: 0,
            scenario: Scenario::InRangeMatched,
            target: None,
            noise: 0.0,
            uniform_control: false,
            baseline: true,
            peak: None,
            record_wall_time: false,
            workers: None,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.ratios.is_empty() || self.ratios.iter().any(|r| !(*r > 0.0 && *r <= 1.0)) {
            return Err(invalid("ratios must be nonempty and lie in (0, 1]"));
        }
        if self.trials == 0 {
            return Err(invalid("trials must be at least 1"));
        }
        if !(self.noise.is_finite() && self.noise >= 0.0) {
            return Err(invalid("noise must be finite and nonnegative"));
        }
        if let Some(p) = self.peak {
            if !(p > 0.0 && p.is_finite()) {
                return Err(invalid("peak must be positive"));
            }
        }
        if self.workers == Some(0) {
            return Err(invalid("workers must be at least 1"));
        }
        match (self.scenario, &self.target) {
            (Scenario::InRangeMatched, Some(_)) => {
                return Err(invalid("in_range_matched draws targets from the recovery prompt; drop `target`"))
            }
            (Scenario::InRangeMismatched, Some(TargetSource::Prompt(_))) => {}
            (Scenario::InRangeMismatched, _) => {
                return Err(invalid("in_range_mismatched needs `target: {\"prompt\": …}`"))
            }
            (Scenario::OutOfRange, Some(TargetSource::Signal(_) | TargetSource::Spikes(_))) => {}
            (Scenario::OutOfRange, _) => {
                return Err(invalid("out_of_range needs a `signal` or `spikes` target"))
            }
            _ => {}
        }
        self.recovery.validate()
    }

    /// Sampling and recovery prompts after defaults, checked against `g`.
    pub fn resolve_prompts(&self, g: &Generator) -> Result<(Vec<ConditionId>, Vec<ConditionId>)> {
        let sampling: Vec<ConditionId> = if self.prompts.is_empty() {
            g.conditions()
        } else {
            self.prompts.iter().map(|p| ConditionId::new(p.clone())).collect::<Result<_>>()?
        };
        let recovery: Vec<ConditionId> = if self.recovery_prompts.is_empty() {
            sampling.clone()
        } else {
            self.recovery_prompts
                .iter()
                .map(|p| ConditionId::new(p.clone()))
                .collect::<Result<_>>()?
        };
        if sampling.is_empty() || recovery.is_empty() {
            return Err(invalid("prompt family is empty"));
        }
        for c in sampling.iter().chain(&recovery) {
            g.check_condition(c)?;
        }
        Ok((sampling, recovery))
    }

    /// SHA-256 of the config and the resolved generator, hex-truncated to 16
    /// chars. The worker count does not affect results and is left out.
    pub fn hash(&self, g: &Generator) -> Result<String> {
        let keyed = ExperimentConfig {
            workers: None,
            ..self.clone()
        };
        let mut h = Sha256::new();
        h.update(serde_json::to_vec(&keyed)?);
        h.update(serde_json::to_vec(g)?);
        Ok(hex::encode(h.finalize())[..16].to_string())
    }
}

/// Parses JSON into `T`, reporting the failing field path.
pub fn parse_json<T: DeserializeOwned>(text: &str) -> Result<T> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        Error::InvalidInput(format!("{path}: {}", e.into_inner()))
    })
}

/// Reads and parses a JSON config file.
pub fn load_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::InvalidInput(format!("cannot read {}: {e}", path.display())))?;
    parse_json(&text)
}
