use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use super::config::{load_json, ChristoffelConfig, ExperimentConfig, GeneratorSource};
use super::grid::{lambda_from_laws, prompt_laws, run_experiment, write_laws};
use crate::christoffel::{read_values_csv, sampling_law, write_values_csv, SamplingLaw};
use crate::error::{invalid, Error, Result};
use crate::generators::{enumerate_cones, ConditionId, ConditionalGenerator, ConeDecomposition, ConeOptions, Generator};
use crate::measurement::{
    add_noise, apply, draw_plan, gaussian_noise, read_measurements_csv, write_measurements_csv, DrawMode,
    MeasurementPlan, WeightMode,
};
use crate::recovery::{recover, RecoveryConfig};
use crate::signals::{read_signal_csv, relative_error, write_signal_csv, Signal};
use crate::verification::{
    build_secant_net, check_nondegeneracy, check_nondegeneracy_sampled, check_srec, complexity,
    concentration_experiment, net_extension_check, probe_srec, sample_secants, ComplexityInputs, ExtensionStatus,
    NetOptions, NetStatus, Regime,
};

#[derive(Debug, Parser)]
#[command(name = "condgcs", version, about = "Christoffel sampling and generative recovery from subsampled Fourier data")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// JSON configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Results directory.
    #[arg(long, global = true, default_value = "results")]
    out: PathBuf,
    /// Master seed override.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads.
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Absolute constant for sample-complexity budgets.
    #[arg(long, global = true, default_value_t = 1.0)]
    constant: f64,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Estimate the Christoffel function of a secant class.
    Christoffel,
    /// Build a sampling law for one prompt.
    Law,
    /// Compatibility-factor grid over a prompt family.
    Lambda,
    /// Draw a measurement plan, optionally measuring a signal.
    Sample,
    /// Recover a signal from measurements.
    Recover,
    /// Run a verification check.
    Verify {
        #[arg(long, value_enum)]
        check: Check,
    },
    /// Full experiment grid.
    Experiment,
    /// Sample-complexity budget.
    Complexity {
        #[arg(long, value_enum)]
        regime: RegimeArg,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Check {
    Nondegeneracy,
    Srec,
    Net,
    Concentration,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum RegimeArg {
    Relu,
    Lipschitz,
    #[value(alias = "piecewise")]
    PiecewiseLinear,
    #[value(alias = "net")]
    NetBased,
}

impl From<RegimeArg> for Regime {
    fn from(r: RegimeArg) -> Self {
        match r {
            RegimeArg::Relu => Regime::Relu,
            RegimeArg::Lipschitz => Regime::Lipschitz,
            RegimeArg::PiecewiseLinear => Regime::PiecewiseLinear,
            RegimeArg::NetBased => Regime::NetBased,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ChristoffelJob {
    generator: GeneratorSource,
    c1: String,
    #[serde(default)]
    c2: Option<String>,
    #[serde(default)]
    christoffel: ChristoffelConfig,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LawJob {
    generator: GeneratorSource,
    prompt: String,
    #[serde(default)]
    christoffel: ChristoffelConfig,
}

/// A law read from a probabilities CSV, or built from a generator prompt.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum LawSource {
    File(PathBuf),
    Prompt {
        generator: GeneratorSource,
        prompt: String,
        #[serde(default)]
        christoffel: ChristoffelConfig,
    },
    Uniform(usize),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SampleJob {
    law: LawSource,
    m: usize,
    #[serde(default = "default_draw")]
    draw_mode: DrawMode,
    #[serde(default = "default_weight")]
    weight_mode: WeightMode,
    #[serde(default = "one")]
    channels: usize,
    #[serde(default)]
    seed: u64,
    #[serde(default)]
    signal: Option<PathBuf>,
    #[serde(default)]
    noise: f64,
}

fn default_draw() -> DrawMode {
    DrawMode::WithoutReplacementDc
}

fn default_weight() -> WeightMode {
    WeightMode::Unweighted
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RecoverJob {
    generator: GeneratorSource,
    prompt: String,
    plan: PathBuf,
    measurements: PathBuf,
    #[serde(default)]
    recovery: RecoveryConfig,
    /// Ground truth for reporting the relative error.
    #[serde(default)]
    truth: Option<PathBuf>,
}

/// A plan read from `plan.json`, or drawn on the fly.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum PlanSource {
    File(PathBuf),
    Draw {
        m: usize,
        #[serde(default)]
        seed: u64,
        /// Matched Christoffel law when absent.
        #[serde(default)]
        uniform: bool,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct VerifyJob {
    generator: GeneratorSource,
    prompt: String,
    #[serde(default)]
    plan: Option<PlanSource>,
    #[serde(default = "half")]
    tau: f64,
    #[serde(default)]
    sampled: bool,
    #[serde(default = "ten_thousand")]
    probes: usize,
    #[serde(default)]
    seed: u64,
    #[serde(default)]
    christoffel: ChristoffelConfig,
    #[serde(default)]
    cones: ConeOptions,
    #[serde(default = "half")]
    eta: f64,
    #[serde(default = "half")]
    eps: f64,
    #[serde(default)]
    net: NetOptions,
    #[serde(default)]
    m_grid: Vec<usize>,
    #[serde(default = "ten_thousand")]
    trials: usize,
    #[serde(default = "three")]
    secants: usize,
}

fn half() -> f64 {
    0.5
}

fn ten_thousand() -> usize {
    10_000
}

fn three() -> usize {
    3
}

enum Outcome {
    Ok(String),
    CheckFailed(String),
}

/// Runs the command line; returns the process exit code
/// (0 success, 1 usage or runtime error, 2 failed verification).
pub fn run_cli<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(&cli) {
        Ok(Outcome::Ok(line)) => {
            println!("{line}");
            0
        }
        Ok(Outcome::CheckFailed(line)) => {
            println!("{line}");
            2
        }
        Err(Error::InvalidInput(msg)) => {
            eprintln!("usage error: {msg}");
            1
        }
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

fn config_path(cli: &Cli) -> Result<&Path> {
    cli.config
        .as_deref()
        .ok_or_else(|| invalid("--config <path> is required"))
}

fn base_dir(path: &Path) -> PathBuf {
    path.parent().map(Path::to_path_buf).unwrap_or_default()
}

fn load_prompt(g: &Generator, p: &str) -> Result<ConditionId> {
    let c = ConditionId::new(p.to_string())?;
    g.check_condition(&c)?;
    Ok(c)
}

fn with_seed(mut c: ChristoffelConfig, seed: Option<u64>) -> ChristoffelConfig {
    if let Some(s) = seed {
        c.seed = s;
    }
    c
}

fn dispatch(cli: &Cli) -> Result<Outcome> {
    if !(cli.constant > 0.0 && cli.constant.is_finite()) {
        return Err(invalid("--constant must be positive"));
    }
    if cli.workers == Some(0) {
        return Err(invalid("--workers must be at least 1"));
    }
    match &cli.command {
        Command::Experiment | Command::Lambda => {
            let path = config_path(cli)?;
            let mut cfg: ExperimentConfig = load_json(path)?;
            if let Some(s) = cli.seed {
                cfg.seed = s;
            }
            if cli.workers.is_some() {
                cfg.workers = cli.workers;
            }
            let base = base_dir(path);
            if matches!(cli.command, Command::Lambda) {
                cfg.validate()?;
                let g = cfg.generator.load(&base)?;
                let (prompts, _) = cfg.resolve_prompts(&g)?;
                let laws = prompt_laws(&g, &prompts, &cfg)?;
                let grid = lambda_from_laws(prompts, laws)?;
                write_laws(&cli.out, &cfg, &grid)?;
                let diag: Vec<String> = (0..grid.prompts.len())
                    .map(|i| grid.matrix[i][i].map_or("degenerate".into(), |v| format!("{v:.4}")))
                    .collect();
                return Ok(Outcome::Ok(format!(
                    "lambda grid {}x{} written to {}; diagonal [{}]",
                    grid.prompts.len(),
                    grid.prompts.len(),
                    cli.out.display(),
                    diag.join(", ")
                )));
            }
            let out = run_experiment(&cfg, &base, &cli.out)?;
            let diverged = out.rows.iter().filter(|r| r.status != "ok").count();
            Ok(Outcome::Ok(format!(
                "experiment {}: {} rows, {} cells, {} diverged, written to {}",
                out.config_hash,
                out.rows.len(),
                out.summary.len(),
                diverged,
                out.dir.display()
            )))
        }
        Command::Christoffel => {
            let path = config_path(cli)?;
            let job: ChristoffelJob = load_json(path)?;
            let g = job.generator.load(&base_dir(path))?;
            let c1 = load_prompt(&g, &job.c1)?;
            let c2 = load_prompt(&g, job.c2.as_deref().unwrap_or(&job.c1))?;
            let k = with_seed(job.christoffel, cli.seed).estimate(&g, &c1, &c2)?;
            fs::create_dir_all(&cli.out)?;
            write_values_csv(&k.values, fs::File::create(cli.out.join("christoffel.csv"))?)?;
            fs::write(cli.out.join("christoffel.json"), serde_json::to_string_pretty(&k)?)?;
            Ok(Outcome::Ok(format!("kappa = {:?} ({:?}, n = {})", k.kappa(), k.mode, k.len())))
        }
        Command::Law => {
            let path = config_path(cli)?;
            let job: LawJob = load_json(path)?;
            let g = job.generator.load(&base_dir(path))?;
            let c = load_prompt(&g, &job.prompt)?;
            let cc = with_seed(job.christoffel, cli.seed);
            let k = cc.estimate(&g, &c, &c)?;
            let law = sampling_law(&k, cc.floor)?;
            fs::create_dir_all(&cli.out)?;
            write_values_csv(&k.values, fs::File::create(cli.out.join("christoffel.csv"))?)?;
            write_values_csv(&law.probs, fs::File::create(cli.out.join("law.csv"))?)?;
            Ok(Outcome::Ok(format!(
                "law for {c}: kappa = {:?}, min probability = {:?}, floor applied = {}",
                k.kappa(),
                law.min_prob,
                law.floor_applied
            )))
        }
        Command::Sample => {
            let path = config_path(cli)?;
            let base = base_dir(path);
            let job: SampleJob = load_json(path)?;
            let law = match &job.law {
                LawSource::File(p) => SamplingLaw::new(read_values_csv(fs::File::open(base.join(p))?)?)?,
                LawSource::Uniform(n) => SamplingLaw::uniform(*n)?,
                LawSource::Prompt {
                    generator,
                    prompt,
                    christoffel,
                } => {
                    let g = generator.load(&base)?;
                    let c = load_prompt(&g, prompt)?;
                    sampling_law(&christoffel.estimate(&g, &c, &c)?, christoffel.floor)?
                }
            };
            let seed = cli.seed.unwrap_or(job.seed);
            let plan = draw_plan(&law, job.m, job.draw_mode, job.weight_mode, job.channels, seed)?;
            fs::create_dir_all(&cli.out)?;
            fs::write(cli.out.join("plan.json"), serde_json::to_string_pretty(&plan)?)?;
            if let Some(sp) = &job.signal {
                let f = read_signal_csv(fs::File::open(base.join(sp))?)?;
                let mut y = apply(&plan, &f)?;
                if job.noise > 0.0 {
                    let u = gaussian_noise(plan.measurement_len(), job.noise, seed)?;
                    y = add_noise(&plan, &y, &u, plan.mode == WeightMode::Weighted)?;
                }
                write_measurements_csv(&y, fs::File::create(cli.out.join("measurements.csv"))?)?;
            }
            Ok(Outcome::Ok(format!("plan with m = {} over n = {} written", plan.m(), plan.n)))
        }
        Command::Recover => {
            let path = config_path(cli)?;
            let base = base_dir(path);
            let job: RecoverJob = load_json(path)?;
            let g = job.generator.load(&base)?;
            let c = load_prompt(&g, &job.prompt)?;
            let plan: MeasurementPlan = load_json(&base.join(&job.plan))?;
            let plan = MeasurementPlan::from_indices(
                plan.indices,
                plan.weights,
                plan.mode,
                plan.draw_mode,
                plan.channels,
                plan.n,
                plan.seed,
            )?;
            let y = read_measurements_csv(fs::File::open(base.join(&job.measurements))?, plan.channels)?;
            let mut cfg = job.recovery;
            if let Some(s) = cli.seed {
                cfg.seed = s;
            }
            let res = recover(&g, &c, &plan, &y, &cfg)?;
            fs::create_dir_all(&cli.out)?;
            write_signal_csv(&res.f_hat, fs::File::create(cli.out.join("f_hat.csv"))?)?;
            fs::write(cli.out.join("recovery.json"), serde_json::to_string_pretty(&res.to_json(&cfg, &c))?)?;
            let mut line = format!("residual = {:?}, steps = {}", res.residual, res.steps_used);
            if let Some(t) = &job.truth {
                let f: Signal = read_signal_csv(fs::File::open(base.join(t))?)?;
                line.push_str(&format!(", rel_error = {:?}", relative_error(&f, &res.f_hat)?));
            }
            Ok(Outcome::Ok(line))
        }
        Command::Verify { check } => {
            let path = config_path(cli)?;
            verify(cli, *check, path)
        }
        Command::Complexity { regime } => {
            let path = config_path(cli)?;
            let inputs: ComplexityInputs = load_json(path)?;
            let b = complexity((*regime).into(), &inputs, cli.constant)?;
            fs::create_dir_all(&cli.out)?;
            fs::write(cli.out.join("complexity.json"), serde_json::to_string_pretty(&b)?)?;
            Ok(Outcome::Ok(format!("m_required = {}", b.m_required)))
        }
    }
}

fn verify(cli: &Cli, check: Check, path: &Path) -> Result<Outcome> {
    let base = base_dir(path);
    let job: VerifyJob = load_json(path)?;
    let seed = cli.seed.unwrap_or(job.seed);
    let g = job.generator.load(&base)?;
    let c = load_prompt(&g, &job.prompt)?;
    let d: ConeDecomposition = match &g {
        Generator::Linear(_) => ConeDecomposition::from_linear(
            g.linear_basis(&c).expect("linear class"),
            g.channels(),
            g.per_channel_len(),
            g.radius(),
        )?,
        Generator::Relu(_) => enumerate_cones(&g, &c, &job.cones)?,
    };
    let cc = with_seed(job.christoffel.clone(), Some(seed));
    let law = || -> Result<SamplingLaw> { sampling_law(&cc.estimate(&g, &c, &c)?, cc.floor) };
    let plan = || -> Result<MeasurementPlan> {
        match &job.plan {
            Some(PlanSource::File(p)) => load_json(&base.join(p)),
            Some(PlanSource::Draw { m, seed, uniform }) => {
                let law = if *uniform {
                    SamplingLaw::uniform(g.per_channel_len())?
                } else {
                    law()?
                };
                draw_plan(&law, *m, DrawMode::IidWithReplacement, WeightMode::Weighted, g.channels(), *seed)
            }
            None => Err(invalid("`plan` is required for this check")),
        }
    };
    fs::create_dir_all(&cli.out)?;
    let write = |name: &str, v: &dyn erased::Json| -> Result<()> {
        fs::write(cli.out.join(name), v.to_json()?)?;
        Ok(())
    };
    match check {
        Check::Nondegeneracy | Check::Srec => {
            let plan = plan()?;
            let rep = if job.sampled {
                check_nondegeneracy_sampled(&d, &plan, job.tau, job.probes, seed)?
            } else {
                check_nondegeneracy(&d, &plan, job.tau)?
            };
            write("nondegeneracy.json", &rep)?;
            if matches!(check, Check::Nondegeneracy) {
                let line = format!("tau_hat = {:?} vs tau = {:?}: {}", rep.tau_hat, rep.tau, pass_word(rep.pass));
                return Ok(if rep.pass { Outcome::Ok(line) } else { Outcome::CheckFailed(line) });
            }
            if !rep.pass {
                return Ok(Outcome::CheckFailed(format!(
                    "no certificate: tau_hat = {:?} exceeds tau = {:?}",
                    rep.tau_hat, rep.tau
                )));
            }
            let srec = match check_srec(&rep) {
                Ok(s) => s,
                Err(Error::NoCertificate { tau_hat }) => {
                    return Ok(Outcome::CheckFailed(format!("no certificate: tau_hat = {tau_hat:?}")))
                }
                Err(e) => return Err(e),
            };
            let probed = probe_srec(&d, &plan, &srec, job.probes, seed)?;
            write("srec.json", &probed)?;
            let line = format!(
                "gamma = {:?}, q = 0, violations = {} of {} probes",
                probed.gamma, probed.violations, probed.probed
            );
            Ok(if probed.violations == 0 {
                Outcome::Ok(line)
            } else {
                Outcome::CheckFailed(line)
            })
        }
        Check::Net => {
            let law = law()?;
            let net = build_secant_net(&d, job.eta, &law, &NetOptions { seed, ..job.net })?;
            write("net.json", &net)?;
            let mut line = format!("net of {} points at eta = {:?}: {:?}", net.len(), net.eta, net.status);
            if net.status != NetStatus::Certified {
                return Ok(Outcome::CheckFailed(line));
            }
            if job.plan.is_some() {
                let rep = net_extension_check(&d, &net, &plan()?, job.eps, job.probes, seed)?;
                write("net_extension.json", &rep)?;
                line.push_str(&format!("; extension {:?}, slack {:?}", rep.status, rep.slack));
                if rep.status != ExtensionStatus::Passed {
                    return Ok(Outcome::CheckFailed(line));
                }
            }
            Ok(Outcome::Ok(line))
        }
        Check::Concentration => {
            let law = law()?;
            let grid = if job.m_grid.is_empty() { vec![4, 16, 64] } else { job.m_grid.clone() };
            let hs = sample_secants(&d, job.secants, seed);
            let t = concentration_experiment(&hs, &law, g.channels(), &grid, job.eps, job.trials, seed)?;
            t.write_csv(fs::File::create(cli.out.join("concentration.csv"))?)?;
            write("concentration.json", &t)?;
            let line = format!(
                "{} rows; monotone = {}, unbiased = {}",
                t.rows.len(),
                t.monotone,
                t.unbiased
            );
            Ok(if t.monotone && t.unbiased {
                Outcome::Ok(line)
            } else {
                Outcome::CheckFailed(line)
            })
        }
    }
}

fn pass_word(pass: bool) -> &'static str {
    if pass {
        "pass"
    } else {
        "fail"
    }
}

mod erased {
    use serde::Serialize;

    /// Object-safe pretty JSON.
    pub trait Json {
        fn to_json(&self) -> crate::Result<String>;
    }

    impl<T: Serialize> Json for T {
        fn to_json(&self) -> crate::Result<String> {
            Ok(serde_json::to_string_pretty(self)?)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run(args: &[&str]) -> i32 {
        let mut v = vec!["condgcs"];
        v.extend_from_slice(args);
        run_cli(v)
    }

    #[test]
    fn usage_errors_exit_one() {
        assert_eq!(run(&["bogus"]), 1);
        assert_eq!(run(&["complexity", "--regime", "relu"]), 1);
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("c.json");
        fs::write(&cfg, r#"{"tau": "x"}"#).unwrap();
        let out = dir.path().join("out");
        assert_eq!(
            run(&["complexity", "--regime", "relu", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]),
            1
        );
    }

    #[test]
    fn complexity_writes_budget() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("c.json");
        fs::write(
            &cfg,
            r#"{"tau": 0.5, "delta": 0.1, "mu_min": 0.25, "lambda": 1.0, "k": 2, "pieces": 1.0}"#,
        )
        .unwrap();
        let out = dir.path().join("out");
        let code = run(&[
            "complexity",
            "--regime",
            "piecewise",
            "--config",
            cfg.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
            "--constant",
            "2",
        ]);
        assert_eq!(code, 0);
        let b: crate::verification::ComplexityBudget =
            serde_json::from_str(&fs::read_to_string(out.join("complexity.json")).unwrap()).unwrap();
        assert_eq!(b.constant, 2.0);
    }
}
