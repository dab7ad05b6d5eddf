use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, Scenario, TargetSource};
use crate::christoffel::{compatibility_factor, sampling_law, write_values_csv, ChristoffelEstimate, SamplingLaw};
use crate::error::{invalid, Error, Result};
use crate::generators::{ConditionId, ConditionalGenerator, Generator};
use crate::linalg;
use crate::measurement::{add_noise, apply, draw_plan, gaussian_noise, zero_filled_image, WeightMode};
use crate::recovery::{recover, RecoveryConfig};
use crate::rng;
use crate::signals::{psnr, read_signal_csv, relative_error, Psnr, Signal};

/// Per-prompt Christoffel estimate and sampling law; `None` marks a degenerate class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptLaw {
    pub prompt: ConditionId,
    pub estimate: Option<ChristoffelEstimate>,
    pub law: Option<SamplingLaw>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LambdaGrid {
    pub prompts: Vec<ConditionId>,
    /// `matrix[s][r] = Λ̃(c_r, c_r, c_s)`: rows sampling, columns recovery.
    pub matrix: Vec<Vec<Option<f64>>>,
    pub kappa: Vec<Option<f64>>,
    pub degenerate: Vec<bool>,
    #[serde(skip)]
    pub laws: Vec<PromptLaw>,
}

impl LambdaGrid {
    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        let mut header = vec!["sampling".to_string()];
        header.extend(self.prompts.iter().map(|p| p.to_string()));
        wr.write_record(&header)?;
        for (s, row) in self.matrix.iter().enumerate() {
            let mut rec = vec![self.prompts[s].to_string()];
            rec.extend(row.iter().map(|v| match v {
                Some(x) => format!("{x:?}"),
                None => "degenerate".into(),
            }));
            wr.write_record(&rec)?;
        }
        wr.flush()?;
        Ok(())
    }

    /// Diagonal entry is the minimum of column `r`.
    pub fn column_min_on_diagonal(&self, r: usize) -> bool {
        let Some(d) = self.matrix[r][r] else { return false };
        self.matrix.iter().all(|row| row[r].is_none_or(|v| d <= v))
    }
}

/// Christoffel estimate `K(F_c − F_c)` and its law for every prompt.
pub fn prompt_laws(g: &Generator, prompts: &[ConditionId], cfg: &ExperimentConfig) -> Result<Vec<PromptLaw>> {
    prompts
        .par_iter()
        .map(|c| {
            match cfg.christoffel.estimate(g, c, c) {
                Ok(k) => {
                    let law = sampling_law(&k, cfg.christoffel.floor)?;
                    Ok(PromptLaw {
                        prompt: c.clone(),
                        estimate: Some(k),
                        law: Some(law),
                    })
                }
                Err(Error::DegenerateClass(msg)) => {
                    log::warn!("prompt {c}: degenerate class ({msg})");
                    Ok(PromptLaw {
                        prompt: c.clone(),
                        estimate: None,
                        law: None,
                    })
                }
                Err(e) => Err(e),
            }
        })
        .collect()
}

/// `Λ̃(c_r, c_r, c_s)` for every pair of sampling prompts.
pub fn run_lambda_grid(g: &Generator, cfg: &ExperimentConfig) -> Result<LambdaGrid> {
    let (prompts, _) = cfg.resolve_prompts(g)?;
    let laws = prompt_laws(g, &prompts, cfg)?;
    lambda_from_laws(prompts, laws)
}

/// Assembles the grid from per-prompt estimates and laws.
pub fn lambda_from_laws(prompts: Vec<ConditionId>, laws: Vec<PromptLaw>) -> Result<LambdaGrid> {
    let mut matrix = Vec::with_capacity(laws.len());
    for s in &laws {
        let mut row = Vec::with_capacity(laws.len());
        for r in &laws {
            row.push(match (&r.estimate, &s.law) {
                (Some(k), Some(law)) => Some(compatibility_factor(k, law)?.value),
                _ => None,
            });
        }
        matrix.push(row);
    }
    Ok(LambdaGrid {
        kappa: laws.iter().map(|l| l.estimate.as_ref().map(|k| k.kappa())).collect(),
        degenerate: laws.iter().map(|l| l.estimate.is_none()).collect(),
        prompts,
        matrix,
        laws,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub scenario: String,
    pub c_s: String,
    pub c_r: String,
    /// `recovery` or `zero_filled`.
    pub method: String,
    pub ratio: f64,
    pub trial: usize,
    pub seed: u64,
    pub config_hash: String,
    pub m: usize,
    pub peak: f64,
    /// Decibels, or `exact` at zero error; blank when the row failed.
    pub psnr_db: Option<String>,
    pub rel_error: Option<f64>,
    pub residual: Option<f64>,
    pub steps: Option<usize>,
    /// `ok` or `diverged`.
    pub status: String,
    pub wall_time: Option<f64>,
}

impl ResultRow {
    /// Numeric PSNR, `None` for blank or exact rows.
    pub fn psnr_value(&self) -> Option<f64> {
        self.psnr_db.as_deref().and_then(|s| s.parse().ok())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub scenario: String,
    pub c_s: String,
    pub c_r: String,
    pub method: String,
    pub ratio: f64,
    pub count: usize,
    pub diverged: usize,
    pub mean_rel_error: Option<f64>,
    pub se_rel_error: Option<f64>,
    pub ci95_rel_error: Option<f64>,
    pub psnr_count: usize,
    pub exact_count: usize,
    pub mean_psnr_db: Option<f64>,
    pub se_psnr_db: Option<f64>,
    pub ci95_psnr_db: Option<f64>,
}

/// Sample mean and standard error (zero for a single value).
pub fn mean_se(xs: &[f64]) -> Option<(f64, f64)> {
    if xs.is_empty() {
        return None;
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() == 1 {
        return Some((mean, 0.0));
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    Some((mean, (var / n).sqrt()))
}

/// Groups rows by `(scenario, c_s, c_r, method, ratio)` in first-seen order.
pub fn summarize(rows: &[ResultRow]) -> Vec<SummaryRow> {
    let mut keys: Vec<(String, String, String, String, f64)> = Vec::new();
    for r in rows {
        let k = (r.scenario.clone(), r.c_s.clone(), r.c_r.clone(), r.method.clone(), r.ratio);
        if !keys.contains(&k) {
            keys.push(k);
        }
    }
    keys.into_iter()
        .map(|(scenario, c_s, c_r, method, ratio)| {
            let group: Vec<&ResultRow> = rows
                .iter()
                .filter(|r| r.scenario == scenario && r.c_s == c_s && r.c_r == c_r && r.method == method && r.ratio == ratio)
                .collect();
            let rel: Vec<f64> = group.iter().filter_map(|r| r.rel_error).collect();
            let ps: Vec<f64> = group.iter().filter_map(|r| r.psnr_value()).collect();
            let rel_stats = mean_se(&rel);
            let ps_stats = mean_se(&ps);
            SummaryRow {
                count: group.len(),
                diverged: group.iter().filter(|r| r.status != "ok").count(),
                mean_rel_error: rel_stats.map(|s| s.0),
                se_rel_error: rel_stats.map(|s| s.1),
                ci95_rel_error: rel_stats.map(|s| 1.96 * s.1),
                psnr_count: ps.len(),
                exact_count: group.iter().filter(|r| r.psnr_db.as_deref() == Some("exact")).count(),
                mean_psnr_db: ps_stats.map(|s| s.0),
                se_psnr_db: ps_stats.map(|s| s.1),
                ci95_psnr_db: ps_stats.map(|s| 1.96 * s.1),
                scenario,
                c_s,
                c_r,
                method,
                ratio,
            }
        })
        .collect()
}

pub fn write_rows_csv<T: Serialize, W: std::io::Write>(rows: &[T], w: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    for r in rows {
        wr.serialize(r)?;
    }
    wr.flush()?;
    Ok(())
}

pub fn read_rows_csv<R: std::io::Read>(r: R) -> Result<Vec<ResultRow>> {
    let mut rd = csv::Reader::from_reader(r);
    Ok(rd.deserialize().collect::<std::result::Result<_, _>>()?)
}

/// `m = round(ratio · n)`, clamped to `[1, n]`.
pub fn measurement_count(ratio: f64, n: usize) -> usize {
    ((ratio * n as f64).round() as usize).clamp(1, n)
}

/// Spike train with `count` unit spikes, minus its projection onto every
/// linear class of `g`. Nonlinear generators get the raw spike train.
pub fn spike_target(g: &Generator, count: usize, seed: u64) -> Result<Signal> {
    let dim = g.ambient_dim();
    if count == 0 || count > dim {
        return Err(invalid("spike count must lie in [1, C·n]"));
    }
    let mut r = rng::derived_stream(seed, rng::purpose::TARGET, u64::MAX);
    let idx = rand::seq::index::sample(&mut r, dim, count);
    let mut v = nalgebra::DVector::zeros(dim);
    for (j, i) in idx.iter().enumerate() {
        v[i] = if j % 2 == 0 { 1.0 } else { -1.0 };
    }
    if let Generator::Linear(lin) = g {
        let mats: Vec<&DMatrix<f64>> = lin.bases().map(|(_, b)| b).collect();
        let cols: usize = mats.iter().map(|b| b.ncols()).sum();
        let mut all = DMatrix::zeros(dim, cols);
        let mut at = 0;
        for b in mats {
            all.columns_mut(at, b.ncols()).copy_from(b);
            at += b.ncols();
        }
        let q = linalg::orthonormal_basis(&all);
        v -= &q * (q.transpose() * &v);
        if v.norm() < 1e-9 {
            return Err(invalid("class ranges span the ambient space; no out-of-range spike target"));
        }
    }
    Signal::from_real(v.as_slice(), g.channels(), g.per_channel_len())
}

struct Cell {
    c_s: Option<usize>,
    c_r: usize,
    ratio_index: usize,
    trial: usize,
}

fn cell_seed(master: u64, c_s: &str, c_r: &str, ratio_index: usize, trial: usize) -> u64 {
    let key = rng::label_seed(master, &format!("{c_s}\u{1f}{c_r}\u{1f}{ratio_index}"));
    rng::derive_seed(key, rng::purpose::TRIAL, trial as u64)
}

/// Target signal for a trial; depends on the recovery prompt only in the
/// matched scenario, never on the sampling prompt, so cells pair up.
fn target_for(
    g: &Generator,
    cfg: &ExperimentConfig,
    base: &Path,
    c_r: &ConditionId,
    trial: usize,
    fixed: Option<&Signal>,
) -> Result<(Signal, u64)> {
    let key = match cfg.scenario {
        Scenario::InRangeMatched => rng::label_seed(cfg.seed, c_r.as_str()),
        _ => rng::label_seed(cfg.seed, "target"),
    };
    let tseed = rng::derive_seed(key, rng::purpose::TARGET, trial as u64);
    let source = match cfg.scenario {
        Scenario::InRangeMatched => c_r.clone(),
        _ => match &cfg.target {
            Some(TargetSource::Prompt(p)) => ConditionId::new(p.clone())?,
            _ => {
                let s = match fixed {
                    Some(s) => s.clone(),
                    None => match &cfg.target {
                        Some(TargetSource::Signal(p)) => read_signal_csv(fs::File::open(base.join(p))?)?,
                        _ => unreachable!("validated"),
                    },
                };
                return Ok((s, tseed));
            }
        },
    };
    let mut r = rng::stream(tseed);
    let z = cfg.christoffel.latent_law.sample(&g.latent_ball(), &mut r);
    Ok((g.generate(&z, &source)?, tseed))
}

/// Full `(c_s × c_r × ratio × trial)` sweep. `base` resolves relative paths.
pub fn run_reconstruction_grid(
    g: &Generator,
    cfg: &ExperimentConfig,
    laws: &[PromptLaw],
    base: &Path,
    config_hash: &str,
) -> Result<Vec<ResultRow>> {
    cfg.validate()?;
    let (sampling, recovery) = cfg.resolve_prompts(g)?;
    if laws.len() != sampling.len() {
        return Err(invalid("one law per sampling prompt expected"));
    }
    if let Some(TargetSource::Prompt(p)) = &cfg.target {
        g.check_condition(&ConditionId::new(p.clone())?)?;
    }
    let n = g.per_channel_len();
    let uniform = SamplingLaw::uniform(n)?;
    let fixed = match &cfg.target {
        Some(TargetSource::Signal(p)) if cfg.scenario == Scenario::OutOfRange => {
            let s = read_signal_csv(fs::File::open(base.join(p))?)?;
            if s.channels() != g.channels() || s.per_channel_len() != n {
                return Err(invalid("target signal shape does not match the generator"));
            }
            Some(s)
        }
        Some(TargetSource::Spikes(count)) if cfg.scenario == Scenario::OutOfRange => {
            Some(spike_target(g, *count, cfg.seed)?)
        }
        _ => None,
    };

    let mut cells = Vec::new();
    let samplers: Vec<Option<usize>> = (0..sampling.len())
        .map(Some)
        .chain(cfg.uniform_control.then_some(None))
        .collect();
    for &c_s in &samplers {
        for c_r in 0..recovery.len() {
            for ratio_index in 0..cfg.ratios.len() {
                for trial in 0..cfg.trials {
                    cells.push(Cell {
                        c_s,
                        c_r,
                        ratio_index,
                        trial,
                    });
                }
            }
        }
    }

    let run_cell = |cell: &Cell| -> Result<Vec<ResultRow>> {
        let started = Instant::now();
        let c_r = &recovery[cell.c_r];
        let (cs_name, law) = match cell.c_s {
            Some(s) => match &laws[s].law {
                Some(l) => (sampling[s].to_string(), l),
                None => return Ok(Vec::new()),
            },
            None => ("uniform".to_string(), &uniform),
        };
        let ratio = cfg.ratios[cell.ratio_index];
        let seed = cell_seed(cfg.seed, &cs_name, c_r.as_str(), cell.ratio_index, cell.trial);
        let m = measurement_count(ratio, n);
        let (f_star, tseed) = target_for(g, cfg, base, c_r, cell.trial, fixed.as_ref())?;
        let plan = draw_plan(law, m, cfg.draw_mode, cfg.weight_mode, g.channels(), seed)?;
        let mut y = apply(&plan, &f_star)?;
        if cfg.noise > 0.0 {
            let nseed = rng::derive_seed(tseed, rng::purpose::NOISE, cell.ratio_index as u64);
            let u = gaussian_noise(plan.measurement_len(), cfg.noise, nseed)?;
            y = add_noise(&plan, &y, &u, cfg.weight_mode == WeightMode::Weighted)?;
        }
        let peak = cfg.peak.unwrap_or_else(|| f_star.data().iter().map(|v| v.norm()).fold(0.0, f64::max));
        let peak = if peak > 0.0 { peak } else { 1.0 };
        let row = |method: &str| ResultRow {
            scenario: cfg.scenario.as_str().to_string(),
            c_s: cs_name.clone(),
            c_r: c_r.to_string(),
            method: method.to_string(),
            ratio,
            trial: cell.trial,
            seed,
            config_hash: config_hash.to_string(),
            m,
            peak,
            psnr_db: None,
            rel_error: None,
            residual: None,
            steps: None,
            status: "ok".into(),
            wall_time: None,
        };
        let psnr_text = |p: Psnr| match p {
            Psnr::Exact => "exact".to_string(),
            Psnr::Db(v) => format!("{v:?}"),
        };
        let mut out = Vec::with_capacity(2);
        let rcfg = RecoveryConfig {
            seed,
            ..cfg.recovery.clone()
        };
        let mut main = row("recovery");
        match recover(g, c_r, &plan, &y, &rcfg) {
            Ok(res) => {
                main.rel_error = Some(relative_error(&f_star, &res.f_hat)?);
                main.psnr_db = Some(psnr_text(psnr(&f_star, &res.f_hat, peak)?));
                main.residual = Some(res.residual);
                main.steps = Some(res.steps_used);
            }
            Err(Error::Divergence { restart, step, .. }) => {
                log::warn!("{cs_name}/{c_r} ratio {ratio} trial {}: diverged at restart {restart}, step {step}", cell.trial);
                main.status = "diverged".into();
            }
            Err(e) => return Err(e),
        }
        if cfg.record_wall_time {
            main.wall_time = Some(started.elapsed().as_secs_f64());
        }
        out.push(main);
        if cfg.baseline {
            let zf = zero_filled_image(&plan, &y)?;
            let zf = Signal::from_real(&zf.real_part(), zf.channels(), zf.per_channel_len())?;
            let mut b = row("zero_filled");
            b.rel_error = Some(relative_error(&f_star, &zf)?);
            b.psnr_db = Some(psnr_text(psnr(&f_star, &zf, peak)?));
            out.push(b);
        }
        Ok(out)
    };

    let nested: Vec<Vec<ResultRow>> = match cfg.workers {
        Some(k) => rayon::ThreadPoolBuilder::new()
            .num_threads(k)
            .build()
            .map_err(|e| invalid(e.to_string()))?
            .install(|| cells.par_iter().map(run_cell).collect::<Result<_>>())?,
        None => cells.par_iter().map(run_cell).collect::<Result<_>>()?,
    };
    Ok(nested.into_iter().flatten().collect())
}

/// Everything a run writes under `results/<run-id>/`.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub dir: PathBuf,
    pub config_hash: String,
    pub lambda: LambdaGrid,
    pub rows: Vec<ResultRow>,
    pub summary: Vec<SummaryRow>,
}

/// Run directory name: `<name>-<hash>`.
pub fn run_id(cfg: &ExperimentConfig, hash: &str) -> String {
    let name: String = cfg
        .name
        .as_deref()
        .unwrap_or("run")
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect();
    format!("{name}-{hash}")
}

fn law_file_stem(c: &ConditionId) -> String {
    c.as_str()
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect()
}

/// Writes `config.json` and `laws/*.csv`, plus `lambda.csv` when a grid is given.
pub fn write_laws(dir: &Path, cfg: &ExperimentConfig, grid: &LambdaGrid) -> Result<()> {
    fs::create_dir_all(dir.join("laws"))?;
    fs::create_dir_all(dir.join("reports"))?;
    fs::write(dir.join("config.json"), serde_json::to_string_pretty(cfg)?)?;
    for pl in &grid.laws {
        let stem = law_file_stem(&pl.prompt);
        if let (Some(k), Some(law)) = (&pl.estimate, &pl.law) {
            write_values_csv(&k.values, fs::File::create(dir.join("laws").join(format!("{stem}.christoffel.csv")))?)?;
            write_values_csv(&law.probs, fs::File::create(dir.join("laws").join(format!("{stem}.law.csv")))?)?;
        }
    }
    grid.write_csv(fs::File::create(dir.join("lambda.csv"))?)?;
    fs::write(dir.join("reports").join("lambda.json"), serde_json::to_string_pretty(grid)?)?;
    Ok(())
}

/// Lambda grid plus reconstruction grid, written to `out/<run-id>/`.
pub fn run_experiment(cfg: &ExperimentConfig, base: &Path, out: &Path) -> Result<RunOutput> {
    cfg.validate()?;
    let g = cfg.generator.load(base)?;
    let hash = cfg.hash(&g)?;
    let dir = out.join(run_id(cfg, &hash));
    let (sampling, _) = cfg.resolve_prompts(&g)?;
    let laws = prompt_laws(&g, &sampling, cfg)?;
    let lambda = lambda_from_laws(sampling, laws)?;
    write_laws(&dir, cfg, &lambda)?;
    let rows = run_reconstruction_grid(&g, cfg, &lambda.laws, base, &hash)?;
    let summary = summarize(&rows);
    write_rows_csv(&rows, fs::File::create(dir.join("rows.csv"))?)?;
    write_rows_csv(&summary, fs::File::create(dir.join("summary.csv"))?)?;
    let diverged = rows.iter().filter(|r| r.status != "ok").count();
    fs::write(
        dir.join("reports").join("run.json"),
        serde_json::to_string_pretty(&serde_json::json!({
            "config_hash": hash,
            "rows": rows.len(),
            "cells": summary.len(),
            "diverged": diverged,
        }))?,
    )?;
    Ok(RunOutput {
        dir,
        config_hash: hash,
        lambda,
        rows,
        summary,
    })
}
