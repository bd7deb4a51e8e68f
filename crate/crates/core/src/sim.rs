//! Two-wave MSE simulations: pilot, allocation rule, block-randomized main
//! wave, difference in means, replicated.

use std::io::Write;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::alloc::{apply_rule, assign_block, diff_in_means, pilot_variances, AllocationRule};
use crate::dgp::{check_pilot_size, sample_pilot, Arm, DgpSpec, ModelSpec};
use crate::error::{FnaError, Result};
use crate::rng::{domain, Substreams};

pub const MIN_REPS: usize = 100;

/// Version tag written into JSON summaries.
pub const SIM_SCHEMA: &str = "fna-sim/v1";

/// Ratios 0.05, 0.10, ..., 1.00.
pub fn default_ratio_grid() -> Vec<f64> {
    (1..=20).map(|k| k as f64 * 0.05).collect()
}

fn default_seed() -> u64 {
    0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    pub specs: Vec<ModelSpec>,
    pub rules: Vec<AllocationRule>,
    pub m: usize,
    pub n: usize,
    pub reps: usize,
    #[serde(default = "default_seed")]
    pub seed: u64,
    /// Share pilot and main-wave draws across rules within a cell.
    #[serde(default)]
    pub common_random_numbers: bool,
}

/// On-disk form: either explicit `specs` or a `models` x `ratios` grid.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct SimConfigFile {
    #[serde(default)]
    specs: Vec<ModelSpec>,
    #[serde(default)]
    models: Vec<u8>,
    #[serde(default)]
    ratios: Option<Vec<f64>>,
    rules: Vec<AllocationRule>,
    m: usize,
    n: usize,
    reps: usize,
    #[serde(default)]
    seed: Option<u64>,
    #[serde(default)]
    common_random_numbers: bool,
}

impl SimConfig {
    /// Cartesian grid of models and ratios.
    pub fn grid(models: &[u8], ratios: &[f64], rules: Vec<AllocationRule>, m: usize, n: usize, reps: usize, seed: u64) -> Self {
        let specs = models
            .iter()
            .flat_map(|&id| ratios.iter().map(move |&r| ModelSpec::model(id, r)))
            .collect();
        Self { specs, rules, m, n, reps, seed, common_random_numbers: false }
    }

    /// Parses a JSON config. A seed in the file wins over `fallback_seed`.
    pub fn from_json(text: &str, fallback_seed: u64) -> Result<Self> {
        let file: SimConfigFile = serde_json::from_str(text)?;
        let mut specs = file.specs;
        if !file.models.is_empty() {
            let ratios = file.ratios.unwrap_or_else(default_ratio_grid);
            specs.extend(file.models.iter().flat_map(|&id| ratios.iter().map(move |&r| ModelSpec::model(id, r))));
        } else if file.ratios.is_some() {
            return Err(FnaError::input("`ratios` given without `models`"));
        }
        let config = Self {
            specs,
            rules: file.rules,
            m: file.m,
            n: file.n,
            reps: file.reps,
            seed: file.seed.unwrap_or(fallback_seed),
            common_random_numbers: file.common_random_numbers,
        };
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        if self.reps < MIN_REPS {
            return Err(FnaError::param(format!("reps must be at least {MIN_REPS}, got {}", self.reps)));
        }
        if self.n < 2 {
            return Err(FnaError::param(format!("n must be at least 2, got {}", self.n)));
        }
        check_pilot_size(self.m)?;
        if self.specs.is_empty() {
            return Err(FnaError::param("no data-generating processes configured"));
        }
        if self.rules.is_empty() {
            return Err(FnaError::param("no allocation rules configured"));
        }
        for spec in &self.specs {
            spec.build()?;
        }
        for rule in &self.rules {
            rule.validate()?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Replication {
    /// `theta_hat - theta`.
    pub error: f64,
    pub p_used: f64,
    /// The pilot had a zero variance estimate in some arm.
    pub degenerate: bool,
}

/// One pass of the two-wave design.
///
/// The pilot is drawn from `pilot_rng` only when the rule needs one. The main
/// wave draws the assignment and then both potential outcomes of every unit
/// from `main_rng`, so rules that see the same streams see the same units.
pub fn run_replication<R: Rng + ?Sized>(
    spec: &DgpSpec,
    rule: &AllocationRule,
    m: usize,
    n: usize,
    pilot_rng: &mut R,
    main_rng: &mut R,
) -> Result<Replication> {
    let (p_used, degenerate) = if rule.needs_pilot() {
        let pilot = sample_pilot(spec, m, pilot_rng)?;
        let degenerate = pilot_variances(&pilot)?.is_degenerate();
        (apply_rule(rule, Some(&pilot), None)?, degenerate)
    } else {
        (apply_rule(rule, None, Some((spec.sigma0(), spec.sigma1())))?, false)
    };
    let assignment = assign_block(n, p_used, main_rng)?;
    let outcomes: Vec<f64> = assignment
        .iter()
        .map(|&arm| {
            let y0 = spec.sample_outcome(Arm::Control, main_rng);
            let y1 = spec.sample_outcome(Arm::Treated, main_rng);
            match arm {
                Arm::Control => y0,
                Arm::Treated => y1,
            }
        })
        .collect();
    let error = diff_in_means(&outcomes, &assignment)? - spec.ate();
    Ok(Replication { error, p_used, degenerate })
}

/// Summary of one (process, rule) cell.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CellResult {
    pub model: String,
    pub spec: ModelSpec,
    pub ratio: f64,
    pub rule: AllocationRule,
    pub reps: usize,
    /// Raw mean squared error of `theta_hat`.
    pub mse: f64,
    /// `n * mse`, comparable to asymptotic variances.
    pub n_mse: f64,
    /// Monte Carlo standard error of `n_mse`.
    pub mc_se: f64,
    pub bias: f64,
    /// Divisor-`reps` variance, so `mse = bias^2 + variance`.
    pub variance: f64,
    pub mean_p: f64,
    pub degenerate_count: usize,
    /// More than half of the pilots were degenerate.
    pub flagged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimResult {
    pub schema: &'static str,
    pub config: SimConfig,
    pub cells: Vec<CellResult>,
}

impl SimResult {
    pub fn cell(&self, spec_index: usize, rule_index: usize) -> &CellResult {
        &self.cells[spec_index * self.config.rules.len() + rule_index]
    }

    pub fn find(&self, spec: &ModelSpec, rule: &AllocationRule) -> Option<&CellResult> {
        self.cells.iter().find(|c| &c.spec == spec && &c.rule == rule)
    }
}

fn summarize_cell(spec: &DgpSpec, rule: &AllocationRule, n: usize, reps: &[Replication]) -> CellResult {
    let count = reps.len() as f64;
    let bias = reps.iter().map(|r| r.error).sum::<f64>() / count;
    let sq: Vec<f64> = reps.iter().map(|r| r.error * r.error).collect();
    let mse = sq.iter().sum::<f64>() / count;
    let sq_var = sq.iter().map(|x| (x - mse) * (x - mse)).sum::<f64>() / (count - 1.0);
    let variance = reps.iter().map(|r| (r.error - bias).powi(2)).sum::<f64>() / count;
    let mean_p = reps.iter().map(|r| r.p_used).sum::<f64>() / count;
    let degenerate_count = reps.iter().filter(|r| r.degenerate).count();
    CellResult {
        model: spec.model_spec().model.to_string(),
        spec: spec.model_spec(),
        ratio: spec.ratio(),
        rule: *rule,
        reps: reps.len(),
        mse,
        n_mse: n as f64 * mse,
        mc_se: n as f64 * (sq_var / count).sqrt(),
        bias,
        variance,
        mean_p,
        degenerate_count,
        flagged: 2 * degenerate_count > reps.len(),
    }
}

/// Runs every (process, rule) cell of `config`.
///
/// Each replication reads its own substreams, addressed by cell and
/// replication index, so the result is identical for any thread count.
pub fn run_mse(config: &SimConfig) -> Result<SimResult> {
    config.validate()?;
    let streams = Substreams::new(config.seed);
    let specs: Vec<DgpSpec> = config.specs.iter().map(|s| s.build()).collect::<Result<_>>()?;
    let mut cells = Vec::with_capacity(specs.len() * config.rules.len());
    for (si, spec) in specs.iter().enumerate() {
        for (ri, rule) in config.rules.iter().enumerate() {
            let rule_key = if config.common_random_numbers { u64::MAX } else { ri as u64 };
            let reps: Vec<Replication> = (0..config.reps as u64)
                .into_par_iter()
                .map(|rep| {
                    let base = [domain::SIM, rule_key, si as u64, rep];
                    let mut pilot_rng = streams.stream(&[base[0], base[1], base[2], base[3], domain::PILOT]);
                    let mut main_rng = streams.stream(&[base[0], base[1], base[2], base[3], domain::MAIN]);
                    run_replication(spec, rule, config.m, config.n, &mut pilot_rng, &mut main_rng)
                })
                .collect::<Result<_>>()?;
            cells.push(summarize_cell(spec, rule, config.n, &reps));
        }
    }
    Ok(SimResult { schema: SIM_SCHEMA, config: config.clone(), cells })
}

pub const MSE_HEADER: [&str; 8] = ["model", "ratio", "rule", "n_mse", "mc_se", "bias", "mean_p", "degenerate_count"];

pub fn write_mse_csv<W: Write>(writer: W, result: &SimResult) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(MSE_HEADER)?;
    for c in &result.cells {
        w.write_record([
            c.model.clone(),
            c.ratio.to_string(),
            c.rule.label(),
            c.n_mse.to_string(),
            c.mc_se.to_string(),
            c.bias.to_string(),
            c.mean_p.to_string(),
            c.degenerate_count.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
