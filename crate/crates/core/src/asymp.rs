//! Fixed-pilot asymptotics of the feasible Neyman allocation.
//!
//! With the pilot size `m` held fixed, the estimated allocation stays random
//! and the scaled difference-in-means estimator has variance
//! `E[s^2(p~)] = sigma1^2 + sigma0^2 + 2 B_m sigma1 sigma0`, where
//! `B_m = E[(Z + 1/Z) / 2]` and `Z` is the normalized estimated sd ratio.
//! Balanced randomization beats the FNA exactly when `sigma1 / sigma0` lies
//! in `C_m = [1/c_m, c_m]` with `c_m = B_m + sqrt(B_m^2 - 1)`.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::alloc::{feasible_neyman, pilot_variances};
use crate::dgp::{check_pilot_size, sample_pilot, DgpSpec, PilotSample};
use crate::error::{FnaError, Result};
use crate::rng::{domain, SimRng, Substreams};
use crate::special::ln_gamma;

/// Draw count used when the caller does not choose one.
pub const DEFAULT_DRAWS: usize = 10_000;

/// Smallest Monte Carlo size accepted by the `B_m` estimators.
pub const MIN_DRAWS: usize = 1_000;

/// Anything that can produce balanced pilots with known true standard deviations.
pub trait PilotSource: Sync {
    /// `(sigma0, sigma1)` used to normalize the estimated ratio.
    fn true_sigmas(&self) -> (f64, f64);

    fn draw_pilot(&self, m: usize, rng: &mut SimRng) -> Result<PilotSample>;
}

impl PilotSource for DgpSpec {
    fn true_sigmas(&self) -> (f64, f64) {
        (self.sigma0(), self.sigma1())
    }

    fn draw_pilot(&self, m: usize, rng: &mut SimRng) -> Result<PilotSample> {
        sample_pilot(self, m, rng)
    }
}

/// `s^2(p) = sigma1^2 / p + sigma0^2 / (1 - p)`.
pub fn avar(p: f64, sigma0: f64, sigma1: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(FnaError::param(format!("p must lie strictly inside (0, 1), got {p}")));
    }
    if !(sigma0 > 0.0 && sigma1 > 0.0) {
        return Err(FnaError::param("standard deviations must be positive"));
    }
    Ok(sigma1 * sigma1 / p + sigma0 * sigma0 / (1.0 - p))
}

/// `(sigma1 + sigma0)^2`, the large-pilot optimum.
pub fn neyman_avar(sigma0: f64, sigma1: f64) -> f64 {
    (sigma1 + sigma0).powi(2)
}

/// Asymptotic variance of the balanced design, `2 (sigma1^2 + sigma0^2)`.
pub fn balanced_avar(sigma0: f64, sigma1: f64) -> f64 {
    2.0 * (sigma1 * sigma1 + sigma0 * sigma0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BmEstimate {
    pub b_m: f64,
    pub mc_se: f64,
    pub draws: usize,
    pub degenerate: usize,
}

impl BmEstimate {
    pub fn degenerate_fraction(&self) -> f64 {
        self.degenerate as f64 / self.draws as f64
    }
}

/// Mean and standard error of the finite entries, plus the count of `None`s.
fn summarize(values: &[Option<f64>]) -> (f64, f64, usize, usize) {
    let kept: Vec<f64> = values.iter().flatten().copied().collect();
    let n = kept.len();
    if n == 0 {
        return (f64::NAN, f64::NAN, 0, values.len());
    }
    let mean = kept.iter().sum::<f64>() / n as f64;
    let se = if n > 1 {
        let ss: f64 = kept.iter().map(|x| (x - mean) * (x - mean)).sum();
        (ss / (n as f64 - 1.0) / n as f64).sqrt()
    } else {
        0.0
    };
    (mean, se, n, values.len() - n)
}

fn check_draws(draws: usize) -> Result<()> {
    if draws < MIN_DRAWS {
        return Err(FnaError::param(format!("need at least {MIN_DRAWS} draws, got {draws}")));
    }
    Ok(())
}

/// Per-draw `(Z + 1/Z) / 2`, `None` for pilots with a zero variance estimate.
pub(crate) fn bm_draws<S: PilotSource + ?Sized>(
    source: &S,
    m: usize,
    draws: usize,
    streams: Substreams,
    tag: u64,
) -> Result<Vec<Option<f64>>> {
    check_pilot_size(m)?;
    let (sigma0, sigma1) = source.true_sigmas();
    (0..draws as u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = streams.stream(&[tag, m as u64, i]);
            let pilot = source.draw_pilot(m, &mut rng)?;
            let v = pilot_variances(&pilot)?;
            if v.is_degenerate() {
                return Ok(None);
            }
            let z = (v.sd1() / sigma1) / (v.sd0() / sigma0);
            Ok(Some(0.5 * (z + 1.0 / z)))
        })
        .collect()
}

/// Monte Carlo estimate of `B_m` from `draws` independent pilots.
///
/// Pilots where either arm has zero estimated variance are excluded and
/// counted in `degenerate`.
pub fn estimate_bm<S: PilotSource + ?Sized>(source: &S, m: usize, draws: usize, seed: u64) -> Result<BmEstimate> {
    check_draws(draws)?;
    let values = bm_draws(source, m, draws, Substreams::new(seed), domain::BM)?;
    let (b_m, mc_se, kept, degenerate) = summarize(&values);
    if kept == 0 {
        return Err(FnaError::Degenerate(format!("all {draws} pilots of size {m} had a zero variance estimate")));
    }
    Ok(BmEstimate { b_m, mc_se, draws, degenerate })
}

/// `B_m` under normal outcomes:
/// `Gamma((d+1)/2) Gamma((d-1)/2) / Gamma(d/2)^2` with `d = m/2 - 1`.
///
/// Under normality `Z^2` is F-distributed with `(d, d)` degrees of freedom,
/// and `Z` has the same law as `1/Z`, so `B_m = E[Z]`.
pub fn gaussian_bm_oracle(m: usize) -> Result<f64> {
    if m < 6 || m % 2 != 0 {
        return Err(FnaError::param(format!("the normal-theory B_m needs an even m >= 6, got {m}")));
    }
    let d = (m / 2 - 1) as f64;
    Ok((ln_gamma((d + 1.0) / 2.0) + ln_gamma((d - 1.0) / 2.0) - 2.0 * ln_gamma(d / 2.0)).exp())
}

/// Inefficiency interval `[1/c_m, c_m]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CmInterval {
    pub b_m: f64,
    pub c_m: f64,
    pub lower: f64,
    pub upper: f64,
    pub mc_se: f64,
    pub draws: usize,
}

impl CmInterval {
    pub fn length(&self) -> f64 {
        2.0 * (self.b_m * self.b_m - 1.0).sqrt()
    }

    pub fn contains(&self, ratio: f64) -> bool {
        ratio >= self.lower && ratio <= self.upper
    }

    pub fn with_mc(mut self, mc_se: f64, draws: usize) -> Self {
        self.mc_se = mc_se;
        self.draws = draws;
        self
    }
}

pub fn cm_from_bm(b_m: f64) -> Result<CmInterval> {
    if !(b_m >= 1.0) {
        return Err(FnaError::param(format!("B_m must be at least 1, got {b_m}")));
    }
    let c_m = b_m + (b_m * b_m - 1.0).sqrt();
    Ok(CmInterval { b_m, c_m, lower: 1.0 / c_m, upper: c_m, mc_se: 0.0, draws: 0 })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MixtureEstimate {
    pub value: f64,
    pub mc_se: f64,
    pub draws: usize,
    pub degenerate: usize,
}

/// Monte Carlo estimate of `E[s^2(p~)]` with `p~` the FNA from simulated pilots.
///
/// Degenerate pilots stay in the average with `p~ = 1/2`. Pilots are drawn
/// from the same substreams as [`estimate_bm`], so the two share random
/// numbers for equal seeds.
pub fn mixture_avar<S: PilotSource + ?Sized>(source: &S, m: usize, draws: usize, seed: u64) -> Result<MixtureEstimate> {
    check_draws(draws)?;
    check_pilot_size(m)?;
    let (sigma0, sigma1) = source.true_sigmas();
    let streams = Substreams::new(seed);
    let values: Vec<(f64, bool)> = (0..draws as u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = streams.stream(&[domain::BM, m as u64, i]);
            let pilot = source.draw_pilot(m, &mut rng)?;
            let v = pilot_variances(&pilot)?;
            Ok((avar(feasible_neyman(&v), sigma0, sigma1)?, v.is_degenerate()))
        })
        .collect::<Result<_>>()?;
    let as_opt: Vec<Option<f64>> = values.iter().map(|&(x, _)| Some(x)).collect();
    let (value, mc_se, _, _) = summarize(&as_opt);
    let degenerate = values.iter().filter(|(_, d)| *d).count();
    Ok(MixtureEstimate { value, mc_se, draws, degenerate })
}

/// How `m` is counted in the large-pilot approximations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PilotConvention {
    /// `m` observations in each arm.
    PerArm,
    /// `m` is the whole balanced pilot, `m/2` per arm.
    #[default]
    Total,
}

impl PilotConvention {
    fn per_arm(self, m: f64) -> f64 {
        match self {
            PilotConvention::PerArm => m,
            PilotConvention::Total => m / 2.0,
        }
    }
}

/// First-order approximation `[1 - h, 1 + h]` of `C_m`; not reciprocal.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ApproxCmInterval {
    pub lower: f64,
    pub upper: f64,
    pub half_width: f64,
}

impl ApproxCmInterval {
    pub fn contains(&self, ratio: f64) -> bool {
        ratio >= self.lower && ratio <= self.upper
    }
}

/// Sub-Gaussian approximation with half-width `sqrt(V / m_arm)`.
pub fn subgaussian_cm(v: f64, m: usize, convention: PilotConvention) -> Result<ApproxCmInterval> {
    if v.is_infinite() {
        return Err(FnaError::NotApplicable(
            "infinite kurtosis: the sub-Gaussian approximation does not hold".into(),
        ));
    }
    if !(v > 0.0) {
        return Err(FnaError::param(format!("V must be positive, got {v}")));
    }
    if m == 0 {
        return Err(FnaError::param("m must be at least 1"));
    }
    let half_width = (v / convention.per_arm(m as f64)).sqrt();
    Ok(ApproxCmInterval { lower: 1.0 - half_width, upper: 1.0 + half_width, half_width })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LossReport {
    pub loss_diff: f64,
    pub loss_ratio: f64,
    pub b_m: f64,
    pub sigma0: f64,
    pub sigma1: f64,
}

/// Efficiency loss of the FNA against balanced randomization, as a
/// difference and as a ratio of asymptotic variances.
pub fn efficiency_losses(b_m: f64, sigma0: f64, sigma1: f64) -> LossReport {
    let cross = sigma1 * sigma0;
    let loss_diff = 2.0 * (b_m - 1.0) * cross - (sigma1 - sigma0).powi(2);
    let loss_ratio = 0.5 + b_m * cross / (sigma1 * sigma1 + sigma0 * sigma0);
    LossReport { loss_diff, loss_ratio, b_m, sigma0, sigma1 }
}

/// `(sigma0, sigma1) = (1, rho) / sqrt(1 + rho^2)`, keeping the balanced variance at 2.
pub fn rho_parametrization(rho: f64) -> (f64, f64) {
    let norm = (1.0 + rho * rho).sqrt();
    (1.0 / norm, rho / norm)
}

/// Derivatives of `(L^d, L^r)` in `rho` under [`rho_parametrization`].
pub fn loss_derivatives(b_m: f64, rho: f64) -> Result<(f64, f64)> {
    if !(rho > 0.0) {
        return Err(FnaError::param(format!("rho must be positive, got {rho}")));
    }
    let q = (1.0 - rho * rho) / (1.0 + rho * rho).powi(2);
    Ok((2.0 * b_m * q, b_m * q))
}

/// Required pilot size, or a signal that no finite pilot suffices.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PilotRequirement {
    Finite(f64),
    Never,
}

impl PilotRequirement {
    pub fn finite(&self) -> Option<f64> {
        match self {
            PilotRequirement::Finite(m) => Some(*m),
            PilotRequirement::Never => None,
        }
    }
}

impl Serialize for PilotRequirement {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            PilotRequirement::Finite(m) => s.serialize_f64(*m),
            PilotRequirement::Never => s.serialize_str("never"),
        }
    }
}

/// Large-pilot estimate of the pilot size beyond which the FNA beats
/// balanced randomization: `V / (1 - ratio)^2` per arm, twice that in total.
pub fn required_pilot_asymptotic(
    kurt1: f64,
    kurt0: f64,
    ratio: f64,
    convention: PilotConvention,
) -> Result<PilotRequirement> {
    if !(kurt1.is_finite() && kurt0.is_finite()) {
        return Err(FnaError::NotApplicable("kurtosis must be finite".into()));
    }
    if kurt1 < 1.0 || kurt0 < 1.0 {
        return Err(FnaError::param(format!("kurtosis must be at least 1, got ({kurt1}, {kurt0})")));
    }
    if !(ratio > 0.0) || !ratio.is_finite() {
        return Err(FnaError::param(format!("ratio must be positive, got {ratio}")));
    }
    if ratio == 1.0 {
        return Ok(PilotRequirement::Never);
    }
    let v = 0.25 * (kurt1 + kurt0 - 2.0);
    let per_arm = v / (1.0 - ratio).powi(2);
    Ok(PilotRequirement::Finite(match convention {
        PilotConvention::PerArm => per_arm,
        PilotConvention::Total => 2.0 * per_arm,
    }))
}

/// One row of a `C_m` curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CmCurvePoint {
    pub m: usize,
    pub interval: CmInterval,
    pub degenerate_fraction: f64,
}

fn curve_point(m: usize, est: &BmEstimate) -> Result<CmCurvePoint> {
    let interval = cm_from_bm(est.b_m)?.with_mc(est.mc_se, est.draws);
    Ok(CmCurvePoint { m, interval, degenerate_fraction: est.degenerate_fraction() })
}

/// `C_m` over a grid of pilot sizes, estimated by Monte Carlo.
pub fn cm_curve<S: PilotSource + ?Sized>(source: &S, m_grid: &[usize], draws: usize, seed: u64) -> Result<Vec<CmCurvePoint>> {
    m_grid
        .iter()
        .map(|&m| curve_point(m, &estimate_bm(source, m, draws, seed)?))
        .collect()
}

pub(crate) fn bm_estimate_from(values: &[Option<f64>]) -> BmEstimate {
    let (b_m, mc_se, _, degenerate) = summarize(values);
    BmEstimate { b_m, mc_se, draws: values.len(), degenerate }
}

pub(crate) fn curve_point_from(m: usize, est: &BmEstimate) -> Result<CmCurvePoint> {
    curve_point(m, est)
}

pub const CM_CURVE_HEADER: [&str; 6] = ["m", "b_m", "c_lower", "c_upper", "mc_se", "degenerate_fraction"];

/// Writes a curve as CSV with columns `m,b_m,c_lower,c_upper,mc_se,degenerate_fraction`.
pub fn write_cm_curve<W: Write>(writer: W, curve: &[CmCurvePoint]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(CM_CURVE_HEADER)?;
    for p in curve {
        w.write_record([
            p.m.to_string(),
            p.interval.b_m.to_string(),
            p.interval.lower.to_string(),
            p.interval.upper.to_string(),
            p.interval.mc_se.to_string(),
            p.degenerate_fraction.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
