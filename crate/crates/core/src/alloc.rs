//! Pilot variance estimation, allocation rules and main-wave assignment.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dgp::{Arm, PilotSample};
use crate::error::{FnaError, Result};
use crate::special::normal_quantile;

/// Per-arm pilot variances with divisor `m_a - 1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct VarEstimates {
    pub var0: f64,
    pub var1: f64,
    pub m0: usize,
    pub m1: usize,
}

impl VarEstimates {
    pub fn sd0(&self) -> f64 {
        self.var0.sqrt()
    }

    pub fn sd1(&self) -> f64 {
        self.var1.sqrt()
    }

    /// Either estimate is zero, so the plug-in rules fall back to 1/2.
    pub fn is_degenerate(&self) -> bool {
        !(self.var0 > 0.0 && self.var1 > 0.0)
    }
}

fn mean_var(values: impl Iterator<Item = f64> + Clone) -> (f64, f64, usize) {
    let (n, sum) = values.clone().fold((0usize, 0.0), |(n, s), y| (n + 1, s + y));
    let mean = sum / n as f64;
    let mut rest = values.clone();
    if let Some(first) = rest.next() {
        if rest.all(|y| y == first) {
            return (first, 0.0, n);
        }
    }
    let ss: f64 = values.map(|y| (y - mean) * (y - mean)).sum();
    (mean, ss / (n as f64 - 1.0), n)
}

pub fn pilot_variances(pilot: &PilotSample) -> Result<VarEstimates> {
    for arm in [Arm::Control, Arm::Treated] {
        let count = pilot.count(arm);
        if count < 2 {
            return Err(FnaError::InsufficientPilot { arm: format!("{arm:?}").to_lowercase(), count });
        }
    }
    let (_, var0, m0) = mean_var(pilot.arm_outcomes(Arm::Control));
    let (_, var1, m1) = mean_var(pilot.arm_outcomes(Arm::Treated));
    Ok(VarEstimates { var0, var1, m0, m1 })
}

/// Feasible Neyman allocation; exactly 1/2 when either estimate is zero.
pub fn feasible_neyman(v: &VarEstimates) -> f64 {
    if v.is_degenerate() {
        return 0.5;
    }
    let (s0, s1) = (v.sd0(), v.sd1());
    s1 / (s1 + s0)
}

pub fn infeasible_neyman(sigma0: f64, sigma1: f64) -> Result<f64> {
    if !(sigma0 > 0.0 && sigma1 > 0.0) || !sigma0.is_finite() || !sigma1.is_finite() {
        return Err(FnaError::param(format!(
            "standard deviations must be positive, got sigma0={sigma0}, sigma1={sigma1}"
        )));
    }
    Ok(sigma1 / (sigma1 + sigma0))
}

/// Additive regularization toward balance: each estimated sd is inflated by
/// `nu` times the other one. `nu = 0` is the FNA, `nu = 1` is balanced.
pub fn additive_reg(v: &VarEstimates, nu: f64) -> f64 {
    if v.is_degenerate() {
        return 0.5;
    }
    let (s0, s1) = (v.sd0(), v.sd1());
    (s1 + s0 * nu) / ((s1 + s0) * (1.0 + nu))
}

/// Exponential regularization: `r^tau / (1 + r^tau)` with `r` the estimated
/// sd ratio. `tau = 1` is the FNA, `tau = 0` is balanced.
pub fn exponential_reg(v: &VarEstimates, tau: f64) -> f64 {
    if v.is_degenerate() {
        return 0.5;
    }
    let r = v.sd1() / v.sd0();
    // logistic form avoids overflow of r^tau for extreme ratios
    let x = tau * r.ln();
    1.0 / (1.0 + (-x).exp())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct WaldResult {
    pub statistic: f64,
    pub vw0: f64,
    pub vw1: f64,
    pub degenerate: bool,
}

/// Relative size of `V_W(0) + V_W(1)` below which the test is degenerate.
const WALD_DEGENERACY_TOL: f64 = 1e-10;

/// `(1, -2 ybar) Sigma_W (1, -2 ybar)'` with divisor `k` throughout, together
/// with the divisor-`k` second central moment.
///
/// Since `y^2 - 2 ybar y = (y - ybar)^2 - ybar^2`, the quadratic form is the
/// divisor-`k` variance of the squared deviations, which is what is computed.
fn wald_arm_terms(values: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let k = values.clone().count() as f64;
    let ybar = values.clone().sum::<f64>() / k;
    let s22 = values.clone().map(|y| (y - ybar).powi(2)).sum::<f64>() / k;
    let vw = values.map(|y| ((y - ybar).powi(2) - s22).powi(2)).sum::<f64>() / k;
    (vw, s22)
}

/// Linear Wald statistic for equal arm variances on a balanced pilot.
///
/// The numerator uses the `m_a - 1` variance estimators; the `Sigma_W`
/// entries use divisor `m/2`. When `V_W(0) + V_W(1)` vanishes relative to the
/// squared arm variances (for example two-point arms with mean at the
/// midpoint), the result is flagged degenerate and the statistic is 0.
pub fn wald_test(pilot: &PilotSample) -> Result<WaldResult> {
    if pilot.m0() != pilot.m1() {
        return Err(FnaError::param(format!(
            "the Wald test needs a balanced pilot, got m0={} m1={}",
            pilot.m0(),
            pilot.m1()
        )));
    }
    let v = pilot_variances(pilot)?;
    let (vw0, c0) = wald_arm_terms(pilot.arm_outcomes(Arm::Control));
    let (vw1, c1) = wald_arm_terms(pilot.arm_outcomes(Arm::Treated));
    let denom = vw0 + vw1;
    let scale = (c0 + c1) * (c0 + c1);
    if !(denom > WALD_DEGENERACY_TOL * scale) {
        return Ok(WaldResult { statistic: 0.0, vw0, vw1, degenerate: true });
    }
    let half = pilot.m() as f64 / 2.0;
    let statistic = half.sqrt() * (v.var1 - v.var0) / denom.sqrt();
    Ok(WaldResult { statistic, vw0, vw1, degenerate: false })
}

/// Two-sided standard-normal critical value at level `alpha`.
pub fn critical_value(alpha: f64) -> f64 {
    normal_quantile(1.0 - alpha / 2.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", deny_unknown_fields)]
pub enum AllocationRule {
    #[serde(rename = "balanced")]
    Balanced,
    #[serde(rename = "simple")]
    SimpleRandom { p: f64 },
    #[serde(rename = "ina")]
    InfeasibleNeyman,
    #[serde(rename = "fna")]
    Fna,
    #[serde(rename = "test")]
    TestThenFna { alpha: f64 },
    #[serde(rename = "add")]
    Additive { nu: f64 },
    #[serde(rename = "exp")]
    Exponential { tau: f64 },
}

impl AllocationRule {
    pub fn validate(&self) -> Result<()> {
        match *self {
            AllocationRule::SimpleRandom { p } if !(p > 0.0 && p < 1.0) => {
                Err(FnaError::param(format!("p must lie in (0, 1), got {p}")))
            }
            AllocationRule::TestThenFna { alpha } if !(alpha > 0.0 && alpha < 1.0) => {
                Err(FnaError::param(format!("alpha must lie in (0, 1), got {alpha}")))
            }
            AllocationRule::Additive { nu } if !(nu >= 0.0 && nu.is_finite()) => {
                Err(FnaError::param(format!("nu must be nonnegative, got {nu}")))
            }
            AllocationRule::Exponential { tau } if !(0.0..=1.0).contains(&tau) => {
                Err(FnaError::param(format!("tau must lie in [0, 1], got {tau}")))
            }
            _ => Ok(()),
        }
    }

    pub fn needs_pilot(&self) -> bool {
        matches!(
            self,
            AllocationRule::Fna
                | AllocationRule::TestThenFna { .. }
                | AllocationRule::Additive { .. }
                | AllocationRule::Exponential { .. }
        )
    }

    /// Short label used in output tables, e.g. `fna`, `test:0.05`.
    pub fn label(&self) -> String {
        match self {
            AllocationRule::Balanced => "balanced".into(),
            AllocationRule::SimpleRandom { p } => format!("simple:{p}"),
            AllocationRule::InfeasibleNeyman => "ina".into(),
            AllocationRule::Fna => "fna".into(),
            AllocationRule::TestThenFna { alpha } => format!("test:{alpha}"),
            AllocationRule::Additive { nu } => format!("add:{nu}"),
            AllocationRule::Exponential { tau } => format!("exp:{tau}"),
        }
    }
}

impl std::fmt::Display for AllocationRule {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.label())
    }
}

/// Treatment share chosen by `rule`.
///
/// `truth` is `(sigma0, sigma1)` and is only read by the infeasible rule.
pub fn apply_rule(rule: &AllocationRule, pilot: Option<&PilotSample>, truth: Option<(f64, f64)>) -> Result<f64> {
    rule.validate()?;
    let require_pilot = || {
        pilot.ok_or_else(|| FnaError::param(format!("rule {rule} needs a pilot sample")))
    };
    match *rule {
        AllocationRule::Balanced => Ok(0.5),
        AllocationRule::SimpleRandom { p } => Ok(p),
        AllocationRule::InfeasibleNeyman => {
            let (s0, s1) = truth.ok_or_else(|| FnaError::param("rule ina needs the true standard deviations"))?;
            infeasible_neyman(s0, s1)
        }
        AllocationRule::Fna => Ok(feasible_neyman(&pilot_variances(require_pilot()?)?)),
        AllocationRule::Additive { nu } => Ok(additive_reg(&pilot_variances(require_pilot()?)?, nu)),
        AllocationRule::Exponential { tau } => Ok(exponential_reg(&pilot_variances(require_pilot()?)?, tau)),
        AllocationRule::TestThenFna { alpha } => {
            let pilot = require_pilot()?;
            let wald = wald_test(pilot)?;
            if !wald.degenerate && wald.statistic.abs() > critical_value(alpha) {
                Ok(feasible_neyman(&pilot_variances(pilot)?))
            } else {
                Ok(0.5)
            }
        }
    }
}

/// Number of treated units for a main wave of `n` at share `p`, kept in `[1, n-1]`.
pub fn treated_count(n: usize, p: f64) -> Result<usize> {
    if n < 2 {
        return Err(FnaError::param(format!("main wave needs at least 2 units, got {n}")));
    }
    if !(p > 0.0 && p < 1.0) {
        return Err(FnaError::param(format!("p must lie in (0, 1), got {p}")));
    }
    let n1 = (n as f64 * p).floor() as usize;
    Ok(n1.clamp(1, n - 1))
}

/// Complete randomization: exactly `treated_count(n, p)` treated units, all
/// such assignments equally likely.
pub fn assign_block<R: Rng + ?Sized>(n: usize, p: f64, rng: &mut R) -> Result<Vec<Arm>> {
    let n1 = treated_count(n, p)?;
    let mut assignment: Vec<Arm> = std::iter::repeat_n(Arm::Treated, n1)
        .chain(std::iter::repeat_n(Arm::Control, n - n1))
        .collect();
    assignment.shuffle(rng);
    Ok(assignment)
}

pub fn diff_in_means(outcomes: &[f64], assignment: &[Arm]) -> Result<f64> {
    if outcomes.len() != assignment.len() {
        return Err(FnaError::input(format!(
            "{} outcomes but {} assignments",
            outcomes.len(),
            assignment.len()
        )));
    }
    let mut sums = [0.0f64; 2];
    let mut counts = [0usize; 2];
    for (&y, &a) in outcomes.iter().zip(assignment) {
        sums[a.index()] += y;
        counts[a.index()] += 1;
    }
    if counts.contains(&0) {
        return Err(FnaError::input("both arms need at least one unit"));
    }
    Ok(sums[1] / counts[1] as f64 - sums[0] / counts[0] as f64)
}
