//! Data-generating processes for the potential outcomes.
//!
//! Each process is `Y(a) = mu(a) + sigma(a) * eps(a)` where `eps(a)` has mean 0
//! and variance 1. The five simulation models share one error family across
//! both arms; the regret counterexample uses a normal control arm and a
//! three-point-plus-noise treated arm.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{FnaError, Result};

/// Smallest admissible sd ratio for the simulation models.
pub const MIN_RATIO: f64 = 0.05;

/// Mean of the treated potential outcome in the simulation models.
pub const TREATED_MEAN: f64 = 0.075;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Arm {
    Control,
    Treated,
}

impl Arm {
    pub fn index(self) -> usize {
        match self {
            Arm::Control => 0,
            Arm::Treated => 1,
        }
    }

    pub fn flip(self) -> Arm {
        match self {
            Arm::Control => Arm::Treated,
            Arm::Treated => Arm::Control,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ErrorLaw {
    Normal,
    /// `(chi2_1 - 1) / sqrt(2)`.
    ChiSq1Std,
    /// Standardized Pareto(1, shape); needs `shape > 2`.
    ParetoStd { shape: f64 },
    /// Control arm standard normal; treated arm `X + omega * W` rescaled,
    /// with `X` in {-1, 0, 1} w.p. {1/(2 kappa), 1 - 1/kappa, 1/(2 kappa)}.
    RegretMixture { kappa: f64, omega: f64 },
}

impl ErrorLaw {
    fn sample_std<R: Rng + ?Sized>(&self, arm: Arm, rng: &mut R) -> f64 {
        match *self {
            ErrorLaw::Normal => rng.sample(StandardNormal),
            ErrorLaw::ChiSq1Std => {
                let z: f64 = rng.sample(StandardNormal);
                (z * z - 1.0) / std::f64::consts::SQRT_2
            }
            ErrorLaw::ParetoStd { shape } => {
                let (mean, var) = pareto_moments(shape);
                (sample_pareto(shape, rng) - mean) / var.sqrt()
            }
            ErrorLaw::RegretMixture { kappa, omega } => match arm {
                Arm::Control => rng.sample(StandardNormal),
                Arm::Treated => {
                    let x = sample_three_point(kappa, rng);
                    let w: f64 = rng.sample(StandardNormal);
                    (x + omega * w) / regret_treated_sd(kappa, omega)
                }
            },
        }
    }

    /// Kurtosis `E[eps^4]` of the standardized error in `arm`.
    fn kurtosis(&self, arm: Arm) -> f64 {
        match *self {
            ErrorLaw::Normal => 3.0,
            ErrorLaw::ChiSq1Std => 15.0,
            ErrorLaw::ParetoStd { shape: s } => {
                if s > 4.0 {
                    3.0 * (s - 2.0) * (3.0 * s * s + s + 2.0) / (s * (s - 3.0) * (s - 4.0))
                } else {
                    f64::INFINITY
                }
            }
            ErrorLaw::RegretMixture { kappa, omega } => match arm {
                Arm::Control => 3.0,
                Arm::Treated => {
                    let w2 = omega * omega;
                    let m4 = 1.0 / kappa + 6.0 * w2 / kappa + 3.0 * w2 * w2;
                    let var = 1.0 / kappa + w2;
                    m4 / (var * var)
                }
            },
        }
    }
}

/// Mean and variance of Pareto(1, shape).
pub fn pareto_moments(shape: f64) -> (f64, f64) {
    let mean = shape / (shape - 1.0);
    let var = shape / ((shape - 1.0).powi(2) * (shape - 2.0));
    (mean, var)
}

/// Pareto(1, shape) by inverse CDF: `U^(-1/shape)` with `U` in (0, 1].
pub fn sample_pareto<R: Rng + ?Sized>(shape: f64, rng: &mut R) -> f64 {
    let u = 1.0 - rng.random::<f64>();
    u.powf(-1.0 / shape)
}

fn sample_three_point<R: Rng + ?Sized>(kappa: f64, rng: &mut R) -> f64 {
    let u: f64 = rng.random();
    let tail = 1.0 / (2.0 * kappa);
    if u < tail {
        -1.0
    } else if u < 2.0 * tail {
        1.0
    } else {
        0.0
    }
}

fn regret_treated_sd(kappa: f64, omega: f64) -> f64 {
    (1.0 / kappa + omega * omega).sqrt()
}

/// Model identifier in the JSON form: `1..=5` or `"regret"`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    Numbered(u8),
    Regret,
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ModelKind::Numbered(id) => write!(f, "{id}"),
            ModelKind::Regret => f.write_str("regret"),
        }
    }
}

impl Serialize for ModelKind {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            ModelKind::Numbered(id) => s.serialize_u8(*id),
            ModelKind::Regret => s.serialize_str("regret"),
        }
    }
}

impl<'de> Deserialize<'de> for ModelKind {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Id(u8),
            Name(String),
        }
        match Repr::deserialize(d)? {
            Repr::Id(id) => Ok(ModelKind::Numbered(id)),
            Repr::Name(name) if name == "regret" => Ok(ModelKind::Regret),
            Repr::Name(name) => name
                .parse::<u8>()
                .map(ModelKind::Numbered)
                .map_err(|_| serde::de::Error::custom(format!("unknown model {name:?}"))),
        }
    }
}

/// Serializable description of a [`DgpSpec`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub model: ModelKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ratio: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kappa: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub omega: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rho: Option<f64>,
}

impl ModelSpec {
    pub fn model(id: u8, ratio: f64) -> Self {
        Self { model: ModelKind::Numbered(id), ratio: Some(ratio), kappa: None, omega: None, rho: None }
    }

    pub fn regret(kappa: f64, omega: f64) -> Self {
        Self { model: ModelKind::Regret, ratio: None, kappa: Some(kappa), omega: Some(omega), rho: None }
    }

    pub fn build(&self) -> Result<DgpSpec> {
        let spec = match self.model {
            ModelKind::Numbered(id) => {
                if self.kappa.is_some() || self.omega.is_some() {
                    return Err(FnaError::param("kappa/omega only apply to the regret model"));
                }
                let ratio = self
                    .ratio
                    .ok_or_else(|| FnaError::param(format!("model {id} needs a ratio")))?;
                make_model(id, ratio)?
            }
            ModelKind::Regret => {
                if self.ratio.is_some() {
                    return Err(FnaError::param("the regret model takes kappa and omega, not ratio"));
                }
                let kappa = self.kappa.ok_or_else(|| FnaError::param("regret model needs kappa"))?;
                let omega = self.omega.ok_or_else(|| FnaError::param("regret model needs omega"))?;
                make_regret_dgp(kappa, omega)?
            }
        };
        match self.rho {
            Some(rho) => spec.with_rho(rho),
            None => Ok(spec),
        }
    }
}

/// A parametric process for `(Y(0), Y(1))`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ModelSpec", into = "ModelSpec")]
pub struct DgpSpec {
    mu0: f64,
    mu1: f64,
    sigma0: f64,
    sigma1: f64,
    /// Carried for completeness; arms are sampled independently and no
    /// implemented quantity depends on it.
    rho: f64,
    error_law: ErrorLaw,
    origin: ModelSpec,
}

impl TryFrom<ModelSpec> for DgpSpec {
    type Error = FnaError;

    fn try_from(value: ModelSpec) -> Result<Self> {
        value.build()
    }
}

impl From<DgpSpec> for ModelSpec {
    fn from(value: DgpSpec) -> Self {
        value.origin
    }
}

impl DgpSpec {
    pub fn mu0(&self) -> f64 {
        self.mu0
    }
    pub fn mu1(&self) -> f64 {
        self.mu1
    }
    pub fn sigma0(&self) -> f64 {
        self.sigma0
    }
    pub fn sigma1(&self) -> f64 {
        self.sigma1
    }
    pub fn rho(&self) -> f64 {
        self.rho
    }
    pub fn error_law(&self) -> ErrorLaw {
        self.error_law
    }
    pub fn model_spec(&self) -> ModelSpec {
        self.origin
    }

    pub fn ate(&self) -> f64 {
        self.mu1 - self.mu0
    }

    /// `sigma(1) / sigma(0)`.
    pub fn ratio(&self) -> f64 {
        self.sigma1 / self.sigma0
    }

    pub fn sigma(&self, arm: Arm) -> f64 {
        match arm {
            Arm::Control => self.sigma0,
            Arm::Treated => self.sigma1,
        }
    }

    pub fn mean(&self, arm: Arm) -> f64 {
        match arm {
            Arm::Control => self.mu0,
            Arm::Treated => self.mu1,
        }
    }

    pub fn with_rho(mut self, rho: f64) -> Result<Self> {
        if !(-1.0..=1.0).contains(&rho) {
            return Err(FnaError::param(format!("rho must lie in [-1, 1], got {rho}")));
        }
        self.rho = rho;
        self.origin.rho = Some(rho);
        Ok(self)
    }

    /// One draw of the potential outcome for `arm`.
    pub fn sample_outcome<R: Rng + ?Sized>(&self, arm: Arm, rng: &mut R) -> f64 {
        self.mean(arm) + self.sigma(arm) * self.error_law.sample_std(arm, rng)
    }
}

/// Simulation model `model_id` (1..=5) at `sigma(1)/sigma(0) = ratio`, with
/// `sigma(1)^2 + sigma(0)^2 = 2` and ATE 0.075.
pub fn make_model(model_id: u8, ratio: f64) -> Result<DgpSpec> {
    if !ratio.is_finite() || ratio < MIN_RATIO || ratio > 1.0 {
        return Err(FnaError::param(format!(
            "ratio must lie in [{MIN_RATIO}, 1], got {ratio}"
        )));
    }
    let error_law = match model_id {
        1 => ErrorLaw::Normal,
        2 => ErrorLaw::ChiSq1Std,
        3 => ErrorLaw::ParetoStd { shape: 3.0 },
        4 => ErrorLaw::ParetoStd { shape: 4.0 },
        5 => ErrorLaw::ParetoStd { shape: 5.0 },
        other => return Err(FnaError::param(format!("model id must be 1..=5, got {other}"))),
    };
    let sigma0 = (2.0 / (1.0 + ratio * ratio)).sqrt();
    Ok(DgpSpec {
        mu0: 0.0,
        mu1: TREATED_MEAN,
        sigma0,
        sigma1: ratio * sigma0,
        rho: 0.0,
        error_law,
        origin: ModelSpec::model(model_id, ratio),
    })
}

/// The counterexample process: `Y(0) ~ N(0, 1)`, `Y(1) = X + omega * W`.
pub fn make_regret_dgp(kappa: f64, omega: f64) -> Result<DgpSpec> {
    if !(kappa > 1.0) || !kappa.is_finite() {
        return Err(FnaError::param(format!("kappa must exceed 1, got {kappa}")));
    }
    if !(omega > 0.0) || !omega.is_finite() {
        return Err(FnaError::param(format!("omega must be positive, got {omega}")));
    }
    Ok(DgpSpec {
        mu0: 0.0,
        mu1: 0.0,
        sigma0: 1.0,
        sigma1: regret_treated_sd(kappa, omega),
        rho: 0.0,
        error_law: ErrorLaw::RegretMixture { kappa, omega },
        origin: ModelSpec::regret(kappa, omega),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Moments {
    pub sigma0: f64,
    pub sigma1: f64,
    pub kurt0: f64,
    pub kurt1: f64,
    /// `(kurt1 + kurt0 - 2) / 4`; infinite when either kurtosis is.
    pub v: f64,
}

/// `V = (kurt1 + kurt0 - 2) / 4`.
pub fn kurtosis_functional(kurt1: f64, kurt0: f64) -> f64 {
    if kurt1.is_finite() && kurt0.is_finite() {
        0.25 * (kurt1 + kurt0 - 2.0)
    } else {
        f64::INFINITY
    }
}

pub fn true_moments(spec: &DgpSpec) -> Moments {
    let kurt0 = spec.error_law.kurtosis(Arm::Control);
    let kurt1 = spec.error_law.kurtosis(Arm::Treated);
    Moments {
        sigma0: spec.sigma0,
        sigma1: spec.sigma1,
        kurt0,
        kurt1,
        v: kurtosis_functional(kurt1, kurt0),
    }
}

/// Pilot outcomes with arm labels; each arm has at least two observations.
#[derive(Debug, Clone, PartialEq)]
pub struct PilotSample {
    outcomes: Vec<f64>,
    arms: Vec<Arm>,
    m0: usize,
    m1: usize,
}

impl PilotSample {
    pub fn new(outcomes: Vec<f64>, arms: Vec<Arm>) -> Result<Self> {
        if outcomes.len() != arms.len() {
            return Err(FnaError::input(format!(
                "{} outcomes but {} arm labels",
                outcomes.len(),
                arms.len()
            )));
        }
        if let Some(i) = outcomes.iter().position(|y| !y.is_finite()) {
            return Err(FnaError::input(format!("non-finite outcome at index {i}")));
        }
        let m1 = arms.iter().filter(|&&a| a == Arm::Treated).count();
        let m0 = arms.len() - m1;
        for (arm, count) in [(Arm::Control, m0), (Arm::Treated, m1)] {
            if count < 2 {
                return Err(FnaError::InsufficientPilot { arm: format!("{arm:?}").to_lowercase(), count });
            }
        }
        Ok(Self { outcomes, arms, m0, m1 })
    }

    /// Builds a pilot from per-arm outcome lists.
    pub fn from_arms(treated: &[f64], control: &[f64]) -> Result<Self> {
        let outcomes = treated.iter().chain(control).copied().collect();
        let arms = std::iter::repeat_n(Arm::Treated, treated.len())
            .chain(std::iter::repeat_n(Arm::Control, control.len()))
            .collect();
        Self::new(outcomes, arms)
    }

    pub fn outcomes(&self) -> &[f64] {
        &self.outcomes
    }

    pub fn arms(&self) -> &[Arm] {
        &self.arms
    }

    pub fn m(&self) -> usize {
        self.outcomes.len()
    }

    pub fn m0(&self) -> usize {
        self.m0
    }

    pub fn m1(&self) -> usize {
        self.m1
    }

    pub fn count(&self, arm: Arm) -> usize {
        match arm {
            Arm::Control => self.m0,
            Arm::Treated => self.m1,
        }
    }

    pub fn arm_outcomes(&self, arm: Arm) -> impl Iterator<Item = f64> + Clone + '_ {
        self.outcomes
            .iter()
            .zip(&self.arms)
            .filter(move |(_, &a)| a == arm)
            .map(|(&y, _)| y)
    }

    /// Same outcomes with treatment and control exchanged.
    pub fn swap_labels(&self) -> Self {
        Self {
            outcomes: self.outcomes.clone(),
            arms: self.arms.iter().map(|a| a.flip()).collect(),
            m0: self.m1,
            m1: self.m0,
        }
    }

    /// Applies `f` to every outcome.
    pub fn map_outcomes(&self, f: impl Fn(f64) -> f64) -> Result<Self> {
        Self::new(self.outcomes.iter().map(|&y| f(y)).collect(), self.arms.clone())
    }
}

/// Balanced pilot of size `m`: `m/2` draws from each arm's marginal law.
pub fn sample_pilot<R: Rng + ?Sized>(spec: &DgpSpec, m: usize, rng: &mut R) -> Result<PilotSample> {
    check_pilot_size(m)?;
    let half = m / 2;
    let mut outcomes = Vec::with_capacity(m);
    let mut arms = Vec::with_capacity(m);
    for arm in [Arm::Treated, Arm::Control] {
        for _ in 0..half {
            outcomes.push(spec.sample_outcome(arm, rng));
            arms.push(arm);
        }
    }
    PilotSample::new(outcomes, arms)
}

pub(crate) fn check_pilot_size(m: usize) -> Result<()> {
    if m < 4 || m % 2 != 0 {
        return Err(FnaError::param(format!("pilot size must be even and at least 4, got {m}")));
    }
    Ok(())
}
