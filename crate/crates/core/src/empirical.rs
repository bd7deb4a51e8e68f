//! Analysis of full-experiment data: group statistics, cluster means,
//! bootstrap `C_m` curves and necessary pilot sizes.
//!
//! Row weights are frequency weights: a row of weight 2 counts like two
//! copies of the row, both in the moment formulas and as a bootstrap
//! selection probability.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

use rand::Rng;
use rand_distr::weighted::WeightedAliasIndex;
use rand_distr::Distribution;
use serde::Serialize;

use crate::asymp::{
    bm_draws, bm_estimate_from, curve_point_from, required_pilot_asymptotic, CmCurvePoint, PilotConvention,
    PilotRequirement, PilotSource, MIN_DRAWS,
};
use crate::dgp::{check_pilot_size, Arm, PilotSample};
use crate::error::{FnaError, Result};
use crate::rng::{domain, SimRng, Substreams};
use crate::spline::NaturalCubicSpline;

/// Bootstrap grids are refused when more than this share of resamples is degenerate.
pub const MAX_DEGENERATE_FRACTION: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DataRow {
    pub outcome: f64,
    pub arm: String,
    pub weight: f64,
    pub cluster: Option<String>,
}

impl DataRow {
    pub fn new(outcome: f64, arm: impl Into<String>) -> Self {
        Self { outcome, arm: arm.into(), weight: 1.0, cluster: None }
    }

    pub fn weighted(mut self, weight: f64) -> Self {
        self.weight = weight;
        self
    }

    pub fn in_cluster(mut self, cluster: impl Into<String>) -> Self {
        self.cluster = Some(cluster.into());
        self
    }
}

/// Column names for [`load_dataset`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Schema {
    pub outcome: String,
    pub arm: String,
    pub weight: Option<String>,
    pub cluster: Option<String>,
}

impl Default for Schema {
    fn default() -> Self {
        Self { outcome: "outcome".into(), arm: "arm".into(), weight: None, cluster: None }
    }
}

/// Validated experiment data: at least two arms, each with at least two rows.
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalDataset {
    rows: Vec<DataRow>,
    /// Arm labels in order of first appearance.
    arms: Vec<String>,
}

impl EmpiricalDataset {
    pub fn new(rows: Vec<DataRow>) -> Result<Self> {
        let mut arms: Vec<String> = Vec::new();
        let mut counts: HashMap<&str, usize> = HashMap::new();
        for (i, row) in rows.iter().enumerate() {
            if !row.outcome.is_finite() {
                return Err(FnaError::input(format!("row {}: non-finite outcome", i + 1)));
            }
            if !(row.weight > 0.0 && row.weight.is_finite()) {
                return Err(FnaError::input(format!("row {}: weight must be positive, got {}", i + 1, row.weight)));
            }
            let count = counts.entry(row.arm.as_str()).or_insert(0);
            if *count == 0 {
                arms.push(row.arm.clone());
            }
            *count += 1;
        }
        if arms.len() < 2 {
            return Err(FnaError::input(format!("need at least two arms, found {}", arms.len())));
        }
        if let Some(arm) = arms.iter().find(|a| counts[a.as_str()] < 2) {
            return Err(FnaError::input(format!("arm {arm:?} has a single row; at least 2 are needed")));
        }
        Ok(Self { rows, arms })
    }

    pub fn rows(&self) -> &[DataRow] {
        &self.rows
    }

    pub fn arms(&self) -> &[String] {
        &self.arms
    }

    fn arm_rows<'a>(&'a self, arm: &'a str) -> impl Iterator<Item = &'a DataRow> + 'a {
        self.rows.iter().filter(move |r| r.arm == arm)
    }

    fn arm_sample(&self, arm: &str) -> Result<WeightedSample> {
        if !self.arms.iter().any(|a| a == arm) {
            return Err(FnaError::input(format!("unknown arm {arm:?}")));
        }
        let (values, weights) = self.arm_rows(arm).map(|r| (r.outcome, r.weight)).unzip();
        Ok(WeightedSample { values, weights })
    }
}

fn parse_field(record: &csv::StringRecord, idx: usize, row: usize, name: &str) -> Result<Option<String>> {
    let raw = record
        .get(idx)
        .ok_or_else(|| FnaError::input(format!("row {row}: missing field {name:?}")))?
        .trim();
    Ok(if raw.is_empty() { None } else { Some(raw.to_string()) })
}

fn parse_number(text: &str, row: usize, name: &str) -> Result<f64> {
    text.parse::<f64>()
        .map_err(|_| FnaError::input(format!("row {row}: column {name:?} is not numeric: {text:?}")))
}

/// Reads a CSV with a header row. Row numbers in errors count data rows from 1.
pub fn read_dataset<R: Read>(reader: R, schema: &Schema) -> Result<EmpiricalDataset> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let column = |name: &str| {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| FnaError::input(format!("unknown column {name:?}; header has {:?}", headers.iter().collect::<Vec<_>>())))
    };
    let outcome_idx = column(&schema.outcome)?;
    let arm_idx = column(&schema.arm)?;
    let weight_idx = schema.weight.as_deref().map(column).transpose()?;
    let cluster_idx = schema.cluster.as_deref().map(column).transpose()?;

    let mut rows = Vec::new();
    for (i, record) in rdr.records().enumerate() {
        let row = i + 1;
        let record = record?;
        let outcome = parse_field(&record, outcome_idx, row, &schema.outcome)?
            .ok_or_else(|| FnaError::input(format!("row {row}: missing outcome")))?;
        let outcome = parse_number(&outcome, row, &schema.outcome)?;
        let arm = parse_field(&record, arm_idx, row, &schema.arm)?
            .ok_or_else(|| FnaError::input(format!("row {row}: missing arm")))?;
        let weight = match weight_idx {
            Some(idx) => {
                let name = schema.weight.as_deref().unwrap_or_default();
                let text = parse_field(&record, idx, row, name)?
                    .ok_or_else(|| FnaError::input(format!("row {row}: missing weight")))?;
                let w = parse_number(&text, row, name)?;
                if !(w > 0.0) {
                    return Err(FnaError::input(format!("row {row}: weight must be positive, got {w}")));
                }
                w
            }
            None => 1.0,
        };
        let cluster = match cluster_idx {
            Some(idx) => Some(
                parse_field(&record, idx, row, schema.cluster.as_deref().unwrap_or_default())?
                    .ok_or_else(|| FnaError::input(format!("row {row}: missing cluster")))?,
            ),
            None => None,
        };
        rows.push(DataRow { outcome, arm, weight, cluster });
    }
    EmpiricalDataset::new(rows)
}

pub fn load_dataset(path: impl AsRef<Path>, schema: &Schema) -> Result<EmpiricalDataset> {
    let file = std::fs::File::open(path.as_ref())?;
    read_dataset(std::io::BufReader::new(file), schema)
}

/// One arm's outcomes with frequency weights.
#[derive(Debug, Clone)]
struct WeightedSample {
    values: Vec<f64>,
    weights: Vec<f64>,
}

impl WeightedSample {
    fn total_weight(&self) -> f64 {
        self.weights.iter().sum()
    }

    fn is_constant(&self) -> bool {
        self.values.windows(2).all(|w| w[0] == w[1])
    }

    fn mean(&self) -> f64 {
        self.values.iter().zip(&self.weights).map(|(y, w)| w * y).sum::<f64>() / self.total_weight()
    }

    /// Weight-normalized central moment of order `k`.
    fn central_moment(&self, k: i32) -> f64 {
        let mean = self.mean();
        self.values.iter().zip(&self.weights).map(|(y, w)| w * (y - mean).powi(k)).sum::<f64>() / self.total_weight()
    }

    /// Standard deviation with divisor `sum(w) - 1`.
    fn sd(&self) -> Result<f64> {
        let total = self.total_weight();
        if !(total > 1.0) {
            return Err(FnaError::input(format!("arm weights sum to {total}; frequency weights must sum above 1")));
        }
        if self.is_constant() {
            return Ok(0.0);
        }
        Ok((self.central_moment(2) * total / (total - 1.0)).sqrt())
    }

    /// Standard deviation of the weighted empirical distribution (divisor `sum(w)`).
    fn population_sd(&self) -> f64 {
        if self.is_constant() {
            0.0
        } else {
            self.central_moment(2).sqrt()
        }
    }

    /// `m4 / m2^2`; `None` for a constant arm.
    fn kurtosis(&self) -> Option<f64> {
        if self.is_constant() {
            return None;
        }
        let m2 = self.central_moment(2);
        (m2 > 0.0).then(|| self.central_moment(4) / (m2 * m2))
    }

    /// Linear interpolation between order statistics. With unit weights this
    /// is the usual `(n - 1) p` rule; general weights place the k-th order
    /// statistic at `(S_k - w_k) / (W - w_n)` with `S_k` the cumulative weight.
    fn quantile(&self, prob: f64) -> f64 {
        let mut pairs: Vec<(f64, f64)> = self.values.iter().copied().zip(self.weights.iter().copied()).collect();
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        let total: f64 = pairs.iter().map(|p| p.1).sum();
        let last = pairs[pairs.len() - 1].1;
        let denom = total - last;
        let mut cum = 0.0;
        let positions: Vec<f64> = pairs
            .iter()
            .map(|&(_, w)| {
                let pos = cum / denom;
                cum += w;
                pos
            })
            .collect();
        let j = positions.partition_point(|&u| u <= prob);
        if j == 0 {
            return pairs[0].0;
        }
        if j >= pairs.len() {
            return pairs[pairs.len() - 1].0;
        }
        let (u0, u1) = (positions[j - 1], positions[j]);
        let t = (prob - u0) / (u1 - u0);
        pairs[j - 1].0 + t * (pairs[j].0 - pairs[j - 1].0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ArmStats {
    pub arm: String,
    pub rows: usize,
    pub weight_sum: f64,
    pub mean: f64,
    pub sd: f64,
    /// `None` when the arm is constant.
    pub kurtosis: Option<f64>,
    /// `(probability, quantile)` pairs.
    pub quantiles: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PairStats {
    pub treated: String,
    pub control: String,
    /// `sd(treated) / sd(control)`; `None` when either sd is zero.
    pub sd_ratio: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GroupStats {
    pub arms: Vec<ArmStats>,
    pub pairs: Vec<PairStats>,
}

impl GroupStats {
    pub fn arm(&self, label: &str) -> Option<&ArmStats> {
        self.arms.iter().find(|a| a.arm == label)
    }
}

pub const DEFAULT_QUANTILES: [f64; 9] = [0.01, 0.05, 0.10, 0.50, 0.90, 0.95, 0.99, 0.995, 0.999];

pub fn group_stats(data: &EmpiricalDataset, pairs: &[(String, String)], probs: &[f64]) -> Result<GroupStats> {
    if let Some(p) = probs.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        return Err(FnaError::param(format!("quantile probability {p} outside [0, 1]")));
    }
    let mut arms = Vec::with_capacity(data.arms.len());
    for label in &data.arms {
        let s = data.arm_sample(label)?;
        arms.push(ArmStats {
            arm: label.clone(),
            rows: s.values.len(),
            weight_sum: s.total_weight(),
            mean: s.mean(),
            sd: s.sd()?,
            kurtosis: s.kurtosis(),
            quantiles: probs.iter().map(|&p| (p, s.quantile(p))).collect(),
        });
    }
    let pair_stats = pairs
        .iter()
        .map(|(t, c)| {
            let sd_t = data.arm_sample(t)?.sd()?;
            let sd_c = data.arm_sample(c)?.sd()?;
            let sd_ratio = (sd_t > 0.0 && sd_c > 0.0).then(|| sd_t / sd_c);
            Ok(PairStats { treated: t.clone(), control: c.clone(), sd_ratio })
        })
        .collect::<Result<_>>()?;
    Ok(GroupStats { arms, pairs: pair_stats })
}

/// Writes one row per arm: `arm,rows,weight_sum,mean,sd,kurtosis,q<p>...`.
/// Undefined kurtosis is written as `NA`.
pub fn write_stats_csv<W: Write>(writer: W, stats: &GroupStats) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["arm".to_string(), "rows".into(), "weight_sum".into(), "mean".into(), "sd".into(), "kurtosis".into()];
    if let Some(first) = stats.arms.first() {
        header.extend(first.quantiles.iter().map(|(p, _)| format!("q{p}")));
    }
    w.write_record(&header)?;
    for a in &stats.arms {
        let mut record = vec![
            a.arm.clone(),
            a.rows.to_string(),
            a.weight_sum.to_string(),
            a.mean.to_string(),
            a.sd.to_string(),
            a.kurtosis.map_or_else(|| "NA".to_string(), |k| k.to_string()),
        ];
        record.extend(a.quantiles.iter().map(|(_, q)| q.to_string()));
        w.write_record(&record)?;
    }
    w.flush()?;
    Ok(())
}

/// Collapses each cluster to one row: weighted mean outcome, summed weight.
pub fn cluster_aggregate(data: &EmpiricalDataset) -> Result<EmpiricalDataset> {
    struct Acc {
        arm: String,
        sum: f64,
        weight: f64,
    }
    let mut order: Vec<String> = Vec::new();
    let mut acc: HashMap<String, Acc> = HashMap::new();
    for (i, row) in data.rows.iter().enumerate() {
        let cluster = row
            .cluster
            .as_ref()
            .ok_or_else(|| FnaError::input(format!("row {}: no cluster label", i + 1)))?;
        match acc.get_mut(cluster) {
            Some(a) => {
                if a.arm != row.arm {
                    return Err(FnaError::input(format!(
                        "cluster {cluster:?} spans arms {:?} and {:?}",
                        a.arm, row.arm
                    )));
                }
                a.sum += row.weight * row.outcome;
                a.weight += row.weight;
            }
            None => {
                order.push(cluster.clone());
                acc.insert(cluster.clone(), Acc { arm: row.arm.clone(), sum: row.weight * row.outcome, weight: row.weight });
            }
        }
    }
    let rows = order
        .into_iter()
        .map(|c| {
            let a = &acc[&c];
            DataRow { outcome: a.sum / a.weight, arm: a.arm.clone(), weight: a.weight, cluster: Some(c) }
        })
        .collect();
    EmpiricalDataset::new(rows)
}

struct ArmSampler {
    values: Vec<f64>,
    alias: Option<WeightedAliasIndex<f64>>,
}

impl ArmSampler {
    fn new(sample: &WeightedSample) -> Result<Self> {
        let uniform = sample.weights.windows(2).all(|w| w[0] == w[1]);
        let alias = if uniform {
            None
        } else {
            Some(
                WeightedAliasIndex::new(sample.weights.clone())
                    .map_err(|e| FnaError::input(format!("invalid bootstrap weights: {e}")))?,
            )
        };
        Ok(Self { values: sample.values.clone(), alias })
    }

    fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let idx = match &self.alias {
            Some(alias) => alias.sample(rng),
            None => rng.random_range(0..self.values.len()),
        };
        self.values[idx]
    }
}

/// Resamples balanced pilots from the empirical distributions of two arms.
pub struct BootstrapSource {
    treated: ArmSampler,
    control: ArmSampler,
    sigma0: f64,
    sigma1: f64,
}

impl BootstrapSource {
    pub fn new(data: &EmpiricalDataset, treated: &str, control: &str) -> Result<Self> {
        let t = data.arm_sample(treated)?;
        let c = data.arm_sample(control)?;
        let (sigma1, sigma0) = (t.population_sd(), c.population_sd());
        if !(sigma1 > 0.0 && sigma0 > 0.0) {
            return Err(FnaError::Degenerate(format!(
                "full-sample standard deviation is zero (treated {sigma1}, control {sigma0})"
            )));
        }
        Ok(Self { treated: ArmSampler::new(&t)?, control: ArmSampler::new(&c)?, sigma0, sigma1 })
    }
}

impl PilotSource for BootstrapSource {
    fn true_sigmas(&self) -> (f64, f64) {
        (self.sigma0, self.sigma1)
    }

    fn draw_pilot(&self, m: usize, rng: &mut SimRng) -> Result<PilotSample> {
        let half = m / 2;
        let mut outcomes = Vec::with_capacity(m);
        let mut arms = Vec::with_capacity(m);
        for (arm, sampler) in [(Arm::Treated, &self.treated), (Arm::Control, &self.control)] {
            for _ in 0..half {
                outcomes.push(sampler.draw(rng));
                arms.push(arm);
            }
        }
        PilotSample::new(outcomes, arms)
    }
}

/// Bootstrap estimate of `C_m` over `m_grid` for the arm pair `(treated, control)`.
///
/// Each draw resamples `m/2` rows with replacement from each arm and
/// normalizes the resampled sds by the full-sample ones. Resamples with a
/// zero variance are dropped; if more than half are dropped at any `m` the
/// whole curve is refused.
pub fn bootstrap_cm_curve(
    data: &EmpiricalDataset,
    pair: (&str, &str),
    m_grid: &[usize],
    draws: usize,
    seed: u64,
) -> Result<Vec<CmCurvePoint>> {
    if draws < MIN_DRAWS {
        return Err(FnaError::param(format!("need at least {MIN_DRAWS} draws, got {draws}")));
    }
    if m_grid.is_empty() {
        return Err(FnaError::param("empty m grid"));
    }
    for &m in m_grid {
        check_pilot_size(m)?;
    }
    let source = BootstrapSource::new(data, pair.0, pair.1)?;
    let streams = Substreams::new(seed);
    let mut curve = Vec::with_capacity(m_grid.len());
    for &m in m_grid {
        let values = bm_draws(&source, m, draws, streams, domain::BOOTSTRAP)?;
        let est = bm_estimate_from(&values);
        let fraction = est.degenerate_fraction();
        if fraction > MAX_DEGENERATE_FRACTION {
            return Err(FnaError::Degenerate(format!(
                "{:.1}% of bootstrap pilots of size {m} for {} vs {} had zero variance; C_m not estimated",
                100.0 * fraction,
                pair.0,
                pair.1
            )));
        }
        curve.push(curve_point_from(m, &est)?);
    }
    Ok(curve)
}

/// True when `c_m` never increases along the grid.
pub fn curve_is_monotone(curve: &[CmCurvePoint]) -> bool {
    curve.windows(2).all(|w| w[1].interval.upper <= w[0].interval.upper)
}

/// Smallest pilot size at which `observed_ratio` leaves the interpolated
/// `C_m`, or `None` if it stays inside over the whole grid.
///
/// Both bounds are interpolated with natural cubic splines through the grid
/// points, scanned on a unit lattice of `m`, and the first exit is refined by
/// bisection.
pub fn required_pilot_exact(curve: &[CmCurvePoint], observed_ratio: f64) -> Result<Option<f64>> {
    if curve.len() < 4 {
        return Err(FnaError::input(format!("need at least 4 grid points, got {}", curve.len())));
    }
    if !(observed_ratio > 0.0) || !observed_ratio.is_finite() {
        return Err(FnaError::param(format!("ratio must be positive, got {observed_ratio}")));
    }
    if observed_ratio == 1.0 {
        return Ok(None);
    }
    let ms: Vec<f64> = curve.iter().map(|p| p.m as f64).collect();
    let bound: Vec<f64> = if observed_ratio > 1.0 {
        curve.iter().map(|p| p.interval.upper).collect()
    } else {
        curve.iter().map(|p| p.interval.lower).collect()
    };
    let spline = NaturalCubicSpline::new(&ms, &bound)?;
    // positive once the ratio is outside the interval
    let outside = |m: f64| {
        if observed_ratio > 1.0 {
            observed_ratio - spline.eval(m)
        } else {
            spline.eval(m) - observed_ratio
        }
    };
    let (lo, hi) = spline.domain();
    if outside(lo) > 0.0 {
        return Ok(Some(lo));
    }
    let mut prev = lo;
    let mut m = lo + 1.0;
    while m <= hi {
        if outside(m) > 0.0 {
            let (mut a, mut b) = (prev, m);
            for _ in 0..60 {
                let mid = 0.5 * (a + b);
                if outside(mid) > 0.0 {
                    b = mid;
                } else {
                    a = mid;
                }
            }
            return Ok(Some(b));
        }
        prev = m;
        m += 1.0;
    }
    Ok(None)
}

/// Large-pilot pilot size from the full-sample kurtoses and sd ratio of a pair,
/// counted as a total balanced pilot.
pub fn required_pilot_from_data(data: &EmpiricalDataset, pair: (&str, &str)) -> Result<PilotRequirement> {
    let t = data.arm_sample(pair.0)?;
    let c = data.arm_sample(pair.1)?;
    let (kurt1, kurt0) = match (t.kurtosis(), c.kurtosis()) {
        (Some(k1), Some(k0)) => (k1, k0),
        _ => return Err(FnaError::Degenerate("kurtosis undefined for a constant arm".into())),
    };
    let ratio = t.sd()? / c.sd()?;
    required_pilot_asymptotic(kurt1, kurt0, ratio, PilotConvention::Total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::asymp::cm_from_bm;
    use approx::assert_relative_eq;

    fn dataset(treated: &[f64], control: &[f64]) -> EmpiricalDataset {
        let rows = treated
            .iter()
            .map(|&y| DataRow::new(y, "T"))
            .chain(control.iter().map(|&y| DataRow::new(y, "C")))
            .collect();
        EmpiricalDataset::new(rows).unwrap()
    }

    fn pair() -> Vec<(String, String)> {
        vec![("T".into(), "C".into())]
    }

    #[test]
    fn reads_csv() {
        let text = "y,group\n1.0,a\n2.0,a\n3.0,b\n5.0,b\n";
        let schema = Schema { outcome: "y".into(), arm: "group".into(), ..Schema::default() };
        let d = read_dataset(text.as_bytes(), &schema).unwrap();
        assert_eq!(d.arms(), ["a", "b"]);
        assert_eq!(d.rows().len(), 4);
    }

    #[test]
    fn csv_errors() {
        let schema = Schema::default();
        let missing = "outcome,arm\n1.0,a\n,a\n3.0,b\n4.0,b\n";
        let err = read_dataset(missing.as_bytes(), &schema).unwrap_err().to_string();
        assert!(err.contains("row 2"), "{err}");
        let bad_col = Schema { outcome: "nope".into(), ..Schema::default() };
        assert!(read_dataset("outcome,arm\n1,a\n".as_bytes(), &bad_col).is_err());
        let single = "outcome,arm\n1.0,a\n2.0,a\n3.0,b\n";
        assert!(read_dataset(single.as_bytes(), &schema).is_err());
        let weighted = Schema { weight: Some("w".into()), ..Schema::default() };
        let zero_w = "outcome,arm,w\n1,a,1\n2,a,0\n3,b,1\n4,b,1\n";
        assert!(read_dataset(zero_w.as_bytes(), &weighted).unwrap_err().to_string().contains("row 2"));
        let text_outcome = "outcome,arm\nabc,a\n2,a\n3,b\n4,b\n";
        assert!(read_dataset(text_outcome.as_bytes(), &schema).is_err());
    }

    #[test]
    fn unit_weights_are_neutral() {
        let plain = "outcome,arm\n1.0,a\n2.5,a\n7.0,a\n3.0,b\n5.0,b\n4.0,b\n";
        let weighted = "outcome,arm,w\n1.0,a,1\n2.5,a,1\n7.0,a,1\n3.0,b,1\n5.0,b,1\n4.0,b,1\n";
        let a = read_dataset(plain.as_bytes(), &Schema::default()).unwrap();
        let b = read_dataset(weighted.as_bytes(), &Schema { weight: Some("w".into()), ..Schema::default() }).unwrap();
        let pairs = vec![("a".to_string(), "b".to_string())];
        assert_eq!(
            group_stats(&a, &pairs, &DEFAULT_QUANTILES).unwrap(),
            group_stats(&b, &pairs, &DEFAULT_QUANTILES).unwrap()
        );
    }

    #[test]
    fn two_point_kurtosis_and_ratios() {
        let d = dataset(&[0.0, 0.0, 1.0, 1.0], &[0.0, 0.0, 1.0, 1.0]);
        let s = group_stats(&d, &pair(), &[0.5]).unwrap();
        assert_relative_eq!(s.arm("T").unwrap().kurtosis.unwrap(), 1.0, epsilon = 1e-12);
        assert_eq!(s.pairs[0].sd_ratio, Some(1.0));
    }

    #[test]
    fn constant_arm_markers() {
        let d = dataset(&[2.0, 2.0, 2.0], &[0.0, 1.0, 3.0]);
        let s = group_stats(&d, &pair(), &[0.5]).unwrap();
        let t = s.arm("T").unwrap();
        assert_eq!(t.sd, 0.0);
        assert_eq!(t.kurtosis, None);
        assert_eq!(s.pairs[0].sd_ratio, None);
    }

    #[test]
    fn quantiles_linear() {
        let d = dataset(&[4.0, 1.0, 3.0, 2.0, 5.0], &[0.0, 1.0]);
        let s = group_stats(&d, &pair(), &[0.0, 0.1, 0.5, 0.9, 1.0]).unwrap();
        let q: Vec<f64> = s.arm("T").unwrap().quantiles.iter().map(|x| x.1).collect();
        assert_relative_eq!(q[0], 1.0);
        assert_relative_eq!(q[1], 1.4, epsilon = 1e-12);
        assert_relative_eq!(q[2], 3.0);
        assert_relative_eq!(q[3], 4.6, epsilon = 1e-12);
        assert_relative_eq!(q[4], 5.0);
    }

    #[test]
    fn weighted_sd_matches_duplicated_rows() {
        let dup = dataset(&[1.0, 4.0, 4.0, 6.0], &[0.0, 1.0, 2.0]);
        let rows = vec![
            DataRow::new(1.0, "T"),
            DataRow::new(4.0, "T").weighted(2.0),
            DataRow::new(6.0, "T"),
            DataRow::new(0.0, "C"),
            DataRow::new(1.0, "C"),
            DataRow::new(2.0, "C"),
        ];
        let w = EmpiricalDataset::new(rows).unwrap();
        let a = group_stats(&dup, &pair(), &[]).unwrap();
        let b = group_stats(&w, &pair(), &[]).unwrap();
        assert_relative_eq!(a.arm("T").unwrap().sd, b.arm("T").unwrap().sd, epsilon = 1e-12);
        assert_relative_eq!(a.arm("T").unwrap().kurtosis.unwrap(), b.arm("T").unwrap().kurtosis.unwrap(), epsilon = 1e-12);
    }

    #[test]
    fn cluster_means() {
        let rows = vec![
            DataRow::new(0.0, "T").in_cluster("a"),
            DataRow::new(2.0, "T").in_cluster("a"),
            DataRow::new(4.0, "T").in_cluster("b"),
            DataRow::new(6.0, "T").in_cluster("b"),
            DataRow::new(1.0, "C").in_cluster("c"),
            DataRow::new(1.0, "C").in_cluster("c"),
            DataRow::new(3.0, "C").in_cluster("d"),
        ];
        let d = EmpiricalDataset::new(rows).unwrap();
        let agg = cluster_aggregate(&d).unwrap();
        let t: Vec<f64> = agg.rows().iter().filter(|r| r.arm == "T").map(|r| r.outcome).collect();
        assert_eq!(t, vec![1.0, 5.0]);
        assert_eq!(agg.rows()[0].weight, 2.0);

        let singles: Vec<DataRow> = [(1.0, "T"), (2.0, "T"), (3.0, "C"), (5.0, "C")]
            .iter()
            .enumerate()
            .map(|(i, &(y, a))| DataRow::new(y, a).in_cluster(format!("u{i}")))
            .collect();
        let d = EmpiricalDataset::new(singles).unwrap();
        let agg = cluster_aggregate(&d).unwrap();
        assert_eq!(agg.rows().iter().map(|r| r.outcome).collect::<Vec<_>>(), vec![1.0, 2.0, 3.0, 5.0]);

        let spanning = vec![
            DataRow::new(0.0, "T").in_cluster("a"),
            DataRow::new(2.0, "C").in_cluster("a"),
            DataRow::new(4.0, "T").in_cluster("b"),
            DataRow::new(6.0, "C").in_cluster("c"),
        ];
        assert!(cluster_aggregate(&EmpiricalDataset::new(spanning).unwrap()).is_err());
    }

    fn synthetic_curve(points: &[(usize, f64)]) -> Vec<CmCurvePoint> {
        points
            .iter()
            .map(|&(m, c)| {
                let b = 0.5 * (c + 1.0 / c);
                CmCurvePoint { m, interval: cm_from_bm(b).unwrap(), degenerate_fraction: 0.0 }
            })
            .collect()
    }

    #[test]
    fn exact_pilot_bracketing() {
        let curve = synthetic_curve(&[(480, 1.32), (500, 1.30), (520, 1.28), (540, 1.26)]);
        let m = required_pilot_exact(&curve, 1.29).unwrap().unwrap();
        assert!(m > 500.0 && m < 520.0, "{m}");
        // below one: the lower bound is used
        let m_low = required_pilot_exact(&curve, 1.0 / 1.29).unwrap().unwrap();
        assert!(m_low > 500.0 && m_low < 520.0, "{m_low}");
        assert_eq!(required_pilot_exact(&curve, 3.0).unwrap(), Some(480.0));
        assert_eq!(required_pilot_exact(&curve, 1.0).unwrap(), None);
        assert_eq!(required_pilot_exact(&curve, 1.1).unwrap(), None);
        assert!(required_pilot_exact(&curve[..3], 1.29).is_err());
    }

    #[test]
    fn monotone_check() {
        assert!(curve_is_monotone(&synthetic_curve(&[(10, 2.0), (20, 1.5), (30, 1.4)])));
        assert!(!curve_is_monotone(&synthetic_curve(&[(10, 2.0), (20, 2.5), (30, 1.4)])));
    }

    #[test]
    fn refuses_constant_full_sample() {
        let d = dataset(&[1.0, 1.0, 1.0], &[0.0, 1.0, 2.0]);
        let err = bootstrap_cm_curve(&d, ("T", "C"), &[10], 1000, 1).err().unwrap();
        assert!(err.is_degenerate());
    }

    #[test]
    fn identical_arms_never_need_pilot() {
        let d = dataset(&[0.0, 1.0, 5.0, 2.0], &[0.0, 1.0, 5.0, 2.0]);
        assert_eq!(required_pilot_from_data(&d, ("T", "C")).unwrap(), PilotRequirement::Never);
    }
}
