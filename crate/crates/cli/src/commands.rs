use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use anyhow::{Context, Result};
use fna_core::alloc::{apply_rule, assign_block, critical_value, treated_count, wald_test, AllocationRule};
use fna_core::asymp::{
    cm_curve, efficiency_losses, gaussian_bm_oracle, loss_derivatives, rho_parametrization, subgaussian_cm,
    write_cm_curve, CmCurvePoint, PilotConvention, PilotRequirement,
};
use fna_core::dgp::{kurtosis_functional, make_model, make_regret_dgp, Arm, DgpSpec, PilotSample};
use fna_core::empirical::{
    bootstrap_cm_curve, cluster_aggregate, curve_is_monotone, group_stats, load_dataset, required_pilot_exact,
    required_pilot_from_data, write_stats_csv, DataRow, EmpiricalDataset, Schema, DEFAULT_QUANTILES,
};
use fna_core::sim::{run_mse, write_mse_csv, SimConfig};
use fna_core::FnaError;
use serde::Serialize;
use serde_json::{json, Value};

use crate::manifest::Recorder;
use crate::parse::{self, RuleDefaults};
use crate::{AnalyzeArgs, CmArgs, ColumnArgs, LossArgs, MseArgs, RecommendArgs};

fn invalid(msg: impl Into<String>) -> anyhow::Error {
    FnaError::InvalidInput(msg.into()).into()
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    let file = File::create(path).map_err(FnaError::from).with_context(|| format!("creating {}", path.display()))?;
    Ok(BufWriter::new(file))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value).map_err(FnaError::from)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

fn schema(cols: &ColumnArgs) -> Schema {
    Schema {
        outcome: cols.outcome_col.clone(),
        arm: cols.arm_col.clone(),
        weight: cols.weight_col.clone(),
        cluster: cols.cluster_col.clone(),
    }
}

fn load(path: &Path, cols: &ColumnArgs, cluster: bool) -> Result<EmpiricalDataset> {
    if cluster && cols.cluster_col.is_none() {
        return Err(invalid("--cluster needs --cluster-col"));
    }
    let data = load_dataset(path, &schema(cols)).with_context(|| format!("reading {}", path.display()))?;
    Ok(if cluster { cluster_aggregate(&data)? } else { data })
}

/// File-name-safe form of an arm label.
fn slug(label: &str) -> String {
    label.chars().map(|c| if c.is_ascii_alphanumeric() || c == '-' { c } else { '_' }).collect()
}

fn model_spec(a: &CmArgs, model: &str) -> Result<DgpSpec> {
    if model == "regret" {
        let (Some(kappa), Some(omega)) = (a.kappa, a.omega) else {
            return Err(invalid("--model regret needs --kappa and --omega"));
        };
        return Ok(make_regret_dgp(kappa, omega)?);
    }
    let id: u8 = model.parse().map_err(|_| invalid(format!("--model must be 1-5 or regret, got {model:?}")))?;
    Ok(make_model(id, a.ratio)?)
}

pub fn cm(a: &CmArgs, rec: &mut Recorder, config: &mut Value) -> Result<()> {
    let grid = parse::m_grid(&a.m_grid)?;
    *config = json!({ "m_grid": grid, "draws": a.draws });
    let curve: Vec<CmCurvePoint> = if let Some(model) = &a.model {
        let spec = model_spec(a, model)?;
        config["model"] = serde_json::to_value(spec.model_spec())?;
        cm_curve(&spec, &grid, a.draws, rec.seed())?
    } else {
        let path = a.data.as_ref().expect("clap enforces one source");
        let pair_text = a.pair.as_deref().ok_or_else(|| invalid("--data needs --pair treated:control"))?;
        let (treated, control) = parse::pair(pair_text)?;
        config["data"] = json!(path.display().to_string());
        config["pair"] = json!({ "treated": treated, "control": control });
        config["cluster"] = json!(a.cluster);
        let data = load(path, &a.columns, a.cluster)?;
        bootstrap_cm_curve(&data, (&treated, &control), &grid, a.draws, rec.seed())?
    };
    let out = rec.output("cm_curve.csv");
    write_cm_curve(create(&out)?, &curve)?;
    println!("wrote {}", out.display());
    Ok(())
}

pub fn mse(a: &MseArgs, rec: &mut Recorder, config: &mut Value) -> Result<()> {
    let text = std::fs::read_to_string(&a.config)
        .map_err(FnaError::from)
        .with_context(|| format!("reading {}", a.config.display()))?;
    let raw: Value = serde_json::from_str(&text).map_err(FnaError::from)?;
    let has_seed = raw.get("seed").is_some();
    let sim = SimConfig::from_json(&text, rec.seed())?;
    let generated = rec.seed_generated() && !has_seed;
    rec.set_seed(sim.seed, generated);
    *config = serde_json::to_value(&sim)?;
    let result = run_mse(&sim)?;
    let csv_path = rec.output("mse.csv");
    write_mse_csv(create(&csv_path)?, &result)?;
    let json_path = rec.output("mse_summary.json");
    write_json(&json_path, &result)?;
    let flagged = result.cells.iter().filter(|c| c.flagged).count();
    if flagged > 0 {
        eprintln!("warning: {flagged} cell(s) had more than half of their pilots degenerate");
    }
    println!("wrote {} and {}", csv_path.display(), json_path.display());
    Ok(())
}

#[derive(Serialize)]
struct PairReport {
    treated: String,
    control: String,
    sd_ratio: Option<f64>,
    exact_m: Option<f64>,
    asymptotic_m: Option<PilotRequirement>,
    /// Largest share of degenerate resamples over the grid.
    degenerate_fraction: Option<f64>,
    curve: Option<String>,
    notes: Vec<String>,
}

pub fn analyze(a: &AnalyzeArgs, rec: &mut Recorder, config: &mut Value) -> Result<()> {
    let pairs: Vec<(String, String)> = a.pairs.iter().map(|p| parse::pair(p)).collect::<Result<_, _>>()?;
    let grid = a.m_grid.as_deref().map(parse::m_grid).transpose()?;
    let probs = match &a.quantiles {
        Some(q) => parse::probabilities(q)?,
        None => DEFAULT_QUANTILES.to_vec(),
    };
    *config = json!({
        "data": a.data.display().to_string(),
        "pairs": pairs.iter().map(|(t, c)| json!({ "treated": t, "control": c })).collect::<Vec<_>>(),
        "level": if a.cluster { "cluster" } else { "unit" },
        "m_grid": grid,
        "draws": a.draws,
        "quantiles": probs,
    });
    let data = load(&a.data, &a.columns, a.cluster)?;
    let stats = group_stats(&data, &pairs, &probs)?;
    let stats_path = rec.output("stats.csv");
    write_stats_csv(create(&stats_path)?, &stats)?;

    let mut refusals = Vec::new();
    let mut reports = Vec::new();
    for (pair, pair_stats) in pairs.iter().zip(&stats.pairs) {
        let (treated, control) = (pair.0.as_str(), pair.1.as_str());
        let mut report = PairReport {
            treated: treated.into(),
            control: control.into(),
            sd_ratio: pair_stats.sd_ratio,
            exact_m: None,
            asymptotic_m: None,
            degenerate_fraction: None,
            curve: None,
            notes: Vec::new(),
        };
        match required_pilot_from_data(&data, (treated, control)) {
            Ok(req) => report.asymptotic_m = Some(req),
            Err(e) if e.is_degenerate() => {
                report.notes.push(e.to_string());
                refusals.push(format!("{treated} vs {control}: {e}"));
            }
            Err(e) => return Err(e.into()),
        }
        if let Some(grid) = &grid {
            match bootstrap_cm_curve(&data, (treated, control), grid, a.draws, rec.seed()) {
                Ok(curve) => {
                    let name = format!("cm_curve_{}_vs_{}.csv", slug(treated), slug(control));
                    let path = rec.output(&name);
                    write_cm_curve(create(&path)?, &curve)?;
                    report.curve = Some(name);
                    report.degenerate_fraction = curve.iter().map(|p| p.degenerate_fraction).reduce(f64::max);
                    if !curve_is_monotone(&curve) {
                        let msg = format!("{treated} vs {control}: c_m is not monotone over the grid");
                        eprintln!("warning: {msg}");
                        report.notes.push(msg);
                    }
                    if let Some(ratio) = report.sd_ratio {
                        if curve.len() >= 4 {
                            report.exact_m = required_pilot_exact(&curve, ratio)?;
                        } else {
                            report.notes.push("exact pilot size needs at least 4 grid points".into());
                        }
                    }
                }
                Err(e) if e.is_degenerate() => {
                    report.notes.push(e.to_string());
                    refusals.push(format!("{treated} vs {control}: {e}"));
                }
                Err(e) => return Err(e.into()),
            }
        }
        reports.push(report);
    }
    let report_path = rec.output("pilot_sizes.json");
    write_json(&report_path, &reports)?;
    println!("wrote {} and {}", stats_path.display(), report_path.display());
    if !refusals.is_empty() {
        return Err(FnaError::Degenerate(refusals.join("; ")).into());
    }
    Ok(())
}

fn pilot_from(data: &EmpiricalDataset, treated: &str, control: &str) -> Result<(PilotSample, EmpiricalDataset)> {
    let mut outcomes = Vec::new();
    let mut arms = Vec::new();
    let mut rows = Vec::new();
    for row in data.rows() {
        let arm = if row.arm == treated {
            Arm::Treated
        } else if row.arm == control {
            Arm::Control
        } else {
            continue;
        };
        outcomes.push(row.outcome);
        arms.push(arm);
        rows.push(DataRow::new(row.outcome, row.arm.clone()));
    }
    let pilot = PilotSample::new(outcomes, arms)?;
    Ok((pilot, EmpiricalDataset::new(rows)?))
}

pub fn recommend(a: &RecommendArgs, rec: &mut Recorder, config: &mut Value) -> Result<()> {
    let defaults = RuleDefaults { alpha: a.alpha, nu: a.nu, tau: a.tau, p: a.p };
    let rule = parse::rule(&a.rule, &defaults)?;
    if rule == AllocationRule::InfeasibleNeyman {
        return Err(invalid("rule ina needs the true standard deviations and cannot be applied to a pilot"));
    }
    *config = json!({
        "pilot": a.pilot.display().to_string(),
        "treated": a.treated,
        "control": a.control,
        "rule": rule,
        "n": a.n,
        "assignment": a.assignment,
    });
    let cols = ColumnArgs { outcome_col: a.outcome_col.clone(), arm_col: a.arm_col.clone(), weight_col: None, cluster_col: None };
    let data = load(&a.pilot, &cols, false)?;
    for label in [&a.treated, &a.control] {
        if !data.arms().contains(label) {
            return Err(invalid(format!("arm {label:?} not found in the pilot")));
        }
    }
    let (pilot, pilot_data) = pilot_from(&data, &a.treated, &a.control)?;
    let p = apply_rule(&rule, Some(&pilot), None)?;
    let n1 = treated_count(a.n, p)?;

    let pair = vec![(a.treated.clone(), a.control.clone())];
    let stats = group_stats(&pilot_data, &pair, &[])?;
    let (st, sc) = (stats.arm(&a.treated).expect("arm present"), stats.arm(&a.control).expect("arm present"));
    let sd_ratio = stats.pairs[0].sd_ratio;
    let mut notes = Vec::new();

    let alpha = match rule {
        AllocationRule::TestThenFna { alpha } => alpha,
        _ => 0.05,
    };
    let wald = if pilot.m0() == pilot.m1() {
        let w = wald_test(&pilot)?;
        let cv = critical_value(alpha);
        json!({
            "statistic": w.statistic,
            "alpha": alpha,
            "critical_value": cv,
            "reject_equal_variances": !w.degenerate && w.statistic.abs() > cv,
            "degenerate": w.degenerate,
        })
    } else {
        notes.push("Wald test skipped: the pilot is not balanced".to_string());
        Value::Null
    };

    let m = pilot.m();
    let mut warning = false;
    let interval = match (st.kurtosis, sc.kurtosis, sd_ratio) {
        (Some(k1), Some(k0), Some(ratio)) => match subgaussian_cm(kurtosis_functional(k1, k0), m, PilotConvention::Total) {
            Ok(approx) => {
                warning = approx.contains(ratio);
                if warning {
                    notes.push(format!(
                        "pilot sd ratio {ratio:.4} lies inside the approximate C_m [{:.4}, {:.4}] for m = {m}: \
                         the estimated allocation may do worse than balanced assignment",
                        approx.lower, approx.upper
                    ));
                }
                json!({ "lower": approx.lower, "upper": approx.upper, "v": kurtosis_functional(k1, k0) })
            }
            Err(e) => {
                notes.push(e.to_string());
                Value::Null
            }
        },
        _ => {
            notes.push("constant pilot arm: sd ratio and kurtosis undefined, C_m check skipped".into());
            Value::Null
        }
    };

    let recommendation = json!({
        "p": p,
        "n1": n1,
        "n": a.n,
        "rule": rule.label(),
        "diagnostics": {
            "m": m,
            "m_treated": pilot.m1(),
            "m_control": pilot.m0(),
            "sd_treated": st.sd,
            "sd_control": sc.sd,
            "sd_ratio": sd_ratio,
            "kurtosis_treated": st.kurtosis,
            "kurtosis_control": sc.kurtosis,
            "wald": wald,
            "subgaussian_cm": interval,
            "homoskedasticity_warning": warning,
            "notes": notes,
        },
    });
    if warning {
        eprintln!("warning: pilot sd ratio lies inside the approximate C_m; consider balanced assignment");
    }
    let path = rec.output("recommendation.json");
    write_json(&path, &recommendation)?;
    if a.assignment {
        let mut rng = fna_core::rng::Substreams::new(rec.seed()).stream(&[0]);
        let assignment = assign_block(a.n, p, &mut rng)?;
        let out = rec.output("assignment.csv");
        let mut w = create(&out)?;
        writeln!(w, "unit,arm")?;
        for (i, arm) in assignment.iter().enumerate() {
            let label = if *arm == Arm::Treated { &a.treated } else { &a.control };
            writeln!(w, "{},{}", i + 1, label)?;
        }
        w.flush()?;
    }
    println!("{}", serde_json::to_string_pretty(&recommendation)?);
    Ok(())
}

pub fn loss(a: &LossArgs, rec: &mut Recorder, config: &mut Value) -> Result<()> {
    let b_m = match (a.b_m, a.gaussian_m) {
        (Some(b), _) => b,
        (None, Some(m)) => gaussian_bm_oracle(m)?,
        (None, None) => unreachable!("clap requires one of --b-m and --gaussian-m"),
    };
    if !(b_m >= 1.0) || !b_m.is_finite() {
        return Err(invalid(format!("B_m must be a finite value of at least 1, got {b_m}")));
    }
    let (sigma0, sigma1) = match (a.rho, a.sigma0, a.sigma1) {
        (Some(rho), _, _) => {
            if !(rho > 0.0) || !rho.is_finite() {
                return Err(invalid(format!("rho must be positive, got {rho}")));
            }
            rho_parametrization(rho)
        }
        (None, Some(s0), Some(s1)) => (s0, s1),
        _ => unreachable!("clap requires --rho or both standard deviations"),
    };
    if !(sigma0 > 0.0 && sigma1 > 0.0) || !sigma0.is_finite() || !sigma1.is_finite() {
        return Err(invalid("standard deviations must be positive"));
    }
    *config = json!({ "b_m": b_m, "gaussian_m": a.gaussian_m, "sigma0": sigma0, "sigma1": sigma1, "rho": a.rho });
    let report = efficiency_losses(b_m, sigma0, sigma1);
    let mut value = serde_json::to_value(report)?;
    if let Some(rho) = a.rho {
        let (dd, dr) = loss_derivatives(b_m, rho)?;
        value["d_loss_diff_d_rho"] = json!(dd);
        value["d_loss_ratio_d_rho"] = json!(dr);
    }
    let path = rec.output("loss.json");
    write_json(&path, &value)?;
    println!("{}", serde_json::to_string_pretty(&value)?);
    Ok(())
}
