//! Flag value parsers.

use fna_core::alloc::AllocationRule;
use fna_core::FnaError;

fn bad(msg: impl Into<String>) -> FnaError {
    FnaError::InvalidInput(msg.into())
}

/// `start:stop:step`, a comma list, or a single value.
pub fn m_grid(text: &str) -> Result<Vec<usize>, FnaError> {
    let num = |s: &str| s.trim().parse::<usize>().map_err(|_| bad(format!("not a pilot size: {s:?}")));
    let grid = if text.contains(':') {
        let parts: Vec<&str> = text.split(':').collect();
        let [start, stop, step] = parts[..] else {
            return Err(bad(format!("range must be start:stop:step, got {text:?}")));
        };
        let (start, stop, step) = (num(start)?, num(stop)?, num(step)?);
        if step == 0 || stop < start {
            return Err(bad(format!("empty or invalid range {text:?}")));
        }
        (start..=stop).step_by(step).collect()
    } else {
        text.split(',').map(num).collect::<Result<Vec<_>, _>>()?
    };
    if grid.is_empty() {
        return Err(bad("empty m grid"));
    }
    if let Some(m) = grid.iter().find(|&&m| m < 4 || m % 2 != 0) {
        return Err(bad(format!("pilot sizes must be even and at least 4, got {m}")));
    }
    if grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(bad("m grid must be strictly increasing"));
    }
    Ok(grid)
}

pub fn probabilities(text: &str) -> Result<Vec<f64>, FnaError> {
    text.split(',')
        .map(|s| {
            let p: f64 = s.trim().parse().map_err(|_| bad(format!("not a probability: {s:?}")))?;
            if (0.0..=1.0).contains(&p) {
                Ok(p)
            } else {
                Err(bad(format!("probability {p} outside [0, 1]")))
            }
        })
        .collect()
}

/// `treated:control` arm labels.
pub fn pair(text: &str) -> Result<(String, String), FnaError> {
    match text.split_once(':') {
        Some((t, c)) if !t.is_empty() && !c.is_empty() => Ok((t.to_string(), c.to_string())),
        _ => Err(bad(format!("pair must be treated:control, got {text:?}"))),
    }
}

/// Tuning values used when a rule is named without one.
pub struct RuleDefaults {
    pub alpha: f64,
    pub nu: f64,
    pub tau: f64,
    pub p: f64,
}

/// `name` or `name:value`, e.g. `fna`, `test:0.05`, `exp:0.9`.
pub fn rule(text: &str, defaults: &RuleDefaults) -> Result<AllocationRule, FnaError> {
    let (name, value) = match text.split_once(':') {
        Some((n, v)) => {
            let v: f64 = v.parse().map_err(|_| bad(format!("bad rule parameter in {text:?}")))?;
            (n, Some(v))
        }
        None => (text, None),
    };
    let rule = match name {
        "balanced" | "ba" => AllocationRule::Balanced,
        "fna" => AllocationRule::Fna,
        "ina" => AllocationRule::InfeasibleNeyman,
        "test" => AllocationRule::TestThenFna { alpha: value.unwrap_or(defaults.alpha) },
        "add" => AllocationRule::Additive { nu: value.unwrap_or(defaults.nu) },
        "exp" => AllocationRule::Exponential { tau: value.unwrap_or(defaults.tau) },
        "simple" => AllocationRule::SimpleRandom { p: value.unwrap_or(defaults.p) },
        other => return Err(bad(format!("unknown rule {other:?}; expected balanced, fna, ina, test, add, exp or simple"))),
    };
    if value.is_some() && matches!(rule, AllocationRule::Balanced | AllocationRule::Fna | AllocationRule::InfeasibleNeyman) {
        return Err(bad(format!("rule {name} takes no parameter")));
    }
    rule.validate()?;
    Ok(rule)
}
