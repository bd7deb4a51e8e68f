//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each and
//! exits nonzero if any failed.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::Instant;

use fna_core::alloc::{
    additive_reg, apply_rule, assign_block, exponential_reg, feasible_neyman, pilot_variances, treated_count, wald_test,
    AllocationRule,
};
use fna_core::asymp::{
    cm_from_bm, efficiency_losses, estimate_bm, gaussian_bm_oracle, loss_derivatives, mixture_avar, neyman_avar,
    required_pilot_asymptotic, rho_parametrization, PilotConvention, PilotRequirement,
};
use fna_core::dgp::{make_model, make_regret_dgp, sample_pilot, Arm, ModelSpec, PilotSample};
use fna_core::empirical::{bootstrap_cm_curve, DataRow, EmpiricalDataset};
use fna_core::rng::Substreams;
use fna_core::sim::{run_mse, write_mse_csv, SimConfig, SimResult};
use proptest::prelude::*;
use proptest::test_runner::{Config, RngSeed, TestRunner};
use rand::Rng;
use rand_distr::StandardNormal;

const SEED: u64 = 20_240_601;
const BM_DRAWS: usize = 100_000;
const REPS: usize = 20_000;
const MAIN_N: usize = 1_000;

/// Outcome of one criterion: individual checks with a detail string each.
#[derive(Default)]
struct Report {
    checks: Vec<(bool, String)>,
}

impl Report {
    fn check(&mut self, ok: bool, detail: impl Into<String>) {
        self.checks.push((ok, detail.into()));
    }

    fn within(&mut self, label: &str, value: f64, target: f64, tol: f64) {
        let ok = (value - target).abs() <= tol;
        self.check(ok, format!("{label} = {value:.4} (target {target} ± {tol})"));
    }

    fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.0)
    }
}

fn run_criterion(id: u32, title: &str, f: impl FnOnce(&mut Report)) -> bool {
    let start = Instant::now();
    let mut report = Report::default();
    let outcome = catch_unwind(AssertUnwindSafe(|| f(&mut report)));
    let elapsed = start.elapsed().as_secs_f64();
    if let Err(e) = outcome {
        let msg = e
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_default();
        report.check(false, format!("panicked: {msg}"));
    }
    let ok = report.passed();
    println!("criterion {id} [{}] {title} ({elapsed:.1}s)", if ok { "PASS" } else { "FAIL" });
    for (pass, detail) in &report.checks {
        println!("    {} {detail}", if *pass { "ok  " } else { "FAIL" });
    }
    ok
}

fn interval_2dp(m: usize) -> (f64, f64) {
    let c = cm_from_bm(gaussian_bm_oracle(m).unwrap()).unwrap();
    ((c.lower * 100.0).round() / 100.0, (c.upper * 100.0).round() / 100.0)
}

fn criterion_1(r: &mut Report) {
    let start = Instant::now();
    let c20 = interval_2dp(20);
    let c50 = interval_2dp(50);
    r.check(c20 == (0.70, 1.43), format!("C_20 = [{:.2}, {:.2}] (target [0.70, 1.43])", c20.0, c20.1));
    r.check(c50 == (0.81, 1.23), format!("C_50 = [{:.2}, {:.2}] (target [0.81, 1.23])", c50.0, c50.1));
    let exact = cm_from_bm(gaussian_bm_oracle(20).unwrap()).unwrap();
    r.within("C_20 lower, 3 decimals", exact.lower, 0.700, 0.0005);
    r.within("C_20 upper, 3 decimals", exact.upper, 1.429, 0.0005);
    let secs = start.elapsed().as_secs_f64();
    r.check(secs < 1.0, format!("runtime {secs:.4}s < 1s"));
}

fn criterion_2(r: &mut Report) {
    let start = Instant::now();
    let normal = make_model(1, 1.0).unwrap();
    let est = estimate_bm(&normal, 20, BM_DRAWS, SEED).unwrap();
    let oracle = gaussian_bm_oracle(20).unwrap();
    r.check(
        (est.b_m - oracle).abs() <= 4.0 * est.mc_se,
        format!("normal B_20 = {:.5} vs oracle {oracle:.5}, se {:.5} (within 4 se)", est.b_m, est.mc_se),
    );
    let c_m = |model: u8, m: usize| {
        let spec = make_model(model, 1.0).unwrap();
        cm_from_bm(estimate_bm(&spec, m, BM_DRAWS, SEED).unwrap().b_m).unwrap().upper
    };
    r.within("chi-square c_20", c_m(2, 20), 2.22, 0.10);
    r.within("chi-square c_50", c_m(2, 50), 1.61, 0.08);
    r.within("Pareto(3) c_50", c_m(3, 50), 2.15, 0.15);
    let secs = start.elapsed().as_secs_f64();
    r.check(secs < 60.0, format!("runtime {secs:.1}s < 60s"));
}

fn inflation_run(m: usize, ratio: f64) -> SimResult {
    let config = SimConfig {
        specs: (1..=5).map(|id| ModelSpec::model(id, ratio)).collect(),
        rules: vec![AllocationRule::Balanced, AllocationRule::Fna],
        m,
        n: MAIN_N,
        reps: REPS,
        seed: SEED,
        common_random_numbers: true,
    };
    run_mse(&config).unwrap()
}

fn criterion_3(r: &mut Report) {
    let start = Instant::now();
    let targets = [
        (20usize, [1.029, 1.17, 1.26, 1.20, 1.17]),
        (50, [1.015, 1.064, 1.13, 1.11, 1.086]),
    ];
    let tolerances = [0.015, 0.03, 0.05, 0.05, 0.05];
    for (m, expected) in targets {
        let result = inflation_run(m, 1.0);
        for (i, (&target, &tol)) in expected.iter().zip(&tolerances).enumerate() {
            let ratio = result.cell(i, 1).mse / result.cell(i, 0).mse;
            r.within(&format!("m={m} model {} MSE(FNA)/MSE(BA)", i + 1), ratio, target, tol);
        }
    }
    let secs = start.elapsed().as_secs_f64();
    r.check(secs < 600.0, format!("runtime {secs:.1}s < 600s"));
}

fn criterion_4(r: &mut Report) {
    let result = inflation_run(20, fna_core::dgp::MIN_RATIO);
    for i in 0..5 {
        let ratio = result.cell(i, 1).mse / result.cell(i, 0).mse;
        r.check(
            (0.50..=0.65).contains(&ratio),
            format!("ratio 0.05 model {} MSE(FNA)/MSE(BA) = {ratio:.4} (target [0.50, 0.65])", i + 1),
        );
    }
}

fn criterion_5(r: &mut Report) {
    let m = 20;
    let specs: Vec<ModelSpec> = [1u8, 2].iter().flat_map(|&id| [0.5, 1.0].map(|x| ModelSpec::model(id, x))).collect();
    let config = SimConfig {
        specs: specs.clone(),
        rules: vec![AllocationRule::Fna],
        m,
        n: MAIN_N,
        reps: REPS,
        seed: SEED + 5,
        common_random_numbers: false,
    };
    let result = run_mse(&config).unwrap();
    for (i, spec) in specs.iter().enumerate() {
        let cell = result.cell(i, 0);
        let mix = mixture_avar(&spec.build().unwrap(), m, BM_DRAWS, SEED + 6).unwrap();
        let se = (cell.mc_se.powi(2) + mix.mc_se.powi(2)).sqrt();
        r.check(
            (cell.n_mse - mix.value).abs() <= 3.0 * se,
            format!(
                "model {} ratio {}: n*MSE = {:.4}, mixture = {:.4}, combined se {:.4}",
                cell.model, cell.ratio, cell.n_mse, mix.value, se
            ),
        );
    }
}

fn criterion_6(r: &mut Report) {
    let cases = [
        ("12m treat/market", 258.56, 66.56, 3.13, 35.52, 0.03),
        ("12m treat/control", 258.56, 309.89, 2.26, 177.10, 0.03),
        ("6m treat/control", 252.78, 156.33, 1.76, 355.02, 0.03),
        ("6m treat/market", 252.78, 218.92, 0.81, 6857.59, 0.10),
    ];
    for (label, k1, k0, ratio, published, rel) in cases {
        match required_pilot_asymptotic(k1, k0, ratio, PilotConvention::Total).unwrap() {
            PilotRequirement::Finite(m) => {
                let err = m / published - 1.0;
                r.check(
                    err.abs() <= rel,
                    format!("{label}: {m:.2} vs {published} ({:+.2}%, allowed {:.0}%)", 100.0 * err, 100.0 * rel),
                );
            }
            PilotRequirement::Never => r.check(false, format!("{label}: no finite pilot size")),
        }
    }
}

fn runner(cases: u32) -> TestRunner {
    TestRunner::new(Config { cases, rng_seed: RngSeed::Fixed(SEED), failure_persistence: None, ..Config::default() })
}

fn property<S: Strategy>(
    r: &mut Report,
    name: &str,
    cases: u32,
    strategy: S,
    test: impl Fn(S::Value) -> Result<(), TestCaseError>,
) {
    let outcome = runner(cases).run(&strategy, test);
    match outcome {
        Ok(()) => r.check(true, format!("{name} ({cases} cases)")),
        Err(e) => r.check(false, format!("{name}: {e}")),
    }
}

fn balanced_pilot() -> impl Strategy<Value = PilotSample> {
    (2usize..25).prop_flat_map(|k| {
        (prop::collection::vec(-50.0f64..50.0, k), prop::collection::vec(-50.0f64..50.0, k))
            .prop_map(|(t, c)| PilotSample::from_arms(&t, &c).unwrap())
    })
}

fn pilot_rules() -> [AllocationRule; 5] {
    [
        AllocationRule::Fna,
        AllocationRule::TestThenFna { alpha: 0.05 },
        AllocationRule::TestThenFna { alpha: 0.5 },
        AllocationRule::Additive { nu: 0.3 },
        AllocationRule::Exponential { tau: 0.7 },
    ]
}

fn criterion_7(r: &mut Report) {
    property(r, "C_m reciprocal symmetry and 1-membership", 1000, 1.0f64..50.0, |b| {
        let c = cm_from_bm(b).unwrap();
        prop_assert!((c.lower * c.upper - 1.0).abs() < 1e-12);
        prop_assert!(c.contains(1.0));
        Ok(())
    });

    property(
        r,
        "B_m estimate at least 1 pointwise",
        1000,
        (1u8..=5, 0.05f64..=1.0, 2usize..30, any::<u64>()),
        |(model, ratio, half, seed)| {
            let spec = make_model(model, ratio).unwrap();
            let pilot = sample_pilot(&spec, 2 * half, &mut Substreams::new(seed).stream(&[0])).unwrap();
            let v = pilot_variances(&pilot).unwrap();
            if !v.is_degenerate() {
                let z = (v.sd1() / spec.sigma1()) / (v.sd0() / spec.sigma0());
                prop_assert!(0.5 * (z + 1.0 / z) >= 1.0 - 1e-15);
            }
            Ok(())
        },
    );

    property(
        r,
        "mixture variance strictly above the large-pilot optimum",
        1000,
        (1u8..=5, 0.05f64..=1.0, 3usize..20, any::<u64>()),
        |(model, ratio, half, seed)| {
            let spec = make_model(model, ratio).unwrap();
            let mix = mixture_avar(&spec, 2 * half, 1000, seed).unwrap();
            let optimum = neyman_avar(spec.sigma0(), spec.sigma1());
            prop_assert!(mix.value - optimum > 3.0 * mix.mc_se);
            Ok(())
        },
    );

    property(r, "label equivariance p -> 1 - p", 1000, balanced_pilot(), |pilot| {
        let swapped = pilot.swap_labels();
        for rule in pilot_rules() {
            let p = apply_rule(&rule, Some(&pilot), None).unwrap();
            let q = apply_rule(&rule, Some(&swapped), None).unwrap();
            prop_assert!((p + q - 1.0).abs() < 1e-9, "{rule}: {p} vs {q}");
        }
        Ok(())
    });

    property(
        r,
        "scale invariance",
        1000,
        (balanced_pilot(), 0.01f64..100.0, -1e3f64..1e3),
        |(pilot, a, b)| {
            let moved = pilot.map_outcomes(|y| a * y + b).unwrap();
            for rule in pilot_rules() {
                let p = apply_rule(&rule, Some(&pilot), None).unwrap();
                let q = apply_rule(&rule, Some(&moved), None).unwrap();
                prop_assert!((p - q).abs() < 1e-7, "{rule}: {p} vs {q}");
            }
            Ok(())
        },
    );

    property(
        r,
        "regularizer interleaving and limits",
        1000,
        (balanced_pilot(), 0.0f64..=1.0, 0.0f64..=1.0),
        |(pilot, nu, tau)| {
            let v = pilot_variances(&pilot).unwrap();
            let fna = feasible_neyman(&v);
            let (lo, hi) = if fna < 0.5 { (fna, 0.5) } else { (0.5, fna) };
            for p in [additive_reg(&v, nu), exponential_reg(&v, tau)] {
                prop_assert!(p >= lo - 1e-12 && p <= hi + 1e-12);
            }
            prop_assert!((additive_reg(&v, 0.0) - fna).abs() < 1e-12);
            prop_assert!((exponential_reg(&v, 1.0) - fna).abs() < 1e-12);
            prop_assert_eq!(exponential_reg(&v, 0.0), 0.5);
            Ok(())
        },
    );

    property(r, "Wald antisymmetry", 1000, balanced_pilot(), |pilot| {
        let w = wald_test(&pilot).unwrap();
        let s = wald_test(&pilot.swap_labels()).unwrap();
        prop_assert_eq!(w.degenerate, s.degenerate);
        prop_assert!((w.statistic + s.statistic).abs() <= 1e-9 * (1.0 + w.statistic.abs()));
        Ok(())
    });

    // binary arms with half the units at each of two values
    let binary_midpoint = (1usize..10, 0.1f64..10.0, -5.0f64..5.0, 0.1f64..10.0, any::<u64>()).prop_map(
        |(half, a1, b1, a0, seed)| {
            let mut rng = Substreams::new(seed).stream(&[0]);
            let mut arm = |a: f64, b: f64| {
                let mut ys: Vec<f64> = (0..2 * half).map(|i| if i < half { b } else { a + b }).collect();
                rand::seq::SliceRandom::shuffle(ys.as_mut_slice(), &mut rng);
                ys
            };
            let t = arm(a1, b1);
            let c = arm(a0, 0.0);
            PilotSample::from_arms(&t, &c).unwrap()
        },
    );
    property(r, "degenerate binary Wald falls back to 1/2", 1000, binary_midpoint, |pilot| {
        prop_assert!(wald_test(&pilot).unwrap().degenerate);
        let p = apply_rule(&AllocationRule::TestThenFna { alpha: 0.99 }, Some(&pilot), None).unwrap();
        prop_assert_eq!(p, 0.5);
        Ok(())
    });

    property(r, "loss derivatives vs central differences", 1000, (1.0f64..3.0, 0.05f64..20.0), |(b, rho)| {
        let loss = |x: f64| {
            let (s0, s1) = rho_parametrization(x);
            let l = efficiency_losses(b, s0, s1);
            (l.loss_diff, l.loss_ratio)
        };
        let h = 1e-5 * rho;
        let (up, down) = (loss(rho + h), loss(rho - h));
        let (dd, dr) = loss_derivatives(b, rho).unwrap();
        let tol = |x: f64| 1e-6 * x.abs().max(b / (1.0 + rho * rho));
        prop_assert!(((up.0 - down.0) / (2.0 * h) - dd).abs() <= tol(dd));
        prop_assert!(((up.1 - down.1) / (2.0 * h) - dr).abs() <= tol(dr));
        Ok(())
    });

    for m in [100usize, 1000, 10_000] {
        let scaled = (m / 2) as f64 * (gaussian_bm_oracle(m).unwrap() - 1.0);
        r.check((scaled / 0.5 - 1.0).abs() <= 0.05, format!("(m/2)(B_m - 1) at m={m}: {scaled:.4} (target 0.5 ± 5%)"));
    }

    let regret: Vec<f64> = [10usize, 20, 40]
        .iter()
        .map(|&m| {
            let spec = make_regret_dgp(m as f64, 1.0 / m as f64).unwrap();
            estimate_bm(&spec, m, BM_DRAWS, SEED).unwrap().b_m
        })
        .collect();
    r.check(
        regret[0] < regret[1] && regret[1] < regret[2],
        format!("regret B_m over m = 10, 20, 40: {:.3}, {:.3}, {:.3} (increasing)", regret[0], regret[1], regret[2]),
    );

    property(r, "assign_block exact counts", 1000, (2usize..300, 0.001f64..0.999, any::<u64>()), |(n, p, seed)| {
        let a = assign_block(n, p, &mut Substreams::new(seed).stream(&[0])).unwrap();
        let n1 = a.iter().filter(|&&x| x == Arm::Treated).count();
        prop_assert_eq!(n1, treated_count(n, p).unwrap());
        prop_assert_eq!(n1, ((n as f64 * p).floor() as usize).clamp(1, n - 1));
        Ok(())
    });

    let draws = 200_000;
    let mut counts = [0usize; 32];
    let mut rng = Substreams::new(SEED).stream(&[7]);
    for _ in 0..draws {
        let a = assign_block(5, 0.4, &mut rng).unwrap();
        let mask: usize = a.iter().enumerate().filter(|(_, &x)| x == Arm::Treated).map(|(i, _)| 1 << i).sum();
        counts[mask] += 1;
    }
    let cells: Vec<usize> = counts.iter().copied().filter(|&c| c > 0).collect();
    let expected = draws as f64 / 10.0;
    let chi2: f64 = cells.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
    r.check(
        cells.len() == 10 && chi2 < 27.877,
        format!("assign_block uniformity over 10 subsets: chi2 = {chi2:.2} (< 27.88, 0.999 quantile, 9 df)"),
    );

    let config = SimConfig::grid(
        &[1, 2, 3],
        &[0.25, 1.0],
        vec![AllocationRule::Fna, AllocationRule::TestThenFna { alpha: 0.05 }, AllocationRule::Balanced],
        10,
        200,
        500,
        SEED,
    );
    let bytes = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        let result = pool.install(|| run_mse(&config)).unwrap();
        let mut out = Vec::new();
        write_mse_csv(&mut out, &result).unwrap();
        out.extend(serde_json::to_vec(&result).unwrap());
        out
    };
    let one = bytes(1);
    r.check(one == bytes(4) && one == bytes(2), "simulation output bitwise identical with 1, 2 and 4 threads");
}

fn criterion_8(r: &mut Report) {
    let mut rng = Substreams::new(SEED).stream(&[8]);
    let mut rows = Vec::with_capacity(100_000);
    for i in 0..100_000 {
        let z: f64 = rng.sample(StandardNormal);
        rows.push(if i % 2 == 0 { DataRow::new(2.0 + 1.7 * z, "t") } else { DataRow::new(z, "c") });
    }
    let data = EmpiricalDataset::new(rows).unwrap();
    let curve = bootstrap_cm_curve(&data, ("t", "c"), &[20], BM_DRAWS, SEED).unwrap();
    let oracle = gaussian_bm_oracle(20).unwrap();
    let (b, se) = (curve[0].interval.b_m, curve[0].interval.mc_se);
    r.check(
        (b - oracle).abs() <= 4.0 * se,
        format!("bootstrap B_20 = {b:.5} vs oracle {oracle:.5}, se {se:.5} (within 4 se)"),
    );

    let mut rows: Vec<DataRow> = (0..2000).map(|i| DataRow::new(if i % 20 == 0 { 1.0 } else { 0.0 }, "t")).collect();
    rows.extend((0..2000).map(|i| DataRow::new((i % 2) as f64, "c")));
    let data = EmpiricalDataset::new(rows).unwrap();
    match bootstrap_cm_curve(&data, ("t", "c"), &[10, 20, 40], 10_000, SEED) {
        Err(e) if e.is_degenerate() => r.check(true, format!("95%-constant binary arm refused: {e}")),
        Err(e) => r.check(false, format!("unexpected error: {e}")),
        Ok(_) => r.check(false, "95%-constant binary arm was not refused"),
    }
}

fn main() {
    // libtest flags such as --nocapture or filters are accepted and ignored
    let start = Instant::now();
    let results = [
        run_criterion(1, "Gaussian C_m exactness", criterion_1),
        run_criterion(2, "Monte Carlo agreement of B_m and c_m", criterion_2),
        run_criterion(3, "MSE inflation at ratio 1", criterion_3),
        run_criterion(4, "low-ratio limit", criterion_4),
        run_criterion(5, "simulated n*MSE vs mixture variance", criterion_5),
        run_criterion(6, "necessary-pilot reconciliation", criterion_6),
        run_criterion(7, "property suites", criterion_7),
        run_criterion(8, "bootstrap validation", criterion_8),
    ];
    let passed = results.iter().filter(|&&ok| ok).count();
    println!(
        "acceptance: {passed}/{} criteria passed in {:.1}s",
        results.len(),
        start.elapsed().as_secs_f64()
    );
    if passed != results.len() {
        std::process::exit(1);
    }
}
