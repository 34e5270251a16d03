//! Acceptance runner: one PASS/FAIL line per criterion, non-zero exit on any
//! failure. `ACCEPTANCE_ONLY=1,5,7` restricts the run to the listed criteria.

mod common;

use std::path::Path;
use std::process::Command;
use std::time::Instant;

use common::*;
use misreml::ci::TruncatedNormal;
use misreml::mcstudy::{summarize, ParameterSummary};
use misreml::{
    normal_ci, run_replication, var_sigma_eps, ExponentMode, IntervalKind, McSummary, Parameter, ReplicationResult,
    SimConfig,
};
use rayon::prelude::*;

struct Outcome {
    pass: bool,
    detail: String,
}

fn threads() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

fn scenario(n: usize, p: usize, seed: u64) -> SimConfig {
    let mut c = SimConfig::new(n, p, p / 10, 0.4, 0.6, seed);
    c.n_reps = 300;
    c.levels = vec![0.05];
    c
}

fn replications(config: &SimConfig) -> Vec<ReplicationResult> {
    (0..config.n_reps).into_par_iter().map(|r| run_replication(config, r)).collect()
}

fn param(s: &McSummary, p: Parameter) -> &ParameterSummary {
    s.parameter(p).expect("parameter summary")
}

fn table_scenario() -> McSummary {
    let config = scenario(1000, 10_000, 0x7ab1e2);
    summarize(&replications(&config), &config).expect("summary")
}

fn criterion_1(s: &McSummary) -> Outcome {
    let p = param(s, Parameter::Sigma2Eps);
    let n05 = p.coverage(IntervalKind::Normal, 0.05).unwrap_or(f64::NAN);
    Outcome {
        pass: p.pct_rb.abs() <= 30.0 && (0.90..=0.97).contains(&n05),
        detail: format!(
            "sigma2_eps: %RB = {:.3} (|.| <= 30), N_0.05 = {n05:.3} in [0.90, 0.97], reps = {}, failures = {}",
            p.pct_rb, s.rep_count, s.failure_count
        ),
    }
}

fn criterion_2(s: &McSummary) -> Outcome {
    let p = param(s, Parameter::H2);
    let n05 = p.coverage(IntervalKind::Normal, 0.05).unwrap_or(f64::NAN);
    let t05 = p.coverage(IntervalKind::Truncated, 0.05).unwrap_or(f64::NAN);
    Outcome {
        pass: (0.89..=0.97).contains(&n05) && t05 >= n05 - 0.02,
        detail: format!("h2: N_0.05 = {n05:.3} in [0.89, 0.97], T_0.05 = {t05:.3} >= N_0.05 - 0.02"),
    }
}

fn criterion_3() -> Outcome {
    let config = scenario(500, 5000, 0xe4b0);
    let reps = replications(&config);
    let ok: Vec<&ReplicationResult> = reps.iter().filter(|r| r.succeeded()).collect();
    let sigma: Vec<f64> = ok.iter().map(|r| r.fit.unwrap().sigma2_eps_hat).collect();
    let (_, var_theta) = misreml::mcstudy::mean_and_variance(&sigma);
    let pct_rb = |mode: ExponentMode| {
        let v: Vec<f64> = ok
            .iter()
            .filter_map(|r| var_sigma_eps(&r.fit.unwrap(), &r.abc.unwrap(), mode).ok())
            .collect();
        let mean_v = v.iter().sum::<f64>() / v.len() as f64;
        100.0 * (mean_v - var_theta) / var_theta
    };
    let boundary = ok.iter().filter(|r| r.fit.unwrap().boundary).count();
    let quartic = pct_rb(ExponentMode::Quartic);
    let quadratic = pct_rb(ExponentMode::QuadraticLiteral);
    Outcome {
        pass: quartic.abs() <= 35.0 && quadratic >= 100.0,
        detail: format!(
            "quartic %RB = {quartic:.2} (|.| <= 35), quadratic-literal %RB = {quadratic:.2} (>= 100), reps = {}, boundary fits = {boundary}",
            ok.len()
        ),
    }
}

fn criterion_4() -> Outcome {
    let config = scenario(2000, 20_000, 0xc0515);
    let s = summarize(&replications(&config), &config).expect("summary");
    let sigma = param(&s, Parameter::Sigma2Eps).mean_theta_hat;
    let h2 = param(&s, Parameter::H2).mean_theta_hat;
    Outcome {
        pass: (sigma - 0.4).abs() <= 0.03 && (h2 - 0.6).abs() <= 0.03,
        detail: format!("mean sigma2_eps = {sigma:.4} (0.4 +- 0.03), mean h2 = {h2:.4} (0.6 +- 0.03), reps = {}", s.rep_count),
    }
}

fn criterion_5() -> Outcome {
    let start = Instant::now();
    let s = oracle_sweep(200, 0xacce97);
    let secs = start.elapsed().as_secs_f64();
    Outcome {
        pass: s.instances >= 200
            && s.trace_err <= 1e-8
            && s.gamma_err <= 1e-4
            && s.abc_err <= 1e-8
            && s.identity_err <= 1e-8
            && secs < 120.0,
        detail: format!(
            "{} instances ({} interior) in {secs:.1}s: traces {:.2e}, gamma {:.2e}, ABC {:.2e}, identities {:.2e}",
            s.instances, s.interior, s.trace_err, s.gamma_err, s.abc_err, s.identity_err
        ),
    }
}

fn criterion_6() -> Outcome {
    let s = invariance_sweep(50, 0x1a7a);
    Outcome {
        pass: s.scale_err <= 1e-6 && s.shift_err <= 1e-8,
        detail: format!("{} instances: scale {:.2e} (<= 1e-6), shift {:.2e} (<= 1e-8)", s.instances, s.scale_err, s.shift_err),
    }
}

fn criterion_7() -> Outcome {
    let published = normal_ci(20.150_f64, 7.117, 0.05).expect("interval");
    let published_ok = format!("{:.3} {:.3}", published.lower, published.upper) == "14.921 25.379";

    let mut round_trip: f64 = 0.0;
    for (mean, var, lo, hi) in [
        (0.05, 0.02, 0.0, 1.0),
        (0.6, 0.01, 0.0, 1.0),
        (0.98, 0.005, 0.0, 1.0),
        (-0.5, 0.3, 0.0, f64::INFINITY),
        (0.4, 0.001, 0.0, f64::INFINITY),
        (2.0, 4.0, 0.0, f64::INFINITY),
    ] {
        let law = TruncatedNormal::new(mean, var, lo, hi).expect("law");
        for k in 1..200 {
            let t = k as f64 / 200.0;
            let x = law.quantile(t).expect("quantile");
            round_trip = round_trip.max((law.cdf(x) - t).abs());
        }
    }
    let quantile = quantile_grid_error(100_000);
    Outcome {
        pass: published_ok && round_trip <= 1e-8 && quantile <= 1e-9,
        detail: format!(
            "published ({:.3}, {:.3}), truncated round trip {round_trip:.2e} (<= 1e-8), inverse normal {quantile:.2e} (<= 1e-9)",
            published.lower, published.upper
        ),
    }
}

const STUDY: &str = r#"
reps = 4
levels = [0.01, 0.05, 0.1]
[[grid]]
sizes = [[80, 300]]
omega = [0.05, 0.5]
ab = [[0.4, 0.6], [0.8, 0.2]]
"#;

fn mc_csv(config: &Path, threads: usize, out: &Path) -> Option<Vec<u8>> {
    let status = Command::new(env!("CARGO_BIN_EXE_misreml"))
        .args(["mc", "--config"])
        .arg(config)
        .args(["--seed", "20240611", "--threads", &threads.to_string(), "--out-dir"])
        .arg(out)
        .status()
        .ok()?;
    if !status.success() {
        return None;
    }
    std::fs::read(out.join("mc_results.csv")).ok()
}

fn criterion_8() -> Outcome {
    let dir = tempfile::tempdir().expect("tempdir");
    let config = dir.path().join("study.toml");
    std::fs::write(&config, STUDY).expect("config");
    let a = mc_csv(&config, 1, &dir.path().join("a"));
    let b = mc_csv(&config, 1, &dir.path().join("b"));
    let c = mc_csv(&config, 8, &dir.path().join("c"));
    let ok = a.is_some() && a == b && a == c;
    Outcome {
        pass: ok,
        detail: format!(
            "threads 1 twice and threads 8: {} ({} bytes)",
            if ok { "identical" } else { "differ or failed" },
            a.map_or(0, |v| v.len())
        ),
    }
}

fn main() {
    env_logger::init();
    let only: Option<Vec<usize>> = std::env::var("ACCEPTANCE_ONLY")
        .ok()
        .map(|s| s.split(',').filter_map(|t| t.trim().parse().ok()).collect());
    let wanted = |k: usize| only.as_ref().is_none_or(|o| o.contains(&k));
    println!("acceptance: {} worker thread(s)", threads());

    let mut failed = 0;
    let mut report = |k: usize, start: Instant, o: Outcome| {
        let tag = if o.pass { "PASS" } else { "FAIL" };
        println!("criterion {k}: {tag}  {}  [{:.1}s]", o.detail, start.elapsed().as_secs_f64());
        if !o.pass {
            failed += 1;
        }
    };

    let table = (wanted(1) || wanted(2)).then(|| (Instant::now(), table_scenario()));
    if let Some((start, s)) = &table {
        if wanted(1) {
            report(1, *start, criterion_1(s));
        }
        if wanted(2) {
            report(2, *start, criterion_2(s));
        }
    }
    let checks: [(usize, fn() -> Outcome); 6] = [
        (3, criterion_3),
        (4, criterion_4),
        (5, criterion_5),
        (6, criterion_6),
        (7, criterion_7),
        (8, criterion_8),
    ];
    for (k, check) in checks {
        if wanted(k) {
            let start = Instant::now();
            report(k, start, check());
        }
    }
    if failed > 0 {
        println!("acceptance: {failed} criterion(s) failed");
        std::process::exit(1);
    }
    println!("acceptance: all criteria passed");
}
