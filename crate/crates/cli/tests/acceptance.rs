//! Acceptance gates. Prints one PASS/FAIL line per criterion and exits
//! nonzero when any criterion fails.

#[path = "../../core/tests/common/mod.rs"]
mod common;

use std::fs;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use common::{duality_gap, gaussian_matrix, gaussian_vector, kkt_violation, lasso_coordinate_descent, rng};
use hdht_core::collections::{build_reparam, lars_path};
use hdht_core::engine::{fisher_statistic, Calibration, TestConfig};
use hdht_core::ggm::{ggm_test, GgmSamples};
use hdht_core::numkit::{Matrix, Vector};
use hdht_core::simulate::{
    derive_seed, draw_two_sample, make_covariance, run_experiment, CovarianceSpec, ExperimentGrid,
    ExperimentOptions, Method, ResultRow, ScenarioId,
};
use hdht_core::stats::{laplace_tail_bound, pvalue_variance, EigenSpectrum, StatOptions, SubsetFit};
use hdht_core::{SubsetModel, TwoSampleData};
use rand::Rng;
use rand_distr::{ChiSquared, Distribution, StandardNormal};

const ALPHA: f64 = 0.05;

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: String) -> Outcome {
    Outcome { passed, detail }
}

fn random_data(seed: u64, n1: usize, n2: usize, p: usize) -> TwoSampleData {
    let mut r = rng(seed);
    TwoSampleData::new(
        gaussian_matrix(&mut r, n1, p),
        gaussian_vector(&mut r, n1),
        gaussian_matrix(&mut r, n2, p),
        gaussian_vector(&mut r, n2),
    )
    .unwrap()
}

/// Kolmogorov-Smirnov distance between a sample and U(0, 1).
fn ks_uniform(mut u: Vec<f64>) -> f64 {
    u.sort_by(f64::total_cmp);
    let n = u.len() as f64;
    u.iter()
        .enumerate()
        .map(|(i, &v)| ((i + 1) as f64 / n - v).max(v - i as f64 / n))
        .fold(0.0, f64::max)
}

/// Asymptotic 1% critical value of the one-sample KS statistic.
fn ks_critical_1pct(n: usize) -> f64 {
    1.6276 / (n as f64).sqrt()
}

/// Gaussian log-likelihood of `y` given `x`, `beta` and variance `var`,
/// averaged over observations.
fn mean_loglik(x: &Matrix, y: &Vector, beta: &Vector, var: f64) -> f64 {
    let n = y.len() as f64;
    let r = y - x * beta;
    -0.5 * (2.0 * std::f64::consts::PI * var).ln() - r.norm_squared() / (2.0 * n * var)
}

fn normal_equations(x: &Matrix, y: &Vector) -> (Vector, f64) {
    let beta = (x.transpose() * x).lu().solve(&(x.transpose() * y)).expect("full rank design");
    let var = (y - x * &beta).norm_squared() / y.len() as f64;
    (beta, var)
}

fn decomposition() -> Outcome {
    let mut r = rng(11);
    let mut worst: f64 = 0.0;
    for case in 0..1000u64 {
        let n1 = r.random_range(10..=60);
        let n2 = r.random_range(10..=60);
        let max_size = 5.min(n1.min(n2) / 2);
        let size = r.random_range(1..=max_size);
        let p = size + r.random_range(0..4);
        let data = random_data(1000 + case, n1, n2, p);
        let s = SubsetModel::new((0..size).collect());
        let t = SubsetFit::new(&data, &s, StatOptions::default()).unwrap().statistics();

        let x1 = hdht_core::numkit::select_columns(&data.x1, s.indices());
        let x2 = hdht_core::numkit::select_columns(&data.x2, s.indices());
        let (b1, v1) = normal_equations(&x1, &data.y1);
        let (b2, v2) = normal_equations(&x2, &data.y2);
        let d1 = mean_loglik(&x1, &data.y1, &b1, v1) - mean_loglik(&x1, &data.y1, &b2, v2);
        let d2 = mean_loglik(&x2, &data.y2, &b2, v2) - mean_loglik(&x2, &data.y2, &b1, v1);
        let oracle = 2.0 * (d1 + d2);
        let sum = t.f_v + t.f_1 + t.f_2;
        worst = worst.max((sum - oracle).abs() / oracle.abs().max(1e-300));
    }
    outcome(worst <= 1e-8, format!("worst relative error {worst:.2e} over 1000 instances (tol 1e-8)"))
}

fn variance_pvalue_exactness() -> Outcome {
    let reps = 5000;
    let q: Vec<f64> = (0..reps as u64)
        .map(|rep| {
            let data = random_data(50_000 + rep, 30, 30, 4);
            let s = SubsetModel::new(vec![0, 2]);
            let t = SubsetFit::new(&data, &s, StatOptions::default()).unwrap().statistics();
            pvalue_variance(&t, 30, 30)
        })
        .collect();
    let d = ks_uniform(q);
    let crit = ks_critical_1pct(reps);
    outcome(d < crit, format!("KS {d:.4} vs 1% critical {crit:.4} over {reps} null draws"))
}

fn laplace_bound_validity() -> Outcome {
    let configs: Vec<(Vec<f64>, usize, usize)> = vec![
        (vec![0.05], 20, 1),
        (vec![0.1], 40, 1),
        (vec![0.02, 0.02], 60, 2),
        (vec![0.08, 0.01], 15, 2),
        (vec![0.1, 0.05, 0.01], 30, 3),
        (vec![0.03, 0.03, 0.03], 12, 3),
        (vec![0.2, 0.02, 0.02, 0.02], 25, 4),
        (vec![0.05, 0.04, 0.03, 0.02], 50, 4),
        (vec![0.1, 0.08, 0.06, 0.04, 0.02], 20, 5),
        (vec![0.5, 0.01, 0.01, 0.01, 0.01], 40, 5),
        (vec![0.01; 5], 60, 5),
        (vec![0.3, 0.001], 10, 2),
    ];
    let draws = 100_000;
    let mut worst = f64::NEG_INFINITY;
    let mut points = 0;
    for (ci, (a, n_den, size)) in configs.iter().enumerate() {
        let spec = EigenSpectrum::new(a.clone()).unwrap();
        let dof = (n_den - size) as f64;
        let chi = ChiSquared::new(dof).unwrap();
        let mut r = rng(300 + ci as u64);
        let sample = |r: &mut rand_chacha::ChaCha8Rng| {
            let num: f64 = a
                .iter()
                .map(|&ai| {
                    let z: f64 = StandardNormal.sample(r);
                    ai * z * z
                })
                .sum();
            num / (chi.sample(r) / dof)
        };
        // u grid spans pilot tail probabilities from 0.5 down to 1e-3
        let mut pilot: Vec<f64> = (0..20_000).map(|_| sample(&mut r)).collect();
        pilot.sort_by(f64::total_cmp);
        let us: Vec<f64> = (0..20)
            .map(|k| {
                let tail = 0.5 * (1e-3f64 / 0.5).powf(k as f64 / 19.0);
                pilot[((1.0 - tail) * pilot.len() as f64) as usize]
            })
            .collect();
        let values: Vec<f64> = (0..draws).map(|_| sample(&mut r)).collect();
        for &u in &us {
            let tail = values.iter().filter(|&&v| v > u).count() as f64 / draws as f64;
            let se = (tail * (1.0 - tail) / draws as f64).sqrt();
            let bound = laplace_tail_bound(u, &spec, *n_den, *size);
            worst = worst.max(tail - 3.0 * se - bound);
            points += 1;
        }
    }
    outcome(
        worst <= 0.0,
        format!("max (MC tail - 3se - bound) = {worst:.2e} over {points} points"),
    )
}

fn lars_correctness() -> Outcome {
    let (mut kkt, mut gap_worst, mut diff, mut checked) = (0.0f64, 0.0f64, 0.0f64, 0);
    for inst in 0..50u64 {
        let data = random_data(7000 + inst, 20, 20, 10);
        let design = build_reparam(&data).unwrap();
        let path = lars_path(&design, 40);
        let lambdas = path.lambdas();
        // interior points: geometric midpoints of the first five nondegenerate intervals
        let mut intervals: Vec<(f64, f64)> =
            lambdas.windows(2).map(|w| (w[0], w[1])).filter(|(hi, lo)| hi - lo > 1e-9 * hi).collect();
        intervals.truncate(5);
        for (hi, lo) in intervals {
            let lambda = (hi * lo).sqrt();
            let theta = path.coefficients_at(lambda).unwrap();
            kkt = kkt.max(kkt_violation(&design.w, &design.y, &theta, lambda));
            let (cd, gap) = lasso_coordinate_descent(&design.w, &design.y, lambda, 1e-10);
            gap_worst = gap_worst.max(gap.max(duality_gap(&design.w, &design.y, &cd, lambda)));
            diff = diff.max((&theta - &cd).amax());
            checked += 1;
        }
    }
    let passed = checked == 250 && kkt <= 1e-8 && gap_worst <= 1e-10 && diff <= 1e-6;
    outcome(
        passed,
        format!("{checked} points: KKT {kkt:.1e} (1e-8), oracle gap {gap_worst:.1e} (1e-10), max diff {diff:.1e} (1e-6)"),
    )
}

fn rate(rows: &[ResultRow], method: &str, r: f64) -> f64 {
    rows.iter().find(|row| row.method == method && (row.r - r).abs() < 1e-12).expect("row present").reject_rate
}

fn null_level_runs() -> Vec<ResultRow> {
    let grid = ExperimentGrid::product(&[ScenarioId::H00], &[CovarianceSpec::Identity], &[25], 50, &[0.0], 200, 100);
    let methods: Vec<Method> = ["perm-lasso", "bonf-lasso"].iter().map(|m| m.parse().unwrap()).collect();
    run_experiment(&grid, &methods, ALPHA, 2024, ExperimentOptions::default()).unwrap()
}

fn permutation_size(rows: &[ResultRow]) -> Outcome {
    let f = rate(rows, "perm-lasso", 0.0);
    outcome((0.025 - 0.03..=0.05 + 0.03).contains(&f), format!("perm-lasso null rate {f:.3} (band [-0.005, 0.08])"))
}

fn bonferroni_conservative(rows: &[ResultRow]) -> Outcome {
    let f = rate(rows, "bonf-lasso", 0.0);
    outcome(f <= 0.01, format!("bonf-lasso null rate {f:.3} (<= 0.01)"))
}

fn se_diff(a: f64, b: f64, reps: usize) -> f64 {
    ((a * (1.0 - a) + b * (1.0 - b)) / reps as f64).sqrt()
}

fn power_ordering() -> Outcome {
    let rs = [0.1, 0.2, 0.3, 0.4, 0.5];
    let reps = 200;
    let grid = ExperimentGrid::product(&[ScenarioId::Three], &[CovarianceSpec::Identity], &[50], 50, &rs, reps, 100);
    let methods: Vec<Method> = ["perm-lasso", "perm-s1"].iter().map(|m| m.parse().unwrap()).collect();
    let rows = run_experiment(&grid, &methods, ALPHA, 77, ExperimentOptions::default()).unwrap();
    let (lasso, s1) = (rate(&rows, "perm-lasso", 0.5), rate(&rows, "perm-s1", 0.5));
    let ordered = lasso >= s1 - 2.0 * se_diff(lasso, s1, reps);
    let mut monotone = true;
    let mut curves = Vec::new();
    for m in ["perm-lasso", "perm-s1"] {
        let f: Vec<f64> = rs.iter().map(|&r| rate(&rows, m, r)).collect();
        monotone &= f.windows(2).all(|w| w[1] >= w[0] - 2.0 * se_diff(w[0], w[1], reps));
        curves.push(format!("{m} {:?}", f));
    }
    outcome(
        ordered && monotone,
        format!("at r=0.5 lasso {lasso:.3} vs s1 {s1:.3}; monotone {monotone}; {}", curves.join("; ")),
    )
}

fn ggm_null_size() -> Outcome {
    let reps = 100;
    let (p, n) = (10, 40);
    let spec = CovarianceSpec::ClusteredGgm { intra: 0.3, extra: 0.06, clusters: 2 };
    let zero = Vector::zeros(p);
    let rejections = (0..reps as u64)
        .filter(|&rep| {
            let sigma = make_covariance(&spec, p, derive_seed(99, &[rep, 0])).unwrap();
            let d = draw_two_sample(&zero, &zero, &sigma, n, n, 0.0, 0.0, derive_seed(99, &[rep, 1])).unwrap();
            let samples = GgmSamples::new(d.x1, d.x2).unwrap();
            let cfg = TestConfig { calibration: Calibration::Permutation { b: 100 }, seed: rep, ..Default::default() };
            ggm_test(&samples, &cfg).unwrap().global_reject
        })
        .count();
    let f = rejections as f64 / reps as f64;
    let bound = ALPHA + 3.0 * (ALPHA * (1.0 - ALPHA) / reps as f64).sqrt();
    outcome(f <= bound, format!("global null rate {f:.3} (<= {bound:.3})"))
}

fn fisher_uniformity() -> Outcome {
    let reps = 5000;
    let q: Vec<f64> = (0..reps as u64)
        .map(|rep| fisher_statistic(&random_data(90_000 + rep, 30, 30, 4), &SubsetModel::new(vec![1, 3])).unwrap().1)
        .collect();
    let d = ks_uniform(q);
    let crit = ks_critical_1pct(reps);
    outcome(d < crit, format!("KS {d:.4} vs 1% critical {crit:.4} over {reps} null draws"))
}

fn hdht(args: &[&str]) -> (i32, Vec<u8>) {
    let o = Command::new(env!("CARGO_BIN_EXE_hdht")).args(args).output().expect("binary runs");
    (o.status.code().unwrap_or(-1), o.stdout)
}

/// Every file under `dir` with its contents, in path order.
fn snapshot(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                out.push((path.strip_prefix(dir).unwrap().display().to_string(), fs::read(&path).unwrap()));
            }
        }
    }
    out.sort();
    out
}

fn determinism() -> Outcome {
    let fixture = |f: &str| Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(f).display().to_string();
    let (x1, y1, x2, y2) = (
        fixture("scenario1_strong/x1.csv"),
        fixture("scenario1_strong/y1.csv"),
        fixture("scenario1_strong/x2.csv"),
        fixture("scenario1_strong/y2.csv"),
    );
    let (z1, z2) = (fixture("ggm_edge/z1.csv"), fixture("ggm_edge/z2.csv"));
    let commands: Vec<(&str, Vec<&str>)> = vec![
        ("test", vec!["test", "--x1", &x1, "--y1", &y1, "--x2", &x2, "--y2", &y2, "--seed", "3"]),
        ("test-fisher", vec![
            "test", "--x1", &x1, "--y1", &y1, "--x2", &x2, "--y2", &y2, "--statistic", "fisher", "--seed", "3",
        ]),
        ("ggm", vec!["ggm", "--z1", &z1, "--z2", &z2, "--seed", "3"]),
        ("simulate", vec![
            "simulate", "--scenario", "H00,2", "--covariance", "identity,power_decay:0.75", "--n", "20", "--p", "15",
            "--r", "0.3", "--reps", "4", "--b", "20", "--method", "all", "--seed", "3", "--emit-dataset",
        ]),
        ("validate", vec!["validate", "--seed", "3"]),
    ];
    let tmp = tempfile::tempdir().unwrap();
    let mut failures = Vec::new();
    for (name, args) in &commands {
        let mut runs = Vec::new();
        for attempt in 0..2 {
            let out = tmp.path().join(format!("{name}-{attempt}"));
            let mut full = args.clone();
            let out_str = out.display().to_string();
            full.extend(["--out", out_str.as_str()]);
            let (code, stdout) = hdht(&full);
            runs.push((code, stdout, snapshot(&out)));
        }
        if runs[0] != runs[1] || runs[0].2.is_empty() {
            failures.push(*name);
        }
    }
    outcome(
        failures.is_empty(),
        format!("{} commands run twice; differing: {:?}", commands.len(), failures),
    )
}

fn main() {
    let mut all_passed = true;
    let mut report = |id: usize, name: &str, limit: Duration, check: &mut dyn FnMut() -> Outcome| {
        let start = Instant::now();
        let o = check();
        let elapsed = start.elapsed();
        let in_time = elapsed <= limit;
        let passed = o.passed && in_time;
        all_passed &= passed;
        println!(
            "criterion {id:>2} {} {name}: {} [{:.1}s, limit {}s]",
            if passed { "PASS" } else { "FAIL" },
            o.detail,
            elapsed.as_secs_f64(),
            limit.as_secs()
        );
    };
    let secs = Duration::from_secs;
    report(1, "decomposition identity", secs(10), &mut decomposition);
    report(2, "variance p-value exactness", secs(60), &mut variance_pvalue_exactness);
    report(3, "Laplace bound validity", secs(120), &mut laplace_bound_validity);
    report(4, "Lasso path correctness", secs(60), &mut lars_correctness);
    let start = Instant::now();
    let rows = null_level_runs();
    let shared = start.elapsed();
    report(5, "permutation size", secs(1200), &mut || {
        let mut o = permutation_size(&rows);
        o.detail.push_str(&format!(" (shared runs {:.1}s)", shared.as_secs_f64()));
        o
    });
    report(6, "Bonferroni conservativeness", secs(1200), &mut || bonferroni_conservative(&rows));
    report(7, "power ordering", secs(1800), &mut power_ordering);
    report(8, "GGM null size", secs(900), &mut ggm_null_size);
    report(9, "Fisher null uniformity", secs(60), &mut fisher_uniformity);
    report(10, "determinism", secs(600), &mut determinism);
    if !all_passed {
        std::process::exit(1);
    }
}
