//! Acceptance criteria. Each test prints one `PASS`/`FAIL` line to stderr
//! (bypassing the harness capture) and then asserts.

use std::io::Write;
use std::path::Path;
use std::process::Command;
use std::sync::Mutex;
use std::time::{Duration, Instant};

use ksubset::channels::{
    amortize, brr_channel, brute_force_mi, ksubset_channel, mrr_channel, random_valid_staircase,
    Channel,
};
use ksubset::estimation::{
    analytic_l2_error, hit_rates_ksubset, ksharp, mixture_l2_objective, power_set_hit_rates,
};
use ksubset::information::{
    asymptotic_mi_bound, brr_mutual_info, kstar, max_mutual_info, mutual_info_ik,
    quadratic_mi_bound,
};
use ksubset::rng::RngStream;
use ksubset::sampling::{Mechanism, Randomizer};
use ksubset::simulation::{run_experiment, ExperimentConfig, MechanismKind, ThetaSource};
use ksubset::PrivacyParams;
use rand::Rng;
use statrs::distribution::{ChiSquared, ContinuousCDF};

const EPS_GRID: [f64; 6] = [0.01, 0.1, 0.5, 1.0, 2.0, 5.0];

/// Serializes criteria so timed ones do not share the CPU.
static LOCK: Mutex<()> = Mutex::new(());

fn report(id: u32, ok: bool, elapsed: Duration, detail: &str) {
    let line = format!(
        "{} criterion {id:>2} ({:.2}s): {detail}\n",
        if ok { "PASS" } else { "FAIL" },
        elapsed.as_secs_f64()
    );
    let _ = std::io::stderr().write_all(line.as_bytes());
    assert!(ok, "criterion {id} failed: {detail}");
}

fn criterion<F: FnOnce() -> (bool, String)>(id: u32, limit: Option<Duration>, f: F) {
    let _guard = LOCK.lock().unwrap_or_else(|e| e.into_inner());
    let start = Instant::now();
    let (ok, detail) = f();
    let elapsed = start.elapsed();
    let in_time = limit.map_or(true, |l| elapsed < l);
    let detail = if in_time {
        detail
    } else {
        format!("{detail}; exceeded {:?}", limit.unwrap())
    };
    report(id, ok && in_time, elapsed, &detail);
}

fn params(eps: f64, d: usize) -> PrivacyParams {
    PrivacyParams::new(eps, d).unwrap()
}

/// (d, ε, k*, k#) for every published row.
#[rustfmt::skip]
const K_TABLE: &[(usize, f64, usize, usize)] = &[
    (2, 0.1, 1, 1), (2, 1.0, 1, 1),
    (4, 0.01, 2, 2), (4, 0.1, 2, 2), (4, 0.5, 2, 2), (4, 1.0, 1, 1),
    (6, 0.01, 3, 3), (6, 0.1, 3, 3), (6, 0.5, 3, 2), (6, 1.0, 2, 2),
    (8, 0.01, 4, 4), (8, 0.1, 4, 4), (8, 0.5, 3, 3), (8, 1.0, 3, 2), (8, 2.0, 2, 1),
    (16, 0.01, 8, 8), (16, 0.1, 8, 8), (16, 0.5, 7, 6), (16, 1.0, 5, 4), (16, 2.0, 3, 2), (16, 3.0, 2, 1),
    (32, 0.01, 16, 16), (32, 0.1, 15, 15), (32, 1.0, 11, 9), (32, 1.5, 9, 6), (32, 2.0, 7, 4), (32, 3.0, 4, 2),
    (64, 0.1, 31, 30), (64, 0.5, 27, 24), (64, 1.0, 22, 17), (64, 1.5, 17, 12), (64, 2.0, 13, 8),
    (64, 3.0, 7, 3), (64, 5.0, 2, 1),
    (128, 0.1, 62, 61), (128, 1.0, 43, 34), (128, 3.0, 14, 6), (128, 5.0, 4, 1),
    (256, 1.0, 87, 69), (256, 3.0, 29, 12), (256, 5.0, 7, 2),
];

#[test]
fn criterion_01_k_selection() {
    criterion(1, Some(Duration::from_secs(1)), || {
        let mismatches: Vec<String> = K_TABLE
            .iter()
            .filter_map(|&(d, eps, ks, kh)| {
                let p = params(eps, d);
                let got = (kstar(&p).k, ksharp(&p, 10_000).unwrap().k);
                (got != (ks, kh))
                    .then(|| format!("d={d} eps={eps}: got {got:?}, want ({ks}, {kh})"))
            })
            .collect();
        (
            mismatches.is_empty(),
            format!("{} cells, mismatches {:?}", K_TABLE.len(), mismatches),
        )
    });
}

#[test]
fn criterion_02_closed_form_mi() {
    criterion(2, Some(Duration::from_secs(30)), || {
        let mut worst_k: f64 = 0.0;
        let mut worst_b: f64 = 0.0;
        for &eps in &EPS_GRID {
            for d in 2..=8 {
                let p = params(eps, d);
                for k in 1..d {
                    let brute = brute_force_mi(&ksubset_channel(&p, k).unwrap()).unwrap();
                    worst_k = worst_k.max((mutual_info_ik(&p, k).unwrap() - brute).abs());
                }
            }
            for d in 2..=10 {
                let p = params(eps, d);
                let brute = brute_force_mi(&brr_channel(&p).unwrap()).unwrap();
                worst_b = worst_b.max((brr_mutual_info(&p).unwrap().series - brute).abs());
            }
        }
        (
            worst_k <= 1e-9 && worst_b <= 1e-9,
            format!("max |I_k - brute| = {worst_k:.2e}, max |BRR series - brute| = {worst_b:.2e}"),
        )
    });
}

#[test]
fn criterion_03_amortization() {
    criterion(3, Some(Duration::from_secs(30)), || {
        let (mut worst_delta, mut worst_excess) = (0.0f64, f64::NEG_INFINITY);
        let mut non_amortized = 0;
        for i in 0..200u64 {
            let d = 3 + (i % 2) as usize;
            let eps = EPS_GRID[(i as usize / 2) % EPS_GRID.len()];
            let mech = random_valid_staircase(d, eps, 1000 + i).unwrap();
            if !mech.is_amortized(1e-12) {
                non_amortized += 1;
            }
            let mi = brute_force_mi(&mech.to_channel().unwrap()).unwrap();
            let amortized =
                brute_force_mi(&amortize(&mech).unwrap().to_channel().unwrap()).unwrap();
            worst_delta = worst_delta.max((mi - amortized).abs());
            worst_excess = worst_excess.max(mi - max_mutual_info(&params(eps, d)));
        }
        (
            worst_delta <= 1e-9 && worst_excess <= 1e-9 && non_amortized == 200,
            format!(
                "200 mechanisms ({non_amortized} non-amortized), max MI change {worst_delta:.2e}, \
                 max excess over I_k* {worst_excess:.2e}"
            ),
        )
    });
}

#[test]
fn criterion_04_bound_chain() {
    criterion(4, None, || {
        let mut margin = f64::INFINITY;
        for &eps in &EPS_GRID {
            let (asym, quad) = (asymptotic_mi_bound(eps), quadratic_mi_bound(eps));
            margin = margin.min(quad - asym);
            for d in 2..=64 {
                margin = margin.min(asym - max_mutual_info(&params(eps, d)));
            }
        }
        (margin >= -1e-12, format!("min margin {margin:.3e}"))
    });
}

fn padded(head: &[f64], d: usize) -> Vec<f64> {
    let mut v = head.to_vec();
    v.resize(d, 0.0);
    v
}

#[test]
fn criterion_05_variance_formula() {
    criterion(5, Some(Duration::from_secs(120)), || {
        let mut ok = true;
        let mut details = Vec::new();
        for &(d, eps, k) in &[(6usize, 1.0f64, 2usize), (16, 1.0, 4)] {
            let n = 10_000;
            let analytic = analytic_l2_error(&params(eps, d), k, n).unwrap();
            let thetas = [padded(&[0.5, 0.3, 0.2], d), vec![1.0 / d as f64; d]];
            let mut means = Vec::new();
            for (t, theta) in thetas.iter().enumerate() {
                let mut config = ExperimentConfig::new(d, eps, n, 500, 0xacce_0500 + t as u64);
                config.mechanisms = vec![MechanismKind::Kss(k)];
                config.theta_source = ThetaSource::Fixed(theta.clone());
                config.project = false;
                let m = run_experiment(&config).unwrap().mechanisms[0].clone();
                let rel = (m.mean_l2_sq - analytic).abs() / analytic;
                ok &= rel <= 0.05;
                details.push(format!(
                    "d={d} theta#{t}: {:.4e} vs {analytic:.4e} ({:+.1}%)",
                    m.mean_l2_sq,
                    100.0 * (m.mean_l2_sq / analytic - 1.0)
                ));
                means.push((m.mean_l2_sq, m.se_l2_sq));
            }
            let pooled = (means[0].1.powi(2) + means[1].1.powi(2)).sqrt();
            let gap = (means[0].0 - means[1].0).abs();
            ok &= gap <= 2.0 * pooled;
            details.push(format!("d={d} theta gap {:.2} SE", gap / pooled));
        }
        (ok, details.join("; "))
    });
}

/// Published errors: (d, ε, l2 [BRR, MRR, KSS_MI, KSS_L2], l1 [...]).
#[rustfmt::skip]
const TABLE_ROWS: &[(usize, f64, [f64; 4], [f64; 4])] = &[
    (16, 1.0, [0.00531, 0.00837, 0.00447, 0.00434], [0.2304, 0.2896, 0.2117, 0.2086]),
    (8, 0.5, [0.01015, 0.01189, 0.00797, 0.00786], [0.2272, 0.2457, 0.2003, 0.1994]),
    (64, 2.0, [0.00476, 0.00882, 0.00403, 0.00368], [0.4358, 0.5903, 0.3998, 0.3823]),
];

#[test]
fn criterion_06_table_reproduction() {
    criterion(6, Some(Duration::from_secs(300)), || {
        let mut ok = true;
        let mut details = Vec::new();
        for &(d, eps, l2, l1) in TABLE_ROWS {
            let r = run_experiment(&ExperimentConfig::new(d, eps, 10_000, 100, 0x7ab1e)).unwrap();
            let mut worst_l2: f64 = 0.0;
            let mut worst_l1: f64 = 0.0;
            for (i, kind) in MechanismKind::STANDARD.iter().enumerate() {
                let m = r.summary(*kind).unwrap();
                let (r2, r1) = (m.mean_l2_sq / l2[i] - 1.0, m.mean_l1 / l1[i] - 1.0);
                if r2.abs() > worst_l2.abs() {
                    worst_l2 = r2;
                }
                if r1.abs() > worst_l1.abs() {
                    worst_l1 = r1;
                }
                ok &= r2.abs() <= 0.20 && r1.abs() <= 0.15;
            }
            let best = r.summary(MechanismKind::KssL2).unwrap();
            let dominates = [MechanismKind::Brr, MechanismKind::Mrr]
                .iter()
                .all(|&kind| {
                    let other = r.summary(kind).unwrap();
                    let pooled = (best.se_l2_sq.powi(2) + other.se_l2_sq.powi(2)).sqrt();
                    best.mean_l2_sq <= other.mean_l2_sq + 2.0 * pooled
                });
            ok &= dominates;
            details.push(format!(
                "d={d} eps={eps}: worst l2 {:+.1}%, worst l1 {:+.1}%, KSS_L2 dominates={dominates}",
                100.0 * worst_l2,
                100.0 * worst_l1
            ));
        }
        (ok, details.join("; "))
    });
}

#[test]
fn criterion_07_mixture_inequality() {
    criterion(7, None, || {
        let mut rng = RngStream::from_seed(0x0e07);
        let (mut tuples, mut violations) = (0, 0);
        while tuples < 100_000 {
            let d = rng.random_range(2..=64usize);
            let (g1, h1, g2, h2, w): (f64, f64, f64, f64, f64) = (
                rng.random(),
                rng.random(),
                rng.random(),
                rng.random(),
                rng.random(),
            );
            if g1 <= h1 || g2 <= h2 {
                continue;
            }
            tuples += 1;
            let f1 = mixture_l2_objective(g1, h1, d).unwrap();
            let f2 = mixture_l2_objective(g2, h2, d).unwrap();
            let fm =
                mixture_l2_objective(w * g1 + (1.0 - w) * g2, w * h1 + (1.0 - w) * h2, d).unwrap();
            if fm < f1.min(f2) * (1.0 - 1e-12) - 1e-12 {
                violations += 1;
            }
        }

        let (mut mechanisms, mut dominance_violations) = (0, 0);
        while mechanisms < 1_000 {
            let d = rng.random_range(2..=64usize);
            let eps = EPS_GRID[rng.random_range(0..EPS_GRID.len())];
            let p = params(eps, d);
            let raw: Vec<f64> = (0..=d).map(|_| rng.random::<f64>()).collect();
            let total: f64 = raw.iter().sum();
            let probs: Vec<f64> = raw.iter().map(|x| x / total).collect();
            let ratios: Vec<f64> = (0..=d)
                .map(|_| rng.random_range(1.0..=p.exp_eps()))
                .collect();
            let (g, h) = power_set_hit_rates(&p, &probs, &ratios).unwrap();
            if g <= h {
                continue;
            }
            mechanisms += 1;
            let center = d as f64 / (1.0 + p.exp_eps());
            let best = [center.floor(), center.ceil()]
                .iter()
                .map(|&k| (k as usize).clamp(1, d - 1))
                .map(|k| {
                    let r = hit_rates_ksubset(&p, k).unwrap();
                    mixture_l2_objective(r.g(), r.h(), d).unwrap()
                })
                .fold(f64::INFINITY, f64::min);
            if mixture_l2_objective(g, h, d).unwrap() < best * (1.0 - 1e-12) - 1e-12 {
                dominance_violations += 1;
            }
        }
        (
            violations == 0 && dominance_violations == 0,
            format!(
                "{tuples} tuples, {violations} violations; {mechanisms} power-set mechanisms, \
                 {dominance_violations} dominance violations"
            ),
        )
    });
}

#[test]
fn criterion_08_shape_checks() {
    criterion(8, None, || {
        let mut mismatches = Vec::new();
        for &eps in &EPS_GRID {
            for d in 2..=64 {
                let p = params(eps, d);
                let values: Vec<f64> = (1..d).map(|k| mutual_info_ik(&p, k).unwrap()).collect();
                let argmax =
                    1 + (0..values.len()).fold(0, |b, i| if values[i] > values[b] { i } else { b });
                let errors: Vec<f64> = (1..d)
                    .map(|k| analytic_l2_error(&p, k, 10_000).unwrap())
                    .collect();
                let argmin =
                    1 + (0..errors.len()).fold(0, |b, i| if errors[i] < errors[b] { i } else { b });
                let (ks, kh) = (kstar(&p).k, ksharp(&p, 10_000).unwrap().k);
                if ks != argmax || kh != argmin {
                    mismatches.push(format!(
                        "d={d} eps={eps}: bracket ({ks},{kh}) exhaustive ({argmax},{argmin})"
                    ));
                }
            }
        }
        (
            mismatches.is_empty(),
            format!("378 cells, mismatches {mismatches:?}"),
        )
    });
}

fn chi_square_p(
    channel: &Channel,
    x: usize,
    randomizer: &Randomizer,
    draws: usize,
    seed: u64,
) -> (f64, Vec<u64>) {
    let mut counts = vec![0u64; channel.num_outputs()];
    let mut rng = RngStream::from_seed(seed);
    let mut view = Vec::new();
    for _ in 0..draws {
        randomizer.randomize_into(x, &mut rng, &mut view).unwrap();
        let mask = view.iter().fold(0u64, |m, &j| m | 1 << j);
        counts[channel.column_of(mask).expect("view is a channel output")] += 1;
    }
    let stat: f64 = counts
        .iter()
        .enumerate()
        .map(|(z, &c)| {
            let e = channel.prob(x, z) * draws as f64;
            (c as f64 - e).powi(2) / e
        })
        .sum();
    let dof = (channel.num_outputs() - 1) as f64;
    (1.0 - ChiSquared::new(dof).unwrap().cdf(stat), counts)
}

#[test]
fn criterion_09_randomizer_distributions() {
    criterion(9, None, || {
        let draws = 1_000_000;
        let mut ok = true;
        let mut details = Vec::new();

        let p = params(1.0, 5);
        let channel = ksubset_channel(&p, 2).unwrap();
        let (pv, counts) = chi_square_p(
            &channel,
            0,
            &Randomizer::new(Mechanism::KSubset(2), &p).unwrap(),
            draws,
            91,
        );
        let hits: u64 = counts
            .iter()
            .enumerate()
            .filter(|&(z, _)| channel.labels()[z] & 1 == 1)
            .map(|(_, &c)| c)
            .sum();
        let g = hit_rates_ksubset(&p, 2).unwrap().g();
        let sigma = (g * (1.0 - g) / draws as f64).sqrt();
        let z = (hits as f64 / draws as f64 - g) / sigma;
        ok &= pv > 0.001 && z.abs() <= 3.0;
        details.push(format!("kss d=5 k=2: p={pv:.3}, hit z={z:+.2}"));

        let p = params(1.0, 3);
        let (pv, _) = chi_square_p(
            &brr_channel(&p).unwrap(),
            0,
            &Randomizer::new(Mechanism::Brr, &p).unwrap(),
            draws,
            92,
        );
        ok &= pv > 0.001;
        details.push(format!("brr d=3: p={pv:.3}"));

        let p = params(0.5, 4);
        let (pv, _) = chi_square_p(
            &mrr_channel(&p).unwrap(),
            0,
            &Randomizer::new(Mechanism::Mrr, &p).unwrap(),
            draws,
            93,
        );
        ok &= pv > 0.001;
        details.push(format!("mrr d=4: p={pv:.3}"));
        (ok, details.join("; "))
    });
}

fn run_cli(args: &[&str]) -> std::process::Output {
    let out = Command::new(env!("CARGO_BIN_EXE_ksubset"))
        .args(args)
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "{args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn criterion_10_performance() {
    criterion(10, None, || {
        let dir = tempfile::tempdir().unwrap();
        let secrets = dir.path().join("secrets.txt");
        let views = dir.path().join("views.txt");
        let mut rng = RngStream::from_seed(10);
        let mut text = String::with_capacity(4_000_000);
        for _ in 0..1_000_000 {
            text.push_str(itoa::Buffer::new().format(rng.random_range(0..256usize)));
            text.push('\n');
        }
        std::fs::write(&secrets, text).unwrap();

        let start = Instant::now();
        run_cli(&[
            "randomize",
            "--d",
            "256",
            "--eps",
            "1.0",
            "--k",
            "69",
            "--seed",
            "1",
            "--input",
            path_str(&secrets),
            "--output",
            path_str(&views),
        ]);
        let randomize = start.elapsed();

        let start = Instant::now();
        let out = run_cli(&[
            "estimate",
            "--d",
            "256",
            "--eps",
            "1.0",
            "--k",
            "69",
            "--views",
            path_str(&views),
            "--project",
        ]);
        let estimate = start.elapsed();
        let rows = String::from_utf8(out.stdout).unwrap().lines().count();

        (
            randomize < Duration::from_secs(10) && estimate < Duration::from_secs(5) && rows == 258,
            format!(
                "randomize 1e6 views {:.2}s (<10s), estimate {:.2}s (<5s)",
                randomize.as_secs_f64(),
                estimate.as_secs_f64()
            ),
        )
    });
}

#[test]
fn criterion_11_determinism_across_threads() {
    criterion(11, None, || {
        let dir = tempfile::tempdir().unwrap();
        let secrets = dir.path().join("secrets.txt");
        std::fs::write(
            &secrets,
            (0..50_000)
                .map(|i| format!("{}\n", (i * 7) % 32))
                .collect::<String>(),
        )
        .unwrap();
        let runs = |threads: &str| {
            let sim = run_cli(&[
                "simulate",
                "--d",
                "16",
                "--eps",
                "1.0",
                "--n",
                "2000",
                "--reps",
                "16",
                "--seed",
                "11",
                "--threads",
                threads,
            ])
            .stdout;
            let table = run_cli(&[
                "table",
                "--rows",
                "d8e0.5,d16e1.0",
                "--n",
                "1000",
                "--reps",
                "6",
                "--seed",
                "11",
                "--threads",
                threads,
            ])
            .stdout;
            let views = run_cli(&[
                "randomize",
                "--d",
                "32",
                "--eps",
                "1.0",
                "--seed",
                "11",
                "--threads",
                threads,
                "--input",
                path_str(&secrets),
            ])
            .stdout;
            (sim, table, views)
        };
        let one = runs("1");
        let four = runs("4");
        let same = one == four;
        (
            same && !one.0.is_empty() && !one.2.is_empty(),
            format!("simulate/table/randomize outputs identical for --threads 1 and 4: {same}"),
        )
    });
}
