//! End-to-end acceptance checks. Each test prints one PASS/FAIL line.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use lamb_core::latentcorr::pairwise_psi;
use lamb_core::quadrature::integrate_half_line;
use lamb_core::simlab::{
    distance, gen_latent, gen_thresholds, run_study, threshold_data, DistanceKind, LambSettings, Method,
    SimulationSpec, TauMode,
};
use lamb_core::special::{normal_cdf, normal_quantile};
use lamb_core::threshold::posterior_mean_tau_gamma;
use lamb_core::{
    by_reject, default_eps_theta, fit_empirical, mine_all, standardize, sweep, theta_matrix, BinaryDataset,
    FitOptions, GammaPrior, ThetaMatrix,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Exp1, StandardNormal};

fn verdict(criterion: &str, pass: bool, detail: String) {
    println!("{} criterion {criterion}: {detail}", if pass { "PASS" } else { "FAIL" });
    assert!(pass, "criterion {criterion} failed: {detail}");
}

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/tests/data").join(name)
}

fn toy() -> BinaryDataset {
    BinaryDataset::load_dense_csv(fixture("figure1.csv"), None, None).unwrap()
}

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let c: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
    c / (va * vb).sqrt()
}

fn column(ds: &BinaryDataset, j: usize) -> Vec<f64> {
    (0..ds.n()).map(|i| ds.get(i, j) as u8 as f64).collect()
}

#[test]
fn criterion_1_toy_reproduction() {
    let start = Instant::now();
    let ds = toy();
    let r12 = pearson(&column(&ds, 0), &column(&ds, 1));
    let r34 = pearson(&column(&ds, 2), &column(&ds, 3));
    let fit = fit_empirical::<f64>(&ds, &FitOptions::default()).unwrap();
    let u = standardize(&ds, &theta_matrix(&fit, default_eps_theta(ds.n())).unwrap()).unwrap();
    let (psi12, psi34) = (pairwise_psi(&u, 0, 1), pairwise_psi(&u, 2, 3));
    let seeds: Vec<usize> = (0..ds.d()).collect();
    let sets = mine_all(&u, &seeds, 0.05, 100).unwrap();
    let has12 = sets.iter().any(|s| s.members.contains(&0) && s.members.contains(&1));
    let only34 = sets.iter().any(|s| s.members == vec![2, 3]);
    let secs = start.elapsed().as_secs_f64();
    let pass = (r12 - 0.667).abs() <= 0.001
        && (r34 - 0.667).abs() <= 0.001
        && psi12 > psi34
        && has12
        && !only34
        && secs < 1.0;
    verdict(
        "1 (toy data: correlations, psi contrast, mined sets)",
        pass,
        format!("r12={r12:.4} r34={r34:.4} psi12={psi12:.3} psi34={psi34:.3} has{{1,2}}={has12} exact{{3,4}}={only34} time={secs:.3}s"),
    );
}

#[test]
fn criterion_1_toy_l1_equal() {
    let ds = toy();
    let d12 = distance(&ds, DistanceKind::L1, 0, 1);
    let d34 = distance(&ds, DistanceKind::L1, 2, 3);
    verdict("1 (toy data: pairs equally far apart in l1)", d12 == d34, format!("l1(1,2)={d12} l1(3,4)={d34}"));
}

#[test]
fn criterion_1_toy_l1_equals_one() {
    let ds = toy();
    let d12 = distance(&ds, DistanceKind::L1, 0, 1);
    let d34 = distance(&ds, DistanceKind::L1, 2, 3);
    verdict(
        "1 (toy data: l1 distance = 1 for both pairs)",
        d12 == 1.0 && d34 == 1.0,
        format!("l1(1,2)={d12} l1(3,4)={d34}"),
    );
}

#[test]
fn criterion_2_simulation_study() {
    let start = Instant::now();
    let base = SimulationSpec {
        n: 101,
        d: 1000,
        m: 100,
        rho: 0.7,
        tau_mode: TauMode::RandomExpo1,
        alpha_range: (0.05, 0.5),
        rng_seed: 2024,
    };
    let grid = [
        base,
        SimulationSpec { rho: 0.6, ..base },
        SimulationSpec { tau_mode: TauMode::FixedOne, ..base },
    ];
    let table = run_study(&grid, &Method::ALL, 10, &LambSettings::default()).unwrap();
    let summary = table.summary();
    let gated = |m: Method, rho: f64, mode: TauMode| {
        summary.iter().find(|s| s.method == m && s.rho == rho && s.tau_mode == mode).unwrap().mean_gated_tdr
    };
    let mut lines = Vec::new();
    for s in &summary {
        lines.push(format!("{}@{}/{}={:.2}", s.method.as_str(), s.rho, s.tau_mode.as_str(), s.mean_gated_tdr));
    }
    let r = TauMode::RandomExpo1;
    let f = TauMode::FixedOne;
    let lamb_ok = gated(Method::Lamb, 0.7, r) >= 0.9 && gated(Method::Lamb, 0.6, r) >= 0.5 && gated(Method::Lamb, 0.7, f) >= 0.9;
    let random_baselines_ok = DistanceKind::ALL.iter().all(|&k| gated(Method::Baseline(k), 0.7, r) <= 0.2);
    let fixed_baselines_ok = [DistanceKind::L1, DistanceKind::L2, DistanceKind::Binary]
        .iter()
        .all(|&k| gated(Method::Baseline(k), 0.7, f) <= 0.2);
    let secs = start.elapsed().as_secs_f64();
    verdict(
        "2 (simulation study, gated mean TDR over 10 reps)",
        lamb_ok && random_baselines_ok && fixed_baselines_ok && secs < 1200.0,
        format!("{} time={secs:.0}s", lines.join(" ")),
    );
}

fn ks_statistic(mut xs: Vec<f64>, cdf: impl Fn(f64) -> f64) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    xs.iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
        })
        .fold(0.0, f64::max)
}

#[test]
fn criterion_3_clt_calibration() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let (n, d) = (500, 21);
    let set: Vec<usize> = (1..d).collect();
    let mut zs = Vec::new();
    let mut ps = Vec::new();
    for _ in 0..2000 {
        let tau: Vec<f64> = (0..n).map(|_| rng.sample::<f64, _>(Exp1)).collect();
        let alpha: Vec<f64> = (0..d).map(|_| rng.random_range(0.05..1.5)).collect();
        let theta = ThetaMatrix::from_fn(n, d, |i, j| (1.0 - (-tau[i] * alpha[j]).exp()).clamp(0.01, 0.99)).unwrap();
        let mut cells = Vec::new();
        for j in 0..d {
            for i in 0..n {
                let z: f64 = rng.sample(StandardNormal);
                if z <= normal_quantile(theta.get(i, j)) {
                    cells.push((i, j));
                }
            }
        }
        let ds = BinaryDataset::from_cells((0..n).map(|i| i.to_string()).collect(), (0..d).map(|j| j.to_string()).collect(), cells).unwrap();
        let u = standardize(&ds, &theta).unwrap();
        let s = lamb_core::test_statistic(&u, 0, &set).unwrap().unwrap();
        zs.push(s.z);
        ps.push(s.pvalue);
    }
    let ks_z = ks_statistic(zs, |x| normal_cdf(x));
    let ks_p = ks_statistic(ps, |x| x.clamp(0.0, 1.0));
    verdict("3 (CLT calibration under the null)", ks_z < 0.05 && ks_p < 0.05, format!("KS(z)={ks_z:.4} KS(p)={ks_p:.4}"));
}

#[test]
fn criterion_4_threshold_induced_correlation() {
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    let (n, eps) = (100_000, 0.1);
    let row_theta: Vec<f64> = (0..n).map(|_| if rng.random_bool(0.5) { eps } else { 1.0 - eps }).collect();
    let theta = ThetaMatrix::from_fn(n, 2, |i, _| row_theta[i]).unwrap();
    let mut cells = Vec::new();
    for i in 0..n {
        for j in 0..2 {
            let z: f64 = rng.sample(StandardNormal);
            if z <= normal_quantile(row_theta[i]) {
                cells.push((i, j));
            }
        }
    }
    let ds = BinaryDataset::from_cells((0..n).map(|i| i.to_string()).collect(), vec!["j".into(), "k".into()], cells).unwrap();
    let (x, y) = (column(&ds, 0), column(&ds, 1));
    let nf = n as f64;
    let (mx, my) = (x.iter().sum::<f64>() / nf, y.iter().sum::<f64>() / nf);
    let cov = x.iter().zip(&y).map(|(a, b)| (a - mx) * (b - my)).sum::<f64>() / nf;
    let psi = pairwise_psi(&standardize(&ds, &theta).unwrap(), 0, 1);
    verdict(
        "4 (thresholds induce covariance, not latent correlation)",
        (cov - 0.16).abs() <= 0.005 && psi.abs() < 0.02,
        format!("cov={cov:.4} psi={psi:.4}"),
    );
}

fn sign_trials(rng: &mut ChaCha8Rng, sigma: f64, bimodal: bool) -> usize {
    let n = 2000;
    let b = (1.0 - sigma * sigma).sqrt();
    let mut correct = 0;
    for _ in 0..100 {
        let draw = |rng: &mut ChaCha8Rng| {
            if bimodal {
                if rng.random_bool(0.5) { 0.1 } else { 0.9 }
            } else {
                rng.random_range(0.02..0.98)
            }
        };
        let th: Vec<[f64; 2]> = (0..n).map(|_| [draw(rng), draw(rng)]).collect();
        let mut cells = Vec::new();
        for (i, t) in th.iter().enumerate() {
            let z1: f64 = rng.sample(StandardNormal);
            let e: f64 = rng.sample(StandardNormal);
            let z2 = sigma * z1 + b * e;
            if z1 <= normal_quantile(t[0]) {
                cells.push((i, 0));
            }
            if z2 <= normal_quantile(t[1]) {
                cells.push((i, 1));
            }
        }
        let ds = BinaryDataset::from_cells((0..n).map(|i| i.to_string()).collect(), vec!["a".into(), "b".into()], cells).unwrap();
        let theta = ThetaMatrix::from_fn(n, 2, |i, j| th[i][j]).unwrap();
        let psi = pairwise_psi(&standardize(&ds, &theta).unwrap(), 0, 1);
        if psi.signum() == sigma.signum() {
            correct += 1;
        }
    }
    correct
}

#[test]
fn criterion_5_sign_consistency() {
    let mut rng = ChaCha8Rng::seed_from_u64(51);
    let mut counts = Vec::new();
    for &bimodal in &[false, true] {
        for &sigma in &[0.5, -0.5] {
            counts.push((sigma, bimodal, sign_trials(&mut rng, sigma, bimodal)));
        }
    }
    let pass = counts.iter().all(|c| c.2 >= 99);
    let detail = counts
        .iter()
        .map(|(s, b, c)| format!("sigma={s} {}={c}/100", if *b { "bimodal" } else { "uniform" }))
        .collect::<Vec<_>>()
        .join(" ");
    verdict("5 (sign of psi follows latent correlation)", pass, detail);
}

#[test]
fn criterion_6_estimation_fidelity() {
    let spec = SimulationSpec {
        n: 500,
        d: 50,
        m: 0,
        rho: 0.0,
        tau_mode: TauMode::RandomExpo1,
        alpha_range: (0.05, 0.5),
        rng_seed: 61,
    };
    let mut rng = spec.rng(0, 0);
    let z = gen_latent(&spec, &mut rng);
    let th = gen_thresholds(&spec, &mut rng).unwrap();
    let ds = threshold_data(&z, &th.theta).unwrap();
    let (kept, idx, _) = ds.filter_degenerate_indexed();
    let fit = fit_empirical::<f64>(&kept, &FitOptions::default()).unwrap();
    let mut est = Vec::new();
    let mut truth = Vec::new();
    for (jj, &j) in idx.iter().enumerate() {
        for i in 0..kept.n() {
            est.push(fit.theta(i, jj));
            truth.push(th.theta.get(i, j));
        }
    }
    let r = pearson(&est, &truth);

    let (zeta, beta, a) = (3.0f64, 5.0f64, 0.7f64);
    let prior = GammaPrior::new(zeta, beta).unwrap();
    let post = posterior_mean_tau_gamma(&[false], &[a], &prior).unwrap();
    let conj_err = (post - zeta / (beta + a)).abs();

    let (zeta, beta, aj, ak) = (4.0f64, 10.0f64, 0.5, 0.8);
    let ln_norm = zeta * beta.ln() - ln_gamma_int(zeta);
    let mgf = integrate_half_line(
        |t: f64| if t > 0.0 { (3.0 * (aj + ak) * t + ln_norm + (zeta - 1.0) * t.ln() - beta * t).exp() } else { 0.0 },
        1e-14,
        1e-12,
    )
    .unwrap()
    .value;
    let mgf_err = (mgf - (1.0 - 3.0 * (aj + ak) / beta).powf(-zeta)).abs();

    let pass = r > 0.9 && fit.converged && fit.constraint_residual < 1e-6 && conj_err < 1e-6 && mgf_err < 1e-6;
    verdict(
        "6 (estimation fidelity and prior identities)",
        pass,
        format!(
            "r={r:.4} converged={} residual={:.2e} conjugacy_err={conj_err:.1e} mgf_err={mgf_err:.1e}",
            fit.converged, fit.constraint_residual
        ),
    );
}

// ln Gamma for integer shapes, enough for the identity check above.
fn ln_gamma_int(z: f64) -> f64 {
    assert!(z.fract() == 0.0 && z >= 1.0);
    (1..z as u64).map(|k| (k as f64).ln()).sum()
}

fn brute_force_by(p: &[f64], q: f64) -> Vec<usize> {
    let d = p.len();
    let c: f64 = (1..=d).map(|i| 1.0 / i as f64).sum();
    let mut out = BTreeSet::new();
    for mask in 1u32..(1 << d) {
        let members: Vec<usize> = (0..d).filter(|&i| mask & (1 << i) != 0).collect();
        let worst = members.iter().map(|&i| p[i]).fold(0.0, f64::max);
        if worst <= members.len() as f64 * q / (d as f64 * c) {
            out.extend(members);
        }
    }
    out.into_iter().collect()
}

#[test]
fn criterion_7_oracle_equivalence() {
    let mut rng = ChaCha8Rng::seed_from_u64(71);
    let mut by_ok = 0;
    for _ in 0..1000 {
        let d = rng.random_range(1..=10);
        let p: Vec<f64> = (0..d).map(|_| if rng.random_bool(0.4) { rng.random_range(0.0..0.02) } else { rng.random() }).collect();
        if by_reject(&p, 0.05).unwrap() == brute_force_by(&p, 0.05) {
            by_ok += 1;
        }
    }

    let mut worst: f64 = 0.0;
    for _ in 0..50 {
        let (n, d) = (20, 15);
        let rows: Vec<Vec<u8>> = (0..n).map(|_| (0..d).map(|_| rng.random_bool(0.4) as u8).collect()).collect();
        let ds = BinaryDataset::from_dense(&rows).unwrap();
        let theta = ThetaMatrix::from_fn(n, d, |_, _| rng.random_range(0.05..0.95)).unwrap();
        let u = standardize(&ds, &theta).unwrap();
        let set: Vec<usize> = (0..rng.random_range(2..8)).collect();
        let stats = sweep(&u, &set).unwrap();
        for j in 0..d {
            let rest: Vec<usize> = set.iter().copied().filter(|&k| k != j).collect();
            let uu = |i: usize, k: usize| {
                let t = theta.get(i, k);
                (rows[i][k] as f64 - t) / (t * (1.0 - t)).sqrt()
            };
            let (mut psi, mut var) = (0.0, 0.0);
            for i in 0..n {
                let ubar = rest.iter().map(|&k| uu(i, k)).sum::<f64>() / rest.len() as f64;
                psi += uu(i, j) * ubar;
                var += (uu(i, j) * ubar).powi(2);
            }
            let s = stats[j].unwrap();
            worst = worst.max((s.psi - psi / n as f64).abs()).max((s.sigma - (var / n as f64).sqrt()).abs());
        }
    }

    let csv = BinaryDataset::load_dense_csv(fixture("figure1.csv"), None, None).unwrap();
    let tx = BinaryDataset::load_transactions(fixture("figure1.txt")).unwrap();
    let formats_equal = csv.to_dense() == tx.to_dense() && csv.col_labels() == tx.col_labels();

    verdict(
        "7 (oracle equivalence suites)",
        by_ok == 1000 && worst <= 1e-12 && formats_equal,
        format!("BY {by_ok}/1000, max |psi,sigma - naive| = {worst:.1e}, csv==transactions {formats_equal}"),
    );
}

fn lamb_output(args: &[&str], threads: &str) -> Vec<u8> {
    let out = Command::new(env!("CARGO_BIN_EXE_lamb"))
        .env_remove("LAMB_THREADS")
        .arg("--threads")
        .arg(threads)
        .args(args)
        .arg("--stdout")
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    out.stdout
}

#[test]
fn criterion_8_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let study = dir.path().join("study.txt");
    std::fs::write(&study, "n = 60\nd = 120\nm = 15\nrho = 0.0, 0.8\ntau_mode = random, fixed\nreps = 2\nrng_seed = 8\n").unwrap();
    let planted = dir.path().join("planted.csv");
    let spec = SimulationSpec { n: 80, d: 150, m: 12, rho: 0.8, tau_mode: TauMode::RandomExpo1, alpha_range: (0.05, 0.5), rng_seed: 3 };
    std::fs::write(&planted, lamb_core::simlab::simulate_dataset(&spec, 0, 0).unwrap().to_csv()).unwrap();
    let fit = dir.path().join("fit.json");
    let p = planted.to_str().unwrap();
    let fit_out = lamb_output(&["estimate", "--input", p, "--format", "csv"], "1");
    std::fs::write(&fit, &fit_out).unwrap();
    let commands: Vec<Vec<&str>> = vec![
        vec!["estimate", "--input", p, "--format", "csv"],
        vec!["mine", "--input", p, "--format", "csv"],
        vec!["mine", "--input", p, "--format", "csv", "--fit", fit.to_str().unwrap(), "--output-format", "table"],
        vec!["neighborhood", "--input", p, "--format", "csv", "--target", "V1", "--target", "V40,V41"],
        vec!["simulate", "--config", study.to_str().unwrap()],
        vec!["convert", "--input", p, "--format", "csv", "--to", "triplets"],
    ];
    let mut failures = Vec::new();
    for c in &commands {
        let one = lamb_output(c, "1");
        if one != lamb_output(c, "1") {
            failures.push(format!("{} not reproducible at 1 thread", c[0]));
        }
        for t in ["2", "4", "8"] {
            if one != lamb_output(c, t) {
                failures.push(format!("{} differs at {t} threads", c[0]));
            }
        }
    }
    verdict(
        "8 (CLI determinism across runs and thread counts)",
        failures.is_empty(),
        if failures.is_empty() { format!("{} commands identical at 1/2/4/8 threads", commands.len()) } else { failures.join("; ") },
    );
}
