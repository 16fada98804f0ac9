//! One PASS/FAIL line per acceptance criterion.

use std::path::Path;
use std::process::Command;
use std::time::Instant;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use clogsa_core::clogsim::{self, SimConfig};
use clogsa_core::dataio::{self, TrajectoryDataset};
use clogsa_core::hsic::{self, FilterOptions, KernelSpec, PValueMethod};
use clogsa_core::orthopoly::{family_for, legendre_family, MultiIndex, TensorBasis};
use clogsa_core::pce::{self, FitOptions};
use clogsa_core::probmodel::{InputModel, Marginal};
use clogsa_core::quadrature::{integrate_piecewise, QuadOptions};
use clogsa_core::sobol;

const SEED: u64 = 2024;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn uniform_matrix(n: usize, d: usize, lo: f64, hi: f64, seed: u64) -> DMatrix<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    DMatrix::from_fn(n, d, |_, _| lo + (hi - lo) * rng.random::<f64>())
}

fn orthonormality() -> Outcome {
    let start = Instant::now();
    let model = InputModel::preset("sg-clogging-7d").unwrap();
    let opts = QuadOptions { rel_tol: 1e-13, abs_tol: 1e-14, ..Default::default() };
    let mut worst: f64 = 0.0;
    for input in model.inputs() {
        let m = input.marginal;
        let fam = family_for(&m, 10).unwrap();
        let breaks: Vec<f64> = match m {
            Marginal::Triangular { lower, mode, upper } => vec![lower, mode, upper],
            Marginal::Gaussian { mean, std } => (-8..=8).map(|k| mean + 5.0 * std * k as f64).collect(),
        };
        for j in 0..=10 {
            for k in j..=10 {
                let f = |x: f64| {
                    let v = fam.eval_all(x, 10);
                    v[j] * v[k] * m.pdf(x)
                };
                let got = integrate_piecewise(f, &breaks, &opts).unwrap().value;
                worst = worst.max((got - if j == k { 1.0 } else { 0.0 }).abs());
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(worst <= 1e-8 && secs < 5.0, format!("max |<phi_j,phi_k> - delta| = {worst:.2e}, {secs:.2} s"))
}

fn ishigami(x: &[f64]) -> f64 {
    x[0].sin() + 7.0 * x[1].sin().powi(2) + 0.1 * x[2].powi(4) * x[0].sin()
}

fn ishigami_oracle(a: f64, b: f64) -> [f64; 5] {
    let pi4 = std::f64::consts::PI.powi(4);
    let pi8 = pi4 * pi4;
    let v1 = 0.5 * (1.0 + b * pi4 / 5.0).powi(2);
    let v2 = a * a / 8.0;
    let v13 = b * b * pi8 * (1.0 / 18.0 - 1.0 / 50.0);
    let v = v1 + v2 + v13;
    [v1 / v, v2 / v, 0.0, (v1 + v13) / v, v13 / v]
}

fn ishigami_sobol() -> Outcome {
    let start = Instant::now();
    let pi = std::f64::consts::PI;
    let x = uniform_matrix(500, 3, -pi, pi, SEED);
    let y = DMatrix::from_fn(500, 1, |r, _| ishigami(&[x[(r, 0)], x[(r, 1)], x[(r, 2)]]));
    let ds = TrajectoryDataset::new(vec!["x1".into(), "x2".into(), "x3".into()], vec![0.0], x, y, None).unwrap();
    let fams = (0..3).map(|_| legendre_family(9, -pi, pi)).collect();
    let (s, _) = pce::fit_with_families(&ds, fams, "ishigami", &FitOptions { p: 9, q: 1.0, ..Default::default() }).unwrap();
    let got = [
        sobol::first_order(&s, 0, 0).unwrap(),
        sobol::first_order(&s, 1, 0).unwrap(),
        sobol::first_order(&s, 2, 0).unwrap(),
        sobol::total_order(&s, 0, 0).unwrap(),
        sobol::total_order(&s, 2, 0).unwrap(),
    ];
    let want = ishigami_oracle(7.0, 0.1);
    let err = got.iter().zip(&want).map(|(g, w)| (g - w).abs()).fold(0.0, f64::max);
    let secs = start.elapsed().as_secs_f64();
    outcome(
        err <= 0.02 && secs < 30.0,
        format!(
            "S1={:.4} S2={:.4} S3={:.4} S1T={:.4} S3T={:.4}; max error {err:.4}, {secs:.2} s",
            got[0], got[1], got[2], got[3], got[4]
        ),
    )
}

fn exact_recovery() -> Outcome {
    let model = InputModel::preset("sg-clogging-7d").unwrap();
    let fams: Vec<_> = model.inputs().iter().map(|i| family_for(&i.marginal, 3).unwrap()).collect();
    let truth: Vec<(MultiIndex, f64)> = vec![
        (MultiIndex(vec![0; 7]), 2.5),
        (MultiIndex(vec![1, 0, 0, 0, 0, 0, 0]), -1.25),
        (MultiIndex(vec![0, 0, 0, 0, 2, 0, 0]), 0.8),
        (MultiIndex(vec![0, 0, 1, 0, 0, 0, 1]), 0.35),
        (MultiIndex(vec![0, 0, 0, 3, 0, 0, 0]), -0.6),
    ];
    let tb = TensorBasis::new(fams.clone(), truth.iter().map(|t| t.0.clone()).collect(), 3, 1.0).unwrap();
    let x = model.sample(300, SEED);
    let phi = tb.design_matrix(&x).unwrap();
    let coef = nalgebra::DVector::from_iterator(5, truth.iter().map(|t| t.1));
    let y = phi * coef;
    let ds = TrajectoryDataset::new(model.names(), vec![0.0], x, DMatrix::from_column_slice(300, 1, y.as_slice()), None).unwrap();
    let (s, _) = pce::fit_with_families(&ds, fams, &model.fingerprint(), &FitOptions { p: 3, q: 1.0, ..Default::default() }).unwrap();
    let mut err: f64 = 0.0;
    for (j, a) in s.basis.indices.iter().enumerate() {
        let want = truth.iter().find(|t| &t.0 == a).map_or(0.0, |t| t.1);
        err = err.max((s.coefficients[(0, j)] - want).abs());
    }
    for t in &truth {
        if !s.basis.indices.contains(&t.0) {
            err = f64::INFINITY;
        }
    }
    outcome(err <= 1e-8, format!("max coefficient error {err:.2e} over {} selected terms", s.basis.indices.len()))
}

fn brute_hsic(x: &[f64], y: &[f64], hx: f64, hy: f64) -> f64 {
    let n = x.len();
    let k = |a: f64, b: f64, h: f64| (-(a - b) * (a - b) / (2.0 * h * h)).exp();
    let nf = n as f64;
    let (mut t1, mut sk, mut sl, mut t3) = (0.0, 0.0, 0.0, 0.0);
    for i in 0..n {
        let (mut rk, mut rl) = (0.0, 0.0);
        for j in 0..n {
            let (kij, lij) = (k(x[i], x[j], hx), k(y[i], y[j], hy));
            t1 += kij * lij;
            sk += kij;
            sl += lij;
            rk += kij;
            rl += lij;
        }
        t3 += rk * rl;
    }
    t1 / (nf * nf) + sk * sl / nf.powi(4) - 2.0 * t3 / nf.powi(3)
}

fn hsic_equivalence() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let mut worst: f64 = 0.0;
    for _ in 0..50 {
        let n = rng.random_range(2..=50);
        let x: Vec<f64> = (0..n).map(|_| rng.random_range(-3.0..3.0)).collect();
        let y: Vec<f64> = x.iter().map(|v| v * v + rng.random_range(-1.0..1.0)).collect();
        let (hx, hy) = (rng.random_range(0.2..2.0), rng.random_range(0.2..2.0));
        let v = hsic::hsic_v(&x, &y, &KernelSpec::fixed(hx), &KernelSpec::fixed(hy)).unwrap();
        worst = worst.max((v - brute_hsic(&x, &y, hx, hy)).abs());
    }
    outcome(worst <= 1e-12, format!("max |trace - double sum| = {worst:.2e} on 50 cases"))
}

fn ks_uniform(p: &mut [f64]) -> f64 {
    p.sort_by(f64::total_cmp);
    let n = p.len() as f64;
    p.iter()
        .enumerate()
        .map(|(i, &v)| ((i + 1) as f64 / n - v).abs().max((v - i as f64 / n).abs()))
        .fold(0.0, f64::max)
}

fn pvalue_calibration() -> Outcome {
    let kx = KernelSpec::median();
    let mut p: Vec<f64> = (0..200u64)
        .map(|s| {
            let mut rng = ChaCha8Rng::seed_from_u64(SEED + 1000 + s);
            let x: Vec<f64> = (0..500).map(|_| rng.random::<f64>()).collect();
            let y: Vec<f64> = (0..500).map(|_| rng.random::<f64>()).collect();
            hsic::pvalue(&x, &y, &kx, &kx, PValueMethod::Permutation(100), s).unwrap()
        })
        .collect();
    let ks = ks_uniform(&mut p);
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let x: Vec<f64> = (0..100).map(|_| rng.random::<f64>()).collect();
    let pa = hsic::pvalue(&x, &x, &kx, &kx, PValueMethod::Asymptotic, 0).unwrap();
    let pp = hsic::pvalue(&x, &x, &kx, &kx, PValueMethod::Permutation(500), SEED).unwrap();
    outcome(
        ks <= 0.1 && pa <= 0.01 && pp <= 0.01,
        format!("KS = {ks:.3} under independence; y = x gives asymptotic {pa:.2e}, permutation {pp:.2e}"),
    )
}

fn target_conditional() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let x: Vec<f64> = (0..200).map(|_| rng.random::<f64>()).collect();
    let y: Vec<f64> = x.iter().map(|v| 3.0 * v).collect();
    let med = KernelSpec::median();
    let unreachable = FilterOptions { bound: 1e3, method: PValueMethod::Asymptotic, ..Default::default() };
    let t = hsic::t_hsic(&x, &y, &med, &med, &unreachable).unwrap().raw;

    let k = hsic::gram(&x, &KernelSpec::fixed(0.3)).unwrap();
    let l = hsic::gram(&y, &KernelSpec::fixed(0.8)).unwrap();
    let w = vec![1.0 / 200.0; 200];
    let uni = (hsic::c_hsic_weighted(&k, &l, &w) - hsic::hsic_from_grams(&k, &l)).abs();

    // x1 alone decides whether the critical region is reached; inside it the level is set by x2.
    let x1: Vec<f64> = (0..200).map(|_| rng.random::<f64>()).collect();
    let x2: Vec<f64> = (0..200).map(|_| rng.random::<f64>()).collect();
    let bound = 1.0;
    let yp: Vec<f64> = x1.iter().zip(&x2).map(|(a, b)| if *a < 0.5 { *a } else { bound + b }).collect();
    let opts = FilterOptions { bound, method: PValueMethod::Permutation(100), seed: SEED, ..Default::default() };
    let g1 = hsic::r2_hsic(&x1, &yp, &med, &med).unwrap().unwrap();
    let g2 = hsic::r2_hsic(&x2, &yp, &med, &med).unwrap().unwrap();
    let c1 = hsic::c_hsic(&x1, &yp, &med, &med, &opts).unwrap().normalized.unwrap();
    let c2 = hsic::c_hsic(&x2, &yp, &med, &med, &opts).unwrap().normalized.unwrap();
    let flips = g1 > g2 && c2 > c1;
    outcome(
        t <= 1e-10 && uni <= 1e-12 && flips,
        format!(
            "T-HSIC unreachable = {t:.1e}; |C - global| uniform = {uni:.1e}; global x1 {g1:.3} vs x2 {g2:.3}, conditional x1 {c1:.3} vs x2 {c2:.3}"
        ),
    )
}

fn top3(order: &[usize]) -> Vec<usize> {
    let mut t = order[..3].to_vec();
    t.sort_unstable();
    t
}

/// Mean clogging rate (%/yr) over the intervals of steps `a..b` that do not end at a cleaning.
fn mean_rate(ds: &TrajectoryDataset, cfg: &SimConfig, a: usize, b: usize) -> f64 {
    let events: Vec<usize> = cfg.cleanings.iter().map(|c| cfg.snap(c.t)).collect();
    let (mut acc, mut count) = (0.0, 0usize);
    for k in a..b {
        if events.contains(&(k + 1)) {
            continue;
        }
        let dt = ds.times[k + 1] - ds.times[k];
        for r in 0..ds.n() {
            acc += (ds.outputs[(r, k + 1)] - ds.outputs[(r, k)]) / dt;
        }
        count += ds.n();
    }
    acc / count as f64
}

fn end_to_end() -> Outcome {
    let start = Instant::now();
    let model = InputModel::preset("sg-clogging-7d").unwrap();
    let cfg = SimConfig::preset();
    let ds = clogsim::monte_carlo(&model, &cfg, 1000, SEED).unwrap();
    let fit_opts = FitOptions { p: 4, q: 0.5, ..Default::default() };

    let cells = pce::cross_validate(&ds, &model, &[4], &[0.5], &pce::CvOptions { seed: SEED, ..Default::default() });
    let scores: Vec<f64> = cells[0].scores.iter().filter_map(|s| s.as_ref().ok().copied()).collect();
    let q2 = if scores.len() == cells[0].scores.len() {
        scores.iter().sum::<f64>() / scores.len() as f64
    } else {
        f64::NEG_INFINITY
    };
    let a = q2 >= 0.9;

    let (s, _) = pce::fit(&ds, &model, &fit_opts).unwrap();
    let sob = sobol::sobol_timeseries(&s);
    let hs = hsic::hsic_timeseries(&ds, &hsic::TimeSeriesOptions::default());
    let mids = cfg.segment_midpoints();
    let names = &ds.input_names;
    let mut b = true;
    let mut tops = Vec::new();
    for &k in &mids {
        let so = sob.ranking(k).unwrap_or_default();
        let ho = hs.ranking(k);
        let agree = so.len() >= 3 && top3(&so) == top3(&ho);
        b &= agree;
        tops.push(format!(
            "t={}: {}",
            ds.times[k],
            so.iter().take(3).map(|&i| names[i].as_str()).collect::<Vec<_>>().join("/")
        ));
    }

    let defined: Vec<f64> = sob.interaction.iter().flatten().copied().collect();
    let frac = defined.iter().filter(|&&v| v <= 0.1).count() as f64 / defined.len() as f64;
    let c = frac >= 0.9;

    let eps_c = model.index_of("eps_c").unwrap();
    let chi2 = cfg
        .segments
        .iter()
        .position(|s| s.species == clogsim::Species::Chi2 && s.ph == clogsim::Ph::High)
        .unwrap();
    let k2 = mids[chi2];
    let d = sob.ranking(k2).map_or(false, |r| r[..2].contains(&eps_c));

    let chi1 = cfg
        .segments
        .iter()
        .position(|s| s.species == clogsim::Species::Chi1 && s.ph == clogsim::Ph::Low)
        .unwrap();
    let steps = cfg.segment_steps();
    let r1 = mean_rate(&ds, &cfg, steps[chi1].0, steps[chi1].1);
    let r2 = mean_rate(&ds, &cfg, steps[chi2].0, steps[chi2].1);
    let e = r2 < r1;

    let secs = start.elapsed().as_secs_f64();
    let flag = |v: bool| if v { "ok" } else { "FAIL" };
    outcome(
        a && b && c && d && e && secs <= 600.0,
        format!(
            "(a) Q2 mean {q2:.4} {} (b) top-3 agree {} [{}] (c) S*<=0.1 at {:.1}% {} (d) eps_c top-2 at t={} {} (e) rate chi2 {r2:.3} vs chi1-low {r1:.3} %/yr {}; {secs:.1} s",
            flag(a),
            flag(b),
            tops.join("; "),
            100.0 * frac,
            flag(c),
            ds.times[k2],
            flag(d),
            flag(e)
        ),
    )
}

fn simulator_invariants() -> Outcome {
    let model = InputModel::preset("sg-clogging-7d").unwrap();
    let cfg = SimConfig::preset();
    let mut fine = cfg.clone();
    fine.substeps *= 2;
    let x = model.sample(300, SEED);
    let events: Vec<usize> = cfg.cleanings.iter().map(|c| cfg.snap(c.t)).collect();
    let bare = cfg.without_cleanings();
    let (mut bounded, mut monotone, mut exact) = (true, true, true);
    let mut drift: f64 = 0.0;
    for r in 0..x.nrows() {
        let row: Vec<f64> = x.row(r).iter().copied().collect();
        let tr = clogsim::simulate(&row, &cfg).unwrap();
        bounded &= tr.tau_c[0] == 0.0 && tr.tau_c.iter().all(|v| (0.0..=100.0).contains(v));
        for k in 0..tr.tau_c.len() - 1 {
            if !events.contains(&(k + 1)) {
                monotone &= tr.tau_c[k + 1] >= tr.tau_c[k];
            }
        }
        // A single event on a clean trajectory must scale the mass exactly.
        for ev in &cfg.cleanings {
            let mut one = bare.clone();
            one.cleanings = vec![*ev];
            let a = clogsim::simulate(&row, &one).unwrap();
            let b = clogsim::simulate(&row, &bare).unwrap();
            let k = cfg.snap(ev.t);
            exact &= a.m_c[k] == cfg.constants.cleaning_factor(ev.kind) * b.m_c[k];
        }
        let tf = clogsim::simulate(&row, &fine).unwrap();
        for (u, v) in tr.tau_c.iter().zip(&tf.tau_c) {
            drift = drift.max((u - v).abs());
        }
    }
    outcome(
        bounded && monotone && exact && drift < 0.1,
        format!("bounded {bounded}, monotone {monotone}, exact cleaning {exact}, step-halving drift {drift:.2e}"),
    )
}

fn run_cli(args: &[&str]) -> bool {
    Command::new(env!("CARGO_BIN_EXE_clogsa"))
        .args(args)
        .output()
        .map(|o| o.status.success())
        .unwrap_or(false)
}

fn read(p: &Path) -> Vec<u8> {
    std::fs::read(p).unwrap_or_default()
}

fn determinism() -> Outcome {
    let tmp = tempfile::tempdir().unwrap();
    let d = |s: &str| tmp.path().join(s);
    let s = |p: std::path::PathBuf| p.to_string_lossy().into_owned();
    let mut ok = true;
    for run in ["a", "b"] {
        let out = d(run);
        ok &= run_cli(&["simulate", "-n", "200", "--seed", "7", "--out", &s(out.join("sim"))]);
        let data = s(out.join("sim").join("dataset.csv"));
        ok &= run_cli(&["fit", "--dataset", &data, "--out", &s(out.join("fit"))]);
        ok &= run_cli(&["validate", "--dataset", &data, "--seed", "3", "--out", &s(out.join("val"))]);
        ok &= run_cli(&["sobol", "--surrogate", &s(out.join("fit").join("surrogate.json")), "--out", &s(out.join("sob"))]);
        ok &= run_cli(&[
            "hsic", "--dataset", &data, "--variant", "conditional", "--bound", "40", "--pvalue", "perm",
            "--permutations", "100", "--seed", "5", "--out", &s(out.join("hsic")),
        ]);
    }
    let files = [
        "sim/dataset.csv",
        "sim/dataset.provenance.json",
        "fit/surrogate.json",
        "fit/fit_report.csv",
        "val/q2_boxplot.csv",
        "sob/sobol.csv",
        "hsic/hsic.csv",
    ];
    let mut same = true;
    for f in files {
        let (a, b) = (read(&d("a").join(f)), read(&d("b").join(f)));
        same &= !a.is_empty() && a == b;
    }
    let ds = dataio::load_dataset(&d("a").join("sim/dataset.csv")).unwrap();
    let again = d("copy.csv");
    dataio::save_dataset(&ds, &again).unwrap();
    let lossless_ds = read(&again) == read(&d("a").join("sim/dataset.csv"));
    let sur = dataio::load_surrogate(&d("a").join("fit/surrogate.json")).unwrap();
    let lossless_sur = dataio::surrogate_to_json(&sur).into_bytes() == read(&d("a").join("fit/surrogate.json"));
    outcome(
        ok && same && lossless_ds && lossless_sur,
        format!("commands ok {ok}, byte-identical reruns {same}, dataset round trip {lossless_ds}, surrogate round trip {lossless_sur}"),
    )
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 9] = [
        ("orthonormality", orthonormality),
        ("ishigami sobol indices", ishigami_sobol),
        ("sparse pce exact recovery", exact_recovery),
        ("hsic trace vs double sum", hsic_equivalence),
        ("p-value calibration", pvalue_calibration),
        ("target and conditional hsic", target_conditional),
        ("end-to-end clogging scenario", end_to_end),
        ("simulator invariants", simulator_invariants),
        ("determinism and round trips", determinism),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let o = f();
        if !o.pass {
            failed += 1;
        }
        println!("{} {} {name}: {}", if o.pass { "PASS" } else { "FAIL" }, i + 1, o.detail);
    }
    if failed > 0 {
        eprintln!("{failed} criteria failed");
        std::process::exit(1);
    }
}
