//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any
//! failure. The table criteria run every shipped table config once and
//! share the resulting rows.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::Arc;
use std::time::Instant;

use nalgebra::DMatrix;
use sigstop::dual::{build_martingale_basis, solve_lp, LpInstance, LpOptions};
use sigstop::experiments::{run_table, ExperimentConfig, PriceInterval, RunOptions};
use sigstop::features::{observed_state_caps, BasisSpec};
use sigstop::models::rng::PathRng;
use sigstop::models::{
    simulate_fbm, simulate_rbergomi, FbmConfig, RBergomiConfig, VolterraScaling,
};
use sigstop::signature::{signature_stream, uniform_grid, PathGrid};
use sigstop::tensor_algebra::{shuffle, TruncatedTensor, Word};

struct Verdict {
    id: &'static str,
    pass: bool,
    detail: String,
}

fn verdict(id: &'static str, pass: bool, detail: String) -> Verdict {
    let v = Verdict { id, pass, detail };
    println!(
        "{} {}: {}",
        v.id,
        if v.pass { "PASS" } else { "FAIL" },
        v.detail
    );
    v
}

fn repo_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn config_path(name: &str) -> PathBuf {
    repo_root().join("configs").join(name)
}

// ---------------------------------------------------------------- algebra

fn random_word(rng: &mut PathRng, alphabet: usize, max_degree: usize) -> Word {
    let degree = ((rng.uniform() * (max_degree + 1) as f64) as usize).min(max_degree);
    let letters: Vec<u8> = (0..degree)
        .map(|_| 1 + ((rng.uniform() * alphabet as f64) as u8).min(alphabet as u8 - 1))
        .collect();
    Word::new(&letters, alphabet).unwrap()
}

fn a1_shuffle_identity() -> Verdict {
    let start = Instant::now();
    let mut rng = PathRng::new(1001, 0, 0);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let mut inc = [0.0; 3];
        rng.fill_normal(&mut inc);
        let a = TruncatedTensor::exp(&inc, 4);
        let w = random_word(&mut rng, 3, 4);
        let v = random_word(&mut rng, 3, 4 - w.degree());
        let prod = a.get(&w).unwrap() * a.get(&v).unwrap();
        let lin = a.inner(&shuffle(&w, &v)).unwrap();
        worst = worst.max((prod - lin).abs() / (1.0 + prod.abs()));
    }
    let secs = start.elapsed().as_secs_f64();
    verdict(
        "A1",
        worst <= 1e-9 && secs < 5.0,
        format!("max relative violation {worst:.2e} (limit 1e-9), {secs:.2} s (limit 5 s)"),
    )
}

fn sub_path(p: &PathGrid, from: usize, to: usize) -> PathGrid {
    let d = p.dim();
    let t0 = p.times()[from];
    let times: Arc<[f64]> = p.times()[from..=to].iter().map(|t| t - t0).collect();
    PathGrid::new(times, p.values()[from * d..(to + 1) * d].to_vec(), d).unwrap()
}

fn a2_chen() -> Verdict {
    let start = Instant::now();
    let mut rng = PathRng::new(1002, 0, 0);
    let mut worst = 0.0f64;
    for _ in 0..200 {
        let points = 3 + (rng.uniform() * 10.0) as usize;
        let dim = 1 + (rng.uniform() * 3.0) as usize;
        let mut values = vec![0.0; points * dim];
        rng.fill_normal(&mut values);
        let p = PathGrid::new(uniform_grid(1.0, points - 1).unwrap(), values, dim).unwrap();
        let last = points - 1;
        let split = 1 + ((rng.uniform() * (last - 1) as f64) as usize).min(last - 2);
        let whole = signature_stream(&p, 4, None).unwrap().get(last);
        let left = signature_stream(&sub_path(&p, 0, split), 4, None)
            .unwrap()
            .get(split);
        let right = signature_stream(&sub_path(&p, split, last), 4, None)
            .unwrap()
            .get(last - split);
        let joined = left.concat_product(&right).unwrap();
        let scale = whole.coords().iter().fold(0.0f64, |m, x| m.max(x.abs()));
        let diff = whole
            .coords()
            .iter()
            .zip(joined.coords())
            .fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
        worst = worst.max(diff / scale);
    }
    let secs = start.elapsed().as_secs_f64();
    verdict(
        "A2",
        worst <= 1e-12 && secs < 5.0,
        format!("max relative deviation {worst:.2e} (limit 1e-12), {secs:.2} s (limit 5 s)"),
    )
}

fn a3_pure_time() -> Verdict {
    let mut worst = 0.0f64;
    for &horizon in &[0.25, 1.0, 3.0] {
        let times = uniform_grid(horizon, 12).unwrap();
        let p = PathGrid::new(times.clone(), times.to_vec(), 1).unwrap();
        let sig = signature_stream(&p, 6, None).unwrap().get(12);
        let mut fact = 1.0;
        for k in 0..=6usize {
            if k > 0 {
                fact *= k as f64;
            }
            let want = horizon.powi(k as i32) / fact;
            let got = sig.get(&Word::new(&vec![1; k], 1).unwrap()).unwrap();
            worst = worst.max((got - want).abs() / want.max(1.0));
        }
    }
    verdict(
        "A3",
        worst <= 1e-13,
        format!("max error {worst:.2e} (limit 1e-13)"),
    )
}

// ---------------------------------------------------------------- LP oracle

fn lp_value(lp: &LpInstance, lambda: &[f64]) -> f64 {
    let nd = lp.n_dates;
    let mut total = 0.0;
    for i in 0..lp.n_paths {
        let mut best = f64::NEG_INFINITY;
        for n in 0..nd {
            let r = i * nd + n;
            let mut v = lp.payoff[r];
            for (c, l) in lambda.iter().enumerate() {
                v -= l * lp.g[(r, c)];
            }
            best = best.max(v);
        }
        total += best;
    }
    total / lp.n_paths as f64
}

/// Brute-force minimum by grid refinement: each round scans a full grid
/// around the incumbent, doubles the box while the best point sits on its
/// edge and otherwise halves it.
fn grid_oracle(lp: &LpInstance) -> f64 {
    let d = lp.n_cols();
    if d == 0 {
        return lp_value(lp, &[]);
    }
    const SIDE: usize = 201;
    let mut center = vec![0.0; d];
    let mut radius = 64.0;
    let mut best = lp_value(lp, &center);
    let mut rounds = 0;
    while radius > 1e-11 && rounds < 400 {
        rounds += 1;
        let step = 2.0 * radius / (SIDE - 1) as f64;
        let mut arg = center.clone();
        let mut edge = false;
        let mut idx = vec![0usize; d];
        loop {
            let lambda: Vec<f64> = (0..d)
                .map(|c| center[c] - radius + idx[c] as f64 * step)
                .collect();
            let v = lp_value(lp, &lambda);
            if v < best {
                best = v;
                arg = lambda;
                edge = idx.iter().any(|&k| k == 0 || k == SIDE - 1);
            }
            let mut c = 0;
            while c < d {
                idx[c] += 1;
                if idx[c] < SIDE {
                    break;
                }
                idx[c] = 0;
                c += 1;
            }
            if c == d {
                break;
            }
        }
        center = arg;
        radius = if edge { radius * 2.0 } else { radius / 2.0 };
    }
    best
}

/// Exact minimum for at most two columns. The objective is convex,
/// piecewise linear and bounded below, so it attains its minimum at a vertex
/// of the arrangement of breakpoint lines `a_in − g_in·λ = a_im − g_im·λ`
/// (restricted to the span of their normals when that span is deficient).
fn vertex_oracle(lp: &LpInstance) -> f64 {
    let d = lp.n_cols();
    assert!(d <= 2);
    let nd = lp.n_dates;
    let mut planes: Vec<(Vec<f64>, f64)> = Vec::new();
    for i in 0..lp.n_paths {
        for n in 0..nd {
            for m in n + 1..nd {
                let (r, s) = (i * nd + n, i * nd + m);
                let h: Vec<f64> = (0..d).map(|c| lp.g[(r, c)] - lp.g[(s, c)]).collect();
                if h.iter().any(|x| x.abs() > 1e-14) {
                    planes.push((h, lp.payoff[r] - lp.payoff[s]));
                }
            }
        }
    }
    let mut candidates = vec![vec![0.0; d]];
    for (h, c) in &planes {
        let nn: f64 = h.iter().map(|x| x * x).sum();
        candidates.push(h.iter().map(|x| x * c / nn).collect());
    }
    if d == 2 {
        for (p, (h1, c1)) in planes.iter().enumerate() {
            for (h2, c2) in &planes[p + 1..] {
                let det = h1[0] * h2[1] - h1[1] * h2[0];
                if det.abs() > 1e-12 {
                    candidates.push(vec![
                        (c1 * h2[1] - c2 * h1[1]) / det,
                        (h1[0] * c2 - h2[0] * c1) / det,
                    ]);
                }
            }
        }
    }
    candidates
        .iter()
        .map(|l| lp_value(lp, l))
        .fold(f64::INFINITY, f64::min)
}

fn a7_lp_oracle() -> Verdict {
    let start = Instant::now();
    let mut rng = PathRng::new(1007, 0, 0);
    let (mut worst, mut worst_vertex) = (0.0f64, 0.0f64);
    for _ in 0..50 {
        let m = 1 + ((rng.uniform() * 4.0) as usize).min(3);
        let nd = 2 + ((rng.uniform() * 2.0) as usize).min(1);
        let d = ((rng.uniform() * 3.0) as usize).min(2);
        let z: Vec<f64> = (0..m * nd).map(|_| 2.0 * rng.uniform() - 0.5).collect();
        let mut g = DMatrix::zeros(m * nd, d);
        for r in 0..m * nd {
            if r % nd != 0 {
                for c in 0..d {
                    g[(r, c)] = rng.normal();
                }
            }
        }
        let lp = LpInstance::new(m, nd, z, g).unwrap();
        let sol = solve_lp(&lp, &LpOptions::default()).unwrap();
        worst = worst.max((sol.objective - grid_oracle(&lp)).abs());
        worst_vertex = worst_vertex.max((sol.objective - vertex_oracle(&lp)).abs());
    }
    let secs = start.elapsed().as_secs_f64();
    verdict(
        "A7",
        worst <= 1e-6 && worst_vertex <= 1e-6 && secs < 30.0,
        format!(
            "max |solver − grid oracle| {worst:.2e}, max |solver − vertex oracle| {worst_vertex:.2e} (limit 1e-6), {secs:.2} s (limit 30 s)"
        ),
    )
}

// ---------------------------------------------------------------- martingales

fn a10_martingale_means() -> Verdict {
    let exercise = uniform_grid(1.0, 12).unwrap();
    let mut worst = 0.0f64;
    let mut columns = 0;

    let fbm = simulate_fbm(&FbmConfig {
        hurst: 0.1,
        horizon: 1.0,
        steps: 48,
        n_paths: 10_000,
        seed: 1010,
    })
    .unwrap();
    let mut rb = simulate_rbergomi(&RBergomiConfig {
        hurst: 0.07,
        eta: 1.9,
        rho: -0.9,
        xi0: 0.09,
        rate: 0.05,
        spot: 100.0,
        horizon: 1.0,
        steps: 48,
        n_paths: 10_000,
        seed: 1011,
        scaling: VolterraScaling::Standard,
    })
    .unwrap();
    rb.payoff_put(100.0, 0.05);
    let mut rb_basis = BasisSpec {
        sig_level: 3,
        payoff_letter: true,
        poly_degree: 5,
        state_scales: vec![100.0, 0.09],
        state_caps: Vec::new(),
        lift_scale: 100.0,
        payoff_scale: 100.0,
        normalize_radius: None,
    };
    rb_basis.state_caps = observed_state_caps(&rb, &rb_basis, 0.99).unwrap();

    for (batch, basis) in [(&fbm, BasisSpec::signature(4)), (&rb, rb_basis)] {
        let mb = build_martingale_basis(batch, &basis, &exercise).unwrap();
        for s in mb.terminal_summaries() {
            columns += 1;
            let se = s.stderr();
            let z = if se > 0.0 {
                s.mean.abs() / se
            } else if s.mean == 0.0 {
                0.0
            } else {
                f64::INFINITY
            };
            worst = worst.max(z);
        }
    }
    verdict(
        "A10",
        worst <= 4.0,
        format!("{columns} columns on 10^4 paths, max |mean|/stderr {worst:.2} (limit 4)"),
    )
}

// ---------------------------------------------------------------- tables

struct TableRun {
    rows: Vec<PriceInterval>,
    failed: Vec<(String, String)>,
}

fn run_config(name: &str) -> TableRun {
    let cfg = ExperimentConfig::load(&config_path(name)).expect("shipped config loads");
    let opts = RunOptions {
        timings: true,
        parallel_rows: false,
    };
    let start = Instant::now();
    let out = run_table(&cfg, &opts).expect("table runs");
    println!(
        "   ran {name}: {} rows, {} failed, {:.0} s",
        out.rows.len(),
        out.failed.len(),
        start.elapsed().as_secs_f64()
    );
    TableRun {
        rows: out.rows,
        failed: out.failed,
    }
}

fn find<'a>(
    runs: &'a BTreeMap<&str, TableRun>,
    config: &str,
    key: &str,
) -> Option<&'a PriceInterval> {
    runs.get(config)?.rows.iter().find(|r| r.key == key)
}

fn describe(r: &PriceInterval) -> String {
    format!(
        "lower {:.4} (se {:.4}), upper {:.4} (se {:.4}), {:.0} s",
        r.lower, r.lower_se, r.upper, r.upper_se, r.seconds
    )
}

fn a4(runs: &BTreeMap<&str, TableRun>) -> Verdict {
    match find(runs, "fbm_h05_j100.toml", "H=0.5") {
        Some(r) => verdict(
            "A4",
            (-0.02..=0.01).contains(&r.lower)
                && (-0.01..=0.05).contains(&r.upper)
                && r.seconds < 600.0,
            format!(
                "H=0.5, J=100: {} (need lower in [-0.02, 0.01], upper in [-0.01, 0.05], < 600 s)",
                describe(r)
            ),
        ),
        None => verdict("A4", false, "row H=0.5 missing".into()),
    }
}

fn a5(runs: &BTreeMap<&str, TableRun>) -> Verdict {
    match find(runs, "fbm_table_j500.toml", "H=0.1") {
        Some(r) => verdict(
            "A5",
            r.lower >= 0.95 && r.upper <= 1.30 && r.lower <= r.upper && r.seconds < 900.0,
            format!(
                "H=0.1, J=500: {} (need lower >= 0.95, upper <= 1.30, lower <= upper, < 900 s)",
                describe(r)
            ),
        ),
        None => verdict("A5", false, "row H=0.1 missing".into()),
    }
}

fn a6(runs: &BTreeMap<&str, TableRun>) -> Verdict {
    let mut checked = 0;
    let mut bad = Vec::new();
    for (name, run) in runs {
        for (key, reason) in &run.failed {
            bad.push(format!("{name}/{key} failed: {reason}"));
        }
        for r in &run.rows {
            checked += 1;
            if r.lower > r.upper + 2.5 * (r.lower_se + r.upper_se) {
                bad.push(format!("{name}/{}: {}", r.key, describe(r)));
            }
        }
    }
    verdict(
        "A6",
        bad.is_empty() && checked > 0,
        if bad.is_empty() {
            format!("{checked} rows satisfy lower <= upper + 2.5·(lower_se + upper_se)")
        } else {
            format!("violations: {}", bad.join("; "))
        },
    )
}

/// Cox–Ross–Rubinstein Bermudan put with exercise only at `dates` equally
/// spaced dates after 0 (and at 0 itself).
fn binomial_bermudan_put(
    spot: f64,
    strike: f64,
    rate: f64,
    vol: f64,
    horizon: f64,
    steps: usize,
    dates: usize,
) -> f64 {
    assert_eq!(steps % dates, 0);
    let dt = horizon / steps as f64;
    let up = (vol * dt.sqrt()).exp();
    let down = 1.0 / up;
    let p = ((rate * dt).exp() - down) / (up - down);
    let disc = (-rate * dt).exp();
    let price = |n: usize, k: usize| spot * up.powi(n as i32 - 2 * k as i32);
    let mut v: Vec<f64> = (0..=steps)
        .map(|k| (strike - price(steps, k)).max(0.0))
        .collect();
    for n in (0..steps).rev() {
        for k in 0..=n {
            v[k] = disc * (p * v[k] + (1.0 - p) * v[k + 1]);
        }
        v.truncate(n + 1);
        if n % (steps / dates) == 0 {
            for (k, x) in v.iter_mut().enumerate() {
                *x = x.max(strike - price(n, k));
            }
        }
    }
    v[0]
}

fn a8(runs: &BTreeMap<&str, TableRun>) -> Verdict {
    let mut ok = true;
    let mut parts = Vec::new();
    for strike in [80.0, 100.0, 120.0] {
        let oracle = binomial_bermudan_put(100.0, strike, 0.05, 0.3, 1.0, 2004, 12);
        let key = format!("K={strike}");
        match find(runs, "rbergomi_eta0_bs.toml", &key) {
            Some(r) => {
                // Monte Carlo noise is allowed at 1.96 standard errors on
                // each side of the tolerance band.
                let lower_ok = r.lower + 1.96 * r.lower_se >= oracle * (1.0 - 0.015)
                    && r.lower - 1.96 * r.lower_se <= oracle;
                let upper_ok = r.upper - 1.96 * r.upper_se <= oracle * (1.0 + 0.03)
                    && r.upper + 1.96 * r.upper_se >= oracle;
                ok &= lower_ok && upper_ok;
                parts.push(format!(
                    "K={strike}: oracle {oracle:.4}, lower {:.4} ± {:.4} ({:+.2}%), upper {:.4} ± {:.4} ({:+.2}%)",
                    r.lower,
                    r.lower_se,
                    100.0 * (r.lower / oracle - 1.0),
                    r.upper,
                    r.upper_se,
                    100.0 * (r.upper / oracle - 1.0)
                ));
            }
            None => {
                ok = false;
                parts.push(format!("{key} missing"));
            }
        }
    }
    verdict(
        "A8",
        ok,
        format!(
            "{} (need lower within 1.5% below, upper within 3% above)",
            parts.join("; ")
        ),
    )
}

fn a9(runs: &BTreeMap<&str, TableRun>) -> Verdict {
    match find(runs, "rbergomi_table_j48.toml", "K=100") {
        Some(r) => verdict(
            "A9",
            (8.0..=8.9).contains(&r.lower)
                && (8.5..=9.8).contains(&r.upper)
                && r.lower <= r.upper
                && r.seconds < 900.0,
            format!(
                "K=100, J=48: {} (need lower in [8.0, 8.9], upper in [8.5, 9.8], < 900 s)",
                describe(r)
            ),
        ),
        None => verdict("A9", false, "row K=100 missing".into()),
    }
}

fn a11_determinism() -> Verdict {
    let dir = std::env::temp_dir().join(format!("sigstop-acceptance-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let mut ok = true;
    let mut parts = Vec::new();
    for (sub, name) in [
        ("fbm-table", "smoke_fbm.toml"),
        ("rbergomi-table", "smoke_rbergomi.toml"),
    ] {
        let mut outputs = Vec::new();
        for threads in ["1", "3"] {
            let out = dir.join(format!("{name}.{threads}.csv"));
            let status = Command::new(env!("CARGO_BIN_EXE_sigstop"))
                .args(["--threads", threads, sub, "--config"])
                .arg(config_path(name))
                .arg("--out")
                .arg(&out)
                .env("RUST_LOG", "error")
                .status()
                .unwrap();
            ok &= status.success();
            outputs.push(std::fs::read(&out).unwrap_or_default());
        }
        let same = !outputs[0].is_empty() && outputs[0] == outputs[1];
        ok &= same;
        parts.push(format!(
            "{name}: {}",
            if same { "identical" } else { "DIFFERENT" }
        ));
    }
    let _ = std::fs::remove_dir_all(&dir);
    verdict("A11", ok, format!("--threads 1 vs 3: {}", parts.join(", ")))
}

fn main() {
    let mut verdicts = vec![a1_shuffle_identity(), a2_chen(), a3_pure_time()];

    let mut runs = BTreeMap::new();
    // The single-row configs for A5 and A9 reproduce their table rows exactly
    // (row seeds depend on the row value only), so those rows are read from
    // the tables instead of being recomputed.
    for name in [
        "smoke_fbm.toml",
        "smoke_rbergomi.toml",
        "fbm_h05_j100.toml",
        "fbm_table_j100.toml",
        "fbm_table_j500.toml",
        "rbergomi_table_j48.toml",
        "rbergomi_eta0_bs.toml",
    ] {
        runs.insert(name, run_config(name));
    }
    verdicts.push(a4(&runs));
    verdicts.push(a5(&runs));
    verdicts.push(a6(&runs));
    verdicts.push(a7_lp_oracle());
    verdicts.push(a8(&runs));
    verdicts.push(a9(&runs));
    verdicts.push(a10_martingale_means());
    verdicts.push(a11_determinism());

    let failed: Vec<&str> = verdicts.iter().filter(|v| !v.pass).map(|v| v.id).collect();
    if failed.is_empty() {
        println!("acceptance: all {} criteria passed", verdicts.len());
    } else {
        println!(
            "acceptance: {} of {} failed: {}",
            failed.len(),
            verdicts.len(),
            failed.join(", ")
        );
        for v in verdicts.iter().filter(|v| !v.pass) {
            eprintln!("{} failed: {}", v.id, v.detail);
        }
        std::process::exit(1);
    }
}
