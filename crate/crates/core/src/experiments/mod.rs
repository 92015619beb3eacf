//! Experiment drivers behind the `sigstop` binary: configuration, seeding,
//! the two-leg fit/evaluate pipeline per table row, CSV output and the
//! selftest.

mod config;
mod selftest;

use std::fmt::Write as _;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;

use crate::dual::{evaluate_upper, train_dual_dumping, DualCoefficients, LpOptions, DEFAULT_RIDGE};
use crate::error::{Error, Result};
use crate::features::{observed_state_caps, BasisSpec};
use crate::models::rng::mix_seed;
use crate::models::{FbmConfig, FbmModel, PathBatch, RBergomiConfig, RBergomiModel};
use crate::primal::{apply_policy, combine_start, fit_policy, ExerciseData, RegressionPolicy};
use crate::signature::uniform_grid;
use crate::stats::summarize;

pub use config::{
    DualSection, ExperimentConfig, FbmSection, GridSection, ModelKind, ModelSection, OutputSection,
    PrimalSection, RBergomiSection, SeedSection, SignatureSection,
};
pub use selftest::{run_selftest, run_selftest_with, CheckResult, SelftestReport, ShuffleFn};

/// Fixed CSV header; columns are never reordered.
pub const CSV_HEADER: &str =
    "key,lower,lower_se,upper,upper_se,K_p,K_d,J,N,M_train_p,M_eval_p,M_train_d,M_eval_d,seconds";

/// One table row: a lower and an upper bound with their standard errors.
#[derive(Clone, Debug, PartialEq)]
pub struct PriceInterval {
    pub key: String,
    pub lower: f64,
    pub lower_se: f64,
    pub upper: f64,
    pub upper_se: f64,
    pub k_p: usize,
    pub k_d: usize,
    pub steps: usize,
    pub exercise_dates: usize,
    pub m_train_p: usize,
    pub m_eval_p: usize,
    pub m_train_d: usize,
    pub m_eval_d: usize,
    pub seconds: f64,
}

/// Options set on the command line rather than in the config file.
#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    /// Fill the `seconds` column; otherwise it reads `NA` so output is reproducible.
    pub timings: bool,
    /// Run table rows concurrently instead of one after another.
    pub parallel_rows: bool,
}

/// Rows that completed and the keys of rows that failed.
#[derive(Debug, Default)]
pub struct TableOutcome {
    pub rows: Vec<PriceInterval>,
    pub failed: Vec<(String, String)>,
}

impl TableOutcome {
    pub fn all_ok(&self) -> bool {
        self.failed.is_empty()
    }
}

pub fn write_csv<W: Write>(mut w: W, rows: &[PriceInterval], timings: bool) -> Result<()> {
    writeln!(w, "{CSV_HEADER}")?;
    for r in rows {
        let seconds = if timings {
            format!("{:.3}", r.seconds)
        } else {
            "NA".to_string()
        };
        writeln!(
            w,
            "{},{:.8},{:.8},{:.8},{:.8},{},{},{},{},{},{},{},{},{}",
            r.key,
            r.lower,
            r.lower_se,
            r.upper,
            r.upper_se,
            r.k_p,
            r.k_d,
            r.steps,
            r.exercise_dates,
            r.m_train_p,
            r.m_eval_p,
            r.m_train_d,
            r.m_eval_d,
            seconds
        )?;
    }
    Ok(())
}

pub fn csv_string(rows: &[PriceInterval], timings: bool) -> String {
    let mut buf = Vec::new();
    write_csv(&mut buf, rows, timings).expect("writing to memory");
    String::from_utf8(buf).expect("ascii csv")
}

/// Source of path batches for one table row, already carrying payoffs.
trait RowModel: Sync {
    fn simulate(&self, seed: u64, first: usize, count: usize) -> Result<PathBatch>;
}

struct FbmRow {
    model: FbmModel,
}

impl RowModel for FbmRow {
    fn simulate(&self, seed: u64, first: usize, count: usize) -> Result<PathBatch> {
        Ok(self
            .model
            .with_seed(seed, first + count)
            .simulate_range(first, count))
    }
}

struct PutRow {
    model: RBergomiModel,
    strike: f64,
}

impl RowModel for PutRow {
    fn simulate(&self, seed: u64, first: usize, count: usize) -> Result<PathBatch> {
        let mut batch = self
            .model
            .with_seed(seed, first + count)
            .simulate_range(first, count)?;
        batch.payoff_put(self.strike, self.model.config().rate);
        Ok(batch)
    }
}

const LEG_PRIMAL: u64 = 1;
const LEG_DUAL: u64 = 2;

fn leg_seed(base: u64, row_tag: u64, leg: u64) -> u64 {
    mix_seed(mix_seed(base, row_tag), leg)
}

/// Everything a row needs besides its model.
struct RowPlan<'a> {
    cfg: &'a ExperimentConfig,
    key: String,
    tag: u64,
    primal_basis: BasisSpec,
    dual_basis: BasisSpec,
    in_the_money_only: bool,
}

fn file_stem(key: &str) -> String {
    key.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '.' || c == '-' {
                c
            } else {
                '_'
            }
        })
        .collect()
}

fn artifact_path(cfg: &ExperimentConfig, key: &str, suffix: &str) -> Option<PathBuf> {
    let kind = match cfg.model.kind {
        ModelKind::Fbm => "fbm",
        ModelKind::Rbergomi => "rbergomi",
    };
    cfg.output
        .artifacts
        .as_ref()
        .map(|dir| dir.join(format!("{kind}_{}_{suffix}", file_stem(key))))
}

fn run_row(plan: &RowPlan<'_>, model: &dyn RowModel) -> Result<PriceInterval> {
    let cfg = plan.cfg;
    let start = Instant::now();
    let exercise = uniform_grid(cfg.model.horizon, cfg.grid.exercise_dates)?;
    let chunk = cfg.output.eval_chunk;
    if let Some(dir) = &cfg.output.artifacts {
        std::fs::create_dir_all(dir)?;
    }

    let (p, d) = (&cfg.primal, &cfg.dual);
    let train = model.simulate(
        leg_seed(cfg.seeds.train, plan.tag, LEG_PRIMAL),
        0,
        p.paths_train,
    )?;
    if train.resampled() > 0 {
        log::warn!(
            "{}: {} training paths were redrawn",
            plan.key,
            train.resampled()
        );
    }
    if cfg.output.dump_paths {
        if let Some(path) = artifact_path(cfg, &plan.key, "train_paths.bin") {
            train.write_binary(std::io::BufWriter::new(std::fs::File::create(path)?))?;
        }
    }
    let primal_basis = capped(&plan.primal_basis, &train, p.clip_states, p.clip_quantile)?;
    let data = ExerciseData::build(&train, &primal_basis, &exercise)?;
    drop(train);
    let fit = fit_policy(&data, &primal_basis, &exercise, plan.in_the_money_only)?;
    drop(data);
    log::info!(
        "{}: primal policy fitted, in-sample value {:.6}",
        plan.key,
        fit.train_estimate
    );
    if let Some(path) = artifact_path(cfg, &plan.key, "policy.json") {
        fit.policy.save(&path)?;
    }
    let lower = evaluate_lower_chunked(
        &fit.policy,
        model,
        leg_seed(cfg.seeds.eval, plan.tag, LEG_PRIMAL),
        p.paths_eval,
        chunk,
    )?;

    let dual_train = model.simulate(
        leg_seed(cfg.seeds.train, plan.tag, LEG_DUAL),
        0,
        d.paths_train,
    )?;
    let opts = LpOptions {
        method: d.lp_method,
        tol: d.lp_tol,
        max_iter: d.lp_max_iter,
        ridge: DEFAULT_RIDGE,
    };
    let dual_basis = capped(
        &plan.dual_basis,
        &dual_train,
        d.clip_states,
        d.clip_quantile,
    )?;
    let lp_dump = if cfg.output.dump_lp {
        artifact_path(cfg, &plan.key, "lp.txt")
    } else {
        None
    };
    let (coeffs, sol) = train_dual_dumping(
        &dual_train,
        &dual_basis,
        &exercise,
        &opts,
        lp_dump.as_deref(),
    )?;
    drop(dual_train);
    if !sol.converged {
        log::warn!(
            "{}: LP stopped after {} iterations with gap {:.3e}; using the last iterate",
            plan.key,
            sol.iterations,
            sol.gap
        );
    }
    log::info!(
        "{}: dual LP objective {:.6} ({:?})",
        plan.key,
        sol.objective,
        sol.method
    );
    if let Some(path) = artifact_path(cfg, &plan.key, "dual.json") {
        coeffs.save(&path)?;
    }
    let (upper, upper_se) = evaluate_upper_chunked(
        &coeffs,
        model,
        leg_seed(cfg.seeds.eval, plan.tag, LEG_DUAL),
        d.paths_eval,
        chunk,
    )?;

    let row = PriceInterval {
        key: plan.key.clone(),
        lower: lower.0,
        lower_se: lower.1,
        upper,
        upper_se,
        k_p: p.sig_level,
        k_d: d.sig_level,
        steps: cfg.grid.steps,
        exercise_dates: cfg.grid.exercise_dates,
        m_train_p: p.paths_train,
        m_eval_p: p.paths_eval,
        m_train_d: d.paths_train,
        m_eval_d: d.paths_eval,
        seconds: start.elapsed().as_secs_f64(),
    };
    if !(row.lower.is_finite() && row.upper.is_finite()) {
        return Err(Error::Numerical(format!("{}: non-finite bound", plan.key)));
    }
    log::info!(
        "{}: [{:.6} ± {:.6}, {:.6} ± {:.6}] in {:.1} s",
        plan.key,
        row.lower,
        row.lower_se,
        row.upper,
        row.upper_se,
        row.seconds
    );
    Ok(row)
}

/// Freezes an upper quantile of the training states into the basis, so the
/// polynomials of rare large variances cannot dominate the fit.
fn capped(basis: &BasisSpec, train: &PathBatch, clip: bool, quantile: f64) -> Result<BasisSpec> {
    let mut out = basis.clone();
    if clip && basis.poly_degree > 0 {
        out.state_caps = observed_state_caps(train, basis, quantile)?;
    }
    Ok(out)
}

fn evaluate_lower_chunked(
    policy: &RegressionPolicy,
    model: &dyn RowModel,
    seed: u64,
    paths: usize,
    chunk: usize,
) -> Result<(f64, f64)> {
    let mut dates = Vec::with_capacity(paths);
    let mut payoffs = Vec::with_capacity(paths);
    let mut z0 = None;
    let mut first = 0;
    while first < paths {
        let count = chunk.min(paths - first);
        let batch = model.simulate(seed, first, count)?;
        z0.get_or_insert(batch.payoff(0)[0]);
        let (d, z) = apply_policy(policy, &batch)?;
        dates.extend(d);
        payoffs.extend(z);
        first += count;
    }
    let res = combine_start(z0.unwrap_or(0.0), dates, payoffs);
    Ok((res.estimate, res.stderr))
}

fn evaluate_upper_chunked(
    coeffs: &DualCoefficients,
    model: &dyn RowModel,
    seed: u64,
    paths: usize,
    chunk: usize,
) -> Result<(f64, f64)> {
    let mut maxima = Vec::with_capacity(paths);
    let mut first = 0;
    while first < paths {
        let count = chunk.min(paths - first);
        let batch = model.simulate(seed, first, count)?;
        maxima.extend(evaluate_upper(coeffs, &batch)?.pathwise_max);
        first += count;
    }
    let s = summarize(&maxima);
    Ok((s.mean, s.stderr()))
}

fn run_rows<F>(n: usize, parallel: bool, row: F) -> TableOutcome
where
    F: Fn(usize) -> (String, Result<PriceInterval>) + Sync,
{
    let results: Vec<(String, Result<PriceInterval>)> = if parallel {
        (0..n).into_par_iter().map(&row).collect()
    } else {
        (0..n).map(&row).collect()
    };
    let mut out = TableOutcome::default();
    for (key, r) in results {
        match r {
            Ok(row) => out.rows.push(row),
            Err(e) => {
                log::error!("{key}: row skipped: {e}");
                out.failed.push((key, e.to_string()));
            }
        }
    }
    out
}

/// One row per Hurst parameter of `[fbm]`.
pub fn run_fbm_table(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<TableOutcome> {
    if cfg.model.kind != ModelKind::Fbm {
        return Err(Error::Config("fbm-table needs model.kind = \"fbm\"".into()));
    }
    let hursts = &cfg.fbm.as_ref().expect("validated fbm section").hurst;
    let radius = cfg.normalize_radius();
    let basis = |level: usize| BasisSpec {
        normalize_radius: radius,
        ..BasisSpec::signature(level)
    };
    let primal_basis = basis(cfg.primal.sig_level);
    let mut dual_basis = basis(cfg.dual.sig_level);
    dual_basis.payoff_letter = cfg.dual.payoff_letter.unwrap_or(false);
    let in_the_money_only = cfg.primal.in_the_money_only.unwrap_or(false);
    Ok(run_rows(hursts.len(), opts.parallel_rows, |r| {
        let h = hursts[r];
        let key = format!("H={h}");
        let plan = RowPlan {
            cfg,
            key: key.clone(),
            tag: h.to_bits(),
            primal_basis: primal_basis.clone(),
            dual_basis: dual_basis.clone(),
            in_the_money_only,
        };
        let result = FbmModel::new(FbmConfig {
            hurst: h,
            horizon: cfg.model.horizon,
            steps: cfg.grid.steps,
            n_paths: cfg.primal.paths_train,
            seed: cfg.seeds.train,
        })
        .and_then(|model| run_row(&plan, &FbmRow { model }))
        .map(|row| with_timing(row, opts));
        (key, result)
    }))
}

/// One row per strike of `[rbergomi]`, pricing a Bermudan put.
pub fn run_rbergomi_table(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<TableOutcome> {
    if cfg.model.kind != ModelKind::Rbergomi {
        return Err(Error::Config(
            "rbergomi-table needs model.kind = \"rbergomi\"".into(),
        ));
    }
    let rb = cfg.rbergomi.as_ref().expect("validated rbergomi section");
    let model = RBergomiModel::new(RBergomiConfig {
        hurst: rb.hurst,
        eta: rb.eta,
        rho: rb.rho,
        xi0: rb.xi0,
        rate: rb.rate,
        spot: rb.spot,
        horizon: cfg.model.horizon,
        steps: cfg.grid.steps,
        n_paths: cfg.primal.paths_train,
        seed: cfg.seeds.train,
        scaling: rb.volterra_scaling,
    })?;
    // Prices, variances and payoffs enter the features relative to their
    // initial values.
    let scaled = |level: usize, poly: usize, payoff_letter: bool| BasisSpec {
        sig_level: level,
        payoff_letter,
        poly_degree: poly,
        state_scales: if poly > 0 {
            vec![rb.spot, rb.xi0]
        } else {
            Vec::new()
        },
        state_caps: Vec::new(),
        lift_scale: rb.spot,
        payoff_scale: rb.spot,
        normalize_radius: cfg.normalize_radius(),
    };
    let primal_basis = scaled(cfg.primal.sig_level, cfg.primal.poly_degree, false);
    let dual_basis = scaled(
        cfg.dual.sig_level,
        cfg.dual.poly_degree,
        cfg.dual.payoff_letter.unwrap_or(true),
    );
    let in_the_money_only = cfg.primal.in_the_money_only.unwrap_or(true);
    Ok(run_rows(rb.strikes.len(), opts.parallel_rows, |r| {
        let strike = rb.strikes[r];
        let key = format!("K={strike}");
        let plan = RowPlan {
            cfg,
            key: key.clone(),
            tag: strike.to_bits(),
            primal_basis: primal_basis.clone(),
            dual_basis: dual_basis.clone(),
            in_the_money_only,
        };
        let row_model = PutRow {
            model: model.clone(),
            strike,
        };
        let result = run_row(&plan, &row_model).map(|row| with_timing(row, opts));
        (key, result)
    }))
}

fn with_timing(mut row: PriceInterval, opts: &RunOptions) -> PriceInterval {
    if !opts.timings {
        row.seconds = f64::NAN;
    }
    row
}

/// Runs the table selected by the config's model kind.
pub fn run_table(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<TableOutcome> {
    match cfg.model.kind {
        ModelKind::Fbm => run_fbm_table(cfg, opts),
        ModelKind::Rbergomi => run_rbergomi_table(cfg, opts),
    }
}

/// Writes the CSV to `out`, or to `output.csv` of the config, or stdout.
pub fn emit_csv(
    cfg: &ExperimentConfig,
    out: Option<&Path>,
    rows: &[PriceInterval],
    timings: bool,
) -> Result<()> {
    match out.or(cfg.output.csv.as_deref()) {
        Some(path) => {
            if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(dir)?;
            }
            let file = std::fs::File::create(path)?;
            write_csv(std::io::BufWriter::new(file), rows, timings)
        }
        None => write_csv(std::io::stdout().lock(), rows, timings),
    }
}

/// Parses a CSV written by [`write_csv`]; `NA` seconds become NaN.
pub fn parse_csv(text: &str) -> Result<Vec<PriceInterval>> {
    let mut lines = text.lines();
    if lines.next() != Some(CSV_HEADER) {
        return Err(Error::Format("unexpected CSV header".into()));
    }
    lines
        .filter(|l| !l.is_empty())
        .map(|line| {
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 14 {
                return Err(Error::Format(format!("expected 14 fields in {line:?}")));
            }
            let num = |k: usize| {
                f[k].parse::<f64>()
                    .map_err(|_| Error::Format(format!("bad number {:?}", f[k])))
            };
            let int = |k: usize| {
                f[k].parse::<usize>()
                    .map_err(|_| Error::Format(format!("bad count {:?}", f[k])))
            };
            Ok(PriceInterval {
                key: f[0].to_string(),
                lower: num(1)?,
                lower_se: num(2)?,
                upper: num(3)?,
                upper_se: num(4)?,
                k_p: int(5)?,
                k_d: int(6)?,
                steps: int(7)?,
                exercise_dates: int(8)?,
                m_train_p: int(9)?,
                m_eval_p: int(10)?,
                m_train_d: int(11)?,
                m_eval_d: int(12)?,
                seconds: if f[13] == "NA" { f64::NAN } else { num(13)? },
            })
        })
        .collect()
}

/// Human-readable one-line summary of a row.
pub fn describe(row: &PriceInterval) -> String {
    let mut s = String::new();
    let _ = write!(
        s,
        "{}: lower {:.4} (se {:.4}), upper {:.4} (se {:.4})",
        row.key, row.lower, row.lower_se, row.upper, row.upper_se
    );
    s
}
