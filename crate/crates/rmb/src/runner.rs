//! Config-driven experiment runner behind the CLI: every verification is a
//! subcommand with deterministic, machine-readable outputs.
//!
//! Path i always draws from the rng stream (seed, i) and results are
//! reduced in path-index order, so outputs are byte-identical across worker
//! counts and repeated runs (JSON reports differ only in `wall_clock_ms`).

use std::path::Path;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;

use crate::bridge::{BridgeSpec, RmbPath, SamplerTag};
use crate::config::ExperimentConfig;
use crate::dynamics::{self, Equation};
use crate::error::{Result, RmbError};
use crate::filter::{self, FilterInput};
use crate::kernels::Kernel;
use crate::oracle;
use crate::report::{self, Check, Report};
use crate::statespace::{Prior, State, StateSpace};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Subcommand {
    Simulate,
    Filter,
    Price,
    VerifyCk,
    VerifyZakai,
    VerifyKs,
    VerifyMartingale,
    VerifyLimits,
    OracleCompare,
    Check25,
}

impl Subcommand {
    pub fn parse(name: &str) -> Option<Self> {
        Some(match name {
            "simulate" => Subcommand::Simulate,
            "filter" => Subcommand::Filter,
            "price" => Subcommand::Price,
            "verify-ck" => Subcommand::VerifyCk,
            "verify-zakai" => Subcommand::VerifyZakai,
            "verify-ks" => Subcommand::VerifyKs,
            "verify-martingale" => Subcommand::VerifyMartingale,
            "verify-limits" => Subcommand::VerifyLimits,
            "oracle-compare" => Subcommand::OracleCompare,
            "check-2-5" => Subcommand::Check25,
            _ => return None,
        })
    }
}

/// Overrides from the command line; `None` keeps the config value.
#[derive(Clone, Copy, Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub threads: Option<usize>,
}

struct Context {
    kernel: Kernel,
    prior: Prior,
    z0: State,
    grid: Vec<f64>,
    epsilon: f64,
    seed: u64,
    hash: String,
    started: Instant,
}

impl Context {
    fn spec(&self) -> BridgeSpec {
        BridgeSpec::randomised(self.kernel.clone(), self.z0.clone(), self.prior.clone())
    }

    fn elapsed_ms(&self) -> u128 {
        self.started.elapsed().as_millis()
    }

    fn csv_meta(&self, schema: &str) -> String {
        format!(
            "# schema={schema} tool_version={} config_hash={} seed={}",
            report::TOOL_VERSION,
            self.hash,
            self.seed
        )
    }

    fn path_rng(&self, index: u64) -> ChaCha12Rng {
        let mut rng = ChaCha12Rng::seed_from_u64(self.seed);
        rng.set_stream(index);
        rng
    }
}

/// Run one subcommand against a parsed config, writing artifacts into
/// `out_dir`. Returns whether every configured tolerance passed.
pub fn run(
    sub: Subcommand,
    config_text: &str,
    out_dir: &Path,
    overrides: Overrides,
) -> Result<bool> {
    let mut config = ExperimentConfig::parse(config_text)?;
    if let Some(seed) = overrides.seed {
        config.experiment.seed = seed;
    }
    if let Some(threads) = overrides.threads {
        config.experiment.threads = threads;
    }
    std::fs::create_dir_all(out_dir)?;
    let kernel = config.build_kernel()?;
    let ctx = Context {
        epsilon: config.epsilon_abs(&kernel),
        prior: config.build_prior()?,
        z0: config.experiment.z0.build()?,
        grid: config.grid.build()?,
        seed: config.experiment.seed,
        hash: report::config_hash(config_text),
        started: Instant::now(),
        kernel,
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.experiment.threads)
        .build()
        .map_err(|e| RmbError::Config(format!("thread pool: {e}")))?;
    pool.install(|| match sub {
        Subcommand::Simulate => run_simulate(&config, &ctx, out_dir),
        Subcommand::Filter => run_filter(&config, &ctx, out_dir),
        Subcommand::Price => run_price(&config, &ctx, out_dir),
        Subcommand::VerifyCk => run_verify_ck(&config, &ctx, out_dir),
        Subcommand::VerifyZakai => run_residuals(&config, &ctx, out_dir, Equation::Zakai),
        Subcommand::VerifyKs => {
            run_residuals(&config, &ctx, out_dir, Equation::KushnerStratonovich)
        }
        Subcommand::VerifyMartingale => run_martingale(&config, &ctx, out_dir),
        Subcommand::VerifyLimits => run_limits(&config, &ctx, out_dir),
        Subcommand::OracleCompare => run_oracle(&config, &ctx, out_dir),
        Subcommand::Check25 => run_check_2_5(&config, &ctx, out_dir),
    })
}

fn require<'a, T>(section: Option<&'a T>, name: &str) -> Result<&'a T> {
    section.ok_or_else(|| RmbError::Config(format!("missing config section [{name}]")))
}

fn sample_paths(ctx: &Context, n: usize, mode: SamplerTag) -> Result<Vec<RmbPath>> {
    let spec = ctx.spec();
    (0..n)
        .into_par_iter()
        .map(|i| {
            let mut rng = ctx.path_rng(i as u64);
            spec.sample_rmb_path(&ctx.grid, ctx.epsilon, mode, &mut rng, ctx.seed)
        })
        .collect()
}

fn write_report<T: Serialize>(
    ctx: &Context,
    out_dir: &Path,
    file: &str,
    checks: Vec<Check>,
    details: T,
) -> Result<bool> {
    let rep = Report::new(&ctx.hash, ctx.seed, ctx.elapsed_ms(), checks, details);
    rep.write_json(&out_dir.join(file))?;
    Ok(rep.passed)
}

fn run_simulate(config: &ExperimentConfig, ctx: &Context, out_dir: &Path) -> Result<bool> {
    let section = require(config.simulate.as_ref(), "simulate")?;
    let paths = sample_paths(ctx, section.paths, section.mode.tag())?;
    report::write_paths_csv(
        &out_dir.join("paths.csv"),
        &ctx.csv_meta("paths-v1"),
        &paths,
    )?;
    Ok(true)
}

fn run_filter(config: &ExperimentConfig, ctx: &Context, out_dir: &Path) -> Result<bool> {
    let section = require(config.filter.as_ref(), "filter")?;
    let path = &sample_paths(ctx, 1, section.mode.tag())?[0];
    let mut rows = Vec::with_capacity(path.grid.len());
    for (t, zt) in path.grid.iter().zip(&path.values) {
        let input = FilterInput::new(&ctx.kernel, &ctx.prior, &ctx.z0, *t, zt)?;
        rows.push((*t, filter::posterior(&input)?));
    }
    report::write_posterior_csv(
        &out_dir.join("posterior.csv"),
        &ctx.csv_meta("posterior-v1"),
        &rows,
    )?;
    Ok(true)
}

fn run_price(config: &ExperimentConfig, ctx: &Context, out_dir: &Path) -> Result<bool> {
    let section = require(config.price.as_ref(), "price")?;
    let path = &sample_paths(ctx, 1, section.mode.tag())?[0];
    let mut rows = Vec::with_capacity(path.grid.len());
    for (t, zt) in path.grid.iter().zip(&path.values) {
        let input = FilterInput::new(&ctx.kernel, &ctx.prior, &ctx.z0, *t, zt)?;
        let price = filter::price(&input, |s| section.payoff.eval(s), config.experiment.rate)?;
        rows.push((*t, price));
    }
    report::write_price_csv(&out_dir.join("price.csv"), &ctx.csv_meta("price-v1"), &rows)?;
    Ok(true)
}

/// Random state for residual sampling: a label for finite chains, a point
/// in the middle fifth of the quadrature box for continuum kernels.
fn random_state(kernel: &Kernel, rng: &mut ChaCha12Rng) -> State {
    use rand::Rng;
    match &kernel.space {
        StateSpace::Finite { size } => State::Label(rng.gen_range(0..*size)),
        StateSpace::Continuum { bounds } => {
            let coords: Vec<f64> = bounds
                .iter()
                .map(|(a, b)| {
                    let mid = 0.5 * (a + b);
                    let half = 0.1 * (b - a);
                    rng.gen_range(mid - half..mid + half)
                })
                .collect();
            State::point(&coords)
        }
    }
}

fn run_verify_ck(config: &ExperimentConfig, ctx: &Context, out_dir: &Path) -> Result<bool> {
    use rand::Rng;
    let section = require(config.verify_ck.as_ref(), "verify-ck")?;
    let horizon = ctx.kernel.horizon;
    let mut rng = ctx.path_rng(0);
    let mut kernel_residuals = Vec::with_capacity(section.samples);
    for _ in 0..section.samples {
        let s = rng.gen_range(0.05 * horizon..0.45 * horizon);
        let t = rng.gen_range(0.05 * horizon..0.45 * horizon);
        let x = random_state(&ctx.kernel, &mut rng);
        let z = random_state(&ctx.kernel, &mut rng);
        kernel_residuals.push(ctx.kernel.ck_residual(s, t, &x, &z, section.quad_nodes)?);
    }
    let mut rmb_residuals = Vec::with_capacity(section.samples);
    for _ in 0..section.samples {
        let s = rng.gen_range(0.05 * horizon..0.25 * horizon);
        let t = s + rng.gen_range(0.1 * horizon..0.3 * horizon);
        let u = (t + rng.gen_range(0.1 * horizon..0.3 * horizon)).min(0.9 * horizon);
        let x = random_state(&ctx.kernel, &mut rng);
        let z = random_state(&ctx.kernel, &mut rng);
        rmb_residuals.push(dynamics_free_rmb_ck(
            ctx,
            s,
            t,
            u,
            &x,
            &z,
            section.quad_nodes,
        )?);
    }
    let max_kernel = kernel_residuals.iter().cloned().fold(0.0f64, f64::max);
    let max_rmb = rmb_residuals.iter().cloned().fold(0.0f64, f64::max);
    let checks = vec![
        Check::upper(
            "kernel_ck_max_residual",
            max_kernel,
            section.kernel_tolerance,
        ),
        Check::upper("rmb_ck_max_residual", max_rmb, section.rmb_tolerance),
    ];
    write_report(
        ctx,
        out_dir,
        "verify-ck.json",
        checks,
        json!({
            "samples": section.samples,
            "quad_nodes": section.quad_nodes,
            "kernel_residuals": kernel_residuals,
            "rmb_residuals": rmb_residuals,
        }),
    )
}

#[allow(clippy::too_many_arguments)]
fn dynamics_free_rmb_ck(
    ctx: &Context,
    s: f64,
    t: f64,
    u: f64,
    x: &State,
    z: &State,
    quad_nodes: usize,
) -> Result<f64> {
    filter::rmb_ck_residual(&ctx.kernel, &ctx.prior, &ctx.z0, s, t, u, x, z, quad_nodes)
}

fn run_residuals(
    config: &ExperimentConfig,
    ctx: &Context,
    out_dir: &Path,
    equation: Equation,
) -> Result<bool> {
    let (section, name) = match equation {
        Equation::Zakai => (
            require(config.verify_zakai.as_ref(), "verify-zakai")?,
            "verify-zakai",
        ),
        Equation::KushnerStratonovich => (
            require(config.verify_ks.as_ref(), "verify-ks")?,
            "verify-ks",
        ),
    };
    let payoff = section.payoff.clone();
    let report_data = dynamics::residual_study(
        &ctx.kernel,
        &ctx.prior,
        &ctx.z0,
        move |s| payoff.eval(s),
        section.t_end,
        &section.dts,
        section.paths,
        ctx.seed,
        equation,
    )?;
    let mut monotone = true;
    for w in report_data.per_dt.windows(2) {
        if !(w[1].rms < w[0].rms) {
            monotone = false;
        }
    }
    let checks = vec![
        Check::boolean("rms_strictly_decreasing", monotone),
        Check::lower(
            "order_at_least",
            report_data.estimated_order,
            section.order_min,
        ),
        Check::upper(
            "order_at_most",
            report_data.estimated_order,
            section.order_max,
        ),
    ];
    write_report(ctx, out_dir, &format!("{name}.json"), checks, report_data)
}

fn run_martingale(config: &ExperimentConfig, ctx: &Context, out_dir: &Path) -> Result<bool> {
    let section = require(config.verify_martingale.as_ref(), "verify-martingale")?;
    let paths = sample_paths(ctx, section.paths, SamplerTag::ExactBridge)?;
    let stats = dynamics::martingale_test(
        &paths,
        &ctx.kernel,
        &ctx.prior,
        &ctx.z0,
        section.s,
        section.t,
    )?;
    let worst_bin = stats
        .decile_bins
        .iter()
        .map(|b| {
            if b.standard_error > 0.0 {
                b.mean.abs() / b.standard_error
            } else {
                0.0
            }
        })
        .fold(0.0f64, f64::max);
    let checks = vec![
        Check::boolean("unconditional_mean_within_4se", stats.unconditional.pass),
        Check::upper("worst_decile_bin_z_score", worst_bin, 4.0),
        Check::upper("qv_relative_gap", stats.qv_relative_gap, 0.05),
    ];
    write_report(ctx, out_dir, "verify-martingale.json", checks, stats)
}

fn run_limits(config: &ExperimentConfig, ctx: &Context, out_dir: &Path) -> Result<bool> {
    let section = require(config.verify_limits.as_ref(), "verify-limits")?;
    let zs = section.zs.build()?;
    let mut gaps = Vec::with_capacity(section.times.len());
    for &t in &section.times {
        gaps.push(filter::terminal_limit_gap(
            &ctx.kernel,
            &ctx.prior,
            &ctx.z0,
            section.s,
            &zs,
            t,
            section.window_coeff,
        )?);
    }
    let mut decreasing = true;
    for w in gaps.windows(2) {
        if !(w[1] < w[0]) {
            decreasing = false;
        }
    }
    let checks = vec![
        Check::boolean("gap_decreasing_in_t", decreasing),
        Check::upper("final_gap", *gaps.last().unwrap(), section.tolerance),
    ];
    write_report(
        ctx,
        out_dir,
        "verify-limits.json",
        checks,
        json!({ "times": section.times, "gaps": gaps, "window_coeff": section.window_coeff }),
    )
}

fn run_oracle(config: &ExperimentConfig, ctx: &Context, out_dir: &Path) -> Result<bool> {
    let section = require(config.oracle_compare.as_ref(), "oracle-compare")?;
    if !ctx.prior.is_atomic() {
        return Err(RmbError::Config(
            "oracle-compare requires an atomic prior".into(),
        ));
    }
    // Telescoping oracle on a freshly simulated skeleton.
    let grid = crate::bridge::uniform_grid(section.t_end, section.observations);
    let spec = ctx.spec();
    let mut rng = ctx.path_rng(0);
    let path = spec.sample_rmb_path(
        &grid,
        ctx.epsilon,
        SamplerTag::ExactBridge,
        &mut rng,
        ctx.seed,
    )?;
    let observations: Vec<(f64, State)> = path
        .grid
        .iter()
        .cloned()
        .zip(path.values.iter().cloned())
        .collect();
    let telescoped = oracle::telescoping_posterior(&ctx.kernel, &ctx.prior, &observations)?;
    let (t_last, z_last) = observations.last().unwrap();
    let closed = filter::posterior(&FilterInput::new(
        &ctx.kernel,
        &ctx.prior,
        &ctx.z0,
        *t_last,
        z_last,
    )?)?;
    let tv_tele = oracle::compare(&telescoped, &closed)?;
    // ABC rejection against the closed form at the configured observation.
    let abc_zt = section.abc_zt.build()?;
    let mut abc_rng = ctx.path_rng(1);
    let (abc, abc_rep) = oracle::abc_posterior(
        &ctx.kernel,
        &ctx.prior,
        &ctx.z0,
        section.abc_t,
        &abc_zt,
        section.abc_window,
        section.abc_paths,
        &mut abc_rng,
    )?;
    let closed_abc = filter::posterior(&FilterInput::new(
        &ctx.kernel,
        &ctx.prior,
        &ctx.z0,
        section.abc_t,
        &abc_zt,
    )?)?;
    let tv_abc = oracle::compare(&abc, &closed_abc)?;
    let checks = vec![
        Check::upper("telescoping_tv", tv_tele, section.telescoping_tolerance),
        Check::upper("abc_tv", tv_abc, section.abc_tolerance),
    ];
    write_report(
        ctx,
        out_dir,
        "oracle-compare.json",
        checks,
        json!({
            "telescoping_tv": tv_tele,
            "abc_tv": tv_abc,
            "abc": abc_rep,
            "observations": section.observations,
        }),
    )
}

fn run_check_2_5(config: &ExperimentConfig, ctx: &Context, out_dir: &Path) -> Result<bool> {
    let section = require(config.check_2_5.as_ref(), "check-2-5")?;
    let payoff = section.payoff.clone();
    let rep = dynamics::condition_2_5_estimate(
        &ctx.kernel,
        &ctx.prior,
        &ctx.z0,
        section.t,
        move |s| payoff.eval(s),
        section.paths,
        section.dt,
        ctx.seed,
    )?;
    let checks = vec![
        Check::boolean("estimate_finite", rep.estimate.is_finite()),
        Check::boolean("not_diverged", !rep.diverged),
    ];
    write_report(ctx, out_dir, "check-2-5.json", checks, rep)
}
