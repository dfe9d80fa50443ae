//! Discrete-time verification of the stochastic-calculus identities
//! satisfied by the filter: the Zakai equation for the unnormalized
//! expectation rho_t(f), the Kushner-Stratonovich equation for pi_t(f), the
//! square-integrability estimate behind them, and the innovation martingale
//! M and innovation Brownian motion B.
//!
//! Stochastic integrals are discretized with left-point (Ito) sums on the
//! path grid, pairing both sides of each identity on the same realized path.
//! The testable signature of correctness is the strong order-1/2 decay of
//! the residuals in the step size.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::bridge::{uniform_grid, BridgeSpec, RmbPath, SamplerTag};
use crate::error::{Result, RmbError};
use crate::filter::{log_unnormalized_weights, FilterInput};
use crate::kernels::Kernel;
use crate::statespace::{Prior, State};

/// Which filtering SDE a residual refers to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Equation {
    Zakai,
    KushnerStratonovich,
}

/// Residual statistics across paths for one step size.
#[derive(Clone, Debug, Serialize)]
pub struct ResidualStats {
    pub dt: f64,
    pub rms: f64,
    pub max_abs: f64,
}

/// Residuals across a decreasing list of step sizes, with the estimated
/// convergence order (log-log slope of RMS against dt).
#[derive(Clone, Debug, Serialize)]
pub struct ResidualReport {
    pub equation: Equation,
    pub per_dt: Vec<ResidualStats>,
    pub estimated_order: f64,
    pub paths: usize,
    pub seed: u64,
}

/// Innovation martingale path: M, B, and the posterior score aggregate
/// pi_s(grad ell_s) used per step. M_0 = B_0 = 0 by convention (the
/// constant Z_0 is subtracted).
#[derive(Clone, Debug)]
pub struct InnovationRecord {
    pub grid: Vec<f64>,
    pub m: Vec<DVector<f64>>,
    pub b: Vec<DVector<f64>>,
    pub pi_score: Vec<DVector<f64>>,
}

/// grad ell_s(z) = grad_x log p_{T-s}(Z_s, z), evaluated at x = zs.
pub fn ell_score(kernel: &Kernel, s: f64, zs: &State, z: &State) -> Result<DVector<f64>> {
    let horizon = kernel.horizon;
    if s >= horizon {
        return Err(RmbError::Domain(format!("need s < horizon, got s={s}")));
    }
    kernel.score(horizon - s, zs, z)
}

/// Posterior weights along the path at one grid point (normalized), plus
/// the plain unnormalized weights. t = 0 yields the prior weights and unit
/// density ratios.
fn weights_at(
    kernel: &Kernel,
    prior: &Prior,
    z0: &State,
    t: f64,
    zt: &State,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let input = FilterInput::new(kernel, prior, z0, t, zt)?;
    let logs = log_unnormalized_weights(&input)?;
    let rho: Vec<f64> = logs.iter().map(|l| l.exp()).collect();
    if rho.iter().any(|w| !w.is_finite()) {
        return Err(RmbError::Numeric(format!("rho weight overflow at t={t}")));
    }
    let total: f64 = rho.iter().sum();
    if !(total > 0.0) {
        return Err(RmbError::Numeric(format!("rho weights underflow at t={t}")));
    }
    let pi = rho.iter().map(|w| w / total).collect();
    Ok((rho, pi))
}

/// Pathwise Zakai residual: rho_t(f) - rho_0(f) minus the left-point Euler
/// sum of int rho_s(f grad ell_s)^T {dZ_s - b(Z_s) ds} along the same path.
pub fn zakai_residual<F: Fn(&State) -> f64>(
    path: &RmbPath,
    kernel: &Kernel,
    prior: &Prior,
    f: F,
    z0: &State,
) -> Result<f64> {
    residual_impl(path, kernel, prior, f, z0, Equation::Zakai)
}

/// Pathwise Kushner-Stratonovich residual: pi_t(f) - pi_0(f) minus the
/// left-point Euler sum of the innovation-driven integrand.
pub fn ks_residual<F: Fn(&State) -> f64>(
    path: &RmbPath,
    kernel: &Kernel,
    prior: &Prior,
    f: F,
    z0: &State,
) -> Result<f64> {
    residual_impl(path, kernel, prior, f, z0, Equation::KushnerStratonovich)
}

fn residual_impl<F: Fn(&State) -> f64>(
    path: &RmbPath,
    kernel: &Kernel,
    prior: &Prior,
    f: F,
    z0: &State,
    equation: Equation,
) -> Result<f64> {
    if !kernel.is_diffusion() {
        return Err(RmbError::Unsupported(
            "filtering SDE residuals require a diffusion kernel".into(),
        ));
    }
    let atoms = prior.support();
    let fvals: Vec<f64> = atoms.iter().map(&f).collect();
    if fvals.iter().any(|v| !v.is_finite()) {
        return Err(RmbError::Numeric(
            "payoff non-finite on a prior atom".into(),
        ));
    }
    let n = path.grid.len();
    let dim = kernel.dimension();
    let diffusion = kernel.diffusion_matrix()?;

    let value_at =
        |weights: &[f64]| -> f64 { weights.iter().zip(&fvals).map(|(w, v)| w * v).sum() };

    let (rho0, pi0) = weights_at(kernel, prior, z0, path.grid[0], &path.values[0])?;
    let start = match equation {
        Equation::Zakai => value_at(&rho0),
        Equation::KushnerStratonovich => value_at(&pi0),
    };

    let mut integral = 0.0f64;
    for i in 0..n - 1 {
        let (s, zs) = (path.grid[i], &path.values[i]);
        let dt = path.grid[i + 1] - s;
        let dz = path.values[i + 1].as_point()? - zs.as_point()?;
        let (rho, pi) = weights_at(kernel, prior, z0, s, zs)?;
        let mut w_f_score = DVector::zeros(dim);
        let mut w_score = DVector::zeros(dim);
        let weights = match equation {
            Equation::Zakai => &rho,
            Equation::KushnerStratonovich => &pi,
        };
        for ((atom, w), fv) in atoms.iter().zip(weights).zip(&fvals) {
            let score = ell_score(kernel, s, zs, atom)
                .map_err(|e| RmbError::Numeric(format!("score failure at step {i}: {e}")))?;
            w_f_score += &score * (*w * *fv);
            w_score += &score * *w;
        }
        let drift = kernel.drift(zs)?;
        match equation {
            Equation::Zakai => {
                let compensated = &dz - &drift * dt;
                integral += w_f_score.dot(&compensated);
            }
            Equation::KushnerStratonovich => {
                let pi_f = value_at(&pi);
                let gain = &w_f_score - &w_score * pi_f;
                let innovation = &dz - (&drift + &diffusion * &w_score) * dt;
                integral += gain.dot(&innovation);
            }
        }
    }

    let (w_end_rho, w_end_pi) =
        weights_at(kernel, prior, z0, path.grid[n - 1], &path.values[n - 1])?;
    let end = match equation {
        Equation::Zakai => value_at(&w_end_rho),
        Equation::KushnerStratonovich => value_at(&w_end_pi),
    };
    Ok(end - start - integral)
}

/// Run a residual convergence study: for each step size, simulate fresh
/// exact-bridge RMB paths up to `t_end` and collect residual statistics.
/// Path i uses the rng stream (seed, i), so results are reproducible and
/// independent of the worker count.
#[allow(clippy::too_many_arguments)]
pub fn residual_study<F: Fn(&State) -> f64 + Sync>(
    kernel: &Kernel,
    prior: &Prior,
    z0: &State,
    f: F,
    t_end: f64,
    dts: &[f64],
    n_paths: usize,
    seed: u64,
    equation: Equation,
) -> Result<ResidualReport> {
    for w in dts.windows(2) {
        if !(w[1] < w[0]) {
            return Err(RmbError::Domain(
                "step sizes must be strictly decreasing".into(),
            ));
        }
    }
    let epsilon = 1e-4 * kernel.horizon;
    let spec = BridgeSpec::randomised(kernel.clone(), z0.clone(), prior.clone());
    let mut per_dt = Vec::with_capacity(dts.len());
    for &dt in dts {
        let steps = (t_end / dt).round() as usize;
        let grid = uniform_grid(t_end, steps.max(1));
        let residuals: Vec<f64> = (0..n_paths)
            .into_par_iter()
            .map(|i| {
                let mut rng = ChaCha12Rng::seed_from_u64(seed);
                rng.set_stream(i as u64);
                let path =
                    spec.sample_rmb_path(&grid, epsilon, SamplerTag::ExactBridge, &mut rng, seed)?;
                residual_impl(&path, kernel, prior, &f, z0, equation)
            })
            .collect::<Result<Vec<f64>>>()?;
        let rms = (residuals.iter().map(|r| r * r).sum::<f64>() / n_paths as f64).sqrt();
        let max_abs = residuals.iter().fold(0.0f64, |m, r| m.max(r.abs()));
        per_dt.push(ResidualStats { dt, rms, max_abs });
    }
    let estimated_order = log_log_slope(
        &per_dt.iter().map(|s| s.dt).collect::<Vec<_>>(),
        &per_dt.iter().map(|s| s.rms).collect::<Vec<_>>(),
    );
    Ok(ResidualReport {
        equation,
        per_dt,
        estimated_order,
        paths: n_paths,
        seed,
    })
}

/// Least-squares slope of log y against log x.
pub fn log_log_slope(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let cov: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let var: f64 = lx.iter().map(|a| (a - mx) * (a - mx)).sum();
    cov / var
}

/// Monte Carlo estimate of the square-integrability condition: the average
/// over paths of
/// sum_z f(z) nu(z) / p_T(z0, z) [int_0^t |sigma^T p_{T-s}(Z_s, z)
/// grad ell_s(z)|^2 ds]^{1/2}, with a divergence flag raised when batch
/// means keep growing by more than 10% per doubling.
#[derive(Clone, Debug, Serialize)]
pub struct Condition25Report {
    pub estimate: f64,
    pub batch_means: Vec<f64>,
    pub diverged: bool,
    pub paths: usize,
    pub seed: u64,
}

#[allow(clippy::too_many_arguments)]
pub fn condition_2_5_estimate<F: Fn(&State) -> f64 + Sync>(
    kernel: &Kernel,
    prior: &Prior,
    z0: &State,
    t: f64,
    f: F,
    n_paths: usize,
    dt: f64,
    seed: u64,
) -> Result<Condition25Report> {
    if !kernel.is_diffusion() {
        return Err(RmbError::Unsupported(
            "condition (2.5) estimate requires a diffusion kernel".into(),
        ));
    }
    let horizon = kernel.horizon;
    let sigma_t = kernel.vol_matrix()?.transpose();
    let steps = (t / dt).round().max(1.0) as usize;
    let grid = uniform_grid(t, steps);
    let epsilon = 1e-4 * horizon;
    let spec = BridgeSpec::randomised(kernel.clone(), z0.clone(), prior.clone());
    let contributions: Vec<f64> = (0..n_paths)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha12Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            let path =
                spec.sample_rmb_path(&grid, epsilon, SamplerTag::ExactBridge, &mut rng, seed)?;
            let mut total = 0.0;
            for (z, nu) in prior.support().iter().zip(prior.weights()) {
                let mut accum = 0.0;
                for j in 0..path.grid.len() - 1 {
                    let (s, zs) = (path.grid[j], &path.values[j]);
                    let step = path.grid[j + 1] - s;
                    let dens = if s == 0.0 {
                        // left endpoint: p_T(z0, z) since Z_0 = z0
                        kernel.density(horizon, zs, z)?
                    } else {
                        kernel.density(horizon - s, zs, z)?
                    };
                    let score = ell_score(kernel, s.max(f64::MIN_POSITIVE), zs, z)?;
                    let v = (&sigma_t * score * dens).norm_squared();
                    accum += v * step;
                }
                let fz = f(z);
                total += fz * nu / kernel.density(horizon, z0, z)? * accum.sqrt();
            }
            Ok(total)
        })
        .collect::<Result<Vec<f64>>>()?;
    // batch means over doubling prefixes
    let mut batch_means = Vec::new();
    let mut size = (n_paths / 8).max(1);
    while size <= n_paths {
        batch_means.push(contributions[..size].iter().sum::<f64>() / size as f64);
        if size == n_paths {
            break;
        }
        size = (size * 2).min(n_paths);
    }
    let mut growths = 0;
    for w in batch_means.windows(2) {
        if w[1] > 1.1 * w[0].abs() {
            growths += 1;
        } else {
            growths = 0;
        }
    }
    Ok(Condition25Report {
        estimate: *batch_means.last().unwrap(),
        batch_means: batch_means.clone(),
        diverged: growths >= 3,
        paths: n_paths,
        seed,
    })
}

/// Left-point Euler evaluation of the innovation martingale
/// M_t = Z_t - Z_0 - int_0^t {b(Z_s) + (sigma sigma^T)(Z_s)
/// pi_s(grad ell_s)} ds and the innovation Brownian motion
/// B_t = int_0^t (sigma sigma^T)^{-1/2}(Z_s) dM_s along the path grid.
pub fn innovation_path(
    path: &RmbPath,
    kernel: &Kernel,
    prior: &Prior,
    z0: &State,
) -> Result<InnovationRecord> {
    if !kernel.is_diffusion() {
        return Err(RmbError::Unsupported(
            "innovation path requires a diffusion kernel".into(),
        ));
    }
    let diffusion = kernel.diffusion_matrix()?;
    let inv_sqrt = inverse_sqrt(&diffusion)?;
    let dim = kernel.dimension();
    let n = path.grid.len();
    let mut m = Vec::with_capacity(n);
    let mut b = Vec::with_capacity(n);
    let mut pi_scores = Vec::with_capacity(n);
    m.push(DVector::zeros(dim));
    b.push(DVector::zeros(dim));
    let z0p = path.values[0].as_point()?.clone();
    let mut drift_integral = DVector::zeros(dim);
    for i in 0..n - 1 {
        let (s, zs) = (path.grid[i], &path.values[i]);
        let dt = path.grid[i + 1] - s;
        let (_, pi) = weights_at(kernel, prior, z0, s, zs)?;
        let mut pi_score = DVector::zeros(dim);
        for (atom, w) in prior.support().iter().zip(&pi) {
            pi_score += ell_score(kernel, s, zs, atom)? * *w;
        }
        let predicted = kernel.drift(zs)? + &diffusion * &pi_score;
        drift_integral += &predicted * dt;
        let m_next = path.values[i + 1].as_point()? - &z0p - &drift_integral;
        let dm = &m_next - m.last().unwrap();
        let b_next = b.last().unwrap() + &inv_sqrt * dm;
        m.push(m_next);
        b.push(b_next);
        pi_scores.push(pi_score);
    }
    // score aggregate at the final grid point, for completeness
    {
        let (s, zs) = (path.grid[n - 1], &path.values[n - 1]);
        let (_, pi) = weights_at(kernel, prior, z0, s, zs)?;
        let mut pi_score = DVector::zeros(dim);
        for (atom, w) in prior.support().iter().zip(&pi) {
            pi_score += ell_score(kernel, s, zs, atom)? * *w;
        }
        pi_scores.push(pi_score);
    }
    Ok(InnovationRecord {
        grid: path.grid.clone(),
        m,
        b,
        pi_score: pi_scores,
    })
}

/// Symmetric positive-definite inverse square root via eigendecomposition.
fn inverse_sqrt(mat: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let eig = mat.clone().symmetric_eigen();
    if eig.eigenvalues.iter().any(|l| *l <= 0.0) {
        return Err(RmbError::Numeric(
            "diffusion matrix is singular; innovation Brownian motion undefined".into(),
        ));
    }
    let mut d = DMatrix::zeros(mat.nrows(), mat.ncols());
    for (i, l) in eig.eigenvalues.iter().enumerate() {
        d[(i, i)] = 1.0 / l.sqrt();
    }
    Ok(&eig.eigenvectors * d * eig.eigenvectors.transpose())
}

/// Martingale test statistics over a path ensemble.
#[derive(Clone, Debug, Serialize)]
pub struct BinStat {
    pub count: usize,
    pub mean: f64,
    pub standard_error: f64,
    pub pass: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct MartingaleStats {
    pub s: f64,
    pub t: f64,
    pub paths: usize,
    pub unconditional: BinStat,
    pub decile_bins: Vec<BinStat>,
    /// ensemble mean of sum (Delta B)^2 over [s, t], and the relative gap
    /// to the time span.
    pub mean_quadratic_variation: f64,
    pub qv_relative_gap: f64,
    pub qv_pass: bool,
    pub all_pass: bool,
}

/// Tower-property test for M: unconditional and Z_s-decile-binned means of
/// M_t - M_s must sit within 4 standard errors of 0, and the quadratic
/// variation of B over [s, t] within 5% of the time span.
pub fn martingale_test(
    paths: &[RmbPath],
    kernel: &Kernel,
    prior: &Prior,
    z0: &State,
    s: f64,
    t: f64,
) -> Result<MartingaleStats> {
    if paths.len() < 1_000 {
        return Err(RmbError::Domain(format!(
            "martingale test needs at least 1000 paths for power, got {}",
            paths.len()
        )));
    }
    if s > t {
        return Err(RmbError::Domain(format!("need s <= t, got s={s}, t={t}")));
    }
    let find = |grid: &[f64], v: f64| -> Result<usize> {
        grid.iter()
            .position(|g| (g - v).abs() < 1e-12)
            .ok_or_else(|| RmbError::Domain(format!("time {v} not on the common path grid")))
    };
    let mut increments = Vec::with_capacity(paths.len());
    let mut zs_values = Vec::with_capacity(paths.len());
    let mut qvs = Vec::with_capacity(paths.len());
    for path in paths {
        let is = find(&path.grid, s)?;
        let it = find(&path.grid, t)?;
        let record = innovation_path(path, kernel, prior, z0)?;
        increments.push(record.m[it][0] - record.m[is][0]);
        zs_values.push(path.values[is].value());
        let mut qv = 0.0;
        for i in is..it {
            qv += (&record.b[i + 1] - &record.b[i]).norm_squared();
        }
        qvs.push(qv);
    }
    let n = paths.len();
    let stat = |vals: &[f64]| -> BinStat {
        let k = vals.len();
        let mean = vals.iter().sum::<f64>() / k as f64;
        let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (k.max(2) - 1) as f64;
        let se = (var / k as f64).sqrt();
        BinStat {
            count: k,
            mean,
            standard_error: se,
            // s == t gives a zero increment with zero spread; that is a pass
            pass: mean.abs() <= 4.0 * se || mean == 0.0,
        }
    };
    let unconditional = stat(&increments);
    // decile bins on Z_s
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| zs_values[a].total_cmp(&zs_values[b]));
    let mut decile_bins = Vec::with_capacity(10);
    for d in 0..10 {
        let lo = d * n / 10;
        let hi = ((d + 1) * n / 10).min(n);
        let vals: Vec<f64> = order[lo..hi].iter().map(|&i| increments[i]).collect();
        decile_bins.push(stat(&vals));
    }
    let mean_qv = qvs.iter().sum::<f64>() / n as f64;
    let span = (t - s) * kernel.dimension() as f64;
    let qv_gap = if span > 0.0 {
        (mean_qv - span).abs() / span
    } else {
        mean_qv.abs()
    };
    let qv_pass = qv_gap <= 0.05;
    let all_pass = unconditional.pass && decile_bins.iter().all(|b| b.pass) && qv_pass;
    Ok(MartingaleStats {
        s,
        t,
        paths: n,
        unconditional,
        decile_bins,
        mean_quadratic_variation: mean_qv,
        qv_relative_gap: qv_gap,
        qv_pass,
        all_pass,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use nalgebra::DMatrix;

    fn std_brownian(horizon: f64) -> Kernel {
        Kernel::brownian(
            DVector::from_column_slice(&[0.0]),
            DMatrix::from_element(1, 1, 1.0),
            horizon,
            vec![(-10.0, 10.0)],
        )
        .unwrap()
    }

    fn two_point_prior() -> Prior {
        Prior::atomic(
            vec![State::scalar(-1.0), State::scalar(1.0)],
            vec![1.0, 1.0],
        )
        .unwrap()
    }

    fn sample_path(kernel: &Kernel, prior: &Prior, t_end: f64, steps: usize, seed: u64) -> RmbPath {
        let spec = BridgeSpec::randomised(kernel.clone(), State::scalar(0.0), prior.clone());
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        spec.sample_rmb_path(
            &uniform_grid(t_end, steps),
            1e-4,
            SamplerTag::ExactBridge,
            &mut rng,
            seed,
        )
        .unwrap()
    }

    #[test]
    fn ell_score_examples() {
        let k = std_brownian(1.0);
        let g = ell_score(&k, 0.0, &State::scalar(0.0), &State::scalar(0.0)).unwrap();
        assert_abs_diff_eq!(g[0], 0.0, epsilon = 1e-14);
        let g = ell_score(&k, 0.5, &State::scalar(0.0), &State::scalar(1.0)).unwrap();
        assert_abs_diff_eq!(g[0], 2.0, epsilon = 1e-14);
    }

    #[test]
    fn ell_score_matches_finite_difference_for_ou() {
        let k = Kernel::ornstein_uhlenbeck(0.9, 0.1, 0.7, 1.0, (-10.0, 10.0)).unwrap();
        let (s, zs, z) = (0.4, 0.3, -0.2);
        let h = 1e-6;
        let fd = (k
            .log_density(1.0 - s, &State::scalar(zs + h), &State::scalar(z))
            .unwrap()
            - k.log_density(1.0 - s, &State::scalar(zs - h), &State::scalar(z))
                .unwrap())
            / (2.0 * h);
        let g = ell_score(&k, s, &State::scalar(zs), &State::scalar(z)).unwrap();
        assert_abs_diff_eq!(g[0], fd, epsilon = 1e-6);
    }

    #[test]
    fn zakai_residual_linear_in_payoff() {
        let kernel = std_brownian(1.0);
        let prior = two_point_prior();
        let path = sample_path(&kernel, &prior, 0.8, 100, 21);
        let z0 = State::scalar(0.0);
        let r1 = zakai_residual(&path, &kernel, &prior, |_| 1.0, &z0).unwrap();
        let r3 = zakai_residual(&path, &kernel, &prior, |_| 3.0, &z0).unwrap();
        assert_abs_diff_eq!(r3, 3.0 * r1, epsilon = 1e-12);
    }

    #[test]
    fn ks_residual_constant_payoff_vanishes() {
        let kernel = std_brownian(1.0);
        let prior = two_point_prior();
        let path = sample_path(&kernel, &prior, 0.8, 100, 22);
        let r = ks_residual(&path, &kernel, &prior, |_| 1.0, &State::scalar(0.0)).unwrap();
        assert!(r.abs() <= 1e-12, "residual {r}");
    }

    #[test]
    fn ks_residual_degenerate_prior_vanishes() {
        let kernel = std_brownian(1.0);
        let prior = Prior::degenerate(State::scalar(1.0));
        let path = sample_path(&kernel, &prior, 0.8, 100, 23);
        let r = ks_residual(&path, &kernel, &prior, |s| s.value(), &State::scalar(0.0)).unwrap();
        assert!(r.abs() <= 1e-12, "residual {r}");
    }

    #[test]
    fn residuals_shrink_with_dt_for_degenerate_prior() {
        let kernel = std_brownian(1.0);
        let prior = Prior::degenerate(State::scalar(0.8));
        let z0 = State::scalar(0.0);
        let report = residual_study(
            &kernel,
            &prior,
            &z0,
            |s| s.value(),
            0.8,
            &[1e-2, 1e-3],
            200,
            15,
            Equation::Zakai,
        )
        .unwrap();
        assert!(
            report.per_dt[1].rms < report.per_dt[0].rms,
            "{:?}",
            report.per_dt
        );
    }

    #[test]
    fn residual_study_is_seed_deterministic() {
        let kernel = std_brownian(1.0);
        let prior = two_point_prior();
        let z0 = State::scalar(0.0);
        let run = || {
            residual_study(
                &kernel,
                &prior,
                &z0,
                |s| s.value(),
                0.5,
                &[1e-2, 5e-3],
                50,
                99,
                Equation::KushnerStratonovich,
            )
            .unwrap()
        };
        let (a, b) = (run(), run());
        for (x, y) in a.per_dt.iter().zip(&b.per_dt) {
            assert_eq!(x.rms.to_bits(), y.rms.to_bits());
            assert_eq!(x.max_abs.to_bits(), y.max_abs.to_bits());
        }
    }

    #[test]
    fn condition_2_5_zero_payoff() {
        let kernel = std_brownian(1.0);
        let prior = two_point_prior();
        let rep = condition_2_5_estimate(
            &kernel,
            &prior,
            &State::scalar(0.0),
            0.5,
            |_| 0.0,
            64,
            1e-2,
            4,
        )
        .unwrap();
        assert_eq!(rep.estimate, 0.0);
        assert!(!rep.diverged);
    }

    #[test]
    fn condition_2_5_finite_for_degenerate_prior() {
        let kernel = std_brownian(1.0);
        let prior = Prior::degenerate(State::scalar(0.5));
        let rep = condition_2_5_estimate(
            &kernel,
            &prior,
            &State::scalar(0.0),
            0.9,
            |_| 1.0,
            256,
            1e-2,
            4,
        )
        .unwrap();
        assert!(rep.estimate.is_finite() && rep.estimate > 0.0);
        assert!(!rep.diverged, "batch means {:?}", rep.batch_means);
    }

    #[test]
    fn innovation_starts_at_zero_and_b_equals_m_for_unit_vol() {
        let kernel = std_brownian(1.0);
        let prior = two_point_prior();
        let path = sample_path(&kernel, &prior, 0.6, 60, 31);
        let rec = innovation_path(&path, &kernel, &prior, &State::scalar(0.0)).unwrap();
        assert_eq!(rec.m[0][0], 0.0);
        assert_eq!(rec.b[0][0], 0.0);
        for (m, b) in rec.m.iter().zip(&rec.b) {
            assert_abs_diff_eq!(m[0], b[0], epsilon = 1e-14);
        }
    }

    #[test]
    fn innovation_increments_look_brownian_for_fixed_pin() {
        // for a degenerate prior M is a Brownian motion; check Var(M_0.5) ~ 0.5
        let kernel = std_brownian(1.0);
        let prior = Prior::degenerate(State::scalar(1.0));
        let n = 10_000;
        let spec = BridgeSpec::randomised(kernel.clone(), State::scalar(0.0), prior.clone());
        let grid = uniform_grid(0.5, 100);
        let vals: Vec<f64> = (0..n)
            .map(|i| {
                let mut rng = ChaCha12Rng::seed_from_u64(8);
                rng.set_stream(i);
                let p = spec
                    .sample_rmb_path(&grid, 1e-4, SamplerTag::ExactBridge, &mut rng, 8)
                    .unwrap();
                let rec = innovation_path(&p, &kernel, &prior, &State::scalar(0.0)).unwrap();
                rec.m.last().unwrap()[0]
            })
            .collect();
        let mean = vals.iter().sum::<f64>() / n as f64;
        let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
        assert!((var - 0.5).abs() / 0.5 < 0.05, "variance {var}");
    }

    #[test]
    fn martingale_test_rejects_small_ensembles() {
        let kernel = std_brownian(1.0);
        let prior = two_point_prior();
        let paths: Vec<RmbPath> = (0..10)
            .map(|i| sample_path(&kernel, &prior, 0.6, 60, i))
            .collect();
        assert!(martingale_test(&paths, &kernel, &prior, &State::scalar(0.0), 0.2, 0.6).is_err());
    }

    #[test]
    fn martingale_statistic_zero_for_equal_times() {
        let kernel = std_brownian(1.0);
        let prior = two_point_prior();
        let spec = BridgeSpec::randomised(kernel.clone(), State::scalar(0.0), prior.clone());
        let grid = uniform_grid(0.6, 60);
        let paths: Vec<RmbPath> = (0..1_000)
            .map(|i| {
                let mut rng = ChaCha12Rng::seed_from_u64(55);
                rng.set_stream(i);
                spec.sample_rmb_path(&grid, 1e-4, SamplerTag::ExactBridge, &mut rng, 55)
                    .unwrap()
            })
            .collect();
        let stats =
            martingale_test(&paths, &kernel, &prior, &State::scalar(0.0), 0.4, 0.4).unwrap();
        assert_eq!(stats.unconditional.mean, 0.0);
        assert!(stats.unconditional.pass);
    }
}
