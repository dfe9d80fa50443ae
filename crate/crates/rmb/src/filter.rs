//! The closed-form Bayesian filter for the hidden pin of an RMB.
//!
//! The unnormalized posterior weights are density ratios
//! p_{T-t}(Z_t, z) / p_T(Z_0, z) against the prior; normalization yields the
//! posterior, which depends on the path only through (t, Z_t, Z_0). The
//! z0-conditioned transition density q of the RMB and its
//! Chapman-Kolmogorov identity live here too, together with the t -> T limit
//! check and the discounted-expectation price.
//!
//! All weight arithmetic is done on log-weights with a max shift before
//! exponentiation; t = 0 is special-cased to return the prior without
//! density evaluation (p_0 is a Dirac).

use crate::error::{Result, RmbError};
use crate::kernels::Kernel;
use crate::quad;
use crate::statespace::{Posterior, Prior, State, StateSpace, WeightedMeasure};

/// Everything the filter consumes: kernel (with horizon), prior, the initial
/// observation Z_0, the current time, and the current observation Z_t.
#[derive(Clone, Debug)]
pub struct FilterInput<'a> {
    pub kernel: &'a Kernel,
    pub prior: &'a Prior,
    pub z0: &'a State,
    pub t: f64,
    pub zt: &'a State,
}

impl<'a> FilterInput<'a> {
    pub fn new(
        kernel: &'a Kernel,
        prior: &'a Prior,
        z0: &'a State,
        t: f64,
        zt: &'a State,
    ) -> Result<Self> {
        if !(0.0..kernel.horizon).contains(&t) {
            return Err(RmbError::Domain(format!(
                "filter time must lie in [0, {}), got {t}",
                kernel.horizon
            )));
        }
        Ok(FilterInput {
            kernel,
            prior,
            z0,
            t,
            zt,
        })
    }
}

/// Log-weights of the unnormalized posterior: for each prior atom z_i,
/// log p_{T-t}(zt, z_i) - log p_T(z0, z_i) + log nu_i. At t = 0 the density
/// ratio is identically 1.
pub fn log_unnormalized_weights(input: &FilterInput) -> Result<Vec<f64>> {
    let horizon = input.kernel.horizon;
    let mut out = Vec::with_capacity(input.prior.len());
    for (z, nu) in input.prior.support().iter().zip(input.prior.weights()) {
        let log_ratio = if input.t == 0.0 {
            0.0
        } else {
            input.kernel.log_density(horizon - input.t, input.zt, z)?
                - input.kernel.log_density(horizon, input.z0, z)?
        };
        out.push(log_ratio + nu.ln());
    }
    Ok(out)
}

/// The unnormalized conditional measure rho_t: weights
/// [p_{T-t}(zt, z_i) / p_T(z0, z_i)] nu_i in plain (non-log) form.
pub fn unnormalized_posterior(input: &FilterInput) -> Result<WeightedMeasure> {
    let logs = log_unnormalized_weights(input)?;
    let weights: Vec<f64> = logs.iter().map(|lw| lw.exp()).collect();
    if weights.iter().any(|w| !w.is_finite()) {
        return Err(RmbError::Numeric(
            "unnormalized posterior weight overflow; use the log-weight interface".into(),
        ));
    }
    WeightedMeasure::new(input.prior.support().to_vec(), weights)
}

/// The posterior pi_t = rho_t / rho_t(1). At t = 0 this is the prior,
/// bitwise.
pub fn posterior(input: &FilterInput) -> Result<Posterior> {
    if input.t == 0.0 {
        return Ok(input.prior.as_posterior());
    }
    let logs = log_unnormalized_weights(input)?;
    Posterior::from_log_weights(input.prior.support().to_vec(), &logs).map_err(|e| match e {
        RmbError::Numeric(m) => RmbError::Numeric(format!(
            "{m}; observation may be incompatible with the truncated prior support"
        )),
        other => other,
    })
}

/// log of the prior-mixed ratio integral
/// int p_{T-t}(y, z) / p_T(z0, z) nu(dz), the h-function of the RMB
/// transition density. At t = 0 it is log 1 = 0 only when y = z0 is
/// understood; callers pass t > 0 or t = 0 with the convention that the
/// ratio is taken literally.
fn log_mix_ratio(kernel: &Kernel, prior: &Prior, z0: &State, t: f64, y: &State) -> Result<f64> {
    if t == 0.0 {
        // integral of nu alone: the ratio p_T(y,.)/p_T(z0,.) with y = z0
        return Ok(0.0);
    }
    let horizon = kernel.horizon;
    let mut logs = Vec::with_capacity(prior.len());
    for (z, nu) in prior.support().iter().zip(prior.weights()) {
        logs.push(
            kernel.log_density(horizon - t, y, z)? - kernel.log_density(horizon, z0, z)? + nu.ln(),
        );
    }
    let v = quad::log_sum_exp(&logs);
    if v == f64::NEG_INFINITY {
        return Err(RmbError::Numeric(
            "prior-mixed ratio integral underflowed to 0".into(),
        ));
    }
    Ok(v)
}

/// The z0-conditioned RMB transition density
/// q(s, x; t, y | z0) = p_{t-s}(x, y) h_t(y) / h_s(x) with
/// h_u(w) = int p_{T-u}(w, z) / p_T(z0, z) nu(dz), for 0 <= s < t < T.
pub fn rmb_transition_density(
    kernel: &Kernel,
    prior: &Prior,
    z0: &State,
    s: f64,
    x: &State,
    t: f64,
    y: &State,
) -> Result<f64> {
    Ok(log_rmb_transition_density(kernel, prior, z0, s, x, t, y)?.exp())
}

pub fn log_rmb_transition_density(
    kernel: &Kernel,
    prior: &Prior,
    z0: &State,
    s: f64,
    x: &State,
    t: f64,
    y: &State,
) -> Result<f64> {
    let horizon = kernel.horizon;
    if !(s >= 0.0 && s < t && t < horizon) {
        return Err(RmbError::Domain(format!(
            "rmb transition needs 0 <= s < t < {horizon}; got s={s}, t={t}"
        )));
    }
    let num = log_mix_ratio(kernel, prior, z0, t, y)?;
    let den = log_mix_ratio(kernel, prior, z0, s, x)?;
    Ok(kernel.log_density(t - s, x, y)? + num - den)
}

/// Absolute residual of the Chapman-Kolmogorov identity for q:
/// |q(s, x; u, z) - int q(s, x; t, y) q(t, y; u, z) m(dy)|.
#[allow(clippy::too_many_arguments)]
pub fn rmb_ck_residual(
    kernel: &Kernel,
    prior: &Prior,
    z0: &State,
    s: f64,
    t: f64,
    u: f64,
    x: &State,
    z: &State,
    quad_nodes: usize,
) -> Result<f64> {
    if !(s > 0.0 && s < t && t < u && u < kernel.horizon) {
        return Err(RmbError::Domain(format!(
            "rmb C-K residual needs 0 < s < t < u < T; got s={s}, t={t}, u={u}"
        )));
    }
    let lhs = rmb_transition_density(kernel, prior, z0, s, x, u, z)?;
    let rhs = match &kernel.space {
        StateSpace::Finite { size } => {
            let mut acc = 0.0;
            for j in 0..*size {
                let y = State::Label(j);
                acc += rmb_transition_density(kernel, prior, z0, s, x, t, &y)?
                    * rmb_transition_density(kernel, prior, z0, t, &y, u, z)?;
            }
            acc
        }
        StateSpace::Continuum { bounds } => {
            if bounds.len() != 1 {
                return Err(RmbError::Unsupported(
                    "quadrature C-K residual implemented for 1-d continuum kernels".into(),
                ));
            }
            let (a, b) = bounds[0];
            quad::integrate(quad_nodes, a, b, |yv| {
                let y = State::scalar(yv);
                rmb_transition_density(kernel, prior, z0, s, x, t, &y).unwrap_or(0.0)
                    * rmb_transition_density(kernel, prior, z0, t, &y, u, z).unwrap_or(0.0)
            })
        }
    };
    Ok((lhs - rhs).abs())
}

/// Total variation between the windowed t -> T limit of P_{s,t}(zs, . | z0)
/// and pi_s. The transition density is integrated over a window of
/// half-width c sqrt(T - t) around each prior atom; the window masses are
/// normalized into an atomic measure and compared with the posterior at
/// (s, zs). As t approaches T the gap vanishes.
#[allow(clippy::too_many_arguments)]
pub fn terminal_limit_gap(
    kernel: &Kernel,
    prior: &Prior,
    z0: &State,
    s: f64,
    zs: &State,
    t: f64,
    window_coeff: f64,
) -> Result<f64> {
    if !prior.is_atomic() {
        return Err(RmbError::Domain(
            "terminal limit gap is evaluated against atomic priors".into(),
        ));
    }
    let horizon = kernel.horizon;
    if !(s < t && t < horizon) {
        return Err(RmbError::Domain(format!(
            "terminal limit gap needs s < t < T; got s={s}, t={t}"
        )));
    }
    if matches!(kernel.space, StateSpace::Finite { .. }) {
        // counting measure: the "window" around an atom is the atom itself
        let mut masses = Vec::with_capacity(prior.len());
        for atom in prior.support() {
            masses.push(rmb_transition_density(kernel, prior, z0, s, zs, t, atom)?);
        }
        let total: f64 = masses.iter().sum();
        let limit = Posterior::from_weights(
            prior.support().to_vec(),
            masses.iter().map(|m| m / total).collect(),
        )?;
        let pi = posterior(&FilterInput::new(kernel, prior, z0, s, zs)?)?;
        return crate::statespace::total_variation(&limit, &pi);
    }
    let w = window_coeff * (horizon - t).sqrt();
    // windows must not overlap
    for i in 0..prior.len() {
        for j in (i + 1)..prior.len() {
            if prior.support()[i].distance(&prior.support()[j]) < 2.0 * w {
                return Err(RmbError::Domain(format!(
                    "atom windows overlap (atoms {i} and {j} closer than 2w = {}); use a smaller window coefficient",
                    2.0 * w
                )));
            }
        }
    }
    let mut masses = Vec::with_capacity(prior.len());
    for atom in prior.support() {
        let a = atom.as_point()?[0];
        let mass = quad::integrate(64, a - w, a + w, |yv| {
            rmb_transition_density(kernel, prior, z0, s, zs, t, &State::scalar(yv)).unwrap_or(0.0)
        });
        masses.push(mass);
    }
    let total: f64 = masses.iter().sum();
    if !(total > 0.0) {
        return Err(RmbError::Numeric(
            "all atom windows carry zero transition mass".into(),
        ));
    }
    let limit = Posterior::from_weights(
        prior.support().to_vec(),
        masses.iter().map(|m| m / total).collect(),
    )?;
    let pi = posterior(&FilterInput::new(kernel, prior, z0, s, zs)?)?;
    crate::statespace::total_variation(&limit, &pi)
}

/// Discounted conditional expectation e^{-r(T-t)} pi_t(f).
pub fn price<F: Fn(&State) -> f64>(input: &FilterInput, payoff: F, rate: f64) -> Result<f64> {
    if rate < 0.0 {
        return Err(RmbError::Domain(format!(
            "discount rate must be >= 0, got {rate}"
        )));
    }
    let pi = posterior(input)?;
    let expect = pi.expectation(payoff)?;
    Ok((-rate * (input.kernel.horizon - input.t)).exp() * expect)
}
