//! Independent brute-force verifiers for the closed-form filter: the
//! full-history Bayes posterior over an observation skeleton, and an
//! ABC-style rejection posterior drawn from the defining construction of
//! the process (pin first, bridge second).
//!
//! The telescoping posterior deliberately multiplies every one-step bridge
//! density in log space, without the algebraic cancellation that collapses
//! the product to the two-point formula. That keeps it numerically
//! independent of the closed-form code path it is checking.

use rand::Rng;
use serde::Serialize;

use crate::bridge::BridgeSpec;
use crate::error::{Result, RmbError};
use crate::kernels::Kernel;
use crate::statespace::{total_variation, Posterior, Prior, State};

/// Full-history Bayes posterior over the prior atoms given an observation
/// skeleton (t_0 = 0, z_0), ..., (t_n, z_n):
/// P(X = x | skeleton) prop to nu(x) prod_i p^{(x,T)}(t_{i-1}, z_{i-1};
/// t_i, z_i).
pub fn telescoping_posterior(
    kernel: &Kernel,
    prior: &Prior,
    observations: &[(f64, State)],
) -> Result<Posterior> {
    if !prior.is_atomic() {
        return Err(RmbError::Domain(
            "telescoping oracle requires an atomic prior".into(),
        ));
    }
    if observations.len() < 2 {
        return Err(RmbError::Domain(
            "telescoping oracle needs the initial point plus at least one observation".into(),
        ));
    }
    if observations[0].0 != 0.0 {
        return Err(RmbError::Domain(
            "first observation must be at t = 0".into(),
        ));
    }
    for w in observations.windows(2) {
        if !(w[1].0 > w[0].0) {
            return Err(RmbError::Domain(
                "observation times must be strictly increasing".into(),
            ));
        }
    }
    if observations.last().unwrap().0 >= kernel.horizon {
        return Err(RmbError::Domain(
            "observations must end before the horizon".into(),
        ));
    }
    let mut log_weights = Vec::with_capacity(prior.len());
    for (atom, nu) in prior.support().iter().zip(prior.weights()) {
        let spec = BridgeSpec::fixed(kernel.clone(), observations[0].1.clone(), atom.clone());
        let mut lw = nu.ln();
        for w in observations.windows(2) {
            let (s, zs) = (&w[0].0, &w[0].1);
            let (t, zt) = (&w[1].0, &w[1].1);
            lw += spec.log_transition_density(*s, zs, *t, zt)?;
        }
        if lw == f64::NEG_INFINITY || lw.is_nan() {
            return Err(RmbError::Numeric(format!(
                "bridge likelihood underflow for atom {atom}"
            )));
        }
        log_weights.push(lw);
    }
    Posterior::from_log_weights(prior.support().to_vec(), &log_weights)
}

/// Result of the rejection posterior, with its acceptance bookkeeping.
#[derive(Clone, Debug, Serialize)]
pub struct AbcReport {
    pub accepted: usize,
    pub simulated: usize,
    pub window: f64,
}

/// Rejection (ABC) posterior: simulate RMB realizations by drawing the pin
/// from the prior and the bridge value at `t` exactly, keep those with
/// |Z_t - zt| <= window, and report the empirical pin distribution.
#[allow(clippy::too_many_arguments)]
pub fn abc_posterior<R: Rng>(
    kernel: &Kernel,
    prior: &Prior,
    z0: &State,
    t: f64,
    zt: &State,
    window: f64,
    n_paths: usize,
    rng: &mut R,
) -> Result<(Posterior, AbcReport)> {
    if !prior.is_atomic() {
        return Err(RmbError::Domain(
            "ABC posterior requires an atomic prior".into(),
        ));
    }
    if !(window > 0.0) {
        return Err(RmbError::Domain(format!(
            "window must be positive, got {window}"
        )));
    }
    if !(t > 0.0 && t < kernel.horizon) {
        return Err(RmbError::Domain(format!(
            "observation time must lie in (0, {}), got {t}",
            kernel.horizon
        )));
    }
    let mut counts = vec![0usize; prior.len()];
    let mut accepted = 0usize;
    for _ in 0..n_paths {
        let pin_idx = sample_index(prior, rng);
        let pin = &prior.support()[pin_idx];
        let spec = BridgeSpec::fixed(kernel.clone(), z0.clone(), pin.clone());
        let value = spec.sample_bridge_step(0.0, z0, t, rng)?;
        if value.distance(zt) <= window {
            counts[pin_idx] += 1;
            accepted += 1;
        }
    }
    if accepted < 100 {
        return Err(RmbError::Numeric(format!(
            "only {accepted} of {n_paths} paths accepted; enlarge the window or the path count"
        )));
    }
    let weights: Vec<f64> = counts.iter().map(|c| *c as f64 / accepted as f64).collect();
    let posterior = Posterior::from_weights(prior.support().to_vec(), weights)?;
    Ok((
        posterior,
        AbcReport {
            accepted,
            simulated: n_paths,
            window,
        },
    ))
}

fn sample_index<R: Rng>(prior: &Prior, rng: &mut R) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (i, w) in prior.weights().iter().enumerate() {
        acc += w;
        if u <= acc {
            return i;
        }
    }
    prior.len() - 1
}

/// Total variation between two posteriors on matched supports.
pub fn compare(a: &Posterior, b: &Posterior) -> Result<f64> {
    total_variation(a, b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bridge::{uniform_grid, SamplerTag};
    use crate::filter::{posterior, FilterInput};
    use approx::assert_abs_diff_eq;
    use nalgebra::{DMatrix, DVector};
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

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

    #[test]
    fn single_observation_matches_closed_form() {
        let kernel = std_brownian(1.0);
        let prior = two_point_prior();
        let z0 = State::scalar(0.0);
        let obs = vec![(0.0, z0.clone()), (0.5, State::scalar(0.3))];
        let tele = telescoping_posterior(&kernel, &prior, &obs).unwrap();
        let closed =
            posterior(&FilterInput::new(&kernel, &prior, &z0, 0.5, &State::scalar(0.3)).unwrap())
                .unwrap();
        assert!(compare(&tele, &closed).unwrap() <= 1e-12);
    }

    #[test]
    fn chain_history_matches_closed_form() {
        let q = DMatrix::from_row_slice(3, 3, &[-2.0, 1.5, 0.5, 0.3, -0.8, 0.5, 1.0, 1.0, -2.0]);
        let kernel = Kernel::finite_chain(q, 1.0).unwrap();
        let prior = Prior::atomic(
            vec![State::Label(0), State::Label(1), State::Label(2)],
            vec![0.2, 0.5, 0.3],
        )
        .unwrap();
        let z0 = State::Label(1);
        let spec = BridgeSpec::randomised(kernel.clone(), z0.clone(), prior.clone());
        let grid = uniform_grid(0.9, 50);
        let mut rng = ChaCha12Rng::seed_from_u64(17);
        let path = spec
            .sample_rmb_path(&grid, 1e-4, SamplerTag::ExactBridge, &mut rng, 17)
            .unwrap();
        let obs: Vec<(f64, State)> = path
            .grid
            .iter()
            .cloned()
            .zip(path.values.iter().cloned())
            .collect();
        let tele = telescoping_posterior(&kernel, &prior, &obs).unwrap();
        let (t_last, z_last) = obs.last().unwrap();
        let closed =
            posterior(&FilterInput::new(&kernel, &prior, &z0, *t_last, z_last).unwrap()).unwrap();
        for (a, b) in tele.weights().iter().zip(closed.weights()) {
            assert!((a - b).abs() / b.max(1e-300) <= 1e-10, "{a} vs {b}");
        }
    }

    #[test]
    fn brownian_history_matches_closed_form() {
        let kernel = std_brownian(1.0);
        let prior = two_point_prior();
        let z0 = State::scalar(0.0);
        let spec = BridgeSpec::randomised(kernel.clone(), z0.clone(), prior.clone());
        let grid = uniform_grid(0.9, 100);
        let mut rng = ChaCha12Rng::seed_from_u64(29);
        let path = spec
            .sample_rmb_path(&grid, 1e-4, SamplerTag::ExactBridge, &mut rng, 29)
            .unwrap();
        let obs: Vec<(f64, State)> = path
            .grid
            .iter()
            .cloned()
            .zip(path.values.iter().cloned())
            .collect();
        let tele = telescoping_posterior(&kernel, &prior, &obs).unwrap();
        let closed = posterior(
            &FilterInput::new(&kernel, &prior, &z0, 0.9, path.values.last().unwrap()).unwrap(),
        )
        .unwrap();
        assert!(compare(&tele, &closed).unwrap() <= 1e-9);
    }

    #[test]
    fn interior_observations_do_not_matter() {
        // thinning the interior of the skeleton leaves the posterior unchanged
        let kernel = std_brownian(1.0);
        let prior = two_point_prior();
        let z0 = State::scalar(0.0);
        let spec = BridgeSpec::randomised(kernel.clone(), z0.clone(), prior.clone());
        let grid = uniform_grid(0.8, 64);
        let mut rng = ChaCha12Rng::seed_from_u64(37);
        let path = spec
            .sample_rmb_path(&grid, 1e-4, SamplerTag::ExactBridge, &mut rng, 37)
            .unwrap();
        let obs: Vec<(f64, State)> = path
            .grid
            .iter()
            .cloned()
            .zip(path.values.iter().cloned())
            .collect();
        let full = telescoping_posterior(&kernel, &prior, &obs).unwrap();
        let thinned: Vec<(f64, State)> = obs
            .iter()
            .enumerate()
            .filter(|(i, _)| *i == 0 || *i % 7 == 0 || *i == obs.len() - 1)
            .map(|(_, o)| o.clone())
            .collect();
        let thin = telescoping_posterior(&kernel, &prior, &thinned).unwrap();
        for (a, b) in full.weights().iter().zip(thin.weights()) {
            assert!((a - b).abs() / b.max(1e-300) <= 1e-9, "{a} vs {b}");
        }
    }

    #[test]
    fn abc_symmetric_case() {
        let kernel = std_brownian(1.0);
        let prior = two_point_prior();
        let z0 = State::scalar(0.0);
        let mut rng = ChaCha12Rng::seed_from_u64(101);
        let (post, rep) = abc_posterior(
            &kernel,
            &prior,
            &z0,
            0.5,
            &State::scalar(0.0),
            0.05,
            200_000,
            &mut rng,
        )
        .unwrap();
        assert!(rep.accepted >= 100);
        let closed =
            posterior(&FilterInput::new(&kernel, &prior, &z0, 0.5, &State::scalar(0.0)).unwrap())
                .unwrap();
        assert!(compare(&post, &closed).unwrap() <= 0.05);
        assert_abs_diff_eq!(post.weights()[0], 0.5, epsilon = 0.05);
    }

    #[test]
    fn abc_degenerate_prior_is_the_atom() {
        let kernel = std_brownian(1.0);
        let prior = Prior::degenerate(State::scalar(0.4));
        let mut rng = ChaCha12Rng::seed_from_u64(7);
        let (post, _) = abc_posterior(
            &kernel,
            &prior,
            &State::scalar(0.0),
            0.5,
            &State::scalar(0.2),
            0.5,
            10_000,
            &mut rng,
        )
        .unwrap();
        assert_eq!(post.weights(), &[1.0]);
    }

    #[test]
    fn abc_rejects_starved_acceptance() {
        let kernel = std_brownian(1.0);
        let prior = two_point_prior();
        let mut rng = ChaCha12Rng::seed_from_u64(7);
        let err = abc_posterior(
            &kernel,
            &prior,
            &State::scalar(0.0),
            0.5,
            &State::scalar(0.3),
            1e-9,
            1_000,
            &mut rng,
        )
        .unwrap_err();
        assert!(err.to_string().contains("accepted"), "{err}");
    }
}
