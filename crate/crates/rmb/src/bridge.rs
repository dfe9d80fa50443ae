//! Markov bridges with a fixed terminal pin and randomised Markov bridges
//! (RMBs) whose pin is drawn from a prior.
//!
//! The fixed-pin bridge is realized through the density-ratio change of
//! measure: likelihood ratio p_{T-t}(Y_t, z) / p_T(y, z) and bridge
//! transition density p_{t-s}(y, y') p_{T-t}(y', z) / p_{T-s}(y, z). Two
//! samplers are provided: the sequential-conditional sampler, exact in
//! distribution on the grid and used as the internal reference, and an
//! Euler scheme for the score-drift SDE
//! dZ = {b(Z) + (sigma sigma^T)(Z) grad log p_{T-t}(Z, X)} dt + sigma dW.

use nalgebra::DVector;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Result, RmbError};
use crate::kernels::{Kernel, KernelKind};
use crate::statespace::{Prior, State};

/// Terminal pin of a bridge: a fixed state or a prior over states.
#[derive(Clone, Debug)]
pub enum Pin {
    Fixed(State),
    Random(Prior),
}

/// A bridge specification: kernel, initial state, and pin. The horizon is
/// the kernel's.
#[derive(Clone, Debug)]
pub struct BridgeSpec {
    pub kernel: Kernel,
    pub y0: State,
    pub pin: Pin,
}

/// Which sampler produced a path.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SamplerTag {
    ExactBridge,
    EulerSde,
}

impl std::fmt::Display for SamplerTag {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            SamplerTag::ExactBridge => write!(f, "exact-bridge"),
            SamplerTag::EulerSde => write!(f, "euler-sde"),
        }
    }
}

/// A sampled path on a grid 0 = t_0 < ... < t_N <= T - epsilon, with its
/// hidden pin stored separately (the path itself never reaches T). For
/// Euler paths, `noise` holds the Brownian increments used per step.
#[derive(Clone, Debug)]
pub struct RmbPath {
    pub grid: Vec<f64>,
    pub values: Vec<State>,
    pub hidden_pin: State,
    pub sampler_tag: SamplerTag,
    pub seed: u64,
    pub noise: Option<Vec<DVector<f64>>>,
    /// Number of Euler steps where the score drift hit the clamp.
    pub clamp_triggers: usize,
}

/// Validate a path grid against the horizon and endpoint margin.
pub fn validate_grid(grid: &[f64], horizon: f64, epsilon: f64) -> Result<()> {
    if grid.is_empty() || grid[0] != 0.0 {
        return Err(RmbError::Domain("grid must start at t = 0".into()));
    }
    for w in grid.windows(2) {
        if !(w[1] > w[0]) {
            return Err(RmbError::Domain(format!(
                "grid not strictly increasing at {} -> {}",
                w[0], w[1]
            )));
        }
    }
    let last = *grid.last().unwrap();
    if last > horizon - epsilon + 1e-15 {
        return Err(RmbError::Domain(format!(
            "grid endpoint {last} exceeds horizon - epsilon = {}",
            horizon - epsilon
        )));
    }
    Ok(())
}

/// Uniform grid with n steps from 0 to t_end.
pub fn uniform_grid(t_end: f64, steps: usize) -> Vec<f64> {
    (0..=steps)
        .map(|i| t_end * i as f64 / steps as f64)
        .collect()
}

impl BridgeSpec {
    pub fn fixed(kernel: Kernel, y0: State, pin: State) -> Self {
        BridgeSpec {
            kernel,
            y0,
            pin: Pin::Fixed(pin),
        }
    }

    pub fn randomised(kernel: Kernel, y0: State, prior: Prior) -> Self {
        BridgeSpec {
            kernel,
            y0,
            pin: Pin::Random(prior),
        }
    }

    fn fixed_pin(&self) -> Result<&State> {
        match &self.pin {
            Pin::Fixed(z) => Ok(z),
            Pin::Random(_) => Err(RmbError::Domain(
                "operation requires a fixed-pin bridge".into(),
            )),
        }
    }

    /// Likelihood ratio p_{T-t}(y_t, z) / p_T(y0, z) of the pinned measure
    /// with respect to the free one, computed in log space.
    pub fn likelihood_ratio(&self, t: f64, y_t: &State) -> Result<f64> {
        Ok(self.log_likelihood_ratio(t, y_t)?.exp())
    }

    pub fn log_likelihood_ratio(&self, t: f64, y_t: &State) -> Result<f64> {
        let z = self.fixed_pin()?;
        let horizon = self.kernel.horizon;
        if !(0.0..horizon).contains(&t) {
            return Err(RmbError::Domain(format!(
                "likelihood ratio requires t in [0, {horizon}), got {t}"
            )));
        }
        Ok(self.kernel.log_density(horizon - t, y_t, z)?
            - self.kernel.log_density(horizon, &self.y0, z)?)
    }

    /// Bridge transition density
    /// p_{t-s}(y, y') p_{T-t}(y', z) / p_{T-s}(y, z), for 0 <= s < t < T.
    pub fn transition_density(&self, s: f64, y: &State, t: f64, y2: &State) -> Result<f64> {
        Ok(self.log_transition_density(s, y, t, y2)?.exp())
    }

    pub fn log_transition_density(&self, s: f64, y: &State, t: f64, y2: &State) -> Result<f64> {
        let z = self.fixed_pin()?;
        let horizon = self.kernel.horizon;
        if !(s >= 0.0 && s < t && t < horizon) {
            return Err(RmbError::Domain(format!(
                "bridge transition needs 0 <= s < t < {horizon}; got s={s}, t={t}"
            )));
        }
        Ok(
            self.kernel.log_density(t - s, y, y2)? + self.kernel.log_density(horizon - t, y2, z)?
                - self.kernel.log_density(horizon - s, y, z)?,
        )
    }

    /// One exact draw from the normalized bridge transition
    /// y' -> p^{(z,T)}(s, y; t, y'). Gaussian kernels use the closed-form
    /// conditional Gaussian; the finite chain uses the exact categorical row.
    pub fn sample_bridge_step<R: Rng>(
        &self,
        s: f64,
        y: &State,
        t: f64,
        rng: &mut R,
    ) -> Result<State> {
        let z = self.fixed_pin()?.clone();
        sample_pinned_step(&self.kernel, s, y, t, &z, rng)
    }

    /// Exact bridge path on the grid for a fixed pin.
    pub fn sample_bridge_path<R: Rng>(
        &self,
        grid: &[f64],
        epsilon: f64,
        rng: &mut R,
        seed: u64,
    ) -> Result<RmbPath> {
        let z = self.fixed_pin()?.clone();
        validate_grid(grid, self.kernel.horizon, epsilon)?;
        let values = sample_pinned_values(&self.kernel, &self.y0, &z, grid, rng)?;
        Ok(RmbPath {
            grid: grid.to_vec(),
            values,
            hidden_pin: z,
            sampler_tag: SamplerTag::ExactBridge,
            seed,
            noise: None,
            clamp_triggers: 0,
        })
    }

    /// RMB path: draw the hidden pin X from the prior, then run the
    /// (y0, T, X)-bridge with the requested sampler.
    pub fn sample_rmb_path<R: Rng>(
        &self,
        grid: &[f64],
        epsilon: f64,
        mode: SamplerTag,
        rng: &mut R,
        seed: u64,
    ) -> Result<RmbPath> {
        let prior = match &self.pin {
            Pin::Random(p) => p.clone(),
            Pin::Fixed(z) => Prior::degenerate(z.clone()),
        };
        validate_grid(grid, self.kernel.horizon, epsilon)?;
        let pin = sample_atom(&prior, rng);
        match mode {
            SamplerTag::ExactBridge => {
                let values = sample_pinned_values(&self.kernel, &self.y0, &pin, grid, rng)?;
                Ok(RmbPath {
                    grid: grid.to_vec(),
                    values,
                    hidden_pin: pin,
                    sampler_tag: mode,
                    seed,
                    noise: None,
                    clamp_triggers: 0,
                })
            }
            SamplerTag::EulerSde => {
                if !self.kernel.is_diffusion() {
                    return Err(RmbError::Unsupported(
                        "euler-sde sampling requires a diffusion kernel".into(),
                    ));
                }
                let clamp = score_drift_clamp(&self.kernel, &prior)?;
                let mut values = vec![self.y0.clone()];
                let mut noise = Vec::with_capacity(grid.len() - 1);
                let mut triggers = 0usize;
                let dim = self.kernel.dimension();
                for w in grid.windows(2) {
                    let (ti, tj) = (w[0], w[1]);
                    let dt = tj - ti;
                    let dw = DVector::from_iterator(
                        dim,
                        (0..dim).map(|_| {
                            let g: f64 = StandardNormal.sample(rng);
                            g * dt.sqrt()
                        }),
                    );
                    let z = values.last().unwrap();
                    let next = euler_rmb_step_clamped(
                        &self.kernel,
                        ti,
                        z,
                        &pin,
                        dt,
                        &dw,
                        Some(clamp),
                        &mut triggers,
                    )?;
                    noise.push(dw);
                    values.push(next);
                }
                Ok(RmbPath {
                    grid: grid.to_vec(),
                    values,
                    hidden_pin: pin,
                    sampler_tag: mode,
                    seed,
                    noise: Some(noise),
                    clamp_triggers: triggers,
                })
            }
        }
    }
}

/// Draw an atom from a finitely supported normalized measure.
pub fn sample_atom<R: Rng>(prior: &Prior, rng: &mut R) -> State {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (s, w) in prior.support().iter().zip(prior.weights()) {
        acc += w;
        if u <= acc {
            return s.clone();
        }
    }
    prior.support().last().unwrap().clone()
}

fn sample_pinned_values<R: Rng>(
    kernel: &Kernel,
    y0: &State,
    pin: &State,
    grid: &[f64],
    rng: &mut R,
) -> Result<Vec<State>> {
    let mut values = vec![y0.clone()];
    for w in grid.windows(2) {
        let y = values.last().unwrap().clone();
        let next = sample_pinned_step(kernel, w[0], &y, w[1], pin, rng)?;
        values.push(next);
    }
    Ok(values)
}

/// Exact draw from the pinned one-step transition for each kernel kind.
fn sample_pinned_step<R: Rng>(
    kernel: &Kernel,
    s: f64,
    y: &State,
    t: f64,
    pin: &State,
    rng: &mut R,
) -> Result<State> {
    let horizon = kernel.horizon;
    if !(s >= 0.0 && s < t && t < horizon) {
        return Err(RmbError::Domain(format!(
            "bridge step needs 0 <= s < t < {horizon}; got s={s}, t={t}"
        )));
    }
    match &kernel.kind {
        KernelKind::Brownian(b) => {
            // product of Gaussians in y': N(y + mu (t-s), C (t-s)) and
            // N(z - mu (T-t), C (T-t)) with shared C = sigma sigma^T
            let y = y.as_point()?;
            let z = pin.as_point()?;
            let a = 1.0 / (t - s);
            let c = 1.0 / (horizon - t);
            let m1 = y + &b.mu * (t - s);
            let m2 = z - &b.mu * (horizon - t);
            let mean = (m1 * a + m2 * c) / (a + c);
            let scale = (1.0 / (a + c)).sqrt();
            let gauss = DVector::from_iterator(
                b.dimension(),
                (0..b.dimension()).map(|_| StandardNormal.sample(rng)),
            );
            Ok(State::Point(mean + &b.sigma * gauss * scale))
        }
        KernelKind::OrnsteinUhlenbeck(ou) => {
            // product of two scalar Gaussians in y': the forward transition
            // and the pin constraint read backwards
            let y = y.as_point()?[0];
            let z = pin.as_point()?[0];
            let m1 = ou.mean(t - s, y);
            let v1 = ou.variance(t - s);
            let back = (ou.theta * (horizon - t)).exp();
            let m2 = ou.mu + (z - ou.mu) * back;
            let v2 = ou.variance(horizon - t) * back * back;
            let v = 1.0 / (1.0 / v1 + 1.0 / v2);
            let m = v * (m1 / v1 + m2 / v2);
            let g: f64 = StandardNormal.sample(rng);
            Ok(State::scalar(m + v.sqrt() * g))
        }
        KernelKind::FiniteChain(c) => {
            let i = y.as_label()?;
            let zl = pin.as_label()?;
            let fwd = c.transition_matrix(t - s);
            let tail = c.transition_matrix(horizon - t);
            let mut weights: Vec<f64> =
                (0..c.size()).map(|j| fwd[(i, j)] * tail[(j, zl)]).collect();
            let total: f64 = weights.iter().sum();
            if total < 1e-300 {
                return Err(RmbError::Numeric(format!(
                    "bridge step mass underflow at (s={s}, t={t})"
                )));
            }
            for w in &mut weights {
                *w /= total;
            }
            let u: f64 = rng.gen();
            let mut acc = 0.0;
            for (j, w) in weights.iter().enumerate() {
                acc += w;
                if u <= acc {
                    return Ok(State::Label(j));
                }
            }
            Ok(State::Label(c.size() - 1))
        }
    }
}

/// One Euler step of the score-drift SDE:
/// z + {b(z) + (sigma sigma^T)(z) grad log p_{T-t}(z, x)} dt + sigma dw,
/// where dw is the Brownian increment over the step.
pub fn euler_rmb_step(
    kernel: &Kernel,
    t: f64,
    z: &State,
    pin: &State,
    dt: f64,
    dw: &DVector<f64>,
) -> Result<State> {
    let mut triggers = 0;
    euler_rmb_step_clamped(kernel, t, z, pin, dt, dw, None, &mut triggers)
}

/// Clamp magnitude for the score drift term: c / sqrt(T - t) with
/// c = 10 |sigma| diam(prior support). The true bridge drift scales like
/// (x - z)/(T - t), so the cap preserves the asymptotics while bounding the
/// floating-point range just before T - epsilon.
pub fn score_drift_clamp(kernel: &Kernel, prior: &Prior) -> Result<f64> {
    let sigma_norm = kernel.vol_matrix()?.norm();
    let diam = prior.support_diameter().max(1.0);
    Ok(10.0 * sigma_norm * diam)
}

#[allow(clippy::too_many_arguments)]
fn euler_rmb_step_clamped(
    kernel: &Kernel,
    t: f64,
    z: &State,
    pin: &State,
    dt: f64,
    dw: &DVector<f64>,
    clamp_coeff: Option<f64>,
    triggers: &mut usize,
) -> Result<State> {
    let horizon = kernel.horizon;
    if t + dt > horizon {
        return Err(RmbError::Domain(format!(
            "euler step past the horizon: t + dt = {} > {horizon}",
            t + dt
        )));
    }
    let remaining = horizon - t;
    let score = kernel.score(remaining, z, pin).map_err(|e| match e {
        RmbError::Numeric(m) => RmbError::Numeric(format!(
            "{m} (t too close to the horizon; increase epsilon)"
        )),
        other => other,
    })?;
    let mut score_drift = kernel.diffusion_matrix()? * score;
    if let Some(c) = clamp_coeff {
        let cap = c / remaining.sqrt();
        let norm = score_drift.norm();
        if norm > cap {
            score_drift *= cap / norm;
            *triggers += 1;
        }
    }
    let zp = z.as_point()?;
    let next = zp + (kernel.drift(z)? + score_drift) * dt + kernel.vol_matrix()? * dw;
    if next.iter().any(|v| !v.is_finite()) {
        return Err(RmbError::Numeric(format!(
            "euler step produced a non-finite state at t = {t}"
        )));
    }
    Ok(State::Point(next))
}
