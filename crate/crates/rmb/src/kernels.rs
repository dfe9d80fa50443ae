//! Transition-density kernels p_t(x, y): everywhere-positive densities with
//! exact sampling, Chapman-Kolmogorov checks, and, for diffusion kernels,
//! drift, diffusion matrix, and the spatial score grad_x log p_t(x, y).
//!
//! The catalogue is fixed to three kernels with closed-form densities:
//! constant-coefficient Brownian motion (any dimension), the scalar
//! Ornstein-Uhlenbeck process, and an irreducible finite-state chain driven
//! by a generator matrix. All density evaluation routes through
//! `log_density` and exponentiates last.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Result, RmbError};
use crate::quad;
use crate::statespace::{State, StateSpace};

const LOG_2PI: f64 = 1.8378770664093453;

/// Brownian motion with constant drift vector and constant volatility
/// matrix: p_t(x, .) is Gaussian with mean x + mu t and covariance
/// sigma sigma^T t.
#[derive(Clone, Debug)]
pub struct Brownian {
    pub mu: DVector<f64>,
    pub sigma: DMatrix<f64>,
    cov: DMatrix<f64>,
    cov_inv: DMatrix<f64>,
    cov_logdet: f64,
}

impl Brownian {
    pub fn new(mu: DVector<f64>, sigma: DMatrix<f64>) -> Result<Self> {
        let d = mu.len();
        if sigma.nrows() != d || sigma.ncols() != d {
            return Err(RmbError::Construction(format!(
                "volatility must be {d}x{d} to match drift dimension"
            )));
        }
        let cov = &sigma * sigma.transpose();
        let chol = cov.clone().cholesky().ok_or_else(|| {
            RmbError::Construction("sigma sigma^T is not positive definite".into())
        })?;
        let cov_logdet = 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
        let cov_inv = chol.inverse();
        Ok(Brownian {
            mu,
            sigma,
            cov,
            cov_inv,
            cov_logdet,
        })
    }

    pub fn dimension(&self) -> usize {
        self.mu.len()
    }
}

/// Scalar Ornstein-Uhlenbeck process dY = theta (mu - Y) dt + sigma dW:
/// p_t(x, .) is Gaussian with mean mu + (x - mu) e^{-theta t} and variance
/// sigma^2 (1 - e^{-2 theta t}) / (2 theta).
#[derive(Clone, Debug)]
pub struct OrnsteinUhlenbeck {
    pub theta: f64,
    pub mu: f64,
    pub sigma: f64,
}

impl OrnsteinUhlenbeck {
    pub fn new(theta: f64, mu: f64, sigma: f64) -> Result<Self> {
        if !(theta > 0.0) {
            return Err(RmbError::Construction(format!(
                "mean-reversion rate must be positive, got {theta}"
            )));
        }
        if !(sigma > 0.0) {
            return Err(RmbError::Construction(format!(
                "volatility must be positive, got {sigma}"
            )));
        }
        Ok(OrnsteinUhlenbeck { theta, mu, sigma })
    }

    pub fn mean(&self, t: f64, x: f64) -> f64 {
        self.mu + (x - self.mu) * (-self.theta * t).exp()
    }

    pub fn variance(&self, t: f64) -> f64 {
        self.sigma * self.sigma * (1.0 - (-2.0 * self.theta * t).exp()) / (2.0 * self.theta)
    }
}

/// Continuous-time chain on k states with generator Q; transition matrix
/// exp(tQ) via nalgebra's scaling-and-squaring Pade scheme.
#[derive(Clone, Debug)]
pub struct FiniteChain {
    pub generator: DMatrix<f64>,
}

impl FiniteChain {
    pub fn new(generator: DMatrix<f64>) -> Result<Self> {
        let k = generator.nrows();
        if k < 2 || generator.ncols() != k {
            return Err(RmbError::Construction(
                "generator must be square with at least 2 states".into(),
            ));
        }
        for i in 0..k {
            let mut row = 0.0;
            for j in 0..k {
                let v = generator[(i, j)];
                if i != j && v < 0.0 {
                    return Err(RmbError::Construction(format!(
                        "off-diagonal generator entry ({i},{j}) is negative: {v}"
                    )));
                }
                row += v;
            }
            if row.abs() > 1e-10 {
                return Err(RmbError::Construction(format!(
                    "generator row {i} sums to {row}, not 0"
                )));
            }
        }
        Ok(FiniteChain { generator })
    }

    pub fn size(&self) -> usize {
        self.generator.nrows()
    }

    pub fn transition_matrix(&self, t: f64) -> DMatrix<f64> {
        (self.generator.clone() * t).exp()
    }
}

/// A transition kernel with horizon T; densities are defined for
/// t in (0, T] (t = 0 is a Dirac and not evaluable).
#[derive(Clone, Debug)]
pub enum KernelKind {
    Brownian(Brownian),
    OrnsteinUhlenbeck(OrnsteinUhlenbeck),
    FiniteChain(FiniteChain),
}

#[derive(Clone, Debug)]
pub struct Kernel {
    pub kind: KernelKind,
    pub horizon: f64,
    pub space: StateSpace,
}

impl Kernel {
    pub fn brownian(
        mu: DVector<f64>,
        sigma: DMatrix<f64>,
        horizon: f64,
        bounds: Vec<(f64, f64)>,
    ) -> Result<Self> {
        let b = Brownian::new(mu, sigma)?;
        if bounds.len() != b.dimension() {
            return Err(RmbError::Construction(
                "quadrature box dimension must match drift dimension".into(),
            ));
        }
        Self::with_kind(
            KernelKind::Brownian(b),
            horizon,
            StateSpace::continuum(bounds)?,
        )
    }

    pub fn ornstein_uhlenbeck(
        theta: f64,
        mu: f64,
        sigma: f64,
        horizon: f64,
        bounds: (f64, f64),
    ) -> Result<Self> {
        Self::with_kind(
            KernelKind::OrnsteinUhlenbeck(OrnsteinUhlenbeck::new(theta, mu, sigma)?),
            horizon,
            StateSpace::continuum(vec![bounds])?,
        )
    }

    pub fn finite_chain(generator: DMatrix<f64>, horizon: f64) -> Result<Self> {
        let chain = FiniteChain::new(generator)?;
        let size = chain.size();
        Self::with_kind(
            KernelKind::FiniteChain(chain),
            horizon,
            StateSpace::finite(size)?,
        )
    }

    fn with_kind(kind: KernelKind, horizon: f64, space: StateSpace) -> Result<Self> {
        if !(horizon > 0.0) || !horizon.is_finite() {
            return Err(RmbError::Construction(format!(
                "horizon must be a positive real, got {horizon}"
            )));
        }
        Ok(Kernel {
            kind,
            horizon,
            space,
        })
    }

    pub fn is_diffusion(&self) -> bool {
        !matches!(self.kind, KernelKind::FiniteChain(_))
    }

    pub fn dimension(&self) -> usize {
        self.space.dimension()
    }

    fn check_duration(&self, t: f64) -> Result<()> {
        if !(t > 0.0) || t > self.horizon + 1e-12 || !t.is_finite() {
            return Err(RmbError::Domain(format!(
                "time {t} outside (0, {}]",
                self.horizon
            )));
        }
        Ok(())
    }

    /// log p_t(x, y).
    pub fn log_density(&self, t: f64, x: &State, y: &State) -> Result<f64> {
        self.check_duration(t)?;
        let v = match &self.kind {
            KernelKind::Brownian(b) => {
                let (x, y) = (x.as_point()?, y.as_point()?);
                let r = y - x - &b.mu * t;
                let quad_form = (r.transpose() * &b.cov_inv * &r)[(0, 0)] / t;
                -0.5 * (b.dimension() as f64 * (LOG_2PI + t.ln()) + b.cov_logdet + quad_form)
            }
            KernelKind::OrnsteinUhlenbeck(ou) => {
                let (x, y) = (x.as_point()?[0], y.as_point()?[0]);
                let m = ou.mean(t, x);
                let v = ou.variance(t);
                -0.5 * (LOG_2PI + v.ln() + (y - m) * (y - m) / v)
            }
            KernelKind::FiniteChain(c) => {
                let (i, j) = (x.as_label()?, y.as_label()?);
                if i >= c.size() || j >= c.size() {
                    return Err(RmbError::Domain("state label out of range".into()));
                }
                c.transition_matrix(t)[(i, j)].ln()
            }
        };
        if !v.is_finite() {
            return Err(RmbError::Numeric(format!(
                "log density non-finite at t={t}, x={x}, y={y}"
            )));
        }
        Ok(v)
    }

    /// p_t(x, y); strictly positive.
    pub fn density(&self, t: f64, x: &State, y: &State) -> Result<f64> {
        Ok(self.log_density(t, x, y)?.exp())
    }

    /// grad_x log p_t(x, y) for diffusion kernels.
    pub fn score(&self, t: f64, x: &State, y: &State) -> Result<DVector<f64>> {
        self.check_duration(t)?;
        match &self.kind {
            KernelKind::Brownian(b) => {
                let (x, y) = (x.as_point()?, y.as_point()?);
                let r = y - x - &b.mu * t;
                let g = &b.cov_inv * r / t;
                if g.iter().any(|v| !v.is_finite()) {
                    return Err(RmbError::Numeric("score non-finite".into()));
                }
                Ok(g)
            }
            KernelKind::OrnsteinUhlenbeck(ou) => {
                let (x, y) = (x.as_point()?[0], y.as_point()?[0]);
                let decay = (-ou.theta * t).exp();
                let g = (y - ou.mean(t, x)) * decay / ou.variance(t);
                if !g.is_finite() {
                    return Err(RmbError::Numeric("score non-finite".into()));
                }
                Ok(DVector::from_column_slice(&[g]))
            }
            KernelKind::FiniteChain(_) => Err(RmbError::Unsupported(
                "score is defined only for diffusion kernels".into(),
            )),
        }
    }

    /// Drift b(x) of a diffusion kernel.
    pub fn drift(&self, x: &State) -> Result<DVector<f64>> {
        match &self.kind {
            KernelKind::Brownian(b) => {
                x.as_point()?;
                Ok(b.mu.clone())
            }
            KernelKind::OrnsteinUhlenbeck(ou) => {
                let x = x.as_point()?[0];
                Ok(DVector::from_column_slice(&[ou.theta * (ou.mu - x)]))
            }
            KernelKind::FiniteChain(_) => Err(RmbError::Unsupported(
                "drift is defined only for diffusion kernels".into(),
            )),
        }
    }

    /// Volatility matrix sigma(x) of a diffusion kernel (constant for the
    /// built-in catalogue).
    pub fn vol_matrix(&self) -> Result<DMatrix<f64>> {
        match &self.kind {
            KernelKind::Brownian(b) => Ok(b.sigma.clone()),
            KernelKind::OrnsteinUhlenbeck(ou) => Ok(DMatrix::from_element(1, 1, ou.sigma)),
            KernelKind::FiniteChain(_) => Err(RmbError::Unsupported(
                "volatility is defined only for diffusion kernels".into(),
            )),
        }
    }

    /// sigma sigma^T.
    pub fn diffusion_matrix(&self) -> Result<DMatrix<f64>> {
        match &self.kind {
            KernelKind::Brownian(b) => Ok(b.cov.clone()),
            KernelKind::OrnsteinUhlenbeck(ou) => {
                Ok(DMatrix::from_element(1, 1, ou.sigma * ou.sigma))
            }
            KernelKind::FiniteChain(_) => Err(RmbError::Unsupported(
                "diffusion matrix is defined only for diffusion kernels".into(),
            )),
        }
    }

    /// Exact draw from p_t(x, .).
    pub fn sample_step<R: Rng>(&self, t: f64, x: &State, rng: &mut R) -> Result<State> {
        self.check_duration(t)?;
        match &self.kind {
            KernelKind::Brownian(b) => {
                let x = x.as_point()?;
                let z = DVector::from_iterator(
                    b.dimension(),
                    (0..b.dimension()).map(|_| StandardNormal.sample(rng)),
                );
                Ok(State::Point(x + &b.mu * t + &b.sigma * z * t.sqrt()))
            }
            KernelKind::OrnsteinUhlenbeck(ou) => {
                let x = x.as_point()?[0];
                let z: f64 = StandardNormal.sample(rng);
                Ok(State::scalar(ou.mean(t, x) + ou.variance(t).sqrt() * z))
            }
            KernelKind::FiniteChain(c) => {
                let i = x.as_label()?;
                let row = c.transition_matrix(t).row(i).transpose();
                let u: f64 = rng.gen();
                let mut acc = 0.0;
                for j in 0..c.size() {
                    acc += row[j];
                    if u <= acc {
                        return Ok(State::Label(j));
                    }
                }
                Ok(State::Label(c.size() - 1))
            }
        }
    }

    /// All states of a finite chain, as labels.
    pub fn finite_states(&self) -> Option<Vec<State>> {
        match &self.kind {
            KernelKind::FiniteChain(c) => Some((0..c.size()).map(State::Label).collect()),
            _ => None,
        }
    }

    /// Absolute Chapman-Kolmogorov residual
    /// |p_{t+s}(x, z) - int p_t(x, y) p_s(y, z) m(dy)|, computed with
    /// Gauss-Legendre quadrature on the kernel's box (continuum) or an exact
    /// sum (finite chain).
    pub fn ck_residual(
        &self,
        s: f64,
        t: f64,
        x: &State,
        z: &State,
        quad_nodes: usize,
    ) -> Result<f64> {
        if !(s > 0.0 && t > 0.0) || s + t > self.horizon + 1e-12 {
            return Err(RmbError::Domain(format!(
                "need s, t > 0 with s + t <= horizon; got s={s}, t={t}"
            )));
        }
        let lhs = self.density(s + t, x, z)?;
        let rhs = match &self.kind {
            KernelKind::FiniteChain(c) => {
                let mut acc = 0.0;
                for j in 0..c.size() {
                    let y = State::Label(j);
                    acc += self.density(t, x, &y)? * self.density(s, &y, z)?;
                }
                acc
            }
            _ => {
                let bounds = match &self.space {
                    StateSpace::Continuum { bounds } => bounds,
                    StateSpace::Finite { .. } => unreachable!(),
                };
                if bounds.len() != 1 {
                    return Err(RmbError::Unsupported(
                        "quadrature C-K residual implemented for 1-d continuum kernels".into(),
                    ));
                }
                let (a, b) = bounds[0];
                // Coverage check: mass of p_t(x, .) on the box.
                let mass = quad::integrate(quad_nodes, a, b, |y| {
                    self.density(t, x, &State::scalar(y)).unwrap_or(0.0)
                });
                if mass < 1.0 - 1e-10 {
                    log::warn!(
                        "quadrature box [{a}, {b}] covers only {mass} of the transition mass"
                    );
                }
                quad::integrate(quad_nodes, a, b, |y| {
                    let ys = State::scalar(y);
                    self.density(t, x, &ys).unwrap_or(0.0) * self.density(s, &ys, z).unwrap_or(0.0)
                })
            }
        };
        Ok((lhs - rhs).abs())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    pub fn std_brownian(horizon: f64) -> Kernel {
        Kernel::brownian(
            DVector::from_column_slice(&[0.0]),
            DMatrix::from_element(1, 1, 1.0),
            horizon,
            vec![(-10.0, 10.0)],
        )
        .unwrap()
    }

    fn symmetric_chain() -> Kernel {
        let q = DMatrix::from_row_slice(2, 2, &[-1.0, 1.0, 1.0, -1.0]);
        Kernel::finite_chain(q, 1.0).unwrap()
    }

    #[test]
    fn brownian_density_peak() {
        let k = std_brownian(1.0);
        let v = k
            .density(1.0, &State::scalar(0.0), &State::scalar(0.0))
            .unwrap();
        assert_abs_diff_eq!(v, 0.3989423, epsilon = 1e-7);
    }

    #[test]
    fn brownian_density_off_peak() {
        // (2 pi 0.5)^{-1/2} e^{-0.09}
        let k = std_brownian(1.0);
        let v = k
            .density(0.5, &State::scalar(0.3), &State::scalar(0.0))
            .unwrap();
        let oracle = (2.0 * std::f64::consts::PI * 0.5f64).powf(-0.5) * (-0.09f64).exp();
        assert_abs_diff_eq!(v, oracle, epsilon = 1e-12);
        assert_abs_diff_eq!(v, 0.5156305, epsilon = 1e-7);
    }

    #[test]
    fn chain_stay_probability() {
        // 2-state symmetric chain: stay entry (1 + e^{-2t})/2
        let k = symmetric_chain();
        let v = k.density(0.5, &State::Label(0), &State::Label(0)).unwrap();
        assert_abs_diff_eq!(v, (1.0 + (-1.0f64).exp()) / 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(v, 0.6839397, epsilon = 1e-7);
    }

    #[test]
    fn density_rejects_bad_times() {
        let k = std_brownian(1.0);
        assert!(k
            .density(0.0, &State::scalar(0.0), &State::scalar(0.0))
            .is_err());
        assert!(k
            .density(1.5, &State::scalar(0.0), &State::scalar(0.0))
            .is_err());
    }

    #[test]
    fn brownian_score_examples() {
        let k = std_brownian(1.0);
        let g = k
            .score(1.0, &State::scalar(0.0), &State::scalar(0.0))
            .unwrap();
        assert_abs_diff_eq!(g[0], 0.0, epsilon = 1e-14);
        let g = k
            .score(0.5, &State::scalar(0.0), &State::scalar(1.0))
            .unwrap();
        assert_abs_diff_eq!(g[0], 2.0, epsilon = 1e-14);
    }

    #[test]
    fn ou_score_matches_finite_difference() {
        let k = Kernel::ornstein_uhlenbeck(1.0, 0.0, 1.0, 1.0, (-10.0, 10.0)).unwrap();
        let (t, x, y) = (0.5, 0.2, 0.4);
        let h = 1e-6;
        let fd = (k
            .log_density(t, &State::scalar(x + h), &State::scalar(y))
            .unwrap()
            - k.log_density(t, &State::scalar(x - h), &State::scalar(y))
                .unwrap())
            / (2.0 * h);
        let g = k.score(t, &State::scalar(x), &State::scalar(y)).unwrap();
        assert_abs_diff_eq!(g[0], fd, epsilon = 1e-6);
    }

    #[test]
    fn score_unsupported_on_chain() {
        let k = symmetric_chain();
        assert!(k.score(0.5, &State::Label(0), &State::Label(1)).is_err());
    }

    #[test]
    fn brownian_sampling_mean() {
        let k = std_brownian(1.0);
        let mut rng = ChaCha12Rng::seed_from_u64(7);
        let n = 100_000;
        let mean: f64 = (0..n)
            .map(|_| {
                k.sample_step(1.0, &State::scalar(0.0), &mut rng)
                    .unwrap()
                    .value()
            })
            .sum::<f64>()
            / n as f64;
        assert!(mean.abs() < 4.0 / (n as f64).sqrt(), "mean {mean}");
    }

    #[test]
    fn brownian_drifted_sampling_mean() {
        let k = Kernel::brownian(
            DVector::from_column_slice(&[1.0]),
            DMatrix::from_element(1, 1, 1.0),
            1.0,
            vec![(-10.0, 10.0)],
        )
        .unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(11);
        let n = 100_000;
        let mean: f64 = (0..n)
            .map(|_| {
                k.sample_step(0.25, &State::scalar(0.0), &mut rng)
                    .unwrap()
                    .value()
            })
            .sum::<f64>()
            / n as f64;
        // mean x + mu t = 0.25, sd sqrt(0.25)
        assert!(
            (mean - 0.25).abs() < 4.0 * 0.5 / (n as f64).sqrt(),
            "mean {mean}"
        );
    }

    #[test]
    fn chain_sampling_stationary_law() {
        let k = symmetric_chain();
        let mut rng = ChaCha12Rng::seed_from_u64(3);
        let n = 10_000;
        let ones: usize = (0..n)
            .filter(|_| {
                matches!(
                    k.sample_step(1.0, &State::Label(0), &mut rng).unwrap(),
                    State::Label(1)
                )
            })
            .count();
        // at t = 1 the symmetric chain is close to its (0.5, 0.5) stationary law
        let expected = (1.0 - (-2.0f64).exp()) / 2.0;
        assert!((ones as f64 / n as f64 - expected).abs() < 0.02);
    }

    #[test]
    fn ck_residual_chain_exact() {
        let k = symmetric_chain();
        let r = k
            .ck_residual(0.3, 0.4, &State::Label(0), &State::Label(1), 0)
            .unwrap();
        assert!(r <= 1e-12, "residual {r}");
    }

    #[test]
    fn ck_residual_brownian() {
        let k = std_brownian(1.0);
        let r = k
            .ck_residual(0.5, 0.5, &State::scalar(0.0), &State::scalar(0.0), 256)
            .unwrap();
        assert!(r <= 1e-8, "residual {r}");
    }

    #[test]
    fn ck_residual_ou() {
        let k = Kernel::ornstein_uhlenbeck(1.0, 0.0, 1.0, 1.0, (-10.0, 10.0)).unwrap();
        let r = k
            .ck_residual(0.3, 0.2, &State::scalar(0.1), &State::scalar(-0.2), 256)
            .unwrap();
        assert!(r <= 1e-8, "residual {r}");
    }

    #[test]
    fn chain_rows_sum_to_one() {
        let q = DMatrix::from_row_slice(3, 3, &[-2.0, 1.5, 0.5, 0.3, -0.8, 0.5, 1.0, 1.0, -2.0]);
        let k = Kernel::finite_chain(q, 1.0).unwrap();
        if let KernelKind::FiniteChain(c) = &k.kind {
            let p = c.transition_matrix(0.7);
            for i in 0..3 {
                let row: f64 = (0..3).map(|j| p[(i, j)]).sum();
                assert_abs_diff_eq!(row, 1.0, epsilon = 1e-12);
                for j in 0..3 {
                    assert!(p[(i, j)] > 0.0);
                }
            }
        } else {
            unreachable!()
        }
    }

    #[test]
    fn backward_equation_residual() {
        // (-d_t + b d_x + 0.5 sigma^2 d_xx) p_t(x, y) ~ 0 by finite differences
        for k in [
            std_brownian(1.0),
            Kernel::ornstein_uhlenbeck(1.3, 0.2, 0.8, 1.0, (-10.0, 10.0)).unwrap(),
        ] {
            let (t, x, y) = (0.6, 0.3, -0.1);
            let h = 1e-4;
            let p = |t: f64, x: f64| k.density(t, &State::scalar(x), &State::scalar(y)).unwrap();
            let dt = (p(t + h, x) - p(t - h, x)) / (2.0 * h);
            let dx = (p(t, x + h) - p(t, x - h)) / (2.0 * h);
            let dxx = (p(t, x + h) - 2.0 * p(t, x) + p(t, x - h)) / (h * h);
            let b = k.drift(&State::scalar(x)).unwrap()[0];
            let s2 = k.diffusion_matrix().unwrap()[(0, 0)];
            let resid = -dt + b * dx + 0.5 * s2 * dxx;
            assert!(
                resid.abs() <= 1e-3 * p(t, x),
                "backward residual {resid} vs density {}",
                p(t, x)
            );
        }
    }
}
