//! State spaces, priors, and weighted-measure arithmetic shared by every
//! other module.
//!
//! A continuum space is a box in R^n with Lebesgue reference measure; a
//! finite space is a labeled set with counting reference measure. Priors and
//! posteriors are finitely supported: a continuous prior density enters as a
//! Gauss-Legendre discretization whose node weights are folded into the atom
//! weights, after which every integral in the library is an exact finite sum.

use nalgebra::DVector;

use crate::error::{Result, RmbError};
use crate::quad;

/// A point of the state space: a vector for continuum spaces, a label index
/// for finite spaces.
#[derive(Clone, Debug, PartialEq)]
pub enum State {
    Point(DVector<f64>),
    Label(usize),
}

impl State {
    pub fn point(components: &[f64]) -> Self {
        State::Point(DVector::from_column_slice(components))
    }

    pub fn scalar(v: f64) -> Self {
        State::Point(DVector::from_column_slice(&[v]))
    }

    pub fn as_point(&self) -> Result<&DVector<f64>> {
        match self {
            State::Point(v) => Ok(v),
            State::Label(_) => Err(RmbError::Domain(
                "expected a continuum state, got a finite-space label".into(),
            )),
        }
    }

    pub fn as_label(&self) -> Result<usize> {
        match self {
            State::Label(i) => Ok(*i),
            State::Point(_) => Err(RmbError::Domain(
                "expected a finite-space label, got a continuum state".into(),
            )),
        }
    }

    /// Scalar view used by payoffs and 1-d diagnostics: the first component
    /// for points, the label as a real for finite states.
    pub fn value(&self) -> f64 {
        match self {
            State::Point(v) => v[0],
            State::Label(i) => *i as f64,
        }
    }

    /// Euclidean distance between two states of the same kind.
    pub fn distance(&self, other: &State) -> f64 {
        match (self, other) {
            (State::Point(a), State::Point(b)) => (a - b).norm(),
            (State::Label(a), State::Label(b)) => {
                if a == b {
                    0.0
                } else {
                    (*a as f64 - *b as f64).abs()
                }
            }
            _ => f64::INFINITY,
        }
    }
}

impl std::fmt::Display for State {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            State::Point(v) => {
                let parts: Vec<String> = v.iter().map(|x| format!("{x}")).collect();
                write!(f, "{}", parts.join(";"))
            }
            State::Label(i) => write!(f, "{i}"),
        }
    }
}

/// The state space E together with its reference measure m: Lebesgue on a
/// box for the continuum kind, counting for the finite kind.
#[derive(Clone, Debug, PartialEq)]
pub enum StateSpace {
    Continuum { bounds: Vec<(f64, f64)> },
    Finite { size: usize },
}

impl StateSpace {
    pub fn continuum(bounds: Vec<(f64, f64)>) -> Result<Self> {
        if bounds.is_empty() {
            return Err(RmbError::Construction(
                "state space needs dimension >= 1".into(),
            ));
        }
        for (i, (a, b)) in bounds.iter().enumerate() {
            if !(a < b) {
                return Err(RmbError::Construction(format!(
                    "bounds for dimension {i} are not an interval: ({a}, {b})"
                )));
            }
        }
        Ok(StateSpace::Continuum { bounds })
    }

    pub fn finite(size: usize) -> Result<Self> {
        if size < 2 {
            return Err(RmbError::Construction(
                "finite state space needs at least 2 points".into(),
            ));
        }
        Ok(StateSpace::Finite { size })
    }

    pub fn dimension(&self) -> usize {
        match self {
            StateSpace::Continuum { bounds } => bounds.len(),
            StateSpace::Finite { .. } => 1,
        }
    }
}

/// How a prior was built; quadrature priors carry the node weights already
/// folded into the atom weights.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PriorRepresentation {
    Atomic,
    QuadratureOfDensity,
}

/// The law of the hidden terminal pin X, as a normalized finitely supported
/// measure.
#[derive(Clone, Debug)]
pub struct Prior {
    support: Vec<State>,
    weights: Vec<f64>,
    representation: PriorRepresentation,
}

/// An unnormalized nonnegative measure with finite support.
#[derive(Clone, Debug)]
pub struct WeightedMeasure {
    support: Vec<State>,
    weights: Vec<f64>,
}

/// A normalized posterior over a finite support.
#[derive(Clone, Debug)]
pub struct Posterior {
    support: Vec<State>,
    weights: Vec<f64>,
}

const NORMALIZATION_TOL: f64 = 1e-12;

fn check_distinct(support: &[State]) -> Result<()> {
    for i in 0..support.len() {
        for j in (i + 1)..support.len() {
            if support[i] == support[j] {
                return Err(RmbError::Construction(format!(
                    "duplicate support points at indices {i} and {j}"
                )));
            }
        }
    }
    Ok(())
}

impl Prior {
    /// Normalized atomic prior from points and nonnegative weights.
    pub fn atomic(points: Vec<State>, weights: Vec<f64>) -> Result<Self> {
        if points.len() != weights.len() {
            return Err(RmbError::Construction(format!(
                "{} points but {} weights",
                points.len(),
                weights.len()
            )));
        }
        if points.is_empty() {
            return Err(RmbError::Construction(
                "prior needs at least one atom".into(),
            ));
        }
        for (i, w) in weights.iter().enumerate() {
            if !w.is_finite() || *w < 0.0 {
                return Err(RmbError::Construction(format!(
                    "weight at index {i} is negative or non-finite: {w}"
                )));
            }
        }
        check_distinct(&points)?;
        let total: f64 = weights.iter().sum();
        if total <= 0.0 {
            return Err(RmbError::Construction("total prior mass is zero".into()));
        }
        let weights = weights.iter().map(|w| w / total).collect();
        Ok(Prior {
            support: points,
            weights,
            representation: PriorRepresentation::Atomic,
        })
    }

    /// Quadrature approximation of a density prior on a box: atoms at the
    /// tensor-product Gauss-Legendre nodes, weights are node weights times
    /// density values, renormalized. The box must carry essentially all of
    /// the density's mass; that is the caller's responsibility.
    pub fn from_density<F>(density: F, nodes: usize, bounds: &[(f64, f64)]) -> Result<Self>
    where
        F: Fn(&DVector<f64>) -> f64,
    {
        if nodes < 2 {
            return Err(RmbError::Construction(
                "density prior needs nodes >= 2".into(),
            ));
        }
        if bounds.is_empty() {
            return Err(RmbError::Construction(
                "density prior needs a nonempty box".into(),
            ));
        }
        let per_dim: Vec<(Vec<f64>, Vec<f64>)> = bounds
            .iter()
            .map(|(a, b)| quad::gauss_legendre_on(nodes, *a, *b))
            .collect();
        let dim = bounds.len();
        let total = nodes.pow(dim as u32);
        let mut support = Vec::with_capacity(total);
        let mut weights = Vec::with_capacity(total);
        for flat in 0..total {
            let mut idx = flat;
            let mut x = DVector::zeros(dim);
            let mut w = 1.0;
            for d in 0..dim {
                let k = idx % nodes;
                idx /= nodes;
                x[d] = per_dim[d].0[k];
                w *= per_dim[d].1[k];
            }
            let g = density(&x);
            if !g.is_finite() || g < 0.0 {
                return Err(RmbError::Construction(format!(
                    "density is negative or non-finite at node {x}: {g}"
                )));
            }
            support.push(State::Point(x));
            weights.push(w * g);
        }
        let mass: f64 = weights.iter().sum();
        if mass < 1e-300 {
            return Err(RmbError::Construction(
                "density prior has total mass below 1e-300 on the given box".into(),
            ));
        }
        let weights = weights.iter().map(|w| w / mass).collect();
        Ok(Prior {
            support,
            weights,
            representation: PriorRepresentation::QuadratureOfDensity,
        })
    }

    /// Degenerate prior: a single atom.
    pub fn degenerate(point: State) -> Self {
        Prior {
            support: vec![point],
            weights: vec![1.0],
            representation: PriorRepresentation::Atomic,
        }
    }

    pub fn support(&self) -> &[State] {
        &self.support
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn representation(&self) -> PriorRepresentation {
        self.representation
    }

    pub fn len(&self) -> usize {
        self.support.len()
    }

    pub fn is_empty(&self) -> bool {
        self.support.is_empty()
    }

    pub fn is_atomic(&self) -> bool {
        self.representation == PriorRepresentation::Atomic
    }

    /// Diameter of the support set under the state distance.
    pub fn support_diameter(&self) -> f64 {
        let mut d = 0.0f64;
        for i in 0..self.support.len() {
            for j in (i + 1)..self.support.len() {
                d = d.max(self.support[i].distance(&self.support[j]));
            }
        }
        d
    }

    /// View the prior as a posterior (it is already normalized).
    pub fn as_posterior(&self) -> Posterior {
        Posterior {
            support: self.support.clone(),
            weights: self.weights.clone(),
        }
    }
}

impl WeightedMeasure {
    pub fn new(support: Vec<State>, weights: Vec<f64>) -> Result<Self> {
        if support.len() != weights.len() {
            return Err(RmbError::Construction(
                "support/weight length mismatch".into(),
            ));
        }
        for (i, w) in weights.iter().enumerate() {
            if !w.is_finite() || *w < 0.0 {
                return Err(RmbError::Construction(format!(
                    "weight at index {i} is negative or non-finite: {w}"
                )));
            }
        }
        Ok(WeightedMeasure { support, weights })
    }

    pub fn support(&self) -> &[State] {
        &self.support
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn total_mass(&self) -> f64 {
        self.weights.iter().sum()
    }

    pub fn normalize(&self) -> Result<Posterior> {
        let mass = self.total_mass();
        if !(mass > 0.0) || !mass.is_finite() {
            return Err(RmbError::Numeric(format!(
                "cannot normalize measure with total mass {mass}"
            )));
        }
        Posterior::from_weights(
            self.support.clone(),
            self.weights.iter().map(|w| w / mass).collect(),
        )
    }
}

impl Posterior {
    /// Build from already normalized weights; enforces the sum-to-one
    /// invariant at 1e-12 and renormalizes the residual rounding.
    pub fn from_weights(support: Vec<State>, weights: Vec<f64>) -> Result<Self> {
        if support.len() != weights.len() {
            return Err(RmbError::Construction(
                "support/weight length mismatch".into(),
            ));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > NORMALIZATION_TOL {
            return Err(RmbError::Numeric(format!(
                "posterior weights sum to {total}, outside 1 +/- 1e-12"
            )));
        }
        for (i, w) in weights.iter().enumerate() {
            if !w.is_finite() || *w < 0.0 {
                return Err(RmbError::Numeric(format!(
                    "posterior weight at index {i} is invalid: {w}"
                )));
            }
        }
        Ok(Posterior { support, weights })
    }

    /// Normalize a vector of log-weights with max-shift, then exponentiate.
    pub fn from_log_weights(support: Vec<State>, log_weights: &[f64]) -> Result<Self> {
        let m = log_weights
            .iter()
            .cloned()
            .fold(f64::NEG_INFINITY, f64::max);
        if m == f64::NEG_INFINITY {
            return Err(RmbError::Numeric(
                "all posterior log-weights are -inf (observation incompatible with prior support)"
                    .into(),
            ));
        }
        let shifted: Vec<f64> = log_weights.iter().map(|lw| (lw - m).exp()).collect();
        let total: f64 = shifted.iter().sum();
        if !(total > 0.0) || !total.is_finite() {
            return Err(RmbError::Numeric(
                "posterior weights underflow after max-shift".into(),
            ));
        }
        Ok(Posterior {
            support,
            weights: shifted.iter().map(|w| w / total).collect(),
        })
    }

    pub fn support(&self) -> &[State] {
        &self.support
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.support.len()
    }

    pub fn is_empty(&self) -> bool {
        self.support.is_empty()
    }

    /// Weight of the atom equal to `state`, 0 if not in the support.
    pub fn mass_at(&self, state: &State) -> f64 {
        self.support
            .iter()
            .position(|s| s == state)
            .map(|i| self.weights[i])
            .unwrap_or(0.0)
    }
}

/// Expectation of f under a finitely supported measure given as parallel
/// support/weight slices. For a posterior this is pi_t(f); for an
/// unnormalized measure it is rho_t(f).
pub fn expectation_of<F>(support: &[State], weights: &[f64], f: F) -> Result<f64>
where
    F: Fn(&State) -> f64,
{
    if support.is_empty() {
        return Err(RmbError::Domain("expectation over an empty measure".into()));
    }
    let mut acc = 0.0;
    for (s, w) in support.iter().zip(weights) {
        let v = f(s);
        if !v.is_finite() {
            return Err(RmbError::Numeric(format!(
                "payoff is non-finite at support point {s}"
            )));
        }
        acc += v * w;
    }
    Ok(acc)
}

impl Posterior {
    pub fn expectation<F: Fn(&State) -> f64>(&self, f: F) -> Result<f64> {
        expectation_of(&self.support, &self.weights, f)
    }
}

impl Prior {
    pub fn expectation<F: Fn(&State) -> f64>(&self, f: F) -> Result<f64> {
        expectation_of(&self.support, &self.weights, f)
    }
}

impl WeightedMeasure {
    pub fn expectation<F: Fn(&State) -> f64>(&self, f: F) -> Result<f64> {
        expectation_of(&self.support, &self.weights, f)
    }
}

/// Total variation distance between posteriors sharing the same support in
/// the same order.
pub fn total_variation(a: &Posterior, b: &Posterior) -> Result<f64> {
    if a.support != b.support {
        return Err(RmbError::Domain(
            "total variation requires identical supports in identical order".into(),
        ));
    }
    Ok(0.5
        * a.weights
            .iter()
            .zip(&b.weights)
            .map(|(x, y)| (x - y).abs())
            .sum::<f64>())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn pts(vals: &[f64]) -> Vec<State> {
        vals.iter().map(|v| State::scalar(*v)).collect()
    }

    #[test]
    fn atomic_prior_normalizes_equal_weights() {
        let p = Prior::atomic(pts(&[-1.0, 1.0]), vec![1.0, 1.0]).unwrap();
        assert_eq!(p.weights(), &[0.5, 0.5]);
    }

    #[test]
    fn atomic_prior_single_atom() {
        let p = Prior::atomic(pts(&[0.7]), vec![5.0]).unwrap();
        assert_eq!(p.weights(), &[1.0]);
    }

    #[test]
    fn atomic_prior_quarter_three_quarters() {
        let p = Prior::atomic(pts(&[0.0, 1.0]), vec![1.0, 3.0]).unwrap();
        assert_eq!(p.weights(), &[0.25, 0.75]);
    }

    #[test]
    fn atomic_prior_rejects_negative_weight() {
        let err = Prior::atomic(pts(&[0.0, 1.0]), vec![1.0, -1.0]).unwrap_err();
        assert!(err.to_string().contains("index 1"), "{err}");
    }

    #[test]
    fn atomic_prior_rejects_duplicates_and_zero_mass() {
        assert!(Prior::atomic(pts(&[1.0, 1.0]), vec![1.0, 1.0]).is_err());
        assert!(Prior::atomic(pts(&[0.0, 1.0]), vec![0.0, 0.0]).is_err());
    }

    #[test]
    fn density_prior_gaussian_moments() {
        let norm =
            |x: &DVector<f64>| (-0.5 * x[0] * x[0]).exp() / (2.0 * std::f64::consts::PI).sqrt();
        let p = Prior::from_density(norm, 64, &[(-8.0, 8.0)]).unwrap();
        let mean = p.expectation(|s| s.value()).unwrap();
        assert_abs_diff_eq!(mean, 0.0, epsilon = 1e-10);
        let var = p.expectation(|s| s.value() * s.value()).unwrap();
        assert_abs_diff_eq!(var, 1.0, epsilon = 1e-10);
    }

    #[test]
    fn density_prior_uniform_moments() {
        let p = Prior::from_density(|_| 1.0, 2, &[(0.0, 1.0)]).unwrap();
        assert_abs_diff_eq!(p.expectation(|s| s.value()).unwrap(), 0.5, epsilon = 1e-14);
        let p8 = Prior::from_density(|_| 1.0, 8, &[(0.0, 1.0)]).unwrap();
        let m2 = p8.expectation(|s| s.value() * s.value()).unwrap();
        assert_abs_diff_eq!(m2, 1.0 / 3.0, epsilon = 1e-12);
    }

    #[test]
    fn density_prior_rejects_negative_density() {
        assert!(Prior::from_density(|x| -x[0], 4, &[(0.5, 1.0)]).is_err());
    }

    #[test]
    fn expectation_examples() {
        let p = Posterior::from_weights(pts(&[-1.0, 1.0]), vec![0.5, 0.5]).unwrap();
        assert_eq!(p.expectation(|s| s.value()).unwrap(), 0.0);

        let d = Posterior::from_weights(pts(&[2.0]), vec![1.0]).unwrap();
        assert_eq!(d.expectation(|s| s.value() * s.value()).unwrap(), 4.0);

        let m = WeightedMeasure::new(pts(&[0.0, 1.0]), vec![2.0, 2.0]).unwrap();
        assert_eq!(m.expectation(|s| s.value()).unwrap(), 2.0);
    }

    #[test]
    fn expectation_rejects_non_finite_payoff() {
        let p = Posterior::from_weights(pts(&[0.0, 1.0]), vec![0.5, 0.5]).unwrap();
        let err = p.expectation(|s| 1.0 / s.value()).unwrap_err();
        assert!(err.to_string().contains("0"), "{err}");
    }

    #[test]
    fn total_variation_examples() {
        let s = pts(&[-1.0, 1.0]);
        let a = Posterior::from_weights(s.clone(), vec![1.0, 0.0]).unwrap();
        let b = Posterior::from_weights(s.clone(), vec![0.0, 1.0]).unwrap();
        assert_eq!(total_variation(&a, &a).unwrap(), 0.0);
        assert_eq!(total_variation(&a, &b).unwrap(), 1.0);
        let c = Posterior::from_weights(s.clone(), vec![0.75, 0.25]).unwrap();
        let d = Posterior::from_weights(s, vec![0.5, 0.5]).unwrap();
        assert_abs_diff_eq!(total_variation(&c, &d).unwrap(), 0.25, epsilon = 1e-15);
    }

    #[test]
    fn total_variation_rejects_mismatched_support() {
        let a = Posterior::from_weights(pts(&[-1.0, 1.0]), vec![0.5, 0.5]).unwrap();
        let b = Posterior::from_weights(pts(&[0.0, 1.0]), vec![0.5, 0.5]).unwrap();
        assert!(total_variation(&a, &b).is_err());
    }

    #[test]
    fn log_weight_normalization_survives_huge_magnitudes() {
        let p = Posterior::from_log_weights(pts(&[-1.0, 1.0]), &[-1000.0, -1000.0]).unwrap();
        assert_abs_diff_eq!(p.weights()[0], 0.5, epsilon = 1e-15);
    }
}
