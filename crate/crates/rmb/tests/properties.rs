//! Property tests for the measure algebra and kernel catalogue: invariants
//! that must hold for arbitrary well-formed inputs, not just the worked
//! examples in the unit tests.

use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

use rmb::filter::{self, FilterInput};
use rmb::kernels::Kernel;
use rmb::statespace::{expectation_of, total_variation, Posterior, Prior, State};

fn weights(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(1e-3..1.0f64, n)
}

fn distinct_points(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-5.0..5.0f64, n).prop_map(|mut v| {
        v.sort_by(f64::total_cmp);
        for i in 1..v.len() {
            if v[i] - v[i - 1] < 1e-3 {
                v[i] = v[i - 1] + 1e-3;
            }
        }
        v
    })
}

fn normalised(support: Vec<State>, w: Vec<f64>) -> Posterior {
    let total: f64 = w.iter().sum();
    Posterior::from_weights(support, w.iter().map(|x| x / total).collect()).unwrap()
}

fn posterior_pair(n: usize) -> impl Strategy<Value = (Posterior, Posterior)> {
    (distinct_points(n), weights(n), weights(n)).prop_map(|(pts, wa, wb)| {
        let support: Vec<State> = pts.iter().map(|&x| State::scalar(x)).collect();
        (normalised(support.clone(), wa), normalised(support, wb))
    })
}

fn brownian(sigma: f64) -> Kernel {
    Kernel::brownian(
        DVector::zeros(1),
        DMatrix::from_element(1, 1, sigma),
        1.0,
        vec![(-8.0, 8.0)],
    )
    .unwrap()
}

proptest! {
    #[test]
    fn tv_is_a_metric_bounded_by_one((a, b) in posterior_pair(4)) {
        let d = total_variation(&a, &b).unwrap();
        prop_assert!((0.0..=1.0 + 1e-12).contains(&d));
        let sym = total_variation(&b, &a).unwrap();
        prop_assert!((d - sym).abs() < 1e-15);
        prop_assert!(total_variation(&a, &a).unwrap() == 0.0);
    }

    #[test]
    fn tv_triangle_inequality(
        (a, b) in posterior_pair(4),
        wc in weights(4),
    ) {
        let c = normalised(a.support().to_vec(), wc);
        let ab = total_variation(&a, &b).unwrap();
        let bc = total_variation(&b, &c).unwrap();
        let ac = total_variation(&a, &c).unwrap();
        prop_assert!(ac <= ab + bc + 1e-12);
    }

    #[test]
    fn posterior_weights_normalise((a, _) in posterior_pair(5)) {
        let total: f64 = a.weights().iter().sum();
        prop_assert!((total - 1.0).abs() < 1e-12);
        prop_assert!(a.weights().iter().all(|w| *w >= 0.0));
    }

    #[test]
    fn expectation_is_linear((a, _) in posterior_pair(4), alpha in -3.0..3.0f64, beta in -3.0..3.0f64) {
        let f = |s: &State| s.value();
        let g = |s: &State| s.value().powi(2);
        let lhs = expectation_of(a.support(), a.weights(), |s| alpha * f(s) + beta * g(s)).unwrap();
        let rhs = alpha * expectation_of(a.support(), a.weights(), f).unwrap()
            + beta * expectation_of(a.support(), a.weights(), g).unwrap();
        prop_assert!((lhs - rhs).abs() < 1e-9 * (1.0 + lhs.abs()));
    }

    #[test]
    fn kernel_density_positive_and_score_matches_log_gradient(
        sigma in 0.3..2.0f64,
        t in 0.05..0.9f64,
        x in -2.0..2.0f64,
        y in -2.0..2.0f64,
    ) {
        let kernel = brownian(sigma);
        let (xs, ys) = (State::scalar(x), State::scalar(y));
        let p = kernel.density(t, &xs, &ys).unwrap();
        prop_assert!(p > 0.0 && p.is_finite());
        // the score is the gradient in the starting point
        let h = 1e-5;
        let fd = (kernel.log_density(t, &State::scalar(x + h), &ys).unwrap()
            - kernel.log_density(t, &State::scalar(x - h), &ys).unwrap())
            / (2.0 * h);
        let score = kernel.score(t, &xs, &ys).unwrap()[0];
        prop_assert!((score - fd).abs() < 1e-5 * (1.0 + score.abs()));
    }

    #[test]
    fn kernel_semigroup_under_quadrature(
        sigma in 0.5..1.5f64,
        s in 0.1..0.4f64,
        t in 0.1..0.4f64,
        x in -1.0..1.0f64,
        z in -1.0..1.0f64,
    ) {
        let kernel = brownian(sigma);
        let r = kernel
            .ck_residual(s, t, &State::scalar(x), &State::scalar(z), 256)
            .unwrap();
        prop_assert!(r <= 1e-7, "residual {r:e}");
    }

    #[test]
    fn posterior_matches_direct_bayes_for_two_atoms(
        t in 0.05..0.9f64,
        zt in -1.5..1.5f64,
        w in 0.05..0.95f64,
    ) {
        let kernel = brownian(1.0);
        let prior = Prior::atomic(
            vec![State::scalar(-1.0), State::scalar(1.0)],
            vec![w, 1.0 - w],
        )
        .unwrap();
        let z0 = State::scalar(0.0);
        let obs = State::scalar(zt);
        let input = FilterInput::new(&kernel, &prior, &z0, t, &obs).unwrap();
        let posterior = filter::posterior(&input).unwrap();
        // direct Bayes with the likelihood ratio written out by hand
        let lik = |pin: f64| {
            let tail = (-(pin - zt).powi(2) / (2.0 * (1.0 - t))).exp() / (1.0 - t).sqrt();
            let full = (-pin.powi(2) / 2.0).exp();
            tail / full
        };
        let (la, lb) = (w * lik(-1.0), (1.0 - w) * lik(1.0));
        let expected = lb / (la + lb);
        let got = posterior.mass_at(&State::scalar(1.0));
        prop_assert!((got - expected).abs() < 1e-10, "{got} vs {expected}");
    }
}
