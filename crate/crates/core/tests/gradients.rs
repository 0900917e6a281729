mod common;

use std::f64::consts::{PI, SQRT_2};

use lowrankdyn::mlp::{Activation, LossKind};

#[test]
fn analytic_gradients_match_central_differences() {
    for act in [Activation::ELU, Activation::Gelu, Activation::Silu] {
        for loss in [LossKind::Squared, LossKind::CrossEntropy] {
            for seed in 0..20 {
                let err = common::gradient_error(act, loss, seed);
                assert!(err < 1e-5, "{act} {loss:?} seed {seed}: relative error {err}");
            }
        }
    }
}

fn std_normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * PI).sqrt()
}

#[test]
fn gelu_bounds_match_closed_form() {
    // φ' = Φ + xϕ peaks at x = √2; |φ''| = ϕ·|2 − x²| peaks at the origin.
    let beta = 0.5 * (1.0 + libm::erf(1.0)) + SQRT_2 * std_normal_pdf(SQRT_2);
    let mu = 2.0 * std_normal_pdf(0.0);
    let b = Activation::Gelu.bounds();
    assert!(b.beta >= beta && b.beta - beta < 1e-5, "beta {} vs {beta}", b.beta);
    assert!((b.mu.unwrap() - mu).abs() < 1e-5, "mu {:?} vs {mu}", b.mu);
    assert_eq!(b.dphi0, 0.5);
}

#[test]
fn silu_and_elu_bounds_match_closed_form() {
    // Root of SiLU'' on the positive axis, solved numerically.
    let x0 = 2.399_357_280_515_467_f64;
    let sig = 1.0 / (1.0 + (-x0).exp());
    let peak = sig * (1.0 + x0 * (1.0 - sig));
    let s = Activation::Silu.bounds();
    assert!((s.beta - peak).abs() < 1e-5, "silu beta {}", s.beta);
    assert!((s.mu.unwrap() - 0.5).abs() < 1e-5, "silu mu {:?}", s.mu);
    let e = Activation::ELU.bounds();
    assert!((e.beta - 1.0).abs() < 1e-5);
    assert!((e.mu.unwrap() - 1.0).abs() < 1e-2);
}

#[test]
fn binomial_oracle_matches_library() {
    for (n, q) in [(200, 0.9), (100, 0.95), (50, 0.5)] {
        assert_eq!(lowrankdyn::theory::binomial_threshold(n, q), common::binomial_floor(n, q));
    }
}
