//! End-to-end discovery through the public API: synthetic data, a GP problem,
//! training and prediction.

use fracgp::kernels::QuadratureConfig;
use fracgp::likelihood::{default_transforms, posterior_predict, Framework, GpProblem, Target};
use fracgp::operators::{MultiplierKind, OperatorSpec};
use fracgp::optimize::{train, TrainOptions};
use fracgp::spectral::SpectralDensity;
use fracgp::synth::{fractional_poisson_rhs_1d, gaussian_bump, latin_hypercube};

const ALPHA: f64 = std::f64::consts::SQRT_2;
const COEFF: f64 = 1.25;

fn problem() -> GpProblem {
    let sites_u = latin_hypercube(7, 1, -2.0, 2.0, 1).unwrap();
    let sites_f = latin_hypercube(11, 1, -2.0, 2.0, 2).unwrap();
    let u: Vec<f64> = sites_u.iter().map(|s| gaussian_bump(s, 1)).collect();
    let f: Vec<f64> = sites_f.iter().map(|s| fractional_poisson_rhs_1d(s[0], ALPHA, COEFF).unwrap()).collect();
    let sd = SpectralDensity::matern(1.0, vec![1.0], vec![5.5]).unwrap();
    let op = OperatorSpec::single(MultiplierKind::FractionalLaplacian, 1.0, 0.5).unwrap();
    let table = default_transforms(Framework::TimeIndependent, &sd, &op, false, Some([1e-3, 1e-3])).unwrap();
    GpProblem::new(Framework::TimeIndependent, sites_u, u, sites_f, f, sd, op, table, QuadratureConfig::default())
        .unwrap()
}

#[test]
fn recovers_order_and_coefficient_of_a_fractional_poisson_equation() {
    let p = problem();
    let result = train(&p, &TrainOptions::default()).unwrap();
    let alpha = result.get("alpha").unwrap();
    let coeff = result.get("C").unwrap();
    assert!((alpha / ALPHA - 1.0).abs() < 0.01, "alpha = {alpha}");
    assert!((coeff / COEFF - 1.0).abs() < 0.01, "C = {coeff}");
    assert!(result.nlml.is_finite());

    // The posterior of u interpolates the bump between the design sites.
    let theta: Vec<f64> = result.params.iter().map(|(_, v)| *v).collect();
    let query: Vec<[f64; 2]> = (0..21).map(|i| [-1.5 + 0.15 * i as f64, 0.0]).collect();
    let pred = posterior_predict(&p, &theta, &query, Target::A).unwrap();
    for (q, (m, s)) in query.iter().zip(pred.mean.iter().zip(&pred.std)) {
        let exact = gaussian_bump(q, 1);
        assert!((m - exact).abs() < 0.05, "x = {}: {m} vs {exact}", q[0]);
        assert!((m - exact).abs() <= 3.0 * s + 1e-3, "x = {}: error {} with std {s}", q[0], m - exact);
    }
}
