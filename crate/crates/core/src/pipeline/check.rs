//! Self-tests against finite differences and closed forms.

use rand::Rng as _;
use rand_distr::{Distribution, Uniform};

use crate::analysis::{ks_critical_1pct, ks_statistic, pushforward_histogram, Component, HistogramSpec};
use crate::autodiff::Dirs;
use crate::network::{NetworkConfig, Potential, PotentialNetwork, TrunkMode};
use crate::problems::{evaluate, loss_and_gradient, Case, LossWeights, ProblemSpec, Samples};
use crate::sampling::{gaussian_mass, stochastic_meshgrid, stream_rng, uniform_grid, Axis, AxisKind, GridSpec, MeshgridSpec, Rng, Stream};
use crate::scalar::Real;

#[derive(Clone, Debug, PartialEq)]
pub struct CheckRow {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl CheckRow {
    fn new(name: &'static str, passed: bool, detail: String) -> Self {
        Self { name, passed, detail }
    }
}

/// A small network with every parameter drawn uniformly from `[−1, 1]`.
pub fn random_network(rng: &mut Rng, input_dim: usize, seed: u64) -> PotentialNetwork<f64> {
    let cfg = NetworkConfig {
        input_dim,
        depth: rng.random_range(1..=3),
        hidden_width: rng.random_range(2..=6),
        trunk_mode: if rng.random_bool(0.5) {
            TrunkMode::LiteralBlock
        } else {
            TrunkMode::LiftedTrunk
        },
        seed,
    };
    let mut net = PotentialNetwork::init_xavier(cfg).expect("valid config");
    let u = Uniform::new_inclusive(-1.0, 1.0).expect("valid range");
    for p in net.params_mut().as_mut_slice() {
        *p = u.sample(rng);
    }
    net
}

fn random_point(rng: &mut Rng, dim: usize) -> Vec<f64> {
    let physical = dim / 2;
    (0..dim)
        .map(|k| {
            if k < physical {
                rng.random_range(0.0..1.0)
            } else {
                rng.random_range(-2.0..2.0)
            }
        })
        .collect()
}

/// Worst relative errors `(first, mixed)` of network input partials against
/// central differences over `nets` random networks and inputs.
pub fn input_partial_errors(nets: usize, seed: u64) -> (f64, f64) {
    let mut rng = stream_rng(seed, Stream::Worker(0));
    let (mut first, mut mixed) = (0.0f64, 0.0f64);
    let rel = |a: f64, fd: f64| (a - fd).abs() / fd.abs().max(1e-3);
    for k in 0..nets {
        let dim = if k % 2 == 0 { 2 } else { 4 };
        let net = random_network(&mut rng, dim, k as u64);
        let x = random_point(&mut rng, dim);
        let f = |p: &[f64]| net.eval(p).expect("dimension matches");
        let shifted = |moves: &[(usize, f64)]| {
            let mut p = x.clone();
            for &(i, d) in moves {
                p[i] += d;
            }
            f(&p)
        };
        for i in 0..dim {
            for j in i..dim {
                let jet = net.forward_jet(&x, Dirs::new(i, j)).expect("dimension matches");
                let h = 1e-5;
                let fd_i = (shifted(&[(i, h)]) - shifted(&[(i, -h)])) / (2.0 * h);
                first = first.max(rel(jet.d1[0], fd_i));
                let second = |h: f64| {
                    if i == j {
                        (shifted(&[(i, h)]) - 2.0 * f(&x) + shifted(&[(i, -h)])) / (h * h)
                    } else {
                        (shifted(&[(i, h), (j, h)]) - shifted(&[(i, h), (j, -h)]) - shifted(&[(i, -h), (j, h)])
                            + shifted(&[(i, -h), (j, -h)]))
                            / (4.0 * h * h)
                    }
                };
                // Richardson step on h = 2e-3, 1e-3
                let fd_ij = (4.0 * second(1e-3) - second(2e-3)) / 3.0;
                mixed = mixed.max(rel(jet.d12, fd_ij));
            }
        }
    }
    (first, mixed)
}

fn tiny_samples(case: Case, rng: &mut Rng) -> Samples<f64> {
    if case.is_planar() {
        let spec = MeshgridSpec::unit_square(crate::sampling::LatentSampling::WeightedUniform);
        let interior = stochastic_meshgrid(&spec, 3, rng).expect("positive size");
        Samples::with_boundary(interior, uniform_grid(&GridSpec::square(3, 2)).expect("valid grid"))
    } else {
        Samples::grid(uniform_grid(&GridSpec::line(4, 4)).expect("valid grid"))
    }
}

/// Worst relative error of each loss term's parameter gradient against
/// central differences over `nets` random networks, cycling through cases.
pub fn loss_gradient_error(nets: usize, seed: u64) -> f64 {
    let mut rng = stream_rng(seed, Stream::Worker(1));
    let terms = [
        LossWeights { energy: 1.0, boundary: 0.0, curl: 0.0 },
        LossWeights { energy: 0.0, boundary: 1.0, curl: 0.0 },
        LossWeights { energy: 0.0, boundary: 0.0, curl: 1.0 },
    ];
    let mut worst = 0.0f64;
    for k in 0..nets {
        let case = Case::ALL[k % 4];
        let problem = ProblemSpec::new(case);
        let net = random_network(&mut rng, case.input_dim(), k as u64);
        let samples = tiny_samples(case, &mut rng);
        for w in &terms {
            let (_, grad) = loss_and_gradient(&problem, &net, &samples, w).expect("consistent inputs");
            let h = 1e-5;
            let fd: Vec<f64> = (0..grad.len())
                .map(|i| {
                    let at = |d: f64| {
                        let mut n = net.clone();
                        n.params_mut().as_mut_slice()[i] += d;
                        evaluate(&problem, &n, &samples, w).expect("consistent inputs").total
                    };
                    (at(h) - at(-h)) / (2.0 * h)
                })
                .collect();
            let scale = fd.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            if scale == 0.0 {
                continue;
            }
            for (g, d) in grad.iter().zip(&fd) {
                worst = worst.max((g - d).abs() / d.abs().max(1e-3 * scale));
            }
        }
    }
    worst
}

/// Trapezoid Gaussian mass of the 201-node latent axis and its closed form.
pub fn quadrature_mass() -> (f64, f64) {
    let axis = Axis::new(AxisKind::Xi, -2.0, 2.0, 201);
    let exact = (2.0 * std::f64::consts::PI).sqrt() * (f64::normal_cdf(2.0) - f64::normal_cdf(-2.0));
    (gaussian_mass(&axis), exact)
}

/// KS distance of the identity pushforward `∂(ξ²/2)/∂ξ` from the standard
/// normal, and the 1% critical value.
pub fn identity_pushforward_ks(count: usize, seed: u64) -> (f64, f64) {
    let pot = crate::network::JetFn::new(2, |p: &[crate::autodiff::Jet2<f64>]| p[1] * p[1] * crate::autodiff::Jet2::constant(0.5));
    debug_assert_eq!(Potential::<f64>::input_dim(&pot), 2);
    let mut rng = stream_rng(seed, Stream::Analysis);
    let m = pushforward_histogram(&pot, &[0.5], Component::Xi, count, &HistogramSpec::default(), &mut rng)
        .expect("valid inputs");
    (ks_statistic(&m.samples, f64::normal_cdf), ks_critical_1pct(count))
}

/// The checks behind the `check` command.
pub fn self_check(seed: u64) -> Vec<CheckRow> {
    let (first, mixed) = input_partial_errors(40, seed);
    let grad = loss_gradient_error(8, seed);
    let (mass, exact) = quadrature_mass();
    let (d, crit) = identity_pushforward_ks(10_000, seed);
    vec![
        CheckRow::new("input partials vs central differences", first <= 1e-5, format!("max rel err {first:.2e} (tol 1e-5)")),
        CheckRow::new("mixed partials vs central differences", mixed <= 1e-3, format!("max rel err {mixed:.2e} (tol 1e-3)")),
        CheckRow::new("loss gradients vs central differences", grad <= 1e-4, format!("max rel err {grad:.2e} (tol 1e-4)")),
        CheckRow::new(
            "latent quadrature mass",
            (mass - exact).abs() <= 1e-3,
            format!("{mass:.6} vs {exact:.6} (tol 1e-3)"),
        ),
        CheckRow::new("identity pushforward KS", d < crit, format!("D = {d:.4} (1% critical {crit:.4})")),
    ]
}

pub fn format_table(rows: &[CheckRow]) -> String {
    let width = rows.iter().map(|r| r.name.len()).max().unwrap_or(0);
    rows.iter()
        .map(|r| format!("{:<width$}  {}  {}\n", r.name, if r.passed { "PASS" } else { "FAIL" }, r.detail))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn self_check_passes() {
        let rows = self_check(1);
        assert_eq!(rows.len(), 5);
        for r in &rows {
            assert!(r.passed, "{}: {}", r.name, r.detail);
        }
        assert_eq!(format_table(&rows).lines().count(), 5);
    }

    #[test]
    fn input_partials_hold_over_many_networks() {
        let (first, mixed) = input_partial_errors(200, 2024);
        assert!(first <= 1e-5 && mixed <= 1e-3, "{first} {mixed}");
    }
}
