use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use ymeasure::autodiff::{Dirs, Role};
use ymeasure::network::{NetworkConfig, PotentialNetwork, TrunkMode};
use ymeasure::Real;

fn frobenius(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Largest slope of GELU, attained at x = √2.
fn gelu_lipschitz() -> f64 {
    (0..=100_000)
        .map(|k| -10.0 + 20.0 * k as f64 / 100_000.0)
        .map(|x| f64::gelu_derivatives(x)[1].abs())
        .fold(0.0, f64::max)
}

/// `Π (1 + L²‖W²‖‖W¹‖) · ‖head‖ · ‖lift‖`.
fn lipschitz_bound(net: &PotentialNetwork<f64>) -> f64 {
    let p = net.params();
    let layout = net.layout();
    let l = gelu_lipschitz();
    let mut bound = frobenius(p.slice(Role::HeadWeight));
    if layout.lifted {
        bound *= frobenius(p.slice(Role::LiftWeight));
    }
    for b in 0..layout.depth {
        bound *= 1.0 + l * l * frobenius(p.slice(Role::Weight1(b))) * frobenius(p.slice(Role::Weight2(b)));
    }
    bound
}

#[test]
fn gelu_slope_constant() {
    let l = gelu_lipschitz();
    assert!((l - 1.1289).abs() < 1e-3, "{l}");
}

#[test]
fn finite_difference_slopes_respect_the_operator_norm_bound() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for (k, mode) in [TrunkMode::LiteralBlock, TrunkMode::LiftedTrunk].into_iter().cycle().take(8).enumerate() {
        let dim = if k % 4 < 2 { 2 } else { 4 };
        let mut net = PotentialNetwork::<f64>::init_xavier(NetworkConfig {
            input_dim: dim,
            depth: 1 + k % 4,
            hidden_width: 25,
            trunk_mode: mode,
            seed: k as u64,
        })
        .unwrap();
        for v in net.params_mut().as_mut_slice() {
            *v *= 1.5;
        }
        let bound = lipschitz_bound(&net);
        let probe: Vec<Vec<f64>> = (0..100)
            .map(|_| (0..dim).map(|_| rng.random_range(-2.0..2.0)).collect())
            .collect();
        let mut worst = 0.0f64;
        for a in &probe {
            for b in &probe {
                let dist = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
                if dist > 0.0 {
                    let slope = (net.eval(a).unwrap() - net.eval(b).unwrap()).abs() / dist;
                    worst = worst.max(slope);
                }
            }
            let grad: f64 = (0..dim)
                .map(|i| net.forward_jet(a, Dirs::new(i, i)).unwrap().d1[0].powi(2))
                .sum::<f64>()
                .sqrt();
            worst = worst.max(grad);
        }
        assert!(worst <= bound, "net {k}: slope {worst} > bound {bound}");
    }
}

#[test]
fn f32_and_f64_networks_agree() {
    let cfg = NetworkConfig::new(4);
    let a = PotentialNetwork::<f64>::init_xavier(cfg).unwrap();
    let b = PotentialNetwork::<f32>::init_xavier(cfg).unwrap();
    for p in [[0.1, 0.9, -1.0, 0.5], [0.5, 0.5, 0.0, 0.0], [1.0, 0.0, 2.0, -2.0]] {
        let q = p.map(|v| v as f32);
        let x = a.eval(&p).unwrap();
        let y = b.eval(&q).unwrap() as f64;
        assert!((x - y).abs() < 1e-4 * x.abs().max(1.0), "{x} vs {y}");
    }
}
