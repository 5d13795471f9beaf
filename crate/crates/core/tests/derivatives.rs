//! Jet partials and parameter gradients against central finite differences.

use adpinn::network::{
    forward, init_params, jet, loss_and_param_gradient, Batch, BatchOutput, Jet, NetworkConfig, NetworkParams,
};
use adpinn::rng;
use rand::Rng;

fn rel_err(a: f64, b: f64, scale: f64) -> f64 {
    (a - b).abs() / b.abs().max(scale)
}

/// Central differences of `u` along one input axis, first and second order.
fn fd_partials(p: &NetworkParams<f64>, pt: [f64; 3], axis: usize, h: f64) -> (f64, f64) {
    let at = |d: f64| {
        let mut q = pt;
        q[axis] += d;
        forward(p, q[0], q[1], q[2])
    };
    let (up, u0, um) = (at(h), at(0.0), at(-h));
    ((up - um) / (2.0 * h), (up - 2.0 * u0 + um) / (h * h))
}

#[test]
fn two_layer_jet_matches_finite_differences() {
    let p: NetworkParams<f64> = init_params(NetworkConfig::new(2, 8), 17);
    let mut r = rng::stream(3);
    for _ in 0..20 {
        let pt = [r.random::<f64>() * 0.25, r.random(), r.random()];
        let j = jet(&p, pt[0], pt[1], pt[2]);
        let (dt, _) = fd_partials(&p, pt, 0, 1e-4);
        let (dx, _) = fd_partials(&p, pt, 1, 1e-4);
        let (dy, _) = fd_partials(&p, pt, 2, 1e-4);
        let (_, dxx) = fd_partials(&p, pt, 1, 1e-3);
        let (_, dyy) = fd_partials(&p, pt, 2, 1e-3);
        let scale = 1e-3;
        for (a, b) in [(j.du_dt, dt), (j.du_dx, dx), (j.du_dy, dy), (j.d2u_dx2, dxx), (j.d2u_dy2, dyy)] {
            assert!(rel_err(a, b, scale) <= 1e-5, "jet {a} vs fd {b}");
        }
    }
}

#[test]
fn residual_loss_gradient_matches_finite_differences() {
    let cfg = NetworkConfig::new(2, 6);
    let p: NetworkParams<f64> = init_params(cfg, 5);
    let mut r = rng::stream(8);
    let points: Vec<[f64; 3]> = (0..8).map(|_| [r.random::<f64>() * 0.25, r.random(), r.random()]).collect();
    let (vx, vy, d) = (0.5, 0.5, 0.01);
    let residual = |j: &Jet<f64>| j.du_dt + vx * j.du_dx + vy * j.du_dy - d * (j.d2u_dx2 + j.d2u_dy2);
    let loss_at = |q: &NetworkParams<f64>| {
        points.iter().map(|pt| residual(&jet(q, pt[0], pt[1], pt[2])).powi(2)).sum::<f64>() / points.len() as f64
    };

    let batch = Batch { jet_points: points.clone(), value_points: vec![] };
    let n = points.len() as f64;
    let (loss, grad) = loss_and_param_gradient(&p, &batch, |out| {
        let mut seeds = BatchOutput::zeros_like(&batch);
        let mut total = 0.0;
        for (j, s) in out.jets.iter().zip(&mut seeds.jets) {
            let r = residual(j);
            total += r * r;
            let g = 2.0 * r / n;
            s.du_dt = g;
            s.du_dx = vx * g;
            s.du_dy = vy * g;
            s.d2u_dx2 = -d * g;
            s.d2u_dy2 = -d * g;
        }
        (total / n, seeds)
    });
    assert!((loss - loss_at(&p)).abs() < 1e-14);

    let h = 1e-6;
    let gmax = grad.iter().fold(0.0f64, |m, g| m.max(g.abs()));
    for (i, g) in grad.iter().enumerate() {
        let mut plus = p.clone();
        plus.theta[i] += h;
        let mut minus = p.clone();
        minus.theta[i] -= h;
        let fd = (loss_at(&plus) - loss_at(&minus)) / (2.0 * h);
        assert!(rel_err(*g, fd, 1e-3 * gmax) <= 1e-4, "theta[{i}]: {g} vs {fd}");
    }
}
