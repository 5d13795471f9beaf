//! Independent oracles shared by the integration tests.

#![allow(dead_code)]

use adpinn::domain::{DomainSpec, IC_VARIANCE};
use adpinn::loss::FieldModel;
use adpinn::network::{forward, jet, Batch, BatchOutput, Jet, NetworkParams};

/// Free-space Gaussian plume with hand-derived partials.
pub struct GaussianOracle {
    pub spec: DomainSpec,
}

impl GaussianOracle {
    pub fn jet(&self, t: f64, x: f64, y: f64) -> Jet<f64> {
        let (d, vx, vy) = (self.spec.diffusion_d, self.spec.vel_x, self.spec.vel_y);
        let s = IC_VARIANCE + 2.0 * d * t;
        let (ex, ey) = (x - 0.5 - vx * t, y - 0.5 - vy * t);
        let q = ex * ex + ey * ey;
        let u = IC_VARIANCE / s * (-q / (2.0 * s)).exp();
        Jet {
            u,
            du_dt: u * (-2.0 * d / s + (ex * vx + ey * vy) / s + d * q / (s * s)),
            du_dx: -u * ex / s,
            du_dy: -u * ey / s,
            d2u_dx2: u * (ex * ex / (s * s) - 1.0 / s),
            d2u_dy2: u * (ey * ey / (s * s) - 1.0 / s),
        }
    }
}

impl FieldModel<f64> for GaussianOracle {
    fn evaluate(&self, batch: &Batch<f64>) -> BatchOutput<f64> {
        BatchOutput {
            jets: batch.jet_points.iter().map(|p| self.jet(p[0], p[1], p[2])).collect(),
            values: batch.value_points.iter().map(|p| self.jet(p[0], p[1], p[2]).u).collect(),
        }
    }
}

/// `|a - b| / max(|b|, floor)`.
pub fn rel_err(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / b.abs().max(floor)
}

/// Jet components by Richardson-extrapolated central differences.
pub fn fd_jet(p: &NetworkParams<f64>, pt: [f64; 3]) -> Jet<f64> {
    let at = |axis: usize, d: f64| {
        let mut q = pt;
        q[axis] += d;
        forward(p, q[0], q[1], q[2])
    };
    let first = |axis: usize| {
        let c = |h: f64| (at(axis, h) - at(axis, -h)) / (2.0 * h);
        let h = 1e-3;
        (4.0 * c(h / 2.0) - c(h)) / 3.0
    };
    let second = |axis: usize| {
        let u0 = at(axis, 0.0);
        let c = |h: f64| (at(axis, h) - 2.0 * u0 + at(axis, -h)) / (h * h);
        let h = 1e-2;
        (4.0 * c(h / 2.0) - c(h)) / 3.0
    };
    Jet {
        u: at(0, 0.0),
        du_dt: first(0),
        du_dx: first(1),
        du_dy: first(2),
        d2u_dx2: second(1),
        d2u_dy2: second(2),
    }
}

/// Largest relative error over the six jet components, with the floor
/// scaled to the largest component.
pub fn jet_error(p: &NetworkParams<f64>, pt: [f64; 3]) -> f64 {
    let exact = jet(p, pt[0], pt[1], pt[2]).components();
    let fd = fd_jet(p, pt).components();
    let scale = fd.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    exact.iter().zip(&fd).map(|(a, b)| rel_err(*a, *b, 1e-3 * scale.max(1e-3))).fold(0.0, f64::max)
}
