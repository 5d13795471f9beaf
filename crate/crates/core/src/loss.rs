//! Training objective.
//!
//! ```text
//! total   = physics + w_ic · ic + w_data · data
//! physics = mean(residual²)            LHS collocation points
//!         + mean((û - ε_bc)²)          uniform points on the four edges
//!         + mean((û - IC·(1+ε_ic))²)   uniform points at t = 0
//! ic      = mean((û(0, ·) - IC)²)      grid nodes, clean initial condition
//! data    = mean((û - U_noisy)²)       space-time grid nodes
//! ```
//!
//! Every sample set and every symbolic noise draw is a pure function of
//! `(seed, iteration)`.

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::domain::{initial_condition, DomainSpec, GridSolution, NoiseSpec};
use crate::error::{Error, Result};
use crate::network::{loss_and_param_gradient, Batch, BatchOutput, Jet, NetworkParams};
use crate::real::{pairwise_sum, Real};
use crate::rng::{self, Normal};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub w_ic: f64,
    pub w_data: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { w_ic: 500.0, w_data: 10.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplingPlan {
    pub n_collocation: usize,
    pub n_bc_per_edge: usize,
    pub n_ic_symbolic: usize,
    pub data_batch: usize,
    pub ic_batch: usize,
    pub seed: u64,
}

impl Default for SamplingPlan {
    fn default() -> Self {
        Self { n_collocation: 200, n_bc_per_edge: 64, n_ic_symbolic: 256, data_batch: 1024, ic_batch: 1024, seed: 0 }
    }
}

impl SamplingPlan {
    pub fn validate(&self, data: &TrainingData) -> Result<()> {
        let counts = [self.n_collocation, self.n_bc_per_edge, self.n_ic_symbolic, self.data_batch, self.ic_batch];
        if counts.contains(&0) {
            return Err(Error::InvalidConfig(format!("all sampling counts must be >= 1, got {self:?}")));
        }
        if self.ic_batch > data.clean_ic.len() {
            return Err(Error::InvalidConfig(format!(
                "ic_batch {} exceeds the {} grid nodes",
                self.ic_batch,
                data.clean_ic.len()
            )));
        }
        if self.data_batch > data.noisy_field.values.len() {
            return Err(Error::InvalidConfig(format!(
                "data_batch {} exceeds the {} data points",
                self.data_batch,
                data.noisy_field.values.len()
            )));
        }
        Ok(())
    }
}

/// Targets for the two data terms.
#[derive(Debug, Clone)]
pub struct TrainingData {
    pub noisy_field: GridSolution,
    /// Level 0 of the clean solution.
    pub clean_ic: Vec<f64>,
}

impl TrainingData {
    pub fn new(clean: &GridSolution, noisy: GridSolution) -> Self {
        Self { clean_ic: clean.level(0).to_vec(), noisy_field: noisy }
    }

    /// `[t, x, y]` of a flat index into the space-time field.
    pub fn coords(&self, flat: usize) -> [f64; 3] {
        let f = &self.noisy_field;
        let n = f.grid.nodes_per_level();
        let (level, node) = (flat / n, flat % n);
        [f.time_of(level), f.x_of(node / f.grid.ny), f.y_of(node % f.grid.ny)]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub physics: f64,
    pub ic: f64,
    pub data: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn combine(physics: f64, ic: f64, data: f64, weights: &LossWeights) -> Self {
        Self { physics, ic, data, total: physics + weights.w_ic * ic + weights.w_data * data }
    }

    pub fn is_finite(&self) -> bool {
        self.total.is_finite()
    }
}

/// Advection-diffusion residual `u_t + v·∇u - D Δu`.
#[inline]
pub fn pde_residual<F: Real>(jet: &Jet<F>, spec: &DomainSpec) -> F {
    jet.du_dt + F::of(spec.vel_x) * jet.du_dx + F::of(spec.vel_y) * jet.du_dy
        - F::of(spec.diffusion_d) * (jet.d2u_dx2 + jet.d2u_dy2)
}

/// Latin hypercube sample of the space-time box: along each axis exactly one
/// point lands in each of the `n` equal strata.
pub fn sample_collocation_lhs(n: usize, spec: &DomainSpec, seed: u64) -> Vec<[f64; 3]> {
    let mut rng = rng::stream(seed);
    let extent = [spec.t_final, spec.x_max, spec.y_max];
    let mut points = vec![[0.0; 3]; n];
    for (axis, len) in extent.iter().enumerate() {
        let mut strata: Vec<usize> = (0..n).collect();
        rand::seq::SliceRandom::shuffle(strata.as_mut_slice(), &mut rng);
        for (p, s) in points.iter_mut().zip(strata) {
            p[axis] = (s as f64 + rng.random::<f64>()) / n as f64 * len;
        }
    }
    points
}

/// Anything that can produce network-shaped outputs for a batch. The
/// network is the main implementor; closed-form fields used as oracles in
/// tests implement it too.
pub trait FieldModel<F: Real> {
    fn evaluate(&self, batch: &Batch<F>) -> BatchOutput<F>;
}

impl<F: Real> FieldModel<F> for NetworkParams<F> {
    fn evaluate(&self, batch: &Batch<F>) -> BatchOutput<F> {
        crate::network::evaluate(self, batch)
    }
}

/// Points and targets drawn for one iteration.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct IterationSample {
    pub collocation: Vec<[f64; 3]>,
    pub bc: Vec<([f64; 3], f64)>,
    pub ic_symbolic: Vec<([f64; 3], f64)>,
    pub ic_batch: Vec<([f64; 3], f64)>,
    pub data_batch: Vec<([f64; 3], f64)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Parts {
    physics: bool,
    ic: bool,
    data: bool,
}

impl Parts {
    const ALL: Parts = Parts { physics: true, ic: true, data: true };
}

fn physics_sample(spec: &DomainSpec, plan: &SamplingPlan, noise: &NoiseSpec, iteration: u64, out: &mut IterationSample) {
    let it = iteration;
    out.collocation = sample_collocation_lhs(plan.n_collocation, spec, rng::derive_indexed(plan.seed, "collocation", it));

    let mut pos = rng::stream(rng::derive_indexed(plan.seed, "bc-points", it));
    let mut eps = Normal::new(rng::derive_indexed(noise.seed, "bc-noise", it));
    out.bc = Vec::with_capacity(4 * plan.n_bc_per_edge);
    for edge in 0..4 {
        for _ in 0..plan.n_bc_per_edge {
            let t = pos.random::<f64>() * spec.t_final;
            let along = pos.random::<f64>();
            let (x, y) = match edge {
                0 => (along * spec.x_max, 0.0),
                1 => (along * spec.x_max, spec.y_max),
                2 => (0.0, along * spec.y_max),
                _ => (spec.x_max, along * spec.y_max),
            };
            out.bc.push(([t, x, y], eps.scaled(noise.bc_abs_sigma)));
        }
    }

    let mut pos = rng::stream(rng::derive_indexed(plan.seed, "ic-points", it));
    let mut eps = Normal::new(rng::derive_indexed(noise.seed, "ic-noise", it));
    out.ic_symbolic = (0..plan.n_ic_symbolic)
        .map(|_| {
            let x = pos.random::<f64>() * spec.x_max;
            let y = pos.random::<f64>() * spec.y_max;
            ([0.0, x, y], initial_condition(x, y) * (1.0 + eps.scaled(noise.ic_rel_sigma)))
        })
        .collect();
}

fn ic_sample(data: &TrainingData, plan: &SamplingPlan, iteration: u64) -> Vec<([f64; 3], f64)> {
    let mut rng = rng::stream(rng::derive_indexed(plan.seed, "ic-batch", iteration));
    let n = data.clean_ic.len();
    let picks = if plan.ic_batch == n { (0..n).collect() } else { index::sample(&mut rng, n, plan.ic_batch).into_vec() };
    picks.into_iter().map(|i| (data.coords(i), data.clean_ic[i])).collect()
}

fn data_sample(data: &TrainingData, plan: &SamplingPlan, iteration: u64) -> Vec<([f64; 3], f64)> {
    let mut rng = rng::stream(rng::derive_indexed(plan.seed, "data-batch", iteration));
    let values = &data.noisy_field.values;
    index::sample(&mut rng, values.len(), plan.data_batch)
        .into_iter()
        .map(|i| (data.coords(i), values[i]))
        .collect()
}

/// Component means of one evaluation.
#[derive(Debug, Clone, Copy, Default)]
struct Terms {
    pde: f64,
    bc: f64,
    ic_symbolic: f64,
    ic: f64,
    data: f64,
}

impl Terms {
    fn physics(&self) -> f64 {
        self.pde + self.bc + self.ic_symbolic
    }
}

fn to_point<F: Real>(p: &[f64; 3]) -> [F; 3] {
    [F::of(p[0]), F::of(p[1]), F::of(p[2])]
}

struct Assembled<F> {
    batch: Batch<F>,
    /// `(start, len)` of the bc, symbolic ic, ic batch and data groups in `value_points`.
    groups: [(usize, usize); 4],
    targets: Vec<F>,
}

fn assemble<F: Real>(sample: &IterationSample) -> Assembled<F> {
    let mut value_points = Vec::new();
    let mut targets = Vec::new();
    let mut groups = [(0, 0); 4];
    for (g, set) in [&sample.bc, &sample.ic_symbolic, &sample.ic_batch, &sample.data_batch].into_iter().enumerate() {
        groups[g] = (value_points.len(), set.len());
        for (p, y) in set {
            value_points.push(to_point(p));
            targets.push(F::of(*y));
        }
    }
    let batch = Batch { jet_points: sample.collocation.iter().map(to_point).collect(), value_points };
    Assembled { batch, groups, targets }
}

fn mean<F: Real>(values: &[F]) -> F {
    if values.is_empty() {
        F::zero()
    } else {
        pairwise_sum(values) / F::of(values.len() as f64)
    }
}

/// Term means and, when `weights` is given, the cotangents of
/// `pde + bc + ic_sym + w_ic·ic + w_data·data`.
fn reduce<F: Real>(
    out: &BatchOutput<F>,
    asm: &Assembled<F>,
    spec: &DomainSpec,
    weights: Option<&LossWeights>,
) -> (Terms, Option<BatchOutput<F>>) {
    let mut seeds = weights.map(|_| BatchOutput::zeros_like(&asm.batch));

    let residuals: Vec<F> = out.jets.iter().map(|j| pde_residual(j, spec)).collect();
    let squares: Vec<F> = residuals.iter().map(|r| *r * *r).collect();
    let mut terms = Terms { pde: mean(&squares).as_f64(), ..Default::default() };
    if let Some(s) = seeds.as_mut() {
        let scale = F::of(2.0 / residuals.len().max(1) as f64);
        let (vx, vy, d) = (F::of(spec.vel_x), F::of(spec.vel_y), F::of(spec.diffusion_d));
        for (seed, r) in s.jets.iter_mut().zip(&residuals) {
            let g = scale * *r;
            seed.du_dt = g;
            seed.du_dx = vx * g;
            seed.du_dy = vy * g;
            seed.d2u_dx2 = -d * g;
            seed.d2u_dy2 = -d * g;
        }
    }

    let group_weight = |g: usize| match (g, weights) {
        (2, Some(w)) => w.w_ic,
        (3, Some(w)) => w.w_data,
        _ => 1.0,
    };
    for (g, (start, len)) in asm.groups.iter().copied().enumerate() {
        let diffs: Vec<F> = (start..start + len).map(|i| out.values[i] - asm.targets[i]).collect();
        let sq: Vec<F> = diffs.iter().map(|d| *d * *d).collect();
        let m = mean(&sq).as_f64();
        match g {
            0 => terms.bc = m,
            1 => terms.ic_symbolic = m,
            2 => terms.ic = m,
            _ => terms.data = m,
        }
        if let Some(s) = seeds.as_mut() {
            let scale = F::of(2.0 * group_weight(g) / len.max(1) as f64);
            for (i, d) in (start..start + len).zip(diffs) {
                s.values[i] = scale * d;
            }
        }
    }
    (terms, seeds)
}

/// Everything needed to evaluate the training loss at any iteration.
#[derive(Debug, Clone, Copy)]
pub struct Objective<'a> {
    pub spec: &'a DomainSpec,
    pub plan: &'a SamplingPlan,
    pub noise: &'a NoiseSpec,
    pub weights: &'a LossWeights,
    pub data: &'a TrainingData,
}

impl<'a> Objective<'a> {
    pub fn sample(&self, iteration: u64) -> IterationSample {
        self.sample_parts(iteration, Parts::ALL)
    }

    fn sample_parts(&self, iteration: u64, parts: Parts) -> IterationSample {
        let mut s = IterationSample::default();
        if parts.physics {
            physics_sample(self.spec, self.plan, self.noise, iteration, &mut s);
        }
        if parts.ic {
            s.ic_batch = ic_sample(self.data, self.plan, iteration);
        }
        if parts.data {
            s.data_batch = data_sample(self.data, self.plan, iteration);
        }
        s
    }

    fn terms<F: Real>(&self, model: &impl FieldModel<F>, iteration: u64, parts: Parts) -> Terms {
        let asm = assemble::<F>(&self.sample_parts(iteration, parts));
        let out = model.evaluate(&asm.batch);
        reduce(&out, &asm, self.spec, None).0
    }

    pub fn total_loss<F: Real>(&self, model: &impl FieldModel<F>, iteration: u64) -> LossBreakdown {
        let t = self.terms(model, iteration, Parts::ALL);
        LossBreakdown::combine(t.physics(), t.ic, t.data, self.weights)
    }

    /// Loss breakdown and `∂total/∂θ` for one iteration's sample.
    pub fn loss_and_grad<F: Real>(&self, params: &NetworkParams<F>, iteration: u64) -> (LossBreakdown, Vec<F>) {
        let asm = assemble::<F>(&self.sample(iteration));
        let mut terms = Terms::default();
        let (_, grad) = loss_and_param_gradient(params, &asm.batch, |out| {
            let (t, seeds) = reduce(out, &asm, self.spec, Some(self.weights));
            terms = t;
            let b = LossBreakdown::combine(t.physics(), t.ic, t.data, self.weights);
            (F::of(b.total), seeds.expect("seeds requested"))
        });
        (LossBreakdown::combine(terms.physics(), terms.ic, terms.data, self.weights), grad)
    }
}

/// Residual, boundary and symbolic initial-condition terms.
pub fn physics_loss<F: Real>(
    model: &impl FieldModel<F>,
    spec: &DomainSpec,
    plan: &SamplingPlan,
    noise: &NoiseSpec,
    iteration: u64,
) -> f64 {
    let mut s = IterationSample::default();
    physics_sample(spec, plan, noise, iteration, &mut s);
    let asm = assemble::<F>(&s);
    reduce(&model.evaluate(&asm.batch), &asm, spec, None).0.physics()
}

/// MSE against the clean initial condition on `ic_batch` grid nodes.
pub fn ic_data_loss<F: Real>(model: &impl FieldModel<F>, data: &TrainingData, plan: &SamplingPlan, iteration: u64) -> f64 {
    let s = IterationSample { ic_batch: ic_sample(data, plan, iteration), ..Default::default() };
    let asm = assemble::<F>(&s);
    reduce(&model.evaluate(&asm.batch), &asm, &data.noisy_field.spec, None).0.ic
}

/// MSE against the noisy field on `data_batch` space-time nodes.
pub fn field_data_loss<F: Real>(model: &impl FieldModel<F>, data: &TrainingData, plan: &SamplingPlan, iteration: u64) -> f64 {
    let s = IterationSample { data_batch: data_sample(data, plan, iteration), ..Default::default() };
    let asm = assemble::<F>(&s);
    reduce(&model.evaluate(&asm.batch), &asm, &data.noisy_field.spec, None).0.data
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{add_field_noise, solve_fdm, GridSpec};
    use crate::network::{init_params, NetworkConfig};

    fn data() -> TrainingData {
        let clean = solve_fdm(&DomainSpec::default(), &GridSpec::default(), false).unwrap();
        let noisy = add_field_noise(&clean, &NoiseSpec { seed: 1, ..Default::default() });
        TrainingData::new(&clean, noisy)
    }

    #[test]
    fn residual_term_isolation() {
        let spec = DomainSpec::default();
        assert_eq!(pde_residual(&Jet::<f64>::zero(), &spec), 0.0);
        let j = Jet { du_dt: 1.0, ..Jet::zero() };
        assert_eq!(pde_residual(&j, &spec), 1.0);
        let other = DomainSpec { vel_x: -3.0, diffusion_d: 7.0, ..spec };
        assert_eq!(pde_residual(&j, &other), 1.0);
    }

    #[test]
    fn combine_uses_weights() {
        let b = LossBreakdown::combine(1.0, 2.0, 3.0, &LossWeights::default());
        assert_eq!(b.total, 1031.0);
        let none = LossBreakdown::combine(1.0, 2.0, 3.0, &LossWeights { w_ic: 0.0, w_data: 0.0 });
        assert_eq!(none.total, 1.0);
    }

    #[test]
    fn lhs_one_point_per_stratum() {
        let spec = DomainSpec::default();
        let pts = sample_collocation_lhs(200, &spec, 77);
        let extent = [spec.t_final, spec.x_max, spec.y_max];
        for axis in 0..3 {
            let mut bins = vec![0; 200];
            for p in &pts {
                let b = ((p[axis] / extent[axis]) * 200.0).floor() as usize;
                bins[b.min(199)] += 1;
            }
            assert!(bins.iter().all(|c| *c == 1), "axis {axis}");
        }
        assert_eq!(pts, sample_collocation_lhs(200, &spec, 77));
        let one = sample_collocation_lhs(1, &spec, 3);
        assert!(one[0][0] <= 0.25 && one[0][1] <= 1.0 && one[0][2] <= 1.0);
    }

    #[test]
    fn zero_network_ic_loss_is_mean_ic_squared() {
        let d = data();
        let plan = SamplingPlan { ic_batch: 51 * 51, ..Default::default() };
        let zero = NetworkParams::<f64>::zeros(NetworkConfig::new(2, 4));
        let got = ic_data_loss(&zero, &d, &plan, 0);
        let direct = d.clean_ic.iter().map(|v| v * v).sum::<f64>() / d.clean_ic.len() as f64;
        assert!((got - direct).abs() < 1e-15);
        // Riemann sum of ∬ exp(-200 r²) = π/200 over 2601 nodes at spacing 0.02.
        let riemann = std::f64::consts::PI / 200.0 / (0.02 * 0.02 * 2601.0);
        assert!((got - riemann).abs() < 1e-6, "{got} vs {riemann}");
        assert_eq!(got, ic_data_loss(&zero, &d, &plan, 1));
    }

    #[test]
    fn zero_network_physics_loss() {
        let spec = DomainSpec::default();
        let plan = SamplingPlan { n_ic_symbolic: 20_000, ..Default::default() };
        let zero = NetworkParams::<f64>::zeros(NetworkConfig::new(2, 4));
        let noise = NoiseSpec::noiseless(0);
        let loss = physics_loss(&zero, &spec, &plan, &noise, 0);
        // Only the symbolic IC term survives: a Monte Carlo estimate of
        // ∬ IC² = π/200 with standard error about 3e-4 at 20k points.
        assert!((loss - std::f64::consts::PI / 200.0).abs() < 1.5e-3, "{loss}");
    }

    #[test]
    fn gradient_matches_breakdown_and_finite_difference() {
        let d = data();
        let spec = DomainSpec::default();
        let plan = SamplingPlan { n_collocation: 16, n_bc_per_edge: 4, n_ic_symbolic: 8, data_batch: 32, ic_batch: 32, seed: 4 };
        let noise = NoiseSpec { seed: 2, ..Default::default() };
        let weights = LossWeights::default();
        let obj = Objective { spec: &spec, plan: &plan, noise: &noise, weights: &weights, data: &d };
        let p: NetworkParams<f64> = init_params(NetworkConfig::new(2, 5), 3);
        let (b, g) = obj.loss_and_grad(&p, 7);
        let again = obj.total_loss(&p, 7);
        assert!((b.total - again.total).abs() < 1e-12);
        for i in [0, 3, 17, p.len() - 1] {
            let h = 1e-6;
            let mut q = p.clone();
            q.theta[i] += h;
            let up = obj.total_loss(&q, 7).total;
            q.theta[i] -= 2.0 * h;
            let down = obj.total_loss(&q, 7).total;
            let fd = (up - down) / (2.0 * h);
            assert!((g[i] - fd).abs() <= 1e-4 * fd.abs().max(1e-2), "{i}: {} vs {fd}", g[i]);
        }
    }

    #[test]
    fn sampling_is_deterministic_per_iteration() {
        let d = data();
        let spec = DomainSpec::default();
        let plan = SamplingPlan::default();
        let noise = NoiseSpec::default();
        let weights = LossWeights::default();
        let obj = Objective { spec: &spec, plan: &plan, noise: &noise, weights: &weights, data: &d };
        assert_eq!(obj.sample(3), obj.sample(3));
        assert_ne!(obj.sample(3), obj.sample(4));
        let s = obj.sample(0);
        assert_eq!(s.collocation.len(), 200);
        assert_eq!(s.bc.len(), 256);
        assert_eq!(s.ic_symbolic.len(), 256);
        assert_eq!(s.ic_batch.len(), 1024);
        assert_eq!(s.data_batch.len(), 1024);
        let mut seen: Vec<_> = s.data_batch.iter().map(|(p, _)| p.map(f64::to_bits)).collect();
        seen.sort();
        seen.dedup();
        assert_eq!(seen.len(), 1024, "batch drawn without replacement");
    }

    #[test]
    fn plan_validation() {
        let d = data();
        assert!(SamplingPlan::default().validate(&d).is_ok());
        assert!(SamplingPlan { ic_batch: 51 * 51 + 1, ..Default::default() }.validate(&d).is_err());
        assert!(SamplingPlan { n_collocation: 0, ..Default::default() }.validate(&d).is_err());
    }
}
