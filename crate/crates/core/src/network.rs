//! Fully connected tanh network `(t, x, y) -> u` with an exact derivative engine.
//!
//! Every evaluation is batched. A batch holds *jet points*, for which the
//! network also returns `u_t, u_x, u_y, u_xx, u_yy`, and *value points*, for
//! which only `u` is needed. The input tangents are packed as extra columns of
//! the activation matrix so that each layer is a single matrix product:
//!
//! ```text
//! columns: [ jet u | value u | ∂t | ∂x | ∂y | ∂xx | ∂yy ]
//!            nj      np        nj   nj   nj   nj    nj
//! ```
//!
//! Only the `u` block receives the bias. Through `a = tanh(z)` with
//! `s = 1 - a²` and `s' = -2as` the tangents transform as
//! `a_k = s·z_k` and `a_kk = s·z_kk + s'·z_k²`.
//!
//! Parameter gradients run reverse mode over that augmented forward pass,
//! which is exact for any scalar loss assembled from the batch outputs.

use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array2, ArrayView2, ArrayViewMut2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::real::{Precision, Real};
use crate::rng;

/// Inputs are `(t, x, y)`.
pub const INPUT_DIM: usize = 3;
pub const OUTPUT_DIM: usize = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Tanh,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkConfig {
    pub hidden_layers: usize,
    pub hidden_width: usize,
    pub activation: Activation,
    pub precision: Precision,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self { hidden_layers: 9, hidden_width: 64, activation: Activation::Tanh, precision: Precision::Single }
    }
}

impl NetworkConfig {
    pub fn new(hidden_layers: usize, hidden_width: usize) -> Self {
        Self { hidden_layers, hidden_width, ..Default::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.hidden_layers >= 1 && self.hidden_width >= 1 {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!("network needs at least one hidden layer and unit, got {self:?}")))
        }
    }

    /// `"9L-64N"`.
    pub fn arch_label(&self) -> String {
        format!("{}L-{}N", self.hidden_layers, self.hidden_width)
    }

    /// `(fan_in, fan_out)` of every affine layer, input to output.
    pub fn layer_shapes(&self) -> Vec<(usize, usize)> {
        let w = self.hidden_width;
        let mut shapes = vec![(INPUT_DIM, w)];
        shapes.extend(std::iter::repeat_n((w, w), self.hidden_layers - 1));
        shapes.push((w, OUTPUT_DIM));
        shapes
    }

    pub fn param_count(&self) -> usize {
        self.layer_shapes().iter().map(|(i, o)| i * o + o).sum()
    }
}

/// Weights and biases flattened layer by layer: the `fan_out × fan_in`
/// weight matrix in row-major order, followed by the `fan_out` biases.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkParams<F> {
    pub config: NetworkConfig,
    pub theta: Vec<F>,
}

/// Offsets of one layer inside `theta`.
#[derive(Debug, Clone, Copy)]
struct LayerSlot {
    fan_in: usize,
    fan_out: usize,
    weights: usize,
    biases: usize,
}

fn layer_slots(config: &NetworkConfig) -> Vec<LayerSlot> {
    let mut offset = 0;
    config
        .layer_shapes()
        .into_iter()
        .map(|(fan_in, fan_out)| {
            let slot = LayerSlot { fan_in, fan_out, weights: offset, biases: offset + fan_in * fan_out };
            offset += fan_in * fan_out + fan_out;
            slot
        })
        .collect()
}

impl<F: Real> NetworkParams<F> {
    pub fn zeros(config: NetworkConfig) -> Self {
        Self { config, theta: vec![F::zero(); config.param_count()] }
    }

    pub fn from_theta(config: NetworkConfig, theta: Vec<F>) -> Result<Self> {
        if theta.len() != config.param_count() {
            return Err(Error::ShapeMismatch {
                expected: format!("{} parameters", config.param_count()),
                found: format!("{}", theta.len()),
            });
        }
        Ok(Self { config, theta })
    }

    pub fn len(&self) -> usize {
        self.theta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.theta.is_empty()
    }

    /// Mutable view of the weight matrix of layer `layer` (`fan_out × fan_in`).
    pub fn weights_mut(&mut self, layer: usize) -> ArrayViewMut2<'_, F> {
        let slot = layer_slots(&self.config)[layer];
        let end = slot.weights + slot.fan_in * slot.fan_out;
        ArrayViewMut2::from_shape((slot.fan_out, slot.fan_in), &mut self.theta[slot.weights..end]).unwrap()
    }

    pub fn biases_mut(&mut self, layer: usize) -> &mut [F] {
        let slot = layer_slots(&self.config)[layer];
        &mut self.theta[slot.biases..slot.biases + slot.fan_out]
    }

    pub fn cast<G: Real>(&self) -> NetworkParams<G> {
        NetworkParams { config: self.config, theta: self.theta.iter().map(|v| G::of(v.as_f64())).collect() }
    }
}

/// Glorot-uniform weights, zero biases.
pub fn init_params<F: Real>(config: NetworkConfig, seed: u64) -> NetworkParams<F> {
    let mut rng = rng::stream(seed);
    let mut params = NetworkParams::zeros(config);
    for slot in layer_slots(&config) {
        let limit = (6.0 / (slot.fan_in + slot.fan_out) as f64).sqrt();
        for w in &mut params.theta[slot.weights..slot.biases] {
            *w = F::of(rng.random_range(-limit..limit));
        }
    }
    params
}

/// Network output with the partials the advection-diffusion operator needs.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Jet<F> {
    pub u: F,
    pub du_dt: F,
    pub du_dx: F,
    pub du_dy: F,
    pub d2u_dx2: F,
    pub d2u_dy2: F,
}

impl<F: Real> Jet<F> {
    pub fn zero() -> Self {
        Self {
            u: F::zero(),
            du_dt: F::zero(),
            du_dx: F::zero(),
            du_dy: F::zero(),
            d2u_dx2: F::zero(),
            d2u_dy2: F::zero(),
        }
    }

    pub fn components(&self) -> [F; 6] {
        [self.u, self.du_dt, self.du_dx, self.du_dy, self.d2u_dx2, self.d2u_dy2]
    }
}

/// Points to evaluate, as `[t, x, y]`.
#[derive(Debug, Clone, Default)]
pub struct Batch<F> {
    pub jet_points: Vec<[F; 3]>,
    pub value_points: Vec<[F; 3]>,
}

/// Network outputs for a [`Batch`]. The same shape carries the loss
/// cotangents (`∂loss/∂output`) back into [`loss_and_param_gradient`].
#[derive(Debug, Clone, PartialEq, Default)]
pub struct BatchOutput<F> {
    pub jets: Vec<Jet<F>>,
    pub values: Vec<F>,
}

impl<F: Real> BatchOutput<F> {
    pub fn zeros_like(batch: &Batch<F>) -> Self {
        Self { jets: vec![Jet::zero(); batch.jet_points.len()], values: vec![F::zero(); batch.value_points.len()] }
    }
}

#[derive(Debug, Clone, Copy)]
struct Columns {
    jets: usize,
    values: usize,
}

impl Columns {
    fn primal(&self) -> usize {
        self.jets + self.values
    }

    fn total(&self) -> usize {
        self.primal() + 5 * self.jets
    }

    /// Start of tangent block `k` (0 = t, 1 = x, 2 = y, 3 = xx, 4 = yy).
    fn tangent(&self, k: usize) -> usize {
        self.primal() + k * self.jets
    }
}

struct Tape<F> {
    /// Input matrix of every affine layer.
    inputs: Vec<Array2<F>>,
    /// Pre-activations of every hidden layer.
    pre: Vec<Array2<F>>,
}

fn weight_view<'a, F: Real>(theta: &'a [F], slot: &LayerSlot) -> ArrayView2<'a, F> {
    ArrayView2::from_shape((slot.fan_out, slot.fan_in), &theta[slot.weights..slot.biases]).unwrap()
}

fn input_matrix<F: Real>(batch: &Batch<F>, cols: Columns) -> Array2<F> {
    let mut a = Array2::zeros((INPUT_DIM, cols.total()));
    for (c, p) in batch.jet_points.iter().chain(&batch.value_points).enumerate() {
        for d in 0..INPUT_DIM {
            a[[d, c]] = p[d];
        }
    }
    for p in 0..cols.jets {
        for d in 0..INPUT_DIM {
            a[[d, cols.tangent(d) + p]] = F::one();
        }
    }
    a
}

/// Applies tanh and the tangent rules row by row, writing into `out`.
fn activate<F: Real>(z: &Array2<F>, out: &mut Array2<F>, cols: Columns) {
    let two = F::of(2.0);
    let (nj, nv) = (cols.jets, cols.primal());
    let (bt, bx, by, bxx, byy) = (cols.tangent(0), cols.tangent(1), cols.tangent(2), cols.tangent(3), cols.tangent(4));
    for (zr, ar) in z.outer_iter().zip(out.outer_iter_mut()) {
        let zr = zr.to_slice().unwrap();
        let ar = ar.into_slice().unwrap();
        for c in 0..nv {
            ar[c] = zr[c].act_tanh();
        }
        for p in 0..nj {
            let a = ar[p];
            let s = F::one() - a * a;
            let sp = -two * a * s;
            let (zx, zy) = (zr[bx + p], zr[by + p]);
            ar[bt + p] = s * zr[bt + p];
            ar[bx + p] = s * zx;
            ar[by + p] = s * zy;
            ar[bxx + p] = s * zr[bxx + p] + sp * zx * zx;
            ar[byy + p] = s * zr[byy + p] + sp * zy * zy;
        }
    }
}

/// Turns `∂L/∂a` (in `grad`) into `∂L/∂z` in place.
fn activate_backward<F: Real>(grad: &mut Array2<F>, z: &Array2<F>, a: &Array2<F>, cols: Columns) {
    let (two, four) = (F::of(2.0), F::of(4.0));
    let (nj, nv) = (cols.jets, cols.primal());
    let (bt, bx, by, bxx, byy) = (cols.tangent(0), cols.tangent(1), cols.tangent(2), cols.tangent(3), cols.tangent(4));
    for ((gr, zr), ar) in grad.outer_iter_mut().zip(z.outer_iter()).zip(a.outer_iter()) {
        let gr = gr.into_slice().unwrap();
        let zr = zr.to_slice().unwrap();
        let ar = ar.to_slice().unwrap();
        for p in 0..nj {
            let a = ar[p];
            let s = F::one() - a * a;
            let sp = -two * a * s;
            let spp = -two * s * s + four * a * a * s;
            let (zt, zx, zy, zxx, zyy) = (zr[bt + p], zr[bx + p], zr[by + p], zr[bxx + p], zr[byy + p]);
            let (gt, gx, gy, gxx, gyy) = (gr[bt + p], gr[bx + p], gr[by + p], gr[bxx + p], gr[byy + p]);
            gr[p] = gr[p] * s
                + sp * (gt * zt + gx * zx + gy * zy + gxx * zxx + gyy * zyy)
                + spp * (gxx * zx * zx + gyy * zy * zy);
            gr[bt + p] = gt * s;
            gr[bx + p] = gx * s + two * sp * gxx * zx;
            gr[by + p] = gy * s + two * sp * gyy * zy;
            gr[bxx + p] = gxx * s;
            gr[byy + p] = gyy * s;
        }
        for c in nj..nv {
            let a = ar[c];
            gr[c] = gr[c] * (F::one() - a * a);
        }
    }
}

fn run_forward<F: Real>(params: &NetworkParams<F>, batch: &Batch<F>, record: bool) -> (BatchOutput<F>, Option<Tape<F>>) {
    let cols = Columns { jets: batch.jet_points.len(), values: batch.value_points.len() };
    let slots = layer_slots(&params.config);
    let mut tape = record.then(|| Tape { inputs: Vec::with_capacity(slots.len()), pre: Vec::new() });
    let mut a = input_matrix(batch, cols);
    let last = slots.len() - 1;
    let mut z = Array2::zeros((0, 0));

    for (l, slot) in slots.iter().enumerate() {
        let w = weight_view(&params.theta, slot);
        z = Array2::zeros((slot.fan_out, cols.total()));
        general_mat_mul(F::one(), &w, &a, F::zero(), &mut z);
        let b = &params.theta[slot.biases..slot.biases + slot.fan_out];
        for (mut row, bias) in z.outer_iter_mut().zip(b) {
            row.slice_mut(s![..cols.primal()]).mapv_inplace(|v| v + *bias);
        }
        if l == last {
            if let Some(t) = tape.as_mut() {
                t.inputs.push(a);
            }
            break;
        }
        let mut next = Array2::zeros((slot.fan_out, cols.total()));
        activate(&z, &mut next, cols);
        if let Some(t) = tape.as_mut() {
            t.inputs.push(std::mem::replace(&mut a, next));
            t.pre.push(std::mem::replace(&mut z, Array2::zeros((0, 0))));
        } else {
            a = next;
        }
    }

    let out = z.row(0);
    let jets = (0..cols.jets)
        .map(|p| Jet {
            u: out[p],
            du_dt: out[cols.tangent(0) + p],
            du_dx: out[cols.tangent(1) + p],
            du_dy: out[cols.tangent(2) + p],
            d2u_dx2: out[cols.tangent(3) + p],
            d2u_dy2: out[cols.tangent(4) + p],
        })
        .collect();
    let values = (cols.jets..cols.primal()).map(|c| out[c]).collect();
    (BatchOutput { jets, values }, tape)
}

/// Evaluates every point of the batch.
pub fn evaluate<F: Real>(params: &NetworkParams<F>, batch: &Batch<F>) -> BatchOutput<F> {
    run_forward(params, batch, false).0
}

/// `u` at each `[t, x, y]`.
pub fn forward_batch<F: Real>(params: &NetworkParams<F>, points: &[[F; 3]]) -> Vec<F> {
    let batch = Batch { jet_points: Vec::new(), value_points: points.to_vec() };
    evaluate(params, &batch).values
}

pub fn forward<F: Real>(params: &NetworkParams<F>, t: F, x: F, y: F) -> F {
    forward_batch(params, &[[t, x, y]])[0]
}

pub fn jet<F: Real>(params: &NetworkParams<F>, t: F, x: F, y: F) -> Jet<F> {
    let batch = Batch { jet_points: vec![[t, x, y]], value_points: Vec::new() };
    evaluate(params, &batch).jets[0]
}

/// Loss value and its gradient with respect to `theta`.
///
/// `loss` receives the batch outputs and returns the scalar loss together
/// with `∂loss/∂output` for every output component.
pub fn loss_and_param_gradient<F, L>(params: &NetworkParams<F>, batch: &Batch<F>, loss: L) -> (F, Vec<F>)
where
    F: Real,
    L: FnOnce(&BatchOutput<F>) -> (F, BatchOutput<F>),
{
    let cols = Columns { jets: batch.jet_points.len(), values: batch.value_points.len() };
    let (out, tape) = run_forward(params, batch, true);
    let tape = tape.expect("tape recorded");
    let (value, seed) = loss(&out);
    assert_eq!(seed.jets.len(), cols.jets, "cotangent jets do not match the batch");
    assert_eq!(seed.values.len(), cols.values, "cotangent values do not match the batch");

    let mut grad = Array2::zeros((OUTPUT_DIM, cols.total()));
    for (p, j) in seed.jets.iter().enumerate() {
        grad[[0, p]] = j.u;
        for (k, v) in [j.du_dt, j.du_dx, j.du_dy, j.d2u_dx2, j.d2u_dy2].into_iter().enumerate() {
            grad[[0, cols.tangent(k) + p]] = v;
        }
    }
    for (c, v) in seed.values.iter().enumerate() {
        grad[[0, cols.jets + c]] = *v;
    }

    let slots = layer_slots(&params.config);
    let mut dtheta = vec![F::zero(); params.theta.len()];
    for l in (0..slots.len()).rev() {
        let slot = slots[l];
        let input = &tape.inputs[l];
        {
            let (w_part, b_part) = dtheta[slot.weights..slot.biases + slot.fan_out].split_at_mut(slot.fan_in * slot.fan_out);
            let mut dw = ArrayViewMut2::from_shape((slot.fan_out, slot.fan_in), w_part).unwrap();
            general_mat_mul(F::one(), &grad, &input.t(), F::zero(), &mut dw);
            for (db, row) in b_part.iter_mut().zip(grad.outer_iter()) {
                *db = row.slice(s![..cols.primal()]).iter().copied().sum();
            }
        }
        if l == 0 {
            break;
        }
        let w = weight_view(&params.theta, &slot);
        let mut upstream = Array2::zeros((slot.fan_in, cols.total()));
        general_mat_mul(F::one(), &w.t(), &grad, F::zero(), &mut upstream);
        activate_backward(&mut upstream, &tape.pre[l - 1], input, cols);
        grad = upstream;
    }
    (value, dtheta)
}
