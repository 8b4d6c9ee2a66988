//! Minimal dense-network toolkit with hand-written backward passes: linear
//! layers, tanh MLPs, activations, Adam and gradient-norm clipping.
//!
//! Every trainable container implements [`Parameterized`]; gradients are
//! stored in a zeroed clone of the same container.

use ndarray::{Array2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

/// A container of named trainable tensors.
pub trait Parameterized: Clone {
    fn tensors(&self) -> Vec<&Array2<f64>>;
    fn tensors_mut(&mut self) -> Vec<&mut Array2<f64>>;
    fn tensor_names(&self) -> Vec<String>;

    fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for t in z.tensors_mut() {
            t.fill(0.0);
        }
        z
    }

    fn num_params(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    /// Element-wise `self += scale * other`.
    fn add_scaled(&mut self, other: &Self, scale: f64) {
        for (a, b) in self.tensors_mut().into_iter().zip(other.tensors()) {
            a.scaled_add(scale, b);
        }
    }

    fn sq_norm(&self) -> f64 {
        self.tensors().iter().flat_map(|t| t.iter()).map(|x| x * x).sum()
    }

    fn all_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|x| x.is_finite()))
    }
}

/// Glorot-uniform draw in +-sqrt(6 / (fan_in + fan_out)).
pub fn glorot<R: Rng + ?Sized>(fan_in: usize, fan_out: usize, rng: &mut R) -> Array2<f64> {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    Array2::from_shape_simple_fn((fan_in, fan_out), || (rng.random::<f64>() * 2.0 - 1.0) * limit)
}

pub fn leaky_relu(x: f64, slope: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        slope * x
    }
}

pub fn leaky_relu_grad(x: f64, slope: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else {
        slope
    }
}

pub fn softplus(x: f64) -> f64 {
    // ln(1 + e^x) without overflow.
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Fully connected layer `y = x W + b` over row-stacked inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub w: Array2<f64>,
    /// 1 x out.
    pub b: Array2<f64>,
}

impl Dense {
    pub fn new<R: Rng + ?Sized>(fan_in: usize, fan_out: usize, rng: &mut R) -> Self {
        Self { w: glorot(fan_in, fan_out, rng), b: Array2::zeros((1, fan_out)) }
    }

    pub fn fan_in(&self) -> usize {
        self.w.nrows()
    }

    pub fn fan_out(&self) -> usize {
        self.w.ncols()
    }

    pub fn forward(&self, x: &Array2<f64>) -> Array2<f64> {
        x.dot(&self.w) + &self.b
    }

    /// Accumulates parameter gradients into `grad` and returns dL/dx.
    pub fn backward(&self, x: &Array2<f64>, dy: &Array2<f64>, grad: &mut Dense) -> Array2<f64> {
        grad.w += &x.t().dot(dy);
        grad.b += &dy.sum_axis(Axis(0)).insert_axis(Axis(0));
        dy.dot(&self.w.t())
    }
}

impl Parameterized for Dense {
    fn tensors(&self) -> Vec<&Array2<f64>> {
        vec![&self.w, &self.b]
    }
    fn tensors_mut(&mut self) -> Vec<&mut Array2<f64>> {
        vec![&mut self.w, &mut self.b]
    }
    fn tensor_names(&self) -> Vec<String> {
        vec!["w".into(), "b".into()]
    }
}

/// Stack of dense layers with tanh between them and a linear output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub layers: Vec<Dense>,
}

/// Activations kept for the MLP backward pass.
#[derive(Debug, Clone)]
pub struct MlpCache {
    /// Input of every layer; `inputs[0]` is the network input.
    inputs: Vec<Array2<f64>>,
}

impl Mlp {
    /// `sizes` = [input, hidden..., output].
    pub fn new<R: Rng + ?Sized>(sizes: &[usize], rng: &mut R) -> Self {
        Self { layers: sizes.windows(2).map(|w| Dense::new(w[0], w[1], rng)).collect() }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].fan_in()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, Dense::fan_out)
    }

    pub fn forward(&self, x: &Array2<f64>) -> (Array2<f64>, MlpCache) {
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut h = x.clone();
        let last = self.layers.len() - 1;
        for (k, layer) in self.layers.iter().enumerate() {
            let mut out = layer.forward(&h);
            if k < last {
                out.mapv_inplace(f64::tanh);
            }
            inputs.push(h);
            h = out;
        }
        (h, MlpCache { inputs })
    }

    pub fn backward(&self, cache: &MlpCache, dout: &Array2<f64>, grad: &mut Mlp) -> Array2<f64> {
        let mut d = dout.clone();
        for k in (0..self.layers.len()).rev() {
            d = self.layers[k].backward(&cache.inputs[k], &d, &mut grad.layers[k]);
            if k > 0 {
                // Input of layer k is tanh of the previous layer's output.
                d.zip_mut_with(&cache.inputs[k], |g, &a| *g *= 1.0 - a * a);
            }
        }
        d
    }
}

impl Parameterized for Mlp {
    fn tensors(&self) -> Vec<&Array2<f64>> {
        self.layers.iter().flat_map(|l| l.tensors()).collect()
    }
    fn tensors_mut(&mut self) -> Vec<&mut Array2<f64>> {
        self.layers.iter_mut().flat_map(|l| l.tensors_mut()).collect()
    }
    fn tensor_names(&self) -> Vec<String> {
        (0..self.layers.len()).flat_map(|k| [format!("fc{k}.w"), format!("fc{k}.b")]).collect()
    }
}

/// Scale `grad` so its global L2 norm is at most `max_norm`; returns the pre-clip norm.
pub fn clip_grad_norm<P: Parameterized>(grad: &mut P, max_norm: f64) -> f64 {
    let norm = grad.sq_norm().sqrt();
    if norm > max_norm && norm > 0.0 {
        let s = max_norm / norm;
        for t in grad.tensors_mut() {
            t.mapv_inplace(|x| x * s);
        }
    }
    norm
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 3e-4, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Adam state for one parameter container; [`step`](Adam::step) descends along `grad`.
#[derive(Debug, Clone)]
pub struct Adam<P: Parameterized> {
    pub config: AdamConfig,
    t: i32,
    m: P,
    v: P,
}

impl<P: Parameterized> Adam<P> {
    pub fn new(params: &P, config: AdamConfig) -> Self {
        Self { config, t: 0, m: params.zeros_like(), v: params.zeros_like() }
    }

    pub fn step(&mut self, params: &mut P, grad: &P) {
        self.t += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        let bc1 = 1.0 - beta1.powi(self.t);
        let bc2 = 1.0 - beta2.powi(self.t);
        let ps = params.tensors_mut();
        let ms = self.m.tensors_mut();
        let vs = self.v.tensors_mut();
        for (((p, m), v), g) in ps.into_iter().zip(ms).zip(vs).zip(grad.tensors()) {
            ndarray::Zip::from(p).and(m).and(v).and(g).for_each(|p, m, v, &g| {
                *m = beta1 * *m + (1.0 - beta1) * g;
                *v = beta2 * *v + (1.0 - beta2) * g * g;
                *p -= lr * (*m / bc1) / ((*v / bc2).sqrt() + eps);
            });
        }
    }
}

/// Largest relative error between `analytic` and central differences of
/// `loss`, probing up to `per_tensor` random coordinates of every tensor.
///
/// The relative error of one coordinate is `|a - n| / max(|a|, |n|, floor)`.
/// `loss` returns `None` when a probe leaves the differentiable region
/// (e.g. crosses an activation kink); such coordinates are skipped.
pub fn max_gradient_error<P, F, R>(
    params: &P,
    analytic: &P,
    loss: F,
    per_tensor: usize,
    h: f64,
    floor: f64,
    rng: &mut R,
) -> f64
where
    P: Parameterized,
    F: Fn(&P) -> Option<f64>,
    R: Rng + ?Sized,
{
    let mut probe = params.clone();
    let mut worst = 0.0f64;
    let grads = analytic.tensors();
    for (ti, g) in grads.iter().enumerate() {
        let n = g.len();
        let picks: Vec<usize> =
            if n <= per_tensor { (0..n).collect() } else { (0..per_tensor).map(|_| rng.random_range(0..n)).collect() };
        for idx in picks {
            let (r, c) = (idx / g.ncols(), idx % g.ncols());
            let orig = params.tensors()[ti][[r, c]];
            probe.tensors_mut()[ti][[r, c]] = orig + h;
            let up = loss(&probe);
            probe.tensors_mut()[ti][[r, c]] = orig - h;
            let down = loss(&probe);
            probe.tensors_mut()[ti][[r, c]] = orig;
            let (Some(up), Some(down)) = (up, down) else { continue };
            let numeric = (up - down) / (2.0 * h);
            let a = g[[r, c]];
            let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(floor);
            worst = worst.max(err);
        }
    }
    worst
}
