//! Edge-weighted message-passing layers.
//!
//! Layer update for node j with neighbours i != j:
//!
//! ```text
//! y_j' = leaky( y_j T1 + sum_i e_ij (y_j T2 - y_i T3) )
//! ```
//!
//! With `W` the edge matrix with its diagonal zeroed and `s_j = sum_i W_ij`,
//! a whole graph is `Z = Y T1 + diag(s) Y T2 - (W^T Y) T3`. The three products
//! are fused into one matmul `[Y | sY | -W^T Y] [T1; T2; T3]`.
//!
//! Several graphs (possibly of different sizes) are evaluated together by
//! stacking their node rows; message passing stays within each graph.

use ndarray::{concatenate, s, Array1, Array2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graphfeat::GraphSample;
use crate::nn::{glorot, leaky_relu, leaky_relu_grad, Parameterized};

pub const DEFAULT_LEAKY_SLOPE: f64 = 0.01;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GnnLayer {
    pub theta1: Array2<f64>,
    pub theta2: Array2<f64>,
    pub theta3: Array2<f64>,
    pub leaky_slope: f64,
}

impl GnnLayer {
    pub fn new<R: Rng + ?Sized>(fan_in: usize, fan_out: usize, leaky_slope: f64, rng: &mut R) -> Self {
        Self {
            theta1: glorot(fan_in, fan_out, rng),
            theta2: glorot(fan_in, fan_out, rng),
            theta3: glorot(fan_in, fan_out, rng),
            leaky_slope,
        }
    }

    pub fn fan_in(&self) -> usize {
        self.theta1.nrows()
    }

    pub fn fan_out(&self) -> usize {
        self.theta1.ncols()
    }

    fn stacked_weights(&self) -> Array2<f64> {
        concatenate(Axis(0), &[self.theta1.view(), self.theta2.view(), self.theta3.view()]).expect("theta shapes agree")
    }
}

/// A stack of message-passing layers shared by every node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Gnn {
    pub layers: Vec<GnnLayer>,
}

impl Gnn {
    /// `dims` = [F0, F1, ..., FK].
    pub fn new<R: Rng + ?Sized>(dims: &[usize], leaky_slope: f64, rng: &mut R) -> Self {
        Self { layers: dims.windows(2).map(|w| GnnLayer::new(w[0], w[1], leaky_slope, rng)).collect() }
    }

    pub fn input_dim(&self) -> usize {
        self.layers.first().map_or(0, GnnLayer::fan_in)
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, GnnLayer::fan_out)
    }

    fn check_shapes(&self) -> Result<()> {
        for (k, l) in self.layers.iter().enumerate() {
            if l.theta2.dim() != l.theta1.dim() || l.theta3.dim() != l.theta1.dim() {
                return Err(Error::ShapeMismatch(format!("layer {k}: theta shapes differ")));
            }
            if k > 0 && self.layers[k - 1].fan_out() != l.fan_in() {
                return Err(Error::ShapeMismatch(format!(
                    "layer {k} expects {} inputs, previous layer gives {}",
                    l.fan_in(),
                    self.layers[k - 1].fan_out()
                )));
            }
        }
        Ok(())
    }

    pub fn forward(&self, batch: &GraphBatch) -> Result<(Array2<f64>, GnnCache)> {
        self.check_shapes()?;
        if batch.nodes.ncols() != self.input_dim() {
            return Err(Error::ShapeMismatch(format!(
                "node features have {} columns, first layer expects {}",
                batch.nodes.ncols(),
                self.input_dim()
            )));
        }
        let mut layers = Vec::with_capacity(self.layers.len());
        let mut y = batch.nodes.clone();
        for layer in &self.layers {
            let xcat = batch.message_inputs(&y);
            let z = xcat.dot(&layer.stacked_weights());
            let out = z.mapv(|v| leaky_relu(v, layer.leaky_slope));
            layers.push(LayerCache { xcat, z });
            y = out;
        }
        Ok((y, GnnCache { layers, rows: batch.nodes.nrows() }))
    }

    /// Gradients for every layer plus dL/d(node features).
    pub fn backward(
        &self,
        batch: &GraphBatch,
        cache: &GnnCache,
        d_out: &Array2<f64>,
        grad: &mut Gnn,
    ) -> Result<Array2<f64>> {
        if cache.layers.len() != self.layers.len() || cache.rows != batch.nodes.nrows() {
            return Err(Error::StaleCache("cache was built for a different network or batch".into()));
        }
        if d_out.dim() != (cache.rows, self.output_dim()) {
            return Err(Error::StaleCache(format!(
                "upstream gradient {:?} does not match embeddings ({}, {})",
                d_out.dim(),
                cache.rows,
                self.output_dim()
            )));
        }
        let mut d = d_out.clone();
        for k in (0..self.layers.len()).rev() {
            let layer = &self.layers[k];
            let lc = &cache.layers[k];
            let f = layer.fan_in();
            let mut dz = d;
            dz.zip_mut_with(&lc.z, |g, &z| *g *= leaky_relu_grad(z, layer.leaky_slope));
            let dw = lc.xcat.t().dot(&dz);
            let g = &mut grad.layers[k];
            g.theta1 += &dw.slice(s![0..f, ..]);
            g.theta2 += &dw.slice(s![f..2 * f, ..]);
            g.theta3 += &dw.slice(s![2 * f..3 * f, ..]);
            let dx = dz.dot(&layer.stacked_weights().t());
            d = batch.message_inputs_backward(&dx, f);
        }
        Ok(d)
    }
}

impl Parameterized for Gnn {
    fn tensors(&self) -> Vec<&Array2<f64>> {
        self.layers.iter().flat_map(|l| [&l.theta1, &l.theta2, &l.theta3]).collect()
    }
    fn tensors_mut(&mut self) -> Vec<&mut Array2<f64>> {
        self.layers.iter_mut().flat_map(|l| [&mut l.theta1, &mut l.theta2, &mut l.theta3]).collect()
    }
    fn tensor_names(&self) -> Vec<String> {
        (0..self.layers.len()).flat_map(|k| (1..=3).map(move |t| format!("gnn{k}.theta{t}"))).collect()
    }
}

#[derive(Debug, Clone)]
struct LayerCache {
    xcat: Array2<f64>,
    z: Array2<f64>,
}

/// Activations retained by [`Gnn::forward`].
#[derive(Debug, Clone)]
pub struct GnnCache {
    layers: Vec<LayerCache>,
    rows: usize,
}

impl GnnCache {
    /// Sign of every pre-activation; two inputs with the same pattern lie in
    /// the same linear piece of the network.
    pub fn activation_pattern(&self) -> Vec<bool> {
        self.layers.iter().flat_map(|l| l.z.iter().map(|&z| z > 0.0)).collect()
    }
}

/// Row-stacked node features of several graphs.
#[derive(Debug, Clone)]
pub struct GraphBatch {
    pub nodes: Array2<f64>,
    /// (first row, node count) of each graph.
    pub spans: Vec<(usize, usize)>,
    /// Edge matrices with zeroed diagonals.
    pub adjacency: Vec<Array2<f64>>,
    /// Per-row sum of incoming edge weights.
    pub in_strength: Array1<f64>,
}

impl GraphBatch {
    pub fn new(samples: &[&GraphSample]) -> Result<Self> {
        let total: usize = samples.iter().map(|s| s.pairs()).sum();
        let f = samples.first().map_or(0, |s| s.nodes.ncols());
        let mut nodes = Array2::zeros((total, f));
        let mut spans = Vec::with_capacity(samples.len());
        let mut adjacency = Vec::with_capacity(samples.len());
        let mut in_strength = Array1::zeros(total);
        let mut row = 0;
        for s in samples {
            let m = s.pairs();
            if s.nodes.ncols() != f {
                return Err(Error::ShapeMismatch("graphs in a batch need the same feature width".into()));
            }
            if s.edges.dim() != (m, m) {
                return Err(Error::ShapeMismatch("edge matrix does not match node count".into()));
            }
            nodes.slice_mut(s![row..row + m, ..]).assign(&s.nodes);
            let mut w = s.edges.clone();
            w.diag_mut().fill(0.0);
            in_strength.slice_mut(s![row..row + m]).assign(&w.sum_axis(Axis(0)));
            adjacency.push(w);
            spans.push((row, m));
            row += m;
        }
        Ok(Self { nodes, spans, adjacency, in_strength })
    }

    pub fn single(sample: &GraphSample) -> Result<Self> {
        Self::new(&[sample])
    }

    pub fn graphs(&self) -> usize {
        self.spans.len()
    }

    pub fn rows(&self) -> usize {
        self.nodes.nrows()
    }

    /// `[Y | diag(s) Y | -W^T Y]` per graph.
    fn message_inputs(&self, y: &Array2<f64>) -> Array2<f64> {
        let f = y.ncols();
        let mut out = Array2::zeros((y.nrows(), 3 * f));
        out.slice_mut(s![.., 0..f]).assign(y);
        let scaled = y * &self.in_strength.view().insert_axis(Axis(1));
        out.slice_mut(s![.., f..2 * f]).assign(&scaled);
        for (&(r0, m), w) in self.spans.iter().zip(&self.adjacency) {
            let agg = w.t().dot(&y.slice(s![r0..r0 + m, ..]));
            out.slice_mut(s![r0..r0 + m, 2 * f..3 * f]).assign(&(-agg));
        }
        out
    }

    /// Pull a gradient on `[Y | sY | -W^T Y]` back to `Y`.
    fn message_inputs_backward(&self, dx: &Array2<f64>, f: usize) -> Array2<f64> {
        let mut dy = dx.slice(s![.., 0..f]).to_owned();
        dy += &(&dx.slice(s![.., f..2 * f]) * &self.in_strength.view().insert_axis(Axis(1)));
        for (&(r0, m), w) in self.spans.iter().zip(&self.adjacency) {
            let back = w.dot(&dx.slice(s![r0..r0 + m, 2 * f..3 * f]));
            let mut block = dy.slice_mut(s![r0..r0 + m, ..]);
            block -= &back;
        }
        dy
    }
}
