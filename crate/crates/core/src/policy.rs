//! Actor and critic networks on top of the GNN embeddings.
//!
//! The actor runs one shared MLP on every node embedding and emits a
//! Gaussian over that node's transmit power. The critic mean-pools node
//! embeddings per graph and maps the pooled vector to a scalar value.
//!
//! Powers inside the networks are expressed in `power_unit_w` units
//! (milliwatts by default) so that the Gaussian scale is O(1).

use ndarray::{s, Array1, Array2, Axis};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gnn::{Gnn, GnnCache, GraphBatch, DEFAULT_LEAKY_SLOPE};
use crate::graphfeat::{GraphSample, NODE_FEATURES};
use crate::nn::{sigmoid, softplus, Mlp, MlpCache, Parameterized};

/// Floor added to the softplus std head.
pub const MIN_STD: f64 = 1e-3;

/// Layer sizes shared by actor and critic.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Architecture {
    /// Node feature width, then one entry per GNN layer.
    pub gnn_dims: Vec<usize>,
    pub hidden: Vec<usize>,
}

impl Default for Architecture {
    fn default() -> Self {
        Self { gnn_dims: vec![NODE_FEATURES, 64, 64], hidden: vec![500, 250, 120] }
    }
}

impl Architecture {
    fn mlp_sizes(&self, outputs: usize) -> Vec<usize> {
        let mut v = vec![*self.gnn_dims.last().expect("at least the input width")];
        v.extend(&self.hidden);
        v.push(outputs);
        v
    }
}

/// Shrink the last layer of an MLP so initial outputs sit near zero.
fn shrink_output_layer(mlp: &mut Mlp, factor: f64) {
    if let Some(last) = mlp.layers.last_mut() {
        last.w.mapv_inplace(|w| w * factor);
    }
}

/// Per-node Gaussian power policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Actor {
    pub gnn: Gnn,
    /// Shared per-node MLP; output columns are the mean and std head inputs.
    pub head: Mlp,
    /// Upper power limit in network units.
    pub p_max: f64,
    /// Watts per network power unit.
    pub power_unit_w: f64,
}

/// Mean and std per node, row-aligned with the batch.
#[derive(Debug, Clone)]
pub struct ActorOutput {
    pub mean: Array1<f64>,
    pub std: Array1<f64>,
}

#[derive(Debug, Clone)]
pub struct ActorCache {
    pub gnn: GnnCache,
    mlp: MlpCache,
    raw: Array2<f64>,
}

impl Actor {
    pub fn new<R: Rng + ?Sized>(arch: &Architecture, p_max_w: f64, power_unit_w: f64, rng: &mut R) -> Self {
        let gnn = Gnn::new(&arch.gnn_dims, DEFAULT_LEAKY_SLOPE, rng);
        let mut head = Mlp::new(&arch.mlp_sizes(2), rng);
        shrink_output_layer(&mut head, 0.01);
        Self { gnn, head, p_max: p_max_w / power_unit_w, power_unit_w }
    }

    /// Set the std head's output bias so that a zero pre-activation yields
    /// `std` power units.
    pub fn set_initial_std(&mut self, std: f64) -> Result<()> {
        if !(std > MIN_STD && std.is_finite()) {
            return Err(Error::Domain(format!("initial std {std} must exceed {MIN_STD}")));
        }
        let out = self.head.layers.last_mut().expect("actor head has an output layer");
        // Inverse softplus.
        out.b[[0, 1]] = (std - MIN_STD).exp_m1().ln();
        Ok(())
    }

    pub fn p_max_w(&self) -> f64 {
        self.p_max * self.power_unit_w
    }

    pub fn forward(&self, batch: &GraphBatch) -> Result<(ActorOutput, ActorCache)> {
        let (emb, gnn) = self.gnn.forward(batch)?;
        if emb.ncols() != self.head.input_dim() {
            return Err(Error::ShapeMismatch(format!(
                "embedding width {} but actor MLP expects {}",
                emb.ncols(),
                self.head.input_dim()
            )));
        }
        let (raw, mlp) = self.head.forward(&emb);
        let half = self.p_max / 2.0;
        let mean = raw.column(0).mapv(|m| half * m.tanh() + half);
        let std = raw.column(1).mapv(|v| softplus(v) + MIN_STD);
        Ok((ActorOutput { mean, std }, ActorCache { gnn, mlp, raw }))
    }

    pub fn forward_one(&self, sample: &GraphSample) -> Result<ActorOutput> {
        Ok(self.forward(&GraphBatch::single(sample)?)?.0)
    }

    /// Accumulate parameter gradients for upstream gradients on mean and std.
    pub fn backward(
        &self,
        batch: &GraphBatch,
        cache: &ActorCache,
        d_mean: &Array1<f64>,
        d_std: &Array1<f64>,
        grad: &mut Actor,
    ) -> Result<()> {
        let rows = cache.raw.nrows();
        if d_mean.len() != rows || d_std.len() != rows {
            return Err(Error::StaleCache(format!("{rows} nodes cached, got gradients for {}", d_mean.len())));
        }
        let half = self.p_max / 2.0;
        let mut d_raw = Array2::zeros((rows, 2));
        for r in 0..rows {
            let t = cache.raw[[r, 0]].tanh();
            d_raw[[r, 0]] = d_mean[r] * half * (1.0 - t * t);
            d_raw[[r, 1]] = d_std[r] * sigmoid(cache.raw[[r, 1]]);
        }
        let d_emb = self.head.backward(&cache.mlp, &d_raw, &mut grad.head);
        self.gnn.backward(batch, &cache.gnn, &d_emb, &mut grad.gnn)?;
        Ok(())
    }

    /// Draw an action for one graph.
    pub fn act<R: Rng + ?Sized>(&self, sample: &GraphSample, rng: &mut R) -> Result<PowerAction> {
        let out = self.forward_one(sample)?;
        Ok(sample_action(&out.mean, &out.std, self.p_max, rng))
    }

    /// The mean power of every node, clipped, in watts.
    pub fn act_deterministic(&self, sample: &GraphSample) -> Result<Vec<f64>> {
        let out = self.forward_one(sample)?;
        Ok(out.mean.iter().map(|&m| m.clamp(0.0, self.p_max) * self.power_unit_w).collect())
    }
}

impl Parameterized for Actor {
    fn tensors(&self) -> Vec<&Array2<f64>> {
        let mut v = self.gnn.tensors();
        v.extend(self.head.tensors());
        v
    }
    fn tensors_mut(&mut self) -> Vec<&mut Array2<f64>> {
        let mut v = self.gnn.tensors_mut();
        v.extend(self.head.tensors_mut());
        v
    }
    fn tensor_names(&self) -> Vec<String> {
        let mut v = self.gnn.tensor_names();
        v.extend(self.head.tensor_names());
        v
    }
}

/// A sampled power vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerAction {
    /// Unclipped Gaussian draw, network units.
    pub raw: Vec<f64>,
    /// `raw` clipped to [0, p_max], network units.
    pub clipped: Vec<f64>,
    /// Joint log-density of `raw`.
    pub log_prob: f64,
}

impl PowerAction {
    pub fn watts(&self, power_unit_w: f64) -> Vec<f64> {
        self.clipped.iter().map(|p| p * power_unit_w).collect()
    }
}

pub fn gaussian_log_prob(x: f64, mean: f64, std: f64) -> f64 {
    let z = (x - mean) / std;
    -0.5 * z * z - std.ln() - 0.5 * (2.0 * std::f64::consts::PI).ln()
}

pub fn sample_action<R: Rng + ?Sized>(mean: &Array1<f64>, std: &Array1<f64>, p_max: f64, rng: &mut R) -> PowerAction {
    let raw: Vec<f64> = mean
        .iter()
        .zip(std)
        .map(|(&m, &s)| {
            let z: f64 = StandardNormal.sample(rng);
            m + s * z
        })
        .collect();
    let log_prob = log_prob(&raw, mean.as_slice().expect("contiguous"), std.as_slice().expect("contiguous"));
    let clipped = raw.iter().map(|p| p.clamp(0.0, p_max)).collect();
    PowerAction { raw, clipped, log_prob }
}

/// Sum of independent per-node Gaussian log-densities.
pub fn log_prob(raw: &[f64], mean: &[f64], std: &[f64]) -> f64 {
    raw.iter().zip(mean).zip(std).map(|((&x, &m), &s)| gaussian_log_prob(x, m, s)).sum()
}

/// Graph-level value estimator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Critic {
    pub gnn: Gnn,
    pub head: Mlp,
}

#[derive(Debug, Clone)]
pub struct CriticCache {
    pub gnn: GnnCache,
    mlp: MlpCache,
}

impl Critic {
    pub fn new<R: Rng + ?Sized>(arch: &Architecture, rng: &mut R) -> Self {
        let gnn = Gnn::new(&arch.gnn_dims, DEFAULT_LEAKY_SLOPE, rng);
        let mut head = Mlp::new(&arch.mlp_sizes(1), rng);
        shrink_output_layer(&mut head, 0.1);
        Self { gnn, head }
    }

    /// One value per graph in the batch.
    pub fn forward(&self, batch: &GraphBatch) -> Result<(Array1<f64>, CriticCache)> {
        let (emb, gnn) = self.gnn.forward(batch)?;
        if emb.ncols() != self.head.input_dim() {
            return Err(Error::ShapeMismatch(format!(
                "embedding width {} but critic MLP expects {}",
                emb.ncols(),
                self.head.input_dim()
            )));
        }
        let mut pooled = Array2::zeros((batch.graphs(), emb.ncols()));
        for (g, &(r0, m)) in batch.spans.iter().enumerate() {
            if m > 0 {
                pooled.row_mut(g).assign(&emb.slice(s![r0..r0 + m, ..]).mean_axis(Axis(0)).expect("non-empty"));
            }
        }
        let (out, mlp) = self.head.forward(&pooled);
        Ok((out.column(0).to_owned(), CriticCache { gnn, mlp }))
    }

    pub fn value(&self, sample: &GraphSample) -> Result<f64> {
        Ok(self.forward(&GraphBatch::single(sample)?)?.0[0])
    }

    pub fn backward(
        &self,
        batch: &GraphBatch,
        cache: &CriticCache,
        d_value: &Array1<f64>,
        grad: &mut Critic,
    ) -> Result<()> {
        if d_value.len() != batch.graphs() {
            return Err(Error::StaleCache(format!(
                "{} graphs in batch, got {} value gradients",
                batch.graphs(),
                d_value.len()
            )));
        }
        let d_pooled = self.head.backward(&cache.mlp, &d_value.view().insert_axis(Axis(1)).to_owned(), &mut grad.head);
        let mut d_emb = Array2::zeros((batch.rows(), d_pooled.ncols()));
        for (g, &(r0, m)) in batch.spans.iter().enumerate() {
            let share = &d_pooled.row(g) / m.max(1) as f64;
            for r in r0..r0 + m {
                d_emb.row_mut(r).assign(&share);
            }
        }
        self.gnn.backward(batch, &cache.gnn, &d_emb, &mut grad.gnn)?;
        Ok(())
    }
}

impl Parameterized for Critic {
    fn tensors(&self) -> Vec<&Array2<f64>> {
        let mut v = self.gnn.tensors();
        v.extend(self.head.tensors());
        v
    }
    fn tensors_mut(&mut self) -> Vec<&mut Array2<f64>> {
        let mut v = self.gnn.tensors_mut();
        v.extend(self.head.tensors_mut());
        v
    }
    fn tensor_names(&self) -> Vec<String> {
        let mut v = self.gnn.tensor_names();
        v.extend(self.head.tensor_names());
        v
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::max_gradient_error;
    use crate::rng;
    use approx::assert_relative_eq;

    fn small_arch() -> Architecture {
        Architecture { gnn_dims: vec![4, 8, 8], hidden: vec![12, 10, 6] }
    }

    fn random_sample<R: Rng>(m: usize, rng: &mut R) -> GraphSample {
        GraphSample::new(
            Array2::from_shape_simple_fn((m, 4), || rng.random::<f64>()),
            Array2::from_shape_simple_fn((m, m), || rng.random::<f64>() * 0.6 - 0.3),
        )
        .unwrap()
    }

    fn zero_head(mlp: &mut Mlp) {
        let last = mlp.layers.last_mut().unwrap();
        last.w.fill(0.0);
        last.b.fill(0.0);
    }

    #[test]
    fn head_at_zero_outputs() {
        let mut r = rng::stream(1, 0, 0);
        let mut a = Actor::new(&small_arch(), 0.01, 1e-3, &mut r);
        zero_head(&mut a.head);
        let out = a.forward_one(&random_sample(3, &mut r)).unwrap();
        for (&m, &s) in out.mean.iter().zip(&out.std) {
            assert_relative_eq!(m, 5.0, max_relative = 1e-12);
            assert_relative_eq!(s, std::f64::consts::LN_2 + 0.001, max_relative = 1e-12);
        }
        a.head.layers.last_mut().unwrap().b[[0, 0]] = 1e3;
        let out = a.forward_one(&random_sample(2, &mut r)).unwrap();
        assert!(out.mean.iter().all(|&m| m > 0.0 && m <= 10.0 && (10.0 - m) < 1e-9));
    }

    #[test]
    fn clipping_and_log_prob() {
        let mut r = rng::stream(2, 0, 0);
        let mean = Array1::from(vec![-5.0, 5.0, 50.0]);
        let std = Array1::from(vec![1e-9, 1e-9, 1e-9]);
        let a = sample_action(&mean, &std, 10.0, &mut r);
        assert_eq!(a.clipped[0], 0.0);
        assert_relative_eq!(a.clipped[1], 5.0, epsilon = 1e-6);
        assert_eq!(a.clipped[2], 10.0);
        // Density is evaluated on the unclipped draw.
        assert_relative_eq!(a.log_prob, log_prob(&a.raw, mean.as_slice().unwrap(), std.as_slice().unwrap()));
        assert_relative_eq!(gaussian_log_prob(0.0, 0.0, 1.0), -0.918_938_533_204_672_7, epsilon = 1e-15);
    }

    #[test]
    fn sample_statistics() {
        let mut r = rng::stream(3, 0, 0);
        let n = 100_000;
        let mean = Array1::from(vec![4.0]);
        let std = Array1::from(vec![1.5]);
        let draws: Vec<f64> = (0..n).map(|_| sample_action(&mean, &std, 10.0, &mut r).raw[0]).collect();
        let m = draws.iter().sum::<f64>() / n as f64;
        let v = draws.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1) as f64;
        assert!((m - 4.0).abs() / 4.0 < 0.01, "{m}");
        assert!((v.sqrt() - 1.5).abs() / 1.5 < 0.01, "{}", v.sqrt());
    }

    #[test]
    fn critic_is_permutation_invariant_and_actor_equivariant() {
        let mut r = rng::stream(4, 0, 0);
        let a = Actor::new(&small_arch(), 0.01, 1e-3, &mut r);
        let c = Critic::new(&small_arch(), &mut r);
        let s = random_sample(5, &mut r);
        let perm = [3, 0, 4, 1, 2];
        let p = s.permuted(&perm);
        assert!((c.value(&s).unwrap() - c.value(&p).unwrap()).abs() < 1e-12);
        let (o, op) = (a.forward_one(&s).unwrap(), a.forward_one(&p).unwrap());
        for (k, &src) in perm.iter().enumerate() {
            assert!((op.mean[k] - o.mean[src]).abs() < 1e-12);
            assert!((op.std[k] - o.std[src]).abs() < 1e-12);
        }
    }

    #[test]
    fn critic_zero_weights_give_bias() {
        let mut r = rng::stream(5, 0, 0);
        let mut c = Critic::new(&small_arch(), &mut r);
        for t in c.tensors_mut() {
            t.fill(0.0);
        }
        c.head.layers.last_mut().unwrap().b[[0, 0]] = 0.25;
        assert_eq!(c.value(&random_sample(4, &mut r)).unwrap(), 0.25);
    }

    #[test]
    fn critic_matches_scalar_loops() {
        let mut r = rng::stream(6, 0, 0);
        let c = Critic::new(&small_arch(), &mut r);
        let s = random_sample(4, &mut r);
        let (emb, _) = c.gnn.forward(&GraphBatch::single(&s).unwrap()).unwrap();
        let mut h: Vec<f64> = (0..emb.ncols()).map(|f| (0..4).map(|i| emb[[i, f]]).sum::<f64>() / 4.0).collect();
        let last = c.head.layers.len() - 1;
        for (k, layer) in c.head.layers.iter().enumerate() {
            let mut next = vec![0.0; layer.fan_out()];
            for (o, n) in next.iter_mut().enumerate() {
                *n = layer.b[[0, o]];
                for (i, hv) in h.iter().enumerate() {
                    *n += hv * layer.w[[i, o]];
                }
                if k < last {
                    *n = n.tanh();
                }
            }
            h = next;
        }
        assert_relative_eq!(c.value(&s).unwrap(), h[0], epsilon = 1e-12);
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut r = rng::stream(7, 0, 0);
        let actor = Actor::new(&small_arch(), 0.01, 1e-3, &mut r);
        let critic = Critic::new(&small_arch(), &mut r);
        let s1 = random_sample(3, &mut r);
        let s2 = random_sample(4, &mut r);
        let batch = GraphBatch::new(&[&s1, &s2]).unwrap();
        let pm = Array1::from_shape_simple_fn(7, || r.random::<f64>() - 0.5);
        let ps = Array1::from_shape_simple_fn(7, || r.random::<f64>() - 0.5);
        let pv = Array1::from(vec![0.7, -1.3]);

        let (_, cache) = actor.forward(&batch).unwrap();
        let pattern = cache.gnn.activation_pattern();
        let mut ga = actor.zeros_like();
        actor.backward(&batch, &cache, &pm, &ps, &mut ga).unwrap();
        let loss = |a: &Actor| {
            let (o, c) = a.forward(&batch).unwrap();
            (c.gnn.activation_pattern() == pattern).then(|| o.mean.dot(&pm) + o.std.dot(&ps))
        };
        let err = max_gradient_error(&actor, &ga, loss, 20, 1e-5, 1e-4, &mut r);
        assert!(err < 1e-5, "actor gradient error {err}");

        let (_, cache) = critic.forward(&batch).unwrap();
        let pattern = cache.gnn.activation_pattern();
        let mut gc = critic.zeros_like();
        critic.backward(&batch, &cache, &pv, &mut gc).unwrap();
        let loss = |c: &Critic| {
            let (v, cc) = c.forward(&batch).unwrap();
            (cc.gnn.activation_pattern() == pattern).then(|| v.dot(&pv))
        };
        let err = max_gradient_error(&critic, &gc, loss, 20, 1e-5, 1e-4, &mut r);
        assert!(err < 1e-5, "critic gradient error {err}");
    }
}
