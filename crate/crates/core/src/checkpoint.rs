//! JSON checkpoints of actor and critic as named, shaped arrays.

use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Parameterized;
use crate::policy::{Actor, Architecture, Critic};
use crate::rng;

pub const FORMAT: &str = "d2dpower-policy-v1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedTensor {
    pub name: String,
    pub shape: [usize; 2],
    /// Row-major values.
    pub data: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyCheckpoint {
    pub format: String,
    pub architecture: Architecture,
    pub p_max_w: f64,
    pub power_unit_w: f64,
    pub leaky_slope: f64,
    /// Episodes trained when the checkpoint was taken.
    pub episodes: usize,
    pub actor: Vec<NamedTensor>,
    pub critic: Vec<NamedTensor>,
}

fn export<P: Parameterized>(p: &P) -> Vec<NamedTensor> {
    p.tensor_names()
        .into_iter()
        .zip(p.tensors())
        .map(|(name, t)| NamedTensor { name, shape: [t.nrows(), t.ncols()], data: t.iter().copied().collect() })
        .collect()
}

fn import<P: Parameterized>(target: &mut P, tensors: &[NamedTensor], what: &str) -> Result<()> {
    let names = target.tensor_names();
    if names.len() != tensors.len() {
        return Err(Error::ShapeMismatch(format!(
            "{what}: checkpoint has {} tensors, network has {}",
            tensors.len(),
            names.len()
        )));
    }
    for ((name, slot), nt) in names.iter().zip(target.tensors_mut()).zip(tensors) {
        if *name != nt.name {
            return Err(Error::ShapeMismatch(format!("{what}: expected tensor `{name}`, found `{}`", nt.name)));
        }
        if slot.dim() != (nt.shape[0], nt.shape[1]) || nt.data.len() != nt.shape[0] * nt.shape[1] {
            return Err(Error::ShapeMismatch(format!(
                "{what}.{name}: shape {:?} does not fit {:?}",
                nt.shape,
                slot.dim()
            )));
        }
        *slot = Array2::from_shape_vec((nt.shape[0], nt.shape[1]), nt.data.clone())
            .map_err(|e| Error::ShapeMismatch(e.to_string()))?;
    }
    Ok(())
}

impl PolicyCheckpoint {
    pub fn capture(actor: &Actor, critic: &Critic, architecture: &Architecture, episodes: usize) -> Self {
        Self {
            format: FORMAT.into(),
            architecture: architecture.clone(),
            p_max_w: actor.p_max_w(),
            power_unit_w: actor.power_unit_w,
            leaky_slope: actor.gnn.layers.first().map_or(crate::gnn::DEFAULT_LEAKY_SLOPE, |l| l.leaky_slope),
            episodes,
            actor: export(actor),
            critic: export(critic),
        }
    }

    pub fn restore(&self) -> Result<(Actor, Critic)> {
        if self.format != FORMAT {
            return Err(Error::Config(format!("unknown checkpoint format `{}`", self.format)));
        }
        let mut scratch = rng::stream(0, rng::tag::POLICY_INIT, 0);
        let mut actor = Actor::new(&self.architecture, self.p_max_w, self.power_unit_w, &mut scratch);
        let mut critic = Critic::new(&self.architecture, &mut scratch);
        for l in actor.gnn.layers.iter_mut().chain(critic.gnn.layers.iter_mut()) {
            l.leaky_slope = self.leaky_slope;
        }
        import(&mut actor, &self.actor, "actor")?;
        import(&mut critic, &self.critic, "critic")?;
        Ok((actor, critic))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir)?;
        }
        std::fs::write(path, serde_json::to_string(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingCheckpoint(path.display().to_string()));
        }
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}
