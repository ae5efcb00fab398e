//! Networks: layers, the dehazing generator, the pair discriminator and the
//! fixed feature extractor, plus parameter persistence.

pub mod checkpoint;
pub mod discriminator;
pub mod features;
pub mod generator;
mod layers;

use std::collections::BTreeMap;

pub use checkpoint::Checkpoint;
pub use discriminator::{Discriminator, DiscriminatorConfig};
pub use features::{FeatureNet, FeatureNetConfig};
pub use generator::{Generator, GeneratorConfig, SkipConnection};
pub use layers::{BatchNorm2d, ConvLayer, PRelu};

use crate::error::{Error, Result};
use crate::graph::{Eager, Graph};
use crate::kernels::BatchStats;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Parameter tensors, keyed by name, as persisted in checkpoints.
pub type StateDict = BTreeMap<String, Tensor<f32>>;

/// Source of normalization statistics during a forward pass.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NormMode {
    /// Normalize with batch statistics; the pass reports them for the
    /// running-average update.
    #[default]
    Train,
    /// Normalize with running statistics.
    Eval,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TensorKind {
    /// Learned by the optimizer.
    Parameter,
    /// Persisted state that is not learned (running statistics).
    Buffer,
}

pub struct Named<'a, T> {
    pub name: String,
    pub kind: TensorKind,
    pub tensor: &'a Tensor<T>,
}

pub struct NamedMut<'a, T> {
    pub name: String,
    pub kind: TensorKind,
    pub tensor: &'a mut Tensor<T>,
}

/// Hands out bound parameter nodes in declaration order.
pub(crate) struct Cursor<'a, N> {
    nodes: &'a [N],
    pos: usize,
}

impl<'a, N> Cursor<'a, N> {
    pub(crate) fn new(nodes: &'a [N]) -> Self {
        Cursor { nodes, pos: 0 }
    }

    pub(crate) fn next(&mut self) -> Result<&'a N> {
        let n = self.nodes.get(self.pos).ok_or_else(|| {
            Error::Param(format!(
                "bound parameter list too short ({} entries)",
                self.nodes.len()
            ))
        })?;
        self.pos += 1;
        Ok(n)
    }

    pub(crate) fn finish(self) -> Result<()> {
        if self.pos != self.nodes.len() {
            return Err(Error::Param(format!(
                "bound parameter list has {} entries, network used {}",
                self.nodes.len(),
                self.pos
            )));
        }
        Ok(())
    }
}

/// A network with named parameters and buffers.
///
/// `tensors` lists parameters in the order the forward pass consumes them.
pub trait Module<T: Scalar> {
    fn tensors(&self) -> Vec<Named<'_, T>>;

    fn tensors_mut(&mut self) -> Vec<NamedMut<'_, T>>;

    fn parameters(&self) -> Vec<&Tensor<T>> {
        self.tensors()
            .into_iter()
            .filter(|n| n.kind == TensorKind::Parameter)
            .map(|n| n.tensor)
            .collect()
    }

    fn parameters_mut(&mut self) -> Vec<&mut Tensor<T>> {
        self.tensors_mut()
            .into_iter()
            .filter(|n| n.kind == TensorKind::Parameter)
            .map(|n| n.tensor)
            .collect()
    }

    fn parameter_names(&self) -> Vec<String> {
        self.tensors()
            .into_iter()
            .filter(|n| n.kind == TensorKind::Parameter)
            .map(|n| n.name)
            .collect()
    }

    fn parameter_count(&self) -> usize {
        self.parameters().iter().map(|t| t.len()).sum()
    }

    /// Registers every parameter on `g`, in forward order.
    fn bind<G: Graph<T>>(&self, g: &mut G, trainable: bool) -> Vec<G::Node>
    where
        Self: Sized,
    {
        self.parameters()
            .into_iter()
            .map(|p| g.parameter(p, trainable))
            .collect()
    }

    fn state_dict(&self) -> StateDict {
        self.tensors()
            .into_iter()
            .map(|n| (n.name, n.tensor.cast::<f32>()))
            .collect()
    }

    /// Replaces every tensor from `state`; nothing is modified unless every
    /// name and shape matches.
    fn load_state(&mut self, state: &StateDict) -> Result<()> {
        let own = self.tensors();
        for n in &own {
            if let Some(t) = state.get(&n.name) {
                if t.shape() != n.tensor.shape() {
                    return Err(Error::ShapeMismatch {
                        name: n.name.clone(),
                        expected: n.tensor.shape().to_vec(),
                        found: t.shape().to_vec(),
                    });
                }
            }
        }
        if let Some(n) = own.iter().find(|n| !state.contains_key(&n.name)) {
            return Err(Error::MissingTensor(n.name.clone()));
        }
        if let Some(name) = state.keys().find(|k| !own.iter().any(|n| &n.name == *k)) {
            return Err(Error::UnknownTensor(name.clone()));
        }
        drop(own);
        for n in self.tensors_mut() {
            *n.tensor = state[&n.name].cast::<T>();
        }
        Ok(())
    }
}

/// Networks with normalization layers whose running statistics follow
/// train-mode passes.
pub trait Normalized<T: Scalar> {
    /// Folds the statistics reported by one train-mode pass into the running averages.
    fn update_running_stats(&mut self, stats: &[BatchStats<T>]) -> Result<()>;
}

/// Runs `forward` on an eager graph with the module's parameters bound as constants.
pub(crate) fn eager_forward<T, M, F>(module: &M, input: &Tensor<T>, forward: F) -> Result<Tensor<T>>
where
    T: Scalar,
    M: Module<T>,
    F: FnOnce(
        &mut Eager,
        &[<Eager as Graph<T>>::Node],
        &<Eager as Graph<T>>::Node,
    ) -> Result<<Eager as Graph<T>>::Node>,
{
    let mut g = Eager;
    let params = module.bind(&mut g, false);
    let x = Graph::<T>::constant(&mut g, input.clone());
    let y = forward(&mut g, &params, &x)?;
    drop(params);
    Ok(std::sync::Arc::try_unwrap(y).unwrap_or_else(|arc| (*arc).clone()))
}
