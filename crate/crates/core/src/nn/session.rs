use std::collections::HashMap;

use super::params::{ParamId, ParamStore};
use crate::autodiff::{BatchStats, Gradients, Graph, Tape};
use crate::error::Result;
use crate::ops::norm;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics; running statistics are collected for update.
    Train,
    /// Running statistics; no side effects.
    Eval,
}

/// Pending running-statistics update for one normalization layer.
#[derive(Debug, Clone)]
pub struct RunningUpdate {
    pub mean: ParamId,
    pub var: ParamId,
    pub stats: BatchStats,
}

/// One forward pass: an executor, read-only parameters, and the mode.
pub struct Session<'s, G: Graph> {
    pub graph: G,
    store: &'s ParamStore,
    mode: Mode,
    bound: HashMap<ParamId, G::Node>,
    updates: Vec<RunningUpdate>,
}

impl<'s, G: Graph> Session<'s, G> {
    pub fn new(graph: G, store: &'s ParamStore, mode: Mode) -> Self {
        Self {
            graph,
            store,
            mode,
            bound: HashMap::new(),
            updates: Vec::new(),
        }
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn store(&self) -> &'s ParamStore {
        self.store
    }

    /// The graph node for a parameter, created on first use.
    pub fn param(&mut self, id: ParamId) -> G::Node {
        if let Some(n) = self.bound.get(&id) {
            return n.clone();
        }
        let n = self.graph.parameter(self.store.get(id).clone());
        self.bound.insert(id, n.clone());
        n
    }

    pub fn value<'a>(&'a self, n: &'a G::Node) -> &'a Tensor {
        self.graph.value(n)
    }

    pub(crate) fn record_update(&mut self, u: RunningUpdate) {
        self.updates.push(u);
    }

    pub fn running_updates(&self) -> &[RunningUpdate] {
        &self.updates
    }

    /// Runs `f` with nodes labelled `name` for diagnostics.
    pub fn scoped<T>(&mut self, name: &str, f: impl FnOnce(&mut Self) -> Result<T>) -> Result<T> {
        self.graph.enter_scope(name);
        let out = f(self);
        self.graph.exit_scope();
        out
    }

    pub fn into_parts(self) -> (G, Vec<RunningUpdate>) {
        (self.graph, self.updates)
    }
}

impl Session<'_, Tape> {
    /// Gradients for every parameter touched by the pass, in id order.
    pub fn param_grads(&self, grads: &mut Gradients) -> Vec<(ParamId, Tensor)> {
        let mut ids: Vec<_> = self.bound.iter().map(|(&id, &v)| (id, v)).collect();
        ids.sort_by_key(|(id, _)| *id);
        ids.into_iter()
            .filter_map(|(id, v)| grads.take(v).map(|g| (id, g)))
            .collect()
    }
}

/// Folds collected batch statistics into the running buffers.
pub fn apply_running_updates(store: &mut ParamStore, updates: &[RunningUpdate]) {
    for u in updates {
        let cache = norm::BatchNormCache {
            xhat: Tensor::scalar(0.0),
            inv_std: Vec::new(),
            mean: u.stats.mean.clone(),
            var: u.stats.var.clone(),
        };
        let mut rm = (**store.get(u.mean)).clone();
        let mut rv = (**store.get(u.var)).clone();
        norm::update_running(&mut rm, &mut rv, &cache, u.stats.count, norm::BN_MOMENTUM);
        *store.get_mut(u.mean) = rm;
        *store.get_mut(u.var) = rv;
    }
}
