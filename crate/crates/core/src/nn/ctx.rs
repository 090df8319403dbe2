use std::cell::{Cell, RefCell};
use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::params::{ParamId, ParamStore};
use crate::autograd::Var;
use crate::error::Result;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// How stateful layers behave during a forward pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics, running-stat updates, dropout active.
    Train,
    /// Running statistics, no dropout.
    Eval,
    /// Batch statistics and running-stat updates, no dropout. Used to seed
    /// running statistics of an untrained model.
    Calibrate,
}

impl Mode {
    pub fn uses_batch_stats(self) -> bool {
        matches!(self, Mode::Train | Mode::Calibrate)
    }

    pub fn dropout_active(self) -> bool {
        matches!(self, Mode::Train)
    }
}

/// State of one forward pass: which parameters are being differentiated,
/// the dropout RNG, pending buffer updates and diagnostics.
pub struct Ctx<'a, T: Scalar> {
    store: &'a ParamStore<T>,
    mode: Mode,
    track_grads: bool,
    rng: RefCell<ChaCha8Rng>,
    leaves: RefCell<BTreeMap<ParamId, Var<T>>>,
    buffer_updates: RefCell<Vec<(ParamId, Tensor<T>)>>,
    clamped_denominators: Cell<usize>,
}

impl<'a, T: Scalar> Ctx<'a, T> {
    pub fn new(store: &'a ParamStore<T>, mode: Mode, track_grads: bool, seed: u64) -> Self {
        Ctx {
            store,
            mode,
            track_grads,
            rng: RefCell::new(ChaCha8Rng::seed_from_u64(seed)),
            leaves: RefCell::new(BTreeMap::new()),
            buffer_updates: RefCell::new(Vec::new()),
            clamped_denominators: Cell::new(0),
        }
    }

    /// Inference context: eval mode, no gradients.
    pub fn eval(store: &'a ParamStore<T>) -> Self {
        Self::new(store, Mode::Eval, false, 0)
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn store(&self) -> &ParamStore<T> {
        self.store
    }

    /// The parameter as a graph value: a cached gradient leaf when tracking
    /// and trainable, otherwise a constant.
    pub fn param(&self, id: ParamId) -> Var<T> {
        let p = self.store.get(id);
        if !(self.track_grads && p.trainable) {
            return Var::constant(p.tensor.clone());
        }
        self.leaves
            .borrow_mut()
            .entry(id)
            .or_insert_with(|| Var::leaf(p.tensor.clone()))
            .clone()
    }

    pub fn with_rng<R>(&self, f: impl FnOnce(&mut ChaCha8Rng) -> R) -> R {
        f(&mut self.rng.borrow_mut())
    }

    pub(crate) fn queue_buffer_update(&self, id: ParamId, value: Tensor<T>) {
        self.buffer_updates.borrow_mut().push((id, value));
    }

    pub(crate) fn note_clamped(&self, count: usize) {
        self.clamped_denominators.set(self.clamped_denominators.get() + count);
    }

    /// Attention denominators that hit the floor during this pass.
    pub fn clamped_denominators(&self) -> usize {
        self.clamped_denominators.get()
    }

    /// Gradients of every parameter reached by backward passes so far.
    pub fn param_grads(&self) -> Vec<(ParamId, Tensor<T>)> {
        self.leaves
            .borrow()
            .iter()
            .filter_map(|(id, v)| v.grad().map(|g| (*id, g)))
            .collect()
    }

    /// Ends the pass, releasing the borrow of the store. Apply the result
    /// with [`ParamStore::apply`].
    pub fn finish(self) -> Updates<T> {
        let grads = self.param_grads();
        Updates {
            grads,
            buffers: self.buffer_updates.into_inner(),
        }
    }
}

/// Gradients and buffer values produced by one forward/backward pass.
#[derive(Debug, Clone, Default)]
pub struct Updates<T: Scalar> {
    pub grads: Vec<(ParamId, Tensor<T>)>,
    pub buffers: Vec<(ParamId, Tensor<T>)>,
}

impl<T: Scalar> ParamStore<T> {
    /// Accumulates gradients and overwrites buffers.
    pub fn apply(&mut self, updates: Updates<T>) -> Result<()> {
        for (id, g) in &updates.grads {
            self.accumulate_grad(*id, g)?;
        }
        for (id, value) in updates.buffers {
            self.set(id, value)?;
        }
        Ok(())
    }
}
