use crate::error::{Error, Result};
use crate::nn::{ParamId, ParamStore};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// `D_b^(−1/2)·min(n·w^(−3/2), n^(−1/2))` for step `n ≥ 1` and warmup `w`.
pub fn lr_at(step: u64, d_b: usize, warmup: u64) -> Result<f64> {
    if step == 0 {
        return Err(Error::invalid("lr_at", "steps start at 1"));
    }
    if warmup == 0 || d_b == 0 {
        return Err(Error::invalid("lr_at", "warmup and model width must be positive"));
    }
    let n = step as f64;
    Ok((d_b as f64).powf(-0.5) * (n * (warmup as f64).powf(-1.5)).min(n.powf(-0.5)))
}

/// Global ℓ2 norm of a gradient set.
pub fn global_norm<T: Scalar>(grads: &[(ParamId, Tensor<T>)]) -> f64 {
    grads
        .iter()
        .flat_map(|(_, g)| g.data())
        .map(|v| v.as_f64().powi(2))
        .sum::<f64>()
        .sqrt()
}

/// Rescales all gradients by `max_norm / norm` when the global norm exceeds
/// `max_norm`. Returns the norm before clipping.
pub fn clip_global_norm<T: Scalar>(grads: &mut [(ParamId, Tensor<T>)], max_norm: f64) -> f64 {
    let norm = global_norm(grads);
    if norm > max_norm {
        let k = T::c(max_norm / norm);
        grads.iter_mut().for_each(|(_, g)| g.data_mut().iter_mut().for_each(|v| *v *= k));
    }
    norm
}

/// Adam with bias correction and decoupled weight decay
/// `p ← p − lr·m̂/(√v̂+ε) − lr·wd·p`.
#[derive(Debug, Clone)]
pub struct Adam<T: Scalar> {
    pub weight_decay: f64,
    pub step: u64,
    moments: Vec<Option<(Vec<T>, Vec<T>)>>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(weight_decay: f64) -> Self {
        Adam {
            weight_decay,
            step: 0,
            moments: Vec::new(),
        }
    }

    /// Updates every trainable parameter; parameters without a gradient get
    /// a zero gradient, so weight decay still applies.
    pub fn step(&mut self, store: &mut ParamStore<T>, grads: &[(ParamId, Tensor<T>)], lr: f64) -> Result<()> {
        self.step += 1;
        if self.moments.len() < store.len() {
            self.moments.resize(store.len(), None);
        }
        let t = self.step as i32;
        let (c1, c2) = (1.0 - ADAM_BETA1.powi(t), 1.0 - ADAM_BETA2.powi(t));
        let (b1, b2) = (T::c(ADAM_BETA1), T::c(ADAM_BETA2));
        let (lr_t, decay, eps) = (T::c(lr), T::c(lr * self.weight_decay), T::c(ADAM_EPS));
        let (inv_c1, inv_c2) = (T::c(1.0 / c1), T::c(1.0 / c2));
        let ids: Vec<ParamId> = store.ids().filter(|id| store.get(*id).trainable).collect();
        for id in ids {
            let p = store.get_mut(id);
            let n = p.tensor.numel();
            let grad = grads.iter().find(|(g, _)| *g == id).map(|(_, g)| g);
            if let Some(g) = grad {
                if g.shape() != p.tensor.shape() {
                    return Err(Error::shape("adam_step", p.tensor.shape(), g.shape()));
                }
            }
            let (m, v) = self.moments[id.index()].get_or_insert_with(|| (vec![T::zero(); n], vec![T::zero(); n]));
            let data = p.tensor.data_mut();
            for i in 0..n {
                let g = grad.map_or(T::zero(), |g| g.data()[i]);
                m[i] = b1 * m[i] + (T::one() - b1) * g;
                v[i] = b2 * v[i] + (T::one() - b2) * g * g;
                let update = (m[i] * inv_c1) / ((v[i] * inv_c2).sqrt() + eps);
                data[i] = data[i] - lr_t * update - decay * data[i];
            }
        }
        Ok(())
    }
}

/// `shadow ← decay·shadow + (1−decay)·param` for trainable parameters; an
/// absent shadow starts at the parameter.
pub fn ema_update<T: Scalar>(store: &mut ParamStore<T>, decay: f64) {
    let (d, rest) = (T::c(decay), T::c(1.0 - decay));
    for p in store.iter_mut().filter(|p| p.trainable) {
        match &mut p.ema_shadow {
            Some(shadow) => shadow
                .data_mut()
                .iter_mut()
                .zip(p.tensor.data())
                .for_each(|(s, v)| *s = d * *s + rest * *v),
            None => p.ema_shadow = Some(p.tensor.clone()),
        }
    }
}
