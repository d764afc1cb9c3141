use crate::error::{Error, Result};
use crate::param::{ParamGroup, ParamStore};
use crate::tensor::{Scalar, Tensor};

pub const ADAM_EPS: f64 = 1e-8;

/// Adam moments with decoupled weight decay.
#[derive(Debug, Clone)]
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub weight_decay: f64,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamW {
    pub fn new<T: Scalar>(params: &ParamStore<T>, beta1: f64, beta2: f64, weight_decay: f64) -> Self {
        let zeros = || params.iter().map(|(_, p)| vec![0.0; p.value.numel()]).collect();
        AdamW {
            beta1,
            beta2,
            weight_decay,
            step: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Applies one update. `grads[i]` belongs to parameter `i`; `lr` maps a
    /// parameter group to its rate for this step. Decay is applied only to
    /// parameters whose kind decays.
    pub fn step<T: Scalar>(
        &mut self,
        params: &mut ParamStore<T>,
        grads: &[Tensor<T>],
        lr: impl Fn(ParamGroup) -> f64,
    ) -> Result<()> {
        if grads.len() != params.len() || self.m.len() != params.len() {
            return Err(Error::Contract(format!(
                "{} gradients for {} parameters",
                grads.len(),
                params.len()
            )));
        }
        let ids: Vec<_> = params.ids().collect();
        for (id, g) in ids.iter().zip(grads) {
            if params.value(*id).shape() != g.shape() {
                return Err(Error::Contract(format!(
                    "gradient shape {:?} does not match parameter {} of shape {:?}",
                    g.shape(),
                    params.get(*id).name,
                    params.value(*id).shape()
                )));
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for (i, (id, g)) in ids.into_iter().zip(grads).enumerate() {
            let (group, decays) = {
                let p = params.get(id);
                (p.group, p.kind.decays())
            };
            let rate = lr(group);
            let decay = if decays { self.weight_decay } else { 0.0 };
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for (((p, &gi), mi), vi) in params
                .value_mut(id)
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.iter_mut())
                .zip(v.iter_mut())
            {
                let gi = gi.as_f64();
                *mi = self.beta1 * *mi + (1.0 - self.beta1) * gi;
                *vi = self.beta2 * *vi + (1.0 - self.beta2) * gi * gi;
                let mhat = *mi / bc1;
                let vhat = *vi / bc2;
                let mut pv = p.as_f64();
                pv -= rate * decay * pv;
                pv -= rate * mhat / (vhat.sqrt() + ADAM_EPS);
                *p = T::of(pv);
            }
        }
        Ok(())
    }
}

/// Scales `grads` in place so their global L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_grad_norm<T: Scalar>(grads: &mut [Tensor<T>], max_norm: f64) -> f64 {
    let norm = grads
        .iter()
        .flat_map(|g| g.data())
        .map(|v| v.as_f64() * v.as_f64())
        .sum::<f64>()
        .sqrt();
    if norm > max_norm {
        let k = T::of(max_norm / norm);
        for g in grads.iter_mut() {
            for v in g.data_mut() {
                *v *= k;
            }
        }
    }
    norm
}
