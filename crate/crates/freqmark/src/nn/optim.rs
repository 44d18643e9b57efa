//! Adam optimizer over the network's parameter tensors.

use super::model::{t, NetShape, NetTensors, Scalar};
use super::train::TrainError;

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-8;

/// First/second moment estimates plus the step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub step: u64,
    pub m: NetTensors<T>,
    pub v: NetTensors<T>,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(shape: &NetShape) -> Self {
        Self { step: 0, m: NetTensors::zeros(shape), v: NetTensors::zeros(shape) }
    }

    /// One Adam update with bias correction. Rejects non-finite gradients
    /// before touching any state, so a failed step leaves parameters intact.
    pub fn apply(
        &mut self,
        params: &mut NetTensors<T>,
        grads: &NetTensors<T>,
        lr: f64,
    ) -> Result<(), TrainError> {
        if let Some(tensor) = grads.first_non_finite() {
            return Err(TrainError::NonFiniteGradient { tensor });
        }
        self.step += 1;
        let b1 = t::<T>(BETA1);
        let b2 = t::<T>(BETA2);
        let one = T::one();
        let corr1 = t::<T>(1.0 - BETA1.powi(self.step as i32));
        let corr2 = t::<T>(1.0 - BETA2.powi(self.step as i32));
        let lr_t = t::<T>(lr);
        let eps = t::<T>(EPSILON);
        for (((p, g), m), v) in params
            .fields_mut()
            .into_iter()
            .zip(grads.fields())
            .zip(self.m.fields_mut())
            .zip(self.v.fields_mut())
        {
            for (((pv, &gv), mv), vv) in p.iter_mut().zip(g.iter()).zip(m.iter_mut()).zip(v.iter_mut())
            {
                *mv = b1 * *mv + (one - b1) * gv;
                *vv = b2 * *vv + (one - b2) * gv * gv;
                let m_hat = *mv / corr1;
                let v_hat = *vv / corr2;
                *pv = *pv - lr_t * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}
