use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{Gradients, ParamStore, Tensor};

/// First and second moment estimates plus the update count.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub t: u64,
    pub m: Vec<Tensor<f32>>,
    pub v: Vec<Tensor<f32>>,
}

/// Adaptive-moment optimizer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    #[serde(skip)]
    state: Option<AdamState>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            state: None,
        }
    }

    pub fn state(&self) -> Option<&AdamState> {
        self.state.as_ref()
    }

    pub fn set_state(&mut self, state: AdamState) {
        self.state = Some(state);
    }

    /// One bias-corrected update of every parameter.
    pub fn step(&mut self, ps: &mut ParamStore<f32>, grads: &Gradients<f32>) -> Result<()> {
        if grads.len() != ps.len() {
            return Err(Error::Shape {
                op: "adam",
                left: vec![ps.len()],
                right: vec![grads.len()],
            });
        }
        let st = self.state.get_or_insert_with(|| AdamState {
            t: 0,
            m: ps.iter().map(|(_, t)| Tensor::zeros(t.shape())).collect(),
            v: ps.iter().map(|(_, t)| Tensor::zeros(t.shape())).collect(),
        });
        st.t += 1;
        let (b1, b2) = (self.beta1 as f32, self.beta2 as f32);
        let c1 = 1.0 - self.beta1.powi(st.t as i32);
        let c2 = 1.0 - self.beta2.powi(st.t as i32);
        let step = (self.lr * c2.sqrt() / c1) as f32;
        let eps = (self.eps * c2.sqrt()) as f32;
        for i in 0..ps.len() {
            let g = grads.get(i).data();
            let m = st.m[i].data_mut();
            let v = st.v[i].data_mut();
            let p = ps.tensor_at_mut(i).data_mut();
            for j in 0..p.len() {
                m[j] = b1 * m[j] + (1.0 - b1) * g[j];
                v[j] = b2 * v[j] + (1.0 - b2) * g[j] * g[j];
                p[j] -= step * m[j] / (v[j].sqrt() + eps);
            }
        }
        Ok(())
    }
}
