//! Adam optimizer with bias correction; weight decay enters the gradient as
//! g + wd * theta before the moment updates.

use crate::mat::Mat;

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPS: f64 = 1e-8;

#[derive(Clone)]
pub struct AdamState {
    m: Vec<Mat>,
    v: Vec<Mat>,
    step: u64,
}

impl AdamState {
    pub fn new(params: &[Mat]) -> Self {
        AdamState {
            m: params.iter().map(|p| Mat::zeros(p.rows(), p.cols())).collect(),
            v: params.iter().map(|p| Mat::zeros(p.rows(), p.cols())).collect(),
            step: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One update over matched parameter/gradient lists.
    pub fn step(&mut self, params: &mut [Mat], grads: &[Mat], lr: f64, weight_decay: f64) {
        assert_eq!(params.len(), self.m.len(), "parameter count changed");
        assert_eq!(params.len(), grads.len(), "gradient count mismatch");
        self.step += 1;
        let bc1 = 1.0 - BETA1.powi(self.step as i32);
        let bc2 = 1.0 - BETA2.powi(self.step as i32);
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            debug_assert!(p.same_shape(g), "gradient shape mismatch");
            for k in 0..p.len() {
                let gk = g.data()[k] + weight_decay * p.data()[k];
                let mk = BETA1 * m.data()[k] + (1.0 - BETA1) * gk;
                let vk = BETA2 * v.data()[k] + (1.0 - BETA2) * gk * gk;
                m.data_mut()[k] = mk;
                v.data_mut()[k] = vk;
                let m_hat = mk / bc1;
                let v_hat = vk / bc2;
                p.data_mut()[k] -= lr * m_hat / (v_hat.sqrt() + EPS);
            }
        }
    }
}
