use crate::tensor::Tensor;

/// Cosine annealing with warm restarts, indexed by epoch.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Schedule {
    pub lr_max: f64,
    pub lr_min: f64,
    pub period: usize,
}

impl Default for Schedule {
    fn default() -> Self {
        Self {
            lr_max: 1e-3,
            lr_min: 1e-7,
            period: 100,
        }
    }
}

impl Schedule {
    /// `lr_min + (lr_max - lr_min) (1 + cos(pi (t mod P) / P)) / 2`.
    /// Fractional `t` is accepted.
    pub fn lr(&self, t: f64) -> f64 {
        let p = self.period as f64;
        let phase = t.rem_euclid(p) / p;
        self.lr_min
            + 0.5 * (self.lr_max - self.lr_min) * (1.0 + (std::f64::consts::PI * phase).cos())
    }
}

/// The default schedule (1e-3 down to 1e-7, restarting every 100 epochs).
pub fn cosine_lr(epoch: f64) -> f64 {
    Schedule::default().lr(epoch)
}

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// Adam moments for a list of parameter tensors. Updates run in single
/// precision; only the bias corrections are formed in double.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub step: u64,
    pub m: Vec<Tensor<f32>>,
    pub v: Vec<Tensor<f32>>,
}

impl Adam {
    pub fn new<'a>(params: impl Iterator<Item = &'a Tensor<f32>>) -> Self {
        let m: Vec<Tensor<f32>> = params.map(|p| Tensor::zeros(p.shape())).collect();
        Self {
            step: 0,
            v: m.clone(),
            m,
        }
    }

    /// One bias-corrected update of every parameter.
    pub fn update<'a>(
        &mut self,
        params: impl Iterator<Item = &'a mut Tensor<f32>>,
        grads: &[Tensor<f32>],
        lr: f64,
    ) {
        self.step += 1;
        let (b1, b2) = (BETA1 as f32, BETA2 as f32);
        let c1 = (1.0 - BETA1.powi(self.step as i32)) as f32;
        let c2 = (1.0 - BETA2.powi(self.step as i32)) as f32;
        let (lr, eps) = (lr as f32, ADAM_EPS as f32);
        for (((p, g), m), v) in params.zip(grads).zip(&mut self.m).zip(&mut self.v) {
            assert_eq!(p.shape(), g.shape(), "gradient shape");
            let (p, m, v) = (p.data_mut(), m.data_mut(), v.data_mut());
            for i in 0..p.len() {
                let gi = g.data()[i];
                m[i] = b1 * m[i] + (1.0 - b1) * gi;
                v[i] = b2 * v[i] + (1.0 - b2) * gi * gi;
                let mh = m[i] / c1;
                let vh = v[i] / c2;
                p[i] -= lr * mh / (vh.sqrt() + eps);
            }
        }
    }
}
