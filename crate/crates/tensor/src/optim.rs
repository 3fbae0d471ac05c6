use crate::nn::ParamStore;
use crate::Tensor;

/// Adam with optional global-norm gradient clipping.
#[derive(Clone, Debug)]
pub struct Adam {
    pub lr: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
    pub clip_norm: Option<f32>,
    step: u32,
    m: Vec<Vec<f32>>,
    v: Vec<Vec<f32>>,
}

impl Adam {
    pub fn new(lr: f32) -> Self {
        Self { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, clip_norm: None, step: 0, m: vec![], v: vec![] }
    }

    pub fn with_betas(mut self, beta1: f32, beta2: f32) -> Self {
        self.beta1 = beta1;
        self.beta2 = beta2;
        self
    }

    pub fn with_clip(mut self, max_norm: f32) -> Self {
        self.clip_norm = Some(max_norm);
        self
    }

    pub fn steps_taken(&self) -> u32 {
        self.step
    }

    pub fn step(&mut self, store: &mut ParamStore, grads: &[Tensor]) {
        assert_eq!(grads.len(), store.len(), "gradient count does not match parameter count");
        if self.m.is_empty() {
            self.m = store.tensors().iter().map(|t| vec![0.0; t.numel()]).collect();
            self.v = self.m.clone();
        }
        let scale = match self.clip_norm {
            Some(max) => {
                let norm = grads.iter().flat_map(|g| g.data()).map(|&x| (x as f64) * (x as f64)).sum::<f64>().sqrt();
                if norm > max as f64 {
                    (max as f64 / norm) as f32
                } else {
                    1.0
                }
            }
            None => 1.0,
        };
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for (i, param) in store.tensors_mut().iter_mut().enumerate() {
            let g = grads[i].data();
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for (j, p) in param.data_mut().iter_mut().enumerate() {
                let gj = g[j] * scale;
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * gj;
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * gj * gj;
                let mhat = m[j] / bc1;
                let vhat = v[j] / bc2;
                *p -= self.lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
    }
}

/// Exponential moving average of parameters.
#[derive(Clone, Debug)]
pub struct Ema {
    pub decay: f32,
    shadow: ParamStore,
}

impl Ema {
    pub fn new(store: &ParamStore, decay: f32) -> Self {
        Self { decay, shadow: store.clone() }
    }

    pub fn update(&mut self, store: &ParamStore) {
        for (s, p) in self.shadow.tensors_mut().iter_mut().zip(store.tensors()) {
            for (a, &b) in s.data_mut().iter_mut().zip(p.data()) {
                *a = self.decay * *a + (1.0 - self.decay) * b;
            }
        }
    }

    pub fn shadow(&self) -> &ParamStore {
        &self.shadow
    }
}
