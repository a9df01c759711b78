use super::{NumError, Tensor};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self {
            lr,
            ..Self::default()
        }
    }
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam with bias correction. Moments are allocated on the first step and
/// their shapes are fixed from then on.
#[derive(Clone, Debug)]
pub struct Adam {
    pub config: AdamConfig,
    t: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Self {
        Self {
            config,
            t: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn first_moment(&self, param: usize) -> &[f64] {
        &self.m[param]
    }

    pub fn second_moment(&self, param: usize) -> &[f64] {
        &self.v[param]
    }

    pub fn step(&mut self, params: &mut [&mut Tensor], grads: &[&[f64]]) -> Result<(), NumError> {
        if params.len() != grads.len() {
            return Err(NumError::Shape {
                op: "adam_step",
                left: vec![params.len()],
                right: vec![grads.len()],
            });
        }
        if self.m.is_empty() {
            self.m = params.iter().map(|p| vec![0.0; p.len()]).collect();
            self.v = self.m.clone();
        }
        if self.m.len() != params.len() {
            return Err(NumError::Shape {
                op: "adam_step",
                left: vec![self.m.len()],
                right: vec![params.len()],
            });
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.len() != g.len() || self.m[i].len() != p.len() {
                return Err(NumError::Shape {
                    op: "adam_step",
                    left: p.shape().to_vec(),
                    right: vec![g.len()],
                });
            }
        }

        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
        } = self.config;
        self.t += 1;
        let bc1 = 1.0 - beta1.powi(self.t as i32);
        let bc2 = 1.0 - beta2.powi(self.t as i32);

        for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            let mut next = Vec::with_capacity(p.len());
            for (j, (&theta, &gj)) in p.data().iter().zip(g.iter()).enumerate() {
                m[j] = beta1 * m[j] + (1.0 - beta1) * gj;
                v[j] = beta2 * v[j] + (1.0 - beta2) * gj * gj;
                let m_hat = m[j] / bc1;
                let v_hat = v[j] / bc2;
                next.push((theta as f64 - lr * m_hat / (v_hat.sqrt() + eps)) as f32);
            }
            **p = Tensor::new(p.shape().to_vec(), next)?;
        }
        Ok(())
    }
}
