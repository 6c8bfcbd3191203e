use super::{Result, Tensor, TensorError};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Round parameters and moments to f32 after every update so that the
    /// f32 checkpoint payload captures the optimizer trajectory exactly.
    pub f32_storage: bool,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            f32_storage: false,
        }
    }
}

/// First/second moment estimates, one pair per parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
}

impl AdamState {
    pub fn for_params(params: &[Tensor]) -> Self {
        Self {
            step: 0,
            m: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
            v: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Adam {
    pub config: AdamConfig,
    pub state: AdamState,
}

fn round32(x: f64) -> f64 {
    x as f32 as f64
}

impl Adam {
    pub fn new(config: AdamConfig, params: &[Tensor]) -> Self {
        Self {
            config,
            state: AdamState::for_params(params),
        }
    }

    /// One bias-corrected Adam update. A non-finite gradient aborts the step
    /// before any parameter is touched.
    pub fn step(
        &mut self,
        params: &mut [Tensor],
        names: &[String],
        grads: &[Vec<f64>],
        lr: f64,
    ) -> Result<()> {
        assert_eq!(params.len(), grads.len());
        assert_eq!(params.len(), self.state.m.len());
        for (i, g) in grads.iter().enumerate() {
            if g.len() != params[i].numel() {
                return Err(TensorError::Shape {
                    op: "adam",
                    lhs: params[i].shape().to_vec(),
                    rhs: vec![g.len()],
                });
            }
            if g.iter().any(|x| !x.is_finite()) {
                let name = names.get(i).cloned().unwrap_or_else(|| format!("#{i}"));
                return Err(TensorError::NanGradient(name));
            }
        }
        let AdamConfig {
            beta1,
            beta2,
            eps,
            f32_storage,
        } = self.config;
        self.state.step += 1;
        let t = self.state.step as i32;
        let c1 = 1.0 - beta1.powi(t);
        let c2 = 1.0 - beta2.powi(t);
        for (i, g) in grads.iter().enumerate() {
            let m = self.state.m[i].data_mut();
            let v = self.state.v[i].data_mut();
            let p = params[i].data_mut();
            for j in 0..g.len() {
                m[j] = beta1 * m[j] + (1.0 - beta1) * g[j];
                v[j] = beta2 * v[j] + (1.0 - beta2) * g[j] * g[j];
                if f32_storage {
                    m[j] = round32(m[j]);
                    v[j] = round32(v[j]);
                }
                let mhat = m[j] / c1;
                let vhat = v[j] / c2;
                p[j] -= lr * mhat / (vhat.sqrt() + eps);
                if f32_storage {
                    p[j] = round32(p[j]);
                }
            }
        }
        Ok(())
    }
}
