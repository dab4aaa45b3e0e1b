use super::{OptimizerKind, TrainConfig};
use crate::moe::Params;

/// SGD or Adam with optional global-norm clipping.
#[derive(Debug, Clone)]
pub struct Optimizer {
    kind: OptimizerKind,
    learning_rate: f64,
    grad_clip: Option<f64>,
    moments: Option<(Params, Params)>,
    step: i32,
}

impl Optimizer {
    pub fn new(config: &TrainConfig) -> Self {
        Optimizer {
            kind: config.optimizer,
            learning_rate: config.learning_rate,
            grad_clip: config.grad_clip,
            moments: None,
            step: 0,
        }
    }

    pub fn step(&mut self, params: &mut Params, grad: &Params) {
        self.step += 1;
        let scale = match self.grad_clip {
            Some(max) => {
                let norm = grad.l2_norm();
                if norm > max {
                    max / norm
                } else {
                    1.0
                }
            }
            None => 1.0,
        };
        let lr = self.learning_rate;
        match self.kind {
            OptimizerKind::Sgd => {
                for (p, (_, g)) in params.tensors_mut().into_iter().zip(grad.tensors()) {
                    for (x, d) in p.iter_mut().zip(g) {
                        *x -= lr * scale * d;
                    }
                }
            }
            OptimizerKind::Adam { beta1, beta2, epsilon } => {
                let (m, v) = self.moments.get_or_insert_with(|| (params.zeros_like(), params.zeros_like()));
                let c1 = 1.0 - beta1.powi(self.step);
                let c2 = 1.0 - beta2.powi(self.step);
                let tensors = params
                    .tensors_mut()
                    .into_iter()
                    .zip(grad.tensors())
                    .zip(m.tensors_mut().into_iter().zip(v.tensors_mut()));
                for ((p, (_, g)), (mt, vt)) in tensors {
                    for i in 0..p.len() {
                        let d = scale * g[i];
                        mt[i] = beta1 * mt[i] + (1.0 - beta1) * d;
                        vt[i] = beta2 * vt[i] + (1.0 - beta2) * d * d;
                        let mh = mt[i] / c1;
                        let vh = vt[i] / c2;
                        p[i] -= lr * mh / (vh.sqrt() + epsilon);
                    }
                }
            }
        }
    }
}
