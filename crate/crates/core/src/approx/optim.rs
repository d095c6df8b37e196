use serde::{Deserialize, Serialize};

use super::ParamVector;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

/// First-order optimizer state for one parameter vector.
#[derive(Debug, Clone)]
pub enum Optimizer {
    Sgd {
        lr: f64,
    },
    Adam {
        lr: f64,
        beta1: f64,
        beta2: f64,
        eps: f64,
        m: Vec<f64>,
        v: Vec<f64>,
        t: i32,
    },
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, lr: f64, len: usize) -> Self {
        match kind {
            OptimizerKind::Sgd => Self::Sgd { lr },
            OptimizerKind::Adam => Self::Adam {
                lr,
                beta1: 0.9,
                beta2: 0.999,
                eps: 1e-8,
                m: vec![0.0; len],
                v: vec![0.0; len],
                t: 0,
            },
        }
    }

    /// Moves `params` along `direction` (ascent when `direction` is a gradient
    /// of an objective to maximize).
    pub fn step(&mut self, params: &mut ParamVector, direction: &ParamVector) {
        match self {
            Self::Sgd { lr } => params.add_scaled(direction, *lr),
            Self::Adam {
                lr,
                beta1,
                beta2,
                eps,
                m,
                v,
                t,
            } => {
                *t += 1;
                let c1 = 1.0 - beta1.powi(*t);
                let c2 = 1.0 - beta2.powi(*t);
                for (k, (p, g)) in params.values.iter_mut().zip(&direction.values).enumerate() {
                    m[k] = *beta1 * m[k] + (1.0 - *beta1) * g;
                    v[k] = *beta2 * v[k] + (1.0 - *beta2) * g * g;
                    *p += *lr * (m[k] / c1) / ((v[k] / c2).sqrt() + *eps);
                }
            }
        }
    }
}
