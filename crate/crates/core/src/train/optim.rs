use ndarray::Zip;

use crate::model::{MappingGrads, MappingNetwork};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OptimizerKind {
    Sgd,
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl OptimizerKind {
    pub fn adam() -> Self {
        OptimizerKind::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            OptimizerKind::Sgd => "sgd",
            OptimizerKind::Adam { .. } => "adam",
        }
    }
}

/// Per-network optimizer state.
#[derive(Debug, Clone)]
pub struct Optimizer {
    kind: OptimizerKind,
    lr: f64,
    step: u64,
    m: Option<MappingGrads>,
    v: Option<MappingGrads>,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, lr: f64) -> Self {
        Self {
            kind,
            lr,
            step: 0,
            m: None,
            v: None,
        }
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    /// Applies one update. A zero learning rate leaves the network untouched
    /// bit for bit.
    pub fn step(&mut self, net: &mut MappingNetwork, grads: &MappingGrads) {
        self.step += 1;
        if self.lr == 0.0 {
            return;
        }
        match self.kind {
            OptimizerKind::Sgd => net.apply_sgd(grads, self.lr),
            OptimizerKind::Adam { beta1, beta2, eps } => {
                let m = self.m.get_or_insert_with(|| MappingGrads::zeros_like(net));
                let v = self.v.get_or_insert_with(|| MappingGrads::zeros_like(net));
                let t = self.step as i32;
                let c1 = 1.0 - beta1.powi(t);
                let c2 = 1.0 - beta2.powi(t);
                let lr = self.lr;
                for (((layer, g), m), v) in net.layers_mut().zip(&grads.layers).zip(&mut m.layers).zip(&mut v.layers) {
                    Zip::from(&mut layer.weight)
                        .and(&g.weight)
                        .and(&mut m.weight)
                        .and(&mut v.weight)
                        .for_each(|p, &g, m, v| adam_update(p, g, m, v, lr, beta1, beta2, eps, c1, c2));
                    Zip::from(&mut layer.bias)
                        .and(&g.bias)
                        .and(&mut m.bias)
                        .and(&mut v.bias)
                        .for_each(|p, &g, m, v| adam_update(p, g, m, v, lr, beta1, beta2, eps, c1, c2));
                }
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn adam_update(p: &mut f64, g: f64, m: &mut f64, v: &mut f64, lr: f64, b1: f64, b2: f64, eps: f64, c1: f64, c2: f64) {
    *m = b1 * *m + (1.0 - b1) * g;
    *v = b2 * *v + (1.0 - b2) * g * g;
    *p -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
}
