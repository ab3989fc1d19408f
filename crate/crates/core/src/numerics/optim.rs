use super::mlp::{MlpGrads, MlpParams};
use crate::error::{shape_err, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OptimKind {
    Sgd { lr: f64, momentum: f64 },
    Adam { lr: f64, beta1: f64, beta2: f64, eps: f64 },
}

impl OptimKind {
    pub fn sgd(lr: f64, momentum: f64) -> Self {
        OptimKind::Sgd { lr, momentum }
    }

    pub fn adam(lr: f64) -> Self {
        OptimKind::Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn lr(&self) -> f64 {
        match *self {
            OptimKind::Sgd { lr, .. } | OptimKind::Adam { lr, .. } => lr,
        }
    }

    /// Same rule with the learning rate multiplied by `factor`.
    pub fn scaled(self, factor: f64) -> Self {
        match self {
            OptimKind::Sgd { lr, momentum } => OptimKind::Sgd { lr: lr * factor, momentum },
            OptimKind::Adam { lr, beta1, beta2, eps } => OptimKind::Adam {
                lr: lr * factor,
                beta1,
                beta2,
                eps,
            },
        }
    }
}

/// Optimizer state for one parameter set. Accumulators are allocated on the
/// first step and must keep matching the parameter block shapes afterwards.
#[derive(Debug, Clone)]
pub struct OptimState {
    kind: OptimKind,
    steps: u64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl OptimState {
    pub fn new(kind: OptimKind) -> Result<Self> {
        if !(kind.lr() > 0.0) {
            return Err(Error::InvalidInput(format!("learning rate must be > 0, got {}", kind.lr())));
        }
        Ok(OptimState {
            kind,
            steps: 0,
            first: Vec::new(),
            second: Vec::new(),
        })
    }

    pub fn kind(&self) -> OptimKind {
        self.kind
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn step(&mut self, params: &mut MlpParams, grads: &MlpGrads) -> Result<()> {
        if grads.layers.len() != params.layers().len() {
            return shape_err("gradient layer count does not match parameters");
        }
        if !grads.all_finite() {
            return Err(Error::Numeric("non-finite gradient".into()));
        }
        let blocks: Vec<&mut [f64]> = params.blocks_mut().collect();
        let gblocks: Vec<&[f64]> = grads.blocks().collect();
        self.step_blocks(blocks, &gblocks)
    }

    /// Update raw parameter blocks in place. Block order and sizes must be
    /// the same on every call.
    pub fn step_blocks(&mut self, params: Vec<&mut [f64]>, grads: &[&[f64]]) -> Result<()> {
        if params.len() != grads.len() || params.iter().zip(grads).any(|(p, g)| p.len() != g.len()) {
            return shape_err("gradient blocks do not mirror parameter blocks");
        }
        if grads.iter().any(|g| g.iter().any(|v| !v.is_finite())) {
            return Err(Error::Numeric("non-finite gradient".into()));
        }
        if self.first.is_empty() {
            self.first = params.iter().map(|p| vec![0.0; p.len()]).collect();
            if matches!(self.kind, OptimKind::Adam { .. }) {
                self.second = params.iter().map(|p| vec![0.0; p.len()]).collect();
            }
        } else if self.first.len() != params.len()
            || self.first.iter().zip(&params).any(|(a, p)| a.len() != p.len())
        {
            return shape_err("optimizer accumulators no longer match parameter shapes");
        }
        self.steps += 1;
        match self.kind {
            OptimKind::Sgd { lr, momentum } => {
                for ((p, g), v) in params.into_iter().zip(grads).zip(&mut self.first) {
                    for ((w, &gv), vel) in p.iter_mut().zip(*g).zip(v.iter_mut()) {
                        *vel = momentum * *vel + gv;
                        *w -= lr * *vel;
                    }
                }
            }
            OptimKind::Adam { lr, beta1, beta2, eps } => {
                let t = self.steps as i32;
                let c1 = 1.0 - beta1.powi(t);
                let c2 = 1.0 - beta2.powi(t);
                for (((p, g), m), s) in params
                    .into_iter()
                    .zip(grads)
                    .zip(&mut self.first)
                    .zip(&mut self.second)
                {
                    for (((w, &gv), mv), sv) in p.iter_mut().zip(*g).zip(m.iter_mut()).zip(s.iter_mut()) {
                        *mv = beta1 * *mv + (1.0 - beta1) * gv;
                        *sv = beta2 * *sv + (1.0 - beta2) * gv * gv;
                        let m_hat = *mv / c1;
                        let s_hat = *sv / c2;
                        *w -= lr * m_hat / (s_hat.sqrt() + eps);
                    }
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_step(state: &mut OptimState, w: &mut f64, g: f64) {
        let mut p = [*w];
        state.step_blocks(vec![&mut p[..]], &[&[g]]).unwrap();
        *w = p[0];
    }

    #[test]
    fn plain_sgd_step() {
        let mut s = OptimState::new(OptimKind::sgd(0.1, 0.0)).unwrap();
        let mut w = 1.0;
        scalar_step(&mut s, &mut w, 0.5);
        assert!((w - 0.95).abs() < 1e-15);
    }

    #[test]
    fn momentum_second_update_is_0_19() {
        // v1 = 1, v2 = 0.9 * 1 + 1 = 1.9, update = lr * v2.
        let mut s = OptimState::new(OptimKind::sgd(0.1, 0.9)).unwrap();
        let mut w = 0.0;
        scalar_step(&mut s, &mut w, 1.0);
        let before = w;
        scalar_step(&mut s, &mut w, 1.0);
        assert!(((before - w) - 0.19).abs() < 1e-12);
    }

    #[test]
    fn first_adam_step_is_lr_times_sign() {
        for &g in &[3.0, -0.02, 1e-3] {
            let mut s = OptimState::new(OptimKind::adam(0.003)).unwrap();
            let mut w = 0.0;
            scalar_step(&mut s, &mut w, g);
            let expected = -0.003 * g / (g.abs() + 1e-8);
            assert!((w - expected).abs() < 1e-15, "g={g} w={w}");
            assert!((w + 0.003 * g.signum()).abs() < 1e-7);
        }
    }

    #[test]
    fn zero_gradient_without_momentum_is_identity() {
        let mut s = OptimState::new(OptimKind::sgd(0.5, 0.0)).unwrap();
        let mut p = [0.25, -1.5];
        s.step_blocks(vec![&mut p[..]], &[&[0.0, 0.0]]).unwrap();
        assert_eq!(p, [0.25, -1.5]);
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(OptimState::new(OptimKind::sgd(0.0, 0.0)).is_err());
        let mut s = OptimState::new(OptimKind::sgd(0.1, 0.0)).unwrap();
        let mut p = [1.0];
        assert!(matches!(
            s.step_blocks(vec![&mut p[..]], &[&[f64::NAN]]),
            Err(Error::Numeric(_))
        ));
        s.step_blocks(vec![&mut p[..]], &[&[1.0]]).unwrap();
        let mut q = [1.0, 2.0];
        assert!(s.step_blocks(vec![&mut q[..]], &[&[1.0, 1.0]]).is_err());
    }
}
