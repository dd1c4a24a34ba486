use serde::{Deserialize, Serialize};

use super::{NumError, Tensor};

/// Adam hyperparameters other than the learning rate.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moment estimates, one pair per parameter tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    m: Vec<Tensor>,
    v: Vec<Tensor>,
    step: u64,
}

impl AdamState {
    pub fn new<'a>(params: impl IntoIterator<Item = &'a Tensor>) -> Self {
        let m: Vec<Tensor> = params.into_iter().map(|p| Tensor::zeros(p.shape())).collect();
        let v = m.clone();
        Self { m, v, step: 0 }
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn first_moments(&self) -> &[Tensor] {
        &self.m
    }

    pub fn second_moments(&self) -> &[Tensor] {
        &self.v
    }
}

/// One bias-corrected Adam update over every parameter tensor.
pub fn adam_step(
    params: &mut [&mut Tensor],
    grads: &[&Tensor],
    state: &mut AdamState,
    lr: f64,
    cfg: &AdamConfig,
) -> Result<(), NumError> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(NumError::Shape {
            op: "adam_step",
            detail: format!(
                "{} params, {} grads, {} moment slots",
                params.len(),
                grads.len(),
                state.m.len()
            ),
        });
    }
    for (i, (p, g)) in params.iter().zip(grads).enumerate() {
        if p.shape() != g.shape() || p.shape() != state.m[i].shape() {
            return Err(NumError::Shape {
                op: "adam_step",
                detail: format!("param {i}: {:?} vs grad {:?}", p.shape(), g.shape()),
            });
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
        let m = state.m[i].data_mut();
        let v = state.v[i].data_mut();
        for (((pv, &gv), mv), vv) in p.data_mut().iter_mut().zip(g.data()).zip(m).zip(v) {
            *mv = cfg.beta1 * *mv + (1.0 - cfg.beta1) * gv;
            *vv = cfg.beta2 * *vv + (1.0 - cfg.beta2) * gv * gv;
            let mhat = *mv / bc1;
            let vhat = *vv / bc2;
            *pv -= lr * mhat / (vhat.sqrt() + cfg.eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run(grads: &[f64], lr: f64) -> (f64, AdamState) {
        let mut p = Tensor::scalar(0.0);
        let mut state = AdamState::new([&p]);
        for &g in grads {
            let g = Tensor::scalar(g);
            adam_step(&mut [&mut p], &[&g], &mut state, lr, &AdamConfig::default()).unwrap();
        }
        (p.item().unwrap(), state)
    }

    #[test]
    fn first_step_moves_by_lr() {
        let (p, state) = run(&[1.0], 0.001);
        assert!((p + 0.001).abs() < 1e-6);
        assert_eq!(state.step(), 1);
    }

    #[test]
    fn zero_gradient_is_a_no_op_but_counts() {
        let (p, state) = run(&[0.0, 0.0], 0.001);
        assert_eq!(p, 0.0);
        assert_eq!(state.step(), 2);
    }

    #[test]
    fn two_constant_steps() {
        // Hand-iterated: m1=0.1, v1=0.001 -> mhat=vhat=1; m2=0.19, v2=0.001999
        // -> mhat=0.19/0.19=1, vhat=0.001999/0.001999=1; each update is lr/(1+eps).
        let lr = 0.001;
        let expected = -2.0 * lr / (1.0 + 1e-8);
        let (p, _) = run(&[1.0, 1.0], lr);
        assert!((p - expected).abs() < 1e-12);
        assert!((p + 0.002).abs() < 1e-5);
    }

    #[test]
    fn zero_lr_is_identity() {
        let (p, state) = run(&[3.0, -2.0, 0.5], 0.0);
        assert_eq!(p, 0.0);
        assert!(state.second_moments()[0].data()[0] >= 0.0);
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let mut p = Tensor::zeros(&[2]);
        let mut state = AdamState::new([&p]);
        let g = Tensor::zeros(&[3]);
        assert!(adam_step(&mut [&mut p], &[&g], &mut state, 0.1, &AdamConfig::default()).is_err());
    }
}
