//! First-order optimizers over the parameter store.
//!
//! SGD is the default and carries no state. Adam keeps per-parameter
//! moments that serialize into checkpoints, so a resumed run continues the
//! exact float trajectory of an uninterrupted one. Parameters whose
//! gradient slot is None (frozen groups, or values absent from the loss
//! graph) are left untouched, moments included.

use thiserror::Error;

use crate::checkpoint::Tensor;
use crate::config::OptimizerKind;
use crate::params::ParamStore;

#[derive(Debug, Error)]
pub enum OptimError {
    #[error("gradient list has {got} entries for {want} parameters")]
    GradCount { got: usize, want: usize },
    #[error("optimizer state tensor {0} is missing from the checkpoint")]
    MissingState(String),
    #[error("optimizer state tensor {name} has {got} values, parameter wants {want}")]
    StateSize { name: String, got: usize, want: usize },
    #[error("checkpoint carries optimizer state but the configured optimizer is sgd")]
    UnexpectedState,
}

const ADAM_BETA1: f32 = 0.9;
const ADAM_BETA2: f32 = 0.999;
const ADAM_EPS: f32 = 1e-8;

#[derive(Debug)]
pub enum Optimizer {
    Sgd { lr: f32 },
    Adam { lr: f32, t: u64, m: Vec<Vec<f32>>, v: Vec<Vec<f32>> },
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, lr: f64, store: &ParamStore) -> Optimizer {
        match kind {
            OptimizerKind::Sgd => Optimizer::Sgd { lr: lr as f32 },
            OptimizerKind::Adam => Optimizer::Adam {
                lr: lr as f32,
                t: 0,
                m: store.iter().map(|p| vec![0.0; p.data.len()]).collect(),
                v: store.iter().map(|p| vec![0.0; p.data.len()]).collect(),
            },
        }
    }

    /// One update from gradients in parameter registration order.
    pub fn step(&mut self, store: &mut ParamStore, grads: &[Option<&[f32]>]) -> Result<(), OptimError> {
        if grads.len() != store.len() {
            return Err(OptimError::GradCount { got: grads.len(), want: store.len() });
        }
        match self {
            Optimizer::Sgd { lr } => {
                let lr = *lr;
                for (i, grad) in grads.iter().enumerate() {
                    let Some(g) = grad else { continue };
                    let data = &mut store.at_mut(i).data;
                    for (p, &gv) in data.iter_mut().zip(*g) {
                        *p -= lr * gv;
                    }
                }
            }
            Optimizer::Adam { lr, t, m, v } => {
                *t += 1;
                let bc1 = 1.0 - ADAM_BETA1.powi(*t as i32);
                let bc2 = 1.0 - ADAM_BETA2.powi(*t as i32);
                let lr = *lr;
                for (i, grad) in grads.iter().enumerate() {
                    let Some(g) = grad else { continue };
                    let data = &mut store.at_mut(i).data;
                    let (mi, vi) = (&mut m[i], &mut v[i]);
                    for j in 0..data.len() {
                        let gv = g[j];
                        mi[j] = ADAM_BETA1 * mi[j] + (1.0 - ADAM_BETA1) * gv;
                        vi[j] = ADAM_BETA2 * vi[j] + (1.0 - ADAM_BETA2) * gv * gv;
                        let mhat = mi[j] / bc1;
                        let vhat = vi[j] / bc2;
                        data[j] -= lr * mhat / (vhat.sqrt() + ADAM_EPS);
                    }
                }
            }
        }
        Ok(())
    }

    /// Serializable state. Empty for SGD; Adam emits opt.m.* and opt.v.*
    /// per parameter plus the scalar step counter opt.t.
    pub fn state_tensors(&self, store: &ParamStore) -> Vec<Tensor> {
        match self {
            Optimizer::Sgd { .. } => Vec::new(),
            Optimizer::Adam { t, m, v, .. } => {
                let mut out = Vec::with_capacity(2 * store.len() + 1);
                out.push(Tensor { name: "opt.t".into(), group: None, shape: vec![1], data: vec![*t as f32] });
                for (i, p) in store.iter().enumerate() {
                    out.push(Tensor {
                        name: format!("opt.m.{}", p.name),
                        group: None,
                        shape: p.shape.clone(),
                        data: m[i].clone(),
                    });
                    out.push(Tensor {
                        name: format!("opt.v.{}", p.name),
                        group: None,
                        shape: p.shape.clone(),
                        data: v[i].clone(),
                    });
                }
                out
            }
        }
    }

    /// Restores Adam moments from checkpoint tensors. SGD accepts only an
    /// empty list; missing Adam state is an error rather than a silent
    /// reset, since it would change the trajectory.
    pub fn load_state(&mut self, store: &ParamStore, tensors: &[Tensor]) -> Result<(), OptimError> {
        let find = |name: &str| tensors.iter().find(|t| t.name == name);
        match self {
            Optimizer::Sgd { .. } => {
                if tensors.is_empty() {
                    Ok(())
                } else {
                    Err(OptimError::UnexpectedState)
                }
            }
            Optimizer::Adam { t, m, v, .. } => {
                let step = find("opt.t").ok_or_else(|| OptimError::MissingState("opt.t".into()))?;
                *t = step.data.first().copied().unwrap_or(0.0) as u64;
                for (i, p) in store.iter().enumerate() {
                    for (slot, prefix) in [(&mut m[i], "opt.m"), (&mut v[i], "opt.v")] {
                        let name = format!("{prefix}.{}", p.name);
                        let tensor = find(&name).ok_or_else(|| OptimError::MissingState(name.clone()))?;
                        if tensor.data.len() != p.data.len() {
                            return Err(OptimError::StateSize {
                                name,
                                got: tensor.data.len(),
                                want: p.data.len(),
                            });
                        }
                        slot.copy_from_slice(&tensor.data);
                    }
                }
                Ok(())
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use crate::params::{Init, ParamGroup};

    use super::*;

    fn small_store() -> ParamStore {
        let mut s = ParamStore::new(3);
        s.add("a", &[2, 2], ParamGroup::Fusion, Init::Const(1.0)).unwrap();
        s.add("b", &[3], ParamGroup::Heads, Init::Const(-0.5)).unwrap();
        s
    }

    #[test]
    fn sgd_applies_the_textbook_update() {
        let mut s = small_store();
        let mut opt = Optimizer::new(OptimizerKind::Sgd, 0.5, &s);
        let ga = [1.0f32, 2.0, -4.0, 0.0];
        let gb = [2.0f32, 2.0, 2.0];
        opt.step(&mut s, &[Some(&ga), Some(&gb)]).unwrap();
        let a: Vec<f32> = s.by_name("a").unwrap().data.clone();
        assert_eq!(a, vec![0.5, 0.0, 3.0, 1.0]);
        assert_eq!(s.by_name("b").unwrap().data, vec![-1.5, -1.5, -1.5]);
    }

    #[test]
    fn missing_gradients_leave_parameters_and_moments_alone() {
        let mut s = small_store();
        let mut opt = Optimizer::new(OptimizerKind::Adam, 0.1, &s);
        let gb = [1.0f32, 1.0, 1.0];
        opt.step(&mut s, &[None, Some(&gb)]).unwrap();
        assert_eq!(s.by_name("a").unwrap().data, vec![1.0; 4]);
        let Optimizer::Adam { m, .. } = &opt else { unreachable!() };
        assert_eq!(m[0], vec![0.0; 4], "frozen moments stay zero");
        assert!(m[1].iter().all(|&x| x != 0.0));
    }

    #[test]
    fn adam_first_step_moves_by_roughly_lr() {
        let mut s = small_store();
        let mut opt = Optimizer::new(OptimizerKind::Adam, 0.1, &s);
        let ga = [3.0f32, -3.0, 0.5, -0.5];
        let gb = [1.0f32, 1.0, 1.0];
        opt.step(&mut s, &[Some(&ga), Some(&gb)]).unwrap();
        // After bias correction the first step is lr * g / (|g| + eps).
        let a = &s.by_name("a").unwrap().data;
        for (got, &g) in a.iter().zip(&ga) {
            let want = 1.0 - 0.1 * g.signum();
            assert!((got - want).abs() < 1e-4, "{got} vs {want}");
        }
    }

    #[test]
    fn adam_state_round_trip_preserves_the_trajectory() {
        let grads: Vec<Vec<f32>> = (0..6)
            .map(|k| (0..7).map(|j| ((k * 7 + j) as f32 * 0.37).sin()).collect())
            .collect();
        let run = |resume_at: Option<usize>| -> Vec<f32> {
            let mut s = small_store();
            let mut opt = Optimizer::new(OptimizerKind::Adam, 0.05, &s);
            for (k, g) in grads.iter().enumerate() {
                if Some(k) == resume_at {
                    let tensors = opt.state_tensors(&s);
                    let mut fresh = Optimizer::new(OptimizerKind::Adam, 0.05, &s);
                    fresh.load_state(&s, &tensors).unwrap();
                    opt = fresh;
                }
                opt.step(&mut s, &[Some(&g[..4]), Some(&g[4..])]).unwrap();
            }
            s.iter().flat_map(|p| p.data.clone()).collect()
        };
        let straight = run(None);
        let resumed = run(Some(3));
        let straight_bits: Vec<u32> = straight.iter().map(|v| v.to_bits()).collect();
        let resumed_bits: Vec<u32> = resumed.iter().map(|v| v.to_bits()).collect();
        assert_eq!(straight_bits, resumed_bits);
    }

    #[test]
    fn state_errors_are_specific() {
        let s = small_store();
        let mut sgd = Optimizer::new(OptimizerKind::Sgd, 0.1, &s);
        let mut adam = Optimizer::new(OptimizerKind::Adam, 0.1, &s);
        let state = adam.state_tensors(&s);
        assert!(matches!(sgd.load_state(&s, &state), Err(OptimError::UnexpectedState)));
        assert!(matches!(adam.load_state(&s, &[]), Err(OptimError::MissingState(_))));
        let mut truncated = state.clone();
        truncated[1].data.pop();
        assert!(matches!(adam.load_state(&s, &truncated), Err(OptimError::StateSize { .. })));
        let few: [Option<&[f32]>; 1] = [None];
        assert!(matches!(adam.step(&mut small_store(), &few), Err(OptimError::GradCount { .. })));
    }
}
