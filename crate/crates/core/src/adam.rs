//! Bias-corrected Adam over the model's tensor view.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Group, Model};
use crate::real::Real;

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-15;

/// Hyper-parameters plus first/second moments, one buffer per model tensor
/// in visitor order.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T> {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    pub m: Vec<Vec<T>>,
    pub v: Vec<Vec<T>>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Hyper {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for Hyper {
    fn default() -> Self {
        Self { beta1: BETA1, beta2: BETA2, eps: EPSILON }
    }
}

/// One Adam step on a flat tensor with precomputed bias corrections
/// `bc1 = 1 − β₁ᵗ`, `bc2 = 1 − β₂ᵗ`.
#[allow(clippy::too_many_arguments)]
pub fn adam_update<T: Real>(params: &mut [T], grads: &[T], m: &mut [T], v: &mut [T], lr: f64, h: Hyper, bc1: f64, bc2: f64) {
    for (((p, &g), mi), vi) in params.iter_mut().zip(grads).zip(m.iter_mut()).zip(v.iter_mut()) {
        let g = g.val();
        let mn = h.beta1 * mi.val() + (1.0 - h.beta1) * g;
        let vn = h.beta2 * vi.val() + (1.0 - h.beta2) * g * g;
        *mi = T::lit(mn);
        *vi = T::lit(vn);
        let mhat = mi.val() / bc1;
        let vhat = vi.val() / bc2;
        *p = T::lit(p.val() - lr * mhat / (vhat.sqrt() + h.eps));
    }
}

impl<T: Real> AdamState<T> {
    pub fn new(model: &Model<T>) -> Self {
        Self::with_hyper(model, Hyper::default())
    }

    pub fn with_hyper(model: &Model<T>, h: Hyper) -> Self {
        let m: Vec<Vec<T>> = model.layout().iter().map(|(_, _, n)| vec![T::zero(); *n]).collect();
        Self { beta1: h.beta1, beta2: h.beta2, eps: h.eps, step: 0, v: m.clone(), m }
    }

    pub fn hyper(&self) -> Hyper {
        Hyper { beta1: self.beta1, beta2: self.beta2, eps: self.eps }
    }

    /// Advance the step counter and update every non-frozen tensor with the
    /// learning rate of its group.
    pub fn step_model(&mut self, model: &mut Model<T>, grads: &Model<T>, lr: &dyn Fn(Group) -> f64) -> Result<()> {
        let layout = model.layout();
        if layout != grads.layout() {
            return Err(Error::ContractViolation("gradient layout differs from the model".into()));
        }
        if layout.len() != self.m.len() || layout.iter().zip(&self.m).any(|((_, _, n), m)| *n != m.len()) {
            return Err(Error::ContractViolation("optimizer state does not match the model".into()));
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        let h = self.hyper();
        let mut gs: Vec<&[T]> = Vec::with_capacity(layout.len());
        grads.visit(&mut |_, _, g| gs.push(g));
        let (ms, vs) = (&mut self.m, &mut self.v);
        let mut k = 0;
        model.visit_mut(&mut |_, group, p| {
            if group != Group::Frozen {
                adam_update(p, gs[k], &mut ms[k], &mut vs[k], lr(group), h, bc1, bc2);
            }
            k += 1;
        });
        model.normalize_rotations();
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run(p: &mut [f64], g: &[f64], st: &mut (Vec<f64>, Vec<f64>, u64), lr: f64) {
        st.2 += 1;
        let t = st.2 as i32;
        adam_update(p, g, &mut st.0, &mut st.1, lr, Hyper::default(), 1.0 - BETA1.powi(t), 1.0 - BETA2.powi(t));
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut p = vec![1.0, -2.0];
        let mut st = (vec![0.0; 2], vec![0.0; 2], 0);
        run(&mut p, &[0.0, 0.0], &mut st, 0.1);
        assert_eq!(p, vec![1.0, -2.0]);
        assert_eq!(st.2, 1);
    }

    #[test]
    fn first_step_moves_by_lr_times_sign() {
        let mut p = vec![0.0, 0.0];
        let mut st = (vec![0.0; 2], vec![0.0; 2], 0);
        run(&mut p, &[3.0, -0.02], &mut st, 0.01);
        assert!((p[0] + 0.01).abs() < 1e-12);
        assert!((p[1] - 0.01).abs() < 1e-12);
    }

    #[test]
    fn trajectory_matches_scalar_oracle() {
        // Independent scalar formulation with explicit bias-corrected moments.
        let grads = [0.3, -1.2, 0.05, 2.0, -0.7, 0.0, 1.1, -0.4, 0.9, -2.5];
        let lr = 0.05;
        let (mut x, mut m, mut v) = (0.7f64, 0.0f64, 0.0f64);
        let mut oracle = Vec::new();
        for (i, g) in grads.iter().enumerate() {
            let g = g * (1.0 + x);
            m = 0.9 * m + 0.1 * g;
            v = 0.999 * v + 0.001 * g * g;
            let mh = m / (1.0 - 0.9f64.powi(i as i32 + 1));
            let vh = v / (1.0 - 0.999f64.powi(i as i32 + 1));
            x -= lr * mh / (vh.sqrt() + 1e-15);
            oracle.push(x);
        }
        let mut p = [0.7];
        let mut st = (vec![0.0], vec![0.0], 0);
        for (g, want) in grads.iter().zip(&oracle) {
            let gg = [g * (1.0 + p[0])];
            run(&mut p, &gg, &mut st, lr);
            assert!((p[0] - want).abs() < 1e-12, "{} vs {}", p[0], want);
        }
    }

    #[test]
    fn frozen_tensors_do_not_move_and_rotations_stay_unit() {
        use crate::model::{InitPoint, ModelConfig};
        use crate::geom::Vec3;
        let pts: Vec<InitPoint> = (0..4)
            .map(|i| InitPoint { position: Vec3::new(i as f64, 0.5 * i as f64, 1.0), normal: Vec3::new(0.0, 0.0, 1.0) })
            .collect();
        let cfg = ModelConfig { sky_count: 8, ..Default::default() };
        let mut model = Model::<f64>::from_points(&pts, 2, &cfg, 3).unwrap();
        let before = model.clone();
        let mut grads = model.zeros_like();
        grads.visit_mut(&mut |_, _, t| t.iter_mut().enumerate().for_each(|(i, v)| *v = 0.1 + i as f64 * 0.01));
        let mut adam = AdamState::new(&model);
        adam.step_model(&mut model, &grads, &|_| 0.01).unwrap();
        assert_eq!(model.scene.sky, before.scene.sky);
        assert_ne!(model.scene.static_node.gaussians.positions, before.scene.static_node.gaussians.positions);
        for i in 0..model.scene.static_node.gaussians.len() {
            assert!((model.scene.static_node.gaussians.rotation(i).norm() - 1.0).abs() < 1e-12);
        }
        let other = Model::<f64>::from_points(&pts[..3], 2, &cfg, 3).unwrap();
        assert!(adam.step_model(&mut model, &other.zeros_like(), &|_| 0.01).is_err());
    }
}
