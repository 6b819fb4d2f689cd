use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::params::ParamStore;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Adam,
    #[default]
    Radam,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamHyper {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// One Adam step at 1-based step `t`.
pub fn adam_update(p: &mut [f64], g: &[f64], m: &mut [f64], v: &mut [f64], t: u64, lr: f64, h: AdamHyper) {
    let bc1 = 1.0 - h.beta1.powi(t as i32);
    let bc2 = 1.0 - h.beta2.powi(t as i32);
    for i in 0..p.len() {
        m[i] = h.beta1 * m[i] + (1.0 - h.beta1) * g[i];
        v[i] = h.beta2 * v[i] + (1.0 - h.beta2) * g[i] * g[i];
        let mhat = m[i] / bc1;
        let vhat = v[i] / bc2;
        p[i] -= lr * mhat / (vhat.sqrt() + h.eps);
    }
}

/// Length of the approximated simple moving average at step `t`, and its limit.
pub fn radam_rho(t: u64, beta2: f64) -> (f64, f64) {
    let rho_inf = 2.0 / (1.0 - beta2) - 1.0;
    let b2t = beta2.powi(t as i32);
    (rho_inf - 2.0 * t as f64 * b2t / (1.0 - b2t), rho_inf)
}

/// One rectified Adam step at 1-based step `t`. While the variance estimate
/// is not yet tractable (`rho_t <= 4`) the update is bias-corrected momentum.
pub fn radam_update(p: &mut [f64], g: &[f64], m: &mut [f64], v: &mut [f64], t: u64, lr: f64, h: AdamHyper) {
    let bc1 = 1.0 - h.beta1.powi(t as i32);
    let bc2 = 1.0 - h.beta2.powi(t as i32);
    let (rho_t, rho_inf) = radam_rho(t, h.beta2);
    let rect = if rho_t > 4.0 {
        Some(((rho_t - 4.0) * (rho_t - 2.0) * rho_inf / ((rho_inf - 4.0) * (rho_inf - 2.0) * rho_t)).sqrt())
    } else {
        None
    };
    for i in 0..p.len() {
        m[i] = h.beta1 * m[i] + (1.0 - h.beta1) * g[i];
        v[i] = h.beta2 * v[i] + (1.0 - h.beta2) * g[i] * g[i];
        let mhat = m[i] / bc1;
        match rect {
            Some(r) => {
                let vhat = (v[i] / bc2).sqrt();
                p[i] -= lr * r * mhat / (vhat + h.eps);
            }
            None => p[i] -= lr * mhat,
        }
    }
}

/// Adam or RAdam over a [`ParamStore`]. After each step the parameters and
/// both moment estimates are rounded to single precision, so a checkpoint
/// (which stores f32) resumes training exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct Optimizer {
    pub kind: OptimizerKind,
    pub hyper: AdamHyper,
    step: u64,
    moments: BTreeMap<String, (Tensor, Tensor)>,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind) -> Self {
        Self {
            kind,
            hyper: AdamHyper::default(),
            step: 0,
            moments: BTreeMap::new(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn moments(&self) -> &BTreeMap<String, (Tensor, Tensor)> {
        &self.moments
    }

    pub fn restore(&mut self, step: u64, moments: BTreeMap<String, (Tensor, Tensor)>) {
        self.step = step;
        self.moments = moments;
    }

    /// Apply `grads` to `params`. Any non-finite gradient aborts the step
    /// before anything is modified.
    pub fn step(&mut self, params: &mut ParamStore, grads: &BTreeMap<String, Tensor>, lr: f64) -> Result<()> {
        for (name, g) in grads {
            let p = params
                .get(name)
                .ok_or_else(|| Error::Format(format!("gradient for unknown parameter {name}")))?;
            if p.shape() != g.shape() {
                return Err(Error::shape(name.clone(), format!("gradient {:?} for parameter {:?}", g.shape(), p.shape())));
            }
            if !g.is_finite() {
                return Err(Error::NonFinite(format!("gradient of {name}")));
            }
        }
        self.step += 1;
        for (name, g) in grads {
            let p = params.get_mut(name).expect("checked above");
            let (m, v) = self
                .moments
                .entry(name.clone())
                .or_insert_with(|| (Tensor::zeros(g.shape()), Tensor::zeros(g.shape())));
            let f = match self.kind {
                OptimizerKind::Adam => adam_update,
                OptimizerKind::Radam => radam_update,
            };
            f(p.data_mut(), g.data(), m.data_mut(), v.data_mut(), self.step, lr, self.hyper);
            p.round_to_f32();
            m.round_to_f32();
            v.round_to_f32();
        }
        if !params.all_finite() {
            return Err(Error::NonFinite("parameters after optimizer step".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn h() -> AdamHyper {
        AdamHyper::default()
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        let mut p = [1.0, -2.0];
        let (mut m, mut v) = ([0.0; 2], [0.0; 2]);
        adam_update(&mut p, &[0.5, -3.0], &mut m, &mut v, 1, 0.01, h());
        // mhat = g, vhat = g^2 on the first step
        assert!((p[0] - (1.0 - 0.01 * 0.5 / (0.5 + 1e-8))).abs() < 1e-15);
        assert!((p[1] - (-2.0 + 0.01 * 3.0 / (3.0 + 1e-8))).abs() < 1e-15);
    }

    #[test]
    fn radam_rho_threshold() {
        let (r4, inf) = radam_rho(4, 0.999);
        let (r5, _) = radam_rho(5, 0.999);
        assert!((inf - 1999.0).abs() < 1e-9);
        assert!(r4 <= 4.0 && r5 > 4.0, "rho4={r4} rho5={r5}");
        let (r1, _) = radam_rho(1, 0.999);
        assert!((r1 - 1.0).abs() < 1e-6);
    }

    #[test]
    fn radam_early_steps_are_momentum_sgd() {
        let mut p = [0.0];
        let (mut m, mut v) = ([0.0], [0.0]);
        let g = [2.0];
        let mut expected = 0.0;
        let mut mo = 0.0;
        for t in 1..=4 {
            radam_update(&mut p, &g, &mut m, &mut v, t, 0.1, h());
            mo = 0.9 * mo + 0.1 * 2.0;
            expected -= 0.1 * mo / (1.0 - 0.9f64.powi(t as i32));
            assert!((p[0] - expected).abs() < 1e-12);
        }
        // Step 5 switches to the adaptive branch.
        radam_update(&mut p, &g, &mut m, &mut v, 5, 0.1, h());
        let (rho, inf) = radam_rho(5, 0.999);
        let r = ((rho - 4.0) * (rho - 2.0) * inf / ((inf - 4.0) * (inf - 2.0) * rho)).sqrt();
        let mhat = m[0] / (1.0 - 0.9f64.powi(5));
        let vhat = (v[0] / (1.0 - 0.999f64.powi(5))).sqrt();
        assert!((p[0] - (expected - 0.1 * r * mhat / (vhat + 1e-8))).abs() < 1e-12);
    }

    #[test]
    fn non_finite_gradient_aborts_without_change() {
        let mut params = ParamStore::new();
        params.insert("a", Tensor::ones(&[2]));
        params.insert("b", Tensor::ones(&[2]));
        let before = params.clone();
        let mut opt = Optimizer::new(OptimizerKind::Adam);
        let mut grads = BTreeMap::new();
        grads.insert("a".to_string(), Tensor::ones(&[2]));
        grads.insert("b".to_string(), Tensor::new(vec![2], vec![1.0, f64::NAN]).unwrap());
        let err = opt.step(&mut params, &grads, 0.1).unwrap_err();
        assert!(err.to_string().contains("gradient of b"));
        assert_eq!(params, before);
        assert_eq!(opt.step_count(), 0);
    }

    #[test]
    fn state_is_single_precision() {
        let mut params = ParamStore::new();
        params.insert("a", Tensor::new(vec![3], vec![0.1, 0.2, 0.3]).unwrap());
        let mut grads = BTreeMap::new();
        grads.insert("a".to_string(), Tensor::new(vec![3], vec![0.7, -0.11, 1e-3]).unwrap());
        let mut opt = Optimizer::new(OptimizerKind::Radam);
        for _ in 0..7 {
            opt.step(&mut params, &grads, 1e-3).unwrap();
        }
        let exact = |t: &Tensor| t.data().iter().all(|&v| v == v as f32 as f64);
        assert!(exact(params.get("a").unwrap()));
        let (m, v) = &opt.moments()["a"];
        assert!(exact(m) && exact(v));
    }

    #[test]
    fn adam_minimizes_quadratic() {
        let mut params = ParamStore::new();
        params.insert("x", Tensor::new(vec![2], vec![3.0, -4.0]).unwrap());
        for kind in [OptimizerKind::Adam, OptimizerKind::Radam] {
            let mut p = params.clone();
            let mut opt = Optimizer::new(kind);
            for _ in 0..2000 {
                let g = p.get("x").unwrap().map(|v| 2.0 * v);
                let grads = BTreeMap::from([("x".to_string(), g)]);
                opt.step(&mut p, &grads, 0.05).unwrap();
            }
            assert!(p.get("x").unwrap().data().iter().all(|v| v.abs() < 1e-2), "{kind:?}");
        }
    }
}
