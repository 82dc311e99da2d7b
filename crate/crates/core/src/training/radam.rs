//! Rectified Adam.

use crate::error::{Error, Result};
use crate::io::checkpoint::Checkpoint;
use crate::models::ParamSet;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Radam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Radam {
    /// `ρ∞ = 2 / (1 − β2) − 1`.
    pub fn rho_inf(&self) -> f64 {
        2.0 / (1.0 - self.beta2) - 1.0
    }

    /// Length of the approximated simple moving average at step `t ≥ 1`.
    pub fn rho(&self, t: usize) -> f64 {
        let b2t = self.beta2.powi(t as i32);
        self.rho_inf() - 2.0 * t as f64 * b2t / (1.0 - b2t)
    }

    /// Variance rectification term, or `None` while `ρ_t ≤ 4` and the
    /// adaptive step is not yet trusted.
    pub fn rectification(&self, t: usize) -> Option<f64> {
        let rho = self.rho(t);
        if rho <= 4.0 {
            return None;
        }
        let inf = self.rho_inf();
        Some(((rho - 4.0) * (rho - 2.0) * inf / ((inf - 4.0) * (inf - 2.0) * rho)).sqrt())
    }

    /// One update at step `t ≥ 1`. `grads` is aligned with `params`; a
    /// missing gradient counts as zero. Nothing is modified if any
    /// gradient is non-finite.
    pub fn step(
        &self,
        params: &mut ParamSet,
        moments: &mut Moments,
        grads: &[Option<Tensor>],
        lr: f64,
        t: usize,
    ) -> Result<()> {
        if t == 0 {
            return Err(Error::invalid("radam", "step counter starts at 1"));
        }
        if grads.len() != params.len() || moments.first.len() != params.len() {
            return Err(Error::shape("radam", "parameter count", params.len(), grads.len()));
        }
        for ((name, p), g) in params.iter().zip(grads) {
            if let Some(g) = g {
                if g.shape() != p.shape() {
                    return Err(Error::invalid("radam", format!("gradient of `{name}` has shape {:?}", g.shape())));
                }
                if !g.is_finite() {
                    return Err(Error::NonFiniteGradient(name.to_string()));
                }
            }
        }
        let (b1, b2) = (self.beta1, self.beta2);
        let bc1 = 1.0 - b1.powi(t as i32);
        let bc2 = 1.0 - b2.powi(t as i32);
        let rect = self.rectification(t);
        let slots = params
            .tensors_mut()
            .zip(moments.first.tensors_mut())
            .zip(moments.second.tensors_mut())
            .zip(grads);
        for ((((_, p), (_, m)), (_, v)), g) in slots {
            let zero;
            let g = match g {
                Some(g) => g.data(),
                None => {
                    zero = vec![0.0; p.numel()];
                    &zero
                }
            };
            let (p, m, v) = (p.data_mut(), m.data_mut(), v.data_mut());
            for i in 0..p.len() {
                m[i] = b1 * m[i] + (1.0 - b1) * g[i];
                v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
                let m_hat = m[i] / bc1;
                p[i] -= match rect {
                    Some(r) => lr * r * m_hat / ((v[i] / bc2).sqrt() + self.eps),
                    None => lr * m_hat,
                };
            }
        }
        Ok(())
    }
}

/// First and second moment estimates, shaped like the parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Moments {
    pub first: ParamSet,
    pub second: ParamSet,
}

impl Moments {
    pub fn zeros_like(params: &ParamSet) -> Self {
        let z = params.map_values(|t| Tensor::zeros(t.shape()));
        Self {
            first: z.clone(),
            second: z,
        }
    }

    pub fn write_to(&self, ckpt: &mut Checkpoint, prefix: &str) {
        self.first.write_to(ckpt, &format!("{prefix}m."));
        self.second.write_to(ckpt, &format!("{prefix}v."));
    }

    pub fn load_from(&mut self, ckpt: &Checkpoint, prefix: &str) -> Result<()> {
        self.first.load_from(ckpt, &format!("{prefix}m."))?;
        self.second.load_from(ckpt, &format!("{prefix}v."))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn opt() -> Radam {
        Radam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-6,
        }
    }

    #[test]
    fn rho_values() {
        let o = opt();
        assert!((o.rho_inf() - 1999.0).abs() < 1e-9);
        assert!((o.rho(1) - 1.0).abs() < 1e-9);
        assert!(o.rectification(4).is_none());
        assert!(o.rectification(5).is_some());
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut p = ParamSet::new();
        p.insert("w", Tensor::from_vec(vec![1.0, -2.0]));
        let before = p.clone();
        let mut m = Moments::zeros_like(&p);
        for t in 1..10 {
            opt().step(&mut p, &mut m, &[Some(Tensor::zeros(&[2]))], 0.1, t).unwrap();
            opt().step(&mut p, &mut m, &[None], 0.1, t).unwrap();
        }
        assert_eq!(p, before);
    }

    #[test]
    fn first_step_is_plain_momentum() {
        let mut p = ParamSet::new();
        p.insert("w", Tensor::from_vec(vec![1.0]));
        let mut m = Moments::zeros_like(&p);
        opt().step(&mut p, &mut m, &[Some(Tensor::from_vec(vec![0.5]))], 0.1, 1).unwrap();
        // m̂ equals the gradient after bias correction.
        assert!((p.get("w").unwrap().data()[0] - 0.95).abs() < 1e-12);
    }

    #[test]
    fn nan_gradient_names_parameter() {
        let mut p = ParamSet::new();
        p.insert("a", Tensor::from_vec(vec![1.0]));
        p.insert("layers.3.w", Tensor::from_vec(vec![1.0]));
        let before = p.clone();
        let mut m = Moments::zeros_like(&p);
        let err = opt()
            .step(
                &mut p,
                &mut m,
                &[Some(Tensor::from_vec(vec![1.0])), Some(Tensor::from_vec(vec![f64::NAN]))],
                0.1,
                1,
            )
            .unwrap_err();
        assert!(err.to_string().contains("layers.3.w"));
        assert_eq!(p, before);
    }
}
