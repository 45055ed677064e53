//! AdamW optimizer (decoupled weight decay) and the stepped learning-rate
//! schedule.

use crate::error::{Error, Result};
use crate::tensor::{Parameter, Scalar};

/// Per-parameter first/second-moment accumulators plus the shared step count.
pub struct AdamW<T: Scalar> {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    step: u64,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
}

impl<T: Scalar> AdamW<T> {
    pub fn new(params: &[Parameter<T>], beta1: f64, beta2: f64, eps: f64, weight_decay: f64) -> Self {
        AdamW {
            beta1,
            beta2,
            eps,
            weight_decay,
            step: 0,
            m: params.iter().map(|p| vec![T::zero(); p.numel()]).collect(),
            v: params.iter().map(|p| vec![T::zero(); p.numel()]).collect(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One update over all parameters:
    ///   θ ← θ − lr·wd·θ − lr·m̂/(√v̂ + eps)
    /// with bias-corrected moments m̂, v̂. Every parameter must carry a
    /// gradient; a missing one means the graph never reached that leaf.
    pub fn step(&mut self, params: &[Parameter<T>], lr: f64) -> Result<()> {
        if params.len() != self.m.len() {
            return Err(Error::contract(format!(
                "optimizer built for {} parameters, stepped with {}",
                self.m.len(),
                params.len()
            )));
        }
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step as i32);
        let c2 = 1.0 - self.beta2.powi(self.step as i32);
        let (b1, b2) = (T::from_f64(self.beta1), T::from_f64(self.beta2));
        let (ob1, ob2) = (T::from_f64(1.0 - self.beta1), T::from_f64(1.0 - self.beta2));
        let lr_t = T::from_f64(lr);
        let decay = T::from_f64(lr * self.weight_decay);
        let eps_t = T::from_f64(self.eps);
        let (ic1, ic2) = (T::from_f64(1.0 / c1), T::from_f64(1.0 / c2));
        for (pi, p) in params.iter().enumerate() {
            let g = p
                .grad()
                .ok_or_else(|| Error::contract(format!("no gradient for {}", p.name())))?;
            if g.len() != self.m[pi].len() {
                return Err(Error::contract(format!("gradient shape drifted for {}", p.name())));
            }
            let mut data = p.tensor().data_mut();
            let m = &mut self.m[pi];
            let v = &mut self.v[pi];
            for i in 0..g.len() {
                let gi = g[i];
                m[i] = b1 * m[i] + ob1 * gi;
                v[i] = b2 * v[i] + ob2 * gi * gi;
                let m_hat = m[i] * ic1;
                let v_hat = v[i] * ic2;
                let theta = data[i];
                data[i] = theta - decay * theta - lr_t * m_hat / (v_hat.sqrt() + eps_t);
            }
        }
        Ok(())
    }
}

/// Learning rate at `epoch`: `lr0 · factor^(number of decay epochs ≤ epoch)`.
/// Decay epochs are boundary-inclusive — the rate drops *at* the listed epoch.
pub fn lr_at(epoch: usize, lr0: f64, decay_epochs: &[usize], factor: f64) -> f64 {
    let drops = decay_epochs.iter().filter(|&&e| e <= epoch).count();
    lr0 * factor.powi(drops as i32)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn param(name: &str, data: &[f64]) -> Parameter<f64> {
        Parameter::new(name, Tensor::from_vec(data.to_vec(), &[data.len()]).unwrap())
    }

    fn set_grad(p: &Parameter<f64>, g: &[f64]) {
        p.zero_grad();
        p.tensor().accumulate_grad(g);
    }

    #[test]
    fn zero_grad_zero_decay_is_noop() {
        let p = param("w", &[1.5, -2.0, 0.25]);
        let mut opt = AdamW::new(std::slice::from_ref(&p), 0.9, 0.999, 1e-8, 0.0);
        set_grad(&p, &[0.0, 0.0, 0.0]);
        opt.step(std::slice::from_ref(&p), 1e-3).unwrap();
        assert_eq!(p.tensor().to_vec(), vec![1.5, -2.0, 0.25]);
    }

    #[test]
    fn first_step_moves_by_lr_against_gradient_sign() {
        let p = param("w", &[0.0]);
        let mut opt = AdamW::new(std::slice::from_ref(&p), 0.9, 0.999, 1e-8, 0.0);
        set_grad(&p, &[3.0]);
        let lr = 1e-2;
        opt.step(std::slice::from_ref(&p), lr).unwrap();
        let got = p.tensor().to_vec()[0];
        // bias correction makes m̂ = g, v̂ = g² ⇒ update ≈ −lr·sign(g)
        let want = -lr * 3.0 / (3.0 + 1e-8);
        assert!((got - want).abs() < 1e-15, "{got} vs {want}");
    }

    #[test]
    fn pure_decay_is_geometric() {
        let p = param("w", &[2.0]);
        let mut opt = AdamW::new(std::slice::from_ref(&p), 0.9, 0.999, 1e-8, 0.5);
        let lr = 0.1;
        for _ in 0..3 {
            set_grad(&p, &[0.0]);
            opt.step(std::slice::from_ref(&p), lr).unwrap();
        }
        let want = 2.0 * (1.0 - lr * 0.5f64).powi(3);
        let got = p.tensor().to_vec()[0];
        assert!((got - want).abs() < 1e-15, "{got} vs {want}");
    }

    #[test]
    fn two_steps_match_reference_recurrence() {
        // Independent evaluation of the update equations over two steps with
        // distinct gradients, including decay.
        let (b1, b2, eps, wd, lr) = (0.9, 0.999, 1e-8, 0.01, 1e-3);
        let p = param("w", &[0.7]);
        let mut opt = AdamW::new(std::slice::from_ref(&p), b1, b2, eps, wd);
        let grads = [0.3, -1.1];
        let (mut m, mut v, mut theta) = (0.0f64, 0.0f64, 0.7f64);
        for (t, &g) in grads.iter().enumerate() {
            set_grad(&p, &[g]);
            opt.step(std::slice::from_ref(&p), lr).unwrap();
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            let mh = m / (1.0 - b1.powi(t as i32 + 1));
            let vh = v / (1.0 - b2.powi(t as i32 + 1));
            theta = theta - lr * wd * theta - lr * mh / (vh.sqrt() + eps);
        }
        let got = p.tensor().to_vec()[0];
        assert!((got - theta).abs() < 1e-12, "{got} vs {theta}");
        assert_eq!(opt.step_count(), 2);
    }

    #[test]
    fn missing_gradient_is_a_contract_error() {
        let p = param("w", &[1.0]);
        let mut opt = AdamW::new(std::slice::from_ref(&p), 0.9, 0.999, 1e-8, 0.0);
        assert!(opt.step(std::slice::from_ref(&p), 1e-3).is_err());
    }

    #[test]
    fn schedule_steps_at_boundaries() {
        let decay = [100usize, 200];
        assert_eq!(lr_at(0, 1e-4, &decay, 0.1), 1e-4);
        assert_eq!(lr_at(99, 1e-4, &decay, 0.1), 1e-4);
        assert!((lr_at(100, 1e-4, &decay, 0.1) - 1e-5).abs() < 1e-20);
        assert!((lr_at(150, 1e-4, &decay, 0.1) - 1e-5).abs() < 1e-20);
        assert!((lr_at(200, 1e-4, &decay, 0.1) - 1e-6).abs() < 1e-21);
        // non-increasing
        let mut prev = f64::INFINITY;
        for e in 0..300 {
            let lr = lr_at(e, 1e-4, &decay, 0.1);
            assert!(lr <= prev);
            prev = lr;
        }
    }
}
