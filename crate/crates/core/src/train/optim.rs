use crate::error::{Result, StoneError};
use crate::params::ParamStore;
use crate::tensor::Tensor;

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const EPS: f64 = 1e-8;

/// First and second moments for every parameter, in store order.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    m: Vec<Tensor>,
    v: Vec<Tensor>,
    step: u64,
}

impl AdamState {
    pub fn new(params: &ParamStore) -> Self {
        let zeros = || params.iter().map(|(_, t)| Tensor::zeros(t.dims())).collect();
        AdamState {
            m: zeros(),
            v: zeros(),
            step: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One bias-corrected update; `grads` are in store order.
    ///
    /// A non-finite gradient aborts before any parameter is touched.
    pub fn step(&mut self, params: &mut ParamStore, grads: &[Tensor], lr: f64) -> Result<()> {
        if grads.len() != params.len() || self.m.len() != params.len() {
            return Err(StoneError::Contract(format!(
                "adam got {} gradients for {} parameters",
                grads.len(),
                params.len()
            )));
        }
        if !(lr > 0.0 && lr.is_finite()) {
            return Err(StoneError::Domain {
                op: "adam_step",
                detail: format!("learning rate {lr}"),
            });
        }
        for (id, g) in params.ids().zip(grads) {
            if g.dims() != params.get(id).dims() {
                return Err(StoneError::dims("adam_step", params.get(id).dims(), g.dims()));
            }
            if !g.is_finite() {
                return Err(StoneError::Numerical {
                    context: "adam_step".into(),
                    detail: format!("non-finite gradient for parameter `{}`", params.name(id)),
                });
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - BETA1.powi(t);
        let c2 = 1.0 - BETA2.powi(t);
        for (idx, id) in params.ids().enumerate() {
            let g = grads[idx].data();
            let m = self.m[idx].data_mut();
            let v = self.v[idx].data_mut();
            let w = params.get_mut(id).data_mut();
            for i in 0..w.len() {
                m[i] = BETA1 * m[i] + (1.0 - BETA1) * g[i];
                v[i] = BETA2 * v[i] + (1.0 - BETA2) * g[i] * g[i];
                let m_hat = m[i] / c1;
                let v_hat = v[i] / c2;
                w[i] -= lr * m_hat / (v_hat.sqrt() + EPS);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store(values: &[f64]) -> ParamStore {
        let mut s = ParamStore::new();
        s.insert("w", Tensor::from_vec(&[values.len()], values.to_vec()).unwrap()).unwrap();
        s
    }

    fn first_update(g: &[f64], lr: f64) -> Vec<f64> {
        let mut s = store(&vec![0.0; g.len()]);
        let mut st = AdamState::new(&s);
        st.step(&mut s, &[Tensor::from_vec(&[g.len()], g.to_vec()).unwrap()], lr).unwrap();
        s.by_name("w").unwrap().data().to_vec()
    }

    #[test]
    fn first_step_moves_by_lr_against_sign() {
        let lr = 1e-3;
        let g = [3.0, -1e-2, 0.02, -250.0];
        for (u, g) in first_update(&g, lr).iter().zip(g) {
            assert!((u + lr * g.signum()).abs() < 1e-6 * lr, "{u}");
        }
    }

    #[test]
    fn first_step_closed_form() {
        // m̂ = g and v̂ = g², so the update is −lr·g/(|g| + ε)
        let lr = 1e-3;
        let g = [1e-3, -1e-3, 0.5, -7.0];
        for (u, g) in first_update(&g, lr).iter().zip(g) {
            let expected = -lr * g / (g.abs() + 1e-8);
            assert!((u - expected).abs() <= 1e-15 * lr, "{u} vs {expected}");
        }
    }

    #[test]
    fn zero_gradient_keeps_params_and_counts_step() {
        let mut s = store(&[1.0, 2.0]);
        let mut st = AdamState::new(&s);
        st.step(&mut s, &[Tensor::zeros(&[2])], 1e-3).unwrap();
        assert_eq!(s.by_name("w").unwrap().data(), &[1.0, 2.0]);
        assert_eq!(st.step_count(), 1);
    }

    #[test]
    fn nan_gradient_names_parameter() {
        let mut s = store(&[1.0]);
        let mut st = AdamState::new(&s);
        let err = st
            .step(&mut s, &[Tensor::from_vec(&[1], vec![f64::NAN]).unwrap()], 1e-3)
            .unwrap_err();
        assert!(err.to_string().contains("`w`"), "{err}");
        assert_eq!(s.by_name("w").unwrap().data(), &[1.0]);
    }

    #[test]
    fn quadratic_loss_decreases() {
        let target = [0.3, -1.2, 4.0];
        for lr in [1e-4, 1e-3, 1e-2] {
            let mut s = store(&[1.0, 1.0, 1.0]);
            let mut st = AdamState::new(&s);
            let loss = |w: &[f64]| w.iter().zip(target).map(|(a, b)| 0.5 * (a - b).powi(2)).sum::<f64>();
            for _ in 0..5 {
                let w = s.by_name("w").unwrap().data().to_vec();
                let g: Vec<f64> = w.iter().zip(target).map(|(a, b)| a - b).collect();
                st.step(&mut s, &[Tensor::from_vec(&[3], g).unwrap()], lr).unwrap();
                let after = s.by_name("w").unwrap().data().to_vec();
                assert!(loss(&after) < loss(&w));
            }
        }
    }

    #[test]
    fn identical_runs_are_bit_identical() {
        let run = || {
            let mut s = store(&[0.1, 0.2, 0.3]);
            let mut st = AdamState::new(&s);
            for k in 0..5 {
                let g = Tensor::from_vec(&[3], vec![0.3 * k as f64, -0.7, 1.0 / (k + 1) as f64]).unwrap();
                st.step(&mut s, &[g], 1e-3).unwrap();
            }
            (s, st)
        };
        assert_eq!(run(), run());
    }
}
