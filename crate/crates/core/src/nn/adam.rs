use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(n: usize, lr: f64) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            step: 0,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    /// One bias-corrected Adam step, in place.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::Shape(format!(
                "adam state for {} parameters got {} params / {} grads",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step as i32);
        let c2 = 1.0 - self.beta2.powi(self.step as i32);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let mh = self.m[i] / c1;
            let vh = self.v[i] / c2;
            params[i] -= self.lr * mh / (vh.sqrt() + self.eps);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_keeps_params() {
        let mut st = AdamState::new(3, 1e-4);
        let mut p = vec![1.0, -2.0, 0.5];
        st.step(&mut p, &[0.0; 3]).unwrap();
        assert_eq!(p, vec![1.0, -2.0, 0.5]);
        assert_eq!(st.step, 1);
    }

    #[test]
    fn constant_gradient_steps_approach_lr() {
        let mut st = AdamState::new(1, 1e-3);
        let mut p = vec![0.0];
        let mut last = 0.0;
        for _ in 0..2000 {
            let before = p[0];
            st.step(&mut p, &[0.3]).unwrap();
            last = before - p[0];
        }
        assert!((last - 1e-3).abs() < 1e-7, "{last}");
    }

    #[test]
    fn two_steps_match_hand_recurrence() {
        // Worked by hand with lr 0.1, g = 0.5 then -0.2:
        // m̂1 = 0.5, v̂1 = 0.25 → p1 = 1 - 0.1·0.5/(0.5 + 1e-8);
        // m̂2 = 0.131578947..., v̂2 = 0.144947473... → p2 = p1 - 0.1·m̂2/(√v̂2 + 1e-8).
        let mut st = AdamState::new(1, 0.1);
        let mut p = vec![1.0];
        st.step(&mut p, &[0.5]).unwrap();
        assert!((p[0] - 0.900_000_002).abs() < 1e-12, "{}", p[0]);
        st.step(&mut p, &[-0.2]).unwrap();
        assert!((p[0] - 0.865_439_418_116_510_8).abs() < 1e-12, "{}", p[0]);
    }

    #[test]
    fn shape_mismatch() {
        let mut st = AdamState::new(2, 0.1);
        assert!(st.step(&mut [0.0; 3], &[0.0; 3]).is_err());
    }
}
