use super::Tensor;
use crate::error::{Error, Result};

/// Adam moment buffers for one parameter set.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<Vec<f32>>,
    pub v: Vec<Vec<f32>>,
    pub step_count: u64,
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
}

impl AdamState {
    pub fn new<'a>(params: impl IntoIterator<Item = &'a Tensor>) -> Self {
        let (m, v) = params.into_iter().map(|p| (vec![0.0; p.numel()], vec![0.0; p.numel()])).unzip();
        Self { m, v, step_count: 0, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }

    /// One bias-corrected Adam update; consumes (clears) every gradient.
    pub fn step<'a>(&mut self, params: impl IntoIterator<Item = &'a mut Tensor>, lr: f32) -> Result<()> {
        let mut params: Vec<&mut Tensor> = params.into_iter().collect();
        if params.len() != self.m.len() {
            return Err(Error::Contract(format!(
                "optimizer tracks {} parameters, got {}",
                self.m.len(),
                params.len()
            )));
        }
        for (i, p) in params.iter().enumerate() {
            match &p.grad {
                None => return Err(Error::Contract(format!("parameter {i} has no gradient"))),
                Some(g) if g.len() != self.m[i].len() => {
                    return Err(Error::Contract(format!("parameter {i} gradient has wrong length")))
                }
                _ => {}
            }
        }
        self.step_count += 1;
        let t = self.step_count as i32;
        let bc1 = 1.0 - (self.beta1 as f64).powi(t);
        let bc2 = 1.0 - (self.beta2 as f64).powi(t);
        let (b1, b2) = (self.beta1, self.beta2);
        for (i, p) in params.iter_mut().enumerate() {
            let g = p.grad.take().expect("checked above");
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for (j, w) in p.data_mut().iter_mut().enumerate() {
                m[j] = b1 * m[j] + (1.0 - b1) * g[j];
                v[j] = b2 * v[j] + (1.0 - b2) * g[j] * g[j];
                let m_hat = m[j] as f64 / bc1;
                let v_hat = v[j] as f64 / bc2;
                *w -= (lr as f64 * m_hat / (v_hat.sqrt() + self.eps as f64)) as f32;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Graph;

    #[test]
    fn zero_grad_leaves_params() {
        let mut p = Tensor::full(&[3], 1.5);
        let mut st = AdamState::new([&p]);
        p.grad = Some(vec![0.0; 3]);
        st.step([&mut p], 5e-5).unwrap();
        assert_eq!(p.data(), &[1.5; 3]);
        assert_eq!(st.step_count, 1);
        assert!(p.grad.is_none());
    }

    #[test]
    fn first_step_moves_by_lr() {
        // m̂ = 1, v̂ = 1 after bias correction, so Δ = lr / (1 + eps)
        let mut p = Tensor::scalar(0.3);
        let mut st = AdamState::new([&p]);
        p.grad = Some(vec![1.0]);
        st.step([&mut p], 5e-5).unwrap();
        let moved = 0.3f32 as f64 - p.item() as f64;
        assert!((moved - 5e-5).abs() < 1e-7, "moved {moved}");
    }

    #[test]
    fn missing_grad_is_contract_error() {
        let mut p = Tensor::scalar(1.0);
        let mut st = AdamState::new([&p]);
        assert!(matches!(st.step([&mut p], 1e-3), Err(Error::Contract(_))));
        assert_eq!(st.step_count, 0);
    }

    #[test]
    fn quadratic_bowl_converges() {
        let mut w = Tensor::scalar(1.0);
        let mut st = AdamState::new([&w]);
        for _ in 0..500 {
            let mut g = Graph::new();
            let v = g.param(&w);
            let sq = g.mul(v, v).unwrap();
            let loss = g.sum(sq);
            g.backward(loss).unwrap();
            w.grad = Some(g.grad(v).unwrap().to_vec());
            st.step([&mut w], 0.1).unwrap();
        }
        assert!(w.item().abs() < 1e-2, "w = {}", w.item());
    }
}
