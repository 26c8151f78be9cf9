use crate::error::{Error, Result};
use crate::nn::ParamStore;
use crate::tensor::{Scalar, Tensor};

/// AdamW with decoupled weight decay applied to every parameter.
#[derive(Debug, Clone)]
pub struct AdamW {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamW {
    pub fn new(lr: f64, weight_decay: f64) -> Self {
        AdamW {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// One update from the gradients currently stored on `ps`.
    pub fn step<T: Scalar>(&mut self, ps: &mut ParamStore<T>) -> Result<()> {
        if self.m.is_empty() {
            self.m = ps.iter().map(|p| vec![0.0; p.tensor.numel()]).collect();
            self.v = self.m.clone();
        }
        self.step += 1;
        let t = self.step as i32;
        let (bc1, bc2) = (1.0 - self.beta1.powi(t), 1.0 - self.beta2.powi(t));
        let ids: Vec<_> = ps.ids().collect();
        for (k, id) in ids.into_iter().enumerate() {
            let p = ps.get(id);
            let Some(g) = p.grad() else { continue };
            let (m, v) = (&mut self.m[k], &mut self.v[k]);
            let mut data = Vec::with_capacity(p.numel());
            for (i, (&w, &g)) in p.data().iter().zip(&g).enumerate() {
                let (w, g) = (w.as_f64(), g.as_f64());
                if !g.is_finite() {
                    return Err(Error::Numeric(format!("non-finite gradient in parameter {k}")));
                }
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g * g;
                let update = (m[i] / bc1) / ((v[i] / bc2).sqrt() + self.eps);
                data.push(T::lit(w - self.lr * (self.weight_decay * w + update)));
            }
            let shape = p.shape().to_vec();
            ps.set(id, Tensor::from_vec(data, &shape)?)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_lr() {
        let mut ps = ParamStore::<f64>::new();
        let id = ps.add("w", Tensor::from_vec(vec![1.0, -2.0], &[2]).unwrap()).unwrap();
        ps.get(id).mul(ps.get(id)).unwrap().sum().backward().unwrap();
        let mut opt = AdamW::new(0.1, 0.0);
        opt.step(&mut ps).unwrap();
        let w = ps.get(id).data().to_vec();
        assert!((w[0] - 0.9).abs() < 1e-9 && (w[1] + 1.9).abs() < 1e-9);
    }
}
