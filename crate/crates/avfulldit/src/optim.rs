//! Decoupled-weight-decay Adam over a named parameter map.

use indexmap::IndexMap;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// AdamW with bias correction. Moments are keyed by parameter name; update
/// order follows the (sorted) parameter map, so steps are deterministic.
#[derive(Debug, Clone)]
pub struct AdamW {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    step: u64,
    m: IndexMap<String, Vec<f64>>,
    v: IndexMap<String, Vec<f64>>,
}

impl AdamW {
    pub fn new(lr: f64) -> Self {
        AdamW {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
            step: 0,
            m: IndexMap::new(),
            v: IndexMap::new(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// One update. Parameters with no gradient entry are treated as having a
    /// zero gradient (their moments decay and weight decay still applies).
    pub fn step(
        &mut self,
        params: &mut IndexMap<String, Tensor>,
        grads: &IndexMap<String, Tensor>,
    ) -> Result<()> {
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for (name, p) in params.iter_mut() {
            let n = p.numel();
            if let Some(g) = grads.get(name) {
                if g.shape() != p.shape() {
                    return Err(Error::Contract(format!(
                        "gradient shape {:?} does not match parameter {name:?} {:?}",
                        g.shape(),
                        p.shape()
                    )));
                }
            }
            let m = self.m.entry(name.clone()).or_insert_with(|| vec![0.0; n]);
            let v = self.v.entry(name.clone()).or_insert_with(|| vec![0.0; n]);
            let zero = [];
            let gdata: &[f64] = grads.get(name).map(|g| g.data()).unwrap_or(&zero);
            let pd = p.data_mut();
            for i in 0..n {
                let gi = if gdata.is_empty() { 0.0 } else { gdata[i] };
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * gi;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * gi * gi;
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                pd[i] -= self.lr * (m_hat / (v_hat.sqrt() + self.eps) + self.weight_decay * pd[i]);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn map_of(pairs: &[(&str, Tensor)]) -> IndexMap<String, Tensor> {
        pairs.iter().map(|(k, v)| (k.to_string(), v.clone())).collect()
    }

    #[test]
    fn single_step_matches_hand_computation() {
        let mut opt = AdamW::new(0.1);
        let mut params = map_of(&[("w", Tensor::from_vec(vec![1.0, -2.0]))]);
        let grads = map_of(&[("w", Tensor::from_vec(vec![0.5, -1.0]))]);
        opt.step(&mut params, &grads).unwrap();
        // t=1: m = 0.1*g, v = 0.001*g²; m_hat = g, v_hat = g²
        // update = lr * (g/(|g|+eps) + wd*p) = 0.1*(sign(g) + 0.01*p)
        let w = params["w"].data();
        let exp0 = 1.0 - 0.1 * (0.5 / (0.5 + 1e-8) + 0.01 * 1.0);
        let exp1 = -2.0 - 0.1 * (-1.0 / (1.0 + 1e-8) + 0.01 * -2.0);
        assert!((w[0] - exp0).abs() < 1e-12, "{} vs {exp0}", w[0]);
        assert!((w[1] - exp1).abs() < 1e-12, "{} vs {exp1}", w[1]);
    }

    #[test]
    fn three_steps_match_scalar_reference() {
        let mut opt = AdamW::new(0.05);
        let mut params = map_of(&[("w", Tensor::from_vec(vec![0.7]))]);
        // reference implementation, one scalar
        let (b1, b2, eps, wd, lr) = (0.9, 0.999, 1e-8, 0.01, 0.05);
        let mut w = 0.7;
        let (mut m, mut v) = (0.0, 0.0);
        let gs = [0.3, -0.2, 0.05];
        for (k, &g) in gs.iter().enumerate() {
            let t = (k + 1) as i32;
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            let mh = m / (1.0 - b1f(t, b1));
            let vh = v / (1.0 - b1f(t, b2));
            w -= lr * (mh / (vh.sqrt() + eps) + wd * w);
            let grads = map_of(&[("w", Tensor::from_vec(vec![g]))]);
            opt.step(&mut params, &grads).unwrap();
            assert!((params["w"].data()[0] - w).abs() < 1e-14, "step {t}");
        }
        fn b1f(t: i32, b: f64) -> f64 {
            b.powi(t)
        }
    }

    #[test]
    fn missing_gradient_still_decays_weight() {
        let mut opt = AdamW::new(0.1);
        let mut params = map_of(&[("w", Tensor::from_vec(vec![2.0]))]);
        let grads = IndexMap::new();
        opt.step(&mut params, &grads).unwrap();
        // pure decay: w -= lr*wd*w  (moment term is 0/(0+eps)=0)
        let exp = 2.0 - 0.1 * 0.01 * 2.0;
        assert!((params["w"].data()[0] - exp).abs() < 1e-14);
    }

    #[test]
    fn steps_are_deterministic() {
        let run = || {
            let mut opt = AdamW::new(0.01);
            let mut params = map_of(&[("a", Tensor::from_vec(vec![0.5, 0.25]))]);
            for i in 0..10 {
                let g = Tensor::from_vec(vec![(i as f64) * 0.1 - 0.4, 0.3]);
                let grads = map_of(&[("a", g)]);
                opt.step(&mut params, &grads).unwrap();
            }
            params["a"].data().to_vec()
        };
        let a = run();
        let b = run();
        assert!(a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits()));
    }

    #[test]
    fn gradient_shape_mismatch_rejected() {
        let mut opt = AdamW::new(0.1);
        let mut params = map_of(&[("w", Tensor::from_vec(vec![1.0, 2.0]))]);
        let grads = map_of(&[("w", Tensor::from_vec(vec![1.0]))]);
        assert!(opt.step(&mut params, &grads).is_err());
    }
}
