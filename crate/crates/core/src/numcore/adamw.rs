use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::mlp::{Gradients, Mlp};
use super::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }
}

/// Decoupled-weight-decay Adam. Moments mirror the network's layer shapes.
#[derive(Debug, Clone)]
pub struct AdamW<T> {
    config: AdamWConfig,
    first: Gradients<T>,
    second: Gradients<T>,
    step: u64,
}

impl<T: Scalar> AdamW<T> {
    pub fn new(params: &Mlp<T>, config: AdamWConfig) -> Self {
        Self {
            config,
            first: Gradients::zeros_like(params),
            second: Gradients::zeros_like(params),
            step: 0,
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    pub fn config(&self) -> &AdamWConfig {
        &self.config
    }

    /// Applies one update in place. Weight decay shrinks weights only; biases
    /// are never decayed.
    pub fn step(&mut self, params: &mut Mlp<T>, grads: &Gradients<T>) -> Result<()> {
        if grads.layers.len() != params.layers().len() {
            return Err(Error::Contract(format!(
                "{} gradient layers for {} parameter layers",
                grads.layers.len(),
                params.layers().len()
            )));
        }
        for (i, (g, p)) in grads.layers.iter().zip(params.layers()).enumerate() {
            if !g.weight.same_shape(&p.weight) || g.bias.len() != p.bias.len() {
                return Err(Error::Contract(format!("layer {i}: gradient shape mismatch")));
            }
        }
        if let Some(layer) = grads.first_non_finite() {
            return Err(Error::NonFinite {
                layer,
                what: "gradient".into(),
            });
        }

        self.step += 1;
        let c = &self.config;
        let b1 = T::of(c.beta1);
        let b2 = T::of(c.beta2);
        let one = T::one();
        let lr = T::of(c.lr);
        let eps = T::of(c.eps);
        let decay = one - lr * T::of(c.weight_decay);
        let bc1 = one - T::of(c.beta1.powi(self.step as i32));
        let bc2 = one - T::of(c.beta2.powi(self.step as i32));

        let update = |p: &mut T, g: T, m: &mut T, v: &mut T, decayed: bool| {
            *m = b1 * *m + (one - b1) * g;
            *v = b2 * *v + (one - b2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            if decayed {
                *p = *p * decay;
            }
            *p = *p - lr * m_hat / (v_hat.sqrt() + eps);
        };

        for (li, layer) in params.layers_mut().iter_mut().enumerate() {
            let g = &grads.layers[li];
            let m = &mut self.first.layers[li];
            let v = &mut self.second.layers[li];
            for (((p, &gw), mw), vw) in layer
                .weight
                .as_mut_slice()
                .iter_mut()
                .zip(g.weight.as_slice())
                .zip(m.weight.as_mut_slice())
                .zip(v.weight.as_mut_slice())
            {
                update(p, gw, mw, vw, true);
            }
            for (((p, &gb), mb), vb) in layer
                .bias
                .iter_mut()
                .zip(&g.bias)
                .zip(&mut m.bias)
                .zip(&mut v.bias)
            {
                update(p, gb, mb, vb, false);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numcore::{Dense, Head, Matrix, RngStream};

    #[test]
    fn zero_gradients_no_decay_leaves_params() {
        let mut m = Mlp::<f64>::new(&[3, 4, 2], Head::Linear, &mut RngStream::new(1)).unwrap();
        let before = m.clone();
        let mut opt = AdamW::new(&m, AdamWConfig::default());
        let g = Gradients::zeros_like(&m);
        for _ in 0..5 {
            opt.step(&mut m, &g).unwrap();
        }
        assert_eq!(m, before);
        assert_eq!(opt.steps_taken(), 5);
    }

    #[test]
    fn first_step_moves_by_lr_sign() {
        let mut m = Mlp::<f64>::new(&[2, 3, 1], Head::Linear, &mut RngStream::new(2)).unwrap();
        let before = m.flat();
        let mut g = Gradients::zeros_like(&m);
        let mut sign = 1.0;
        for l in &mut g.layers {
            for w in l.weight.as_mut_slice() {
                *w = sign * 0.37;
                sign = -sign;
            }
            for b in &mut l.bias {
                *b = sign * 2.5;
                sign = -sign;
            }
        }
        let cfg = AdamWConfig::default();
        let mut opt = AdamW::new(&m, cfg);
        opt.step(&mut m, &g).unwrap();
        for ((a, b), gv) in m.flat().iter().zip(&before).zip(g.flat()) {
            let delta = a - b;
            assert!((delta + cfg.lr * gv.signum()).abs() < 1e-9, "{delta}");
        }
    }

    #[test]
    fn decay_skips_biases() {
        let layer = Dense {
            weight: Matrix::from_vec(1, 1, vec![1.0f64]).unwrap(),
            bias: vec![1.0],
        };
        let mut m = Mlp::from_layers(vec![layer], Head::Linear).unwrap();
        let cfg = AdamWConfig {
            weight_decay: 0.1,
            ..AdamWConfig::default()
        };
        let mut opt = AdamW::new(&m, cfg);
        let g = Gradients::zeros_like(&m);
        opt.step(&mut m, &g).unwrap();
        assert!((m.layers()[0].weight.get(0, 0) - (1.0 - 1e-4)).abs() < 1e-15);
        assert_eq!(m.layers()[0].bias[0], 1.0);
    }

    #[test]
    fn non_finite_gradient_names_layer() {
        let mut m = Mlp::<f64>::new(&[2, 3, 1], Head::Linear, &mut RngStream::new(3)).unwrap();
        let mut g = Gradients::zeros_like(&m);
        g.layers[1].bias[0] = f64::NAN;
        let mut opt = AdamW::new(&m, AdamWConfig::default());
        match opt.step(&mut m, &g) {
            Err(Error::NonFinite { layer, .. }) => assert_eq!(layer, 1),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn quadratic_converges() {
        // minimize (x - 1)^2 with a 1x1 linear "network" whose bias is x
        let layer = Dense {
            weight: Matrix::from_vec(1, 1, vec![0.0f64]).unwrap(),
            bias: vec![0.0],
        };
        let mut m = Mlp::from_layers(vec![layer], Head::Linear).unwrap();
        let mut opt = AdamW::new(
            &m,
            AdamWConfig {
                lr: 0.1,
                ..AdamWConfig::default()
            },
        );
        for _ in 0..100 {
            let x = m.layers()[0].bias[0];
            let mut g = Gradients::zeros_like(&m);
            g.layers[0].bias[0] = 2.0 * (x - 1.0);
            opt.step(&mut m, &g).unwrap();
        }
        let x = m.layers()[0].bias[0];
        // scripted reference run of the same recurrence
        assert!((x - 0.9970633243188974).abs() < 1e-12, "x = {x}");
        assert!((x - 1.0).abs() < 1e-2);
    }
}
