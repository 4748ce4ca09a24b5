use super::{Gradients, Matrix, Mlp, NnError};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerMoments {
    pub m_weights: Matrix,
    pub v_weights: Matrix,
    pub m_bias: Vec<f64>,
    pub v_bias: Vec<f64>,
}

/// First/second moment accumulators for every layer of one network.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub t: u64,
    pub moments: Vec<LayerMoments>,
    /// Step size per layer; `config.lr` unless stacked from differently
    /// configured parts.
    pub layer_lr: Vec<f64>,
}

impl AdamState {
    pub fn new(mlp: &Mlp, config: AdamConfig) -> Self {
        let moments: Vec<LayerMoments> = mlp
            .layers()
            .iter()
            .map(|l| {
                let (r, c) = l.weights.shape();
                LayerMoments {
                    m_weights: Matrix::zeros(r, c),
                    v_weights: Matrix::zeros(r, c),
                    m_bias: vec![0.0; r],
                    v_bias: vec![0.0; r],
                }
            })
            .collect();
        let layer_lr = vec![config.lr; moments.len()];
        Self {
            config,
            t: 0,
            moments,
            layer_lr,
        }
    }

    /// Stacks the states of networks combined with [`Mlp::stack`]. Parts
    /// may use different step sizes but must share β₁, β₂, ε and `t`.
    pub fn stack(parts: &[&AdamState]) -> Result<Self, NnError> {
        let first = parts.first().ok_or(NnError::EmptyLayers)?;
        let same = |a: &AdamConfig, b: &AdamConfig| a.beta1 == b.beta1 && a.beta2 == b.beta2 && a.epsilon == b.epsilon;
        if parts.iter().any(|p| p.t != first.t || !same(&p.config, &first.config)) {
            return Err(NnError::Shape("optimizer states are at different steps or settings".into()));
        }
        Ok(Self {
            config: first.config,
            t: first.t,
            moments: parts.iter().flat_map(|p| p.moments.iter().cloned()).collect(),
            layer_lr: parts.iter().flat_map(|p| p.layer_lr.iter().copied()).collect(),
        })
    }

    /// Inverse of [`AdamState::stack`].
    pub fn split(self, layer_counts: &[usize]) -> Result<Vec<AdamState>, NnError> {
        if layer_counts.iter().sum::<usize>() != self.moments.len() || layer_counts.contains(&0) {
            return Err(NnError::Shape(format!(
                "cannot split {} moment sets into {layer_counts:?}",
                self.moments.len()
            )));
        }
        let mut moments = self.moments.into_iter();
        let mut lrs = self.layer_lr.into_iter();
        Ok(layer_counts
            .iter()
            .map(|&count| {
                let layer_lr: Vec<f64> = lrs.by_ref().take(count).collect();
                AdamState {
                    config: AdamConfig {
                        lr: layer_lr[0],
                        ..self.config
                    },
                    t: self.t,
                    moments: moments.by_ref().take(count).collect(),
                    layer_lr,
                }
            })
            .collect())
    }

    /// One bias-corrected ADAM update. Frozen layers and layers without a
    /// gradient are left untouched; `t` advances regardless.
    pub fn step(&mut self, mlp: &mut Mlp, grads: &Gradients) -> Result<(), NnError> {
        self.step_scaled(mlp, grads, 1.0)
    }

    /// [`AdamState::step`] with every step size multiplied by `scale`.
    pub fn step_scaled(&mut self, mlp: &mut Mlp, grads: &Gradients, scale: f64) -> Result<(), NnError> {
        if grads.layers.len() != mlp.layers().len()
            || self.moments.len() != mlp.layers().len()
            || self.layer_lr.len() != mlp.layers().len()
        {
            return Err(NnError::Shape(format!(
                "{} gradients / {} moment sets for {} layers",
                grads.layers.len(),
                self.moments.len(),
                mlp.layers().len()
            )));
        }
        for (k, (layer, g)) in mlp.layers().iter().zip(&grads.layers).enumerate() {
            if let Some(g) = g {
                if g.weights.shape() != layer.weights.shape() || g.bias.len() != layer.bias.len() {
                    return Err(NnError::Shape(format!("gradient shape mismatch at layer {k}")));
                }
            }
        }
        self.t += 1;
        let AdamConfig {
            beta1,
            beta2,
            epsilon,
            ..
        } = self.config;
        let bc1 = 1.0 - beta1.powi(self.t as i32);
        let bc2 = 1.0 - beta2.powi(self.t as i32);
        let frozen = mlp.frozen_mask().to_vec();
        for (k, layer) in mlp.layers_mut().iter_mut().enumerate() {
            let Some(g) = &grads.layers[k] else { continue };
            if frozen[k] {
                continue;
            }
            let lr = self.layer_lr[k] * scale;
            let mom = &mut self.moments[k];
            update(
                layer.weights.as_mut_slice(),
                g.weights.as_slice(),
                mom.m_weights.as_mut_slice(),
                mom.v_weights.as_mut_slice(),
                (lr, beta1, beta2, epsilon, bc1, bc2),
            );
            update(
                &mut layer.bias,
                &g.bias,
                &mut mom.m_bias,
                &mut mom.v_bias,
                (lr, beta1, beta2, epsilon, bc1, bc2),
            );
        }
        Ok(())
    }
}

#[inline]
fn update(p: &mut [f64], g: &[f64], m: &mut [f64], v: &mut [f64], h: (f64, f64, f64, f64, f64, f64)) {
    let (lr, b1, b2, eps, bc1, bc2) = h;
    for i in 0..p.len() {
        m[i] = b1 * m[i] + (1.0 - b1) * g[i];
        v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
        let m_hat = m[i] / bc1;
        let v_hat = v[i] / bc2;
        p[i] -= lr * m_hat / (v_hat.sqrt() + eps);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Activation, DenseLayer, LayerGradient};

    fn scalar(w: f64) -> Mlp {
        Mlp::new(vec![DenseLayer::new(
            Matrix::from_vec(1, 1, vec![w]).unwrap(),
            vec![0.0],
            Activation::Linear,
        )
        .unwrap()])
        .unwrap()
    }

    fn grad(g: f64) -> Gradients {
        Gradients {
            layers: vec![Some(LayerGradient {
                weights: Matrix::from_vec(1, 1, vec![g]).unwrap(),
                bias: vec![0.0],
            })],
        }
    }

    #[test]
    fn zero_gradient_leaves_params_and_counts_step() {
        let mut m = Mlp::init_relu_linear(&[3, 4, 2], 5).unwrap();
        let before = m.clone();
        let mut st = AdamState::new(&m, AdamConfig::default());
        let zero = Gradients {
            layers: m
                .layers()
                .iter()
                .map(|l| {
                    Some(LayerGradient {
                        weights: Matrix::zeros(l.weights.rows(), l.weights.cols()),
                        bias: vec![0.0; l.bias.len()],
                    })
                })
                .collect(),
        };
        st.step(&mut m, &zero).unwrap();
        assert_eq!(m, before);
        assert_eq!(st.t, 1);
    }

    #[test]
    fn first_step_moves_by_lr() {
        for g in [1e-4, 0.3, -7.0, 250.0] {
            let mut m = scalar(1.0);
            let mut st = AdamState::new(&m, AdamConfig::default());
            st.step(&mut m, &grad(g)).unwrap();
            let delta = m.layers()[0].weights.get(0, 0) - 1.0;
            // m̂ = g, v̂ = g², so Δ = -lr·g/(|g|+ε)
            let expected = -1e-3 * g / (g.abs() + 1e-8);
            assert!((delta - expected).abs() < 1e-15, "g={g} delta={delta}");
            assert!(delta.abs() <= 1e-3 * (1.0 + 1e-9));
        }
    }

    /// Plain scalar ADAM, written independently of the matrix code path.
    fn reference_minimize(lr: f64, steps: usize) -> f64 {
        let (mut w, mut m, mut v) = (0.0f64, 0.0f64, 0.0f64);
        for t in 1..=steps {
            let g = 2.0 * (w - 3.0);
            m = 0.9 * m + 0.1 * g;
            v = 0.999 * v + 0.001 * g * g;
            let mh = m / (1.0 - 0.9f64.powi(t as i32));
            let vh = v / (1.0 - 0.999f64.powi(t as i32));
            w -= lr * mh / (vh.sqrt() + 1e-8);
        }
        w
    }

    #[test]
    fn quadratic_converges() {
        let cfg = AdamConfig {
            lr: 0.1,
            ..AdamConfig::default()
        };
        let mut m = scalar(0.0);
        let mut st = AdamState::new(&m, cfg);
        for _ in 0..100 {
            let w = m.layers()[0].weights.get(0, 0);
            st.step(&mut m, &grad(2.0 * (w - 3.0))).unwrap();
        }
        let w = m.layers()[0].weights.get(0, 0);
        assert_eq!(w, reference_minimize(0.1, 100));
        assert!((w - 3.0).abs() < 0.5, "w = {w}");
        // At the default rate 100 steps cover at most 0.1.
        assert!(reference_minimize(1e-3, 100) <= 0.1 + 1e-12);
    }

    #[test]
    fn frozen_layers_are_skipped() {
        let mut m = scalar(2.0);
        m.freeze_all();
        let mut st = AdamState::new(&m, AdamConfig::default());
        st.step(&mut m, &grad(1.0)).unwrap();
        assert_eq!(m.layers()[0].weights.get(0, 0), 2.0);
    }

    #[test]
    fn shape_mismatch() {
        let mut m = Mlp::init_relu_linear(&[2, 3], 0).unwrap();
        let mut st = AdamState::new(&m, AdamConfig::default());
        assert!(st.step(&mut m, &grad(1.0)).is_err());
        assert_eq!(st.t, 0);
    }
}
