use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{Matrix, NnError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Activation {
    Relu,
    Linear,
}

impl Activation {
    pub(crate) fn tag(self) -> u8 {
        match self {
            Activation::Relu => 1,
            Activation::Linear => 2,
        }
    }

    pub(crate) fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            1 => Some(Activation::Relu),
            2 => Some(Activation::Linear),
            _ => None,
        }
    }
}

/// `y = act(W x + b)` with `W` stored as `out × in`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    pub weights: Matrix,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

impl DenseLayer {
    pub fn new(weights: Matrix, bias: Vec<f64>, activation: Activation) -> Result<Self, NnError> {
        if bias.len() != weights.rows() {
            return Err(NnError::Shape(format!(
                "bias of length {} for a layer with {} outputs",
                bias.len(),
                weights.rows()
            )));
        }
        Ok(Self {
            weights,
            bias,
            activation,
        })
    }

    #[inline]
    pub fn in_dim(&self) -> usize {
        self.weights.cols()
    }

    #[inline]
    pub fn out_dim(&self) -> usize {
        self.weights.rows()
    }

    fn param_count(&self) -> usize {
        self.weights.as_slice().len() + self.bias.len()
    }
}

/// Everything `backward` needs from a forward pass over a batch.
#[derive(Debug, Clone)]
pub struct ActivationTrace {
    /// Input of each layer (`batch × in`).
    pub inputs: Vec<Matrix>,
    /// Pre-activation of each layer (`batch × out`).
    pub pre_activations: Vec<Matrix>,
    pub output: Matrix,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerGradient {
    pub weights: Matrix,
    pub bias: Vec<f64>,
}

/// Parameter gradients; `None` for frozen layers.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<Option<LayerGradient>>,
}

impl Gradients {
    /// Present gradients flattened in layer order, weights before bias.
    pub fn flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for g in self.layers.iter().flatten() {
            out.extend_from_slice(g.weights.as_slice());
            out.extend_from_slice(&g.bias);
        }
        out
    }
}

/// Feed-forward chain of dense layers with a per-layer freeze mask.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    layers: Vec<DenseLayer>,
    frozen: Vec<bool>,
}

impl Mlp {
    pub fn new(layers: Vec<DenseLayer>) -> Result<Self, NnError> {
        if layers.is_empty() {
            return Err(NnError::EmptyLayers);
        }
        for (k, pair) in layers.windows(2).enumerate() {
            if pair[0].out_dim() != pair[1].in_dim() {
                return Err(NnError::Shape(format!(
                    "layer {k} outputs {} values but layer {} expects {}",
                    pair[0].out_dim(),
                    k + 1,
                    pair[1].in_dim()
                )));
            }
        }
        let frozen = vec![false; layers.len()];
        Ok(Self { layers, frozen })
    }

    /// Seeded initialization: He-normal for ReLU layers, Xavier-normal for
    /// linear ones, zero biases.
    ///
    /// `sizes` includes the input width, so `[4, 1024, 512, 256]` builds
    /// three layers.
    pub fn init(sizes: &[usize], activations: &[Activation], seed: u64) -> Result<Self, NnError> {
        if sizes.len() < 2 {
            return Err(NnError::EmptyLayers);
        }
        if activations.len() != sizes.len() - 1 {
            return Err(NnError::Shape(format!(
                "{} activations for {} layers",
                activations.len(),
                sizes.len() - 1
            )));
        }
        if sizes.contains(&0) {
            return Err(NnError::Shape("layer widths must be positive".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut layers = Vec::with_capacity(activations.len());
        for (w, &act) in sizes.windows(2).zip(activations) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let std = match act {
                Activation::Relu => (2.0 / fan_in as f64).sqrt(),
                Activation::Linear => (2.0 / (fan_in + fan_out) as f64).sqrt(),
            };
            let normal = Normal::new(0.0, std).expect("positive std");
            let data = (0..fan_in * fan_out).map(|_| normal.sample(&mut rng)).collect();
            let weights = Matrix::from_vec(fan_out, fan_in, data)?;
            layers.push(DenseLayer::new(weights, vec![0.0; fan_out], act)?);
        }
        Self::new(layers)
    }

    /// ReLU on every layer except a linear output layer.
    pub fn init_relu_linear(sizes: &[usize], seed: u64) -> Result<Self, NnError> {
        let n = sizes.len().saturating_sub(1);
        let acts: Vec<_> = (0..n)
            .map(|k| if k + 1 == n { Activation::Linear } else { Activation::Relu })
            .collect();
        Self::init(sizes, &acts, seed)
    }

    pub fn layers(&self) -> &[DenseLayer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [DenseLayer] {
        &mut self.layers
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn out_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim()
    }

    /// Widths including the input, e.g. `[4, 1024, 512, 256]`.
    pub fn widths(&self) -> Vec<usize> {
        std::iter::once(self.in_dim())
            .chain(self.layers.iter().map(DenseLayer::out_dim))
            .collect()
    }

    pub fn activations(&self) -> Vec<Activation> {
        self.layers.iter().map(|l| l.activation).collect()
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(DenseLayer::param_count).sum()
    }

    pub fn frozen_mask(&self) -> &[bool] {
        &self.frozen
    }

    pub fn set_frozen(&mut self, layer: usize, frozen: bool) {
        self.frozen[layer] = frozen;
    }

    pub fn freeze_all(&mut self) {
        self.frozen.iter_mut().for_each(|f| *f = true);
    }

    pub fn is_fully_frozen(&self) -> bool {
        self.frozen.iter().all(|&f| f)
    }

    /// CRC-32 over the raw bits of every parameter.
    pub fn param_digest(&self) -> u32 {
        let mut h = crc32fast::Hasher::new();
        for l in &self.layers {
            for v in l.weights.as_slice().iter().chain(&l.bias) {
                h.update(&v.to_bits().to_le_bytes());
            }
        }
        h.finalize()
    }

    /// Concatenates networks into one chain, keeping each part's freeze mask.
    pub fn stack(parts: &[&Mlp]) -> Result<Mlp, NnError> {
        let mut layers = Vec::new();
        let mut frozen = Vec::new();
        for p in parts {
            layers.extend(p.layers.iter().cloned());
            frozen.extend_from_slice(&p.frozen);
        }
        let mut m = Mlp::new(layers)?;
        m.frozen = frozen;
        Ok(m)
    }

    /// Inverse of [`Mlp::stack`]: cuts the chain into pieces of the given layer counts.
    pub fn split(self, layer_counts: &[usize]) -> Result<Vec<Mlp>, NnError> {
        if layer_counts.iter().sum::<usize>() != self.layers.len() || layer_counts.contains(&0) {
            return Err(NnError::Shape(format!(
                "cannot split {} layers into {layer_counts:?}",
                self.layers.len()
            )));
        }
        let mut layers = self.layers.into_iter();
        let mut frozen = self.frozen.into_iter();
        let mut out = Vec::with_capacity(layer_counts.len());
        for &count in layer_counts {
            let mut m = Mlp::new(layers.by_ref().take(count).collect())?;
            m.frozen = frozen.by_ref().take(count).collect();
            out.push(m);
        }
        Ok(out)
    }

    /// Batched forward pass; `input` is `batch × in`.
    pub fn forward_batch(&self, input: &Matrix) -> Result<ActivationTrace, NnError> {
        if input.cols() != self.in_dim() {
            return Err(NnError::Shape(format!(
                "input has {} features, network expects {}",
                input.cols(),
                self.in_dim()
            )));
        }
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre_activations = Vec::with_capacity(self.layers.len());
        let mut current = input.clone();
        for layer in &self.layers {
            let z = affine(layer, &current)?;
            let post = activate(layer.activation, &z);
            inputs.push(current);
            pre_activations.push(z);
            current = post;
        }
        Ok(ActivationTrace {
            inputs,
            pre_activations,
            output: current,
        })
    }

    /// Forward pass that keeps only the output.
    pub fn predict_batch(&self, input: &Matrix) -> Result<Matrix, NnError> {
        if input.cols() != self.in_dim() {
            return Err(NnError::Shape(format!(
                "input has {} features, network expects {}",
                input.cols(),
                self.in_dim()
            )));
        }
        let mut current = affine(&self.layers[0], input)?;
        relu_in_place(self.layers[0].activation, &mut current);
        for layer in &self.layers[1..] {
            current = affine(layer, &current)?;
            relu_in_place(layer.activation, &mut current);
        }
        Ok(current)
    }

    /// Single-sample forward pass.
    pub fn forward(&self, input: &[f64]) -> Result<ActivationTrace, NnError> {
        self.forward_batch(&Matrix::row_vector(input))
    }

    pub fn predict(&self, input: &[f64]) -> Result<Vec<f64>, NnError> {
        Ok(self.predict_batch(&Matrix::row_vector(input))?.into_vec())
    }

    /// Backpropagates `output_grad` (`batch × out`, the loss gradient w.r.t.
    /// the network output) through the trace.
    ///
    /// Returns parameter gradients for unfrozen layers and the gradient
    /// w.r.t. the network input, which always flows, frozen or not.
    pub fn backward_batch(
        &self,
        trace: &ActivationTrace,
        output_grad: &Matrix,
    ) -> Result<(Gradients, Matrix), NnError> {
        if trace.inputs.len() != self.layers.len() || trace.pre_activations.len() != self.layers.len() {
            return Err(NnError::Shape(format!(
                "trace covers {} layers, network has {}",
                trace.inputs.len(),
                self.layers.len()
            )));
        }
        if output_grad.shape() != trace.output.shape() {
            return Err(NnError::Shape(format!(
                "output gradient is {:?}, trace output is {:?}",
                output_grad.shape(),
                trace.output.shape()
            )));
        }
        let mut grads: Vec<Option<LayerGradient>> = vec![None; self.layers.len()];
        let mut delta = output_grad.clone();
        for (k, layer) in self.layers.iter().enumerate().rev() {
            let z = &trace.pre_activations[k];
            let x = &trace.inputs[k];
            if z.cols() != layer.out_dim() || x.cols() != layer.in_dim() {
                return Err(NnError::Shape(format!("trace does not match layer {k}")));
            }
            if layer.activation == Activation::Relu {
                for (d, &zv) in delta.as_mut_slice().iter_mut().zip(z.as_slice()) {
                    if zv <= 0.0 {
                        *d = 0.0;
                    }
                }
            }
            if !self.frozen[k] {
                let weights = delta.t_matmul(x)?;
                let mut bias = vec![0.0; layer.out_dim()];
                for row in delta.iter_rows() {
                    for (b, &d) in bias.iter_mut().zip(row) {
                        *b += d;
                    }
                }
                grads[k] = Some(LayerGradient { weights, bias });
            }
            delta = delta.matmul(&layer.weights)?;
        }
        Ok((Gradients { layers: grads }, delta))
    }

    /// Single-sample backward pass.
    pub fn backward(
        &self,
        trace: &ActivationTrace,
        output_grad: &[f64],
    ) -> Result<(Gradients, Vec<f64>), NnError> {
        let (g, input_grad) = self.backward_batch(trace, &Matrix::row_vector(output_grad))?;
        Ok((g, input_grad.into_vec()))
    }
}

fn affine(layer: &DenseLayer, x: &Matrix) -> Result<Matrix, NnError> {
    let mut z = x.matmul_t(&layer.weights)?;
    let cols = z.cols();
    for row in z.as_mut_slice().chunks_exact_mut(cols) {
        for (v, &b) in row.iter_mut().zip(&layer.bias) {
            *v += b;
        }
    }
    Ok(z)
}

fn activate(act: Activation, z: &Matrix) -> Matrix {
    let mut out = z.clone();
    relu_in_place(act, &mut out);
    out
}

#[inline]
fn relu_in_place(act: Activation, m: &mut Matrix) {
    if act == Activation::Relu {
        for v in m.as_mut_slice() {
            if *v < 0.0 {
                *v = 0.0;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(weights: Matrix, bias: Vec<f64>, act: Activation) -> Mlp {
        Mlp::new(vec![DenseLayer::new(weights, bias, act).unwrap()]).unwrap()
    }

    #[test]
    fn identity_linear_layer() {
        let m = single(Matrix::identity(2), vec![0.0; 2], Activation::Linear);
        assert_eq!(m.predict(&[1.0, 2.0]).unwrap(), vec![1.0, 2.0]);
    }

    #[test]
    fn identity_relu_layer() {
        let m = single(Matrix::identity(2), vec![0.0; 2], Activation::Relu);
        assert_eq!(m.predict(&[-3.0, 4.0]).unwrap(), vec![0.0, 4.0]);
    }

    #[test]
    fn two_layer_hand_computed() {
        // W1 = [[1, -1], [2, 0.5]], b1 = [0, -1], ReLU
        // W2 = [[1, 3]], b2 = [0.5], linear
        // x = [2, 1]: z1 = [1, 3.5], h = [1, 3.5], y = 1 + 10.5 + 0.5 = 12
        // x = [-1, 2]: z1 = [-3, -3], h = [0, 0], y = 0.5
        let l1 = DenseLayer::new(
            Matrix::from_rows(&[[1.0, -1.0], [2.0, 0.5]]).unwrap(),
            vec![0.0, -1.0],
            Activation::Relu,
        )
        .unwrap();
        let l2 = DenseLayer::new(Matrix::from_rows(&[[1.0, 3.0]]).unwrap(), vec![0.5], Activation::Linear)
            .unwrap();
        let m = Mlp::new(vec![l1, l2]).unwrap();
        assert_eq!(m.predict(&[2.0, 1.0]).unwrap(), vec![12.0]);
        assert_eq!(m.predict(&[-1.0, 2.0]).unwrap(), vec![0.5]);
    }

    #[test]
    fn dimension_mismatch_is_a_shape_error() {
        let m = Mlp::init_relu_linear(&[3, 4, 2], 1).unwrap();
        assert!(matches!(m.forward(&[1.0, 2.0]), Err(NnError::Shape(_))));
        let other = Mlp::init_relu_linear(&[3, 5, 2], 1).unwrap();
        let trace = other.forward(&[1.0, 2.0, 3.0]).unwrap();
        assert!(m.backward(&trace, &[1.0, 1.0]).is_err());
    }

    #[test]
    fn incompatible_layers_rejected() {
        let a = DenseLayer::new(Matrix::zeros(3, 2), vec![0.0; 3], Activation::Relu).unwrap();
        let b = DenseLayer::new(Matrix::zeros(1, 4), vec![0.0], Activation::Linear).unwrap();
        assert!(Mlp::new(vec![a, b]).is_err());
        assert!(matches!(Mlp::new(vec![]), Err(NnError::EmptyLayers)));
        assert!(matches!(Mlp::init(&[4], &[], 0), Err(NnError::EmptyLayers)));
    }

    #[test]
    fn linear_layer_gradient_closed_form() {
        // y = W x, L = mean((y - t)^2)  =>  dL/dW = 2 (y - t) xᵀ / dim
        let w = Matrix::from_rows(&[[0.5, -1.0, 2.0], [1.5, 0.25, -0.5]]).unwrap();
        let m = single(w, vec![0.0; 2], Activation::Linear);
        let x = [1.0, 2.0, -1.0];
        let t = [0.0, 1.0];
        let trace = m.forward(&x).unwrap();
        let y = trace.output.row(0).to_vec();
        let (_, grad) = super::super::mse_loss(&y, &t).unwrap();
        let (g, _) = m.backward(&trace, &grad).unwrap();
        let gw = &g.layers[0].as_ref().unwrap().weights;
        for i in 0..2 {
            for j in 0..3 {
                let expected = 2.0 * (y[i] - t[i]) * x[j] / 2.0;
                assert_eq!(gw.get(i, j), expected);
            }
        }
    }

    #[test]
    fn frozen_network_still_propagates_input_gradient() {
        let mut m = Mlp::init_relu_linear(&[3, 5, 2], 9).unwrap();
        m.freeze_all();
        let trace = m.forward(&[0.3, -0.2, 0.9]).unwrap();
        let (g, input_grad) = m.backward(&trace, &[1.0, -1.0]).unwrap();
        assert!(g.layers.iter().all(Option::is_none));
        assert!(input_grad.iter().any(|&v| v != 0.0));
    }

    #[test]
    fn init_shapes_follow_sizes() {
        let m = Mlp::init_relu_linear(&[4, 1024, 512, 256], 3).unwrap();
        let shapes: Vec<_> = m.layers().iter().map(|l| l.weights.shape()).collect();
        assert_eq!(shapes, vec![(1024, 4), (512, 1024), (256, 512)]);
    }

    #[test]
    fn init_is_deterministic_in_seed() {
        let a = Mlp::init_relu_linear(&[6, 16, 3], 42).unwrap();
        let b = Mlp::init_relu_linear(&[6, 16, 3], 42).unwrap();
        let c = Mlp::init_relu_linear(&[6, 16, 3], 43).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.param_digest(), b.param_digest());
        assert_ne!(a, c);
    }

    #[test]
    fn he_init_scale() {
        let m = Mlp::init(&[100, 400], &[Activation::Relu], 11).unwrap();
        let w = m.layers()[0].weights.as_slice();
        let mean = w.iter().sum::<f64>() / w.len() as f64;
        let var = w.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (w.len() - 1) as f64;
        let target = (2.0f64 / 100.0).sqrt();
        assert!((var.sqrt() - target).abs() < 0.2 * target, "std {}", var.sqrt());
    }

    #[test]
    fn stack_then_split_round_trips() {
        let mut a = Mlp::init_relu_linear(&[3, 4, 2], 1).unwrap();
        a.freeze_all();
        let b = Mlp::init_relu_linear(&[2, 6, 5], 2).unwrap();
        let s = Mlp::stack(&[&a, &b]).unwrap();
        assert_eq!(s.frozen_mask(), &[true, true, false, false]);
        let parts = s.split(&[2, 2]).unwrap();
        assert_eq!(parts[0], a);
        assert_eq!(parts[1], b);
    }
}
