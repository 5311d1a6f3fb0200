//! The student/teacher network: a small ReLU MLP (encoder then projector)
//! followed by a prototype layer whose logits are inner products between the
//! embedding and each prototype row. Backpropagation is written out by hand;
//! the finite-difference tests in this module and the acceptance suite are
//! the authority on its correctness.

use crate::numerics::{Matrix, Rng};

/// One dense layer. The weight is stored [in x out] so both the forward pass
/// (input · W) and the weight gradient (inputᵀ · delta) run on contiguous rows.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearLayer {
    pub weight: Matrix,
    pub bias: Vec<f64>,
}

impl LinearLayer {
    pub fn in_dim(&self) -> usize {
        self.weight.rows()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.cols()
    }
}

/// Layer widths for building a model: input -> encoder hiddens -> projector
/// widths (the last projector width is the embedding dimension) -> K
/// prototypes over that embedding space.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelDims {
    pub input: usize,
    pub encoder: Vec<usize>,
    pub projector: Vec<usize>,
    pub prototypes: usize,
}

impl ModelDims {
    pub fn embedding(&self) -> usize {
        *self.projector.last().expect("projector needs at least one layer")
    }
}

/// All learnable state. ReLU follows every layer except the last projector
/// layer, so embeddings are unconstrained; logits = embedding · prototypesᵀ.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub encoder: Vec<LinearLayer>,
    pub projector: Vec<LinearLayer>,
    /// [K x d], initialized to unit rows and free to drift afterwards.
    pub prototypes: Matrix,
}

impl ModelParams {
    pub fn input_dim(&self) -> usize {
        self.encoder.first().map(|l| l.in_dim()).unwrap_or_else(|| self.projector[0].in_dim())
    }

    pub fn embedding_dim(&self) -> usize {
        self.prototypes.cols()
    }

    pub fn num_prototypes(&self) -> usize {
        self.prototypes.rows()
    }

    pub fn dims(&self) -> ModelDims {
        ModelDims {
            input: self.input_dim(),
            encoder: self.encoder.iter().map(|l| l.out_dim()).collect(),
            projector: self.projector.iter().map(|l| l.out_dim()).collect(),
            prototypes: self.num_prototypes(),
        }
    }

    /// Every parameter as flat slices, in a fixed traversal order (encoder
    /// weights/biases, projector weights/biases, prototypes). The optimizer
    /// and the EMA update both walk this order, which keeps them
    /// deterministic and keeps the two trees aligned.
    pub fn param_slices(&self) -> Vec<&[f64]> {
        let mut out = Vec::new();
        for l in self.encoder.iter().chain(&self.projector) {
            out.push(l.weight.data());
            out.push(l.bias.as_slice());
        }
        out.push(self.prototypes.data());
        out
    }

    pub fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = Vec::new();
        for l in self.encoder.iter_mut().chain(self.projector.iter_mut()) {
            out.push(l.weight.data_mut());
            out.push(l.bias.as_mut_slice());
        }
        out.push(self.prototypes.data_mut());
        out
    }

    pub fn num_params(&self) -> usize {
        self.param_slices().iter().map(|s| s.len()).sum()
    }
}

/// Everything the backward pass needs from one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    /// Input to each layer: element 0 is the batch itself.
    pub layer_inputs: Vec<Matrix>,
    /// Pre-activation output of each layer, kept for the ReLU mask.
    pub pre_activations: Vec<Matrix>,
    /// Output of the last projector layer, [N x d].
    pub embeddings: Matrix,
    /// embedding · prototypesᵀ, [N x K].
    pub logits: Matrix,
}

/// Gradient of the loss w.r.t. every parameter, same tree shape as
/// ModelParams.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub encoder: Vec<LayerGrads>,
    pub projector: Vec<LayerGrads>,
    pub prototypes: Matrix,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrads {
    pub weight: Matrix,
    pub bias: Vec<f64>,
}

impl Gradients {
    pub fn zeros_like(params: &ModelParams) -> Self {
        let zero_layer = |l: &LinearLayer| LayerGrads {
            weight: Matrix::zeros(l.weight.rows(), l.weight.cols()),
            bias: vec![0.0; l.bias.len()],
        };
        Gradients {
            encoder: params.encoder.iter().map(zero_layer).collect(),
            projector: params.projector.iter().map(zero_layer).collect(),
            prototypes: Matrix::zeros(params.prototypes.rows(), params.prototypes.cols()),
        }
    }

    pub fn add_assign(&mut self, other: &Gradients) {
        assert_eq!(self.encoder.len(), other.encoder.len(), "gradient trees differ");
        assert_eq!(self.projector.len(), other.projector.len(), "gradient trees differ");
        for (a, b) in self.encoder.iter_mut().chain(self.projector.iter_mut())
            .zip(other.encoder.iter().chain(other.projector.iter()))
        {
            a.weight.add_assign(&b.weight);
            for (x, y) in a.bias.iter_mut().zip(&b.bias) {
                *x += y;
            }
        }
        self.prototypes.add_assign(&other.prototypes);
    }

    /// Flat slices in the same traversal order as ModelParams::param_slices.
    pub fn grad_slices(&self) -> Vec<&[f64]> {
        let mut out = Vec::new();
        for l in self.encoder.iter().chain(&self.projector) {
            out.push(l.weight.data());
            out.push(l.bias.as_slice());
        }
        out.push(self.prototypes.data());
        out
    }

    pub fn grad_slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = Vec::new();
        for l in self.encoder.iter_mut().chain(self.projector.iter_mut()) {
            out.push(l.weight.data_mut());
            out.push(l.bias.as_mut_slice());
        }
        out.push(self.prototypes.data_mut());
        out
    }
}

/// Fresh parameters: Glorot-uniform weights (a = sqrt(6/(fan_in+fan_out)),
/// drawn row-major), zero biases, unit-norm Gaussian prototype rows. The draw
/// order is part of the reproducibility contract.
pub fn init_model(dims: &ModelDims, rng: &mut Rng) -> ModelParams {
    assert!(!dims.projector.is_empty(), "projector needs at least one layer");
    let mut widths = vec![dims.input];
    widths.extend(&dims.encoder);
    let boundary = widths.len() - 1; // layers before this index are encoder layers
    widths.extend(&dims.projector);

    let mut layers = Vec::new();
    for w in widths.windows(2) {
        let (fan_in, fan_out) = (w[0], w[1]);
        assert!(fan_in > 0 && fan_out > 0, "layer widths must be positive");
        let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let data = (0..fan_in * fan_out).map(|_| (2.0 * rng.next_f64() - 1.0) * a).collect();
        layers.push(LinearLayer {
            weight: Matrix::from_vec(fan_in, fan_out, data),
            bias: vec![0.0; fan_out],
        });
    }
    let projector = layers.split_off(boundary);

    let d = dims.embedding();
    let proto_data: Vec<f64> = (0..dims.prototypes * d).map(|_| rng.next_normal()).collect();
    let prototypes = Matrix::from_vec(dims.prototypes, d, proto_data).normalized_rows();

    ModelParams { encoder: layers, projector, prototypes }
}

/// Forward pass over a batch of rows. Deterministic: same params and batch
/// give a bit-identical trace.
pub fn forward(params: &ModelParams, batch: &Matrix) -> ForwardTrace {
    assert_eq!(batch.cols(), params.input_dim(), "forward: batch width {} vs input dim {}", batch.cols(), params.input_dim());
    let layers: Vec<&LinearLayer> = params.encoder.iter().chain(&params.projector).collect();
    let last = layers.len() - 1;

    let mut layer_inputs = Vec::with_capacity(layers.len());
    let mut pre_activations = Vec::with_capacity(layers.len());
    let mut current = batch.clone();
    for (li, layer) in layers.iter().enumerate() {
        let mut y = current.matmul(&layer.weight);
        for i in 0..y.rows() {
            for (v, b) in y.row_mut(i).iter_mut().zip(&layer.bias) {
                *v += b;
            }
        }
        layer_inputs.push(current);
        pre_activations.push(y.clone());
        if li < last {
            for v in y.data_mut() {
                if *v < 0.0 {
                    *v = 0.0;
                }
            }
        }
        current = y;
    }
    let embeddings = current;
    let logits = embeddings.matmul(&params.prototypes.transpose());
    ForwardTrace { layer_inputs, pre_activations, embeddings, logits }
}

/// Backpropagate d(loss)/d(logits) through the prototype layer and the MLP.
/// ReLU uses the convention relu'(0) = 0.
pub fn backward(params: &ModelParams, trace: &ForwardTrace, dlogits: &Matrix) -> Gradients {
    assert_eq!(dlogits.rows(), trace.logits.rows(), "backward: batch size mismatch");
    assert_eq!(dlogits.cols(), trace.logits.cols(), "backward: logit width mismatch");

    let d_prototypes = dlogits.matmul_transpose_a(&trace.embeddings); // [K x d]
    let mut delta = dlogits.matmul(&params.prototypes); // d(loss)/d(embeddings), [N x d]

    let layers: Vec<&LinearLayer> = params.encoder.iter().chain(&params.projector).collect();
    let last = layers.len() - 1;
    let mut layer_grads: Vec<LayerGrads> = Vec::with_capacity(layers.len());
    for li in (0..layers.len()).rev() {
        if li < last {
            // delta currently holds d(loss)/d(activation); gate it by the
            // ReLU mask to get d(loss)/d(pre-activation).
            let pre = &trace.pre_activations[li];
            for (v, &p) in delta.data_mut().iter_mut().zip(pre.data()) {
                if p <= 0.0 {
                    *v = 0.0;
                }
            }
        }
        let input = &trace.layer_inputs[li];
        let weight = input.matmul_transpose_a(&delta); // [in x out]
        let mut bias = vec![0.0; layers[li].out_dim()];
        for i in 0..delta.rows() {
            for (b, &d) in bias.iter_mut().zip(delta.row(i)) {
                *b += d;
            }
        }
        layer_grads.push(LayerGrads { weight, bias });
        if li > 0 {
            delta = delta.matmul(&layers[li].weight.transpose());
        }
    }
    layer_grads.reverse();
    let projector = layer_grads.split_off(params.encoder.len());
    Gradients { encoder: layer_grads, projector, prototypes: d_prototypes }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::random_matrix;

    fn small_dims() -> ModelDims {
        ModelDims { input: 5, encoder: vec![7], projector: vec![6, 4], prototypes: 8 }
    }

    #[test]
    fn init_is_seed_deterministic_with_unit_prototypes() {
        let dims = small_dims();
        let a = init_model(&dims, &mut Rng::new(33));
        let b = init_model(&dims, &mut Rng::new(33));
        assert_eq!(a, b, "same seed must give identical parameters");
        for i in 0..a.prototypes.rows() {
            let norm: f64 = a.prototypes.row(i).iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!((norm - 1.0).abs() < 1e-12, "prototype row {i} has norm {norm}");
        }
        for l in a.encoder.iter().chain(&a.projector) {
            assert!(l.bias.iter().all(|&b| b == 0.0), "biases must start at zero");
            let bound = (6.0 / (l.in_dim() + l.out_dim()) as f64).sqrt();
            assert!(l.weight.data().iter().all(|v| v.abs() <= bound), "weight outside Glorot bound");
        }
        let c = init_model(&dims, &mut Rng::new(34));
        assert_ne!(a, c, "different seeds should differ");
    }

    #[test]
    fn zero_parameters_give_zero_logits() {
        let dims = small_dims();
        let mut params = init_model(&dims, &mut Rng::new(1));
        for s in params.param_slices_mut() {
            for v in s {
                *v = 0.0;
            }
        }
        let batch = random_matrix(&mut Rng::new(2), 3, dims.input);
        let trace = forward(&params, &batch);
        assert!(trace.logits.data().iter().all(|&v| v == 0.0));
        assert!(trace.embeddings.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn identity_stack_reproduces_nonnegative_batch() {
        // One encoder layer and one projector layer, both identity, with the
        // prototype matrix also identity: logits must equal the batch. The
        // batch is nonnegative so the interior ReLU is transparent.
        let d = 4;
        let eye = || LinearLayer { weight: Matrix::identity(d), bias: vec![0.0; d] };
        let params = ModelParams {
            encoder: vec![eye()],
            projector: vec![eye()],
            prototypes: Matrix::identity(d),
        };
        let mut rng = Rng::new(9);
        let mut batch = random_matrix(&mut rng, 3, d);
        for v in batch.data_mut() {
            *v = v.abs();
        }
        let trace = forward(&params, &batch);
        for (a, b) in trace.logits.data().iter().zip(batch.data()) {
            assert!((a - b).abs() < 1e-15, "identity stack must pass the batch through");
        }
    }

    #[test]
    fn forward_matches_straight_line_recomputation() {
        let dims = small_dims();
        let params = init_model(&dims, &mut Rng::new(5));
        let batch = random_matrix(&mut Rng::new(6), 4, dims.input);
        let trace = forward(&params, &batch);

        for i in 0..batch.rows() {
            // Recompute row by row with plain loops.
            let mut x: Vec<f64> = batch.row(i).to_vec();
            let layers: Vec<&LinearLayer> = params.encoder.iter().chain(&params.projector).collect();
            for (li, layer) in layers.iter().enumerate() {
                let mut y = vec![0.0; layer.out_dim()];
                for (o, yo) in y.iter_mut().enumerate() {
                    let mut acc = layer.bias[o];
                    for (k, &xv) in x.iter().enumerate() {
                        acc += xv * layer.weight.get(k, o);
                    }
                    *yo = acc;
                }
                if li + 1 < layers.len() {
                    for v in &mut y {
                        *v = v.max(0.0);
                    }
                }
                x = y;
            }
            for (j, &e) in x.iter().enumerate() {
                assert!((trace.embeddings.get(i, j) - e).abs() < 1e-12, "embedding mismatch at ({i},{j})");
            }
            for k in 0..params.num_prototypes() {
                let mut l = 0.0;
                for (j, &e) in x.iter().enumerate() {
                    l += e * params.prototypes.get(k, j);
                }
                assert!((trace.logits.get(i, k) - l).abs() < 1e-12, "logit mismatch at ({i},{k})");
            }
        }
    }

    #[test]
    fn backward_zero_upstream_gives_zero_gradients() {
        let dims = small_dims();
        let params = init_model(&dims, &mut Rng::new(4));
        let batch = random_matrix(&mut Rng::new(8), 3, dims.input);
        let trace = forward(&params, &batch);
        let grads = backward(&params, &trace, &Matrix::zeros(3, dims.prototypes));
        for s in grads.grad_slices() {
            assert!(s.iter().all(|&v| v == 0.0), "zero upstream must give zero gradients");
        }
    }

    #[test]
    fn single_linear_layer_gradient_hand_check() {
        // No ReLU in play (single layer is the last layer), prototypes = I,
        // so logits = x W + b and d(loss)/dW = xᵀ delta exactly.
        let params = ModelParams {
            encoder: vec![],
            projector: vec![LinearLayer {
                weight: Matrix::from_rows(&[vec![1.0, -2.0], vec![0.5, 3.0]]),
                bias: vec![0.1, -0.2],
            }],
            prototypes: Matrix::identity(2),
        };
        let batch = Matrix::from_rows(&[vec![1.0, 2.0], vec![-3.0, 4.0]]);
        let trace = forward(&params, &batch);
        let dlogits = Matrix::from_rows(&[vec![0.3, -0.7], vec![1.1, 0.2]]);
        let grads = backward(&params, &trace, &dlogits);
        // xᵀ delta by hand.
        let expected_w = [
            [1.0 * 0.3 + (-3.0) * 1.1, 1.0 * (-0.7) + (-3.0) * 0.2],
            [2.0 * 0.3 + 4.0 * 1.1, 2.0 * (-0.7) + 4.0 * 0.2],
        ];
        for i in 0..2 {
            for j in 0..2 {
                assert!((grads.projector[0].weight.get(i, j) - expected_w[i][j]).abs() < 1e-14);
            }
        }
        assert!((grads.projector[0].bias[0] - (0.3 + 1.1)).abs() < 1e-14);
        assert!((grads.projector[0].bias[1] - (-0.7 + 0.2)).abs() < 1e-14);
    }

    /// Central finite differences of a scalar loss L = <G, logits> against the
    /// analytic backward pass, parameter by parameter.
    #[test]
    fn backward_matches_finite_differences() {
        let dims = ModelDims { input: 5, encoder: vec![7], projector: vec![6, 4], prototypes: 8 };
        let mut rng = Rng::new(71);
        let params = init_model(&dims, &mut rng);
        let batch = random_matrix(&mut rng, 3, dims.input);
        let g = random_matrix(&mut rng, 3, dims.prototypes);

        let loss = |p: &ModelParams| -> f64 {
            let t = forward(p, &batch);
            t.logits.data().iter().zip(g.data()).map(|(a, b)| a * b).sum()
        };

        let trace = forward(&params, &batch);
        let grads = backward(&params, &trace, &g);

        let h = 1e-5;
        let n_params = params.num_params();
        let mut max_rel = 0.0f64;
        for flat_idx in 0..n_params {
            let mut plus = params.clone();
            perturb(&mut plus, flat_idx, h);
            let mut minus = params.clone();
            perturb(&mut minus, flat_idx, -h);
            let numeric = (loss(&plus) - loss(&minus)) / (2.0 * h);
            let analytic = read_flat(&grads.grad_slices(), flat_idx);
            let rel = (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-6);
            max_rel = max_rel.max(rel);
        }
        assert!(max_rel < 1e-5, "finite-difference check failed: max relative error {max_rel}");
    }

    fn perturb(params: &mut ModelParams, flat_idx: usize, h: f64) {
        let mut idx = flat_idx;
        for s in params.param_slices_mut() {
            if idx < s.len() {
                s[idx] += h;
                return;
            }
            idx -= s.len();
        }
        panic!("flat index out of range");
    }

    fn read_flat(slices: &[&[f64]], flat_idx: usize) -> f64 {
        let mut idx = flat_idx;
        for s in slices {
            if idx < s.len() {
                return s[idx];
            }
            idx -= s.len();
        }
        panic!("flat index out of range");
    }
}
