//! Dense feed-forward networks with explicit reverse-mode gradients.
//!
//! A [`DenseNet`] is a chain of affine layers, ReLU on hidden layers and
//! identity on the last. The same type plays every model role in the
//! simulator: participant bottom models, the server's top model, and the
//! adversary's surrogate. Gradients are exact reverse-mode derivatives of
//! the forward map; the test suite checks them against central finite
//! differences.

use rand::distributions::{Distribution, Uniform};
use rand::Rng;

use crate::error::{Error, Result};
use crate::nn::matrix::Matrix;

/// Elementwise activation applied after a layer's affine transform.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Identity,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Identity => x,
        }
    }

    /// Derivative expressed in terms of the post-activation output.
    ///
    /// Works because ReLU output is positive exactly when its input is.
    fn grad_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Identity => 1.0,
        }
    }
}

/// One dense layer: `y = activation(x W^T + b)`.
#[derive(Debug, Clone)]
pub struct Layer {
    /// Weight matrix, shape `(out_dim, in_dim)`.
    weights: Matrix,
    bias: Vec<f64>,
    activation: Activation,
}

impl Layer {
    pub fn new(weights: Matrix, bias: Vec<f64>, activation: Activation) -> Result<Self> {
        if bias.len() != weights.rows() {
            return Err(Error::ShapeMismatch {
                context: "Layer::new",
                expected: format!("bias of length {}", weights.rows()),
                actual: format!("bias of length {}", bias.len()),
            });
        }
        Ok(Layer {
            weights,
            bias,
            activation,
        })
    }

    pub fn in_dim(&self) -> usize {
        self.weights.cols()
    }

    pub fn out_dim(&self) -> usize {
        self.weights.rows()
    }

    pub fn weights(&self) -> &Matrix {
        &self.weights
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }
}

/// Parameter gradients for one layer, shaped like the parameters.
#[derive(Debug, Clone)]
pub struct LayerGradients {
    pub weights: Matrix,
    pub bias: Vec<f64>,
}

/// Gradients for every layer of a net, first layer first.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub layers: Vec<LayerGradients>,
}

/// Activations retained by a forward pass, one matrix per layer.
///
/// `outputs[l]` is the post-activation output of layer `l`; the final entry
/// is the network output. The input batch is kept so parameter gradients of
/// the first layer can be formed during backprop.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    input: Matrix,
    outputs: Vec<Matrix>,
}

impl ForwardTrace {
    /// Final network output.
    pub fn output(&self) -> &Matrix {
        self.outputs.last().expect("nets have at least one layer")
    }

    pub fn into_output(mut self) -> Matrix {
        self.outputs.pop().expect("nets have at least one layer")
    }

    pub fn layer_outputs(&self) -> &[Matrix] {
        &self.outputs
    }

    pub fn input(&self) -> &Matrix {
        &self.input
    }
}

/// A multilayer perceptron with explicit parameters.
#[derive(Debug, Clone)]
pub struct DenseNet {
    layers: Vec<Layer>,
}

impl DenseNet {
    /// Fresh net with the given layer sizes, e.g. `[8, 32, 32, 16]`.
    ///
    /// Hidden layers use ReLU, the final layer identity. Weights draw from
    /// the uniform Xavier/Glorot range `+-sqrt(6 / (fan_in + fan_out))`,
    /// biases start at zero.
    pub fn new<R: Rng + ?Sized>(dims: &[usize], rng: &mut R) -> Result<Self> {
        if dims.len() < 2 {
            return Err(Error::invalid("a net needs at least input and output dims"));
        }
        if dims.iter().any(|&d| d == 0) {
            return Err(Error::invalid("layer dims must be positive"));
        }
        let mut layers = Vec::with_capacity(dims.len() - 1);
        for l in 0..dims.len() - 1 {
            let (fan_in, fan_out) = (dims[l], dims[l + 1]);
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let dist = Uniform::new_inclusive(-limit, limit);
            let mut weights = Matrix::zeros(fan_out, fan_in);
            for v in weights.as_mut_slice() {
                *v = dist.sample(rng);
            }
            let activation = if l + 1 == dims.len() - 1 {
                Activation::Identity
            } else {
                Activation::Relu
            };
            layers.push(Layer::new(weights, vec![0.0; fan_out], activation)?);
        }
        Ok(DenseNet { layers })
    }

    /// Wraps pre-built layers, checking that dimensions chain.
    pub fn from_layers(layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::invalid("a net needs at least one layer"));
        }
        for w in layers.windows(2) {
            if w[0].out_dim() != w[1].in_dim() {
                return Err(Error::ShapeMismatch {
                    context: "DenseNet::from_layers",
                    expected: format!("layer input of {}", w[0].out_dim()),
                    actual: format!("layer input of {}", w[1].in_dim()),
                });
            }
        }
        Ok(DenseNet { layers })
    }

    /// Sequential composition: the layers of `parts`, concatenated in order.
    pub fn stack(parts: &[&DenseNet]) -> Result<Self> {
        let layers = parts
            .iter()
            .flat_map(|net| net.layers.iter().cloned())
            .collect();
        DenseNet::from_layers(layers)
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim()
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    /// Forward pass over a batch, retaining every layer's activations.
    pub fn forward(&self, batch: &Matrix) -> Result<ForwardTrace> {
        if batch.cols() != self.input_dim() {
            return Err(Error::ShapeMismatch {
                context: "DenseNet::forward",
                expected: format!("{} input columns", self.input_dim()),
                actual: format!("{} columns", batch.cols()),
            });
        }
        let mut outputs = Vec::with_capacity(self.layers.len());
        let mut current = batch;
        for layer in &self.layers {
            let mut out = Matrix::zeros(current.rows(), layer.out_dim());
            for r in 0..current.rows() {
                let x = current.row(r);
                let y = out.row_mut(r);
                for (o, y_o) in y.iter_mut().enumerate() {
                    let mut z = layer.bias[o];
                    let w = layer.weights.row(o);
                    for (w_i, x_i) in w.iter().zip(x) {
                        z += w_i * x_i;
                    }
                    *y_o = layer.activation.apply(z);
                }
            }
            outputs.push(out);
            current = outputs.last().expect("just pushed");
        }
        Ok(ForwardTrace {
            input: batch.clone(),
            outputs,
        })
    }

    /// Reverse-mode pass from a gradient at the output.
    ///
    /// Returns parameter gradients (shaped like the parameters) and the
    /// gradient with respect to the input batch.
    pub fn backward(
        &self,
        trace: &ForwardTrace,
        grad_at_output: &Matrix,
    ) -> Result<(Gradients, Matrix)> {
        trace
            .output()
            .check_same_shape(grad_at_output, "DenseNet::backward")?;
        if trace.outputs.len() != self.layers.len() {
            return Err(Error::invalid(
                "forward trace does not match this net's layer count",
            ));
        }

        let mut layer_grads = vec![
            LayerGradients {
                weights: Matrix::zeros(0, 0),
                bias: Vec::new(),
            };
            self.layers.len()
        ];
        let mut grad = grad_at_output.clone();

        for l in (0..self.layers.len()).rev() {
            let layer = &self.layers[l];
            let layer_out = &trace.outputs[l];
            let layer_in = if l == 0 {
                &trace.input
            } else {
                &trace.outputs[l - 1]
            };

            // dz = grad * activation'(output), elementwise
            let mut dz = Matrix::zeros(grad.rows(), grad.cols());
            for r in 0..grad.rows() {
                for c in 0..grad.cols() {
                    dz.set(
                        r,
                        c,
                        grad.get(r, c) * layer.activation.grad_from_output(layer_out.get(r, c)),
                    );
                }
            }

            // dW = dz^T . input, db = column sums of dz
            let mut dw = Matrix::zeros(layer.out_dim(), layer.in_dim());
            let mut db = vec![0.0; layer.out_dim()];
            for r in 0..dz.rows() {
                let dz_row = dz.row(r);
                let in_row = layer_in.row(r);
                for (o, &dz_o) in dz_row.iter().enumerate() {
                    db[o] += dz_o;
                    let dw_row = dw.row_mut(o);
                    for (dw_i, &x_i) in dw_row.iter_mut().zip(in_row) {
                        *dw_i += dz_o * x_i;
                    }
                }
            }

            // grad at layer input = dz . W
            let mut grad_in = Matrix::zeros(dz.rows(), layer.in_dim());
            for r in 0..dz.rows() {
                let dz_row = dz.row(r);
                let g_row = grad_in.row_mut(r);
                for (o, &dz_o) in dz_row.iter().enumerate() {
                    let w_row = layer.weights.row(o);
                    for (g_i, &w_i) in g_row.iter_mut().zip(w_row) {
                        *g_i += dz_o * w_i;
                    }
                }
            }

            layer_grads[l] = LayerGradients {
                weights: dw,
                bias: db,
            };
            grad = grad_in;
        }

        Ok((
            Gradients {
                layers: layer_grads,
            },
            grad,
        ))
    }

    /// In-place SGD update: every parameter `p` becomes `p - lr * g`.
    pub fn sgd_step(&mut self, grads: &Gradients, lr: f64) -> Result<()> {
        if !(lr > 0.0) {
            return Err(Error::invalid(format!(
                "learning rate must be positive, got {lr}"
            )));
        }
        if grads.layers.len() != self.layers.len() {
            return Err(Error::invalid("gradient layer count mismatch"));
        }
        for (layer, g) in self.layers.iter_mut().zip(&grads.layers) {
            layer
                .weights
                .check_same_shape(&g.weights, "DenseNet::sgd_step")?;
            if g.bias.len() != layer.bias.len() {
                return Err(Error::ShapeMismatch {
                    context: "DenseNet::sgd_step",
                    expected: format!("bias of length {}", layer.bias.len()),
                    actual: format!("bias of length {}", g.bias.len()),
                });
            }
            for (w, gw) in layer
                .weights
                .as_mut_slice()
                .iter_mut()
                .zip(g.weights.as_slice())
            {
                *w -= lr * gw;
            }
            for (b, gb) in layer.bias.iter_mut().zip(&g.bias) {
                *b -= lr * gb;
            }
        }
        Ok(())
    }

    /// All parameters flattened in a fixed order; used by equality checks.
    pub fn flat_parameters(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for layer in &self.layers {
            out.extend_from_slice(layer.weights.as_slice());
            out.extend_from_slice(&layer.bias);
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn identity_layer(dim: usize) -> Layer {
        let mut w = Matrix::zeros(dim, dim);
        for i in 0..dim {
            w.set(i, i, 1.0);
        }
        Layer::new(w, vec![0.0; dim], Activation::Identity).unwrap()
    }

    #[test]
    fn identity_layer_passes_input_through() {
        let net = DenseNet::from_layers(vec![identity_layer(2)]).unwrap();
        let batch = Matrix::from_row(&[3.0, 4.0]).unwrap();
        let trace = net.forward(&batch).unwrap();
        assert_eq!(trace.output().row(0), &[3.0, 4.0]);
    }

    #[test]
    fn relu_clamps_negative_preactivation() {
        let w = Matrix::from_vec(1, 1, vec![2.0]).unwrap();
        let layer = Layer::new(w, vec![1.0], Activation::Relu).unwrap();
        let net = DenseNet::from_layers(vec![layer]).unwrap();
        let trace = net.forward(&Matrix::from_row(&[-3.0]).unwrap()).unwrap();
        // pre-activation 2 * -3 + 1 = -5
        assert_eq!(trace.output().get(0, 0), 0.0);
    }

    #[test]
    fn forward_matches_hand_rolled_matrix_product() {
        // Independent oracle: multiply everything out with a separate code
        // path and no activation shortcuts.
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let net = DenseNet::new(&[3, 4, 2], &mut rng).unwrap();
        let mut batch = Matrix::zeros(5, 3);
        for v in batch.as_mut_slice() {
            *v = rng.gen_range(-1.0..1.0);
        }
        let trace = net.forward(&batch).unwrap();

        for r in 0..batch.rows() {
            let mut x: Vec<f64> = batch.row(r).to_vec();
            for (l, layer) in net.layers().iter().enumerate() {
                let mut next = vec![0.0; layer.out_dim()];
                for (o, n) in next.iter_mut().enumerate() {
                    let mut z = layer.bias()[o];
                    for (i, &xi) in x.iter().enumerate() {
                        z += layer.weights().get(o, i) * xi;
                    }
                    *n = if l == net.layers().len() - 1 {
                        z
                    } else {
                        z.max(0.0)
                    };
                }
                x = next;
            }
            for (c, expect) in x.iter().enumerate() {
                assert!(
                    (trace.output().get(r, c) - expect).abs() < 1e-12,
                    "row {r} col {c}"
                );
            }
        }
    }

    #[test]
    fn forward_rejects_wrong_width() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let net = DenseNet::new(&[3, 2], &mut rng).unwrap();
        assert!(net.forward(&Matrix::zeros(1, 4)).is_err());
    }

    #[test]
    fn zero_output_gradient_gives_zero_everywhere() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let net = DenseNet::new(&[3, 5, 2], &mut rng).unwrap();
        let batch = Matrix::from_row(&[0.3, -0.2, 0.9]).unwrap();
        let trace = net.forward(&batch).unwrap();
        let (grads, grad_in) = net.backward(&trace, &Matrix::zeros(1, 2)).unwrap();
        assert!(grad_in.as_slice().iter().all(|&g| g == 0.0));
        for lg in &grads.layers {
            assert!(lg.weights.as_slice().iter().all(|&g| g == 0.0));
            assert!(lg.bias.iter().all(|&g| g == 0.0));
        }
    }

    #[test]
    fn identity_layer_routes_gradient_unchanged() {
        let net = DenseNet::from_layers(vec![identity_layer(3)]).unwrap();
        let batch = Matrix::from_row(&[1.0, 2.0, 3.0]).unwrap();
        let trace = net.forward(&batch).unwrap();
        let upstream = Matrix::from_row(&[0.5, -0.25, 4.0]).unwrap();
        let (_, grad_in) = net.backward(&trace, &upstream).unwrap();
        assert_eq!(grad_in, upstream);
    }

    #[test]
    fn sgd_applies_plain_update() {
        let w = Matrix::from_vec(1, 1, vec![1.0]).unwrap();
        let layer = Layer::new(w, vec![0.0], Activation::Identity).unwrap();
        let mut net = DenseNet::from_layers(vec![layer]).unwrap();
        let grads = Gradients {
            layers: vec![LayerGradients {
                weights: Matrix::from_vec(1, 1, vec![0.25]).unwrap(),
                bias: vec![0.0],
            }],
        };
        net.sgd_step(&grads, 1.0).unwrap();
        assert_eq!(net.layers()[0].weights().get(0, 0), 0.75);
    }

    #[test]
    fn sgd_rejects_zero_learning_rate() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut net = DenseNet::new(&[2, 2], &mut rng).unwrap();
        let grads = Gradients {
            layers: vec![LayerGradients {
                weights: Matrix::zeros(2, 2),
                bias: vec![0.0; 2],
            }],
        };
        assert!(net.sgd_step(&grads, 0.0).is_err());
    }

    #[test]
    fn zero_gradient_step_leaves_parameters_bitwise_unchanged() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut net = DenseNet::new(&[2, 3, 2], &mut rng).unwrap();
        let before = net.flat_parameters();
        let grads = Gradients {
            layers: net
                .layers()
                .iter()
                .map(|l| LayerGradients {
                    weights: Matrix::zeros(l.out_dim(), l.in_dim()),
                    bias: vec![0.0; l.out_dim()],
                })
                .collect(),
        };
        net.sgd_step(&grads, 0.7).unwrap();
        assert_eq!(before, net.flat_parameters());
    }

    #[test]
    fn two_steps_match_one_summed_step() {
        let w = Matrix::from_vec(1, 1, vec![2.0]).unwrap();
        let make = || {
            DenseNet::from_layers(vec![
                Layer::new(w.clone(), vec![0.5], Activation::Identity).unwrap()
            ])
            .unwrap()
        };
        let grads = Gradients {
            layers: vec![LayerGradients {
                weights: Matrix::from_vec(1, 1, vec![0.1]).unwrap(),
                bias: vec![0.2],
            }],
        };
        let doubled = Gradients {
            layers: vec![LayerGradients {
                weights: Matrix::from_vec(1, 1, vec![0.2]).unwrap(),
                bias: vec![0.4],
            }],
        };
        let mut twice = make();
        twice.sgd_step(&grads, 1.0).unwrap();
        twice.sgd_step(&grads, 1.0).unwrap();
        let mut once = make();
        once.sgd_step(&doubled, 1.0).unwrap();
        for (a, b) in twice.flat_parameters().iter().zip(once.flat_parameters()) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn seeded_init_is_deterministic() {
        let a = DenseNet::new(&[4, 8, 3], &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let b = DenseNet::new(&[4, 8, 3], &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(a.flat_parameters(), b.flat_parameters());
    }

    #[test]
    fn stack_chains_layer_dims() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let bottom = DenseNet::new(&[3, 4, 2], &mut rng).unwrap();
        let top = DenseNet::new(&[2, 5, 3], &mut rng).unwrap();
        let stacked = DenseNet::stack(&[&bottom, &top]).unwrap();
        assert_eq!(stacked.input_dim(), 3);
        assert_eq!(stacked.output_dim(), 3);
        assert_eq!(stacked.layers().len(), 4);

        let mismatched = DenseNet::new(&[5, 3], &mut rng).unwrap();
        assert!(DenseNet::stack(&[&bottom, &mismatched]).is_err());
    }
}
