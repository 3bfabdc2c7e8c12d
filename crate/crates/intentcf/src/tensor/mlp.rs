//! Multi-layer perceptrons with sigmoid hidden activations.

use rand_chacha::ChaCha8Rng;

use super::{add_row_broadcast, matmul, sigmoid_tensor, xavier_from_rng, Tensor2};
use super::{GradientTape, TensorId};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Sigmoid,
    Identity,
}

/// Layer-width plan for an MLP. `layer_widths` runs input → hidden… →
/// output; hidden layers are always sigmoid, the output layer follows
/// `output_activation`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MlpSpec {
    pub layer_widths: Vec<usize>,
    pub output_activation: Activation,
}

impl MlpSpec {
    pub fn new(layer_widths: Vec<usize>, output_activation: Activation) -> Result<Self> {
        if layer_widths.len() < 2 {
            return Err(Error::dimension(
                "mlp_spec",
                format!("need at least 2 layer widths, got {}", layer_widths.len()),
            ));
        }
        if layer_widths.iter().any(|&w| w == 0) {
            return Err(Error::dimension("mlp_spec", "zero layer width".to_string()));
        }
        Ok(MlpSpec {
            layer_widths,
            output_activation,
        })
    }

    pub fn input_width(&self) -> usize {
        self.layer_widths[0]
    }

    pub fn output_width(&self) -> usize {
        *self.layer_widths.last().unwrap()
    }

    pub fn num_layers(&self) -> usize {
        self.layer_widths.len() - 1
    }
}

/// Per-layer `(weight, bias)` pairs; weights are `in x out`, biases
/// `1 x out`, so a batch of rows flows as `x·W + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpWeights {
    pub spec: MlpSpec,
    pub layers: Vec<(Tensor2, Tensor2)>,
}

impl MlpWeights {
    /// Xavier-uniform weights, zero biases.
    pub fn init(spec: MlpSpec, rng: &mut ChaCha8Rng) -> Self {
        let layers = spec
            .layer_widths
            .windows(2)
            .map(|w| (xavier_from_rng(w[0], w[1], rng), Tensor2::zeros(1, w[1])))
            .collect();
        MlpWeights { spec, layers }
    }

    pub fn zeros(spec: MlpSpec) -> Self {
        let layers = spec
            .layer_widths
            .windows(2)
            .map(|w| (Tensor2::zeros(w[0], w[1]), Tensor2::zeros(1, w[1])))
            .collect();
        MlpWeights { spec, layers }
    }

    fn activation_for(&self, layer: usize) -> Activation {
        if layer + 1 == self.spec.num_layers() {
            self.spec.output_activation
        } else {
            Activation::Sigmoid
        }
    }
}

fn check_layer_input(op: &'static str, layer: usize, expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::dimension(
            op,
            format!("layer {layer} expects input width {expected}, got {got}"),
        ));
    }
    Ok(())
}

/// Plain forward pass over a batch of rows.
pub fn mlp_forward(weights: &MlpWeights, x: &Tensor2) -> Result<Tensor2> {
    let mut cur = x.clone();
    for (layer, (w, b)) in weights.layers.iter().enumerate() {
        check_layer_input("mlp_forward", layer, w.rows(), cur.cols())?;
        let lin = add_row_broadcast(&matmul(&cur, w)?, b)?;
        cur = match weights.activation_for(layer) {
            Activation::Sigmoid => sigmoid_tensor(&lin),
            Activation::Identity => lin,
        };
    }
    Ok(cur)
}

/// Forward pass recorded on a gradient tape. `layers` are the tape ids
/// of this MLP's parameters, in the same per-layer (weight, bias) order.
pub fn mlp_forward_on_tape(
    tape: &mut GradientTape,
    weights: &MlpWeights,
    layers: &[(TensorId, TensorId)],
    x: TensorId,
) -> Result<TensorId> {
    debug_assert_eq!(layers.len(), weights.layers.len());
    let mut cur = x;
    for (layer, (w, b)) in layers.iter().enumerate() {
        let expected = weights.layers[layer].0.rows();
        check_layer_input("mlp_forward", layer, expected, tape.value(cur).cols())?;
        let lin = tape.matmul(cur, *w)?;
        let lin = tape.add_row_broadcast(lin, *b)?;
        cur = match weights.activation_for(layer) {
            Activation::Sigmoid => tape.sigmoid(lin),
            Activation::Identity => lin,
        };
    }
    Ok(cur)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::init::test_rng;
    use crate::tensor::sigmoid;

    #[test]
    fn zero_weights_sigmoid_output_is_half() {
        let spec = MlpSpec::new(vec![3, 4, 2], Activation::Sigmoid).unwrap();
        let mlp = MlpWeights::zeros(spec);
        let x = Tensor2::from_rows(&[vec![0.3, -1.0, 2.0]]).unwrap();
        let y = mlp_forward(&mlp, &x).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.5), "{:?}", y.data());
    }

    #[test]
    fn identity_single_layer_passes_input_through() {
        let spec = MlpSpec::new(vec![3, 3], Activation::Identity).unwrap();
        let mut mlp = MlpWeights::zeros(spec);
        mlp.layers[0].0 = Tensor2::identity(3);
        let x = Tensor2::from_rows(&[vec![0.25, -4.0, 7.5]]).unwrap();
        let y = mlp_forward(&mlp, &x).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn random_two_layer_matches_scalar_loop_oracle() {
        let mut rng = test_rng(21);
        let spec = MlpSpec::new(vec![4, 5, 3], Activation::Sigmoid).unwrap();
        let mlp = MlpWeights::init(spec, &mut rng);
        let x = xavier_from_rng(2, 4, &mut rng);
        let y = mlp_forward(&mlp, &x).unwrap();

        // Hand-rolled per-scalar forward.
        for r in 0..2 {
            let mut cur: Vec<f64> = x.row(r).to_vec();
            for (w, b) in &mlp.layers {
                let mut next = vec![0.0; w.cols()];
                for (j, n) in next.iter_mut().enumerate() {
                    let mut acc = b.get(0, j);
                    for (i, &v) in cur.iter().enumerate() {
                        acc += v * w.get(i, j);
                    }
                    *n = sigmoid(acc);
                }
                cur = next;
            }
            for (j, &v) in cur.iter().enumerate() {
                assert!((y.get(r, j) - v).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn width_mismatch_reports_layer_index() {
        let spec = MlpSpec::new(vec![3, 4, 2], Activation::Sigmoid).unwrap();
        let mlp = MlpWeights::zeros(spec);
        let x = Tensor2::zeros(1, 5);
        let err = mlp_forward(&mlp, &x).unwrap_err();
        assert!(err.to_string().contains("layer 0"), "{err}");
    }
}
