//! Fully connected networks on weight stores.

use crate::counters::LayerCounters;
use crate::crossbar::ReadMode;
use crate::error::{McaError, Result};
use crate::nn::activation::Activation;
use crate::nn::loss::Loss;
use crate::nn::store::{ExactStore, WeightStore};

#[derive(Clone, Debug)]
pub struct Layer {
    pub store: Box<dyn WeightStore>,
    pub activation: Box<dyn Activation>,
    /// A constant-1 input is appended as the last row of the store.
    pub bias: bool,
}

impl Layer {
    pub fn n_features_in(&self) -> usize {
        self.store.n_in() - usize::from(self.bias)
    }

    fn input_with_bias(&self, x: &[f64]) -> Vec<f64> {
        let mut v = Vec::with_capacity(x.len() + 1);
        v.extend_from_slice(x);
        if self.bias {
            v.push(1.0);
        }
        v
    }
}

#[derive(Clone, Debug, Default)]
pub struct Network {
    pub layers: Vec<Layer>,
}

/// Everything one training step needs from a forward/backward pass.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Pass {
    pub loss: f64,
    pub output: Vec<f64>,
    /// Per layer: input including the bias entry (the `x` of the update).
    pub inputs: Vec<Vec<f64>>,
    /// Per layer: pre-activations.
    pub pre: Vec<Vec<f64>>,
    /// Per layer: error in the descent direction, `-dL/dz`.
    pub deltas: Vec<Vec<f64>>,
}

impl Network {
    pub fn new(layers: Vec<Layer>) -> Result<Self> {
        for w in layers.windows(2) {
            let out = w[0].activation.out_len(w[0].store.n_out())?;
            if out != w[1].n_features_in() {
                return Err(McaError::DimensionMismatch {
                    what: "layer chain",
                    expected: out,
                    got: w[1].n_features_in(),
                });
            }
        }
        Ok(Self { layers })
    }

    pub fn n_weights(&self) -> usize {
        self.layers.iter().map(|l| l.store.n_in() * l.store.n_out()).sum()
    }

    pub fn counters(&self) -> LayerCounters {
        LayerCounters {
            layers: self.layers.iter().map(|l| l.store.counters()).collect(),
        }
    }

    pub fn predict(&mut self, x: &[f64], t_now: f64) -> Result<Vec<f64>> {
        let mut a = x.to_vec();
        for layer in &mut self.layers {
            let xin = layer.input_with_bias(&a);
            let z = layer.store.forward(&xin, t_now)?;
            a = layer.activation.forward(&z)?;
        }
        Ok(a)
    }

    /// Real-valued copy of the network as seen at `t_now` under `mode`, with
    /// the arrays' converter widths carried over.
    pub fn freeze(&mut self, t_now: f64, mode: ReadMode) -> Result<Network> {
        let mut layers = Vec::with_capacity(self.layers.len());
        for l in &mut self.layers {
            let (dac, adc) = match l.store.crossbar() {
                Some(a) => (a.settings().dac_bits, a.settings().adc_bits),
                None => (None, None),
            };
            let w = l.store.weights(t_now, mode)?;
            let store = ExactStore::new(l.store.n_in(), l.store.n_out(), w)?.with_quantization(dac, adc);
            layers.push(Layer {
                store: Box::new(store),
                activation: l.activation.clone(),
                bias: l.bias,
            });
        }
        Ok(Network { layers })
    }
}

/// Forward pass, loss, and backward pass. The error of the first layer's
/// input is not needed for training and is not computed.
pub fn mlp_forward_backward(net: &mut Network, x: &[f64], target: &[f64], loss: &dyn Loss, t_now: f64) -> Result<Pass> {
    let n = net.layers.len();
    if n == 0 {
        return Err(McaError::InvalidParams("network has no layers".into()));
    }
    if x.len() != net.layers[0].n_features_in() {
        return Err(McaError::DimensionMismatch {
            what: "network input",
            expected: net.layers[0].n_features_in(),
            got: x.len(),
        });
    }
    let mut pass = Pass::default();
    let mut post = Vec::with_capacity(n);
    let mut a = x.to_vec();
    for layer in &mut net.layers {
        let xin = layer.input_with_bias(&a);
        let z = layer.store.forward(&xin, t_now)?;
        a = layer.activation.forward(&z)?;
        pass.inputs.push(xin);
        pass.pre.push(z);
        post.push(a.clone());
    }
    let (value, grad) = loss.eval(&a, target)?;
    if !value.is_finite() {
        return Err(McaError::Diverged(format!("non-finite loss {value}")));
    }
    pass.loss = value;
    pass.output = a;

    let mut deltas = vec![Vec::new(); n];
    let last = &net.layers[n - 1];
    deltas[n - 1] = last
        .activation
        .backward(&pass.pre[n - 1], &post[n - 1], &grad)
        .into_iter()
        .map(|g| -g)
        .collect();
    for l in (1..n).rev() {
        let back = net.layers[l].store.backward(&deltas[l], t_now)?;
        let feat = net.layers[l].n_features_in();
        deltas[l - 1] = net.layers[l - 1]
            .activation
            .backward(&pass.pre[l - 1], &post[l - 1], &back[..feat]);
    }
    pass.deltas = deltas;
    Ok(pass)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{activation, loss};

    fn exact_layer(rows: usize, cols: usize, seed: u64, layer: u64, act: &str) -> Layer {
        Layer {
            store: Box::new(ExactStore::random(rows, cols, 0.8, seed, layer).unwrap()),
            activation: activation::build(act).unwrap(),
            bias: true,
        }
    }

    fn loss_of(net: &mut Network, x: &[f64], t: &[f64]) -> f64 {
        let y = net.predict(x, 0.0).unwrap();
        loss::Mse.eval(&y, t).unwrap().0
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut net = Network::new(vec![
            exact_layer(7, 4, 3, 0, "sigmoid"),
            exact_layer(5, 3, 3, 1, "sigmoid"),
        ])
        .unwrap();
        let x = [0.3, -0.8, 0.5, 0.1, 0.9, -0.2];
        let t = [1.0, 0.0, 0.0];
        let pass = mlp_forward_backward(&mut net, &x, &t, &loss::Mse, 0.0).unwrap();
        let h = 1e-6;
        let mut worst: f64 = 0.0;
        for l in 0..2 {
            let (rows, cols) = (net.layers[l].store.n_in(), net.layers[l].store.n_out());
            for i in 0..rows {
                for j in 0..cols {
                    // dL/dW_ij = -delta_j * x_i
                    let analytic = -pass.deltas[l][j] * pass.inputs[l][i];
                    let mut plus = net.clone();
                    let mut minus = net.clone();
                    let k = i * cols + j;
                    bump(&mut plus, l, k, h);
                    bump(&mut minus, l, k, -h);
                    let fd = (loss_of(&mut plus, &x, &t) - loss_of(&mut minus, &x, &t)) / (2.0 * h);
                    let rel = (analytic - fd).abs() / analytic.abs().max(fd.abs()).max(1e-3);
                    worst = worst.max(rel);
                }
            }
        }
        assert!(worst <= 1e-5, "max relative error {worst}");
    }

    fn bump(net: &mut Network, l: usize, k: usize, h: f64) {
        let rows = net.layers[l].store.n_in();
        let cols = net.layers[l].store.n_out();
        let mut w = net.layers[l].store.weights(0.0, ReadMode::Cached).unwrap();
        w[k] += h;
        net.layers[l].store = Box::new(ExactStore::new(rows, cols, w).unwrap());
    }

    #[test]
    fn zero_input_zero_bias_weights() {
        let mut l1 = ExactStore::random(4, 3, 1.0, 5, 0).unwrap();
        for j in 0..3 {
            l1.raw_mut()[3 * 3 + j] = 0.0;
        }
        let mut net = Network::new(vec![
            Layer {
                store: Box::new(l1),
                activation: activation::build("tanh").unwrap(),
                bias: true,
            },
            Layer {
                store: Box::new(ExactStore::new(4, 2, vec![0.0; 8]).unwrap()),
                activation: activation::build("tanh").unwrap(),
                bias: true,
            },
        ])
        .unwrap();
        let pass = mlp_forward_backward(&mut net, &[0.0; 3], &[0.0; 2], &loss::Mse, 0.0).unwrap();
        assert_eq!(pass.pre[0], vec![0.0; 3]);
        assert_eq!(pass.inputs[1], vec![0.0, 0.0, 0.0, 1.0]);
        assert_eq!(pass.output, vec![0.0; 2]);
    }

    #[test]
    fn experiment_topology_weight_count() {
        let net = Network::new(vec![
            exact_layer(785, 250, 1, 0, "sigmoid"),
            exact_layer(251, 10, 1, 1, "sigmoid"),
        ])
        .unwrap();
        assert_eq!(net.n_weights(), 198_760);
    }

    #[test]
    fn chain_mismatch_rejected() {
        assert!(Network::new(vec![
            exact_layer(7, 4, 1, 0, "sigmoid"),
            exact_layer(6, 3, 1, 1, "sigmoid")
        ])
        .is_err());
    }
}
