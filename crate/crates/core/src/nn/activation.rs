//! Neuron nonlinearities.

use std::fmt::Debug;

use crate::error::{check_finite, McaError, Result};
use crate::registry::Registry;

pub trait Activation: Send + Sync + Debug {
    fn name(&self) -> &'static str;

    /// Output length for an input of length `n`.
    fn out_len(&self, n: usize) -> Result<usize> {
        Ok(n)
    }

    fn forward(&self, z: &[f64]) -> Result<Vec<f64>>;

    /// Vector-Jacobian product: given `y = forward(z)` and `g = dL/dy`,
    /// returns `dL/dz`.
    fn backward(&self, z: &[f64], y: &[f64], g: &[f64]) -> Vec<f64>;

    fn boxed_clone(&self) -> Box<dyn Activation>;
}

impl Clone for Box<dyn Activation> {
    fn clone(&self) -> Self {
        self.boxed_clone()
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[derive(Clone, Copy, Debug, Default)]
pub struct Sigmoid;

impl Activation for Sigmoid {
    fn name(&self) -> &'static str {
        "sigmoid"
    }
    fn forward(&self, z: &[f64]) -> Result<Vec<f64>> {
        check_finite("sigmoid input", z)?;
        Ok(z.iter().map(|&x| sigmoid(x)).collect())
    }
    fn backward(&self, _z: &[f64], y: &[f64], g: &[f64]) -> Vec<f64> {
        y.iter().zip(g).map(|(y, g)| g * y * (1.0 - y)).collect()
    }
    fn boxed_clone(&self) -> Box<dyn Activation> {
        Box::new(*self)
    }
}

#[derive(Clone, Copy, Debug, Default)]
pub struct Tanh;

impl Activation for Tanh {
    fn name(&self) -> &'static str {
        "tanh"
    }
    fn forward(&self, z: &[f64]) -> Result<Vec<f64>> {
        check_finite("tanh input", z)?;
        Ok(z.iter().map(|x| x.tanh()).collect())
    }
    fn backward(&self, _z: &[f64], y: &[f64], g: &[f64]) -> Vec<f64> {
        y.iter().zip(g).map(|(y, g)| g * (1.0 - y * y)).collect()
    }
    fn boxed_clone(&self) -> Box<dyn Activation> {
        Box::new(*self)
    }
}

/// Derivative at 0 is taken as 0.
#[derive(Clone, Copy, Debug, Default)]
pub struct Relu;

impl Activation for Relu {
    fn name(&self) -> &'static str {
        "relu"
    }
    fn forward(&self, z: &[f64]) -> Result<Vec<f64>> {
        check_finite("relu input", z)?;
        Ok(z.iter().map(|&x| x.max(0.0)).collect())
    }
    fn backward(&self, z: &[f64], _y: &[f64], g: &[f64]) -> Vec<f64> {
        z.iter().zip(g).map(|(&z, &g)| if z > 0.0 { g } else { 0.0 }).collect()
    }
    fn boxed_clone(&self) -> Box<dyn Activation> {
        Box::new(*self)
    }
}

#[derive(Clone, Copy, Debug, Default)]
pub struct Identity;

impl Activation for Identity {
    fn name(&self) -> &'static str {
        "identity"
    }
    fn forward(&self, z: &[f64]) -> Result<Vec<f64>> {
        check_finite("identity input", z)?;
        Ok(z.to_vec())
    }
    fn backward(&self, _z: &[f64], _y: &[f64], g: &[f64]) -> Vec<f64> {
        g.to_vec()
    }
    fn boxed_clone(&self) -> Box<dyn Activation> {
        Box::new(*self)
    }
}

/// Log-sum-exp stabilized softmax.
pub fn softmax(z: &[f64]) -> Result<Vec<f64>> {
    if z.is_empty() {
        return Err(McaError::InvalidParams("softmax of an empty vector".into()));
    }
    check_finite("softmax input", z)?;
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|x| (x - m).exp()).collect();
    let s: f64 = e.iter().sum();
    Ok(e.into_iter().map(|v| v / s).collect())
}

#[derive(Clone, Copy, Debug, Default)]
pub struct Softmax;

impl Activation for Softmax {
    fn name(&self) -> &'static str {
        "softmax"
    }
    fn forward(&self, z: &[f64]) -> Result<Vec<f64>> {
        softmax(z)
    }
    fn backward(&self, _z: &[f64], y: &[f64], g: &[f64]) -> Vec<f64> {
        let dot: f64 = y.iter().zip(g).map(|(a, b)| a * b).sum();
        y.iter().zip(g).map(|(y, g)| y * (g - dot)).collect()
    }
    fn boxed_clone(&self) -> Box<dyn Activation> {
        Box::new(*self)
    }
}

/// Maximum over consecutive groups of `k` inputs. The gradient goes to the
/// first maximal input of each group.
#[derive(Clone, Copy, Debug)]
pub struct Maxout {
    pub k: usize,
}

impl Maxout {
    fn check(&self, n: usize) -> Result<()> {
        if n % self.k != 0 {
            return Err(McaError::InvalidParams(format!(
                "maxout-{} input length {n} is not a multiple of {}",
                self.k, self.k
            )));
        }
        Ok(())
    }

    fn argmax(group: &[f64]) -> usize {
        let mut best = 0;
        for (i, &v) in group.iter().enumerate() {
            if v > group[best] {
                best = i;
            }
        }
        best
    }
}

impl Activation for Maxout {
    fn name(&self) -> &'static str {
        "maxout-5"
    }
    fn out_len(&self, n: usize) -> Result<usize> {
        self.check(n)?;
        Ok(n / self.k)
    }
    fn forward(&self, z: &[f64]) -> Result<Vec<f64>> {
        self.check(z.len())?;
        check_finite("maxout input", z)?;
        Ok(z.chunks_exact(self.k).map(|g| g[Self::argmax(g)]).collect())
    }
    fn backward(&self, z: &[f64], _y: &[f64], g: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; z.len()];
        for (q, group) in z.chunks_exact(self.k).enumerate() {
            out[q * self.k + Self::argmax(group)] = g[q];
        }
        out
    }
    fn boxed_clone(&self) -> Box<dyn Activation> {
        Box::new(*self)
    }
}

pub fn registry() -> Registry<dyn Activation> {
    Registry::new("activation")
        .with("sigmoid", |_| Ok(Box::new(Sigmoid) as Box<dyn Activation>))
        .with("tanh", |_| Ok(Box::new(Tanh) as Box<dyn Activation>))
        .with("relu", |_| Ok(Box::new(Relu) as Box<dyn Activation>))
        .with("softmax", |_| Ok(Box::new(Softmax) as Box<dyn Activation>))
        .with("maxout-5", |_| Ok(Box::new(Maxout { k: 5 }) as Box<dyn Activation>))
        .with("identity", |_| Ok(Box::new(Identity) as Box<dyn Activation>))
}

pub fn build(name: &str) -> Result<Box<dyn Activation>> {
    registry().build(name, &())
}
