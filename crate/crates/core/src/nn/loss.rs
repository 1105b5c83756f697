//! Loss functions. Every loss returns a scalar and the gradient of the
//! quantity being *minimized* with respect to the predictions.
//!
//! The two GAN losses are objectives to be maximized:
//! the generator maximizes `sum_k log D(G(z_k))` and the discriminator
//! maximizes `sum_k [t_k log D_k + (1 - t_k) log(1 - D_k)]` with `t_k = 1` for
//! real samples. The returned scalar is that objective (so `D = 0.5` gives the
//! generator `-ln 2` per sample); the returned gradient is the gradient of its
//! negation, which is what gradient descent minimizes.

use std::fmt::Debug;

use crate::error::{check_finite, McaError, Result};
use crate::nn::activation::softmax;
use crate::registry::Registry;

pub trait Loss: Send + Sync + Debug {
    fn name(&self) -> &'static str;

    /// `(value, d(minimized)/d(predictions))`.
    fn eval(&self, predictions: &[f64], targets: &[f64]) -> Result<(f64, Vec<f64>)>;

    fn boxed_clone(&self) -> Box<dyn Loss>;
}

impl Clone for Box<dyn Loss> {
    fn clone(&self) -> Self {
        self.boxed_clone()
    }
}

fn check_shapes(p: &[f64], t: &[f64]) -> Result<()> {
    if p.len() != t.len() {
        return Err(McaError::DimensionMismatch {
            what: "loss targets",
            expected: p.len(),
            got: t.len(),
        });
    }
    check_finite("loss predictions", p)?;
    check_finite("loss targets", t)
}

fn checked_ln(v: f64, index: usize) -> Result<f64> {
    if v > 0.0 {
        Ok(v.ln())
    } else {
        Err(McaError::LogDomain { index, value: v })
    }
}

/// `0.5 * sum (y - t)^2`.
#[derive(Clone, Copy, Debug, Default)]
pub struct Mse;

impl Loss for Mse {
    fn name(&self) -> &'static str {
        "mse"
    }
    fn eval(&self, p: &[f64], t: &[f64]) -> Result<(f64, Vec<f64>)> {
        check_shapes(p, t)?;
        let g: Vec<f64> = p.iter().zip(t).map(|(p, t)| p - t).collect();
        Ok((0.5 * g.iter().map(|d| d * d).sum::<f64>(), g))
    }
    fn boxed_clone(&self) -> Box<dyn Loss> {
        Box::new(*self)
    }
}

/// `-sum t ln p` on probabilities.
#[derive(Clone, Copy, Debug, Default)]
pub struct CrossEntropy;

impl Loss for CrossEntropy {
    fn name(&self) -> &'static str {
        "cross-entropy"
    }
    fn eval(&self, p: &[f64], t: &[f64]) -> Result<(f64, Vec<f64>)> {
        check_shapes(p, t)?;
        let mut loss = 0.0;
        let mut g = vec![0.0; p.len()];
        for (k, (&pk, &tk)) in p.iter().zip(t).enumerate() {
            if tk != 0.0 {
                loss -= tk * checked_ln(pk, k)?;
                g[k] = -tk / pk;
            }
        }
        Ok((loss, g))
    }
    fn boxed_clone(&self) -> Box<dyn Loss> {
        Box::new(*self)
    }
}

/// Cross-entropy applied to logits through a softmax; gradient `softmax(z) - t`
/// for targets summing to one.
#[derive(Clone, Copy, Debug, Default)]
pub struct SoftmaxCrossEntropy;

impl Loss for SoftmaxCrossEntropy {
    fn name(&self) -> &'static str {
        "softmax-cross-entropy"
    }
    fn eval(&self, z: &[f64], t: &[f64]) -> Result<(f64, Vec<f64>)> {
        check_shapes(z, t)?;
        let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + z.iter().map(|x| (x - m).exp()).sum::<f64>().ln();
        let tsum: f64 = t.iter().sum();
        let loss = z.iter().zip(t).map(|(z, t)| t * (lse - z)).sum();
        let p = softmax(z)?;
        Ok((loss, p.iter().zip(t).map(|(p, t)| tsum * p - t).collect()))
    }
    fn boxed_clone(&self) -> Box<dyn Loss> {
        Box::new(*self)
    }
}

/// Predictions are discriminator outputs on generated samples; targets are
/// ignored apart from their length.
#[derive(Clone, Copy, Debug, Default)]
pub struct GanGenerator;

impl Loss for GanGenerator {
    fn name(&self) -> &'static str {
        "gan-generator"
    }
    fn eval(&self, d: &[f64], t: &[f64]) -> Result<(f64, Vec<f64>)> {
        check_shapes(d, t)?;
        let mut obj = 0.0;
        let mut g = Vec::with_capacity(d.len());
        for (k, &dk) in d.iter().enumerate() {
            obj += checked_ln(dk, k)?;
            g.push(-1.0 / dk);
        }
        Ok((obj, g))
    }
    fn boxed_clone(&self) -> Box<dyn Loss> {
        Box::new(*self)
    }
}

/// Predictions are discriminator outputs; targets are 1 for real samples and 0
/// for generated ones.
#[derive(Clone, Copy, Debug, Default)]
pub struct GanDiscriminator;

impl Loss for GanDiscriminator {
    fn name(&self) -> &'static str {
        "gan-discriminator"
    }
    fn eval(&self, d: &[f64], t: &[f64]) -> Result<(f64, Vec<f64>)> {
        check_shapes(d, t)?;
        let mut obj = 0.0;
        let mut g = Vec::with_capacity(d.len());
        for (k, (&dk, &tk)) in d.iter().zip(t).enumerate() {
            let mut gk = 0.0;
            if tk != 0.0 {
                obj += tk * checked_ln(dk, k)?;
                gk -= tk / dk;
            }
            if tk != 1.0 {
                obj += (1.0 - tk) * checked_ln(1.0 - dk, k)?;
                gk += (1.0 - tk) / (1.0 - dk);
            }
            g.push(gk);
        }
        Ok((obj, g))
    }
    fn boxed_clone(&self) -> Box<dyn Loss> {
        Box::new(*self)
    }
}

pub fn registry() -> Registry<dyn Loss> {
    Registry::new("loss")
        .with("mse", |_| Ok(Box::new(Mse) as Box<dyn Loss>))
        .with("cross-entropy", |_| Ok(Box::new(CrossEntropy) as Box<dyn Loss>))
        .with("softmax-cross-entropy", |_| {
            Ok(Box::new(SoftmaxCrossEntropy) as Box<dyn Loss>)
        })
        .with("gan-generator", |_| Ok(Box::new(GanGenerator) as Box<dyn Loss>))
        .with("gan-discriminator", |_| Ok(Box::new(GanDiscriminator) as Box<dyn Loss>))
}

pub fn build(name: &str) -> Result<Box<dyn Loss>> {
    registry().build(name, &())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    #[test]
    fn mse_at_target() {
        let (l, g) = Mse.eval(&[0.2, 0.7], &[0.2, 0.7]).unwrap();
        assert_eq!(l, 0.0);
        assert!(g.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn cross_entropy_uniform() {
        let p = vec![1.0 / 50.0; 50];
        let mut t = vec![0.0; 50];
        t[17] = 1.0;
        let (l, _) = CrossEntropy.eval(&p, &t).unwrap();
        assert!((l - 50f64.ln()).abs() < 1e-12);
        let (l, _) = SoftmaxCrossEntropy.eval(&[0.3; 50], &t).unwrap();
        assert!((l - 50f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn gan_generator_at_half() {
        let (l, g) = GanGenerator.eval(&[0.5; 4], &[0.0; 4]).unwrap();
        assert!((l / 4.0 + 2f64.ln()).abs() < 1e-15);
        assert!(g.iter().all(|&v| v == -2.0));
    }

    #[test]
    fn gan_discriminator_closed_form() {
        let (l, _) = GanDiscriminator.eval(&[0.5, 0.5], &[1.0, 0.0]).unwrap();
        assert!((l + 2.0 * 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn log_domain_errors_name_index() {
        match CrossEntropy.eval(&[0.5, 0.0], &[0.0, 1.0]) {
            Err(McaError::LogDomain { index: 1, .. }) => {}
            other => panic!("{other:?}"),
        }
        match GanDiscriminator.eval(&[0.3, 1.0], &[1.0, 0.0]) {
            Err(McaError::LogDomain { index: 1, .. }) => {}
            other => panic!("{other:?}"),
        }
        assert!(Mse.eval(&[1.0], &[1.0, 2.0]).is_err());
    }

    /// Gradients are those of the minimized quantity: `value` for mse and
    /// the cross-entropies, `-value` for the GAN objectives.
    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        for name in [
            "mse",
            "cross-entropy",
            "softmax-cross-entropy",
            "gan-generator",
            "gan-discriminator",
        ] {
            let loss = build(name).unwrap();
            let sign = if name.starts_with("gan") { -1.0 } else { 1.0 };
            for _ in 0..50 {
                let p: Vec<f64> = (0..6).map(|_| rng.random_range(0.05..0.95)).collect();
                let t: Vec<f64> = (0..6).map(|k| if k % 2 == 0 { 1.0 } else { 0.0 }).collect();
                let (_, g) = loss.eval(&p, &t).unwrap();
                for k in 0..6 {
                    let h = 1e-6;
                    let (mut pp, mut pm) = (p.clone(), p.clone());
                    pp[k] += h;
                    pm[k] -= h;
                    let fd = sign * (loss.eval(&pp, &t).unwrap().0 - loss.eval(&pm, &t).unwrap().0) / (2.0 * h);
                    assert!((fd - g[k]).abs() < 1e-6, "{name} {k}: {fd} vs {}", g[k]);
                }
            }
        }
    }
}
