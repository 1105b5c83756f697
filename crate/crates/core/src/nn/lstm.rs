//! LSTM cell. The stacked weight matrix has row blocks ordered
//! `(i, f, o, g)`, each `n` rows, acting on `concat(input, h_prev)`.

use serde::{Deserialize, Serialize};

use crate::error::{McaError, Result};
use crate::nn::activation::sigmoid;
use crate::nn::store::WeightStore;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LstmCellParams {
    pub hidden: usize,
    pub input: usize,
    /// Row-major `4n x (m + n)`.
    pub w: Vec<f64>,
    pub b: Vec<f64>,
}

impl LstmCellParams {
    pub fn zeros(hidden: usize, input: usize) -> Self {
        Self {
            hidden,
            input,
            w: vec![0.0; 4 * hidden * (hidden + input)],
            b: vec![0.0; 4 * hidden],
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (n, m) = (self.hidden, self.input);
        if self.w.len() != 4 * n * (m + n) {
            return Err(McaError::DimensionMismatch {
                what: "lstm weights",
                expected: 4 * n * (m + n),
                got: self.w.len(),
            });
        }
        if self.b.len() != 4 * n {
            return Err(McaError::DimensionMismatch {
                what: "lstm bias",
                expected: 4 * n,
                got: self.b.len(),
            });
        }
        Ok(())
    }

    /// `W^T`, the `(m + n) x 4n` layout a crossbar array stores.
    pub fn transposed(&self) -> Vec<f64> {
        let (r, c) = (4 * self.hidden, self.input + self.hidden);
        let mut t = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                t[j * r + i] = self.w[i * c + j];
            }
        }
        t
    }
}

fn check_state(n: usize, m: usize, x: &[f64], h: &[f64], c: &[f64]) -> Result<()> {
    for (what, len, want) in [
        ("lstm input", x.len(), m),
        ("lstm h", h.len(), n),
        ("lstm c", c.len(), n),
    ] {
        if len != want {
            return Err(McaError::DimensionMismatch {
                what,
                expected: want,
                got: len,
            });
        }
    }
    Ok(())
}

/// Gate nonlinearities and state update from the pre-activations `a = W v + b`.
fn finish(n: usize, a: &[f64], c_prev: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let mut h = vec![0.0; n];
    let mut c = vec![0.0; n];
    for k in 0..n {
        let i = sigmoid(a[k]);
        let f = sigmoid(a[n + k]);
        let o = sigmoid(a[2 * n + k]);
        let g = a[3 * n + k].tanh();
        c[k] = f * c_prev[k] + i * g;
        h[k] = o * c[k].tanh();
    }
    (h, c)
}

/// Exact cell: returns `(h, c)`.
pub fn lstm_cell(p: &LstmCellParams, x: &[f64], h_prev: &[f64], c_prev: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    p.validate()?;
    let (n, m) = (p.hidden, p.input);
    check_state(n, m, x, h_prev, c_prev)?;
    let v: Vec<f64> = x.iter().chain(h_prev).copied().collect();
    let a: Vec<f64> =
        p.w.chunks_exact(m + n)
            .zip(&p.b)
            .map(|(row, b)| row.iter().zip(&v).map(|(w, v)| w * v).sum::<f64>() + b)
            .collect();
    Ok(finish(n, &a, c_prev))
}

/// Cell whose stacked product runs on a weight store holding `W^T`.
pub fn lstm_cell_on(
    store: &mut dyn WeightStore,
    b: &[f64],
    x: &[f64],
    h_prev: &[f64],
    c_prev: &[f64],
    t_now: f64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = h_prev.len();
    let m = x.len();
    if store.n_in() != m + n || store.n_out() != 4 * n || b.len() != 4 * n {
        return Err(McaError::DimensionMismatch {
            what: "lstm store",
            expected: (m + n) * 4 * n,
            got: store.n_in() * store.n_out(),
        });
    }
    check_state(n, m, x, h_prev, c_prev)?;
    let v: Vec<f64> = x.iter().chain(h_prev).copied().collect();
    let mut a = store.forward(&v, t_now)?;
    for (a, b) in a.iter_mut().zip(b) {
        *a += b;
    }
    Ok(finish(n, &a, c_prev))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::store::ExactStore;
    use rand::{Rng, SeedableRng};

    fn random_params(rng: &mut impl Rng, n: usize, m: usize) -> LstmCellParams {
        LstmCellParams {
            hidden: n,
            input: m,
            w: (0..4 * n * (n + m)).map(|_| rng.random_range(-1.0..1.0)).collect(),
            b: (0..4 * n).map(|_| rng.random_range(-0.5..0.5)).collect(),
        }
    }

    /// Gate-by-gate evaluation with separate weight blocks.
    fn reference(p: &LstmCellParams, x: &[f64], h: &[f64], c: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let (n, m) = (p.hidden, p.input);
        let cols = n + m;
        let gate = |block: usize, k: usize| -> f64 {
            let row = (block * n + k) * cols;
            let mut s = p.b[block * n + k];
            for j in 0..m {
                s += p.w[row + j] * x[j];
            }
            for j in 0..n {
                s += p.w[row + m + j] * h[j];
            }
            s
        };
        let logistic = |v: f64| 1.0 / (1.0 + (-v).exp());
        let mut h_new = Vec::new();
        let mut c_new = Vec::new();
        for k in 0..n {
            let (i, f, o, g) = (
                logistic(gate(0, k)),
                logistic(gate(1, k)),
                logistic(gate(2, k)),
                gate(3, k).tanh(),
            );
            let ck = f * c[k] + i * g;
            c_new.push(ck);
            h_new.push(o * ck.tanh());
        }
        (h_new, c_new)
    }

    #[test]
    fn zero_parameters() {
        let p = LstmCellParams::zeros(3, 2);
        let c_prev = [1.0, -2.0, 0.4];
        let (h, c) = lstm_cell(&p, &[0.3, 0.7], &[0.1, 0.2, 0.3], &c_prev).unwrap();
        for k in 0..3 {
            assert!((c[k] - 0.5 * c_prev[k]).abs() < 1e-15);
            assert!((h[k] - 0.5 * (0.5 * c_prev[k]).tanh()).abs() < 1e-15);
        }
    }

    #[test]
    fn forget_path_annihilated() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(8);
        let p = random_params(&mut rng, 4, 3);
        let x = [0.2, -0.1, 0.9];
        let h0 = [0.1, 0.0, -0.3, 0.5];
        let (_, c) = lstm_cell(&p, &x, &h0, &[0.0; 4]).unwrap();
        let (_, c_ref) = reference(&p, &x, &h0, &[0.0; 4]);
        assert_eq!(c.len(), 4);
        for k in 0..4 {
            assert!((c[k] - c_ref[k]).abs() < 1e-15);
        }
    }

    #[test]
    fn matches_reference() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(21);
        for _ in 0..100 {
            let n = rng.random_range(1..6);
            let m = rng.random_range(1..6);
            let p = random_params(&mut rng, n, m);
            let x: Vec<f64> = (0..m).map(|_| rng.random_range(-1.0..1.0)).collect();
            let h: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
            let c: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
            let (h1, c1) = lstm_cell(&p, &x, &h, &c).unwrap();
            let (h2, c2) = reference(&p, &x, &h, &c);
            for k in 0..n {
                assert!((h1[k] - h2[k]).abs() <= 1e-12 && (c1[k] - c2[k]).abs() <= 1e-12);
            }
            let mut store = ExactStore::new(m + n, 4 * n, p.transposed()).unwrap();
            let (h3, c3) = lstm_cell_on(&mut store, &p.b, &x, &h, &c, 0.0).unwrap();
            for k in 0..n {
                assert!((h1[k] - h3[k]).abs() <= 1e-12 && (c1[k] - c3[k]).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn input_permutation_invariance() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let (n, m) = (3, 4);
        let p = random_params(&mut rng, n, m);
        let x = [0.5, -0.2, 0.8, 0.1];
        let h = [0.3, -0.6, 0.2];
        let c = [0.4, 0.0, -0.9];
        let perm = [2, 0, 3, 1];
        let mut q = p.clone();
        let cols = n + m;
        for r in 0..4 * n {
            for (new, &old) in perm.iter().enumerate() {
                q.w[r * cols + new] = p.w[r * cols + old];
            }
        }
        let xp: Vec<f64> = perm.iter().map(|&o| x[o]).collect();
        let a = lstm_cell(&p, &x, &h, &c).unwrap();
        let b = lstm_cell(&q, &xp, &h, &c).unwrap();
        for k in 0..n {
            assert!((a.0[k] - b.0[k]).abs() < 1e-14 && (a.1[k] - b.1[k]).abs() < 1e-14);
        }
    }

    #[test]
    fn shape_errors() {
        let p = LstmCellParams::zeros(2, 2);
        assert!(lstm_cell(&p, &[0.0; 3], &[0.0; 2], &[0.0; 2]).is_err());
        let mut bad = p.clone();
        bad.b.pop();
        assert!(lstm_cell(&bad, &[0.0; 2], &[0.0; 2], &[0.0; 2]).is_err());
    }
}
