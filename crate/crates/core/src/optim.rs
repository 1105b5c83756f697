//! The digital side of the mixed-precision scheme.
//!
//! Weight updates are accumulated at full precision in `chi`. Whenever an entry
//! reaches a device granularity it is turned into a signed pulse count,
//! truncated toward zero, and the transferred amount is removed from `chi`:
//!
//! ```text
//! chi >= eps_p   ->  p =  trunc(chi / eps_p),   chi -= p * eps_p
//! chi <= -eps_d  ->  p = -trunc(-chi / eps_d),  chi += |p| * eps_d
//! ```
//!
//! so between flushes every entry stays in `(-eps_d, eps_p)`. All
//! granularities are in weight units.

use serde::{Deserialize, Serialize};

use crate::crossbar::CrossbarArray;
use crate::error::{check_finite, McaError, Result};
use crate::quant::quantize_vector;

/// Non-zero entries of a weight update `dW_ij = eta * delta_j * x_i`, indexed
/// `(row = input i, col = output j)`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SparseUpdate {
    pub rows: usize,
    pub cols: usize,
    pub entries: Vec<(usize, usize, f64)>,
    pub scale_x: f64,
    pub scale_delta: f64,
    pub eta: f64,
}

impl SparseUpdate {
    pub fn nnz(&self) -> usize {
        self.entries.len()
    }

    /// Keeps the non-zero entries of a dense row-major matrix.
    pub fn from_dense(rows: usize, cols: usize, dense: &[f64]) -> Result<Self> {
        if dense.len() != rows * cols {
            return Err(McaError::DimensionMismatch {
                what: "dense update",
                expected: rows * cols,
                got: dense.len(),
            });
        }
        let entries = dense
            .iter()
            .enumerate()
            .filter(|(_, &v)| v != 0.0)
            .map(|(k, &v)| (k / cols, k % cols, v))
            .collect();
        Ok(Self {
            rows,
            cols,
            entries,
            scale_x: 1.0,
            scale_delta: 1.0,
            eta: 1.0,
        })
    }

    pub fn to_dense(&self) -> Vec<f64> {
        let mut d = vec![0.0; self.rows * self.cols];
        for &(i, j, v) in &self.entries {
            d[i * self.cols + j] += v;
        }
        d
    }
}

/// Rank-one update `coef * delta_j * x_i` kept in factored form. With
/// quantization `x` and `delta` hold the integer codes and
/// `coef = eta * s_x * s_delta`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OuterUpdate {
    pub x: Vec<f64>,
    pub delta: Vec<f64>,
    pub coef: f64,
    pub scale_x: f64,
    pub scale_delta: f64,
    pub eta: f64,
}

impl OuterUpdate {
    pub fn rows(&self) -> usize {
        self.x.len()
    }

    pub fn cols(&self) -> usize {
        self.delta.len()
    }

    /// Non-zero entries of the product.
    pub fn nnz(&self) -> usize {
        self.x.iter().filter(|&&v| v != 0.0).count() * self.delta.iter().filter(|&&v| v != 0.0).count()
    }

    /// Calls `f(i, j, value)` for every non-zero entry, row by row.
    #[inline]
    pub fn for_each(&self, mut f: impl FnMut(usize, usize, f64)) {
        let nz_d: Vec<(usize, f64)> = self
            .delta
            .iter()
            .copied()
            .enumerate()
            .filter(|&(_, d)| d != 0.0)
            .collect();
        for (i, &xi) in self.x.iter().enumerate() {
            if xi == 0.0 {
                continue;
            }
            for &(j, dj) in &nz_d {
                f(i, j, self.coef * (dj * xi));
            }
        }
    }

    pub fn to_sparse(&self) -> SparseUpdate {
        let mut entries = Vec::with_capacity(self.nnz());
        self.for_each(|i, j, v| entries.push((i, j, v)));
        SparseUpdate {
            rows: self.rows(),
            cols: self.cols(),
            entries,
            scale_x: self.scale_x,
            scale_delta: self.scale_delta,
            eta: self.eta,
        }
    }
}

/// Factored form of [`compute_update_lowprec`].
pub fn outer_update(x: &[f64], delta: &[f64], eta: f64, bits: Option<u32>) -> Result<OuterUpdate> {
    if !(eta > 0.0) {
        return Err(McaError::InvalidParams(format!("learning rate {eta} must be > 0")));
    }
    check_finite("update activations", x)?;
    check_finite("update errors", delta)?;
    match bits {
        Some(b) => {
            let qx = quantize_vector(x, b)?;
            let qd = quantize_vector(delta, b)?;
            Ok(OuterUpdate {
                x: qx.codes.iter().map(|&c| c as f64).collect(),
                delta: qd.codes.iter().map(|&c| c as f64).collect(),
                coef: eta * qx.scale * qd.scale,
                scale_x: qx.scale,
                scale_delta: qd.scale,
                eta,
            })
        }
        None => Ok(OuterUpdate {
            x: x.to_vec(),
            delta: delta.to_vec(),
            coef: eta,
            scale_x: 1.0,
            scale_delta: 1.0,
            eta,
        }),
    }
}

/// Outer-product update `eta * delta * x^T`.
///
/// With `bits = Some(b)` both vectors are first quantized to signed `b`-bit
/// codes with shared max-abs scales and each entry becomes
/// `(eta * s_x * s_delta) * q_delta(j) * q_x(i)`; only non-zero code products
/// are kept. With `bits = None` the full-precision product is used.
pub fn compute_update_lowprec(x: &[f64], delta: &[f64], eta: f64, bits: Option<u32>) -> Result<SparseUpdate> {
    Ok(outer_update(x, delta, eta, bits)?.to_sparse())
}

/// `velocity <- mu * velocity + grad`; returns `-eta * velocity`, the amount
/// to add to the weights (or to `chi`). `grad` is the loss gradient.
pub fn sgd_momentum_step(velocity: &mut [f64], grad: &[f64], eta: f64, mu: f64) -> Result<Vec<f64>> {
    if velocity.len() != grad.len() {
        return Err(McaError::DimensionMismatch {
            what: "momentum buffer",
            expected: velocity.len(),
            got: grad.len(),
        });
    }
    if !(0.0..1.0).contains(&mu) {
        return Err(McaError::InvalidParams(format!("momentum {mu} must lie in [0, 1)")));
    }
    Ok(velocity
        .iter_mut()
        .zip(grad)
        .map(|(v, g)| {
            *v = mu * *v + g;
            -eta * *v
        })
        .collect())
}

/// One transfer decided at flush time.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PulseEvent {
    pub row: usize,
    pub col: usize,
    pub pulses: i64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChiAccumulator {
    rows: usize,
    cols: usize,
    chi: Vec<f64>,
    eps_p: f64,
    eps_d: f64,
    pulse_cap: Option<u32>,
    dirty: Vec<usize>,
    is_dirty: Vec<bool>,
    writes: u64,
}

impl ChiAccumulator {
    pub fn new(rows: usize, cols: usize, eps_p: f64, eps_d: f64) -> Result<Self> {
        if !(eps_p > 0.0 && eps_d > 0.0) {
            return Err(McaError::InvalidParams(format!(
                "granularities must be > 0 (eps_p = {eps_p}, eps_d = {eps_d})"
            )));
        }
        Ok(Self {
            rows,
            cols,
            chi: vec![0.0; rows * cols],
            eps_p,
            eps_d,
            pulse_cap: None,
            dirty: Vec::new(),
            is_dirty: vec![false; rows * cols],
            writes: 0,
        })
    }

    pub fn with_pulse_cap(mut self, cap: Option<u32>) -> Self {
        self.pulse_cap = cap;
        self
    }

    pub fn chi(&self) -> &[f64] {
        &self.chi
    }

    pub fn eps(&self) -> (f64, f64) {
        (self.eps_p, self.eps_d)
    }

    /// Total number of non-zero writes into `chi` so far.
    pub fn writes(&self) -> u64 {
        self.writes
    }

    /// Adds an update; returns the number of `chi` writes it caused.
    pub fn accumulate(&mut self, upd: &SparseUpdate) -> Result<u64> {
        if upd.rows != self.rows || upd.cols != self.cols {
            return Err(McaError::DimensionMismatch {
                what: "update shape",
                expected: self.rows * self.cols,
                got: upd.rows * upd.cols,
            });
        }
        for &(i, j, v) in &upd.entries {
            if i >= self.rows || j >= self.cols {
                return Err(McaError::IndexOutOfRange {
                    row: i,
                    col: j,
                    rows: self.rows,
                    cols: self.cols,
                });
            }
            let k = i * self.cols + j;
            self.chi[k] += v;
            if !self.is_dirty[k] {
                self.is_dirty[k] = true;
                self.dirty.push(k);
            }
        }
        let n = upd.entries.len() as u64;
        self.writes += n;
        Ok(n)
    }

    /// Adds a factored update without materializing its entries.
    pub fn accumulate_outer(&mut self, upd: &OuterUpdate) -> Result<u64> {
        if upd.rows() != self.rows || upd.cols() != self.cols {
            return Err(McaError::DimensionMismatch {
                what: "update shape",
                expected: self.rows * self.cols,
                got: upd.rows() * upd.cols(),
            });
        }
        let cols = self.cols;
        let (chi, is_dirty, dirty) = (&mut self.chi, &mut self.is_dirty, &mut self.dirty);
        let mut n = 0u64;
        upd.for_each(|i, j, v| {
            let k = i * cols + j;
            chi[k] += v;
            if !is_dirty[k] {
                is_dirty[k] = true;
                dirty.push(k);
            }
            n += 1;
        });
        self.writes += n;
        Ok(n)
    }

    /// Adds a dense update (same shape as `chi`), counting non-zero entries.
    pub fn accumulate_dense(&mut self, dense: &[f64]) -> Result<u64> {
        self.accumulate(&SparseUpdate::from_dense(self.rows, self.cols, dense)?)
    }

    /// Pulse count for a value of `chi`, and the residual left behind.
    pub fn pulses_for(&self, chi: f64) -> (i64, f64) {
        if chi >= self.eps_p {
            let mut p = (chi / self.eps_p).trunc() as i64;
            while chi - (p as f64) * self.eps_p >= self.eps_p {
                p += 1;
            }
            while p > 0 && chi - (p as f64) * self.eps_p < 0.0 {
                p -= 1;
            }
            if let Some(cap) = self.pulse_cap {
                p = p.min(cap as i64);
            }
            (p, chi - (p as f64) * self.eps_p)
        } else if chi <= -self.eps_d {
            let mut p = (-chi / self.eps_d).trunc() as i64;
            while chi + (p as f64) * self.eps_d <= -self.eps_d {
                p += 1;
            }
            while p > 0 && chi + (p as f64) * self.eps_d > 0.0 {
                p -= 1;
            }
            if let Some(cap) = self.pulse_cap {
                p = p.min(cap as i64);
            }
            (-p, chi + (p as f64) * self.eps_d)
        } else {
            (0, chi)
        }
    }

    /// Transfers every entry that reached a granularity to `arr` as blind
    /// pulses. Only entries touched since the previous flush need checking.
    pub fn flush(&mut self, arr: &mut CrossbarArray, t_now: f64) -> Result<Vec<PulseEvent>> {
        if arr.rows() != self.rows || arr.cols() != self.cols {
            return Err(McaError::DimensionMismatch {
                what: "flush target",
                expected: self.rows * self.cols,
                got: arr.rows() * arr.cols(),
            });
        }
        // Devices draw their randomness from their own pulse counters, so the
        // visiting order does not affect the outcome.
        let mut dirty = std::mem::take(&mut self.dirty);
        let mut events = Vec::new();
        for &k in &dirty {
            self.is_dirty[k] = false;
            let (p, residual) = self.pulses_for(self.chi[k]);
            if p != 0 {
                self.chi[k] = residual;
                arr.program_synapse(k, p, t_now);
                events.push(PulseEvent {
                    row: k / self.cols,
                    col: k % self.cols,
                    pulses: p,
                });
            }
        }
        dirty.clear();
        self.dirty = dirty;
        Ok(events)
    }

    pub fn residual_bound_holds(&self) -> bool {
        self.pulse_cap.is_some() || self.chi.iter().all(|&c| c > -self.eps_d && c < self.eps_p)
    }
}
