//! Where a layer's weights live: real-valued memory or a crossbar array with
//! a digital accumulator in front of it.

use std::fmt::Debug;

use rand_distr::{Distribution, Normal};

use crate::counters::EventCounters;
use crate::crossbar::{ArraySettings, CrossbarArray, InitReport, InitSpec, ReadMode};
use crate::device::PcmModel;
use crate::error::{McaError, Result};
use crate::optim::{ChiAccumulator, OuterUpdate, SparseUpdate};
use crate::quant::fake_quantize;
use crate::registry::Registry;
use crate::rng::{seeded_chacha, Stream};

/// Weight matrix `n_in x n_out` (rows are inputs) with forward and backward
/// products and a two-phase update: `accumulate` during an example or batch,
/// `commit` when the update is due.
pub trait WeightStore: Send + Debug {
    fn name(&self) -> &'static str;
    fn n_in(&self) -> usize;
    fn n_out(&self) -> usize;
    fn forward(&mut self, x: &[f64], t_now: f64) -> Result<Vec<f64>>;
    fn backward(&mut self, delta: &[f64], t_now: f64) -> Result<Vec<f64>>;
    /// Returns the number of accumulator writes.
    fn accumulate(&mut self, upd: &SparseUpdate) -> Result<u64>;
    /// Same as `accumulate` for a factored rank-one update.
    fn accumulate_outer(&mut self, upd: &OuterUpdate) -> Result<u64>;
    /// Returns the number of synapses programmed.
    fn commit(&mut self, t_now: f64) -> Result<usize>;
    /// End of a training example; `network_programmed` tells whether any
    /// layer of the network changed its devices.
    fn after_example(&mut self, t_now: f64, network_programmed: bool) -> Result<()>;
    /// Row-major `n_in x n_out` weights.
    fn weights(&mut self, t_now: f64, mode: ReadMode) -> Result<Vec<f64>>;
    fn counters(&self) -> EventCounters;
    /// Input (DAC) and output (ADC) converter widths; `None` is unquantized.
    fn set_converters(&mut self, dac_bits: Option<u32>, adc_bits: Option<u32>) -> Result<()>;
    /// `(dac_bits, adc_bits)`.
    fn converters(&self) -> (Option<u32>, Option<u32>);
    fn crossbar(&self) -> Option<&CrossbarArray> {
        None
    }
    fn crossbar_mut(&mut self) -> Option<&mut CrossbarArray> {
        None
    }
    fn accumulator(&self) -> Option<&ChiAccumulator> {
        None
    }
    fn boxed_clone(&self) -> Box<dyn WeightStore>;
}

impl Clone for Box<dyn WeightStore> {
    fn clone(&self) -> Self {
        self.boxed_clone()
    }
}

/// Real-valued weights, updated in place.
#[derive(Clone, Debug, PartialEq)]
pub struct ExactStore {
    rows: usize,
    cols: usize,
    w: Vec<f64>,
    pub dac_bits: Option<u32>,
    pub adc_bits: Option<u32>,
    counters: EventCounters,
}

impl ExactStore {
    pub fn new(rows: usize, cols: usize, w: Vec<f64>) -> Result<Self> {
        if w.len() != rows * cols {
            return Err(McaError::DimensionMismatch {
                what: "weight matrix",
                expected: rows * cols,
                got: w.len(),
            });
        }
        Ok(Self {
            rows,
            cols,
            w,
            dac_bits: None,
            adc_bits: None,
            counters: EventCounters::default(),
        })
    }

    /// Weights drawn from `Normal(0, std)` on the seeded weight-init stream.
    pub fn random(rows: usize, cols: usize, std: f64, seed: u64, layer: u64) -> Result<Self> {
        let normal = Normal::new(0.0, std).map_err(|e| McaError::InvalidParams(e.to_string()))?;
        let mut rng = seeded_chacha(seed, Stream::WeightInit, layer);
        let w = (0..rows * cols).map(|_| normal.sample(&mut rng)).collect();
        Self::new(rows, cols, w)
    }

    pub fn with_quantization(mut self, dac_bits: Option<u32>, adc_bits: Option<u32>) -> Self {
        self.dac_bits = dac_bits;
        self.adc_bits = adc_bits;
        self
    }

    pub fn raw(&self) -> &[f64] {
        &self.w
    }

    pub fn raw_mut(&mut self) -> &mut [f64] {
        &mut self.w
    }
}

impl WeightStore for ExactStore {
    fn name(&self) -> &'static str {
        "exact"
    }
    fn n_in(&self) -> usize {
        self.rows
    }
    fn n_out(&self) -> usize {
        self.cols
    }
    fn forward(&mut self, x: &[f64], _t: f64) -> Result<Vec<f64>> {
        if x.len() != self.rows {
            return Err(McaError::DimensionMismatch {
                what: "forward input",
                expected: self.rows,
                got: x.len(),
            });
        }
        let mut xq = x.to_vec();
        fake_quantize(&mut xq, self.dac_bits)?;
        let mut y = vec![0.0; self.cols];
        for (i, &xi) in xq.iter().enumerate() {
            if xi == 0.0 {
                continue;
            }
            let row = &self.w[i * self.cols..(i + 1) * self.cols];
            for (yj, wij) in y.iter_mut().zip(row) {
                *yj += wij * xi;
            }
        }
        fake_quantize(&mut y, self.adc_bits)?;
        Ok(y)
    }
    fn backward(&mut self, delta: &[f64], _t: f64) -> Result<Vec<f64>> {
        if delta.len() != self.cols {
            return Err(McaError::DimensionMismatch {
                what: "backward input",
                expected: self.cols,
                got: delta.len(),
            });
        }
        let mut dq = delta.to_vec();
        fake_quantize(&mut dq, self.dac_bits)?;
        let mut out: Vec<f64> = self
            .w
            .chunks_exact(self.cols)
            .map(|row| row.iter().zip(&dq).map(|(w, d)| w * d).sum())
            .collect();
        fake_quantize(&mut out, self.adc_bits)?;
        Ok(out)
    }
    fn accumulate(&mut self, upd: &SparseUpdate) -> Result<u64> {
        if upd.rows != self.rows || upd.cols != self.cols {
            return Err(McaError::DimensionMismatch {
                what: "update shape",
                expected: self.rows * self.cols,
                got: upd.rows * upd.cols,
            });
        }
        for &(i, j, v) in &upd.entries {
            self.w[i * self.cols + j] += v;
        }
        let n = upd.entries.len() as u64;
        self.counters.chi_writes += n;
        Ok(n)
    }
    fn accumulate_outer(&mut self, upd: &OuterUpdate) -> Result<u64> {
        if upd.rows() != self.rows || upd.cols() != self.cols {
            return Err(McaError::DimensionMismatch {
                what: "update shape",
                expected: self.rows * self.cols,
                got: upd.rows() * upd.cols(),
            });
        }
        let (w, cols) = (&mut self.w, self.cols);
        let mut n = 0u64;
        upd.for_each(|i, j, v| {
            w[i * cols + j] += v;
            n += 1;
        });
        self.counters.chi_writes += n;
        Ok(n)
    }
    fn commit(&mut self, _t: f64) -> Result<usize> {
        Ok(0)
    }
    fn after_example(&mut self, _t: f64, _programmed: bool) -> Result<()> {
        Ok(())
    }
    fn weights(&mut self, _t: f64, _mode: ReadMode) -> Result<Vec<f64>> {
        Ok(self.w.clone())
    }
    fn set_converters(&mut self, dac_bits: Option<u32>, adc_bits: Option<u32>) -> Result<()> {
        for b in [dac_bits, adc_bits].into_iter().flatten() {
            if !(2..=16).contains(&b) {
                return Err(McaError::InvalidParams(format!(
                    "converter width {b} must lie in [2, 16]"
                )));
            }
        }
        self.dac_bits = dac_bits;
        self.adc_bits = adc_bits;
        Ok(())
    }
    fn converters(&self) -> (Option<u32>, Option<u32>) {
        (self.dac_bits, self.adc_bits)
    }
    fn counters(&self) -> EventCounters {
        self.counters
    }
    fn boxed_clone(&self) -> Box<dyn WeightStore> {
        Box::new(self.clone())
    }
}

/// Crossbar array plus the high-precision accumulator feeding it.
#[derive(Clone, Debug)]
pub struct CrossbarStore {
    pub array: CrossbarArray,
    pub chi: ChiAccumulator,
}

impl CrossbarStore {
    pub fn new(array: CrossbarArray, chi: ChiAccumulator) -> Result<Self> {
        if chi.chi().len() != array.n_synapses() {
            return Err(McaError::DimensionMismatch {
                what: "accumulator",
                expected: array.n_synapses(),
                got: chi.chi().len(),
            });
        }
        Ok(Self { array, chi })
    }
}

impl WeightStore for CrossbarStore {
    fn name(&self) -> &'static str {
        "crossbar"
    }
    fn n_in(&self) -> usize {
        self.array.rows()
    }
    fn n_out(&self) -> usize {
        self.array.cols()
    }
    fn forward(&mut self, x: &[f64], t: f64) -> Result<Vec<f64>> {
        self.array.forward(x, t)
    }
    fn backward(&mut self, delta: &[f64], t: f64) -> Result<Vec<f64>> {
        self.array.backward(delta, t)
    }
    fn accumulate(&mut self, upd: &SparseUpdate) -> Result<u64> {
        self.chi.accumulate(upd)
    }
    fn accumulate_outer(&mut self, upd: &OuterUpdate) -> Result<u64> {
        self.chi.accumulate_outer(upd)
    }
    fn commit(&mut self, t: f64) -> Result<usize> {
        Ok(self.chi.flush(&mut self.array, t)?.len())
    }
    fn after_example(&mut self, t: f64, programmed: bool) -> Result<()> {
        self.array.after_update(t, programmed)
    }
    fn weights(&mut self, t: f64, mode: ReadMode) -> Result<Vec<f64>> {
        self.array.effective_weights(t, mode)
    }
    fn counters(&self) -> EventCounters {
        let mut c = self.array.counters;
        c.chi_writes = self.chi.writes();
        c
    }
    fn set_converters(&mut self, dac_bits: Option<u32>, adc_bits: Option<u32>) -> Result<()> {
        self.array.set_dac_bits(dac_bits)?;
        self.array.set_adc_bits(adc_bits)
    }
    fn converters(&self) -> (Option<u32>, Option<u32>) {
        let s = self.array.settings();
        (s.dac_bits, s.adc_bits)
    }
    fn crossbar(&self) -> Option<&CrossbarArray> {
        Some(&self.array)
    }
    fn crossbar_mut(&mut self) -> Option<&mut CrossbarArray> {
        Some(&mut self.array)
    }
    fn accumulator(&self) -> Option<&ChiAccumulator> {
        Some(&self.chi)
    }
    fn boxed_clone(&self) -> Box<dyn WeightStore> {
        Box::new(self.clone())
    }
}

/// Everything a store factory may need.
#[derive(Clone, Debug)]
pub struct StoreArgs {
    pub rows: usize,
    pub cols: usize,
    pub layer: u64,
    pub seed: u64,
    /// Standard deviation of real-valued initial weights.
    pub exact_init_std: f64,
    pub settings: ArraySettings,
    pub init: InitSpec,
    pub model: PcmModel,
    pub id_base: u64,
    pub t_init: f64,
    pub eps_p: f64,
    pub eps_d: f64,
    pub pulse_cap: Option<u32>,
}

fn build_exact(a: &StoreArgs) -> Result<Box<dyn WeightStore>> {
    Ok(Box::new(ExactStore::random(
        a.rows,
        a.cols,
        a.exact_init_std,
        a.seed,
        a.layer,
    )?))
}

fn build_crossbar(a: &StoreArgs) -> Result<Box<dyn WeightStore>> {
    Ok(Box::new(build_crossbar_store(a)?.0))
}

pub fn build_crossbar_store(a: &StoreArgs) -> Result<(CrossbarStore, InitReport)> {
    let (array, report) = CrossbarArray::init(
        a.rows,
        a.cols,
        a.settings.clone(),
        &a.init,
        a.model.clone(),
        a.id_base,
        a.t_init,
    )?;
    let chi = ChiAccumulator::new(a.rows, a.cols, a.eps_p, a.eps_d)?.with_pulse_cap(a.pulse_cap);
    Ok((CrossbarStore::new(array, chi)?, report))
}

pub fn registry() -> Registry<dyn WeightStore, StoreArgs> {
    Registry::new("weight store")
        .with("exact", build_exact)
        .with("crossbar", build_crossbar)
}
