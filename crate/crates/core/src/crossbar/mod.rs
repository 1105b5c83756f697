//! Crossbar arrays of PCM synapses.
//!
//! Rows are layer inputs and columns are layer outputs, so the forward pass
//! computes `y_j = sum_i W_ij x_i` and the backward pass `d_i = sum_j W_ij e_j`
//! on the same conductances. The array keeps a software-side copy of the last
//! read conductance of every device; matrix-vector products use that copy, and
//! the active [`ReadPolicy`] decides when it is refreshed.

pub mod checkpoint;
pub mod read_policy;

use serde::{Deserialize, Serialize};

use crate::counters::EventCounters;
use crate::device::{DeviceState, PcmModel};
use crate::error::{McaError, Result};
use crate::quant::{fake_quantize, QuantizedVector};
use crate::rng::{self, Stream};

pub use read_policy::{ReadAction, ReadPolicy, ReadPolicyParams};

/// Reference conductance of a single-device synapse.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ReferenceLevel {
    Fixed(f64),
    ArrayMean,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SynapseScheme {
    /// `W = (Gp - Gn) / g_scale`.
    Differential,
    /// `W = (G - G_ref) / g_scale`.
    Reference(ReferenceLevel),
}

impl SynapseScheme {
    pub fn devices_per_synapse(&self) -> usize {
        match self {
            SynapseScheme::Differential => 2,
            SynapseScheme::Reference(_) => 1,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            SynapseScheme::Differential => "differential",
            SynapseScheme::Reference(_) => "reference",
        }
    }
}

/// Device states of one synapse.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Synapse {
    Differential { gp: DeviceState, gn: DeviceState },
    Reference { g: DeviceState },
}

/// Static configuration of an array.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArraySettings {
    pub scheme: SynapseScheme,
    /// µS per unit weight. Recomputed from `conductance_range` when that is set.
    pub g_scale: f64,
    pub weight_clip: f64,
    /// Conductance interval mapped onto `[-weight_clip, weight_clip]`.
    pub conductance_range: Option<(f64, f64)>,
    pub dac_bits: Option<u32>,
    pub adc_bits: Option<u32>,
    pub read_policy: String,
    pub read_subset: Option<usize>,
}

impl Default for ArraySettings {
    fn default() -> Self {
        Self {
            scheme: SynapseScheme::Differential,
            g_scale: 8.0,
            weight_clip: 1.0,
            conductance_range: None,
            dac_bits: Some(8),
            adc_bits: Some(8),
            read_policy: "subset-round-robin".into(),
            read_subset: None,
        }
    }
}

impl ArraySettings {
    pub fn validate(&self) -> Result<()> {
        let mut bad = Vec::new();
        if !(self.g_scale > 0.0) {
            bad.push(format!("g_scale {} must be > 0", self.g_scale));
        }
        if !(self.weight_clip > 0.0 && self.weight_clip <= 1.0) {
            bad.push(format!("weight_clip {} must lie in (0, 1]", self.weight_clip));
        }
        for (name, b) in [("dac_bits", self.dac_bits), ("adc_bits", self.adc_bits)] {
            if let Some(b) = b {
                if !(2..=16).contains(&b) {
                    bad.push(format!("{name} {b} must lie in [2, 16]"));
                }
            }
        }
        if let Some((lo, hi)) = self.conductance_range {
            if !(hi > lo) {
                bad.push(format!("conductance_range ({lo}, {hi}) is empty"));
            }
        }
        if !read_policy::registry().contains(&self.read_policy) {
            bad.push(format!("unknown read_policy `{}`", self.read_policy));
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(McaError::InvalidParams(bad.join("; ")))
        }
    }
}

/// Per-device initial conductance distribution and program-and-verify knobs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InitSpec {
    pub mean: f64,
    pub std: f64,
    pub margin: f64,
    pub max_iter: u32,
}

impl Default for InitSpec {
    fn default() -> Self {
        Self {
            mean: 1.6,
            std: 0.83,
            margin: 0.1,
            max_iter: 20,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct InitReport {
    pub devices: usize,
    pub clipped_targets: usize,
    pub non_converged: usize,
    pub set_pulses: u64,
    pub reset_pulses: u64,
}

/// How [`CrossbarArray::effective_weights`] obtains conductances.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReadMode {
    /// Use the last read values.
    Cached,
    /// Read every device now with fresh noise.
    Fresh,
    /// Read every device with noise keyed by the read time, so two snapshots
    /// at the same instant agree.
    Snapshot,
    /// Drifted conductances without read noise; the cache is left alone.
    Noiseless,
}

/// Weight-refresh rule for differential arrays.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RefreshPolicy {
    pub enabled: bool,
    /// Training examples between full sweeps (or per distributed sweep).
    pub period: u64,
    pub g_high: f64,
    pub g_diff: f64,
    pub max_set: u32,
    /// Average conductance change per SET pulse used to convert a difference
    /// into a pulse count.
    pub g_per_pulse: f64,
    pub distributed: bool,
}

impl Default for RefreshPolicy {
    fn default() -> Self {
        Self {
            enabled: true,
            period: 100,
            g_high: 8.0,
            g_diff: 6.0,
            max_set: 3,
            g_per_pulse: 0.77,
            distributed: false,
        }
    }
}

/// Outcome of the refresh test on one pair.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RefreshPlan {
    pub set_pulses: u32,
    pub on_gp: bool,
}

impl RefreshPolicy {
    /// `Some(plan)` when a pair with conductances `(gp, gn)` must be refreshed.
    pub fn decide(&self, gp: f64, gn: f64) -> Option<RefreshPlan> {
        let diff = gp - gn;
        if gp.max(gn) > self.g_high && diff.abs() < self.g_diff {
            let n = (diff.abs() / self.g_per_pulse).round().min(self.max_set as f64) as u32;
            Some(RefreshPlan {
                set_pulses: n,
                on_gp: diff > 0.0,
            })
        } else {
            None
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RefreshReport {
    pub checked: u64,
    pub refreshed: u64,
    pub set_pulses: u64,
    pub reset_pulses: u64,
}

impl std::ops::AddAssign for RefreshReport {
    fn add_assign(&mut self, o: Self) {
        self.checked += o.checked;
        self.refreshed += o.refreshed;
        self.set_pulses += o.set_pulses;
        self.reset_pulses += o.reset_pulses;
    }
}

#[derive(Debug)]
pub struct CrossbarArray {
    rows: usize,
    cols: usize,
    settings: ArraySettings,
    model: PcmModel,
    id_base: u64,
    devices: Vec<DeviceState>,
    cache: Vec<f64>,
    cache_sum: f64,
    policy: Box<dyn ReadPolicy>,
    pending: Vec<usize>,
    read_counter: u64,
    refresh_clock: u64,
    refresh_cursor: usize,
    pub counters: EventCounters,
}

impl Clone for CrossbarArray {
    fn clone(&self) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            settings: self.settings.clone(),
            model: self.model.clone(),
            id_base: self.id_base,
            devices: self.devices.clone(),
            cache: self.cache.clone(),
            cache_sum: self.cache_sum,
            policy: self.policy.boxed_clone(),
            pending: self.pending.clone(),
            read_counter: self.read_counter,
            refresh_clock: self.refresh_clock,
            refresh_cursor: self.refresh_cursor,
            counters: self.counters,
        }
    }
}

impl CrossbarArray {
    /// Builds an array whose devices all sit at `g` µS, programmed at `t`.
    /// Mostly useful for tests; see [`CrossbarArray::init`] for the
    /// program-and-verify initialization.
    pub fn uniform(
        rows: usize,
        cols: usize,
        settings: ArraySettings,
        model: PcmModel,
        id_base: u64,
        g: f64,
        t: f64,
    ) -> Result<Self> {
        let per = settings.scheme.devices_per_synapse();
        let n = rows * cols * per;
        let nu = model.params().nu_mean;
        let devices = (0..n as u64).map(|k| DeviceState::new(id_base + k, g, t, nu)).collect();
        Self::from_devices(rows, cols, settings, model, id_base, devices)
    }

    /// Builds an array from explicit device states, listed synapse by synapse
    /// (row-major), `[gp, gn]` per synapse for the differential scheme. The
    /// cache is filled with noiseless reads at each device's programming time.
    pub fn from_devices(
        rows: usize,
        cols: usize,
        mut settings: ArraySettings,
        model: PcmModel,
        id_base: u64,
        devices: Vec<DeviceState>,
    ) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(McaError::InvalidParams(format!("array shape {rows}x{cols} is empty")));
        }
        settings.validate()?;
        let expected = rows * cols * settings.scheme.devices_per_synapse();
        if devices.len() != expected {
            return Err(McaError::DimensionMismatch {
                what: "array devices",
                expected,
                got: devices.len(),
            });
        }
        let policy = read_policy::build(
            &settings.read_policy,
            ReadPolicyParams {
                subset: settings.read_subset,
            },
        )?;
        if let Some((lo, hi)) = settings.conductance_range {
            settings.g_scale = (hi - lo) / (2.0 * settings.weight_clip);
        }
        let cache: Vec<f64> = devices.iter().map(|d| d.g_prog).collect();
        let cache_sum = cache.iter().sum();
        Ok(Self {
            rows,
            cols,
            settings,
            model,
            id_base,
            devices,
            cache,
            cache_sum,
            policy,
            pending: Vec::new(),
            read_counter: 0,
            refresh_clock: 0,
            refresh_cursor: 0,
            counters: EventCounters::default(),
        })
    }

    /// Program-and-verify initialization. Every device starts from a RESET and
    /// is programmed toward its own target drawn from
    /// `Normal(init.mean, init.std)` clipped to `[0, g_max]`. Afterwards the
    /// whole array is read once at `t_init`; the counters are left at zero.
    pub fn init(
        rows: usize,
        cols: usize,
        settings: ArraySettings,
        init: &InitSpec,
        model: PcmModel,
        id_base: u64,
        t_init: f64,
    ) -> Result<(Self, InitReport)> {
        let mut arr = Self::uniform(rows, cols, settings, model, id_base, 0.0, t_init)?;
        let g_max = arr.model.params().g_max;
        let seed = arr.model.seed();
        let mut report = InitReport {
            devices: arr.devices.len(),
            ..Default::default()
        };
        for dev in arr.devices.iter_mut() {
            let z = rng::normal(seed, Stream::InitTarget, dev.device_id, 0);
            let raw = init.mean + init.std * z;
            let target = raw.clamp(0.0, g_max);
            if target != raw {
                report.clipped_targets += 1;
            }
            let start = arr.model.apply_reset_pulse(dev, dev.pulse_count, t_init);
            report.reset_pulses += 1;
            let out = arr
                .model
                .iterative_program(&start, target, init.margin, init.max_iter, t_init)?;
            report.set_pulses += out.set_pulses as u64;
            report.reset_pulses += out.reset_pulses as u64;
            if !out.converged {
                report.non_converged += 1;
            }
            *dev = out.state;
        }
        arr.read_all(t_init)?;
        arr.counters = EventCounters::default();
        arr.read_counter = 0;
        Ok((arr, report))
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn n_synapses(&self) -> usize {
        self.rows * self.cols
    }

    pub fn settings(&self) -> &ArraySettings {
        &self.settings
    }

    pub fn model(&self) -> &PcmModel {
        &self.model
    }

    pub fn id_base(&self) -> u64 {
        self.id_base
    }

    pub fn devices(&self) -> &[DeviceState] {
        &self.devices
    }

    pub fn cached_conductances(&self) -> &[f64] {
        &self.cache
    }

    pub fn read_policy(&self) -> &dyn ReadPolicy {
        self.policy.as_ref()
    }

    pub fn set_read_policy(&mut self, name: &str, subset: Option<usize>) -> Result<()> {
        self.policy = read_policy::build(name, ReadPolicyParams { subset })?;
        self.settings.read_policy = name.to_string();
        self.settings.read_subset = subset;
        Ok(())
    }

    pub fn set_adc_bits(&mut self, bits: Option<u32>) -> Result<()> {
        let mut s = self.settings.clone();
        s.adc_bits = bits;
        s.validate()?;
        self.settings = s;
        Ok(())
    }

    pub fn set_dac_bits(&mut self, bits: Option<u32>) -> Result<()> {
        let mut s = self.settings.clone();
        s.dac_bits = bits;
        s.validate()?;
        self.settings = s;
        Ok(())
    }

    /// Replaces the device model (for example to switch drift off for a
    /// control experiment). Device states are kept.
    pub fn set_model(&mut self, model: PcmModel) {
        self.model = model;
    }

    /// Zeroes every device's drift exponent.
    pub fn freeze_drift(&mut self) {
        for d in self.devices.iter_mut() {
            d.nu = 0.0;
        }
    }

    /// Updates the weight-range bound. With a conductance range configured the
    /// scale follows so the range still spans `[-clip, clip]`.
    pub fn set_weight_clip(&mut self, clip: f64) -> Result<()> {
        if !(clip > 0.0 && clip <= 1.0) {
            return Err(McaError::InvalidParams(format!(
                "weight_clip {clip} must lie in (0, 1]"
            )));
        }
        self.settings.weight_clip = clip;
        if let Some((lo, hi)) = self.settings.conductance_range {
            self.settings.g_scale = (hi - lo) / (2.0 * clip);
        }
        Ok(())
    }

    pub fn synapse(&self, i: usize, j: usize) -> Result<Synapse> {
        let s = self.index(i, j)?;
        Ok(match self.settings.scheme {
            SynapseScheme::Differential => Synapse::Differential {
                gp: self.devices[2 * s],
                gn: self.devices[2 * s + 1],
            },
            SynapseScheme::Reference(_) => Synapse::Reference { g: self.devices[s] },
        })
    }

    /// Latest programming time over all devices.
    pub fn last_programmed(&self) -> f64 {
        self.devices.iter().fold(f64::NEG_INFINITY, |m, d| m.max(d.t_prog))
    }

    fn index(&self, i: usize, j: usize) -> Result<usize> {
        if i >= self.rows || j >= self.cols {
            return Err(McaError::IndexOutOfRange {
                row: i,
                col: j,
                rows: self.rows,
                cols: self.cols,
            });
        }
        Ok(i * self.cols + j)
    }

    /// Reference conductance under the current cache.
    pub fn reference_level(&self) -> f64 {
        match self.settings.scheme {
            SynapseScheme::Reference(ReferenceLevel::Fixed(g)) => g,
            SynapseScheme::Reference(ReferenceLevel::ArrayMean) => self.cache_sum / self.cache.len() as f64,
            SynapseScheme::Differential => 0.0,
        }
    }

    #[inline]
    fn set_cache(&mut self, k: usize, g: f64) {
        self.cache_sum += g - self.cache[k];
        self.cache[k] = g;
    }

    fn recompute_cache_sum(&mut self) {
        self.cache_sum = self.cache.iter().sum();
    }

    fn read_device(&mut self, k: usize, t_now: f64) -> Result<()> {
        let dev = &self.devices[k];
        if t_now < dev.t_prog {
            return Err(McaError::Contract(format!(
                "device {} read at t = {t_now} s before its programming time {} s",
                dev.device_id, dev.t_prog
            )));
        }
        let g = self
            .model
            .read_unchecked(dev, t_now, Stream::ReadNoise, self.read_counter);
        self.read_counter += 1;
        self.counters.device_reads += 1;
        self.set_cache(k, g);
        Ok(())
    }

    fn read_synapse(&mut self, s: usize, t_now: f64) -> Result<()> {
        let per = self.settings.scheme.devices_per_synapse();
        for k in s * per..(s + 1) * per {
            self.read_device(k, t_now)?;
        }
        Ok(())
    }

    /// Reads every device with fresh noise.
    pub fn read_all(&mut self, t_now: f64) -> Result<()> {
        for k in 0..self.devices.len() {
            self.read_device(k, t_now)?;
        }
        self.recompute_cache_sum();
        Ok(())
    }

    /// Reads every device with noise keyed by `t_now`.
    pub fn snapshot_read(&mut self, t_now: f64) -> Result<()> {
        let event = t_now.to_bits();
        for k in 0..self.devices.len() {
            let dev = &self.devices[k];
            if t_now < dev.t_prog {
                return Err(McaError::Contract(format!(
                    "snapshot at t = {t_now} s precedes programming of device {} at {} s",
                    dev.device_id, dev.t_prog
                )));
            }
            self.cache[k] = self.model.read_unchecked(dev, t_now, Stream::SnapshotRead, event);
        }
        self.counters.device_reads += self.devices.len() as u64;
        self.recompute_cache_sum();
        Ok(())
    }

    fn apply_read_action(&mut self, action: ReadAction, t_now: f64) -> Result<()> {
        match action {
            ReadAction::Nothing => Ok(()),
            ReadAction::All => self.read_all(t_now),
            ReadAction::Synapses(list) => {
                for s in list {
                    self.read_synapse(s, t_now)?;
                }
                Ok(())
            }
        }
    }

    #[inline]
    fn weight_params(&self) -> (f64, f64, f64) {
        (
            1.0 / self.settings.g_scale,
            self.settings.weight_clip,
            self.reference_level(),
        )
    }

    /// Dense weight matrix (rows x cols, row-major) from the cache.
    fn cached_weights(&self) -> Vec<f64> {
        let (inv, clip, gref) = self.weight_params();
        match self.settings.scheme {
            SynapseScheme::Differential => self
                .cache
                .chunks_exact(2)
                .map(|p| ((p[0] - p[1]) * inv).clamp(-clip, clip))
                .collect(),
            SynapseScheme::Reference(_) => self
                .cache
                .iter()
                .map(|g| ((g - gref) * inv).clamp(-clip, clip))
                .collect(),
        }
    }

    /// Effective weights at `t_now`, clipped to the current weight range.
    pub fn effective_weights(&mut self, t_now: f64, mode: ReadMode) -> Result<Vec<f64>> {
        match mode {
            ReadMode::Cached => {}
            ReadMode::Fresh => self.read_all(t_now)?,
            ReadMode::Snapshot => self.snapshot_read(t_now)?,
            ReadMode::Noiseless => {
                let mut copy = self.clone();
                for k in 0..copy.devices.len() {
                    copy.cache[k] = copy.model.drifted(&copy.devices[k], t_now);
                }
                copy.recompute_cache_sum();
                return Ok(copy.cached_weights());
            }
        }
        Ok(self.cached_weights())
    }

    fn raw_forward(&self, x: &[f64]) -> Vec<f64> {
        let (inv, clip, gref) = self.weight_params();
        let cols = self.cols;
        let mut y = vec![0.0; cols];
        for (i, &xi) in x.iter().enumerate() {
            if xi == 0.0 {
                continue;
            }
            match self.settings.scheme {
                SynapseScheme::Differential => {
                    let row = &self.cache[2 * i * cols..2 * (i + 1) * cols];
                    for (yj, p) in y.iter_mut().zip(row.chunks_exact(2)) {
                        *yj += ((p[0] - p[1]) * inv).clamp(-clip, clip) * xi;
                    }
                }
                SynapseScheme::Reference(_) => {
                    let row = &self.cache[i * cols..(i + 1) * cols];
                    for (yj, g) in y.iter_mut().zip(row) {
                        *yj += ((g - gref) * inv).clamp(-clip, clip) * xi;
                    }
                }
            }
        }
        y
    }

    fn raw_backward(&self, d: &[f64]) -> Vec<f64> {
        let (inv, clip, gref) = self.weight_params();
        let cols = self.cols;
        (0..self.rows)
            .map(|i| match self.settings.scheme {
                SynapseScheme::Differential => self.cache[2 * i * cols..2 * (i + 1) * cols]
                    .chunks_exact(2)
                    .zip(d)
                    .map(|(p, dj)| ((p[0] - p[1]) * inv).clamp(-clip, clip) * dj)
                    .sum(),
                SynapseScheme::Reference(_) => self.cache[i * cols..(i + 1) * cols]
                    .iter()
                    .zip(d)
                    .map(|(g, dj)| ((g - gref) * inv).clamp(-clip, clip) * dj)
                    .sum(),
            })
            .collect()
    }

    fn before_matvec(&mut self, t_now: f64) -> Result<()> {
        let action = self.policy.before_matvec();
        self.apply_read_action(action, t_now)
    }

    /// `y_j = sum_i W_ij x_i`, quantized to the ADC width.
    pub fn matvec_forward(&mut self, x: &QuantizedVector, t_now: f64) -> Result<Vec<f64>> {
        self.forward(&x.dequantize(), t_now)
    }

    /// `d_i = sum_j W_ij e_j`, quantized to the ADC width.
    pub fn matvec_backward(&mut self, delta: &QuantizedVector, t_now: f64) -> Result<Vec<f64>> {
        self.backward(&delta.dequantize(), t_now)
    }

    /// Forward product of a real vector; the input passes through the DAC
    /// quantizer first.
    pub fn forward(&mut self, x: &[f64], t_now: f64) -> Result<Vec<f64>> {
        if x.len() != self.rows {
            return Err(McaError::DimensionMismatch {
                what: "forward input",
                expected: self.rows,
                got: x.len(),
            });
        }
        self.before_matvec(t_now)?;
        let mut xq = x.to_vec();
        fake_quantize(&mut xq, self.settings.dac_bits)?;
        let mut y = self.raw_forward(&xq);
        fake_quantize(&mut y, self.settings.adc_bits)?;
        Ok(y)
    }

    pub fn backward(&mut self, delta: &[f64], t_now: f64) -> Result<Vec<f64>> {
        if delta.len() != self.cols {
            return Err(McaError::DimensionMismatch {
                what: "backward input",
                expected: self.cols,
                got: delta.len(),
            });
        }
        self.before_matvec(t_now)?;
        let mut dq = delta.to_vec();
        fake_quantize(&mut dq, self.settings.dac_bits)?;
        let mut out = self.raw_backward(&dq);
        fake_quantize(&mut out, self.settings.adc_bits)?;
        Ok(out)
    }

    /// Applies `|p|` blind pulses to synapse `(i, j)`.
    ///
    /// Differential: SET pulses on `Gp` for `p > 0`, on `Gn` for `p < 0`.
    /// Reference: SET pulses for `p > 0`, a single RESET for `p < 0`.
    pub fn program_pulses(&mut self, i: usize, j: usize, p: i64, t_now: f64) -> Result<()> {
        let s = self.index(i, j)?;
        if p == 0 {
            return Err(McaError::Contract("program_pulses needs |p| >= 1".into()));
        }
        self.program_synapse(s, p, t_now);
        Ok(())
    }

    pub(crate) fn program_synapse(&mut self, s: usize, p: i64, t_now: f64) {
        let n = p.unsigned_abs();
        match self.settings.scheme {
            SynapseScheme::Differential => {
                let k = if p > 0 { 2 * s } else { 2 * s + 1 };
                for _ in 0..n {
                    self.set_pulse(k, t_now);
                }
            }
            SynapseScheme::Reference(_) => {
                if p > 0 {
                    for _ in 0..n {
                        self.set_pulse(s, t_now);
                    }
                } else {
                    self.reset_pulse(s, t_now);
                }
            }
        }
        self.pending.push(s);
    }

    fn set_pulse(&mut self, k: usize, t_now: f64) {
        let d = &self.devices[k];
        self.devices[k] = self.model.apply_set_pulse(d, d.pulse_count, t_now);
        self.counters.set_pulses += 1;
    }

    fn reset_pulse(&mut self, k: usize, t_now: f64) {
        let d = &self.devices[k];
        self.devices[k] = self.model.apply_reset_pulse(d, d.pulse_count, t_now);
        self.counters.reset_pulses += 1;
    }

    /// Whether any synapse was programmed since the last [`Self::after_update`].
    pub fn has_pending(&self) -> bool {
        !self.pending.is_empty()
    }

    /// End of a training example's update phase: lets the read policy refresh
    /// the cache. `network_programmed` is true when any array of the network
    /// was programmed during the example.
    pub fn after_update(&mut self, t_now: f64, network_programmed: bool) -> Result<()> {
        let mut programmed = std::mem::take(&mut self.pending);
        programmed.sort_unstable();
        programmed.dedup();
        let action = self
            .policy
            .after_update(&programmed, self.n_synapses(), network_programmed);
        self.apply_read_action(action, t_now)
    }

    fn refresh_range(
        &mut self,
        policy: &RefreshPolicy,
        synapses: impl Iterator<Item = usize>,
        t_now: f64,
    ) -> Result<RefreshReport> {
        if self.settings.scheme != SynapseScheme::Differential {
            return Err(McaError::Contract("weight refresh needs a differential array".into()));
        }
        let mut rep = RefreshReport::default();
        for s in synapses {
            rep.checked += 1;
            let Some(plan) = policy.decide(self.cache[2 * s], self.cache[2 * s + 1]) else {
                continue;
            };
            self.reset_pulse(2 * s, t_now);
            self.reset_pulse(2 * s + 1, t_now);
            let k = if plan.on_gp { 2 * s } else { 2 * s + 1 };
            for _ in 0..plan.set_pulses {
                self.set_pulse(k, t_now);
            }
            rep.refreshed += 1;
            rep.reset_pulses += 2;
            rep.set_pulses += plan.set_pulses as u64;
            self.read_synapse(s, t_now)?;
        }
        self.counters.refresh_events += rep.refreshed;
        Ok(rep)
    }

    /// Full refresh sweep over the array.
    pub fn refresh(&mut self, policy: &RefreshPolicy, t_now: f64) -> Result<RefreshReport> {
        self.refresh_range(policy, 0..self.n_synapses(), t_now)
    }

    /// Called once per training example. Runs a full sweep every `period`
    /// examples, or with `distributed` set, checks `ceil(n / period)` synapses
    /// per example in round-robin order.
    pub fn refresh_tick(&mut self, policy: &RefreshPolicy, t_now: f64) -> Result<Option<RefreshReport>> {
        if !policy.enabled || policy.period == 0 {
            return Ok(None);
        }
        self.refresh_clock += 1;
        if policy.distributed {
            let n = self.n_synapses();
            let chunk = n.div_ceil(policy.period as usize);
            let start = self.refresh_cursor;
            self.refresh_cursor = (start + chunk) % n;
            let rep = self.refresh_range(policy, (0..chunk).map(|o| (start + o) % n), t_now)?;
            Ok(Some(rep))
        } else if self.refresh_clock % policy.period == 0 {
            Ok(Some(self.refresh(policy, t_now)?))
        } else {
            Ok(None)
        }
    }

    /// Sum over devices of programming pulses applied so far.
    pub fn total_device_pulses(&self) -> u64 {
        self.devices.iter().map(|d| d.pulse_count).sum()
    }
}
