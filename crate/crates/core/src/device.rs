//! Stochastic behavioral model of a single phase-change memory device.
//!
//! The model covers four effects:
//!
//! * accumulative SET programming with a state-dependent mean increment
//!   `mu0 * exp(-g / g_sat)` and a relative spread `sigma_rel` (floored at
//!   `sigma_floor`), truncated so a SET never lowers the conductance;
//! * abrupt RESET to a low-conductance level drawn from
//!   `Normal(reset_mean, reset_std)`;
//! * power-law drift `G(t) = G_prog * (dt / t0_ref)^(-nu)` whose clock restarts
//!   at every programming event, with `nu` resampled at that event;
//! * multiplicative Gaussian read noise.
//!
//! All draws go through [`crate::rng`], keyed by `(seed, device_id, event)`.
//! Conductances are in µS and times in s throughout.

use serde::{Deserialize, Serialize};

use crate::error::{McaError, Result};
use crate::rng::{self, Stream};

/// State of one device.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeviceState {
    /// Conductance set by the last programming event, µS.
    pub g_prog: f64,
    /// Simulation time of the last programming event, s.
    pub t_prog: f64,
    /// Drift exponent sampled at the last programming event.
    pub nu: f64,
    /// Number of programming pulses applied so far. Doubles as the event index
    /// of the next programming draw.
    pub pulse_count: u64,
    pub device_id: u64,
}

impl DeviceState {
    pub fn new(device_id: u64, g_prog: f64, t_prog: f64, nu: f64) -> Self {
        Self {
            g_prog,
            t_prog,
            nu,
            pulse_count: 0,
            device_id,
        }
    }
}

/// Parameters of the device model. Defaults are calibration placeholders,
/// chosen so one SET pulse near 1.8 µS moves the conductance by about 0.77 µS.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DeviceModelParams {
    pub mu0: f64,
    pub g_sat: f64,
    pub g_max: f64,
    pub sigma_rel: f64,
    pub sigma_floor: f64,
    pub reset_mean: f64,
    pub reset_std: f64,
    pub nu_mean: f64,
    pub nu_std: f64,
    pub t0_ref: f64,
    pub read_noise_frac: f64,
}

impl Default for DeviceModelParams {
    fn default() -> Self {
        Self {
            mu0: 1.1,
            g_sat: 5.0,
            g_max: 12.0,
            sigma_rel: 0.4,
            sigma_floor: 0.05,
            reset_mean: 0.1,
            reset_std: 0.05,
            nu_mean: 0.05,
            nu_std: 0.02,
            t0_ref: 1.0,
            read_noise_frac: 0.02,
        }
    }
}

impl DeviceModelParams {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("mu0", self.mu0),
            ("g_sat", self.g_sat),
            ("g_max", self.g_max),
            ("sigma_rel", self.sigma_rel),
            ("sigma_floor", self.sigma_floor),
            ("reset_mean", self.reset_mean),
            ("reset_std", self.reset_std),
            ("nu_mean", self.nu_mean),
            ("nu_std", self.nu_std),
            ("t0_ref", self.t0_ref),
            ("read_noise_frac", self.read_noise_frac),
        ];
        let mut bad: Vec<String> = fields
            .iter()
            .filter(|(_, v)| !v.is_finite() || *v < 0.0)
            .map(|(k, v)| format!("{k} = {v} must be finite and >= 0"))
            .collect();
        if !(self.mu0 > 0.0) {
            bad.push("mu0 must be > 0".into());
        }
        if !(self.g_sat > 0.0) {
            bad.push("g_sat must be > 0".into());
        }
        if !(self.t0_ref > 0.0) {
            bad.push("t0_ref must be > 0".into());
        }
        if !(self.g_max > self.reset_mean) {
            bad.push("g_max must exceed reset_mean".into());
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(McaError::InvalidParams(bad.join("; ")))
        }
    }

    /// Mean SET increment at conductance `g`.
    #[inline]
    pub fn set_mean(&self, g: f64) -> f64 {
        self.mu0 * (-g / self.g_sat).exp()
    }

    /// Standard deviation of the SET increment at conductance `g`.
    #[inline]
    pub fn set_std(&self, g: f64) -> f64 {
        (self.sigma_rel * self.set_mean(g)).max(self.sigma_floor)
    }

    /// Same parameters with drift switched off.
    pub fn without_drift(&self) -> Self {
        Self {
            nu_mean: 0.0,
            nu_std: 0.0,
            ..self.clone()
        }
    }
}

/// A validated parameter set bound to the global seed.
#[derive(Clone, Debug, PartialEq)]
pub struct PcmModel {
    params: DeviceModelParams,
    seed: u64,
}

impl PcmModel {
    pub fn new(params: DeviceModelParams, seed: u64) -> Result<Self> {
        params.validate()?;
        Ok(Self { params, seed })
    }

    pub fn params(&self) -> &DeviceModelParams {
        &self.params
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    fn sample_nu(&self, device_id: u64, event: u64) -> f64 {
        let p = &self.params;
        if p.nu_std == 0.0 {
            return p.nu_mean;
        }
        let z = rng::normal(self.seed, Stream::DriftExponent, device_id, event);
        (p.nu_mean + p.nu_std * z).max(0.0)
    }

    fn restart(&self, dev: &DeviceState, g: f64, event_index: u64, t_now: f64) -> DeviceState {
        DeviceState {
            g_prog: g.clamp(0.0, self.params.g_max),
            t_prog: t_now,
            nu: self.sample_nu(dev.device_id, event_index),
            pulse_count: dev.pulse_count + 1,
            device_id: dev.device_id,
        }
    }

    /// One SET pulse.
    pub fn apply_set_pulse(&self, dev: &DeviceState, event_index: u64, t_now: f64) -> DeviceState {
        self.apply_set_pulse_scaled(dev, 1.0, event_index, t_now)
    }

    /// SET pulse with reduced programming strength: mean and spread of the
    /// increment are scaled by `amplitude` in (0, 1]. Used by
    /// [`PcmModel::iterative_program`] close to the target.
    pub fn apply_set_pulse_scaled(
        &self,
        dev: &DeviceState,
        amplitude: f64,
        event_index: u64,
        t_now: f64,
    ) -> DeviceState {
        let p = &self.params;
        let g = dev.g_prog;
        let z = rng::normal(self.seed, Stream::SetIncrement, dev.device_id, event_index);
        let dg = (amplitude * (p.set_mean(g) + p.set_std(g) * z)).max(0.0);
        self.restart(dev, g + dg, event_index, t_now)
    }

    /// One RESET pulse.
    pub fn apply_reset_pulse(&self, dev: &DeviceState, event_index: u64, t_now: f64) -> DeviceState {
        let p = &self.params;
        let g = if p.reset_std == 0.0 {
            p.reset_mean
        } else {
            let z = rng::normal(self.seed, Stream::ResetLevel, dev.device_id, event_index);
            p.reset_mean + p.reset_std * z
        };
        self.restart(dev, g, event_index, t_now)
    }

    /// Conductance after drift, without read noise.
    #[inline]
    pub fn drifted(&self, dev: &DeviceState, t_now: f64) -> f64 {
        let t0 = self.params.t0_ref;
        let dt = t_now - dev.t_prog;
        if dt <= t0 || dev.nu == 0.0 {
            dev.g_prog
        } else {
            dev.g_prog * (-dev.nu * (dt / t0).ln()).exp()
        }
    }

    /// Reads the device at `t_now`. Pure: the state is not modified.
    pub fn read_conductance(&self, dev: &DeviceState, t_now: f64, event_index: u64) -> Result<f64> {
        if t_now < dev.t_prog {
            return Err(McaError::Contract(format!(
                "device {} read at t = {t_now} s before its programming time {} s",
                dev.device_id, dev.t_prog
            )));
        }
        Ok(self.read_unchecked(dev, t_now, Stream::ReadNoise, event_index))
    }

    /// Read without the time check; `stream` selects the noise substream.
    #[inline]
    pub(crate) fn read_unchecked(&self, dev: &DeviceState, t_now: f64, stream: Stream, event_index: u64) -> f64 {
        let g = self.drifted(dev, t_now);
        let frac = self.params.read_noise_frac;
        let noisy = if frac == 0.0 {
            g
        } else {
            g * (1.0 + frac * rng::normal(self.seed, stream, dev.device_id, event_index))
        };
        noisy.clamp(0.0, self.params.g_max)
    }

    /// Program-and-verify toward `target` (µS).
    ///
    /// Verify reads are noiseless and taken at `t_prog + t0_ref`, so they
    /// return `g_prog`. Below the window a SET pulse is applied whose strength
    /// is scaled down to the remaining gap (`gap / mean increment`, within
    /// [1/16, 1]), standing in for the programming-current adaptation of the
    /// hardware. Above the window the device is RESET and the staircase
    /// restarts in the same iteration.
    pub fn iterative_program(
        &self,
        dev: &DeviceState,
        target: f64,
        margin: f64,
        max_iter: u32,
        t_now: f64,
    ) -> Result<ProgramOutcome> {
        if !(0.0..=self.params.g_max).contains(&target) {
            return Err(McaError::Contract(format!(
                "program target {target} µS outside [0, {}]",
                self.params.g_max
            )));
        }
        if !(margin > 0.0) {
            return Err(McaError::InvalidParams(format!("margin {margin} must be > 0")));
        }
        let mut state = *dev;
        let mut set_pulses = 0u32;
        let mut reset_pulses = 0u32;
        let mut iterations = 0u32;
        let mut converged = false;
        loop {
            let g = state.g_prog;
            if (g - target).abs() <= margin {
                converged = true;
                break;
            }
            if iterations == max_iter {
                break;
            }
            iterations += 1;
            if g > target + margin {
                state = self.apply_reset_pulse(&state, state.pulse_count, t_now);
                reset_pulses += 1;
            }
            let gap = target - state.g_prog;
            if gap <= margin {
                // A RESET alone may land inside the window.
                continue;
            }
            let amplitude = (gap / self.params.set_mean(state.g_prog)).clamp(1.0 / 16.0, 1.0);
            state = self.apply_set_pulse_scaled(&state, amplitude, state.pulse_count, t_now);
            set_pulses += 1;
        }
        Ok(ProgramOutcome {
            state,
            iterations,
            set_pulses,
            reset_pulses,
            converged,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ProgramOutcome {
    pub state: DeviceState,
    pub iterations: u32,
    pub set_pulses: u32,
    pub reset_pulses: u32,
    pub converged: bool,
}

/// Least-squares drift exponent: `-slope` of `ln G` against `ln t`.
pub fn fit_drift_exponent(series: &[(f64, f64)]) -> Result<f64> {
    if series.len() < 3 {
        return Err(McaError::InvalidParams(format!(
            "drift fit needs at least 3 points, got {}",
            series.len()
        )));
    }
    if let Some(i) = series.iter().position(|&(t, g)| !(t > 0.0 && g > 0.0)) {
        return Err(McaError::LogDomain {
            index: i,
            value: series[i].0.min(series[i].1),
        });
    }
    let n = series.len() as f64;
    let (mut sx, mut sy) = (0.0, 0.0);
    for &(t, g) in series {
        sx += t.ln();
        sy += g.ln();
    }
    let (mx, my) = (sx / n, sy / n);
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for &(t, g) in series {
        let dx = t.ln() - mx;
        sxy += dx * (g.ln() - my);
        sxx += dx * dx;
    }
    if sxx == 0.0 {
        return Err(McaError::InvalidParams("drift fit needs distinct times".into()));
    }
    Ok(-sxy / sxx)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CharacterizationRow {
    pub pulse_index: usize,
    pub mean_us: f64,
    pub std_us: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CharacterizationTable {
    pub rows: Vec<CharacterizationRow>,
    pub n_devices: usize,
    pub seed: u64,
    pub init_mean_us: f64,
    pub init_std_us: f64,
    /// Pulse amplitude and width of the protocol being mimicked; metadata only.
    pub pulse_amplitude_ua: f64,
    pub pulse_width_ns: f64,
    /// Slack allowed on the monotonicity of `mean_us`: four standard errors of
    /// the initial distribution.
    pub mean_tolerance_us: f64,
    pub params: DeviceModelParams,
}

impl CharacterizationTable {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("pulse_index,mean_uS,std_uS\n");
        for r in &self.rows {
            s.push_str(&format!("{},{},{}\n", r.pulse_index, r.mean_us, r.std_us));
        }
        s
    }
}

pub const CHARACTERIZE_INIT_MEAN: f64 = 0.06;
pub const CHARACTERIZE_INIT_STD: f64 = 0.01;

/// Applies `n_pulses` SET pulses (one per second) to `n_devices` devices that
/// start near 0.06 µS and tabulates the read statistics after each pulse.
pub fn characterize(
    params: &DeviceModelParams,
    n_devices: usize,
    n_pulses: usize,
    seed: u64,
) -> Result<CharacterizationTable> {
    if n_devices == 0 {
        return Err(McaError::InvalidParams("n_devices must be >= 1".into()));
    }
    let model = PcmModel::new(params.clone(), seed)?;
    let t0 = params.t0_ref;
    let mut devices: Vec<DeviceState> = (0..n_devices as u64)
        .map(|id| {
            let z = rng::normal(seed, Stream::Characterize, id, 0);
            let g = (CHARACTERIZE_INIT_MEAN + CHARACTERIZE_INIT_STD * z).max(0.0);
            DeviceState::new(id, g, 0.0, params.nu_mean)
        })
        .collect();
    let mut rows = Vec::with_capacity(n_pulses + 1);
    for k in 0..=n_pulses {
        if k > 0 {
            let t = k as f64;
            for d in devices.iter_mut() {
                *d = model.apply_set_pulse(d, d.pulse_count, t);
            }
        }
        let (mut s, mut s2) = (0.0, 0.0);
        for d in &devices {
            let g = model.read_unchecked(d, d.t_prog + t0, Stream::ReadNoise, k as u64);
            s += g;
            s2 += g * g;
        }
        let n = n_devices as f64;
        let mean = s / n;
        let var = if n_devices > 1 {
            ((s2 - n * mean * mean) / (n - 1.0)).max(0.0)
        } else {
            0.0
        };
        rows.push(CharacterizationRow {
            pulse_index: k,
            mean_us: mean,
            std_us: var.sqrt(),
        });
    }
    Ok(CharacterizationTable {
        rows,
        n_devices,
        seed,
        init_mean_us: CHARACTERIZE_INIT_MEAN,
        init_std_us: CHARACTERIZE_INIT_STD,
        pulse_amplitude_ua: 90.0,
        pulse_width_ns: 50.0,
        mean_tolerance_us: 4.0 * CHARACTERIZE_INIT_STD / (n_devices as f64).sqrt(),
        params: params.clone(),
    })
}
