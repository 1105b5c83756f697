//! Fitting device-model parameters to measurements.
//!
//! Two kinds of input are understood: SET staircases (`device_id,
//! pulse_index,g_uS`, one read after every pulse) and drift series
//! (`device_id,t_s,g_uS`, reads of idle devices with `t_s` counted from the
//! programming event).

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::device::{fit_drift_exponent, DeviceModelParams};
use crate::error::{McaError, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Reading {
    pub device_id: u64,
    /// Pulse index or time since programming, depending on the file.
    pub x: f64,
    pub g_us: f64,
}

fn parse_csv(text: &str, header: &str, what: &str) -> Result<Vec<Reading>> {
    let mut lines = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty() && !l.starts_with('#'));
    match lines.next() {
        Some((_, h)) if h.trim().eq_ignore_ascii_case(header) => {}
        other => {
            return Err(McaError::Data(format!(
                "{what}: expected header `{header}`, found `{}`",
                other.map_or("", |(_, h)| h)
            )))
        }
    }
    lines
        .map(|(n, line)| {
            let f: Vec<&str> = line.split(',').map(str::trim).collect();
            let bad = || McaError::Data(format!("{what}: line {} is malformed: `{line}`", n + 1));
            if f.len() != 3 {
                return Err(bad());
            }
            let r = Reading {
                device_id: f[0].parse().map_err(|_| bad())?,
                x: f[1].parse().map_err(|_| bad())?,
                g_us: f[2].parse().map_err(|_| bad())?,
            };
            if !(r.x.is_finite() && r.g_us.is_finite()) {
                return Err(bad());
            }
            Ok(r)
        })
        .collect()
}

pub const PULSE_HEADER: &str = "device_id,pulse_index,g_uS";
pub const DRIFT_HEADER: &str = "device_id,t_s,g_uS";

pub fn parse_pulse_csv(text: &str) -> Result<Vec<Reading>> {
    parse_csv(text, PULSE_HEADER, "pulse CSV")
}

pub fn parse_drift_csv(text: &str) -> Result<Vec<Reading>> {
    parse_csv(text, DRIFT_HEADER, "drift CSV")
}

fn by_device(readings: &[Reading]) -> BTreeMap<u64, Vec<(f64, f64)>> {
    let mut m: BTreeMap<u64, Vec<(f64, f64)>> = BTreeMap::new();
    for r in readings {
        m.entry(r.device_id).or_default().push((r.x, r.g_us));
    }
    for v in m.values_mut() {
        v.sort_by(|a, b| a.0.total_cmp(&b.0));
    }
    m
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SetFit {
    pub mu0: f64,
    pub g_sat: f64,
    pub sigma_rel: f64,
    /// Smallest binned spread; an upper bound of the true floor.
    pub sigma_floor: f64,
    pub increments: usize,
    pub bins: usize,
}

/// Fits `mean(dG) = mu0 exp(-g / g_sat)` and `std(dG) = max(sigma_rel mean,
/// sigma_floor)` to the increments between consecutive pulses.
///
/// Increments are sorted by the conductance they start from and split into
/// `n_bins` equal-count bins; `ln` of the bin means is regressed on the bin
/// conductances with the bin counts as weights.
pub fn fit_set_curve(readings: &[Reading], n_bins: usize) -> Result<SetFit> {
    let mut inc: Vec<(f64, f64)> = Vec::new();
    for series in by_device(readings).values() {
        for w in series.windows(2) {
            if w[1].0 - w[0].0 == 1.0 {
                inc.push((w[0].1, w[1].1 - w[0].1));
            }
        }
    }
    if n_bins < 2 || inc.len() < 2 * n_bins {
        return Err(McaError::InvalidParams(format!(
            "{} increments are too few for {n_bins} bins",
            inc.len()
        )));
    }
    inc.sort_by(|a, b| a.0.total_cmp(&b.0));
    let size = inc.len().div_ceil(n_bins);
    let mut stats = Vec::new();
    for chunk in inc.chunks(size) {
        let n = chunk.len() as f64;
        let g = chunk.iter().map(|c| c.0).sum::<f64>() / n;
        let m = chunk.iter().map(|c| c.1).sum::<f64>() / n;
        let var = chunk.iter().map(|c| (c.1 - m).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
        if m > 0.0 {
            stats.push((g, m, var.sqrt(), n));
        }
    }
    if stats.len() < 2 {
        return Err(McaError::InvalidParams(
            "fewer than two bins with a positive mean increment".into(),
        ));
    }
    let w: f64 = stats.iter().map(|s| s.3).sum();
    let gx = stats.iter().map(|s| s.3 * s.0).sum::<f64>() / w;
    let ly = stats.iter().map(|s| s.3 * s.1.ln()).sum::<f64>() / w;
    let sxy: f64 = stats.iter().map(|s| s.3 * (s.0 - gx) * (s.1.ln() - ly)).sum();
    let sxx: f64 = stats.iter().map(|s| s.3 * (s.0 - gx).powi(2)).sum();
    let slope = sxy / sxx;
    if !(slope < 0.0) {
        return Err(McaError::InvalidParams(format!(
            "mean increment does not decrease with conductance (slope {slope})"
        )));
    }
    let mut ratios: Vec<f64> = stats.iter().map(|s| s.2 / s.1).collect();
    ratios.sort_by(f64::total_cmp);
    // The proportional part dominates where increments are large.
    let lower = &ratios[..ratios.len().div_ceil(2)];
    let sigma_rel = lower[lower.len() / 2];
    let sigma_floor = stats.iter().map(|s| s.2).fold(f64::INFINITY, f64::min);
    Ok(SetFit {
        mu0: (ly - slope * gx).exp(),
        g_sat: -1.0 / slope,
        sigma_rel,
        sigma_floor,
        increments: inc.len(),
        bins: stats.len(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DriftFit {
    pub nu_mean: f64,
    pub nu_std: f64,
    pub per_device: BTreeMap<u64, f64>,
}

/// Per-device drift exponents and their mean and sample spread. Reads at
/// `t_s <= t0_ref` are dropped, since the power law starts at `t0_ref`.
pub fn fit_drift(readings: &[Reading], t0_ref: f64) -> Result<DriftFit> {
    let mut per_device = BTreeMap::new();
    for (id, series) in by_device(readings) {
        let pts: Vec<(f64, f64)> = series.into_iter().filter(|&(t, _)| t > t0_ref).collect();
        per_device.insert(id, fit_drift_exponent(&pts)?);
    }
    if per_device.is_empty() {
        return Err(McaError::InvalidParams("drift CSV holds no devices".into()));
    }
    let n = per_device.len() as f64;
    let nu_mean = per_device.values().sum::<f64>() / n;
    let nu_std = if per_device.len() > 1 {
        (per_device.values().map(|v| (v - nu_mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    Ok(DriftFit {
        nu_mean,
        nu_std,
        per_device,
    })
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub set: Option<SetFit>,
    pub drift: Option<DriftFit>,
}

/// Replaces the fitted fields of `base`; the rest are kept.
pub fn calibrate(
    base: &DeviceModelParams,
    pulses: Option<&[Reading]>,
    drift: Option<&[Reading]>,
    n_bins: usize,
) -> Result<(DeviceModelParams, CalibrationReport)> {
    let mut p = base.clone();
    let mut report = CalibrationReport::default();
    if let Some(r) = pulses {
        let f = fit_set_curve(r, n_bins)?;
        p.mu0 = f.mu0;
        p.g_sat = f.g_sat;
        p.sigma_rel = f.sigma_rel;
        p.sigma_floor = f.sigma_floor;
        report.set = Some(f);
    }
    if let Some(r) = drift {
        let f = fit_drift(r, base.t0_ref)?;
        p.nu_mean = f.nu_mean;
        p.nu_std = f.nu_std;
        report.drift = Some(f);
    }
    p.validate()?;
    Ok((p, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::device::{DeviceState, PcmModel};

    fn staircase(params: &DeviceModelParams, devices: u64, pulses: u64) -> Vec<Reading> {
        let model = PcmModel::new(params.clone(), 9).unwrap();
        let mut out = Vec::new();
        for id in 0..devices {
            let mut d = DeviceState::new(id, 0.05, 0.0, 0.0);
            out.push(Reading {
                device_id: id,
                x: 0.0,
                g_us: d.g_prog,
            });
            for k in 1..=pulses {
                d = model.apply_set_pulse(&d, d.pulse_count, k as f64);
                out.push(Reading {
                    device_id: id,
                    x: k as f64,
                    g_us: d.g_prog,
                });
            }
        }
        out
    }

    #[test]
    fn recovers_set_curve() {
        let truth = DeviceModelParams::default();
        let fit = fit_set_curve(&staircase(&truth, 3000, 20), 20).unwrap();
        assert!((fit.mu0 / truth.mu0 - 1.0).abs() < 0.05, "{fit:?}");
        assert!((fit.g_sat / truth.g_sat - 1.0).abs() < 0.1, "{fit:?}");
        assert!((fit.sigma_rel / truth.sigma_rel - 1.0).abs() < 0.15, "{fit:?}");
        assert!(fit.sigma_floor >= truth.sigma_floor * 0.9);
    }

    #[test]
    fn drift_fit_is_exact_on_noiseless_series() {
        let nus = [0.03, 0.05, 0.08];
        let mut r = Vec::new();
        for (id, nu) in nus.iter().enumerate() {
            for t in [0.5, 2.0, 10.0, 100.0, 1e4] {
                let g = 4.0 * (t / 1.0f64).powf(-nu);
                r.push(Reading {
                    device_id: id as u64,
                    x: t,
                    g_us: g,
                });
            }
        }
        let f = fit_drift(&r, 1.0).unwrap();
        for (id, nu) in nus.iter().enumerate() {
            assert!((f.per_device[&(id as u64)] - nu).abs() < 1e-12);
        }
        assert!((f.nu_mean - 0.16 / 3.0).abs() < 1e-12);
        assert!((f.nu_std - 0.025166114784235832).abs() < 1e-12);
    }

    #[test]
    fn csv_parsing() {
        let ok = "device_id,pulse_index,g_uS\n0,0,0.1\n0,1,0.9\n";
        assert_eq!(parse_pulse_csv(ok).unwrap().len(), 2);
        assert!(parse_drift_csv(ok).is_err());
        assert!(parse_pulse_csv("device_id,pulse_index,g_uS\n0,x,1\n").is_err());
        assert!(parse_pulse_csv("device_id,pulse_index,g_uS\n0,1\n").is_err());
    }

    #[test]
    fn calibrate_keeps_unfitted_fields() {
        let base = DeviceModelParams {
            reset_mean: 0.2,
            ..Default::default()
        };
        let r = staircase(&DeviceModelParams::default(), 500, 20);
        let (p, rep) = calibrate(&base, Some(&r), None, 10).unwrap();
        assert_eq!(p.reset_mean, 0.2);
        assert_eq!(p.nu_mean, base.nu_mean);
        assert!(rep.set.is_some() && rep.drift.is_none());
    }
}
