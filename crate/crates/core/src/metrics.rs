//! Accuracy, bits per character, Fréchet distance and event cost totals.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::counters::EventCounters;
use crate::error::{check_finite, McaError, Result};

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (k, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = k;
        }
    }
    best
}

/// Fraction of rows whose argmax equals the label.
pub fn accuracy(predictions: &[Vec<f64>], labels: &[usize]) -> Result<f64> {
    if predictions.len() != labels.len() {
        return Err(McaError::DimensionMismatch {
            what: "accuracy labels",
            expected: predictions.len(),
            got: labels.len(),
        });
    }
    if predictions.is_empty() {
        return Err(McaError::InvalidParams("accuracy of an empty set".into()));
    }
    let hits = predictions.iter().zip(labels).filter(|(p, &l)| argmax(p) == l).count();
    Ok(hits as f64 / labels.len() as f64)
}

/// Mean of `-log2 p[target]` over steps; `targets` are one-hot rows.
pub fn bpc(probabilities: &[Vec<f64>], targets: &[Vec<f64>]) -> Result<f64> {
    if probabilities.len() != targets.len() {
        return Err(McaError::DimensionMismatch {
            what: "bpc targets",
            expected: probabilities.len(),
            got: targets.len(),
        });
    }
    if probabilities.is_empty() {
        return Err(McaError::InvalidParams(
            "bits per character of an empty sequence".into(),
        ));
    }
    let mut total = 0.0;
    for (step, (p, t)) in probabilities.iter().zip(targets).enumerate() {
        if p.len() != t.len() {
            return Err(McaError::DimensionMismatch {
                what: "bpc row",
                expected: p.len(),
                got: t.len(),
            });
        }
        let s: f64 = p.iter().sum();
        if (s - 1.0).abs() > 1e-6 {
            return Err(McaError::InvalidParams(format!(
                "probabilities at step {step} sum to {s}"
            )));
        }
        let k = argmax(t);
        if p[k] <= 0.0 {
            return Err(McaError::LogDomain {
                index: step,
                value: p[k],
            });
        }
        total -= p[k].log2();
    }
    Ok(total / probabilities.len() as f64)
}

fn moments(feats: &[Vec<f64>], what: &'static str) -> Result<(DVector<f64>, DMatrix<f64>)> {
    if feats.len() < 2 {
        return Err(McaError::InvalidParams(format!("{what} needs at least 2 samples")));
    }
    let d = feats[0].len();
    let n = feats.len();
    let mut x = DMatrix::zeros(n, d);
    for (r, f) in feats.iter().enumerate() {
        if f.len() != d {
            return Err(McaError::DimensionMismatch {
                what,
                expected: d,
                got: f.len(),
            });
        }
        check_finite(what, f)?;
        for (c, &v) in f.iter().enumerate() {
            x[(r, c)] = v;
        }
    }
    let mu = x.row_mean().transpose();
    for mut row in x.row_iter_mut() {
        row -= mu.transpose();
    }
    let cov = (x.transpose() * &x) / (n as f64 - 1.0);
    Ok((mu, cov))
}

/// Square root of a symmetric positive semi-definite matrix; negative
/// eigenvalues from round-off are clipped at zero.
fn sqrtm_psd(m: &DMatrix<f64>) -> (DMatrix<f64>, f64) {
    let sym = (m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let roots = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    let trace = roots.sum();
    let s = &eig.eigenvectors * DMatrix::from_diagonal(&roots) * eig.eigenvectors.transpose();
    (s, trace)
}

/// `|mu_a - mu_b|^2 + Tr(C_a + C_b - 2 (C_a C_b)^(1/2))` with sample means and
/// unbiased covariances. `Tr (C_a C_b)^(1/2)` is computed as the trace of the
/// square root of the symmetric matrix `C_a^(1/2) C_b C_a^(1/2)`, which has
/// the same eigenvalues.
pub fn frechet_distance(feats_a: &[Vec<f64>], feats_b: &[Vec<f64>]) -> Result<f64> {
    let (mu_a, ca) = moments(feats_a, "features a")?;
    let (mu_b, cb) = moments(feats_b, "features b")?;
    if mu_a.len() != mu_b.len() {
        return Err(McaError::DimensionMismatch {
            what: "feature dimension",
            expected: mu_a.len(),
            got: mu_b.len(),
        });
    }
    let (sa, _) = sqrtm_psd(&ca);
    let (_, tr_cross) = sqrtm_psd(&(&sa * &cb * &sa));
    let dmu = (&mu_a - &mu_b).norm_squared();
    Ok((dmu + ca.trace() + cb.trace() - 2.0 * tr_cross).max(0.0))
}

/// Energy and time per event type.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct UnitCost {
    pub set_pulse: f64,
    pub reset_pulse: f64,
    pub device_read: f64,
    pub chi_write: f64,
    pub refresh_event: f64,
}

impl UnitCost {
    pub fn validate(&self) -> Result<()> {
        let v = [
            self.set_pulse,
            self.reset_pulse,
            self.device_read,
            self.chi_write,
            self.refresh_event,
        ];
        if v.iter().any(|c| !(c.is_finite() && *c >= 0.0)) {
            return Err(McaError::InvalidParams(
                "unit costs must be finite and non-negative".into(),
            ));
        }
        Ok(())
    }

    fn apply(&self, c: &EventCounters) -> CostLine {
        let programming = c.set_pulses as f64 * self.set_pulse + c.reset_pulses as f64 * self.reset_pulse;
        let reads = c.device_reads as f64 * self.device_read;
        let digital = c.chi_writes as f64 * self.chi_write;
        let refresh = c.refresh_events as f64 * self.refresh_event;
        CostLine {
            programming,
            reads,
            digital,
            refresh,
            total: programming + reads + digital + refresh,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CostLine {
    pub programming: f64,
    pub reads: f64,
    pub digital: f64,
    pub refresh: f64,
    pub total: f64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CostUnits {
    pub energy_j: UnitCost,
    pub time_s: UnitCost,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CostReport {
    pub energy_j: CostLine,
    pub time_s: CostLine,
    /// Per training example when the example count is known.
    pub energy_per_example_j: Option<f64>,
    pub time_per_example_s: Option<f64>,
}

impl CostReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("stage,energy_j,time_s\n");
        for (name, e, t) in [
            ("programming", self.energy_j.programming, self.time_s.programming),
            ("reads", self.energy_j.reads, self.time_s.reads),
            ("digital", self.energy_j.digital, self.time_s.digital),
            ("refresh", self.energy_j.refresh, self.time_s.refresh),
            ("total", self.energy_j.total, self.time_s.total),
        ] {
            s.push_str(&format!("{name},{e:e},{t:e}\n"));
        }
        s
    }
}

pub fn cost_report(counters: &EventCounters, units: &CostUnits, examples: Option<u64>) -> Result<CostReport> {
    units.energy_j.validate()?;
    units.time_s.validate()?;
    let energy = units.energy_j.apply(counters);
    let time = units.time_s.apply(counters);
    let per = |v: f64| examples.filter(|&n| n > 0).map(|n| v / n as f64);
    Ok(CostReport {
        energy_j: energy,
        time_s: time,
        energy_per_example_j: per(energy.total),
        time_per_example_s: per(time.total),
    })
}
