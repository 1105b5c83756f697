//! Experiment configuration, read from TOML.
//!
//! Every key has a default, so an empty file is a valid configuration. Unknown
//! keys are rejected and all of them are reported at once. Widths of 0 mean
//! "no quantization", a pulse cap or limit of 0 means "none", and a read subset
//! of 0 means "all synapses".
//!
//! Precedence: built-in defaults, then the profile, then the file, then
//! command-line overrides.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::crossbar::{ArraySettings, InitSpec, ReferenceLevel, RefreshPolicy, SynapseScheme};
use crate::device::DeviceModelParams;
use crate::error::{McaError, Result};
use crate::nn::{activation, loss, store};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ArrayConfig {
    /// `differential` or `reference`.
    pub scheme: String,
    /// `array-mean` or a conductance in µS.
    pub reference_level: String,
    pub g_scale: f64,
    /// `[lo, hi]` in µS mapped onto the weight range; empty to use `g_scale`.
    pub conductance_range: Vec<f64>,
    pub dac_bits: u32,
    pub adc_bits: u32,
    pub read_policy: String,
    /// Per layer; 0 reads every synapse.
    pub read_subset: Vec<usize>,
    /// Weight bound per epoch; the last entry holds afterwards.
    pub weight_clip_schedule: Vec<f64>,
    pub init_mean: f64,
    pub init_std: f64,
    pub init_margin: f64,
    pub init_max_iter: u32,
}

impl Default for ArrayConfig {
    fn default() -> Self {
        Self {
            scheme: "differential".into(),
            reference_level: "array-mean".into(),
            g_scale: 8.0,
            conductance_range: Vec::new(),
            dac_bits: 8,
            adc_bits: 8,
            read_policy: "subset-round-robin".into(),
            read_subset: vec![785, 0],
            weight_clip_schedule: vec![1.0],
            init_mean: 1.6,
            init_std: 0.83,
            init_margin: 0.1,
            init_max_iter: 20,
        }
    }
}

fn opt_bits(b: u32) -> Option<u32> {
    (b != 0).then_some(b)
}

impl ArrayConfig {
    pub fn scheme(&self) -> Result<SynapseScheme> {
        match self.scheme.as_str() {
            "differential" => Ok(SynapseScheme::Differential),
            "reference" => {
                let level = if self.reference_level == "array-mean" {
                    ReferenceLevel::ArrayMean
                } else {
                    ReferenceLevel::Fixed(self.reference_level.parse().map_err(|_| {
                        McaError::Config(vec![format!(
                            "array.reference_level `{}` is neither `array-mean` nor a number",
                            self.reference_level
                        )])
                    })?)
                };
                Ok(SynapseScheme::Reference(level))
            }
            other => Err(McaError::Config(vec![format!(
                "array.scheme `{other}` must be `differential` or `reference`"
            )])),
        }
    }

    pub fn clip_for_epoch(&self, epoch: usize) -> f64 {
        let s = &self.weight_clip_schedule;
        s[(epoch.max(1) - 1).min(s.len() - 1)]
    }

    pub fn settings_for_layer(&self, layer: usize) -> Result<ArraySettings> {
        let subset = self.read_subset.get(layer).copied().unwrap_or(0);
        Ok(ArraySettings {
            scheme: self.scheme()?,
            g_scale: self.g_scale,
            weight_clip: self.clip_for_epoch(1),
            conductance_range: match self.conductance_range.as_slice() {
                [lo, hi] => Some((*lo, *hi)),
                _ => None,
            },
            dac_bits: opt_bits(self.dac_bits),
            adc_bits: opt_bits(self.adc_bits),
            read_policy: self.read_policy.clone(),
            read_subset: (subset != 0).then_some(subset),
        })
    }

    pub fn init_spec(&self) -> InitSpec {
        InitSpec {
            mean: self.init_mean,
            std: self.init_std,
            margin: self.init_margin,
            max_iter: self.init_max_iter,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    pub eta: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub eps_p: f64,
    pub eps_d: f64,
    /// Width of the low-precision outer product; 0 for full precision.
    pub update_bits: u32,
    /// Maximum pulses per synapse per flush; 0 for no cap.
    pub pulse_cap: u32,
    /// `example` or `batch`.
    pub flush: String,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            eta: 0.4,
            momentum: 0.0,
            batch_size: 1,
            eps_p: 0.096,
            eps_d: 0.096,
            update_bits: 0,
            pulse_cap: 0,
            flush: "example".into(),
        }
    }
}

impl OptimizerConfig {
    pub fn update_bits(&self) -> Option<u32> {
        opt_bits(self.update_bits)
    }
    pub fn pulse_cap(&self) -> Option<u32> {
        (self.pulse_cap != 0).then_some(self.pulse_cap)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LayerConfig {
    pub outputs: usize,
    pub activation: String,
    /// `crossbar` or `exact`.
    pub store: String,
}

impl Default for LayerConfig {
    fn default() -> Self {
        Self {
            outputs: 10,
            activation: "sigmoid".into(),
            store: "crossbar".into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkConfig {
    pub inputs: usize,
    pub bias: bool,
    pub loss: String,
    /// Standard deviation of real-valued initial weights (exact layers).
    pub exact_init_std: f64,
    pub layers: Vec<LayerConfig>,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            inputs: 784,
            bias: true,
            loss: "mse".into(),
            exact_init_std: 0.147,
            layers: vec![
                LayerConfig {
                    outputs: 250,
                    ..Default::default()
                },
                LayerConfig::default(),
            ],
        }
    }
}

impl NetworkConfig {
    /// Sets every layer's backing store.
    pub fn set_store(&mut self, name: &str) {
        for l in &mut self.layers {
            l.store = name.to_string();
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainerConfig {
    pub epochs: usize,
    /// Simulated seconds per training example.
    pub dt_example: f64,
    /// Use only the first N training / test images; 0 for all.
    pub train_limit: usize,
    pub test_limit: usize,
    pub eval_train: bool,
    /// Stop after the first epoch whose test accuracy reaches this value;
    /// 0 disables early stopping.
    pub stop_at_test_acc: f64,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            dt_example: 0.1,
            train_limit: 0,
            test_limit: 0,
            eval_train: true,
            stop_at_test_acc: 0.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub mnist_dir: PathBuf,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            mnist_dir: PathBuf::from("data/mnist"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: PathBuf,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("out"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub seed: u64,
    pub device: DeviceModelParams,
    pub array: ArrayConfig,
    pub refresh: RefreshPolicy,
    pub optimizer: OptimizerConfig,
    pub network: NetworkConfig,
    pub trainer: TrainerConfig,
    pub data: DataConfig,
    pub output: OutputConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            seed: 1,
            device: DeviceModelParams::default(),
            array: ArrayConfig::default(),
            refresh: RefreshPolicy::default(),
            optimizer: OptimizerConfig::default(),
            network: NetworkConfig::default(),
            trainer: TrainerConfig::default(),
            data: DataConfig::default(),
            output: OutputConfig::default(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Profile {
    /// Full MNIST, 785-250-10, 30 epochs.
    Paper,
    /// First 10,000 training images, 785-64-10, 10 epochs.
    Fast,
}

impl std::str::FromStr for Profile {
    type Err = McaError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "paper" => Ok(Profile::Paper),
            "fast" => Ok(Profile::Fast),
            _ => Err(McaError::Config(vec![format!(
                "unknown profile `{s}` (known: fast, paper)"
            )])),
        }
    }
}

impl ExperimentConfig {
    pub fn for_profile(profile: Profile) -> Self {
        let mut c = Self::default();
        if profile == Profile::Fast {
            c.trainer.train_limit = 10_000;
            c.trainer.epochs = 10;
            c.network.layers[0].outputs = 64;
        }
        c
    }

    /// Single-device synapses against the array-mean reference, with the
    /// asymmetric granularities and the progressive weight range.
    pub fn reference_variant(mut self) -> Self {
        self.array.scheme = "reference".into();
        self.array.reference_level = "array-mean".into();
        self.array.conductance_range = vec![0.1, 8.0];
        self.array.weight_clip_schedule = vec![0.7, 0.85, 1.0];
        self.array.init_mean = 4.5;
        self.array.init_std = 1.25;
        self.optimizer.eps_p = 0.096;
        self.optimizer.eps_d = 1.0;
        self.refresh.enabled = false;
        self
    }

    /// Parses TOML text on top of `base`, reporting every unknown key.
    pub fn from_toml_str(text: &str, base: &Self) -> Result<Self> {
        let user: toml::Value = toml::from_str(text).map_err(|e| McaError::Config(vec![e.to_string()]))?;
        let reference = toml::Value::try_from(Self::default()).map_err(|e| McaError::Config(vec![e.to_string()]))?;
        let mut unknown = Vec::new();
        unknown_keys(&user, &reference, "", &mut unknown);
        if !unknown.is_empty() {
            return Err(McaError::Config(
                unknown.into_iter().map(|k| format!("unknown key `{k}`")).collect(),
            ));
        }
        let mut merged = toml::Value::try_from(base).map_err(|e| McaError::Config(vec![e.to_string()]))?;
        merge(&mut merged, user);
        let cfg: Self = merged
            .try_into()
            .map_err(|e: toml::de::Error| McaError::Config(vec![e.to_string()]))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path, base: &Self) -> Result<Self> {
        let text =
            std::fs::read_to_string(path).map_err(|e| McaError::Config(vec![format!("{}: {e}", path.display())]))?;
        Self::from_toml_str(&text, base)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }

    /// SHA-256 of the effective configuration text. The output directory
    /// is left out, since it does not affect results.
    pub fn digest(&self) -> String {
        let mut c = self.clone();
        c.output = OutputConfig::default();
        hex::encode(Sha256::digest(c.to_toml().as_bytes()))
    }

    /// Every violated constraint, not just the first.
    pub fn validate(&self) -> Result<()> {
        let mut bad = Vec::new();
        if self.schema_version != SCHEMA_VERSION {
            bad.push(format!(
                "schema_version {} is not supported (expected {SCHEMA_VERSION})",
                self.schema_version
            ));
        }
        if let Err(e) = self.device.validate() {
            bad.push(format!("device: {e}"));
        }
        let a = &self.array;
        if let Err(McaError::Config(v)) = a.scheme() {
            bad.extend(v);
        }
        if !a.conductance_range.is_empty() && a.conductance_range.len() != 2 {
            bad.push("array.conductance_range must be empty or [lo, hi]".into());
        }
        if a.weight_clip_schedule.is_empty() || a.weight_clip_schedule.iter().any(|c| !(*c > 0.0 && *c <= 1.0)) {
            bad.push("array.weight_clip_schedule must be a non-empty list of values in (0, 1]".into());
        }
        if a.scheme().is_ok() && !a.weight_clip_schedule.is_empty() {
            for l in 0..self.network.layers.len() {
                if let Err(e) = a.settings_for_layer(l).and_then(|s| s.validate()) {
                    bad.push(format!("array (layer {l}): {e}"));
                    break;
                }
            }
        }
        if !(a.init_std >= 0.0 && a.init_margin > 0.0) {
            bad.push("array.init_std must be >= 0 and array.init_margin > 0".into());
        }
        let o = &self.optimizer;
        if !(o.eta > 0.0) {
            bad.push(format!("optimizer.eta {} must be > 0", o.eta));
        }
        if !(0.0..1.0).contains(&o.momentum) {
            bad.push(format!("optimizer.momentum {} must lie in [0, 1)", o.momentum));
        }
        if o.batch_size == 0 {
            bad.push("optimizer.batch_size must be >= 1".into());
        }
        if !(o.eps_p > 0.0 && o.eps_d > 0.0) {
            bad.push("optimizer.eps_p and optimizer.eps_d must be > 0".into());
        }
        if o.update_bits == 1 || o.update_bits > 31 {
            bad.push(format!(
                "optimizer.update_bits {} must be 0 or in [2, 31]",
                o.update_bits
            ));
        }
        if o.flush != "example" && o.flush != "batch" {
            bad.push(format!("optimizer.flush `{}` must be `example` or `batch`", o.flush));
        }
        if o.momentum > 0.0 && o.flush != "batch" && o.batch_size > 1 {
            bad.push("momentum with batch_size > 1 needs optimizer.flush = \"batch\"".into());
        }
        let n = &self.network;
        if n.inputs == 0 || n.layers.is_empty() {
            bad.push("network needs inputs >= 1 and at least one layer".into());
        }
        if !loss::registry().contains(&n.loss) {
            bad.push(format!("network.loss `{}` is unknown", n.loss));
        }
        for (k, l) in n.layers.iter().enumerate() {
            if l.outputs == 0 {
                bad.push(format!("network.layers[{k}].outputs must be >= 1"));
            }
            if !activation::registry().contains(&l.activation) {
                bad.push(format!("network.layers[{k}].activation `{}` is unknown", l.activation));
            }
            if !store::registry().contains(&l.store) {
                bad.push(format!("network.layers[{k}].store `{}` is unknown", l.store));
            }
        }
        if !(n.exact_init_std > 0.0) {
            bad.push("network.exact_init_std must be > 0".into());
        }
        let t = &self.trainer;
        if t.epochs == 0 {
            bad.push("trainer.epochs must be >= 1".into());
        }
        if !(t.dt_example > 0.0) {
            bad.push("trainer.dt_example must be > 0".into());
        }
        if !(0.0..=1.0).contains(&t.stop_at_test_acc) {
            bad.push("trainer.stop_at_test_acc must lie in [0, 1]".into());
        }
        if self.refresh.enabled && a.scheme == "reference" {
            bad.push("refresh.enabled needs the differential scheme".into());
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(McaError::Config(bad))
        }
    }
}

fn unknown_keys(user: &toml::Value, reference: &toml::Value, prefix: &str, out: &mut Vec<String>) {
    match (user, reference) {
        (toml::Value::Table(u), toml::Value::Table(r)) => {
            for (k, v) in u {
                let path = if prefix.is_empty() {
                    k.clone()
                } else {
                    format!("{prefix}.{k}")
                };
                match r.get(k) {
                    Some(rv) => unknown_keys(v, rv, &path, out),
                    None => out.push(path),
                }
            }
        }
        (toml::Value::Array(u), toml::Value::Array(r)) => {
            if let Some(proto) = r.first().filter(|p| p.is_table()) {
                for (i, v) in u.iter().enumerate() {
                    unknown_keys(v, proto, &format!("{prefix}[{i}]"), out);
                }
            }
        }
        _ => {}
    }
}

/// Overlays `user` onto `base`; tables merge key by key, everything else
/// (arrays included) is replaced. Array-of-table entries merge onto the
/// matching base entry, or onto the first one when the user list is longer.
fn merge(base: &mut toml::Value, user: toml::Value) {
    match (base, user) {
        (toml::Value::Table(b), toml::Value::Table(u)) => {
            for (k, v) in u {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (toml::Value::Array(b), toml::Value::Array(u)) if b.first().is_some_and(|p| p.is_table()) => {
            let proto = b[0].clone();
            let merged = u
                .into_iter()
                .enumerate()
                .map(|(i, v)| {
                    let mut slot = b.get(i).cloned().unwrap_or_else(|| proto.clone());
                    merge(&mut slot, v);
                    slot
                })
                .collect();
            *b = merged;
        }
        (slot, v) => *slot = v,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_is_default() {
        let c = ExperimentConfig::from_toml_str("", &ExperimentConfig::default()).unwrap();
        assert_eq!(c, ExperimentConfig::default());
    }

    #[test]
    fn round_trip() {
        let c = ExperimentConfig::for_profile(Profile::Fast).reference_variant();
        let back = ExperimentConfig::from_toml_str(&c.to_toml(), &ExperimentConfig::default()).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.digest(), c.digest());
        let mut moved = c.clone();
        moved.output.dir = "elsewhere".into();
        assert_eq!(moved.digest(), c.digest());
        moved.seed += 1;
        assert_ne!(moved.digest(), c.digest());
    }

    #[test]
    fn every_unknown_key_reported() {
        let text = "bogus = 1\n[optimizer]\netaa = 0.1\n[device]\nmu0 = 1.0\nnoise = 2\n[[network.layers]]\noutputs = 5\nwidth = 3\n";
        match ExperimentConfig::from_toml_str(text, &ExperimentConfig::default()) {
            Err(McaError::Config(v)) => {
                let all = v.join("|");
                for k in ["bogus", "optimizer.etaa", "device.noise", "network.layers[0].width"] {
                    assert!(all.contains(k), "{all}");
                }
                assert_eq!(v.len(), 4);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn every_violation_reported() {
        let text = "schema_version = 9\n[optimizer]\neta = -1.0\nmomentum = 1.5\n[trainer]\nepochs = 0\n";
        match ExperimentConfig::from_toml_str(text, &ExperimentConfig::default()) {
            Err(McaError::Config(v)) => assert!(v.len() >= 4, "{v:?}"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn file_overrides_profile() {
        let base = ExperimentConfig::for_profile(Profile::Fast);
        let c = ExperimentConfig::from_toml_str("[trainer]\nepochs = 3\n", &base).unwrap();
        assert_eq!(c.trainer.epochs, 3);
        assert_eq!(c.trainer.train_limit, 10_000);
        assert_eq!(c.network.layers[0].outputs, 64);
        let c =
            ExperimentConfig::from_toml_str("[[network.layers]]\noutputs = 32\n[[network.layers]]\n", &base).unwrap();
        assert_eq!(c.network.layers[0].outputs, 32);
        assert_eq!(c.network.layers[1].outputs, 10);
    }

    #[test]
    fn clip_schedule() {
        let c = ExperimentConfig::default().reference_variant();
        let clips: Vec<f64> = (1..=5).map(|e| c.array.clip_for_epoch(e)).collect();
        assert_eq!(clips, vec![0.7, 0.85, 1.0, 1.0, 1.0]);
    }
}
