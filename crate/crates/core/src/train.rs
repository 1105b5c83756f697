//! Training loop, evaluation and inference over time.
//!
//! The simulated clock starts at 0 when the arrays are initialized and
//! advances by `dt_example` per training example; example `k` (1-based over
//! the whole run) is processed at `t = k * dt_example`.

use std::io::{Read, Write};
use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::counters::{EventCounters, LayerCounters};
use crate::crossbar::{checkpoint, InitReport, ReadMode, SynapseScheme};
use crate::data::{DatasetBundle, ImageSet};
use crate::device::PcmModel;
use crate::error::{McaError, Result};
use crate::metrics::argmax;
use crate::nn::store::{build_crossbar_store, ExactStore, StoreArgs, WeightStore};
use crate::nn::{activation, loss, mlp_forward_backward, CrossbarStore, Layer, Network};
use crate::optim::{outer_update, sgd_momentum_step, ChiAccumulator};
use crate::rng::{seeded_chacha, Stream};

/// Device ids of layer `l` start at `l << 40`.
const LAYER_ID_STRIDE: u64 = 1 << 40;

/// Builds the configured network; crossbar layers are initialized at `t = 0`.
pub fn build_network(cfg: &ExperimentConfig) -> Result<(Network, Vec<InitReport>)> {
    cfg.validate()?;
    let model = PcmModel::new(cfg.device.clone(), cfg.seed)?;
    let mut layers = Vec::new();
    let mut reports = Vec::new();
    let mut n_in = cfg.network.inputs;
    for (l, lc) in cfg.network.layers.iter().enumerate() {
        let args = StoreArgs {
            rows: n_in + usize::from(cfg.network.bias),
            cols: lc.outputs,
            layer: l as u64,
            seed: cfg.seed,
            exact_init_std: cfg.network.exact_init_std,
            settings: cfg.array.settings_for_layer(l)?,
            init: cfg.array.init_spec(),
            model: model.clone(),
            id_base: l as u64 * LAYER_ID_STRIDE,
            t_init: 0.0,
            eps_p: cfg.optimizer.eps_p,
            eps_d: cfg.optimizer.eps_d,
            pulse_cap: cfg.optimizer.pulse_cap(),
        };
        let store: Box<dyn WeightStore> = if lc.store == "crossbar" {
            let (s, rep) = build_crossbar_store(&args)?;
            reports.push(rep);
            Box::new(s)
        } else {
            crate::nn::store::registry().build(&lc.store, &args)?
        };
        let act = activation::build(&lc.activation)?;
        n_in = act.out_len(lc.outputs)?;
        layers.push(Layer {
            store,
            activation: act,
            bias: cfg.network.bias,
        });
    }
    Ok((Network::new(layers)?, reports))
}

/// One row of the training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_acc: Option<f64>,
    pub test_acc: f64,
    /// Mean training loss over the epoch.
    pub loss: f64,
    /// Events during this epoch, summed over layers.
    pub counters: EventCounters,
    /// Mean non-zero update entries per example.
    pub update_nnz_per_example: f64,
    /// Simulated time at the end of the epoch.
    pub sim_time_s: f64,
    pub weight_clip: f64,
}

impl EpochRecord {
    /// Device programming pulses during the epoch.
    pub fn device_updates(&self) -> u64 {
        self.counters.programming_pulses()
    }

    pub fn chi_writes_per_example(&self, examples: usize) -> f64 {
        self.counters.chi_writes as f64 / examples.max(1) as f64
    }
}

/// Deterministic record of a run. Wall-clock times are kept apart in
/// [`TrainOutcome::wall_s`] so two runs with the same seed produce identical
/// logs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentLog {
    pub config_digest: String,
    pub train_examples: usize,
    pub test_examples: usize,
    pub init_reports: Vec<InitReport>,
    pub epochs: Vec<EpochRecord>,
    /// Cumulative per-layer counters at the end of training.
    pub final_counters: LayerCounters,
    pub t_end: f64,
}

impl ExperimentLog {
    pub fn max_test_acc(&self) -> f64 {
        self.epochs.iter().map(|e| e.test_acc).fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn final_test_acc(&self) -> f64 {
        self.epochs.last().map_or(f64::NAN, |e| e.test_acc)
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub net: Network,
    pub log: ExperimentLog,
    /// Wall time per epoch, evaluation included.
    pub wall_s: Vec<f64>,
}

fn one_hot(label: usize, n: usize) -> Vec<f64> {
    let mut t = vec![0.0; n];
    t[label] = 1.0;
    t
}

fn limited(set: &ImageSet, limit: usize) -> ImageSet {
    if limit == 0 {
        set.clone()
    } else {
        set.take(limit)
    }
}

/// Builds the configured network and trains it.
pub fn train_mca(cfg: &ExperimentConfig, data: &DatasetBundle) -> Result<TrainOutcome> {
    let (net, reports) = build_network(cfg)?;
    train_network(cfg, net, reports, data)
}

/// The same loop with every layer on real-valued weights and no converter
/// quantization.
pub fn train_exact_baseline(cfg: &ExperimentConfig, data: &DatasetBundle) -> Result<TrainOutcome> {
    let mut c = cfg.clone();
    c.network.set_store("exact");
    c.refresh.enabled = false;
    train_mca(&c, data)
}

/// Trains `net` with the optimizer and trainer settings of `cfg`.
pub fn train_network(
    cfg: &ExperimentConfig,
    mut net: Network,
    init_reports: Vec<InitReport>,
    data: &DatasetBundle,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let train = limited(&data.train, cfg.trainer.train_limit);
    let test = limited(&data.test, cfg.trainer.test_limit);
    if train.is_empty() || test.is_empty() {
        return Err(McaError::Data("training and test sets must not be empty".into()));
    }
    let n_in = net.layers[0].n_features_in();
    if train.pixels_per_image() != n_in {
        return Err(McaError::DimensionMismatch {
            what: "image size",
            expected: n_in,
            got: train.pixels_per_image(),
        });
    }
    let loss_fn = loss::build(&cfg.network.loss)?;
    let last = &net.layers[net.layers.len() - 1];
    let n_classes = last.activation.out_len(last.store.n_out())?;
    let opt = &cfg.optimizer;
    let batch = opt.batch_size;
    let eta = opt.eta / batch as f64;
    let flush_each_example = opt.flush == "example";
    let dt = cfg.trainer.dt_example;
    let mut velocity: Vec<Vec<f64>> = if opt.momentum > 0.0 {
        net.layers
            .iter()
            .map(|l| vec![0.0; l.store.n_in() * l.store.n_out()])
            .collect()
    } else {
        Vec::new()
    };

    let mut log = ExperimentLog {
        config_digest: cfg.digest(),
        train_examples: train.len(),
        test_examples: test.len(),
        init_reports,
        epochs: Vec::new(),
        final_counters: LayerCounters::default(),
        t_end: 0.0,
    };
    let mut wall_s = Vec::new();
    let mut step: u64 = 0;
    let mut t = 0.0;
    let mut order: Vec<usize> = (0..train.len()).collect();

    for epoch in 1..=cfg.trainer.epochs {
        let started = Instant::now();
        let clip = cfg.array.clip_for_epoch(epoch);
        for l in &mut net.layers {
            if let Some(a) = l.store.crossbar_mut() {
                a.set_weight_clip(clip)?;
            }
        }
        let before = net.counters().total();
        order.sort_unstable();
        order.shuffle(&mut seeded_chacha(cfg.seed, Stream::DataOrder, epoch as u64));

        let mut loss_sum = 0.0;
        let mut nnz_sum = 0u64;
        for (n, &k) in order.iter().enumerate() {
            step += 1;
            t = step as f64 * dt;
            let x = train.image(k);
            let target = one_hot(train.label(k), n_classes);
            let pass = mlp_forward_backward(&mut net, &x, &target, loss_fn.as_ref(), t)
                .map_err(|e| McaError::Diverged(format!("epoch {epoch}, example {n} (image {k}): {e}")))?;
            loss_sum += pass.loss;
            for (l, layer) in net.layers.iter_mut().enumerate() {
                if opt.momentum > 0.0 {
                    let (xi, dj) = (&pass.inputs[l], &pass.deltas[l]);
                    let grad: Vec<f64> = xi.iter().flat_map(|&a| dj.iter().map(move |&d| -a * d)).collect();
                    let dw = sgd_momentum_step(&mut velocity[l], &grad, eta, opt.momentum)?;
                    let upd = crate::optim::SparseUpdate::from_dense(layer.store.n_in(), layer.store.n_out(), &dw)?;
                    nnz_sum += layer.store.accumulate(&upd)?;
                } else {
                    let upd = outer_update(&pass.inputs[l], &pass.deltas[l], eta, opt.update_bits())?;
                    nnz_sum += layer.store.accumulate_outer(&upd)?;
                }
            }
            let due = flush_each_example || (n + 1) % batch == 0 || n + 1 == order.len();
            let mut programmed = false;
            if due {
                for layer in &mut net.layers {
                    programmed |= layer.store.commit(t)? > 0;
                }
            }
            for layer in &mut net.layers {
                layer.store.after_example(t, programmed)?;
                if cfg.refresh.enabled {
                    if let Some(a) = layer.store.crossbar_mut() {
                        if a.settings().scheme == SynapseScheme::Differential {
                            a.refresh_tick(&cfg.refresh, t)?;
                        }
                    }
                }
            }
        }

        let examples = train.len() as f64;
        let test_acc = evaluate(&mut net, &test, t)?;
        let train_acc = if cfg.trainer.eval_train {
            Some(evaluate(&mut net, &train, t)?)
        } else {
            None
        };
        let rec = EpochRecord {
            epoch,
            train_acc,
            test_acc,
            loss: loss_sum / examples,
            counters: net.counters().total() - before,
            update_nnz_per_example: nnz_sum as f64 / examples,
            sim_time_s: t,
            weight_clip: clip,
        };
        log::info!(
            "epoch {epoch}: test {:.4} train {} loss {:.5} pulses {} ({:.1} s)",
            rec.test_acc,
            rec.train_acc.map_or("-".into(), |a| format!("{a:.4}")),
            rec.loss,
            rec.device_updates(),
            started.elapsed().as_secs_f64()
        );
        let stop = cfg.trainer.stop_at_test_acc > 0.0 && rec.test_acc >= cfg.trainer.stop_at_test_acc;
        log.epochs.push(rec);
        wall_s.push(started.elapsed().as_secs_f64());
        if stop {
            break;
        }
    }
    log.final_counters = net.counters();
    log.t_end = t;
    Ok(TrainOutcome { net, log, wall_s })
}

/// Test accuracy of a real-valued copy of `net` read at `t_now`. The copy's
/// reads are keyed by the read time, so evaluating again at the same instant
/// gives the same answer, and the caches `net` trains with are left alone.
pub fn evaluate(net: &mut Network, set: &ImageSet, t_now: f64) -> Result<f64> {
    let frozen = net.clone().freeze(t_now, ReadMode::Snapshot)?;
    accuracy_on(&frozen, set)
}

/// Accuracy of `net` (whose weights do not depend on time) on `set`, split
/// across threads. The count is exact, so the result does not depend on the
/// split.
pub fn accuracy_on(net: &Network, set: &ImageSet) -> Result<f64> {
    if set.is_empty() {
        return Err(McaError::Data("empty evaluation set".into()));
    }
    let threads = std::thread::available_parallelism().map_or(1, |n| n.get()).min(16);
    let chunk = set.len().div_ceil(threads);
    let counts: Vec<Result<usize>> = std::thread::scope(|s| {
        let handles: Vec<_> = (0..set.len())
            .step_by(chunk)
            .map(|start| {
                let mut local = net.clone();
                s.spawn(move || -> Result<usize> {
                    let mut correct = 0;
                    for k in start..(start + chunk).min(set.len()) {
                        let y = local.predict(&set.image(k), 0.0)?;
                        correct += usize::from(argmax(&y) == set.label(k));
                    }
                    Ok(correct)
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("evaluation thread panicked"))
            .collect()
    });
    let mut correct = 0;
    for c in counts {
        correct += c?;
    }
    Ok(correct as f64 / set.len() as f64)
}

/// Sets every layer's converter widths.
pub fn set_converters(net: &mut Network, dac_bits: Option<u32>, adc_bits: Option<u32>) -> Result<()> {
    for l in &mut net.layers {
        l.store.set_converters(dac_bits, adc_bits)?;
    }
    Ok(())
}

/// Zeroes the drift exponent of every device.
pub fn freeze_drift(net: &mut Network) {
    for l in &mut net.layers {
        if let Some(a) = l.store.crossbar_mut() {
            a.freeze_drift();
        }
    }
}

/// Latest programming time over every array of `net`.
pub fn last_programmed(net: &Network) -> f64 {
    net.layers
        .iter()
        .filter_map(|l| l.store.crossbar())
        .map(|a| a.last_programmed())
        .fold(f64::NEG_INFINITY, f64::max)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DriftPoint {
    pub t_s: f64,
    pub train_acc: Option<f64>,
    pub test_acc: f64,
}

/// Accuracy after the network has sat idle until each of `times`. No device
/// is programmed; each evaluation reads every device once at that time.
pub fn evaluate_inference_over_time(
    net: &Network,
    train: Option<&ImageSet>,
    test: &ImageSet,
    times: &[f64],
) -> Result<Vec<DriftPoint>> {
    if times.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(McaError::InvalidParams("evaluation times must be increasing".into()));
    }
    let last = last_programmed(net);
    if let Some(&t0) = times.first() {
        if t0 < last {
            return Err(McaError::Contract(format!(
                "evaluation time {t0} s precedes the last programming event at {last} s"
            )));
        }
    }
    times
        .iter()
        .map(|&t| {
            let frozen = net.clone().freeze(t, ReadMode::Snapshot)?;
            Ok(DriftPoint {
                t_s: t,
                train_acc: train.map(|s| accuracy_on(&frozen, s)).transpose()?,
                test_acc: accuracy_on(&frozen, test)?,
            })
        })
        .collect()
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "store", rename_all = "kebab-case")]
enum LayerRecord {
    Crossbar {
        activation: String,
        bias: bool,
        chi: ChiAccumulator,
    },
    Exact {
        activation: String,
        bias: bool,
        rows: usize,
        cols: usize,
        weights: Vec<f64>,
        dac_bits: Option<u32>,
        adc_bits: Option<u32>,
    },
}

#[derive(Serialize, Deserialize)]
struct NetworkRecord {
    kind: String,
    t_end: f64,
    loss: String,
    config_digest: String,
    layers: Vec<LayerRecord>,
}

/// Metadata stored next to the arrays in a network checkpoint.
#[derive(Clone, Debug, PartialEq)]
pub struct CheckpointMeta {
    pub t_end: f64,
    pub loss: String,
    pub config_digest: String,
}

const NETWORK_KIND: &str = "mca-network";

/// Writes every array, accumulator and real-valued layer of `net`.
pub fn write_network<W: Write>(w: W, net: &Network, meta: &CheckpointMeta) -> Result<()> {
    let mut arrays = Vec::new();
    let mut layers = Vec::new();
    for l in &net.layers {
        let activation = l.activation.name().to_string();
        match (l.store.crossbar(), l.store.accumulator()) {
            (Some(a), Some(chi)) => {
                arrays.push(a);
                layers.push(LayerRecord::Crossbar {
                    activation,
                    bias: l.bias,
                    chi: chi.clone(),
                });
            }
            _ => {
                let mut s = l.store.clone();
                let weights = s.weights(meta.t_end, ReadMode::Cached)?;
                let (dac_bits, adc_bits) = l.store.converters();
                layers.push(LayerRecord::Exact {
                    activation,
                    bias: l.bias,
                    rows: l.store.n_in(),
                    cols: l.store.n_out(),
                    weights,
                    dac_bits,
                    adc_bits,
                });
            }
        }
    }
    let record = NetworkRecord {
        kind: NETWORK_KIND.into(),
        t_end: meta.t_end,
        loss: meta.loss.clone(),
        config_digest: meta.config_digest.clone(),
        layers,
    };
    let extra = serde_json::to_value(record).map_err(|e| McaError::Checkpoint(e.to_string()))?;
    checkpoint::write_arrays(w, &arrays, extra)
}

/// Restores a network written by [`write_network`].
pub fn read_network<R: Read>(r: R) -> Result<(Network, CheckpointMeta)> {
    let (arrays, extra) = checkpoint::read_arrays(r)?;
    let record: NetworkRecord = serde_json::from_value(extra).map_err(|e| McaError::Checkpoint(e.to_string()))?;
    if record.kind != NETWORK_KIND {
        return Err(McaError::Checkpoint(format!(
            "not a network checkpoint (kind `{}`)",
            record.kind
        )));
    }
    let mut arrays = arrays.into_iter();
    let mut layers = Vec::new();
    for lr in record.layers {
        let (store, activation, bias): (Box<dyn WeightStore>, String, bool) = match lr {
            LayerRecord::Crossbar { activation, bias, chi } => {
                let array = arrays
                    .next()
                    .ok_or_else(|| McaError::Checkpoint("fewer arrays than crossbar layers".into()))?;
                (Box::new(CrossbarStore::new(array, chi)?), activation, bias)
            }
            LayerRecord::Exact {
                activation,
                bias,
                rows,
                cols,
                weights,
                dac_bits,
                adc_bits,
            } => {
                let mut s = ExactStore::new(rows, cols, weights)?;
                s.set_converters(dac_bits, adc_bits)?;
                (Box::new(s), activation, bias)
            }
        };
        layers.push(Layer {
            store,
            activation: activation::build(&activation)?,
            bias,
        });
    }
    if arrays.next().is_some() {
        return Err(McaError::Checkpoint("more arrays than crossbar layers".into()));
    }
    let meta = CheckpointMeta {
        t_end: record.t_end,
        loss: record.loss,
        config_digest: record.config_digest,
    };
    Ok((Network::new(layers)?, meta))
}

#[cfg(test)]
mod tests;
