use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{ArgGroup, Args, Parser, Subcommand};

use mca_core::calibrate::{calibrate, parse_drift_csv, parse_pulse_csv};
use mca_core::config::{ExperimentConfig, Profile};
use mca_core::counters::{EventCounters, LayerCounters};
use mca_core::data::load_mnist_dir;
use mca_core::device::characterize;
use mca_core::io::{drift_csv, epochs_csv, parse_feature_csv, with_digest, write_atomic, write_text};
use mca_core::metrics::{cost_report, frechet_distance, CostUnits};
use mca_core::train::{
    evaluate_inference_over_time, freeze_drift, read_network, train_mca, write_network, CheckpointMeta, ExperimentLog,
};
use mca_core::McaError;

/// Mixed-precision in-memory training simulator.
#[derive(Parser, Debug)]
#[command(name = "mca", version)]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args, Debug)]
struct Global {
    /// Experiment configuration (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory; overrides `output.dir`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// `fast` or `paper`.
    #[arg(long, global = true, default_value = "paper")]
    profile: String,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Table of conductance statistics over a train of SET pulses.
    Characterize {
        #[arg(long, default_value_t = 10_000)]
        devices: usize,
        #[arg(long, default_value_t = 20)]
        pulses: usize,
    },
    /// Fits device-model parameters to measurement CSVs and prints a
    /// `[device]` section.
    #[command(group(ArgGroup::new("input").required(true).multiple(true).args(["pulses", "drift"])))]
    Calibrate {
        /// `device_id,pulse_index,g_uS`
        #[arg(long)]
        pulses: Option<PathBuf>,
        /// `device_id,t_s,g_uS`
        #[arg(long)]
        drift: Option<PathBuf>,
        #[arg(long, default_value_t = 20)]
        bins: usize,
    },
    /// Trains the configured network on MNIST.
    Train {
        /// Real-valued weights everywhere (the high-precision baseline).
        #[arg(long)]
        exact: bool,
        /// Single-device synapses with the array-mean reference.
        #[arg(long, conflicts_with = "exact")]
        reference: bool,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Accuracy of a checkpointed network after idle periods.
    EvalDrift {
        /// Defaults to `<out>/checkpoint.mcackpt`.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Seconds after the end of training, comma-separated.
        #[arg(long, value_delimiter = ',', default_value = "0,60,3600,86400,2592000")]
        after: Vec<f64>,
        /// Zero every drift exponent first (control run).
        #[arg(long)]
        no_drift: bool,
        /// Also evaluate the training set.
        #[arg(long)]
        train: bool,
    },
    /// Fréchet distance between two feature CSVs.
    Fd { a: PathBuf, b: PathBuf },
    /// Energy and time totals from an event-counter file.
    Report {
        /// A training log (`log.json`) or a JSON object of event counters.
        #[arg(long)]
        counters: PathBuf,
        /// Unit costs (TOML with `[energy_j]` and `[time_s]` tables).
        #[arg(long)]
        units: Option<PathBuf>,
        #[arg(long)]
        examples: Option<u64>,
    },
}

fn read_text(path: &Path) -> mca_core::Result<String> {
    std::fs::read_to_string(path).map_err(|e| McaError::Data(format!("{}: {e}", path.display())))
}

fn resolve_config(
    g: &Global,
    preset: impl FnOnce(ExperimentConfig) -> ExperimentConfig,
) -> mca_core::Result<ExperimentConfig> {
    let profile: Profile = g.profile.parse()?;
    let base = preset(ExperimentConfig::for_profile(profile));
    let mut cfg = match &g.config {
        Some(p) => ExperimentConfig::load(p, &base)?,
        None => base,
    };
    if let Some(s) = g.seed {
        cfg.seed = s;
    }
    if let Some(o) = &g.out {
        cfg.output.dir = o.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> mca_core::Result<()> {
    let g = &cli.global;
    match cli.cmd {
        Cmd::Characterize { devices, pulses } => {
            let cfg = resolve_config(g, |c| c)?;
            let table = characterize(&cfg.device, devices, pulses, cfg.seed)?;
            let text = with_digest(&cfg.digest(), &table.to_csv());
            print!("{text}");
            if g.out.is_some() {
                write_atomic(&cfg.output.dir.join("characterization.csv"), text.as_bytes())?;
            }
        }
        Cmd::Calibrate { pulses, drift, bins } => {
            let cfg = resolve_config(g, |c| c)?;
            let p = pulses
                .as_deref()
                .map(read_text)
                .transpose()?
                .map(|t| parse_pulse_csv(&t))
                .transpose()?;
            let d = drift
                .as_deref()
                .map(read_text)
                .transpose()?
                .map(|t| parse_drift_csv(&t))
                .transpose()?;
            let (params, report) = calibrate(&cfg.device, p.as_deref(), d.as_deref(), bins)?;
            let mut section = toml::Table::new();
            section.insert(
                "device".into(),
                toml::Value::try_from(&params).map_err(|e| McaError::InvalidParams(e.to_string()))?,
            );
            let text = with_digest(&cfg.digest(), &toml::to_string(&section).expect("parameters serialize"));
            print!("{text}");
            if let Some(s) = &report.set {
                log::info!("SET fit over {} increments in {} bins", s.increments, s.bins);
            }
            if let Some(dr) = &report.drift {
                log::info!("drift fit over {} devices", dr.per_device.len());
            }
            if g.out.is_some() {
                write_atomic(&cfg.output.dir.join("calibrated_device.toml"), text.as_bytes())?;
            }
        }
        Cmd::Train {
            exact,
            reference,
            epochs,
        } => {
            let mut cfg = resolve_config(g, |c| if reference { c.reference_variant() } else { c })?;
            if let Some(e) = epochs {
                cfg.trainer.epochs = e;
            }
            if exact {
                cfg.network.set_store("exact");
                cfg.refresh.enabled = false;
            }
            cfg.validate()?;
            let data = load_mnist_dir(&cfg.data.mnist_dir)?;
            let digest = cfg.digest();
            let dir = cfg.output.dir.clone();
            write_text(&dir.join("effective_config.toml"), &digest, &cfg.to_toml())?;
            let out = train_mca(&cfg, &data)?;
            write_text(&dir.join("epochs.csv"), &digest, &epochs_csv(&out.log))?;
            let json = serde_json::to_string_pretty(&out.log).map_err(|e| McaError::InvalidParams(e.to_string()))?;
            write_atomic(&dir.join("log.json"), json.as_bytes())?;
            let meta = CheckpointMeta {
                t_end: out.log.t_end,
                loss: cfg.network.loss.clone(),
                config_digest: digest,
            };
            let mut buf = Vec::new();
            write_network(&mut buf, &out.net, &meta)?;
            write_atomic(&dir.join("checkpoint.mcackpt"), &buf)?;
            println!(
                "max test accuracy {:.4} (final {:.4}) after {} epochs; outputs in {}",
                out.log.max_test_acc(),
                out.log.final_test_acc(),
                out.log.epochs.len(),
                dir.display()
            );
        }
        Cmd::EvalDrift {
            checkpoint,
            after,
            no_drift,
            train,
        } => {
            let cfg = resolve_config(g, |c| c)?;
            let path = checkpoint.unwrap_or_else(|| cfg.output.dir.join("checkpoint.mcackpt"));
            let file = std::fs::File::open(&path).map_err(|e| McaError::Data(format!("{}: {e}", path.display())))?;
            let (mut net, meta) = read_network(std::io::BufReader::new(file))?;
            if no_drift {
                freeze_drift(&mut net);
            }
            let data = load_mnist_dir(&cfg.data.mnist_dir)?;
            let lim = |s: &mca_core::data::ImageSet, n: usize| if n == 0 { s.clone() } else { s.take(n) };
            let test = lim(&data.test, cfg.trainer.test_limit);
            let train_set = train.then(|| lim(&data.train, cfg.trainer.train_limit));
            let times: Vec<f64> = after.iter().map(|a| meta.t_end + a).collect();
            let pts = evaluate_inference_over_time(&net, train_set.as_ref(), &test, &times)?;
            let text = with_digest(&meta.config_digest, &drift_csv(&pts));
            print!("{text}");
            let name = if no_drift { "drift_control.csv" } else { "drift.csv" };
            write_atomic(&cfg.output.dir.join(name), text.as_bytes())?;
        }
        Cmd::Fd { a, b } => {
            let fa = parse_feature_csv(&read_text(&a)?)?;
            let fb = parse_feature_csv(&read_text(&b)?)?;
            println!("{}", frechet_distance(&fa, &fb)?);
        }
        Cmd::Report {
            counters,
            units,
            examples,
        } => {
            let text = read_text(&counters)?;
            let (c, n) = parse_counters(&text)?;
            let units: CostUnits = match units {
                Some(p) => toml::from_str(&read_text(&p)?).map_err(|e| McaError::Config(vec![e.to_string()]))?,
                None => CostUnits::default(),
            };
            let report = cost_report(&c, &units, examples.or(n))?;
            let mut csv = report.to_csv();
            if let (Some(e), Some(t)) = (report.energy_per_example_j, report.time_per_example_s) {
                csv.push_str(&format!("per_example,{e:e},{t:e}\n"));
            }
            print!("{csv}");
            if let Some(o) = &g.out {
                write_atomic(&o.join("cost_report.csv"), csv.as_bytes())?;
            }
        }
    }
    Ok(())
}

/// Totals and, for a training log, the number of examples seen.
fn parse_counters(text: &str) -> mca_core::Result<(EventCounters, Option<u64>)> {
    let bad = |e: serde_json::Error| McaError::Data(format!("counters file: {e}"));
    let v: serde_json::Value = serde_json::from_str(text).map_err(bad)?;
    if v.get("epochs").is_some() {
        let log: ExperimentLog = serde_json::from_value(v).map_err(bad)?;
        let n = (log.train_examples * log.epochs.len()) as u64;
        return Ok((log.final_counters.total(), Some(n)));
    }
    if v.get("layers").is_some() {
        let lc: LayerCounters = serde_json::from_value(v).map_err(bad)?;
        return Ok((lc.total(), None));
    }
    Ok((serde_json::from_value(v).map_err(bad)?, None))
}

fn exit_code(e: &McaError) -> u8 {
    match e {
        McaError::Config(_) => 2,
        McaError::Data(_) | McaError::Parse { .. } => 3,
        _ => 4,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
