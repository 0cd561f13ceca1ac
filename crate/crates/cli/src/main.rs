use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use dzsl::afgn::{fit_downstream, DownstreamConfig, Protocol};
use dzsl::data::{generate_synthetic, load_bundle, save_bundle, validate, Bundle, Dataset, Split, SynthSpec};
use dzsl::eval::{
    attention_maps, candidate_outputs, downstream_scores, evaluate_scores, export_attention, test_samples, ProtocolTag,
};
use dzsl::numcore::Tensor;
use dzsl::pmi::pmi_targets;
use dzsl::trainer::{fit, load_checkpoint_any, save_checkpoint, TrainConfig};
use dzsl::{Error, Real};

#[derive(Parser)]
#[command(name = "dzsl", version, about = "Zero-shot learning with dense attention and feature generation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset bundle.
    GenData(GenData),
    /// Check a dataset bundle for consistency.
    Validate {
        #[arg(long)]
        data: PathBuf,
    },
    /// Train both networks and write a checkpoint plus loss history.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Config file of `key = value` lines.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Override one config entry, as `key=value`.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        /// Directory for the loss history bundle; defaults to `<out>/history`.
        #[arg(long)]
        history: Option<PathBuf>,
    },
    /// Score the test splits under one protocol.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum, default_value = "agan-gzsl")]
        protocol: ProtocolArg,
        /// Where to write the key-value report.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Noise seed for feature synthesis; defaults to the training seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Write generated features for every class.
    Synth {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Dataset whose class semantics condition the generator.
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        per_class: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Dump PMI values and soft targets of a dataset's class semantics.
    Pmi {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Export attention maps for plotting.
    ExportAttn {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "test")]
        split: SplitArg,
        /// Export at most this many samples.
        #[arg(long)]
        limit: Option<usize>,
    },
}

#[derive(clap::Args)]
struct GenData {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = SynthSpec::default().seed)]
    seed: u64,
    #[arg(long, default_value_t = SynthSpec::default().noise)]
    noise: f64,
    #[arg(long, default_value_t = SynthSpec::default().n_source)]
    n_source: usize,
    #[arg(long, default_value_t = SynthSpec::default().n_target)]
    n_target: usize,
    #[arg(long, default_value_t = SynthSpec::default().n_attributes)]
    n_attributes: usize,
    #[arg(long, default_value_t = SynthSpec::default().regions)]
    regions: usize,
    #[arg(long, default_value_t = SynthSpec::default().dim)]
    dim: usize,
    #[arg(long, default_value_t = SynthSpec::default().attr_dim)]
    attr_dim: usize,
    #[arg(long, default_value_t = SynthSpec::default().samples_per_class)]
    samples_per_class: usize,
    #[arg(long, default_value_t = SynthSpec::default().source_test_fraction)]
    source_test_fraction: f64,
}

impl GenData {
    fn spec(&self) -> SynthSpec {
        SynthSpec {
            n_source: self.n_source,
            n_target: self.n_target,
            n_attributes: self.n_attributes,
            regions: self.regions,
            dim: self.dim,
            attr_dim: self.attr_dim,
            samples_per_class: self.samples_per_class,
            noise: self.noise,
            seed: self.seed,
            source_test_fraction: self.source_test_fraction,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum ProtocolArg {
    AganGzsl,
    AganZsl,
    AfgnGzsl,
    AfgnZsl,
}

impl From<ProtocolArg> for ProtocolTag {
    fn from(p: ProtocolArg) -> Self {
        match p {
            ProtocolArg::AganGzsl => ProtocolTag::AganGzsl,
            ProtocolArg::AganZsl => ProtocolTag::AganZsl,
            ProtocolArg::AfgnGzsl => ProtocolTag::AfgnGzsl,
            ProtocolArg::AfgnZsl => ProtocolTag::AfgnZsl,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    Train,
    TestSource,
    TestTarget,
    Test,
}

const EXIT_USAGE: u8 = 1;
const EXIT_DATA: u8 = 2;
const EXIT_NUMERIC: u8 = 3;

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::NonFinite(_) => EXIT_NUMERIC,
        Error::Config(_) => EXIT_USAGE,
        _ => EXIT_DATA,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn load_data(path: &Path) -> dzsl::Result<Dataset> {
    let data: Dataset = load_bundle(path)?;
    let report = validate(&data);
    if !report.passed() {
        return Err(Error::Data(format!("dataset failed validation: {}", report.violations[0])));
    }
    Ok(data)
}

fn run(command: Command) -> dzsl::Result<()> {
    match command {
        Command::GenData(args) => {
            let synth = generate_synthetic::<Real>(&args.spec())?;
            save_bundle(&synth.dataset, &args.out)?;
            println!("wrote {} samples to {}", synth.dataset.features.len(), args.out.display());
        }
        Command::Validate { data } => {
            let data: Dataset = load_bundle(&data)?;
            let report = validate(&data);
            if !report.passed() {
                for v in &report.violations {
                    eprintln!("{v}");
                }
                return Err(Error::Data(format!("{} violation(s)", report.violations.len())));
            }
            println!("ok: {} samples", data.features.len());
        }
        Command::Train {
            data,
            out,
            config,
            overrides,
            history,
        } => {
            let mut cfg = match config {
                Some(p) => TrainConfig::load(p)?,
                None => TrainConfig::default(),
            };
            for kv in &overrides {
                let (k, v) = kv
                    .split_once('=')
                    .ok_or_else(|| Error::Config(format!("expected KEY=VALUE, got `{kv}`")))?;
                cfg.set(k.trim(), v.trim())?;
            }
            cfg.validate()?;
            let data = load_data(&data)?;
            let (trainer, hist) = fit(cfg, &data)?;
            if !hist.is_finite() {
                return Err(Error::NonFinite("training history".into()));
            }
            save_checkpoint(&trainer, &out)?;
            hist.to_bundle()?.save(history.unwrap_or_else(|| out.join("history")))?;
            if let Some(last) = hist.epochs.last() {
                println!(
                    "epoch {}: L_ce {:.4} KL {:.4} eval L_ce {:.4}",
                    last.epoch + 1,
                    last.mean.l_ce,
                    last.mean.kl,
                    last.eval_ce
                );
            }
            println!("checkpoint written to {}", out.display());
        }
        Command::Eval {
            checkpoint,
            data,
            protocol,
            out,
            seed,
        } => {
            let trainer = load_checkpoint_any(&checkpoint)?;
            let data = load_data(&data)?;
            trainer.check_data(&data)?;
            let tag = ProtocolTag::from(protocol);
            let one_step = trainer.config.one_step_attention_only;
            let samples = test_samples(&data);
            let outputs = candidate_outputs(&trainer.agan, &data, &samples, one_step)?;
            let scores = match tag {
                ProtocolTag::AganGzsl | ProtocolTag::AganZsl => outputs.scores.clone(),
                ProtocolTag::AfgnGzsl | ProtocolTag::AfgnZsl => {
                    let afgn = &trainer.afgn;
                    let set = afgn.synthesize_features(
                        &data.class_sem,
                        afgn.config.features_per_class,
                        seed.unwrap_or(trainer.config.seed),
                    )?;
                    let p = if tag.is_gzsl() { Protocol::Gzsl } else { Protocol::Zsl };
                    let clf = fit_downstream(&set, data.class_sem.n_source(), p, &DownstreamConfig::default())?;
                    downstream_scores(&clf, &outputs)?
                }
            };
            let report = evaluate_scores(tag, &data, &samples, &scores)?;
            print!("{}", report.table());
            if let Some(path) = out {
                report.save(path)?;
            }
        }
        Command::Synth {
            checkpoint,
            data,
            out,
            per_class,
            seed,
        } => {
            let trainer = load_checkpoint_any(&checkpoint)?;
            let data = load_data(&data)?;
            trainer.check_data(&data)?;
            let n = per_class.unwrap_or(trainer.afgn.config.features_per_class);
            let set = trainer.afgn.synthesize_features(&data.class_sem, n, seed)?;
            let mut b = Bundle::new();
            b.meta.insert("kind".into(), "synthetic_features".into());
            b.put_f64("features", &set.features)?;
            b.put_u32("labels", vec![set.labels.len()], set.labels.iter().map(|&y| y as u32).collect())?;
            b.save(&out)?;
            println!("wrote {} features to {}", set.labels.len(), out.display());
        }
        Command::Pmi { data, out } => {
            let data = load_data(&data)?;
            let (pmi, soft) = pmi_targets(&data.class_sem)?;
            print!("{}", matrix_text("pmi", &pmi.values, data.class_sem.n_source()));
            print!("{}", matrix_text("soft", &soft.targets, data.class_sem.n_source()));
            if let Some(dir) = out {
                let mut b = Bundle::new();
                b.meta.insert("kind".into(), "pmi".into());
                b.put_f64("pmi", &pmi.values)?;
                b.put_f64("soft_targets", &soft.targets)?;
                b.save(dir)?;
            }
        }
        Command::ExportAttn {
            checkpoint,
            data,
            out,
            split,
            limit,
        } => {
            let trainer = load_checkpoint_any(&checkpoint)?;
            let data = load_data(&data)?;
            trainer.check_data(&data)?;
            let mut samples = match split {
                SplitArg::Train => data.features.indices(Split::TrainSource),
                SplitArg::TestSource => data.features.indices(Split::TestSource),
                SplitArg::TestTarget => data.features.indices(Split::TestTarget),
                SplitArg::Test => test_samples(&data),
            };
            if let Some(n) = limit {
                samples.truncate(n);
            }
            let maps = attention_maps(&trainer.agan, &data, &samples)?;
            export_attention(&maps, &out)?;
            println!("exported {} attention maps to {}", maps.len(), out.display());
        }
    }
    Ok(())
}

/// Rows are source classes, columns target classes, both 1-based.
fn matrix_text(name: &str, m: &Tensor<Real>, n_source: usize) -> String {
    let (rows, cols) = (m.shape()[0], m.shape()[1]);
    let mut out = format!("{name}:\n{:>6}", "");
    for j in 0..cols {
        out += &format!(" {:>9}", format!("t{}", n_source + j + 1));
    }
    out.push('\n');
    for i in 0..rows {
        out += &format!("{:>6}", format!("s{}", i + 1));
        for j in 0..cols {
            out += &format!(" {:>9.4}", m.get2(i, j));
        }
        out.push('\n');
    }
    out
}
