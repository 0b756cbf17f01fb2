use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use hssp_core::flsim::{self, Loss};
use hssp_core::hssp::{self, AttackMethod, PlantedInstance};
use hssp_core::pipeline::{self, ExperimentConfig};
use num_rational::Ratio;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Parser)]
#[command(name = "hssp", version, about = "Hidden subset sum attacks on federated-learning gradients")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Method {
    Ns,
    Mv,
    Stat,
}

impl From<Method> for AttackMethod {
    fn from(m: Method) -> Self {
        match m {
            Method::Ns => AttackMethod::Ns,
            Method::Mv => AttackMethod::Multivariate,
            Method::Stat => AttackMethod::Statistical,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Sweep {
    M,
    B,
    N,
}

#[derive(clap::Args, Clone, Default)]
struct Overrides {
    /// JSON experiment configuration; flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_enum)]
    method: Option<Method>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    clients: Option<usize>,
    #[arg(long)]
    subsample: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    q_bits: Option<u64>,
    #[arg(long)]
    trials: Option<usize>,
    /// Input coordinates placed in the instance.
    #[arg(long)]
    features: Option<usize>,
    /// Draw every client batch from a single class.
    #[arg(long)]
    same_label: bool,
}

impl Overrides {
    fn resolve(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(p) => ExperimentConfig::from_json(&fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?)?,
            None => ExperimentConfig::default(),
        };
        if let Some(m) = self.method {
            cfg.method = m.into();
        }
        if let Some(b) = self.batch {
            cfg.batch = b;
        }
        if let Some(n) = self.clients {
            cfg.clients = n;
        }
        if self.subsample.is_some() {
            cfg.subsample = self.subsample;
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if self.q_bits.is_some() {
            cfg.q_bits = self.q_bits;
        }
        if let Some(t) = self.trials {
            cfg.trials = t;
        }
        if let Some(f) = self.features {
            cfg.features = f;
        }
        cfg.same_label |= self.same_label;
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Emit a planted instance with uniformly random A and X as JSON.
    Gen {
        #[arg(long, default_value_t = 500)]
        rows: usize,
        #[arg(long, default_value_t = 10)]
        batch: usize,
        #[arg(long, default_value_t = 20)]
        dim: usize,
        /// Defaults to the size needed by the lattice attack on all rows.
        #[arg(long)]
        q_bits: Option<u64>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run one federated round and dump the per-client gradient bundles.
    Simulate {
        #[command(flatten)]
        opts: Overrides,
        #[arg(long, default_value = "cross-entropy")]
        loss: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Build an instance (or load one with --instance) and attack it.
    Attack {
        #[command(flatten)]
        opts: Overrides,
        /// Planted instance JSON as written by `gen`.
        #[arg(long)]
        instance: Option<PathBuf>,
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Parameter sweeps written as CSV.
    Bench {
        #[command(flatten)]
        opts: Overrides,
        #[arg(long, value_enum)]
        sweep: Sweep,
        /// Comma-separated ascending values.
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn emit(text: &str, out: &Option<PathBuf>) -> Result<()> {
    match out {
        Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display()))?,
        None => println!("{text}"),
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Gen { rows, batch, dim, q_bits, seed, out } => {
            let bits = match q_bits {
                Some(b) => b,
                None => hssp::q_size_for(rows, batch)?,
            };
            let p = hssp::plant_instance(rows, batch, dim, bits, Ratio::new(1, 2), seed)?;
            emit(&p.to_json(), &out)
        }
        Command::Simulate { opts, loss, out } => {
            let cfg = opts.resolve()?;
            let loss = match loss.as_str() {
                "cross-entropy" | "ce" => Loss::CrossEntropy,
                "sum" | "sum-of-outputs" => Loss::SumOfOutputs,
                other => bail!("unknown loss {other:?}"),
            };
            let data = pipeline::load_dataset(&cfg)?;
            let model = flsim::mlp_init(&cfg.layer_sizes, cfg.seed)?;
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            let batches = (0..cfg.clients)
                .map(|_| data.random_batch(cfg.batch, &mut rng))
                .collect::<Result<Vec<_>, _>>()?;
            let round = flsim::fl_round(&model, &batches, loss)?;
            let json = serde_json::json!({
                "layer_sizes": cfg.layer_sizes,
                "clients": round.clients.iter().map(|b| b.to_json()).collect::<Vec<_>>(),
                "g_w_mean": round.g_w.transpose().iter().copied().collect::<Vec<_>>(),
                "g_b_mean": round.g_b.iter().copied().collect::<Vec<_>>(),
            });
            emit(&serde_json::to_string(&json)?, &out)
        }
        Command::Attack { opts, instance, report } => {
            let mut cfg = opts.resolve()?;
            let r = match instance {
                Some(path) => {
                    let p = PlantedInstance::from_json(&fs::read_to_string(&path)?)?;
                    let m = cfg.subsample.unwrap_or_else(|| {
                        pipeline::default_subsample(cfg.method, p.instance.batch(), p.instance.m_rows())
                    });
                    pipeline::attack_instance(&p, cfg.method, m, cfg.seed, cfg.max_resamples)
                }
                None => {
                    cfg.report = None;
                    pipeline::run_attack(&cfg)?
                }
            };
            emit(&serde_json::to_string_pretty(&r.to_json())?, &report)?;
            if !r.success {
                eprintln!("attack failed: {}", r.error.as_deref().unwrap_or("unknown"));
            }
            Ok(())
        }
        Command::Bench { opts, sweep, values, out } => {
            let cfg = opts.resolve()?;
            let data = pipeline::load_dataset(&cfg)?;
            let res = match sweep {
                Sweep::M => pipeline::bench_subsample_sweep(&cfg, &data, &values)?,
                Sweep::B => pipeline::bench_batch_sweep(&cfg, &data, &values)?,
                Sweep::N => pipeline::bench_defense(&cfg, &data, &values)?,
            };
            emit(res.to_csv().trim_end(), &out)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
