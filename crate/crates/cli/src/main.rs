mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use snn_trojan::snn::FaultKind;

use config::RunConfig;

/// Reported with exit code 1: the pipeline ran but a check did not hold.
#[derive(Debug)]
pub struct VerificationFailed(pub String);

impl std::fmt::Display for VerificationFailed {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for VerificationFailed {}

#[derive(Parser)]
#[command(name = "snn-trojan", version, about = "Input-triggered hardware Trojan pipeline for spiking neural networks")]
struct Cli {
    /// TOML or JSON run configuration; flags override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Root seed; each stage derives its own.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Directory for every artifact without an explicit path.
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    /// Worker threads for the parallel stages.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args, Default)]
struct DataPaths {
    /// Training set (JSON lines).
    #[arg(long)]
    train: Option<PathBuf>,
    /// Test set (JSON lines).
    #[arg(long)]
    test: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate the synthetic dataset and split it into train and test sets.
    GenData {
        #[command(flatten)]
        paths: DataPaths,
        #[arg(long)]
        train_samples: Option<usize>,
    },
    /// Train the toy convolutional SNN.
    Train {
        #[command(flatten)]
        paths: DataPaths,
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Print a model's accuracy on a dataset (the test set by default).
    Eval {
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Inject each fault into each neuron and report the accuracy drop.
    FaultScan {
        #[arg(long)]
        model: Option<PathBuf>,
        /// Dataset to score on (the test set by default).
        #[arg(long)]
        data: Option<PathBuf>,
        /// Fault kinds, comma separated: dead, saturated.
        #[arg(long, value_delimiter = ',')]
        kinds: Option<Vec<FaultKind>>,
        /// Restrict the scan to these layers, comma separated.
        #[arg(long, value_delimiter = ',')]
        layers: Option<Vec<usize>>,
    },
    /// Choose the Trojan's trigger spike pattern.
    SelectPattern {
        #[command(flatten)]
        paths: DataPaths,
        #[arg(long)]
        model: Option<PathBuf>,
        /// Trojan neuron as L<layer>:<neuron>; chosen by a saturated-fault scan when omitted.
        #[arg(long)]
        trojan: Option<String>,
        #[arg(long)]
        pattern: Option<PathBuf>,
        #[arg(long)]
        d_max: Option<usize>,
        #[arg(long)]
        budget: Option<usize>,
    },
    /// Search for an input that makes the Trojan neuron emit the pattern.
    GenTrigger {
        #[command(flatten)]
        paths: DataPaths,
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        pattern: Option<PathBuf>,
        /// Output trigger file.
        #[arg(long)]
        trigger: Option<PathBuf>,
        #[arg(long)]
        trojan: Option<String>,
        #[arg(long)]
        restarts: Option<usize>,
        #[arg(long)]
        max_iters: Option<usize>,
    },
    /// Run the sample / trigger / sample sequence on the accelerator model.
    Attack {
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        test: Option<PathBuf>,
        #[arg(long)]
        trigger: Option<PathBuf>,
        #[arg(long)]
        cores: Option<usize>,
        /// Build the accelerator without the Trojan.
        #[arg(long)]
        no_ht: bool,
        #[arg(long)]
        gap_steps: Option<usize>,
        /// Test sample whose attack is written to trace.jsonl.
        #[arg(long)]
        trace_sample: Option<usize>,
    },
    /// Re-check the pattern and trigger against fresh clean inference.
    Verify {
        #[command(flatten)]
        paths: DataPaths,
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        pattern: Option<PathBuf>,
        #[arg(long)]
        trigger: Option<PathBuf>,
    },
}

fn set<T>(slot: &mut T, v: Option<T>) {
    if let Some(v) = v {
        *slot = v;
    }
}

fn set_opt<T>(slot: &mut Option<T>, v: Option<T>) {
    if v.is_some() {
        *slot = v;
    }
}

fn apply_paths(cfg: &mut RunConfig, p: DataPaths) {
    set_opt(&mut cfg.paths.train, p.train);
    set_opt(&mut cfg.paths.test, p.test);
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    set_opt(&mut cfg.seed, cli.seed);
    set_opt(&mut cfg.out_dir, cli.out_dir);
    set_opt(&mut cfg.threads, cli.threads);
    cfg.validate()?;
    if let Some(n) = cfg.threads {
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    let out = cfg.out_dir();
    std::fs::create_dir_all(&out).map_err(|e| anyhow::anyhow!("creating {}: {e}", out.display()))?;

    match cli.cmd {
        Cmd::GenData { paths, train_samples } => {
            apply_paths(&mut cfg, paths);
            set(&mut cfg.data.train_samples, train_samples);
            commands::gen_data(&cfg)
        }
        Cmd::Train { paths, model, epochs } => {
            apply_paths(&mut cfg, paths);
            set_opt(&mut cfg.paths.model, model);
            set(&mut cfg.train.epochs, epochs);
            commands::train(&cfg)
        }
        Cmd::Eval { model, data } => {
            set_opt(&mut cfg.paths.model, model);
            let data = data.unwrap_or_else(|| cfg.test_path());
            commands::eval(&cfg, &data)
        }
        Cmd::FaultScan {
            model,
            data,
            kinds,
            layers,
        } => {
            set_opt(&mut cfg.paths.model, model);
            set(&mut cfg.campaign.kinds, kinds);
            set_opt(&mut cfg.campaign.layers, layers);
            let data = data.unwrap_or_else(|| cfg.test_path());
            commands::fault_scan(&cfg, &data)
        }
        Cmd::SelectPattern {
            paths,
            model,
            trojan,
            pattern,
            d_max,
            budget,
        } => {
            apply_paths(&mut cfg, paths);
            set_opt(&mut cfg.paths.model, model);
            set_opt(&mut cfg.pattern.trojan, trojan);
            set_opt(&mut cfg.paths.pattern, pattern);
            set(&mut cfg.pattern.d_max, d_max);
            set(&mut cfg.pattern.budget, budget);
            commands::select_pattern(&cfg)
        }
        Cmd::GenTrigger {
            paths,
            model,
            pattern,
            trigger,
            trojan,
            restarts,
            max_iters,
        } => {
            apply_paths(&mut cfg, paths);
            set_opt(&mut cfg.paths.model, model);
            set_opt(&mut cfg.paths.pattern, pattern);
            set_opt(&mut cfg.paths.trigger, trigger);
            set_opt(&mut cfg.pattern.trojan, trojan);
            set(&mut cfg.trigger.restarts, restarts);
            set(&mut cfg.trigger.max_iters, max_iters);
            commands::gen_trigger(&cfg)
        }
        Cmd::Attack {
            model,
            test,
            trigger,
            cores,
            no_ht,
            gap_steps,
            trace_sample,
        } => {
            set_opt(&mut cfg.paths.model, model);
            set_opt(&mut cfg.paths.test, test);
            set_opt(&mut cfg.paths.trigger, trigger);
            set(&mut cfg.hw.cores, cores);
            if no_ht {
                cfg.hw.ht = false;
            }
            set(&mut cfg.hw.attack.gap_steps, gap_steps);
            set(&mut cfg.hw.trace_sample, trace_sample);
            cfg.validate()?;
            commands::attack(&cfg)
        }
        Cmd::Verify {
            paths,
            model,
            pattern,
            trigger,
        } => {
            apply_paths(&mut cfg, paths);
            set_opt(&mut cfg.paths.model, model);
            set_opt(&mut cfg.paths.pattern, pattern);
            set_opt(&mut cfg.paths.trigger, trigger);
            commands::verify(&cfg)
        }
    }
}

/// 1 for a failed check, 2 for bad usage or input.
fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<VerificationFailed>() {
            return 1;
        }
        if let Some(e) = cause.downcast_ref::<snn_trojan::Error>() {
            use snn_trojan::Error as E;
            return match e {
                E::Verification { .. }
                | E::TriggerExhausted { .. }
                | E::PatternExhausted { .. }
                | E::Diverged { .. }
                | E::Simulator(_) => 1,
                _ => 2,
            };
        }
    }
    2
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
