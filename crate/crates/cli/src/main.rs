use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};

use cyclelife::features::Window;
use cyclelife_cli::{
    cmd_baseline, cmd_evaluate, cmd_gradcheck, cmd_predict, cmd_synth, cmd_train, exit_code, EvaluateMode, RunConfig,
};

#[derive(Parser)]
#[command(name = "cyclelife", version, about = "Early cycle-life prediction from discharge curves")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// JSON run configuration; flags override its fields.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Dataset manifest.
    #[arg(long, global = true)]
    data: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic cohort and manifest.
    Synth {
        #[arg(long)]
        count: Option<usize>,
    },
    /// Train one network and save the artifact plus loss history.
    Train {
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        terminal: Option<u32>,
        #[arg(long)]
        augment: bool,
    },
    /// Evaluate a saved model, or run a multi-seed terminal-cycle sweep.
    Evaluate {
        /// Evaluate this artifact instead of sweeping.
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        k: Option<usize>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        from: Option<u32>,
        #[arg(long)]
        to: Option<u32>,
        #[arg(long)]
        step: Option<u32>,
        #[arg(long)]
        augment: bool,
    },
    /// Fit the log-variance linear baseline.
    Baseline,
    /// Finite-difference check of the analytic gradients.
    Gradcheck {
        #[arg(long)]
        eps: Option<f64>,
        #[arg(long, hide = true)]
        corrupt_backward: bool,
    },
    /// Predict the cycle life of one cell.
    Predict {
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        cell: PathBuf,
        #[arg(long)]
        start: Option<u32>,
        #[arg(long)]
        terminal: Option<u32>,
        /// Also write the prediction to this CSV.
        #[arg(long)]
        csv: Option<PathBuf>,
        /// Dump the unscaled feature matrix to this CSV.
        #[arg(long)]
        features: Option<PathBuf>,
    },
}

fn base_config(common: &Common) -> Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    if let Some(o) = &common.out {
        cfg.out = o.clone();
    }
    if let Some(d) = &common.data {
        cfg.data = Some(d.clone());
    }
    Ok(cfg)
}

fn enable_augmentation(cfg: &mut RunConfig) {
    if cfg.train.augmentation.is_none() {
        cfg.train.augmentation = Some(Default::default());
    }
}

fn run(cli: Cli) -> Result<bool> {
    let mut cfg = base_config(&cli.common)?;
    match cli.command {
        Command::Synth { count } => {
            if let Some(c) = count {
                cfg.synth.count = c;
            }
            let o = cmd_synth(&cfg)?;
            println!(
                "wrote {} cells ({} train / {} primary_test / {} secondary_test) to {}",
                cfg.synth.count,
                o.split.train.len(),
                o.split.primary_test.len(),
                o.split.secondary_test.len(),
                o.manifest.display()
            );
        }
        Command::Train { epochs, terminal, augment } => {
            if let Some(e) = epochs {
                cfg.train.epochs = e;
            }
            if let Some(t) = terminal {
                cfg.train.window.terminal = t;
            }
            if augment {
                enable_augmentation(&mut cfg);
            }
            let o = cmd_train(&cfg)?;
            match o.history.final_loss() {
                Some(l) => println!("final loss {l:.6e}"),
                None => println!("no training epochs run"),
            }
            println!("model: {}", o.artifact_path.display());
            println!("history: {}", o.history_path.display());
        }
        Command::Evaluate { model, k, epochs, from, to, step, augment } => {
            if let Some(k) = k {
                cfg.k = k;
            }
            if let Some(e) = epochs {
                cfg.train.epochs = e;
            }
            if let Some(f) = from {
                cfg.sweep.from = f;
            }
            if let Some(t) = to {
                cfg.sweep.to = t;
            }
            if let Some(s) = step {
                cfg.sweep.step = s;
            }
            if augment {
                enable_augmentation(&mut cfg);
            }
            let mode = match model.or_else(|| cfg.model.clone()) {
                Some(p) => EvaluateMode::Artifact(p),
                None => EvaluateMode::Sweep,
            };
            let o = cmd_evaluate(&cfg, &mode)?;
            for r in &o.reports {
                for line in r.summary_lines() {
                    println!("{line}");
                }
            }
            println!("metrics: {}", o.metrics_path.display());
            if let Some(p) = o.plot_path {
                println!("plot data: {}", p.display());
            }
        }
        Command::Baseline => {
            let o = cmd_baseline(&cfg)?;
            println!("slope {} intercept {} ({:?})", o.model.slope, o.model.intercept, o.model.target_transform);
            for m in &o.metrics {
                println!("{}: rmse {:.3} mape {:.3}%", m.split.as_str(), m.rmse, m.mape);
            }
            println!("model: {}", o.model_path.display());
        }
        Command::Gradcheck { eps, corrupt_backward } => {
            if let Some(e) = eps {
                cfg.gradcheck.eps = e;
            }
            let o = cmd_gradcheck(&cfg, corrupt_backward)?;
            let r = &o.report;
            println!("max relative error {:.6e}", r.max_relative_error);
            println!(
                "worst coordinate {}[{}]: analytic {:.9e} numeric {:.9e} ({} parameters checked)",
                r.worst_tensor, r.worst_index, r.analytic, r.numeric, r.checked
            );
            if !o.passed {
                eprintln!("gradient check failed: tolerance {:e}", cfg.gradcheck.tolerance);
                return Ok(false);
            }
        }
        Command::Predict { model, cell, start, terminal, csv, features } => {
            let model = match model.or_else(|| cfg.model.clone()) {
                Some(m) => m,
                None => anyhow::bail!(cyclelife::Error::InvalidConfig("predict needs --model".into())),
            };
            let window = match (start, terminal) {
                (None, None) => None,
                (s, t) => {
                    let d = cfg.train.window;
                    Some(Window::new(s.unwrap_or(d.start), t.unwrap_or(d.terminal)))
                }
            };
            let o = cmd_predict(&model, &cell, window, csv.as_deref(), features.as_deref())?;
            println!("{} {:.3}", o.cell_id, o.predicted);
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
