//! Command-line front end: synthetic data, pretraining, adaptation,
//! forecasting, evaluation and diagnostics.

mod commands;
mod settings;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use commands::{AdaptArgs, EvalArgs};
use factost::Result;

#[derive(Parser)]
#[command(name = "factost", version, about = "Spatio-temporal forecasting with a pretrained temporal backbone")]
struct Cli {
    /// `key=value` config file layered over the built-in defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override one config key; repeatable. Wins over the config file.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    set: Vec<String>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Write a synthetic corpus as CSV.
    SynthData {
        #[arg(long)]
        out: PathBuf,
        /// `kernel` (independent series) or `daily` (a panel with a shared daily cycle).
        #[arg(long)]
        kind: Option<String>,
        #[arg(long)]
        n_series: Option<usize>,
        #[arg(long)]
        length: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Pretrain the backbone on univariate windows.
    Pretrain {
        #[arg(long)]
        out: PathBuf,
        /// CSV corpus; a synthetic corpus is generated when absent.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        steps: Option<usize>,
        /// JSON-lines training trace, default `<out>.trace.jsonl`.
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Adapt a pretrained backbone to a multi-node panel.
    Adapt {
        #[arg(long, required_unless_present = "from_scratch")]
        backbone: Option<PathBuf>,
        /// Adapt a randomly initialized backbone instead.
        #[arg(long, conflicts_with = "backbone")]
        from_scratch: bool,
        #[arg(long)]
        data: Option<PathBuf>,
        /// Trailing fraction of training windows to adapt on.
        #[arg(long)]
        few_shot: Option<f64>,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Forecast past the end of a CSV panel.
    Forecast {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        horizon: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a checkpoint on a split of a panel.
    Evaluate {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: Option<PathBuf>,
        /// train, val, test or all.
        #[arg(long, default_value = "test")]
        split: String,
        /// JSON-lines metric report.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Plot-ready metric CSV.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Compare analytic and finite-difference gradients on a tiny model.
    GradAudit {
        #[arg(long)]
        instances: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Time adapted inference as the node count grows.
    ScaleBench {
        #[arg(long)]
        ckpt: Option<PathBuf>,
        /// Comma-separated node counts.
        #[arg(long)]
        n_list: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn run(cli: Cli) -> Result<bool> {
    let mut overrides = settings::parse_overrides(&cli.set)?;
    // dedicated flags are shorthands for config keys
    let mut flag = |k: &str, v: Option<String>| {
        if let Some(v) = v {
            overrides.set(k, v);
        }
    };
    match &cli.cmd {
        Cmd::SynthData { kind, n_series, length, seed, .. } => {
            flag("synth.kind", kind.clone());
            flag("synth.n_series", n_series.map(|v| v.to_string()));
            flag("synth.length", length.map(|v| v.to_string()));
            flag("synth.seed", seed.map(|v| v.to_string()));
        }
        Cmd::Pretrain { steps, .. } => flag("pretrain.total_steps", steps.map(|v| v.to_string())),
        Cmd::Adapt { few_shot, steps, .. } => {
            flag("adapt.few_shot_frac", few_shot.map(|v| v.to_string()));
            flag("adapt.total_steps", steps.map(|v| v.to_string()));
        }
        Cmd::GradAudit { instances, .. } => flag("audit.instances", instances.map(|v| v.to_string())),
        Cmd::ScaleBench { n_list, .. } => flag("scale.n_list", n_list.clone()),
        Cmd::Forecast { .. } | Cmd::Evaluate { .. } => {}
    }
    let doc = settings::resolve(cli.config.as_deref(), &overrides)?;
    match cli.cmd {
        Cmd::SynthData { out, .. } => commands::synth_data(&doc, &out)?,
        Cmd::Pretrain { out, data, trace, .. } => commands::pretrain(&doc, &out, data.as_deref(), trace.as_deref())?,
        Cmd::Adapt {
            backbone,
            from_scratch,
            data,
            out,
            trace,
            ..
        } => commands::adapt(
            &doc,
            AdaptArgs {
                out: &out,
                data: data.as_deref(),
                backbone: backbone.as_deref(),
                from_scratch,
                trace: trace.as_deref(),
            },
        )?,
        Cmd::Forecast { ckpt, input, horizon, out } => commands::forecast(&doc, &ckpt, &input, horizon, &out)?,
        Cmd::Evaluate {
            ckpt,
            data,
            split,
            out,
            csv,
        } => {
            commands::evaluate(
                &doc,
                EvalArgs {
                    ckpt: &ckpt,
                    data: data.as_deref(),
                    split: &split,
                    out: out.as_deref(),
                    csv: csv.as_deref(),
                },
            )?;
        }
        Cmd::GradAudit { out, .. } => return commands::grad_audit(&doc, out.as_deref()),
        Cmd::ScaleBench { ckpt, out, .. } => commands::scale_bench(&doc, ckpt.as_deref(), out.as_deref())?,
    }
    Ok(true)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
