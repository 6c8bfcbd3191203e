use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use setvae::data::SyntheticKind;
use setvae::metrics::Distance;
use setvae_cli::commands::{self, AttnOptions, SampleOptions, SynthOptions};
use setvae_cli::{CliError, Result};

#[derive(Parser)]
#[command(name = "setvae", about = "Train, sample and evaluate a hierarchical set VAE")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model on a JSON-lines dataset.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Overrides the seed in the config file.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Print a progress line every this many steps (0 disables).
        #[arg(long, default_value_t = 100)]
        report_every: u64,
    },
    /// Generate sets from a checkpoint.
    Sample {
        #[arg(long)]
        ckpt: PathBuf,
        /// Cardinality of every sample; drawn from the training histogram if omitted.
        #[arg(long)]
        n: Option<usize>,
        #[arg(long, default_value_t = 1)]
        num_samples: usize,
        #[arg(long, default_value_t = 1.0)]
        temperature: f64,
        /// Share the hierarchical latents across samples; only the initial set is redrawn.
        #[arg(long)]
        fix_latents: bool,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// MMD, COV and 1-NNA between two populations, printed as JSON.
    Eval {
        #[arg(long)]
        gen: PathBuf,
        #[arg(long = "ref")]
        reference: PathBuf,
        #[arg(long, default_value = "cd")]
        distance: String,
    },
    /// Reconstruct every set of a dataset through the inference path.
    Reconstruct {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Per-set CD and KL table; defaults to the output path with a .csv extension.
        #[arg(long)]
        sidecar: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Per-point attention assignments at one level.
    AttnExport {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// 1-based level.
        #[arg(long)]
        level: usize,
        #[arg(long, default_value = "encoder")]
        side: String,
        #[arg(long, default_value_t = 0)]
        head: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write a synthetic dataset.
    Synth {
        /// Comma-separated kinds: circle, cross, two_blobs.
        #[arg(long, default_value = "circle")]
        kind: String,
        /// Sets per kind.
        #[arg(long)]
        count: usize,
        #[arg(long, default_value_t = 32)]
        n_min: usize,
        #[arg(long, default_value_t = 64)]
        n_max: usize,
        #[arg(long, default_value_t = 0.01)]
        noise: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train {
            config,
            data,
            out,
            seed,
            resume,
            report_every,
        } => {
            let path = commands::cmd_train(config.as_deref(), &data, &out, seed, resume.as_deref(), |row| {
                if report_every > 0 && (row.step + 1) % report_every == 0 {
                    eprintln!(
                        "step {} total {:.5} recon {:.5} kl {:.4} beta {:.5} lr {:.2e}",
                        row.step + 1,
                        row.total,
                        row.recon,
                        row.kl_sum,
                        row.beta,
                        row.lr
                    );
                }
            })?;
            println!("{}", path.display());
        }
        Command::Sample {
            ckpt,
            n,
            num_samples,
            temperature,
            fix_latents,
            seed,
            out,
        } => {
            let opts = SampleOptions {
                n,
                num_samples,
                temperature,
                fix_latents,
                seed,
            };
            commands::cmd_sample(&ckpt, &opts, &out)?;
        }
        Command::Eval {
            gen,
            reference,
            distance,
        } => {
            let d = Distance::parse(&distance)?;
            println!("{}", commands::cmd_eval(&gen, &reference, d)?);
        }
        Command::Reconstruct {
            ckpt,
            data,
            out,
            sidecar,
            seed,
        } => {
            let sidecar = sidecar.unwrap_or_else(|| out.with_extension("csv"));
            if sidecar == out {
                return Err(CliError::Config("sidecar path equals output path".into()));
            }
            commands::cmd_reconstruct(&ckpt, &data, &out, &sidecar, seed)?;
        }
        Command::AttnExport {
            ckpt,
            data,
            level,
            side,
            head,
            seed,
            out,
        } => {
            let opts = AttnOptions {
                level,
                side: commands::parse_side(&side)?,
                head,
                seed,
            };
            commands::cmd_attn_export(&ckpt, &data, &opts, &out)?;
        }
        Command::Synth {
            kind,
            count,
            n_min,
            n_max,
            noise,
            seed,
            out,
        } => {
            let kinds = kind
                .split(',')
                .map(|k| SyntheticKind::parse(k.trim()))
                .collect::<setvae::Result<Vec<_>>>()?;
            let opts = SynthOptions {
                kinds,
                count,
                n_range: (n_min, n_max),
                noise_sd: noise,
                seed,
            };
            commands::cmd_synth(&opts, &out)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let msg = e.kind().to_string();
            let detail = e.to_string().lines().next().unwrap_or_default().to_string();
            eprintln!("error code=usage: {msg}: {}", detail.trim_start_matches("error: "));
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.one_line());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
