use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use dfconformer::trainer::reproducible_mode;
use dfconformer_cli::bench::BenchSettings;
use dfconformer_cli::commands::{self, WeightSource, DEFAULT_DUMP_LIMIT, EVAL_HEADER};
use dfconformer_cli::{CliError, Result, RunConfig};

#[derive(Parser)]
#[command(name = "dfc", version, about = "Train, run and benchmark DF-Conformer speech enhancement models")]
#[command(after_help = "Set DFC_REPRODUCIBLE=1 to log zero wall times so reruns are byte-identical.")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model; writes metrics.csv, config.txt and checkpoint.dfc into --out.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Base preset; replaces any `preset` line in the config.
        #[arg(long)]
        preset: Option<String>,
        /// Overrides the training and model seeds.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Split a 16-bit mono WAV into speech and noise stems.
    Enhance {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Directory for <stem>_speech.wav and <stem>_noise.wav.
        #[arg(long)]
        out: PathBuf,
        /// Use the raw weights instead of their EMA.
        #[arg(long)]
        raw_weights: bool,
        input: PathBuf,
    },
    /// SI-SNR improvement on the synthetic validation set or on one WAV pair.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Validation settings (val_size, val_seed, clip length, SNR range).
        #[arg(long)]
        config: Option<PathBuf>,
        /// Overrides the validation seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Per-example CSV output.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, requires = "reference")]
        mixture: Option<PathBuf>,
        #[arg(long, requires = "mixture")]
        reference: Option<PathBuf>,
        #[arg(long)]
        raw_weights: bool,
    },
    /// Real-time factor versus input duration, single thread.
    BenchRtf {
        /// Preset to benchmark; repeat for several.
        #[arg(long = "preset", required = true)]
        presets: Vec<String>,
        /// Comma-separated durations in seconds.
        #[arg(long, value_delimiter = ',', default_values_t = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0, 10.0])]
        durations: Vec<f64>,
        #[arg(long, default_value_t = 5)]
        reps: usize,
        #[arg(long, default_value_t = 2)]
        warmup: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// CSV file; rows are appended under a single header.
        #[arg(long)]
        out: PathBuf,
    },
    /// Parameter count with a per-module breakdown.
    Params {
        #[arg(long, required_unless_present = "config")]
        preset: Option<String>,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Write one attention matrix as an N×N CSV.
    DumpAttention {
        #[arg(long, required_unless_present = "preset")]
        checkpoint: Option<PathBuf>,
        /// Untrained preset weights instead of a checkpoint.
        #[arg(long, conflicts_with = "checkpoint")]
        preset: Option<String>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Block index, 1-based.
        #[arg(long)]
        layer: usize,
        /// Head index, 1-based.
        #[arg(long)]
        head: usize,
        #[arg(long, default_value_t = DEFAULT_DUMP_LIMIT)]
        limit: usize,
        #[arg(long)]
        out: PathBuf,
        input: PathBuf,
    },
}

fn load_config(config: Option<&PathBuf>, preset: Option<&str>) -> Result<RunConfig> {
    let text = match config {
        Some(path) => std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?,
        None => String::new(),
    };
    match preset {
        Some(p) => {
            let body: String = text
                .lines()
                .filter(|l| l.split('#').next().unwrap_or("").split('=').next().unwrap_or("").trim() != "preset")
                .map(|l| format!("{l}\n"))
                .collect();
            RunConfig::parse(&format!("preset = {p}\n{body}"))
        }
        None => RunConfig::parse(&text),
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train {
            config,
            preset,
            seed,
            out,
        } => {
            let mut cfg = load_config(config.as_ref(), preset.as_deref())?;
            if let Some(seed) = seed {
                cfg.train.seed = seed;
                cfg.model.seed = seed;
            }
            let summary = commands::train(&cfg, &out, reproducible_mode())?;
            println!("trained {} steps", summary.steps);
            if let Some(row) = summary.last {
                println!("final loss {:.3} dB", row.loss);
            }
            println!("checkpoint {}", summary.checkpoint.display());
            println!("metrics {}", summary.metrics.display());
        }
        Command::Enhance {
            checkpoint,
            out,
            raw_weights,
            input,
        } => {
            let (s, n) = commands::enhance(&checkpoint, &input, &out, raw_weights)?;
            println!("speech {}", s.display());
            println!("noise {}", n.display());
        }
        Command::Eval {
            checkpoint,
            config,
            seed,
            out,
            mixture,
            reference,
            raw_weights,
        } => {
            let rows = match (mixture, reference) {
                (Some(m), Some(r)) => vec![commands::eval_pair(&checkpoint, &m, &r, raw_weights)?],
                _ => {
                    let mut cfg = load_config(config.as_ref(), None)?;
                    if let Some(seed) = seed {
                        cfg.train.val_seed = seed;
                    }
                    commands::eval_synthetic(&checkpoint, &cfg, raw_weights)?
                }
            };
            if let Some(path) = out {
                let mut csv = format!("{EVAL_HEADER}\n");
                for r in &rows {
                    csv.push_str(&r.to_csv());
                    csv.push('\n');
                }
                std::fs::write(&path, csv).map_err(|e| CliError::io(&path, e))?;
            }
            println!("examples {}", rows.len());
            println!("mean si_snri_db {:.3}", commands::mean_si_snri(&rows));
        }
        Command::BenchRtf {
            presets,
            durations,
            reps,
            warmup,
            seed,
            out,
        } => {
            let settings = BenchSettings {
                durations,
                reps,
                warmup,
                seed,
            };
            for row in commands::bench_rtf(&presets, &settings, &out)? {
                println!("{}", row.to_csv());
            }
        }
        Command::Params { preset, config } => {
            let cfg = load_config(config.as_ref(), preset.as_deref())?;
            print!("{}", commands::params(&cfg));
        }
        Command::DumpAttention {
            checkpoint,
            preset,
            seed,
            layer,
            head,
            limit,
            out,
            input,
        } => {
            let source = match (&checkpoint, &preset) {
                (Some(c), _) => WeightSource::Checkpoint(c),
                (None, Some(p)) => WeightSource::Preset(p, seed),
                (None, None) => return Err(CliError::Usage("give --checkpoint or --preset".to_string())),
            };
            let s = commands::dump_attention(source, &input, layer, head, limit, &out)?;
            println!("frames {}", s.frames);
            println!("max_row_sum_error {:.3e}", s.row_sum_error);
            println!("min_entry {:.3e}", s.min_entry);
            println!("max_streaming_error {:.3e}", s.streaming_error);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
