use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use anyhow::Context;
use clap::{Parser, Subcommand};
use vcodec_core::eval::{self, RdOptions};
use vcodec_core::trainer::{self, EpochRecord, RunOptions, TrainingConfig};

const EXIT_INTERNAL: u8 = 1;
const EXIT_INPUT: u8 = 2;

#[derive(Parser)]
#[command(name = "vcodec", version, about = "Image compression with learned pre- and post-processing around JPEG")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train the networks from a TOML config.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        checkpoint_dir: PathBuf,
        /// Overrides the config seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Continue after the last completed phase in the checkpoint directory.
        #[arg(long)]
        resume: bool,
        /// Suppress per-epoch progress on stderr.
        #[arg(long)]
        quiet: bool,
    },
    /// Encode an image into a JPEG description plus sidecar.
    Compress {
        input: PathBuf,
        #[arg(long)]
        checkpoint_dir: PathBuf,
        #[arg(long)]
        quality: u8,
        /// Defaults to the input path with a .jpg extension.
        #[arg(long, short)]
        output: Option<PathBuf>,
    },
    /// Restore an image from a JPEG description and its sidecar.
    Decompress {
        input: PathBuf,
        #[arg(long)]
        checkpoint_dir: PathBuf,
        /// Defaults to the input path with a .png extension.
        #[arg(long, short)]
        output: Option<PathBuf>,
    },
    /// Emit a rate-distortion table for a directory of test images.
    RdCurve {
        #[arg(long)]
        test_dir: PathBuf,
        #[arg(long)]
        checkpoint_dir: PathBuf,
        /// Operating points of the trained pipeline.
        #[arg(long, value_delimiter = ',', default_value = "5,10,20,40")]
        quality: Vec<u8>,
        /// Qualities of the full-resolution JPEG series.
        #[arg(long, value_delimiter = ',', default_value = "2,3,4,5,10")]
        baseline_quality: Vec<u8>,
        /// Skip the bicubic→JPEG→bicubic series.
        #[arg(long)]
        no_bicubic: bool,
        /// Append per-method mean rows.
        #[arg(long)]
        mean: bool,
        /// CSV destination; stdout when omitted.
        #[arg(long, short)]
        output: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            let input = err
                .chain()
                .find_map(|e| e.downcast_ref::<vcodec_core::Error>())
                .is_some_and(|e| e.is_input_error());
            ExitCode::from(if input { EXIT_INPUT } else { EXIT_INTERNAL })
        }
    }
}

fn check_quality(q: u8) -> anyhow::Result<()> {
    if !(1..=100).contains(&q) {
        return Err(vcodec_core::Error::InvalidArgument(format!("quality {q} outside 1..=100")).into());
    }
    Ok(())
}

fn run(command: Command) -> anyhow::Result<()> {
    match command {
        Command::Train {
            config,
            checkpoint_dir,
            seed,
            resume,
            quiet,
        } => {
            let mut cfg = TrainingConfig::load(&config)?;
            if let Some(seed) = seed {
                cfg.seed = seed;
            }
            let start = Instant::now();
            let corpus = trainer::load_corpus(&cfg)?;
            eprintln!(
                "training on {} patches: {} epochs in total",
                corpus.len(),
                cfg.total_epochs() * if cfg.quality_mode == trainer::QualityMode::PerFactor { cfg.quality_factors.len() } else { 1 }
            );
            let mut report = |r: &EpochRecord| {
                if !quiet {
                    eprintln!(
                        "[{:>7.1}s] iter {} {:<10} epoch {:>3}  loss {:.6}  lr {:.3e}",
                        start.elapsed().as_secs_f64(),
                        r.outer_iter,
                        r.phase,
                        r.epoch,
                        r.loss.value,
                        r.lr
                    );
                }
            };
            let opts = RunOptions {
                checkpoint_dir: checkpoint_dir.clone(),
                resume,
                observer: Some(&mut report),
            };
            let runs = trainer::run_training(&cfg, &corpus, opts)?;
            for (q, state) in &runs {
                let dir = match q {
                    Some(q) => checkpoint_dir.join(format!("q{q}")),
                    None => checkpoint_dir.clone(),
                };
                if state.resumed_phases > 0 {
                    eprintln!("resumed after {} completed phases", state.resumed_phases);
                }
                println!(
                    "{}: {} epochs, {} steps",
                    dir.display(),
                    state.epoch_count(),
                    state.global_step
                );
            }
            Ok(())
        }
        Command::Compress {
            input,
            checkpoint_dir,
            quality,
            output,
        } => {
            check_quality(quality)?;
            let output = output.unwrap_or_else(|| input.with_extension("jpg"));
            if output == input {
                return Err(vcodec_core::Error::InvalidArgument("output would overwrite the input".into()).into());
            }
            let s =eval::compress_file(&input, &checkpoint_dir, quality, &output)?;
            println!(
                "{}: coded {}x{}, original {}x{}, {} bytes, bpp {}",
                s.output.display(),
                s.coded_dims.0,
                s.coded_dims.1,
                s.original_dims.0,
                s.original_dims.1,
                s.bytes,
                s.bpp
            );
            Ok(())
        }
        Command::Decompress {
            input,
            checkpoint_dir,
            output,
        } => {
            let output = output.unwrap_or_else(|| input.with_extension("png"));
            let (h, w) = eval::decompress_file(&input, &checkpoint_dir, &output)?;
            println!("{}: {}x{}", output.display(), h, w);
            Ok(())
        }
        Command::RdCurve {
            test_dir,
            checkpoint_dir,
            quality,
            baseline_quality,
            no_bicubic,
            mean,
            output,
        } => {
            for &q in quality.iter().chain(&baseline_quality) {
                check_quality(q)?;
            }
            let opts = RdOptions {
                qualities: quality,
                baseline_qualities: baseline_quality,
                bicubic: !no_bicubic,
                mean_rows: mean,
            };
            let rows = eval::rd_curve(&test_dir, &checkpoint_dir, &opts)?;
            match output {
                Some(path) => {
                    let file = std::fs::File::create(&path).with_context(|| format!("creating {}", path.display()))?;
                    eval::write_records(&rows, file)?;
                }
                None => {
                    let stdout = std::io::stdout();
                    let mut lock = stdout.lock();
                    eval::write_records(&rows, &mut lock)?;
                    lock.flush()?;
                }
            }
            Ok(())
        }
    }
}
