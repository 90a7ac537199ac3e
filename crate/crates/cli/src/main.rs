//! Command-line front end for probability-map text segmentation tooling.

mod commands;
mod options;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use options::{parse_grid, ConfigArgs, SceneArgs};
use pmtext::io::Colormap;
use pmtext::{Grid, NoiseSpec};

/// Invalid arguments detected outside clap.
#[derive(Debug)]
pub struct Usage(pub String);

impl std::fmt::Display for Usage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

#[derive(Parser, Debug)]
#[command(
    name = "pmtext",
    version,
    about = "Probability-map labels, instance reconstruction and evaluation for arbitrary-shape text"
)]
struct Cli {
    /// Print machine-readable JSON on stdout
    #[arg(long, global = true)]
    json: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Render the probability-map stack of an annotation file
    GenLabels {
        /// Annotation JSON
        #[arg(long)]
        ann: PathBuf,
        /// Output tensor file
        #[arg(long)]
        out: PathBuf,
        /// Also save the stack as an image strip
        #[arg(long)]
        heatmap: Option<PathBuf>,
        #[arg(long, default_value = "gray")]
        colormap: Colormap,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Write synthetic scenes with (optionally corrupted) oracle predictions
    Synth {
        #[arg(long, default_value_t = 1)]
        scenes: usize,
        #[command(flatten)]
        scene: SceneArgs,
        #[arg(long)]
        out: PathBuf,
        /// Also save each stack as a colour strip
        #[arg(long)]
        heatmaps: bool,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Grow instances from a predicted stack; writes unfiltered detections
    Reconstruct {
        /// Tensor file
        #[arg(long)]
        input: PathBuf,
        /// Detections JSON (stdout when omitted)
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also write the grown masks
        #[arg(long)]
        masks: Option<PathBuf>,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Filter grown masks against the predicted stack
    Filter {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        masks: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Extract boundaries of masks
    Contours {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        masks: PathBuf,
        /// Detections JSON (stdout when omitted)
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Score detections against annotations
    Eval {
        /// Annotation JSON or directory of them
        #[arg(long)]
        gt: PathBuf,
        /// Detection JSON or directory of them (matched by file stem)
        #[arg(long)]
        dets: PathBuf,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Time the post-processing stages
    Bench {
        /// Tensor file; a synthetic scene is used when omitted
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long, default_value = "1024x1024", value_parser = parse_grid)]
        grid: Grid,
        #[arg(long, default_value_t = 16)]
        instances: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "sigma=0.05")]
        noise: NoiseSpec,
        #[arg(long, default_value_t = 10)]
        runs: usize,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Labels or predictions through reconstruction, filtering, boundaries and scoring
    Pipeline {
        /// Number of synthetic scenes to run
        #[arg(long, conflicts_with = "gt")]
        synth: Option<usize>,
        #[command(flatten)]
        scene: SceneArgs,
        /// Annotation JSON or directory
        #[arg(long)]
        gt: Option<PathBuf>,
        /// Predicted tensor file or directory of `<stem>.pmap`; oracle labels when omitted
        #[arg(long, requires = "gt")]
        pred: Option<PathBuf>,
        /// Directory for per-image detections
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        config: ConfigArgs,
    },
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let j = cli.json;
    match &cli.command {
        Command::GenLabels {
            ann,
            out,
            heatmap,
            colormap,
            config,
        } => commands::gen_labels(ann, out, heatmap.as_deref(), *colormap, config, j),
        Command::Synth {
            scenes,
            scene,
            out,
            heatmaps,
            config,
        } => commands::synth(*scenes, scene, out, *heatmaps, config, j),
        Command::Reconstruct {
            input,
            out,
            masks,
            config,
        } => commands::reconstruct(input, out.as_deref(), masks.as_deref(), config, j),
        Command::Filter {
            input,
            masks,
            out,
            config,
        } => commands::filter(input, masks, out, config, j),
        Command::Contours {
            input,
            masks,
            out,
            config,
        } => commands::contours(input, masks, out.as_deref(), config, j),
        Command::Eval { gt, dets, config } => commands::eval(gt, dets, config, j),
        Command::Bench {
            input,
            grid,
            instances,
            seed,
            noise,
            runs,
            config,
        } => commands::bench(input.as_deref(), *grid, *instances, *seed, noise, *runs, config, j),
        Command::Pipeline {
            synth,
            scene,
            gt,
            pred,
            out,
            config,
        } => commands::pipeline(*synth, scene, gt.as_deref(), pred.as_deref(), out.as_ref(), config, j),
    }
}

/// Validation problems exit with 2, environment failures (I/O) with 1, a
/// closed stdout with 0.
fn exit_code(err: &anyhow::Error) -> u8 {
    fn library(e: &pmtext::Error) -> u8 {
        match e {
            pmtext::Error::File { source, .. } => library(source),
            pmtext::Error::Io(_) | pmtext::Error::Image(_) => 1,
            _ => 2,
        }
    }
    for cause in err.chain() {
        if cause
            .downcast_ref::<std::io::Error>()
            .is_some_and(|e| e.kind() == std::io::ErrorKind::BrokenPipe)
        {
            return 0;
        }
        if cause.is::<Usage>() {
            return 2;
        }
        if let Some(e) = cause.downcast_ref::<pmtext::Error>() {
            return library(e);
        }
    }
    1
}

fn init_threads() -> Result<(), Usage> {
    let Ok(v) = std::env::var("PMAP_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Usage(format!("PMAP_THREADS must be a positive integer, got {v:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Usage(e.to_string()))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Err(e) = init_threads() {
        eprintln!("error: {e}");
        return ExitCode::from(2);
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let code = exit_code(&e);
            if code != 0 {
                // library errors already carry their causes in the message
                eprintln!("error: {e}");
            }
            ExitCode::from(code)
        }
    }
}
