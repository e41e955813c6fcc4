use std::path::PathBuf;
use std::process::ExitCode;

use cakit::conceptattn::{ConceptAttentionMode, HeadAggregation, SaliencyOptions, SaliencySpace};
use cakit::mmdit::ModelConfig;
use cakit::planted;
use cakit::segeval::{AblationParams, Manifest, MiouMode, SweepAxis};
use cakit::Weights;
use cakit_cli::{
    cmd_ablate, cmd_demo_planted, cmd_eval, cmd_gen_weights, cmd_run, parse_layers,
    scenes_from_manifest, split_list, sweep_from_axis, CliError, CliResult, EvalMode, ImageSource,
    RunSpec, CALIBRATED_SIGMA,
};
use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(
    name = "ca-kit",
    version,
    about = "Concept saliency maps from a multi-modal DiT"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct SeedArg {
    #[arg(long, env = "CA_KIT_SEED", default_value_t = 0)]
    seed: u64,
}

#[derive(Clone, Copy, ValueEnum)]
enum Toggle {
    On,
    Off,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Single,
    Multi,
}

#[derive(Clone, Copy, ValueEnum)]
enum MiouArg {
    TwoClass,
    Foreground,
    Multiclass,
}

#[derive(Subcommand)]
enum Command {
    /// Write a seeded weight file for the default configuration.
    GenWeights {
        #[arg(long)]
        out: PathBuf,
        /// Use the planted construction instead of random init.
        #[arg(long)]
        planted: bool,
        #[command(flatten)]
        seed: SeedArg,
    },
    /// Compute saliency maps for one image.
    Run {
        #[arg(long)]
        weights: PathBuf,
        #[arg(long)]
        prompt: String,
        #[arg(long)]
        concepts: String,
        #[arg(long, default_value = "")]
        background: String,
        #[arg(long, default_value_t = 500)]
        timestep: u32,
        #[arg(long, default_value = "all")]
        layers: String,
        #[arg(long, default_value = "output")]
        space: SaliencySpace,
        #[arg(long, value_enum, default_value = "on")]
        softmax: Toggle,
        #[arg(long, default_value = "concat")]
        head_agg: HeadAggregation,
        /// Grayscale PGM of the model's image size.
        #[arg(long, conflicts_with = "synthetic")]
        image: Option<PathBuf>,
        /// Seed for synthetic image tokens (used when no image is given).
        #[arg(long)]
        synthetic: Option<u64>,
        #[command(flatten)]
        seed: SeedArg,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate saliency score files against ground-truth masks.
    Eval {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, value_enum, default_value = "single")]
        mode: ModeArg,
        #[arg(long, default_value = "background")]
        background: String,
        #[arg(long, value_enum, default_value = "two-class")]
        miou_mode: MiouArg,
        #[arg(long)]
        out: PathBuf,
    },
    /// Sweep one design axis and report metrics per cell.
    Ablate {
        #[arg(long)]
        sweep: SweepAxis,
        /// Timesteps for the timestep sweep.
        #[arg(long)]
        steps: Option<String>,
        /// Defaults to planted weights built from the seed.
        #[arg(long)]
        weights: Option<PathBuf>,
        /// Records need image_path and mask_path.
        #[arg(long, conflicts_with = "synthetic")]
        manifest: Option<PathBuf>,
        /// Number of planted single-object scenes.
        #[arg(long, default_value_t = 6)]
        synthetic: usize,
        #[arg(long, default_value_t = CALIBRATED_SIGMA)]
        sigma: f64,
        #[arg(long, default_value = "background,grass,sky")]
        background: String,
        #[arg(long, default_value_t = 500)]
        timestep: u32,
        #[arg(long, default_value = "all")]
        layers: String,
        #[arg(long, default_value = "output")]
        space: SaliencySpace,
        #[arg(long, value_enum, default_value = "on")]
        softmax: Toggle,
        #[arg(long, default_value = "concat")]
        head_agg: HeadAggregation,
        #[command(flatten)]
        seed: SeedArg,
        #[arg(long)]
        out: PathBuf,
    },
    /// Planted multi-class demo with known ground truth.
    DemoPlanted {
        #[arg(long, default_value_t = CALIBRATED_SIGMA)]
        sigma: f64,
        #[command(flatten)]
        seed: SeedArg,
        #[arg(long)]
        out: PathBuf,
    },
}

fn layer_choice(s: &str, n_layers: usize) -> CliResult<Option<Vec<usize>>> {
    if s.trim() == "all" {
        Ok(None)
    } else {
        parse_layers(s, n_layers).map(Some)
    }
}

fn execute(command: Command) -> CliResult<()> {
    match command {
        Command::GenWeights { out, planted, seed } => {
            let hash = cmd_gen_weights(&ModelConfig::default(), seed.seed, planted, &out)?;
            println!("{hash}");
        }
        Command::Run {
            weights,
            prompt,
            concepts,
            background,
            timestep,
            layers,
            space,
            softmax,
            head_agg,
            image,
            synthetic,
            seed,
            out,
        } => {
            let n_layers = Weights::load(&weights)?.config.n_layers;
            let image = match (image, synthetic) {
                (Some(p), _) => ImageSource::Pgm(p),
                (None, Some(s)) => ImageSource::Synthetic(s),
                (None, None) => ImageSource::Synthetic(seed.seed),
            };
            let spec = RunSpec {
                weights,
                prompt: prompt.split_whitespace().map(String::from).collect(),
                concepts: split_list(&concepts),
                background: split_list(&background),
                timestep,
                layers: layer_choice(&layers, n_layers)?,
                space,
                softmax: matches!(softmax, Toggle::On),
                head_agg,
                seed: seed.seed,
                out,
                image,
            };
            let map = cmd_run(&spec)?;
            println!(
                "wrote {} concept maps to {}",
                map.n_concepts(),
                spec.out.display()
            );
        }
        Command::Eval {
            manifest,
            mode,
            background,
            miou_mode,
            out,
        } => {
            let mode = match mode {
                ModeArg::Single => EvalMode::Single,
                ModeArg::Multi => EvalMode::Multi,
            };
            let miou_mode = match miou_mode {
                MiouArg::TwoClass => MiouMode::TwoClass,
                MiouArg::Foreground => MiouMode::ForegroundOnly,
                MiouArg::Multiclass => MiouMode::Multiclass,
            };
            let r = cmd_eval(&manifest, mode, &split_list(&background), miou_mode, &out)?;
            let map = r
                .map
                .map(|m| format!("{m:.4}"))
                .unwrap_or_else(|| "n/a".into());
            println!(
                "n={} acc={:.4} miou={:.4} map={map}",
                r.n_samples, r.acc, r.miou
            );
        }
        Command::Ablate {
            sweep,
            steps,
            weights,
            manifest,
            synthetic,
            sigma,
            background,
            timestep,
            layers,
            space,
            softmax,
            head_agg,
            seed,
            out,
        } => {
            let steps = steps
                .map(|s| {
                    split_list(&s)
                        .iter()
                        .map(|t| {
                            t.parse::<u32>()
                                .map_err(|_| CliError::Usage(format!("invalid timestep {t:?}")))
                        })
                        .collect::<CliResult<Vec<_>>>()
                })
                .transpose()?;
            let sweep = sweep_from_axis(sweep, steps)?;
            let weights = match weights {
                Some(p) => Weights::load(&p)?,
                None => planted::planted_weights(
                    &ModelConfig::default(),
                    seed.seed,
                    planted::DEFAULT_SHARPNESS,
                )?,
            };
            let samples = match manifest {
                Some(m) => {
                    scenes_from_manifest(&Manifest::load(&m)?, &weights, &split_list(&background))?
                }
                None => planted::single_object_scenes(&weights, synthetic, sigma, seed.seed)?,
            };
            let params = AblationParams {
                timestep,
                layers: layer_choice(&layers, weights.config.n_layers)?,
                options: SaliencyOptions::new(space, matches!(softmax, Toggle::On), head_agg),
                mode: ConceptAttentionMode::CrossAndSelf,
                noise_seed: seed.seed,
            };
            let grid = cmd_ablate(&weights, &sweep, &params, &samples, &out)?;
            println!("{}", grid.header().join(","));
            for r in grid.records() {
                println!("{}", r.join(","));
            }
        }
        Command::DemoPlanted { sigma, seed, out } => {
            let r = cmd_demo_planted(seed.seed, sigma, &out)?;
            println!("acc={:.4} miou={:.4}", r.metrics.acc, r.metrics.miou);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("ca-kit: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
