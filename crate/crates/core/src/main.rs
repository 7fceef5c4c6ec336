use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use prismcert::harness::{self, dataset, DatasetFormat, DatasetSource, RunConfig};
use prismcert::model::{LstmNetwork, NetworkShape};
use prismcert::oracle;
use prismcert::refine::{DivisionStrategy, Schedule};
use prismcert::relax::{self, BivariateKind, Box2, RelaxConfig, RelaxMethod};
use prismcert::verifier::VerifierConfig;

#[derive(Parser)]
#[command(name = "prismcert", version, about = "Certified robustness verification for LSTM classifiers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Verify samples at one or more epsilons and write a CSV report.
    Verify(VerifyArgs),
    /// Mean single-plane margin over a grid of alpha values.
    SweepAlpha {
        #[command(flatten)]
        common: VerifyArgs,
        #[arg(long, default_value_t = 0.1)]
        alpha_step: f64,
    },
    /// Verified counts for several division strategies.
    SweepStrategy {
        #[command(flatten)]
        common: VerifyArgs,
        #[arg(long, value_delimiter = ',', default_value = "none,4-rec,16-rec")]
        strategies: Vec<String>,
    },
    /// Write a seeded random model file.
    GenModel {
        #[arg(long)]
        output: PathBuf,
        #[arg(long, default_value_t = 4)]
        frames: usize,
        #[arg(long, default_value_t = 4)]
        input_dim: usize,
        #[arg(long, default_value_t = 8)]
        hidden: usize,
        #[arg(long, default_value_t = 1)]
        layers: usize,
        #[arg(long, default_value_t = 3)]
        classes: usize,
        #[arg(long, default_value_t = 0.5)]
        scale: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Also write this many self-labelled samples as JSON lines.
        #[arg(long)]
        samples: Option<usize>,
        #[arg(long)]
        samples_output: Option<PathBuf>,
    },
    /// Check relaxation soundness on seeded boxes.
    Check {
        #[arg(long, default_value_t = 20)]
        boxes: usize,
        #[arg(long, default_value_t = 257)]
        grid: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "hybrid")]
        method: String,
    },
}

#[derive(Args, Clone)]
struct VerifyArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long, default_value = "jsonl")]
    format: String,
    /// IDX label file, required with `--format idx`.
    #[arg(long)]
    labels: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', default_value = "0.01")]
    epsilon: Vec<f64>,
    #[arg(long, default_value = "hybrid")]
    method: String,
    #[arg(long, default_value_t = relax::DEFAULT_ALPHA)]
    alpha: f64,
    #[arg(long, default_value = "none")]
    strategy: String,
    #[arg(long, default_value_t = relax::DEFAULT_SAMPLE_DENSITY)]
    sample_density: usize,
    #[arg(long, default_value_t = relax::DEFAULT_OFFSET_GRID)]
    offset_grid: usize,
    #[arg(long, default_value_t = 120.0)]
    timeout: f64,
    #[arg(long)]
    num_samples: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "report.csv")]
    output: PathBuf,
    #[arg(long)]
    clip: bool,
}

impl VerifyArgs {
    fn run_config(&self) -> anyhow::Result<RunConfig> {
        let format: DatasetFormat = self.format.parse()?;
        let dataset = match format {
            DatasetFormat::Jsonl => DatasetSource::Jsonl(self.dataset.clone()),
            DatasetFormat::Idx => DatasetSource::Idx {
                images: self.dataset.clone(),
                labels: self.labels.clone().context("--labels is required for IDX datasets")?,
            },
        };
        let relax = RelaxConfig {
            alpha: self.alpha,
            sample_density: self.sample_density,
            offset_grid: self.offset_grid,
            method: self.method.parse()?,
        };
        relax.validate()?;
        Ok(RunConfig {
            model_path: self.model.clone(),
            dataset,
            epsilons: self.epsilon.clone(),
            verifier: VerifierConfig {
                relax,
                strategy: self.strategy.parse()?,
                schedule: Schedule::default(),
                timeout: harness::timeout_from_secs(self.timeout)?,
            },
            num_samples: self.num_samples,
            seed: self.seed,
            output_path: self.output.clone(),
            clip: self.clip,
        })
    }

    fn load(&self, cfg: &RunConfig) -> anyhow::Result<(LstmNetwork, Vec<prismcert::verifier::Sample>)> {
        cfg.validate()?;
        let net = LstmNetwork::load(&cfg.model_path)?;
        let data = harness::load_dataset(&cfg.dataset, net.num_frames)?;
        data.check_against(&net)?;
        let samples = match cfg.num_samples {
            Some(n) => harness::select_samples(&data, &net, n, cfg.seed)?,
            None => data.samples,
        };
        Ok((net, samples))
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    harness::configure_workers()?;
    match cli.command {
        Command::Verify(args) => {
            let cfg = args.run_config()?;
            let out = harness::run_verify(&cfg)?;
            print!("{}", harness::summary_csv(&out.summary));
        }
        Command::SweepAlpha { common, alpha_step } => {
            let cfg = common.run_config()?;
            let (net, samples) = common.load(&cfg)?;
            let grid = harness::alpha_grid(alpha_step)?;
            let sweep = harness::run_alpha_sweep(&net, &samples, cfg.spec(cfg.epsilons[0]), &cfg.verifier, &grid)?;
            let mut text = String::from("alpha,mean_margin\n");
            for (a, m) in &sweep.curve {
                text.push_str(&format!("{a},{m}\n"));
            }
            std::fs::write(&cfg.output_path, &text)?;
            print!("{text}");
            println!("best_alpha,{}", sweep.best_alpha);
        }
        Command::SweepStrategy { common, strategies } => {
            let cfg = common.run_config()?;
            let (net, samples) = common.load(&cfg)?;
            let strategies = strategies
                .iter()
                .map(|s| s.parse::<DivisionStrategy>())
                .collect::<Result<Vec<_>, _>>()?;
            let clip = cfg.spec(0.0).clip;
            let rows = harness::run_strategy_sweep(&net, &samples, &cfg.epsilons, clip, &cfg.verifier, &strategies);
            let text = harness::strategy_csv(&rows);
            std::fs::write(&cfg.output_path, &text)?;
            print!("{text}");
        }
        Command::GenModel {
            output,
            frames,
            input_dim,
            hidden,
            layers,
            classes,
            scale,
            seed,
            samples,
            samples_output,
        } => {
            let shape = NetworkShape {
                num_frames: frames,
                input_dim,
                hidden_dim: hidden,
                num_layers: layers,
                num_classes: classes,
            };
            if frames == 0 || input_dim == 0 || hidden == 0 || layers == 0 || classes < 2 {
                bail!("model dimensions must be positive and classes at least 2");
            }
            let net = harness::gen_model(&shape, scale, seed);
            net.save(&output)?;
            if let Some(n) = samples {
                let path = samples_output.context("--samples-output is required with --samples")?;
                dataset::save_jsonl(&harness::gen_samples(&net, n, seed.wrapping_add(1)), path)?;
            }
        }
        Command::Check {
            boxes,
            grid,
            seed,
            method,
        } => {
            use rand::Rng;
            let method: RelaxMethod = method.parse()?;
            let cfg = RelaxConfig::with_method(method);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut total = 0;
            for _ in 0..boxes {
                let (cx, cy) = (rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0));
                let (hx, hy) = (rng.gen_range(1e-3..4.0), rng.gen_range(1e-3..4.0));
                let bx = Box2::new(cx - hx, cx + hx, cy - hy, cy + hy)?;
                for kind in [BivariateKind::SigTanh, BivariateKind::SigMul] {
                    let region = bx.into();
                    let pair = relax::relax(&region, kind, &cfg)?;
                    total += oracle::dense_grid_soundness(&pair, &region, kind, grid);
                }
            }
            println!("boxes={boxes} method={method} violations={total}");
            if total > 0 {
                bail!("{total} soundness violations");
            }
        }
    }
    Ok(())
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
