//! `avatar`: command-line surface over the pipeline stages.
//!
//! Exit codes: 0 success, 2 validation failure, 3 divergence or abort.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use avatar_core::engines::{render_avatar_with_mask, sample_vector, AvatarVector, EngineSchema};
use avatar_core::estimator::{predict, Estimator};
use avatar_core::evaluation::{ExperimentConfig, Run};
use avatar_core::gan_training::TrainEvent;
use avatar_core::image::ImageTensor;
use avatar_core::{Error, Result};
use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(
    name = "avatar",
    version,
    about = "Avatar vector estimation from face images"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(clap::Args)]
struct RunArgs {
    /// Run directory.
    #[arg(long)]
    run: PathBuf,
    /// Experiment config (TOML). Copied into the run directory; when omitted
    /// the run's own config.toml is used.
    #[arg(long)]
    config: Option<PathBuf>,
}

impl RunArgs {
    fn open(&self) -> Result<Run> {
        match &self.config {
            Some(c) => Run::create(&self.run, &ExperimentConfig::load(c)?),
            None => Run::open(&self.run),
        }
    }
}

#[derive(Subcommand)]
enum Cmd {
    /// Train the realistic-domain generator and discriminator.
    PretrainReal(RunArgs),
    /// Finetune a copy of the realistic generator on engine renders.
    FinetuneAvatar(RunArgs),
    /// Mean latent and glasses-biased initialization for inversion.
    MeanLatent(RunArgs),
    /// Build the paired (vector, realistic image) dataset.
    ProducePairs(RunArgs),
    /// Train the estimator on the paired dataset.
    TrainEstimator(RunArgs),
    /// Train the same estimator on raw engine renders.
    TrainBaseline(RunArgs),
    /// Print the predicted vector for a PNG as JSON.
    Predict {
        #[command(flatten)]
        run: RunArgs,
        image: PathBuf,
        #[arg(long, default_value = "estimator")]
        which: String,
    },
    /// Score a trained estimator on the held-out set.
    Evaluate {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, default_value = "estimator")]
        which: String,
        /// Also measure throughput (written separately, not reproducible).
        #[arg(long)]
        throughput: bool,
    },
    /// Train and score every configured ablation variant.
    Ablate(RunArgs),
    /// Every stage from pretraining to evaluation.
    All(RunArgs),
    /// Engine utilities.
    #[command(subcommand)]
    Engine(EngineCmd),
}

#[derive(Subcommand)]
enum EngineCmd {
    /// Render a vector (JSON) to PNG, plus its segmentation.
    Render {
        #[arg(long, default_value = "engine-a")]
        engine: String,
        vector: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seg: Option<PathBuf>,
        #[arg(long, default_value_t = 64)]
        resolution: usize,
    },
    /// Print a random valid vector.
    Sample {
        #[arg(long, default_value = "engine-a")]
        engine: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Check a vector file against a schema.
    Validate {
        #[arg(long, default_value = "engine-a")]
        engine: String,
        vector: PathBuf,
    },
    /// Print a schema in its text form.
    Schema {
        #[arg(long, default_value = "engine-a")]
        engine: String,
    },
}

fn schema(name: &str) -> Result<EngineSchema> {
    match EngineSchema::builtin(name) {
        Some(s) => Ok(s),
        None => EngineSchema::load(Path::new(name)),
    }
}

fn read_vector(schema: &EngineSchema, path: &Path) -> Result<AvatarVector> {
    let v: serde_json::Value = serde_json::from_slice(&std::fs::read(path)?)?;
    AvatarVector::from_json(schema, &v)
}

fn print_json(v: &impl serde::Serialize) {
    println!("{}", serde_json::to_string_pretty(v).expect("serializable"));
}

fn train_hook(e: &TrainEvent) {
    if let TrainEvent::Step {
        step,
        d_loss,
        g_loss,
    } = e
    {
        if step % 100 == 0 {
            log::info!("step {step}: d {d_loss:.4} g {g_loss:.4}");
        }
    }
}

fn epoch_hook(e: &avatar_core::estimator::EpochLog) {
    log::info!(
        "epoch {}: train {:.4} val {:?}",
        e.epoch,
        e.train_loss,
        e.val_loss
    );
}

fn run(cli: Cli) -> Result<()> {
    match cli.cmd {
        Cmd::PretrainReal(a) => {
            a.open()?.pretrain(&mut train_hook)?;
        }
        Cmd::FinetuneAvatar(a) => {
            a.open()?.finetune(&mut train_hook)?;
        }
        Cmd::MeanLatent(a) => print_json(&a.open()?.mean_latent()?),
        Cmd::ProducePairs(a) => {
            let hash = a.open()?.produce_pairs(&mut |done, total| {
                if done % 100 == 0 {
                    log::info!("{done}/{total}");
                }
            })?;
            println!("{hash}");
        }
        Cmd::TrainEstimator(a) => {
            a.open()?.train_estimator(&mut epoch_hook)?;
        }
        Cmd::TrainBaseline(a) => {
            a.open()?.train_baseline(&mut epoch_hook)?;
        }
        Cmd::Predict { run, image, which } => {
            let r = run.open()?;
            let est = Estimator::<f32>::load(&r.path(&format!("checkpoints/{which}.ckpt")))?;
            let mut img = ImageTensor::load_png(&image)?;
            let res = est.arch.resolution;
            if img.height() != res || img.width() != res {
                img = img.resize(res, res);
            }
            print_json(&predict(&est, &img).to_json(&r.schema));
        }
        Cmd::Evaluate {
            run,
            which,
            throughput,
        } => {
            let r = run.open()?;
            print_json(&r.evaluate(&which)?);
            if throughput {
                print_json(&r.throughput(&which)?);
            }
        }
        Cmd::Ablate(a) => print_json(&a.open()?.ablate()?),
        Cmd::All(a) => print_json(&a.open()?.run_all(true)?),
        Cmd::Engine(e) => match e {
            EngineCmd::Render {
                engine,
                vector,
                out,
                seg,
                resolution,
            } => {
                let s = schema(&engine)?;
                let p = read_vector(&s, &vector)?;
                let (img, mask) = render_avatar_with_mask(&s, &p, resolution)?;
                img.save_png(&out)?;
                if let Some(seg) = seg {
                    mask.save_png(&seg)?;
                }
            }
            EngineCmd::Sample { engine, seed } => {
                let s = schema(&engine)?;
                print_json(&sample_vector(&s, seed).to_json(&s));
            }
            EngineCmd::Validate { engine, vector } => {
                let s = schema(&engine)?;
                read_vector(&s, &vector)?;
                println!("ok");
            }
            EngineCmd::Schema { engine } => print!("{}", schema(&engine)?.to_text()),
        },
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(Error::exit_code(&e) as u8)
        }
    }
}
