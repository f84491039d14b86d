use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use clickhere::checkpoint;
use clickhere::config::ProjectConfig;
use clickhere::dataset::read_dataset;
use clickhere::error::{Error, FieldError, Result};
use clickhere::pipeline::{check_compatible, gen_data, parse_split, split_instances, train_from_dir};
use clickhere::predict::{self, PredictRequest};
use clickhere::report;
use clickhere::server::{serve, ServeOptions};
use clickhere_core::eval::{
    ablation_eval, evaluate, paired_error_deltas, sensitivity_sweep, EvalOptions, PerfectPredictor,
};
use clickhere_core::model::ModelVariant;
use clickhere_core::render::Split;

/// Keypoint-conditioned viewpoint estimation: data generation, training,
/// evaluation and inference.
#[derive(Parser)]
#[command(name = "clickhere", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// TOML config file; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Config override, `path.to.field=value` (repeatable).
    #[arg(long = "set", value_name = "PATH=VALUE")]
    set: Vec<String>,
    /// Root seed; overrides `seed` in the config.
    #[arg(long)]
    seed: Option<u64>,
}

impl Common {
    fn load(&self, extra: &[String]) -> Result<ProjectConfig> {
        let mut overrides = self.set.clone();
        overrides.extend_from_slice(extra);
        if let Some(s) = self.seed {
            overrides.push(format!("seed={s}"));
        }
        Ok(ProjectConfig::load(self.config.as_deref(), &overrides)?)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Render the synthetic, realish and test datasets into <out>/<name>.
    GenData {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: PathBuf,
        /// Only these datasets (repeatable): synthetic, realish, test.
        #[arg(long)]
        only: Vec<String>,
    },
    /// Two-stage training; writes a checkpoint and <log>.jsonl / <log>.csv.
    Train {
        #[command(flatten)]
        common: Common,
        /// Directory holding `synthetic/` and optionally `realish/`.
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Log path prefix; defaults to the checkpoint path without extension.
        #[arg(long)]
        log: Option<PathBuf>,
        /// Shorthand for `--set model.variant=...`.
        #[arg(long)]
        variant: Option<ModelVariant>,
    },
    /// Evaluate on a dataset split; writes <out>.jsonl, <out>.csv, <out>_curve.csv.
    Eval {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        target: Target,
        /// Use the ground-truth oracle instead of a checkpoint.
        #[arg(long, conflicts_with = "checkpoint")]
        oracle: bool,
        /// Second checkpoint for paired per-instance error deltas
        /// (written to <out>_paired.jsonl).
        #[arg(long)]
        compare: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Blank keypoint map / class ablation; writes <out>.jsonl and <out>.csv.
    Ablate {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        target: Target,
        #[arg(long)]
        out: PathBuf,
    },
    /// Keypoint perturbation sweep over `eval.sigmas`; writes <out>.jsonl and <out>.csv.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        target: Target,
        #[arg(long)]
        out: PathBuf,
    },
    /// Predict one click and print the response as JSON.
    Predict {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        /// PNG or raw f32 image file.
        #[arg(long, conflicts_with_all = ["data", "instance"])]
        image: Option<PathBuf>,
        /// Dataset directory, with --instance.
        #[arg(long, requires = "instance")]
        data: Option<PathBuf>,
        #[arg(long)]
        instance: Option<u64>,
        #[arg(long, allow_negative_numbers = true)]
        x: i64,
        #[arg(long, allow_negative_numbers = true)]
        y: i64,
        /// Keypoint class, local to the object class.
        #[arg(long)]
        kp: usize,
        /// Object class.
        #[arg(long)]
        obj: usize,
        /// Write the response here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// HTTP inference service.
    Serve {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Dataset directory whose instances are served.
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: std::net::IpAddr,
        /// Directory of static UI files served at `/`.
        #[arg(long = "static")]
        static_dir: Option<PathBuf>,
    },
}

#[derive(Args, Clone)]
struct Target {
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Dataset directory.
    #[arg(long)]
    data: PathBuf,
    /// train, val or test.
    #[arg(long, default_value = "test")]
    split: String,
}

impl Target {
    fn split(&self) -> Result<Split> {
        parse_split(&self.split)
            .ok_or_else(|| FieldError::new("split", format!("unknown split `{}`", self.split)).into())
    }

    fn checkpoint(&self) -> Result<&Path> {
        self.checkpoint
            .as_deref()
            .ok_or_else(|| FieldError::new("checkpoint", "required").into())
    }
}

fn print_json<T: serde::Serialize>(v: &T) {
    println!("{}", serde_json::to_string(v).expect("serializes"));
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenData { common, out, only } => {
            let cfg = common.load(&[])?;
            for (label, summary) in gen_data(&cfg, &out, &only)? {
                print_json(&serde_json::json!({ "dataset": label, "summary": summary }));
            }
        }
        Command::Train {
            common,
            data,
            out,
            log,
            variant,
        } => {
            let extra: Vec<String> = variant.iter().map(|v| format!("model.variant={v}")).collect();
            let cfg = common.load(&extra)?;
            let trained = train_from_dir(&cfg, &data, &mut |r| {
                eprintln!("{}", serde_json::to_string(r).expect("serializes"));
            })?;
            checkpoint::save(&trained.model, &out)?;
            let prefix = log.unwrap_or_else(|| out.with_extension(""));
            report::write_train_log(&prefix, &trained.log)?;
            print_json(&serde_json::json!({ "checkpoint": out, "stages": trained.stages }));
        }
        Command::Eval {
            common,
            target,
            oracle,
            compare,
            out,
        } => {
            let cfg = common.load(&[])?;
            let ds = read_dataset(&target.data)?;
            let instances = split_instances(&ds, Some(target.split()?));
            let r = if oracle {
                check_compatible(&cfg.model, &ds.meta)?;
                let p = PerfectPredictor { n_bins: cfg.model.n_bins };
                evaluate(&p, &cfg.model.objects, &instances, EvalOptions::default(), "oracle")?
            } else {
                let model = checkpoint::load(target.checkpoint()?)?;
                check_compatible(&model.config, &ds.meta)?;
                let tag = model.variant().name();
                evaluate(&model, &model.config.objects, &instances, EvalOptions::default(), tag)?
            };
            report::write_eval_report(&out, &r)?;
            if let Some(other) = compare {
                let m = checkpoint::load(&other)?;
                check_compatible(&m.config, &ds.meta)?;
                let rb = evaluate(&m, &m.config.objects, &instances, EvalOptions::default(), m.variant().name())?;
                let c = paired_error_deltas(&r, &rb)?;
                report::write_comparison(&report::with_suffix(&out, "_paired.jsonl"), &c)?;
            }
            print_json(&serde_json::json!({
                "tag": r.tag, "count": instances.len(), "mean_acc": r.mean_acc,
                "mean_med_err_deg": r.mean_med_err_deg, "nauc": r.curve.nauc,
            }));
        }
        Command::Ablate { common, target, out } => {
            common.load(&[])?;
            let ds = read_dataset(&target.data)?;
            let model = checkpoint::load(target.checkpoint()?)?;
            check_compatible(&model.config, &ds.meta)?;
            let rows = ablation_eval(&model, &split_instances(&ds, Some(target.split()?)))?;
            report::write_ablation(&out, &rows)?;
            for r in &rows {
                print_json(&serde_json::json!({
                    "map": r.map, "class": r.class, "mean_acc": r.mean_acc, "mean_med_err_deg": r.mean_med_err_deg,
                }));
            }
        }
        Command::Sweep { common, target, out } => {
            let cfg = common.load(&[])?;
            let ds = read_dataset(&target.data)?;
            let model = checkpoint::load(target.checkpoint()?)?;
            check_compatible(&model.config, &ds.meta)?;
            let s = model.config.image_size as f64;
            let sigmas: Vec<f64> = cfg.eval.sigmas.iter().map(|f| f * s).collect();
            let rows = sensitivity_sweep(
                &model,
                &split_instances(&ds, Some(target.split()?)),
                &sigmas,
                cfg.eval.trials,
                cfg.sweep_seed(),
            )?;
            report::write_sweep(&out, &rows)?;
            for r in &rows {
                print_json(&serde_json::json!({
                    "sigma_px": r.sigma, "trials": r.trials, "mean_acc": r.mean_acc,
                    "mean_med_err_deg": r.mean_med_err_deg,
                }));
            }
        }
        Command::Predict {
            common,
            checkpoint: ckpt,
            image,
            data,
            instance,
            x,
            y,
            kp,
            obj,
            out,
        } => {
            common.load(&[])?;
            let model = checkpoint::load(&ckpt)?;
            let ds = match &data {
                Some(d) => Some(read_dataset(d)?),
                None => None,
            };
            let inline = match &image {
                Some(p) => {
                    let bytes = std::fs::read(p).map_err(|source| Error::Io { path: p.clone(), source })?;
                    let img = predict::read_image_bytes(&bytes, model.config.image_size)
                        .map_err(|m| FieldError::new("image", m))?;
                    Some(predict::InlineImage {
                        format: predict::InlineFormat::F32,
                        data: {
                            use base64::Engine as _;
                            base64::engine::general_purpose::STANDARD.encode(clickhere::dataset::image_to_bytes(&img))
                        },
                    })
                }
                None => None,
            };
            let req = PredictRequest {
                instance_id: instance,
                image: inline,
                x,
                y,
                keypoint: kp,
                object: obj,
            };
            let resp = predict::run(&model, ds.as_ref(), &req).map_err(|e| match e {
                predict::ResolveError::Field(f) => Error::Input(f),
                predict::ResolveError::UnknownInstance(id) => {
                    Error::Input(FieldError::new("instance", format!("unknown instance {id}")))
                }
            })?;
            let text = serde_json::to_string(&resp).expect("serializes");
            match out {
                Some(p) => std::fs::write(&p, text + "\n").map_err(|source| Error::Io { path: p, source })?,
                None => println!("{text}"),
            }
        }
        Command::Serve {
            common,
            checkpoint: ckpt,
            data,
            port,
            host,
            static_dir,
        } => {
            common.load(&[])?;
            let rt = tokio::runtime::Runtime::new().map_err(|source| Error::Io {
                path: PathBuf::from("tokio runtime"),
                source,
            })?;
            let opts = ServeOptions {
                checkpoint: ckpt,
                dataset: data,
                addr: SocketAddr::new(host, port),
                static_dir,
            };
            rt.block_on(serve(opts, |addr| {
                print_json(&serde_json::json!({ "listening": addr.to_string() }));
            }))?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", serde_json::to_string(&e.line()).expect("serializes"));
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
