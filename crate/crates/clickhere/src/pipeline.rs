//! The pipeline steps behind the CLI subcommands.

use std::path::Path;

use clickhere_core::model::{Model, ModelConfig};
use clickhere_core::render::{catalog, DatasetSummary, Instance, Split};
use clickhere_core::train::{train, LogRecord, StageData, StageSummary};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::{ProjectConfig, DATASETS};
use crate::dataset::{generate_to_dir, read_dataset, DatasetMeta, StoredDataset};
use crate::error::{Error, FieldError, Result};

/// Generates the named datasets (all three when `labels` is empty) into
/// `out/<label>`.
pub fn gen_data(cfg: &ProjectConfig, out: &Path, labels: &[String]) -> Result<Vec<(String, DatasetSummary)>> {
    let objects = catalog::builtin_objects();
    let wanted: Vec<&str> = if labels.is_empty() {
        DATASETS.to_vec()
    } else {
        labels.iter().map(String::as_str).collect()
    };
    let mut out_summaries = Vec::new();
    for label in wanted {
        let g = cfg
            .dataset(label)
            .ok_or_else(|| FieldError::new("only", format!("unknown dataset `{label}`")))?;
        let stored = generate_to_dir(&out.join(label), &g, &objects)?;
        out_summaries.push((label.to_string(), stored.meta.summary));
    }
    Ok(out_summaries)
}

/// Class tables and image size of a dataset must match the model's.
pub fn check_compatible(config: &ModelConfig, meta: &DatasetMeta) -> Result<()> {
    if meta.image_size != config.image_size {
        return Err(Error::Mismatch(format!(
            "dataset images are {}px, model expects {}px",
            meta.image_size, config.image_size
        )));
    }
    if meta.objects.len() != config.objects.len() {
        return Err(Error::Mismatch(format!(
            "dataset has {} object classes, model has {}",
            meta.objects.len(),
            config.objects.len()
        )));
    }
    for (i, (d, m)) in meta.objects.iter().zip(&config.objects).enumerate() {
        if d.name != m.name || d.keypoints != m.keypoints {
            return Err(Error::Mismatch(format!(
                "object class {i}: dataset `{}` with {} keypoints, model `{}` with {}",
                d.name,
                d.keypoints.len(),
                m.name,
                m.keypoints.len()
            )));
        }
    }
    Ok(())
}

pub fn init_model(cfg: &ProjectConfig) -> Result<Model> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.init_seed());
    Ok(Model::new(cfg.model.clone(), &mut rng)?)
}

#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub model: Model,
    pub log: Vec<LogRecord>,
    pub stages: Vec<StageSummary>,
}

/// Stage one on `synthetic`, stage two on `realish` when given. `progress`
/// sees each log record as it is produced.
pub fn train_on(
    cfg: &ProjectConfig,
    synthetic: &StoredDataset,
    realish: Option<&StoredDataset>,
    progress: &mut dyn FnMut(&LogRecord),
) -> Result<TrainOutput> {
    check_compatible(&cfg.model, &synthetic.meta)?;
    if let Some(r) = realish {
        check_compatible(&cfg.model, &r.meta)?;
    }
    let mut model = init_model(cfg)?;
    let s_train = synthetic.split(Split::Train);
    let s_val = synthetic.split(Split::Val);
    let mirror = synthetic.dataset.mirror.clone();
    let (r_train, r_val) = match realish {
        Some(r) => (r.split(Split::Train), r.split(Split::Val)),
        None => (Vec::new(), Vec::new()),
    };
    let stage2 = realish.map(|_| StageData {
        train: &r_train,
        val: &r_val,
        mirror: &mirror,
    });
    let mut log = Vec::new();
    let stages = train(
        &mut model,
        StageData {
            train: &s_train,
            val: &s_val,
            mirror: &mirror,
        },
        stage2,
        &cfg.train,
        cfg.train_seed(),
        &mut |r| {
            progress(r);
            log.push(r.clone());
        },
    )?;
    Ok(TrainOutput { model, log, stages })
}

/// Reads `<dir>/synthetic` and, when present, `<dir>/realish`, then trains.
pub fn train_from_dir(cfg: &ProjectConfig, dir: &Path, progress: &mut dyn FnMut(&LogRecord)) -> Result<TrainOutput> {
    let synthetic = read_dataset(&dir.join("synthetic"))?;
    let realish_dir = dir.join("realish");
    let realish = if realish_dir.join("meta.json").exists() {
        Some(read_dataset(&realish_dir)?)
    } else {
        None
    };
    train_on(cfg, &synthetic, realish.as_ref(), progress)
}

/// Instances of `split`; the test split when `None`.
pub fn split_instances(ds: &StoredDataset, split: Option<Split>) -> Vec<Instance> {
    ds.split(split.unwrap_or(Split::Test))
}

pub fn parse_split(s: &str) -> Option<Split> {
    Split::ALL.into_iter().find(|x| x.name() == s)
}
