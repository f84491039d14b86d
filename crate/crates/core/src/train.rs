//! Mini-batch training with Adam and the two-stage schedule: the synthetic
//! domain until held-out accuracy plateaus, then fine-tuning on the realish
//! domain starting from the best stage-one parameters.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::eval::{evaluate, EvalError, EvalOptions};
use crate::model::{Gradients, Model, ModelError, ModelInput};
use crate::optim::{AdamConfig, AdamState, OptimError};
use crate::render::{flip_augment, Instance};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TrainError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Optim(#[from] OptimError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("dataset/config mismatch: {0}")]
    Mismatch(String),
    #[error("invalid schedule: {0}")]
    Schedule(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Schedule {
    pub batch_size: usize,
    pub adam: AdamConfig,
    /// Steps between held-out evaluations.
    pub eval_every: usize,
    /// Evaluations without improvement before a stage stops.
    pub patience: usize,
    /// Step cap for stage one and stage two.
    pub max_steps: [usize; 2],
    /// Random horizontal flips of training instances.
    pub flip: bool,
    /// Cap on held-out instances per evaluation; 0 uses all.
    pub val_limit: usize,
}

impl Default for Schedule {
    fn default() -> Self {
        Self {
            batch_size: 32,
            adam: AdamConfig::default(),
            eval_every: 200,
            patience: 5,
            max_steps: [2400, 800],
            flip: true,
            val_limit: 600,
        }
    }
}

impl Schedule {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::Schedule(m.into()));
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if self.eval_every == 0 {
            return bad("eval_every must be positive");
        }
        if self.patience == 0 {
            return bad("patience must be positive");
        }
        if !(self.adam.lr > 0.0 && self.adam.lr.is_finite()) {
            return bad("adam.lr must be positive");
        }
        Ok(())
    }
}

/// Training and held-out instances of one stage.
#[derive(Debug, Clone, Copy)]
pub struct StageData<'a> {
    pub train: &'a [Instance],
    pub val: &'a [Instance],
    /// Per-object mirror tables, for flips.
    pub mirror: &'a [Vec<usize>],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum LogRecord {
    StageStart {
        stage: u8,
        train: usize,
        val: usize,
        params: String,
    },
    Eval {
        stage: u8,
        step: usize,
        /// Mean batch loss since the previous evaluation.
        train_loss: f64,
        val_acc: f64,
        val_med_err_deg: f64,
        improved: bool,
    },
    StageEnd {
        stage: u8,
        steps: usize,
        best_step: usize,
        best_val_acc: f64,
        params: String,
    },
}

/// Hex parameter fingerprint as written to logs.
pub fn fingerprint_hex(model: &Model) -> String {
    format!("{:016x}", model.params.fingerprint())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageSummary {
    pub stage: u8,
    pub steps: usize,
    pub best_step: usize,
    pub best_val_acc: f64,
}

/// Checks instance ranges and image size against the model config.
pub fn check_data(model: &Model, instances: &[Instance]) -> Result<(), TrainError> {
    let c = &model.config;
    let counts: Vec<usize> = c.objects.iter().map(|o| o.keypoints.len()).collect();
    for inst in instances {
        if inst.image.size != c.image_size {
            return Err(TrainError::Mismatch(format!(
                "instance {} image is {}px, model expects {}px",
                inst.id, inst.image.size, c.image_size
            )));
        }
        inst.validate(&counts).map_err(TrainError::Mismatch)?;
    }
    Ok(())
}

/// Mean loss and mean gradients over a batch.
pub fn batch_gradients(model: &Model, batch: &[Instance]) -> Result<(f64, Gradients), TrainError> {
    let n = model.config.n_bins;
    let mut total = 0.0;
    let mut acc = Gradients::new();
    for inst in batch {
        let (map, class) = model.encode_keypoint(inst.x, inst.y, inst.object, inst.keypoint)?;
        let image = inst.image.to_tensor();
        let input = ModelInput {
            image: &image,
            map: &map,
            class: &class,
            object: inst.object,
        };
        let (loss, grads) = model.loss_and_gradients(&input, inst.bins(n))?;
        total += loss;
        for (name, g) in grads {
            match acc.get_mut(&name) {
                Some(a) => a.iter_mut().zip(&g).for_each(|(a, g)| *a += g),
                None => {
                    acc.insert(name, g);
                }
            }
        }
    }
    let k = batch.len() as f64;
    for g in acc.values_mut() {
        g.iter_mut().for_each(|v| *v /= k);
    }
    Ok((total / k, acc))
}

/// Trains one stage in place; the model ends holding its best held-out
/// parameters.
pub fn train_stage(
    model: &mut Model,
    data: StageData<'_>,
    schedule: &Schedule,
    stage: u8,
    rng: &mut ChaCha8Rng,
    log: &mut dyn FnMut(&LogRecord),
) -> Result<StageSummary, TrainError> {
    schedule.validate()?;
    if data.train.is_empty() || data.val.is_empty() {
        return Err(TrainError::Mismatch(format!("stage {stage}: empty train or held-out set")));
    }
    check_data(model, data.train)?;
    check_data(model, data.val)?;
    if schedule.flip && data.mirror.len() != model.config.objects.len() {
        return Err(TrainError::Mismatch("mirror tables do not match object classes".into()));
    }
    let val = if schedule.val_limit > 0 && data.val.len() > schedule.val_limit {
        &data.val[..schedule.val_limit]
    } else {
        data.val
    };
    let max_steps = schedule.max_steps[usize::from(stage.saturating_sub(1)).min(1)];
    log(&LogRecord::StageStart {
        stage,
        train: data.train.len(),
        val: val.len(),
        params: fingerprint_hex(model),
    });

    let mut adam = AdamState::new(schedule.adam, &model.params);
    let mut order: Vec<usize> = (0..data.train.len()).collect();
    order.shuffle(rng);
    let mut cursor = 0;
    let mut best = (f64::NEG_INFINITY, 0usize, model.params.clone());
    let mut since_best = 0;
    let (mut loss_sum, mut loss_steps) = (0.0, 0usize);
    let mut step = 0;
    let mut batch = Vec::with_capacity(schedule.batch_size);
    while step < max_steps {
        batch.clear();
        for _ in 0..schedule.batch_size {
            if cursor == order.len() {
                order.shuffle(rng);
                cursor = 0;
            }
            let inst = &data.train[order[cursor]];
            cursor += 1;
            if schedule.flip && rng.random_bool(0.5) {
                batch.push(flip_augment(inst, &data.mirror[inst.object]));
            } else {
                batch.push(inst.clone());
            }
        }
        let (loss, grads) = batch_gradients(model, &batch)?;
        adam.step(&mut model.params, &grads)?;
        step += 1;
        loss_sum += loss;
        loss_steps += 1;
        if step % schedule.eval_every == 0 || step == max_steps {
            let r = evaluate(&*model, &model.config.objects, val, EvalOptions::default(), "val")?;
            let improved = r.mean_acc > best.0;
            if improved {
                best = (r.mean_acc, step, model.params.clone());
                since_best = 0;
            } else {
                since_best += 1;
            }
            log(&LogRecord::Eval {
                stage,
                step,
                train_loss: loss_sum / loss_steps as f64,
                val_acc: r.mean_acc,
                val_med_err_deg: r.mean_med_err_deg,
                improved,
            });
            loss_sum = 0.0;
            loss_steps = 0;
            if since_best >= schedule.patience {
                break;
            }
        }
    }
    model.params = best.2;
    log(&LogRecord::StageEnd {
        stage,
        steps: step,
        best_step: best.1,
        best_val_acc: best.0,
        params: fingerprint_hex(model),
    });
    Ok(StageSummary {
        stage,
        steps: step,
        best_step: best.1,
        best_val_acc: best.0,
    })
}

/// Stage one on `synthetic`, then, when given, stage two on `realish`
/// starting from stage one's best parameters.
pub fn train(
    model: &mut Model,
    synthetic: StageData<'_>,
    realish: Option<StageData<'_>>,
    schedule: &Schedule,
    seed: u64,
    log: &mut dyn FnMut(&LogRecord),
) -> Result<Vec<StageSummary>, TrainError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = alloc::vec![train_stage(model, synthetic, schedule, 1, &mut rng, log)?];
    if let Some(data) = realish {
        if schedule.max_steps[1] > 0 {
            out.push(train_stage(model, data, schedule, 2, &mut rng, log)?);
        }
    }
    Ok(out)
}
