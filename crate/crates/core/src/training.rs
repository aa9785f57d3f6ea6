//! Joint-loss training, evaluation, the five-variant ablation suite, and
//! finite-difference gradient verification.

use crate::corpus::{mix_seed, IndexedExample, Limits};
use crate::divergence::Activation;
use crate::error::{Error, Result};
use crate::graph::Grads;
use crate::mat::Mat;
use crate::metrics::{compute_metrics, metrics_csv_row, MetricsReport, METRICS_CSV_HEADER};
use crate::model::{AblationVariant, Model, ModelConfig, ModelParams};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::fmt::Write as _;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum OptimizerKind {
    /// Plain gradient descent.
    Sgd,
    /// Adaptive moment estimation with bias-corrected first/second moments.
    Adam,
}

impl std::str::FromStr for OptimizerKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sgd" => Ok(OptimizerKind::Sgd),
            "adam" => Ok(OptimizerKind::Adam),
            other => Err(Error::Validation(format!(
                "unknown optimizer \"{}\" (expected adam|sgd)",
                other
            ))),
        }
    }
}

impl OptimizerKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            OptimizerKind::Sgd => "sgd",
            OptimizerKind::Adam => "adam",
        }
    }
}

/// Everything that controls a training run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub seed: u64,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub optimizer: OptimizerKind,
    pub beta: f64,
    pub top_k: usize,
    pub d: usize,
    pub attn_k: usize,
    pub sim_h: usize,
    /// Epochs without validation-F1 improvement before stopping early.
    pub patience: usize,
    pub limits: Limits,
    pub shared_encoder: bool,
    pub phi: Activation,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            seed: 7,
            epochs: 200,
            batch_size: 8,
            lr: 1e-3,
            optimizer: OptimizerKind::Adam,
            beta: 1.0,
            top_k: 5,
            d: 32,
            attn_k: 32,
            sim_h: 32,
            patience: 10,
            limits: Limits::default(),
            shared_encoder: true,
            phi: Activation::Tanh,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 || self.top_k == 0 {
            return Err(Error::Validation(
                "epochs, batch size, and top-K must be >= 1".into(),
            ));
        }
        if self.d == 0 || self.attn_k == 0 || self.sim_h == 0 {
            return Err(Error::Validation("model dimensions must be >= 1".into()));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::Validation("learning rate must be non-negative".into()));
        }
        Ok(())
    }

    pub fn to_model_config(&self) -> ModelConfig {
        ModelConfig {
            d: self.d,
            attn_k: self.attn_k,
            sim_h: self.sim_h,
            top_k: self.top_k,
            beta: self.beta,
            phi: self.phi,
            limits: self.limits.clone(),
            shared_encoder: self.shared_encoder,
        }
    }
}

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

/// Per-group parameter updates; Adam state is keyed by group name.
pub struct Optimizer {
    kind: OptimizerKind,
    lr: f64,
    t: u64,
    m: HashMap<String, Mat>,
    v: HashMap<String, Mat>,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, lr: f64) -> Self {
        Optimizer {
            kind,
            lr,
            t: 0,
            m: HashMap::new(),
            v: HashMap::new(),
        }
    }

    /// Applies one update; groups without a gradient are left untouched.
    pub fn step(&mut self, params: &mut ModelParams, grads: &Grads) {
        self.t += 1;
        for (name, mat) in params.visit_mut() {
            let Some(grad) = grads.get(&name) else { continue };
            match self.kind {
                OptimizerKind::Sgd => {
                    for (p, g) in mat.data_mut().iter_mut().zip(grad.data()) {
                        *p -= self.lr * g;
                    }
                }
                OptimizerKind::Adam => {
                    let m = self
                        .m
                        .entry(name.clone())
                        .or_insert_with(|| Mat::zeros(grad.rows(), grad.cols()));
                    let v = self
                        .v
                        .entry(name.clone())
                        .or_insert_with(|| Mat::zeros(grad.rows(), grad.cols()));
                    let bc1 = 1.0 - ADAM_BETA1.powi(self.t as i32);
                    let bc2 = 1.0 - ADAM_BETA2.powi(self.t as i32);
                    for ((p, g), (mi, vi)) in mat
                        .data_mut()
                        .iter_mut()
                        .zip(grad.data())
                        .zip(m.data_mut().iter_mut().zip(v.data_mut().iter_mut()))
                    {
                        *mi = ADAM_BETA1 * *mi + (1.0 - ADAM_BETA1) * g;
                        *vi = ADAM_BETA2 * *vi + (1.0 - ADAM_BETA2) * g * g;
                        let m_hat = *mi / bc1;
                        let v_hat = *vi / bc2;
                        *p -= self.lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
                    }
                }
            }
        }
    }
}

/// One epoch of the training history.
#[derive(Clone, Debug, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_kl: f64,
    pub train_ce: f64,
    pub val: MetricsReport,
}

pub struct TrainOutcome {
    /// The model restored to its best-validation-F1 parameters.
    pub model: Model,
    pub history: Vec<EpochStats>,
    pub best_epoch: usize,
}

/// Mini-batch optimization of the mean joint loss, deterministic in the
/// seed, returning the parameters from the best-validation-F1 epoch
/// (ties going to the earliest).
pub fn train(
    mut model: Model,
    train_set: &[IndexedExample],
    val_set: &[IndexedExample],
    config: &TrainConfig,
    variant: AblationVariant,
) -> Result<TrainOutcome> {
    config.validate()?;
    if train_set.is_empty() {
        return Err(Error::Validation("training split is empty".into()));
    }
    if val_set.is_empty() {
        return Err(Error::Validation("validation split is empty".into()));
    }

    let mut optimizer = Optimizer::new(config.optimizer, config.lr);
    let mut history = Vec::new();
    let mut best: Option<(f64, ModelParams, usize)> = None;

    for epoch in 0..config.epochs {
        let mut order: Vec<usize> = (0..train_set.len()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(config.seed, "shuffle", epoch as u64));
        order.shuffle(&mut rng);

        let (mut sum_total, mut sum_kl, mut sum_ce) = (0.0, 0.0, 0.0);
        for (batch_no, chunk) in order.chunks(config.batch_size).enumerate() {
            let mut batch_grads = Grads::default();
            for &i in chunk {
                let (fp, grads) = model.forward_backward(&train_set[i], variant)?;
                if !fp.loss.total.is_finite() {
                    return Err(Error::Training {
                        epoch,
                        batch: batch_no,
                        msg: format!("non-finite loss on example {}", train_set[i].id),
                    });
                }
                sum_total += fp.loss.total;
                sum_kl += fp.loss.kl;
                sum_ce += fp.loss.ce;
                batch_grads.accumulate(&grads);
            }
            batch_grads.scale(1.0 / chunk.len() as f64);
            if let Some(group) = batch_grads.first_non_finite() {
                return Err(Error::Training {
                    epoch,
                    batch: batch_no,
                    msg: format!("non-finite gradient in group {}", group),
                });
            }
            optimizer.step(&mut model.params, &batch_grads);
        }

        let val = evaluate(&model, val_set, variant)?;
        let n = train_set.len() as f64;
        history.push(EpochStats {
            epoch,
            train_loss: sum_total / n,
            train_kl: sum_kl / n,
            train_ce: sum_ce / n,
            val,
        });

        let improved = match &best {
            None => true,
            Some((best_f1, _, _)) => val.f1 > *best_f1,
        };
        if improved {
            best = Some((val.f1, model.params.clone(), epoch));
        }
        let best_epoch = best.as_ref().expect("set above").2;
        if epoch - best_epoch >= config.patience {
            break;
        }
    }

    let (_, params, best_epoch) = best.expect("at least one epoch ran");
    model.params = params;
    Ok(TrainOutcome {
        model,
        history,
        best_epoch,
    })
}

/// Argmax predictions over a labeled set.
pub fn evaluate(
    model: &Model,
    set: &[IndexedExample],
    variant: AblationVariant,
) -> Result<MetricsReport> {
    if set.is_empty() {
        return Err(Error::Validation("cannot evaluate an empty dataset".into()));
    }
    let mut preds = Vec::with_capacity(set.len());
    let mut labels = Vec::with_capacity(set.len());
    for ex in set {
        let fp = model.forward(ex, variant)?;
        preds.push(fp.predicted);
        labels.push(ex.label);
    }
    compute_metrics(&preds, &labels)
}

/// Trains and evaluates all five variants under identical seeds and
/// configuration.
pub fn run_ablation_suite(
    vocab: &crate::corpus::Vocabulary,
    train_set: &[IndexedExample],
    val_set: &[IndexedExample],
    test_set: &[IndexedExample],
    config: &TrainConfig,
) -> Result<Vec<(AblationVariant, MetricsReport)>> {
    let mut out = Vec::with_capacity(AblationVariant::ALL.len());
    for variant in AblationVariant::ALL {
        let model = Model::init(vocab.clone(), config.to_model_config(), config.seed);
        let outcome = train(model, train_set, val_set, config, variant)?;
        let report = evaluate(&outcome.model, test_set, variant)?;
        out.push((variant, report));
    }
    Ok(out)
}

/// Worst relative error per parameter group.
#[derive(Clone, Debug)]
pub struct GroupCheck {
    pub name: String,
    pub max_rel_err: f64,
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub groups: Vec<GroupCheck>,
    pub max_rel_err: f64,
}

/// Compares analytic gradients of the full-variant total loss against
/// central finite differences, entry by entry.
pub fn gradient_check(model: &Model, ex: &IndexedExample, step: f64) -> Result<GradCheckReport> {
    let (_, grads) = model.forward_backward(ex, AblationVariant::Full)?;
    compare_gradients(model, ex, &grads, step)
}

/// The comparison half of [`gradient_check`], reusable for fault injection.
pub fn compare_gradients(
    model: &Model,
    ex: &IndexedExample,
    analytic: &Grads,
    step: f64,
) -> Result<GradCheckReport> {
    let names: Vec<String> = model.params.visit().into_iter().map(|(n, _)| n).collect();
    let mut work = model.clone();
    let mut groups = Vec::with_capacity(names.len());
    let mut overall = 0.0f64;

    for name in names {
        let shape = model.params.get(&name).expect("known group").shape();
        let ga = match analytic.get(&name) {
            Some(m) => {
                if !m.is_finite() {
                    return Err(Error::Validation(format!(
                        "non-finite analytic gradient in group {}",
                        name
                    )));
                }
                m.clone()
            }
            None => Mat::zeros(shape.0, shape.1),
        };
        let mut worst = 0.0f64;
        for i in 0..shape.0 {
            for j in 0..shape.1 {
                let original = work.params.get(&name).expect("group").get(i, j);
                work.params
                    .get_mut(&name)
                    .expect("group")
                    .set(i, j, original + step);
                let loss_plus = work.forward(ex, AblationVariant::Full)?.loss.total;
                work.params
                    .get_mut(&name)
                    .expect("group")
                    .set(i, j, original - step);
                let loss_minus = work.forward(ex, AblationVariant::Full)?.loss.total;
                work.params
                    .get_mut(&name)
                    .expect("group")
                    .set(i, j, original);
                let numeric = (loss_plus - loss_minus) / (2.0 * step);
                let a = ga.get(i, j);
                let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
                worst = worst.max(rel);
            }
        }
        overall = overall.max(worst);
        groups.push(GroupCheck {
            name,
            max_rel_err: worst,
        });
    }
    Ok(GradCheckReport {
        groups,
        max_rel_err: overall,
    })
}

pub const HISTORY_CSV_HEADER: &str =
    "epoch,train_loss,train_kl,train_ce,val_accuracy,val_precision,val_recall,val_f1";

pub fn history_csv(history: &[EpochStats]) -> String {
    let mut out = String::from(HISTORY_CSV_HEADER);
    out.push('\n');
    for row in history {
        let _ = writeln!(
            out,
            "{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6}",
            row.epoch,
            row.train_loss,
            row.train_kl,
            row.train_ce,
            row.val.accuracy,
            row.val.precision,
            row.val.recall,
            row.val.f1
        );
    }
    out
}

pub fn ablation_csv(results: &[(AblationVariant, MetricsReport)]) -> String {
    let mut out = String::from(METRICS_CSV_HEADER);
    out.push('\n');
    for (variant, report) in results {
        out.push_str(&metrics_csv_row(variant.as_str(), report));
        out.push('\n');
    }
    out
}
