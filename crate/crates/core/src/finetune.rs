//! Head-only transfer learning.
//!
//! The backbone is frozen, so each image's 1280-wide feature vector can be
//! computed once and reused every epoch. Only the terminal linear layer is
//! trained, with Adam (coupled L2 weight decay) under a cosine one-cycle
//! learning-rate schedule.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::arch::{ModelGraph, HEAD_BIAS, HEAD_WEIGHT};
use crate::data::batch_indices;
use crate::rng::SeedStream;
use crate::tensor::{cross_entropy, linear, Tensor};
use crate::{Error, Result};

/// Shape of the one-cycle schedule.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OneCycle {
    /// Fraction of steps spent warming up.
    pub pct_start: f64,
    /// Starting rate is `max_lr / div_factor`.
    pub div_factor: f64,
    /// Final rate is `max_lr / final_div_factor`.
    pub final_div_factor: f64,
}

impl Default for OneCycle {
    fn default() -> Self {
        Self {
            pct_start: 0.3,
            div_factor: 25.0,
            final_div_factor: 1e4,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub max_lr: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub betas: (f64, f64),
    pub eps: f64,
    pub seed: u64,
    pub schedule: OneCycle,
    /// Dropout probability on the features during training; `None` is off.
    pub dropout: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            max_lr: 1e-4,
            weight_decay: 1e-4,
            batch_size: 32,
            betas: (0.9, 0.999),
            eps: 1e-8,
            seed: 0,
            schedule: OneCycle::default(),
            dropout: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::Config(format!("{what} (config: {self:?})")));
        if self.epochs == 0 {
            return bad("epochs must be at least 1");
        }
        if self.batch_size == 0 {
            return bad("batch size must be positive");
        }
        if !(self.max_lr >= 0.0 && self.weight_decay >= 0.0 && self.eps >= 0.0) {
            return bad("rates must be non-negative");
        }
        if !((0.0..1.0).contains(&self.betas.0) && (0.0..1.0).contains(&self.betas.1)) {
            return bad("betas must lie in [0, 1)");
        }
        let s = self.schedule;
        if !(s.pct_start > 0.0
            && s.pct_start < 1.0
            && s.div_factor > 0.0
            && s.final_div_factor > 0.0)
        {
            return bad("one-cycle constants out of range");
        }
        if let Some(p) = self.dropout {
            if !(0.0..1.0).contains(&p) {
                return bad("dropout must lie in [0, 1)");
            }
        }
        Ok(())
    }
}

/// Cosine one-cycle rate with the default constants.
pub fn one_cycle_lr(step: usize, total_steps: usize, max_lr: f64) -> Result<f64> {
    one_cycle_lr_with(step, total_steps, max_lr, &OneCycle::default())
}

/// Warms up from `max_lr / div_factor` to `max_lr` over the first
/// `pct_start · total_steps` steps (cosine), then anneals to
/// `max_lr / final_div_factor` at the last step.
pub fn one_cycle_lr_with(
    step: usize,
    total_steps: usize,
    max_lr: f64,
    schedule: &OneCycle,
) -> Result<f64> {
    if step >= total_steps {
        return Err(Error::Argument(format!(
            "step {step} outside schedule of {total_steps} steps"
        )));
    }
    let start = max_lr / schedule.div_factor;
    let end = max_lr / schedule.final_div_factor;
    let warm = schedule.pct_start * total_steps as f64;
    let s = step as f64;
    let pi = core::f64::consts::PI;
    if s <= warm {
        let t = s / warm;
        Ok(max_lr - (max_lr - start) * (1.0 + libm::cos(pi * t)) / 2.0)
    } else {
        let t = (s - warm) / ((total_steps - 1) as f64 - warm);
        Ok(end + (max_lr - end) * (1.0 + libm::cos(pi * t)) / 2.0)
    }
}

/// Adam moments for a list of parameter tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
}

impl AdamState {
    pub fn new(params: &[Tensor]) -> Self {
        let zeros = |t: &Tensor| Tensor::zeros(t.dims()).expect("dims of a valid tensor");
        Self {
            step: 0,
            m: params.iter().map(zeros).collect(),
            v: params.iter().map(zeros).collect(),
        }
    }
}

/// One Adam update. Weight decay is added to the gradient (coupled L2), the
/// moments are bias-corrected, and `p -= lr · m̂ / (sqrt(v̂) + eps)`.
pub fn adam_step(
    params: &mut [Tensor],
    grads: &[Tensor],
    state: &mut AdamState,
    lr: f64,
    cfg: &TrainConfig,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::Shape(format!(
            "adam: {} params, {} grads, {} moment buffers",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    for (i, ((p, g), m)) in params.iter().zip(grads).zip(&state.m).enumerate() {
        if p.dims() != g.dims() || p.dims() != m.dims() {
            return Err(Error::Shape(format!(
                "adam tensor {i}: param {:?}, grad {:?}, moment {:?}",
                p.dims(),
                g.dims(),
                m.dims()
            )));
        }
    }
    state.step += 1;
    let (b1, b2) = cfg.betas;
    let t = state.step as i32;
    let c1 = (1.0 - libm::pow(b1, t as f64)) as f32;
    let c2 = (1.0 - libm::pow(b2, t as f64)) as f32;
    let (b1, b2, lr, wd, eps) = (
        b1 as f32,
        b2 as f32,
        lr as f32,
        cfg.weight_decay as f32,
        cfg.eps as f32,
    );
    for ((p, g), (m, v)) in params
        .iter_mut()
        .zip(grads)
        .zip(state.m.iter_mut().zip(state.v.iter_mut()))
    {
        for (((pv, &gv), mv), vv) in p
            .data_mut()
            .iter_mut()
            .zip(g.data())
            .zip(m.data_mut())
            .zip(v.data_mut())
        {
            let grad = gv + wd * *pv;
            *mv = b1 * *mv + (1.0 - b1) * grad;
            *vv = b2 * *vv + (1.0 - b2) * grad * grad;
            let m_hat = *mv / c1;
            let v_hat = *vv / c2;
            *pv -= lr * m_hat / (libm::sqrtf(v_hat) + eps);
        }
    }
    Ok(())
}

/// Loss and head gradients for one batch.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadGradients {
    pub loss: f32,
    pub logits: Tensor,
    pub d_weight: Tensor,
    pub d_bias: Tensor,
}

/// Cross-entropy of `features · Wᵀ + b` against `labels`, with
/// `dW = Gᵀ · features` and `db = Σ_rows G`, where G is the logit gradient.
pub fn head_gradients(
    features: &Tensor,
    weight: &Tensor,
    bias: &Tensor,
    labels: &[usize],
) -> Result<HeadGradients> {
    let logits = linear(features, weight, bias)?;
    let (loss, g) = cross_entropy(&logits, labels)?;
    let (n, f) = (features.dims()[0], features.dims()[1]);
    let k = weight.dims()[0];
    let mut dw = vec![0.0f32; k * f];
    let mut db = vec![0.0f32; k];
    for (x, grow) in features
        .data()
        .chunks_exact(f)
        .zip(g.data().chunks_exact(k))
    {
        for ((dwrow, dbv), &gv) in dw.chunks_exact_mut(f).zip(db.iter_mut()).zip(grow) {
            *dbv += gv;
            for (d, &xv) in dwrow.iter_mut().zip(x) {
                *d += gv * xv;
            }
        }
    }
    debug_assert_eq!(n * k, g.len());
    Ok(HeadGradients {
        loss,
        logits,
        d_weight: Tensor::new(&[k, f], dw)?,
        d_bias: Tensor::new(&[k], db)?,
    })
}

/// Cached backbone features with their labels.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSet {
    pub features: Tensor,
    pub labels: Vec<usize>,
}

impl FeatureSet {
    pub fn new(features: Tensor, labels: Vec<usize>) -> Result<Self> {
        features.expect_rank(2, "feature set")?;
        if features.dims()[0] != labels.len() {
            return Err(Error::Shape(format!(
                "{} feature rows for {} labels",
                features.dims()[0],
                labels.len()
            )));
        }
        Ok(Self { features, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    fn width(&self) -> usize {
        self.features.dims()[1]
    }

    fn gather(&self, rows: &[usize]) -> Result<(Tensor, Vec<usize>)> {
        let f = self.width();
        let mut data = Vec::with_capacity(rows.len() * f);
        for &r in rows {
            data.extend_from_slice(&self.features.data()[r * f..(r + 1) * f]);
        }
        let labels = rows.iter().map(|&r| self.labels[r]).collect();
        Ok((Tensor::new(&[rows.len(), f], data)?, labels))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_acc: f64,
    pub val_loss: Option<f64>,
    pub val_acc: Option<f64>,
    pub lr: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
    /// Learning rate used at every optimizer step.
    pub lr_trace: Vec<f64>,
}

fn argmax(row: &[f32]) -> usize {
    row.iter()
        .enumerate()
        .fold((0, f32::NEG_INFINITY), |best, (i, &v)| {
            if v > best.1 {
                (i, v)
            } else {
                best
            }
        })
        .0
}

/// Mean loss and accuracy of the head on a feature set.
pub fn evaluate_head(weight: &Tensor, bias: &Tensor, set: &FeatureSet) -> Result<(f64, f64)> {
    let logits = linear(&set.features, weight, bias)?;
    let (loss, _) = cross_entropy(&logits, &set.labels)?;
    let k = weight.dims()[0];
    let correct = logits
        .data()
        .chunks_exact(k)
        .zip(&set.labels)
        .filter(|(row, &l)| argmax(row) == l)
        .count();
    Ok((loss as f64, correct as f64 / set.len() as f64))
}

/// Trains the head of a bound model on cached features, reporting validation
/// loss and accuracy per epoch when `val` is given. Every other parameter
/// is left bit-identical. Batches are reshuffled each epoch with the stream
/// `(cfg.seed, epoch)`; dropout masks use `(cfg.seed ^ 0xD50, step)`.
pub fn finetune_head(
    mut model: ModelGraph,
    train: &FeatureSet,
    val: Option<&FeatureSet>,
    cfg: &TrainConfig,
) -> Result<(ModelGraph, TrainHistory)> {
    cfg.validate()?;
    if !model.is_bound() {
        return Err(Error::State("fine-tuning needs bound weights".into()));
    }
    let k = model.num_classes();
    let width = model
        .feature_width()
        .ok_or_else(|| Error::Config("model has no linear head".into()))?;
    if train.is_empty() {
        return Err(Error::Config("training set is empty".into()));
    }
    for (name, set) in core::iter::once(("train", train)).chain(val.map(|v| ("val", v))) {
        if set.width() != width {
            return Err(Error::Config(format!(
                "{name} features are {} wide, head expects {width}",
                set.width()
            )));
        }
        if let Some(&l) = set.labels.iter().find(|&&l| l >= k) {
            return Err(Error::Config(format!(
                "{name} label {l} does not fit the {k}-class head"
            )));
        }
    }

    let mut params = vec![
        model
            .param(HEAD_WEIGHT)
            .cloned()
            .ok_or_else(|| Error::State("no head weight".into()))?,
        model
            .param(HEAD_BIAS)
            .cloned()
            .ok_or_else(|| Error::State("no head bias".into()))?,
    ];
    let mut state = AdamState::new(&params);
    let steps_per_epoch = train.len().div_ceil(cfg.batch_size);
    let total_steps = cfg.epochs * steps_per_epoch;
    let mut history = TrainHistory::default();
    let mut step = 0;

    for epoch in 0..cfg.epochs {
        let order = batch_indices(
            train.len(),
            cfg.batch_size,
            true,
            SeedStream::derive(cfg.seed, epoch as u64).next_u64(),
        )?;
        let (mut loss_sum, mut correct) = (0.0f64, 0usize);
        let mut lr = 0.0;
        for rows in &order {
            let (mut x, labels) = train.gather(rows)?;
            if let Some(p) = cfg.dropout {
                apply_dropout(&mut x, p, SeedStream::derive(cfg.seed ^ 0xD50, step as u64));
            }
            let hg = head_gradients(&x, &params[0], &params[1], &labels)?;
            loss_sum += hg.loss as f64 * rows.len() as f64;
            correct += hg
                .logits
                .data()
                .chunks_exact(k)
                .zip(&labels)
                .filter(|(row, &l)| argmax(row) == l)
                .count();
            lr = one_cycle_lr_with(step, total_steps, cfg.max_lr, &cfg.schedule)?;
            adam_step(&mut params, &[hg.d_weight, hg.d_bias], &mut state, lr, cfg)?;
            history.lr_trace.push(lr);
            step += 1;
        }
        let (val_loss, val_acc) = match val {
            Some(v) if !v.is_empty() => {
                let (l, a) = evaluate_head(&params[0], &params[1], v)?;
                (Some(l), Some(a))
            }
            _ => (None, None),
        };
        history.epochs.push(EpochRecord {
            epoch: epoch + 1,
            train_loss: loss_sum / train.len() as f64,
            train_acc: correct as f64 / train.len() as f64,
            val_loss,
            val_acc,
            lr,
        });
    }
    let bias = params.pop().expect("two params");
    let weight = params.pop().expect("two params");
    model.set_head(weight, bias)?;
    Ok((model, history))
}

fn apply_dropout(x: &mut Tensor, p: f64, mut rng: SeedStream) {
    if p == 0.0 {
        return;
    }
    let scale = (1.0 / (1.0 - p)) as f32;
    for v in x.data_mut() {
        if rng.next_f64() < p {
            *v = 0.0;
        } else {
            *v *= scale;
        }
    }
}
