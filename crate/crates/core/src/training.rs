//! Truncated-BPTT training with per-window Adagrad updates.

use std::io::Write;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::dataset::{series_stats, SelectionSequence};
use crate::error::{Error, Result};
use crate::features::FeatureContext;
use crate::model::{backward_sequence, dropout_mask, forward_window, predict_times, MenuInputs, ModelParams};
use crate::numkit::{global_norm_clip, AdagradState, RngStream};

const SAMPLE_STREAM: u64 = 0;
const DROPOUT_STREAM: u64 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub clip_norm: f64,
    pub unroll: usize,
    pub dropout: f64,
    pub batch_size: usize,
    /// Number of windows processed (one update each).
    pub iterations: usize,
    pub seed: u64,
    /// Log and checkpoint interval in iterations; 0 disables.
    pub checkpoint_every: usize,
    pub min_variance: f64,
    pub optimizer: OptimizerKind,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    #[default]
    Adagrad,
    Adam,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.01,
            clip_norm: 1.0,
            unroll: 40,
            dropout: 0.10,
            batch_size: 1,
            iterations: 20_000,
            seed: 0,
            checkpoint_every: 1_000,
            min_variance: 1e-9,
            optimizer: OptimizerKind::Adagrad,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Validation(m));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning_rate must be positive, got {}", self.learning_rate));
        }
        if !(self.clip_norm > 0.0) {
            return bad(format!("clip_norm must be positive, got {}", self.clip_norm));
        }
        if self.unroll == 0 {
            return bad("unroll must be positive".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout must be in [0, 1), got {}", self.dropout));
        }
        if self.batch_size != 1 {
            return bad(format!("only batch_size 1 is supported, got {}", self.batch_size));
        }
        if !(self.min_variance > 0.0) {
            return bad(format!("min_variance must be positive, got {}", self.min_variance));
        }
        Ok(())
    }
}

/// `Σ(y − t)² / c_s`.
pub fn sequence_loss(y: &[f64], t: &[f64], c_s: f64, min_variance: f64) -> Result<f64> {
    if y.len() != t.len() || y.is_empty() {
        return Err(Error::Shape(format!("{} observations vs {} predictions", y.len(), t.len())));
    }
    if !(c_s > min_variance) {
        return Err(Error::DegenerateSequence {
            variance: c_s,
            min_variance,
        });
    }
    Ok(y.iter().zip(t).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / c_s)
}

/// Half-open windows `[a, b)` of at most `unroll` trials.
pub fn window_bounds(len: usize, unroll: usize) -> Vec<(usize, usize)> {
    (0..len).step_by(unroll.max(1)).map(|a| (a, (a + unroll).min(len))).collect()
}

pub trait Optimizer {
    fn step(&mut self, params: &mut [f64], grads: &[f64]) -> Result<()>;
}

pub struct Adagrad {
    pub state: AdagradState,
    pub learning_rate: f64,
}

impl Adagrad {
    pub fn new(len: usize, learning_rate: f64) -> Self {
        Self {
            state: AdagradState::new(len),
            learning_rate,
        }
    }
}

impl Optimizer for Adagrad {
    fn step(&mut self, params: &mut [f64], grads: &[f64]) -> Result<()> {
        self.state.update(params, grads, self.learning_rate)
    }
}

/// Adam with the usual moment decays (0.9, 0.999) and bias correction.
pub struct Adam {
    pub learning_rate: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    pub fn new(len: usize, learning_rate: f64) -> Self {
        Self {
            learning_rate,
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
        }
    }
}

impl Optimizer for Adam {
    fn step(&mut self, params: &mut [f64], grads: &[f64]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::Shape(format!(
                "adam state {} vs params {} vs grads {}",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        self.t += 1;
        let c1 = 1.0 - Self::BETA1.powi(self.t);
        let c2 = 1.0 - Self::BETA2.powi(self.t);
        for k in 0..params.len() {
            let g = grads[k];
            self.m[k] = Self::BETA1 * self.m[k] + (1.0 - Self::BETA1) * g;
            self.v[k] = Self::BETA2 * self.v[k] + (1.0 - Self::BETA2) * g * g;
            params[k] -= self.learning_rate * (self.m[k] / c1) / ((self.v[k] / c2).sqrt() + Self::EPS);
        }
        Ok(())
    }
}

pub fn make_optimizer(kind: OptimizerKind, len: usize, learning_rate: f64) -> Box<dyn Optimizer> {
    match kind {
        OptimizerKind::Adagrad => Box::new(Adagrad::new(len, learning_rate)),
        OptimizerKind::Adam => Box::new(Adam::new(len, learning_rate)),
    }
}

/// Recurrent state carried between windows of one sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct Carried {
    pub h: Vec<f64>,
    pub c: Vec<f64>,
}

impl Carried {
    pub fn zeros(cells: usize) -> Self {
        Self {
            h: vec![0.0; cells],
            c: vec![0.0; cells],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WindowOutcome {
    pub loss: f64,
    pub pre_clip_norm: f64,
    pub clipped: bool,
}

/// A sequence prepared for training.
pub struct PreparedSequence<'a> {
    pub seq: &'a SelectionSequence,
    pub inputs: MenuInputs,
    pub targets: Vec<usize>,
    pub observed: Vec<f64>,
    pub c_s: f64,
}

impl<'a> PreparedSequence<'a> {
    pub fn new(seq: &'a SelectionSequence, ctx: &FeatureContext) -> Result<Self> {
        let observed = seq.observed();
        Ok(Self {
            inputs: MenuInputs::new(&seq.menu, ctx)?,
            targets: seq.targets(),
            c_s: series_stats(&observed).variance_sum,
            observed,
            seq,
        })
    }
}

/// One truncated-BPTT step over `[a, b)`: forward from `carried` with fresh
/// dropout masks, backward cut at the window start, clip, update. `carried`
/// is replaced by the window's final state under the pre-update weights.
#[allow(clippy::too_many_arguments)]
pub fn train_window(
    params: &mut ModelParams,
    opt: &mut dyn Optimizer,
    seq: &PreparedSequence<'_>,
    window: (usize, usize),
    carried: &mut Carried,
    config: &TrainConfig,
    rng: &mut RngStream,
) -> Result<WindowOutcome> {
    let (a, b) = window;
    if b <= a || b - a > config.unroll || b > seq.targets.len() {
        return Err(Error::Validation(format!(
            "window [{a}, {b}) invalid for unroll {} and {} trials",
            config.unroll,
            seq.targets.len()
        )));
    }
    let masks: Vec<Vec<f64>> = (a..b)
        .map(|_| dropout_mask(params.dims.task_dim(), config.dropout, rng))
        .collect();
    let (preds, cache) = forward_window(params, &seq.inputs, &seq.targets[a..b], &carried.h, &carried.c, Some(&masks))?;
    let y = &seq.observed[a..b];
    let loss = sequence_loss(y, &preds, seq.c_s, config.min_variance)?;
    let dl_dt: Vec<f64> = preds.iter().zip(y).map(|(t, y)| 2.0 * (t - y) / seq.c_s).collect();
    let mut grads = backward_sequence(params, &cache, &dl_dt)?;
    let pre_clip_norm = global_norm_clip(&mut grads, config.clip_norm);
    if !pre_clip_norm.is_finite() {
        return Err(Error::Numeric(format!("gradient norm {pre_clip_norm}")));
    }
    let (h, c) = cache.final_state().expect("non-empty window");
    carried.h.copy_from_slice(h);
    carried.c.copy_from_slice(c);
    opt.step(&mut params.weights, &grads)?;
    Ok(WindowOutcome {
        loss,
        pre_clip_norm,
        clipped: pre_clip_norm > config.clip_norm,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LogEntry {
    pub iteration: usize,
    /// Mean window loss since the previous entry.
    pub loss: f64,
    /// Mean sequence-level R² on the held-out set; `None` without one.
    pub heldout_r2: Option<f64>,
    pub seconds: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct TrainLog {
    pub entries: Vec<LogEntry>,
    pub updates: usize,
    pub clipped: usize,
    pub skipped_sequences: usize,
    pub max_post_clip_norm: f64,
}

/// Writes `iteration,loss,heldout_r2,seconds`. With `include_time = false`
/// the seconds column is left empty so the file is reproducible.
pub fn write_log_csv<W: Write>(log: &TrainLog, sink: W, include_time: bool) -> Result<()> {
    let mut w = csv::Writer::from_writer(sink);
    w.write_record(["iteration", "loss", "heldout_r2", "seconds"])?;
    for e in &log.entries {
        w.write_record([
            e.iteration.to_string(),
            e.loss.to_string(),
            e.heldout_r2.map(|r| format!("{r:.4}")).unwrap_or_default(),
            if include_time { format!("{:.3}", e.seconds) } else { String::new() },
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Mean eval-mode sequence-level R² over sequences where it is defined.
pub fn mean_sequence_r2(params: &ModelParams, seqs: &[SelectionSequence], ctx: &FeatureContext) -> Result<Option<f64>> {
    let mut vals = Vec::new();
    for s in seqs {
        let inputs = MenuInputs::new(&s.menu, ctx)?;
        let t = predict_times(params, &inputs, &s.targets())?;
        if let Ok(r) = crate::eval::r_squared(&s.observed(), &t) {
            vals.push(r);
        }
    }
    Ok((!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64))
}

/// Trains from `params`. Sequences are drawn uniformly at random; each
/// sequence's windows run in order with an update after each window, and
/// every window counts as one iteration. `on_checkpoint` is called every
/// `checkpoint_every` iterations and once at the end.
pub fn train(
    train_set: &[SelectionSequence],
    held_out: &[SelectionSequence],
    config: &TrainConfig,
    mut params: ModelParams,
    ctx: &FeatureContext,
    mut on_checkpoint: impl FnMut(usize, &ModelParams) -> Result<()>,
) -> Result<(ModelParams, TrainLog)> {
    config.validate()?;
    if train_set.is_empty() {
        return Err(Error::Training("empty training set".into()));
    }
    let mut log = TrainLog::default();
    let mut usable = Vec::new();
    for s in train_set {
        let p = PreparedSequence::new(s, ctx)?;
        if p.c_s > config.min_variance {
            usable.push(p);
        } else {
            log::warn!(
                "skipping degenerate sequence `{}` (variance {:e})",
                s.user_id,
                p.c_s
            );
            log.skipped_sequences += 1;
        }
    }
    if usable.is_empty() {
        return Err(Error::Training(format!("all {} training sequences are degenerate", train_set.len())));
    }
    let mut opt = make_optimizer(config.optimizer, params.weights.len(), config.learning_rate);
    let mut sampler = RngStream::derive(config.seed, SAMPLE_STREAM);
    let mut dropout_rng = RngStream::derive(config.seed, DROPOUT_STREAM);
    let start = Instant::now();
    let mut loss_sum = 0.0;
    let mut loss_count = 0usize;
    let mut iteration = 0usize;

    let mut checkpoint = |iteration: usize, params: &ModelParams, loss_sum: &mut f64, loss_count: &mut usize, log: &mut TrainLog| -> Result<()> {
        let heldout_r2 = if held_out.is_empty() {
            None
        } else {
            mean_sequence_r2(params, held_out, ctx)?
        };
        let loss = if *loss_count > 0 { *loss_sum / *loss_count as f64 } else { f64::NAN };
        log.entries.push(LogEntry {
            iteration,
            loss,
            heldout_r2,
            seconds: start.elapsed().as_secs_f64(),
        });
        log::info!(
            "iter {iteration}: loss {loss:.5} heldout_r2 {}",
            heldout_r2.map(|r| format!("{r:.4}")).unwrap_or_else(|| "-".into())
        );
        *loss_sum = 0.0;
        *loss_count = 0;
        on_checkpoint(iteration, params)
    };

    'outer: while iteration < config.iterations {
        let seq = &usable[sampler.below(usable.len())];
        let mut carried = Carried::zeros(params.dims.pred_cells);
        for window in window_bounds(seq.targets.len(), config.unroll) {
            if iteration >= config.iterations {
                break 'outer;
            }
            let out = train_window(&mut params, opt.as_mut(), seq, window, &mut carried, config, &mut dropout_rng)?;
            iteration += 1;
            log.updates += 1;
            if out.clipped {
                log.clipped += 1;
            }
            log.max_post_clip_norm = log.max_post_clip_norm.max(out.pre_clip_norm.min(config.clip_norm));
            loss_sum += out.loss;
            loss_count += 1;
            if config.checkpoint_every > 0 && iteration % config.checkpoint_every == 0 && iteration < config.iterations {
                checkpoint(iteration, &params, &mut loss_sum, &mut loss_count, &mut log)?;
            }
        }
    }
    checkpoint(iteration, &params, &mut loss_sum, &mut loss_count, &mut log)?;
    Ok((params, log))
}
