//! Hierarchical recurrent time predictor.
//!
//! An encoder LSTM reads the item feature vectors of the menu top to bottom
//! and its final hidden state, concatenated with the organization one-hot,
//! is the task encoding of the trial. A prediction LSTM consumes one task
//! encoding per trial; its hidden state feeds a ReLU layer and a linear
//! readout that emits the predicted time.
//!
//! All weights live in one flat `Vec<f64>` so clipping, the optimizer,
//! checkpoints and finite-difference checks can treat them uniformly.
//! [`ParamLayout`] maps named tensors onto ranges of that vector and the
//! gradient vector shares the layout.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::ops::Range;

use crate::dataset::{MenuSpec, Organization};
use crate::error::{Error, Result};
use crate::features::{org_one_hot, EmbeddingSource, FeatureContext, ItemFeatures, ITEM_DIM, ORG_DIM};
use crate::numkit::{gemv_acc, gemv_t_acc, outer_acc, sigmoid, PcaProjection, RngStream};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelDims {
    pub item_dim: usize,
    pub enc_cells: usize,
    pub org_dim: usize,
    pub pred_cells: usize,
    pub hidden_dim: usize,
}

impl Default for ModelDims {
    fn default() -> Self {
        Self {
            item_dim: ITEM_DIM,
            enc_cells: 16,
            org_dim: ORG_DIM,
            pred_cells: 32,
            hidden_dim: 16,
        }
    }
}

impl std::fmt::Display for ModelDims {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "item={} enc={} org={} pred={} hidden={}",
            self.item_dim, self.enc_cells, self.org_dim, self.pred_cells, self.hidden_dim
        )
    }
}

impl ModelDims {
    pub fn task_dim(&self) -> usize {
        self.enc_cells + self.org_dim
    }

    pub fn validate(&self) -> Result<()> {
        let all = [self.item_dim, self.enc_cells, self.org_dim, self.pred_cells, self.hidden_dim];
        if all.contains(&0) {
            return Err(Error::Shape(format!("zero-sized dimension in {self}")));
        }
        if self.item_dim != ITEM_DIM || self.org_dim != ORG_DIM {
            return Err(Error::Shape(format!(
                "item_dim/org_dim must be {ITEM_DIM}/{ORG_DIM} to match the feature builder, got {self}"
            )));
        }
        Ok(())
    }

    pub fn layout(&self) -> ParamLayout {
        ParamLayout::new(self)
    }

    pub fn param_count(&self) -> usize {
        let lstm = |i: usize, h: usize| 4 * h * (i + h + 1);
        lstm(self.item_dim, self.enc_cells)
            + lstm(self.task_dim(), self.pred_cells)
            + self.pred_cells * self.hidden_dim
            + self.hidden_dim
            + self.hidden_dim
            + 1
    }
}

/// Location of one LSTM's tensors. Gate rows are ordered input, forget,
/// output, candidate; `wx` is `4H × I`, `wh` is `4H × H`, both row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LstmLayout {
    pub input_dim: usize,
    pub cells: usize,
    pub wx: Range<usize>,
    pub wh: Range<usize>,
    pub b: Range<usize>,
}

impl LstmLayout {
    fn new(start: usize, input_dim: usize, cells: usize) -> Self {
        let g = 4 * cells;
        let wx = start..start + g * input_dim;
        let wh = wx.end..wx.end + g * cells;
        let b = wh.end..wh.end + g;
        Self { input_dim, cells, wx, wh, b }
    }

    fn end(&self) -> usize {
        self.b.end
    }

    pub fn view<'a>(&self, w: &'a [f64]) -> LstmCellParams<'a> {
        LstmCellParams {
            input_dim: self.input_dim,
            cells: self.cells,
            wx: &w[self.wx.clone()],
            wh: &w[self.wh.clone()],
            b: &w[self.b.clone()],
        }
    }

    pub fn grads_mut<'a>(&self, g: &'a mut [f64]) -> LstmCellGrads<'a> {
        let (_, rest) = g.split_at_mut(self.wx.start);
        let (wx, rest) = rest.split_at_mut(self.wx.len());
        let (wh, rest) = rest.split_at_mut(self.wh.len());
        let (b, _) = rest.split_at_mut(self.b.len());
        LstmCellGrads { wx, wh, b }
    }
}

/// Named ranges of the flat parameter vector, in checkpoint order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamLayout {
    pub encoder: LstmLayout,
    pub predictor: LstmLayout,
    /// `pred_cells × hidden_dim`, row-major.
    pub hidden_w: Range<usize>,
    pub hidden_b: Range<usize>,
    pub readout_w: Range<usize>,
    pub readout_b: Range<usize>,
    pub total: usize,
}

impl ParamLayout {
    fn new(d: &ModelDims) -> Self {
        let encoder = LstmLayout::new(0, d.item_dim, d.enc_cells);
        let predictor = LstmLayout::new(encoder.end(), d.task_dim(), d.pred_cells);
        let hidden_w = predictor.end()..predictor.end() + d.pred_cells * d.hidden_dim;
        let hidden_b = hidden_w.end..hidden_w.end + d.hidden_dim;
        let readout_w = hidden_b.end..hidden_b.end + d.hidden_dim;
        let readout_b = readout_w.end..readout_w.end + 1;
        let total = readout_b.end;
        Self {
            encoder,
            predictor,
            hidden_w,
            hidden_b,
            readout_w,
            readout_b,
            total,
        }
    }

    /// `(name, range)` for every tensor in storage order.
    pub fn blocks(&self) -> Vec<(&'static str, Range<usize>)> {
        vec![
            ("encoder.wx", self.encoder.wx.clone()),
            ("encoder.wh", self.encoder.wh.clone()),
            ("encoder.b", self.encoder.b.clone()),
            ("predictor.wx", self.predictor.wx.clone()),
            ("predictor.wh", self.predictor.wh.clone()),
            ("predictor.b", self.predictor.b.clone()),
            ("hidden.w", self.hidden_w.clone()),
            ("hidden.b", self.hidden_b.clone()),
            ("readout.w", self.readout_w.clone()),
            ("readout.b", self.readout_b.clone()),
        ]
    }

    /// Ranges of the forget-gate biases of both LSTMs.
    pub fn forget_biases(&self) -> [Range<usize>; 2] {
        let f = |l: &LstmLayout| l.b.start + l.cells..l.b.start + 2 * l.cells;
        [f(&self.encoder), f(&self.predictor)]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub dims: ModelDims,
    pub layout: ParamLayout,
    pub weights: Vec<f64>,
    /// Frozen PCA projection of name embeddings.
    pub name_projection: PcaProjection,
    pub embedding: EmbeddingSource,
}

impl ModelParams {
    pub fn zeros(dims: ModelDims, name_projection: PcaProjection, embedding: EmbeddingSource) -> Result<Self> {
        dims.validate()?;
        let layout = dims.layout();
        Ok(Self {
            dims,
            weights: vec![0.0; layout.total],
            layout,
            name_projection,
            embedding,
        })
    }

    pub fn encoder(&self) -> LstmCellParams<'_> {
        self.layout.encoder.view(&self.weights)
    }

    pub fn predictor(&self) -> LstmCellParams<'_> {
        self.layout.predictor.view(&self.weights)
    }

    pub fn feature_context(&self, table: crate::features::EmbeddingTable) -> FeatureContext {
        FeatureContext {
            table,
            projection: self.name_projection.clone(),
        }
    }

    pub fn zero_grads(&self) -> Vec<f64> {
        vec![0.0; self.layout.total]
    }
}

const INIT_STREAM: u64 = 0x1417;

/// Glorot-uniform weights, zero biases, forget-gate biases at 1.
pub fn init_params(
    dims: ModelDims,
    seed: u64,
    name_projection: PcaProjection,
    embedding: EmbeddingSource,
) -> Result<ModelParams> {
    let mut p = ModelParams::zeros(dims, name_projection, embedding)?;
    let mut rng = RngStream::derive(seed, INIT_STREAM);
    let l = p.layout.clone();
    let glorot = |fan_in: usize, fan_out: usize| (6.0 / (fan_in + fan_out) as f64).sqrt();
    let tensors = [
        (l.encoder.wx.clone(), glorot(dims.item_dim, dims.enc_cells)),
        (l.encoder.wh.clone(), glorot(dims.enc_cells, dims.enc_cells)),
        (l.predictor.wx.clone(), glorot(dims.task_dim(), dims.pred_cells)),
        (l.predictor.wh.clone(), glorot(dims.pred_cells, dims.pred_cells)),
        (l.hidden_w.clone(), glorot(dims.pred_cells, dims.hidden_dim)),
        (l.readout_w.clone(), glorot(dims.hidden_dim, 1)),
    ];
    for (range, bound) in tensors {
        for w in &mut p.weights[range] {
            *w = rng.uniform_range(-bound, bound);
        }
    }
    for range in l.forget_biases() {
        p.weights[range].iter_mut().for_each(|b| *b = 1.0);
    }
    Ok(p)
}

/// Borrowed weights of one LSTM.
#[derive(Debug, Clone, Copy)]
pub struct LstmCellParams<'a> {
    pub input_dim: usize,
    pub cells: usize,
    pub wx: &'a [f64],
    pub wh: &'a [f64],
    pub b: &'a [f64],
}

pub struct LstmCellGrads<'a> {
    pub wx: &'a mut [f64],
    pub wh: &'a mut [f64],
    pub b: &'a mut [f64],
}

/// Everything one LSTM step needs for its backward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmStepCache {
    pub x: Vec<f64>,
    pub h_prev: Vec<f64>,
    pub c_prev: Vec<f64>,
    /// Activated gates `[i, f, o, g]`, each `cells` long.
    pub gates: Vec<f64>,
    pub c: Vec<f64>,
    pub tanh_c: Vec<f64>,
    pub h: Vec<f64>,
}

pub fn lstm_step(cell: &LstmCellParams<'_>, x: &[f64], h_prev: &[f64], c_prev: &[f64]) -> Result<LstmStepCache> {
    let hn = cell.cells;
    if x.len() != cell.input_dim || h_prev.len() != hn || c_prev.len() != hn {
        return Err(Error::Shape(format!(
            "lstm step: x {} (want {}), h {} and c {} (want {hn})",
            x.len(),
            cell.input_dim,
            h_prev.len(),
            c_prev.len()
        )));
    }
    let mut z = cell.b.to_vec();
    gemv_acc(cell.wx, x, &mut z);
    gemv_acc(cell.wh, h_prev, &mut z);
    for (k, v) in z.iter_mut().enumerate() {
        *v = if k < 3 * hn { sigmoid(*v) } else { v.tanh() };
    }
    let mut c = vec![0.0; hn];
    let mut tanh_c = vec![0.0; hn];
    let mut h = vec![0.0; hn];
    for j in 0..hn {
        let (i, f, o, g) = (z[j], z[hn + j], z[2 * hn + j], z[3 * hn + j]);
        c[j] = f * c_prev[j] + i * g;
        tanh_c[j] = c[j].tanh();
        h[j] = o * tanh_c[j];
    }
    Ok(LstmStepCache {
        x: x.to_vec(),
        h_prev: h_prev.to_vec(),
        c_prev: c_prev.to_vec(),
        gates: z,
        c,
        tanh_c,
        h,
    })
}

/// Backward through one LSTM step.
///
/// `dh`, `dc` are the loss gradients w.r.t. this step's outputs. Writes the
/// gradients w.r.t. `h_prev`/`c_prev`, adds the gradient w.r.t. `x` into
/// `dx` when given, and accumulates weight gradients into `grads` when given.
pub fn lstm_step_backward(
    cell: &LstmCellParams<'_>,
    cache: &LstmStepCache,
    dh: &[f64],
    dc: &[f64],
    grads: Option<&mut LstmCellGrads<'_>>,
    dx: Option<&mut [f64]>,
    dh_prev: &mut [f64],
    dc_prev: &mut [f64],
) {
    let hn = cell.cells;
    let g = &cache.gates;
    let mut dz = vec![0.0; 4 * hn];
    for j in 0..hn {
        let (i, f, o, cand) = (g[j], g[hn + j], g[2 * hn + j], g[3 * hn + j]);
        let tc = cache.tanh_c[j];
        let dct = dc[j] + dh[j] * o * (1.0 - tc * tc);
        dz[j] = dct * cand * i * (1.0 - i);
        dz[hn + j] = dct * cache.c_prev[j] * f * (1.0 - f);
        dz[2 * hn + j] = dh[j] * tc * o * (1.0 - o);
        dz[3 * hn + j] = dct * i * (1.0 - cand * cand);
        dc_prev[j] = dct * f;
    }
    if let Some(gr) = grads {
        gr.b.iter_mut().zip(&dz).for_each(|(b, d)| *b += d);
        outer_acc(gr.wx, &dz, &cache.x);
        outer_acc(gr.wh, &dz, &cache.h_prev);
    }
    if let Some(dx) = dx {
        gemv_t_acc(cell.wx, &dz, dx);
    }
    dh_prev.iter_mut().for_each(|v| *v = 0.0);
    gemv_t_acc(cell.wh, &dz, dh_prev);
}

/// Fixed-length encoding of one selection task.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskEncoding(pub Vec<f64>);

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderCache {
    pub steps: Vec<LstmStepCache>,
}

/// Run the encoder over `items` from the zero state.
pub fn encode_items(params: &ModelParams, items: &[ItemFeatures], org: Organization) -> Result<(TaskEncoding, EncoderCache)> {
    let cell = params.encoder();
    let hn = cell.cells;
    let mut h = vec![0.0; hn];
    let mut c = vec![0.0; hn];
    let mut steps = Vec::with_capacity(items.len());
    for item in items {
        let s = lstm_step(&cell, item.as_slice(), &h, &c)?;
        h.clone_from(&s.h);
        c.clone_from(&s.c);
        steps.push(s);
    }
    let mut e = h;
    e.extend_from_slice(&org_one_hot(org));
    Ok((TaskEncoding(e), EncoderCache { steps }))
}

pub fn encode_task(
    params: &ModelParams,
    menu: &MenuSpec,
    target_index: usize,
    ctx: &FeatureContext,
) -> Result<(TaskEncoding, EncoderCache)> {
    let items = ctx.trial_features(menu, target_index)?;
    encode_items(params, &items, menu.organization)
}

/// Backpropagate `d_enc` (gradient w.r.t. the encoder's final hidden state)
/// through the encoder. Returns per-item input gradients when asked.
fn encoder_backward(
    params: &ModelParams,
    cache: &EncoderCache,
    d_enc: &[f64],
    grads: Option<&mut [f64]>,
    want_inputs: bool,
) -> Option<Vec<Vec<f64>>> {
    let cell = params.encoder();
    let hn = cell.cells;
    let mut gr = grads.map(|g| params.layout.encoder.grads_mut(g));
    let mut dh = d_enc.to_vec();
    let mut dc = vec![0.0; hn];
    let mut dh_prev = vec![0.0; hn];
    let mut dc_prev = vec![0.0; hn];
    let mut dxs = want_inputs.then(|| vec![vec![0.0; cell.input_dim]; cache.steps.len()]);
    for (j, step) in cache.steps.iter().enumerate().rev() {
        let dx = dxs.as_mut().map(|v| v[j].as_mut_slice());
        lstm_step_backward(&cell, step, &dh, &dc, gr.as_mut(), dx, &mut dh_prev, &mut dc_prev);
        std::mem::swap(&mut dh, &mut dh_prev);
        std::mem::swap(&mut dc, &mut dc_prev);
    }
    dxs
}

/// Per-trial cache of the prediction net.
#[derive(Debug, Clone, PartialEq)]
pub struct StepCache {
    pub mask: Option<Vec<f64>>,
    pub lstm: LstmStepCache,
    pub hidden_pre: Vec<f64>,
    pub hidden: Vec<f64>,
    pub output: f64,
}

impl StepCache {
    pub fn h(&self) -> &[f64] {
        &self.lstm.h
    }

    pub fn c(&self) -> &[f64] {
        &self.lstm.c
    }
}

/// One trial of the prediction net. `dropout_mask` (train mode only)
/// multiplies the task encoding elementwise.
pub fn predict_step(
    params: &ModelParams,
    e: &TaskEncoding,
    h_prev: &[f64],
    c_prev: &[f64],
    dropout_mask: Option<&[f64]>,
) -> Result<StepCache> {
    let d = &params.dims;
    if e.0.len() != d.task_dim() {
        return Err(Error::Shape(format!(
            "task encoding of length {}, expected {}",
            e.0.len(),
            d.task_dim()
        )));
    }
    let input: Vec<f64> = match dropout_mask {
        Some(m) if m.len() != e.0.len() => {
            return Err(Error::Shape(format!("dropout mask of length {}", m.len())))
        }
        Some(m) => e.0.iter().zip(m).map(|(a, b)| a * b).collect(),
        None => e.0.clone(),
    };
    let lstm = lstm_step(&params.predictor(), &input, h_prev, c_prev)?;
    let w = &params.weights;
    let mut hidden_pre = w[params.layout.hidden_b.clone()].to_vec();
    gemv_t_acc(&w[params.layout.hidden_w.clone()], &lstm.h, &mut hidden_pre);
    let hidden: Vec<f64> = hidden_pre.iter().map(|&a| a.max(0.0)).collect();
    let readout = &w[params.layout.readout_w.clone()];
    let output = w[params.layout.readout_b.start] + hidden.iter().zip(readout).map(|(a, b)| a * b).sum::<f64>();
    Ok(StepCache {
        mask: dropout_mask.map(<[f64]>::to_vec),
        lstm,
        hidden_pre,
        hidden,
        output,
    })
}

/// Backward through one prediction step. Returns the gradient w.r.t. the
/// (unmasked) task encoding; updates `dh`/`dc` in place to the gradients
/// w.r.t. the previous state.
fn predict_step_backward(
    params: &ModelParams,
    cache: &StepCache,
    dt: f64,
    dh: &mut Vec<f64>,
    dc: &mut Vec<f64>,
    mut grads: Option<&mut [f64]>,
) -> Vec<f64> {
    let l = &params.layout;
    let w = &params.weights;
    let readout = &w[l.readout_w.clone()];
    let d_hidden_pre: Vec<f64> = cache
        .hidden_pre
        .iter()
        .zip(readout)
        .map(|(&a, &r)| if a > 0.0 { dt * r } else { 0.0 })
        .collect();
    if let Some(g) = grads.as_deref_mut() {
        g[l.readout_b.start] += dt;
        for (gv, &hv) in g[l.readout_w.clone()].iter_mut().zip(&cache.hidden) {
            *gv += dt * hv;
        }
        for (gv, &dv) in g[l.hidden_b.clone()].iter_mut().zip(&d_hidden_pre) {
            *gv += dv;
        }
        // hidden_w is pred_cells × hidden_dim: G += h ⊗ d_hidden_pre
        outer_acc(&mut g[l.hidden_w.clone()], &cache.lstm.h, &d_hidden_pre);
    }
    gemv_acc(&w[l.hidden_w.clone()], &d_hidden_pre, dh);

    let cell = params.predictor();
    let mut gr = grads.map(|g| l.predictor.grads_mut(g));
    let mut d_input = vec![0.0; cell.input_dim];
    let mut dh_prev = vec![0.0; cell.cells];
    let mut dc_prev = vec![0.0; cell.cells];
    lstm_step_backward(&cell, &cache.lstm, dh, dc, gr.as_mut(), Some(&mut d_input), &mut dh_prev, &mut dc_prev);
    *dh = dh_prev;
    *dc = dc_prev;
    if let Some(m) = &cache.mask {
        d_input.iter_mut().zip(m).for_each(|(d, k)| *d *= k);
    }
    d_input
}

/// Menu features with target flags cleared, shared by every trial on the menu.
#[derive(Debug, Clone, PartialEq)]
pub struct MenuInputs {
    pub base: Vec<ItemFeatures>,
    pub organization: Organization,
}

impl MenuInputs {
    pub fn new(menu: &MenuSpec, ctx: &FeatureContext) -> Result<Self> {
        Ok(Self {
            base: ctx.menu_features(menu)?,
            organization: menu.organization,
        })
    }

    pub fn n(&self) -> usize {
        self.base.len()
    }

    pub fn items_for(&self, target: usize) -> Vec<ItemFeatures> {
        let mut items = self.base.clone();
        items[target].0[0] = 1.0;
        items
    }
}

pub enum Mode<'a> {
    Eval,
    Train { rng: &'a mut RngStream, dropout: f64 },
}

/// Inverted dropout mask: each entry is 0 with probability `rate`,
/// otherwise `1 / (1 - rate)`.
pub fn dropout_mask(len: usize, rate: f64, rng: &mut RngStream) -> Vec<f64> {
    let keep = 1.0 / (1.0 - rate);
    (0..len).map(|_| if rng.uniform() < rate { 0.0 } else { keep }).collect()
}

/// Forward state of a window of trials.
///
/// Encodings depend only on the target within a window (weights are fixed),
/// so each distinct target is encoded once and its gradient is summed
/// before a single encoder backward pass.
#[derive(Debug, Clone)]
pub struct SequenceCache {
    pub targets: Vec<usize>,
    pub encodings: HashMap<usize, (TaskEncoding, EncoderCache)>,
    pub steps: Vec<StepCache>,
}

impl SequenceCache {
    pub fn final_state(&self) -> Option<(&[f64], &[f64])> {
        self.steps.last().map(|s| (s.h(), s.c()))
    }
}

/// Perturbation of one input coordinate at one step, for finite differences.
#[derive(Debug, Clone, Copy)]
pub struct InputNudge {
    pub step: usize,
    pub item: usize,
    pub coord: usize,
    pub delta: f64,
}

pub fn forward_window(
    params: &ModelParams,
    inputs: &MenuInputs,
    targets: &[usize],
    h0: &[f64],
    c0: &[f64],
    masks: Option<&[Vec<f64>]>,
) -> Result<(Vec<f64>, SequenceCache)> {
    forward_window_nudged(params, inputs, targets, h0, c0, masks, None)
}

pub fn forward_window_nudged(
    params: &ModelParams,
    inputs: &MenuInputs,
    targets: &[usize],
    h0: &[f64],
    c0: &[f64],
    masks: Option<&[Vec<f64>]>,
    nudge: Option<InputNudge>,
) -> Result<(Vec<f64>, SequenceCache)> {
    if let Some(m) = masks {
        if m.len() != targets.len() {
            return Err(Error::Shape(format!("{} masks for {} trials", m.len(), targets.len())));
        }
    }
    let mut encodings: HashMap<usize, (TaskEncoding, EncoderCache)> = HashMap::new();
    let mut steps = Vec::with_capacity(targets.len());
    let mut preds = Vec::with_capacity(targets.len());
    let mut h = h0.to_vec();
    let mut c = c0.to_vec();
    for (i, &target) in targets.iter().enumerate() {
        if target >= inputs.n() {
            return Err(Error::Validation(format!(
                "target {target} out of range for menu of {} items",
                inputs.n()
            )));
        }
        let nudged;
        let enc = match nudge {
            Some(nd) if nd.step == i => {
                let mut items = inputs.items_for(target);
                items[nd.item].0[nd.coord] += nd.delta;
                nudged = encode_items(params, &items, inputs.organization)?.0;
                &nudged
            }
            _ => {
                if !encodings.contains_key(&target) {
                    let enc = encode_items(params, &inputs.items_for(target), inputs.organization)?;
                    encodings.insert(target, enc);
                }
                &encodings[&target].0
            }
        };
        let step = predict_step(params, enc, &h, &c, masks.map(|m| m[i].as_slice()))?;
        h.clone_from(&step.lstm.h);
        c.clone_from(&step.lstm.c);
        preds.push(step.output);
        steps.push(step);
    }
    Ok((
        preds,
        SequenceCache {
            targets: targets.to_vec(),
            encodings,
            steps,
        },
    ))
}

/// Whole-sequence forward from the zero state. Train mode draws a fresh
/// dropout mask per trial from the supplied stream.
pub fn forward_sequence(
    params: &ModelParams,
    inputs: &MenuInputs,
    targets: &[usize],
    mode: Mode<'_>,
) -> Result<(Vec<f64>, SequenceCache)> {
    let h0 = vec![0.0; params.dims.pred_cells];
    let masks = match mode {
        Mode::Eval => None,
        Mode::Train { rng, dropout } => Some(
            (0..targets.len())
                .map(|_| dropout_mask(params.dims.task_dim(), dropout, rng))
                .collect::<Vec<_>>(),
        ),
    };
    forward_window(params, inputs, targets, &h0, &h0, masks.as_deref())
}

/// Eval-mode predictions for a full sequence.
pub fn predict_times(params: &ModelParams, inputs: &MenuInputs, targets: &[usize]) -> Result<Vec<f64>> {
    Ok(forward_sequence(params, inputs, targets, Mode::Eval)?.0)
}

/// Exact gradient of `Σ dl_dt[i] · t_i` w.r.t. every weight, truncated at
/// the window start (no gradient into the initial state).
pub fn backward_sequence(params: &ModelParams, cache: &SequenceCache, dl_dt: &[f64]) -> Result<Vec<f64>> {
    if dl_dt.len() != cache.steps.len() {
        return Err(Error::Consistency(format!(
            "{} upstream gradients for a window of {} trials",
            dl_dt.len(),
            cache.steps.len()
        )));
    }
    if let Some(s) = cache.steps.first() {
        if s.lstm.h.len() != params.dims.pred_cells || s.lstm.x.len() != params.dims.task_dim() {
            return Err(Error::Consistency("cache was produced with different model dims".into()));
        }
    }
    let mut grads = params.zero_grads();
    let pc = params.dims.pred_cells;
    let mut dh = vec![0.0; pc];
    let mut dc = vec![0.0; pc];
    let mut d_enc: HashMap<usize, Vec<f64>> = HashMap::new();
    for (i, step) in cache.steps.iter().enumerate().rev() {
        let de = predict_step_backward(params, step, dl_dt[i], &mut dh, &mut dc, Some(&mut grads));
        let acc = d_enc
            .entry(cache.targets[i])
            .or_insert_with(|| vec![0.0; params.dims.task_dim()]);
        acc.iter_mut().zip(&de).for_each(|(a, d)| *a += d);
    }
    let mut targets: Vec<usize> = d_enc.keys().copied().collect();
    targets.sort_unstable();
    for t in targets {
        let (_, enc_cache) = cache
            .encodings
            .get(&t)
            .ok_or_else(|| Error::Consistency(format!("no encoder cache for target {t}")))?;
        let de = &d_enc[&t][..params.dims.enc_cells];
        encoder_backward(params, enc_cache, de, Some(&mut grads), false);
    }
    Ok(grads)
}

/// Gradients of `t_i` w.r.t. the task encoding at each step `s` in
/// `from..=i` (eval-mode cache), by backpropagation through the predictor.
fn encoding_grads_back(params: &ModelParams, cache: &SequenceCache, i: usize, from: usize) -> Vec<Vec<f64>> {
    let pc = params.dims.pred_cells;
    let mut dh = vec![0.0; pc];
    let mut dc = vec![0.0; pc];
    let mut out = vec![Vec::new(); i - from + 1];
    for s in (from..=i).rev() {
        let dt = if s == i { 1.0 } else { 0.0 };
        out[s - from] = predict_step_backward(params, &cache.steps[s], dt, &mut dh, &mut dc, None);
    }
    out
}

/// `∂t_i / ∂x[s][j][k]` in eval mode: feature `k` of item `j` as fed to
/// the encoder at step `s`. Coordinate 0 is the target flag.
pub fn input_jacobian(
    params: &ModelParams,
    inputs: &MenuInputs,
    targets: &[usize],
    step: usize,
    source_step: usize,
    item: usize,
    coord: usize,
) -> Result<f64> {
    if source_step > step {
        return Err(Error::Causality { step, source_step });
    }
    if step >= targets.len() || item >= inputs.n() || coord >= params.dims.item_dim {
        return Err(Error::Validation(format!(
            "step {step} / item {item} out of range ({} trials, {} items)",
            targets.len(),
            inputs.n()
        )));
    }
    let (_, cache) = forward_sequence(params, inputs, &targets[..=step], Mode::Eval)?;
    let de = encoding_grads_back(params, &cache, step, source_step);
    let enc = &cache.encodings[&targets[source_step]].1;
    let dxs = encoder_backward(params, enc, &de[0][..params.dims.enc_cells], None, true)
        .expect("input gradients requested");
    Ok(dxs[item][coord])
}

/// For every trial `i` and lag `1..=max_lag` where the trial `i - lag` had
/// the same target, `∂t_i / ∂(target flag of that item at step i - lag)`.
/// Returns `(i, lag, derivative)` triples in trial order.
pub fn recency_jacobians(
    params: &ModelParams,
    inputs: &MenuInputs,
    targets: &[usize],
    max_lag: usize,
) -> Result<Vec<(usize, usize, f64)>> {
    let (_, cache) = forward_sequence(params, inputs, targets, Mode::Eval)?;
    let mut out = Vec::new();
    for i in 0..targets.len() {
        let from = i.saturating_sub(max_lag);
        let lags: Vec<usize> = (1..=max_lag.min(i)).filter(|&lag| targets[i - lag] == targets[i]).collect();
        if lags.is_empty() {
            continue;
        }
        let de = encoding_grads_back(params, &cache, i, from);
        let enc = &cache.encodings[&targets[i]].1;
        for lag in lags {
            let s = i - lag;
            let dxs = encoder_backward(params, enc, &de[s - from][..params.dims.enc_cells], None, true)
                .expect("input gradients requested");
            out.push((i, lag, dxs[targets[i]][0]));
        }
    }
    Ok(out)
}

const CHECKPOINT_MAGIC: &[u8; 8] = b"MENUNETC";
const CHECKPOINT_VERSION: u32 = 1;
const CHECKPOINT_END: &[u8; 4] = b"END!";

fn write_block<W: Write>(sink: &mut W, name: &str, values: &[f64]) -> Result<()> {
    sink.write_all(&(name.len() as u16).to_le_bytes())?;
    sink.write_all(name.as_bytes())?;
    sink.write_all(&(values.len() as u64).to_le_bytes())?;
    for v in values {
        sink.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

/// Binary checkpoint:
///
/// ```text
/// magic "MENUNETC" | version u32 | dims 5×u32 (item, enc, org, pred, hidden)
/// embedding: u8 kind (0 synthetic + u64 seed, 1 table + 32-byte sha256)
/// block count u32, then per block: name (u16 len + utf8), u64 count, f64s
///   encoder.wx encoder.wh encoder.b predictor.wx predictor.wh predictor.b
///   hidden.w hidden.b readout.w readout.b projection.mean projection.components
/// "END!"
/// ```
///
/// All integers and reals little-endian.
pub fn save_checkpoint<W: Write>(params: &ModelParams, mut sink: W) -> Result<()> {
    let d = &params.dims;
    sink.write_all(CHECKPOINT_MAGIC)?;
    sink.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    for v in [d.item_dim, d.enc_cells, d.org_dim, d.pred_cells, d.hidden_dim] {
        sink.write_all(&(v as u32).to_le_bytes())?;
    }
    match &params.embedding {
        EmbeddingSource::Synthetic { seed } => {
            sink.write_all(&[0u8])?;
            sink.write_all(&seed.to_le_bytes())?;
        }
        EmbeddingSource::Table { sha256 } => {
            let bytes = hex::decode(sha256)
                .ok()
                .filter(|b| b.len() == 32)
                .ok_or_else(|| Error::Checkpoint(format!("bad table digest `{sha256}`")))?;
            sink.write_all(&[1u8])?;
            sink.write_all(&bytes)?;
        }
    }
    let blocks = params.layout.blocks();
    sink.write_all(&(blocks.len() as u32 + 2).to_le_bytes())?;
    for (name, range) in blocks {
        write_block(&mut sink, name, &params.weights[range])?;
    }
    write_block(&mut sink, "projection.mean", &params.name_projection.mean)?;
    write_block(&mut sink, "projection.components", &params.name_projection.components.concat())?;
    sink.write_all(CHECKPOINT_END)?;
    sink.flush()?;
    Ok(())
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Checkpoint(format!("truncated at byte {}", self.buf.len())));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn block(&mut self, expected: &str) -> Result<Vec<f64>> {
        let len = self.u16()? as usize;
        let name = std::str::from_utf8(self.take(len)?)
            .map_err(|_| Error::Checkpoint("block name is not UTF-8".into()))?;
        if name != expected {
            return Err(Error::Checkpoint(format!("expected block `{expected}`, found `{name}`")));
        }
        let count = self.u64()? as usize;
        let bytes = self.take(count.checked_mul(8).ok_or_else(|| Error::Checkpoint("block too large".into()))?)?;
        Ok(bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}

/// Load a checkpoint, optionally insisting on specific dims. Nothing is
/// returned unless the whole file parses.
pub fn load_checkpoint<R: Read>(mut source: R, expected: Option<&ModelDims>) -> Result<ModelParams> {
    let mut buf = Vec::new();
    source.read_to_end(&mut buf)?;
    let mut cur = Cursor { buf: &buf, pos: 0 };
    if cur.take(8)? != CHECKPOINT_MAGIC {
        return Err(Error::Checkpoint("not a checkpoint (bad magic)".into()));
    }
    let version = cur.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported checkpoint version {version}, expected {CHECKPOINT_VERSION}"
        )));
    }
    let mut raw = [0usize; 5];
    for r in &mut raw {
        *r = cur.u32()? as usize;
    }
    let dims = ModelDims {
        item_dim: raw[0],
        enc_cells: raw[1],
        org_dim: raw[2],
        pred_cells: raw[3],
        hidden_dim: raw[4],
    };
    if let Some(exp) = expected {
        if *exp != dims {
            return Err(Error::DimsMismatch {
                expected: exp.to_string(),
                found: dims.to_string(),
            });
        }
    }
    dims.validate().map_err(|e| Error::Checkpoint(e.to_string()))?;
    let embedding = match cur.u8()? {
        0 => EmbeddingSource::Synthetic { seed: cur.u64()? },
        1 => EmbeddingSource::Table {
            sha256: hex::encode(cur.take(32)?),
        },
        k => return Err(Error::Checkpoint(format!("unknown embedding kind {k}"))),
    };
    let layout = dims.layout();
    let blocks = layout.blocks();
    let count = cur.u32()? as usize;
    if count != blocks.len() + 2 {
        return Err(Error::Checkpoint(format!("{count} blocks, expected {}", blocks.len() + 2)));
    }
    let mut weights = vec![0.0; layout.total];
    for (name, range) in blocks {
        let vals = cur.block(name)?;
        if vals.len() != range.len() {
            return Err(Error::Checkpoint(format!(
                "block `{name}` has {} values, expected {}",
                vals.len(),
                range.len()
            )));
        }
        weights[range].copy_from_slice(&vals);
    }
    let mean = cur.block("projection.mean")?;
    let flat = cur.block("projection.components")?;
    if mean.is_empty() || flat.len() % mean.len() != 0 {
        return Err(Error::Checkpoint("malformed projection block".into()));
    }
    let components = flat.chunks(mean.len()).map(<[f64]>::to_vec).collect();
    if cur.take(4)? != CHECKPOINT_END {
        return Err(Error::Checkpoint("missing end marker".into()));
    }
    if cur.pos != buf.len() {
        return Err(Error::Checkpoint(format!("{} trailing bytes", buf.len() - cur.pos)));
    }
    if weights.iter().any(|w| !w.is_finite()) {
        return Err(Error::Checkpoint("non-finite weight".into()));
    }
    Ok(ModelParams {
        dims,
        layout,
        weights,
        name_projection: PcaProjection { mean, components },
        embedding,
    })
}
