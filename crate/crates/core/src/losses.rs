//! Replay objectives: ER, DER, DER++ and X-DER.
//!
//! Every function works on logits and returns the scalar loss together with
//! its gradient with respect to the new-batch logits and the replay-batch
//! logits, so a trainer can run one backward pass over the concatenated
//! batch.

use std::ops::Range;

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, ArrayViewMut1, Axis};

use crate::buffer::ReplaySlot;
use crate::error::{Error, Result};
use crate::nn::softmax_ce;

/// Rows of future-head logits whose norm falls below this are treated as
/// zero vectors when normalising.
const NORM_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossConfig {
    /// ER replay weight.
    pub lambda_replay: f64,
    /// Logit distillation weight.
    pub alpha: f64,
    /// Replay cross-entropy weight (DER++ and the selective CE replay term).
    pub beta: f64,
    /// Future-preparation weight.
    pub lambda_fp: f64,
    /// Past/future constraint weight.
    pub eta: f64,
    /// Contrastive temperature.
    pub tau: f64,
    pub margin: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            lambda_replay: 1.0,
            alpha: 0.3,
            beta: 0.5,
            lambda_fp: 0.1,
            eta: 0.1,
            tau: 0.1,
            margin: 0.3,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        let non_negative = [
            ("lambda_replay", self.lambda_replay),
            ("alpha", self.alpha),
            ("beta", self.beta),
            ("lambda_fp", self.lambda_fp),
            ("eta", self.eta),
            ("margin", self.margin),
        ];
        for (name, v) in non_negative {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::InvalidArgument(format!(
                    "{name} must be finite and >= 0, got {v}"
                )));
            }
        }
        if !(self.tau.is_finite() && self.tau > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "tau must be finite and > 0, got {}",
                self.tau
            )));
        }
        Ok(())
    }
}

/// Contiguous per-task logit heads: task `t` owns `[t·k, (t+1)·k)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HeadLayout {
    pub classes_per_task: usize,
    pub task_count: usize,
    pub current_task: usize,
}

impl HeadLayout {
    pub fn new(classes_per_task: usize, task_count: usize, current_task: usize) -> Result<Self> {
        if classes_per_task == 0 || task_count == 0 || current_task >= task_count {
            return Err(Error::InvalidArgument(format!(
                "invalid head layout k={classes_per_task} T={task_count} c={current_task}"
            )));
        }
        Ok(HeadLayout {
            classes_per_task,
            task_count,
            current_task,
        })
    }

    pub fn classes(&self) -> usize {
        self.classes_per_task * self.task_count
    }

    pub fn head(&self, task: usize) -> Range<usize> {
        task * self.classes_per_task..(task + 1) * self.classes_per_task
    }

    pub fn task_of(&self, label: usize) -> usize {
        label / self.classes_per_task
    }

    pub fn past(&self) -> Range<usize> {
        0..self.current_task * self.classes_per_task
    }

    pub fn present(&self) -> Range<usize> {
        self.head(self.current_task)
    }

    pub fn future(&self) -> Range<usize> {
        (self.current_task + 1) * self.classes_per_task..self.classes()
    }

    pub fn future_heads(&self) -> usize {
        self.task_count - self.current_task - 1
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossOutput {
    pub loss: f64,
    /// `∂loss/∂new_logits`
    pub d_new: Array2<f64>,
    /// `∂loss/∂replay_logits`
    pub d_replay: Array2<f64>,
}

fn same_shape(a: ArrayView2<f64>, b: ArrayView2<f64>, what: &str) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(Error::ShapeMismatch(format!("{what}: {:?} vs {:?}", a.dim(), b.dim())));
    }
    Ok(())
}

/// `CE(new) + λ·CE(replay)`. An empty replay batch contributes nothing.
pub fn er_loss(
    new_logits: ArrayView2<f64>,
    new_labels: &[usize],
    replay_logits: ArrayView2<f64>,
    replay_labels: &[usize],
    lambda_replay: f64,
) -> Result<LossOutput> {
    let (ce_new, d_new) = softmax_ce(new_logits, new_labels)?;
    let (ce_replay, d_replay) = softmax_ce(replay_logits, replay_labels)?;
    let (replay_loss, d_replay) = weighted(ce_replay, d_replay, lambda_replay);
    Ok(LossOutput {
        loss: ce_new + replay_loss,
        d_new,
        d_replay,
    })
}

/// Scales a term by `weight`; a zero weight yields an exact `+0.0` term.
fn weighted(loss: f64, mut grad: Array2<f64>, weight: f64) -> (f64, Array2<f64>) {
    if weight == 0.0 {
        grad.fill(0.0);
        return (0.0, grad);
    }
    grad *= weight;
    (weight * loss, grad)
}

/// `(1/B)·Σ_j ‖h_j − z_j‖²` and its gradient `2(h − z)/B`.
pub fn distillation(replay_logits: ArrayView2<f64>, stored_logits: ArrayView2<f64>) -> Result<(f64, Array2<f64>)> {
    same_shape(replay_logits, stored_logits, "replay vs stored logits")?;
    let batch = replay_logits.nrows();
    if batch == 0 {
        return Ok((0.0, Array2::zeros(replay_logits.raw_dim())));
    }
    let diff = &replay_logits - &stored_logits;
    let value = diff.iter().map(|d| d * d).sum::<f64>() / batch as f64;
    Ok((value, diff * (2.0 / batch as f64)))
}

pub fn der_loss(
    new_logits: ArrayView2<f64>,
    new_labels: &[usize],
    replay_logits: ArrayView2<f64>,
    stored_logits: ArrayView2<f64>,
    alpha: f64,
) -> Result<LossOutput> {
    let (ce_new, d_new) = softmax_ce(new_logits, new_labels)?;
    let (distill, d_replay) = distillation(replay_logits, stored_logits)?;
    let (distill, d_replay) = weighted(distill, d_replay, alpha);
    Ok(LossOutput {
        loss: ce_new + distill,
        d_new,
        d_replay,
    })
}

pub fn derpp_loss(
    new_logits: ArrayView2<f64>,
    new_labels: &[usize],
    replay_logits: ArrayView2<f64>,
    replay_labels: &[usize],
    stored_logits: ArrayView2<f64>,
    alpha: f64,
    beta: f64,
) -> Result<LossOutput> {
    let mut out = der_loss(new_logits, new_labels, replay_logits, stored_logits, alpha)?;
    let (ce_replay, d_ce) = softmax_ce(replay_logits, replay_labels)?;
    out.loss += beta * ce_replay;
    out.d_replay.scaled_add(beta, &d_ce);
    Ok(out)
}

/// Cross-entropy with the softmax restricted to the current task's head.
///
/// The new-batch term averages over the whole batch. The replay term is
/// weighted by `beta` and averages over the replayed samples whose label
/// falls in the current head; other replayed samples are skipped.
pub fn selective_ce(
    new_logits: ArrayView2<f64>,
    new_labels: &[usize],
    replay_logits: ArrayView2<f64>,
    replay_labels: &[usize],
    layout: HeadLayout,
    beta: f64,
) -> Result<LossOutput> {
    let present = layout.present();
    let mut d_new = Array2::zeros(new_logits.raw_dim());
    let mut d_replay = Array2::zeros(replay_logits.raw_dim());

    let mut local = Vec::with_capacity(new_labels.len());
    for &label in new_labels {
        if !present.contains(&label) {
            return Err(Error::InvalidArgument(format!(
                "new-batch label {label} is outside the current task's classes {present:?}"
            )));
        }
        local.push(label - present.start);
    }
    check_width(new_logits, layout.classes())?;
    let (ce_new, d) = softmax_ce(new_logits.slice(s![.., present.clone()]), &local)?;
    d_new.slice_mut(s![.., present.clone()]).assign(&d);
    let mut loss = ce_new;

    if beta != 0.0 && replay_logits.nrows() > 0 {
        check_width(replay_logits, layout.classes())?;
        let (rows, labels): (Vec<usize>, Vec<usize>) = replay_labels
            .iter()
            .enumerate()
            .filter(|(_, l)| present.contains(l))
            .map(|(i, &l)| (i, l - present.start))
            .unzip();
        if !rows.is_empty() {
            let picked = replay_logits.select(Axis(0), &rows);
            let (ce_r, d_r) = softmax_ce(picked.slice(s![.., present.clone()]), &labels)?;
            loss += beta * ce_r;
            for (src, &row) in d_r.outer_iter().zip(&rows) {
                d_replay.slice_mut(s![row, present.clone()]).scaled_add(beta, &src);
            }
        }
    }
    Ok(LossOutput { loss, d_new, d_replay })
}

fn check_width(logits: ArrayView2<f64>, classes: usize) -> Result<()> {
    if logits.ncols() != classes {
        return Err(Error::ShapeMismatch(format!(
            "logits have {} columns, layout has {classes} classes",
            logits.ncols()
        )));
    }
    Ok(())
}

/// Supervised-contrastive future-preparation loss.
///
/// `normalized_future` holds, for every sample, the future heads' logits
/// (tasks `c+1..T`) with each head's `k`-slice L2-normalised. For each
/// future head the contrastive term is evaluated on that head's slice; the
/// heads are averaged. Anchors without a same-class partner are left out of
/// the anchor mean; if there are none the loss is zero.
pub fn future_prep_loss(
    normalized_future: ArrayView2<f64>,
    class_labels: &[usize],
    layout: HeadLayout,
    tau: f64,
) -> Result<(f64, Array2<f64>)> {
    let k = layout.classes_per_task;
    let width = layout.future_heads() * k;
    if normalized_future.ncols() != width {
        return Err(Error::ShapeMismatch(format!(
            "expected {width} future logits per row, got {}",
            normalized_future.ncols()
        )));
    }
    if normalized_future.nrows() != class_labels.len() {
        return Err(Error::ShapeMismatch("one label per row required".into()));
    }
    for row in normalized_future.outer_iter() {
        for head in row.exact_chunks(k) {
            let norm = head.dot(&head).sqrt();
            if (norm - 1.0).abs() > 1e-9 {
                return Err(Error::InvalidArgument(format!(
                    "future head slice has norm {norm}, expected 1"
                )));
            }
        }
    }
    if tau.is_nan() || tau <= 0.0 {
        return Err(Error::InvalidArgument(format!("tau must be positive, got {tau}")));
    }
    Ok(contrastive_core(normalized_future, class_labels, k, tau))
}

fn contrastive_core(h: ArrayView2<f64>, labels: &[usize], k: usize, tau: f64) -> (f64, Array2<f64>) {
    let n = h.nrows();
    let heads = h.ncols().checked_div(k).unwrap_or(0);
    let mut grad = Array2::zeros(h.raw_dim());
    if heads == 0 || n < 2 {
        return (0.0, grad);
    }
    let positives: Vec<Vec<usize>> = (0..n)
        .map(|i| (0..n).filter(|&j| j != i && labels[j] == labels[i]).collect())
        .collect();
    let anchors = positives.iter().filter(|p| !p.is_empty()).count();
    if anchors == 0 {
        return (0.0, grad);
    }
    let weight = 1.0 / (heads * anchors) as f64;
    let mut total = 0.0;
    for head in 0..heads {
        let cols = head * k..(head + 1) * k;
        let slice = h.slice(s![.., cols.clone()]);
        let sim = slice.dot(&slice.t()) / tau;
        let mut d_sim = Array2::<f64>::zeros((n, n));
        for (i, pos) in positives.iter().enumerate() {
            if pos.is_empty() {
                continue;
            }
            let row = sim.row(i);
            let max = (0..n)
                .filter(|&m| m != i)
                .map(|m| row[m])
                .fold(f64::NEG_INFINITY, f64::max);
            let denom: f64 = (0..n).filter(|&m| m != i).map(|m| (row[m] - max).exp()).sum();
            let lse = max + denom.ln();
            let inv_p = 1.0 / pos.len() as f64;
            total += weight * inv_p * pos.iter().map(|&p| lse - row[p]).sum::<f64>();
            for m in (0..n).filter(|&m| m != i) {
                d_sim[[i, m]] += weight * (row[m] - lse).exp();
            }
            for &p in pos {
                d_sim[[i, p]] -= weight * inv_p;
            }
        }
        // sim = H Hᵀ / τ  ⇒  dH = (dS + dSᵀ) H / τ
        let sym = &d_sim + &d_sim.t();
        let d_slice = sym.dot(&slice) / tau;
        grad.slice_mut(s![.., cols]).assign(&d_slice);
    }
    (total, grad)
}

fn slice_max_excluding(row: ArrayView1<f64>, range: Range<usize>, exclude: usize) -> Option<(usize, f64)> {
    range
        .filter(|&i| i != exclude)
        .map(|i| (i, row[i]))
        .fold(None, |best, (i, v)| match best {
            Some((_, bv)) if bv >= v => best,
            _ => Some((i, v)),
        })
}

/// Hinge penalties `max(0, max_past − h_gt + m) + max(0, max_future − h_gt + m)`.
///
/// The ground-truth logit is excluded from the past/future maxima; an empty
/// past or future range contributes zero. The subgradient at the kink is 0.
pub fn past_future_constraint(
    logits: ArrayView1<f64>,
    label: usize,
    layout: HeadLayout,
    margin: f64,
) -> Result<(f64, Array1<f64>)> {
    let mut grad = Array1::zeros(logits.len());
    let loss = pfc_into(logits, label, layout, margin, 1.0, grad.view_mut())?;
    Ok((loss, grad))
}

fn pfc_into(
    logits: ArrayView1<f64>,
    label: usize,
    layout: HeadLayout,
    margin: f64,
    scale: f64,
    mut grad: ArrayViewMut1<f64>,
) -> Result<f64> {
    if logits.len() != layout.classes() {
        return Err(Error::ShapeMismatch(format!(
            "logit row has {} entries, layout has {} classes",
            logits.len(),
            layout.classes()
        )));
    }
    if label >= layout.classes() {
        return Err(Error::LabelOutOfRange {
            label,
            classes: layout.classes(),
        });
    }
    let gt = logits[label];
    let mut loss = 0.0;
    for range in [layout.past(), layout.future()] {
        if let Some((idx, max)) = slice_max_excluding(logits, range, label) {
            let gap = max - gt + margin;
            if gap > 0.0 {
                loss += gap;
                grad[idx] += scale;
                grad[label] -= scale;
            }
        }
    }
    Ok(loss)
}

/// L2-normalise every future head slice of every row; returns the
/// normalised block and the per-(row, head) norms.
fn normalize_future(logits: ArrayView2<f64>, layout: HeadLayout) -> (Array2<f64>, Array2<f64>) {
    let k = layout.classes_per_task;
    let future = logits.slice(s![.., layout.future()]).to_owned();
    let heads = layout.future_heads();
    let mut normalized = future.clone();
    let mut norms = Array2::zeros((logits.nrows(), heads));
    for (r, mut row) in normalized.outer_iter_mut().enumerate() {
        for head in 0..heads {
            let mut chunk = row.slice_mut(s![head * k..(head + 1) * k]);
            let norm = chunk.dot(&chunk).sqrt().max(NORM_FLOOR);
            chunk /= norm;
            norms[[r, head]] = norm;
        }
    }
    (normalized, norms)
}

/// Back-propagate through `y = x / ‖x‖` per head slice.
fn normalize_backward(
    normalized: &Array2<f64>,
    norms: &Array2<f64>,
    d_normalized: &Array2<f64>,
    k: usize,
) -> Array2<f64> {
    let mut out = Array2::zeros(normalized.raw_dim());
    for r in 0..normalized.nrows() {
        for head in 0..norms.ncols() {
            let cols = s![r, head * k..(head + 1) * k];
            let y = normalized.slice(cols);
            let dy = d_normalized.slice(cols);
            let proj = y.dot(&dy);
            let dx = (&dy - &(&y * proj)) / norms[[r, head]];
            out.slice_mut(cols).assign(&dx);
        }
    }
    out
}

#[derive(Debug, Clone, Copy)]
pub struct XderBatch<'a> {
    pub new_logits: ArrayView2<'a, f64>,
    pub new_labels: &'a [usize],
    pub replay_logits: ArrayView2<'a, f64>,
    pub replay_labels: &'a [usize],
    pub stored_logits: ArrayView2<'a, f64>,
}

/// `L_S-CE + α·distillation + λ_fp·L_FP + η·L_PFC`, with L_FP and L_PFC
/// evaluated over the concatenated new + replay batch (L_PFC as a batch
/// mean).
pub fn xder_loss(batch: XderBatch<'_>, config: &LossConfig, layout: HeadLayout) -> Result<LossOutput> {
    let mut out = selective_ce(
        batch.new_logits,
        batch.new_labels,
        batch.replay_logits,
        batch.replay_labels,
        layout,
        config.beta,
    )?;
    let (distill, d_distill) = distillation(batch.replay_logits, batch.stored_logits)?;
    out.loss += config.alpha * distill;
    out.d_replay.scaled_add(config.alpha, &d_distill);

    let n_new = batch.new_logits.nrows();
    let n_total = n_new + batch.replay_logits.nrows();
    if config.lambda_fp == 0.0 && config.eta == 0.0 {
        return Ok(out);
    }
    if batch.replay_labels.len() != batch.replay_logits.nrows() {
        return Err(Error::ShapeMismatch("one replay label per replay row required".into()));
    }
    let combined = ndarray::concatenate(Axis(0), &[batch.new_logits, batch.replay_logits])
        .map_err(|e| Error::ShapeMismatch(e.to_string()))?;
    let labels: Vec<usize> = batch.new_labels.iter().chain(batch.replay_labels).copied().collect();
    let mut d_combined = Array2::<f64>::zeros(combined.raw_dim());

    if config.lambda_fp != 0.0 && layout.future_heads() > 0 {
        let (normalized, norms) = normalize_future(combined.view(), layout);
        let (fp, d_norm) = contrastive_core(normalized.view(), &labels, layout.classes_per_task, config.tau);
        out.loss += config.lambda_fp * fp;
        let d_future = normalize_backward(&normalized, &norms, &d_norm, layout.classes_per_task);
        d_combined
            .slice_mut(s![.., layout.future()])
            .scaled_add(config.lambda_fp, &d_future);
    }

    if config.eta != 0.0 && n_total > 0 {
        let scale = config.eta / n_total as f64;
        let mut pfc = 0.0;
        for ((row, &label), grad) in combined.outer_iter().zip(&labels).zip(d_combined.outer_iter_mut()) {
            pfc += pfc_into(row, label, layout, config.margin, scale, grad)?;
        }
        out.loss += config.eta * pfc / n_total as f64;
    }

    out.d_new += &d_combined.slice(s![..n_new, ..]);
    out.d_replay += &d_combined.slice(s![n_new.., ..]);
    Ok(out)
}

/// Overwrites the stored logits of heads belonging to tasks after the
/// slot's own task, up to and including the current task, with the current
/// model's logits.
pub fn revise_stored_logits(
    slot: &ReplaySlot,
    current_logits: ArrayView1<f64>,
    layout: HeadLayout,
) -> Result<Vec<f64>> {
    let stored = slot
        .stored_logits
        .as_ref()
        .ok_or_else(|| Error::InvalidArgument(format!("slot holding uid {} has no stored logits", slot.sample_uid)))?;
    if stored.len() != layout.classes() || current_logits.len() != layout.classes() {
        return Err(Error::ShapeMismatch(format!(
            "stored {} / current {} logits, layout has {} classes",
            stored.len(),
            current_logits.len(),
            layout.classes()
        )));
    }
    let mut revised = stored.clone();
    let own_task = layout.task_of(slot.label);
    if layout.current_task > own_task {
        let range = layout.head(own_task + 1).start..layout.head(layout.current_task).end;
        for i in range {
            revised[i] = current_logits[i];
        }
    }
    Ok(revised)
}
