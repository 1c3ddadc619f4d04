//! Loss terms and the stable-sample machinery.
//!
//! Every loss is recorded on a [`Graph`] so trainers can backpropagate
//! through it. Gating decisions (stable flags, stability scores) are computed
//! from plain values and never carry gradient.

use crate::error::{Error, Result};
use crate::numcore::{sq_dist, Graph, Tensor, Var};

/// Argmax with ties broken towards the lowest index.
pub fn predicted_label(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// `‖row‖∞` for a probability row.
pub fn confidence(row: &[f64]) -> f64 {
    row.iter().copied().fold(0.0, f64::max)
}

/// A sample is stable when both views agree on the label and at least one
/// view is more confident than `xi`.
pub fn stable_flag(probs_x: &[f64], probs_xbar: &[f64], xi: f64) -> bool {
    predicted_label(probs_x) == predicted_label(probs_xbar)
        && (confidence(probs_x) > xi || confidence(probs_xbar) > xi)
}

/// Squared distance between the predictions on the two views; smaller is
/// more stable.
pub fn stability_score(probs_x: &[f64], probs_xbar: &[f64]) -> f64 {
    sq_dist(probs_x, probs_xbar)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StabilityRecord {
    pub label: usize,
    pub confidence: f64,
    pub stable: bool,
    pub score: f64,
}

impl StabilityRecord {
    pub fn new(probs_x: &[f64], probs_xbar: &[f64], xi: f64) -> Self {
        StabilityRecord {
            label: predicted_label(probs_x),
            confidence: confidence(probs_x),
            stable: stable_flag(probs_x, probs_xbar, xi),
            score: stability_score(probs_x, probs_xbar),
        }
    }
}

/// One record per row of two aligned prediction matrices.
pub fn stability_records(probs_x: &Tensor, probs_xbar: &Tensor, xi: f64) -> Result<Vec<StabilityRecord>> {
    if probs_x.shape() != probs_xbar.shape() {
        return Err(Error::shape("views disagree in shape"));
    }
    Ok((0..probs_x.rows())
        .map(|r| StabilityRecord::new(probs_x.row(r), probs_xbar.row(r), xi))
        .collect())
}

/// Whether student `i` is pulled towards student `j` on one sample:
///
/// * both stable: only if `i` is strictly less stable (`E_i > E_j`);
/// * otherwise: only if `j` is stable.
pub fn receives_term(rec_i: &StabilityRecord, rec_j: &StabilityRecord) -> bool {
    if rec_i.stable && rec_j.stable {
        rec_i.score > rec_j.score
    } else {
        rec_j.stable
    }
}

/// Per-sample masks `(i receives, j receives)`.
pub fn stabilization_masks(
    recs_i: &[StabilityRecord],
    recs_j: &[StabilityRecord],
) -> Result<(Vec<bool>, Vec<bool>)> {
    if recs_i.len() != recs_j.len() {
        return Err(Error::input(format!(
            "stability records misaligned: {} vs {}",
            recs_i.len(),
            recs_j.len()
        )));
    }
    Ok(recs_i
        .iter()
        .zip(recs_j)
        .map(|(a, b)| (receives_term(a, b), receives_term(b, a)))
        .unzip())
}

/// Stabilization losses for a pair of students on the same samples.
///
/// A student receiving a term on sample `s` is pulled towards the other
/// student's detached prediction by `‖p_i(s) − p_j(s)‖²`. Both losses are
/// divided by the number of samples, constrained or not.
pub fn stabilization_loss(
    g: &mut Graph,
    recs_i: &[StabilityRecord],
    recs_j: &[StabilityRecord],
    probs_i_x: Var,
    probs_j_x: Var,
) -> Result<(Var, Var)> {
    let (mask_i, mask_j) = stabilization_masks(recs_i, recs_j)?;
    let rows = g.value(probs_i_x).rows();
    if rows != recs_i.len() || g.value(probs_j_x).rows() != rows {
        return Err(Error::input(format!(
            "{} records for {rows} prediction rows",
            recs_i.len()
        )));
    }
    let weights = |mask: &[bool]| -> Vec<f64> {
        mask.iter()
            .map(|&m| if m { 1.0 / rows as f64 } else { 0.0 })
            .collect()
    };
    let target_j = g.detach(probs_j_x);
    let d_i = g.row_sq_dist(probs_i_x, target_j)?;
    let loss_i = g.weighted_sum(d_i, &weights(&mask_i))?;

    let target_i = g.detach(probs_i_x);
    let d_j = g.row_sq_dist(probs_j_x, target_i)?;
    let loss_j = g.weighted_sum(d_j, &weights(&mask_j))?;
    Ok((loss_i, loss_j))
}

/// Ungated inter-student MSE, each side detaching the other.
pub fn plain_consistency_pair(g: &mut Graph, probs_i_x: Var, probs_j_x: Var) -> Result<(Var, Var)> {
    let tj = g.detach(probs_j_x);
    let li = g.mse(probs_i_x, tj)?;
    let ti = g.detach(probs_i_x);
    let lj = g.mse(probs_j_x, ti)?;
    Ok((li, lj))
}

/// MSE between two noisy forwards of one model, the second acting as a
/// detached target.
pub fn consistency_loss(g: &mut Graph, probs_x: Var, probs_xbar: Var) -> Result<Var> {
    let target = g.detach(probs_xbar);
    g.mse(probs_x, target)
}

/// Cross-entropy over the labeled rows; zero when none are labeled.
pub fn classification_loss(g: &mut Graph, probs: Var, labels: &[usize], labeled_mask: &[bool]) -> Result<Var> {
    if labels.len() != labeled_mask.len() {
        return Err(Error::input("labels and mask lengths differ"));
    }
    let rows: Vec<usize> = labeled_mask
        .iter()
        .enumerate()
        .filter_map(|(i, &m)| m.then_some(i))
        .collect();
    g.cross_entropy_rows(probs, labels, &rows)
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossBreakdown {
    pub cls: f64,
    pub con: f64,
    pub sta: f64,
    pub total: f64,
    pub ramp: f64,
}

impl LossBreakdown {
    /// `total = cls + λ₁·con + λ₂·ramp·sta`.
    pub fn combine(cls: f64, con: f64, sta: f64, lambda1: f64, lambda2: f64, ramp: f64) -> Self {
        LossBreakdown {
            cls,
            con,
            sta,
            total: cls + lambda1 * con + (lambda2 * ramp) * sta,
            ramp,
        }
    }
}

/// Records `cls + λ₁·con + λ₂·ramp·sta` on the graph. The returned breakdown
/// matches the graph value exactly.
pub fn total_loss(
    g: &mut Graph,
    cls: Var,
    con: Var,
    sta: Var,
    lambda1: f64,
    lambda2: f64,
    ramp: f64,
) -> Result<(Var, LossBreakdown)> {
    let con_w = g.scale(con, lambda1);
    let partial = g.add(cls, con_w)?;
    let sta_w = g.scale(sta, lambda2 * ramp);
    let total = g.add(partial, sta_w)?;
    let breakdown = LossBreakdown::combine(
        g.value(cls).item(),
        g.value(con).item(),
        g.value(sta).item(),
        lambda1,
        lambda2,
        ramp,
    );
    debug_assert_eq!(breakdown.total.to_bits(), g.value(total).item().to_bits());
    Ok((total, breakdown))
}

/// Linear ramp `min(1, (epoch+1)/ramp_epochs)`; always 1 when `ramp_epochs`
/// is zero.
pub fn rampup(epoch: usize, ramp_epochs: usize) -> f64 {
    if ramp_epochs == 0 {
        1.0
    } else {
        ((epoch + 1) as f64 / ramp_epochs as f64).min(1.0)
    }
}
