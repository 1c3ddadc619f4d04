//! Diagnostics over trained models and finished runs.

use crate::data::{augment, AugmentPolicy, Dataset};
use crate::error::{Error, Result};
use crate::models::{predict, MlpSpec, ModelParams};
use crate::numcore::{sq_dist, RngState};
use crate::ssl::{predicted_label, stable_flag};
use crate::trainers::RunResult;

/// Mean Euclidean distance between two models' eval-mode prediction rows.
pub fn prediction_distance(
    params_a: &ModelParams,
    spec_a: &MlpSpec,
    params_b: &ModelParams,
    spec_b: &MlpSpec,
    ds: &Dataset,
) -> Result<f64> {
    if spec_a.input_dim() != spec_b.input_dim() || spec_a.classes() != spec_b.classes() {
        return Err(Error::input(format!(
            "models disagree on dims: {:?} vs {:?}",
            spec_a.layer_widths, spec_b.layer_widths
        )));
    }
    if ds.dim() != spec_a.input_dim() {
        return Err(Error::input(format!(
            "dataset has {} features, models expect {}",
            ds.dim(),
            spec_a.input_dim()
        )));
    }
    let pa = predict(params_a, spec_a, &ds.features)?;
    let pb = predict(params_b, spec_b, &ds.features)?;
    let total: f64 = (0..pa.rows()).map(|r| sq_dist(pa.row(r), pb.row(r)).sqrt()).sum();
    Ok(total / pa.rows() as f64)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClassReport {
    pub class: usize,
    pub count: usize,
    pub stable: usize,
    pub acc_all: f64,
    /// `None` when no sample of this class is stable.
    pub acc_stable: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StableReport {
    pub stable_ratio: f64,
    pub acc_all: f64,
    /// `None` when no sample is stable.
    pub acc_stable: Option<f64>,
    pub per_class: Vec<ClassReport>,
}

/// Draws one augmentation per sample to decide stability; accuracy is
/// measured on the clean inputs.
pub fn stable_sample_report(
    params: &ModelParams,
    spec: &MlpSpec,
    ds: &Dataset,
    xi: f64,
    policy: &AugmentPolicy,
    rng: &mut RngState,
) -> Result<StableReport> {
    if !(0.0..1.0).contains(&xi) {
        return Err(Error::input(format!("xi = {xi} must lie in [0, 1)")));
    }
    let p = predict(params, spec, &ds.features)?;
    let x_bar = augment(&ds.features, policy, rng);
    let pb = predict(params, spec, &x_bar)?;

    let n = ds.class_count;
    let mut count = vec![0usize; n];
    let mut stable = vec![0usize; n];
    let mut hit = vec![0usize; n];
    let mut stable_hit = vec![0usize; n];
    for r in 0..ds.len() {
        let c = ds.labels[r];
        let ok = predicted_label(p.row(r)) == c;
        let st = stable_flag(p.row(r), pb.row(r), xi);
        count[c] += 1;
        hit[c] += ok as usize;
        stable[c] += st as usize;
        stable_hit[c] += (ok && st) as usize;
    }
    let ratio = |a: usize, b: usize| (b > 0).then(|| a as f64 / b as f64);
    let sum = |v: &[usize]| v.iter().sum::<usize>();
    let per_class = (0..n)
        .map(|c| ClassReport {
            class: c,
            count: count[c],
            stable: stable[c],
            acc_all: ratio(hit[c], count[c]).unwrap_or(0.0),
            acc_stable: ratio(stable_hit[c], stable[c]),
        })
        .collect();
    Ok(StableReport {
        stable_ratio: sum(&stable) as f64 / ds.len() as f64,
        acc_all: sum(&hit) as f64 / ds.len() as f64,
        acc_stable: ratio(sum(&stable_hit), sum(&stable)),
        per_class,
    })
}

/// Per-epoch probability of the true class for the tracked sample, as
/// logged by a run with `track_sample` set.
pub fn track_trace(result: &RunResult, model: &str) -> Result<Vec<f64>> {
    let trace = result.series(&format!("track_p_true_{model}"));
    if trace.is_empty() {
        return Err(Error::input(format!(
            "run {} has no tracked-sample trace for model {model:?}",
            result.run_id
        )));
    }
    Ok(trace)
}

/// Pearson correlation of `lagging[t]` with `leading[t - k]` for
/// `k = 0..=max_lag`.
pub fn lagged_correlation(lagging: &[f64], leading: &[f64], max_lag: usize) -> Result<Vec<f64>> {
    if lagging.len() != leading.len() {
        return Err(Error::input(format!(
            "trace lengths differ: {} vs {}",
            lagging.len(),
            leading.len()
        )));
    }
    let n = lagging.len();
    if max_lag + 2 > n {
        return Err(Error::input(format!("max_lag {max_lag} too large for {n} points")));
    }
    Ok((0..=max_lag)
        .map(|k| pearson(&lagging[k..], &leading[..n - k]))
        .collect())
}

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    if saa == 0.0 || sbb == 0.0 {
        return 0.0;
    }
    sab / (saa * sbb).sqrt()
}

/// Index of the largest entry (earliest on ties).
pub fn argmax(v: &[f64]) -> usize {
    crate::ssl::predicted_label(v)
}

#[derive(Clone, Debug, PartialEq)]
pub struct EmaCheck {
    /// `values[t]` is s′ₜ, with `values[0] = s0`.
    pub values: Vec<f64>,
    /// `gaps[t] = |values[t] - limit|`.
    pub gaps: Vec<f64>,
}

impl EmaCheck {
    /// First step from which every later gap stays below `eps`.
    pub fn settles_below(&self, eps: f64) -> Option<usize> {
        let last_bad = self.gaps.iter().rposition(|&g| !(g < eps));
        match last_bad {
            None => Some(0),
            Some(t) if t + 1 < self.gaps.len() => Some(t + 1),
            Some(_) => None,
        }
    }
}

/// Runs s′ₜ = α·s′ₜ₋₁ + (1−α)·sₜ over `sequence` (s₁, s₂, …) starting from
/// `s0`, and records the distance to `limit`.
pub fn ema_convergence_check(sequence: &[f64], alpha: f64, s0: f64, limit: f64) -> Result<EmaCheck> {
    if !(0.0..1.0).contains(&alpha) {
        return Err(Error::input(format!("alpha = {alpha} must lie in [0, 1)")));
    }
    let mut values = Vec::with_capacity(sequence.len() + 1);
    values.push(s0);
    let mut s = s0;
    for &x in sequence {
        s = alpha * s + (1.0 - alpha) * x;
        values.push(s);
    }
    let gaps = values.iter().map(|v| (v - limit).abs()).collect();
    Ok(EmaCheck { values, gaps })
}

#[derive(Clone, Debug, PartialEq)]
pub struct DistanceTrace {
    pub model_a: String,
    pub model_b: String,
    pub epochs: Vec<usize>,
    pub weight_dist: Vec<f64>,
    pub pred_dist: Vec<f64>,
}

impl DistanceTrace {
    /// The per-epoch coupling recorded during a run (first two models).
    pub fn from_result(result: &RunResult) -> Result<Self> {
        let pred = result.series("pred_dist");
        if pred.is_empty() {
            return Err(Error::input(format!("run {} logged no model pair", result.run_id)));
        }
        let mut weight = result.series("weight_dist");
        if weight.is_empty() {
            weight = vec![f64::NAN; pred.len()];
        }
        let epochs = result
            .metrics
            .iter()
            .filter(|r| r.metric == "pred_dist")
            .map(|r| r.epoch)
            .collect();
        Ok(DistanceTrace {
            model_a: result.models[0].name.clone(),
            model_b: result.models[1].name.clone(),
            epochs,
            weight_dist: weight,
            pred_dist: pred,
        })
    }

    pub fn final_weight(&self) -> f64 {
        *self.weight_dist.last().expect("trace is non-empty")
    }

    pub fn final_pred(&self) -> f64 {
        *self.pred_dist.last().expect("trace is non-empty")
    }
}
