//! Training loops for Dual Student, its variants and the baselines.
//!
//! All methods share one step routine. Randomness is keyed by role so that
//! equivalent configurations consume identical draws:
//!
//! * initial weights: `[INIT, slot]`
//! * model-internal noise/dropout: `[FORWARD, slot, step, view]`
//! * batch composition and augmentation: `[DATA]`
//! * student pairing (multiple students): `[PAIRING, step]`
//!
//! A student's slot is its index plus `TrainConfig::slot`, which lets a
//! single-model run reproduce any student of a multi-model run.

use serde::{Deserialize, Serialize};

use crate::data::{AugmentPolicy, Batch, BatchSampler, Dataset};
use crate::error::{Error, Result};
use crate::models::{ema_update, forward_graph, init_params, predict, weight_distance, MlpSpec, Mode, ModelParams};
use crate::numcore::{cosine_lr, sq_dist, Graph, RngState, SgdState, Tensor, Var};
use crate::ssl::{
    classification_loss, consistency_loss, plain_consistency_pair, predicted_label, rampup, stability_records,
    stabilization_loss, total_loss, LossBreakdown,
};

const STREAM_INIT: u64 = 1;
const STREAM_FORWARD: u64 = 2;
const STREAM_DATA: u64 = 3;
const STREAM_PAIRING: u64 = 4;
const TEACHER_SLOT: u64 = 1 << 32;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Supervised,
    Pi,
    MeanTeacher,
    CsBaseline,
    DualStudent,
    MultipleStudent,
    ImbalancedStudent,
    DomainAdapt,
}

impl Method {
    pub const ALL: [Method; 8] = [
        Method::Supervised,
        Method::Pi,
        Method::MeanTeacher,
        Method::CsBaseline,
        Method::DualStudent,
        Method::MultipleStudent,
        Method::ImbalancedStudent,
        Method::DomainAdapt,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Supervised => "supervised",
            Method::Pi => "pi",
            Method::MeanTeacher => "mean_teacher",
            Method::CsBaseline => "cs_baseline",
            Method::DualStudent => "dual_student",
            Method::MultipleStudent => "multiple_student",
            Method::ImbalancedStudent => "imbalanced_student",
            Method::DomainAdapt => "domain_adapt",
        }
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| {
                let names: Vec<_> = Method::ALL.iter().map(|m| m.name()).collect();
                Error::config(format!("unknown method {s:?}; expected one of {}", names.join(", ")))
            })
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub method: Method,
    pub lambda1: f64,
    pub lambda2: f64,
    pub xi: f64,
    /// EMA coefficient for the mean teacher.
    pub alpha: f64,
    pub gamma0: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub labeled_per_batch: usize,
    pub ramp_epochs: usize,
    /// Also ramp the λ₁ consistency term.
    pub ramp_consistency: bool,
    pub weight_decay: f64,
    pub momentum: f64,
    pub seed: u64,
    pub slot: usize,
    pub spec: MlpSpec,
    pub strong_spec: Option<MlpSpec>,
    pub n_students: usize,
    pub augment: AugmentPolicy,
    /// Training row whose true-class probability is logged every epoch.
    pub track_sample: Option<usize>,
    /// Method used inside `domain_adapt`.
    pub adapt_with: Method,
    pub run_id: Option<String>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            method: Method::DualStudent,
            lambda1: 10.0,
            lambda2: 1.0,
            xi: 0.8,
            alpha: 0.99,
            gamma0: 0.01,
            epochs: 200,
            batch_size: 32,
            labeled_per_batch: 8,
            ramp_epochs: 5,
            ramp_consistency: false,
            weight_decay: 1e-4,
            momentum: 0.9,
            seed: 0,
            slot: 0,
            spec: MlpSpec::new(vec![2, 64, 64, 2]),
            strong_spec: None,
            n_students: 2,
            augment: AugmentPolicy::noise(0.2),
            track_sample: None,
            adapt_with: Method::DualStudent,
            run_id: None,
        }
    }
}

impl TrainConfig {
    pub fn run_id(&self) -> String {
        self.run_id
            .clone()
            .unwrap_or_else(|| format!("{}-seed{}", self.method, self.seed))
    }

    pub fn validate(&self) -> Result<()> {
        self.spec.validate()?;
        self.augment.validate()?;
        let bad = |msg: String| Err(Error::config(msg));
        if !(0.0..1.0).contains(&self.xi) {
            return bad(format!("xi = {} must lie in [0, 1)", self.xi));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return bad(format!("alpha = {} must lie in [0, 1]", self.alpha));
        }
        for (name, v) in [
            ("lambda1", self.lambda1),
            ("lambda2", self.lambda2),
            ("gamma0", self.gamma0),
            ("weight_decay", self.weight_decay),
            ("momentum", self.momentum),
        ] {
            if !(v >= 0.0) || !v.is_finite() {
                return bad(format!("{name} = {v} must be finite and >= 0"));
            }
        }
        if self.epochs == 0 {
            return bad("epochs must be >= 1".into());
        }
        if self.batch_size == 0 || self.labeled_per_batch > self.batch_size {
            return bad(format!(
                "labeled_per_batch = {} must not exceed batch_size = {}",
                self.labeled_per_batch, self.batch_size
            ));
        }
        match self.method {
            Method::MultipleStudent if self.n_students < 2 || self.n_students % 2 != 0 => {
                return bad(format!("n_students = {} must be even and >= 2", self.n_students));
            }
            Method::ImbalancedStudent => {
                let Some(strong) = &self.strong_spec else {
                    return bad("imbalanced_student needs strong_spec".into());
                };
                strong.validate()?;
                if strong.input_dim() != self.spec.input_dim() || strong.classes() != self.spec.classes() {
                    return bad("strong_spec must share input and output dims with spec".into());
                }
            }
            Method::DomainAdapt if self.adapt_with == Method::DomainAdapt => {
                return bad("adapt_with cannot be domain_adapt".into());
            }
            _ => {}
        }
        Ok(())
    }

    fn check_data(&self, train: &Dataset, test: &Dataset) -> Result<()> {
        for (what, ds) in [("train", train), ("test", test)] {
            if ds.dim() != self.spec.input_dim() {
                return Err(Error::config(format!(
                    "{what} data has {} features, model expects {}",
                    ds.dim(),
                    self.spec.input_dim()
                )));
            }
            if ds.class_count != self.spec.classes() {
                return Err(Error::config(format!(
                    "{what} data has {} classes, model predicts {}",
                    ds.class_count,
                    self.spec.classes()
                )));
            }
        }
        if let Some(i) = self.track_sample {
            if i >= train.len() {
                return Err(Error::input(format!(
                    "track_sample {i} out of range for {} training rows",
                    train.len()
                )));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricsRow {
    pub run_id: String,
    pub method: String,
    pub seed: u64,
    pub epoch: usize,
    pub metric: String,
    pub value: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainedModel {
    pub name: String,
    pub spec: MlpSpec,
    pub params: ModelParams,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunResult {
    pub run_id: String,
    pub method: Method,
    pub seed: u64,
    pub metrics: Vec<MetricsRow>,
    pub models: Vec<TrainedModel>,
    /// Per epoch, the fraction of (unlabeled sample, student) pairs that
    /// were stable. Empty for methods without a stability test.
    pub stable_ratio_trace: Vec<f64>,
    pub steps_per_epoch: usize,
    /// Per student, how many samples received a stabilization term.
    pub sta_terms: Vec<usize>,
}

impl RunResult {
    /// Per-epoch values of `metric`, in epoch order.
    pub fn series(&self, metric: &str) -> Vec<f64> {
        self.metrics
            .iter()
            .filter(|r| r.metric == metric)
            .map(|r| r.value)
            .collect()
    }

    pub fn final_value(&self, metric: &str) -> Option<f64> {
        self.series(metric).last().copied()
    }

    /// Final headline test accuracy (`test_acc`).
    pub fn final_accuracy(&self) -> f64 {
        self.final_value("test_acc").unwrap_or(f64::NAN)
    }

    pub fn model(&self, name: &str) -> Option<&TrainedModel> {
        self.models.iter().find(|m| m.name == name)
    }
}

/// Called after every optimizer step with `(epoch, step, models)`.
pub type StepHook<'a> = dyn FnMut(usize, usize, &[(&str, &ModelParams)]) + 'a;

struct Member {
    name: String,
    slot: u64,
    spec: MlpSpec,
    params: ModelParams,
    opt: SgdState,
}

impl Member {
    fn new(slot: u64, spec: &MlpSpec, cfg: &TrainConfig, root: &RngState) -> Result<Self> {
        let params = init_params(spec, &mut root.fork(&[STREAM_INIT, slot]))?;
        let opt = SgdState::new(params.tensors(), cfg.momentum, cfg.weight_decay);
        Ok(Member {
            name: format!("s{slot}"),
            slot,
            spec: spec.clone(),
            params,
            opt,
        })
    }
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Coupling {
    /// Single model, classification only.
    Supervised,
    /// Single model, classification plus internal consistency.
    Consistency,
    /// Pairs exchange knowledge through the stable-sample gate.
    Stabilize,
    /// Pairs exchange knowledge through ungated MSE.
    Plain,
}

struct StepCtx<'a> {
    cfg: &'a TrainConfig,
    root: &'a RngState,
    epoch: usize,
    step: usize,
    lr: f64,
    ramp: f64,
}

impl StepCtx<'_> {
    fn lambda1(&self) -> f64 {
        if self.cfg.ramp_consistency {
            self.cfg.lambda1 * self.ramp
        } else {
            self.cfg.lambda1
        }
    }

    fn forward_rng(&self, slot: u64, view: u64) -> RngState {
        self.root.fork(&[STREAM_FORWARD, slot, self.step as u64, view])
    }
}

#[derive(Clone, Copy, Default)]
struct StepStats {
    loss: LossBreakdown,
    stable: usize,
    unlabeled: usize,
    sta_terms: usize,
}

fn numeric_guard(ctx: &StepCtx, who: &str, b: &LossBreakdown) -> Result<()> {
    if b.total.is_finite() {
        Ok(())
    } else {
        Err(Error::Numeric {
            epoch: ctx.epoch,
            step: ctx.step + 1,
            what: format!("{who} loss = {}", b.total),
        })
    }
}

fn params_guard(ctx: &StepCtx, m: &Member) -> Result<()> {
    if m.params.is_finite() {
        Ok(())
    } else {
        Err(Error::Numeric {
            epoch: ctx.epoch,
            step: ctx.step + 1,
            what: format!("{} weights", m.name),
        })
    }
}

/// One optimizer step for the members listed in `idx` (one model, or a pair).
fn group_step(
    members: &mut [Member],
    idx: &[usize],
    batch: &Batch,
    ctx: &StepCtx,
    coupling: Coupling,
) -> Result<Vec<StepStats>> {
    let mut g = Graph::new();
    let x = g.constant(batch.x.clone());
    let x_bar = g.constant(batch.x_bar.clone());
    let two_views = coupling != Coupling::Supervised;

    let mut vars = Vec::new();
    let mut px = Vec::new();
    let mut pxb = Vec::new();
    for &k in idx {
        let m = &members[k];
        let v = m.params.register(&mut g);
        let p = forward_graph(&mut g, &v, &m.spec, x, Mode::Train, &mut ctx.forward_rng(m.slot, 0))?;
        px.push(p);
        if two_views {
            let pb = forward_graph(&mut g, &v, &m.spec, x_bar, Mode::Train, &mut ctx.forward_rng(m.slot, 1))?;
            pxb.push(pb);
        }
        vars.push(v);
    }

    let unlabeled = batch.unlabeled_rows();
    let mut stats = vec![StepStats::default(); idx.len()];
    let mut sta = vec![None; idx.len()];
    let pair = idx.len() == 2 && matches!(coupling, Coupling::Stabilize | Coupling::Plain);
    if pair && !unlabeled.is_empty() {
        let pu: Vec<Var> = px
            .iter()
            .map(|&p| g.select_rows(p, &unlabeled))
            .collect::<Result<_>>()?;
        let (s0, s1) = if coupling == Coupling::Stabilize {
            let recs = (0..2)
                .map(|k| {
                    let pb = g.select_rows(pxb[k], &unlabeled)?;
                    let r = stability_records(g.value(pu[k]), g.value(pb), ctx.cfg.xi)?;
                    stats[k].stable = r.iter().filter(|r| r.stable).count();
                    stats[k].unlabeled = r.len();
                    Ok(r)
                })
                .collect::<Result<Vec<_>>>()?;
            let (m0, m1) = crate::ssl::stabilization_masks(&recs[0], &recs[1])?;
            stats[0].sta_terms = m0.iter().filter(|&&m| m).count();
            stats[1].sta_terms = m1.iter().filter(|&&m| m).count();
            stabilization_loss(&mut g, &recs[0], &recs[1], pu[0], pu[1])?
        } else {
            stats[0].sta_terms = unlabeled.len();
            stats[1].sta_terms = unlabeled.len();
            plain_consistency_pair(&mut g, pu[0], pu[1])?
        };
        sta[0] = Some(s0);
        sta[1] = Some(s1);
    }

    let mut totals = Vec::new();
    for (k, &mi) in idx.iter().enumerate() {
        let cls = classification_loss(&mut g, px[k], &batch.labels, &batch.labeled_mask)?;
        let con = if two_views {
            consistency_loss(&mut g, px[k], pxb[k])?
        } else {
            g.constant(Tensor::scalar(0.0))
        };
        let s = match sta[k] {
            Some(s) => s,
            None => g.constant(Tensor::scalar(0.0)),
        };
        let (t, bd) = total_loss(&mut g, cls, con, s, ctx.lambda1(), ctx.cfg.lambda2, ctx.ramp)?;
        numeric_guard(ctx, &members[mi].name, &bd)?;
        stats[k].loss = bd;
        totals.push(t);
    }
    let mut loss = totals[0];
    for &t in &totals[1..] {
        loss = g.add(loss, t)?;
    }
    g.backward(loss)?;
    for (k, &mi) in idx.iter().enumerate() {
        let m = &mut members[mi];
        m.params.pull_grads(&g, &vars[k]);
        m.opt.step(m.params.tensors_mut(), ctx.lr)?;
        params_guard(ctx, m)?;
    }
    Ok(stats)
}

/// Student step against an EMA teacher's detached prediction on `x̄`.
fn mean_teacher_step(student: &mut Member, teacher: &ModelParams, batch: &Batch, ctx: &StepCtx) -> Result<StepStats> {
    let mut g = Graph::new();
    let x = g.constant(batch.x.clone());
    let x_bar = g.constant(batch.x_bar.clone());
    let v = student.params.register(&mut g);
    let px = forward_graph(&mut g, &v, &student.spec, x, Mode::Train, &mut ctx.forward_rng(student.slot, 0))?;
    let tv: Vec<Var> = teacher.tensors().iter().map(|t| g.constant(t.clone())).collect();
    let pt = forward_graph(
        &mut g,
        &tv,
        &student.spec,
        x_bar,
        Mode::Train,
        &mut ctx.forward_rng(TEACHER_SLOT + student.slot, 1),
    )?;
    let cls = classification_loss(&mut g, px, &batch.labels, &batch.labeled_mask)?;
    let con = consistency_loss(&mut g, px, pt)?;
    let zero = g.constant(Tensor::scalar(0.0));
    let (t, bd) = total_loss(&mut g, cls, con, zero, ctx.lambda1(), ctx.cfg.lambda2, ctx.ramp)?;
    numeric_guard(ctx, &student.name, &bd)?;
    g.backward(t)?;
    student.params.pull_grads(&g, &v);
    student.opt.step(student.params.tensors_mut(), ctx.lr)?;
    params_guard(ctx, student)?;
    Ok(StepStats {
        loss: bd,
        ..Default::default()
    })
}

fn accuracy(probs: &Tensor, labels: &[usize]) -> f64 {
    let hits = (0..probs.rows())
        .filter(|&r| predicted_label(probs.row(r)) == labels[r])
        .count();
    hits as f64 / labels.len() as f64
}

fn mean_row_distance(a: &Tensor, b: &Tensor) -> f64 {
    (0..a.rows()).map(|r| sq_dist(a.row(r), b.row(r)).sqrt()).sum::<f64>() / a.rows() as f64
}

/// Per-model running sums over an epoch.
#[derive(Clone, Default)]
struct EpochAccum {
    loss: LossBreakdown,
    steps: usize,
    stable: usize,
    unlabeled: usize,
}

impl EpochAccum {
    fn add(&mut self, s: &StepStats) {
        self.loss.cls += s.loss.cls;
        self.loss.con += s.loss.con;
        self.loss.sta += s.loss.sta;
        self.loss.total += s.loss.total;
        self.steps += 1;
        self.stable += s.stable;
        self.unlabeled += s.unlabeled;
    }
}

struct Recorder<'a> {
    cfg: &'a TrainConfig,
    run_id: String,
    rows: Vec<MetricsRow>,
}

impl Recorder<'_> {
    fn push(&mut self, epoch: usize, metric: impl Into<String>, value: f64) {
        self.rows.push(MetricsRow {
            run_id: self.run_id.clone(),
            method: self.cfg.method.name().to_string(),
            seed: self.cfg.seed,
            epoch,
            metric: metric.into(),
            value,
        });
    }
}

enum Structure {
    Single(Coupling),
    MeanTeacher,
    Pairs(Coupling),
}

fn headline(cfg: &TrainConfig, accs: &[(String, f64)]) -> f64 {
    match cfg.method {
        Method::MeanTeacher => accs.iter().find(|(n, _)| n == "teacher").map_or(f64::NAN, |a| a.1),
        Method::ImbalancedStudent => accs[0].1,
        _ => {
            let students: Vec<f64> = accs.iter().filter(|(n, _)| n != "teacher").map(|a| a.1).collect();
            students.iter().sum::<f64>() / students.len() as f64
        }
    }
}

fn run(
    cfg: &TrainConfig,
    train: &Dataset,
    test: &Dataset,
    structure: Structure,
    mut hook: Option<&mut StepHook<'_>>,
) -> Result<RunResult> {
    cfg.validate()?;
    cfg.check_data(train, test)?;
    let root = RngState::new(cfg.seed);

    let base = cfg.slot as u64;
    let mut members = match &structure {
        Structure::Single(_) | Structure::MeanTeacher => vec![Member::new(base, &cfg.spec, cfg, &root)?],
        Structure::Pairs(_) => {
            let n = if cfg.method == Method::MultipleStudent { cfg.n_students } else { 2 };
            (0..n as u64)
                .map(|k| {
                    let spec = match (&cfg.strong_spec, cfg.method, k) {
                        (Some(s), Method::ImbalancedStudent, 1) => s,
                        _ => &cfg.spec,
                    };
                    Member::new(base + k, spec, cfg, &root)
                })
                .collect::<Result<_>>()?
        }
    };
    let mut teacher = matches!(structure, Structure::MeanTeacher).then(|| members[0].params.clone());

    let mut sampler = BatchSampler::new(
        train,
        cfg.batch_size,
        cfg.labeled_per_batch,
        cfg.augment.clone(),
        root.fork(&[STREAM_DATA]),
    )?;
    let steps_per_epoch = sampler.steps_per_epoch();
    let total_steps = cfg.epochs * steps_per_epoch;

    let mut rec = Recorder {
        cfg,
        run_id: cfg.run_id(),
        rows: Vec::new(),
    };
    let mut stable_trace = Vec::new();
    let mut sta_terms = vec![0usize; members.len()];
    let track_x = cfg.track_sample.map(|i| train.gather(&[i]));
    let mut step = 0usize;

    for epoch in 0..cfg.epochs {
        let ramp = rampup(epoch, cfg.ramp_epochs);
        let mut acc = vec![EpochAccum::default(); members.len()];
        let mut lr = 0.0;
        for batch in sampler.epoch(train, epoch) {
            lr = cosine_lr(step + 1, total_steps, cfg.gamma0);
            let ctx = StepCtx {
                cfg,
                root: &root,
                epoch: epoch + 1,
                step,
                lr,
                ramp,
            };
            match &structure {
                Structure::Single(c) => {
                    let s = group_step(&mut members, &[0], &batch, &ctx, *c)?;
                    acc[0].add(&s[0]);
                }
                Structure::MeanTeacher => {
                    let t = teacher.as_mut().expect("mean teacher run");
                    let s = mean_teacher_step(&mut members[0], t, &batch, &ctx)?;
                    ema_update(t, &members[0].params, cfg.alpha)?;
                    acc[0].add(&s);
                }
                Structure::Pairs(c) => {
                    let mut order: Vec<usize> = (0..members.len()).collect();
                    if members.len() > 2 {
                        root.fork(&[STREAM_PAIRING, step as u64]).shuffle(&mut order);
                    }
                    for pair in order.chunks(2) {
                        let idx = [pair[0].min(pair[1]), pair[0].max(pair[1])];
                        let s = group_step(&mut members, &idx, &batch, &ctx, *c)?;
                        for (k, &mi) in idx.iter().enumerate() {
                            acc[mi].add(&s[k]);
                            sta_terms[mi] += s[k].sta_terms;
                        }
                    }
                }
            }
            step += 1;
            if let Some(h) = hook.as_deref_mut() {
                let mut view: Vec<(&str, &ModelParams)> =
                    members.iter().map(|m| (m.name.as_str(), &m.params)).collect();
                if let Some(t) = &teacher {
                    view.push(("teacher", t));
                }
                h(epoch + 1, step, &view);
            }
        }

        // end-of-epoch evaluation
        let e = epoch + 1;
        let mut evals: Vec<(String, &MlpSpec, &ModelParams)> =
            members.iter().map(|m| (m.name.clone(), &m.spec, &m.params)).collect();
        if let Some(t) = &teacher {
            evals.push(("teacher".into(), &members[0].spec, t));
        }
        let probs = evals
            .iter()
            .map(|(_, s, p)| predict(p, s, &test.features))
            .collect::<Result<Vec<_>>>()?;
        let accs: Vec<(String, f64)> = evals
            .iter()
            .zip(&probs)
            .map(|((n, _, _), p)| (n.clone(), accuracy(p, &test.labels)))
            .collect();
        rec.push(e, "test_acc", headline(cfg, &accs));
        for (n, a) in &accs {
            rec.push(e, format!("test_acc_{n}"), *a);
        }
        for (m, a) in members.iter().zip(&acc) {
            let d = a.steps.max(1) as f64;
            rec.push(e, format!("loss_total_{}", m.name), a.loss.total / d);
            rec.push(e, format!("loss_cls_{}", m.name), a.loss.cls / d);
            rec.push(e, format!("loss_con_{}", m.name), a.loss.con / d);
            if matches!(structure, Structure::Pairs(_)) {
                rec.push(e, format!("loss_sta_{}", m.name), a.loss.sta / d);
            }
            if matches!(structure, Structure::Pairs(Coupling::Stabilize)) {
                rec.push(
                    e,
                    format!("stable_ratio_{}", m.name),
                    a.stable as f64 / a.unlabeled.max(1) as f64,
                );
            }
        }
        if matches!(structure, Structure::Pairs(Coupling::Stabilize)) {
            let (s, u) = acc.iter().fold((0, 0), |(s, u), a| (s + a.stable, u + a.unlabeled));
            let ratio = s as f64 / u.max(1) as f64;
            stable_trace.push(ratio);
            rec.push(e, "stable_ratio", ratio);
        }
        // coupling between the first two models (student/teacher or s0/s1)
        if evals.len() >= 2 {
            let (a, b) = (&evals[0], &evals[1]);
            if a.2.same_shapes(b.2) {
                rec.push(e, "weight_dist", weight_distance(a.2, b.2)?);
            }
            rec.push(e, "pred_dist", mean_row_distance(&probs[0], &probs[1]));
        }
        if let (Some(i), Some(x)) = (cfg.track_sample, &track_x) {
            for (n, s, p) in &evals {
                let pr = predict(p, s, x)?;
                rec.push(e, format!("track_p_true_{n}"), pr.row(0)[train.labels[i]]);
            }
        }
        rec.push(e, "lr", lr);
        rec.push(e, "ramp", ramp);
    }

    let mut models: Vec<TrainedModel> = members
        .into_iter()
        .map(|m| TrainedModel {
            name: m.name,
            spec: m.spec,
            params: m.params,
        })
        .collect();
    if let Some(t) = teacher {
        let spec = models[0].spec.clone();
        models.push(TrainedModel {
            name: "teacher".into(),
            spec,
            params: t,
        });
    }
    Ok(RunResult {
        run_id: rec.run_id,
        method: cfg.method,
        seed: cfg.seed,
        metrics: rec.rows,
        models,
        stable_ratio_trace: stable_trace,
        steps_per_epoch,
        sta_terms,
    })
}

fn expect_method(cfg: &TrainConfig, allowed: &[Method]) -> Result<()> {
    if allowed.contains(&cfg.method) {
        Ok(())
    } else {
        Err(Error::config(format!(
            "config method is {}, expected {}",
            cfg.method,
            allowed.iter().map(|m| m.name()).collect::<Vec<_>>().join(" or ")
        )))
    }
}

pub fn train_supervised(cfg: &TrainConfig, train: &Dataset, test: &Dataset) -> Result<RunResult> {
    expect_method(cfg, &[Method::Supervised])?;
    run(cfg, train, test, Structure::Single(Coupling::Supervised), None)
}

pub fn train_pi(cfg: &TrainConfig, train: &Dataset, test: &Dataset) -> Result<RunResult> {
    expect_method(cfg, &[Method::Pi])?;
    run(cfg, train, test, Structure::Single(Coupling::Consistency), None)
}

pub fn train_mean_teacher(cfg: &TrainConfig, train: &Dataset, test: &Dataset) -> Result<RunResult> {
    expect_method(cfg, &[Method::MeanTeacher])?;
    run(cfg, train, test, Structure::MeanTeacher, None)
}

pub fn train_cs_baseline(cfg: &TrainConfig, train: &Dataset, test: &Dataset) -> Result<RunResult> {
    expect_method(cfg, &[Method::CsBaseline])?;
    run(cfg, train, test, Structure::Pairs(Coupling::Plain), None)
}

pub fn train_dual_student(cfg: &TrainConfig, train: &Dataset, test: &Dataset) -> Result<RunResult> {
    expect_method(cfg, &[Method::DualStudent])?;
    run(cfg, train, test, Structure::Pairs(Coupling::Stabilize), None)
}

pub fn train_multiple_student(cfg: &TrainConfig, train: &Dataset, test: &Dataset) -> Result<RunResult> {
    expect_method(cfg, &[Method::MultipleStudent])?;
    run(cfg, train, test, Structure::Pairs(Coupling::Stabilize), None)
}

pub fn train_imbalanced_student(cfg: &TrainConfig, train: &Dataset, test: &Dataset) -> Result<RunResult> {
    expect_method(cfg, &[Method::ImbalancedStudent])?;
    run(cfg, train, test, Structure::Pairs(Coupling::Stabilize), None)
}

fn structure_for(method: Method) -> Result<Structure> {
    Ok(match method {
        Method::Supervised => Structure::Single(Coupling::Supervised),
        Method::Pi => Structure::Single(Coupling::Consistency),
        Method::MeanTeacher => Structure::MeanTeacher,
        Method::CsBaseline => Structure::Pairs(Coupling::Plain),
        Method::DualStudent | Method::MultipleStudent | Method::ImbalancedStudent => {
            Structure::Pairs(Coupling::Stabilize)
        }
        Method::DomainAdapt => return Err(Error::config("domain_adapt needs source and target data")),
    })
}

/// Trains with whatever `cfg.method` names (except `domain_adapt`).
pub fn train(cfg: &TrainConfig, train: &Dataset, test: &Dataset) -> Result<RunResult> {
    run(cfg, train, test, structure_for(cfg.method)?, None)
}

/// [`train`] with a callback after every optimizer step.
pub fn train_with_hook(
    cfg: &TrainConfig,
    train: &Dataset,
    test: &Dataset,
    hook: &mut StepHook<'_>,
) -> Result<RunResult> {
    run(cfg, train, test, structure_for(cfg.method)?, Some(hook))
}

/// Labeled source rows plus unlabeled target rows, evaluated on
/// `target_test`, using `cfg.adapt_with` (or `cfg.method` when that is not
/// `domain_adapt`).
pub fn run_domain_adaptation(
    cfg: &TrainConfig,
    source: &Dataset,
    target: Option<&Dataset>,
    target_test: &Dataset,
) -> Result<RunResult> {
    let inner = if cfg.method == Method::DomainAdapt {
        cfg.adapt_with
    } else {
        cfg.method
    };
    let source = source.clone().with_all_labeled(true);
    let combined = match target {
        Some(t) => {
            if t.labeled_count() > 0 {
                return Err(Error::config(format!(
                    "target domain has {} labeled rows; it must be unlabeled",
                    t.labeled_count()
                )));
            }
            source.concat(t)?
        }
        None => source,
    };
    let mut inner_cfg = cfg.clone();
    inner_cfg.method = inner;
    inner_cfg.run_id = Some(cfg.run_id());
    let mut result = train(&inner_cfg, &combined, target_test)?;
    if cfg.method == Method::DomainAdapt {
        result.method = Method::DomainAdapt;
        for r in &mut result.metrics {
            r.method = Method::DomainAdapt.name().into();
        }
    }
    Ok(result)
}
