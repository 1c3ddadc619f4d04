//! Finite-difference checks of every differentiable op and of two full
//! composites (MLP forward, dual-student loss).
//!
//! Each case builds a scalar loss from parameter leaves. Values that the
//! loss detaches are returned by the builder at the base point and fed back
//! as constants during differencing, so the numeric oracle differentiates
//! the same function the tape does.

use crate::error::Result;
use crate::models::{forward_graph, init_params, MlpSpec, Mode};
use crate::numcore::{Graph, RngState, Tensor, Var};
use crate::ssl::{
    classification_loss, consistency_loss, receives_term, stability_records, stabilization_loss, total_loss,
};

pub const OP_THRESHOLD: f64 = 1e-5;
pub const COMPOSITE_THRESHOLD: f64 = 1e-4;
const FD_STEP: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CaseKind {
    Op,
    Composite,
}

impl CaseKind {
    pub fn name(self) -> &'static str {
        match self {
            CaseKind::Op => "op",
            CaseKind::Composite => "composite",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CheckResult {
    pub name: String,
    pub kind: CaseKind,
    /// max |analytic − numeric| over max(‖analytic‖∞, ‖numeric‖∞).
    pub max_rel_error: f64,
    pub threshold: f64,
    pub entries: usize,
}

impl CheckResult {
    pub fn passed(&self) -> bool {
        self.max_rel_error < self.threshold
    }
}

#[derive(Clone, Debug, Default)]
pub struct GradcheckOptions {
    /// Corrupt the analytic gradient of this case (negative control).
    pub fault: Option<String>,
}

/// `(loss, values to hold fixed)`; `frozen` is `None` on the analytic pass.
type Build = Box<dyn Fn(&mut Graph, &[Var], Option<&[Tensor]>) -> Result<(Var, Vec<Tensor>)>>;

struct Case {
    name: &'static str,
    kind: CaseKind,
    inputs: Vec<Tensor>,
    build: Build,
}

fn normal(shape: &[usize], rng: &mut RngState) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.normal()).collect()).unwrap()
}

fn uniform(shape: &[usize], lo: f64, hi: f64, rng: &mut RngState) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| lo + (hi - lo) * rng.uniform()).collect()).unwrap()
}

/// Fixed random projection to a scalar.
fn project(g: &mut Graph, x: Var, seed: u64) -> Result<Var> {
    let mut rng = RngState::new(seed).fork(&[77]);
    let w: Vec<f64> = (0..g.value(x).numel()).map(|_| rng.normal()).collect();
    g.weighted_sum(x, &w)
}

fn frozen_or(g: &mut Graph, frozen: Option<&[Tensor]>, k: usize, live: Var) -> Var {
    match frozen {
        Some(f) => g.constant(f[k].clone()),
        None => live,
    }
}

fn op_case(
    name: &'static str,
    inputs: Vec<Tensor>,
    f: impl Fn(&mut Graph, &[Var]) -> Result<Var> + 'static,
) -> Case {
    Case {
        name,
        kind: CaseKind::Op,
        inputs,
        build: Box::new(move |g, v, _| {
            let out = f(g, v)?;
            let loss = if g.value(out).is_scalar() { out } else { project(g, out, 1)? };
            Ok((loss, Vec::new()))
        }),
    }
}

fn cases() -> Vec<Case> {
    let mut rng = RngState::new(2024);
    let r = &mut rng;
    let labels = vec![2, 0, 1, 1];
    let labels_ce = labels.clone();
    let labels_sce = labels.clone();
    let mut out = vec![
        op_case("matmul", vec![normal(&[4, 3], r), normal(&[3, 5], r)], |g, v| g.matmul(v[0], v[1])),
        op_case("add_row", vec![normal(&[4, 3], r), normal(&[3], r)], |g, v| g.add_row(v[0], v[1])),
        op_case("leaky_relu", vec![normal(&[4, 3], r)], |g, v| Ok(g.leaky_relu(v[0], 0.1))),
        op_case("dropout", vec![normal(&[4, 3], r)], |g, v| {
            Ok(g.dropout(v[0], 0.3, &mut RngState::new(5), true))
        }),
        op_case("gaussian_noise", vec![normal(&[4, 3], r)], |g, v| {
            Ok(g.gaussian_noise(v[0], 0.5, &mut RngState::new(6)))
        }),
        op_case("softmax", vec![normal(&[4, 3], r)], |g, v| g.softmax(v[0])),
        op_case("cross_entropy", vec![uniform(&[4, 3], 0.2, 1.0, r)], move |g, v| {
            g.cross_entropy(v[0], &labels_ce)
        }),
        op_case("softmax_cross_entropy", vec![normal(&[4, 3], r)], move |g, v| {
            let p = g.softmax(v[0])?;
            g.cross_entropy(p, &labels_sce)
        }),
        op_case("add", vec![normal(&[4, 3], r), normal(&[4, 3], r)], |g, v| g.add(v[0], v[1])),
        op_case("sub", vec![normal(&[4, 3], r), normal(&[4, 3], r)], |g, v| g.sub(v[0], v[1])),
        op_case("scale", vec![normal(&[4, 3], r)], |g, v| Ok(g.scale(v[0], -1.7))),
        op_case("row_sq_dist", vec![normal(&[4, 3], r), normal(&[4, 3], r)], |g, v| {
            g.row_sq_dist(v[0], v[1])
        }),
        op_case("weighted_sum", vec![normal(&[4, 3], r)], |g, v| {
            g.weighted_sum(v[0], &[0.5, -1.0, 2.0, 0.25, 1.5, -0.75, 0.1, 0.2, -0.3, 1.0, 0.0, 3.0])
        }),
        op_case("sum", vec![normal(&[4, 3], r)], |g, v| Ok(g.sum(v[0]))),
        op_case("select_rows", vec![normal(&[4, 3], r)], |g, v| g.select_rows(v[0], &[3, 1, 1])),
        op_case("mse", vec![normal(&[4, 3], r), normal(&[4, 3], r)], |g, v| g.mse(v[0], v[1])),
    ];
    out.push(Case {
        name: "detach",
        kind: CaseKind::Op,
        inputs: vec![normal(&[4, 3], r), normal(&[4, 3], r)],
        build: Box::new(|g, v, frozen| {
            let d = g.detach(v[1]);
            let d = frozen_or(g, frozen, 0, d);
            let keep = g.value(d).clone();
            let m = g.mse(v[0], d)?;
            let s = project(g, v[1], 2)?;
            Ok((g.add(m, s)?, vec![keep]))
        }),
    });
    out.push(mlp_case());
    out.push(dual_case());
    out
}

fn composite_spec(classes: usize) -> MlpSpec {
    MlpSpec {
        layer_widths: vec![3, 8, 6, classes],
        activation_slope: 0.1,
        dropout_p: 0.2,
        input_noise_std: 0.1,
    }
}

fn mlp_case() -> Case {
    let spec = composite_spec(3);
    let params = init_params(&spec, &mut RngState::new(11)).unwrap();
    let x = normal(&[5, 3], &mut RngState::new(12));
    Case {
        name: "mlp_forward",
        kind: CaseKind::Composite,
        inputs: params.tensors().to_vec(),
        build: Box::new(move |g, v, _| {
            let xv = g.constant(x.clone());
            let p = forward_graph(g, v, &spec, xv, Mode::Train, &mut RngState::new(13))?;
            let ce = g.cross_entropy(p, &[0, 1, 2, 1, 0])?;
            let pr = project(g, p, 3)?;
            Ok((g.add(ce, pr)?, Vec::new()))
        }),
    }
}

/// Two students, labeled and unlabeled rows, consistency and gated
/// stabilization with detached targets.
fn dual_case() -> Case {
    let spec = composite_spec(3);
    let pa = init_params(&spec, &mut RngState::new(21)).unwrap();
    let pb = init_params(&spec, &mut RngState::new(22)).unwrap();
    let n_a = pa.tensors().len();
    let mut rng = RngState::new(23);
    let x = normal(&[8, 3], &mut rng);
    let x_bar = normal(&[8, 3], &mut rng).values().iter().zip(x.values()).map(|(n, v)| v + 0.1 * n).collect();
    let x_bar = Tensor::new(vec![8, 3], x_bar).unwrap();
    let labels = vec![0, 1, 2, 0, 1, 2, 0, 1];
    let mask = vec![true, true, false, false, false, false, false, false];
    let unlabeled: Vec<usize> = (2..8).collect();
    let xi = 0.4;
    let mut inputs = pa.tensors().to_vec();
    inputs.extend(pb.tensors().iter().cloned());
    Case {
        name: "dual_student_loss",
        kind: CaseKind::Composite,
        inputs,
        build: Box::new(move |g, v, frozen| {
            let (va, vb) = v.split_at(n_a);
            let xv = g.constant(x.clone());
            let xbv = g.constant(x_bar.clone());
            let mut probs = Vec::new();
            for (k, vars) in [va, vb].into_iter().enumerate() {
                let k = k as u64;
                let px = forward_graph(g, vars, &spec, xv, Mode::Train, &mut RngState::new(30 + k))?;
                let pxb = forward_graph(g, vars, &spec, xbv, Mode::Train, &mut RngState::new(40 + k))?;
                probs.push((px, pxb));
            }
            let pu: Vec<Var> = probs
                .iter()
                .map(|&(px, _)| g.select_rows(px, &unlabeled))
                .collect::<Result<_>>()?;
            let pbu: Vec<Var> = probs
                .iter()
                .map(|&(_, pxb)| g.select_rows(pxb, &unlabeled))
                .collect::<Result<_>>()?;
            let held: Vec<Tensor> = match frozen {
                Some(f) => f.to_vec(),
                None => [pu[0], pu[1], probs[0].1, probs[1].1, pbu[0], pbu[1]]
                    .iter()
                    .map(|&v| g.value(v).clone())
                    .collect(),
            };
            // gating is decided at the base point
            let ra = stability_records(&held[0], &held[4], xi)?;
            let rb = stability_records(&held[1], &held[5], xi)?;
            let (sa, sb) = match frozen {
                None => stabilization_loss(g, &ra, &rb, pu[0], pu[1])?,
                Some(_) => {
                    let fa = g.constant(held[0].clone());
                    let fb = g.constant(held[1].clone());
                    let (sa, _) = stabilization_loss(g, &ra, &rb, pu[0], fb)?;
                    let (_, sb) = stabilization_loss(g, &ra, &rb, fa, pu[1])?;
                    (sa, sb)
                }
            };
            let mut totals = Vec::new();
            for (k, ((px, pxb), s)) in probs.iter().zip([sa, sb]).enumerate() {
                let target = frozen_or(g, frozen, 2 + k, *pxb);
                let cls = classification_loss(g, *px, &labels, &mask)?;
                let con = consistency_loss(g, *px, target)?;
                totals.push(total_loss(g, cls, con, s, 10.0, 3.0, 0.6)?.0);
            }
            Ok((g.add(totals[0], totals[1])?, held))
        }),
    }
}

fn evaluate(case: &Case, inputs: &[Tensor], frozen: &[Tensor]) -> Result<f64> {
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.param(t)).collect();
    let (loss, _) = (case.build)(&mut g, &vars, Some(frozen))?;
    Ok(g.value(loss).item())
}

fn run_case(case: &Case, opts: &GradcheckOptions) -> Result<CheckResult> {
    let mut g = Graph::new();
    let vars: Vec<Var> = case.inputs.iter().map(|t| g.param(t)).collect();
    let (loss, frozen) = (case.build)(&mut g, &vars, None)?;
    g.backward(loss)?;
    let mut analytic: Vec<f64> = vars
        .iter()
        .zip(&case.inputs)
        .flat_map(|(&v, t)| match g.grad(v) {
            Some(gr) => gr.to_vec(),
            None => vec![0.0; t.numel()],
        })
        .collect();
    if opts.fault.as_deref() == Some(case.name) {
        analytic[0] += 1e-3 * (1.0 + analytic[0].abs());
    }

    let mut numeric = Vec::with_capacity(analytic.len());
    let mut inputs = case.inputs.clone();
    for i in 0..inputs.len() {
        for k in 0..inputs[i].numel() {
            let orig = inputs[i].values()[k];
            inputs[i].values_mut()[k] = orig + FD_STEP;
            let up = evaluate(case, &inputs, &frozen)?;
            inputs[i].values_mut()[k] = orig - FD_STEP;
            let down = evaluate(case, &inputs, &frozen)?;
            inputs[i].values_mut()[k] = orig;
            numeric.push((up - down) / (2.0 * FD_STEP));
        }
    }

    let inf = |v: &[f64]| v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let scale = inf(&analytic).max(inf(&numeric)).max(1e-8);
    let diff = analytic
        .iter()
        .zip(&numeric)
        .fold(0.0f64, |m, (a, n)| m.max((a - n).abs()));
    Ok(CheckResult {
        name: case.name.to_string(),
        kind: case.kind,
        max_rel_error: diff / scale,
        threshold: match case.kind {
            CaseKind::Op => OP_THRESHOLD,
            CaseKind::Composite => COMPOSITE_THRESHOLD,
        },
        entries: analytic.len(),
    })
}

/// Names of all cases, in report order.
pub fn case_names() -> Vec<&'static str> {
    cases().iter().map(|c| c.name).collect()
}

pub fn run_suite(opts: &GradcheckOptions) -> Result<Vec<CheckResult>> {
    cases().iter().map(|c| run_case(c, opts)).collect()
}

/// How many unlabeled rows of the dual composite receive a stabilization
/// term, per student. Both must be non-zero for the composite to exercise
/// the gate.
pub fn dual_case_gate_counts() -> Result<(usize, usize)> {
    let case = dual_case();
    let mut g = Graph::new();
    let vars: Vec<Var> = case.inputs.iter().map(|t| g.param(t)).collect();
    let (_, held) = (case.build)(&mut g, &vars, None)?;
    let ra = stability_records(&held[0], &held[4], 0.4)?;
    let rb = stability_records(&held[1], &held[5], 0.4)?;
    let a = ra.iter().zip(&rb).filter(|(i, j)| receives_term(i, j)).count();
    let b = ra.iter().zip(&rb).filter(|(i, j)| receives_term(j, i)).count();
    Ok((a, b))
}
