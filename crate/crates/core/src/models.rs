//! Multi-layer perceptron classifiers and EMA shadow copies.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numcore::{Graph, RngState, Tensor, Var};

/// Architecture recipe: `[input, hidden..., classes]` plus the perturbation
/// knobs applied in training mode.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MlpSpec {
    pub layer_widths: Vec<usize>,
    #[serde(default = "default_slope")]
    pub activation_slope: f64,
    #[serde(default)]
    pub dropout_p: f64,
    #[serde(default)]
    pub input_noise_std: f64,
}

fn default_slope() -> f64 {
    0.1
}

impl MlpSpec {
    pub fn new(layer_widths: Vec<usize>) -> Self {
        MlpSpec {
            layer_widths,
            activation_slope: default_slope(),
            dropout_p: 0.0,
            input_noise_std: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let w = &self.layer_widths;
        if w.len() < 3 {
            return Err(Error::config(format!(
                "layer_widths {w:?} needs an input, at least one hidden layer and an output"
            )));
        }
        if w.contains(&0) {
            return Err(Error::config(format!("layer_widths {w:?} contains a zero width")));
        }
        if *w.last().unwrap() < 2 {
            return Err(Error::config("need at least two classes"));
        }
        if !(0.0..1.0).contains(&self.activation_slope) {
            return Err(Error::config("activation_slope must be in [0, 1)"));
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return Err(Error::config("dropout_p must be in [0, 1)"));
        }
        if !(self.input_noise_std >= 0.0) {
            return Err(Error::config("input_noise_std must be >= 0"));
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.layer_widths[0]
    }

    pub fn classes(&self) -> usize {
        *self.layer_widths.last().unwrap()
    }

    pub fn layers(&self) -> usize {
        self.layer_widths.len() - 1
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Weights and biases, stored flat as `[w0, b0, w1, b1, ...]` with
/// `w_l: [in × out]` and `b_l: [out]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    tensors: Vec<Tensor>,
}

impl ModelParams {
    pub fn from_tensors(spec: &MlpSpec, tensors: Vec<Tensor>) -> Result<Self> {
        let expected = shapes(spec);
        if tensors.len() != expected.len()
            || tensors.iter().zip(&expected).any(|(t, s)| t.shape() != s.as_slice())
        {
            return Err(Error::shape("parameter shapes do not match the spec"));
        }
        Ok(ModelParams { tensors })
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn weight(&self, layer: usize) -> &Tensor {
        &self.tensors[2 * layer]
    }

    pub fn bias(&self, layer: usize) -> &Tensor {
        &self.tensors[2 * layer + 1]
    }

    pub fn numel(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    pub fn flat(&self) -> impl Iterator<Item = f64> + '_ {
        self.tensors.iter().flat_map(|t| t.values().iter().copied())
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.iter().all(Tensor::is_finite)
    }

    pub fn same_shapes(&self, other: &ModelParams) -> bool {
        self.tensors.len() == other.tensors.len()
            && self
                .tensors
                .iter()
                .zip(&other.tensors)
                .all(|(a, b)| a.shape() == b.shape())
    }

    /// Registers every tensor as a gradient leaf on `g`.
    pub fn register(&self, g: &mut Graph) -> Vec<Var> {
        self.tensors.iter().map(|t| g.param(t)).collect()
    }

    /// Copies gradients accumulated on `g` back into the tensors' grad buffers.
    pub fn pull_grads(&mut self, g: &Graph, vars: &[Var]) {
        for (t, &v) in self.tensors.iter_mut().zip(vars) {
            match g.grad(v) {
                Some(d) => t.accumulate_grad(d),
                None => t.accumulate_grad(&vec![0.0; t.numel()]),
            }
        }
    }
}

fn shapes(spec: &MlpSpec) -> Vec<Vec<usize>> {
    spec.layer_widths
        .windows(2)
        .flat_map(|w| [vec![w[0], w[1]], vec![w[1]]])
        .collect()
}

/// He-style initialization: weights `N(0, 2/fan_in)`, zero biases.
pub fn init_params(spec: &MlpSpec, rng: &mut RngState) -> Result<ModelParams> {
    spec.validate()?;
    let tensors = shapes(spec)
        .into_iter()
        .map(|shape| {
            if shape.len() == 2 {
                let std = (2.0 / shape[0] as f64).sqrt();
                let n = shape[0] * shape[1];
                let vals = (0..n).map(|_| std * rng.normal()).collect();
                Tensor::new(shape, vals)
            } else {
                Ok(Tensor::zeros(shape))
            }
        })
        .collect::<Result<_>>()?;
    Ok(ModelParams { tensors })
}

/// Records the forward pass on `g` and returns the probability rows.
///
/// Train mode adds input noise and applies dropout after each hidden
/// activation, both drawn from `rng` in that order.
pub fn forward_graph(
    g: &mut Graph,
    params: &[Var],
    spec: &MlpSpec,
    x: Var,
    mode: Mode,
    rng: &mut RngState,
) -> Result<Var> {
    let xt = g.value(x);
    if xt.shape().len() != 2 || xt.cols() != spec.input_dim() {
        return Err(Error::shape(format!(
            "input shape {:?} does not match input dim {}",
            xt.shape(),
            spec.input_dim()
        )));
    }
    let training = mode == Mode::Train;
    let mut h = if training {
        g.gaussian_noise(x, spec.input_noise_std, rng)
    } else {
        x
    };
    let layers = spec.layers();
    for l in 0..layers {
        let z = g.matmul(h, params[2 * l])?;
        h = g.add_row(z, params[2 * l + 1])?;
        if l + 1 < layers {
            h = g.leaky_relu(h, spec.activation_slope);
            h = g.dropout(h, spec.dropout_p, rng, training);
        }
    }
    g.softmax(h)
}

/// Value-only forward pass.
pub fn forward(
    params: &ModelParams,
    spec: &MlpSpec,
    x: &Tensor,
    mode: Mode,
    rng: &mut RngState,
) -> Result<Tensor> {
    let mut g = Graph::new();
    let vars: Vec<Var> = params
        .tensors
        .iter()
        .map(|t| g.constant(t.clone()))
        .collect();
    let xv = g.constant(x.clone());
    let out = forward_graph(&mut g, &vars, spec, xv, mode, rng)?;
    Ok(g.value(out).clone())
}

/// Eval-mode forward; needs no randomness.
pub fn predict(params: &ModelParams, spec: &MlpSpec, x: &Tensor) -> Result<Tensor> {
    forward(params, spec, x, Mode::Eval, &mut RngState::new(0))
}

/// `teacher ← α·teacher + (1−α)·student`, entrywise.
pub fn ema_update(teacher: &mut ModelParams, student: &ModelParams, alpha: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::input(format!("alpha {alpha} outside [0, 1]")));
    }
    if !teacher.same_shapes(student) {
        return Err(Error::shape("teacher and student shapes differ"));
    }
    for (t, s) in teacher.tensors.iter_mut().zip(&student.tensors) {
        t.values_mut()
            .iter_mut()
            .zip(s.values())
            .for_each(|(t, s)| *t = alpha * *t + (1.0 - alpha) * s);
    }
    Ok(())
}

/// Euclidean norm of the concatenated parameter difference.
pub fn weight_distance(a: &ModelParams, b: &ModelParams) -> Result<f64> {
    if !a.same_shapes(b) {
        return Err(Error::shape("parameter shapes differ"));
    }
    Ok(a.flat()
        .zip(b.flat())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt())
}

const CHECKPOINT_MAGIC: &str = "dualstudent-checkpoint 1";

fn hex(v: f64) -> String {
    format!("{:016x}", v.to_bits())
}

fn unhex(s: &str, line: usize) -> Result<f64> {
    u64::from_str_radix(s, 16)
        .map(f64::from_bits)
        .map_err(|_| Error::input(format!("checkpoint line {line}: bad float {s:?}")))
}

/// Text checkpoint: a header, the spec, then one line per tensor giving its
/// shape followed by the IEEE-754 bit patterns in hex. Round-trips exactly.
pub fn checkpoint_to_string(spec: &MlpSpec, params: &ModelParams) -> String {
    let mut out = String::new();
    writeln!(out, "{CHECKPOINT_MAGIC}").unwrap();
    let widths: Vec<String> = spec.layer_widths.iter().map(usize::to_string).collect();
    writeln!(out, "widths {}", widths.join(" ")).unwrap();
    writeln!(out, "slope {}", hex(spec.activation_slope)).unwrap();
    writeln!(out, "dropout {}", hex(spec.dropout_p)).unwrap();
    writeln!(out, "input_noise {}", hex(spec.input_noise_std)).unwrap();
    for t in &params.tensors {
        let dims: Vec<String> = t.shape().iter().map(usize::to_string).collect();
        let vals: Vec<String> = t.values().iter().map(|&v| hex(v)).collect();
        writeln!(out, "tensor {} : {}", dims.join(" "), vals.join(" ")).unwrap();
    }
    out
}

pub fn checkpoint_from_str(text: &str) -> Result<(MlpSpec, ModelParams)> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
    let mut next = |key: &str| -> Result<(usize, String)> {
        let (n, line) = lines
            .next()
            .ok_or_else(|| Error::input(format!("checkpoint truncated before {key}")))?;
        let rest = line
            .strip_prefix(key)
            .ok_or_else(|| Error::input(format!("checkpoint line {n}: expected {key:?}")))?;
        Ok((n, rest.trim().to_string()))
    };
    next(CHECKPOINT_MAGIC)?;
    let (n, widths) = next("widths")?;
    let layer_widths = widths
        .split_whitespace()
        .map(|w| w.parse::<usize>())
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|_| Error::input(format!("checkpoint line {n}: bad widths")))?;
    let (n, s) = next("slope")?;
    let activation_slope = unhex(&s, n)?;
    let (n, s) = next("dropout")?;
    let dropout_p = unhex(&s, n)?;
    let (n, s) = next("input_noise")?;
    let input_noise_std = unhex(&s, n)?;
    let spec = MlpSpec {
        layer_widths,
        activation_slope,
        dropout_p,
        input_noise_std,
    };
    spec.validate()?;

    let mut tensors = Vec::new();
    for _ in 0..2 * spec.layers() {
        let (n, body) = next("tensor")?;
        let (dims, vals) = body
            .split_once(':')
            .ok_or_else(|| Error::input(format!("checkpoint line {n}: missing ':'")))?;
        let shape = dims
            .split_whitespace()
            .map(|d| d.parse::<usize>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|_| Error::input(format!("checkpoint line {n}: bad shape")))?;
        let values = vals
            .split_whitespace()
            .map(|v| unhex(v, n))
            .collect::<Result<Vec<_>>>()?;
        tensors.push(Tensor::new(shape, values)?);
    }
    let params = ModelParams::from_tensors(&spec, tensors)?;
    Ok((spec, params))
}

pub fn save_checkpoint(path: &Path, spec: &MlpSpec, params: &ModelParams) -> Result<()> {
    std::fs::write(path, checkpoint_to_string(spec, params)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<(MlpSpec, ModelParams)> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    checkpoint_from_str(&text)
}
