//! Synthetic datasets, label splits, augmentation and batch sampling.

use std::f64::consts::PI;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numcore::{RngState, Tensor};

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub features: Tensor,
    pub labels: Vec<usize>,
    pub labeled_mask: Vec<bool>,
    pub class_count: usize,
}

impl Dataset {
    pub fn new(features: Tensor, labels: Vec<usize>, labeled_mask: Vec<bool>, class_count: usize) -> Result<Self> {
        if features.shape().len() != 2 {
            return Err(Error::shape("features must be a matrix"));
        }
        let m = features.rows();
        if labels.len() != m || labeled_mask.len() != m {
            return Err(Error::input(format!(
                "{m} rows but {} labels and {} mask entries",
                labels.len(),
                labeled_mask.len()
            )));
        }
        if class_count < 2 {
            return Err(Error::input("need at least two classes"));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= class_count) {
            return Err(Error::input(format!("label {bad} out of range for {class_count} classes")));
        }
        Ok(Dataset {
            features,
            labels,
            labeled_mask,
            class_count,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    pub fn labeled_indices(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.labeled_mask[i]).collect()
    }

    pub fn unlabeled_indices(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| !self.labeled_mask[i]).collect()
    }

    pub fn labeled_count(&self) -> usize {
        self.labeled_mask.iter().filter(|&&m| m).count()
    }

    /// Feature rows gathered into a new matrix.
    pub fn gather(&self, rows: &[usize]) -> Tensor {
        let vals: Vec<f64> = rows
            .iter()
            .flat_map(|&r| self.features.row(r).iter().copied())
            .collect();
        Tensor::new(vec![rows.len(), self.dim()], vals).expect("gather of a non-empty row list")
    }

    /// Rows of `self` followed by rows of `other`.
    pub fn concat(&self, other: &Dataset) -> Result<Dataset> {
        if self.dim() != other.dim() || self.class_count != other.class_count {
            return Err(Error::input("datasets differ in dimension or class count"));
        }
        let mut vals = self.features.values().to_vec();
        vals.extend_from_slice(other.features.values());
        let m = self.len() + other.len();
        Dataset::new(
            Tensor::new(vec![m, self.dim()], vals)?,
            [self.labels.as_slice(), &other.labels].concat(),
            [self.labeled_mask.as_slice(), &other.labeled_mask].concat(),
            self.class_count,
        )
    }

    pub fn with_all_labeled(mut self, labeled: bool) -> Self {
        self.labeled_mask.iter_mut().for_each(|m| *m = labeled);
        self
    }

    pub fn class_counts(&self, only_labeled: bool) -> Vec<usize> {
        let mut c = vec![0; self.class_count];
        for (i, &l) in self.labels.iter().enumerate() {
            if !only_labeled || self.labeled_mask[i] {
                c[l] += 1;
            }
        }
        c
    }
}

/// Interleaving half circles: class 0 on the upper unit arc, class 1 on the
/// lower arc shifted by `(1, 0.5)`. Class sizes differ by at most one.
pub fn two_moons(m: usize, noise: f64, rng: &mut RngState) -> Result<Dataset> {
    if m < 2 {
        return Err(Error::input("two_moons needs m >= 2"));
    }
    let mut rows = Vec::with_capacity(m);
    for i in 0..m {
        let class = i % 2;
        let t = PI * rng.uniform();
        let (x, y) = if class == 0 {
            (t.cos(), t.sin())
        } else {
            (1.0 - t.cos(), 0.5 - t.sin())
        };
        rows.push((x + noise * rng.normal(), y + noise * rng.normal(), class));
    }
    rng.shuffle(&mut rows);
    let vals = rows.iter().flat_map(|&(x, y, _)| [x, y]).collect();
    let labels = rows.iter().map(|r| r.2).collect();
    Dataset::new(Tensor::new(vec![m, 2], vals)?, labels, vec![false; m], 2)
}

/// Unit-variance isotropic clusters centred on a circle of radius
/// `separation`, one per class.
pub fn gaussian_blobs(m: usize, n_classes: usize, separation: f64, rng: &mut RngState) -> Result<Dataset> {
    if n_classes < 2 {
        return Err(Error::input("gaussian_blobs needs at least two classes"));
    }
    if m < n_classes {
        return Err(Error::input("fewer samples than classes"));
    }
    let mut rows = Vec::with_capacity(m);
    for i in 0..m {
        let class = i % n_classes;
        let angle = 2.0 * PI * class as f64 / n_classes as f64;
        let (cx, cy) = (separation * angle.cos(), separation * angle.sin());
        rows.push((cx + rng.normal(), cy + rng.normal(), class));
    }
    rng.shuffle(&mut rows);
    let vals = rows.iter().flat_map(|&(x, y, _)| [x, y]).collect();
    let labels = rows.iter().map(|r| r.2).collect();
    Dataset::new(Tensor::new(vec![m, 2], vals)?, labels, vec![false; m], n_classes)
}

/// Marks exactly `k_labels` rows as labeled, balanced across classes (per-class
/// counts differ by at most one unless a class runs out of samples). Every
/// row stays in the dataset.
pub fn make_ssl_split(ds: &Dataset, k_labels: usize, rng: &mut RngState) -> Result<Dataset> {
    if k_labels > ds.len() {
        return Err(Error::input(format!(
            "asked for {k_labels} labels from {} samples",
            ds.len()
        )));
    }
    let n = ds.class_count;
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); n];
    for (i, &l) in ds.labels.iter().enumerate() {
        by_class[l].push(i);
    }
    for idx in &mut by_class {
        rng.shuffle(idx);
    }
    // classes receiving the remainder are picked at random
    let mut order: Vec<usize> = (0..n).collect();
    rng.shuffle(&mut order);
    let mut quota = vec![k_labels / n; n];
    for &c in order.iter().take(k_labels % n) {
        quota[c] += 1;
    }
    // spill quota from classes that are too small, round-robin
    let mut spill: usize = 0;
    for c in 0..n {
        if quota[c] > by_class[c].len() {
            spill += quota[c] - by_class[c].len();
            quota[c] = by_class[c].len();
        }
    }
    while spill > 0 {
        let before = spill;
        for &c in &order {
            if spill > 0 && quota[c] < by_class[c].len() {
                quota[c] += 1;
                spill -= 1;
            }
        }
        debug_assert!(spill < before);
    }
    let mut out = ds.clone();
    out.labeled_mask = vec![false; ds.len()];
    for c in 0..n {
        for &i in &by_class[c][..quota[c]] {
            out.labeled_mask[i] = true;
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AugmentPolicy {
    #[serde(default)]
    pub noise_std: f64,
    /// Per-row uniform translation in `[-jitter, jitter]` on every axis.
    #[serde(default)]
    pub jitter: f64,
}

impl AugmentPolicy {
    pub fn noise(noise_std: f64) -> Self {
        AugmentPolicy {
            noise_std,
            jitter: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.noise_std >= 0.0) || !(self.jitter >= 0.0) {
            return Err(Error::config("augmentation amplitudes must be >= 0"));
        }
        Ok(())
    }
}

/// Additive gaussian noise plus optional per-row translation.
pub fn augment(x: &Tensor, policy: &AugmentPolicy, rng: &mut RngState) -> Tensor {
    let mut out = x.clone();
    let d = x.cols();
    if policy.jitter > 0.0 {
        for row in out.values_mut().chunks_mut(d) {
            for v in row.iter_mut() {
                *v += policy.jitter * (2.0 * rng.uniform() - 1.0);
            }
        }
    }
    if policy.noise_std > 0.0 {
        for v in out.values_mut() {
            *v += policy.noise_std * rng.normal();
        }
    }
    out
}

/// Affine map about the feature centroid: rotate by `rotation`, scale, then
/// translate. Labels are kept; the result is entirely unlabeled.
pub fn domain_shift(ds: &Dataset, rotation: f64, scale: f64, translate: [f64; 2]) -> Result<Dataset> {
    if ds.dim() != 2 {
        return Err(Error::input(format!(
            "affine domain shift needs 2-D features, got {}",
            ds.dim()
        )));
    }
    let m = ds.len() as f64;
    let (mut cx, mut cy) = (0.0, 0.0);
    for r in 0..ds.len() {
        cx += ds.features.row(r)[0];
        cy += ds.features.row(r)[1];
    }
    let (cx, cy) = (cx / m, cy / m);
    let (s, c) = rotation.sin_cos();
    let vals = (0..ds.len())
        .flat_map(|r| {
            let p = ds.features.row(r);
            let (x, y) = (p[0] - cx, p[1] - cy);
            [
                scale * (c * x - s * y) + cx + translate[0],
                scale * (s * x + c * y) + cy + translate[1],
            ]
        })
        .collect();
    Dataset::new(
        Tensor::new(vec![ds.len(), 2], vals)?,
        ds.labels.clone(),
        vec![false; ds.len()],
        ds.class_count,
    )
}

#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    /// Dataset row of each batch row; labeled rows come first.
    pub indices: Vec<usize>,
    pub x: Tensor,
    pub x_bar: Tensor,
    pub labels: Vec<usize>,
    pub labeled_mask: Vec<bool>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn unlabeled_rows(&self) -> Vec<usize> {
        (0..self.len()).filter(|&r| !self.labeled_mask[r]).collect()
    }
}

const STREAM_SHUFFLE: u64 = 0x5348;
const STREAM_LABELED: u64 = 0x4c42;
const STREAM_AUGMENT: u64 = 0x4147;

/// Epoch-based batch sampler.
///
/// An epoch is one pass over the unlabeled pool, `batch_size −
/// labeled_per_batch` rows at a time. Each batch is topped up with
/// `labeled_per_batch` labeled rows drawn from successive shuffles of the
/// labeled pool, so a small pool repeats across batches. Without unlabeled
/// rows (or slots for them) an epoch is one pass over the labeled pool.
#[derive(Clone, Debug)]
pub struct BatchSampler {
    batch_size: usize,
    labeled_per_batch: usize,
    policy: AugmentPolicy,
    rng: RngState,
    labeled: Vec<usize>,
    unlabeled: Vec<usize>,
    queue: Vec<usize>,
    cycles: u64,
    step: u64,
}

impl BatchSampler {
    pub fn new(
        ds: &Dataset,
        batch_size: usize,
        labeled_per_batch: usize,
        policy: AugmentPolicy,
        rng: RngState,
    ) -> Result<Self> {
        let labeled = ds.labeled_indices();
        let unlabeled = ds.unlabeled_indices();
        if batch_size == 0 || labeled_per_batch > batch_size {
            return Err(Error::input(format!(
                "cannot compose batches of {batch_size} with {labeled_per_batch} labeled rows"
            )));
        }
        if labeled_per_batch > 0 && labeled.is_empty() {
            return Err(Error::input(format!(
                "batches need {labeled_per_batch} labeled rows but the dataset has none"
            )));
        }
        let unlabeled_slots = batch_size - labeled_per_batch;
        if labeled_per_batch == 0 && (unlabeled.is_empty() || unlabeled_slots == 0) {
            return Err(Error::input("batches would be empty"));
        }
        policy.validate()?;
        Ok(BatchSampler {
            batch_size,
            labeled_per_batch,
            policy,
            rng,
            labeled,
            unlabeled,
            queue: Vec::new(),
            cycles: 0,
            step: 0,
        })
    }

    fn uses_unlabeled(&self) -> bool {
        !self.unlabeled.is_empty() && self.batch_size > self.labeled_per_batch
    }

    pub fn steps_per_epoch(&self) -> usize {
        if self.uses_unlabeled() {
            self.unlabeled.len().div_ceil(self.batch_size - self.labeled_per_batch)
        } else {
            self.labeled.len().div_ceil(self.labeled_per_batch)
        }
    }

    fn next_labeled(&mut self) -> usize {
        if self.queue.is_empty() {
            let mut perm = self.labeled.clone();
            self.rng.fork(&[STREAM_LABELED, self.cycles]).shuffle(&mut perm);
            perm.reverse();
            self.queue = perm;
            self.cycles += 1;
        }
        self.queue.pop().expect("labeled pool is non-empty")
    }

    /// All batches of epoch `epoch` (0-based), with augmented views.
    pub fn epoch(&mut self, ds: &Dataset, epoch: usize) -> Vec<Batch> {
        let chunks: Vec<Vec<usize>> = if self.uses_unlabeled() {
            let mut order = self.unlabeled.clone();
            self.rng.fork(&[STREAM_SHUFFLE, epoch as u64]).shuffle(&mut order);
            order
                .chunks(self.batch_size - self.labeled_per_batch)
                .map(<[usize]>::to_vec)
                .collect()
        } else {
            vec![Vec::new(); self.steps_per_epoch()]
        };
        chunks
            .into_iter()
            .map(|unl| {
                let mut indices: Vec<usize> = (0..self.labeled_per_batch).map(|_| self.next_labeled()).collect();
                let n_lab = indices.len();
                indices.extend(unl);
                let base = ds.gather(&indices);
                let step = self.step;
                self.step += 1;
                let x = augment(&base, &self.policy, &mut self.rng.fork(&[STREAM_AUGMENT, step, 0]));
                let x_bar = augment(&base, &self.policy, &mut self.rng.fork(&[STREAM_AUGMENT, step, 1]));
                Batch {
                    labels: indices.iter().map(|&i| ds.labels[i]).collect(),
                    labeled_mask: (0..indices.len()).map(|r| r < n_lab).collect(),
                    indices,
                    x,
                    x_bar,
                }
            })
            .collect()
    }
}

fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

/// Writes `f0,...,f{d-1},label,labeled` rows; floats carry 17 significant
/// digits.
pub fn write_csv(ds: &Dataset, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    let mut header: Vec<String> = (0..ds.dim()).map(|i| format!("f{i}")).collect();
    header.push("label".into());
    header.push("labeled".into());
    w.write_record(&header).map_err(|e| csv_err(path, e))?;
    for r in 0..ds.len() {
        let mut rec: Vec<String> = ds.features.row(r).iter().map(|&v| fmt_f64(v)).collect();
        rec.push(ds.labels[r].to_string());
        rec.push(u8::from(ds.labeled_mask[r]).to_string());
        w.write_record(&rec).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    if e.is_io_error() {
        match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(path, io),
            _ => unreachable!(),
        }
    } else {
        Error::input(format!("{}: {e}", path.display()))
    }
}

/// Reads the format produced by [`write_csv`]. The class count is one more
/// than the largest label unless given.
pub fn read_csv(path: &Path, class_count: Option<usize>) -> Result<Dataset> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    let header = r.headers().map_err(|e| csv_err(path, e))?.clone();
    let cols = header.len();
    if cols < 3 || &header[cols - 2] != "label" || &header[cols - 1] != "labeled" {
        return Err(Error::input(format!(
            "{}: header must be f0,...,label,labeled",
            path.display()
        )));
    }
    let d = cols - 2;
    let (mut vals, mut labels, mut mask) = (Vec::new(), Vec::new(), Vec::new());
    for (line, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        let bad = |what: &str| Error::input(format!("{}: row {}: bad {what}", path.display(), line + 2));
        for f in rec.iter().take(d) {
            vals.push(f.trim().parse::<f64>().map_err(|_| bad("feature"))?);
        }
        labels.push(rec[d].trim().parse::<usize>().map_err(|_| bad("label"))?);
        mask.push(match rec[d + 1].trim() {
            "1" | "true" => true,
            "0" | "false" => false,
            _ => return Err(bad("labeled flag")),
        });
    }
    if labels.is_empty() {
        return Err(Error::input(format!("{}: no rows", path.display())));
    }
    let n = class_count.unwrap_or_else(|| labels.iter().max().unwrap() + 1).max(2);
    Dataset::new(Tensor::new(vec![labels.len(), d], vals)?, labels, mask, n)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_moons_balance_and_determinism() {
        let a = two_moons(100, 0.1, &mut RngState::new(1)).unwrap();
        assert_eq!(a.class_counts(false), vec![50, 50]);
        let b = two_moons(100, 0.1, &mut RngState::new(1)).unwrap();
        assert_eq!(a, b);
        assert!(two_moons(1, 0.1, &mut RngState::new(1)).is_err());
    }

    #[test]
    fn two_moons_noiseless_points_lie_on_arcs() {
        let ds = two_moons(200, 0.0, &mut RngState::new(2)).unwrap();
        for r in 0..ds.len() {
            let p = ds.features.row(r);
            let (cx, cy, upper) = if ds.labels[r] == 0 { (0.0, 0.0, true) } else { (1.0, 0.5, false) };
            let radius = ((p[0] - cx).powi(2) + (p[1] - cy).powi(2)).sqrt();
            assert!((radius - 1.0).abs() < 1e-12);
            assert!(if upper { p[1] >= cy - 1e-12 } else { p[1] <= cy + 1e-12 });
        }
    }

    #[test]
    fn blobs_balance() {
        let ds = gaussian_blobs(90, 3, 5.0, &mut RngState::new(3)).unwrap();
        assert_eq!(ds.class_counts(false), vec![30, 30, 30]);
        assert_eq!(ds, gaussian_blobs(90, 3, 5.0, &mut RngState::new(3)).unwrap());
    }

    #[test]
    fn split_examples() {
        let ds = two_moons(50, 0.1, &mut RngState::new(4)).unwrap();
        let all = make_ssl_split(&ds, 50, &mut RngState::new(0)).unwrap();
        assert_eq!(all.labeled_count(), 50);
        let four = make_ssl_split(&ds, 4, &mut RngState::new(0)).unwrap();
        assert_eq!(four.class_counts(true), vec![2, 2]);
        assert_eq!(four.len(), 50);
        let none = make_ssl_split(&ds, 0, &mut RngState::new(0)).unwrap();
        assert_eq!(none.labeled_count(), 0);
        assert!(matches!(make_ssl_split(&ds, 51, &mut RngState::new(0)), Err(Error::Input(_))));
    }

    #[test]
    fn split_handles_small_classes() {
        let feats = Tensor::new(vec![5, 1], vec![0.0; 5]).unwrap();
        let ds = Dataset::new(feats, vec![0, 1, 1, 1, 1], vec![false; 5], 2).unwrap();
        let s = make_ssl_split(&ds, 4, &mut RngState::new(1)).unwrap();
        assert_eq!(s.class_counts(true), vec![1, 3]);
    }

    #[test]
    fn augment_cases() {
        let x = Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        let id = augment(&x, &AugmentPolicy::noise(0.0), &mut RngState::new(1));
        assert_eq!(id, x);
        let root = RngState::new(1);
        let p = AugmentPolicy::noise(0.1);
        let a = augment(&x, &p, &mut root.fork(&[1]));
        let b = augment(&x, &p, &mut root.fork(&[2]));
        assert_ne!(a, b);

        let n = 100_000;
        let z = Tensor::zeros(vec![n, 1]);
        let out = augment(&z, &AugmentPolicy { noise_std: 0.15, jitter: 0.05 }, &mut RngState::new(7));
        let mean = out.values().iter().sum::<f64>() / n as f64;
        // per-entry std is sqrt(0.15² + 0.05²/3)
        let sd = (0.15f64.powi(2) + 0.05f64.powi(2) / 3.0).sqrt();
        assert!(mean.abs() < 4.0 * sd / (n as f64).sqrt(), "mean {mean}");
    }

    #[test]
    fn domain_shift_cases() {
        let ds = make_ssl_split(&two_moons(40, 0.05, &mut RngState::new(5)).unwrap(), 4, &mut RngState::new(1)).unwrap();
        let same = domain_shift(&ds, 0.0, 1.0, [0.0, 0.0]).unwrap();
        for (a, b) in same.features.values().iter().zip(ds.features.values()) {
            assert!((a - b).abs() < 1e-12);
        }
        assert_eq!(same.labeled_count(), 0);
        assert_eq!(same.labels, ds.labels);

        // a half turn negates every point about the centroid
        let flipped = domain_shift(&ds, PI, 1.0, [0.0, 0.0]).unwrap();
        let m = ds.len() as f64;
        let c: Vec<f64> = (0..2)
            .map(|k| (0..ds.len()).map(|r| ds.features.row(r)[k]).sum::<f64>() / m)
            .collect();
        for r in 0..ds.len() {
            for k in 0..2 {
                let expected = 2.0 * c[k] - ds.features.row(r)[k];
                assert!((flipped.features.row(r)[k] - expected).abs() < 1e-12);
            }
        }

        let shifted = domain_shift(&ds, 0.6, 1.2, [0.3, -0.1]).unwrap();
        let back = domain_shift(&shifted, -0.6, 1.0 / 1.2, [-0.3, 0.1]).unwrap();
        for (a, b) in back.features.values().iter().zip(ds.features.values()) {
            assert!((a - b).abs() < 1e-12);
        }

        let three = Dataset::new(Tensor::zeros(vec![2, 3]), vec![0, 1], vec![false; 2], 2).unwrap();
        assert!(matches!(domain_shift(&three, 0.1, 1.0, [0.0, 0.0]), Err(Error::Input(_))));
    }

    fn pool(labeled: usize, unlabeled: usize) -> Dataset {
        let m = labeled + unlabeled;
        let feats = Tensor::new(vec![m, 1], (0..m).map(|i| i as f64).collect()).unwrap();
        let mask = (0..m).map(|i| i < labeled).collect();
        Dataset::new(feats, (0..m).map(|i| i % 2).collect(), mask, 2).unwrap()
    }

    #[test]
    fn small_labeled_pool_repeats() {
        let ds = pool(4, 50);
        let mut s = BatchSampler::new(&ds, 10, 5, AugmentPolicy::noise(0.0), RngState::new(1)).unwrap();
        assert_eq!(s.steps_per_epoch(), 10);
        let batches = s.epoch(&ds, 0);
        assert_eq!(batches.len(), 10);
        for b in &batches {
            let lab = b.labeled_mask.iter().filter(|&&m| m).count();
            assert_eq!(lab, 5);
            assert!(b.indices[..5].iter().all(|&i| i < 4));
        }
    }

    #[test]
    fn fully_labeled_supervised_batches() {
        let ds = pool(20, 0);
        let mut s = BatchSampler::new(&ds, 8, 8, AugmentPolicy::noise(0.0), RngState::new(1)).unwrap();
        assert_eq!(s.steps_per_epoch(), 3);
        let batches = s.epoch(&ds, 0);
        assert!(batches.iter().all(|b| b.len() == 8 && b.labeled_mask.iter().all(|&m| m)));
    }

    #[test]
    fn impossible_compositions() {
        let ds = pool(0, 10);
        assert!(BatchSampler::new(&ds, 10, 5, AugmentPolicy::noise(0.0), RngState::new(1)).is_err());
        assert!(BatchSampler::new(&ds, 4, 5, AugmentPolicy::noise(0.0), RngState::new(1)).is_err());
        let ds = pool(5, 0);
        assert!(BatchSampler::new(&ds, 4, 0, AugmentPolicy::noise(0.0), RngState::new(1)).is_err());
    }

    #[test]
    fn sampler_is_deterministic() {
        let ds = pool(6, 40);
        let p = AugmentPolicy::noise(0.2);
        let mut a = BatchSampler::new(&ds, 12, 4, p.clone(), RngState::new(9)).unwrap();
        let mut b = BatchSampler::new(&ds, 12, 4, p, RngState::new(9)).unwrap();
        for e in 0..3 {
            assert_eq!(a.epoch(&ds, e), b.epoch(&ds, e));
        }
    }

    #[test]
    fn csv_round_trip() {
        let ds = make_ssl_split(&two_moons(30, 0.1, &mut RngState::new(5)).unwrap(), 6, &mut RngState::new(2)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ds.csv");
        write_csv(&ds, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("f0,f1,label,labeled\n"));
        assert_eq!(read_csv(&path, None).unwrap(), ds);
    }
}
