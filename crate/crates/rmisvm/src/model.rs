//! Linear instance scoring, noisy-OR bag aggregation, and model-file I/O.
//!
//! An instance's positive probability is a logistic of its score,
//! `p = 1 / (1 + exp(-w.x))`, and a bag is aggregated with a noisy-OR,
//! `P = 1 - prod_j (1 - p_j)`: one confident instance is enough to make the
//! bag positive. The product is accumulated in log space so long bags and
//! large scores cannot underflow.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::data::{Bag, BagLabel, Instance};
use crate::error::Error;

/// Numerically stable logistic function; exact at 0 and monotone, with no
/// overflow anywhere in f64 range.
pub fn sigmoid(s: f64) -> f64 {
    if s >= 0.0 {
        1.0 / (1.0 + (-s).exp())
    } else {
        let e = s.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + exp(s))`, the stable form of `-ln(1 - sigmoid(s))`.
pub(crate) fn softplus(s: f64) -> f64 {
    s.max(0.0) + (-s.abs()).exp().ln_1p()
}

/// Dense weight vector of a linear instance model. Entries are finite.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelWeights {
    w: Vec<f64>,
}

impl ModelWeights {
    pub fn zeros(dim: usize) -> ModelWeights {
        ModelWeights { w: vec![0.0; dim] }
    }

    pub fn new(w: Vec<f64>) -> Result<ModelWeights, Error> {
        if w.is_empty() {
            return Err(Error::InvalidConfig("model has no weights".into()));
        }
        if let Some(v) = w.iter().find(|v| !v.is_finite()) {
            return Err(Error::InvalidConfig(format!("non-finite weight {v}")));
        }
        Ok(ModelWeights { w })
    }

    pub fn dim(&self) -> usize {
        self.w.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.w
    }

    pub(crate) fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.w
    }

    pub fn norm(&self) -> f64 {
        self.w.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Dot product with a sparse instance; errors if the instance uses an
    /// index outside this model's dimension.
    pub fn score(&self, x: &Instance) -> Result<f64, Error> {
        self.check_instance(x)?;
        Ok(score_raw(&self.w, x))
    }

    pub(crate) fn check_instance(&self, x: &Instance) -> Result<(), Error> {
        let max = x.max_index() as usize;
        if max >= self.w.len() {
            return Err(Error::DimMismatch {
                expected: self.w.len(),
                found: max + 1,
            });
        }
        Ok(())
    }

    pub(crate) fn check_bag(&self, bag: &Bag) -> Result<(), Error> {
        let max = bag.max_index() as usize;
        if max >= self.w.len() {
            return Err(Error::DimMismatch {
                expected: self.w.len(),
                found: max + 1,
            });
        }
        Ok(())
    }

    /// Serializes as a header line `#rmisvm-model dim=<d>` followed by one
    /// weight per line with 17 significant digits (round-trip exact for f64).
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        writeln!(out, "#rmisvm-model dim={}", self.w.len()).unwrap();
        for v in &self.w {
            writeln!(out, "{v:.16e}").unwrap();
        }
        out
    }

    pub fn parse(text: &str) -> Result<ModelWeights, Error> {
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| Error::parse(1, "empty model file"))?;
        let dim: usize = header
            .strip_prefix("#rmisvm-model dim=")
            .and_then(|d| d.trim().parse().ok())
            .ok_or_else(|| {
                Error::parse(1, "expected header `#rmisvm-model dim=<d>`")
            })?;
        let mut w = Vec::with_capacity(dim);
        for (i, raw) in lines.enumerate() {
            let line = raw.trim();
            if line.is_empty() {
                continue;
            }
            let v: f64 = line
                .parse()
                .map_err(|_| Error::parse(i + 2, format!("invalid weight {line:?}")))?;
            if !v.is_finite() {
                return Err(Error::parse(i + 2, format!("non-finite weight {v}")));
            }
            w.push(v);
        }
        if w.len() != dim {
            return Err(Error::DimMismatch {
                expected: dim,
                found: w.len(),
            });
        }
        ModelWeights::new(w)
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<ModelWeights, Error> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        ModelWeights::parse(&text)
    }

    pub fn write_to_path(&self, path: impl AsRef<Path>) -> Result<(), Error> {
        let path = path.as_ref();
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }
}

/// Dot product against a validated instance (indices known to be in range).
pub(crate) fn score_raw(w: &[f64], x: &Instance) -> f64 {
    let mut s = 0.0;
    for &(i, v) in x.features() {
        debug_assert!((i as usize) < w.len());
        s += w[i as usize] * v;
    }
    s
}

/// Probability that instance `x` is positive under the logistic model.
pub fn instance_prob(w: &ModelWeights, x: &Instance) -> Result<f64, Error> {
    Ok(sigmoid(w.score(x)?))
}

/// Noisy-OR probability that the bag is positive:
/// `P = 1 - prod_j (1 - p_j)`, accumulated as `exp(sum_j ln(1 - p_j))` with
/// `ln(1 - sigmoid(s)) = -softplus(s)` so saturated instances stay exact.
pub fn bag_prob(w: &ModelWeights, bag: &Bag) -> Result<f64, Error> {
    w.check_bag(bag)?;
    Ok(bag_prob_raw(w.as_slice(), bag))
}

pub(crate) fn bag_prob_raw(w: &[f64], bag: &Bag) -> f64 {
    1.0 - log_complement_raw(w, bag).exp()
}

/// `sum_j ln(1 - p_j)` for the bag; always <= 0.
pub(crate) fn log_complement_raw(w: &[f64], bag: &Bag) -> f64 {
    let mut log_comp = 0.0;
    for x in bag.instances() {
        log_comp -= softplus(score_raw(w, x));
    }
    log_comp
}

/// Instance decision at threshold `p0` (inclusive: `p == p0` is positive).
pub fn predict_instance(p: f64, p0: f64) -> bool {
    p >= p0
}

/// Bag decision at the fixed 0.5 threshold (inclusive).
pub fn predict_bag(p_bag: f64) -> BagLabel {
    if p_bag >= 0.5 {
        BagLabel::Positive
    } else {
        BagLabel::Negative
    }
}

/// Positions of the `k` highest-scoring instances in the bag, in descending
/// score order; ties prefer the smaller position. Returns all positions when
/// `k` exceeds the bag size.
pub fn select_top_instances(w: &ModelWeights, bag: &Bag, k: usize) -> Result<Vec<usize>, Error> {
    w.check_bag(bag)?;
    let mut scored: Vec<(usize, f64)> = bag
        .instances()
        .iter()
        .enumerate()
        .map(|(i, x)| (i, score_raw(w.as_slice(), x)))
        .collect();
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    scored.truncate(k);
    Ok(scored.into_iter().map(|(i, _)| i).collect())
}

/// Learning-rate schedule of the projected-subgradient solver.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum StepSize {
    /// `eta_t = 1 / (lambda * t)`.
    #[default]
    InverseT,
    /// `eta_t = 1 / (lambda * (t + 1))`; a slightly damped variant.
    InverseTPlusOne,
}

impl StepSize {
    pub fn eta(self, lambda: f64, t: usize) -> f64 {
        match self {
            StepSize::InverseT => 1.0 / (lambda * t as f64),
            StepSize::InverseTPlusOne => 1.0 / (lambda * (t as f64 + 1.0)),
        }
    }
}

/// Hyperparameters of the relaxed-MIL objective and its solver.
///
/// `lambda` scales the L2 regularizer (and fixes the projection radius
/// `1/sqrt(lambda)`), `beta` weights the bag-level loss against the
/// instance-level hinge, `m0` is the hinge margin, `p0` the instance
/// pseudo-label threshold, `iters` the exact iteration count, and `seed`
/// drives bag sampling.
#[derive(Debug, Clone, PartialEq)]
pub struct HyperParams {
    pub lambda: f64,
    pub beta: f64,
    pub m0: f64,
    pub p0: f64,
    pub iters: usize,
    pub seed: u64,
    pub step_size: StepSize,
}

impl Default for HyperParams {
    /// Defaults tuned for the synthetic generator's default geometry.
    fn default() -> HyperParams {
        HyperParams {
            lambda: 0.01,
            beta: 5.0,
            m0: 1.0,
            p0: 0.5,
            iters: 2000,
            seed: 0,
            step_size: StepSize::InverseT,
        }
    }
}

impl HyperParams {
    /// Preset for the musk benchmark datasets.
    pub fn musk() -> HyperParams {
        HyperParams {
            lambda: 0.05,
            beta: 1.5,
            m0: 0.5,
            ..HyperParams::default()
        }
    }

    /// Preset for the corel image datasets (typically used with
    /// L2-normalized features).
    pub fn corel() -> HyperParams {
        HyperParams {
            lambda: 0.02,
            beta: 5.0,
            m0: 2.0,
            ..HyperParams::default()
        }
    }

    /// Preset for the trec9 text datasets (typically used with L2-normalized
    /// features).
    pub fn trec9() -> HyperParams {
        HyperParams {
            lambda: 3e-4,
            beta: 4.0,
            m0: 2.0,
            ..HyperParams::default()
        }
    }

    pub fn validate(&self) -> Result<(), Error> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if !(self.lambda.is_finite() && self.lambda > 0.0) {
            return bad(format!("lambda must be positive, got {}", self.lambda));
        }
        if !(self.beta.is_finite() && self.beta > 0.0) {
            return bad(format!("beta must be positive, got {}", self.beta));
        }
        if !(self.m0.is_finite() && self.m0 >= 0.0) {
            return bad(format!("m0 must be non-negative, got {}", self.m0));
        }
        if !(self.p0.is_finite() && self.p0 > 0.0 && self.p0 < 1.0) {
            return bad(format!("p0 must lie in (0, 1), got {}", self.p0));
        }
        if self.iters == 0 {
            return bad("iters must be at least 1".into());
        }
        Ok(())
    }
}
