//! The joint bag/instance training objective, its gradients, and a
//! finite-difference checker.
//!
//! For weights `w` over a dataset of `n` bags the objective is
//!
//! ```text
//! F(w) = lambda/2 |w|^2
//!      + beta/n * sum_i BagLoss_i
//!      + 1/n * sum_i 1/m_i * sum_j InstanceLoss_ij
//! ```
//!
//! The bag loss is the cross-entropy of the noisy-OR probability against the
//! bag label; the instance loss is a hinge that pushes each instance's score
//! away from the decision threshold in the direction of its current
//! pseudo-label `sign(p - p0)`, treating `p == p0` as negative. Training
//! samples one bag per step, so the per-bag stochastic objective
//! `f_k = lambda/2 |w|^2 + beta * BagLoss_k + 1/m_k * sum_j InstanceLoss_kj`
//! has expectation `F` under uniform bag sampling, and its gradient is what
//! [`stochastic_grad`] returns.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::{Bag, BagLabel, Dataset, Instance};
use crate::error::Error;
use crate::model::{bag_prob_raw, score_raw, sigmoid, HyperParams, ModelWeights};

/// Bag probabilities are clamped to `[PROB_EPS, 1 - PROB_EPS]` inside the
/// cross-entropy so its value and gradient stay finite at saturation.
pub const PROB_EPS: f64 = 1e-12;

/// Pseudo-label of an instance relative to the threshold: +1 above `p0`,
/// -1 at or below it.
pub(crate) fn margin_sign(p: f64, p0: f64) -> f64 {
    if p > p0 {
        1.0
    } else {
        -1.0
    }
}

fn clamp_prob(p: f64) -> f64 {
    p.clamp(PROB_EPS, 1.0 - PROB_EPS)
}

/// Cross-entropy of a bag probability against the bag label, with the
/// probability clamped away from 0 and 1.
pub fn bag_loss(p_bag: f64, label: BagLabel) -> f64 {
    let p = clamp_prob(p_bag);
    match label {
        BagLabel::Positive => -p.ln(),
        BagLabel::Negative => -(1.0 - p).ln(),
    }
}

/// Hinge loss `max(0, m0 - sign(p - p0) * w.x)` pushing the score at least
/// `m0` away from zero on the side of the instance's pseudo-label.
pub fn instance_loss(w: &ModelWeights, x: &Instance, p0: f64, m0: f64) -> Result<f64, Error> {
    let s = w.score(x)?;
    let sign = margin_sign(sigmoid(s), p0);
    Ok((m0 - sign * s).max(0.0))
}

/// The objective value split into its three terms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObjectiveBreakdown {
    pub total: f64,
    pub reg_term: f64,
    pub bag_term: f64,
    pub ins_term: f64,
}

/// Full objective over the dataset, summed in bag order then instance order
/// so the result is reproducible bit for bit.
pub fn objective(
    w: &ModelWeights,
    data: &Dataset,
    hp: &HyperParams,
) -> Result<ObjectiveBreakdown, Error> {
    hp.validate()?;
    let n = data.n_bags() as f64;
    let reg_term = 0.5 * hp.lambda * w.as_slice().iter().map(|v| v * v).sum::<f64>();
    let mut bag_sum = 0.0;
    let mut ins_sum = 0.0;
    for bag in data.bags() {
        w.check_bag(bag)?;
        bag_sum += bag_loss(bag_prob_raw(w.as_slice(), bag), bag.label());
        let mut hinge = 0.0;
        for x in bag.instances() {
            let s = score_raw(w.as_slice(), x);
            let sign = margin_sign(sigmoid(s), hp.p0);
            hinge += (hp.m0 - sign * s).max(0.0);
        }
        ins_sum += hinge / bag.len() as f64;
    }
    let bag_term = hp.beta / n * bag_sum;
    let ins_term = ins_sum / n;
    Ok(ObjectiveBreakdown {
        total: reg_term + bag_term + ins_term,
        reg_term,
        bag_term,
        ins_term,
    })
}

/// Gradient of the bag cross-entropy with respect to `w`:
/// `-sum_j p_j (Y - P) / P * x_j`, with `P` clamped like [`bag_loss`].
/// For a negative bag the coefficient reduces exactly to `p_j`.
pub fn bag_loss_grad(w: &ModelWeights, bag: &Bag) -> Result<Vec<f64>, Error> {
    w.check_bag(bag)?;
    let mut g = vec![0.0; w.dim()];
    accumulate_bag_loss_grad(w.as_slice(), bag, 1.0, &mut g);
    Ok(g)
}

/// Adds `scale` times the bag-loss gradient into `g`.
fn accumulate_bag_loss_grad(w: &[f64], bag: &Bag, scale: f64, g: &mut [f64]) {
    let p_bag = clamp_prob(bag_prob_raw(w, bag));
    let ratio = (bag.label().as_f64() - p_bag) / p_bag;
    for x in bag.instances() {
        let p = sigmoid(score_raw(w, x));
        let coeff = -scale * p * ratio;
        for &(i, v) in x.features() {
            g[i as usize] += coeff * v;
        }
    }
}

/// Subgradient of the instance hinge: zero when the margin is met, otherwise
/// `-sign(p - p0) * x` with the pseudo-label held fixed.
pub fn instance_loss_grad(
    w: &ModelWeights,
    x: &Instance,
    p0: f64,
    m0: f64,
) -> Result<Vec<f64>, Error> {
    let s = w.score(x)?;
    let mut g = vec![0.0; w.dim()];
    let sign = margin_sign(sigmoid(s), p0);
    if sign * s < m0 {
        for &(i, v) in x.features() {
            g[i as usize] = -sign * v;
        }
    }
    Ok(g)
}

/// Gradient of the per-bag stochastic objective:
/// `lambda w + beta * bag_grad + 1/m * sum_j instance_grad_j`.
pub fn stochastic_grad(
    w: &ModelWeights,
    bag: &Bag,
    hp: &HyperParams,
) -> Result<Vec<f64>, Error> {
    hp.validate()?;
    w.check_bag(bag)?;
    let ws = w.as_slice();
    let mut g: Vec<f64> = ws.iter().map(|v| hp.lambda * v).collect();
    accumulate_bag_loss_grad(ws, bag, hp.beta, &mut g);
    let inv_m = 1.0 / bag.len() as f64;
    for x in bag.instances() {
        let s = score_raw(ws, x);
        let sign = margin_sign(sigmoid(s), hp.p0);
        if sign * s < hp.m0 {
            let coeff = -sign * inv_m;
            for &(i, v) in x.features() {
                g[i as usize] += coeff * v;
            }
        }
    }
    Ok(g)
}

/// Central finite differences of `f` at `w` with step `eps` per coordinate.
/// Independent of every analytic gradient path; used to cross-check them.
pub fn finite_diff_grad<F>(mut f: F, w: &ModelWeights, eps: f64) -> Vec<f64>
where
    F: FnMut(&ModelWeights) -> f64,
{
    assert!(eps > 0.0 && eps.is_finite(), "eps must be positive");
    let mut g = vec![0.0; w.dim()];
    let mut probe = w.clone();
    for (i, slot) in g.iter_mut().enumerate() {
        let orig = w.as_slice()[i];
        probe.as_mut_slice()[i] = orig + eps;
        let up = f(&probe);
        probe.as_mut_slice()[i] = orig - eps;
        let down = f(&probe);
        probe.as_mut_slice()[i] = orig;
        *slot = (up - down) / (2.0 * eps);
    }
    g
}

/// `|a - b| / max(|a|, |b|)` in the Euclidean norm; 0 when both are zero.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "gradient lengths differ");
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: f64 = a
        .iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt();
    let scale = norm(a).max(norm(b));
    if scale == 0.0 {
        0.0
    } else {
        diff / scale
    }
}

/// Outcome of a randomized gradient check.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub trials: usize,
    pub eps: f64,
    pub max_rel_error: f64,
    /// Trial index and component ("bag_loss", "instance_loss", "stochastic")
    /// of the worst relative error.
    pub worst_trial: usize,
    pub worst_component: &'static str,
    /// Summary of the worst trial's configuration, for diagnostics.
    pub worst_config: String,
}

impl GradCheckReport {
    pub fn passed(&self, tolerance: f64) -> bool {
        self.max_rel_error < tolerance
    }
}

/// Compares every analytic gradient against central finite differences on
/// `trials` random configurations (dimension <= 20, bag size <= 8), sampled
/// away from the hinge and pseudo-label discontinuities so the losses are
/// differentiable at the probe point.
pub fn gradient_check(trials: usize, eps: f64, seed: u64) -> Result<GradCheckReport, Error> {
    if trials == 0 {
        return Err(Error::InvalidConfig("trials must be at least 1".into()));
    }
    if !(eps.is_finite() && eps > 0.0) {
        return Err(Error::InvalidConfig(format!(
            "eps must be positive, got {eps}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = GradCheckReport {
        trials,
        eps,
        max_rel_error: 0.0,
        worst_trial: 0,
        worst_component: "none",
        worst_config: String::new(),
    };

    for trial in 0..trials {
        let (w, bag, hp) = sample_smooth_config(&mut rng)?;

        let analytic = bag_loss_grad(&w, &bag)?;
        let fd = finite_diff_grad(
            |w| bag_loss(bag_prob_raw(w.as_slice(), &bag), bag.label()),
            &w,
            eps,
        );
        record(&mut report, trial, "bag_loss", &analytic, &fd, &bag, &hp);

        let j = rng.gen_range(0..bag.len() as u64) as usize;
        let x = &bag.instances()[j];
        let analytic = instance_loss_grad(&w, x, hp.p0, hp.m0)?;
        let fd = finite_diff_grad(
            |w| instance_loss(w, x, hp.p0, hp.m0).expect("dims already checked"),
            &w,
            eps,
        );
        record(&mut report, trial, "instance_loss", &analytic, &fd, &bag, &hp);

        let analytic = stochastic_grad(&w, &bag, &hp)?;
        let fd = finite_diff_grad(
            |w| per_bag_objective(w, &bag, &hp),
            &w,
            eps,
        );
        record(&mut report, trial, "stochastic", &analytic, &fd, &bag, &hp);
    }
    Ok(report)
}

/// Value of the per-bag stochastic objective; the function whose gradient
/// [`stochastic_grad`] computes.
pub fn per_bag_objective(w: &ModelWeights, bag: &Bag, hp: &HyperParams) -> f64 {
    let ws = w.as_slice();
    let reg = 0.5 * hp.lambda * ws.iter().map(|v| v * v).sum::<f64>();
    let bagl = bag_loss(bag_prob_raw(ws, bag), bag.label());
    let mut hinge = 0.0;
    for x in bag.instances() {
        let s = score_raw(ws, x);
        let sign = margin_sign(sigmoid(s), hp.p0);
        hinge += (hp.m0 - sign * s).max(0.0);
    }
    reg + hp.beta * bagl + hinge / bag.len() as f64
}

fn record(
    report: &mut GradCheckReport,
    trial: usize,
    component: &'static str,
    analytic: &[f64],
    fd: &[f64],
    bag: &Bag,
    hp: &HyperParams,
) {
    let rel = relative_error(analytic, fd);
    if rel > report.max_rel_error {
        report.max_rel_error = rel;
        report.worst_trial = trial;
        report.worst_component = component;
        report.worst_config = format!(
            "dim={} bag_size={} label={} lambda={} beta={} m0={} p0={}",
            analytic.len(),
            bag.len(),
            bag.label().as_u8(),
            hp.lambda,
            hp.beta,
            hp.m0,
            hp.p0
        );
    }
}

/// Distance from the discontinuities below which a sample is rejected.
const SMOOTH_MARGIN: f64 = 1e-3;

fn sample_smooth_config(
    rng: &mut ChaCha8Rng,
) -> Result<(ModelWeights, Bag, HyperParams), Error> {
    for _ in 0..10_000 {
        let dim = rng.gen_range(2..=20u64) as usize;
        let m = rng.gen_range(1..=8u64) as usize;
        let hp = HyperParams {
            lambda: rng.gen_range(0.01..1.0),
            beta: rng.gen_range(0.5..5.0),
            m0: rng.gen_range(0.1..2.0),
            p0: rng.gen_range(0.2..0.8),
            ..HyperParams::default()
        };
        let label = if rng.gen_bool(0.5) {
            BagLabel::Positive
        } else {
            BagLabel::Negative
        };
        let w = ModelWeights::new((0..dim).map(|_| 0.3 * standard_normal(rng)).collect())?;

        let mut instances = Vec::with_capacity(m);
        for _ in 0..m {
            let mut features: Vec<(u32, f64)> = Vec::new();
            for i in 0..dim as u32 {
                if rng.gen_bool(0.6) {
                    features.push((i, standard_normal(rng)));
                }
            }
            if features.is_empty() {
                let i = rng.gen_range(0..dim as u64) as u32;
                features.push((i, standard_normal(rng)));
            }
            instances.push(Instance::new(features)?);
        }
        let bag = Bag::new("g", label, instances)?;

        // The per-bag objective is differentiable unless some instance sits on
        // the pseudo-label threshold (score at logit(p0)) or on the hinge kink.
        let threshold = (hp.p0 / (1.0 - hp.p0)).ln();
        let smooth = bag.instances().iter().all(|x| {
            let s = score_raw(w.as_slice(), x);
            let sign = margin_sign(sigmoid(s), hp.p0);
            (s - threshold).abs() > SMOOTH_MARGIN && (sign * s - hp.m0).abs() > SMOOTH_MARGIN
        });
        if smooth {
            return Ok((w, bag, hp));
        }
    }
    Err(Error::InvalidConfig(
        "could not sample a smooth gradient-check configuration".into(),
    ))
}

/// Standard normal via Box-Muller; depends only on the seeded stream.
fn standard_normal(rng: &mut ChaCha8Rng) -> f64 {
    loop {
        let u: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
        let v: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
        let r = (-2.0 * u.ln()).sqrt();
        let z = r * v.cos();
        if z.is_finite() {
            return z;
        }
    }
}
