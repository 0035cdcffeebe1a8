//! EM-style miSVM baseline: alternate between imputing instance labels in
//! positive bags and training a linear hinge classifier on the imputed
//! labels.
//!
//! Every instance of a positive bag starts positive and every negative-bag
//! instance stays negative forever. Each outer round retrains from scratch
//! with a round-specific seed, relabels positive-bag instances by the sign
//! of their score, then repairs any positive bag left without a positive by
//! forcing its max-score instance positive. The loop stops at a label fixed
//! point or after `max_outer_iters` rounds.
//!
//! The inner solver is stochastic subgradient descent on the hinge loss with
//! the same decaying step size and ball projection as the main trainer, not
//! an exact QP, so this baseline is deterministic and dependency-free. Bag
//! prediction for this model is max-score thresholding at zero, matching how
//! the instance labels were imputed.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::{Bag, BagLabel, Dataset, Instance};
use crate::error::Error;
use crate::model::{score_raw, ModelWeights};
use crate::seed::derive_seed;
use crate::solver::project;

/// Baseline training configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct MisvmConfig {
    /// Hinge penalty weight; the inner problem's regularizer is
    /// `lambda = 1 / (c * n_instances)`.
    pub c: f64,
    pub max_outer_iters: usize,
    /// Subgradient steps per inner training run.
    pub inner_iters: usize,
    pub seed: u64,
}

impl Default for MisvmConfig {
    fn default() -> Self {
        Self {
            c: 1.0,
            max_outer_iters: 50,
            inner_iters: 2000,
            seed: 0,
        }
    }
}

impl MisvmConfig {
    pub fn validate(&self) -> Result<(), Error> {
        if !(self.c.is_finite() && self.c > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "c must be positive, got {}",
                self.c
            )));
        }
        if self.max_outer_iters == 0 {
            return Err(Error::InvalidConfig(
                "max_outer_iters must be at least 1".into(),
            ));
        }
        if self.inner_iters == 0 {
            return Err(Error::InvalidConfig(
                "inner_iters must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

/// Trains the baseline. Requires at least one bag of each class.
pub fn train_misvm(data: &Dataset, cfg: &MisvmConfig) -> Result<ModelWeights, Error> {
    cfg.validate()?;
    let n_pos = data
        .bags()
        .iter()
        .filter(|b| b.label().is_positive())
        .count();
    if n_pos == 0 || n_pos == data.n_bags() {
        return Err(Error::DegenerateData(
            "baseline training needs at least one bag of each class".into(),
        ));
    }

    // Start with every positive-bag instance labeled positive.
    let mut labels: Vec<Vec<bool>> = data
        .bags()
        .iter()
        .map(|b| vec![b.label().is_positive(); b.len()])
        .collect();

    let mut weights = ModelWeights::zeros(data.dim());
    for outer in 0..cfg.max_outer_iters {
        weights = train_hinge(data, &labels, cfg, derive_seed(cfg.seed, outer as u64));
        let new_labels = impute_labels(&weights, data)?;
        if new_labels == labels {
            break;
        }
        labels = new_labels;
    }
    Ok(weights)
}

/// Instance labels induced by `w` under the MIL constraints: negative-bag
/// instances are always negative; positive-bag instances take the sign of
/// their score, and a positive bag whose scores are all non-positive gets
/// its max-score instance forced positive (ties to the smaller position).
pub fn impute_labels(w: &ModelWeights, data: &Dataset) -> Result<Vec<Vec<bool>>, Error> {
    let mut all = Vec::with_capacity(data.n_bags());
    for bag in data.bags() {
        w.check_bag(bag)?;
        if !bag.label().is_positive() {
            all.push(vec![false; bag.len()]);
            continue;
        }
        let scores: Vec<f64> = bag
            .instances()
            .iter()
            .map(|x| score_raw(w.as_slice(), x))
            .collect();
        let mut labels: Vec<bool> = scores.iter().map(|&s| s > 0.0).collect();
        if labels.iter().all(|&l| !l) {
            let mut best = 0;
            for (j, &s) in scores.iter().enumerate().skip(1) {
                if s > scores[best] {
                    best = j;
                }
            }
            labels[best] = true;
        }
        all.push(labels);
    }
    Ok(all)
}

/// Bag prediction for a baseline model: positive iff the max instance score
/// is strictly above zero, the same rule the imputation uses.
pub fn predict_bag_misvm(w: &ModelWeights, bag: &Bag) -> Result<BagLabel, Error> {
    w.check_bag(bag)?;
    let max = bag
        .instances()
        .iter()
        .map(|x| score_raw(w.as_slice(), x))
        .fold(f64::NEG_INFINITY, f64::max);
    Ok(if max > 0.0 {
        BagLabel::Positive
    } else {
        BagLabel::Negative
    })
}

/// Inner solver: stochastic subgradient descent on
/// `lambda/2 |w|^2 + 1/N sum hinge(y_i w.x_i)` with `lambda = 1/(c N)`,
/// step size `1/(lambda t)`, and projection onto the ball of radius
/// `1/sqrt(lambda)`. The margin test uses the pre-update weights.
fn train_hinge(
    data: &Dataset,
    labels: &[Vec<bool>],
    cfg: &MisvmConfig,
    seed: u64,
) -> ModelWeights {
    let flat: Vec<(&Instance, f64)> = data
        .bags()
        .iter()
        .zip(labels)
        .flat_map(|(bag, labs)| {
            bag.instances()
                .iter()
                .zip(labs)
                .map(|(x, &l)| (x, if l { 1.0 } else { -1.0 }))
        })
        .collect();
    let n = flat.len();
    let lambda = 1.0 / (cfg.c * n as f64);
    let mut w = ModelWeights::zeros(data.dim());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    for t in 1..=cfg.inner_iters {
        let (x, y) = flat[rng.gen_range(0..n as u64) as usize];
        let eta = 1.0 / (lambda * t as f64);
        let violated = y * score_raw(w.as_slice(), x) < 1.0;
        let shrink = 1.0 - eta * lambda;
        let ws = w.as_mut_slice();
        for v in ws.iter_mut() {
            *v *= shrink;
        }
        if violated {
            for &(i, v) in x.features() {
                ws[i as usize] += eta * y * v;
            }
        }
        project(&mut w, lambda);
    }
    w
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{generate_synthetic, SynthConfig};

    #[test]
    fn config_validation() {
        MisvmConfig::default().validate().unwrap();
        for bad in [
            MisvmConfig { c: 0.0, ..Default::default() },
            MisvmConfig { c: -1.0, ..Default::default() },
            MisvmConfig { c: f64::NAN, ..Default::default() },
            MisvmConfig { max_outer_iters: 0, ..Default::default() },
            MisvmConfig { inner_iters: 0, ..Default::default() },
        ] {
            assert!(bad.validate().is_err(), "{bad:?}");
        }
    }

    #[test]
    fn rejects_single_class_data() {
        let pos = Dataset::parse("1 a 0:1.0\n1 b 0:2.0\n").unwrap();
        let neg = Dataset::parse("0 a 0:1.0\n0 b 0:2.0\n").unwrap();
        for d in [pos, neg] {
            match train_misvm(&d, &MisvmConfig::default()) {
                Err(Error::DegenerateData(_)) => {}
                other => panic!("expected degenerate-data error, got {other:?}"),
            }
        }
    }

    #[test]
    fn negative_bags_never_relabeled() {
        // High-scoring instance in a negative bag stays negative.
        let d = Dataset::parse("0 n 0:5.0\n1 p 0:1.0\n1 p 0:-1.0\n").unwrap();
        let w = ModelWeights::new(vec![1.0]).unwrap();
        let labels = impute_labels(&w, &d).unwrap();
        assert_eq!(labels[0], vec![false]);
        assert_eq!(labels[1], vec![true, false]);
    }

    #[test]
    fn repair_forces_exactly_the_max_scorer() {
        // All positive-bag scores negative: only the max (score -1 at
        // position 1) flips.
        let d = Dataset::parse("1 p 0:-3.0\n1 p 0:-1.0\n1 p 0:-2.0\n").unwrap();
        let w = ModelWeights::new(vec![1.0]).unwrap();
        let labels = impute_labels(&w, &d).unwrap();
        assert_eq!(labels[0], vec![false, true, false]);
    }

    #[test]
    fn repair_tie_goes_to_smaller_position() {
        let d = Dataset::parse("1 p 0:-2.0\n1 p 0:-2.0\n").unwrap();
        let w = ModelWeights::new(vec![1.0]).unwrap();
        let labels = impute_labels(&w, &d).unwrap();
        assert_eq!(labels[0], vec![true, false]);
    }

    #[test]
    fn mixed_signs_need_no_repair() {
        let d = Dataset::parse("1 p 0:2.0\n1 p 0:-2.0\n1 p 0:1.0\n").unwrap();
        let w = ModelWeights::new(vec![1.0]).unwrap();
        let labels = impute_labels(&w, &d).unwrap();
        assert_eq!(labels[0], vec![true, false, true]);
    }

    #[test]
    fn imputed_labels_satisfy_mil_constraints() {
        let (data, _) = generate_synthetic(&SynthConfig::default(), 31).unwrap();
        let w = train_misvm(&data, &MisvmConfig::default()).unwrap();
        let labels = impute_labels(&w, &data).unwrap();
        for (bag, labs) in data.bags().iter().zip(&labels) {
            if bag.label().is_positive() {
                assert!(labs.iter().any(|&l| l), "positive bag without positive");
            } else {
                assert!(labs.iter().all(|&l| !l), "negative bag with positive");
            }
        }
    }

    #[test]
    fn zero_score_counts_as_negative_for_bags() {
        let d = Dataset::parse("0 n 0:1.0\n").unwrap();
        let w = ModelWeights::zeros(1);
        assert_eq!(
            predict_bag_misvm(&w, &d.bags()[0]).unwrap(),
            BagLabel::Negative
        );
    }

    #[test]
    fn training_is_deterministic() {
        let (data, _) = generate_synthetic(
            &SynthConfig {
                n_pos_bags: 6,
                n_neg_bags: 6,
                instances_per_bag: 8,
                dim: 12,
                ..SynthConfig::default()
            },
            12,
        )
        .unwrap();
        let cfg = MisvmConfig { inner_iters: 400, seed: 5, ..Default::default() };
        let a = train_misvm(&data, &cfg).unwrap();
        let b = train_misvm(&data, &cfg).unwrap();
        assert_eq!(a.as_slice(), b.as_slice());
        let c = train_misvm(&data, &MisvmConfig { seed: 6, ..cfg }).unwrap();
        assert_ne!(a.as_slice(), c.as_slice());
    }

    #[test]
    fn separates_fully_positive_bags() {
        // With every instance of positive bags truly positive, the initial
        // labeling is already correct and the baseline must classify well.
        let (data, _) = generate_synthetic(
            &SynthConfig {
                positive_fraction: 1.0,
                n_pos_bags: 10,
                n_neg_bags: 10,
                instances_per_bag: 10,
                dim: 20,
                margin: 4.0,
                noise_std: 0.5,
            },
            8,
        )
        .unwrap();
        let w = train_misvm(&data, &MisvmConfig::default()).unwrap();
        let correct = data
            .bags()
            .iter()
            .filter(|b| predict_bag_misvm(&w, b).unwrap() == b.label())
            .count();
        let acc = correct as f64 / data.n_bags() as f64;
        assert!(acc >= 0.95, "baseline accuracy {acc} on easy data");
    }

    #[test]
    fn fixed_point_stops_before_iteration_cap() {
        // A trivially separable single-feature problem reaches a label fixed
        // point immediately; results with a tiny and a huge outer cap match.
        let d = Dataset::parse("1 p 0:1.0\n0 n 0:-1.0\n").unwrap();
        let small = MisvmConfig { max_outer_iters: 2, ..Default::default() };
        let large = MisvmConfig { max_outer_iters: 50, ..Default::default() };
        let a = train_misvm(&d, &small).unwrap();
        let b = train_misvm(&d, &large).unwrap();
        assert_eq!(a.as_slice(), b.as_slice());
    }
}
