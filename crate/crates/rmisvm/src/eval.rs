//! Evaluation harness: repeated stratified k-fold cross-validation over
//! bags, pooled bag accuracy, and top-k detection-rate curves against
//! instance-level ground truth.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::data::{Bag, BagLabel, Dataset, GroundTruth};
use crate::error::Error;
use crate::misvm::{predict_bag_misvm, train_misvm, MisvmConfig};
use crate::model::{bag_prob, predict_bag, select_top_instances, HyperParams, ModelWeights};
use crate::seed::derive_seed;
use crate::solver::train;

/// A trainable bag classifier, as cross-validation sees it. The harness
/// supplies a per-fold seed; implementations must be deterministic given
/// `(data, seed)` so folds can run in parallel without changing results.
pub trait MilTrainer: Sync {
    fn name(&self) -> &str;
    fn train(&self, data: &Dataset, seed: u64) -> Result<ModelWeights, Error>;
    fn predict_bag(&self, w: &ModelWeights, bag: &Bag) -> Result<BagLabel, Error>;
}

/// The jointly optimized model; bags are predicted through the probabilistic
/// aggregate at the 0.5 threshold. The configured seed is overridden by the
/// harness's per-fold seed.
pub struct RmiTrainer(pub HyperParams);

impl MilTrainer for RmiTrainer {
    fn name(&self) -> &str {
        "rmi"
    }

    fn train(&self, data: &Dataset, seed: u64) -> Result<ModelWeights, Error> {
        let hp = HyperParams { seed, ..self.0.clone() };
        Ok(train(data, &hp)?.weights)
    }

    fn predict_bag(&self, w: &ModelWeights, bag: &Bag) -> Result<BagLabel, Error> {
        Ok(predict_bag(bag_prob(w, bag)?))
    }
}

/// The EM baseline; bags are predicted by max-score thresholding at zero,
/// the same rule its label imputation uses.
pub struct MisvmTrainer(pub MisvmConfig);

impl MilTrainer for MisvmTrainer {
    fn name(&self) -> &str {
        "misvm"
    }

    fn train(&self, data: &Dataset, seed: u64) -> Result<ModelWeights, Error> {
        let cfg = MisvmConfig { seed, ..self.0.clone() };
        train_misvm(data, &cfg)
    }

    fn predict_bag(&self, w: &ModelWeights, bag: &Bag) -> Result<BagLabel, Error> {
        predict_bag_misvm(w, bag)
    }
}

/// Cross-validation result. `per_run_accuracy` holds each repeat's pooled
/// bag accuracy (every bag is tested exactly once per repeat); `mean` and
/// `std` summarize those repeat values, with `std` the population standard
/// deviation.
#[derive(Debug, Clone, PartialEq)]
pub struct CvReport {
    pub trainer: String,
    pub folds: usize,
    pub repeats: usize,
    pub per_run_accuracy: Vec<f64>,
    pub mean: f64,
    pub std: f64,
}

impl CvReport {
    /// One-line human summary in percent.
    pub fn summary(&self) -> String {
        format!(
            "mean accuracy: {:.2}% ± {:.2}%",
            100.0 * self.mean,
            100.0 * self.std
        )
    }

    /// Machine-readable `key=value` lines.
    pub fn to_kv(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("trainer={}\n", self.trainer));
        out.push_str(&format!("folds={}\n", self.folds));
        out.push_str(&format!("repeats={}\n", self.repeats));
        for (i, acc) in self.per_run_accuracy.iter().enumerate() {
            out.push_str(&format!("repeat{i}_accuracy={acc}\n"));
        }
        out.push_str(&format!("mean_accuracy={}\n", self.mean));
        out.push_str(&format!("std_accuracy={}\n", self.std));
        out
    }
}

/// Repeated stratified k-fold cross-validation at the bag level.
///
/// Bags are first put in a canonical order (sorted by id), shuffled with a
/// per-repeat derived seed, and dealt round-robin to folds, positives first,
/// so per-fold class counts differ from proportional by at most one. Each
/// fold is held out once per repeat; the trainer sees the remaining bags and
/// a per-fold derived seed. Because every seed is derived independently,
/// folds run in parallel with results identical to sequential execution,
/// and the report depends only on bag content, not input file order.
pub fn kfold_cv(
    data: &Dataset,
    trainer: &dyn MilTrainer,
    folds: usize,
    repeats: usize,
    seed: u64,
) -> Result<CvReport, Error> {
    if folds < 2 {
        return Err(Error::InvalidConfig(format!(
            "folds must be at least 2, got {folds}"
        )));
    }
    if repeats == 0 {
        return Err(Error::InvalidConfig("repeats must be at least 1".into()));
    }
    let n_pos = data
        .bags()
        .iter()
        .filter(|b| b.label().is_positive())
        .count();
    let n_neg = data.n_bags() - n_pos;
    if n_pos < folds || n_neg < folds {
        return Err(Error::DegenerateData(format!(
            "every class needs at least {folds} bags for {folds}-fold splits, \
             got {n_pos} positive and {n_neg} negative"
        )));
    }

    let mut canonical: Vec<usize> = (0..data.n_bags()).collect();
    canonical.sort_by(|&a, &b| data.bags()[a].id().cmp(data.bags()[b].id()));

    struct Run {
        repeat: usize,
        train_idx: Vec<usize>,
        test_idx: Vec<usize>,
        seed: u64,
    }
    let mut runs = Vec::with_capacity(repeats * folds);
    for r in 0..repeats {
        let order = shuffled(&canonical, data, derive_seed(seed, 2 * r as u64));
        let fold_of = deal_stratified(&order, data, folds);
        for f in 0..folds {
            let test_idx: Vec<usize> = order
                .iter()
                .copied()
                .filter(|&i| fold_of[i] == f)
                .collect();
            let train_idx: Vec<usize> = order
                .iter()
                .copied()
                .filter(|&i| fold_of[i] != f)
                .collect();
            runs.push(Run {
                repeat: r,
                train_idx,
                test_idx,
                seed: derive_seed(seed, 2 * (r * folds + f) as u64 + 1),
            });
        }
    }

    let outcomes: Result<Vec<(usize, usize, usize)>, Error> = runs
        .par_iter()
        .map(|run| {
            let train_data = data.subset(&run.train_idx)?;
            let w = trainer.train(&train_data, run.seed)?;
            let mut correct = 0;
            for &i in &run.test_idx {
                let bag = &data.bags()[i];
                if trainer.predict_bag(&w, bag)? == bag.label() {
                    correct += 1;
                }
            }
            Ok((run.repeat, correct, run.test_idx.len()))
        })
        .collect();

    let mut correct = vec![0usize; repeats];
    let mut tested = vec![0usize; repeats];
    for (r, c, t) in outcomes? {
        correct[r] += c;
        tested[r] += t;
    }
    let per_run_accuracy: Vec<f64> = correct
        .iter()
        .zip(&tested)
        .map(|(&c, &t)| c as f64 / t as f64)
        .collect();
    let mean = per_run_accuracy.iter().sum::<f64>() / repeats as f64;
    let var = per_run_accuracy
        .iter()
        .map(|a| (a - mean) * (a - mean))
        .sum::<f64>()
        / repeats as f64;
    Ok(CvReport {
        trainer: trainer.name().to_string(),
        folds,
        repeats,
        per_run_accuracy,
        mean,
        std: var.sqrt(),
    })
}

/// Fisher-Yates over a copy of `canonical`, drawing indices as u64 so the
/// permutation is platform independent.
fn shuffled(canonical: &[usize], _data: &Dataset, seed: u64) -> Vec<usize> {
    let mut order = canonical.to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for i in (1..order.len()).rev() {
        let j = rng.gen_range(0..=i as u64) as usize;
        order.swap(i, j);
    }
    order
}

/// Deals bags to folds round-robin in shuffled order, all positives first,
/// with negatives continuing the rotation. Returns the fold of each dataset
/// index.
fn deal_stratified(order: &[usize], data: &Dataset, folds: usize) -> Vec<usize> {
    let mut fold_of = vec![0usize; data.n_bags()];
    let mut next = 0usize;
    for &i in order.iter().filter(|&&i| data.bags()[i].label().is_positive()) {
        fold_of[i] = next % folds;
        next += 1;
    }
    for &i in order.iter().filter(|&&i| !data.bags()[i].label().is_positive()) {
        fold_of[i] = next % folds;
        next += 1;
    }
    fold_of
}

/// Fraction of positions where the two label sequences agree.
pub fn accuracy(predicted: &[BagLabel], truth: &[BagLabel]) -> Result<f64, Error> {
    if predicted.len() != truth.len() {
        return Err(Error::Misaligned(format!(
            "{} predictions vs {} labels",
            predicted.len(),
            truth.len()
        )));
    }
    if predicted.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let matches = predicted
        .iter()
        .zip(truth)
        .filter(|(a, b)| a == b)
        .count();
    Ok(matches as f64 / predicted.len() as f64)
}

/// Detection rate as a function of how many top-scoring instances are kept.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectionCurve {
    pub k_values: Vec<usize>,
    pub rates: Vec<f64>,
}

impl DetectionCurve {
    /// `k<TAB>rate` rows, one per k.
    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for (k, rate) in self.k_values.iter().zip(&self.rates) {
            out.push_str(&format!("{k}\t{rate}\n"));
        }
        out
    }
}

/// For each k, the fraction of positive bags whose k highest-scoring
/// instances include at least one true positive. Keeping more instances can
/// only add hits, so the rates are non-decreasing in k.
pub fn detection_rate_curve(
    w: &ModelWeights,
    data: &Dataset,
    truth: &GroundTruth,
    k_values: &[usize],
) -> Result<DetectionCurve, Error> {
    truth.check_aligned(data)?;
    if k_values.is_empty() {
        return Err(Error::InvalidConfig("k_values must be non-empty".into()));
    }
    if k_values[0] == 0 || k_values.windows(2).any(|p| p[0] >= p[1]) {
        return Err(Error::InvalidConfig(
            "k_values must be positive and strictly ascending".into(),
        ));
    }

    let max_k = *k_values.last().expect("non-empty by the check above");
    let mut n_pos = 0usize;
    let mut hits = vec![0usize; k_values.len()];
    for (bag, t) in data.bags().iter().zip(truth.bags()) {
        if !bag.label().is_positive() {
            continue;
        }
        n_pos += 1;
        // One scoring pass per bag; each k then tests a prefix.
        let ranked = select_top_instances(w, bag, max_k)?;
        for (slot, &k) in k_values.iter().enumerate() {
            if ranked.iter().take(k).any(|&pos| t.labels[pos]) {
                hits[slot] += 1;
            }
        }
    }
    if n_pos == 0 {
        return Err(Error::DegenerateData(
            "detection rate needs at least one positive bag".into(),
        ));
    }
    let rates = hits.iter().map(|&h| h as f64 / n_pos as f64).collect();
    Ok(DetectionCurve {
        k_values: k_values.to_vec(),
        rates,
    })
}

/// Fraction of positive bags whose single top-scoring instance is a true
/// positive; the head of the detection curve.
pub fn top1_recovery(
    w: &ModelWeights,
    data: &Dataset,
    truth: &GroundTruth,
) -> Result<f64, Error> {
    Ok(detection_rate_curve(w, data, truth, &[1])?.rates[0])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{generate_synthetic, SynthConfig};

    /// Trainer that ignores data and returns fixed weights.
    struct Fixed(Vec<f64>);

    impl MilTrainer for Fixed {
        fn name(&self) -> &str {
            "fixed"
        }
        fn train(&self, _data: &Dataset, _seed: u64) -> Result<ModelWeights, Error> {
            ModelWeights::new(self.0.clone())
        }
        fn predict_bag(&self, w: &ModelWeights, bag: &Bag) -> Result<BagLabel, Error> {
            Ok(predict_bag(bag_prob(w, bag)?))
        }
    }

    /// Trainer whose predictions are a constant label.
    struct Constant(BagLabel);

    impl MilTrainer for Constant {
        fn name(&self) -> &str {
            "constant"
        }
        fn train(&self, data: &Dataset, _seed: u64) -> Result<ModelWeights, Error> {
            Ok(ModelWeights::zeros(data.dim()))
        }
        fn predict_bag(&self, _w: &ModelWeights, _bag: &Bag) -> Result<BagLabel, Error> {
            Ok(self.0)
        }
    }

    fn two_class_line_data(n_per_class: usize) -> Dataset {
        let mut text = String::new();
        for i in 0..n_per_class {
            text.push_str(&format!("1 p{i} 0:{}\n", 1.0 + i as f64 * 0.1));
            text.push_str(&format!("0 n{i} 0:{}\n", -1.0 - i as f64 * 0.1));
        }
        Dataset::parse(&text).unwrap()
    }

    #[test]
    fn accuracy_closed_forms() {
        use BagLabel::{Negative as N, Positive as P};
        assert_eq!(accuracy(&[P, N, P], &[P, N, P]).unwrap(), 1.0);
        assert_eq!(accuracy(&[P, N], &[N, P]).unwrap(), 0.0);
        assert_eq!(accuracy(&[P, N], &[P, P]).unwrap(), 0.5);
        assert!(accuracy(&[P], &[P, N]).is_err());
        assert!(accuracy(&[], &[]).is_err());
    }

    #[test]
    fn perfect_fixed_model_scores_one_with_zero_spread() {
        let data = two_class_line_data(6);
        let report = kfold_cv(&data, &Fixed(vec![2.0]), 3, 4, 9).unwrap();
        assert_eq!(report.per_run_accuracy, vec![1.0; 4]);
        assert_eq!(report.mean, 1.0);
        assert_eq!(report.std, 0.0);
        assert_eq!(report.folds, 3);
        assert_eq!(report.repeats, 4);
        assert_eq!(report.trainer, "fixed");
    }

    #[test]
    fn constant_positive_prediction_hits_the_base_rate() {
        let data = two_class_line_data(5);
        let report = kfold_cv(&data, &Constant(BagLabel::Positive), 5, 3, 1).unwrap();
        assert_eq!(report.mean, 0.5);
        assert_eq!(report.std, 0.0);
    }

    #[test]
    fn cv_validates_fold_and_class_counts() {
        let data = two_class_line_data(4);
        assert!(matches!(
            kfold_cv(&data, &Fixed(vec![1.0]), 1, 1, 0),
            Err(Error::InvalidConfig(_))
        ));
        assert!(matches!(
            kfold_cv(&data, &Fixed(vec![1.0]), 2, 0, 0),
            Err(Error::InvalidConfig(_))
        ));
        // 4 bags per class, 5 folds: one fold would miss a class.
        assert!(matches!(
            kfold_cv(&data, &Fixed(vec![1.0]), 5, 1, 0),
            Err(Error::DegenerateData(_))
        ));
    }

    #[test]
    fn folds_partition_and_stratify() {
        let (data, _) = generate_synthetic(
            &SynthConfig {
                n_pos_bags: 10,
                n_neg_bags: 15,
                instances_per_bag: 2,
                dim: 3,
                margin: 1.0,
                noise_std: 0.5,
                positive_fraction: 0.5,
            },
            4,
        )
        .unwrap();
        let canonical: Vec<usize> = {
            let mut v: Vec<usize> = (0..data.n_bags()).collect();
            v.sort_by(|&a, &b| data.bags()[a].id().cmp(data.bags()[b].id()));
            v
        };
        for seed in 0..5u64 {
            let order = shuffled(&canonical, &data, seed);
            let folds = 5;
            let fold_of = deal_stratified(&order, &data, folds);
            // Partition: every bag has exactly one fold.
            assert_eq!(fold_of.len(), 25);
            // Stratification: 10 positives over 5 folds = 2 each;
            // 15 negatives = 3 each.
            for f in 0..folds {
                let pos = (0..25)
                    .filter(|&i| fold_of[i] == f && data.bags()[i].label().is_positive())
                    .count();
                let neg = (0..25)
                    .filter(|&i| fold_of[i] == f && !data.bags()[i].label().is_positive())
                    .count();
                assert_eq!(pos, 2, "seed {seed} fold {f}");
                assert_eq!(neg, 3, "seed {seed} fold {f}");
            }
        }
    }

    #[test]
    fn report_is_invariant_to_bag_order() {
        let (data, _) = generate_synthetic(
            &SynthConfig {
                n_pos_bags: 6,
                n_neg_bags: 6,
                instances_per_bag: 5,
                dim: 8,
                ..SynthConfig::default()
            },
            13,
        )
        .unwrap();
        let mut reversed_bags: Vec<_> = data.bags().to_vec();
        reversed_bags.reverse();
        let reversed = Dataset::new(reversed_bags, data.dim()).unwrap();

        let hp = HyperParams {
            lambda: 0.05,
            beta: 2.0,
            iters: 150,
            ..HyperParams::default()
        };
        let a = kfold_cv(&data, &RmiTrainer(hp.clone()), 3, 2, 5).unwrap();
        let b = kfold_cv(&reversed, &RmiTrainer(hp), 3, 2, 5).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn cv_seed_changes_fold_assignment() {
        let data = two_class_line_data(6);
        let canonical: Vec<usize> = (0..12).collect();
        let a = shuffled(&canonical, &data, 0);
        let b = shuffled(&canonical, &data, 1);
        assert_ne!(a, b);
        let again = shuffled(&canonical, &data, 0);
        assert_eq!(a, again);
    }

    #[test]
    fn kv_and_summary_formats() {
        let report = CvReport {
            trainer: "rmi".into(),
            folds: 10,
            repeats: 2,
            per_run_accuracy: vec![0.8, 0.9],
            mean: 0.85,
            std: 0.05,
        };
        assert_eq!(report.summary(), "mean accuracy: 85.00% ± 5.00%");
        let kv = report.to_kv();
        assert!(kv.contains("trainer=rmi\n"));
        assert!(kv.contains("folds=10\n"));
        assert!(kv.contains("repeat0_accuracy=0.8\n"));
        assert!(kv.contains("repeat1_accuracy=0.9\n"));
        assert!(kv.contains("mean_accuracy=0.85\n"));
        assert!(kv.contains("std_accuracy=0.05\n"));
    }

    #[test]
    fn full_bag_window_always_detects() {
        let (data, truth) = generate_synthetic(&SynthConfig::default(), 2).unwrap();
        // Arbitrary weights: with k = bag size, the window holds the whole
        // bag, and every positive bag has a true positive by construction.
        let w = ModelWeights::new((0..80).map(|i| (i as f64 * 0.7).sin()).collect()).unwrap();
        let curve = detection_rate_curve(&w, &data, &truth, &[1, 5, 20]).unwrap();
        assert_eq!(curve.rates[2], 1.0);
        // Monotone in k.
        assert!(curve.rates[0] <= curve.rates[1] && curve.rates[1] <= curve.rates[2]);
    }

    #[test]
    fn random_weights_detect_at_about_the_positive_fraction() {
        // With near-overlapping blobs the score ordering is essentially
        // random, so the top-1 hit rate over many bags approaches the
        // positive fraction (1 in 20).
        let cfg = SynthConfig {
            n_pos_bags: 1000,
            n_neg_bags: 1,
            instances_per_bag: 20,
            positive_fraction: 0.05,
            dim: 10,
            margin: 0.1,
            noise_std: 1.0,
        };
        let (data, truth) = generate_synthetic(&cfg, 7).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let w = ModelWeights::new((0..10).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
        let rate = top1_recovery(&w, &data, &truth).unwrap();
        assert!((rate - 0.05).abs() <= 0.05, "rate {rate}");
    }

    #[test]
    fn trained_model_recovers_the_planted_instance() {
        let (data, truth) = generate_synthetic(&SynthConfig::default(), 1).unwrap();
        let hp = HyperParams {
            lambda: 0.01,
            beta: 5.0,
            m0: 1.0,
            iters: 2000,
            seed: 1,
            ..HyperParams::default()
        };
        let w = train(&data, &hp).unwrap().weights;
        let rec = top1_recovery(&w, &data, &truth).unwrap();
        assert!(rec >= 0.9, "top-1 recovery {rec}");
    }

    #[test]
    fn detection_curve_validates_inputs() {
        let (data, truth) = generate_synthetic(
            &SynthConfig {
                n_pos_bags: 2,
                n_neg_bags: 2,
                instances_per_bag: 3,
                dim: 4,
                ..SynthConfig::default()
            },
            3,
        )
        .unwrap();
        let w = ModelWeights::zeros(4);
        assert!(matches!(
            detection_rate_curve(&w, &data, &truth, &[]),
            Err(Error::InvalidConfig(_))
        ));
        assert!(matches!(
            detection_rate_curve(&w, &data, &truth, &[0, 1]),
            Err(Error::InvalidConfig(_))
        ));
        assert!(matches!(
            detection_rate_curve(&w, &data, &truth, &[2, 2]),
            Err(Error::InvalidConfig(_))
        ));
        assert!(matches!(
            detection_rate_curve(&w, &data, &truth, &[3, 1]),
            Err(Error::InvalidConfig(_))
        ));

        // Misaligned truth: drop one bag.
        let short = GroundTruth::new(truth.bags()[..3].to_vec()).unwrap();
        assert!(matches!(
            detection_rate_curve(&w, &data, &short, &[1]),
            Err(Error::Misaligned(_))
        ));
    }

    #[test]
    fn detection_needs_a_positive_bag() {
        let data = Dataset::parse("0 a 0:1.0\n0 b 0:2.0\n").unwrap();
        let truth = GroundTruth::parse("a 0 0\nb 0 0\n").unwrap();
        let w = ModelWeights::zeros(1);
        assert!(matches!(
            detection_rate_curve(&w, &data, &truth, &[1]),
            Err(Error::DegenerateData(_))
        ));
    }

    #[test]
    fn curve_serializes_as_tab_rows() {
        let curve = DetectionCurve {
            k_values: vec![1, 5],
            rates: vec![0.25, 0.75],
        };
        assert_eq!(curve.to_tsv(), "1\t0.25\n5\t0.75\n");
    }

    #[test]
    fn misvm_trainer_plugs_into_cv() {
        let (data, _) = generate_synthetic(
            &SynthConfig {
                n_pos_bags: 6,
                n_neg_bags: 6,
                instances_per_bag: 6,
                positive_fraction: 1.0,
                dim: 10,
                margin: 4.0,
                noise_std: 0.5,
            },
            6,
        )
        .unwrap();
        let cfg = MisvmConfig {
            inner_iters: 300,
            ..MisvmConfig::default()
        };
        let report = kfold_cv(&data, &MisvmTrainer(cfg), 3, 2, 2).unwrap();
        assert_eq!(report.trainer, "misvm");
        assert!(report.mean >= 0.9, "easy data accuracy {}", report.mean);
    }
}
