//! Multiple-instance learning with a jointly optimized bag/instance linear
//! model.
//!
//! A dataset is a set of labeled bags of unlabeled instances: a negative bag
//! contains no positive instances, a positive bag at least one. Each
//! instance gets a positive probability through a linear score and the
//! logistic function, and a bag's probability aggregates its instances with
//! a noisy-OR, so bag supervision reaches individual instances. Training
//! minimizes a bag cross-entropy plus a self-supervised instance hinge by
//! projected stochastic gradient descent; the learned weights both classify
//! bags and rank the instances inside them.
//!
//! The crate also ships an EM-style baseline ([`misvm`]) that alternates
//! hard label imputation with hinge training, a sparse text format for
//! datasets ([`data`]), a synthetic generator with instance-level ground
//! truth ([`synth`]), finite-difference gradient checking ([`objective`]),
//! and a repeated stratified cross-validation harness ([`eval`]).
//!
//! ```
//! use rmisvm::{generate_synthetic, top1_recovery, train, HyperParams, SynthConfig};
//!
//! let cfg = SynthConfig {
//!     n_pos_bags: 5,
//!     n_neg_bags: 5,
//!     instances_per_bag: 8,
//!     ..SynthConfig::default()
//! };
//! let (data, truth) = generate_synthetic(&cfg, 7)?;
//! let hp = HyperParams { iters: 500, seed: 7, ..HyperParams::default() };
//! let report = train(&data, &hp)?;
//! let recovery = top1_recovery(&report.weights, &data, &truth)?;
//! assert!((0.0..=1.0).contains(&recovery));
//! # Ok::<(), rmisvm::Error>(())
//! ```
//!
//! Every random choice flows from explicit integer seeds through a portable
//! counter-based generator, so identical inputs reproduce identical models,
//! reports, and files on any platform.

pub mod data;
mod error;
pub mod eval;
pub mod misvm;
pub mod model;
pub mod objective;
mod seed;
pub mod solver;
pub mod synth;

pub use data::{Bag, BagLabel, BagTruth, Dataset, GroundTruth, Instance};
pub use error::Error;
pub use eval::{
    accuracy, detection_rate_curve, kfold_cv, top1_recovery, CvReport, DetectionCurve,
    MilTrainer, MisvmTrainer, RmiTrainer,
};
pub use misvm::{impute_labels, predict_bag_misvm, train_misvm, MisvmConfig};
pub use model::{
    bag_prob, instance_prob, predict_bag, predict_instance, select_top_instances, sigmoid,
    HyperParams, ModelWeights, StepSize,
};
pub use objective::{
    bag_loss, bag_loss_grad, finite_diff_grad, gradient_check, instance_loss,
    instance_loss_grad, objective, per_bag_objective, relative_error, stochastic_grad,
    GradCheckReport, ObjectiveBreakdown, PROB_EPS,
};
pub use solver::{
    project, sgd_step, train, train_traced, SolverState, TrainReport, DEFAULT_TRACE_EVERY,
};
pub use synth::{generate_synthetic, SynthConfig};
