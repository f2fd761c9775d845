//! Random-forest efficiency classifier.
//!
//! Each tree is grown on a bootstrap sample; at every node `mtry` of the six
//! features are drawn and the split minimizing weighted Gini impurity wins.
//! Trees grow until pure, until a child would fall below `min_leaf`, or
//! until `max_depth`.
//!
//! Every tree gets its own RNG seeded from `(seed, tree index)` via
//! [`tree_seed`], so training is deterministic and independent of how the
//! trees are scheduled across threads.

mod metrics;
mod tree;

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clustering::{FeatureVector, FEATURE_DIMS, FEATURE_NAMES};
use crate::telemetry::{DrivingEvent, EfficiencyLabel};
use crate::weather::SeverityOrder;

pub use metrics::{compute_metrics, EvaluationReport, Prediction};
pub use tree::{
    best_split_for_feature, best_split_sorted, gini, DecisionTree, Node, SplitCandidate, TreeParams,
};

use tree::{EFFICIENT, INEFFICIENT};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ClassifierError {
    #[error("training data contains a single class")]
    SingleClassData,
    #[error("{count} unlabeled events in input")]
    UnlabeledData { count: usize },
    #[error("no input")]
    EmptyInput,
    #[error("non-finite feature value")]
    NonFinite,
    #[error("invalid forest parameters: {0}")]
    InvalidParams(String),
    #[error("need at least {folds} samples for {folds}-fold cross-validation, got {n}")]
    TooFewSamples { n: usize, folds: usize },
    #[error("model feature order does not match the 6-feature contract")]
    SchemaMismatch,
    #[error("model schema version {found} not supported (expected {supported})")]
    VersionMismatch { found: u64, supported: u32 },
    #[error("corrupt model file: {0}")]
    CorruptModel(String),
    #[error("I/O: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ForestParams {
    pub ntree: usize,
    pub mtry: usize,
    pub min_leaf: usize,
    pub max_depth: Option<usize>,
    pub seed: u64,
}

impl Default for ForestParams {
    fn default() -> Self {
        ForestParams {
            ntree: 500,
            mtry: 3,
            min_leaf: 1,
            max_depth: None,
            seed: 0,
        }
    }
}

impl ForestParams {
    pub fn validate(&self) -> Result<(), ClassifierError> {
        if self.ntree == 0 {
            return Err(ClassifierError::InvalidParams(
                "ntree must be positive".into(),
            ));
        }
        if self.mtry == 0 || self.mtry > FEATURE_DIMS {
            return Err(ClassifierError::InvalidParams(format!(
                "mtry must be in 1..={FEATURE_DIMS}"
            )));
        }
        if self.min_leaf == 0 {
            return Err(ClassifierError::InvalidParams(
                "min_leaf must be positive".into(),
            ));
        }
        if self.max_depth == Some(0) {
            return Err(ClassifierError::InvalidParams(
                "max_depth must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// SplitMix64 finalizer.
pub fn splitmix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

/// Seed of stream `index`: the `(index + 1)`-th output of a SplitMix64
/// sequence started at `seed`.
pub fn tree_seed(seed: u64, index: u64) -> u64 {
    splitmix64(seed.wrapping_add(GOLDEN_GAMMA.wrapping_mul(index.wrapping_add(1))))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestModel {
    pub schema_version: u32,
    pub params: ForestParams,
    pub feature_order: Vec<String>,
    /// Weather encoding used for the severity feature.
    pub severity_order: SeverityOrder,
    /// Out-of-bag misclassification rate; `None` if no sample was ever
    /// out of bag.
    pub oob_error: Option<f64>,
    pub training_size: usize,
    pub trees: Vec<DecisionTree>,
}

/// Per-tree details not stored in the model.
#[derive(Debug, Clone)]
pub struct TrainingDiagnostics {
    /// Fraction of the training set left out of each tree's bootstrap.
    pub oob_fraction: Vec<f64>,
}

/// Labeled training matrix.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub x: Vec<[f64; FEATURE_DIMS]>,
    /// 0 = efficient, 1 = inefficient
    pub y: Vec<u8>,
}

impl Dataset {
    pub fn from_events(
        events: &[DrivingEvent],
        order: &SeverityOrder,
    ) -> Result<Self, ClassifierError> {
        let unlabeled = events
            .iter()
            .filter(|e| e.label == EfficiencyLabel::Unlabeled)
            .count();
        if unlabeled > 0 {
            return Err(ClassifierError::UnlabeledData { count: unlabeled });
        }
        let x: Vec<[f64; FEATURE_DIMS]> = events
            .iter()
            .map(|e| FeatureVector::from_event(e, order).0)
            .collect();
        let y = events
            .iter()
            .map(|e| u8::from(e.label == EfficiencyLabel::Inefficient))
            .collect();
        Ok(Dataset { x, y })
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    fn subset(&self, idx: &[usize]) -> Dataset {
        Dataset {
            x: idx.iter().map(|&i| self.x[i]).collect(),
            y: idx.iter().map(|&i| self.y[i]).collect(),
        }
    }
}

pub fn train_forest(
    events: &[DrivingEvent],
    params: &ForestParams,
) -> Result<ForestModel, ClassifierError> {
    let order = SeverityOrder::default();
    let data = Dataset::from_events(events, &order)?;
    Ok(train_on(&data, params, order)?.0)
}

/// Trains on a prepared dataset encoded with `order`.
pub fn train_on(
    data: &Dataset,
    params: &ForestParams,
    order: SeverityOrder,
) -> Result<(ForestModel, TrainingDiagnostics), ClassifierError> {
    params.validate()?;
    if data.is_empty() {
        return Err(ClassifierError::EmptyInput);
    }
    if data.x.iter().flatten().any(|v| !v.is_finite()) {
        return Err(ClassifierError::NonFinite);
    }
    if data.y.iter().all(|&c| c == data.y[0]) {
        return Err(ClassifierError::SingleClassData);
    }
    let n = data.len();
    let tree_params = TreeParams {
        mtry: params.mtry,
        min_leaf: params.min_leaf,
        max_depth: params.max_depth,
    };
    let grown: Vec<(DecisionTree, Vec<usize>)> = (0..params.ntree)
        .into_par_iter()
        .map(|t| {
            let mut rng = ChaCha8Rng::seed_from_u64(tree_seed(params.seed, t as u64));
            let mut in_bag = vec![false; n];
            let sample: Vec<usize> = (0..n)
                .map(|_| {
                    let i = rng.gen_range(0..n);
                    in_bag[i] = true;
                    i
                })
                .collect();
            let tree = DecisionTree::fit(&data.x, &data.y, &sample, &tree_params, &mut rng);
            let oob: Vec<usize> = (0..n).filter(|&i| !in_bag[i]).collect();
            (tree, oob)
        })
        .collect();

    let mut votes = vec![[0u32; 2]; n];
    for (tree, oob) in &grown {
        for &i in oob {
            votes[i][tree.vote(&data.x[i])] += 1;
        }
    }
    let mut voted = 0usize;
    let mut wrong = 0usize;
    for (v, &y) in votes.iter().zip(&data.y) {
        if v[0] + v[1] == 0 {
            continue;
        }
        voted += 1;
        if majority(*v) != y as usize {
            wrong += 1;
        }
    }
    let diagnostics = TrainingDiagnostics {
        oob_fraction: grown
            .iter()
            .map(|(_, oob)| oob.len() as f64 / n as f64)
            .collect(),
    };
    let model = ForestModel {
        schema_version: SCHEMA_VERSION,
        params: *params,
        feature_order: FEATURE_NAMES.iter().map(|s| s.to_string()).collect(),
        severity_order: order,
        oob_error: (voted > 0).then(|| wrong as f64 / voted as f64),
        training_size: n,
        trees: grown.into_iter().map(|(t, _)| t).collect(),
    };
    Ok((model, diagnostics))
}

/// Ties go to inefficient.
fn majority(votes: [u32; 2]) -> usize {
    if votes[EFFICIENT] > votes[INEFFICIENT] {
        EFFICIENT
    } else {
        INEFFICIENT
    }
}

fn label_of(class: usize) -> EfficiencyLabel {
    if class == EFFICIENT {
        EfficiencyLabel::Efficient
    } else {
        EfficiencyLabel::Inefficient
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Verdict {
    pub label: EfficiencyLabel,
    /// Winning votes over the number of trees.
    pub vote_fraction: f64,
    /// Inefficient votes over the number of trees.
    pub inefficient_fraction: f64,
}

impl ForestModel {
    fn check_schema(&self) -> Result<(), ClassifierError> {
        if self.feature_order.len() != FEATURE_DIMS
            || self
                .feature_order
                .iter()
                .zip(FEATURE_NAMES)
                .any(|(a, b)| a != b)
        {
            return Err(ClassifierError::SchemaMismatch);
        }
        Ok(())
    }

    pub fn predict_features(&self, features: &FeatureVector) -> Result<Verdict, ClassifierError> {
        self.check_schema()?;
        if !features.is_finite() {
            return Err(ClassifierError::NonFinite);
        }
        if self.trees.is_empty() {
            return Err(ClassifierError::CorruptModel("model has no trees".into()));
        }
        let mut votes = [0u32; 2];
        for t in &self.trees {
            votes[t.vote(&features.0)] += 1;
        }
        let total = self.trees.len() as f64;
        let winner = majority(votes);
        Ok(Verdict {
            label: label_of(winner),
            vote_fraction: votes[winner] as f64 / total,
            inefficient_fraction: votes[INEFFICIENT] as f64 / total,
        })
    }

    pub fn predict(&self, event: &DrivingEvent) -> Result<Verdict, ClassifierError> {
        self.predict_features(&FeatureVector::from_event(event, &self.severity_order))
    }

    pub fn validate(&self) -> Result<(), ClassifierError> {
        if self.trees.is_empty() {
            return Err(ClassifierError::CorruptModel("model has no trees".into()));
        }
        for (i, t) in self.trees.iter().enumerate() {
            t.validate()
                .map_err(|e| ClassifierError::CorruptModel(format!("tree {i}: {e}")))?;
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("model serializes")
    }

    pub fn from_json_slice(bytes: &[u8]) -> Result<Self, ClassifierError> {
        use serde::Deserialize as _;
        let corrupt = |e: serde_json::Error| ClassifierError::CorruptModel(e.to_string());
        let mut de = serde_json::Deserializer::from_slice(bytes);
        de.disable_recursion_limit();
        let value = serde_json::Value::deserialize(&mut de).map_err(corrupt)?;
        de.end().map_err(corrupt)?;
        let version = value
            .get("schema_version")
            .and_then(serde_json::Value::as_u64)
            .ok_or_else(|| ClassifierError::CorruptModel("missing schema_version".into()))?;
        if version != SCHEMA_VERSION as u64 {
            return Err(ClassifierError::VersionMismatch {
                found: version,
                supported: SCHEMA_VERSION,
            });
        }
        let model: ForestModel = serde_json::from_value(value).map_err(corrupt)?;
        model.validate()?;
        Ok(model)
    }
}

pub fn save_model(model: &ForestModel, path: &Path) -> Result<(), ClassifierError> {
    std::fs::write(path, model.to_json())?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<ForestModel, ClassifierError> {
    ForestModel::from_json_slice(&std::fs::read(path)?)
}

/// Assigns each sample to one of `folds` folds, keeping class proportions.
/// Within a class the order is shuffled, then dealt round-robin; the
/// dealing continues across classes so fold sizes differ by at most one.
pub fn stratified_folds(y: &[u8], folds: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut fold_of = vec![0usize; y.len()];
    let mut next = 0usize;
    for class in 0..2u8 {
        let mut members: Vec<usize> = (0..y.len()).filter(|&i| y[i] == class).collect();
        rand::seq::SliceRandom::shuffle(members.as_mut_slice(), &mut rng);
        for i in members {
            fold_of[i] = next % folds;
            next += 1;
        }
    }
    fold_of
}

/// Stratified k-fold cross-validation with predictions pooled over all
/// held-out folds. Fold `f` trains with seed `tree_seed(params.seed, f)`
/// and folds are dealt with `seed`.
pub fn cross_validate(
    data: &Dataset,
    params: &ForestParams,
    folds: usize,
    seed: u64,
    order: &SeverityOrder,
) -> Result<(EvaluationReport, Vec<Prediction>), ClassifierError> {
    if folds < 2 || data.len() < folds {
        return Err(ClassifierError::TooFewSamples {
            n: data.len(),
            folds: folds.max(2),
        });
    }
    let fold_of = stratified_folds(&data.y, folds, seed);
    let mut pooled: Vec<Option<Prediction>> = vec![None; data.len()];
    for f in 0..folds {
        let train_idx: Vec<usize> = (0..data.len()).filter(|&i| fold_of[i] != f).collect();
        let test_idx: Vec<usize> = (0..data.len()).filter(|&i| fold_of[i] == f).collect();
        let fold_params = ForestParams {
            seed: tree_seed(params.seed, f as u64),
            ..*params
        };
        let (model, _) = train_on(&data.subset(&train_idx), &fold_params, order.clone())?;
        for i in test_idx {
            let v = model.predict_features(&FeatureVector(data.x[i]))?;
            pooled[i] = Some(Prediction {
                truth: label_of(data.y[i] as usize),
                predicted: v.label,
                confidence: v.vote_fraction,
            });
        }
    }
    let predictions: Vec<Prediction> = pooled
        .into_iter()
        .map(|p| p.expect("every sample is held out once"))
        .collect();
    Ok((compute_metrics(&predictions)?, predictions))
}
