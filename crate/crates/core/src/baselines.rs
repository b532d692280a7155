//! Token-histogram features and gradient-boosted trees.
//!
//! Boosting follows Friedman's formulation: squared-error trees fit to
//! residuals, with Newton leaf values for the multiclass softmax loss.
//! Training rows are put in a canonical order before fitting and split search
//! is exact over sorted unique values, so a fit depends only on the multiset
//! of training rows and the configuration.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rand::seq::{index, SliceRandom};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{
    extract_motion_tokens, format_prediction, read_json, write_json, DatasetManifest, Split,
    TaskKind,
};
use crate::error::{Error, Result};
use crate::eval::{classification_report, parse_class_answer, parse_numeric_for_task, F1Mode};
use crate::seed::SeedDeriver;

pub const MODEL_FORMAT_VERSION: u32 = 1;
pub const DEFAULT_CHANCE_REPEATS: usize = 10;
pub const DEFAULT_SEARCH_ITERATIONS: usize = 6;
pub const CV_FOLDS: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenHistogram {
    pub values: Vec<f64>,
}

/// Normalized token counts over a codebook of size `k`.
pub fn token_histogram(tokens: &[u32], k: usize) -> Result<TokenHistogram> {
    if tokens.is_empty() {
        return Err(Error::EmptyInput("token sequence is empty".into()));
    }
    let mut counts = vec![0usize; k];
    for &t in tokens {
        let slot = counts
            .get_mut(t as usize)
            .ok_or_else(|| Error::Contract(format!("token {t} outside codebook of size {k}")))?;
        *slot += 1;
    }
    let n = tokens.len() as f64;
    Ok(TokenHistogram {
        values: counts.into_iter().map(|c| c as f64 / n).collect(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GbdtConfig {
    pub rounds: usize,
    pub max_depth: usize,
    pub shrinkage: f64,
    pub min_samples_leaf: usize,
    pub subsample: f64,
    pub seed: u64,
}

impl Default for GbdtConfig {
    fn default() -> Self {
        GbdtConfig {
            rounds: 200,
            max_depth: 3,
            shrinkage: 0.1,
            min_samples_leaf: 5,
            subsample: 1.0,
            seed: 0,
        }
    }
}

impl GbdtConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_depth == 0 || self.min_samples_leaf == 0 {
            return Err(Error::Config(
                "max_depth and min_samples_leaf must be positive".into(),
            ));
        }
        if !(self.shrinkage > 0.0 && self.shrinkage <= 1.0) {
            return Err(Error::Config(format!(
                "shrinkage {} outside (0, 1]",
                self.shrinkage
            )));
        }
        if !(self.subsample > 0.0 && self.subsample <= 1.0) {
            return Err(Error::Config(format!(
                "subsample {} outside (0, 1]",
                self.subsample
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Targets<'a> {
    /// Multiclass logistic objective.
    Classes(&'a [String]),
    /// Squared-error objective.
    Values(&'a [f64]),
}

impl Targets<'_> {
    fn len(&self) -> usize {
        match self {
            Targets::Classes(c) => c.len(),
            Targets::Values(v) => v.len(),
        }
    }

    fn cmp_rows(&self, a: usize, b: usize) -> Ordering {
        match self {
            Targets::Classes(c) => c[a].cmp(&c[b]),
            Targets::Values(v) => v[a].total_cmp(&v[b]),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Node {
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf {
        value: f64,
    },
}

/// Rows with `x[feature] <= threshold` go left. Node 0 is the root.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

impl Tree {
    pub fn predict(&self, x: &[f64]) -> f64 {
        let mut at = 0;
        loop {
            match self.nodes[at] {
                Node::Leaf { value } => return value,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => at = if x[feature] <= threshold { left } else { right },
            }
        }
    }

    /// Number of split levels on the longest root-to-leaf path.
    pub fn depth(&self) -> usize {
        fn walk(t: &Tree, at: usize) -> usize {
            match t.nodes[at] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + walk(t, left).max(walk(t, right)),
            }
        }
        walk(self, 0)
    }

    pub fn split_features(&self) -> impl Iterator<Item = usize> + '_ {
        self.nodes.iter().filter_map(|n| match n {
            Node::Split { feature, .. } => Some(*feature),
            Node::Leaf { .. } => None,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "objective", rename_all = "snake_case")]
pub enum EnsembleKind {
    MulticlassLogistic { classes: Vec<String> },
    SquaredError,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeEnsemble {
    pub format_version: u32,
    pub n_features: usize,
    pub kind: EnsembleKind,
    /// Class log-priors, or the target mean.
    pub base_score: Vec<f64>,
    pub shrinkage: f64,
    /// One tree per class (or a single tree) per round.
    pub rounds: Vec<Vec<Tree>>,
}

fn softmax(raw: &[f64]) -> Vec<f64> {
    let m = raw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = raw.iter().map(|r| (r - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

impl TreeEnsemble {
    pub fn is_classifier(&self) -> bool {
        matches!(self.kind, EnsembleKind::MulticlassLogistic { .. })
    }

    pub fn classes(&self) -> &[String] {
        match &self.kind {
            EnsembleKind::MulticlassLogistic { classes } => classes,
            EnsembleKind::SquaredError => &[],
        }
    }

    fn check_width(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.n_features {
            return Err(Error::Contract(format!(
                "feature vector has {} entries, model expects {}",
                x.len(),
                self.n_features
            )));
        }
        Ok(())
    }

    pub fn predict_raw(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_width(x)?;
        let mut raw = self.base_score.clone();
        for round in &self.rounds {
            for (r, tree) in raw.iter_mut().zip(round) {
                *r += self.shrinkage * tree.predict(x);
            }
        }
        Ok(raw)
    }

    pub fn predict_proba(&self, x: &[f64]) -> Result<Vec<f64>> {
        if !self.is_classifier() {
            return Err(Error::Contract("probabilities need a classifier".into()));
        }
        Ok(softmax(&self.predict_raw(x)?))
    }

    /// Highest-scoring class; ties go to the lexicographically first label.
    pub fn predict_class(&self, x: &[f64]) -> Result<&str> {
        let raw = self.predict_raw(x)?;
        match &self.kind {
            EnsembleKind::MulticlassLogistic { classes } => Ok(&classes[argmax(&raw)]),
            EnsembleKind::SquaredError => Err(Error::Contract("regressor has no classes".into())),
        }
    }

    pub fn predict_value(&self, x: &[f64]) -> Result<f64> {
        match self.kind {
            EnsembleKind::SquaredError => Ok(self.predict_raw(x)?[0]),
            _ => Err(Error::Contract(
                "classifier has no scalar prediction".into(),
            )),
        }
    }

    /// Mean cross-entropy for classifiers, mean squared error for regressors.
    pub fn training_loss(&self, features: &[Vec<f64>], targets: Targets<'_>) -> Result<f64> {
        let n = features.len() as f64;
        let mut total = 0.0;
        match (&self.kind, targets) {
            (EnsembleKind::MulticlassLogistic { classes }, Targets::Classes(labels)) => {
                for (x, y) in features.iter().zip(labels) {
                    let c = classes
                        .iter()
                        .position(|c| c == y)
                        .ok_or_else(|| Error::Contract(format!("unknown label {y:?}")))?;
                    total -= softmax(&self.predict_raw(x)?)[c].max(1e-300).ln();
                }
            }
            (EnsembleKind::SquaredError, Targets::Values(values)) => {
                for (x, y) in features.iter().zip(values) {
                    total += (self.predict_raw(x)?[0] - y).powi(2);
                }
            }
            _ => return Err(Error::Contract("targets do not match the objective".into())),
        }
        Ok(total / n)
    }
}

struct Grower<'a> {
    x: &'a [Vec<f64>],
    n_features: usize,
    max_depth: usize,
    min_leaf: usize,
}

enum LeafRule {
    Mean,
    /// Newton step for a softmax over `classes` outputs.
    Friedman {
        classes: usize,
    },
}

impl Grower<'_> {
    /// `sorted[f]` holds this node's rows ordered by feature `f` (ties by row).
    fn grow(&self, sorted: Vec<Vec<u32>>, residual: &[f64], rule: &LeafRule) -> Tree {
        let mut tree = Tree { nodes: Vec::new() };
        self.node(&mut tree, sorted, residual, rule, 0);
        tree
    }

    fn leaf_value(&self, rows: &[u32], residual: &[f64], rule: &LeafRule) -> f64 {
        match rule {
            LeafRule::Mean => {
                rows.iter().map(|&r| residual[r as usize]).sum::<f64>() / rows.len() as f64
            }
            LeafRule::Friedman { classes } => {
                let (mut num, mut den) = (0.0, 0.0);
                for &r in rows {
                    let g = residual[r as usize];
                    num += g;
                    den += g.abs() * (1.0 - g.abs());
                }
                if den < 1e-12 {
                    0.0
                } else {
                    let k = *classes as f64;
                    (k - 1.0) / k * num / den
                }
            }
        }
    }

    fn best_split(&self, sorted: &[Vec<u32>], residual: &[f64]) -> Option<(usize, f64)> {
        let rows = &sorted[0];
        let n = rows.len();
        if n < 2 * self.min_leaf {
            return None;
        }
        let total: f64 = rows.iter().map(|&r| residual[r as usize]).sum();
        let parent = total * total / n as f64;
        let mut best: Option<(usize, f64, f64)> = None;
        for (f, order) in sorted.iter().enumerate() {
            let mut left = 0.0;
            for i in 0..n - 1 {
                let r = order[i] as usize;
                left += residual[r];
                let nl = i + 1;
                if nl < self.min_leaf || n - nl < self.min_leaf {
                    continue;
                }
                let v = self.x[r][f];
                let next = self.x[order[i + 1] as usize][f];
                if v == next {
                    continue;
                }
                let right = total - left;
                let gain = left * left / nl as f64 + right * right / (n - nl) as f64 - parent;
                if gain > 1e-12 && best.is_none_or(|b| gain > b.2) {
                    best = Some((f, 0.5 * (v + next), gain));
                }
            }
        }
        best.map(|(f, t, _)| (f, t))
    }

    fn node(
        &self,
        tree: &mut Tree,
        sorted: Vec<Vec<u32>>,
        residual: &[f64],
        rule: &LeafRule,
        depth: usize,
    ) -> usize {
        let id = tree.nodes.len();
        let split = if depth < self.max_depth {
            self.best_split(&sorted, residual)
        } else {
            None
        };
        let Some((feature, threshold)) = split else {
            let value = self.leaf_value(&sorted[0], residual, rule);
            tree.nodes.push(Node::Leaf { value });
            return id;
        };
        tree.nodes.push(Node::Leaf { value: 0.0 });
        let goes_left = |r: u32| self.x[r as usize][feature] <= threshold;
        let (mut ls, mut rs) = (
            Vec::with_capacity(self.n_features),
            Vec::with_capacity(self.n_features),
        );
        for order in sorted {
            let (l, r): (Vec<u32>, Vec<u32>) = order.into_iter().partition(|&r| goes_left(r));
            ls.push(l);
            rs.push(r);
        }
        let left = self.node(tree, ls, residual, rule, depth + 1);
        let right = self.node(tree, rs, residual, rule, depth + 1);
        tree.nodes[id] = Node::Split {
            feature,
            threshold,
            left,
            right,
        };
        id
    }
}

fn canonical_order(features: &[Vec<f64>], targets: Targets<'_>) -> Vec<usize> {
    let mut order: Vec<usize> = (0..features.len()).collect();
    order.sort_by(|&a, &b| {
        features[a]
            .iter()
            .zip(&features[b])
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| o.is_ne())
            .unwrap_or(Ordering::Equal)
            .then_with(|| targets.cmp_rows(a, b))
    });
    order
}

/// Fits a boosted ensemble; the objective follows from the target kind.
pub fn fit_gbdt(
    features: &[Vec<f64>],
    targets: Targets<'_>,
    config: &GbdtConfig,
) -> Result<TreeEnsemble> {
    config.validate()?;
    if features.len() != targets.len() {
        return Err(Error::Contract(format!(
            "{} feature rows for {} targets",
            features.len(),
            targets.len()
        )));
    }
    if features.len() < 2 {
        return Err(Error::InsufficientData(
            "boosting needs at least two samples".into(),
        ));
    }
    let n_features = features[0].len();
    if n_features == 0 || features.iter().any(|f| f.len() != n_features) {
        return Err(Error::Contract(
            "feature rows must share a positive width".into(),
        ));
    }
    if features.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::Contract("features must be finite".into()));
    }

    let order = canonical_order(features, targets);
    let x: Vec<Vec<f64>> = order.iter().map(|&i| features[i].clone()).collect();
    let n = x.len();
    let presorted: Vec<Vec<u32>> = (0..n_features)
        .map(|f| {
            let mut idx: Vec<u32> = (0..n as u32).collect();
            idx.sort_by(|&a, &b| {
                x[a as usize][f]
                    .total_cmp(&x[b as usize][f])
                    .then(a.cmp(&b))
            });
            idx
        })
        .collect();
    let grower = Grower {
        x: &x,
        n_features,
        max_depth: config.max_depth,
        min_leaf: config.min_samples_leaf,
    };
    let n_sub = ((config.subsample * n as f64).round() as usize).clamp(1, n);
    let round_rows = |round: usize| -> Vec<Vec<u32>> {
        if n_sub == n {
            return presorted.clone();
        }
        let mut rng = SeedDeriver::new(config.seed)
            .str("subsample")
            .int(round as u64)
            .rng();
        let mut keep = vec![false; n];
        for i in index::sample(&mut rng, n, n_sub) {
            keep[i] = true;
        }
        presorted
            .iter()
            .map(|o| o.iter().copied().filter(|&r| keep[r as usize]).collect())
            .collect()
    };

    match targets {
        Targets::Classes(labels) => {
            let labels: Vec<&String> = order.iter().map(|&i| &labels[i]).collect();
            let classes: Vec<String> = labels
                .iter()
                .map(|s| s.to_string())
                .collect::<BTreeSet<_>>()
                .into_iter()
                .collect();
            let k = classes.len();
            let y: Vec<usize> = labels
                .iter()
                .map(|l| classes.binary_search(l).expect("class present"))
                .collect();
            let base_score: Vec<f64> = (0..k)
                .map(|c| (y.iter().filter(|&&v| v == c).count() as f64 / n as f64).ln())
                .collect();
            let mut raw: Vec<Vec<f64>> = vec![base_score.clone(); n];
            let mut rounds = Vec::with_capacity(config.rounds);
            let rule = LeafRule::Friedman { classes: k };
            for round in 0..config.rounds {
                let probs: Vec<Vec<f64>> = raw.iter().map(|r| softmax(r)).collect();
                let sorted = round_rows(round);
                let mut trees = Vec::with_capacity(k);
                for c in 0..k {
                    let residual: Vec<f64> = (0..n)
                        .map(|i| f64::from(u8::from(y[i] == c)) - probs[i][c])
                        .collect();
                    trees.push(grower.grow(sorted.clone(), &residual, &rule));
                }
                for (xi, ri) in x.iter().zip(raw.iter_mut()) {
                    for (r, t) in ri.iter_mut().zip(&trees) {
                        *r += config.shrinkage * t.predict(xi);
                    }
                }
                rounds.push(trees);
            }
            Ok(TreeEnsemble {
                format_version: MODEL_FORMAT_VERSION,
                n_features,
                kind: EnsembleKind::MulticlassLogistic { classes },
                base_score,
                shrinkage: config.shrinkage,
                rounds,
            })
        }
        Targets::Values(values) => {
            if values.iter().any(|v| !v.is_finite()) {
                return Err(Error::Contract("targets must be finite".into()));
            }
            let y: Vec<f64> = order.iter().map(|&i| values[i]).collect();
            let mean = y.iter().sum::<f64>() / n as f64;
            let mut pred = vec![mean; n];
            let mut rounds = Vec::with_capacity(config.rounds);
            for round in 0..config.rounds {
                let residual: Vec<f64> = y.iter().zip(&pred).map(|(a, b)| a - b).collect();
                let tree = grower.grow(round_rows(round), &residual, &LeafRule::Mean);
                for (xi, p) in x.iter().zip(pred.iter_mut()) {
                    *p += config.shrinkage * tree.predict(xi);
                }
                rounds.push(vec![tree]);
            }
            Ok(TreeEnsemble {
                format_version: MODEL_FORMAT_VERSION,
                n_features,
                kind: EnsembleKind::SquaredError,
                base_score: vec![mean],
                shrinkage: config.shrinkage,
                rounds,
            })
        }
    }
}

/// F1 of a classifier on labelled rows, scored like the eval module.
pub fn score_classifier(
    model: &TreeEnsemble,
    features: &[Vec<f64>],
    labels: &[String],
    mode: F1Mode<'_>,
) -> Result<f64> {
    let preds = features
        .iter()
        .map(|x| model.predict_class(x).map(|c| Some(c.to_string())))
        .collect::<Result<Vec<_>>>()?;
    let mut vocab: BTreeSet<&str> = labels.iter().map(|s| s.as_str()).collect();
    vocab.extend(model.classes().iter().map(|s| s.as_str()));
    if let F1Mode::Positive(p) = mode {
        vocab.insert(p);
    }
    let vocab: Vec<&str> = vocab.into_iter().collect();
    Ok(classification_report(&preds, labels, &vocab, mode)?.f1)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchSpace {
    pub rounds: (usize, usize),
    pub max_depth: (usize, usize),
    /// Sampled log-uniformly.
    pub shrinkage: (f64, f64),
    pub min_samples_leaf: (usize, usize),
    pub subsample: (f64, f64),
    pub n_iterations: usize,
    pub seed: u64,
}

impl SearchSpace {
    pub fn new(n_iterations: usize, seed: u64) -> Self {
        SearchSpace {
            rounds: (60, 300),
            max_depth: (2, 4),
            shrinkage: (0.03, 0.3),
            min_samples_leaf: (2, 10),
            subsample: (0.6, 1.0),
            n_iterations,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.n_iterations >= 1
            && self.rounds.0 <= self.rounds.1
            && self.max_depth.0 <= self.max_depth.1
            && self.max_depth.0 >= 1
            && self.min_samples_leaf.0 <= self.min_samples_leaf.1
            && self.min_samples_leaf.0 >= 1
            && 0.0 < self.shrinkage.0
            && self.shrinkage.0 <= self.shrinkage.1
            && self.shrinkage.1 <= 1.0
            && 0.0 < self.subsample.0
            && self.subsample.0 <= self.subsample.1
            && self.subsample.1 <= 1.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid search space {self:?}")))
        }
    }

    /// Candidate 0 is the default configuration.
    pub fn candidates(&self) -> Result<Vec<GbdtConfig>> {
        self.validate()?;
        let mut rng = SeedDeriver::new(self.seed).str("search").rng();
        let mut out = vec![GbdtConfig {
            seed: self.seed,
            ..GbdtConfig::default()
        }];
        for i in 1..self.n_iterations {
            let (lo, hi) = self.shrinkage;
            out.push(GbdtConfig {
                rounds: rng.random_range(self.rounds.0..=self.rounds.1),
                max_depth: rng.random_range(self.max_depth.0..=self.max_depth.1),
                shrinkage: (lo.ln() + rng.random::<f64>() * (hi.ln() - lo.ln())).exp(),
                min_samples_leaf: rng
                    .random_range(self.min_samples_leaf.0..=self.min_samples_leaf.1),
                subsample: self.subsample.0
                    + rng.random::<f64>() * (self.subsample.1 - self.subsample.0),
                seed: SeedDeriver::new(self.seed).int(i as u64).finish(),
            });
        }
        Ok(out)
    }
}

/// Fold index per sample: each class is shuffled and dealt round-robin, so
/// every training fold must still see every class.
pub fn stratified_folds(labels: &[String], folds: usize, seed: u64) -> Result<Vec<usize>> {
    if folds < 2 {
        return Err(Error::Config("need at least two folds".into()));
    }
    let mut by_class: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, l) in labels.iter().enumerate() {
        by_class.entry(l).or_default().push(i);
    }
    let mut rng = SeedDeriver::new(seed).str("folds").rng();
    let mut assignment = vec![0usize; labels.len()];
    let mut next = 0usize;
    for (class, mut idx) in by_class {
        if idx.len() < 2 {
            return Err(Error::FoldConstruction(format!(
                "class {class:?} has {} sample(s); every training fold needs it",
                idx.len()
            )));
        }
        idx.shuffle(&mut rng);
        for i in idx {
            assignment[i] = next % folds;
            next += 1;
        }
    }
    for held in 0..folds {
        let in_train: BTreeSet<&str> = labels
            .iter()
            .zip(&assignment)
            .filter(|(_, &f)| f != held)
            .map(|(l, _)| l.as_str())
            .collect();
        let all: BTreeSet<&str> = labels.iter().map(|l| l.as_str()).collect();
        if in_train != all {
            return Err(Error::FoldConstruction(format!(
                "training fold without held-out fold {held} misses a class"
            )));
        }
    }
    Ok(assignment)
}

/// Mean held-out F1 over the given fold assignment.
pub fn cross_val_score(
    features: &[Vec<f64>],
    labels: &[String],
    assignment: &[usize],
    folds: usize,
    mode: F1Mode<'_>,
    config: &GbdtConfig,
) -> Result<f64> {
    let mut total = 0.0;
    for held in 0..folds {
        let pick = |want: bool| -> (Vec<Vec<f64>>, Vec<String>) {
            features
                .iter()
                .zip(labels)
                .zip(assignment)
                .filter(|(_, &f)| (f == held) == want)
                .map(|((x, y), _)| (x.clone(), y.clone()))
                .unzip()
        };
        let (tx, ty) = pick(false);
        let (vx, vy) = pick(true);
        let model = fit_gbdt(&tx, Targets::Classes(&ty), config)?;
        total += score_classifier(&model, &vx, &vy, mode)?;
    }
    Ok(total / folds as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchResult {
    pub best_config: GbdtConfig,
    pub cv_score: f64,
    /// Mean fold F1 per candidate, in candidate order.
    pub candidate_scores: Vec<f64>,
}

/// Randomized search over `space` by stratified k-fold mean F1; ties keep
/// the earlier candidate.
pub fn randomized_search_cv(
    features: &[Vec<f64>],
    labels: &[String],
    space: &SearchSpace,
    folds: usize,
    mode: F1Mode<'_>,
) -> Result<SearchResult> {
    let candidates = space.candidates()?;
    let assignment = stratified_folds(labels, folds, space.seed)?;
    let mut scores = Vec::with_capacity(candidates.len());
    for c in &candidates {
        scores.push(cross_val_score(
            features,
            labels,
            &assignment,
            folds,
            mode,
            c,
        )?);
    }
    let best = argmax(&scores);
    Ok(SearchResult {
        best_config: candidates[best],
        cv_score: scores[best],
        candidate_scores: scores,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ChanceShuffle {
    Uniform,
    /// Keeps labels in place; only meant for tests.
    Identity,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChanceData<'a> {
    pub train_x: &'a [Vec<f64>],
    pub train_y: &'a [String],
    pub test_x: &'a [Vec<f64>],
    pub test_y: &'a [String],
}

/// Mean held-out F1 of classifiers trained on permuted training labels.
pub fn chance_baseline(
    data: &ChanceData<'_>,
    config: &GbdtConfig,
    mode: F1Mode<'_>,
    seed: u64,
    repeats: usize,
    shuffle: ChanceShuffle,
) -> Result<f64> {
    if repeats == 0 {
        return Err(Error::Config(
            "chance baseline needs at least one repeat".into(),
        ));
    }
    let mut total = 0.0;
    for r in 0..repeats {
        let mut labels = data.train_y.to_vec();
        if shuffle == ChanceShuffle::Uniform {
            let mut rng = SeedDeriver::new(seed).str("chance").int(r as u64).rng();
            labels.shuffle(&mut rng);
        }
        let model = fit_gbdt(data.train_x, Targets::Classes(&labels), config)?;
        total += score_classifier(&model, data.test_x, data.test_y, mode)?;
    }
    Ok(total / repeats as f64)
}

/// Histogram features and parsed labels of one task, split by participant.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TaskExamples {
    pub train_x: Vec<Vec<f64>>,
    pub train_y: Vec<String>,
    pub test_x: Vec<Vec<f64>>,
    pub test_y: Vec<String>,
}

impl TaskExamples {
    pub fn values(labels: &[String], task: TaskKind) -> Result<Vec<f64>> {
        labels
            .iter()
            .map(|l| {
                parse_numeric_for_task(task, l)
                    .ok_or_else(|| Error::Contract(format!("unparseable {task} answer {l:?}")))
            })
            .collect()
    }
}

/// Groups dataset samples by task. Labels are the canonical answer texts.
pub fn examples_from_dataset(
    manifest: &DatasetManifest,
    codebook_size: usize,
) -> Result<BTreeMap<TaskKind, TaskExamples>> {
    let mut samples: Vec<_> = manifest.samples.iter().collect();
    samples.sort_by(|a, b| (a.task_kind, &a.trial_id).cmp(&(b.task_kind, &b.trial_id)));
    let mut out: BTreeMap<TaskKind, TaskExamples> = BTreeMap::new();
    for s in samples {
        let tokens = extract_motion_tokens(&s.prompt_text)?;
        let x = token_histogram(&tokens, codebook_size)?.values;
        let y = if s.task_kind.is_classification() {
            parse_class_answer(&s.answer_text, s.task_kind.vocabulary()).ok_or_else(|| {
                Error::Contract(format!(
                    "unparseable {} answer {:?}",
                    s.task_kind, s.answer_text
                ))
            })?
        } else {
            s.answer_text.clone()
        };
        let e = out.entry(s.task_kind).or_default();
        match s.split {
            Split::Train => {
                e.train_x.push(x);
                e.train_y.push(y);
            }
            Split::Test => {
                e.test_x.push(x);
                e.test_y.push(y);
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineModel {
    pub format_version: u32,
    pub task: TaskKind,
    pub codebook_size: usize,
    pub config: GbdtConfig,
    pub search: Option<SearchResult>,
    /// Why the search was skipped, when it was.
    pub search_note: Option<String>,
    pub chance_f1: Option<f64>,
    pub ensemble: TreeEnsemble,
}

impl BaselineModel {
    pub fn predict_features(&self, x: &[f64]) -> Result<String> {
        if self.task.is_classification() {
            Ok(self.ensemble.predict_class(x)?.to_string())
        } else {
            let v = self.ensemble.predict_value(x)?;
            format_prediction(self.task, v)
                .ok_or_else(|| Error::Contract(format!("{} has no numeric format", self.task)))
        }
    }

    /// Formatted answer for a token sequence.
    pub fn predict_answer(&self, tokens: &[u32]) -> Result<String> {
        self.predict_features(&token_histogram(tokens, self.codebook_size)?.values)
    }

    pub fn file_name(task: TaskKind) -> String {
        format!("{}.json", task.name())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_json(path, self)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let m: BaselineModel = read_json(path)?;
        if m.format_version != MODEL_FORMAT_VERSION {
            return Err(Error::Contract(format!(
                "{}: model format {} (expected {MODEL_FORMAT_VERSION})",
                path.display(),
                m.format_version
            )));
        }
        Ok(m)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOptions {
    pub codebook_size: usize,
    pub search_iterations: usize,
    pub chance_repeats: usize,
    pub seed: u64,
}

impl TrainOptions {
    pub fn new(codebook_size: usize, seed: u64) -> Self {
        TrainOptions {
            codebook_size,
            search_iterations: DEFAULT_SEARCH_ITERATIONS,
            chance_repeats: DEFAULT_CHANCE_REPEATS,
            seed,
        }
    }
}

/// Trains one task. Classifiers are tuned by randomized search (falling back
/// to the default configuration when folds cannot be built) and get a chance
/// estimate; regressors use the default configuration.
pub fn train_task(
    task: TaskKind,
    examples: &TaskExamples,
    options: &TrainOptions,
    mut progress: impl FnMut(&str),
) -> Result<BaselineModel> {
    let task_seed = SeedDeriver::new(options.seed).str(task.name()).finish();
    let default = GbdtConfig {
        seed: task_seed,
        ..GbdtConfig::default()
    };
    if examples.train_x.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "{task}: {} training samples",
            examples.train_x.len()
        )));
    }
    if !task.is_classification() {
        let values = TaskExamples::values(&examples.train_y, task)?;
        let ensemble = fit_gbdt(&examples.train_x, Targets::Values(&values), &default)?;
        return Ok(BaselineModel {
            format_version: MODEL_FORMAT_VERSION,
            task,
            codebook_size: options.codebook_size,
            config: default,
            search: None,
            search_note: None,
            chance_f1: None,
            ensemble,
        });
    }
    let mode = F1Mode::for_task(task);
    let space = SearchSpace::new(options.search_iterations, task_seed);
    let (config, search, search_note) =
        match randomized_search_cv(&examples.train_x, &examples.train_y, &space, CV_FOLDS, mode) {
            Ok(r) => (r.best_config, Some(r), None),
            Err(Error::FoldConstruction(why)) => {
                progress(&format!("{task}: search skipped ({why})"));
                (default, None, Some(why))
            }
            Err(e) => return Err(e),
        };
    if let Some(s) = &search {
        progress(&format!("{task}: cv F1 {:.4}", s.cv_score));
    }
    let ensemble = fit_gbdt(
        &examples.train_x,
        Targets::Classes(&examples.train_y),
        &config,
    )?;
    let chance_f1 = if examples.test_x.is_empty() {
        None
    } else {
        let data = ChanceData {
            train_x: &examples.train_x,
            train_y: &examples.train_y,
            test_x: &examples.test_x,
            test_y: &examples.test_y,
        };
        Some(chance_baseline(
            &data,
            &config,
            mode,
            task_seed,
            options.chance_repeats,
            ChanceShuffle::Uniform,
        )?)
    };
    Ok(BaselineModel {
        format_version: MODEL_FORMAT_VERSION,
        task,
        codebook_size: options.codebook_size,
        config,
        search,
        search_note,
        chance_f1,
        ensemble,
    })
}
