//! Privileged-label saddle-point training for multi-label linear models.
//!
//! `T` linear scorers `w_l` are trained so the ranking hinge losses of a
//! privileged subset of labels shrink while every other label's loss stays
//! within a slack `epsilon` of the loss of a fixed prior model. The
//! constrained problem is handled through its Lagrangian: dual ascent on
//! the nonnegative multipliers alternates with subgradient descent on the
//! weights, dual step first.
//!
//! The per-label loss averages, over instances carrying the label, the
//! mean hinge margin against that instance's *confusing set*: the negative
//! labels whose current score meets or beats the true label's score.
//! Membership already implies the hinge argument is at least 1, so the
//! loss is accumulated without a clamp; tests re-check the clamped form.
//!
//! All reductions run in a fixed order (instances outer, labels inner) so
//! traces are bit-reproducible.

use crate::error::{Error, Result};
use crate::linalg::DenseMatrix;

/// Instances with a signed label matrix, entries exactly +1 or -1.
#[derive(Debug, Clone)]
pub struct MultiLabelDataset {
    features: DenseMatrix,
    /// Row-major n x t signs.
    labels: Vec<i8>,
    n: usize,
    t: usize,
    m: usize,
}

impl MultiLabelDataset {
    pub fn new(features: DenseMatrix, labels: Vec<i8>) -> Result<Self> {
        let n = features.rows();
        let m = features.cols();
        if n == 0 {
            return Err(Error::Data("dataset needs at least one instance".into()));
        }
        if !labels.len().is_multiple_of(n) {
            return Err(Error::Data("label matrix does not tile instances".into()));
        }
        let t = labels.len() / n;
        if t < 2 {
            return Err(Error::Data(
                "need at least 2 labels (the normalizer uses log T)".into(),
            ));
        }
        if labels.iter().any(|&y| y != 1 && y != -1) {
            return Err(Error::Data("label entries must be exactly +1 or -1".into()));
        }
        Ok(Self {
            features,
            labels,
            n,
            t,
            m,
        })
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn label_count(&self) -> usize {
        self.t
    }

    #[inline]
    pub fn feature_dim(&self) -> usize {
        self.m
    }

    #[inline]
    pub fn feature_row(&self, i: usize) -> &[f64] {
        self.features.row(i)
    }

    #[inline]
    pub fn sign(&self, i: usize, l: usize) -> i8 {
        self.labels[i * self.t + l]
    }

    pub fn signs_row(&self, i: usize) -> &[i8] {
        &self.labels[i * self.t..(i + 1) * self.t]
    }

    /// 1 / (n ln T).
    pub fn normalizer(&self) -> f64 {
        1.0 / (self.n as f64 * (self.t as f64).ln())
    }
}

/// Disjoint split of label indices into privileged set and complement.
#[derive(Debug, Clone)]
pub struct PrivilegedPartition {
    privileged: Vec<usize>,
    complement: Vec<usize>,
}

impl PrivilegedPartition {
    /// Build from the privileged indices; the complement is derived.
    pub fn new(t: usize, privileged: &[usize]) -> Result<Self> {
        let mut seen = vec![false; t];
        for &l in privileged {
            if l >= t {
                return Err(Error::Data(format!("privileged label {l} out of range")));
            }
            if seen[l] {
                return Err(Error::Data(format!("privileged label {l} repeated")));
            }
            seen[l] = true;
        }
        let mut p: Vec<usize> = privileged.to_vec();
        p.sort_unstable();
        let complement = (0..t).filter(|&l| !seen[l]).collect();
        Ok(Self {
            privileged: p,
            complement,
        })
    }

    pub fn privileged(&self) -> &[usize] {
        &self.privileged
    }

    pub fn complement(&self) -> &[usize] {
        &self.complement
    }
}

/// Which dual update to run; see [`LabelModelBank::dual_step`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DualRule {
    /// Exact ascent on the Lagrangian: the residual uses the normalized
    /// per-label losses and the slack as-is.
    #[default]
    ExactAscent,
    /// Alternative update over raw (unnormalized) hinge sums: the current
    /// and prior hinge sums are differenced with the confusing sets held
    /// at the current weights, and the slack is scaled by 1/(n ln T)
    /// along with them. Dimensionally inconsistent with the constraint;
    /// kept for comparison.
    RawHingeSums,
}

/// Step-size schedule for the primal update.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum StepSchedule {
    #[default]
    Constant,
    /// eta_t = eta / sqrt(t), t starting at 1.
    InvSqrt,
}

/// How to initialize the trainable weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum WeightInit {
    /// Start at the prior, so every constraint begins satisfied with
    /// residual exactly -epsilon.
    #[default]
    Prior,
    Zero,
}

#[derive(Debug, Clone)]
pub struct SaddleParams {
    pub epsilon: f64,
    pub mu: f64,
    pub eta: f64,
    pub dual_rule: DualRule,
    pub init: WeightInit,
}

/// Current weights, fixed prior weights, and the dual state.
#[derive(Debug, Clone)]
pub struct LabelModelBank {
    weights: DenseMatrix,
    prior: DenseMatrix,
    partition: PrivilegedPartition,
    /// One multiplier per complement label, in `partition.complement()` order.
    lambda: Vec<f64>,
    /// f_l at the prior, all labels, cached at construction.
    prior_losses: Vec<f64>,
    params: SaddleParams,
}

impl LabelModelBank {
    pub fn new(
        prior: DenseMatrix,
        partition: PrivilegedPartition,
        data: &MultiLabelDataset,
        params: SaddleParams,
    ) -> Result<Self> {
        if prior.rows() != data.label_count() || prior.cols() != data.feature_dim() {
            return Err(Error::shape(format!(
                "prior is {}x{}, expected {}x{}",
                prior.rows(),
                prior.cols(),
                data.label_count(),
                data.feature_dim()
            )));
        }
        if params.epsilon < 0.0 {
            return Err(Error::InvalidConfig("epsilon must be >= 0".into()));
        }
        if params.mu <= 0.0 || params.eta <= 0.0 {
            return Err(Error::InvalidConfig("step sizes must be > 0".into()));
        }
        let weights = match params.init {
            WeightInit::Prior => prior.clone(),
            WeightInit::Zero => DenseMatrix::zeros(prior.rows(), prior.cols()),
        };
        let prior_losses = all_label_losses(&prior, data);
        let lambda = vec![0.0; partition.complement().len()];
        Ok(Self {
            weights,
            prior,
            partition,
            lambda,
            prior_losses,
            params,
        })
    }

    pub fn weights(&self) -> &DenseMatrix {
        &self.weights
    }

    /// Replace the trainable weights; shape must match the prior.
    pub fn set_weights(&mut self, weights: DenseMatrix) -> Result<()> {
        if weights.rows() != self.prior.rows() || weights.cols() != self.prior.cols() {
            return Err(Error::shape("weight shape must match the prior"));
        }
        self.weights = weights;
        Ok(())
    }

    /// Pin the dual vector; length must match the complement set.
    pub fn set_lambda(&mut self, lambda: &[f64]) -> Result<()> {
        if lambda.len() != self.partition.complement().len() {
            return Err(Error::shape("lambda length must match the complement"));
        }
        if lambda.iter().any(|&l| l < 0.0) {
            return Err(Error::InvalidConfig("lambda must be nonnegative".into()));
        }
        self.lambda.copy_from_slice(lambda);
        Ok(())
    }

    pub fn prior(&self) -> &DenseMatrix {
        &self.prior
    }

    pub fn partition(&self) -> &PrivilegedPartition {
        &self.partition
    }

    pub fn lambda(&self) -> &[f64] {
        &self.lambda
    }

    pub fn prior_losses(&self) -> &[f64] {
        &self.prior_losses
    }

    pub fn params(&self) -> &SaddleParams {
        &self.params
    }

    /// The Lagrangian at the current (weights, lambda).
    pub fn lagrangian(&self, data: &MultiLabelDataset) -> f64 {
        let losses = all_label_losses(&self.weights, data);
        let mut value = 0.0;
        for &l in self.partition.privileged() {
            value += losses[l];
        }
        for (idx, &k) in self.partition.complement().iter().enumerate() {
            value += self.lambda[idx] * (losses[k] - self.prior_losses[k] - self.params.epsilon);
        }
        value
    }

    /// Gradient of the Lagrangian with respect to the weight matrix.
    ///
    /// Accumulated instance-major so the summation order is reproducible:
    /// for each instance and each of its true labels `l` with a nonempty
    /// confusing set, the diagonal term pushes `w_l` along `-x_i` and each
    /// confusing label `k` receives `+x_i / |S_il|`, both scaled by the
    /// label's weight in the Lagrangian (1 on the privileged set, the
    /// multiplier on the complement).
    pub fn primal_gradient(&self, data: &MultiLabelDataset) -> DenseMatrix {
        let t = data.label_count();
        let mut coeff = vec![0.0f64; t];
        for &l in self.partition.privileged() {
            coeff[l] = 1.0;
        }
        for (idx, &k) in self.partition.complement().iter().enumerate() {
            coeff[k] = self.lambda[idx];
        }

        let norm = data.normalizer();
        let mut grad = DenseMatrix::zeros(t, data.feature_dim());
        for i in 0..data.n() {
            let x = data.feature_row(i);
            let scores = score_row(&self.weights, x);
            for l in 0..t {
                if data.sign(i, l) <= 0 || coeff[l] == 0.0 {
                    continue;
                }
                let confusing = confusing_from_scores(data.signs_row(i), &scores, l);
                if confusing.is_empty() {
                    continue;
                }
                let scale = coeff[l] * norm;
                let row = grad.row_mut(l);
                for (g, &xv) in row.iter_mut().zip(x) {
                    *g -= scale * xv;
                }
                let share = scale / confusing.len() as f64;
                for &k in &confusing {
                    let row = grad.row_mut(k);
                    for (g, &xv) in row.iter_mut().zip(x) {
                        *g += share * xv;
                    }
                }
            }
        }
        grad
    }

    /// One dual ascent step on every complement multiplier, projected onto
    /// the nonnegative orthant. `losses` are the current per-label losses.
    fn dual_step_with(&mut self, losses: &[f64], data: &MultiLabelDataset) {
        match self.params.dual_rule {
            DualRule::ExactAscent => {
                for (idx, &k) in self.partition.complement().iter().enumerate() {
                    let residual = losses[k] - self.prior_losses[k] - self.params.epsilon;
                    self.lambda[idx] = (self.lambda[idx] + self.params.mu * residual).max(0.0);
                }
            }
            DualRule::RawHingeSums => {
                let raw = self.raw_hinge_deltas(data);
                let norm = data.normalizer();
                for (idx, _) in self.partition.complement().iter().enumerate() {
                    let step = self.params.mu * norm * (raw[idx] - self.params.epsilon);
                    self.lambda[idx] = (self.lambda[idx] + step).max(0.0);
                }
            }
        }
    }

    /// One projected dual ascent step; recomputes the current losses.
    pub fn dual_step(&mut self, data: &MultiLabelDataset) {
        let losses = all_label_losses(&self.weights, data);
        self.dual_step_with(&losses, data);
    }

    /// Unnormalized hinge-sum differences of the raw-sum update: confusing
    /// sets taken at the current weights, prior hinges clamped at zero.
    fn raw_hinge_deltas(&self, data: &MultiLabelDataset) -> Vec<f64> {
        self.partition
            .complement()
            .iter()
            .map(|&l| {
                let mut total = 0.0;
                for i in 0..data.n() {
                    if data.sign(i, l) <= 0 {
                        continue;
                    }
                    let x = data.feature_row(i);
                    let scores = score_row(&self.weights, x);
                    let confusing = confusing_from_scores(data.signs_row(i), &scores, l);
                    if confusing.is_empty() {
                        continue;
                    }
                    let prior_scores = score_row(&self.prior, x);
                    let mut inner = 0.0;
                    for &k in &confusing {
                        let current = 1.0 - scores[l] + scores[k];
                        let prior = (1.0 - prior_scores[l] + prior_scores[k]).max(0.0);
                        inner += current - prior;
                    }
                    total += inner / confusing.len() as f64;
                }
                total
            })
            .collect()
    }

    /// One subgradient descent step on the weights.
    pub fn primal_step(&mut self, data: &MultiLabelDataset, eta: f64) {
        let grad = self.primal_gradient(data);
        self.weights.add_scaled(&grad, -eta);
    }

    /// Alternate dual and primal steps (dual first) for `iters` iterations.
    pub fn solve(
        &mut self,
        data: &MultiLabelDataset,
        iters: usize,
        schedule: StepSchedule,
    ) -> Result<SaddleTrace> {
        self.run(data, iters, schedule, None)
    }

    /// Like [`solve`](Self::solve) but with the multipliers pinned to
    /// `fixed_lambda`; no dual step runs.
    pub fn solve_fixed_lambda(
        &mut self,
        data: &MultiLabelDataset,
        fixed_lambda: &[f64],
        iters: usize,
        schedule: StepSchedule,
    ) -> Result<SaddleTrace> {
        if fixed_lambda.len() != self.partition.complement().len() {
            return Err(Error::shape("fixed lambda length must match complement"));
        }
        if fixed_lambda.iter().any(|&v| v < 0.0) {
            return Err(Error::InvalidConfig("fixed lambda must be >= 0".into()));
        }
        self.run(data, iters, schedule, Some(fixed_lambda))
    }

    fn run(
        &mut self,
        data: &MultiLabelDataset,
        iters: usize,
        schedule: StepSchedule,
        fixed_lambda: Option<&[f64]>,
    ) -> Result<SaddleTrace> {
        if iters == 0 {
            return Err(Error::InvalidConfig("solve needs iters >= 1".into()));
        }
        if let Some(fixed) = fixed_lambda {
            self.lambda.copy_from_slice(fixed);
        }
        let mut trace = SaddleTrace::default();
        let mut losses = all_label_losses(&self.weights, data);
        for t in 1..=iters {
            match fixed_lambda {
                Some(_) => {}
                None => self.dual_step_with(&losses, data),
            }
            let eta = match schedule {
                StepSchedule::Constant => self.params.eta,
                StepSchedule::InvSqrt => self.params.eta / (t as f64).sqrt(),
            };
            self.primal_step(data, eta);
            losses = all_label_losses(&self.weights, data);
            if losses.iter().any(|v| !v.is_finite()) {
                return Err(Error::Divergence {
                    what: "saddle per-label loss".into(),
                    iter: t,
                });
            }
            trace.push_record(t, &losses, self);
        }
        Ok(trace)
    }
}

/// The set of most confusing labels for instance `i` and true label `l`:
/// the negative labels whose score meets or beats the true label's.
pub fn confusing_set(
    i: usize,
    l: usize,
    weights: &DenseMatrix,
    data: &MultiLabelDataset,
) -> Result<Vec<usize>> {
    if i >= data.n() || l >= data.label_count() {
        return Err(Error::shape(format!("instance {i} / label {l} out of range")));
    }
    if data.sign(i, l) <= 0 {
        return Err(Error::Data(
            "confusing set is only defined for true labels".into(),
        ));
    }
    let scores = score_row(weights, data.feature_row(i));
    Ok(confusing_from_scores(data.signs_row(i), &scores, l))
}

fn confusing_from_scores(signs: &[i8], scores: &[f64], l: usize) -> Vec<usize> {
    let threshold = scores[l];
    signs
        .iter()
        .enumerate()
        .filter(|&(j, &y)| y < 0 && scores[j] >= threshold)
        .map(|(j, _)| j)
        .collect()
}

fn score_row(weights: &DenseMatrix, x: &[f64]) -> Vec<f64> {
    (0..weights.rows())
        .map(|l| crate::linalg::dot(weights.row(l), x))
        .collect()
}

/// Ranking hinge loss of label `l`; instances with an empty confusing set
/// contribute nothing.
pub fn label_loss(l: usize, weights: &DenseMatrix, data: &MultiLabelDataset) -> Result<f64> {
    if l >= data.label_count() {
        return Err(Error::shape(format!("label {l} out of range")));
    }
    Ok(all_label_losses(weights, data)[l])
}

/// All per-label losses in one pass over the data.
pub fn all_label_losses(weights: &DenseMatrix, data: &MultiLabelDataset) -> Vec<f64> {
    let t = data.label_count();
    let mut sums = vec![0.0f64; t];
    for i in 0..data.n() {
        let scores = score_row(weights, data.feature_row(i));
        let signs = data.signs_row(i);
        for l in 0..t {
            if signs[l] <= 0 {
                continue;
            }
            let confusing = confusing_from_scores(signs, &scores, l);
            if confusing.is_empty() {
                continue;
            }
            // Membership implies 1 - s_l + s_k >= 1, so no clamp is needed.
            let mut inner = 0.0;
            for &k in &confusing {
                inner += 1.0 - scores[l] + scores[k];
            }
            sums[l] += inner / confusing.len() as f64;
        }
    }
    let norm = data.normalizer();
    for s in &mut sums {
        *s *= norm;
    }
    sums
}

/// One per-iteration record of the solve loop, taken after the updates.
#[derive(Debug, Clone)]
pub struct SaddleIterate {
    pub iter: usize,
    /// Privileged objective: sum of f_l over the privileged set.
    pub objective_p: f64,
    pub label_losses: Vec<f64>,
    pub lambda: Vec<f64>,
    /// f_k(W) - f_k(prior) - epsilon per complement label.
    pub residuals: Vec<f64>,
}

#[derive(Debug, Clone, Default)]
pub struct SaddleTrace {
    pub iterates: Vec<SaddleIterate>,
}

impl SaddleTrace {
    fn push_record(&mut self, iter: usize, losses: &[f64], bank: &LabelModelBank) {
        let objective_p = bank
            .partition
            .privileged()
            .iter()
            .map(|&l| losses[l])
            .sum();
        let residuals = bank
            .partition
            .complement()
            .iter()
            .map(|&k| losses[k] - bank.prior_losses[k] - bank.params.epsilon)
            .collect();
        self.iterates.push(SaddleIterate {
            iter,
            objective_p,
            label_losses: losses.to_vec(),
            lambda: bank.lambda.clone(),
            residuals,
        });
    }

    pub fn last(&self) -> Option<&SaddleIterate> {
        self.iterates.last()
    }
}
