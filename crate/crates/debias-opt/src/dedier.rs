//! Confidence-weighted distillation with early readouts.
//!
//! An auxiliary affine+softmax head is attached to an intermediate
//! representation of the student ("the early readout"). Instances the
//! readout gets wrong, especially with a large confidence margin, are
//! the ones the current features mislead, so their distillation loss is
//! scaled up by `exp(beta * cm^alpha)`. The readout is retrained from
//! scratch every `refresh_interval` epochs and the whole training set is
//! reweighted, so the adjustment tracks the student as it learns.
//!
//! Training math only ever sees a group-hidden [`ClassView`]; group ids
//! appear in the per-epoch diagnostics and the validation worst-group
//! accuracy used for checkpoint selection.

use crate::data::{ClassView, GroupedDataset, GroupedView, Split};
use crate::error::{Error, Result};
use crate::harness::eval_metrics;
use crate::linalg::DenseMatrix;
use crate::nn::loss::{cross_entropy_grad, kd_loss_grad, softmax_probs};
use crate::nn::{MlpModel, ModelGrads};
use crate::rng::SplitMix64;

/// Weighting and schedule knobs; defaults follow the searched ranges
/// (`alpha = 0.05`, `beta = 4`) with refresh and readout epochs fixed at 1
/// and a pure teacher-matching mix.
#[derive(Debug, Clone)]
pub struct WeightingParams {
    /// Margin exponent, > 0.
    pub alpha: f64,
    /// Log of the maximum weight, > 0.
    pub beta: f64,
    /// Mix between hard-label and teacher-matching loss, in [0, 1].
    pub kd_mix: f64,
    /// Softening temperature, > 0.
    pub kd_temperature: f64,
    /// 1-based hidden-layer index the readout taps.
    pub aux_position: usize,
    /// Retrain the readout every this many epochs.
    pub refresh_interval: usize,
    /// Readout training epochs per refresh.
    pub aux_epochs: usize,
}

impl Default for WeightingParams {
    fn default() -> Self {
        Self {
            alpha: 0.05,
            beta: 4.0,
            kd_mix: 1.0,
            kd_temperature: 2.0,
            aux_position: 1,
            refresh_interval: 1,
            aux_epochs: 1,
        }
    }
}

impl WeightingParams {
    pub fn validate(&self, student_depth: usize) -> Result<()> {
        if self.alpha <= 0.0 || self.beta <= 0.0 {
            return Err(Error::InvalidConfig("alpha and beta must be > 0".into()));
        }
        if !(0.0..=1.0).contains(&self.kd_mix) {
            return Err(Error::InvalidConfig("kd_mix must lie in [0, 1]".into()));
        }
        if self.kd_temperature <= 0.0 {
            return Err(Error::InvalidConfig("kd_temperature must be > 0".into()));
        }
        if self.aux_position == 0 || self.aux_position >= student_depth {
            return Err(Error::InvalidConfig(format!(
                "aux_position must satisfy 1 <= pos < depth ({student_depth})"
            )));
        }
        if self.refresh_interval == 0 || self.aux_epochs == 0 {
            return Err(Error::InvalidConfig(
                "refresh interval and aux epochs must be >= 1".into(),
            ));
        }
        Ok(())
    }
}

/// Confidence margin of a probability vector: the gap between the largest
/// and second-largest entries.
pub fn confidence_margin(p: &[f64]) -> Result<f64> {
    if p.len() < 2 {
        return Err(Error::shape("confidence margin needs at least 2 classes"));
    }
    let (mut top, mut second) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
    for &v in p {
        if v > top {
            second = top;
            top = v;
        } else if v > second {
            second = v;
        }
    }
    Ok(top - second)
}

/// Weight of one instance: 1 when the readout is right, otherwise
/// `exp(beta * cm^alpha)`.
pub fn instance_weight(
    p_aux: &[f64],
    y_aux_pred: usize,
    y_true: usize,
    alpha: f64,
    beta: f64,
) -> Result<f64> {
    if y_aux_pred == y_true {
        return Ok(1.0);
    }
    let cm = confidence_margin(p_aux)?;
    Ok((beta * cm.powf(alpha)).exp())
}

/// Table of (cm, weight) pairs for a misclassified instance over an even
/// grid of confidence margins in (0, 1].
pub fn weighting_curve(alpha: f64, beta: f64, samples: usize) -> Result<Vec<(f64, f64)>> {
    if samples < 2 {
        return Err(Error::InvalidConfig("need at least 2 samples".into()));
    }
    Ok((1..=samples)
        .map(|i| {
            let cm = i as f64 / samples as f64;
            (cm, (beta * cm.powf(alpha)).exp())
        })
        .collect())
}

/// A single affine+softmax head over one tap representation.
#[derive(Debug, Clone)]
pub struct AuxReadout {
    weights: DenseMatrix,
    biases: Vec<f64>,
    /// 1-based layer index the head reads from.
    position: usize,
}

impl AuxReadout {
    fn new(position: usize, tap_width: usize, classes: usize) -> Self {
        Self {
            weights: DenseMatrix::zeros(classes, tap_width),
            biases: vec![0.0; classes],
            position,
        }
    }

    pub fn position(&self) -> usize {
        self.position
    }

    pub fn probs(&self, tap: &[f64]) -> Vec<f64> {
        let mut logits = self.weights.matvec(tap);
        for (z, &b) in logits.iter_mut().zip(&self.biases) {
            *z += b;
        }
        softmax_probs(&logits)
    }
}

/// Highest-probability class, ties to the lowest index.
pub fn argmax_class(p: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in p.iter().enumerate() {
        if v > p[best] {
            best = i;
        }
    }
    best
}

fn tap_at(model: &MlpModel, x: &[f64], position: usize) -> Result<Vec<f64>> {
    let (_, mut taps) = model.forward(x)?;
    Ok(taps.swap_remove(position - 1))
}

/// Train a fresh affine+softmax readout on the tap representations of a
/// frozen student. The head starts from zeros, so the result is a pure
/// function of (student, data, epochs, batch stream). The student is never
/// touched; the gradient stops at the tap.
pub fn train_aux(
    model: &MlpModel,
    position: usize,
    view: &ClassView<'_>,
    epochs: usize,
    lr: f64,
    batch_size: usize,
    batch_rng: &mut SplitMix64,
) -> Result<AuxReadout> {
    if epochs == 0 {
        return Err(Error::InvalidConfig("aux training needs epochs >= 1".into()));
    }
    // Probing may decode any layer including the logits; the stricter
    // hidden-layer-only rule for the training-time readout lives in
    // WeightingParams::validate.
    if position == 0 || position > model.depth() {
        return Err(Error::InvalidConfig("aux position out of range".into()));
    }
    // Student is frozen for the whole refresh: collect taps once.
    let mut taps = Vec::with_capacity(view.len());
    for i in 0..view.len() {
        taps.push(tap_at(model, view.features(i), position)?);
    }
    let classes = view.classes();
    let mut aux = AuxReadout::new(position, model.tap_width(position), classes);

    let mut order: Vec<usize> = (0..view.len()).collect();
    for _ in 0..epochs {
        batch_rng.shuffle(&mut order);
        for chunk in order.chunks(batch_size.max(1)) {
            let mut dw = DenseMatrix::zeros(classes, aux.weights.cols());
            let mut db = vec![0.0; classes];
            for &i in chunk {
                let p = aux.probs(&taps[i]);
                let g = cross_entropy_grad(&logits_of(&aux, &taps[i]), view.label(i))?;
                debug_assert_eq!(p.len(), g.len());
                for (c, &gc) in g.iter().enumerate() {
                    crate::linalg::axpy(dw.row_mut(c), gc, &taps[i]);
                    db[c] += gc;
                }
            }
            let scale = 1.0 / chunk.len() as f64;
            aux.weights.add_scaled(&dw, -lr * scale);
            for (b, &d) in aux.biases.iter_mut().zip(&db) {
                *b -= lr * scale * d;
            }
        }
    }
    Ok(aux)
}

fn logits_of(aux: &AuxReadout, tap: &[f64]) -> Vec<f64> {
    let mut z = aux.weights.matvec(tap);
    for (zi, &b) in z.iter_mut().zip(&aux.biases) {
        *zi += b;
    }
    z
}

/// Per-instance weights over a training view, in view order.
pub fn compute_weights(
    model: &MlpModel,
    aux: &AuxReadout,
    view: &ClassView<'_>,
    alpha: f64,
    beta: f64,
) -> Result<Vec<f64>> {
    let mut weights = Vec::with_capacity(view.len());
    for i in 0..view.len() {
        let tap = tap_at(model, view.features(i), aux.position())?;
        let p = aux.probs(&tap);
        let pred = argmax_class(&p);
        weights.push(instance_weight(&p, pred, view.label(i), alpha, beta)?);
    }
    Ok(weights)
}

/// A training view augmented with one weight per instance,
/// `wt_i in [1, e^beta]`.
pub struct WeightedDataset<'a> {
    view: ClassView<'a>,
    weights: Vec<f64>,
}

impl<'a> WeightedDataset<'a> {
    /// Pair a view with weights; every weight must lie in `[1, e^beta]`.
    pub fn new(view: ClassView<'a>, weights: Vec<f64>, beta: f64) -> Result<Self> {
        if weights.len() != view.len() {
            return Err(Error::shape("one weight per instance"));
        }
        let cap = beta.exp();
        if weights.iter().any(|&w| !(1.0..=cap + 1e-9).contains(&w)) {
            return Err(Error::Data(format!(
                "instance weights must lie in [1, e^beta] = [1, {cap}]"
            )));
        }
        Ok(Self { view, weights })
    }

    /// All-ones weights: plain distillation.
    pub fn unweighted(view: ClassView<'a>) -> Self {
        let weights = vec![1.0; view.len()];
        Self { view, weights }
    }

    pub fn view(&self) -> &ClassView<'a> {
        &self.view
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }
}

/// One epoch of mini-batch descent on the weighted distillation objective
/// `(1 - kd_mix) * l_ce + kd_mix * wt * l_kd`. The weight scales only the
/// teacher-matching term. Batch gradients are averaged.
#[allow(clippy::too_many_arguments)]
pub fn distill_epoch(
    student: &mut MlpModel,
    teacher_logits: &[Vec<f64>],
    weighted: &WeightedDataset<'_>,
    kd_mix: f64,
    tau: f64,
    lr: f64,
    batch_size: usize,
    batch_rng: &mut SplitMix64,
) -> Result<()> {
    let view = &weighted.view;
    let weights = &weighted.weights;
    if teacher_logits.len() != view.len() {
        return Err(Error::shape("teacher logits must cover the view"));
    }
    let mut order: Vec<usize> = (0..view.len()).collect();
    batch_rng.shuffle(&mut order);
    for chunk in order.chunks(batch_size.max(1)) {
        let mut total = ModelGrads::zeros_like(student);
        for &i in chunk {
            let x = view.features(i);
            let (logits, taps) = student.forward(x)?;
            let mut at_logits = vec![0.0; logits.len()];
            if kd_mix < 1.0 {
                let ce = cross_entropy_grad(&logits, view.label(i))?;
                crate::linalg::axpy(&mut at_logits, 1.0 - kd_mix, &ce);
            }
            if kd_mix > 0.0 {
                let kd = kd_loss_grad(&logits, &teacher_logits[i], tau)?;
                crate::linalg::axpy(&mut at_logits, kd_mix * weights[i], &kd);
            }
            if at_logits.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite("distillation gradient".into()));
            }
            let g = student.backward(x, &taps, &at_logits)?;
            total.add_scaled(&g, 1.0);
        }
        total.scale(1.0 / chunk.len() as f64);
        student.apply_gradients(&total, lr);
    }
    Ok(())
}

/// Groupwise stats of one readout over one grouped view.
#[derive(Debug, Clone)]
pub struct GroupReadoutStats {
    pub group: usize,
    /// Instances of this group in the probed view.
    pub population: usize,
    /// Fraction of the group's instances the readout misclassifies; as a
    /// retrieval of the group by the error set, this is its recall.
    pub error_rate: f64,
    /// Mean confidence margin over the group's misclassified instances
    /// (0 when the group has none).
    pub mean_error_margin: f64,
    /// Fraction of all error instances that belong to this group; sums to
    /// 1 across groups when any errors exist.
    pub error_share: f64,
}

/// Readout diagnostics at one depth.
#[derive(Debug, Clone)]
pub struct ReadoutReport {
    pub depth: usize,
    pub groups: Vec<GroupReadoutStats>,
}

impl ReadoutReport {
    /// Combined error rate of the bias-conflicting groups (ids 1 and 2 in
    /// the binary benchmark): the recall of minority instances by the
    /// error set.
    pub fn minority_recall(&self, minority_groups: &[usize]) -> f64 {
        let mut err = 0.0;
        let mut tot = 0.0;
        for g in &self.groups {
            if minority_groups.contains(&g.group) {
                // error_rate * count recovers counts; store counts instead.
                err += g.error_rate * g.population as f64;
                tot += g.population as f64;
            }
        }
        if tot == 0.0 {
            0.0
        } else {
            err / tot
        }
    }
}

fn readout_stats(
    model: &MlpModel,
    aux: &AuxReadout,
    view: &GroupedView<'_>,
) -> Result<ReadoutReport> {
    let gcount = view.group_count();
    let mut population = vec![0usize; gcount];
    let mut errors = vec![0usize; gcount];
    let mut margin_sum = vec![0.0f64; gcount];
    for i in 0..view.len() {
        let tap = tap_at(model, view.features(i), aux.position())?;
        let p = aux.probs(&tap);
        let pred = argmax_class(&p);
        let g = view.group(i);
        population[g] += 1;
        if pred != view.label(i) {
            errors[g] += 1;
            margin_sum[g] += confidence_margin(&p)?;
        }
    }
    let total_errors: usize = errors.iter().sum();
    let groups = (0..gcount)
        .map(|g| GroupReadoutStats {
            group: g,
            population: population[g],
            error_rate: if population[g] == 0 {
                0.0
            } else {
                errors[g] as f64 / population[g] as f64
            },
            mean_error_margin: if errors[g] == 0 {
                0.0
            } else {
                margin_sum[g] / errors[g] as f64
            },
            error_share: if total_errors == 0 {
                0.0
            } else {
                errors[g] as f64 / total_errors as f64
            },
        })
        .collect();
    Ok(ReadoutReport {
        depth: aux.position(),
        groups,
    })
}

/// Fit a fresh linear decoder at each requested depth and report groupwise
/// error rates, error-confidence margins, and error composition, all on
/// the training split.
#[allow(clippy::too_many_arguments)]
pub fn readout_probe(
    model: &MlpModel,
    data: &GroupedDataset,
    depths: &[usize],
    decoder_epochs: usize,
    lr: f64,
    batch_size: usize,
    seed: u64,
) -> Result<Vec<ReadoutReport>> {
    let train = data.class_view(Split::Train);
    let train_groups = data.grouped_view(Split::Train);
    let mut reports = Vec::with_capacity(depths.len());
    for &depth in depths {
        if depth == 0 || depth > model.depth() {
            return Err(Error::InvalidConfig(format!(
                "probe depth {depth} out of range 1..={}",
                model.depth()
            )));
        }
        let mut rng = SplitMix64::stream(seed, "probe-aux");
        let aux = train_aux(model, depth, &train, decoder_epochs, lr, batch_size, &mut rng)?;
        reports.push(readout_stats(model, &aux, &train_groups)?);
    }
    Ok(reports)
}

/// Where the per-instance weights come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AuxSource {
    /// Train the readout every refresh (the real algorithm).
    Learned,
    /// Pretend the readout is always right: every weight is 1. The
    /// reduction baseline for equivalence checks against plain
    /// distillation.
    OracleAllCorrect,
}

/// One per-epoch trace row.
#[derive(Debug, Clone)]
pub struct DedierEpoch {
    pub epoch: usize,
    /// Readout error rate per group on the training split.
    pub group_error_aux: Vec<f64>,
    /// Mean instance weight per group on the training split.
    pub group_mean_weight: Vec<f64>,
    /// Final-layer accuracy per group on the training split.
    pub group_acc_final: Vec<f64>,
    /// Validation average accuracy.
    pub avg_acc: f64,
    /// Validation worst-group accuracy.
    pub wga: f64,
}

#[derive(Debug)]
pub struct DedierOutput {
    /// The checkpoint with the best validation worst-group accuracy
    /// (earliest epoch on ties).
    pub student: MlpModel,
    /// The last-epoch iterate, regardless of validation performance.
    pub final_student: MlpModel,
    pub best_epoch: usize,
    /// Weights in effect at the end of training, in train-view order.
    pub final_weights: Vec<f64>,
    pub trace: Vec<DedierEpoch>,
    /// Readout diagnostics at every refresh.
    pub reports: Vec<ReadoutReport>,
}

/// Optimizer-side settings shared by the distillation loops.
#[derive(Debug, Clone)]
pub struct TrainSettings {
    pub lr: f64,
    pub batch_size: usize,
    pub aux_lr: f64,
}

/// The full training loop: every `refresh_interval` epochs retrain the
/// readout (fresh head, `aux_epochs` passes) and reweight the training
/// set; every epoch run one weighted distillation pass; snapshot the
/// student whenever validation worst-group accuracy improves.
#[allow(clippy::too_many_arguments)]
pub fn dedier_train(
    mut student: MlpModel,
    teacher_logits: &[Vec<f64>],
    data: &GroupedDataset,
    params: &WeightingParams,
    epochs: usize,
    settings: &TrainSettings,
    seed: u64,
    aux_source: AuxSource,
) -> Result<DedierOutput> {
    params.validate(student.depth())?;
    let train = data.class_view(Split::Train);
    let train_groups = data.grouped_view(Split::Train);
    let val_groups = data.grouped_view(Split::Val);
    if teacher_logits.len() != train.len() {
        return Err(Error::shape(
            "need one cached teacher logit vector per training instance",
        ));
    }

    let mut batch_rng = SplitMix64::stream(seed, "batch");
    let mut aux_rng = SplitMix64::stream(seed, "aux");

    let mut weighted = WeightedDataset::unweighted(data.class_view(Split::Train));
    let mut aux: Option<AuxReadout> = None;
    let mut trace = Vec::with_capacity(epochs);
    let mut reports = Vec::new();
    let mut best: Option<(f64, usize, MlpModel)> = None;

    for epoch in 0..epochs {
        if aux_source == AuxSource::Learned && epoch % params.refresh_interval == 0 {
            let fresh = train_aux(
                &student,
                params.aux_position,
                &train,
                params.aux_epochs,
                settings.aux_lr,
                settings.batch_size,
                &mut aux_rng,
            )?;
            let weights =
                compute_weights(&student, &fresh, &train, params.alpha, params.beta)?;
            weighted =
                WeightedDataset::new(data.class_view(Split::Train), weights, params.beta)?;
            reports.push(readout_stats(&student, &fresh, &train_groups)?);
            aux = Some(fresh);
        }

        distill_epoch(
            &mut student,
            teacher_logits,
            &weighted,
            params.kd_mix,
            params.kd_temperature,
            settings.lr,
            settings.batch_size,
            &mut batch_rng,
        )
        .map_err(|e| match e {
            Error::NonFinite(what) => Error::Divergence { what, iter: epoch },
            other => other,
        })?;

        let row =
            epoch_diagnostics(epoch, &student, aux.as_ref(), weighted.weights(), &train_groups)?;
        let val = eval_metrics(&student, &val_groups)?;
        let wga = val.wga;
        trace.push(DedierEpoch {
            avg_acc: val.avg_acc,
            wga,
            ..row
        });
        let improved = match &best {
            None => true,
            Some((best_wga, _, _)) => wga > *best_wga,
        };
        if improved {
            best = Some((wga, epoch, student.clone()));
        }
    }

    let (best_epoch, chosen) = match best {
        Some((_, e, model)) => (e, model),
        None => (0, student.clone()),
    };
    Ok(DedierOutput {
        student: chosen,
        final_student: student,
        best_epoch,
        final_weights: weighted.weights().to_vec(),
        trace,
        reports,
    })
}

fn epoch_diagnostics(
    epoch: usize,
    student: &MlpModel,
    aux: Option<&AuxReadout>,
    weights: &[f64],
    train_groups: &GroupedView<'_>,
) -> Result<DedierEpoch> {
    let gcount = train_groups.group_count();
    let mut population = vec![0usize; gcount];
    let mut aux_errors = vec![0usize; gcount];
    let mut weight_sum = vec![0.0f64; gcount];
    let mut final_correct = vec![0usize; gcount];
    for i in 0..train_groups.len() {
        let g = train_groups.group(i);
        population[g] += 1;
        weight_sum[g] += weights[i];
        let x = train_groups.features(i);
        let (logits, taps) = student.forward(x)?;
        if argmax_class(&logits) == train_groups.label(i) {
            final_correct[g] += 1;
        }
        if let Some(aux) = aux {
            let p = aux.probs(&taps[aux.position() - 1]);
            if argmax_class(&p) != train_groups.label(i) {
                aux_errors[g] += 1;
            }
        }
    }
    let per_group = |num: &[f64]| -> Vec<f64> {
        num.iter()
            .zip(&population)
            .map(|(&v, &n)| if n == 0 { 0.0 } else { v / n as f64 })
            .collect()
    };
    Ok(DedierEpoch {
        epoch,
        group_error_aux: per_group(
            &aux_errors.iter().map(|&e| e as f64).collect::<Vec<_>>(),
        ),
        group_mean_weight: per_group(&weight_sum),
        group_acc_final: per_group(
            &final_correct.iter().map(|&c| c as f64).collect::<Vec<_>>(),
        ),
        avg_acc: 0.0,
        wga: 0.0,
    })
}
