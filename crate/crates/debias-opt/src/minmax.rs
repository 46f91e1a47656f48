//! Min-max loss-mixture weighting with one-step-lookahead hypergradients.
//!
//! Given tasks with losses `L_1..L_k` over shared parameters, a mixture
//! weight vector controls the training objective `sum_i lambda_i L_i`. The
//! weights themselves are learned so the *worst* validation loss shrinks:
//! take a lookahead parameter step under the current mixture, find the
//! worst task at the lookahead point, and descend the mixture along the
//! exact one-step hypergradient. Because the mixture objective is linear
//! in the weights, that hypergradient has the closed form
//! `-alpha1 * <grad L_i(theta, train), grad L_j(theta', val)>`.
//!
//! Two worst-task treatments are provided: freezing the argmax index, or
//! a Gumbel-softmax relaxation that differentiates through a soft
//! selection over log validation losses.
//!
//! Additional parameter groups (say, separate encoder and head weights)
//! follow the same update rule, so they are represented as segments of
//! the one flat parameter vector rather than as separate arguments.

use crate::error::{Error, Result};
use crate::linalg::{axpy, dot};
use crate::rng::SplitMix64;

/// Which split a task loss is evaluated on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
}

/// A differentiable scalar loss over a shared parameter vector.
pub trait TaskLoss {
    fn loss(&self, theta: &[f64], split: Split) -> f64;
    fn grad(&self, theta: &[f64], split: Split) -> Vec<f64>;
}

/// An optional regularizer slot occupying one extra mixture weight.
pub trait Regularizer {
    fn value(&self, theta: &[f64]) -> f64;
    fn grad(&self, theta: &[f64]) -> Vec<f64>;
}

/// Squared parameter norm, the default plug for the regularizer slot.
pub struct SquaredNorm;

impl Regularizer for SquaredNorm {
    fn value(&self, theta: &[f64]) -> f64 {
        dot(theta, theta)
    }

    fn grad(&self, theta: &[f64]) -> Vec<f64> {
        theta.iter().map(|&t| 2.0 * t).collect()
    }
}

/// `sum_d a_d (theta_d - c_d)^2` with identical train and validation
/// behavior; the analytic fixture behind the gradient diagnostics.
pub struct QuadraticTask {
    pub center: Vec<f64>,
    pub diag: Vec<f64>,
}

impl TaskLoss for QuadraticTask {
    fn loss(&self, theta: &[f64], _split: Split) -> f64 {
        theta
            .iter()
            .zip(&self.center)
            .zip(&self.diag)
            .map(|((&t, &c), &a)| a * (t - c) * (t - c))
            .sum()
    }

    fn grad(&self, theta: &[f64], _split: Split) -> Vec<f64> {
        theta
            .iter()
            .zip(&self.center)
            .zip(&self.diag)
            .map(|((&t, &c), &a)| 2.0 * a * (t - c))
            .collect()
    }
}

/// Task losses sharing one parameter vector, plus the optional regularizer.
pub struct TaskBundle {
    tasks: Vec<Box<dyn TaskLoss>>,
    regularizer: Option<Box<dyn Regularizer>>,
    param_dim: usize,
}

impl TaskBundle {
    pub fn new(tasks: Vec<Box<dyn TaskLoss>>, param_dim: usize) -> Result<Self> {
        if tasks.len() < 2 {
            return Err(Error::Data("a task bundle needs k >= 2 tasks".into()));
        }
        Ok(Self {
            tasks,
            regularizer: None,
            param_dim,
        })
    }

    /// Single-task bundles are allowed only for reduction tests; the
    /// mixture then has nothing to trade off.
    pub fn new_unchecked(tasks: Vec<Box<dyn TaskLoss>>, param_dim: usize) -> Self {
        Self {
            tasks,
            regularizer: None,
            param_dim,
        }
    }

    pub fn with_regularizer(mut self, reg: Box<dyn Regularizer>) -> Self {
        self.regularizer = Some(reg);
        self
    }

    pub fn task_count(&self) -> usize {
        self.tasks.len()
    }

    pub fn param_dim(&self) -> usize {
        self.param_dim
    }

    pub fn has_regularizer(&self) -> bool {
        self.regularizer.is_some()
    }

    /// Mixture length: task count plus one if the regularizer slot is used.
    pub fn weight_len(&self) -> usize {
        self.tasks.len() + usize::from(self.regularizer.is_some())
    }

    pub fn task_loss(&self, i: usize, theta: &[f64], split: Split) -> f64 {
        self.tasks[i].loss(theta, split)
    }

    pub fn task_grad(&self, i: usize, theta: &[f64], split: Split) -> Vec<f64> {
        self.tasks[i].grad(theta, split)
    }

    pub fn val_losses(&self, theta: &[f64]) -> Vec<f64> {
        self.tasks.iter().map(|t| t.loss(theta, Split::Val)).collect()
    }

    /// Rescale every task's validation loss by its value at `reference`
    /// (floored at 1e-12), so tasks compare in relative terms. Training
    /// losses are untouched; the worst-task selection, the relaxation,
    /// and the hypergradients all see the normalized values.
    pub fn normalize_validation(self, reference: &[f64]) -> Self {
        let scales: Vec<f64> = self
            .tasks
            .iter()
            .map(|t| t.loss(reference, Split::Val).max(1e-12))
            .collect();
        let tasks = self
            .tasks
            .into_iter()
            .zip(scales)
            .map(|(inner, scale)| Box::new(NormalizedVal { inner, scale }) as Box<dyn TaskLoss>)
            .collect();
        Self {
            tasks,
            regularizer: self.regularizer,
            param_dim: self.param_dim,
        }
    }
}

/// A task whose validation loss (and gradient) is divided by a fixed
/// reference scale.
struct NormalizedVal {
    inner: Box<dyn TaskLoss>,
    scale: f64,
}

impl TaskLoss for NormalizedVal {
    fn loss(&self, theta: &[f64], split: Split) -> f64 {
        match split {
            Split::Train => self.inner.loss(theta, split),
            Split::Val => self.inner.loss(theta, split) / self.scale,
        }
    }

    fn grad(&self, theta: &[f64], split: Split) -> Vec<f64> {
        let mut g = self.inner.grad(theta, split);
        if split == Split::Val {
            for v in &mut g {
                *v /= self.scale;
            }
        }
        g
    }
}

/// Mixture weights and the two step sizes of the one-step scheme.
#[derive(Debug, Clone)]
pub struct MixtureWeights {
    pub lambda: Vec<f64>,
    /// Inner (parameter) step size.
    pub alpha1: f64,
    /// Outer (mixture) step size.
    pub alpha2: f64,
}

impl MixtureWeights {
    pub fn uniform(len: usize, alpha1: f64, alpha2: f64) -> Self {
        Self {
            lambda: vec![1.0; len],
            alpha1,
            alpha2,
        }
    }
}

/// Clamp to the nonnegative orthant and rescale to sum `len` (the scale of
/// the all-ones mixture). A degenerate all-zero clamp resets to uniform.
pub fn project_weights(lambda: &mut [f64]) {
    let k = lambda.len() as f64;
    for v in lambda.iter_mut() {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
    let sum: f64 = lambda.iter().sum();
    if sum <= f64::MIN_POSITIVE {
        for v in lambda.iter_mut() {
            *v = 1.0;
        }
    } else {
        let scale = k / sum;
        for v in lambda.iter_mut() {
            *v *= scale;
        }
    }
}

/// Summed binary cross-entropy of one label head; the mixture's per-task
/// building block. Predictions go through a sigmoid and log arguments are
/// clamped, and the log-likelihood is negated so the result is a
/// minimizable loss.
pub fn bce_task_loss(logit_per_instance: &[f64], targets01: &[f64]) -> Result<f64> {
    crate::nn::loss::bce_loss(logit_per_instance, targets01)
}

/// The weighted mixture objective on the train split:
/// `sum_i lambda_i L_i(theta, train) [+ lambda_last * Omega(theta)]`.
pub fn mixture_loss(theta: &[f64], lambda: &[f64], bundle: &TaskBundle) -> Result<f64> {
    if lambda.len() != bundle.weight_len() {
        return Err(Error::shape(format!(
            "mixture length {} does not match bundle ({} expected)",
            lambda.len(),
            bundle.weight_len()
        )));
    }
    let mut total = 0.0;
    for (i, task) in bundle.tasks.iter().enumerate() {
        total += lambda[i] * task.loss(theta, Split::Train);
    }
    if let Some(reg) = &bundle.regularizer {
        total += lambda[bundle.tasks.len()] * reg.value(theta);
    }
    Ok(total)
}

/// Gradient of [`mixture_loss`] in the parameters.
pub fn mixture_grad(theta: &[f64], lambda: &[f64], bundle: &TaskBundle) -> Result<Vec<f64>> {
    if lambda.len() != bundle.weight_len() {
        return Err(Error::shape("mixture length mismatch"));
    }
    let mut grad = vec![0.0; theta.len()];
    for (i, task) in bundle.tasks.iter().enumerate() {
        axpy(&mut grad, lambda[i], &task.grad(theta, Split::Train));
    }
    if let Some(reg) = &bundle.regularizer {
        axpy(&mut grad, lambda[bundle.tasks.len()], &reg.grad(theta));
    }
    Ok(grad)
}

/// Index and value of the largest validation loss; ties break to the
/// lowest index.
pub fn worst_task(theta: &[f64], bundle: &TaskBundle) -> (usize, f64) {
    let losses = bundle.val_losses(theta);
    let mut best = 0;
    for (i, &v) in losses.iter().enumerate() {
        if v > losses[best] {
            best = i;
        }
    }
    (best, losses[best])
}

/// Gumbel-softmax settings. `noise_seed: None` zeroes the noise, which is
/// the configuration used to check the hard-argmax limit.
#[derive(Debug, Clone)]
pub struct GumbelConfig {
    pub gumbel_tau: f64,
    pub noise_seed: Option<u64>,
}

/// Soft worst-task weights at a parameter point:
/// `s_i = softmax((ln M_i + g_i) / tau)` over the validation losses, and
/// the relaxed worst value `sum_i s_i M_i`.
pub fn gumbel_soft_worst(
    theta: &[f64],
    bundle: &TaskBundle,
    cfg: &GumbelConfig,
) -> Result<(Vec<f64>, f64)> {
    if cfg.gumbel_tau <= 0.0 {
        return Err(Error::InvalidConfig("gumbel_tau must be > 0".into()));
    }
    let losses = bundle.val_losses(theta);
    if losses.iter().any(|&v| v <= 0.0) {
        return Err(Error::Data(
            "gumbel_soft_worst needs positive validation losses; add a floor".into(),
        ));
    }
    let noise = match cfg.noise_seed {
        Some(seed) => draw_gumbel_noise(losses.len(), &mut Some(SplitMix64::new(seed))),
        None => vec![0.0; losses.len()],
    };
    let scores: Vec<f64> = losses
        .iter()
        .zip(&noise)
        .map(|(&m, &g)| (m.ln() + g) / cfg.gumbel_tau)
        .collect();
    let s = crate::nn::softmax_probs(&scores);
    let relaxed = s.iter().zip(&losses).map(|(&si, &mi)| si * mi).sum();
    Ok((s, relaxed))
}

fn draw_gumbel_noise(len: usize, stream: &mut Option<SplitMix64>) -> Vec<f64> {
    match stream {
        Some(rng) => (0..len).map(|_| rng.next_gumbel()).collect(),
        None => vec![0.0; len],
    }
}

/// Result of one lookahead update.
#[derive(Debug, Clone)]
pub struct OneStepUpdate {
    pub theta_next: Vec<f64>,
    pub lambda_next: Vec<f64>,
    /// Worst validation task at the lookahead point.
    pub worst_index: usize,
    pub worst_value: f64,
    /// The mixture gradient used for the weight update, before projection.
    pub hypergradient: Vec<f64>,
}

/// One step of the hard-argmax scheme: lookahead parameter step, worst
/// validation task at the lookahead point, exact one-step hypergradient on
/// the mixture (worst index frozen), projected weight update.
pub fn one_step_update(
    theta: &[f64],
    weights: &MixtureWeights,
    bundle: &TaskBundle,
) -> Result<OneStepUpdate> {
    if weights.alpha1 < 0.0 || weights.alpha2 < 0.0 {
        return Err(Error::InvalidConfig("step sizes must be nonnegative".into()));
    }
    let inner_grad = mixture_grad(theta, &weights.lambda, bundle)?;
    check_finite(&inner_grad, "inner gradient")?;
    let mut theta_next = theta.to_vec();
    axpy(&mut theta_next, -weights.alpha1, &inner_grad);

    let (j, worst_value) = worst_task(&theta_next, bundle);
    let val_grad = bundle.task_grad(j, &theta_next, Split::Val);
    check_finite(&val_grad, "validation gradient")?;

    let hypergradient = hypergradient_for(&val_grad, theta, bundle, weights.alpha1);
    let mut lambda_next = weights.lambda.clone();
    let mut moved = false;
    for (l, &g) in lambda_next.iter_mut().zip(&hypergradient) {
        if g != 0.0 {
            moved = true;
        }
        *l -= weights.alpha2 * g;
    }
    // A zero hypergradient is a no-op update; skipping the projection then
    // keeps the weights exactly as given.
    if moved {
        project_weights(&mut lambda_next);
    }
    Ok(OneStepUpdate {
        theta_next,
        lambda_next,
        worst_index: j,
        worst_value,
        hypergradient,
    })
}

/// `d/d lambda_i of M(theta - alpha1 * grad M_lambda(theta))` for a fixed
/// outer gradient `u = grad M at the lookahead point`:
/// `-alpha1 * <grad L_i(theta, train), u>`, with the regularizer gradient
/// standing in for the task gradient on the extra slot.
fn hypergradient_for(u: &[f64], theta: &[f64], bundle: &TaskBundle, alpha1: f64) -> Vec<f64> {
    let mut h = Vec::with_capacity(bundle.weight_len());
    for task in &bundle.tasks {
        let g = task.grad(theta, Split::Train);
        h.push(-alpha1 * dot(&g, u));
    }
    if let Some(reg) = &bundle.regularizer {
        let g = reg.grad(theta);
        h.push(-alpha1 * dot(&g, u));
    }
    h
}

/// Outer gradient of the Gumbel-relaxed worst value in the lookahead
/// parameters: with `s = softmax((ln M + g)/tau)` and `Mbar = sum s_i M_i`,
///
/// `grad = sum_i s_i grad M_i + (1/tau) [ sum_i s_i grad M_i
///         - Mbar * sum_i (s_i / M_i) grad M_i ]`.
fn gumbel_outer_grad(
    theta_next: &[f64],
    bundle: &TaskBundle,
    tau: f64,
    noise: &[f64],
) -> Result<Vec<f64>> {
    let losses = bundle.val_losses(theta_next);
    let floored: Vec<f64> = losses.iter().map(|&v| v.max(1e-12)).collect();
    let scores: Vec<f64> = floored
        .iter()
        .zip(noise)
        .map(|(&m, &g)| (m.ln() + g) / tau)
        .collect();
    let s = crate::nn::softmax_probs(&scores);
    let mbar: f64 = s.iter().zip(&floored).map(|(&si, &mi)| si * mi).sum();

    let mut direct = vec![0.0; theta_next.len()];
    let mut ratio = vec![0.0; theta_next.len()];
    for i in 0..bundle.task_count() {
        let g = bundle.task_grad(i, theta_next, Split::Val);
        axpy(&mut direct, s[i], &g);
        axpy(&mut ratio, s[i] / floored[i], &g);
    }
    let mut out = vec![0.0; theta_next.len()];
    for idx in 0..out.len() {
        out[idx] = direct[idx] + (direct[idx] - mbar * ratio[idx]) / tau;
    }
    Ok(out)
}

/// Worst-task handling inside [`direct_method_train`].
#[derive(Debug, Clone)]
pub enum WorstTaskMode {
    HardArgmax,
    Gumbel(GumbelConfig),
    /// No mixture updates at all; the baseline trained at the initial
    /// weights for the same number of committed parameter updates.
    FixedWeights,
}

/// One row of the training trace, recorded after each iteration.
#[derive(Debug, Clone)]
pub struct MinmaxIterate {
    pub iter: usize,
    pub worst_index: usize,
    pub max_val_loss: f64,
    pub min_val_loss: f64,
    pub lambda: Vec<f64>,
}

#[derive(Debug, Clone, Default)]
pub struct MinmaxTrace {
    pub iterates: Vec<MinmaxIterate>,
}

#[derive(Debug)]
pub struct MinmaxOutput {
    pub theta: Vec<f64>,
    pub lambda: Vec<f64>,
    pub trace: MinmaxTrace,
}

/// The direct training loop. Per iteration: lookahead step from the
/// current mixture, worst validation task at the lookahead point, mixture
/// update by hypergradient (hard or relaxed), then the committed parameter
/// update under the refreshed mixture. The committed step reuses `alpha1`.
pub fn direct_method_train(
    bundle: &TaskBundle,
    lambda0: &[f64],
    theta0: &[f64],
    iters: usize,
    alpha1: f64,
    alpha2: f64,
    mode: &WorstTaskMode,
) -> Result<MinmaxOutput> {
    if iters == 0 {
        return Err(Error::InvalidConfig("direct method needs iters >= 1".into()));
    }
    if lambda0.len() != bundle.weight_len() {
        return Err(Error::shape("initial mixture length mismatch"));
    }
    let mut theta = theta0.to_vec();
    let mut lambda = lambda0.to_vec();
    let mut trace = MinmaxTrace::default();
    // Noise is drawn fresh at every mixture update from one stream.
    let mut noise_stream = match mode {
        WorstTaskMode::Gumbel(cfg) => cfg.noise_seed.map(SplitMix64::new),
        _ => None,
    };

    for t in 1..=iters {
        match mode {
            WorstTaskMode::FixedWeights => {}
            WorstTaskMode::HardArgmax => {
                let step = one_step_update(
                    &theta,
                    &MixtureWeights {
                        lambda: lambda.clone(),
                        alpha1,
                        alpha2,
                    },
                    bundle,
                )?;
                lambda = step.lambda_next;
            }
            WorstTaskMode::Gumbel(cfg) => {
                let inner_grad = mixture_grad(&theta, &lambda, bundle)?;
                let mut theta_next = theta.clone();
                axpy(&mut theta_next, -alpha1, &inner_grad);
                let noise = draw_gumbel_noise(bundle.task_count(), &mut noise_stream);
                let u = gumbel_outer_grad(&theta_next, bundle, cfg.gumbel_tau, &noise)?;
                let h = hypergradient_for(&u, &theta, bundle, alpha1);
                let mut moved = false;
                for (l, &g) in lambda.iter_mut().zip(&h) {
                    if g != 0.0 {
                        moved = true;
                    }
                    *l -= alpha2 * g;
                }
                if moved {
                    project_weights(&mut lambda);
                }
            }
        }

        // Committed update under the refreshed mixture.
        let grad = mixture_grad(&theta, &lambda, bundle)?;
        check_finite(&grad, "committed gradient")?;
        axpy(&mut theta, -alpha1, &grad);

        let val = bundle.val_losses(&theta);
        let (mut jmax, mut jmin) = (0usize, 0usize);
        for (i, &v) in val.iter().enumerate() {
            if v > val[jmax] {
                jmax = i;
            }
            if v < val[jmin] {
                jmin = i;
            }
        }
        if val.iter().any(|v| !v.is_finite() || *v > 1e12) {
            return Err(Error::Divergence {
                what: "minmax validation loss".into(),
                iter: t,
            });
        }
        trace.iterates.push(MinmaxIterate {
            iter: t,
            worst_index: jmax,
            max_val_loss: val[jmax],
            min_val_loss: val[jmin],
            lambda: lambda.clone(),
        });
    }
    Ok(MinmaxOutput {
        theta,
        lambda,
        trace,
    })
}

fn check_finite(v: &[f64], what: &str) -> Result<()> {
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite(what.into()));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::finite_diff_check;

    fn scalar_pair() -> TaskBundle {
        // L_1 = theta^2, L_2 = (theta - 1)^2.
        TaskBundle::new(
            vec![
                Box::new(QuadraticTask {
                    center: vec![0.0],
                    diag: vec![1.0],
                }),
                Box::new(QuadraticTask {
                    center: vec![1.0],
                    diag: vec![1.0],
                }),
            ],
            1,
        )
        .unwrap()
    }

    #[test]
    fn bce_task_loss_perfect_predictions_vanish() {
        // Logits hugely aligned with targets push the loss to ~0.
        let v = bce_task_loss(&[30.0, -30.0], &[1.0, 0.0]).unwrap();
        assert!(v < 1e-12, "{v}");
    }

    #[test]
    fn bce_task_loss_uniform_is_ln2_per_instance() {
        let v = bce_task_loss(&[0.0; 5], &[1.0, 0.0, 1.0, 1.0, 0.0]).unwrap();
        assert!((v - 5.0 * std::f64::consts::LN_2).abs() < 1e-13);
    }

    #[test]
    fn mixture_loss_one_hot_selects_task() {
        let bundle = scalar_pair();
        let theta = [0.3];
        let l2 = bundle.task_loss(1, &theta, Split::Train);
        let got = mixture_loss(&theta, &[0.0, 1.0], &bundle).unwrap();
        assert_eq!(got, l2);
        assert_eq!(mixture_loss(&theta, &[0.0, 0.0], &bundle).unwrap(), 0.0);
        assert!(mixture_loss(&theta, &[1.0], &bundle).is_err());
    }

    #[test]
    fn mixture_loss_matches_hand_expansion() {
        let bundle = scalar_pair();
        let theta = [0.4];
        let lambda = [0.7, 1.9];
        // 0.7*theta^2 + 1.9*(theta-1)^2 expanded by hand.
        let want = 0.7 * 0.16 + 1.9 * 0.36;
        let got = mixture_loss(&theta, &lambda, &bundle).unwrap();
        assert!((got - want).abs() < 1e-14);
    }

    #[test]
    fn mixture_loss_is_linear_in_lambda() {
        let bundle = scalar_pair();
        let theta = [0.25];
        let l1 = [0.3, 0.9];
        let l2 = [1.4, 0.1];
        let (a, b) = (0.6, -0.2);
        let mixed: Vec<f64> = l1.iter().zip(&l2).map(|(&x, &y)| a * x + b * y).collect();
        let lhs = mixture_loss(&theta, &mixed, &bundle).unwrap();
        let rhs = a * mixture_loss(&theta, &l1, &bundle).unwrap()
            + b * mixture_loss(&theta, &l2, &bundle).unwrap();
        assert!((lhs - rhs).abs() < 1e-14);
    }

    #[test]
    fn worst_task_picks_argmax_with_low_index_ties() {
        let bundle = scalar_pair();
        // At theta=2: L1=4, L2=1 -> task 0. At theta=0.5 both are 0.25 -> tie to 0.
        assert_eq!(worst_task(&[2.0], &bundle).0, 0);
        assert_eq!(worst_task(&[0.5], &bundle).0, 0);
        assert_eq!(worst_task(&[-1.0], &bundle).0, 1);
    }

    #[test]
    fn worst_task_matches_exhaustive_scan_and_is_monotone_invariant() {
        let bundle = scalar_pair();
        for theta in [-2.0, -0.3, 0.2, 0.5, 0.9, 3.0] {
            let losses = bundle.val_losses(&[theta]);
            let want = losses
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap().then(b.0.cmp(&a.0)))
                .unwrap()
                .0;
            assert_eq!(worst_task(&[theta], &bundle).0, want);
            // Strictly increasing transform leaves the argmax alone.
            let transformed: Vec<f64> = losses.iter().map(|&v| (3.0 * v + 1.0).exp()).collect();
            let want_t = transformed
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap().then(b.0.cmp(&a.0)))
                .unwrap()
                .0;
            assert_eq!(want, want_t);
        }
    }

    #[test]
    fn one_step_update_hand_fixture() {
        // theta=0.5, Lambda=(0.5,0.5), alpha1=0.1: inner grad is zero so
        // theta'=0.5; tie -> j=0; hypergradient (-0.1, +0.1).
        let bundle = scalar_pair();
        let weights = MixtureWeights {
            lambda: vec![0.5, 0.5],
            alpha1: 0.1,
            alpha2: 0.2,
        };
        let step = one_step_update(&[0.5], &weights, &bundle).unwrap();
        assert_eq!(step.theta_next, vec![0.5]);
        assert_eq!(step.worst_index, 0);
        assert!((step.hypergradient[0] - (-0.1)).abs() < 1e-14);
        assert!((step.hypergradient[1] - 0.1).abs() < 1e-14);
        // lambda_0 rises before projection; projection preserves the order.
        assert!(step.lambda_next[0] > step.lambda_next[1]);
    }

    #[test]
    fn one_step_update_zero_alpha1_leaves_everything() {
        let bundle = scalar_pair();
        let weights = MixtureWeights {
            lambda: vec![0.5, 0.5],
            alpha1: 0.0,
            alpha2: 0.3,
        };
        let step = one_step_update(&[0.7], &weights, &bundle).unwrap();
        assert_eq!(step.theta_next, vec![0.7]);
        assert_eq!(step.hypergradient, vec![0.0, 0.0]);
        assert_eq!(step.lambda_next, vec![0.5, 0.5]);
    }

    #[test]
    fn hypergradient_matches_finite_differences_on_random_quadratics() {
        let mut rng = crate::rng::SplitMix64::new(55);
        for _ in 0..20 {
            let dim = 3;
            let tasks: Vec<Box<dyn TaskLoss>> = (0..3)
                .map(|_| {
                    Box::new(QuadraticTask {
                        center: (0..dim).map(|_| rng.next_normal()).collect(),
                        diag: (0..dim).map(|_| 0.5 + rng.next_f64()).collect(),
                    }) as Box<dyn TaskLoss>
                })
                .collect();
            let bundle = TaskBundle::new(tasks, dim).unwrap();
            let theta: Vec<f64> = (0..dim).map(|_| rng.next_normal()).collect();
            let lambda: Vec<f64> = (0..3).map(|_| 0.3 + rng.next_f64()).collect();
            let alpha1 = 0.05;

            let weights = MixtureWeights {
                lambda: lambda.clone(),
                alpha1,
                alpha2: 0.1,
            };
            let step = one_step_update(&theta, &weights, &bundle).unwrap();
            let j = step.worst_index;

            // Finite differences of the frozen-index composition
            // lambda -> L_j(theta - alpha1 grad M_lambda(theta), val).
            let composed = |l: &[f64]| {
                let g = mixture_grad(&theta, l, &bundle).unwrap();
                let mut th = theta.clone();
                axpy(&mut th, -alpha1, &g);
                bundle.task_loss(j, &th, Split::Val)
            };
            let err = finite_diff_check(composed, &step.hypergradient, &lambda, 1e-5).unwrap();
            assert!(err < 1e-4, "rel err {err}");
        }
    }

    #[test]
    fn gumbel_soft_worst_hard_limit() {
        let bundle = scalar_pair();
        // At theta=-0.2: L1=0.04, L2=1.44 (both splits identical).
        let cfg = GumbelConfig {
            gumbel_tau: 1e-4,
            noise_seed: None,
        };
        let (s, relaxed) = gumbel_soft_worst(&[-0.2], &bundle, &cfg).unwrap();
        assert!(s[1] > 1.0 - 1e-9);
        assert!((relaxed - 1.44).abs() < 1e-6);
        assert!((s.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn gumbel_soft_worst_noise_decides_ties() {
        // Equal losses; inject fixed noise by seeding and checking the
        // winner is the larger noise coordinate.
        struct Fixed(f64);
        impl TaskLoss for Fixed {
            fn loss(&self, _: &[f64], _: Split) -> f64 {
                self.0
            }
            fn grad(&self, theta: &[f64], _: Split) -> Vec<f64> {
                vec![0.0; theta.len()]
            }
        }
        let bundle = TaskBundle::new(vec![Box::new(Fixed(0.5)), Box::new(Fixed(0.5))], 1).unwrap();
        let cfg = GumbelConfig {
            gumbel_tau: 1e-4,
            noise_seed: Some(12345),
        };
        let (s, _) = gumbel_soft_worst(&[0.0], &bundle, &cfg).unwrap();
        let mut rng = crate::rng::SplitMix64::new(12345);
        let g0 = rng.next_gumbel();
        let g1 = rng.next_gumbel();
        let winner = if g0 > g1 { 0 } else { 1 };
        assert!(s[winner] > 0.999);
    }

    #[test]
    fn gumbel_soft_worst_tau_one_recovers_normalized_losses() {
        struct Fixed(f64);
        impl TaskLoss for Fixed {
            fn loss(&self, _: &[f64], _: Split) -> f64 {
                self.0
            }
            fn grad(&self, theta: &[f64], _: Split) -> Vec<f64> {
                vec![0.0; theta.len()]
            }
        }
        let bundle = TaskBundle::new(vec![Box::new(Fixed(0.1)), Box::new(Fixed(0.9))], 1).unwrap();
        let cfg = GumbelConfig {
            gumbel_tau: 1.0,
            noise_seed: None,
        };
        let (s, relaxed) = gumbel_soft_worst(&[0.0], &bundle, &cfg).unwrap();
        assert!((s[0] - 0.1).abs() < 1e-12);
        assert!((s[1] - 0.9).abs() < 1e-12);
        assert!((relaxed - 0.82).abs() < 1e-12);
    }

    #[test]
    fn gumbel_weights_stabilize_as_tau_shrinks() {
        let bundle = scalar_pair();
        let mut prev_argmax = None;
        for tau in [1e-3, 1e-4, 1e-5, 1e-6] {
            let cfg = GumbelConfig {
                gumbel_tau: tau,
                noise_seed: Some(9),
            };
            let (s, _) = gumbel_soft_worst(&[-0.2], &bundle, &cfg).unwrap();
            let argmax = s
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .unwrap()
                .0;
            if let Some(p) = prev_argmax {
                assert_eq!(p, argmax);
            }
            prev_argmax = Some(argmax);
        }
    }

    #[test]
    fn direct_method_single_task_reduces_to_plain_descent() {
        let task = QuadraticTask {
            center: vec![1.0, -2.0],
            diag: vec![1.0, 0.5],
        };
        let bundle = TaskBundle::new_unchecked(vec![Box::new(task)], 2);
        let theta0 = [3.0, 3.0];
        let out = direct_method_train(
            &bundle,
            &[1.0],
            &theta0,
            50,
            0.1,
            0.05,
            &WorstTaskMode::HardArgmax,
        )
        .unwrap();
        // Reference: plain descent on L_1 with the same step size.
        let reference_task = QuadraticTask {
            center: vec![1.0, -2.0],
            diag: vec![1.0, 0.5],
        };
        let mut theta = theta0.to_vec();
        for _ in 0..50 {
            let g = reference_task.grad(&theta, Split::Train);
            // Same accumulate-then-step structure as the training loop.
            let mut mix = vec![0.0; 2];
            axpy(&mut mix, 1.0, &g);
            axpy(&mut theta, -0.1, &mix);
        }
        assert_eq!(out.theta, theta);
        assert_eq!(out.lambda, vec![1.0]);
    }

    #[test]
    fn direct_method_beats_uniform_on_imbalanced_quadratics() {
        // One flat task, one steep off-center task: uniform weights leave
        // the steep task's validation loss high.
        let mk = || {
            TaskBundle::new(
                vec![
                    Box::new(QuadraticTask {
                        center: vec![0.0],
                        diag: vec![0.05],
                    }) as Box<dyn TaskLoss>,
                    Box::new(QuadraticTask {
                        center: vec![4.0],
                        diag: vec![1.0],
                    }) as Box<dyn TaskLoss>,
                ],
                1,
            )
            .unwrap()
        };
        let theta0 = [0.0];
        let adaptive = direct_method_train(
            &mk(),
            &[1.0, 1.0],
            &theta0,
            1000,
            0.05,
            0.2,
            &WorstTaskMode::HardArgmax,
        )
        .unwrap();
        let uniform = direct_method_train(
            &mk(),
            &[1.0, 1.0],
            &theta0,
            1000,
            0.05,
            0.2,
            &WorstTaskMode::FixedWeights,
        )
        .unwrap();
        let worst_adaptive = adaptive.trace.iterates.last().unwrap().max_val_loss;
        let worst_uniform = uniform.trace.iterates.last().unwrap().max_val_loss;
        assert!(
            worst_adaptive < worst_uniform,
            "{worst_adaptive} vs {worst_uniform}"
        );
    }

    #[test]
    fn gumbel_mode_with_tiny_tau_matches_hard_argmax() {
        let mk = || {
            TaskBundle::new(
                vec![
                    Box::new(QuadraticTask {
                        center: vec![0.0],
                        diag: vec![0.2],
                    }) as Box<dyn TaskLoss>,
                    Box::new(QuadraticTask {
                        center: vec![2.0],
                        diag: vec![0.8],
                    }) as Box<dyn TaskLoss>,
                ],
                1,
            )
            .unwrap()
        };
        let hard = direct_method_train(
            &mk(),
            &[1.0, 1.0],
            &[0.5],
            100,
            0.05,
            0.2,
            &WorstTaskMode::HardArgmax,
        )
        .unwrap();
        let gumbel = direct_method_train(
            &mk(),
            &[1.0, 1.0],
            &[0.5],
            100,
            0.05,
            0.2,
            &WorstTaskMode::Gumbel(GumbelConfig {
                gumbel_tau: 1e-4,
                noise_seed: None,
            }),
        )
        .unwrap();
        for (a, b) in hard.trace.iterates.iter().zip(&gumbel.trace.iterates) {
            assert!((a.max_val_loss - b.max_val_loss).abs() < 1e-6);
            for (la, lb) in a.lambda.iter().zip(&b.lambda) {
                assert!((la - lb).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn direct_method_reruns_identically() {
        let mk = || scalar_pair();
        let run = || {
            direct_method_train(
                &mk(),
                &[1.0, 1.0],
                &[2.0],
                60,
                0.05,
                0.3,
                &WorstTaskMode::Gumbel(GumbelConfig {
                    gumbel_tau: 0.5,
                    noise_seed: Some(77),
                }),
            )
            .unwrap()
        };
        let a = run();
        let b = run();
        assert_eq!(a.theta, b.theta);
        assert_eq!(a.lambda, b.lambda);
        for (x, y) in a.trace.iterates.iter().zip(&b.trace.iterates) {
            assert_eq!(x.max_val_loss, y.max_val_loss);
            assert_eq!(x.lambda, y.lambda);
        }
    }

    #[test]
    fn validation_normalization_rescales_selection_but_not_training() {
        // Raw scales: at theta=0, L1=0.01*4=0.04, L2=(0-0.1)^2=0.01; task 1
        // is the raw worst. Normalized by the losses at the same point,
        // both become 1.0 and a nearby point flips the selection.
        let bundle = TaskBundle::new(
            vec![
                Box::new(QuadraticTask {
                    center: vec![2.0],
                    diag: vec![0.01],
                }) as Box<dyn TaskLoss>,
                Box::new(QuadraticTask {
                    center: vec![0.1],
                    diag: vec![1.0],
                }) as Box<dyn TaskLoss>,
            ],
            1,
        )
        .unwrap();
        let reference = [0.0];
        assert_eq!(worst_task(&reference, &bundle).0, 0);
        let normalized = bundle.normalize_validation(&reference);
        let v = normalized.val_losses(&reference);
        assert!((v[0] - 1.0).abs() < 1e-12 && (v[1] - 1.0).abs() < 1e-12);
        // Moving toward task 1's center leaves task 2 relatively worse.
        let probe = [0.5];
        assert_eq!(worst_task(&probe, &normalized).0, 1);
        // Training-side losses keep their raw scale.
        let train = normalized.task_loss(0, &probe, Split::Train);
        assert!((train - 0.01 * 1.5 * 1.5).abs() < 1e-12);
    }

    #[test]
    fn regularizer_slot_participates_in_mixture() {
        let bundle = scalar_pair().with_regularizer(Box::new(SquaredNorm));
        let theta = [2.0];
        // lambda = (0,0,1) selects the regularizer alone.
        let v = mixture_loss(&theta, &[0.0, 0.0, 1.0], &bundle).unwrap();
        assert_eq!(v, 4.0);
        let g = mixture_grad(&theta, &[0.0, 0.0, 1.0], &bundle).unwrap();
        assert_eq!(g, vec![4.0]);
    }
}
