//! Loss functions and their gradients at the logits.

use crate::error::{Error, Result};

/// Floor for probabilities before a log.
const LOG_FLOOR: f64 = 1e-12;

/// The loss families used by the training loops.
#[derive(Debug, Clone, PartialEq)]
pub enum LossKind {
    CrossEntropySoftmax,
    BceSigmoidPerLabel,
    KdKlWithTemperature { temperature: f64 },
    Hinge,
}

/// Target carried alongside a [`LossKind`].
#[derive(Debug, Clone, PartialEq)]
pub enum LossTarget {
    /// Class index for softmax cross-entropy.
    Class(usize),
    /// Per-label 0/1 targets for sigmoid BCE.
    Binary(Vec<f64>),
    /// Teacher logits for distillation.
    TeacherLogits(Vec<f64>),
    /// Per-output signs in {+1,-1} for the hinge.
    Signs(Vec<f64>),
}

impl LossKind {
    pub fn value(&self, logits: &[f64], target: &LossTarget) -> Result<f64> {
        match (self, target) {
            (LossKind::CrossEntropySoftmax, LossTarget::Class(c)) => {
                cross_entropy_loss(logits, *c)
            }
            (LossKind::BceSigmoidPerLabel, LossTarget::Binary(y)) => bce_loss(logits, y),
            (LossKind::KdKlWithTemperature { temperature }, LossTarget::TeacherLogits(t)) => {
                kd_loss(logits, t, *temperature)
            }
            (LossKind::Hinge, LossTarget::Signs(y)) => hinge_loss(logits, y),
            _ => Err(Error::shape("loss kind and target do not match")),
        }
    }

    pub fn grad(&self, logits: &[f64], target: &LossTarget) -> Result<Vec<f64>> {
        match (self, target) {
            (LossKind::CrossEntropySoftmax, LossTarget::Class(c)) => {
                cross_entropy_grad(logits, *c)
            }
            (LossKind::BceSigmoidPerLabel, LossTarget::Binary(y)) => bce_grad(logits, y),
            (LossKind::KdKlWithTemperature { temperature }, LossTarget::TeacherLogits(t)) => {
                kd_loss_grad(logits, t, *temperature)
            }
            (LossKind::Hinge, LossTarget::Signs(y)) => hinge_grad(logits, y),
            _ => Err(Error::shape("loss kind and target do not match")),
        }
    }
}

/// Numerically stable softmax with max subtraction.
pub fn softmax_probs(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.iter().map(|&e| e / sum).collect()
}

pub fn cross_entropy_loss(logits: &[f64], class: usize) -> Result<f64> {
    if class >= logits.len() {
        return Err(Error::shape(format!(
            "class {class} out of range for {} logits",
            logits.len()
        )));
    }
    let p = softmax_probs(logits);
    Ok(-p[class].max(LOG_FLOOR).ln())
}

pub fn cross_entropy_grad(logits: &[f64], class: usize) -> Result<Vec<f64>> {
    if class >= logits.len() {
        return Err(Error::shape("class index out of range"));
    }
    let mut g = softmax_probs(logits);
    g[class] -= 1.0;
    Ok(g)
}

#[inline]
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Summed binary cross-entropy over per-label sigmoid outputs; log
/// arguments are clamped at 1e-12.
pub fn bce_loss(logits: &[f64], targets01: &[f64]) -> Result<f64> {
    if logits.len() != targets01.len() {
        return Err(Error::shape("bce target length mismatch"));
    }
    let mut total = 0.0;
    for (&z, &y) in logits.iter().zip(targets01) {
        let p = sigmoid(z);
        total -= y * p.max(LOG_FLOOR).ln() + (1.0 - y) * (1.0 - p).max(LOG_FLOOR).ln();
    }
    Ok(total)
}

pub fn bce_grad(logits: &[f64], targets01: &[f64]) -> Result<Vec<f64>> {
    if logits.len() != targets01.len() {
        return Err(Error::shape("bce target length mismatch"));
    }
    Ok(logits
        .iter()
        .zip(targets01)
        .map(|(&z, &y)| sigmoid(z) - y)
        .collect())
}

/// Distillation loss: `tau^2 * KL(softmax(teacher/tau) || softmax(student/tau))`.
///
/// Zero exactly when the logits differ by a constant shift.
pub fn kd_loss(student_logits: &[f64], teacher_logits: &[f64], tau: f64) -> Result<f64> {
    if student_logits.len() != teacher_logits.len() {
        return Err(Error::shape("kd logits length mismatch"));
    }
    if tau <= 0.0 {
        return Err(Error::InvalidConfig("kd temperature must be > 0".into()));
    }
    let ps: Vec<f64> = softmax_probs(&scale(student_logits, 1.0 / tau));
    let pt: Vec<f64> = softmax_probs(&scale(teacher_logits, 1.0 / tau));
    let mut kl = 0.0;
    for (&t, &s) in pt.iter().zip(&ps) {
        if t > 0.0 {
            kl += t * (t.max(LOG_FLOOR) / s.max(LOG_FLOOR)).ln();
        }
    }
    Ok(tau * tau * kl.max(0.0))
}

/// Gradient of [`kd_loss`] with respect to the student logits:
/// `tau * (softmax(student/tau) - softmax(teacher/tau))`.
pub fn kd_loss_grad(student_logits: &[f64], teacher_logits: &[f64], tau: f64) -> Result<Vec<f64>> {
    if student_logits.len() != teacher_logits.len() {
        return Err(Error::shape("kd logits length mismatch"));
    }
    if tau <= 0.0 {
        return Err(Error::InvalidConfig("kd temperature must be > 0".into()));
    }
    let ps = softmax_probs(&scale(student_logits, 1.0 / tau));
    let pt = softmax_probs(&scale(teacher_logits, 1.0 / tau));
    Ok(ps.iter().zip(&pt).map(|(&s, &t)| tau * (s - t)).collect())
}

/// Hinge over per-output signs: `sum_j max(0, 1 - y_j z_j)`.
pub fn hinge_loss(logits: &[f64], signs: &[f64]) -> Result<f64> {
    if logits.len() != signs.len() {
        return Err(Error::shape("hinge sign length mismatch"));
    }
    Ok(logits
        .iter()
        .zip(signs)
        .map(|(&z, &y)| (1.0 - y * z).max(0.0))
        .sum())
}

/// Subgradient of the hinge; 0 at the kink.
pub fn hinge_grad(logits: &[f64], signs: &[f64]) -> Result<Vec<f64>> {
    if logits.len() != signs.len() {
        return Err(Error::shape("hinge sign length mismatch"));
    }
    Ok(logits
        .iter()
        .zip(signs)
        .map(|(&z, &y)| if 1.0 - y * z > 0.0 { -y } else { 0.0 })
        .collect())
}

fn scale(v: &[f64], s: f64) -> Vec<f64> {
    v.iter().map(|&x| x * s).collect()
}
