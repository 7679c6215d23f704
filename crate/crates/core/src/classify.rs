//! Two-class linear discriminant analysis on the (F1, F2) plane and
//! majority voting across channels.
//!
//! Pooled-covariance LDA with class-frequency priors. The decision rule is
//! the sign of `w' x + b` with `w = S^-1 (mu_pd - mu_ctl)`; a boundary tie
//! resolves to `Pd` (the class listed first) for reproducibility.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::signal::Group;

#[derive(Error, Debug)]
pub enum ClassifyError {
    #[error("training data must contain both classes")]
    SingleClass,
    #[error("need at least 2 samples per class, got PD={0}, CTL={1}")]
    TooFewSamples(usize, usize),
    #[error("non-finite feature value in {0}")]
    NonFinite(&'static str),
    #[error("voting needs an odd channel count, got {0}")]
    EvenVoterCount(usize),
}

/// Covariance regularization strength, applied as `eps * trace/2 * I`.
pub const COV_REG_EPS: f64 = 1e-6;

/// Eigenvalue floor (relative to trace) below which regularization kicks in.
pub const COV_EIG_FLOOR: f64 = 1e-10;

/// Fitted two-class LDA model over 2-D features.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LdaModel {
    pub mean_pd: [f64; 2],
    pub mean_ctl: [f64; 2],
    /// Pooled within-class covariance (after any regularization), row-major.
    pub cov: [[f64; 2]; 2],
    pub prior_pd: f64,
    pub prior_ctl: f64,
    /// Weight vector of the linear rule `w' x + b`.
    pub weights: [f64; 2],
    pub bias: f64,
    /// True when the covariance needed the eigenvalue-floor regularization.
    pub regularized: bool,
}

fn mean2(points: &[[f64; 2]]) -> [f64; 2] {
    let n = points.len() as f64;
    let mut m = [0.0, 0.0];
    for p in points {
        m[0] += p[0];
        m[1] += p[1];
    }
    [m[0] / n, m[1] / n]
}

/// Fit a pooled-covariance LDA on labeled (F1, F2) points.
pub fn lda_fit(features: &[([f64; 2], Group)]) -> Result<LdaModel, ClassifyError> {
    for (x, _) in features {
        if !x[0].is_finite() || !x[1].is_finite() {
            return Err(ClassifyError::NonFinite("training data"));
        }
    }
    let pd: Vec<[f64; 2]> = features
        .iter()
        .filter(|(_, g)| *g == Group::Pd)
        .map(|(x, _)| *x)
        .collect();
    let ctl: Vec<[f64; 2]> = features
        .iter()
        .filter(|(_, g)| *g == Group::Ctl)
        .map(|(x, _)| *x)
        .collect();
    if pd.is_empty() || ctl.is_empty() {
        return Err(ClassifyError::SingleClass);
    }
    if pd.len() < 2 || ctl.len() < 2 {
        return Err(ClassifyError::TooFewSamples(pd.len(), ctl.len()));
    }
    let n = (pd.len() + ctl.len()) as f64;
    let mean_pd = mean2(&pd);
    let mean_ctl = mean2(&ctl);

    let mut cov = [[0.0f64; 2]; 2];
    for (points, mean) in [(&pd, mean_pd), (&ctl, mean_ctl)] {
        for p in points.iter() {
            let d = [p[0] - mean[0], p[1] - mean[1]];
            cov[0][0] += d[0] * d[0];
            cov[0][1] += d[0] * d[1];
            cov[1][1] += d[1] * d[1];
        }
    }
    // maximum-likelihood pooling (divide by n): duplicating every sample
    // leaves the model bit-identical
    cov[0][0] /= n;
    cov[0][1] /= n;
    cov[1][1] /= n;
    cov[1][0] = cov[0][1];

    // symmetric 2x2 eigenvalues
    let trace = cov[0][0] + cov[1][1];
    let det = cov[0][0] * cov[1][1] - cov[0][1] * cov[1][0];
    let disc = (trace * trace / 4.0 - det).max(0.0).sqrt();
    let lambda_min = trace / 2.0 - disc;
    let regularized = lambda_min < COV_EIG_FLOOR * trace.max(f64::MIN_POSITIVE);
    if regularized {
        let ridge = COV_REG_EPS * (trace / 2.0).max(f64::MIN_POSITIVE);
        cov[0][0] += ridge;
        cov[1][1] += ridge;
    }

    let det = cov[0][0] * cov[1][1] - cov[0][1] * cov[1][0];
    let inv = [
        [cov[1][1] / det, -cov[0][1] / det],
        [-cov[1][0] / det, cov[0][0] / det],
    ];
    let diff = [mean_pd[0] - mean_ctl[0], mean_pd[1] - mean_ctl[1]];
    let weights = [
        inv[0][0] * diff[0] + inv[0][1] * diff[1],
        inv[1][0] * diff[0] + inv[1][1] * diff[1],
    ];
    let mid = [
        (mean_pd[0] + mean_ctl[0]) / 2.0,
        (mean_pd[1] + mean_ctl[1]) / 2.0,
    ];
    let prior_pd = pd.len() as f64 / n;
    let prior_ctl = ctl.len() as f64 / n;
    let bias = -(weights[0] * mid[0] + weights[1] * mid[1]) + (prior_pd / prior_ctl).ln();

    Ok(LdaModel {
        mean_pd,
        mean_ctl,
        cov,
        prior_pd,
        prior_ctl,
        weights,
        bias,
        regularized,
    })
}

impl LdaModel {
    /// Signed distance-like score; positive means `Pd`.
    pub fn score(&self, x: [f64; 2]) -> f64 {
        self.weights[0] * x[0] + self.weights[1] * x[1] + self.bias
    }

    /// Predicted label and score. Boundary ties resolve to `Pd`.
    pub fn predict(&self, x: [f64; 2]) -> Result<(Group, f64), ClassifyError> {
        if !x[0].is_finite() || !x[1].is_finite() {
            return Err(ClassifyError::NonFinite("prediction input"));
        }
        let s = self.score(x);
        Ok((if s >= 0.0 { Group::Pd } else { Group::Ctl }, s))
    }

    /// The two discriminant functions evaluated directly
    /// (`x' S^-1 mu_c - mu_c' S^-1 mu_c / 2 + ln prior_c`).
    pub fn discriminants(&self, x: [f64; 2]) -> (f64, f64) {
        let det = self.cov[0][0] * self.cov[1][1] - self.cov[0][1] * self.cov[1][0];
        let inv = [
            [self.cov[1][1] / det, -self.cov[0][1] / det],
            [-self.cov[1][0] / det, self.cov[0][0] / det],
        ];
        let delta = |mu: [f64; 2], prior: f64| {
            let smu = [
                inv[0][0] * mu[0] + inv[0][1] * mu[1],
                inv[1][0] * mu[0] + inv[1][1] * mu[1],
            ];
            x[0] * smu[0] + x[1] * smu[1] - 0.5 * (mu[0] * smu[0] + mu[1] * smu[1]) + prior.ln()
        };
        (
            delta(self.mean_pd, self.prior_pd),
            delta(self.mean_ctl, self.prior_ctl),
        )
    }
}

/// Majority vote over an odd number of per-channel labels.
pub fn vote(labels: &[Group]) -> Result<Group, ClassifyError> {
    if labels.is_empty() || labels.len() % 2 == 0 {
        return Err(ClassifyError::EvenVoterCount(labels.len()));
    }
    let pd = labels.iter().filter(|g| **g == Group::Pd).count();
    Ok(if 2 * pd > labels.len() {
        Group::Pd
    } else {
        Group::Ctl
    })
}
