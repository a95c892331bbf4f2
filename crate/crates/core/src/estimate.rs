//! The estimation function: propensity model, stabilized inverse-probability
//! weights, weighted logistic outcome regression, and the model-robust
//! sandwich standard error.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::sim::logistic;

pub const DEFAULT_MAX_ITER: usize = 25;
pub const DEFAULT_TOL: f64 = 1e-8;
/// A coefficient beyond this magnitude is treated as quasi-separation.
const SEPARATION_THRESHOLD: f64 = 20.0;
const PROB_CLIP: f64 = 1e-12;

/// Result of one iteratively reweighted least squares fit.
#[derive(Debug, Clone)]
pub struct LogisticFit {
    /// Coefficients in design-column order (log-odds units).
    pub coefficients: DVector<f64>,
    /// Inverse observed information.
    pub model_covariance: DMatrix<f64>,
    /// Sandwich covariance A^-1 B A^-1; present when weights were supplied.
    pub robust_covariance: Option<DMatrix<f64>>,
    pub converged: bool,
    pub iterations_used: usize,
    pub deviance: f64,
}

impl LogisticFit {
    /// Fitted probabilities on a design matrix.
    pub fn predict(&self, design: &DMatrix<f64>) -> Vec<f64> {
        let eta = design * &self.coefficients;
        eta.iter().map(|&e| logistic(e)).collect()
    }
}

/// Which outcome an effect estimate belongs to.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OutcomeId {
    OutcomeOfInterest,
    NegativeControl(usize),
    PositiveControl { source: usize, target: f64 },
}

/// Point estimate of a treatment effect with its standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EffectEstimate {
    /// Log odds ratio.
    pub theta_hat: f64,
    /// Sandwich standard error.
    pub se_hat: f64,
    pub outcome_id: OutcomeId,
}

/// Four-accumulator dot product; fixed summation order, vectorizes well.
fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f64; 4];
    let chunks = a.len() / 4;
    for i in 0..chunks {
        let j = 4 * i;
        acc[0] += a[j] * b[j];
        acc[1] += a[j + 1] * b[j + 1];
        acc[2] += a[j + 2] * b[j + 2];
        acc[3] += a[j + 3] * b[j + 3];
    }
    let mut tail = 0.0;
    for j in 4 * chunks..a.len() {
        tail += a[j] * b[j];
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// Column `j` of a column-major design matrix as a slice.
fn col(design: &DMatrix<f64>, j: usize) -> &[f64] {
    let n = design.nrows();
    &design.as_slice()[j * n..(j + 1) * n]
}

/// Accumulate the weighted cross-product matrix X' diag(s) X.
fn weighted_cross_product(design: &DMatrix<f64>, s: &[f64], scratch: &mut Vec<f64>) -> DMatrix<f64> {
    let k = design.ncols();
    let mut a = DMatrix::zeros(k, k);
    for b in 0..k {
        let cb = col(design, b);
        scratch.clear();
        scratch.extend(cb.iter().zip(s).map(|(x, w)| x * w));
        for r in b..k {
            let d = dot(col(design, r), scratch);
            a[(r, b)] = d;
            a[(b, r)] = d;
        }
    }
    a
}

/// eta = design * beta, written into `eta`.
fn linear_predictor_into(design: &DMatrix<f64>, beta: &DVector<f64>, eta: &mut [f64]) {
    let k = design.ncols();
    let c0 = col(design, 0);
    let b0 = beta[0];
    for (e, x) in eta.iter_mut().zip(c0) {
        *e = b0 * x;
    }
    for j in 1..k {
        let bj = beta[j];
        if bj == 0.0 {
            continue;
        }
        for (e, x) in eta.iter_mut().zip(col(design, j)) {
            *e += bj * x;
        }
    }
}

fn weighted_deviance(y: &[u8], p: &[f64], w: Option<&[f64]>) -> f64 {
    let mut dev = 0.0;
    for i in 0..y.len() {
        let pi = p[i].clamp(PROB_CLIP, 1.0 - PROB_CLIP);
        let ll = if y[i] == 1 { pi.ln() } else { (1.0 - pi).ln() };
        dev += w.map_or(1.0, |w| w[i]) * ll;
    }
    -2.0 * dev
}


/// Maximize the (weighted) Bernoulli log-likelihood by IRLS.
///
/// The design matrix must include an intercept column. Weights, when given,
/// must be strictly positive. Converges on the deviance; errors on
/// non-convergence, separation, or a singular weighted normal system.
pub fn fit_logistic(
    design: &DMatrix<f64>,
    y: &[u8],
    weights: Option<&[f64]>,
    max_iter: usize,
    tol: f64,
) -> Result<LogisticFit> {
    let n = design.nrows();
    let k = design.ncols();
    if n == 0 || k == 0 {
        return Err(Error::InvalidInput("empty design matrix".into()));
    }
    if y.len() != n {
        return Err(Error::InvalidInput(format!(
            "response length {} does not match {} rows",
            y.len(),
            n
        )));
    }
    if let Some(w) = weights {
        if w.len() != n {
            return Err(Error::InvalidInput("weight length mismatch".into()));
        }
        if w.iter().any(|&wi| !(wi > 0.0) || !wi.is_finite()) {
            return Err(Error::InvalidInput(
                "weights must be strictly positive and finite".into(),
            ));
        }
    }

    // Intercept warm start: logit of the weighted outcome mean.
    let mut beta = DVector::zeros(k);
    {
        let (mut num, mut den) = (0.0, 0.0);
        for i in 0..n {
            let wi = weights.map_or(1.0, |w| w[i]);
            num += wi * f64::from(y[i]);
            den += wi;
        }
        let ybar = (num / den).clamp(1e-6, 1.0 - 1e-6);
        beta[0] = (ybar / (1.0 - ybar)).ln();
    }
    let mut p: Vec<f64> = vec![logistic(beta[0]); n];
    let mut s = vec![0.0; n];
    let mut r = vec![0.0; n];
    let mut eta = vec![0.0; n];
    let mut scratch: Vec<f64> = Vec::with_capacity(n);
    let mut dev = weighted_deviance(y, &p, weights);
    let mut converged = false;
    let mut iterations_used = 0;

    for iter in 1..=max_iter {
        iterations_used = iter;
        let mut max_s = 0f64;
        for i in 0..n {
            let wi = weights.map_or(1.0, |w| w[i]);
            let si = wi * p[i] * (1.0 - p[i]);
            s[i] = si;
            r[i] = wi * (f64::from(y[i]) - p[i]);
            if si > max_s {
                max_s = si;
            }
        }
        if max_s == 0.0 {
            return Err(Error::SeparationDetected(
                "working weights underflowed to zero".into(),
            ));
        }

        let a = weighted_cross_product(design, &s, &mut scratch);
        let g = DVector::from_iterator(k, (0..k).map(|c| dot(col(design, c), &r)));
        let chol = a.cholesky().ok_or(Error::RankDeficient)?;
        let delta = chol.solve(&g);

        // Step-halve if the deviance fails to decrease.
        let mut step = 1.0;
        let mut new_beta;
        let mut new_dev;
        loop {
            new_beta = &beta + &delta * step;
            linear_predictor_into(design, &new_beta, &mut eta);
            for (pi, e) in p.iter_mut().zip(eta.iter()) {
                *pi = logistic(*e);
            }
            new_dev = weighted_deviance(y, &p, weights);
            if new_dev.is_finite() && new_dev <= dev + 1e-10 {
                break;
            }
            step *= 0.5;
            if step < 1.0 / 32.0 {
                break;
            }
        }
        let change = (dev - new_dev).abs();
        beta = new_beta;
        let dev_prev = dev;
        dev = new_dev;

        if beta.amax() > SEPARATION_THRESHOLD {
            return Err(Error::SeparationDetected(format!(
                "coefficient magnitude exceeded {SEPARATION_THRESHOLD}"
            )));
        }
        if change < tol * (0.1 + dev_prev.abs()) {
            converged = true;
            break;
        }
    }

    if !converged {
        return Err(Error::NonConvergence {
            iterations: iterations_used,
            deviance: dev,
        });
    }

    for i in 0..n {
        let wi = weights.map_or(1.0, |w| w[i]);
        s[i] = wi * p[i] * (1.0 - p[i]);
        r[i] = wi * (f64::from(y[i]) - p[i]);
    }
    let a = weighted_cross_product(design, &s, &mut scratch);
    let chol = a.clone().cholesky().ok_or(Error::RankDeficient)?;
    let model_covariance = chol.inverse();
    let robust_covariance = weights.map(|_| {
        let r2: Vec<f64> = r.iter().map(|v| v * v).collect();
        let b = weighted_cross_product(design, &r2, &mut scratch);
        &model_covariance * b * &model_covariance
    });

    Ok(LogisticFit {
        coefficients: beta,
        model_covariance,
        robust_covariance,
        converged,
        iterations_used,
        deviance: dev,
    })
}

/// Design matrix [1 | x] used by the propensity and control models.
pub(crate) fn design_with_intercept(x: &DMatrix<f64>) -> DMatrix<f64> {
    let n = x.nrows();
    let mut d = DMatrix::zeros(n, x.ncols() + 1);
    d.column_mut(0).fill(1.0);
    d.columns_mut(1, x.ncols()).copy_from(x);
    d
}

/// Fitted treatment probabilities from a main-effects logistic model of
/// treatment on the observed confounders. The estimation model never sees
/// quadratic, interaction, or unmeasured terms; that is where
/// misspecification and unmeasured-confounding bias come from.
pub fn propensity_scores(x_observed: &DMatrix<f64>, z: &[u8]) -> Result<Vec<f64>> {
    let design = design_with_intercept(x_observed);
    let fit = fit_logistic(&design, z, None, DEFAULT_MAX_ITER, DEFAULT_TOL)?;
    Ok(fit.predict(&design))
}

/// Stabilized weights: marginal treatment probability over the propensity of
/// the received treatment. No truncation.
pub fn stabilized_weights(z: &[u8], ps: &[f64]) -> Result<Vec<f64>> {
    if z.len() != ps.len() {
        return Err(Error::InvalidInput("length mismatch".into()));
    }
    for (i, &p) in ps.iter().enumerate() {
        if !(p > 0.0 && p < 1.0) || !p.is_finite() {
            return Err(Error::DegenerateScore(i));
        }
    }
    let prevalence = z.iter().map(|&zi| f64::from(zi)).sum::<f64>() / z.len() as f64;
    Ok(z.iter()
        .zip(ps.iter())
        .map(|(&zi, &p)| {
            if zi == 1 {
                prevalence / p
            } else {
                (1.0 - prevalence) / (1.0 - p)
            }
        })
        .collect())
}

/// Cap weights at their q-th sample quantile (upper tail only).
pub fn truncate_weights(w: &[f64], q: f64) -> Result<Vec<f64>> {
    if !(0.5 < q && q < 1.0) {
        return Err(Error::InvalidInput(format!(
            "truncation quantile must lie in (0.5, 1), got {q}"
        )));
    }
    let mut sorted = w.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let idx = ((q * (sorted.len() - 1) as f64).ceil() as usize).min(sorted.len() - 1);
    let cap = sorted[idx];
    Ok(w.iter().map(|&v| v.min(cap)).collect())
}

/// Weighted logistic regression of an outcome on intercept + treatment;
/// the treatment coefficient and its sandwich standard error.
pub fn estimate_effect(z: &[u8], y: &[u8], w: &[f64]) -> Result<EffectEstimate> {
    let n = z.len();
    if y.len() != n || w.len() != n {
        return Err(Error::InvalidInput("length mismatch".into()));
    }
    let treated = z.iter().filter(|&&zi| zi == 1).count();
    if treated == 0 || treated == n {
        return Err(Error::AllOneArm);
    }
    let mut design = DMatrix::zeros(n, 2);
    design.column_mut(0).fill(1.0);
    for (i, &zi) in z.iter().enumerate() {
        design[(i, 1)] = f64::from(zi);
    }
    let fit = fit_logistic(&design, y, Some(w), DEFAULT_MAX_ITER, DEFAULT_TOL)?;
    let robust = fit
        .robust_covariance
        .as_ref()
        .expect("weights were supplied");
    let se = robust[(1, 1)].sqrt();
    if !(se > 0.0 && se.is_finite()) {
        return Err(Error::SeparationDetected(format!(
            "degenerate sandwich standard error {se}"
        )));
    }
    Ok(EffectEstimate {
        theta_hat: fit.coefficients[1],
        se_hat: se,
        outcome_id: OutcomeId::OutcomeOfInterest,
    })
}
