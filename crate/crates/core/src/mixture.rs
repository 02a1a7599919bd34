//! Mixtures of Gaussian regressions with diagonal covariances.
//!
//! A model with `k` components maps a feature row `x` to the conditional
//! density `sum_k pi_k N(y; B_k x, diag(sigma2_k))`. There is no intercept:
//! the preprocessing already removes levels, so regressors explain responses
//! directly. All densities are evaluated in log space.

use ndarray::{Array1, Array2, ArrayView1};

use crate::error::{Error, Result};
use crate::ingest::RegressionDataset;

/// Parameters of one fitted mixture.
#[derive(Debug, Clone, PartialEq)]
pub struct MixtureParams {
    pi: Vec<f64>,
    beta: Vec<Array2<f64>>,
    sigma2: Vec<Array1<f64>>,
}

impl MixtureParams {
    pub fn new(pi: Vec<f64>, beta: Vec<Array2<f64>>, sigma2: Vec<Array1<f64>>) -> Result<Self> {
        let k = pi.len();
        if k == 0 || beta.len() != k || sigma2.len() != k {
            return Err(Error::data(format!(
                "component count mismatch: pi {k}, beta {}, sigma2 {}",
                beta.len(),
                sigma2.len()
            )));
        }
        let total: f64 = pi.iter().sum();
        if (total - 1.0).abs() > 1e-12 || pi.iter().any(|w| !(*w >= 0.0)) {
            return Err(Error::data(format!("weights do not form a distribution: {pi:?}")));
        }
        let (q, p) = (beta[0].nrows(), beta[0].ncols());
        for b in &beta {
            if b.nrows() != q || b.ncols() != p || b.iter().any(|v| !v.is_finite()) {
                return Err(Error::data("inconsistent or non-finite coefficient matrix"));
            }
        }
        for s in &sigma2 {
            if s.len() != q || s.iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
                return Err(Error::data("variances must be positive and finite"));
            }
        }
        Ok(MixtureParams { pi, beta, sigma2 })
    }

    pub fn k(&self) -> usize {
        self.pi.len()
    }

    pub fn p(&self) -> usize {
        self.beta[0].ncols()
    }

    pub fn q(&self) -> usize {
        self.beta[0].nrows()
    }

    pub fn pi(&self) -> &[f64] {
        &self.pi
    }

    pub fn beta(&self, k: usize) -> &Array2<f64> {
        &self.beta[k]
    }

    pub fn sigma2(&self, k: usize) -> &Array1<f64> {
        &self.sigma2[k]
    }

    /// Predicted response mean of component `k` for one feature row.
    pub fn predict(&self, k: usize, x: ArrayView1<f64>) -> Array1<f64> {
        self.beta[k].dot(&x)
    }

    fn check_row(&self, x: ArrayView1<f64>, y: ArrayView1<f64>) -> Result<()> {
        if x.len() != self.p() {
            return Err(Error::Dim {
                what: "feature row",
                expected: self.p(),
                got: x.len(),
            });
        }
        if y.len() != self.q() {
            return Err(Error::Dim {
                what: "response row",
                expected: self.q(),
                got: y.len(),
            });
        }
        Ok(())
    }

    fn check_data(&self, data: &RegressionDataset) -> Result<()> {
        self.check_row(data.x.row(0), data.y.row(0))
    }
}

const LN_2PI: f64 = 1.8378770664093453;

pub(crate) fn logsumexp(terms: &[f64]) -> f64 {
    let m = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    let sum: f64 = terms.iter().map(|t| (t - m).exp()).sum();
    m + sum.ln()
}

/// log(pi_k) + log N(y; B_k x, sigma2_k) for every component.
fn component_log_terms(params: &MixtureParams, x: ArrayView1<f64>, y: ArrayView1<f64>, out: &mut [f64]) {
    for k in 0..params.k() {
        let mean = params.beta[k].dot(&x);
        let mut log_density = 0.0;
        for l in 0..params.q() {
            let s2 = params.sigma2[k][l];
            let r = y[l] - mean[l];
            log_density -= 0.5 * (LN_2PI + s2.ln() + r * r / s2);
        }
        out[k] = if params.pi[k] > 0.0 {
            params.pi[k].ln() + log_density
        } else {
            f64::NEG_INFINITY
        };
    }
}

/// Log of the conditional mixture density at one (x, y) pair.
pub fn log_conditional_density(
    params: &MixtureParams,
    x: ArrayView1<f64>,
    y: ArrayView1<f64>,
) -> Result<f64> {
    params.check_row(x, y)?;
    let mut terms = vec![0.0; params.k()];
    component_log_terms(params, x, y, &mut terms);
    Ok(logsumexp(&terms))
}

/// Responsibilities and mean log-likelihood in one sweep over the data.
pub(crate) fn e_step(params: &MixtureParams, data: &RegressionDataset) -> (Array2<f64>, f64) {
    let n = data.n();
    let k = params.k();
    let mut tau = Array2::zeros((n, k));
    let mut total = 0.0;
    let mut terms = vec![0.0; k];
    for i in 0..n {
        component_log_terms(params, data.x.row(i), data.y.row(i), &mut terms);
        let lse = logsumexp(&terms);
        total += lse;
        for j in 0..k {
            tau[[i, j]] = (terms[j] - lse).exp();
        }
        // renormalize away the exp round-off so each row is exactly a distribution
        let row_sum: f64 = tau.row(i).sum();
        for j in 0..k {
            tau[[i, j]] /= row_sum;
        }
    }
    (tau, total / n as f64)
}

/// Mean log conditional density over the dataset rows.
pub fn log_likelihood(params: &MixtureParams, data: &RegressionDataset) -> Result<f64> {
    params.check_data(data)?;
    Ok(e_step(params, data).1)
}

/// Posterior component probabilities, one row per observation.
pub fn responsibilities(params: &MixtureParams, data: &RegressionDataset) -> Result<Array2<f64>> {
    params.check_data(data)?;
    Ok(e_step(params, data).0)
}

/// Most probable component per row; ties go to the lowest index.
pub fn map_assign(tau: &Array2<f64>) -> Vec<usize> {
    tau.rows()
        .into_iter()
        .map(|row| {
            let mut best = 0;
            for (j, v) in row.iter().enumerate() {
                if *v > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}

/// Free-parameter count of a model: mixing weights, active coefficients
/// shared across components, and per-component variances.
pub fn model_dimension(k: usize, support_size: usize, q: usize) -> usize {
    (k - 1) + k * support_size + k * q
}
