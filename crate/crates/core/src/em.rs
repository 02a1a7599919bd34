//! Two-stage estimation for regression mixtures.
//!
//! Stage one, [`lasso_em_fit`], runs EM on an l1-penalized likelihood: the
//! E-step computes responsibilities, the M-step refreshes weights and
//! variances and then cycles soft-thresholded coordinate updates over the
//! coefficients. Regressor columns are rescaled to unit standard deviation
//! inside the solver so a single penalty level is comparable across
//! coordinates; reported coefficients are always on the original scale.
//!
//! Stage two, [`refit_mle`], keeps only the support found in stage one and
//! reruns EM without penalty, which removes the shrinkage bias before
//! likelihoods are compared across models.

use ndarray::{Array1, Array2, Axis};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::RegressionDataset;
use crate::mixture::{e_step, MixtureParams};

/// Set of active coefficient positions `(response row, regressor column)`,
/// shared by all components, kept sorted row-major.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Support {
    entries: Vec<(usize, usize)>,
}

impl Support {
    pub fn new(mut entries: Vec<(usize, usize)>, q: usize, p: usize) -> Result<Self> {
        entries.sort_unstable();
        entries.dedup();
        if let Some(&(l, j)) = entries.iter().find(|&&(l, j)| l >= q || j >= p) {
            return Err(Error::data(format!(
                "support entry ({l}, {j}) outside a {q} x {p} coefficient matrix"
            )));
        }
        Ok(Support { entries })
    }

    pub fn empty() -> Self {
        Support { entries: Vec::new() }
    }

    pub fn full(q: usize, p: usize) -> Self {
        let entries = (0..q).flat_map(|l| (0..p).map(move |j| (l, j))).collect();
        Support { entries }
    }

    /// Union of non-zero positions over all component matrices.
    pub fn from_params(params: &MixtureParams) -> Self {
        let mut entries = Vec::new();
        for l in 0..params.q() {
            for j in 0..params.p() {
                if (0..params.k()).any(|k| params.beta(k)[[l, j]] != 0.0) {
                    entries.push((l, j));
                }
            }
        }
        Support { entries }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[(usize, usize)] {
        &self.entries
    }

    pub fn contains(&self, l: usize, j: usize) -> bool {
        self.entries.binary_search(&(l, j)).is_ok()
    }

    /// Active regressor columns for one response coordinate.
    pub fn cols_for_response(&self, l: usize) -> Vec<usize> {
        self.entries
            .iter()
            .filter(|(row, _)| *row == l)
            .map(|(_, j)| *j)
            .collect()
    }
}

/// How EM runs are started.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum InitStrategy {
    /// One k-means++ start on the stacked `(x, y)` rows plus random soft
    /// starts up to `n_starts`.
    #[default]
    KmeansAndRandom,
    /// A single uniform-responsibility start. From this start a penalty at or
    /// above [`lambda_max`] provably keeps every coefficient at zero.
    Uniform,
}

#[derive(Debug, Clone)]
pub struct EmOptions {
    pub max_iter: usize,
    pub tol: f64,
    pub n_starts: usize,
    pub seed: u64,
    /// Variance floor as a fraction of each response coordinate's variance.
    pub variance_floor_scale: f64,
    pub init: InitStrategy,
}

impl Default for EmOptions {
    fn default() -> Self {
        EmOptions {
            max_iter: 200,
            tol: 1e-6,
            n_starts: 5,
            seed: 0,
            variance_floor_scale: 1e-8,
            init: InitStrategy::KmeansAndRandom,
        }
    }
}

/// Result of one penalized fit.
#[derive(Debug, Clone)]
pub struct PenalizedFit {
    pub params: MixtureParams,
    pub support: Support,
    pub lambda: f64,
    /// Penalized objective after each EM iteration, non-decreasing.
    pub objective_trace: Vec<f64>,
    /// True when a collapsing component was dropped along the way.
    pub degenerate: bool,
}

/// Result of one support-restricted maximum-likelihood fit.
#[derive(Debug, Clone)]
pub struct MleFit {
    pub params: MixtureParams,
    /// Mean log-likelihood of the final parameters.
    pub loglik: f64,
    /// Mean log-likelihood after each EM iteration, non-decreasing.
    pub trace: Vec<f64>,
    pub degenerate: bool,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Deterministic seed derivation for sub-tasks (starts, grid cells, ...).
pub(crate) fn mix_seed(root: u64, salts: &[u64]) -> u64 {
    let mut acc = splitmix64(root ^ 0x6c62_272e_07bb_0142);
    for s in salts {
        acc = splitmix64(acc ^ splitmix64(*s));
    }
    acc
}

/// Per-fit quantities shared by both stages.
struct FitContext<'a> {
    data: &'a RegressionDataset,
    /// x with every column divided by its scale.
    xs: Array2<f64>,
    /// Per-column standard deviations (1 for constant columns).
    scales: Vec<f64>,
    /// Per-response variance floor.
    floor: Vec<f64>,
}

impl<'a> FitContext<'a> {
    fn new(data: &'a RegressionDataset, opts: &EmOptions) -> Self {
        let n = data.n() as f64;
        let scales: Vec<f64> = (0..data.p())
            .map(|j| {
                let col = data.x.column(j);
                let mean = col.sum() / n;
                let var = col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
                if var > 0.0 {
                    var.sqrt()
                } else {
                    1.0
                }
            })
            .collect();
        let mut xs = data.x.clone();
        for (j, s) in scales.iter().enumerate() {
            xs.column_mut(j).mapv_inplace(|v| v / s);
        }
        let floor: Vec<f64> = (0..data.q())
            .map(|l| {
                let col = data.y.column(l);
                let mean = col.sum() / n;
                let var = col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
                if var > 0.0 {
                    opts.variance_floor_scale * var
                } else {
                    1e-12
                }
            })
            .collect();
        FitContext { data, xs, scales, floor }
    }

    fn n(&self) -> usize {
        self.data.n()
    }

    fn p(&self) -> usize {
        self.data.p()
    }

    fn q(&self) -> usize {
        self.data.q()
    }

    /// Mixture parameters from solver state; coefficients leave the solver
    /// scale here.
    fn assemble(&self, pi: &[f64], beta_s: &[Array2<f64>], sigma2: &[Array1<f64>]) -> Result<MixtureParams> {
        let beta = beta_s
            .iter()
            .map(|b| {
                let mut out = b.clone();
                for (j, s) in self.scales.iter().enumerate() {
                    out.column_mut(j).mapv_inplace(|v| v / s);
                }
                out
            })
            .collect();
        MixtureParams::new(pi.to_vec(), beta, sigma2.to_vec())
    }
}

fn validate_fit_args(data: &RegressionDataset, k: usize, opts: &EmOptions) -> Result<()> {
    if k == 0 {
        return Err(Error::config("cluster count must be at least 1"));
    }
    if k > data.n() {
        return Err(Error::data(format!(
            "cannot fit {k} clusters to {} rows",
            data.n()
        )));
    }
    if opts.n_starts == 0 || opts.max_iter == 0 {
        return Err(Error::config("n_starts and max_iter must be positive"));
    }
    if !(opts.tol > 0.0) || !(opts.variance_floor_scale > 0.0) {
        return Err(Error::config("tol and variance_floor_scale must be positive"));
    }
    Ok(())
}

fn uniform_tau(n: usize, k: usize) -> Array2<f64> {
    Array2::from_elem((n, k), 1.0 / k as f64)
}

fn random_soft_tau(n: usize, k: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
    let mut tau = Array2::zeros((n, k));
    for i in 0..n {
        let mut sum = 0.0;
        for j in 0..k {
            let e = -rng.random::<f64>().max(1e-12).ln();
            tau[[i, j]] = e;
            sum += e;
        }
        for j in 0..k {
            tau[[i, j]] /= sum;
        }
    }
    tau
}

/// k-means++ seeding plus a few Lloyd rounds on the stacked rows, softened
/// into responsibilities.
fn kmeans_tau(data: &RegressionDataset, k: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
    let n = data.n();
    let d = data.p() + data.q();
    if k == 1 {
        return uniform_tau(n, 1);
    }
    let mut z = Array2::zeros((n, d));
    for i in 0..n {
        for j in 0..data.p() {
            z[[i, j]] = data.x[[i, j]];
        }
        for j in 0..data.q() {
            z[[i, data.p() + j]] = data.y[[i, j]];
        }
    }
    let sq_dist = |a: ndarray::ArrayView1<f64>, b: ndarray::ArrayView1<f64>| -> f64 {
        a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
    };

    let mut centers = Array2::zeros((k, d));
    centers.row_mut(0).assign(&z.row(rng.random_range(0..n)));
    let mut d2 = vec![0.0; n];
    for c in 1..k {
        let mut total = 0.0;
        for i in 0..n {
            d2[i] = (0..c).map(|m| sq_dist(z.row(i), centers.row(m))).fold(f64::INFINITY, f64::min);
            total += d2[i];
        }
        let pick = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut chosen = n - 1;
            for (i, w) in d2.iter().enumerate() {
                target -= w;
                if target <= 0.0 {
                    chosen = i;
                    break;
                }
            }
            chosen
        } else {
            rng.random_range(0..n)
        };
        centers.row_mut(c).assign(&z.row(pick));
    }

    let mut labels = vec![0usize; n];
    for _ in 0..10 {
        let mut moved = false;
        for i in 0..n {
            let mut best = 0;
            let mut best_d = f64::INFINITY;
            for c in 0..k {
                let dist = sq_dist(z.row(i), centers.row(c));
                if dist < best_d {
                    best_d = dist;
                    best = c;
                }
            }
            if labels[i] != best {
                labels[i] = best;
                moved = true;
            }
        }
        let mut counts = vec![0usize; k];
        let mut sums = Array2::<f64>::zeros((k, d));
        for i in 0..n {
            counts[labels[i]] += 1;
            let mut row = sums.row_mut(labels[i]);
            row += &z.row(i);
        }
        for c in 0..k {
            if counts[c] > 0 {
                let scaled = sums.row(c).mapv(|v| v / counts[c] as f64);
                centers.row_mut(c).assign(&scaled);
            } else {
                // restart an empty cluster at the farthest point
                let far = (0..n)
                    .max_by(|&a, &b| {
                        let da = sq_dist(z.row(a), centers.row(labels[a]));
                        let db = sq_dist(z.row(b), centers.row(labels[b]));
                        da.total_cmp(&db)
                    })
                    .unwrap_or(0);
                centers.row_mut(c).assign(&z.row(far));
                moved = true;
            }
        }
        if !moved {
            break;
        }
    }

    let mut tau = Array2::from_elem((n, k), 0.1 / k as f64);
    for i in 0..n {
        tau[[i, labels[i]]] += 0.9;
    }
    tau
}

fn make_starts(data: &RegressionDataset, k: usize, opts: &EmOptions) -> Vec<Array2<f64>> {
    match opts.init {
        InitStrategy::Uniform => vec![uniform_tau(data.n(), k)],
        InitStrategy::KmeansAndRandom => {
            let mut starts = Vec::with_capacity(opts.n_starts);
            let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(opts.seed, &[k as u64, 0]));
            starts.push(kmeans_tau(data, k, &mut rng));
            for s in 1..opts.n_starts {
                let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(opts.seed, &[k as u64, s as u64]));
                starts.push(random_soft_tau(data.n(), k, &mut rng));
            }
            starts
        }
    }
}

fn soft_threshold(z: f64, thr: f64) -> f64 {
    if z > thr {
        z - thr
    } else if z < -thr {
        z + thr
    } else {
        0.0
    }
}

/// Mixing weights from responsibilities; exact simplex by construction.
fn update_pi(tau: &Array2<f64>) -> Vec<f64> {
    let n = tau.nrows() as f64;
    let mut pi: Vec<f64> = tau.sum_axis(Axis(0)).iter().map(|v| v / n).collect();
    let total: f64 = pi.iter().sum();
    for w in pi.iter_mut() {
        *w /= total;
    }
    pi
}

/// Remove clusters whose weight fell under `1/(10 n)`. Returns the kept
/// column indices, or `None` when nothing collapsed.
fn drop_collapsed(tau: &mut Array2<f64>, pi: &[f64]) -> Option<Vec<usize>> {
    let n = tau.nrows();
    let threshold = 1.0 / (10.0 * n as f64);
    let keep: Vec<usize> = (0..pi.len()).filter(|&j| pi[j] >= threshold).collect();
    if keep.len() == pi.len() || keep.is_empty() {
        return None;
    }
    *tau = tau.select(Axis(1), &keep);
    for mut row in tau.rows_mut() {
        let sum = row.sum();
        if sum > 1e-12 {
            row.mapv_inplace(|v| v / sum);
        } else {
            row.fill(1.0 / keep.len() as f64);
        }
    }
    Some(keep)
}

fn weighted_sigma(
    ctx: &FitContext,
    w: ndarray::ArrayView1<f64>,
    resid: &Array2<f64>,
) -> Array1<f64> {
    let wsum: f64 = w.sum();
    let mut out = Array1::zeros(ctx.q());
    for l in 0..ctx.q() {
        let ss: f64 = (0..ctx.n()).map(|i| w[i] * resid[[i, l]] * resid[[i, l]]).sum();
        out[l] = (ss / wsum).max(ctx.floor[l]);
    }
    out
}

/// One penalized EM run from a fixed responsibility start.
pub(crate) fn penalized_from_tau(
    data: &RegressionDataset,
    lambda: f64,
    opts: &EmOptions,
    mut tau: Array2<f64>,
) -> Result<PenalizedFit> {
    let ctx = FitContext::new(data, opts);
    let (n, p, q) = (ctx.n(), ctx.p(), ctx.q());
    let mut k = tau.ncols();
    let mut beta_s: Vec<Array2<f64>> = vec![Array2::zeros((q, p)); k];
    let mut sigma2: Vec<Array1<f64>> = vec![Array1::ones(q); k];
    let mut trace: Vec<f64> = Vec::new();
    let mut degenerate = false;
    let mut final_params: Option<MixtureParams> = None;
    // contiguous columns keep the descent loops on sequential memory
    let xs_cols: Vec<Vec<f64>> = (0..p).map(|j| ctx.xs.column(j).to_vec()).collect();

    for _ in 0..opts.max_iter {
        // M-step: weights first, with collapse handling
        let mut pi = update_pi(&tau);
        if let Some(keep) = drop_collapsed(&mut tau, &pi) {
            beta_s = keep.iter().map(|&j| beta_s[j].clone()).collect();
            sigma2 = keep.iter().map(|&j| sigma2[j].clone()).collect();
            k = keep.len();
            degenerate = true;
            trace.clear(); // the objective restarts with the smaller model
            pi = update_pi(&tau);
        }

        for kk in 0..k {
            let w = tau.column(kk);
            // variances from the previous coefficients
            let resid = ctx.data.y.clone() - ctx.xs.dot(&beta_s[kk].t());
            sigma2[kk] = weighted_sigma(&ctx, w, &resid);

            // cyclic coordinate descent with soft thresholding
            let wx_cols: Vec<Vec<f64>> = xs_cols
                .iter()
                .map(|col| col.iter().zip(w.iter()).map(|(x, wi)| wi * x).collect())
                .collect();
            let a: Vec<f64> = wx_cols
                .iter()
                .zip(&xs_cols)
                .map(|(wx, x)| wx.iter().zip(x).map(|(u, v)| u * v).sum())
                .collect();
            let mut resid_cols: Vec<Vec<f64>> = (0..q).map(|l| resid.column(l).to_vec()).collect();
            for _pass in 0..500 {
                let mut max_step = 0.0f64;
                let mut max_coef = 0.0f64;
                for l in 0..q {
                    let thr = n as f64 * sigma2[kk][l] * lambda;
                    let rl = &mut resid_cols[l];
                    for j in 0..p {
                        if a[j] <= 0.0 {
                            continue;
                        }
                        let old = beta_s[kk][[l, j]];
                        let mut z = a[j] * old;
                        for (u, r) in wx_cols[j].iter().zip(rl.iter()) {
                            z += u * r;
                        }
                        let new = soft_threshold(z, thr) / a[j];
                        let step = new - old;
                        if step != 0.0 {
                            beta_s[kk][[l, j]] = new;
                            for (r, x) in rl.iter_mut().zip(&xs_cols[j]) {
                                *r -= step * x;
                            }
                        }
                        max_step = max_step.max(step.abs());
                        max_coef = max_coef.max(new.abs());
                    }
                }
                if max_step <= 1e-11 * (1.0 + max_coef) {
                    break;
                }
            }
        }

        let params = ctx.assemble(&pi, &beta_s, &sigma2)?;
        let (next_tau, loglik) = e_step(&params, data);
        let penalty: f64 = beta_s.iter().map(|b| b.iter().map(|v| v.abs()).sum::<f64>()).sum();
        let objective = loglik - lambda * penalty;
        if !objective.is_finite() {
            return Err(Error::numerical(format!(
                "penalized objective became {objective} at lambda {lambda}"
            )));
        }
        let converged = trace
            .last()
            .is_some_and(|prev| (objective - prev).abs() <= opts.tol * (1.0 + objective.abs()));
        trace.push(objective);
        final_params = Some(params);
        tau = next_tau;
        if converged {
            break;
        }
    }

    // the returned parameters are exactly the ones behind the last trace entry
    let params = final_params.expect("max_iter >= 1");
    let support = Support::from_params(&params);
    Ok(PenalizedFit {
        params,
        support,
        lambda,
        objective_trace: trace,
        degenerate,
    })
}

/// Penalized EM over several starts; the best final objective wins.
pub fn lasso_em_fit(
    data: &RegressionDataset,
    k: usize,
    lambda: f64,
    opts: &EmOptions,
) -> Result<PenalizedFit> {
    validate_fit_args(data, k, opts)?;
    if !lambda.is_finite() || lambda < 0.0 {
        return Err(Error::config(format!("penalty level {lambda} must be >= 0")));
    }
    let mut best: Option<PenalizedFit> = None;
    let mut first_err: Option<Error> = None;
    for tau in make_starts(data, k, opts) {
        match penalized_from_tau(data, lambda, opts, tau) {
            Ok(fit) => {
                let obj = *fit.objective_trace.last().expect("at least one iteration");
                let better = best
                    .as_ref()
                    .map(|b| obj > *b.objective_trace.last().unwrap())
                    .unwrap_or(true);
                if better {
                    best = Some(fit);
                }
            }
            Err(e) => {
                first_err.get_or_insert(e);
            }
        }
    }
    best.ok_or_else(|| first_err.expect("no start and no error is impossible"))
}

/// Smallest penalty for which the uniform start stays at zero coefficients.
///
/// With uniform responsibilities and zero coefficients, the per-coordinate
/// stationarity threshold is `|sum_i xs_ij y_il| <= K n sigma_l^2 lambda`
/// with `sigma_l^2` the second moment of the response column; the maximum of
/// the left side over `(l, j)` pins the returned value. The result carries a
/// relative 1e-10 pad so a fit at exactly this penalty rounds onto the zero
/// side of the threshold.
pub fn lambda_max(data: &RegressionDataset, k: usize) -> Result<f64> {
    let opts = EmOptions::default();
    validate_fit_args(data, k, &opts)?;
    let ctx = FitContext::new(data, &opts);
    let n = ctx.n() as f64;
    let mut worst: f64 = 0.0;
    for l in 0..ctx.q() {
        let m2 = ctx.data.y.column(l).iter().map(|v| v * v).sum::<f64>() / n;
        let s2 = m2.max(ctx.floor[l]);
        for j in 0..ctx.p() {
            let corr: f64 = (0..ctx.n())
                .map(|i| ctx.xs[[i, j]] * ctx.data.y[[i, l]])
                .sum();
            worst = worst.max(corr.abs() / (k as f64 * n * s2));
        }
    }
    Ok(worst * (1.0 + 1e-10))
}

fn cholesky_solve(mut a: Array2<f64>, mut b: Array1<f64>) -> Option<Array1<f64>> {
    let m = a.nrows();
    for j in 0..m {
        for k in 0..j {
            let l = a[[j, k]];
            for i in j..m {
                a[[i, j]] -= a[[i, k]] * l;
            }
        }
        if a[[j, j]] <= 0.0 {
            return None;
        }
        let d = a[[j, j]].sqrt();
        for i in j..m {
            a[[i, j]] /= d;
        }
    }
    // forward then backward substitution on the lower factor
    for i in 0..m {
        for j in 0..i {
            b[i] = b[i] - a[[i, j]] * b[j];
        }
        b[i] /= a[[i, i]];
    }
    for i in (0..m).rev() {
        for j in i + 1..m {
            b[i] = b[i] - a[[j, i]] * b[j];
        }
        b[i] /= a[[i, i]];
    }
    Some(b)
}

/// Responsibility-weighted least squares for one component, restricted to
/// the support, with a trace-scaled ridge retry when the normal equations
/// are singular.
fn wls_restricted(
    ctx: &FitContext,
    w: ndarray::ArrayView1<f64>,
    support: &Support,
) -> Result<Array2<f64>> {
    let (n, p, q) = (ctx.n(), ctx.p(), ctx.q());
    let mut beta = Array2::zeros((q, p));
    for l in 0..q {
        let cols = support.cols_for_response(l);
        let m = cols.len();
        if m == 0 {
            continue;
        }
        let mut a = Array2::zeros((m, m));
        let mut b = Array1::zeros(m);
        for i in 0..n {
            let wi = w[i];
            if wi == 0.0 {
                continue;
            }
            for (r, &jr) in cols.iter().enumerate() {
                let xr = ctx.data.x[[i, jr]];
                b[r] += wi * xr * ctx.data.y[[i, l]];
                for (c, &jc) in cols.iter().enumerate().take(r + 1) {
                    a[[r, c]] += wi * xr * ctx.data.x[[i, jc]];
                }
            }
        }
        for r in 0..m {
            for c in r + 1..m {
                a[[r, c]] = a[[c, r]];
            }
        }
        let solved = cholesky_solve(a.clone(), b.clone()).or_else(|| {
            let ridge = 1e-8 * a.diag().sum() / m as f64;
            if ridge > 0.0 {
                let mut reg = a;
                for r in 0..m {
                    reg[[r, r]] += ridge;
                }
                cholesky_solve(reg, b)
            } else {
                None
            }
        });
        match solved {
            Some(coefs) => {
                for (r, &j) in cols.iter().enumerate() {
                    beta[[l, j]] = coefs[r];
                }
            }
            None => {
                return Err(Error::numerical(
                    "within-cluster least squares stayed singular after the ridge retry",
                ))
            }
        }
    }
    Ok(beta)
}

/// One unpenalized EM run from a fixed responsibility start.
pub(crate) fn mle_from_tau(
    data: &RegressionDataset,
    support: &Support,
    opts: &EmOptions,
    mut tau: Array2<f64>,
) -> Result<MleFit> {
    let ctx = FitContext::new(data, opts);
    let q = ctx.q();
    let mut k = tau.ncols();
    let mut beta: Vec<Array2<f64>> = vec![Array2::zeros((q, ctx.p())); k];
    let mut sigma2: Vec<Array1<f64>> = vec![Array1::ones(q); k];
    let mut trace: Vec<f64> = Vec::new();
    let mut degenerate = false;
    let mut final_params: Option<MixtureParams> = None;

    for _ in 0..opts.max_iter {
        let mut pi = update_pi(&tau);
        if let Some(keep) = drop_collapsed(&mut tau, &pi) {
            beta = keep.iter().map(|&j| beta[j].clone()).collect();
            sigma2 = keep.iter().map(|&j| sigma2[j].clone()).collect();
            k = keep.len();
            degenerate = true;
            trace.clear();
            pi = update_pi(&tau);
        }

        for kk in 0..k {
            let w = tau.column(kk);
            beta[kk] = wls_restricted(&ctx, w, support)?;
            let resid = ctx.data.y.clone() - ctx.data.x.dot(&beta[kk].t());
            sigma2[kk] = weighted_sigma(&ctx, w, &resid);
        }

        let params = MixtureParams::new(pi, beta.clone(), sigma2.clone())?;
        let (next_tau, loglik) = e_step(&params, data);
        if !loglik.is_finite() {
            return Err(Error::numerical("log-likelihood became non-finite in the refit"));
        }
        let converged = trace
            .last()
            .is_some_and(|prev| (loglik - prev).abs() <= opts.tol * (1.0 + loglik.abs()));
        trace.push(loglik);
        final_params = Some(params);
        tau = next_tau;
        if converged {
            break;
        }
    }

    let params = final_params.expect("max_iter >= 1");
    let loglik = *trace.last().expect("at least one iteration");
    Ok(MleFit {
        params,
        loglik,
        trace,
        degenerate,
    })
}

/// Maximum-likelihood refit restricted to a support; removes the shrinkage
/// of the penalized stage before models are compared.
pub fn refit_mle(
    data: &RegressionDataset,
    k: usize,
    support: &Support,
    opts: &EmOptions,
) -> Result<MleFit> {
    validate_fit_args(data, k, opts)?;
    Support::new(support.entries().to_vec(), data.q(), data.p())?;
    let mut best: Option<MleFit> = None;
    let mut first_err: Option<Error> = None;
    for tau in make_starts(data, k, opts) {
        match mle_from_tau(data, support, opts, tau) {
            Ok(fit) => {
                let better = best.as_ref().map(|b| fit.loglik > b.loglik).unwrap_or(true);
                if better {
                    best = Some(fit);
                }
            }
            Err(e) => {
                first_err.get_or_insert(e);
            }
        }
    }
    best.ok_or_else(|| first_err.expect("no start and no error is impossible"))
}

/// Largest violation of the penalized stationarity conditions at `params`.
///
/// For active coordinates the weighted score must sit at `sign * lambda`;
/// for inactive ones its magnitude may not exceed `lambda`. Scores are
/// evaluated in the solver's unit-variance coordinates, with
/// responsibilities recomputed from `params`, so the value is only
/// meaningful at convergence.
pub fn kkt_max_violation(data: &RegressionDataset, params: &MixtureParams, lambda: f64) -> Result<f64> {
    let ctx = FitContext::new(data, &EmOptions::default());
    let (tau, _) = e_step(params, data);
    let n = ctx.n() as f64;
    let mut worst: f64 = 0.0;
    for kk in 0..params.k() {
        let resid = ctx.data.y.clone() - ctx.data.x.dot(&params.beta(kk).t());
        for l in 0..ctx.q() {
            let denom = n * params.sigma2(kk)[l];
            for j in 0..ctx.p() {
                let score: f64 = (0..ctx.n())
                    .map(|i| tau[[i, kk]] * ctx.xs[[i, j]] * resid[[i, l]])
                    .sum::<f64>()
                    / denom;
                let beta_scaled = params.beta(kk)[[l, j]] * ctx.scales[j];
                let violation = if beta_scaled == 0.0 {
                    (score.abs() - lambda).max(0.0)
                } else {
                    (score - lambda * beta_scaled.signum()).abs()
                };
                worst = worst.max(violation);
            }
        }
    }
    Ok(worst)
}
