//! Reporting on a fitted model: cluster membership, day-type composition,
//! and a day-ahead forecast comparison against pooled regression.

use std::collections::BTreeMap;

use ndarray::Array2;

use crate::em::{refit_mle, EmOptions, InitStrategy, Support};
use crate::error::{Error, Result};
use crate::ingest::{CurvePair, RegressionDataset};
use crate::mixture::{map_assign, responsibilities, MixtureParams};
use crate::wavelet::{haar_dwt, haar_idwt, PrepMode, WaveletDecomp, CURVE_LEN};

/// Cluster assignments and descriptive tables for one fitted model.
#[derive(Debug, Clone)]
pub struct ClusterReport {
    /// MAP component per row, zero-based.
    pub labels: Vec<usize>,
    /// Winning responsibility per row.
    pub max_tau: Vec<f64>,
    pub tau: Array2<f64>,
    pub sizes: Vec<usize>,
    /// Share of each weekday falling to each cluster; columns are Monday
    /// through Sunday and each column with any mass sums to one.
    pub crosstab: Array2<f64>,
    /// Five-number summary (min, q1, median, q3, max) of the winning
    /// responsibility within each cluster; zeros for empty clusters.
    pub posterior_summary: Vec<[f64; 5]>,
    /// Mean observed curves per cluster, regressor day then target day,
    /// when the raw curves are available.
    pub mean_curves: Option<Array2<f64>>,
}

fn quantile(sorted: &[f64], p: f64) -> f64 {
    let m = sorted.len();
    if m == 1 {
        return sorted[0];
    }
    let pos = p * (m - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let w = pos - lo as f64;
    sorted[lo] * (1.0 - w) + sorted[hi] * w
}

fn five_number(values: &mut Vec<f64>) -> [f64; 5] {
    if values.is_empty() {
        return [0.0; 5];
    }
    values.sort_by(f64::total_cmp);
    [
        values[0],
        quantile(values, 0.25),
        quantile(values, 0.5),
        quantile(values, 0.75),
        values[values.len() - 1],
    ]
}

/// Assign rows to components and summarize the clustering. Passing the raw
/// curve pairs adds per-cluster mean profiles.
pub fn cluster_report(
    data: &RegressionDataset,
    params: &MixtureParams,
    pairs: Option<&[CurvePair]>,
) -> Result<ClusterReport> {
    if let Some(pairs) = pairs {
        if pairs.len() != data.n() {
            return Err(Error::data(format!(
                "{} curve pairs for {} rows",
                pairs.len(),
                data.n()
            )));
        }
    }
    let k = params.k();
    let tau = responsibilities(params, data)?;
    let labels = map_assign(&tau);
    let max_tau: Vec<f64> = labels
        .iter()
        .enumerate()
        .map(|(i, &l)| tau[[i, l]])
        .collect();

    let mut sizes = vec![0usize; k];
    for &l in &labels {
        sizes[l] += 1;
    }

    let mut crosstab = Array2::zeros((k, 7));
    for (i, &l) in labels.iter().enumerate() {
        let day = data.meta[i].day_weekday().num_days_from_monday() as usize;
        crosstab[[l, day]] += 1.0;
    }
    for d in 0..7 {
        let total: f64 = (0..k).map(|l| crosstab[[l, d]]).sum();
        if total > 0.0 {
            for l in 0..k {
                crosstab[[l, d]] /= total;
            }
        }
    }

    let posterior_summary = (0..k)
        .map(|l| {
            let mut vals: Vec<f64> = labels
                .iter()
                .zip(&max_tau)
                .filter(|(lab, _)| **lab == l)
                .map(|(_, t)| *t)
                .collect();
            five_number(&mut vals)
        })
        .collect();

    let mean_curves = pairs.map(|pairs| {
        let mut curves = Array2::zeros((k, 2 * CURVE_LEN));
        for (i, &l) in labels.iter().enumerate() {
            for s in 0..CURVE_LEN {
                curves[[l, s]] += pairs[i].eve.values[s];
                curves[[l, CURVE_LEN + s]] += pairs[i].day.values[s];
            }
        }
        for l in 0..k {
            if sizes[l] > 0 {
                let inv = 1.0 / sizes[l] as f64;
                curves.row_mut(l).mapv_inplace(|v| v * inv);
            }
        }
        curves
    });

    Ok(ClusterReport {
        labels,
        max_tau,
        tau,
        sizes,
        crosstab,
        posterior_summary,
        mean_curves,
    })
}

/// Root mean square gap between two equally long curves.
pub fn rmse_curve(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    let ss: f64 = (0..n).map(|i| (a[i] - b[i]) * (a[i] - b[i])).sum();
    (ss / n as f64).sqrt()
}

/// Turn predicted features back into a half-hourly curve.
///
/// The coarse content the features do not carry is persisted from the
/// regressor day: its mean level under [`PrepMode::Centered`], its smooth
/// band under [`PrepMode::Details`]. Finer detail bands are left at zero.
pub fn features_to_curve(yhat: &[f64], mode: PrepMode, regressor: &[f64]) -> Result<[f64; 48]> {
    if yhat.len() != mode.feature_len() {
        return Err(Error::Dim {
            what: "predicted features",
            expected: mode.feature_len(),
            got: yhat.len(),
        });
    }
    let mut decomp = WaveletDecomp::zero();
    match mode {
        PrepMode::Centered => {
            decomp.a4.copy_from_slice(&yhat[0..3]);
            decomp.d4.copy_from_slice(&yhat[3..6]);
            decomp.d3.copy_from_slice(&yhat[6..12]);
            let level = regressor.iter().sum::<f64>() / regressor.len() as f64;
            let mut curve = haar_idwt(&decomp);
            for v in curve.iter_mut() {
                *v += level;
            }
            Ok(curve)
        }
        PrepMode::Details => {
            decomp.a4 = haar_dwt(regressor)?.a4;
            decomp.d4.copy_from_slice(&yhat[0..3]);
            decomp.d3.copy_from_slice(&yhat[3..9]);
            Ok(haar_idwt(&decomp))
        }
    }
}

/// Curve-space errors of one method on one split.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MethodRmse {
    pub pooled: f64,
    pub mixture: f64,
    pub per_cluster: f64,
}

#[derive(Debug, Clone)]
pub struct ForecastRow {
    pub consumer: String,
    /// Cluster carried from the training transition, zero-based.
    pub label: usize,
    /// Cluster used on the test transition; differs from `label` only when
    /// relabelling is on.
    pub test_label: usize,
    pub train: MethodRmse,
    pub test: MethodRmse,
}

#[derive(Debug, Clone)]
pub struct ForecastTable {
    pub rows: Vec<ForecastRow>,
}

impl ForecastTable {
    fn medians(&self, pick: impl Fn(&ForecastRow) -> MethodRmse) -> MethodRmse {
        let med = |f: &dyn Fn(&MethodRmse) -> f64| {
            let mut v: Vec<f64> = self.rows.iter().map(|r| f(&pick(r))).collect();
            v.sort_by(f64::total_cmp);
            quantile(&v, 0.5)
        };
        MethodRmse {
            pooled: med(&|m| m.pooled),
            mixture: med(&|m| m.mixture),
            per_cluster: med(&|m| m.per_cluster),
        }
    }

    pub fn median_train(&self) -> MethodRmse {
        self.medians(|r| r.train)
    }

    pub fn median_test(&self) -> MethodRmse {
        self.medians(|r| r.test)
    }
}

fn subset(data: &RegressionDataset, rows: &[usize]) -> Result<RegressionDataset> {
    let x = data.x.select(ndarray::Axis(0), rows);
    let y = data.y.select(ndarray::Axis(0), rows);
    let meta = rows.iter().map(|&i| data.meta[i].clone()).collect();
    RegressionDataset::new(x, y, meta, data.prep)
}

fn ols_params(data: &RegressionDataset) -> Result<MixtureParams> {
    let opts = EmOptions {
        n_starts: 1,
        max_iter: 100,
        init: InitStrategy::Uniform,
        ..EmOptions::default()
    };
    let full = Support::full(data.q(), data.p());
    Ok(refit_mle(data, 1, &full, &opts)?.params)
}

/// Compare pooled regression, the mixture, and within-cluster regressions
/// on one train transition and the following test transition.
///
/// Rows are matched by consumer id; consumers missing on either side are
/// skipped with a warning. Cluster labels found on the training transition
/// carry over to the test one unless `relabel` asks for fresh posteriors.
pub fn forecast_compare(
    train: &RegressionDataset,
    train_pairs: &[CurvePair],
    test: &RegressionDataset,
    test_pairs: &[CurvePair],
    params: &MixtureParams,
    relabel: bool,
) -> Result<(ForecastTable, Vec<String>)> {
    let mode = train
        .prep
        .ok_or_else(|| Error::data("forecasting needs datasets with a preprocessing tag"))?;
    if test.prep != Some(mode) {
        return Err(Error::data("train and test preprocessing disagree"));
    }
    if train_pairs.len() != train.n() || test_pairs.len() != test.n() {
        return Err(Error::data("curve pairs out of step with the feature rows"));
    }

    let mut warnings = Vec::new();
    let train_idx: BTreeMap<&str, usize> = train
        .meta
        .iter()
        .enumerate()
        .map(|(i, m)| (m.consumer.as_str(), i))
        .collect();
    let test_idx: BTreeMap<&str, usize> = test
        .meta
        .iter()
        .enumerate()
        .map(|(i, m)| (m.consumer.as_str(), i))
        .collect();
    for id in train_idx.keys() {
        if !test_idx.contains_key(id) {
            warnings.push(format!("consumer {id} has no test transition, skipped"));
        }
    }
    for id in test_idx.keys() {
        if !train_idx.contains_key(id) {
            warnings.push(format!("consumer {id} has no training transition, skipped"));
        }
    }
    let matched: Vec<(&str, usize, usize)> = train_idx
        .iter()
        .filter_map(|(id, &ti)| test_idx.get(id).map(|&si| (*id, ti, si)))
        .collect();
    if matched.is_empty() {
        return Err(Error::data("no consumer is present on both transitions"));
    }

    let train_tau = responsibilities(params, train)?;
    let train_labels = map_assign(&train_tau);
    let test_labels = if relabel {
        map_assign(&responsibilities(params, test)?)
    } else {
        // carried labels; rows are aligned through the consumer match below
        Vec::new()
    };

    let pooled = ols_params(train)?;

    // within-cluster regressions, trained on the rows each cluster owns
    let mut cluster_params: Vec<Option<MixtureParams>> = Vec::with_capacity(params.k());
    for kk in 0..params.k() {
        let rows: Vec<usize> = (0..train.n()).filter(|&i| train_labels[i] == kk).collect();
        if rows.is_empty() {
            warnings.push(format!(
                "cluster {} owns no training row, its members fall back to the pooled fit",
                kk + 1
            ));
            cluster_params.push(None);
            continue;
        }
        cluster_params.push(Some(ols_params(&subset(train, &rows)?)?));
    }

    let predict_one = |fit: &MixtureParams,
                       comp: usize,
                       data: &RegressionDataset,
                       pairs: &[CurvePair],
                       row: usize|
     -> Result<f64> {
        let yhat = fit.predict(comp, data.x.row(row));
        let curve = features_to_curve(yhat.as_slice().unwrap(), mode, &pairs[row].eve.values)?;
        Ok(rmse_curve(&curve, &pairs[row].day.values))
    };

    let mut rows = Vec::with_capacity(matched.len());
    for (id, ti, si) in matched {
        let label = train_labels[ti];
        let test_label = if relabel { test_labels[si] } else { label };
        let side = |data: &RegressionDataset,
                    pairs: &[CurvePair],
                    row: usize,
                    lab: usize|
         -> Result<MethodRmse> {
            let cluster_fit = cluster_params[lab].as_ref().unwrap_or(&pooled);
            Ok(MethodRmse {
                pooled: predict_one(&pooled, 0, data, pairs, row)?,
                mixture: predict_one(params, lab, data, pairs, row)?,
                per_cluster: predict_one(cluster_fit, 0, data, pairs, row)?,
            })
        };
        rows.push(ForecastRow {
            consumer: id.to_string(),
            label,
            test_label,
            train: side(train, train_pairs, ti, label)?,
            test: side(test, test_pairs, si, test_label)?,
        });
    }

    Ok((ForecastTable { rows }, warnings))
}
