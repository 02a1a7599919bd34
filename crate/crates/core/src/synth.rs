//! Synthetic draws from a known mixture, for calibration and benchmarks.
//!
//! The generator samples labels from the mixing weights, regressors from a
//! configurable law, and responses from the labelled component. Ground
//! truth travels with the output so recovered clusterings can be scored
//! with [`adjusted_rand_index`].

use ndarray::Array2;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::ingest::{RegressionDataset, RowMeta};
use crate::mixture::MixtureParams;
use crate::wavelet::PrepMode;

/// Law of the regressor rows.
#[derive(Debug, Clone)]
pub enum XLaw {
    /// Independent standard normal coordinates.
    StandardNormal,
    /// Rows drawn uniformly with replacement from a pool.
    Resample(Array2<f64>),
}

#[derive(Debug, Clone)]
pub struct GeneratorSpec {
    pub params: MixtureParams,
    pub n: usize,
    pub x_law: XLaw,
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct SynthOutput {
    pub data: RegressionDataset,
    /// Component that generated each row.
    pub labels: Vec<usize>,
    pub params: MixtureParams,
}

/// Draw `spec.n` rows. Feature widths matching a known preprocessing are
/// tagged as such so downstream labels read naturally.
pub fn generate(spec: &GeneratorSpec) -> Result<SynthOutput> {
    if spec.n == 0 {
        return Err(Error::config("cannot generate an empty dataset"));
    }
    let p = spec.params.p();
    let q = spec.params.q();
    if let XLaw::Resample(pool) = &spec.x_law {
        if pool.ncols() != p || pool.nrows() == 0 {
            return Err(Error::config(format!(
                "resample pool is {} x {}, need width {p} and at least one row",
                pool.nrows(),
                pool.ncols()
            )));
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut x = Array2::zeros((spec.n, p));
    let mut y = Array2::zeros((spec.n, q));
    let mut labels = Vec::with_capacity(spec.n);
    for i in 0..spec.n {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut label = spec.params.k() - 1;
        for (kk, w) in spec.params.pi().iter().enumerate() {
            acc += w;
            if u < acc {
                label = kk;
                break;
            }
        }
        labels.push(label);

        match &spec.x_law {
            XLaw::StandardNormal => {
                for j in 0..p {
                    x[[i, j]] = rng.sample(StandardNormal);
                }
            }
            XLaw::Resample(pool) => {
                let row = rng.random_range(0..pool.nrows());
                for j in 0..p {
                    x[[i, j]] = pool[[row, j]];
                }
            }
        }

        let mean = spec.params.predict(label, x.row(i));
        for l in 0..q {
            let z: f64 = rng.sample(StandardNormal);
            y[[i, l]] = mean[l] + spec.params.sigma2(label)[l].sqrt() * z;
        }
    }

    let prep = match (p, q) {
        (9, 9) => Some(PrepMode::Details),
        (12, 12) => Some(PrepMode::Centered),
        _ => None,
    };
    let base = chrono::NaiveDate::from_ymd_opt(2012, 1, 2).unwrap();
    let meta = (0..spec.n)
        .map(|i| {
            let eve = base + chrono::Days::new(i as u64);
            RowMeta {
                consumer: "sim".to_string(),
                eve_date: eve,
                day_date: eve.succ_opt().unwrap(),
            }
        })
        .collect();

    Ok(SynthOutput {
        data: RegressionDataset::new(x, y, meta, prep)?,
        labels,
        params: spec.params.clone(),
    })
}

fn comb2(m: f64) -> f64 {
    m * (m - 1.0) / 2.0
}

/// Chance-corrected agreement between two labelings of the same rows.
/// 1 for identical partitions, about 0 for independent ones.
pub fn adjusted_rand_index(a: &[usize], b: &[usize]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::data(format!(
            "label vectors differ in length: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    if a.len() < 2 {
        return Err(Error::data("need at least two rows to compare partitions"));
    }
    let compact = |labels: &[usize]| -> Vec<usize> {
        let mut seen: Vec<usize> = labels.to_vec();
        seen.sort_unstable();
        seen.dedup();
        labels
            .iter()
            .map(|l| seen.binary_search(l).unwrap())
            .collect()
    };
    let ca = compact(a);
    let cb = compact(b);
    let ka = ca.iter().max().unwrap() + 1;
    let kb = cb.iter().max().unwrap() + 1;

    let mut table = vec![vec![0.0f64; kb]; ka];
    let mut rows = vec![0.0f64; ka];
    let mut cols = vec![0.0f64; kb];
    for (&i, &j) in ca.iter().zip(&cb) {
        table[i][j] += 1.0;
        rows[i] += 1.0;
        cols[j] += 1.0;
    }

    let sum_cells: f64 = table.iter().flatten().map(|&v| comb2(v)).sum();
    let sum_rows: f64 = rows.iter().map(|&v| comb2(v)).sum();
    let sum_cols: f64 = cols.iter().map(|&v| comb2(v)).sum();
    let total = comb2(a.len() as f64);

    let expected = sum_rows * sum_cols / total;
    let maximum = 0.5 * (sum_rows + sum_cols);
    if maximum == expected {
        return Ok(1.0);
    }
    Ok((sum_cells - expected) / (maximum - expected))
}
