//! Model collection built from a grid of cluster counts and penalty levels.
//!
//! Every `(K, lambda)` cell runs the penalized fit, extracts the support and
//! refits without penalty. Cells that land on the same `(K, support)` pair
//! are merged, keeping the better refit, and the survivors are ordered by
//! cluster count and model dimension. Cells run in parallel; each one draws
//! its randomness from a seed derived from its grid position, so the result
//! does not depend on scheduling.

use rayon::prelude::*;

use crate::em::{lambda_max, lasso_em_fit, mix_seed, refit_mle, EmOptions, Support};
use crate::error::{Error, Result};
use crate::ingest::RegressionDataset;
use crate::mixture::{model_dimension, MixtureParams};

/// Ratio between the largest and smallest grid penalty.
pub const LAMBDA_SPAN: f64 = 1e-3;

#[derive(Debug, Clone)]
pub struct CollectionOptions {
    /// Cluster counts to sweep.
    pub k_set: Vec<usize>,
    /// Penalty levels per cluster count.
    pub grid_size: usize,
    pub em: EmOptions,
}

impl Default for CollectionOptions {
    fn default() -> Self {
        CollectionOptions {
            k_set: (1..=8).collect(),
            grid_size: 20,
            em: EmOptions::default(),
        }
    }
}

/// One estimated model, refitted without penalty on its own support.
#[derive(Debug, Clone)]
pub struct ModelEntry {
    /// Position in the sorted collection.
    pub id: usize,
    /// Cluster count of the refitted model (may undercut the swept count
    /// when a component collapsed).
    pub k: usize,
    pub params: MixtureParams,
    pub support: Support,
    /// Mean log-likelihood per row of the refit.
    pub loglik: f64,
    /// Free parameter count: mixing weights, active coefficients, variances.
    pub dimension: usize,
    /// Penalty level whose support this entry kept.
    pub lambda_origin: f64,
    /// True when the penalized stage dropped a collapsing component.
    pub degenerate: bool,
}

#[derive(Debug, Clone)]
pub struct ModelCollection {
    pub entries: Vec<ModelEntry>,
    /// Rows in the training dataset, the `n` of the selection criterion.
    pub n_rows: usize,
    pub k_set: Vec<usize>,
    pub grid_size: usize,
    pub dataset_fingerprint: u64,
}

impl ModelCollection {
    pub fn entry(&self, id: usize) -> Option<&ModelEntry> {
        self.entries.get(id)
    }
}

/// Log-spaced penalty levels from [`lambda_max`] down three decades,
/// largest first. A response with no signal collapses the grid to `{0}`.
pub fn lambda_grid(data: &RegressionDataset, k: usize, grid_size: usize) -> Result<Vec<f64>> {
    if grid_size == 0 {
        return Err(Error::config("grid size must be at least 1"));
    }
    let top = lambda_max(data, k)?;
    if top == 0.0 {
        return Ok(vec![0.0]);
    }
    if grid_size == 1 {
        return Ok(vec![top]);
    }
    let grid = (0..grid_size)
        .map(|i| top * LAMBDA_SPAN.powf(i as f64 / (grid_size - 1) as f64))
        .collect();
    Ok(grid)
}

struct CellFit {
    k: usize,
    support: Support,
    params: MixtureParams,
    loglik: f64,
    lambda: f64,
    degenerate: bool,
}

fn fit_cell(
    data: &RegressionDataset,
    k: usize,
    lambda: f64,
    cell_seed: u64,
    base: &EmOptions,
) -> Result<CellFit> {
    let opts = EmOptions {
        seed: cell_seed,
        ..base.clone()
    };
    let penalized = lasso_em_fit(data, k, lambda, &opts)?;
    let k_eff = penalized.params.k();
    let refit = refit_mle(data, k_eff, &penalized.support, &opts)?;
    Ok(CellFit {
        k: refit.params.k(),
        support: penalized.support,
        params: refit.params,
        loglik: refit.loglik,
        lambda,
        degenerate: penalized.degenerate || refit.degenerate,
    })
}

/// Sweep the grid and assemble the deduplicated, ordered collection.
///
/// Returns the collection together with warnings for cells or whole cluster
/// counts that had to be skipped. Only a sweep with no usable cell at all is
/// an error.
pub fn build_collection(
    data: &RegressionDataset,
    opts: &CollectionOptions,
) -> Result<(ModelCollection, Vec<String>)> {
    if opts.k_set.is_empty() {
        return Err(Error::config("the cluster count sweep is empty"));
    }
    let mut k_set = opts.k_set.clone();
    k_set.sort_unstable();
    k_set.dedup();

    let mut warnings = Vec::new();
    let mut tasks: Vec<(usize, usize, f64)> = Vec::new();
    for &k in &k_set {
        match lambda_grid(data, k, opts.grid_size) {
            Ok(grid) => {
                if grid == [0.0] {
                    warnings.push(format!(
                        "responses carry no signal; cluster count {k} swept only the unpenalized fit"
                    ));
                }
                tasks.extend(grid.into_iter().enumerate().map(|(li, l)| (k, li, l)));
            }
            Err(e) => warnings.push(format!("cluster count {k} skipped: {e}")),
        }
    }
    if tasks.is_empty() {
        return Err(Error::data("no cluster count in the sweep is feasible"));
    }

    let mut results: Vec<(usize, usize, Result<CellFit>)> = tasks
        .par_iter()
        .map(|&(k, li, lambda)| {
            let seed = mix_seed(opts.em.seed, &[k as u64, li as u64]);
            (k, li, fit_cell(data, k, lambda, seed, &opts.em))
        })
        .collect();
    results.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));

    let mut fits: Vec<CellFit> = Vec::new();
    for (k, li, res) in results {
        match res {
            Ok(fit) => fits.push(fit),
            Err(e) => warnings.push(format!("cluster count {k}, grid cell {li} skipped: {e}")),
        }
    }
    if fits.is_empty() {
        return Err(Error::data("every grid cell failed to fit"));
    }

    // merge cells that found the same model, keeping the better refit
    let mut kept: Vec<CellFit> = Vec::new();
    for fit in fits {
        match kept
            .iter_mut()
            .find(|f| f.k == fit.k && f.support == fit.support)
        {
            Some(existing) => {
                if fit.loglik > existing.loglik {
                    *existing = fit;
                }
            }
            None => kept.push(fit),
        }
    }

    kept.sort_by(|a, b| {
        let da = model_dimension(a.k, a.support.len(), data.q());
        let db = model_dimension(b.k, b.support.len(), data.q());
        (a.k, da, a.support.entries()).cmp(&(b.k, db, b.support.entries()))
    });

    let entries = kept
        .into_iter()
        .enumerate()
        .map(|(id, fit)| ModelEntry {
            id,
            k: fit.k,
            dimension: model_dimension(fit.k, fit.support.len(), data.q()),
            params: fit.params,
            support: fit.support,
            loglik: fit.loglik,
            lambda_origin: fit.lambda,
            degenerate: fit.degenerate,
        })
        .collect();

    Ok((
        ModelCollection {
            entries,
            n_rows: data.n(),
            k_set,
            grid_size: opts.grid_size,
            dataset_fingerprint: data.fingerprint(),
        },
        warnings,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::Array2;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    use crate::ingest::RowMeta;
    use crate::mixture::log_likelihood;

    fn meta(n: usize) -> Vec<RowMeta> {
        let base = chrono::NaiveDate::from_ymd_opt(2011, 3, 7).unwrap();
        (0..n)
            .map(|i| RowMeta {
                consumer: format!("c{i}"),
                eve_date: base,
                day_date: base.succ_opt().unwrap(),
            })
            .collect()
    }

    fn two_regime_dataset(seed: u64, n: usize) -> RegressionDataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = Array2::from_shape_fn((n, 3), |_| rng.random_range(0.5..1.5));
        let mut y = Array2::zeros((n, 2));
        for i in 0..n {
            let b: f64 = if i % 2 == 0 { 1.5 } else { -1.5 };
            y[[i, 0]] = b * x[[i, 0]] + 0.05 * rng.random_range(-1.0..1.0);
            y[[i, 1]] = -b * x[[i, 1]] + 0.05 * rng.random_range(-1.0..1.0);
        }
        RegressionDataset::new(x, y, meta(n), None).unwrap()
    }

    fn quick_opts(k_set: Vec<usize>, grid_size: usize) -> CollectionOptions {
        CollectionOptions {
            k_set,
            grid_size,
            em: EmOptions {
                n_starts: 2,
                max_iter: 80,
                ..EmOptions::default()
            },
        }
    }

    #[test]
    fn grid_is_log_spaced_between_its_pinned_ends() {
        let data = two_regime_dataset(1, 40);
        let grid = lambda_grid(&data, 2, 20).unwrap();
        assert_eq!(grid.len(), 20);
        let top = lambda_max(&data, 2).unwrap();
        assert_abs_diff_eq!(grid[0], top, epsilon = 1e-14);
        assert_abs_diff_eq!(grid[19], top * 1e-3, epsilon = 1e-14 * top);
        let ratio = grid[1] / grid[0];
        for w in grid.windows(2) {
            assert!(w[1] < w[0]);
            assert_abs_diff_eq!(w[1] / w[0], ratio, epsilon = 1e-12);
        }
    }

    #[test]
    fn silent_responses_collapse_the_grid() {
        let data = RegressionDataset::new(
            Array2::from_shape_fn((10, 2), |(i, j)| (i * 2 + j) as f64),
            Array2::zeros((10, 2)),
            meta(10),
            None,
        )
        .unwrap();
        assert_eq!(lambda_grid(&data, 2, 20).unwrap(), vec![0.0]);
    }

    #[test]
    fn collection_is_ordered_deduplicated_and_consistent() {
        let data = two_regime_dataset(2, 60);
        let (coll, warnings) = build_collection(&data, &quick_opts(vec![1, 2], 8)).unwrap();
        assert!(warnings.is_empty(), "{warnings:?}");
        assert_eq!(coll.n_rows, 60);
        assert_eq!(coll.k_set, vec![1, 2]);
        assert!(!coll.entries.is_empty());

        for (i, e) in coll.entries.iter().enumerate() {
            assert_eq!(e.id, i);
            assert_eq!(e.params.k(), e.k);
            assert_eq!(e.dimension, (e.k - 1) + e.k * e.support.len() + e.k * 2);
            // stored likelihood is the likelihood of the stored parameters
            let direct = log_likelihood(&e.params, &data).unwrap();
            assert_abs_diff_eq!(e.loglik, direct, epsilon = 1e-9);
        }
        for w in coll.entries.windows(2) {
            assert!(
                (w[0].k, w[0].dimension) <= (w[1].k, w[1].dimension),
                "order broken between ids {} and {}",
                w[0].id,
                w[1].id
            );
        }
        let mut keys: Vec<(usize, Vec<(usize, usize)>)> = coll
            .entries
            .iter()
            .map(|e| (e.k, e.support.entries().to_vec()))
            .collect();
        let before = keys.len();
        keys.sort();
        keys.dedup();
        assert_eq!(keys.len(), before, "duplicate (k, support) survived");
    }

    #[test]
    fn sweeps_are_reproducible() {
        let data = two_regime_dataset(3, 50);
        let opts = quick_opts(vec![1, 2, 3], 6);
        let (a, _) = build_collection(&data, &opts).unwrap();
        let (b, _) = build_collection(&data, &opts).unwrap();
        assert_eq!(a.entries.len(), b.entries.len());
        for (ea, eb) in a.entries.iter().zip(&b.entries) {
            assert_eq!(ea.params, eb.params);
            assert_eq!(ea.loglik.to_bits(), eb.loglik.to_bits());
            assert_eq!(ea.lambda_origin.to_bits(), eb.lambda_origin.to_bits());
        }
        assert_eq!(a.dataset_fingerprint, b.dataset_fingerprint);
        assert_eq!(a.dataset_fingerprint, data.fingerprint());
    }

    #[test]
    fn infeasible_cluster_counts_turn_into_warnings() {
        let data = two_regime_dataset(4, 12);
        let (coll, warnings) = build_collection(&data, &quick_opts(vec![2, 40], 4)).unwrap();
        assert!(coll.entries.iter().all(|e| e.k <= 2));
        assert!(
            warnings.iter().any(|w| w.contains("40")),
            "missing warning: {warnings:?}"
        );
        assert!(build_collection(&data, &quick_opts(vec![40], 4)).is_err());
    }

    #[test]
    fn the_largest_penalty_contributes_the_null_model() {
        let data = two_regime_dataset(5, 40);
        let opts = CollectionOptions {
            em: EmOptions {
                init: crate::em::InitStrategy::Uniform,
                ..EmOptions::default()
            },
            ..quick_opts(vec![1], 10)
        };
        let (coll, _) = build_collection(&data, &opts).unwrap();
        let null = coll
            .entries
            .iter()
            .find(|e| e.support.is_empty())
            .expect("null model present");
        assert_eq!(null.dimension, 2);
        assert_eq!(null.id, 0);
    }
}
