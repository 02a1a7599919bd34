//! Data-driven choice of the dimension penalty and the final model.
//!
//! Each collection entry is scored with `-loglik + 2 kappa dimension / n`.
//! Sweeping `kappa` upward makes the chosen dimension fall in steps; the
//! biggest single step marks the penalty weight where complexity stops
//! paying for itself, and the criterion is re-evaluated just past it to pick
//! the winner.

use serde::{Deserialize, Serialize};

use crate::collection::{ModelCollection, ModelEntry};
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct SelectionOptions {
    /// Resolution of the kappa scan.
    pub grid_points: usize,
    /// Number of runner-up models to keep.
    pub shortlist_size: usize,
}

impl Default for SelectionOptions {
    fn default() -> Self {
        SelectionOptions {
            grid_points: 1000,
            shortlist_size: 5,
        }
    }
}

/// A kappa where the chosen dimension changed, with the dimension chosen
/// from there on.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JumpPoint {
    pub kappa: f64,
    pub dimension: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShortlistEntry {
    pub id: usize,
    pub criterion: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    pub kappa_hat: f64,
    /// Collection id of the winning entry.
    pub selected: usize,
    /// Best entries at `kappa_hat`, the winner first.
    pub shortlist: Vec<ShortlistEntry>,
    /// Dimension of the scan winner as kappa grows, change points only.
    pub jump_table: Vec<JumpPoint>,
}

/// Penalized score of one entry: `-loglik + 2 kappa dimension / n`.
pub fn criterion(entry: &ModelEntry, n_rows: usize, kappa: f64) -> f64 {
    -entry.loglik + 2.0 * kappa * entry.dimension as f64 / n_rows as f64
}

/// Index into `entries` minimizing the criterion; ties fall to the smaller
/// dimension, then the smaller cluster count, then the smaller id.
fn best_at(entries: &[ModelEntry], n_rows: usize, kappa: f64) -> usize {
    let mut best = 0;
    for (i, e) in entries.iter().enumerate().skip(1) {
        let ci = criterion(e, n_rows, kappa);
        let cb = criterion(&entries[best], n_rows, kappa);
        let key_i = (e.dimension, e.k, e.id);
        let key_b = (entries[best].dimension, entries[best].k, entries[best].id);
        if ci < cb || (ci == cb && key_i < key_b) {
            best = i;
        }
    }
    best
}

/// Calibrate the penalty weight and pick the model.
pub fn select_models(coll: &ModelCollection, opts: &SelectionOptions) -> Result<Selection> {
    if opts.grid_points < 2 || opts.shortlist_size == 0 {
        return Err(Error::config(
            "selection needs at least 2 grid points and a shortlist of 1",
        ));
    }
    let entries = &coll.entries;
    if entries.len() < 2 {
        return Err(Error::selection(format!(
            "need at least 2 candidate models, got {}",
            entries.len()
        )));
    }
    let n = coll.n_rows;
    let dim_at = |kappa: f64| entries[best_at(entries, n, kappa)].dimension;

    let d_zero = dim_at(0.0);
    let d_min = entries.iter().map(|e| e.dimension).min().unwrap();
    if d_zero == d_min {
        return Err(Error::selection(
            "the chosen dimension never moves over the kappa range, nothing to calibrate on",
        ));
    }

    // bracket the region where the chosen dimension travels from the
    // unpenalized choice down to the smallest model
    let mut lo = 1.0f64;
    for _ in 0..2000 {
        if dim_at(lo) == d_zero {
            break;
        }
        lo /= 2.0;
    }
    let mut hi = 1.0f64;
    for _ in 0..2000 {
        if dim_at(hi) == d_min {
            break;
        }
        hi *= 2.0;
    }
    if dim_at(lo) != d_zero || dim_at(hi) != d_min {
        return Err(Error::selection(
            "could not bracket the kappa range where the dimension path moves",
        ));
    }

    let g = opts.grid_points;
    let ratio = hi / lo;
    let grid: Vec<f64> = (0..g)
        .map(|i| lo * ratio.powf(i as f64 / (g - 1) as f64))
        .collect();
    let dims: Vec<usize> = grid.iter().map(|&k| dim_at(k)).collect();

    let mut jump_table = vec![JumpPoint {
        kappa: grid[0],
        dimension: dims[0],
    }];
    let mut biggest = 0usize;
    let mut kappa_hat = grid[0];
    for i in 1..g {
        if dims[i] < dims[i - 1] {
            jump_table.push(JumpPoint {
                kappa: grid[i],
                dimension: dims[i],
            });
            let drop = dims[i - 1] - dims[i];
            if drop > biggest {
                biggest = drop;
                kappa_hat = grid[i];
            }
        }
    }
    if biggest == 0 {
        return Err(Error::selection(
            "the dimension path is flat across the scan, no jump to read off",
        ));
    }

    let mut order: Vec<usize> = (0..entries.len()).collect();
    order.sort_by(|&a, &b| {
        let ca = criterion(&entries[a], n, kappa_hat);
        let cb = criterion(&entries[b], n, kappa_hat);
        ca.total_cmp(&cb).then_with(|| {
            let ka = (entries[a].dimension, entries[a].k, entries[a].id);
            let kb = (entries[b].dimension, entries[b].k, entries[b].id);
            ka.cmp(&kb)
        })
    });
    let shortlist: Vec<ShortlistEntry> = order
        .iter()
        .take(opts.shortlist_size)
        .map(|&i| ShortlistEntry {
            id: entries[i].id,
            criterion: criterion(&entries[i], n, kappa_hat),
        })
        .collect();

    Ok(Selection {
        kappa_hat,
        selected: shortlist[0].id,
        shortlist,
        jump_table,
    })
}
