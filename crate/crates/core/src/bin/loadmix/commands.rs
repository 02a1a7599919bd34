use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use loadmix::analysis::{cluster_report, forecast_compare};
use loadmix::collection::{build_collection, CollectionOptions, ModelCollection};
use loadmix::em::EmOptions;
use loadmix::error::{Error, Result};
use loadmix::ingest::{
    aggregate_dataset, individual_dataset, mean_day_dataset, parse_meter_csv, CsvLayout,
    MeterPanel, MissingPolicy, PairSelector,
};
use loadmix::io::{
    format_fingerprint, read_collection, read_curves, read_features, read_params_json,
    read_selection, write_beta_csv, write_beta_diff_csv, write_clusters_csv, write_collection,
    write_collection_summary, write_crosstab_csv, write_curves, write_features,
    write_forecast_csv, write_forecast_summary_csv, write_labels_csv, write_mean_curves_csv,
    write_params_json, write_posterior_summary_csv, write_selection, write_sigma_csv,
    FeatureHeader,
};
use loadmix::mixture::MixtureParams;
use loadmix::slope::{select_models, Selection, SelectionOptions, ShortlistEntry};
use loadmix::synth::{generate, GeneratorSpec, XLaw};
use loadmix::wavelet::PrepMode;

use crate::{
    ClusterArgs, Defaults, FitArgs, ForecastArgs, IngestArgs, SelectArgs, SynthArgs,
};

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>> {
    let path = dir.join(name);
    let f = File::create(&path)
        .map_err(|e| Error::data(format!("cannot write {}: {e}", path.display())))?;
    Ok(BufWriter::new(f))
}

fn open(path: &Path) -> Result<BufReader<File>> {
    let f = File::open(path)
        .map_err(|e| Error::data(format!("cannot open {}: {e}", path.display())))?;
    Ok(BufReader::new(f))
}

fn timestamp(reproducible: bool) -> Option<String> {
    if reproducible {
        None
    } else {
        Some(chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true))
    }
}

fn parse_layout(text: &str) -> Result<CsvLayout> {
    match text {
        "wide" => Ok(CsvLayout::Wide),
        "long" => Ok(CsvLayout::Long),
        other => Err(Error::config(format!(
            "unknown layout {other:?}, expected wide or long"
        ))),
    }
}

fn parse_missing(text: &str) -> Result<MissingPolicy> {
    match text {
        "strict" => Ok(MissingPolicy::Strict),
        "impute" => Ok(MissingPolicy::Impute),
        other => Err(Error::config(format!(
            "unknown missing policy {other:?}, expected strict or impute"
        ))),
    }
}

fn resolve_prep(flag: Option<u8>, defaults: &Defaults) -> Result<PrepMode> {
    PrepMode::from_id(defaults.resolve(flag, "prep", 1)?)
}

fn load_panel(args_path: &Path, layout: &str, missing: &str) -> Result<MeterPanel> {
    parse_meter_csv(open(args_path)?, parse_layout(layout)?, parse_missing(missing)?)
}

/// Cluster-count sets like `1..4,6,8`.
fn parse_k_set(text: &str) -> Result<Vec<usize>> {
    let mut out = Vec::new();
    for part in text.split(',') {
        let part = part.trim();
        if let Some((lo, hi)) = part.split_once("..") {
            let lo: usize = lo.trim().parse().map_err(|_| bad_k(part))?;
            let hi: usize = hi.trim().parse().map_err(|_| bad_k(part))?;
            if lo == 0 || hi < lo {
                return Err(bad_k(part));
            }
            out.extend(lo..=hi);
        } else {
            let k: usize = part.parse().map_err(|_| bad_k(part))?;
            if k == 0 {
                return Err(bad_k(part));
            }
            out.push(k);
        }
    }
    if out.is_empty() {
        return Err(Error::config("empty cluster count set"));
    }
    Ok(out)
}

fn bad_k(part: &str) -> Error {
    Error::config(format!(
        "bad cluster count {part:?}, expected numbers or lo..hi ranges"
    ))
}

fn warn_all(warnings: &[String]) {
    for w in warnings {
        eprintln!("warning: {w}");
    }
}

pub fn ingest(args: IngestArgs, defaults: &Defaults, reproducible: bool) -> Result<()> {
    let prep = resolve_prep(args.prep, defaults)?;
    let panel = load_panel(&args.meters, &args.layout, &args.missing)?;

    let (data, pairs) = match args.variant.as_str() {
        "aggregate" => aggregate_dataset(&panel, PairSelector::All, prep)?,
        "individual" => {
            let eve = args.eve_date.ok_or_else(|| {
                Error::config("the individual variant needs --eve-date")
            })?;
            let (data, pairs, skipped) = individual_dataset(&panel, eve, prep)?;
            for id in skipped {
                eprintln!("warning: consumer {id} misses {eve} or the next day, skipped");
            }
            (data, pairs)
        }
        "mean-day" => {
            let weekday = args.weekday.ok_or_else(|| {
                Error::config("the mean-day variant needs --weekday")
            })?;
            mean_day_dataset(&panel, weekday, prep)?
        }
        other => {
            return Err(Error::config(format!(
                "unknown variant {other:?}, expected aggregate, individual, or mean-day"
            )))
        }
    };

    std::fs::create_dir_all(&args.out)?;
    let header = FeatureHeader {
        source: args.meters.display().to_string(),
        variant: args.variant.clone(),
        prep: Some(prep),
        seed: None,
        fingerprint: Some(format_fingerprint(data.fingerprint())),
        generated: timestamp(reproducible),
    };
    let mut w = create(&args.out, "features.csv")?;
    write_features(&mut w, &data, &header)?;
    w.flush()?;
    let mut w = create(&args.out, "curves.csv")?;
    write_curves(&mut w, &data.meta, &pairs)?;
    w.flush()?;

    println!(
        "wrote {} rows ({} regressor, {} response features) to {}",
        data.n(),
        data.p(),
        data.q(),
        args.out.display()
    );
    Ok(())
}

pub fn synth(args: SynthArgs, defaults: &Defaults, reproducible: bool) -> Result<()> {
    let params = read_params_json(open(&args.model)?)?;
    let n = defaults.resolve(args.n, "n", 500)?;
    let seed = defaults.resolve(args.seed, "seed", 0)?;
    let x_law = match args.x_law.as_str() {
        "standard" => XLaw::StandardNormal,
        "resample" => {
            let pool = args.pool.as_ref().ok_or_else(|| {
                Error::config("the resample law needs --pool with a feature file")
            })?;
            let (pool_data, _) = read_features(open(pool)?)?;
            XLaw::Resample(pool_data.x)
        }
        other => {
            return Err(Error::config(format!(
                "unknown x law {other:?}, expected standard or resample"
            )))
        }
    };

    let out = generate(&GeneratorSpec {
        params,
        n,
        x_law,
        seed,
    })?;

    std::fs::create_dir_all(&args.out)?;
    let header = FeatureHeader {
        source: "synthetic".to_string(),
        variant: "synthetic".to_string(),
        prep: out.data.prep,
        seed: Some(seed),
        fingerprint: Some(format_fingerprint(out.data.fingerprint())),
        generated: timestamp(reproducible),
    };
    let mut w = create(&args.out, "features.csv")?;
    write_features(&mut w, &out.data, &header)?;
    w.flush()?;
    let mut w = create(&args.out, "truth-labels.csv")?;
    write_labels_csv(&mut w, &out.labels)?;
    w.flush()?;
    let mut w = create(&args.out, "truth-params.json")?;
    write_params_json(&mut w, &out.params)?;
    w.flush()?;

    println!(
        "drew {n} rows from a {}-component mixture into {}",
        out.params.k(),
        args.out.display()
    );
    Ok(())
}

pub fn fit(args: FitArgs, defaults: &Defaults) -> Result<()> {
    let (data, _) = read_features(open(&args.features)?)?;
    let k_text = args
        .k_set
        .or(defaults.get::<String>("k_set")?)
        .unwrap_or_else(|| "1..8".to_string());
    let opts = CollectionOptions {
        k_set: parse_k_set(&k_text)?,
        grid_size: defaults.resolve(args.grid_size, "grid_size", 20)?,
        em: EmOptions {
            seed: defaults.resolve(args.seed, "seed", 0)?,
            n_starts: defaults.resolve(args.n_starts, "n_starts", 5)?,
            max_iter: defaults.resolve(args.max_iter, "max_iter", 200)?,
            tol: defaults.resolve(args.tol, "tol", 1e-6)?,
            variance_floor_scale: defaults.resolve(None, "variance_floor", 1e-8)?,
            ..EmOptions::default()
        },
    };

    let (coll, warnings) = build_collection(&data, &opts)?;
    warn_all(&warnings);

    std::fs::create_dir_all(&args.out)?;
    let mut w = create(&args.out, "collection.jsonl")?;
    write_collection(&mut w, &coll)?;
    w.flush()?;
    let mut w = create(&args.out, "collection-summary.csv")?;
    write_collection_summary(&mut w, &coll)?;
    w.flush()?;

    println!(
        "kept {} models over {} rows into {}",
        coll.entries.len(),
        coll.n_rows,
        args.out.display()
    );
    Ok(())
}

pub fn select(args: SelectArgs, defaults: &Defaults) -> Result<()> {
    let coll = read_collection(open(&args.collection)?)?;
    let sel = if coll.entries.len() == 1 {
        eprintln!("warning: only one candidate model, selecting it without calibration");
        Selection {
            kappa_hat: 0.0,
            selected: 0,
            shortlist: vec![ShortlistEntry {
                id: 0,
                criterion: -coll.entries[0].loglik,
            }],
            jump_table: Vec::new(),
        }
    } else {
        let opts = SelectionOptions {
            grid_points: defaults.resolve(args.grid_points, "grid_points", 1000)?,
            shortlist_size: defaults.resolve(args.shortlist, "shortlist", 5)?,
        };
        select_models(&coll, &opts)?
    };

    std::fs::create_dir_all(&args.out)?;
    let mut w = create(&args.out, "selection.json")?;
    write_selection(&mut w, &sel, &coll)?;
    w.flush()?;

    let chosen = coll.entry(sel.selected).expect("validated above");
    println!(
        "selected model {} (k={}, dimension={}) at kappa = {}",
        chosen.id, chosen.k, chosen.dimension, sel.kappa_hat
    );
    Ok(())
}

/// Pick the model the reports are about: an explicit id, or the selected
/// one from the selection record.
fn load_model(
    collection: &Path,
    selection: Option<&PathBuf>,
    model_id: Option<usize>,
) -> Result<(ModelCollection, usize)> {
    let coll = read_collection(open(collection)?)?;
    let id = match model_id {
        Some(id) => id,
        None => {
            let path = selection.ok_or_else(|| {
                Error::config("pass --selection or --model-id to name the model")
            })?;
            let (sel, fp) = read_selection(open(path)?)?;
            if fp != format_fingerprint(coll.dataset_fingerprint) {
                eprintln!(
                    "warning: the selection record points at a different collection (fingerprints differ)"
                );
            }
            sel.selected
        }
    };
    if coll.entry(id).is_none() {
        return Err(Error::data(format!(
            "model id {id} not in the collection (0..{})",
            coll.entries.len() - 1
        )));
    }
    Ok((coll, id))
}

fn check_model_shape(params: &MixtureParams, p: usize, q: usize) -> Result<()> {
    if params.p() != p || params.q() != q {
        return Err(Error::data(format!(
            "model expects {} regressor / {} response features, data has {p} / {q}",
            params.p(),
            params.q()
        )));
    }
    Ok(())
}

pub fn cluster(args: ClusterArgs, _defaults: &Defaults) -> Result<()> {
    let (data, _) = read_features(open(&args.features)?)?;
    let (coll, id) = load_model(&args.collection, args.selection.as_ref(), args.model_id)?;
    if coll.dataset_fingerprint != data.fingerprint() {
        eprintln!(
            "warning: the collection was fitted on a different dataset (fingerprints differ)"
        );
    }
    let entry = coll.entry(id).expect("validated by load_model");
    check_model_shape(&entry.params, data.p(), data.q())?;

    let pairs = match &args.curves {
        Some(path) => {
            let (meta, pairs) = read_curves(open(path)?)?;
            if meta != data.meta {
                return Err(Error::data(
                    "curve rows do not line up with the feature rows",
                ));
            }
            Some(pairs)
        }
        None => None,
    };

    let report = cluster_report(&data, &entry.params, pairs.as_deref())?;

    std::fs::create_dir_all(&args.out)?;
    let mut w = create(&args.out, "clusters.csv")?;
    write_clusters_csv(&mut w, &data, &report)?;
    w.flush()?;
    let mut w = create(&args.out, "crosstab.csv")?;
    write_crosstab_csv(&mut w, &report)?;
    w.flush()?;
    let mut w = create(&args.out, "sigma.csv")?;
    write_sigma_csv(&mut w, &data, &entry.params)?;
    w.flush()?;
    let mut w = create(&args.out, "posterior-summary.csv")?;
    write_posterior_summary_csv(&mut w, &report)?;
    w.flush()?;
    for kk in 0..entry.params.k() {
        let mut w = create(&args.out, &format!("beta-cluster{}.csv", kk + 1))?;
        write_beta_csv(&mut w, &data, &entry.params, kk)?;
        w.flush()?;
    }
    for a in 0..entry.params.k() {
        for b in a + 1..entry.params.k() {
            let mut w = create(&args.out, &format!("beta-diff-{}-{}.csv", a + 1, b + 1))?;
            write_beta_diff_csv(&mut w, &data, &entry.params, a, b)?;
            w.flush()?;
        }
    }
    if pairs.is_some() {
        let mut w = create(&args.out, "mean-curves.csv")?;
        write_mean_curves_csv(&mut w, &report)?;
        w.flush()?;
    }

    let sizes: Vec<String> = report.sizes.iter().map(usize::to_string).collect();
    println!(
        "labelled {} rows with model {} (k={}); cluster sizes: {}",
        data.n(),
        id,
        entry.k,
        sizes.join(", ")
    );
    Ok(())
}

pub fn forecast(args: ForecastArgs, defaults: &Defaults) -> Result<()> {
    let prep = resolve_prep(args.prep, defaults)?;
    let panel = load_panel(&args.meters, &args.layout, &args.missing)?;

    let train_eve = args
        .eve_date
        .pred_opt()
        .ok_or_else(|| Error::config("eve date out of range"))?;
    let (train, train_pairs, skipped) = individual_dataset(&panel, train_eve, prep)?;
    for id in skipped {
        eprintln!("warning: consumer {id} has no training transition at {train_eve}, skipped");
    }
    let (test, test_pairs, skipped) = individual_dataset(&panel, args.eve_date, prep)?;
    for id in skipped {
        eprintln!(
            "warning: consumer {id} has no test transition at {}, skipped",
            args.eve_date
        );
    }

    let (coll, id) = load_model(&args.collection, args.selection.as_ref(), args.model_id)?;
    let entry = coll.entry(id).expect("validated by load_model");
    check_model_shape(&entry.params, train.p(), train.q())?;
    if coll.dataset_fingerprint != train.fingerprint() {
        eprintln!(
            "warning: the collection was not fitted on this training transition (fingerprints differ)"
        );
    }

    let (table, warnings) = forecast_compare(
        &train,
        &train_pairs,
        &test,
        &test_pairs,
        &entry.params,
        args.relabel,
    )?;
    warn_all(&warnings);

    std::fs::create_dir_all(&args.out)?;
    let mut w = create(&args.out, "forecast.csv")?;
    write_forecast_csv(&mut w, &table)?;
    w.flush()?;
    let mut w = create(&args.out, "forecast-summary.csv")?;
    write_forecast_summary_csv(&mut w, &table)?;
    w.flush()?;

    let med = table.median_test();
    println!(
        "forecast {} consumers over {} -> {}; test median rmse: pooled={} mixture={} per_cluster={}",
        table.rows.len(),
        args.eve_date,
        args.eve_date.succ_opt().expect("date in range"),
        med.pooled,
        med.mixture,
        med.per_cluster
    );
    Ok(())
}
