//! On-disk formats: feature tables, raw curve tables, model collections,
//! selection records, and the report CSVs.
//!
//! Text formats only. Floats are printed in Rust's shortest round-trip
//! form, so writing and re-reading is lossless and repeated runs with the
//! same inputs produce identical bytes (when the timestamp is suppressed).

use std::io::{BufRead, BufReader, Read, Write};

use chrono::NaiveDate;
use ndarray::{Array1, Array2};
use serde_json::{json, Value};

use crate::analysis::{ClusterReport, ForecastTable};
use crate::collection::{ModelCollection, ModelEntry};
use crate::em::Support;
use crate::error::{Error, Result};
use crate::ingest::{CurvePair, DayCurve, RegressionDataset, RowMeta};
use crate::mixture::MixtureParams;
use crate::slope::Selection;
use crate::wavelet::{PrepMode, CURVE_LEN};

/// Provenance lines carried at the top of a feature file.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct FeatureHeader {
    /// Where the rows came from, free-form.
    pub source: String,
    /// Dataset variant: aggregate, individual, mean-day, or synthetic.
    pub variant: String,
    pub prep: Option<PrepMode>,
    pub seed: Option<u64>,
    /// Hex fingerprint of the dataset the rows were derived from.
    pub fingerprint: Option<String>,
    /// Creation timestamp; omit for byte-identical reruns.
    pub generated: Option<String>,
}

pub fn format_fingerprint(fp: u64) -> String {
    format!("{fp:016x}")
}

fn parse_date(text: &str, line: usize) -> Result<NaiveDate> {
    NaiveDate::parse_from_str(text, "%Y-%m-%d").map_err(|_| Error::Parse {
        line,
        message: format!("bad date {text:?}, expected YYYY-MM-DD"),
    })
}

fn parse_f64(text: &str, line: usize) -> Result<f64> {
    let v: f64 = text.trim().parse().map_err(|_| Error::Parse {
        line,
        message: format!("bad number {text:?}"),
    })?;
    if !v.is_finite() {
        return Err(Error::Parse {
            line,
            message: format!("non-finite number {text:?}"),
        });
    }
    Ok(v)
}

// ---------------------------------------------------------------- features

pub fn write_features(
    mut w: impl Write,
    data: &RegressionDataset,
    header: &FeatureHeader,
) -> Result<()> {
    writeln!(w, "# loadmix features v1")?;
    writeln!(w, "# source: {}", header.source)?;
    writeln!(w, "# variant: {}", header.variant)?;
    let prep = header
        .prep
        .map_or_else(|| "none".to_string(), |m| m.id().to_string());
    writeln!(w, "# prep: {prep}")?;
    if let Some(seed) = header.seed {
        writeln!(w, "# seed: {seed}")?;
    }
    if let Some(fp) = &header.fingerprint {
        writeln!(w, "# fingerprint: {fp}")?;
    }
    if let Some(ts) = &header.generated {
        writeln!(w, "# generated: {ts}")?;
    }

    let mut cols = vec![
        "consumer".to_string(),
        "eve_date".to_string(),
        "day_date".to_string(),
    ];
    cols.extend(data.feature_labels('x'));
    cols.extend(data.feature_labels('y'));
    writeln!(w, "{}", cols.join(","))?;
    for i in 0..data.n() {
        let m = &data.meta[i];
        let mut fields = vec![m.consumer.clone(), m.eve_date.to_string(), m.day_date.to_string()];
        fields.extend(data.x.row(i).iter().map(|v| v.to_string()));
        fields.extend(data.y.row(i).iter().map(|v| v.to_string()));
        writeln!(w, "{}", fields.join(","))?;
    }
    Ok(())
}

/// Leading `# key: value` lines of a text table.
fn take_comments(text: &str) -> Vec<(String, String)> {
    let mut out = Vec::new();
    for line in text.lines() {
        let Some(rest) = line.strip_prefix('#') else { break };
        if let Some((key, value)) = rest.split_once(':') {
            out.push((key.trim().to_string(), value.trim().to_string()));
        }
    }
    out
}

pub fn read_features(mut r: impl Read) -> Result<(RegressionDataset, FeatureHeader)> {
    let mut text = String::new();
    r.read_to_string(&mut text)?;

    let mut header = FeatureHeader::default();
    for (key, value) in take_comments(&text) {
        match key.as_str() {
            "source" => header.source = value,
            "variant" => header.variant = value,
            "prep" => {
                header.prep = match value.as_str() {
                    "none" => None,
                    other => {
                        let id: u8 = other.parse().map_err(|_| Error::Parse {
                            line: 0,
                            message: format!("bad prep tag {other:?}"),
                        })?;
                        Some(PrepMode::from_id(id)?)
                    }
                }
            }
            "seed" => header.seed = value.parse().ok(),
            "fingerprint" => header.fingerprint = Some(value),
            "generated" => header.generated = Some(value),
            _ => {}
        }
    }

    let mut lines = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.starts_with('#') && !l.trim().is_empty());
    let (_, head) = lines
        .next()
        .ok_or_else(|| Error::data("feature file has no header row"))?;
    let names: Vec<&str> = head.split(',').collect();
    if names.len() < 3 || names[0] != "consumer" || names[1] != "eve_date" || names[2] != "day_date"
    {
        return Err(Error::data(
            "feature header must start with consumer,eve_date,day_date",
        ));
    }
    let p = names[3..].iter().take_while(|n| n.starts_with("x_")).count();
    let q = names[3 + p..].iter().take_while(|n| n.starts_with("y_")).count();
    if p == 0 || q == 0 || 3 + p + q != names.len() {
        return Err(Error::data(
            "feature columns must be x_* columns followed by y_* columns",
        ));
    }
    if let Some(mode) = header.prep {
        if mode.feature_len() != p || mode.feature_len() != q {
            return Err(Error::data(format!(
                "prep tag {} promises width {}, file has x {p} / y {q}",
                mode.id(),
                mode.feature_len()
            )));
        }
    }

    let mut xs = Vec::new();
    let mut ys = Vec::new();
    let mut meta = Vec::new();
    for (lineno, line) in lines {
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != names.len() {
            return Err(Error::Parse {
                line: lineno + 1,
                message: format!("expected {} fields, got {}", names.len(), fields.len()),
            });
        }
        meta.push(RowMeta {
            consumer: fields[0].to_string(),
            eve_date: parse_date(fields[1], lineno + 1)?,
            day_date: parse_date(fields[2], lineno + 1)?,
        });
        for f in &fields[3..3 + p] {
            xs.push(parse_f64(f, lineno + 1)?);
        }
        for f in &fields[3 + p..] {
            ys.push(parse_f64(f, lineno + 1)?);
        }
    }
    let n = meta.len();
    if n == 0 {
        return Err(Error::data("feature file has no rows"));
    }
    let x = Array2::from_shape_vec((n, p), xs).expect("counted shape");
    let y = Array2::from_shape_vec((n, q), ys).expect("counted shape");
    let data = RegressionDataset::new(x, y, meta, header.prep)?;
    Ok((data, header))
}

// ------------------------------------------------------------------ curves

pub fn write_curves(mut w: impl Write, meta: &[RowMeta], pairs: &[CurvePair]) -> Result<()> {
    if meta.len() != pairs.len() {
        return Err(Error::data("curve rows out of step with their metadata"));
    }
    let mut cols = vec![
        "row".to_string(),
        "consumer".to_string(),
        "eve_date".to_string(),
        "day_date".to_string(),
    ];
    cols.extend((0..CURVE_LEN).map(|s| format!("eve_{s:02}")));
    cols.extend((0..CURVE_LEN).map(|s| format!("day_{s:02}")));
    writeln!(w, "{}", cols.join(","))?;
    for (i, (m, pair)) in meta.iter().zip(pairs).enumerate() {
        let mut fields = vec![
            i.to_string(),
            m.consumer.clone(),
            m.eve_date.to_string(),
            m.day_date.to_string(),
        ];
        fields.extend(pair.eve.values.iter().map(|v| v.to_string()));
        fields.extend(pair.day.values.iter().map(|v| v.to_string()));
        writeln!(w, "{}", fields.join(","))?;
    }
    Ok(())
}

pub fn read_curves(r: impl Read) -> Result<(Vec<RowMeta>, Vec<CurvePair>)> {
    let reader = BufReader::new(r);
    let mut meta = Vec::new();
    let mut pairs = Vec::new();
    let want = 4 + 2 * CURVE_LEN;
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        if lineno == 0 || line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != want {
            return Err(Error::Parse {
                line: lineno + 1,
                message: format!("expected {want} fields, got {}", fields.len()),
            });
        }
        let row: usize = fields[0].parse().map_err(|_| Error::Parse {
            line: lineno + 1,
            message: format!("bad row index {:?}", fields[0]),
        })?;
        if row != meta.len() {
            return Err(Error::Parse {
                line: lineno + 1,
                message: format!("row index {row} out of order"),
            });
        }
        let eve_date = parse_date(fields[2], lineno + 1)?;
        let day_date = parse_date(fields[3], lineno + 1)?;
        meta.push(RowMeta {
            consumer: fields[1].to_string(),
            eve_date,
            day_date,
        });
        let read_block = |offset: usize, date: NaiveDate| -> Result<DayCurve> {
            let mut values = Vec::with_capacity(CURVE_LEN);
            for f in &fields[offset..offset + CURVE_LEN] {
                values.push(parse_f64(f, lineno + 1)?);
            }
            DayCurve::new(date, values)
        };
        pairs.push(CurvePair {
            eve: read_block(4, eve_date)?,
            day: read_block(4 + CURVE_LEN, day_date)?,
        });
    }
    if pairs.is_empty() {
        return Err(Error::data("curve file has no rows"));
    }
    Ok((meta, pairs))
}

// ----------------------------------------------------------- model params

fn params_to_json(params: &MixtureParams) -> Value {
    let beta: Vec<Vec<Vec<f64>>> = (0..params.k())
        .map(|kk| {
            (0..params.q())
                .map(|l| (0..params.p()).map(|j| params.beta(kk)[[l, j]]).collect())
                .collect()
        })
        .collect();
    let sigma2: Vec<Vec<f64>> = (0..params.k())
        .map(|kk| params.sigma2(kk).to_vec())
        .collect();
    json!({
        "k": params.k(),
        "pi": params.pi(),
        "beta": beta,
        "sigma2": sigma2,
    })
}

fn params_from_json(v: &Value) -> Result<MixtureParams> {
    let bad = |what: &str| Error::data(format!("model json: {what}"));
    let pi: Vec<f64> = serde_json::from_value(v.get("pi").ok_or_else(|| bad("missing pi"))?.clone())?;
    let beta_raw: Vec<Vec<Vec<f64>>> =
        serde_json::from_value(v.get("beta").ok_or_else(|| bad("missing beta"))?.clone())?;
    let sigma2_raw: Vec<Vec<f64>> =
        serde_json::from_value(v.get("sigma2").ok_or_else(|| bad("missing sigma2"))?.clone())?;
    let mut beta = Vec::with_capacity(beta_raw.len());
    for b in beta_raw {
        let q = b.len();
        let p = b.first().map_or(0, Vec::len);
        if b.iter().any(|row| row.len() != p) {
            return Err(bad("ragged beta matrix"));
        }
        let flat: Vec<f64> = b.into_iter().flatten().collect();
        beta.push(Array2::from_shape_vec((q, p), flat).map_err(|_| bad("empty beta matrix"))?);
    }
    let sigma2 = sigma2_raw.into_iter().map(Array1::from_vec).collect();
    MixtureParams::new(pi, beta, sigma2)
}

pub fn write_params_json(mut w: impl Write, params: &MixtureParams) -> Result<()> {
    let text = serde_json::to_string_pretty(&params_to_json(params))?;
    writeln!(w, "{text}")?;
    Ok(())
}

pub fn read_params_json(mut r: impl Read) -> Result<MixtureParams> {
    let mut text = String::new();
    r.read_to_string(&mut text)?;
    params_from_json(&serde_json::from_str(&text)?)
}

// -------------------------------------------------------------- collection

pub fn write_collection(mut w: impl Write, coll: &ModelCollection) -> Result<()> {
    let meta = json!({
        "record": "collection",
        "n_rows": coll.n_rows,
        "k_set": coll.k_set,
        "grid_size": coll.grid_size,
        "fingerprint": format_fingerprint(coll.dataset_fingerprint),
    });
    writeln!(w, "{meta}")?;
    for e in &coll.entries {
        let mut line = params_to_json(&e.params);
        let obj = line.as_object_mut().expect("object");
        obj.insert("record".into(), json!("model"));
        obj.insert("id".into(), json!(e.id));
        obj.insert("support".into(), json!(e.support.entries()));
        obj.insert("loglik".into(), json!(e.loglik));
        obj.insert("dimension".into(), json!(e.dimension));
        obj.insert("lambda_origin".into(), json!(e.lambda_origin));
        obj.insert("degenerate".into(), json!(e.degenerate));
        writeln!(w, "{line}")?;
    }
    Ok(())
}

pub fn read_collection(r: impl Read) -> Result<ModelCollection> {
    let reader = BufReader::new(r);
    let mut lines = reader.lines();
    let head = lines
        .next()
        .ok_or_else(|| Error::data("collection file is empty"))??;
    let meta: Value = serde_json::from_str(&head)?;
    if meta.get("record").and_then(Value::as_str) != Some("collection") {
        return Err(Error::data("collection file must start with its header record"));
    }
    let field = |name: &str| -> Result<&Value> {
        meta.get(name)
            .ok_or_else(|| Error::data(format!("collection header misses {name}")))
    };
    let n_rows = field("n_rows")?.as_u64().unwrap_or(0) as usize;
    let k_set: Vec<usize> = serde_json::from_value(field("k_set")?.clone())?;
    let grid_size = field("grid_size")?.as_u64().unwrap_or(0) as usize;
    let fp_text = field("fingerprint")?.as_str().unwrap_or_default();
    let dataset_fingerprint = u64::from_str_radix(fp_text, 16)
        .map_err(|_| Error::data(format!("bad fingerprint {fp_text:?}")))?;

    let mut entries = Vec::new();
    for (i, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let v: Value = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: i + 2,
            message: e.to_string(),
        })?;
        let params = params_from_json(&v)?;
        let support_raw: Vec<(usize, usize)> = serde_json::from_value(
            v.get("support")
                .ok_or_else(|| Error::data("model record misses support"))?
                .clone(),
        )?;
        let support = Support::new(support_raw, params.q(), params.p())?;
        let grab = |name: &str| -> Result<f64> {
            v.get(name)
                .and_then(Value::as_f64)
                .ok_or_else(|| Error::data(format!("model record misses {name}")))
        };
        entries.push(ModelEntry {
            id: grab("id")? as usize,
            k: params.k(),
            dimension: grab("dimension")? as usize,
            loglik: grab("loglik")?,
            lambda_origin: grab("lambda_origin")?,
            degenerate: v.get("degenerate").and_then(Value::as_bool).unwrap_or(false),
            params,
            support,
        });
    }
    if entries.is_empty() {
        return Err(Error::data("collection file has no model records"));
    }
    if entries.iter().enumerate().any(|(i, e)| e.id != i) {
        return Err(Error::data("collection ids are not consecutive"));
    }
    Ok(ModelCollection {
        entries,
        n_rows,
        k_set,
        grid_size,
        dataset_fingerprint,
    })
}

pub fn write_collection_summary(mut w: impl Write, coll: &ModelCollection) -> Result<()> {
    writeln!(w, "k,support_size,dimension,loglik,lambda_origin")?;
    for e in &coll.entries {
        writeln!(
            w,
            "{},{},{},{},{}",
            e.k,
            e.support.len(),
            e.dimension,
            e.loglik,
            e.lambda_origin
        )?;
    }
    Ok(())
}

// --------------------------------------------------------------- selection

pub fn write_selection(
    mut w: impl Write,
    sel: &Selection,
    coll: &ModelCollection,
) -> Result<()> {
    let chosen = coll
        .entry(sel.selected)
        .ok_or_else(|| Error::data(format!("selected id {} not in the collection", sel.selected)))?;
    let doc = json!({
        "kappa_hat": sel.kappa_hat,
        "selected": sel.selected,
        "selected_k": chosen.k,
        "selected_dimension": chosen.dimension,
        "shortlist": sel.shortlist,
        "jump_table": sel.jump_table,
        "fingerprint": format_fingerprint(coll.dataset_fingerprint),
        "n_rows": coll.n_rows,
    });
    writeln!(w, "{}", serde_json::to_string_pretty(&doc)?)?;
    Ok(())
}

pub fn read_selection(mut r: impl Read) -> Result<(Selection, String)> {
    let mut text = String::new();
    r.read_to_string(&mut text)?;
    let v: Value = serde_json::from_str(&text)?;
    let sel = Selection {
        kappa_hat: v
            .get("kappa_hat")
            .and_then(Value::as_f64)
            .ok_or_else(|| Error::data("selection json misses kappa_hat"))?,
        selected: v
            .get("selected")
            .and_then(Value::as_u64)
            .ok_or_else(|| Error::data("selection json misses selected"))? as usize,
        shortlist: serde_json::from_value(
            v.get("shortlist")
                .ok_or_else(|| Error::data("selection json misses shortlist"))?
                .clone(),
        )?,
        jump_table: serde_json::from_value(
            v.get("jump_table")
                .ok_or_else(|| Error::data("selection json misses jump_table"))?
                .clone(),
        )?,
    };
    let fp = v
        .get("fingerprint")
        .and_then(Value::as_str)
        .unwrap_or_default()
        .to_string();
    Ok((sel, fp))
}

// ------------------------------------------------------------ report csv

/// Cluster labels are written one-based in every report table.
pub fn write_clusters_csv(
    mut w: impl Write,
    data: &RegressionDataset,
    report: &ClusterReport,
) -> Result<()> {
    writeln!(w, "row,consumer,eve_date,day_date,label,max_tau")?;
    for i in 0..data.n() {
        let m = &data.meta[i];
        writeln!(
            w,
            "{},{},{},{},{},{}",
            i,
            m.consumer,
            m.eve_date,
            m.day_date,
            report.labels[i] + 1,
            report.max_tau[i]
        )?;
    }
    Ok(())
}

pub fn write_crosstab_csv(mut w: impl Write, report: &ClusterReport) -> Result<()> {
    writeln!(w, "cluster,mon,tue,wed,thu,fri,sat,sun")?;
    for l in 0..report.crosstab.nrows() {
        let row: Vec<String> = (0..7).map(|d| report.crosstab[[l, d]].to_string()).collect();
        writeln!(w, "{},{}", l + 1, row.join(","))?;
    }
    Ok(())
}

pub fn write_sigma_csv(
    mut w: impl Write,
    data: &RegressionDataset,
    params: &MixtureParams,
) -> Result<()> {
    writeln!(w, "cluster,{}", data.feature_labels('y').join(","))?;
    for kk in 0..params.k() {
        let row: Vec<String> = params.sigma2(kk).iter().map(|v| v.to_string()).collect();
        writeln!(w, "{},{}", kk + 1, row.join(","))?;
    }
    Ok(())
}

/// One coefficient matrix, regressor features as rows and response
/// features as columns.
fn write_matrix_csv(
    mut w: impl Write,
    data: &RegressionDataset,
    value: impl Fn(usize, usize) -> f64,
) -> Result<()> {
    let xl = data.feature_labels('x');
    writeln!(w, "feature,{}", data.feature_labels('y').join(","))?;
    for j in 0..data.p() {
        let row: Vec<String> = (0..data.q()).map(|l| value(l, j).to_string()).collect();
        writeln!(w, "{},{}", xl[j], row.join(","))?;
    }
    Ok(())
}

pub fn write_beta_csv(
    w: impl Write,
    data: &RegressionDataset,
    params: &MixtureParams,
    cluster: usize,
) -> Result<()> {
    write_matrix_csv(w, data, |l, j| params.beta(cluster)[[l, j]])
}

pub fn write_beta_diff_csv(
    w: impl Write,
    data: &RegressionDataset,
    params: &MixtureParams,
    a: usize,
    b: usize,
) -> Result<()> {
    write_matrix_csv(w, data, |l, j| {
        params.beta(a)[[l, j]] - params.beta(b)[[l, j]]
    })
}

pub fn write_posterior_summary_csv(mut w: impl Write, report: &ClusterReport) -> Result<()> {
    writeln!(w, "cluster,size,min,q1,median,q3,max")?;
    for (l, s) in report.posterior_summary.iter().enumerate() {
        writeln!(
            w,
            "{},{},{},{},{},{},{}",
            l + 1,
            report.sizes[l],
            s[0],
            s[1],
            s[2],
            s[3],
            s[4]
        )?;
    }
    Ok(())
}

pub fn write_mean_curves_csv(mut w: impl Write, report: &ClusterReport) -> Result<()> {
    let curves = report
        .mean_curves
        .as_ref()
        .ok_or_else(|| Error::data("no raw curves were attached to this report"))?;
    let mut cols = vec!["cluster".to_string()];
    cols.extend((0..CURVE_LEN).map(|s| format!("eve_{s:02}")));
    cols.extend((0..CURVE_LEN).map(|s| format!("day_{s:02}")));
    writeln!(w, "{}", cols.join(","))?;
    for l in 0..curves.nrows() {
        let row: Vec<String> = curves.row(l).iter().map(|v| v.to_string()).collect();
        writeln!(w, "{},{}", l + 1, row.join(","))?;
    }
    Ok(())
}

// ------------------------------------------------------------- forecasts

pub fn write_forecast_csv(mut w: impl Write, table: &ForecastTable) -> Result<()> {
    writeln!(
        w,
        "consumer,label,test_label,train_pooled,train_mixture,train_cluster,test_pooled,test_mixture,test_cluster"
    )?;
    for r in &table.rows {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{}",
            r.consumer,
            r.label + 1,
            r.test_label + 1,
            r.train.pooled,
            r.train.mixture,
            r.train.per_cluster,
            r.test.pooled,
            r.test.mixture,
            r.test.per_cluster
        )?;
    }
    Ok(())
}

pub fn write_forecast_summary_csv(mut w: impl Write, table: &ForecastTable) -> Result<()> {
    writeln!(w, "split,method,median_rmse")?;
    for (split, m) in [("train", table.median_train()), ("test", table.median_test())] {
        writeln!(w, "{split},pooled,{}", m.pooled)?;
        writeln!(w, "{split},mixture,{}", m.mixture)?;
        writeln!(w, "{split},per_cluster,{}", m.per_cluster)?;
    }
    Ok(())
}

// ------------------------------------------------------------ truth files

pub fn write_labels_csv(mut w: impl Write, labels: &[usize]) -> Result<()> {
    writeln!(w, "row,label")?;
    for (i, l) in labels.iter().enumerate() {
        writeln!(w, "{},{}", i, l + 1)?;
    }
    Ok(())
}

pub fn read_labels_csv(r: impl Read) -> Result<Vec<usize>> {
    let reader = BufReader::new(r);
    let mut labels = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        if lineno == 0 || line.trim().is_empty() {
            continue;
        }
        let (row, label) = line.split_once(',').ok_or_else(|| Error::Parse {
            line: lineno + 1,
            message: "expected row,label".to_string(),
        })?;
        let row: usize = row.parse().map_err(|_| Error::Parse {
            line: lineno + 1,
            message: format!("bad row index {row:?}"),
        })?;
        if row != labels.len() {
            return Err(Error::Parse {
                line: lineno + 1,
                message: format!("row index {row} out of order"),
            });
        }
        let label: usize = label.trim().parse().map_err(|_| Error::Parse {
            line: lineno + 1,
            message: format!("bad label {label:?}"),
        })?;
        if label == 0 {
            return Err(Error::Parse {
                line: lineno + 1,
                message: "labels are one-based".to_string(),
            });
        }
        labels.push(label - 1);
    }
    if labels.is_empty() {
        return Err(Error::data("label file has no rows"));
    }
    Ok(labels)
}
