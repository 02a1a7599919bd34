//! Meter data ingestion: CSV panels in, regression datasets out.
//!
//! Two file layouts are accepted. `wide` carries one day per row
//! (`consumer,date,h00,...,h47`); `long` carries one reading per row
//! (`consumer,timestamp,value`) with ISO-8601 wall-clock timestamps mapped to
//! half-hour slots. Days must be complete: the strict policy rejects any gap,
//! the impute policy fills an isolated interior gap linearly and rejects the
//! rest. Clock-change days with 46 or 50 readings therefore never pass
//! strict ingestion.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Read;

use chrono::{Datelike, NaiveDate, NaiveDateTime, Timelike, Weekday};
use ndarray::Array2;

use crate::error::{Error, Result};
use crate::wavelet::{preprocess, PrepMode, CURVE_LEN};

/// One day of half-hourly readings.
#[derive(Debug, Clone, PartialEq)]
pub struct DayCurve {
    pub date: NaiveDate,
    pub values: Vec<f64>,
}

impl DayCurve {
    pub fn new(date: NaiveDate, values: Vec<f64>) -> Result<Self> {
        if values.len() != CURVE_LEN {
            return Err(Error::Dim {
                what: "day curve",
                expected: CURVE_LEN,
                got: values.len(),
            });
        }
        if let Some(bad) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::data(format!(
                "non-finite reading on {date} slot {bad}"
            )));
        }
        Ok(DayCurve { date, values })
    }

    pub fn weekday(&self) -> Weekday {
        self.date.weekday()
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / CURVE_LEN as f64
    }
}

/// All day curves of one meter, in strictly increasing date order.
#[derive(Debug, Clone)]
pub struct ConsumerSeries {
    id: String,
    days: Vec<DayCurve>,
}

impl ConsumerSeries {
    pub fn new(id: impl Into<String>, mut days: Vec<DayCurve>) -> Result<Self> {
        let id = id.into();
        if id.is_empty() {
            return Err(Error::data("empty consumer id"));
        }
        days.sort_by_key(|d| d.date);
        for pair in days.windows(2) {
            if pair[0].date == pair[1].date {
                return Err(Error::data(format!(
                    "duplicate day {} for consumer {id}",
                    pair[0].date
                )));
            }
        }
        Ok(ConsumerSeries { id, days })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn days(&self) -> &[DayCurve] {
        &self.days
    }

    pub fn day(&self, date: NaiveDate) -> Option<&DayCurve> {
        self.days
            .binary_search_by_key(&date, |d| d.date)
            .ok()
            .map(|i| &self.days[i])
    }
}

/// A set of meters, consumer ids unique and sorted.
#[derive(Debug, Clone)]
pub struct MeterPanel {
    consumers: Vec<ConsumerSeries>,
}

impl MeterPanel {
    pub fn new(mut consumers: Vec<ConsumerSeries>) -> Result<Self> {
        if consumers.is_empty() {
            return Err(Error::data("panel has no consumers"));
        }
        consumers.sort_by(|a, b| a.id.cmp(&b.id));
        for pair in consumers.windows(2) {
            if pair[0].id == pair[1].id {
                return Err(Error::data(format!("duplicate consumer id {}", pair[0].id)));
            }
        }
        Ok(MeterPanel { consumers })
    }

    pub fn consumers(&self) -> &[ConsumerSeries] {
        &self.consumers
    }

    pub fn n_consumers(&self) -> usize {
        self.consumers.len()
    }
}

/// How to treat gaps in a day.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MissingPolicy {
    #[default]
    Strict,
    /// Fill an interior slot whose two neighbours are present with their
    /// midpoint; anything else still fails.
    Impute,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CsvLayout {
    Wide,
    Long,
}

const WIDE_COLS: usize = 2 + CURVE_LEN;

fn parse_date(s: &str, line: usize) -> Result<NaiveDate> {
    NaiveDate::parse_from_str(s.trim(), "%Y-%m-%d").map_err(|e| Error::Parse {
        line,
        message: format!("bad date {s:?}: {e}"),
    })
}

fn parse_timestamp(s: &str, line: usize) -> Result<NaiveDateTime> {
    let t = s.trim();
    // Offsets are honoured only to recover the local wall-clock reading.
    if let Ok(dt) = chrono::DateTime::parse_from_rfc3339(t) {
        return Ok(dt.naive_local());
    }
    for fmt in ["%Y-%m-%dT%H:%M:%S", "%Y-%m-%d %H:%M:%S", "%Y-%m-%dT%H:%M", "%Y-%m-%d %H:%M"] {
        if let Ok(dt) = NaiveDateTime::parse_from_str(t, fmt) {
            return Ok(dt);
        }
    }
    Err(Error::Parse {
        line,
        message: format!("bad timestamp {s:?}"),
    })
}

fn parse_value(s: &str, line: usize) -> Result<Option<f64>> {
    let t = s.trim();
    if t.is_empty() || t == "NA" {
        return Ok(None);
    }
    let v: f64 = t.parse().map_err(|_| Error::Parse {
        line,
        message: format!("bad reading {s:?}"),
    })?;
    if !v.is_finite() {
        return Err(Error::Parse {
            line,
            message: format!("non-finite reading {s:?}"),
        });
    }
    if v < 0.0 {
        return Err(Error::Parse {
            line,
            message: format!("negative reading {v}"),
        });
    }
    Ok(Some(v))
}

/// Turn the per-slot readings of one day into a complete curve, applying the
/// missing-data policy.
fn complete_day(
    consumer: &str,
    date: NaiveDate,
    slots: &[Option<f64>; CURVE_LEN],
    policy: MissingPolicy,
) -> Result<Vec<f64>> {
    let mut values = Vec::with_capacity(CURVE_LEN);
    for (slot, v) in slots.iter().enumerate() {
        match v {
            Some(v) => values.push(*v),
            None => {
                let filled = match policy {
                    MissingPolicy::Strict => None,
                    MissingPolicy::Impute => {
                        if slot == 0 || slot == CURVE_LEN - 1 {
                            None
                        } else {
                            match (slots[slot - 1], slots[slot + 1]) {
                                (Some(a), Some(b)) => Some(0.5 * (a + b)),
                                _ => None,
                            }
                        }
                    }
                };
                match filled {
                    Some(v) => values.push(v),
                    None => {
                        return Err(Error::data(format!(
                            "consumer {consumer}, day {date}: missing reading at slot {slot}"
                        )))
                    }
                }
            }
        }
    }
    Ok(values)
}

/// Parse a meter CSV into a validated panel.
pub fn parse_meter_csv(
    input: impl Read,
    layout: CsvLayout,
    policy: MissingPolicy,
) -> Result<MeterPanel> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .comment(Some(b'#'))
        .from_reader(input);

    // consumer -> date -> slots
    let mut cells: BTreeMap<String, BTreeMap<NaiveDate, [Option<f64>; CURVE_LEN]>> =
        BTreeMap::new();

    for record in reader.records() {
        let record = record.map_err(|e| Error::data(format!("csv error: {e}")))?;
        let line = record
            .position()
            .map(|p| p.line() as usize)
            .unwrap_or_default();
        match layout {
            CsvLayout::Wide => {
                if record.len() != WIDE_COLS {
                    return Err(Error::Parse {
                        line,
                        message: format!("expected {WIDE_COLS} columns, got {}", record.len()),
                    });
                }
                let consumer = record[0].trim().to_string();
                let date = parse_date(&record[1], line)?;
                let day = cells.entry(consumer.clone()).or_default();
                if day.contains_key(&date) {
                    return Err(Error::data(format!(
                        "duplicate day {date} for consumer {consumer}"
                    )));
                }
                let mut slots = [None; CURVE_LEN];
                for (i, slot) in slots.iter_mut().enumerate() {
                    *slot = parse_value(&record[2 + i], line)?;
                }
                day.insert(date, slots);
            }
            CsvLayout::Long => {
                if record.len() != 3 {
                    return Err(Error::Parse {
                        line,
                        message: format!("expected 3 columns, got {}", record.len()),
                    });
                }
                let consumer = record[0].trim().to_string();
                if consumer.is_empty() {
                    return Err(Error::Parse {
                        line,
                        message: "empty consumer id".into(),
                    });
                }
                let ts = parse_timestamp(&record[1], line)?;
                let slot = ts.time().hour() as usize * 2 + ts.time().minute() as usize / 30;
                let Some(value) = parse_value(&record[2], line)? else {
                    continue; // a missing reading row is the same as no row
                };
                let slots = cells
                    .entry(consumer.clone())
                    .or_default()
                    .entry(ts.date())
                    .or_insert([None; CURVE_LEN]);
                if slots[slot].is_some() {
                    return Err(Error::data(format!(
                        "consumer {consumer}, day {}: duplicate reading at slot {slot}",
                        ts.date()
                    )));
                }
                slots[slot] = Some(value);
            }
        }
    }

    let mut consumers = Vec::with_capacity(cells.len());
    for (id, days) in cells {
        let mut curves = Vec::with_capacity(days.len());
        for (date, slots) in days {
            let values = complete_day(&id, date, &slots, policy)?;
            curves.push(DayCurve::new(date, values)?);
        }
        consumers.push(ConsumerSeries::new(id, curves)?);
    }
    MeterPanel::new(consumers)
}

/// Sum the panel into one curve per day, over the dates every consumer
/// reported. Days missing from any consumer are dropped so that the sums stay
/// comparable across days.
pub fn aggregate_synchronous(panel: &MeterPanel) -> Result<Vec<DayCurve>> {
    let mut shared: Option<BTreeSet<NaiveDate>> = None;
    for c in panel.consumers() {
        let dates: BTreeSet<NaiveDate> = c.days().iter().map(|d| d.date).collect();
        shared = Some(match shared {
            None => dates,
            Some(s) => s.intersection(&dates).copied().collect(),
        });
    }
    let shared = shared.unwrap_or_default();
    if shared.is_empty() {
        return Err(Error::data("no day is present for every consumer"));
    }
    let mut out = Vec::with_capacity(shared.len());
    for date in shared {
        let mut sum = vec![0.0; CURVE_LEN];
        for c in panel.consumers() {
            let day = c.day(date).expect("date taken from the intersection");
            for (acc, v) in sum.iter_mut().zip(&day.values) {
                *acc += v;
            }
        }
        out.push(DayCurve::new(date, sum)?);
    }
    Ok(out)
}

/// Identification of one regression row.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct RowMeta {
    pub consumer: String,
    pub eve_date: NaiveDate,
    pub day_date: NaiveDate,
}

impl RowMeta {
    pub fn day_weekday(&self) -> Weekday {
        self.day_date.weekday()
    }
}

/// Feature matrix pair (x rows explain y rows) with per-row identification.
#[derive(Debug, Clone)]
pub struct RegressionDataset {
    pub x: Array2<f64>,
    pub y: Array2<f64>,
    pub meta: Vec<RowMeta>,
    /// Preprocessing that produced the features, when they came from curves.
    pub prep: Option<PrepMode>,
}

impl RegressionDataset {
    pub fn new(
        x: Array2<f64>,
        y: Array2<f64>,
        meta: Vec<RowMeta>,
        prep: Option<PrepMode>,
    ) -> Result<Self> {
        if x.nrows() != y.nrows() || x.nrows() != meta.len() {
            return Err(Error::data(format!(
                "row mismatch: x {}, y {}, meta {}",
                x.nrows(),
                y.nrows(),
                meta.len()
            )));
        }
        if x.nrows() == 0 {
            return Err(Error::data("dataset has no rows"));
        }
        if x.iter().chain(y.iter()).any(|v| !v.is_finite()) {
            return Err(Error::data("non-finite feature value"));
        }
        if let Some(mode) = prep {
            if x.ncols() != mode.feature_len() || y.ncols() != mode.feature_len() {
                return Err(Error::data(format!(
                    "feature width {} does not match preprocessing width {}",
                    x.ncols(),
                    mode.feature_len()
                )));
            }
        }
        Ok(RegressionDataset { x, y, meta, prep })
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    pub fn q(&self) -> usize {
        self.y.ncols()
    }

    /// Column names for one side, `x_d4_0` style when the preprocessing is
    /// known, `x_0` style otherwise.
    pub fn feature_labels(&self, role: char) -> Vec<String> {
        let width = if role == 'x' { self.p() } else { self.q() };
        match self.prep {
            Some(mode) if mode.feature_len() == width => mode
                .feature_labels()
                .into_iter()
                .map(|l| format!("{role}_{l}"))
                .collect(),
            _ => (0..width).map(|j| format!("{role}_{j}")).collect(),
        }
    }

    /// FNV-1a hash of the dataset's canonical byte form. Ties fitted model
    /// files back to the exact rows they were estimated from.
    pub fn fingerprint(&self) -> u64 {
        let mut h = Fnv::new();
        h.eat(b"loadmix.dataset.v1");
        for dim in [self.n(), self.p(), self.q()] {
            h.eat(&(dim as u64).to_le_bytes());
        }
        h.eat(&[self.prep.map_or(0, |m| m.id())]);
        for v in self.x.iter().chain(self.y.iter()) {
            h.eat(&v.to_bits().to_le_bytes());
        }
        for row in &self.meta {
            h.eat(row.consumer.as_bytes());
            h.eat(&[0xff]);
            h.eat(row.eve_date.to_string().as_bytes());
            h.eat(row.day_date.to_string().as_bytes());
        }
        h.finish()
    }
}

struct Fnv(u64);

impl Fnv {
    fn new() -> Self {
        Fnv(0xcbf2_9ce4_8422_2325)
    }

    fn eat(&mut self, bytes: &[u8]) {
        for b in bytes {
            self.0 = (self.0 ^ u64::from(*b)).wrapping_mul(0x0000_0100_0000_01b3);
        }
    }

    fn finish(&self) -> u64 {
        self.0
    }
}

/// Raw curves behind one regression row, kept for reporting and for turning
/// feature predictions back into curves.
#[derive(Debug, Clone)]
pub struct CurvePair {
    pub eve: DayCurve,
    pub day: DayCurve,
}

/// Which consecutive-day pairs to keep.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PairSelector {
    /// Every pair of calendar-consecutive days.
    All,
    /// Only the pair starting on the given evening.
    SingleEve(NaiveDate),
}

impl PairSelector {
    fn keep(&self, eve: NaiveDate) -> bool {
        match self {
            PairSelector::All => true,
            PairSelector::SingleEve(d) => eve == *d,
        }
    }
}

/// Pair consecutive days of one chronological curve list into a regression
/// dataset: x holds the evening's features, y the next day's. Pairs whose
/// dates are not consecutive on the calendar are never formed.
pub fn build_day_pairs(
    curves: &[DayCurve],
    selector: PairSelector,
    mode: PrepMode,
    label: &str,
) -> Result<(RegressionDataset, Vec<CurvePair>)> {
    let mut xs: Vec<f64> = Vec::new();
    let mut ys: Vec<f64> = Vec::new();
    let mut meta = Vec::new();
    let mut pairs = Vec::new();
    for w in curves.windows(2) {
        let (eve, day) = (&w[0], &w[1]);
        if day.date != eve.date.succ_opt().expect("date overflow") {
            continue;
        }
        if !selector.keep(eve.date) {
            continue;
        }
        xs.extend(preprocess(&eve.values, mode)?);
        ys.extend(preprocess(&day.values, mode)?);
        meta.push(RowMeta {
            consumer: label.to_string(),
            eve_date: eve.date,
            day_date: day.date,
        });
        pairs.push(CurvePair {
            eve: eve.clone(),
            day: day.clone(),
        });
    }
    if meta.is_empty() {
        return Err(Error::data("no eligible day pair"));
    }
    let p = mode.feature_len();
    let n = meta.len();
    let x = Array2::from_shape_vec((n, p), xs).expect("row-major features");
    let y = Array2::from_shape_vec((n, p), ys).expect("row-major features");
    Ok((RegressionDataset::new(x, y, meta, Some(mode))?, pairs))
}

/// Mean curve per weekday for one consumer, indexed Monday..Sunday.
/// A weekday never observed stays `None`.
#[derive(Debug, Clone)]
pub struct WeekdayMeans {
    pub consumer: String,
    pub means: [Option<DayCurve>; 7],
}

/// Slot-wise weekday means for every consumer, in panel order.
pub fn mean_weekday_curves(panel: &MeterPanel) -> Vec<WeekdayMeans> {
    panel
        .consumers()
        .iter()
        .map(|c| {
            let mut sums = [(); 7].map(|_| (vec![0.0; CURVE_LEN], 0usize, None::<NaiveDate>));
            for day in c.days() {
                let idx = day.weekday().num_days_from_monday() as usize;
                let (sum, count, first) = &mut sums[idx];
                for (acc, v) in sum.iter_mut().zip(&day.values) {
                    *acc += v;
                }
                *count += 1;
                first.get_or_insert(day.date);
            }
            let means = sums.map(|(sum, count, first)| {
                first.map(|date| {
                    let values = sum.iter().map(|v| v / count as f64).collect();
                    DayCurve::new(date, values).expect("means of valid curves")
                })
            });
            WeekdayMeans {
                consumer: c.id().to_string(),
                means,
            }
        })
        .collect()
}

/// Dataset over the summed panel: one row per consecutive day pair.
pub fn aggregate_dataset(
    panel: &MeterPanel,
    selector: PairSelector,
    mode: PrepMode,
) -> Result<(RegressionDataset, Vec<CurvePair>)> {
    let days = aggregate_synchronous(panel)?;
    build_day_pairs(&days, selector, mode, "aggregate")
}

/// Dataset with one row per consumer for a single day pair. Consumers
/// missing either day are skipped and reported back.
pub fn individual_dataset(
    panel: &MeterPanel,
    eve: NaiveDate,
    mode: PrepMode,
) -> Result<(RegressionDataset, Vec<CurvePair>, Vec<String>)> {
    let day = eve.succ_opt().expect("date overflow");
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    let mut meta = Vec::new();
    let mut pairs = Vec::new();
    let mut skipped = Vec::new();
    for c in panel.consumers() {
        let (Some(e), Some(d)) = (c.day(eve), c.day(day)) else {
            skipped.push(c.id().to_string());
            continue;
        };
        xs.extend(preprocess(&e.values, mode)?);
        ys.extend(preprocess(&d.values, mode)?);
        meta.push(RowMeta {
            consumer: c.id().to_string(),
            eve_date: eve,
            day_date: day,
        });
        pairs.push(CurvePair {
            eve: e.clone(),
            day: d.clone(),
        });
    }
    if meta.is_empty() {
        return Err(Error::data(format!("no consumer holds both {eve} and {day}")));
    }
    let p = mode.feature_len();
    let n = meta.len();
    let x = Array2::from_shape_vec((n, p), xs).expect("row-major features");
    let y = Array2::from_shape_vec((n, p), ys).expect("row-major features");
    Ok((RegressionDataset::new(x, y, meta, Some(mode))?, pairs, skipped))
}

/// Dataset with one row per consumer pairing the mean curve of `eve_weekday`
/// with the mean curve of the following weekday (Sunday wraps to Monday).
pub fn mean_day_dataset(
    panel: &MeterPanel,
    eve_weekday: Weekday,
    mode: PrepMode,
) -> Result<(RegressionDataset, Vec<CurvePair>)> {
    let day_weekday = eve_weekday.succ();
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    let mut meta = Vec::new();
    let mut pairs = Vec::new();
    for wm in mean_weekday_curves(panel) {
        let pick = |w: Weekday| -> Result<&DayCurve> {
            wm.means[w.num_days_from_monday() as usize]
                .as_ref()
                .ok_or_else(|| {
                    Error::data(format!("consumer {} has no {w} in the panel", wm.consumer))
                })
        };
        let eve = pick(eve_weekday)?;
        let day = pick(day_weekday)?;
        xs.extend(preprocess(&eve.values, mode)?);
        ys.extend(preprocess(&day.values, mode)?);
        meta.push(RowMeta {
            consumer: wm.consumer.clone(),
            eve_date: eve.date,
            day_date: day.date,
        });
        pairs.push(CurvePair {
            eve: eve.clone(),
            day: day.clone(),
        });
    }
    let p = mode.feature_len();
    let n = meta.len();
    let x = Array2::from_shape_vec((n, p), xs).expect("row-major features");
    let y = Array2::from_shape_vec((n, p), ys).expect("row-major features");
    Ok((RegressionDataset::new(x, y, meta, Some(mode))?, pairs))
}
