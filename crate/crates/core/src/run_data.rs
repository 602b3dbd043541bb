//! Training-run ingestion: parsing, validation, scale derivation, smoothing
//! and iso-token grouping.
//!
//! Every analysis in this crate consumes a [`RunSet`]. Records are validated
//! on load; a row that violates a record invariant is rejected with the line
//! number and column that caused it.
//!
//! Units are raw counts for tokens and FLOPs and nats for losses.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::digest::sha256_hex;

/// Exact CSV column order; the header must match it.
pub const CSV_COLUMNS: [&str; 12] = [
    "run_id",
    "step",
    "tokens",
    "loss",
    "params",
    "flops",
    "model_scale",
    "experts",
    "batch_size",
    "seq_len",
    "learning_rate",
    "loss_kind",
];

/// Comment line written ahead of the CSV header. Lines starting with `#` are
/// skipped by the reader.
pub const UNITS_COMMENT: &str =
    "# units: tokens=count flops=count model_scale=flops_per_token loss=nats learning_rate=per_step";

/// Relative tolerance for `flops ≈ model_scale · tokens`.
pub const FLOPS_CONSISTENCY_TOL: f64 = 1e-6;

/// Expert counts at or above this are outside the MoE loss law's validity range.
pub const MAX_EXPERTS_EXCLUSIVE: u32 = 100;

#[derive(Debug, Error)]
pub enum RunDataError {
    #[error("file not found: {0}")]
    FileNotFound(String),
    #[error("line {row}, column `{column}`: {reason}")]
    SchemaError {
        row: usize,
        column: String,
        reason: String,
    },
    #[error("input contains no records")]
    EmptyInput,
    #[error("missing field `{0}`")]
    MissingField(&'static str),
    #[error("series `{run_id}` has {have} records, need at least {need}")]
    TooFewRecords {
        run_id: String,
        have: usize,
        need: usize,
    },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("no series covers token level {0:e}")]
    NoSeriesCoversLevel(f64),
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, RunDataError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    #[default]
    Train,
    Test,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RunFormat {
    Csv,
    Jsonl,
}

impl RunFormat {
    /// Guess from a file extension; anything other than `.jsonl`/`.json` is CSV.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("jsonl") | Some("json") => RunFormat::Jsonl,
            _ => RunFormat::Csv,
        }
    }
}

/// One logged observation from a training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingRecord {
    pub run_id: String,
    pub step: u64,
    pub tokens: f64,
    pub loss: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub params: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub flops: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model_scale: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub experts: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub batch_size: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seq_len: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub learning_rate: Option<f64>,
    #[serde(default)]
    pub loss_kind: LossKind,
}

impl TrainingRecord {
    /// Minimal record: everything optional left empty, dense, train loss.
    pub fn new(run_id: impl Into<String>, step: u64, tokens: f64, loss: f64) -> Self {
        Self {
            run_id: run_id.into(),
            step,
            tokens,
            loss,
            params: None,
            flops: None,
            model_scale: None,
            experts: None,
            batch_size: None,
            seq_len: None,
            learning_rate: None,
            loss_kind: LossKind::Train,
        }
    }

    /// Expert count, treating an absent value as a dense model.
    pub fn experts_or_dense(&self) -> u32 {
        self.experts.unwrap_or(1)
    }

    /// Check every record invariant. Returns `(column, reason)` for the first violation.
    pub fn validate(&self) -> std::result::Result<(), (&'static str, String)> {
        fn positive(col: &'static str, v: f64) -> std::result::Result<(), (&'static str, String)> {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err((col, format!("{col} must be positive (got {v})")))
            }
        }
        if self.run_id.is_empty() {
            return Err(("run_id", "run_id must not be empty".into()));
        }
        positive("tokens", self.tokens)?;
        positive("loss", self.loss)?;
        if let Some(p) = self.params {
            positive("params", p)?;
        }
        if let Some(c) = self.flops {
            positive("flops", c)?;
        }
        if let Some(n) = self.model_scale {
            positive("model_scale", n)?;
        }
        if let Some(lr) = self.learning_rate {
            positive("learning_rate", lr)?;
        }
        if self.experts == Some(0) {
            return Err(("experts", "experts must be at least 1".into()));
        }
        if self.batch_size == Some(0) {
            return Err(("batch_size", "batch_size must be positive".into()));
        }
        if self.seq_len == Some(0) {
            return Err(("seq_len", "seq_len must be positive".into()));
        }
        if let (Some(c), Some(n)) = (self.flops, self.model_scale) {
            let implied = n * self.tokens;
            if ((c - implied) / c).abs() > FLOPS_CONSISTENCY_TOL {
                return Err((
                    "flops",
                    format!(
                        "flops ({c:e}) disagrees with model_scale * tokens ({implied:e}) beyond relative tolerance {FLOPS_CONSISTENCY_TOL:e}"
                    ),
                ));
            }
        }
        Ok(())
    }
}

/// The fixed hyperparameter tuple shared by every record of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub model_scale: Option<f64>,
    pub params: Option<f64>,
    pub experts: Option<u32>,
    pub batch_size: Option<u64>,
    pub learning_rate: Option<f64>,
    pub seq_len: Option<u64>,
}

impl RunConfig {
    fn of(r: &TrainingRecord) -> Self {
        Self {
            model_scale: r.model_scale,
            params: r.params,
            experts: r.experts,
            batch_size: r.batch_size,
            learning_rate: r.learning_rate,
            seq_len: r.seq_len,
        }
    }

    fn matches(&self, other: &Self) -> bool {
        fn close(a: Option<f64>, b: Option<f64>) -> bool {
            match (a, b) {
                (None, None) => true,
                (Some(x), Some(y)) => ((x - y) / x.abs().max(y.abs())).abs() <= FLOPS_CONSISTENCY_TOL,
                _ => false,
            }
        }
        close(self.model_scale, other.model_scale)
            && close(self.params, other.params)
            && close(self.learning_rate, other.learning_rate)
            && self.experts == other.experts
            && self.batch_size == other.batch_size
            && self.seq_len == other.seq_len
    }
}

/// All records of one run, ordered by tokens.
///
/// Train and test losses live in separate lists; each list is strictly
/// increasing in tokens.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSeries {
    pub run_id: String,
    pub config: RunConfig,
    pub records: Vec<TrainingRecord>,
    #[serde(default)]
    pub test_records: Vec<TrainingRecord>,
}

impl RunSeries {
    /// Build a series from records of a single run. Records are sorted by
    /// tokens; duplicates and config drift are rejected.
    pub fn from_records(run_id: &str, mut records: Vec<TrainingRecord>) -> std::result::Result<Self, String> {
        let first = records.first().ok_or_else(|| format!("run `{run_id}` has no records"))?;
        let config = RunConfig::of(first);
        for r in &records {
            if r.run_id != run_id {
                return Err(format!("record of run `{}` placed in series `{run_id}`", r.run_id));
            }
            if !config.matches(&RunConfig::of(r)) {
                return Err(format!(
                    "run `{run_id}` changes its configuration at step {} (model_scale/params/experts/batch_size/learning_rate/seq_len must be fixed)",
                    r.step
                ));
            }
        }
        records.sort_by(|a, b| a.tokens.total_cmp(&b.tokens));
        let (train, test): (Vec<_>, Vec<_>) = records.into_iter().partition(|r| r.loss_kind == LossKind::Train);
        for list in [&train, &test] {
            if let Some(w) = list.windows(2).find(|w| w[1].tokens <= w[0].tokens) {
                return Err(format!(
                    "run `{run_id}` has two {:?} records at tokens {:e}",
                    w[0].loss_kind, w[0].tokens
                ));
            }
        }
        Ok(Self {
            run_id: run_id.to_string(),
            config,
            records: train,
            test_records: test,
        })
    }

    /// Records of the requested kinds, train first.
    pub fn records_of(&self, include_test: bool) -> impl Iterator<Item = &TrainingRecord> {
        let test: &[TrainingRecord] = if include_test { &self.test_records } else { &[] };
        self.records.iter().chain(test.iter())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    /// SHA-256 of the source bytes, hex encoded.
    pub digest: String,
    /// Seconds since the Unix epoch at load time.
    pub loaded_at: u64,
}

/// A validated collection of runs. Immutable after construction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSet {
    pub series: Vec<RunSeries>,
    pub provenance: Provenance,
}

impl RunSet {
    /// Group records into series by `run_id`, ordered by first appearance.
    pub fn from_records(records: Vec<TrainingRecord>, digest: String) -> std::result::Result<Self, String> {
        if records.is_empty() {
            return Err("no records".into());
        }
        let mut order: Vec<String> = Vec::new();
        let mut groups: BTreeMap<String, Vec<TrainingRecord>> = BTreeMap::new();
        for r in records {
            if !groups.contains_key(&r.run_id) {
                order.push(r.run_id.clone());
            }
            groups.entry(r.run_id.clone()).or_default().push(r);
        }
        let series = order
            .into_iter()
            .map(|id| {
                let recs = groups.remove(&id).unwrap_or_default();
                RunSeries::from_records(&id, recs)
            })
            .collect::<std::result::Result<Vec<_>, _>>()?;
        Ok(Self {
            series,
            provenance: Provenance {
                digest,
                loaded_at: now_secs(),
            },
        })
    }

    pub fn records(&self) -> impl Iterator<Item = &TrainingRecord> {
        self.series.iter().flat_map(|s| s.records.iter().chain(s.test_records.iter()))
    }

    pub fn len(&self) -> usize {
        self.series.iter().map(|s| s.records.len() + s.test_records.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Serialize in the canonical CSV schema.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "{UNITS_COMMENT}")?;
        let mut w = csv::Writer::from_writer(out);
        w.write_record(CSV_COLUMNS).map_err(csv_io)?;
        for r in self.records() {
            w.write_record(record_to_row(r)).map_err(csv_io)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Serialize as one JSON object per line.
    pub fn write_jsonl<W: Write>(&self, mut out: W) -> Result<()> {
        for r in self.records() {
            let line = serde_json::to_string(r).map_err(|e| RunDataError::Io(e.into()))?;
            writeln!(out, "{line}")?;
        }
        Ok(())
    }

    pub fn write<W: Write>(&self, out: W, format: RunFormat) -> Result<()> {
        match format {
            RunFormat::Csv => self.write_csv(out),
            RunFormat::Jsonl => self.write_jsonl(out),
        }
    }
}

fn now_secs() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

fn csv_io(e: csv::Error) -> RunDataError {
    RunDataError::Io(std::io::Error::other(e))
}

fn fmt_opt<T: ToString>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn record_to_row(r: &TrainingRecord) -> [String; 12] {
    [
        r.run_id.clone(),
        r.step.to_string(),
        format!("{:e}", r.tokens),
        r.loss.to_string(),
        fmt_opt(r.params.map(|v| format!("{v:e}"))),
        fmt_opt(r.flops.map(|v| format!("{v:e}"))),
        fmt_opt(r.model_scale.map(|v| format!("{v:e}"))),
        fmt_opt(r.experts),
        fmt_opt(r.batch_size),
        fmt_opt(r.seq_len),
        fmt_opt(r.learning_rate.map(|v| format!("{v:e}"))),
        match r.loss_kind {
            LossKind::Train => "train".into(),
            LossKind::Test => "test".into(),
        },
    ]
}

/// Load and validate a run file.
pub fn load_runs(path: &Path, format: RunFormat) -> Result<RunSet> {
    let mut bytes = Vec::new();
    match File::open(path) {
        Ok(mut f) => f.read_to_end(&mut bytes)?,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
            return Err(RunDataError::FileNotFound(path.display().to_string()))
        }
        Err(e) => return Err(e.into()),
    };
    parse_runs(&bytes, format)
}

/// Parse and validate run data already in memory.
pub fn parse_runs(bytes: &[u8], format: RunFormat) -> Result<RunSet> {
    let records = match format {
        RunFormat::Csv => parse_csv(bytes)?,
        RunFormat::Jsonl => parse_jsonl(bytes)?,
    };
    if records.is_empty() {
        return Err(RunDataError::EmptyInput);
    }
    RunSet::from_records(records, sha256_hex(bytes)).map_err(|reason| RunDataError::SchemaError {
        row: 0,
        column: "run_id".into(),
        reason,
    })
}

fn parse_csv(bytes: &[u8]) -> Result<Vec<TrainingRecord>> {
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .has_headers(true)
        .from_reader(bytes);
    let header = rdr.headers().map_err(|e| RunDataError::SchemaError {
        row: 1,
        column: String::new(),
        reason: e.to_string(),
    })?;
    if header.is_empty() {
        return Err(RunDataError::EmptyInput);
    }
    let got: Vec<&str> = header.iter().collect();
    if got != CSV_COLUMNS {
        let pos = got.iter().zip(CSV_COLUMNS.iter()).position(|(a, b)| a != b).unwrap_or(got.len().min(CSV_COLUMNS.len()));
        return Err(RunDataError::SchemaError {
            row: header.position().map(|p| p.line() as usize).unwrap_or(1),
            column: CSV_COLUMNS.get(pos).copied().unwrap_or("").to_string(),
            reason: format!("header must be exactly `{}`", CSV_COLUMNS.join(",")),
        });
    }

    let mut out = Vec::new();
    for row in rdr.records() {
        let row = row.map_err(|e| RunDataError::SchemaError {
            row: e.position().map(|p| p.line() as usize).unwrap_or(0),
            column: String::new(),
            reason: e.to_string(),
        })?;
        let line = row.position().map(|p| p.line() as usize).unwrap_or(0);
        let record = parse_csv_row(&row, line)?;
        check_record(&record, line)?;
        out.push(record);
    }
    Ok(out)
}

fn parse_csv_row(row: &csv::StringRecord, line: usize) -> Result<TrainingRecord> {
    let err = |col: &str, reason: String| RunDataError::SchemaError {
        row: line,
        column: col.to_string(),
        reason,
    };
    let field = |i: usize| row.get(i).unwrap_or("");
    fn num<T: std::str::FromStr>(s: &str) -> std::result::Result<Option<T>, String> {
        if s.is_empty() {
            return Ok(None);
        }
        s.parse::<T>().map(Some).map_err(|_| format!("cannot parse `{s}`"))
    }
    fn count(s: &str) -> std::result::Result<Option<u64>, String> {
        if s.is_empty() {
            return Ok(None);
        }
        // Accept counts written in scientific notation (e.g. `1e3`).
        if let Ok(v) = s.parse::<u64>() {
            return Ok(Some(v));
        }
        match s.parse::<f64>() {
            Ok(v) if v >= 0.0 && v.fract() == 0.0 && v <= u64::MAX as f64 => Ok(Some(v as u64)),
            _ => Err(format!("`{s}` is not a non-negative integer")),
        }
    }
    let required = |col: &'static str, v: Option<f64>| v.ok_or_else(|| err(col, format!("{col} is required")));

    let run_id = field(0).to_string();
    let step = count(field(1)).map_err(|e| err("step", e))?.ok_or_else(|| err("step", "step is required".into()))?;
    let tokens = required("tokens", num::<f64>(field(2)).map_err(|e| err("tokens", e))?)?;
    let loss = required("loss", num::<f64>(field(3)).map_err(|e| err("loss", e))?)?;
    let params = num::<f64>(field(4)).map_err(|e| err("params", e))?;
    let flops = num::<f64>(field(5)).map_err(|e| err("flops", e))?;
    let model_scale = num::<f64>(field(6)).map_err(|e| err("model_scale", e))?;
    let experts = count(field(7))
        .map_err(|e| err("experts", e))?
        .map(|v| u32::try_from(v).map_err(|_| err("experts", format!("{v} out of range"))))
        .transpose()?;
    let batch_size = count(field(8)).map_err(|e| err("batch_size", e))?;
    let seq_len = count(field(9)).map_err(|e| err("seq_len", e))?;
    let learning_rate = num::<f64>(field(10)).map_err(|e| err("learning_rate", e))?;
    let loss_kind = match field(11) {
        "" | "train" => LossKind::Train,
        "test" => LossKind::Test,
        other => return Err(err("loss_kind", format!("expected `train` or `test`, got `{other}`"))),
    };
    Ok(TrainingRecord {
        run_id,
        step,
        tokens,
        loss,
        params,
        flops,
        model_scale,
        experts,
        batch_size,
        seq_len,
        learning_rate,
        loss_kind,
    })
}

fn check_record(r: &TrainingRecord, line: usize) -> Result<()> {
    r.validate().map_err(|(column, reason)| RunDataError::SchemaError {
        row: line,
        column: column.to_string(),
        reason,
    })
}

fn parse_jsonl(bytes: &[u8]) -> Result<Vec<TrainingRecord>> {
    let mut out = Vec::new();
    for (i, line) in BufReader::new(bytes).lines().enumerate() {
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let record: TrainingRecord = serde_json::from_str(trimmed).map_err(|e| RunDataError::SchemaError {
            row: i + 1,
            column: json_error_column(&e),
            reason: e.to_string(),
        })?;
        check_record(&record, i + 1)?;
        out.push(record);
    }
    Ok(out)
}

fn json_error_column(e: &serde_json::Error) -> String {
    let msg = e.to_string();
    msg.split('`').nth(1).unwrap_or("").to_string()
}

/// How to fill in model scale and compute for a record.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScaleRule {
    /// `model_scale = 6 · params` (the `C = 6PD` approximation).
    SixPd,
    /// `model_scale = flops / tokens`.
    FlopsOverTokens,
}

/// Fill `model_scale` and `flops` from the chosen rule. Idempotent.
pub fn derive_scale(record: &TrainingRecord, rule: ScaleRule) -> Result<TrainingRecord> {
    let mut out = record.clone();
    match rule {
        ScaleRule::SixPd => {
            let p = record.params.ok_or(RunDataError::MissingField("params_P"))?;
            let n = 6.0 * p;
            out.model_scale = Some(n);
            out.flops = Some(n * record.tokens);
        }
        ScaleRule::FlopsOverTokens => {
            let c = record.flops.ok_or(RunDataError::MissingField("flops_C"))?;
            out.model_scale = Some(c / record.tokens);
            // flops kept as given so repeated application is exact.
        }
    }
    Ok(out)
}

/// Apply [`derive_scale`] to every record of a run set.
pub fn derive_scale_all(runs: &RunSet, rule: ScaleRule) -> Result<RunSet> {
    let mut out = runs.clone();
    for s in &mut out.series {
        for r in s.records.iter_mut().chain(s.test_records.iter_mut()) {
            *r = derive_scale(r, rule)?;
        }
        if let Some(first) = s.records.first().or(s.test_records.first()) {
            s.config.model_scale = first.model_scale;
        }
    }
    Ok(out)
}

/// Normalized Gaussian kernel weights for a window of `window` taps centred
/// on the output point. Even windows extend one extra tap to the left.
fn gaussian_taps(window: usize, sigma: f64) -> Vec<(isize, f64)> {
    let centre = (window as f64 - 1.0) / 2.0;
    let left = (window / 2) as isize;
    (0..window)
        .map(|j| {
            let z = (j as f64 - centre) / sigma;
            (j as isize - left, (-0.5 * z * z).exp())
        })
        .collect()
}

/// Smooth a series' train losses with a truncated, renormalized Gaussian
/// window. Tokens and all other fields are left as they are.
pub fn smooth_series(series: &RunSeries, window: usize, sigma: f64) -> Result<RunSeries> {
    if window == 0 {
        return Err(RunDataError::InvalidArgument("window must be at least 1".into()));
    }
    if !(sigma.is_finite() && sigma > 0.0) {
        return Err(RunDataError::InvalidArgument(format!("sigma must be positive (got {sigma})")));
    }
    let n = series.records.len();
    if n < window {
        return Err(RunDataError::TooFewRecords {
            run_id: series.run_id.clone(),
            have: n,
            need: window,
        });
    }
    let taps = gaussian_taps(window, sigma);
    let losses: Vec<f64> = series.records.iter().map(|r| r.loss).collect();
    let mut out = series.clone();
    for (i, rec) in out.records.iter_mut().enumerate() {
        let (mut num, mut den) = (0.0, 0.0);
        for &(off, w) in &taps {
            let j = i as isize + off;
            if j >= 0 && (j as usize) < n {
                num += w * losses[j as usize];
                den += w;
            }
        }
        rec.loss = num / den;
    }
    Ok(out)
}

/// One run's contribution to an iso-token contour.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IsoTokenEntry {
    pub run_id: String,
    pub config: RunConfig,
    pub loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IsoTokenContour {
    pub token_level: f64,
    pub entries: Vec<IsoTokenEntry>,
}

/// Loss of a series at `level` tokens, linear in (ln tokens, loss).
/// `None` when the level lies outside the series' token range.
fn interpolate_at(records: &[TrainingRecord], level: f64, rel_tol: f64) -> Option<f64> {
    if let Some(hit) = records.iter().find(|r| ((r.tokens - level) / level).abs() <= rel_tol) {
        return Some(hit.loss);
    }
    let idx = records.partition_point(|r| r.tokens < level);
    if idx == 0 || idx == records.len() {
        return None;
    }
    let (lo, hi) = (&records[idx - 1], &records[idx]);
    let t = (level.ln() - lo.tokens.ln()) / (hi.tokens.ln() - lo.tokens.ln());
    Some(lo.loss + t * (hi.loss - lo.loss))
}

/// Collect, for each token level, every series' train loss at that level.
///
/// A record within `rel_tol` (relative) of a level counts as an exact hit.
pub fn group_iso_token(runs: &RunSet, token_levels: &[f64], rel_tol: f64) -> Result<Vec<IsoTokenContour>> {
    if !(rel_tol.is_finite() && rel_tol >= 0.0) {
        return Err(RunDataError::InvalidArgument(format!("rel_tol must be non-negative (got {rel_tol})")));
    }
    for s in &runs.series {
        if s.records.len() < 2 {
            return Err(RunDataError::TooFewRecords {
                run_id: s.run_id.clone(),
                have: s.records.len(),
                need: 2,
            });
        }
    }
    token_levels
        .iter()
        .map(|&level| {
            if !(level.is_finite() && level > 0.0) {
                return Err(RunDataError::InvalidArgument(format!("token level must be positive (got {level})")));
            }
            let entries: Vec<IsoTokenEntry> = runs
                .series
                .iter()
                .filter_map(|s| {
                    interpolate_at(&s.records, level, rel_tol).map(|loss| IsoTokenEntry {
                        run_id: s.run_id.clone(),
                        config: s.config.clone(),
                        loss,
                    })
                })
                .collect();
            if entries.is_empty() {
                return Err(RunDataError::NoSeriesCoversLevel(level));
            }
            Ok(IsoTokenContour {
                token_level: level,
                entries,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const HEADER: &str = "run_id,step,tokens,loss,params,flops,model_scale,experts,batch_size,seq_len,learning_rate,loss_kind\n";

    fn csv(rows: &str) -> Vec<u8> {
        format!("{HEADER}{rows}").into_bytes()
    }

    fn series(losses: &[f64]) -> RunSeries {
        let recs = losses
            .iter()
            .enumerate()
            .map(|(i, &l)| TrainingRecord::new("r", i as u64, 1e6 * (i + 1) as f64, l))
            .collect();
        RunSeries::from_records("r", recs).unwrap()
    }

    #[test]
    fn three_valid_rows_group_into_series() {
        let data = csv(
            "a,1,1e9,3.0,1e8,,,1,256,2048,1e-3,train\n\
             a,2,2e9,2.8,1e8,,,1,256,2048,1e-3,train\n\
             b,1,1e9,2.9,2e8,,,8,256,2048,1e-3,train\n",
        );
        let rs = parse_runs(&data, RunFormat::Csv).unwrap();
        assert_eq!(rs.len(), 3);
        assert_eq!(rs.series.len(), 2);
        assert_eq!(rs.series[0].records.len(), 2);
        assert_eq!(rs.series[1].config.experts, Some(8));
        assert_eq!(rs.provenance.digest.len(), 64);
    }

    #[test]
    fn negative_loss_is_rejected_with_row() {
        let data = csv("a,1,1e9,-0.1,,,,1,,,,train\n");
        match parse_runs(&data, RunFormat::Csv) {
            Err(RunDataError::SchemaError { row, column, reason }) => {
                assert_eq!(row, 2);
                assert_eq!(column, "loss");
                assert!(reason.contains("loss must be positive"), "{reason}");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn inconsistent_flops_rejected() {
        // 6e18 / 1e9 = 6e9, not 7e9.
        let data = csv("a,1,1e9,2.0,,6e18,7e9,1,,,,train\n");
        match parse_runs(&data, RunFormat::Csv) {
            Err(RunDataError::SchemaError { column, .. }) => assert_eq!(column, "flops"),
            other => panic!("unexpected {other:?}"),
        }
        let ok = csv("a,1,1e9,2.0,,6e18,6e9,1,,,,train\n");
        assert!(parse_runs(&ok, RunFormat::Csv).is_ok());
    }

    #[test]
    fn wrong_header_and_empty_input() {
        let bad = b"run,step\nx,1\n".to_vec();
        assert!(matches!(parse_runs(&bad, RunFormat::Csv), Err(RunDataError::SchemaError { .. })));
        assert!(matches!(parse_runs(HEADER.as_bytes(), RunFormat::Csv), Err(RunDataError::EmptyInput)));
        assert!(matches!(parse_runs(b"", RunFormat::Jsonl), Err(RunDataError::EmptyInput)));
    }

    #[test]
    fn missing_file() {
        let err = load_runs(Path::new("/nonexistent/runs.csv"), RunFormat::Csv).unwrap_err();
        assert!(matches!(err, RunDataError::FileNotFound(_)));
    }

    #[test]
    fn jsonl_rows_and_errors() {
        let ok = br#"{"run_id":"a","step":1,"tokens":1e9,"loss":3.0,"experts":8}
{"run_id":"a","step":2,"tokens":2e9,"loss":2.9,"experts":8}"#;
        let rs = parse_runs(ok, RunFormat::Jsonl).unwrap();
        assert_eq!(rs.series[0].records.len(), 2);
        let bad = br#"{"run_id":"a","step":1,"tokens":1e9,"loss":0.0}"#;
        assert!(matches!(
            parse_runs(bad, RunFormat::Jsonl),
            Err(RunDataError::SchemaError { row: 1, .. })
        ));
    }

    #[test]
    fn duplicate_tokens_and_config_drift_rejected() {
        let dup = csv("a,1,1e9,3.0,,,,1,,,,train\na,2,1e9,2.9,,,,1,,,,train\n");
        assert!(parse_runs(&dup, RunFormat::Csv).is_err());
        let drift = csv("a,1,1e9,3.0,,,,1,,,,train\na,2,2e9,2.9,,,,8,,,,train\n");
        assert!(parse_runs(&drift, RunFormat::Csv).is_err());
        // train and test at the same token count are fine
        let mixed = csv("a,1,1e9,3.0,,,,1,,,,train\na,1,1e9,3.1,,,,1,,,,test\n");
        let rs = parse_runs(&mixed, RunFormat::Csv).unwrap();
        assert_eq!(rs.series[0].test_records.len(), 1);
    }

    #[test]
    fn derive_scale_rules() {
        let mut r = TrainingRecord::new("a", 0, 2e9, 3.0);
        r.params = Some(1e8);
        let d = derive_scale(&r, ScaleRule::SixPd).unwrap();
        assert_eq!(d.model_scale, Some(6e8));
        assert_eq!(d.flops, Some(1.2e18));

        let mut r = TrainingRecord::new("a", 0, 1e9, 3.0);
        r.flops = Some(1e18);
        let d = derive_scale(&r, ScaleRule::FlopsOverTokens).unwrap();
        assert_eq!(d.model_scale, Some(1e9));

        let r = TrainingRecord::new("a", 0, 1e9, 3.0);
        assert!(matches!(
            derive_scale(&r, ScaleRule::SixPd),
            Err(RunDataError::MissingField("params_P"))
        ));
        assert!(matches!(
            derive_scale(&r, ScaleRule::FlopsOverTokens),
            Err(RunDataError::MissingField("flops_C"))
        ));
    }

    #[test]
    fn smoothing_constant_is_unchanged() {
        let s = series(&[2.5; 20]);
        let out = smooth_series(&s, 10, 2.5).unwrap();
        for r in &out.records {
            assert!((r.loss - 2.5).abs() < 1e-15);
        }
    }

    #[test]
    fn smoothing_impulse_matches_hand_weights() {
        let s = series(&[0.0, 0.0, 1.0, 0.0, 0.0]);
        let out = smooth_series(&s, 3, 1.0).unwrap();
        // taps e^{-1/2}, 1, e^{-1/2}
        let side = (-0.5f64).exp();
        let total = 1.0 + 2.0 * side;
        let l: Vec<f64> = out.records.iter().map(|r| r.loss).collect();
        assert!((l[2] - 1.0 / total).abs() < 1e-15);
        assert!((l[1] - side / total).abs() < 1e-15);
        assert!((l[3] - side / total).abs() < 1e-15);
        assert_eq!(l[0], 0.0);
        assert!(l[2] < 1.0 && l[1] > 0.0);
        assert_eq!(out.records[2].tokens, s.records[2].tokens);
    }

    #[test]
    fn smoothing_needs_enough_records() {
        let s = series(&[1.0; 5]);
        assert!(matches!(smooth_series(&s, 10, 2.0), Err(RunDataError::TooFewRecords { .. })));
        assert!(smooth_series(&s, 0, 2.0).is_err());
        assert!(smooth_series(&s, 3, 0.0).is_err());
    }

    fn two_point_set() -> RunSet {
        let recs = vec![
            TrainingRecord::new("a", 1, 1e9, 3.0),
            TrainingRecord::new("a", 2, 4e9, 2.6),
        ];
        RunSet::from_records(recs, String::new()).unwrap()
    }

    #[test]
    fn iso_token_interpolates_in_log_tokens() {
        let rs = two_point_set();
        let c = group_iso_token(&rs, &[2e9, 1e9], 1e-9).unwrap();
        assert!((c[0].entries[0].loss - 2.8).abs() < 1e-12);
        assert_eq!(c[1].entries[0].loss, 3.0);
        assert!(matches!(
            group_iso_token(&rs, &[1e12], 1e-9),
            Err(RunDataError::NoSeriesCoversLevel(_))
        ));
    }

    #[test]
    fn csv_round_trip_preserves_records() {
        let data = csv(
            "a,1,1e9,3.0,1e8,6e17,6e8,1,256,2048,1e-3,train\n\
             a,2,2e9,2.8,1e8,1.2e18,6e8,1,256,2048,1e-3,train\n\
             a,2,2e9,2.9,1e8,1.2e18,6e8,1,256,2048,1e-3,test\n",
        );
        let rs = parse_runs(&data, RunFormat::Csv).unwrap();
        for fmt in [RunFormat::Csv, RunFormat::Jsonl] {
            let mut buf = Vec::new();
            rs.write(&mut buf, fmt).unwrap();
            let back = parse_runs(&buf, fmt).unwrap();
            assert_eq!(back.series, rs.series);
        }
    }

    proptest! {
        #[test]
        fn round_trip_arbitrary_records(
            losses in proptest::collection::vec(0.01f64..20.0, 1..20),
            params in proptest::option::of(1e3f64..1e12),
            experts in proptest::option::of(1u32..99),
            lr in proptest::option::of(1e-6f64..1.0),
        ) {
            let recs: Vec<_> = losses.iter().enumerate().map(|(i, &l)| {
                let mut r = TrainingRecord::new("p", i as u64, 1.5e7 * (i as f64 + 1.0), l);
                r.params = params;
                r.experts = experts;
                r.learning_rate = lr;
                r
            }).collect();
            let rs = RunSet::from_records(recs, String::new()).unwrap();
            for fmt in [RunFormat::Csv, RunFormat::Jsonl] {
                let mut buf = Vec::new();
                rs.write(&mut buf, fmt).unwrap();
                let back = parse_runs(&buf, fmt).unwrap();
                prop_assert_eq!(&back.series, &rs.series);
            }
        }

        #[test]
        fn derive_scale_is_idempotent(p in 1e3f64..1e12, c in 1e10f64..1e24, d in 1e6f64..1e13) {
            let mut r = TrainingRecord::new("x", 0, d, 2.0);
            r.params = Some(p);
            let once = derive_scale(&r, ScaleRule::SixPd).unwrap();
            prop_assert_eq!(derive_scale(&once, ScaleRule::SixPd).unwrap(), once);
            let mut r = TrainingRecord::new("x", 0, d, 2.0);
            r.flops = Some(c);
            let once = derive_scale(&r, ScaleRule::FlopsOverTokens).unwrap();
            prop_assert_eq!(derive_scale(&once, ScaleRule::FlopsOverTokens).unwrap(), once);
        }

        #[test]
        fn smoothing_preserves_length_and_is_shift_equivariant(
            losses in proptest::collection::vec(0.5f64..5.0, 12..40),
            window in 1usize..8,
            sigma in 0.3f64..4.0,
        ) {
            let s = series(&losses);
            let out = smooth_series(&s, window, sigma).unwrap();
            prop_assert_eq!(out.records.len(), s.records.len());
            // shift the input by one record; interior outputs shift with it
            let shifted = series(&losses[1..]);
            let out2 = smooth_series(&shifted, window, sigma).unwrap();
            let reach = window;
            for i in reach..(losses.len() - 1).saturating_sub(reach) {
                prop_assert!((out.records[i + 1].loss - out2.records[i].loss).abs() < 1e-12);
            }
        }

        #[test]
        fn iso_token_monotone_for_monotone_series(
            mut losses in proptest::collection::vec(1.0f64..5.0, 3..15),
            fracs in proptest::collection::vec(0.0f64..1.0, 2..10),
        ) {
            losses.sort_by(|a, b| b.total_cmp(a));
            let s = series(&losses);
            let rs = RunSet { series: vec![s.clone()], provenance: Provenance { digest: String::new(), loaded_at: 0 } };
            let (lo, hi) = (s.records[0].tokens.ln(), s.records.last().unwrap().tokens.ln());
            let mut levels: Vec<f64> = fracs.iter().map(|f| (lo + f * (hi - lo)).exp()).collect();
            levels.sort_by(f64::total_cmp);
            let c = group_iso_token(&rs, &levels, 1e-12).unwrap();
            for w in c.windows(2) {
                prop_assert!(w[1].entries[0].loss <= w[0].entries[0].loss + 1e-12);
            }
        }
    }
}
