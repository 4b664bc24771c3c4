//! Reading study matrices, centering, and persisting runs.
//!
//! Draws are written as a flat little-endian binary file with a JSON sidecar
//! describing the record layout; summaries and matrices go to CSV.

use std::collections::{BTreeMap, HashSet};
use std::fs::{self, File, OpenOptions};
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use log::warn;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Result, SufaError};
use crate::hmc::{ChainConfig, Draw};
use crate::identifiability::check_dimension_condition;
use crate::model::{ParamSet, StudySummary};
use crate::postprocess::PosteriorSummary;
use crate::priors::{DLState, PriorHyper};

pub const DRAWS_MAGIC: [u8; 8] = *b"SUFADRW\0";
pub const DRAWS_VERSION: u32 = 1;
pub const LOCK_FILE: &str = ".sufa.lock";

/// Which columns of a study CSV are not features.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CsvSchema {
    /// Column holding group labels for within-group centering.
    pub group_column: Option<String>,
    /// Columns to ignore entirely (sample identifiers and the like).
    pub ignore_columns: Vec<String>,
}

/// One study as read from disk.
#[derive(Debug, Clone, PartialEq)]
pub struct StudyTable {
    pub names: Vec<String>,
    pub data: DMatrix<f64>,
    pub groups: Option<Vec<String>>,
}

/// Reads a numeric CSV with a header row of feature names.
pub fn load_study_csv(path: &Path, schema: &CsvSchema) -> Result<StudyTable> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(false)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| csv_error(path, e))?;
    let header = reader.headers().map_err(|e| csv_error(path, e))?.clone();
    let mut seen = HashSet::new();
    for h in header.iter() {
        if !seen.insert(h) {
            return Err(SufaError::Input(format!("{}: duplicate column name {h:?}", path.display())));
        }
    }
    let group_idx = match &schema.group_column {
        Some(g) => Some(header.iter().position(|h| h == g).ok_or_else(|| {
            SufaError::Input(format!("{}: group column {g:?} not found", path.display()))
        })?),
        None => None,
    };
    let feature_idx: Vec<usize> = (0..header.len())
        .filter(|&i| Some(i) != group_idx && !schema.ignore_columns.iter().any(|c| c == &header[i]))
        .collect();
    if feature_idx.is_empty() {
        return Err(SufaError::Input(format!("{}: no feature columns", path.display())));
    }
    let names: Vec<String> = feature_idx.iter().map(|&i| header[i].to_string()).collect();
    let mut values = Vec::new();
    let mut groups = group_idx.map(|_| Vec::new());
    let mut rows = 0;
    for (r, record) in reader.records().enumerate() {
        let record = record.map_err(|e| csv_error(path, e))?;
        // header is line 1
        let line = r + 2;
        for (c, &i) in feature_idx.iter().enumerate() {
            let cell = &record[i];
            let v: f64 = cell.parse().map_err(|_| {
                SufaError::Input(format!(
                    "{}: line {line}, column {} ({:?}): cannot parse {cell:?} as a number",
                    path.display(),
                    i + 1,
                    names[c]
                ))
            })?;
            if !v.is_finite() {
                return Err(SufaError::Input(format!(
                    "{}: line {line}, column {}: non-finite value",
                    path.display(),
                    i + 1
                )));
            }
            values.push(v);
        }
        if let (Some(g), Some(gi)) = (groups.as_mut(), group_idx) {
            g.push(record[gi].to_string());
        }
        rows += 1;
    }
    if rows == 0 {
        return Err(SufaError::Input(format!("{}: no data rows", path.display())));
    }
    Ok(StudyTable {
        data: DMatrix::from_row_slice(rows, names.len(), &values),
        names,
        groups,
    })
}

fn csv_error(path: &Path, e: csv::Error) -> SufaError {
    let at = e
        .position()
        .map(|p| format!(" (line {})", p.line()))
        .unwrap_or_default();
    match e.into_kind() {
        csv::ErrorKind::Io(source) => SufaError::io(path, source),
        csv::ErrorKind::UnequalLengths { expected_len, len, .. } => SufaError::Input(format!(
            "{}{at}: ragged row with {len} fields, expected {expected_len}",
            path.display()
        )),
        kind => SufaError::Input(format!("{}{at}: {kind:?}", path.display())),
    }
}

/// Studies restricted to their common features.
#[derive(Debug, Clone)]
pub struct AlignedStudies {
    pub names: Vec<String>,
    pub data: Vec<DMatrix<f64>>,
    pub groups: Vec<Option<Vec<String>>>,
    /// Features dropped from each study.
    pub dropped: Vec<Vec<String>>,
}

/// Keeps the features present in every study, in the first study's order.
pub fn intersect_features(tables: Vec<StudyTable>) -> Result<AlignedStudies> {
    let first = tables
        .first()
        .ok_or_else(|| SufaError::Config("at least one study is required".into()))?;
    let sets: Vec<HashSet<&str>> = tables
        .iter()
        .map(|t| t.names.iter().map(String::as_str).collect())
        .collect();
    let names: Vec<String> = first
        .names
        .iter()
        .filter(|n| sets.iter().all(|s| s.contains(n.as_str())))
        .cloned()
        .collect();
    if names.is_empty() {
        return Err(SufaError::Input("the studies share no feature names".into()));
    }
    let keep: HashSet<&str> = names.iter().map(String::as_str).collect();
    let mut data = Vec::with_capacity(tables.len());
    let mut dropped = Vec::with_capacity(tables.len());
    let mut groups = Vec::with_capacity(tables.len());
    for (s, t) in tables.iter().enumerate() {
        let pos: BTreeMap<&str, usize> = t.names.iter().enumerate().map(|(i, n)| (n.as_str(), i)).collect();
        let idx: Vec<usize> = names.iter().map(|n| pos[n.as_str()]).collect();
        data.push(t.data.select_columns(&idx));
        let gone: Vec<String> = t.names.iter().filter(|n| !keep.contains(n.as_str())).cloned().collect();
        if !gone.is_empty() {
            warn!("study {s}: dropping {} features absent elsewhere: {}", gone.len(), gone.join(", "));
        }
        dropped.push(gone);
        groups.push(t.groups.clone());
    }
    Ok(AlignedStudies {
        names,
        data,
        groups,
        dropped,
    })
}

/// Reads every study and aligns them on their shared features.
pub fn load_studies(paths: &[PathBuf], schema: &CsvSchema) -> Result<AlignedStudies> {
    let tables = paths
        .iter()
        .map(|p| load_study_csv(p, schema))
        .collect::<Result<Vec<_>>>()?;
    intersect_features(tables)
}

/// Writes a matrix with a header row; values use the shortest round-trip form.
pub fn write_matrix_csv(path: &Path, names: &[String], m: &DMatrix<f64>) -> Result<()> {
    if names.len() != m.ncols() {
        return Err(SufaError::Dimension(format!("{} names for {} columns", names.len(), m.ncols())));
    }
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    w.write_record(names).map_err(|e| csv_error(path, e))?;
    for row in m.row_iter() {
        w.write_record(row.iter().map(|v| v.to_string())).map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| SufaError::io(path, e))
}

/// Reads a matrix written by [`write_matrix_csv`].
pub fn read_matrix_csv(path: &Path) -> Result<(Vec<String>, DMatrix<f64>)> {
    let t = load_study_csv(path, &CsvSchema::default())?;
    Ok((t.names, t.data))
}

/// Column names `prefix1, prefix2, …`.
pub fn numbered(prefix: &str, k: usize) -> Vec<String> {
    (1..=k).map(|i| format!("{prefix}{i}")).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Centering {
    None,
    #[default]
    PerStudy,
    PerGroup,
}

impl std::str::FromStr for Centering {
    type Err = SufaError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Centering::None),
            "per-study" => Ok(Centering::PerStudy),
            "per-group" => Ok(Centering::PerGroup),
            other => Err(SufaError::Config(format!(
                "unknown centering {other:?}; expected none, per-study or per-group"
            ))),
        }
    }
}

fn subtract_means(y: &mut DMatrix<f64>, rows: &[usize]) {
    let n = rows.len() as f64;
    for mut col in y.column_iter_mut() {
        let mean = rows.iter().map(|&r| col[r]).sum::<f64>() / n;
        for &r in rows {
            col[r] -= mean;
        }
        // second pass removes the rounding left by the first
        let resid = rows.iter().map(|&r| col[r]).sum::<f64>() / n;
        for &r in rows {
            col[r] -= resid;
        }
    }
}

/// Removes column means overall or within each group label.
pub fn center(y: &DMatrix<f64>, mode: Centering, groups: Option<&[String]>) -> Result<DMatrix<f64>> {
    let mut out = y.clone();
    match mode {
        Centering::None => {}
        Centering::PerStudy => {
            if y.nrows() > 0 {
                let all: Vec<usize> = (0..y.nrows()).collect();
                subtract_means(&mut out, &all);
            }
        }
        Centering::PerGroup => {
            let groups = groups.ok_or_else(|| {
                SufaError::Config("per-group centering needs a group column".into())
            })?;
            if groups.len() != y.nrows() {
                return Err(SufaError::Dimension(format!(
                    "{} group labels for {} rows",
                    groups.len(),
                    y.nrows()
                )));
            }
            let mut members: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
            for (r, g) in groups.iter().enumerate() {
                members.entry(g.as_str()).or_default().push(r);
            }
            for rows in members.values() {
                subtract_means(&mut out, rows);
            }
        }
    }
    Ok(out)
}

/// Overrides for the latent dimensions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DimsOverride {
    pub q: usize,
    pub q_s: Vec<usize>,
}

fn default_threshold() -> f64 {
    0.95
}

fn default_level() -> f64 {
    0.95
}

/// Everything a `fit` run needs. `seed` has no default.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub studies: Vec<PathBuf>,
    #[serde(default)]
    pub schema: CsvSchema,
    #[serde(default)]
    pub centering: Centering,
    /// `None` selects the dimensions from the pooled data.
    #[serde(default)]
    pub dims: Option<DimsOverride>,
    #[serde(default = "default_threshold")]
    pub rank_threshold: f64,
    #[serde(default)]
    pub hyper: PriorHyper,
    #[serde(default)]
    pub chain: ChainConfig,
    #[serde(default = "default_level")]
    pub credible_level: f64,
    pub output: PathBuf,
    pub seed: u64,
}

impl RunConfig {
    pub fn from_json_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| SufaError::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| SufaError::Config(format!("{}: {e}", path.display())))
    }

    pub fn validate(&self) -> Result<()> {
        if self.studies.is_empty() {
            return Err(SufaError::Config("at least one study file is required".into()));
        }
        if let Some(d) = &self.dims {
            if d.q_s.len() != self.studies.len() {
                return Err(SufaError::Config(format!(
                    "{} study dimensions given for {} studies",
                    d.q_s.len(),
                    self.studies.len()
                )));
            }
            if !check_dimension_condition(d.q, &d.q_s) {
                return Err(SufaError::Config(format!(
                    "study dimensions {:?} sum to {} > q = {}; the identifiability condition needs sum(q_s) <= q",
                    d.q_s,
                    d.q_s.iter().sum::<usize>(),
                    d.q
                )));
            }
        }
        if !(self.rank_threshold > 0.0 && self.rank_threshold <= 1.0) {
            return Err(SufaError::Config(format!("rank threshold {} outside (0, 1]", self.rank_threshold)));
        }
        if !(self.credible_level > 0.0 && self.credible_level < 1.0) {
            return Err(SufaError::Config(format!("credible level {} outside (0, 1)", self.credible_level)));
        }
        if self.centering == Centering::PerGroup && self.schema.group_column.is_none() {
            return Err(SufaError::Config("per-group centering needs schema.group_column".into()));
        }
        self.hyper.validate()?;
        let mut chain = self.chain.clone();
        chain.seed = self.seed;
        chain.validate()
    }
}

/// Sidecar index of a draws file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DrawsIndex {
    pub format: String,
    pub version: u32,
    pub file: String,
    pub d: usize,
    pub q: usize,
    pub q_s: Vec<usize>,
    pub num_draws: usize,
    /// Number of `f64` values per draw.
    pub record_len: usize,
    /// Field order inside each record; matrices are row-major.
    pub layout: Vec<String>,
    pub betas: Vec<f64>,
    pub hyper: PriorHyper,
    pub feature_names: Vec<String>,
    pub chain: ChainConfig,
    pub acceptance_rate: f64,
}

fn record_len(d: usize, q: usize, q_s: &[usize]) -> usize {
    4 + d * q + d + q_s.iter().map(|k| q * k).sum::<usize>() + 2 + 2 * d * q
}

fn layout(q_s: &[usize]) -> Vec<String> {
    let mut l: Vec<String> = ["iteration", "log_posterior", "loglik", "accepted", "lambda", "log_delta"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    l.extend((0..q_s.len()).map(|s| format!("a_{s}")));
    l.extend(["dl_a", "tau", "phi", "psi"].iter().map(|s| s.to_string()));
    l
}

fn push_row_major(out: &mut Vec<f64>, m: &DMatrix<f64>) {
    for row in m.row_iter() {
        out.extend(row.iter());
    }
}

fn encode(draw: &Draw) -> Vec<f64> {
    let p = &draw.params;
    let mut v = vec![
        draw.iteration as f64,
        draw.log_posterior,
        draw.loglik,
        if draw.accepted { 1.0 } else { 0.0 },
    ];
    push_row_major(&mut v, &p.lambda);
    v.extend(p.log_delta.iter());
    for a in &p.a {
        push_row_major(&mut v, a);
    }
    v.push(draw.dl.a);
    v.push(draw.dl.tau);
    push_row_major(&mut v, &draw.dl.phi);
    push_row_major(&mut v, &draw.dl.psi);
    v
}

fn decode(rec: &[f64], d: usize, q: usize, q_s: &[usize]) -> Draw {
    let mut at = 4;
    let mut take = |rows: usize, cols: usize| {
        let m = DMatrix::from_row_slice(rows, cols, &rec[at..at + rows * cols]);
        at += rows * cols;
        m
    };
    let lambda = take(d, q);
    let log_delta = DVector::from_column_slice(take(d, 1).as_slice());
    let a = q_s.iter().map(|&k| take(q, k)).collect();
    let scalars = take(1, 2);
    let phi = take(d, q);
    let psi = take(d, q);
    Draw {
        iteration: rec[0] as usize,
        log_posterior: rec[1],
        loglik: rec[2],
        accepted: rec[3] != 0.0,
        params: ParamSet { lambda, a, log_delta },
        dl: DLState {
            a: scalars[(0, 0)],
            tau: scalars[(0, 1)],
            phi,
            psi,
        },
    }
}

/// Everything needed to persist one chain.
pub struct DrawsMeta<'a> {
    pub betas: &'a [f64],
    pub hyper: &'a PriorHyper,
    pub feature_names: &'a [String],
    pub chain: &'a ChainConfig,
    pub acceptance_rate: f64,
}

/// Writes `draws.bin` and `draws.json` into `dir`.
pub fn write_draws(dir: &Path, draws: &[Draw], meta: &DrawsMeta) -> Result<DrawsIndex> {
    let first = draws
        .first()
        .ok_or_else(|| SufaError::Input("no draws to write".into()))?;
    let (d, q) = first.params.lambda.shape();
    let q_s = first.params.study_dims();
    let len = record_len(d, q, &q_s);
    let path = dir.join("draws.bin");
    let file = File::create(&path).map_err(|e| SufaError::io(&path, e))?;
    let mut w = BufWriter::new(file);
    let mut header = Vec::new();
    header.extend_from_slice(&DRAWS_MAGIC);
    header.extend_from_slice(&DRAWS_VERSION.to_le_bytes());
    for v in [d, q, q_s.len()] {
        header.extend_from_slice(&(v as u64).to_le_bytes());
    }
    for &k in &q_s {
        header.extend_from_slice(&(k as u64).to_le_bytes());
    }
    header.extend_from_slice(&(draws.len() as u64).to_le_bytes());
    w.write_all(&header).map_err(|e| SufaError::io(&path, e))?;
    for draw in draws {
        if draw.params.study_dims() != q_s || draw.params.lambda.shape() != (d, q) {
            return Err(SufaError::Dimension("draws have inconsistent shapes".into()));
        }
        let rec = encode(draw);
        debug_assert_eq!(rec.len(), len);
        for v in rec {
            w.write_all(&v.to_le_bytes()).map_err(|e| SufaError::io(&path, e))?;
        }
    }
    w.flush().map_err(|e| SufaError::io(&path, e))?;
    let index = DrawsIndex {
        format: "sufa-draws".into(),
        version: DRAWS_VERSION,
        file: "draws.bin".into(),
        d,
        q,
        q_s: q_s.clone(),
        num_draws: draws.len(),
        record_len: len,
        layout: layout(&q_s),
        betas: meta.betas.to_vec(),
        hyper: *meta.hyper,
        feature_names: meta.feature_names.to_vec(),
        chain: meta.chain.clone(),
        acceptance_rate: meta.acceptance_rate,
    };
    write_json(&dir.join("draws.json"), &index)?;
    Ok(index)
}

fn read_u64(buf: &[u8], at: &mut usize, path: &Path) -> Result<usize> {
    let bytes = buf
        .get(*at..*at + 8)
        .ok_or_else(|| SufaError::Input(format!("{}: truncated header", path.display())))?;
    *at += 8;
    Ok(u64::from_le_bytes(bytes.try_into().expect("8 bytes")) as usize)
}

/// Reads a draws directory written by [`write_draws`].
pub fn read_draws(dir: &Path) -> Result<(DrawsIndex, Vec<Draw>)> {
    let index: DrawsIndex = read_json(&dir.join("draws.json"))?;
    let path = dir.join(&index.file);
    let mut buf = Vec::new();
    BufReader::new(File::open(&path).map_err(|e| SufaError::io(&path, e))?)
        .read_to_end(&mut buf)
        .map_err(|e| SufaError::io(&path, e))?;
    if buf.len() < 12 || buf[..8] != DRAWS_MAGIC {
        return Err(SufaError::Input(format!("{}: not a draws file", path.display())));
    }
    let version = u32::from_le_bytes(buf[8..12].try_into().expect("4 bytes"));
    if version != DRAWS_VERSION {
        return Err(SufaError::Input(format!("{}: unsupported version {version}", path.display())));
    }
    let mut at = 12;
    let d = read_u64(&buf, &mut at, &path)?;
    let q = read_u64(&buf, &mut at, &path)?;
    let s = read_u64(&buf, &mut at, &path)?;
    let q_s = (0..s).map(|_| read_u64(&buf, &mut at, &path)).collect::<Result<Vec<_>>>()?;
    let n = read_u64(&buf, &mut at, &path)?;
    if (d, q, &q_s, n) != (index.d, index.q, &index.q_s, index.num_draws) {
        return Err(SufaError::Input(format!("{}: header disagrees with its index", path.display())));
    }
    let len = record_len(d, q, &q_s);
    if buf.len() - at != n * len * 8 {
        return Err(SufaError::Input(format!(
            "{}: expected {} bytes of records, found {}",
            path.display(),
            n * len * 8,
            buf.len() - at
        )));
    }
    let values: Vec<f64> = buf[at..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    let draws = values.chunks_exact(len).map(|r| decode(r, d, q, &q_s)).collect();
    Ok((index, draws))
}

/// Per-study sums of squares as persisted next to the draws.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoredStats {
    pub d: usize,
    pub n_s: Vec<usize>,
    /// Row-major `W_s`.
    pub w: Vec<Vec<f64>>,
}

pub fn write_stats(path: &Path, studies: &[StudySummary]) -> Result<()> {
    let d = studies.first().map(|s| s.d()).unwrap_or(0);
    let stored = StoredStats {
        d,
        n_s: studies.iter().map(|s| s.n).collect(),
        w: studies.iter().map(|s| s.w.transpose().as_slice().to_vec()).collect(),
    };
    write_json(path, &stored)
}

pub fn read_stats(path: &Path) -> Result<Vec<StudySummary>> {
    let stored: StoredStats = read_json(path)?;
    stored
        .w
        .iter()
        .zip(&stored.n_s)
        .map(|(w, &n)| {
            if w.len() != stored.d * stored.d {
                return Err(SufaError::Input(format!("{}: W has the wrong length", path.display())));
            }
            StudySummary::new(DMatrix::from_row_slice(stored.d, stored.d, w), n)
        })
        .collect()
}

/// Writes the posterior summary as CSV files into `dir`.
pub fn write_summary(dir: &Path, summary: &PosteriorSummary, names: &[String]) -> Result<()> {
    let q = summary.lambda_mean.ncols();
    let factors = numbered("factor", q);
    write_matrix_csv(&dir.join("lambda_mean.csv"), &factors, &summary.lambda_mean)?;
    write_matrix_csv(&dir.join("lambda_sparse.csv"), &factors, &summary.lambda_sparse)?;
    write_matrix_csv(&dir.join("shared_covariance.csv"), names, &summary.shared_covariance)?;
    write_matrix_csv(&dir.join("shared_correlation.csv"), names, &summary.shared_correlation)?;
    let delta = DMatrix::from_row_slice(1, summary.delta_mean.len(), summary.delta_mean.as_slice());
    write_matrix_csv(&dir.join("delta_mean.csv"), names, &delta)?;
    for (s, st) in summary.study_loadings.iter().enumerate() {
        let cols = numbered("factor", st.mean.ncols());
        write_matrix_csv(&dir.join(format!("study{}_loadings_mean.csv", s + 1)), &cols, &st.mean)?;
        write_matrix_csv(&dir.join(format!("study{}_loadings_sparse.csv", s + 1)), &cols, &st.sparse)?;
    }
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| SufaError::Input(e.to_string()))?;
    fs::write(path, text + "\n").map_err(|e| SufaError::io(path, e))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| SufaError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| SufaError::Input(format!("{}: {e}", path.display())))
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| SufaError::io(path, e))?;
    Ok(Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileHash {
    pub path: String,
    pub sha256: String,
}

/// Record of a run: inputs, configuration, outputs and timings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub seed: u64,
    pub config: serde_json::Value,
    pub inputs: Vec<FileHash>,
    pub outputs: Vec<FileHash>,
    pub timings: BTreeMap<String, f64>,
    pub workers: usize,
}

impl Manifest {
    pub fn new(command: &str, seed: u64, config: serde_json::Value, workers: usize) -> Self {
        Manifest {
            tool: env!("CARGO_PKG_NAME").into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: command.into(),
            seed,
            config,
            inputs: Vec::new(),
            outputs: Vec::new(),
            timings: BTreeMap::new(),
            workers,
        }
    }

    pub fn add_input(&mut self, path: &Path) -> Result<()> {
        self.inputs.push(FileHash {
            path: path.display().to_string(),
            sha256: sha256_file(path)?,
        });
        Ok(())
    }

    /// Hashes every regular file in `dir` except the lock and the manifest.
    pub fn add_outputs(&mut self, dir: &Path) -> Result<()> {
        let mut entries: Vec<PathBuf> = fs::read_dir(dir)
            .map_err(|e| SufaError::io(dir, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.is_file())
            .filter(|p| {
                let name = p.file_name().and_then(|n| n.to_str()).unwrap_or("");
                name != LOCK_FILE && name != "manifest.json"
            })
            .collect();
        entries.sort();
        for p in entries {
            self.outputs.push(FileHash {
                path: p.file_name().unwrap().to_string_lossy().into_owned(),
                sha256: sha256_file(&p)?,
            });
        }
        Ok(())
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        write_json(&dir.join("manifest.json"), self)
    }
}

/// Exclusive claim on an output directory, released on drop.
#[derive(Debug)]
pub struct OutputLock {
    path: PathBuf,
}

impl OutputLock {
    /// Creates `dir` if needed and the lock file inside it.
    pub fn acquire(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir).map_err(|e| SufaError::io(dir, e))?;
        let path = dir.join(LOCK_FILE);
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(mut f) => {
                let _ = writeln!(f, "{}", std::process::id());
                Ok(OutputLock { path })
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(SufaError::Config(format!(
                "output directory {} is in use by another run (remove {} if it is stale)",
                dir.display(),
                path.display()
            ))),
            Err(e) => Err(SufaError::io(&path, e)),
        }
    }
}

impl Drop for OutputLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}
