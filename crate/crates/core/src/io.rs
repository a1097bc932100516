//! File formats.
//!
//! Datasets are CSV with a header row: `y`, then `x1..xp`, then an optional
//! integer `group` column. Values are written with 17 significant digits,
//! so a write/read cycle reproduces every binary64 value exactly.
//! Simulation ground truth goes to a JSON metadata file alongside.

use std::fs::File;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::groups::{Grouping, RNG_ALGORITHM};
use crate::linalg::{matrix_from_rows, matrix_to_rows, CovarianceMatrix};
use crate::sim::SimOutput;

/// Lossless decimal rendering of a binary64 value.
pub fn format_f64(v: f64) -> String {
    format!("{v:.16e}")
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub x: DMatrix<f64>,
    pub y: DVector<f64>,
    pub groups: Option<Vec<i64>>,
}

fn csv_error(line: u64, message: impl Into<String>) -> Error {
    Error::Csv { line, message: message.into() }
}

fn from_csv(e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line());
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        csv::ErrorKind::UnequalLengths { expected_len, len, .. } => {
            csv_error(line, format!("expected {expected_len} fields, found {len}"))
        }
        csv::ErrorKind::Utf8 { err, .. } => csv_error(line, format!("invalid UTF-8: {err}")),
        other => csv_error(line, format!("{other:?}")),
    }
}

/// Maps header names to `(y column, x columns in order, group column)`.
fn parse_header(header: &csv::StringRecord) -> Result<(usize, Vec<usize>, Option<usize>)> {
    let mut y = None;
    let mut group = None;
    let mut xs: Vec<(usize, usize)> = Vec::new();
    for (col, name) in header.iter().enumerate() {
        let name = name.trim();
        let dup = || csv_error(1, format!("duplicate column '{name}'"));
        match name {
            "y" => {
                if y.replace(col).is_some() {
                    return Err(dup());
                }
            }
            "group" => {
                if group.replace(col).is_some() {
                    return Err(dup());
                }
            }
            _ => {
                let j = name
                    .strip_prefix('x')
                    .and_then(|s| s.parse::<usize>().ok())
                    .filter(|&j| j >= 1)
                    .ok_or_else(|| csv_error(1, format!("unexpected column '{name}'; expected y, x1..xp, group")))?;
                if xs.iter().any(|&(k, _)| k == j) {
                    return Err(dup());
                }
                xs.push((j, col));
            }
        }
    }
    let y = y.ok_or_else(|| csv_error(1, "missing column 'y'"))?;
    if xs.is_empty() {
        return Err(csv_error(1, "no predictor columns x1..xp"));
    }
    xs.sort_unstable();
    if let Some((k, (j, _))) = xs.iter().enumerate().find(|(k, (j, _))| *j != k + 1) {
        return Err(csv_error(1, format!("predictor columns must be x1..xp; x{} is missing before x{j}", k + 1)));
    }
    Ok((y, xs.into_iter().map(|(_, c)| c).collect(), group))
}

fn parse_value(field: &str, line: u64, column: &str) -> Result<f64> {
    let v: f64 = field
        .trim()
        .parse()
        .map_err(|_| csv_error(line, format!("column '{column}': cannot parse '{field}' as a number")))?;
    if !v.is_finite() {
        return Err(csv_error(line, format!("column '{column}': non-finite value '{field}'")));
    }
    Ok(v)
}

pub fn read_dataset<R: Read>(reader: R) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let header = rdr.headers().map_err(from_csv)?.clone();
    let (ycol, xcols, gcol) = parse_header(&header)?;
    let p = xcols.len();
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    let mut labels = Vec::new();
    for record in rdr.records() {
        let record = record.map_err(from_csv)?;
        let line = record.position().map_or(0, |p| p.line());
        ys.push(parse_value(&record[ycol], line, "y")?);
        for (j, &c) in xcols.iter().enumerate() {
            xs.push(parse_value(&record[c], line, &format!("x{}", j + 1))?);
        }
        if let Some(c) = gcol {
            let label = record[c]
                .trim()
                .parse::<i64>()
                .map_err(|_| csv_error(line, format!("column 'group': '{}' is not an integer label", &record[c])))?;
            labels.push(label);
        }
    }
    if ys.is_empty() {
        return Err(csv_error(1, "no data rows"));
    }
    let n = ys.len();
    Ok(Dataset {
        x: DMatrix::from_row_slice(n, p, &xs),
        y: DVector::from_vec(ys),
        groups: gcol.map(|_| labels),
    })
}

pub fn read_dataset_file(path: &Path) -> Result<Dataset> {
    read_dataset(File::open(path)?)
}

pub fn write_dataset<W: Write>(writer: W, x: &DMatrix<f64>, y: &DVector<f64>, groups: Option<&[i64]>) -> Result<()> {
    let (n, p) = x.shape();
    if y.len() != n || groups.is_some_and(|g| g.len() != n) {
        return Err(Error::Dimension(format!("{n} design rows, {} responses", y.len())));
    }
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["y".to_string()];
    header.extend((1..=p).map(|j| format!("x{j}")));
    if groups.is_some() {
        header.push("group".into());
    }
    w.write_record(&header).map_err(from_csv)?;
    let mut row = Vec::with_capacity(p + 2);
    for i in 0..n {
        row.clear();
        row.push(format_f64(y[i]));
        row.extend((0..p).map(|j| format_f64(x[(i, j)])));
        if let Some(g) = groups {
            row.push(g[i].to_string());
        }
        w.write_record(&row).map_err(from_csv)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_dataset_file(path: &Path, x: &DMatrix<f64>, y: &DVector<f64>, groups: Option<&[i64]>) -> Result<()> {
    write_dataset(File::create(path)?, x, y, groups)
}

/// Headerless numeric CSV, one matrix row per line. A non-numeric first
/// line is treated as a header and skipped.
pub fn read_matrix<R: Read>(reader: R) -> Result<DMatrix<f64>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(false).from_reader(reader);
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (k, record) in rdr.records().enumerate() {
        let record = record.map_err(from_csv)?;
        let line = record.position().map_or(0, |p| p.line());
        let parsed: std::result::Result<Vec<f64>, _> = record.iter().map(|f| f.trim().parse::<f64>()).collect();
        match parsed {
            Ok(row) => {
                if let Some(bad) = row.iter().find(|v| !v.is_finite()) {
                    return Err(csv_error(line, format!("non-finite value {bad}")));
                }
                rows.push(row)
            }
            Err(_) if k == 0 => continue,
            Err(_) => return Err(csv_error(line, "cannot parse row as numbers")),
        }
    }
    if rows.is_empty() {
        return Err(csv_error(1, "no numeric rows"));
    }
    matrix_from_rows(&rows)
}

pub fn read_matrix_file(path: &Path) -> Result<DMatrix<f64>> {
    read_matrix(File::open(path)?)
}

pub fn write_matrix<W: Write>(writer: W, m: &DMatrix<f64>) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(writer);
    for i in 0..m.nrows() {
        w.write_record(m.row(i).iter().map(|&v| format_f64(v))).map_err(from_csv)?;
    }
    w.flush()?;
    Ok(())
}

/// Ground truth written next to a simulated dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimMetadata {
    pub n: usize,
    pub p: usize,
    pub seed: u64,
    pub scenario: String,
    #[serde(rename = "true_B")]
    pub true_b: Vec<Vec<f64>>,
    pub sigma: CovarianceMatrix,
    pub common_signal: Option<Vec<f64>>,
    pub common_b: Option<Vec<f64>>,
    pub group_b: Vec<Vec<f64>>,
    pub majority_b: Option<Vec<f64>>,
    pub noise_sd: f64,
    pub grouping: Grouping,
    pub rng: String,
    pub config: serde_json::Value,
}

impl SimMetadata {
    pub fn from_sim(sim: &SimOutput) -> Self {
        let vec = |v: &DVector<f64>| v.as_slice().to_vec();
        SimMetadata {
            n: sim.n(),
            p: sim.p(),
            seed: sim.seed,
            scenario: sim.scenario.clone(),
            true_b: matrix_to_rows(&sim.true_b),
            sigma: sim.sigma.clone(),
            common_signal: sim.common_signal.as_ref().map(vec),
            common_b: sim.common_b.as_ref().map(vec),
            group_b: sim.group_b.iter().map(vec).collect(),
            majority_b: sim.majority_b.as_ref().map(vec),
            noise_sd: sim.noise_sd,
            grouping: sim.grouping.clone(),
            rng: RNG_ALGORITHM.to_string(),
            config: sim.config.clone(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let dim = |what: &str| Err(Error::Dimension(format!("metadata {what} inconsistent with n={}, p={}", self.n, self.p)));
        if self.true_b.len() != self.n || self.true_b.iter().any(|r| r.len() != self.p) {
            return dim("true_B");
        }
        if self.sigma.dim() != self.p {
            return dim("sigma");
        }
        if self.grouping.n != self.n || self.group_b.len() != self.grouping.len() || self.group_b.iter().any(|b| b.len() != self.p) {
            return dim("grouping/group_b");
        }
        self.grouping.validate()
    }

    pub fn true_b_matrix(&self) -> Result<DMatrix<f64>> {
        matrix_from_rows(&self.true_b)
    }

    pub fn group_b_vectors(&self) -> Vec<DVector<f64>> {
        self.group_b.iter().map(|b| DVector::from_column_slice(b)).collect()
    }
}

pub fn read_metadata(path: &Path) -> Result<SimMetadata> {
    let meta: SimMetadata = serde_json::from_reader(std::io::BufReader::new(File::open(path)?))?;
    meta.validate()?;
    Ok(meta)
}

/// `<prefix>.csv` and `<prefix>.meta.json`.
pub fn simulation_paths(prefix: &Path) -> (PathBuf, PathBuf) {
    let base = prefix.as_os_str().to_string_lossy().into_owned();
    (PathBuf::from(format!("{base}.csv")), PathBuf::from(format!("{base}.meta.json")))
}

/// Writes the dataset (with a `group` column when groups partition the
/// samples) and its metadata; returns both paths.
pub fn write_simulation(sim: &SimOutput, prefix: &Path) -> Result<(PathBuf, PathBuf)> {
    let (csv_path, meta_path) = simulation_paths(prefix);
    let labels = sim.labels();
    write_dataset_file(&csv_path, &sim.x, &sim.y, labels.as_deref())?;
    let mut f = File::create(&meta_path)?;
    serde_json::to_writer_pretty(&mut f, &SimMetadata::from_sim(sim))?;
    writeln!(f)?;
    Ok((csv_path, meta_path))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{simulate_mixture, MixtureSimConfig};
    use proptest::prelude::*;

    fn read_str(s: &str) -> Result<Dataset> {
        read_dataset(s.as_bytes())
    }

    #[test]
    fn reads_basic_dataset() {
        let d = read_str("y,x1,x2,group\n1.5,1,2,7\n-2,3,4,3\n").unwrap();
        assert_eq!(d.x, DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]));
        assert_eq!(d.y.as_slice(), &[1.5, -2.0]);
        assert_eq!(d.groups, Some(vec![7, 3]));
    }

    #[test]
    fn column_order_is_by_name() {
        let d = read_str("x2,y,x1\n2,0,1\n").unwrap();
        assert_eq!(d.x, DMatrix::from_row_slice(1, 2, &[1.0, 2.0]));
        assert_eq!(d.groups, None);
    }

    fn line_of(e: Error) -> u64 {
        match e {
            Error::Csv { line, .. } => line,
            other => panic!("expected csv error, got {other}"),
        }
    }

    #[test]
    fn malformed_input_reports_line() {
        assert_eq!(line_of(read_str("y,x1\n1,2\n3,abc\n").unwrap_err()), 3);
        assert_eq!(line_of(read_str("y,x1\n1,2\n3\n").unwrap_err()), 3);
        assert_eq!(line_of(read_str("y,x1,group\n1,2,0.5\n").unwrap_err()), 2);
        assert_eq!(line_of(read_str("y,x1\n1,NaN\n").unwrap_err()), 2);
        assert_eq!(line_of(read_str("x1,x2\n1,2\n").unwrap_err()), 1);
        assert_eq!(line_of(read_str("y,x1,x3\n1,2,3\n").unwrap_err()), 1);
        assert_eq!(line_of(read_str("y,x1,z\n1,2,3\n").unwrap_err()), 1);
        assert_eq!(line_of(read_str("y,x1\n").unwrap_err()), 1);
    }

    #[test]
    fn matrix_reader_skips_header() {
        let m = read_matrix("b1,b2\n1,1\n1,-1\n".as_bytes()).unwrap();
        assert_eq!(m, DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, -1.0]));
        let m = read_matrix("0.5\n".as_bytes()).unwrap();
        assert_eq!(m[(0, 0)], 0.5);
        assert!(read_matrix("1,2\n3,x\n".as_bytes()).is_err());
        assert!(read_matrix("1,2\n3\n".as_bytes()).is_err());
    }

    #[test]
    fn simulation_round_trip() {
        let sim = simulate_mixture(&MixtureSimConfig { n: 120, p: 3, num_groups: 4, ..Default::default() }).unwrap();
        let dir = std::env::temp_dir().join(format!("magging-io-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let (csv_path, meta_path) = write_simulation(&sim, &dir.join("sim")).unwrap();
        let d = read_dataset_file(&csv_path).unwrap();
        assert_eq!(d.x, sim.x);
        assert_eq!(d.y, sim.y);
        assert_eq!(d.groups, sim.labels());
        let meta = read_metadata(&meta_path).unwrap();
        assert_eq!(meta, SimMetadata::from_sim(&sim));
        assert_eq!(meta.true_b_matrix().unwrap(), sim.true_b);
        let raw: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&meta_path).unwrap()).unwrap();
        for key in ["n", "p", "seed", "scenario", "true_B", "sigma", "common_signal"] {
            assert!(raw.get(key).is_some(), "metadata lacks {key}");
        }
        std::fs::remove_dir_all(&dir).unwrap();
    }

    proptest! {
        #[test]
        fn values_round_trip_exactly(vals in prop::collection::vec(prop::num::f64::NORMAL | prop::num::f64::SUBNORMAL | prop::num::f64::ZERO, 3..30)) {
            let n = vals.len() / 3;
            let x = DMatrix::from_row_slice(n, 2, &vals[..2 * n]);
            let y = DVector::from_column_slice(&vals[2 * n..3 * n]);
            let mut buf = Vec::new();
            write_dataset(&mut buf, &x, &y, None).unwrap();
            let d = read_dataset(buf.as_slice()).unwrap();
            prop_assert_eq!(d.x, x);
            prop_assert_eq!(d.y, y);
        }
    }
}
