//! File formats: the JSON model document and comma-delimited series files.
//!
//! Series files carry a mandatory header row and one row per time point;
//! a column named `regime` (anywhere) holds 1-based integer labels and is
//! accepted wherever a separate regimes file would be.

use crate::error::{Error, Result};
use crate::fbinfer::ChainParams;
use crate::margins::Margin;
use crate::mcvar::ContempCorr;
use crate::model::RegimeModel;
use crate::window::SwitchCorr;
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use std::path::Path;

pub const MODEL_FORMAT_VERSION: u32 = 1;

/// On-disk model document. Matrices are stored as explicit nested lists so
/// the file stays human-readable and diffable.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ModelFile {
    pub format_version: u32,
    pub num_regimes: usize,
    pub dim: usize,
    pub variable_names: Vec<String>,
    /// Per-regime, per-variable Markov orders (lengths of `pacf` entries).
    pub orders: Vec<Vec<usize>>,
    pub margins: Vec<Vec<Margin>>,
    pub pacf: Vec<Vec<Vec<f64>>>,
    /// Strict lower triangle of each regime's contemporaneous correlation
    /// matrix, rows in order (1,0), (2,0), (2,1), ...
    pub contemp_lower: Vec<Vec<f64>>,
    pub switch_rho: Vec<f64>,
    pub initial_probs: Vec<f64>,
    /// Row-major transition matrix.
    pub transition: Vec<Vec<f64>>,
}

impl ModelFile {
    pub fn from_model(model: &RegimeModel, variable_names: Option<Vec<String>>) -> Self {
        let g = model.num_regimes();
        let d = model.dim();
        let names = variable_names
            .unwrap_or_else(|| (1..=d).map(|i| format!("x{i}")).collect());
        let contemp_lower = (1..=g)
            .map(|gi| {
                let m = model.contemp(gi).matrix();
                let mut tri = Vec::with_capacity(d * (d - 1) / 2);
                for i in 1..d {
                    for j in 0..i {
                        tri.push(m[(i, j)]);
                    }
                }
                tri
            })
            .collect();
        ModelFile {
            format_version: MODEL_FORMAT_VERSION,
            num_regimes: g,
            dim: d,
            variable_names: names,
            orders: (1..=g).map(|gi| (0..d).map(|i| model.order(gi, i)).collect()).collect(),
            margins: model.margins().to_vec(),
            pacf: (1..=g)
                .map(|gi| (0..d).map(|i| model.pacf(gi, i).to_vec()).collect())
                .collect(),
            contemp_lower,
            switch_rho: model.switch_corr().rho().to_vec(),
            initial_probs: model.chain().init().to_vec(),
            transition: (0..g)
                .map(|r| (0..g).map(|c| model.chain().trans()[(r, c)]).collect())
                .collect(),
        }
    }

    /// Reconstructs and fully validates the model (including positive
    /// definiteness of every label-pattern window).
    pub fn into_model(&self) -> Result<RegimeModel> {
        if self.format_version != MODEL_FORMAT_VERSION {
            return Err(Error::Data(format!(
                "unsupported model format version {} (expected {})",
                self.format_version, MODEL_FORMAT_VERSION
            )));
        }
        let g = self.num_regimes;
        let d = self.dim;
        if self.margins.len() != g || self.pacf.len() != g || self.contemp_lower.len() != g {
            return Err(Error::Data("regime counts disagree inside the model file".into()));
        }
        if self.orders.len() != g {
            return Err(Error::Data("orders shape mismatch".into()));
        }
        for gi in 0..g {
            for i in 0..d {
                if self.pacf[gi][i].len() != self.orders[gi][i] {
                    return Err(Error::Data(format!(
                        "pacf length disagrees with order for regime {} variable {}",
                        gi + 1,
                        i
                    )));
                }
            }
        }
        let contemp = self
            .contemp_lower
            .iter()
            .map(|tri| {
                if tri.len() != d * (d - 1) / 2 {
                    return Err(Error::Data("lower-triangle length mismatch".into()));
                }
                let mut m = DMatrix::identity(d, d);
                let mut pos = 0;
                for i in 1..d {
                    for j in 0..i {
                        m[(i, j)] = tri[pos];
                        m[(j, i)] = tri[pos];
                        pos += 1;
                    }
                }
                ContempCorr::new(m)
            })
            .collect::<Result<Vec<_>>>()?;
        let trans = DMatrix::from_fn(g, g, |r, c| self.transition[r][c]);
        let model = RegimeModel::new(
            self.margins.clone(),
            self.pacf.clone(),
            contemp,
            SwitchCorr::new(self.switch_rho.clone())?,
            ChainParams::new(self.initial_probs.clone(), trans)?,
        )?;
        model.window_cache()?; // feasibility gate
        Ok(model)
    }
}

pub fn write_model(
    path: &Path,
    model: &RegimeModel,
    variable_names: Option<Vec<String>>,
) -> Result<()> {
    let doc = ModelFile::from_model(model, variable_names);
    let text = serde_json::to_string_pretty(&doc)
        .map_err(|e| Error::Data(format!("model serialization: {e}")))?;
    std::fs::write(path, text + "\n")
        .map_err(|e| Error::Data(format!("writing {}: {e}", path.display())))
}

pub fn read_model(path: &Path) -> Result<(RegimeModel, Vec<String>)> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Data(format!("reading {}: {e}", path.display())))?;
    let doc: ModelFile = serde_json::from_str(&text)
        .map_err(|e| Error::Data(format!("parsing {}: {e}", path.display())))?;
    let names = doc.variable_names.clone();
    Ok((doc.into_model()?, names))
}

/// A parsed series file: named numeric columns, optionally a regime column.
#[derive(Clone, Debug)]
pub struct Series {
    pub names: Vec<String>,
    /// `T x d` values (regime column excluded).
    pub data: DMatrix<f64>,
    /// 1-based labels from a `regime` column, when present.
    pub regimes: Option<Vec<usize>>,
}

const REGIME_COLUMN: &str = "regime";

pub fn read_series(path: &Path) -> Result<Series> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Data(format!("reading {}: {e}", path.display())))?;
    parse_series(&text).map_err(|e| match e {
        Error::Data(msg) => Error::Data(format!("{}: {msg}", path.display())),
        other => other,
    })
}

pub fn parse_series(text: &str) -> Result<Series> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header = lines.next().ok_or_else(|| Error::Data("empty file".into()))?;
    let cols: Vec<String> = header.split(',').map(|c| c.trim().to_string()).collect();
    let regime_idx = cols.iter().position(|c| c.eq_ignore_ascii_case(REGIME_COLUMN));
    let names: Vec<String> = cols
        .iter()
        .enumerate()
        .filter(|(i, _)| Some(*i) != regime_idx)
        .map(|(_, c)| c.clone())
        .collect();
    // a bare regimes file (only the regime column) is a valid series file
    if names.is_empty() && regime_idx.is_none() {
        return Err(Error::Data("no data columns".into()));
    }
    let mut values: Vec<f64> = Vec::new();
    let mut regimes: Vec<usize> = Vec::new();
    let mut t_len = 0usize;
    for (row_no, line) in lines.enumerate() {
        let cells: Vec<&str> = line.split(',').map(|c| c.trim()).collect();
        if cells.len() != cols.len() {
            return Err(Error::Data(format!(
                "row {}: {} cells, expected {}",
                row_no + 2,
                cells.len(),
                cols.len()
            )));
        }
        for (ci, cell) in cells.iter().enumerate() {
            if Some(ci) == regime_idx {
                let g: usize = cell.parse().map_err(|_| {
                    Error::Data(format!("row {}, column '{}': bad regime label '{cell}'",
                        row_no + 2, cols[ci]))
                })?;
                if g == 0 {
                    return Err(Error::Data(format!(
                        "row {}: regime labels are 1-based",
                        row_no + 2
                    )));
                }
                regimes.push(g);
            } else {
                let v: f64 = cell.parse().map_err(|_| {
                    Error::Data(format!(
                        "row {}, column '{}': bad numeric value '{cell}'",
                        row_no + 2,
                        cols[ci]
                    ))
                })?;
                if !v.is_finite() {
                    return Err(Error::Data(format!(
                        "row {}, column '{}': non-finite value",
                        row_no + 2,
                        cols[ci]
                    )));
                }
                values.push(v);
            }
        }
        t_len += 1;
    }
    if t_len == 0 {
        return Err(Error::Data("no data rows".into()));
    }
    let d = names.len();
    let data = DMatrix::from_fn(t_len, d, |t, i| values[t * d + i]);
    Ok(Series { names, data, regimes: regime_idx.map(|_| regimes) })
}

pub fn write_series(path: &Path, series: &Series) -> Result<()> {
    let mut out = String::new();
    let mut header: Vec<String> = series.names.clone();
    if series.regimes.is_some() {
        header.push(REGIME_COLUMN.to_string());
    }
    out.push_str(&header.join(","));
    out.push('\n');
    for t in 0..series.data.nrows() {
        let mut cells: Vec<String> =
            (0..series.data.ncols()).map(|i| format_float(series.data[(t, i)])).collect();
        if let Some(r) = &series.regimes {
            cells.push(r[t].to_string());
        }
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    std::fs::write(path, out)
        .map_err(|e| Error::Data(format!("writing {}: {e}", path.display())))
}

/// Writes a numeric table with the given header.
pub fn write_table(path: &Path, header: &[String], rows: &DMatrix<f64>) -> Result<()> {
    let mut out = String::new();
    out.push_str(&header.join(","));
    out.push('\n');
    for t in 0..rows.nrows() {
        let cells: Vec<String> = (0..rows.ncols()).map(|i| format_float(rows[(t, i)])).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    std::fs::write(path, out)
        .map_err(|e| Error::Data(format!("writing {}: {e}", path.display())))
}

fn format_float(v: f64) -> String {
    // shortest representation that round-trips
    let mut s = format!("{v}");
    if !s.contains('.') && !s.contains('e') && !s.contains("inf") && !s.contains("NaN") {
        s.push_str(".0");
    }
    s
}

/// First difference of natural logarithms, column-wise; all inputs must be
/// strictly positive. The output has one fewer row.
pub fn diff_log(data: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let (t_len, d) = (data.nrows(), data.ncols());
    if t_len < 2 {
        return Err(Error::Data("need at least two rows to difference".into()));
    }
    for t in 0..t_len {
        for i in 0..d {
            if data[(t, i)] <= 0.0 {
                return Err(Error::Data(format!(
                    "row {}, column {}: value {} is not positive; cannot take log",
                    t + 1,
                    i + 1,
                    data[(t, i)]
                )));
            }
        }
    }
    Ok(DMatrix::from_fn(t_len - 1, d, |t, i| {
        data[(t + 1, i)].ln() - data[(t, i)].ln()
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::tests::example_model;

    #[test]
    fn model_round_trip_is_identity() {
        let model = example_model();
        let dir = std::env::temp_dir().join("mcrs-io-test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("model.json");
        write_model(&path, &model, Some(vec!["a".into(), "b".into()])).unwrap();
        let (back, names) = read_model(&path).unwrap();
        assert_eq!(names, vec!["a".to_string(), "b".to_string()]);
        assert_eq!(back, model);
    }

    #[test]
    fn model_file_rejects_bad_version_and_shapes() {
        let model = example_model();
        let mut doc = ModelFile::from_model(&model, None);
        doc.format_version = 99;
        assert!(matches!(doc.into_model(), Err(Error::Data(_))));

        let mut doc2 = ModelFile::from_model(&model, None);
        doc2.pacf[0][0] = vec![0.2]; // disagrees with orders
        assert!(doc2.into_model().is_err());

        let mut doc3 = ModelFile::from_model(&model, None);
        doc3.switch_rho = vec![1.5, 0.0]; // out of domain
        assert!(doc3.into_model().is_err());
    }

    #[test]
    fn series_round_trip_with_regimes() {
        let s = Series {
            names: vec!["income".into(), "sales".into()],
            data: DMatrix::from_row_slice(3, 2, &[0.1, -0.25, 1e-8, 2.0, -3.5, 0.0]),
            regimes: Some(vec![1, 1, 2]),
        };
        let dir = std::env::temp_dir().join("mcrs-io-test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("series.csv");
        write_series(&path, &s).unwrap();
        let back = read_series(&path).unwrap();
        assert_eq!(back.names, s.names);
        assert_eq!(back.data, s.data);
        assert_eq!(back.regimes, s.regimes);
    }

    #[test]
    fn bare_regime_file_parses() {
        let s = parse_series("regime\n1\n1\n2\n").unwrap();
        assert!(s.names.is_empty());
        assert_eq!(s.data.nrows(), 3);
        assert_eq!(s.data.ncols(), 0);
        assert_eq!(s.regimes, Some(vec![1, 1, 2]));
    }

    #[test]
    fn series_parse_errors_identify_cells() {
        let bad_cell = "a,b\n1.0,2.0\n1.0,zzz\n";
        match parse_series(bad_cell) {
            Err(Error::Data(msg)) => {
                assert!(msg.contains("row 3"), "{msg}");
                assert!(msg.contains("'b'"), "{msg}");
            }
            other => panic!("expected data error, got {other:?}"),
        }
        let ragged = "a,b\n1.0\n";
        assert!(parse_series(ragged).is_err());
        let bad_regime = "a,regime\n1.0,0\n";
        assert!(parse_series(bad_regime).is_err());
    }

    #[test]
    fn diff_log_basics() {
        // constant column maps to zeros
        let c = DMatrix::from_row_slice(3, 1, &[2.5, 2.5, 2.5]);
        let out = diff_log(&c).unwrap();
        assert!(out.iter().all(|&v| v == 0.0));

        // exact logs of e-powers
        let e = std::f64::consts::E;
        let p = DMatrix::from_row_slice(3, 1, &[1.0, e, e * e]);
        let out = diff_log(&p).unwrap();
        assert!((out[(0, 0)] - 1.0).abs() < 1e-15);
        assert!((out[(1, 0)] - 1.0).abs() < 1e-15);

        // geometric series gives a constant log-ratio column
        let r: f64 = 1.07;
        let geo = DMatrix::from_fn(6, 1, |t, _| 3.0 * r.powi(t as i32));
        let out = diff_log(&geo).unwrap();
        for t in 0..5 {
            assert!((out[(t, 0)] - r.ln()).abs() < 1e-12);
        }

        // nonpositive values identify the offending cell
        let neg = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, -0.5, 1.0]);
        match diff_log(&neg) {
            Err(Error::Data(msg)) => assert!(msg.contains("row 2")),
            other => panic!("expected data error, got {other:?}"),
        }
    }
}
