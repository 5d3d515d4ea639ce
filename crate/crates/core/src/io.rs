//! CSV ingestion with predictor scaling, and surface file round trips.

use std::collections::BTreeSet;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::estimator::FitResult;
use crate::grid::Grid;

/// `%.17g`-style rendering: 17 significant digits, trailing zeros trimmed.
pub fn format_float(v: f64) -> String {
    if v.is_nan() {
        return "NaN".into();
    }
    if v.is_infinite() {
        return if v > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if v == 0.0 {
        return "0".into();
    }
    let sci = format!("{:.16e}", v);
    let (mantissa, exp) = sci.split_once('e').expect("scientific format");
    let exp: i32 = exp.parse().expect("exponent");
    if (-5..17).contains(&exp) {
        let decimals = (16 - exp).max(0) as usize;
        let fixed = format!("{:.*}", decimals, v);
        trim_zeros(&fixed).to_string()
    } else {
        format!("{}e{}", trim_zeros(mantissa), exp)
    }
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

/// Affine map of one predictor onto `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnScale {
    pub name: String,
    pub min: f64,
    pub max: f64,
}

impl ColumnScale {
    pub fn scale(&self, v: f64) -> f64 {
        ((v - self.min) / (self.max - self.min)).clamp(0.0, 1.0)
    }

    pub fn unscale(&self, u: f64) -> f64 {
        self.min + u * (self.max - self.min)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingRecord {
    pub columns: Vec<ColumnScale>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct IngestOptions {
    pub log_response: bool,
    /// 1-based data-row numbers (header excluded) removed before scaling.
    pub exclude_rows: Vec<usize>,
    /// Raise the dimension cap above the default.
    pub max_dim: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Ingested {
    pub dataset: Dataset,
    pub scaling: ScalingRecord,
    pub response: String,
    /// Rows dropped for missing values in the used columns.
    pub dropped_missing: usize,
    /// Rows removed by the exclusion list.
    pub excluded: usize,
    /// Original 1-based row numbers of the kept rows.
    pub kept_rows: Vec<usize>,
}

fn parse_cell(s: &str) -> Option<f64> {
    let t = s.trim();
    if t.is_empty() || t.eq_ignore_ascii_case("na") || t.eq_ignore_ascii_case("nan") || t == "." {
        return None;
    }
    t.parse::<f64>().ok().filter(|v| v.is_finite())
}

pub fn ingest_csv(path: &Path, response: &str, predictors: &[String], opts: &IngestOptions) -> Result<Ingested> {
    let file = std::fs::File::open(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    ingest_reader(file, response, predictors, opts)
}

pub fn ingest_reader<R: Read>(reader: R, response: &str, predictors: &[String], opts: &IngestOptions) -> Result<Ingested> {
    if predictors.is_empty() {
        return Err(Error::InvalidInput("no predictor columns given".into()));
    }
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let find = |name: &str| {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| Error::InvalidInput(format!("column {name:?} not found")))
    };
    let y_col = find(response)?;
    let x_cols = predictors.iter().map(|p| find(p)).collect::<Result<Vec<_>>>()?;
    let exclude: BTreeSet<usize> = opts.exclude_rows.iter().copied().collect();
    let mut rows: Vec<(usize, Vec<f64>, f64)> = Vec::new();
    let (mut dropped, mut excluded) = (0, 0);
    for (idx, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let row_no = idx + 1;
        if exclude.contains(&row_no) {
            excluded += 1;
            continue;
        }
        let y = rec.get(y_col).and_then(parse_cell);
        let x: Option<Vec<f64>> = x_cols.iter().map(|&c| rec.get(c).and_then(parse_cell)).collect();
        match (x, y) {
            (Some(x), Some(y)) => rows.push((row_no, x, y)),
            _ => dropped += 1,
        }
    }
    if rows.is_empty() {
        return Err(Error::EmptyData);
    }
    let d = predictors.len();
    let mut columns = Vec::with_capacity(d);
    for (k, name) in predictors.iter().enumerate() {
        let (min, max) = rows
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), r| (a.min(r.1[k]), b.max(r.1[k])));
        if !(max > min) {
            return Err(Error::InvalidInput(format!("predictor {name:?} is constant")));
        }
        columns.push(ColumnScale {
            name: name.clone(),
            min,
            max,
        });
    }
    let mut x = Vec::with_capacity(rows.len() * d);
    let mut y = Vec::with_capacity(rows.len());
    for (_, xr, yr) in &rows {
        for (k, v) in xr.iter().enumerate() {
            x.push(columns[k].scale(*v));
        }
        if opts.log_response {
            if *yr <= 0.0 {
                return Err(Error::InvalidInput(format!("log of non-positive response {yr}")));
            }
            y.push(yr.ln());
        } else {
            y.push(*yr);
        }
    }
    let dataset = Dataset::with_max_dim(x, d, y, opts.max_dim.unwrap_or(crate::dataset::DEFAULT_MAX_DIM))?;
    Ok(Ingested {
        dataset,
        scaling: ScalingRecord { columns },
        response: response.to_string(),
        dropped_missing: dropped,
        excluded,
        kept_rows: rows.iter().map(|r| r.0).collect(),
    })
}

/// Grid surface with header `x1..xd,intercept,slope1..sloped,additive,nonadditive`.
pub fn write_surface_csv<W: Write>(result: &FitResult, out: W) -> Result<()> {
    let grid = result.grid();
    let d = grid.dim();
    let mut w = csv::Writer::from_writer(out);
    let mut header: Vec<String> = (1..=d).map(|k| format!("x{k}")).collect();
    header.push("intercept".into());
    header.extend((1..=d).map(|k| format!("slope{k}")));
    header.push("additive".into());
    header.push("nonadditive".into());
    w.write_record(&header)?;
    for j in 0..grid.len() {
        let mut row: Vec<String> = grid.node(j).into_iter().map(format_float).collect();
        row.extend(result.beta.node(j).iter().map(|&v| format_float(v)));
        row.push(format_float(result.additive_part.node(j)[0]));
        row.push(format_float(result.nonadditive_part.node(j)[0]));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads the grid and intercept column of a surface file written by
/// [`write_surface_csv`] (or any CSV with `x1..xd` and `intercept`
/// columns in row-major node order).
pub fn read_surface_csv<R: Read>(input: R) -> Result<(Grid, Vec<f64>)> {
    let mut rdr = csv::Reader::from_reader(input);
    let headers = rdr.headers()?.clone();
    let d = headers.iter().filter(|h| h.starts_with('x') && h[1..].parse::<usize>().is_ok()).count();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Parse(format!("surface file lacks column {name:?}")))
    };
    let x_cols = (1..=d).map(|k| col(&format!("x{k}"))).collect::<Result<Vec<_>>>()?;
    let v_col = col("intercept")?;
    let mut coords: Vec<Vec<f64>> = Vec::new();
    let mut values = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let parse = |c: usize| {
            rec.get(c)
                .and_then(|s| s.trim().parse::<f64>().ok())
                .ok_or_else(|| Error::Parse(format!("bad number in column {c}")))
        };
        coords.push(x_cols.iter().map(|&c| parse(c)).collect::<Result<_>>()?);
        values.push(parse(v_col)?);
    }
    if d == 0 || values.is_empty() {
        return Err(Error::Parse("surface file is empty".into()));
    }
    let sizes: Vec<usize> = (0..d)
        .map(|k| {
            let mut u: Vec<f64> = coords.iter().map(|c| c[k]).collect();
            u.sort_by(f64::total_cmp);
            u.dedup();
            u.len()
        })
        .collect();
    let grid = Grid::new(&sizes)?;
    if grid.len() != values.len() {
        return Err(Error::Parse("surface rows do not form a full product grid".into()));
    }
    for (j, c) in coords.iter().enumerate() {
        let node = grid.node(j);
        if node.iter().zip(c).any(|(a, b)| (a - b).abs() > 1e-9) {
            return Err(Error::Parse(format!("row {} is not in row-major node order", j + 1)));
        }
    }
    Ok((grid, values))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn float_format_round_trips() {
        for v in [0.1, 1.0 / 3.0, 2.0, -7.25e-9, 1e20, 123456.789, f64::MIN_POSITIVE, 0.0, -0.5] {
            let s = format_float(v);
            assert_eq!(s.parse::<f64>().unwrap(), v, "{s}");
        }
        assert_eq!(format_float(2.0), "2");
        assert_eq!(format_float(0.5), "0.5");
    }

    const TOY: &str = "y,a,b\n1,2,10\n2,4,20\n3,6,15\n";

    #[test]
    fn scaling_endpoints() {
        let ing = ingest_reader(TOY.as_bytes(), "y", &["a".into(), "b".into()], &IngestOptions::default()).unwrap();
        assert_eq!(ing.dataset.column(0), vec![0.0, 0.5, 1.0]);
        assert_eq!(ing.scaling.columns[0].min, 2.0);
        assert_eq!(ing.scaling.columns[0].max, 6.0);
        for (k, raw) in [[2.0, 4.0, 6.0], [10.0, 20.0, 15.0]].iter().enumerate() {
            for (u, r) in ing.dataset.column(k).iter().zip(raw) {
                assert!((ing.scaling.columns[k].unscale(*u) - r).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn exclusion_and_missing() {
        let opts = IngestOptions {
            exclude_rows: vec![2],
            ..Default::default()
        };
        let ing = ingest_reader(TOY.as_bytes(), "y", &["a".into()], &opts).unwrap();
        assert_eq!(ing.dataset.n(), 2);
        assert_eq!(ing.excluded, 1);
        assert_eq!(ing.kept_rows, vec![1, 3]);
        let text = "y,a\n1,2\nNA,3\n3,\n4,5\n";
        let ing = ingest_reader(text.as_bytes(), "y", &["a".into()], &IngestOptions::default()).unwrap();
        assert_eq!(ing.dataset.n(), 2);
        assert_eq!(ing.dropped_missing, 2);
    }

    #[test]
    fn ingest_errors() {
        let none = IngestOptions::default();
        assert!(ingest_reader(TOY.as_bytes(), "z", &["a".into()], &none).is_err());
        assert!(ingest_reader("y,a\n1,2\n2,2\n".as_bytes(), "y", &["a".into()], &none).is_err());
        assert!(matches!(
            ingest_reader("y,a\nNA,1\n".as_bytes(), "y", &["a".into()], &none),
            Err(Error::EmptyData)
        ));
        let log = IngestOptions {
            log_response: true,
            ..Default::default()
        };
        assert!(ingest_reader("y,a\n0,1\n2,2\n".as_bytes(), "y", &["a".into()], &log).is_err());
        let ing = ingest_reader(TOY.as_bytes(), "y", &["a".into()], &log).unwrap();
        assert!((ing.dataset.y()[1] - 2f64.ln()).abs() < 1e-15);
    }
}
