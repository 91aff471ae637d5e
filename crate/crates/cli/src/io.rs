//! Tabular input and output. Every file is CSV with a header row.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{self, Write};
use std::path::Path;

use sitebal_core::model::validate_dataset;
use sitebal_core::{FeatureMap, RawRow, SiteDataset, SiteId};

use crate::error::CliError;

/// Columns every unit-level data file must carry.
pub const REQUIRED: [&str; 3] = ["site_id", "z", "y"];

/// Trial data with its covariate column names.
#[derive(Debug)]
pub struct Dataset {
    pub covariates: Vec<String>,
    pub sites: Vec<SiteDataset>,
}

fn open(path: &Path) -> Result<csv::Reader<File>, CliError> {
    csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

fn headers(reader: &mut csv::Reader<File>, path: &Path) -> Result<Vec<String>, CliError> {
    let h = reader
        .headers()
        .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
    Ok(h.iter().map(str::to_string).collect())
}

fn column(headers: &[String], name: &str, path: &Path) -> Result<usize, CliError> {
    headers
        .iter()
        .position(|h| h == name)
        .ok_or_else(|| CliError::Input(format!("{}: missing column `{name}`", path.display())))
}

fn records(
    reader: &mut csv::Reader<File>,
    path: &Path,
) -> Result<Vec<(u64, csv::StringRecord)>, CliError> {
    reader
        .records()
        .map(|r| {
            let r = r.map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
            let line = r.position().map_or(0, |p| p.line());
            Ok((line, r))
        })
        .collect()
}

fn number(
    record: &csv::StringRecord,
    idx: usize,
    name: &str,
    line: u64,
    path: &Path,
) -> Result<f64, CliError> {
    let raw = record.get(idx).unwrap_or("");
    if raw.is_empty() {
        return Err(CliError::Input(format!(
            "{} line {line}: missing value in column `{name}`",
            path.display()
        )));
    }
    raw.parse::<f64>().map_err(|_| {
        CliError::Input(format!(
            "{} line {line}: `{raw}` in column `{name}` is not a number",
            path.display()
        ))
    })
}

/// Reads `site_id,z,y` plus covariate columns. Every column other than the
/// three required ones is a covariate, in file order.
pub fn read_data(path: &Path) -> Result<Dataset, CliError> {
    let mut reader = open(path)?;
    let headers = headers(&mut reader, path)?;
    let [site, z, y] = REQUIRED.map(|name| column(&headers, name, path));
    let (site, z, y) = (site?, z?, y?);
    let cov: Vec<usize> = (0..headers.len())
        .filter(|i| ![site, z, y].contains(i))
        .collect();
    if cov.is_empty() {
        return Err(CliError::Input(format!(
            "{}: no covariate columns",
            path.display()
        )));
    }
    let mut rows = Vec::new();
    for (line, rec) in records(&mut reader, path)? {
        let id = rec.get(site).unwrap_or("");
        if id.is_empty() {
            return Err(CliError::Input(format!(
                "{} line {line}: missing value in column `site_id`",
                path.display()
            )));
        }
        let x = cov
            .iter()
            .map(|&i| number(&rec, i, &headers[i], line, path))
            .collect::<Result<_, _>>()?;
        rows.push(RawRow {
            site_id: SiteId(id.to_string()),
            z: number(&rec, z, "z", line, path)?,
            y: number(&rec, y, "y", line, path)?,
            x,
        });
    }
    let sites = validate_dataset(&rows, &BTreeMap::new())?;
    Ok(Dataset {
        covariates: cov.into_iter().map(|i| headers[i].clone()).collect(),
        sites,
    })
}

/// Reads a unit-level target sample. Columns are matched to the trial
/// covariates by name; any others are ignored.
pub fn read_target_sample(path: &Path, covariates: &[String]) -> Result<Vec<Vec<f64>>, CliError> {
    let mut reader = open(path)?;
    let headers = headers(&mut reader, path)?;
    let idx = covariates
        .iter()
        .map(|c| column(&headers, c, path))
        .collect::<Result<Vec<_>, _>>()?;
    let sample: Vec<Vec<f64>> = records(&mut reader, path)?
        .into_iter()
        .map(|(line, rec)| {
            idx.iter()
                .zip(covariates)
                .map(|(&i, c)| number(&rec, i, c, line, path))
                .collect()
        })
        .collect::<Result<_, _>>()?;
    if sample.is_empty() {
        return Err(CliError::Input(format!(
            "{}: target sample has no rows",
            path.display()
        )));
    }
    Ok(sample)
}

/// Name of a fitted feature in terms of the data's covariate names, e.g.
/// `age` or `age:female` for an interaction.
pub fn feature_label(internal: &str, covariates: &[String]) -> String {
    internal
        .split(':')
        .map(|tok| {
            tok.strip_prefix('x')
                .and_then(|k| k.parse::<usize>().ok())
                .and_then(|k| covariates.get(k.wrapping_sub(1)))
                .cloned()
                .unwrap_or_else(|| tok.to_string())
        })
        .collect::<Vec<_>>()
        .join(":")
}

/// Reads a moments file: a header of feature names and one row of target
/// means on the raw covariate scale. Returns the means in the fitted
/// feature space, in the map's column order.
pub fn read_moments(
    path: &Path,
    map: &FeatureMap,
    covariates: &[String],
) -> Result<Vec<f64>, CliError> {
    let mut reader = open(path)?;
    let headers = headers(&mut reader, path)?;
    let rows = records(&mut reader, path)?;
    let [(line, rec)] = rows.as_slice() else {
        return Err(CliError::Input(format!(
            "{}: expected exactly one row of means, found {}",
            path.display(),
            rows.len()
        )));
    };
    let names: Vec<String> = map
        .names()
        .iter()
        .map(|n| feature_label(n, covariates))
        .collect();
    let dropped: Vec<String> = map
        .dropped()
        .iter()
        .map(|n| feature_label(n, covariates))
        .collect();
    if let Some(extra) = headers
        .iter()
        .find(|h| !names.contains(h) && !dropped.contains(h))
    {
        return Err(CliError::Input(format!(
            "{}: unknown feature `{extra}`",
            path.display()
        )));
    }
    names
        .iter()
        .zip(map.scales())
        .map(|(name, s)| Ok(number(rec, column(&headers, name, path)?, name, *line, path)? / s))
        .collect()
}

/// Site effects read back from an estimates table.
#[derive(Debug, Clone, PartialEq)]
pub struct EffectsTable {
    pub site_ids: Vec<String>,
    pub estimates: Vec<f64>,
    pub std_errors: Vec<f64>,
}

/// Reads `site_id,estimate,std_error`. When the table has a `method`
/// column, only rows for `method` are kept.
pub fn read_effects(path: &Path, method: &str) -> Result<EffectsTable, CliError> {
    let mut reader = open(path)?;
    let headers = headers(&mut reader, path)?;
    let site = column(&headers, "site_id", path)?;
    let est = column(&headers, "estimate", path)?;
    let se = column(&headers, "std_error", path)?;
    let m = headers.iter().position(|h| h == "method");
    let mut t = EffectsTable {
        site_ids: Vec::new(),
        estimates: Vec::new(),
        std_errors: Vec::new(),
    };
    for (line, rec) in records(&mut reader, path)? {
        if m.is_some_and(|m| rec.get(m) != Some(method)) {
            continue;
        }
        t.site_ids.push(rec.get(site).unwrap_or("").to_string());
        t.estimates.push(number(&rec, est, "estimate", line, path)?);
        t.std_errors
            .push(number(&rec, se, "std_error", line, path)?);
    }
    if t.site_ids.is_empty() {
        return Err(CliError::Input(format!(
            "{}: no rows for method `{method}`",
            path.display()
        )));
    }
    Ok(t)
}

/// CSV writer to a file, or to stdout when `path` is `None`.
pub fn writer(path: Option<&Path>) -> Result<csv::Writer<Box<dyn Write>>, CliError> {
    let sink: Box<dyn Write> = match path {
        Some(p) => {
            Box::new(File::create(p).map_err(|e| CliError::Input(format!("{}: {e}", p.display())))?)
        }
        None => Box::new(io::stdout().lock()),
    };
    Ok(csv::Writer::from_writer(sink))
}

/// A value column: shortest round-trip float text, empty for `None`.
pub fn num(v: impl Into<Option<f64>>) -> String {
    v.into().map_or_else(String::new, |v| v.to_string())
}

pub fn write_row<W: Write>(w: &mut csv::Writer<W>, fields: &[String]) -> Result<(), CliError> {
    w.write_record(fields)
        .map_err(|e| CliError::Runtime(format!("write failed: {e}")))
}

pub fn finish<W: Write>(mut w: csv::Writer<W>) -> Result<(), CliError> {
    w.flush()
        .map_err(|e| CliError::Runtime(format!("write failed: {e}")))
}
