//! Dataset CSV ingestion and export.
//!
//! Schema: header `f0,...,f{d-1},label,domain`, one sample per row, decimal
//! floats, labels and domains as non-negative integers. Floats are written
//! with Rust's shortest round-trip formatting, so `load(save(ds))` restores
//! every value bit for bit and identical datasets serialize to identical
//! bytes.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use super::{Dataset, Sample};
use crate::error::{Error, Result};

/// Writes a dataset in the CSV schema above.
pub fn save_dataset(dataset: &Dataset, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let mut write = || -> std::io::Result<()> {
        for j in 0..dataset.feature_dim() {
            write!(w, "f{j},")?;
        }
        writeln!(w, "label,domain")?;
        for s in dataset.samples() {
            for v in &s.features {
                write!(w, "{v},")?;
            }
            writeln!(w, "{},{}", s.label, s.domain)?;
        }
        w.flush()
    };
    write().map_err(|e| Error::io(path, e))
}

/// Loads a dataset, inferring `feature_dim` from the header and the class
/// and domain counts from the row maxima. Row order is preserved.
pub fn load_dataset(path: &Path) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| match e.kind() {
            csv::ErrorKind::Io(_) => {
                Error::io(path, std::io::Error::other(e.to_string()))
            }
            _ => Error::parse(path, 1, e.to_string()),
        })?;

    let headers = reader
        .headers()
        .map_err(|e| Error::parse(path, 1, e.to_string()))?
        .clone();
    let n_cols = headers.len();
    if n_cols < 3 {
        return Err(Error::parse(
            path,
            1,
            format!("expected at least 3 columns (f0,label,domain), found {n_cols}"),
        ));
    }
    let feature_dim = n_cols - 2;
    for (j, name) in headers.iter().take(feature_dim).enumerate() {
        if name != format!("f{j}") {
            return Err(Error::parse(
                path,
                1,
                format!("expected feature column `f{j}`, found `{name}`"),
            ));
        }
    }
    if &headers[feature_dim] != "label" || &headers[feature_dim + 1] != "domain" {
        return Err(Error::parse(
            path,
            1,
            "last two columns must be `label,domain`".to_string(),
        ));
    }

    let mut samples = Vec::new();
    let mut max_label = 0usize;
    let mut max_domain = 0usize;
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map(|p| p.line()).unwrap_or(0);
            Error::parse(path, line, e.to_string())
        })?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        if record.len() != n_cols {
            return Err(Error::parse(
                path,
                line,
                format!("expected {n_cols} fields, found {}", record.len()),
            ));
        }
        let mut features = Vec::with_capacity(feature_dim);
        for j in 0..feature_dim {
            let raw = &record[j];
            let v: f64 = raw.trim().parse().map_err(|_| {
                Error::parse(path, line, format!("invalid float `{raw}` in column f{j}"))
            })?;
            if !v.is_finite() {
                return Err(Error::parse(
                    path,
                    line,
                    format!("non-finite feature `{raw}` in column f{j}"),
                ));
            }
            features.push(v);
        }
        let label: usize = record[feature_dim].trim().parse().map_err(|_| {
            Error::parse(
                path,
                line,
                format!("invalid label `{}`", &record[feature_dim]),
            )
        })?;
        let domain: usize = record[feature_dim + 1].trim().parse().map_err(|_| {
            Error::parse(
                path,
                line,
                format!("invalid domain `{}`", &record[feature_dim + 1]),
            )
        })?;
        max_label = max_label.max(label);
        max_domain = max_domain.max(domain);
        samples.push(Sample {
            features,
            label,
            domain,
        });
    }
    if samples.is_empty() {
        return Err(Error::parse(path, 1, "file contains no samples".to_string()));
    }
    Dataset::new(samples, max_label + 1, max_domain + 1, feature_dim)
}
