//! Report and field serialization.
//!
//! A field dump is a JSON header plus a sidecar of little-endian `f64`
//! interior values in interior order. The mask is stored run-length encoded.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::domain::{DomainGrid, Field, Shape};
use crate::error::{Error, Result};

pub const FIELD_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FieldHeader {
    pub schema_version: u32,
    pub dim: usize,
    pub shape: [usize; 3],
    pub spacing: f64,
    pub origin: [f64; 3],
    pub shape_tag: Shape,
    /// Run lengths of the mask in box order (x fastest), starting with `false`.
    pub mask_rle: Vec<usize>,
    pub n_interior: usize,
    pub dtype: String,
    pub values_file: String,
}

/// Writes `<stem>.json` and `<stem>.bin`; returns both paths.
pub fn write_field(stem: &Path, field: &Field) -> Result<(PathBuf, PathBuf)> {
    let json = stem.with_extension("json");
    let bin = stem.with_extension("bin");
    let g = &*field.grid;
    let header = FieldHeader {
        schema_version: FIELD_SCHEMA_VERSION,
        dim: g.dim,
        shape: g.shape,
        spacing: g.spacing,
        origin: g.origin,
        shape_tag: g.shape_tag.clone(),
        mask_rle: g.mask_rle(),
        n_interior: g.n_interior(),
        dtype: "f64le".into(),
        values_file: bin
            .file_name()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default(),
    };
    write_json(&json, &header)?;
    let mut bytes = Vec::with_capacity(8 * field.values.len());
    for v in &field.values {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(&bin, bytes)?;
    Ok((json, bin))
}

/// Loads a dump written by [`write_field`], rebuilding its grid.
pub fn read_field(json: &Path) -> Result<Field> {
    let header: FieldHeader = serde_json::from_slice(&fs::read(json)?)?;
    if header.schema_version != FIELD_SCHEMA_VERSION {
        return Err(Error::InvalidInput(format!(
            "unsupported field schema version {}",
            header.schema_version
        )));
    }
    if header.dtype != "f64le" {
        return Err(Error::InvalidInput(format!("unsupported dtype {}", header.dtype)));
    }
    let total: usize = header.shape.iter().product();
    let mut mask = Vec::with_capacity(total);
    let mut value = false;
    for &run in &header.mask_rle {
        mask.extend(std::iter::repeat_n(value, run));
        value = !value;
    }
    if mask.len() != total {
        return Err(Error::InvalidInput("mask run lengths do not cover the box".into()));
    }
    let grid = Arc::new(DomainGrid::from_mask(
        header.dim,
        header.shape,
        header.spacing,
        header.origin,
        mask,
        header.shape_tag,
    )?);
    let bin = json
        .parent()
        .map(|p| p.join(&header.values_file))
        .unwrap_or_else(|| PathBuf::from(&header.values_file));
    let bytes = fs::read(bin)?;
    if bytes.len() != 8 * header.n_interior || grid.n_interior() != header.n_interior {
        return Err(Error::InvalidInput("value file length does not match the mask".into()));
    }
    let values = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect();
    Field::new(&grid, values)
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    fs::write(path, s)?;
    Ok(())
}

/// Comma-separated table with a header row; values use the shortest
/// round-trip representation.
pub fn write_csv(path: &Path, header: &[&str], rows: &[Vec<f64>]) -> Result<()> {
    let mut out = Vec::new();
    writeln!(out, "{}", header.join(","))?;
    for r in rows {
        if r.len() != header.len() {
            return Err(Error::InvalidInput("CSV row width differs from header".into()));
        }
        let cells: Vec<String> = r.iter().map(|v| format!("{v:?}")).collect();
        writeln!(out, "{}", cells.join(","))?;
    }
    fs::write(path, out)?;
    Ok(())
}

/// One panel of a gnuplot script: `columns` are 1-based CSV column numbers.
#[derive(Debug, Clone)]
pub struct PlotPanel {
    pub title: String,
    pub csv: String,
    pub x: usize,
    pub y: usize,
    pub xlabel: String,
    pub ylabel: String,
}

/// A gnuplot script rendering each panel to `<output>.png` in a vertical
/// multiplot.
pub fn gnuplot_script(output: &str, panels: &[PlotPanel]) -> String {
    let mut s = String::new();
    s.push_str("set datafile separator ','\n");
    s.push_str("set key off\n");
    s.push_str(&format!(
        "set terminal pngcairo size 720,{}\nset output '{output}.png'\n",
        320 * panels.len().max(1)
    ));
    s.push_str(&format!("set multiplot layout {},1\n", panels.len().max(1)));
    for p in panels {
        s.push_str(&format!(
            "set title '{}'\nset xlabel '{}'\nset ylabel '{}'\nplot '{}' every ::1 using {}:{} with linespoints pt 7\n",
            p.title, p.xlabel, p.ylabel, p.csv, p.x, p.y
        ));
    }
    s.push_str("unset multiplot\n");
    s
}
