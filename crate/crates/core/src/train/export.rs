use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::model::Sequential;
use crate::error::{Error, Result};
use crate::pgm::{self, PgmEncoding};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// PGM grey level reserved for don't-care cells; learned values use `1..=255`.
pub const DNC_LEVEL: u16 = 0;
const MAXVAL: u16 = 255;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExportFormat {
    Pgm,
    Csv,
}

impl std::str::FromStr for ExportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pgm" => Ok(ExportFormat::Pgm),
            "csv" => Ok(ExportFormat::Csv),
            _ => Err(Error::Config(format!("unknown export format `{s}` (pgm or csv)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FilterEntry {
    pub file: String,
    pub param: String,
    pub out_channel: usize,
    pub in_channel: usize,
    /// Range of the non-DNC cells that was mapped onto the grey levels.
    pub min: f32,
    pub max: f32,
    /// Set when `min == max`; such filters are drawn at mid grey.
    pub degenerate: bool,
    /// `(row, col)` of don't-care cells.
    pub dnc_cells: Vec<(usize, usize)>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub layer: String,
    pub kind: String,
    pub format: ExportFormat,
    pub dnc_level: Option<u16>,
    pub maxval: Option<u16>,
    pub filters: Vec<FilterEntry>,
}

/// Grey level in `1..=255` for a value in `[min, max]`.
fn level(v: f64, min: f64, max: f64) -> u16 {
    if max > min {
        1 + ((v - min) / (max - min) * 254.0).round() as u16
    } else {
        128
    }
}

/// Writes every `k×k` slice of every parameter of `layer` into `out_dir`,
/// plus `manifest.json`.
pub fn export_filters<T: Scalar>(model: &Sequential<T>, layer: &str, out_dir: impl AsRef<Path>, format: ExportFormat) -> Result<Manifest> {
    let out_dir = out_dir.as_ref();
    let idx = model.find_layer(layer)?;
    let l = model.layer(idx);
    let params = l.params();
    let filters: Vec<_> = params.iter().filter(|(_, t)| t.ndim() == 4).collect();
    if filters.is_empty() {
        return Err(Error::Config(format!("layer `{layer}` ({}) has no filters to export", l.kind())));
    }
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let dnc = l.dnc_cells();
    let mut entries = Vec::new();
    for (pname, t) in filters {
        let [o_n, c_n, kh, kw] = *t.shape() else { unreachable!() };
        let d = t.data();
        for o in 0..o_n {
            for c in 0..c_n {
                let base = (o * c_n + c) * kh * kw;
                let cells = &d[base..base + kh * kw];
                let is_dnc = |i: usize| dnc.as_ref().is_some_and(|m| m[base + i]);
                let live: Vec<f64> = (0..kh * kw).filter(|&i| !is_dnc(i)).map(|i| cells[i].as_f64()).collect();
                let (min, max) = live.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
                let (min, max) = if live.is_empty() { (0.0, 0.0) } else { (min, max) };
                let file = format!("{pname}_o{o}_c{c}.{}", if format == ExportFormat::Pgm { "pgm" } else { "csv" });
                let path = out_dir.join(&file);
                match format {
                    ExportFormat::Pgm => {
                        let img = Tensor::from_fn(&[kh, kw], |i| {
                            let lv = if is_dnc(i) { DNC_LEVEL } else { level(cells[i].as_f64(), min, max) };
                            lv as f64 / MAXVAL as f64
                        });
                        pgm::write(&path, &img, MAXVAL, PgmEncoding::Binary)?;
                    }
                    ExportFormat::Csv => {
                        let mut s = String::new();
                        for row in cells.chunks(kw) {
                            let line: Vec<String> = row.iter().map(|v| format!("{}", v.as_f64() as f32)).collect();
                            let _ = writeln!(s, "{}", line.join(","));
                        }
                        fs::write(&path, s).map_err(|e| Error::io(&path, e))?;
                    }
                }
                entries.push(FilterEntry {
                    file,
                    param: pname.to_string(),
                    out_channel: o,
                    in_channel: c,
                    min: min as f32,
                    max: max as f32,
                    degenerate: !(max > min),
                    dnc_cells: (0..kh * kw).filter(|&i| is_dnc(i)).map(|i| (i / kw, i % kw)).collect(),
                });
            }
        }
    }
    let pgm_out = format == ExportFormat::Pgm;
    let manifest = Manifest {
        layer: layer.to_string(),
        kind: l.kind().to_string(),
        format,
        dnc_level: pgm_out.then_some(DNC_LEVEL),
        maxval: pgm_out.then_some(MAXVAL),
        filters: entries,
    };
    let path = out_dir.join("manifest.json");
    fs::write(&path, serde_json::to_vec_pretty(&manifest)?).map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}

/// Reads a filter written by the CSV exporter.
pub fn read_filter_csv(path: impl AsRef<Path>) -> Result<Tensor<f32>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut rows = Vec::new();
    for line in text.lines().filter(|l| !l.trim().is_empty()) {
        let row = line
            .split(',')
            .map(|t| t.trim().parse::<f32>().map_err(|_| Error::Format(format!("{}: bad value `{t}`", path.display()))))
            .collect::<Result<Vec<f32>>>()?;
        rows.push(row);
    }
    let w = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != w) {
        return Err(Error::Format(format!("{}: ragged rows", path.display())));
    }
    Tensor::new(vec![rows.len(), w], rows.concat())
}

/// Otsu's threshold: the cut maximizing between-class variance, searched
/// over midpoints of the sorted distinct values.
pub fn otsu_threshold(values: &[f64]) -> f64 {
    let mut v: Vec<f64> = values.iter().copied().filter(|x| x.is_finite()).collect();
    v.sort_by(f64::total_cmp);
    v.dedup();
    if v.len() < 2 {
        return v.first().copied().unwrap_or(0.0);
    }
    let n = values.len() as f64;
    let total: f64 = values.iter().sum();
    let mut best = (f64::NEG_INFINITY, v[0]);
    for w in v.windows(2) {
        let t = 0.5 * (w[0] + w[1]);
        let below: Vec<f64> = values.iter().copied().filter(|&x| x <= t).collect();
        let n0 = below.len() as f64;
        let s0: f64 = below.iter().sum();
        let n1 = n - n0;
        let (m0, m1) = (s0 / n0, (total - s0) / n1);
        let between = n0 * n1 * (m0 - m1) * (m0 - m1);
        if between > best.0 {
            best = (between, t);
        }
    }
    best.1
}

/// Intersection over union of two masks; two empty masks score 1.
pub fn iou(a: &[bool], b: &[bool]) -> f64 {
    let inter = a.iter().zip(b).filter(|(x, y)| **x && **y).count();
    let union = a.iter().zip(b).filter(|(x, y)| **x || **y).count();
    if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn otsu_splits_two_clusters() {
        let v = [0.1, 0.12, 0.09, 0.11, 0.9, 0.88, 0.92];
        let t = otsu_threshold(&v);
        assert!(t > 0.12 && t < 0.88, "{t}");
    }

    #[test]
    fn iou_counts() {
        assert_eq!(iou(&[true, true, false, false], &[true, false, true, false]), 1.0 / 3.0);
        assert_eq!(iou(&[false], &[false]), 1.0);
    }

    #[test]
    fn levels_span_band() {
        assert_eq!(level(0.0, 0.0, 1.0), 1);
        assert_eq!(level(1.0, 0.0, 1.0), 255);
        assert_eq!(level(3.0, 3.0, 3.0), 128);
    }
}
