use std::fmt::Write as _;
use std::path::Path;

use crate::encoders::write_file;
use crate::error::{Error, Result};
use crate::geometry::{cosine_similarity, GazeDirection};
use crate::losses::enumerate_pairs;

use super::dataset::GazeDataset;
use super::model::GazeModel;

/// One row of a feature export.
#[derive(Debug, Clone, PartialEq)]
pub struct ExportRecord {
    pub id: String,
    pub gaze: [f64; 3],
    pub prediction: [f64; 3],
    pub f_re: Vec<f64>,
}

/// Writes `id,gx,gy,gz,px,py,pz,f_1..f_Dre` with a header row.
pub fn export_features(model: &GazeModel, dataset: &GazeDataset, path: &Path) -> Result<Vec<ExportRecord>> {
    dataset.expect_shape(model.config().image_shape)?;
    let images: Vec<_> = dataset.samples.iter().map(|s| &s.image).collect();
    let out = model.forward_all(&images, 64)?;
    let records: Vec<ExportRecord> = dataset
        .samples
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let p = out.g_hat.row(i);
            ExportRecord {
                id: s.id.clone(),
                gaze: s.gaze.as_array(),
                prediction: [p[0], p[1], p[2]],
                f_re: out.f_re.row(i).to_vec(),
            }
        })
        .collect();
    write_file(path, render_export(&records).as_bytes())?;
    Ok(records)
}

pub fn render_export(records: &[ExportRecord]) -> String {
    let dim = records.first().map_or(0, |r| r.f_re.len());
    let mut out = String::from("id,gx,gy,gz,px,py,pz");
    for k in 1..=dim {
        write!(out, ",f_{k}").expect("string write");
    }
    out.push('\n');
    for r in records {
        out.push_str(&r.id);
        for v in r.gaze.iter().chain(&r.prediction).chain(&r.f_re) {
            write!(out, ",{v}").expect("string write");
        }
        out.push('\n');
    }
    out
}

pub fn read_export(path: &Path) -> Result<Vec<ExportRecord>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let origin = path.display().to_string();
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.starts_with("id,gx,gy,gz,px,py,pz") => {}
        _ => return Err(Error::parse(&origin, 1, "missing export header")),
    }
    let mut out = Vec::new();
    for (i, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let mut fields = line.split(',');
        let id = fields.next().unwrap_or_default().to_string();
        let values = fields
            .map(str::parse::<f64>)
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::parse(&origin, i + 1, e.to_string()))?;
        if values.len() < 7 {
            return Err(Error::parse(&origin, i + 1, "row is shorter than the fixed columns"));
        }
        out.push(ExportRecord {
            id,
            gaze: [values[0], values[1], values[2]],
            prediction: [values[3], values[4], values[5]],
            f_re: values[6..].to_vec(),
        });
    }
    Ok(out)
}

/// Ranks with ties sharing their average rank (1-based).
pub fn average_ranks(xs: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..xs.len()).collect();
    idx.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut ranks = vec![0.0; xs.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && xs[idx[j + 1]] == xs[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    sxy / (sxx * syy).sqrt()
}

/// Spearman rank correlation.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(Error::domain("spearman needs two equal-length sequences of at least two values"));
    }
    let r = pearson(&average_ranks(x), &average_ranks(y));
    if r.is_nan() {
        return Err(Error::domain("spearman is undefined for a constant sequence"));
    }
    Ok(r)
}

/// Spearman correlation between `s^f = cos(f_re_i, f_re_j)` and
/// `s^g = g_i . g_j` over all pairs of records.
pub fn similarity_spearman(records: &[ExportRecord]) -> Result<f64> {
    let mut sf = Vec::new();
    let mut sg = Vec::new();
    for (i, j) in enumerate_pairs(records.len()) {
        sf.push(cosine_similarity(&records[i].f_re, &records[j].f_re)?);
        let gi = GazeDirection::new(records[i].gaze)?;
        let gj = GazeDirection::new(records[j].gaze)?;
        sg.push(gi.dot(&gj));
    }
    spearman(&sf, &sg)
}
