//! Two-dimensional views of exported features.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::geometry::GazeDirection;

use super::export::ExportRecord;

const POWER_ITERATIONS: usize = 200;

/// Projects rows onto their top two principal components.
///
/// Components come from power iteration with deflation on the covariance
/// matrix, started from a fixed vector, so the output is deterministic.
/// Each component's sign is fixed so its largest-magnitude entry is
/// positive.
pub fn pca_2d(rows: &[Vec<f64>]) -> Result<Vec<[f64; 2]>> {
    let n = rows.len();
    if n == 0 {
        return Err(Error::domain("nothing to project"));
    }
    let d = rows[0].len();
    if rows.iter().any(|r| r.len() != d) {
        return Err(Error::domain("rows differ in width"));
    }
    let mean: Vec<f64> = (0..d).map(|k| rows.iter().map(|r| r[k]).sum::<f64>() / n as f64).collect();
    let centered: Vec<Vec<f64>> = rows
        .iter()
        .map(|r| r.iter().zip(&mean).map(|(x, m)| x - m).collect())
        .collect();
    let mut cov = vec![0.0; d * d];
    for r in &centered {
        for i in 0..d {
            for j in 0..d {
                cov[i * d + j] += r[i] * r[j];
            }
        }
    }
    let mut components: Vec<Vec<f64>> = Vec::new();
    for _ in 0..2.min(d) {
        let mut v: Vec<f64> = (0..d).map(|k| 1.0 + k as f64 / d as f64).collect();
        for _ in 0..POWER_ITERATIONS {
            let mut w: Vec<f64> = (0..d).map(|i| (0..d).map(|j| cov[i * d + j] * v[j]).sum()).collect();
            for c in &components {
                let p: f64 = w.iter().zip(c).map(|(a, b)| a * b).sum();
                w.iter_mut().zip(c).for_each(|(a, b)| *a -= p * b);
            }
            let norm = w.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm == 0.0 {
                break;
            }
            v = w.into_iter().map(|x| x / norm).collect();
        }
        let peak = v.iter().copied().fold(0.0f64, |m, x| if x.abs() > m.abs() { x } else { m });
        if peak < 0.0 {
            v.iter_mut().for_each(|x| *x = -*x);
        }
        components.push(v);
    }
    Ok(centered
        .iter()
        .map(|r| {
            let mut p = [0.0; 2];
            for (slot, c) in p.iter_mut().zip(&components) {
                *slot = r.iter().zip(c).map(|(a, b)| a * b).sum();
            }
            p
        })
        .collect())
}

/// Projected points with the gaze yaw of each record.
#[derive(Debug, Clone, PartialEq)]
pub struct ScatterPoint {
    pub id: String,
    pub x: f64,
    pub y: f64,
    pub yaw: f64,
}

pub fn scatter_points(records: &[ExportRecord]) -> Result<Vec<ScatterPoint>> {
    let rows: Vec<Vec<f64>> = records.iter().map(|r| r.f_re.clone()).collect();
    let xy = pca_2d(&rows)?;
    records
        .iter()
        .zip(xy)
        .map(|(r, [x, y])| {
            let (yaw, _) = GazeDirection::new(r.gaze)?.to_yaw_pitch();
            Ok(ScatterPoint { id: r.id.clone(), x, y, yaw })
        })
        .collect()
}

pub fn scatter_csv(points: &[ScatterPoint]) -> String {
    let mut out = String::from("id,x,y,yaw\n");
    for p in points {
        writeln!(out, "{},{},{},{}", p.id, p.x, p.y, p.yaw).expect("string write");
    }
    out
}

/// Blue (most negative yaw) to red (most positive).
fn yaw_color(t: f64) -> String {
    let t = t.clamp(0.0, 1.0);
    let r = (40.0 + 215.0 * t).round() as u8;
    let b = (255.0 - 215.0 * t).round() as u8;
    let g = (60.0 + 80.0 * (1.0 - (2.0 * t - 1.0).abs())).round() as u8;
    format!("#{r:02x}{g:02x}{b:02x}")
}

/// A standalone SVG scatter plot colored by yaw.
pub fn scatter_svg(points: &[ScatterPoint]) -> String {
    const SIZE: f64 = 480.0;
    const PAD: f64 = 24.0;
    let span = |f: fn(&ScatterPoint) -> f64| {
        let lo = points.iter().map(f).fold(f64::INFINITY, f64::min);
        let hi = points.iter().map(f).fold(f64::NEG_INFINITY, f64::max);
        (lo, if hi > lo { hi - lo } else { 1.0 })
    };
    let (x0, xs) = span(|p| p.x);
    let (y0, ys) = span(|p| p.y);
    let (c0, cs) = span(|p| p.yaw);
    let mut out = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{SIZE}\" height=\"{SIZE}\" viewBox=\"0 0 {SIZE} {SIZE}\">\n\
         <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
    );
    for p in points {
        let cx = PAD + (p.x - x0) / xs * (SIZE - 2.0 * PAD);
        let cy = SIZE - PAD - (p.y - y0) / ys * (SIZE - 2.0 * PAD);
        writeln!(
            out,
            "<circle cx=\"{cx:.2}\" cy=\"{cy:.2}\" r=\"3\" fill=\"{}\"><title>{}</title></circle>",
            yaw_color((p.yaw - c0) / cs),
            p.id
        )
        .expect("string write");
    }
    out.push_str("</svg>\n");
    out
}
