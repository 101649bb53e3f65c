//! Synthetic gaze data with a planted signal.
//!
//! Channel 0 holds a Gaussian blob on a black background; its center moves
//! linearly with yaw (horizontally) and pitch (vertically, up for positive
//! pitch). Channels 1 and 2 hold a constant background level plus a
//! per-subject nuisance pattern. When a bank and a mock vision encoder are supplied the
//! pattern is the back-projection of the subject's planted bank rows, so the
//! encoder sees it as a component along those rows.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::encoders::{FeatureBank, MockVisionEncoder, VisionEncoder};
use crate::error::{Error, Result};
use crate::geometry::GazeDirection;
use crate::imaging::Image;
use crate::rng::SeededRng;

use super::dataset::{GazeDataset, GazeSample};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticGazeSpec {
    pub n: usize,
    pub subjects: usize,
    pub seed: u64,
    /// Standard deviation of per-pixel Gaussian noise.
    pub noise: f64,
    pub height: usize,
    pub width: usize,
    pub max_yaw: f64,
    pub max_pitch: f64,
    /// Blob displacement at the extreme angles, as a fraction of the width.
    pub max_offset: f64,
    pub blob_sigma: f64,
    /// Constant level of channels 1 and 2 before the nuisance is added.
    pub background: f64,
    /// Planted factors per subject.
    pub factors_per_subject: usize,
    /// Peak absolute value of the nuisance pattern.
    pub nuisance_amplitude: f64,
}

impl Default for SyntheticGazeSpec {
    fn default() -> Self {
        Self {
            n: 500,
            subjects: 2,
            seed: 0,
            noise: 0.02,
            height: 32,
            width: 32,
            max_yaw: 0.6,
            max_pitch: 0.4,
            max_offset: 0.3,
            blob_sigma: 2.0,
            background: 0.0,
            factors_per_subject: 3,
            nuisance_amplitude: 1.0,
        }
    }
}

impl SyntheticGazeSpec {
    fn center(&self, yaw: f64, pitch: f64) -> (f64, f64) {
        let reach = self.max_offset * self.width as f64;
        let cx = (self.width as f64 - 1.0) / 2.0 + reach * yaw / self.max_yaw;
        let cy = (self.height as f64 - 1.0) / 2.0 - reach * pitch / self.max_pitch;
        (cx, cy)
    }

    /// Inverse of the blob placement.
    pub fn yaw_pitch_from_center(&self, cx: f64, cy: f64) -> (f64, f64) {
        let reach = self.max_offset * self.width as f64;
        let yaw = (cx - (self.width as f64 - 1.0) / 2.0) / reach * self.max_yaw;
        let pitch = -(cy - (self.height as f64 - 1.0) / 2.0) / reach * self.max_pitch;
        (yaw, pitch)
    }

    fn validate(&self) -> Result<()> {
        if self.n == 0 || self.subjects == 0 || self.height < 4 || self.width < 4 {
            return Err(Error::Config("synthetic spec needs n, subjects >= 1 and images of at least 4x4".into()));
        }
        if !(self.max_yaw > 0.0 && self.max_pitch > 0.0 && self.max_pitch < std::f64::consts::FRAC_PI_2) {
            return Err(Error::Config("synthetic angle ranges must be positive and pitch below pi/2".into()));
        }
        if !(self.noise >= 0.0 && self.blob_sigma > 0.0) {
            return Err(Error::Config("noise must be nonnegative and blob sigma positive".into()));
        }
        Ok(())
    }
}

/// Bank rows and the encoder used to plant nuisance patterns.
#[derive(Clone, Copy)]
pub struct NuisancePlanter<'a> {
    pub bank: &'a FeatureBank,
    pub vision: &'a MockVisionEncoder,
}

#[derive(Debug, Clone)]
pub struct SyntheticGaze {
    pub dataset: GazeDataset,
    pub spec: SyntheticGazeSpec,
    /// Planted factor ids per subject.
    pub planted: BTreeMap<String, Vec<usize>>,
    /// Pixel-space nuisance pattern per subject (`H * W * 3`, HWC).
    pub patterns: BTreeMap<String, Vec<f64>>,
}

pub fn subject_id(s: usize) -> String {
    format!("subject{s:02}")
}

/// `n` samples from `subjects` subjects with default geometry.
pub fn make_synthetic_dataset(n: usize, seed: u64, noise: f64) -> Result<GazeDataset> {
    let spec = SyntheticGazeSpec {
        n,
        seed,
        noise,
        ..SyntheticGazeSpec::default()
    };
    Ok(make_synthetic(&spec, None)?.dataset)
}

pub fn make_synthetic(spec: &SyntheticGazeSpec, planter: Option<NuisancePlanter<'_>>) -> Result<SyntheticGaze> {
    spec.validate()?;
    let (h, w) = (spec.height, spec.width);
    let pixels = h * w * 3;
    if let Some(p) = planter {
        if p.vision.input_shape() != (h, w, 3) {
            return Err(Error::Config(format!(
                "vision encoder expects {:?}, synthetic images are {h}x{w}x3",
                p.vision.input_shape()
            )));
        }
        if p.vision.dim() != p.bank.dim() {
            return Err(Error::shape("bank width", p.vision.dim(), p.bank.dim()));
        }
        if spec.factors_per_subject > p.bank.len() {
            return Err(Error::Config("more planted factors per subject than bank rows".into()));
        }
    }
    let mut rng = SeededRng::derive(spec.seed, "synthetic-gaze");
    let mut planted = BTreeMap::new();
    let mut patterns = BTreeMap::new();
    for s in 0..spec.subjects {
        let id = subject_id(s);
        let mut raw = vec![0.0; pixels];
        let mut ids = Vec::new();
        match planter {
            Some(p) => {
                let mut rows: Vec<usize> = (0..p.bank.len()).collect();
                rng.shuffle(&mut rows);
                for &k in rows.iter().take(spec.factors_per_subject) {
                    ids.push(p.bank.factor_ids()[k]);
                    for (r, v) in raw.iter_mut().zip(p.vision.back_project(p.bank.row(k))) {
                        *r += v;
                    }
                }
            }
            None => {
                for r in raw.iter_mut() {
                    *r = rng.normal();
                }
            }
        }
        // Channel 0 carries only the gaze blob.
        for (i, r) in raw.iter_mut().enumerate() {
            if i % 3 == 0 {
                *r = 0.0;
            }
        }
        let peak = raw.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if peak > 0.0 {
            for r in raw.iter_mut() {
                *r *= spec.nuisance_amplitude / peak;
            }
        }
        ids.sort_unstable();
        planted.insert(id.clone(), ids);
        patterns.insert(id, raw);
    }
    let mut samples = Vec::with_capacity(spec.n);
    for i in 0..spec.n {
        let subject = subject_id(rng.index(spec.subjects));
        let yaw = rng.uniform_range(-spec.max_yaw, spec.max_yaw);
        let pitch = rng.uniform_range(-spec.max_pitch, spec.max_pitch);
        let (cx, cy) = spec.center(yaw, pitch);
        let pattern = &patterns[&subject];
        let mut data = vec![0.0; pixels];
        let inv = 1.0 / (2.0 * spec.blob_sigma * spec.blob_sigma);
        for y in 0..h {
            for x in 0..w {
                let base = (y * w + x) * 3;
                let d2 = (x as f64 - cx).powi(2) + (y as f64 - cy).powi(2);
                data[base] = (-d2 * inv).exp();
                data[base + 1] = spec.background + pattern[base + 1];
                data[base + 2] = spec.background + pattern[base + 2];
            }
        }
        if spec.noise > 0.0 {
            for v in data.iter_mut() {
                *v += spec.noise * rng.normal();
            }
        }
        for v in data.iter_mut() {
            *v = v.clamp(0.0, 1.0);
        }
        samples.push(GazeSample {
            id: format!("syn{i:05}"),
            image: Image::new(h, w, 3, data)?,
            gaze: GazeDirection::from_yaw_pitch(yaw, pitch)?,
            subject,
            head_pose: None,
        });
    }
    Ok(SyntheticGaze {
        dataset: GazeDataset::new("synthetic", samples),
        spec: *spec,
        planted,
        patterns,
    })
}

/// Intensity centroid of channel 0, `(x, y)` in pixel coordinates.
pub fn blob_centroid(image: &Image) -> (f64, f64) {
    let (h, w, _) = image.shape();
    let (mut sx, mut sy, mut total) = (0.0, 0.0, 0.0);
    for y in 0..h {
        for x in 0..w {
            let v = image.get(y, x, 0);
            sx += v * x as f64;
            sy += v * y as f64;
            total += v;
        }
    }
    (sx / total, sy / total)
}
