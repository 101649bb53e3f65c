//! Gaze geometry and vector similarity primitives.
//!
//! Gaze directions live in camera coordinates as unit 3-vectors. Yaw/pitch
//! angles are only an ingestion format, converted with the convention in
//! [`yaw_pitch_to_vector`]:
//!
//! ```text
//! x = -cos(pitch) * sin(yaw)
//! y =  sin(pitch)
//! z = -cos(pitch) * cos(yaw)
//! ```
//!
//! so `(0, 0)` looks straight at the camera along `-z` and positive pitch
//! points up along `+y`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Unit gaze direction in camera coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GazeDirection([f64; 3]);

impl GazeDirection {
    /// Normalizes `v`; fails for zero or non-finite input.
    pub fn new(v: [f64; 3]) -> Result<Self> {
        let n = norm(&v);
        if !n.is_finite() || n == 0.0 {
            return Err(Error::domain(format!("gaze vector {v:?} has no direction")));
        }
        Ok(Self([v[0] / n, v[1] / n, v[2] / n]))
    }

    pub fn from_yaw_pitch(yaw: f64, pitch: f64) -> Result<Self> {
        yaw_pitch_to_vector(yaw, pitch)
    }

    pub fn as_array(&self) -> [f64; 3] {
        self.0
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn dot(&self, other: &GazeDirection) -> f64 {
        dot(&self.0, &other.0)
    }

    /// Inverse of [`yaw_pitch_to_vector`], returns `(yaw, pitch)`.
    pub fn to_yaw_pitch(&self) -> (f64, f64) {
        let [x, y, z] = self.0;
        (f64::atan2(-x, -z), y.clamp(-1.0, 1.0).asin())
    }
}

/// Embedding-space vector with finite entries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector(Vec<f64>);

impl FeatureVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::domain("feature vector is empty"));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::domain(format!("feature entry {i} is not finite")));
        }
        Ok(Self(values))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn norm(&self) -> f64 {
        norm(&self.0)
    }

    /// Unit-norm copy; fails on the zero vector.
    pub fn normalized(&self) -> Result<Self> {
        let n = self.norm();
        if n == 0.0 {
            return Err(Error::domain("cannot normalize a zero-norm feature"));
        }
        Ok(Self(self.0.iter().map(|v| v / n).collect()))
    }
}

impl AsRef<[f64]> for FeatureVector {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

/// Converts head-frame angles (radians) into a unit gaze vector.
pub fn yaw_pitch_to_vector(yaw: f64, pitch: f64) -> Result<GazeDirection> {
    use std::f64::consts::FRAC_PI_2;
    if !yaw.is_finite() || !(-FRAC_PI_2..=FRAC_PI_2).contains(&pitch) {
        return Err(Error::domain(format!(
            "pitch {pitch} outside [-pi/2, pi/2] or yaw {yaw} not finite"
        )));
    }
    let (sy, cy) = yaw.sin_cos();
    let (sp, cp) = pitch.sin_cos();
    GazeDirection::new([-cp * sy, sp, -cp * cy])
}

/// Angle between two gaze directions in degrees, in `[0, 180]`.
pub fn angular_error_deg(g_hat: &GazeDirection, g: &GazeDirection) -> f64 {
    g_hat.dot(g).clamp(-1.0, 1.0).acos().to_degrees()
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// `a . b / (|a| |b|)`.
///
/// Fails with a domain error naming the argument when either input has zero
/// norm, and with a shape error when lengths differ.
pub fn cosine_similarity(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::shape("cosine_similarity", a.len(), b.len()));
    }
    let na = norm(a);
    if na == 0.0 || !na.is_finite() {
        return Err(Error::domain("cosine_similarity: argument `a` has zero norm"));
    }
    let nb = norm(b);
    if nb == 0.0 || !nb.is_finite() {
        return Err(Error::domain("cosine_similarity: argument `b` has zero norm"));
    }
    Ok((dot(a, b) / (na * nb)).clamp(-1.0, 1.0))
}

/// Gradient of [`cosine_similarity`] with respect to `a` and `b`.
pub fn cosine_similarity_grad(a: &[f64], b: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    let c = cosine_similarity(a, b)?;
    let na = norm(a);
    let nb = norm(b);
    let ga = a
        .iter()
        .zip(b)
        .map(|(x, y)| y / (na * nb) - c * x / (na * na))
        .collect();
    let gb = a
        .iter()
        .zip(b)
        .map(|(x, y)| x / (na * nb) - c * y / (nb * nb))
        .collect();
    Ok((ga, gb))
}
