use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::encoders::{FeatureBank, VisionEncoder};
use crate::error::{Error, Result};
use crate::geometry::{FeatureVector, GazeDirection};
use crate::imaging::Image;

/// One labelled face image.
#[derive(Debug, Clone, PartialEq)]
pub struct GazeSample {
    pub id: String,
    pub image: Image,
    pub gaze: GazeDirection,
    pub subject: String,
    /// `(yaw, pitch)` of the head in radians, when known.
    pub head_pose: Option<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GazeDataset {
    pub name: String,
    pub samples: Vec<GazeSample>,
}

impl GazeDataset {
    pub fn new(name: impl Into<String>, samples: Vec<GazeSample>) -> Self {
        Self {
            name: name.into(),
            samples,
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn labels(&self) -> Vec<GazeDirection> {
        self.samples.iter().map(|s| s.gaze).collect()
    }

    pub fn subjects(&self) -> Vec<String> {
        let mut out: Vec<String> = self.samples.iter().map(|s| s.subject.clone()).collect();
        out.sort();
        out.dedup();
        out
    }

    /// Fails unless every image has shape `[H, W, C]`.
    pub fn expect_shape(&self, shape: [usize; 3]) -> Result<()> {
        for s in &self.samples {
            s.image
                .expect_shape((shape[0], shape[1], shape[2]))
                .map_err(|e| Error::Config(format!("sample {}: {e}", s.id)))?;
        }
        Ok(())
    }

    /// Reads a manifest with header `image,yaw,pitch,subject[,head_yaw,head_pitch]`.
    /// Image paths are relative to the manifest's directory.
    pub fn load_manifest(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let origin = path.display().to_string();
        let base = path.parent().unwrap_or(Path::new("."));
        let mut samples = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') || line.starts_with("image,") {
                continue;
            }
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            if fields.len() != 4 && fields.len() != 6 {
                return Err(Error::parse(&origin, i + 1, format!("expected 4 or 6 fields, found {}", fields.len())));
            }
            let num = |k: usize| -> Result<f64> {
                fields[k]
                    .parse::<f64>()
                    .map_err(|_| Error::parse(&origin, i + 1, format!("invalid number `{}`", fields[k])))
            };
            let gaze = GazeDirection::from_yaw_pitch(num(1)?, num(2)?).map_err(|e| Error::parse(&origin, i + 1, e.to_string()))?;
            let head_pose = if fields.len() == 6 { Some((num(4)?, num(5)?)) } else { None };
            let image_path = base.join(fields[0]);
            let image = Image::load(&image_path)?;
            let id = Path::new(fields[0])
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| fields[0].to_string());
            samples.push(GazeSample {
                id,
                image,
                gaze,
                subject: fields[3].to_string(),
                head_pose,
            });
        }
        if samples.is_empty() {
            return Err(Error::Config(format!("{origin}: manifest lists no samples")));
        }
        let name = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "dataset".into());
        Ok(Self::new(name, samples))
    }

    /// Writes every image as `<dir>/images/<id>.png` and a manifest at
    /// `<dir>/manifest.csv`. Images are quantized to 8 bits on the way.
    pub fn save(&self, dir: &Path) -> Result<std::path::PathBuf> {
        let images = dir.join("images");
        std::fs::create_dir_all(&images).map_err(|e| Error::io(&images, e))?;
        let mut manifest = String::from("image,yaw,pitch,subject,head_yaw,head_pitch\n");
        for s in &self.samples {
            let rel = format!("images/{}.png", s.id);
            s.image.save_png(&dir.join(&rel))?;
            let (yaw, pitch) = s.gaze.to_yaw_pitch();
            let (hy, hp) = s.head_pose.unwrap_or((0.0, 0.0));
            writeln!(manifest, "{rel},{yaw},{pitch},{},{hy},{hp}", s.subject).expect("string write");
        }
        let path = dir.join("manifest.csv");
        std::fs::write(&path, manifest).map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }
}

/// Frozen-encoder targets `f_v`, one per sample.
pub fn compute_targets(dataset: &GazeDataset, encoder: &dyn VisionEncoder) -> Result<Vec<FeatureVector>> {
    dataset.samples.iter().map(|s| encoder.encode_image(&s.image)).collect()
}

/// Writes `id,f_1,...,f_D` rows.
pub fn save_targets(dataset: &GazeDataset, targets: &[FeatureVector], path: &Path) -> Result<()> {
    if targets.len() != dataset.len() {
        return Err(Error::shape("target count", dataset.len(), targets.len()));
    }
    let mut out = String::new();
    for (s, t) in dataset.samples.iter().zip(targets) {
        out.push_str(&s.id);
        for v in t.as_slice() {
            write!(out, ",{v}").expect("string write");
        }
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Reads a cache written by [`save_targets`] and orders it by the dataset.
pub fn load_targets(dataset: &GazeDataset, path: &Path) -> Result<Vec<FeatureVector>> {
    let table = load_feature_table(path)?;
    dataset
        .samples
        .iter()
        .map(|s| {
            table
                .get(&s.id)
                .cloned()
                .ok_or_else(|| Error::Config(format!("{}: no cached features for sample {}", path.display(), s.id)))
        })
        .collect()
}

/// Reads `id,f_1,...,f_D` rows into a map; a header row starting with
/// `image_id` or `id` is skipped.
pub fn load_feature_table(path: &Path) -> Result<BTreeMap<String, FeatureVector>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let origin = path.display().to_string();
    let mut out = BTreeMap::new();
    let mut dim = None;
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') || line.starts_with("image_id,") || line.starts_with("id,") {
            continue;
        }
        let mut fields = line.split(',').map(str::trim);
        let id = fields.next().unwrap_or_default().to_string();
        let values = fields
            .map(str::parse::<f64>)
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::parse(&origin, i + 1, e.to_string()))?;
        if *dim.get_or_insert(values.len()) != values.len() {
            return Err(Error::parse(&origin, i + 1, "row width differs from the first row"));
        }
        let f = FeatureVector::new(values).map_err(|e| Error::parse(&origin, i + 1, e.to_string()))?;
        if out.insert(id.clone(), f).is_some() {
            return Err(Error::parse(&origin, i + 1, format!("duplicate id {id}")));
        }
    }
    Ok(out)
}

/// Feature banks used for the irrelevant loss.
#[derive(Debug, Clone, PartialEq)]
pub enum BankSet {
    Shared(FeatureBank),
    PerIdentity(BTreeMap<String, FeatureBank>),
}

impl BankSet {
    pub fn bank_for(&self, subject: &str) -> Result<&FeatureBank> {
        match self {
            BankSet::Shared(b) => Ok(b),
            BankSet::PerIdentity(map) => map.get(subject).ok_or_else(|| Error::MissingSubject(subject.to_string())),
        }
    }

    pub fn dim(&self) -> Option<usize> {
        match self {
            BankSet::Shared(b) => Some(b.dim()),
            BankSet::PerIdentity(map) => map.values().next().map(FeatureBank::dim),
        }
    }

    /// Every bank stacked, with identical banks kept once. Returns the
    /// stacked rows and each subject's `(offset, len)` block.
    pub(crate) fn stacked(&self, subjects: &[String]) -> Result<StackedBanks> {
        let mut banks: Vec<&FeatureBank> = Vec::new();
        let mut blocks = BTreeMap::new();
        for subject in subjects {
            let bank = self.bank_for(subject)?;
            let index = match banks.iter().position(|b| b.matrix() == bank.matrix()) {
                Some(i) => i,
                None => {
                    banks.push(bank);
                    banks.len() - 1
                }
            };
            blocks.insert(subject.clone(), index);
        }
        let dim = banks.first().map_or(0, |b| b.dim());
        let mut data = Vec::new();
        let mut offsets = Vec::new();
        let mut rows = 0;
        for b in &banks {
            if b.dim() != dim {
                return Err(Error::shape("bank width", dim, b.dim()));
            }
            offsets.push((rows, b.len()));
            rows += b.len();
            data.extend_from_slice(b.matrix().data());
        }
        let blocks = blocks.into_iter().map(|(s, i)| (s, offsets[i])).collect();
        Ok(StackedBanks {
            rows: crate::tensor::Tensor::new(vec![rows, dim], data),
            blocks,
        })
    }
}

pub(crate) struct StackedBanks {
    pub rows: crate::tensor::Tensor,
    pub blocks: BTreeMap<String, (usize, usize)>,
}
