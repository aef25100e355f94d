//! NeRF-synthetic `transforms_*.json` datasets.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::image_io::read_png_over;
use crate::error::{Error, Result};
use crate::model::UnitCubeMap;
use crate::render::{Camera, Image, Mat4};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn as_str(&self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::Usage(format!("unknown split '{other}' (train, val, test)"))),
        }
    }
}

/// On-disk layout. `near`, `far` and `scene_radius` are optional extensions
/// written by the generator; other tools ignore them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransformsFile {
    pub camera_angle_x: f64,
    pub frames: Vec<FrameEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub near: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub far: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scene_radius: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameEntry {
    pub file_path: String,
    pub transform_matrix: Mat4,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub file_path: String,
    pub image: Image,
    pub camera: Camera,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub split: Split,
    pub frames: Vec<Frame>,
    pub map: UnitCubeMap,
    pub background: [f32; 3],
    pub near: f64,
    pub far: f64,
}

pub const DEFAULT_NEAR: f64 = 2.0;
pub const DEFAULT_FAR: f64 = 6.0;

impl Dataset {
    pub fn ray_count(&self) -> usize {
        self.frames.iter().map(|f| f.camera.pixel_count()).sum()
    }

    pub fn resolution(&self) -> Option<(u32, u32)> {
        self.frames.first().map(|f| (f.camera.width, f.camera.height))
    }
}

fn split_from_name(path: &Path) -> Split {
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("");
    stem.strip_prefix("transforms_")
        .and_then(|s| s.parse().ok())
        .unwrap_or(Split::Train)
}

fn resolve_image(base: &Path, file_path: &str) -> PathBuf {
    let p = base.join(file_path);
    if p.extension().is_none() {
        p.with_extension("png")
    } else {
        p
    }
}

/// Loads a transforms file and its images. RGBA images are composited over
/// `background`.
pub fn load_transforms_json(path: impl AsRef<Path>, background: [f32; 3]) -> Result<Dataset> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let file: TransformsFile =
        serde_json::from_str(&text).map_err(|e| Error::Load(format!("{}: {e}", path.display())))?;
    let base = path.parent().unwrap_or(Path::new("."));
    let mut frames = Vec::with_capacity(file.frames.len());
    for (i, entry) in file.frames.iter().enumerate() {
        let img_path = resolve_image(base, &entry.file_path);
        let image = read_png_over(&img_path, Some(background))?;
        let camera = Camera::from_angle_x(image.width, image.height, file.camera_angle_x, entry.transform_matrix)
            .map_err(|e| Error::Load(format!("{} frame {i}: {e}", path.display())))?;
        if let Some(first) = frames.first().map(|f: &Frame| (f.image.width, f.image.height)) {
            if first != (image.width, image.height) {
                return Err(Error::Load(format!(
                    "{} frame {i} is {}x{}, expected {}x{}",
                    path.display(),
                    image.width,
                    image.height,
                    first.0,
                    first.1
                )));
            }
        }
        frames.push(Frame {
            file_path: entry.file_path.clone(),
            image,
            camera,
        });
    }
    let map = match file.scene_radius {
        Some(r) if r > 0.0 => UnitCubeMap::from_radius([0.0; 3], r, 0.05),
        Some(r) => return Err(Error::Load(format!("scene_radius must be positive, got {r}"))),
        None => UnitCubeMap::default(),
    };
    let near = file.near.unwrap_or(DEFAULT_NEAR);
    let far = file.far.unwrap_or(DEFAULT_FAR);
    if !(near < far) {
        return Err(Error::Load(format!("near {near} must be below far {far}")));
    }
    Ok(Dataset {
        split: split_from_name(path),
        frames,
        map,
        background,
        near,
        far,
    })
}

pub fn split_path(dir: impl AsRef<Path>, split: Split) -> PathBuf {
    dir.as_ref().join(format!("transforms_{split}.json"))
}

pub fn load_split(dir: impl AsRef<Path>, split: Split, background: [f32; 3]) -> Result<Dataset> {
    load_transforms_json(split_path(dir, split), background)
}
