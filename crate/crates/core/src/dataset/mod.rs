//! On-disk scenes in the NeRF-synthetic layout and multi-object collections.
//!
//! A scene directory holds `transforms_{split}.json`:
//!
//! ```json
//! { "camera_angle_x": 0.69,
//!   "frames": [ { "file_path": "./train/r_0", "transform_matrix": [[..4..], ..4 rows..] } ] }
//! ```
//!
//! `file_path` is relative to the scene directory; `.png` is appended when it
//! has no extension. A multi-object root holds one directory per class with a
//! `manifest.json` (`{"class": .., "train": [ids], "test": [ids]}`) and one
//! subdirectory per object containing `transforms.json` in the same schema.

pub mod toy;

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use log::warn;
use nalgebra::Matrix4;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::{ensure, Error, Result};
use crate::geometry::{validate_rigid, Camera};
use crate::raster::{RgbImage, RgbaImage};
use crate::repr::{ReferenceImage, ReferenceSet};

/// Views per object in multi-object collections.
pub const VIEWS_PER_OBJECT: usize = 50;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::Validation(format!("unknown split `{other}`"))),
        }
    }
}

/// One posed image, alpha-composited over the load background.
#[derive(Clone, Debug, PartialEq)]
pub struct View {
    pub path: PathBuf,
    pub image: RgbImage,
    pub camera: Camera,
}

impl View {
    pub fn downsample(&self, factor: usize) -> Result<Self> {
        if factor == 1 {
            return Ok(self.clone());
        }
        let image = self.image.downsample(factor)?.quantized();
        let camera = self.camera.resized(image.width(), image.height())?;
        Ok(Self {
            path: self.path.clone(),
            image,
            camera,
        })
    }

    pub fn to_reference(&self) -> Result<ReferenceImage> {
        ReferenceImage::new(self.image.clone(), self.camera.clone())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SceneViews {
    pub name: String,
    pub split: Split,
    pub camera_angle_x: f64,
    pub views: Vec<View>,
}

impl SceneViews {
    pub fn len(&self) -> usize {
        self.views.len()
    }

    pub fn is_empty(&self) -> bool {
        self.views.is_empty()
    }

    pub fn resolution(&self) -> (usize, usize) {
        self.views
            .first()
            .map(|v| (v.image.width(), v.image.height()))
            .unwrap_or((0, 0))
    }

    pub fn downsample(&self, factor: usize) -> Result<Self> {
        Ok(Self {
            views: self
                .views
                .iter()
                .map(|v| v.downsample(factor))
                .collect::<Result<_>>()?,
            ..self.clone()
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LoadOptions {
    /// Color behind transparent pixels.
    pub background: [f32; 3],
    /// Integer box-filter factor applied after compositing.
    pub downsample: usize,
}

impl Default for LoadOptions {
    fn default() -> Self {
        Self {
            background: [1.0; 3],
            downsample: 1,
        }
    }
}

/// `α·rgb + (1 − α)·background` per pixel.
pub fn composite_alpha(rgba: &RgbaImage, background: [f32; 3]) -> RgbImage {
    rgba.composite(background)
}

fn read_json(path: &Path) -> Result<Value> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::parse(path, "<document>", e.to_string()))
}

fn parse_matrix(file: &Path, field: &str, value: &Value) -> Result<Matrix4<f64>> {
    let bad = |msg: &str| Error::parse(file, field, msg);
    let rows = value.as_array().ok_or_else(|| bad("expected a 4x4 array"))?;
    if rows.len() != 4 {
        return Err(bad("expected 4 rows"));
    }
    let mut m = Matrix4::zeros();
    for (i, row) in rows.iter().enumerate() {
        let row = row.as_array().filter(|r| r.len() == 4).ok_or_else(|| bad("expected 4 columns"))?;
        for (j, v) in row.iter().enumerate() {
            m[(i, j)] = v.as_f64().ok_or_else(|| bad("expected numbers"))?;
        }
    }
    Ok(m)
}

struct FrameRecord {
    path: PathBuf,
    pose: Matrix4<f64>,
}

fn parse_transforms(file: &Path) -> Result<(f64, Vec<FrameRecord>)> {
    let doc = read_json(file)?;
    let angle = doc
        .get("camera_angle_x")
        .and_then(Value::as_f64)
        .ok_or_else(|| Error::parse(file, "camera_angle_x", "missing or not a number"))?;
    let frames = doc
        .get("frames")
        .and_then(Value::as_array)
        .ok_or_else(|| Error::parse(file, "frames", "missing or not an array"))?;
    ensure!(
        !frames.is_empty(),
        Validation,
        "{} lists no frames",
        file.display()
    );
    let root = file.parent().unwrap_or(Path::new("."));
    let records = frames
        .iter()
        .enumerate()
        .map(|(i, frame)| {
            let rel = frame
                .get("file_path")
                .and_then(Value::as_str)
                .ok_or_else(|| Error::parse(file, format!("frames[{i}].file_path"), "missing or not a string"))?;
            let mut path = root.join(rel);
            if path.extension().is_none() {
                path.set_extension("png");
            }
            let field = format!("frames[{i}].transform_matrix");
            let raw = frame
                .get("transform_matrix")
                .ok_or_else(|| Error::parse(file, &field, "missing"))?;
            let pose = parse_matrix(file, &field, raw)?;
            validate_rigid(&pose)
                .map_err(|e| Error::Validation(format!("{}: {field}: {e}", file.display())))?;
            Ok(FrameRecord { path, pose })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((angle, records))
}

fn load_views(file: &Path, options: &LoadOptions) -> Result<(f64, Vec<View>)> {
    ensure!(options.downsample >= 1, Validation, "downsample factor must be >= 1");
    let (angle, frames) = parse_transforms(file)?;
    let views = frames
        .par_iter()
        .map(|frame| {
            let rgba = RgbaImage::load_png(&frame.path)?;
            let image = composite_alpha(&rgba, options.background).quantized();
            let camera = Camera::from_fov_x(image.width(), image.height(), angle, frame.pose)?;
            View {
                path: frame.path.clone(),
                image,
                camera,
            }
            .downsample(options.downsample)
        })
        .collect::<Result<Vec<_>>>()?;
    let (w, h) = (views[0].image.width(), views[0].image.height());
    ensure!(
        views
            .iter()
            .all(|v| v.image.width() == w && v.image.height() == h),
        Validation,
        "{}: views differ in resolution",
        file.display()
    );
    Ok((angle, views))
}

/// Loads `transforms_{split}.json` and its images from a scene directory.
pub fn load_nerf_synthetic(root: &Path, split: Split, options: &LoadOptions) -> Result<SceneViews> {
    let file = root.join(format!("transforms_{}.json", split.as_str()));
    let (camera_angle_x, views) = load_views(&file, options)?;
    Ok(SceneViews {
        name: root
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default(),
        split,
        camera_angle_x,
        views,
    })
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub class: String,
    pub train: Vec<String>,
    pub test: Vec<String>,
}

impl Manifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let manifest: Manifest = serde_json::from_str(&text)
            .map_err(|e| Error::parse(path, "<manifest>", e.to_string()))?;
        let train: HashSet<_> = manifest.train.iter().collect();
        if let Some(dup) = manifest.test.iter().find(|id| train.contains(id)) {
            return Err(Error::Validation(format!(
                "{}: object `{dup}` listed in both train and test",
                path.display()
            )));
        }
        Ok(manifest)
    }

    pub fn ids(&self, split: Split) -> &[String] {
        match split {
            Split::Train => &self.train,
            Split::Val | Split::Test => &self.test,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ObjectViews {
    pub id: String,
    pub views: SceneViews,
}

/// Cameras from a transforms-style pose file without loading any images.
pub fn load_cameras(file: &Path, width: usize, height: usize) -> Result<Vec<Camera>> {
    let (angle, frames) = parse_transforms(file)?;
    frames
        .iter()
        .map(|f| Camera::from_fov_x(width, height, angle, f.pose))
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct MultiObjectDataset {
    pub class: String,
    pub split: Split,
    pub objects: Vec<ObjectViews>,
}

/// Loads every object of `class` listed under `split` in the class manifest.
/// Objects without exactly [`VIEWS_PER_OBJECT`] views are skipped with a
/// warning.
pub fn load_multi_object(
    root: &Path,
    class: &str,
    split: Split,
    options: &LoadOptions,
) -> Result<MultiObjectDataset> {
    let class_dir = root.join(class);
    let manifest = Manifest::load(&class_dir.join("manifest.json"))?;
    let mut objects = Vec::new();
    for id in manifest.ids(split) {
        let file = class_dir.join(id).join("transforms.json");
        let (camera_angle_x, views) = load_views(&file, options)?;
        if views.len() != VIEWS_PER_OBJECT {
            warn!(
                "skipping object {class}/{id}: {} views, expected {VIEWS_PER_OBJECT}",
                views.len()
            );
            continue;
        }
        objects.push(ObjectViews {
            id: id.clone(),
            views: SceneViews {
                name: id.clone(),
                split,
                camera_angle_x,
                views,
            },
        });
    }
    ensure!(
        !objects.is_empty(),
        Validation,
        "class `{class}` has no usable {} objects",
        split.as_str()
    );
    Ok(MultiObjectDataset {
        class: manifest.class,
        split,
        objects,
    })
}

/// Writes `views` as PNGs under `dir/<subdir>/` plus a transforms file
/// describing them.
pub fn write_views(dir: &Path, transforms_name: &str, subdir: &str, views: &[(ViewImage<'_>, &Camera)]) -> Result<()> {
    ensure!(!views.is_empty(), Validation, "no views to write");
    let image_dir = dir.join(subdir);
    fs::create_dir_all(&image_dir).map_err(|e| Error::io(&image_dir, e))?;
    let mut frames = Vec::with_capacity(views.len());
    for (i, (image, camera)) in views.iter().enumerate() {
        let rel = format!("./{subdir}/r_{i}");
        let path = image_dir.join(format!("r_{i}.png"));
        match image {
            ViewImage::Rgba(img) => img.save_png(&path)?,
            ViewImage::Rgb(img) => img.save_png(&path)?,
        }
        let pose = camera.pose();
        let rows: Vec<Vec<f64>> = (0..4).map(|r| (0..4).map(|c| pose[(r, c)]).collect()).collect();
        frames.push(json!({ "file_path": rel, "transform_matrix": rows }));
    }
    let doc = json!({ "camera_angle_x": views[0].1.fov_x(), "frames": frames });
    let path = dir.join(transforms_name);
    let text = serde_json::to_string_pretty(&doc).expect("json values serialize");
    fs::write(&path, text).map_err(|e| Error::io(&path, e))
}

pub enum ViewImage<'a> {
    Rgba(&'a RgbaImage),
    Rgb(&'a RgbImage),
}

/// Persists a reference set as a scene directory (`transforms_refs.json`).
pub fn save_reference_set(dir: &Path, refs: &ReferenceSet) -> Result<()> {
    let views: Vec<_> = refs
        .iter()
        .map(|r| (ViewImage::Rgb(r.image()), r.camera()))
        .collect();
    write_views(dir, "transforms_refs.json", "refs", &views)
}

pub fn load_reference_set(dir: &Path) -> Result<ReferenceSet> {
    let (_, views) = load_views(&dir.join("transforms_refs.json"), &LoadOptions::default())?;
    ReferenceSet::new(views.iter().map(View::to_reference).collect::<Result<_>>()?)
}
