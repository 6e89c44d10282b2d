//! Image metrics and evaluation protocols.

use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;

use crate::dataset::{ObjectViews, View};
use crate::decoder::DecoderParams;
use crate::error::{ensure, Error, Result};
use crate::raster::RgbImage;
use crate::real::Real;
use crate::render::{render_image, RenderConfig, SamplingMode};
use crate::repr::{ReferenceImage, ReferenceSet};
use crate::train::{split_views, ModelKind, TrainConfig, Trainer, TrainingObject, TrainingSet};

/// Side of the square SSIM window.
pub const SSIM_WINDOW: usize = 7;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

/// Published full-resolution (800×800) test PSNR of the multi-image model on
/// the synthetic scenes. Reported next to desk-scale numbers for context only.
pub const PUBLISHED_SCENE_PSNR: [(&str, f64); 8] = [
    ("chair", 32.81),
    ("drums", 24.28),
    ("ficus", 28.22),
    ("hotdog", 35.75),
    ("lego", 28.49),
    ("materials", 30.80),
    ("mic", 32.70),
    ("ship", 27.39),
];

/// Published cross-class PSNR, rows = training class, columns = test class.
pub const PUBLISHED_CROSS_CLASS: [(&str, [(&str, f64); 3]); 3] = [
    ("cars", [("cars", 24.91), ("chairs", 22.15), ("planes", 21.32)]),
    ("chairs", [("cars", 24.41), ("chairs", 22.51), ("planes", 20.84)]),
    ("planes", [("cars", 24.19), ("chairs", 21.69), ("planes", 24.27)]),
];

pub fn published_scene_psnr(scene: &str) -> Option<f64> {
    let scene = scene.to_ascii_lowercase();
    PUBLISHED_SCENE_PSNR
        .iter()
        .find(|(name, _)| *name == scene)
        .map(|(_, v)| *v)
}

fn check_same_size(a: &RgbImage, b: &RgbImage) -> Result<()> {
    ensure!(
        a.width() == b.width() && a.height() == b.height(),
        Validation,
        "image sizes differ: {}x{} vs {}x{}",
        a.width(),
        a.height(),
        b.width(),
        b.height()
    );
    Ok(())
}

/// `−10·log₁₀(MSE)` over all pixels and channels; identical images give `+∞`.
pub fn psnr(a: &RgbImage, b: &RgbImage) -> Result<f64> {
    check_same_size(a, b)?;
    let n = a.data().len();
    ensure!(n > 0, Validation, "empty image");
    let sse: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| (x as f64 - y as f64).powi(2))
        .sum();
    if sse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(-10.0 * (sse / n as f64).log10())
}

/// Mean SSIM with a 7×7 uniform window over valid window positions,
/// unit data range, sample (N−1) covariance, averaged over channels.
pub fn ssim(a: &RgbImage, b: &RgbImage) -> Result<f64> {
    check_same_size(a, b)?;
    let (w, h) = (a.width(), a.height());
    ensure!(
        w >= SSIM_WINDOW && h >= SSIM_WINDOW,
        Validation,
        "image {w}x{h} is smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window"
    );
    let c1 = SSIM_K1 * SSIM_K1;
    let c2 = SSIM_K2 * SSIM_K2;
    let np = (SSIM_WINDOW * SSIM_WINDOW) as f64;
    let cov_norm = np / (np - 1.0);
    let (nx, ny) = (w - SSIM_WINDOW + 1, h - SSIM_WINDOW + 1);
    let mut total = 0.0;
    for c in 0..3 {
        let get = |img: &RgbImage, x: usize, y: usize| img.data()[(y * w + x) * 3 + c] as f64;
        let mut channel = 0.0;
        for y0 in 0..ny {
            for x0 in 0..nx {
                let (mut sx, mut sy, mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
                for y in y0..y0 + SSIM_WINDOW {
                    for x in x0..x0 + SSIM_WINDOW {
                        let (p, q) = (get(a, x, y), get(b, x, y));
                        sx += p;
                        sy += q;
                        sxx += p * p;
                        syy += q * q;
                        sxy += p * q;
                    }
                }
                let (mx, my) = (sx / np, sy / np);
                let vx = cov_norm * (sxx / np - mx * mx);
                let vy = cov_norm * (syy / np - my * my);
                let vxy = cov_norm * (sxy / np - mx * my);
                let num = (2.0 * mx * my + c1) * (2.0 * vxy + c2);
                let den = (mx * mx + my * my + c1) * (vx + vy + c2);
                channel += num / den;
            }
        }
        total += channel / (nx * ny) as f64;
    }
    Ok(total / 3.0)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ViewMetric {
    pub view_id: String,
    pub psnr_db: f64,
    pub ssim: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricReport {
    pub scene: String,
    pub views: Vec<ViewMetric>,
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    sum / n as f64
}

impl MetricReport {
    pub fn mean_psnr(&self) -> f64 {
        mean(self.views.iter().map(|v| v.psnr_db))
    }

    pub fn mean_ssim(&self) -> f64 {
        mean(self.views.iter().map(|v| v.ssim))
    }

    /// `view_id,psnr_db,ssim` rows followed by `mean_psnr` and `mean_ssim`
    /// footer rows. Infinite PSNR is written as `inf`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("view_id,psnr_db,ssim\n");
        for v in &self.views {
            writeln!(out, "{},{},{}", v.view_id, v.psnr_db, v.ssim).unwrap();
        }
        writeln!(out, "mean_psnr,{},", self.mean_psnr()).unwrap();
        writeln!(out, "mean_ssim,,{}", self.mean_ssim()).unwrap();
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}

fn view_id(view: &View, index: usize) -> String {
    view.path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .filter(|s| !s.is_empty())
        .unwrap_or_else(|| format!("view_{index}"))
}

/// Deterministic evaluation render: midpoint samples.
pub fn eval_render_config(config: &RenderConfig) -> RenderConfig {
    RenderConfig {
        sampling: SamplingMode::Midpoint,
        ..config.clone()
    }
}

/// Renders every view with `params` and scores it against the ground truth.
pub fn eval_scene<T: Real>(
    scene: &str,
    params: &DecoderParams<T>,
    refs: Option<&ReferenceSet>,
    views: &[View],
    config: &RenderConfig,
) -> Result<MetricReport> {
    ensure!(!views.is_empty(), Validation, "no test views to evaluate");
    let metrics = views
        .iter()
        .enumerate()
        .map(|(i, view)| {
            let rendered = render_image(params, refs, &view.camera, config)?;
            Ok(ViewMetric {
                view_id: view_id(view, i),
                psnr_db: psnr(&rendered, &view.image)?,
                ssim: ssim(&rendered, &view.image)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(MetricReport {
        scene: scene.to_string(),
        views: metrics,
    })
}

/// Scores an empty field (every pixel equals the background), the reference
/// point for "did the model learn anything".
pub fn empty_field_report(scene: &str, views: &[View], background: [f64; 3]) -> Result<MetricReport> {
    ensure!(!views.is_empty(), Validation, "no test views to evaluate");
    let bg = background.map(|c| c as f32);
    let metrics = views
        .par_iter()
        .enumerate()
        .map(|(i, view)| {
            let empty = RgbImage::filled(view.image.width(), view.image.height(), bg)?;
            Ok(ViewMetric {
                view_id: view_id(view, i),
                psnr_db: psnr(&empty, &view.image)?,
                ssim: ssim(&empty, &view.image)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(MetricReport {
        scene: scene.to_string(),
        views: metrics,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationRow {
    pub n_refs: usize,
    /// Side length the reference images were resampled to.
    pub ref_resolution: usize,
    pub mean_psnr: f64,
    pub mean_ssim: f64,
}

pub fn ablation_csv(rows: &[AblationRow]) -> String {
    let mut out = String::from("n_refs,ref_resolution,mean_psnr,mean_ssim\n");
    for r in rows {
        writeln!(out, "{},{},{},{}", r.n_refs, r.ref_resolution, r.mean_psnr, r.mean_ssim).unwrap();
    }
    out
}

fn downsample_refs(refs: &ReferenceSet, resolution: usize) -> Result<ReferenceSet> {
    let images = refs
        .iter()
        .map(|r| {
            let w = r.image().width();
            ensure!(
                resolution > 0 && w % resolution == 0 && r.image().height() % (w / resolution) == 0,
                Validation,
                "reference resolution {resolution} does not divide {w}"
            );
            let factor = w / resolution;
            if factor == 1 {
                return Ok(r.clone());
            }
            let image = r.image().downsample(factor)?.quantized();
            let camera = r.camera().resized(image.width(), image.height())?;
            ReferenceImage::new(image, camera)
        })
        .collect::<Result<Vec<_>>>()?;
    ReferenceSet::new(images)
}

/// One training run per (reference count, reference resolution) setting with
/// the shared seed in `config`. Training and test views keep their native
/// resolution; only the reference images are resampled.
pub fn ablate_references(
    train_views: &[View],
    test_views: &[View],
    counts: &[usize],
    resolutions: &[usize],
    config: &TrainConfig,
) -> Result<Vec<AblationRow>> {
    ensure!(
        config.model == ModelKind::MultiPlane,
        Validation,
        "reference ablation needs the multi-image model"
    );
    ensure!(
        !counts.is_empty() && !resolutions.is_empty(),
        Validation,
        "ablation needs at least one count and one resolution"
    );
    let mut rows = Vec::new();
    for &n_refs in counts {
        let (refs, rest) = split_views(train_views, n_refs, config.split)?;
        for &resolution in resolutions {
            let refs = downsample_refs(&refs, resolution)?;
            let cfg = TrainConfig {
                n_refs,
                ..config.clone()
            };
            let set = TrainingSet {
                objects: vec![TrainingObject {
                    refs: Some(refs.clone()),
                    views: rest.clone(),
                }],
            };
            let params = Trainer::<f32>::new(set, cfg.clone())?.run(|_, _| Ok(()))?;
            let render = eval_render_config(&cfg.render_config(SamplingMode::Midpoint));
            let report = eval_scene("ablation", &params, Some(&refs), test_views, &render)?;
            log::info!(
                "ablation n_refs={n_refs} resolution={resolution}: {:.3} dB",
                report.mean_psnr()
            );
            rows.push(AblationRow {
                n_refs,
                ref_resolution: resolution,
                mean_psnr: report.mean_psnr(),
                mean_ssim: report.mean_ssim(),
            });
        }
    }
    Ok(rows)
}

/// Held-out-view PSNR per object, using each object's own references and
/// leaving `params` untouched. `views_per_object` caps the held-out views
/// scored per object (0 = all). One row per object; `view_id` is the object id.
pub fn eval_cross_class<T: Real>(
    params: &DecoderParams<T>,
    objects: &[ObjectViews],
    config: &TrainConfig,
    views_per_object: usize,
) -> Result<MetricReport> {
    ensure!(!objects.is_empty(), Validation, "no test objects");
    let render = eval_render_config(&config.render_config(SamplingMode::Midpoint));
    let rows = objects
        .iter()
        .map(|object| {
            let (refs, mut held_out) = split_views(&object.views.views, config.n_refs, config.split)?;
            if views_per_object > 0 {
                held_out.truncate(views_per_object);
            }
            let report = eval_scene(&object.id, params, Some(&refs), &held_out, &render)?;
            Ok(ViewMetric {
                view_id: object.id.clone(),
                psnr_db: report.mean_psnr(),
                ssim: report.mean_ssim(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(MetricReport {
        scene: objects[0].views.name.clone(),
        views: rows,
    })
}

/// Mean PSNR for every (training class, test class) pair.
#[derive(Clone, Debug, PartialEq)]
pub struct CrossClassMatrix {
    pub train_classes: Vec<String>,
    pub test_classes: Vec<String>,
    /// `psnr[i][j]`: trained on `train_classes[i]`, tested on `test_classes[j]`.
    pub psnr: Vec<Vec<f64>>,
}

impl CrossClassMatrix {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("trained_on");
        for c in &self.test_classes {
            write!(out, ",{c}").unwrap();
        }
        out.push('\n');
        for (name, row) in self.train_classes.iter().zip(&self.psnr) {
            out.push_str(name);
            for v in row {
                write!(out, ",{v}").unwrap();
            }
            out.push('\n');
        }
        out
    }
}
