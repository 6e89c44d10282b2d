//! Analytically rendered toy objects (boxes and spheres with flat Lambertian
//! shading) written in the NeRF-synthetic layout, so that training and
//! evaluation run without downloaded data.

use std::f64::consts::{PI, TAU};
use std::fs;
use std::path::Path;

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{write_views, Manifest, ViewImage, VIEWS_PER_OBJECT};
use crate::error::{ensure, Error, Result};
use crate::geometry::{orbit_pose, ray_for_pixel, Camera, Ray};
use crate::raster::RgbaImage;

/// Field of view of the Blender synthetic scenes.
pub const SYNTHETIC_FOV_X: f64 = 0.691_111_207_008_362;
pub const ORBIT_RADIUS: f64 = 4.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Shape {
    /// Axis-aligned box; faces ordered −x, +x, −y, +y, −z, +z.
    Box {
        center: [f64; 3],
        half: [f64; 3],
        face_colors: [[f64; 3]; 6],
    },
    Sphere {
        center: [f64; 3],
        radius: f64,
        color: [f64; 3],
    },
}

struct Hit {
    t: f64,
    normal: Vector3<f64>,
    color: [f64; 3],
}

impl Shape {
    fn intersect(&self, ray: &Ray) -> Option<Hit> {
        match self {
            Shape::Box {
                center,
                half,
                face_colors,
            } => {
                let mut t_min = f64::NEG_INFINITY;
                let mut t_max = f64::INFINITY;
                let mut axis = 0;
                let mut entering_negative = true;
                for k in 0..3 {
                    let lo = center[k] - half[k] - ray.origin[k];
                    let hi = center[k] + half[k] - ray.origin[k];
                    let d = ray.direction[k];
                    if d.abs() < 1e-15 {
                        if lo > 0.0 || hi < 0.0 {
                            return None;
                        }
                        continue;
                    }
                    let (mut t0, mut t1) = (lo / d, hi / d);
                    let mut neg = true;
                    if t0 > t1 {
                        std::mem::swap(&mut t0, &mut t1);
                        neg = false;
                    }
                    if t0 > t_min {
                        t_min = t0;
                        axis = k;
                        entering_negative = neg;
                    }
                    t_max = t_max.min(t1);
                }
                if t_min > t_max || t_min <= 0.0 {
                    return None;
                }
                let mut normal = Vector3::zeros();
                normal[axis] = if entering_negative { -1.0 } else { 1.0 };
                let face = 2 * axis + usize::from(!entering_negative);
                Some(Hit {
                    t: t_min,
                    normal,
                    color: face_colors[face],
                })
            }
            Shape::Sphere {
                center,
                radius,
                color,
            } => {
                let oc = ray.origin - Vector3::from(*center);
                let b = oc.dot(&ray.direction);
                let c = oc.norm_squared() - radius * radius;
                let disc = b * b - c;
                if disc < 0.0 {
                    return None;
                }
                let t = -b - disc.sqrt();
                if t <= 0.0 {
                    return None;
                }
                let normal = (ray.at(t) - Vector3::from(*center)) / *radius;
                Some(Hit {
                    t,
                    normal,
                    color: *color,
                })
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ToyObject {
    pub shapes: Vec<Shape>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ToyClass {
    Cubes,
    Spheres,
    Towers,
}

impl ToyClass {
    pub const ALL: [ToyClass; 3] = [ToyClass::Cubes, ToyClass::Spheres, ToyClass::Towers];

    pub fn name(self) -> &'static str {
        match self {
            ToyClass::Cubes => "cubes",
            ToyClass::Spheres => "spheres",
            ToyClass::Towers => "towers",
        }
    }
}

fn random_color(rng: &mut impl Rng) -> [f64; 3] {
    // Keep colors away from the white background.
    let hue = rng.random_range(0.0..TAU);
    let base = [hue, hue + TAU / 3.0, hue + 2.0 * TAU / 3.0];
    base.map(|h| 0.15 + 0.6 * (0.5 + 0.5 * h.cos()))
}

impl ToyObject {
    /// Fixed multi-part desk scene: a box with six face colors, a sphere on
    /// top and a smaller offset block.
    pub fn desk_scene() -> Self {
        Self {
            shapes: vec![
                Shape::Box {
                    center: [0.0, 0.0, -0.35],
                    half: [0.75, 0.55, 0.35],
                    face_colors: [
                        [0.85, 0.2, 0.15],
                        [0.2, 0.65, 0.25],
                        [0.15, 0.3, 0.85],
                        [0.9, 0.75, 0.1],
                        [0.55, 0.2, 0.6],
                        [0.1, 0.7, 0.75],
                    ],
                },
                Shape::Sphere {
                    center: [0.2, 0.0, 0.35],
                    radius: 0.4,
                    color: [0.95, 0.45, 0.1],
                },
                Shape::Box {
                    center: [-0.5, 0.25, 0.2],
                    half: [0.2, 0.2, 0.2],
                    face_colors: [[0.25, 0.25, 0.3]; 6],
                },
            ],
        }
    }

    pub fn random(class: ToyClass, rng: &mut impl Rng) -> Self {
        let shapes = match class {
            ToyClass::Cubes => {
                let half = [0.0; 3].map(|_| rng.random_range(0.35..0.8));
                vec![Shape::Box {
                    center: [0.0; 3],
                    half,
                    face_colors: [[0.0; 3]; 6].map(|_| random_color(rng)),
                }]
            }
            ToyClass::Spheres => {
                let big = rng.random_range(0.55..0.8);
                let small = rng.random_range(0.2..0.35);
                let angle = rng.random_range(0.0..TAU);
                vec![
                    Shape::Sphere {
                        center: [0.0; 3],
                        radius: big,
                        color: random_color(rng),
                    },
                    Shape::Sphere {
                        center: [big * angle.cos(), big * angle.sin(), 0.3],
                        radius: small,
                        color: random_color(rng),
                    },
                ]
            }
            ToyClass::Towers => {
                let base = rng.random_range(0.4..0.7);
                let top = rng.random_range(0.2..0.35);
                vec![
                    Shape::Box {
                        center: [0.0, 0.0, -0.4],
                        half: [base, base, 0.35],
                        face_colors: [random_color(rng); 6],
                    },
                    Shape::Box {
                        center: [0.0, 0.0, 0.3],
                        half: [top, top, 0.35],
                        face_colors: [random_color(rng); 6],
                    },
                ]
            }
        };
        Self { shapes }
    }

    fn shade(&self, ray: &Ray) -> Option<[f64; 3]> {
        let hit = self
            .shapes
            .iter()
            .filter_map(|s| s.intersect(ray))
            .min_by(|a, b| a.t.total_cmp(&b.t))?;
        let light = Vector3::new(0.3, 0.5, 0.8).normalize();
        let lambert = 0.55 + 0.45 * hit.normal.dot(&light).max(0.0);
        Some(hit.color.map(|c| (c * lambert).clamp(0.0, 1.0)))
    }

    /// Renders with `supersample²` rays per pixel; coverage becomes alpha.
    pub fn render(&self, camera: &Camera, supersample: usize) -> Result<RgbaImage> {
        ensure!(supersample >= 1, Validation, "supersample must be >= 1");
        let (w, h) = (camera.width(), camera.height());
        let mut data = Vec::with_capacity(w * h * 4);
        let n = supersample as f64;
        for y in 0..h {
            for x in 0..w {
                let mut rgb = [0.0; 3];
                let mut hits = 0.0;
                for sy in 0..supersample {
                    for sx in 0..supersample {
                        let u = x as f64 + (sx as f64 + 0.5) / n;
                        let v = y as f64 + (sy as f64 + 0.5) / n;
                        if let Some(c) = self.shade(&ray_for_pixel(camera, u, v)?) {
                            rgb.iter_mut().zip(c).for_each(|(a, c)| *a += c);
                            hits += 1.0;
                        }
                    }
                }
                let alpha = hits / (n * n);
                let color = if hits > 0.0 {
                    rgb.map(|c| c / hits)
                } else {
                    [0.0; 3]
                };
                data.extend(color.iter().map(|&c| c as f32));
                data.push(alpha as f32);
            }
        }
        Ok(RgbaImage {
            width: w,
            height: h,
            data,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ToySceneSpec {
    pub resolution: usize,
    pub train_views: usize,
    pub val_views: usize,
    pub test_views: usize,
    pub seed: u64,
}

impl Default for ToySceneSpec {
    fn default() -> Self {
        Self {
            resolution: 100,
            train_views: 100,
            val_views: 0,
            test_views: 20,
            seed: 0,
        }
    }
}

fn random_cameras(n: usize, resolution: usize, rng: &mut impl Rng) -> Result<Vec<Camera>> {
    (0..n)
        .map(|_| {
            let azimuth = rng.random_range(0.0..TAU);
            let elevation = rng.random_range(5.0f64.to_radians()..75.0f64.to_radians());
            Camera::from_fov_x(
                resolution,
                resolution,
                SYNTHETIC_FOV_X,
                orbit_pose(azimuth, elevation, ORBIT_RADIUS)?,
            )
        })
        .collect()
}

/// Evenly spaced ring at 30° elevation, like the synthetic test spirals.
pub fn ring_cameras(n: usize, resolution: usize, phase: f64) -> Result<Vec<Camera>> {
    (0..n)
        .map(|i| {
            let azimuth = phase + i as f64 * TAU / n as f64;
            Camera::from_fov_x(
                resolution,
                resolution,
                SYNTHETIC_FOV_X,
                orbit_pose(azimuth, PI / 6.0, ORBIT_RADIUS)?,
            )
        })
        .collect()
}

fn write_split(dir: &Path, object: &ToyObject, split: &str, cameras: &[Camera]) -> Result<()> {
    if cameras.is_empty() {
        return Ok(());
    }
    let images = cameras
        .iter()
        .map(|c| object.render(c, 3))
        .collect::<Result<Vec<_>>>()?;
    let views: Vec<_> = images.iter().zip(cameras).map(|(i, c)| (ViewImage::Rgba(i), c)).collect();
    write_views(dir, &format!("transforms_{split}.json"), split, &views)
}

/// Writes a single-object scene with train/val/test splits.
pub fn write_toy_scene(dir: &Path, object: &ToyObject, spec: &ToySceneSpec) -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let train = random_cameras(spec.train_views, spec.resolution, &mut rng)?;
    let val = random_cameras(spec.val_views, spec.resolution, &mut rng)?;
    let test = ring_cameras(spec.test_views, spec.resolution, 0.1)?;
    write_split(dir, object, "train", &train)?;
    write_split(dir, object, "val", &val)?;
    write_split(dir, object, "test", &test)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ToyCollectionSpec {
    pub classes: Vec<ToyClass>,
    pub train_objects: usize,
    pub test_objects: usize,
    pub resolution: usize,
    pub seed: u64,
}

/// Writes one class directory per entry of `spec.classes`, each with a
/// manifest and [`VIEWS_PER_OBJECT`] random views per object.
pub fn write_toy_collection(root: &Path, spec: &ToyCollectionSpec) -> Result<()> {
    for (k, &class) in spec.classes.iter().enumerate() {
        let class_dir = root.join(class.name());
        fs::create_dir_all(&class_dir).map_err(|e| Error::io(&class_dir, e))?;
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed.wrapping_add(k as u64));
        let ids: Vec<String> = (0..spec.train_objects + spec.test_objects)
            .map(|i| format!("{}_{i:03}", class.name()))
            .collect();
        for id in &ids {
            let object = ToyObject::random(class, &mut rng);
            let cameras = random_cameras(VIEWS_PER_OBJECT, spec.resolution, &mut rng)?;
            let images = cameras
                .iter()
                .map(|c| object.render(c, 2))
                .collect::<Result<Vec<_>>>()?;
            let views: Vec<_> = images.iter().zip(&cameras).map(|(i, c)| (ViewImage::Rgba(i), c)).collect();
            write_views(&class_dir.join(id), "transforms.json", "images", &views)?;
        }
        let manifest = Manifest {
            class: class.name().to_string(),
            train: ids[..spec.train_objects].to_vec(),
            test: ids[spec.train_objects..].to_vec(),
        };
        let path = class_dir.join("manifest.json");
        let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    }
    Ok(())
}
