//! The multi-image representation: a fixed set of posed reference images
//! that 3D points are projected onto.
//!
//! For a point `x` and references `I_1..I_n`, the decoder input is the
//! concatenation of one block per reference:
//!
//! ```text
//! Standard:       [rgb_i (3), uv_i (2)]                 -> 5n values
//! Generalization: [rgb_i (3), uv_i (2), position_i (3)] -> 8n values
//! ```
//!
//! `rgb_i` is the bilinearly sampled color at the projection of `x`, or black
//! when `x` falls outside the reference frustum; `uv_i` is the projected
//! position normalized to `[-1, 1]`.

use nalgebra::{Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};
use crate::geometry::{project_point, Camera};
use crate::raster::RgbImage;

#[derive(Clone, Debug, PartialEq)]
pub struct ReferenceImage {
    image: RgbImage,
    camera: Camera,
}

impl ReferenceImage {
    pub fn new(image: RgbImage, camera: Camera) -> Result<Self> {
        ensure!(
            image.width() == camera.width() && image.height() == camera.height(),
            Validation,
            "image is {}x{} but camera expects {}x{}",
            image.width(),
            image.height(),
            camera.width(),
            camera.height()
        );
        ensure!(
            image.is_normalized(),
            Validation,
            "reference image values must lie in [0, 1]"
        );
        Ok(Self { image, camera })
    }

    pub fn image(&self) -> &RgbImage {
        &self.image
    }

    pub fn camera(&self) -> &Camera {
        &self.camera
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReferenceSet {
    images: Vec<ReferenceImage>,
}

impl ReferenceSet {
    pub fn new(images: Vec<ReferenceImage>) -> Result<Self> {
        ensure!(!images.is_empty(), Validation, "reference set is empty");
        let (w, h) = (images[0].image.width(), images[0].image.height());
        ensure!(
            images
                .iter()
                .all(|r| r.image.width() == w && r.image.height() == h),
            Validation,
            "reference images must share one resolution"
        );
        Ok(Self { images })
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn images(&self) -> &[ReferenceImage] {
        &self.images
    }

    pub fn iter(&self) -> std::slice::Iter<'_, ReferenceImage> {
        self.images.iter()
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureMode {
    /// Color and projected position per reference (5 values each).
    #[default]
    Standard,
    /// Additionally the reference camera position (8 values each).
    Generalization,
}

impl FeatureMode {
    pub fn block_len(self) -> usize {
        match self {
            FeatureMode::Standard => 5,
            FeatureMode::Generalization => 8,
        }
    }
}

/// How `Z` is laid out in the decoder input. With `uv_freqs > 0` each uv pair
/// is replaced by its sinusoidal encoding (`4·uv_freqs` values).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FeatureLayout {
    pub n_refs: usize,
    pub mode: FeatureMode,
    #[serde(default)]
    pub uv_freqs: usize,
}

impl FeatureLayout {
    pub fn block_len(&self) -> usize {
        let uv = if self.uv_freqs == 0 {
            2
        } else {
            4 * self.uv_freqs
        };
        self.mode.block_len() - 2 + uv
    }

    pub fn len(&self) -> usize {
        self.n_refs * self.block_len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FeatureVector {
    values: Vec<f64>,
    mode: FeatureMode,
}

impl FeatureVector {
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn mode(&self) -> FeatureMode {
        self.mode
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }
}

/// Bilinear lookup at continuous pixel coordinates. Coordinates outside the
/// image return black; those between the border and the outermost pixel
/// centers clamp to the edge.
pub fn sample_bilinear(image: &RgbImage, uv: Vector2<f64>) -> Result<[f64; 3]> {
    ensure!(
        !uv.x.is_nan() && !uv.y.is_nan(),
        InputDomain,
        "NaN sample coordinates"
    );
    let (w, h) = (image.width() as f64, image.height() as f64);
    if !(uv.x >= 0.0 && uv.x < w && uv.y >= 0.0 && uv.y < h) {
        return Ok([0.0; 3]);
    }
    Ok(bilinear_in_bounds(image, uv.x, uv.y))
}

#[inline]
fn bilinear_in_bounds(image: &RgbImage, u: f64, v: f64) -> [f64; 3] {
    let (w, h) = (image.width(), image.height());
    let x = u.clamp(0.5, w as f64 - 0.5) - 0.5;
    let y = v.clamp(0.5, h as f64 - 0.5) - 0.5;
    let (x0, y0) = (x.floor() as usize, y.floor() as usize);
    let (fx, fy) = (x - x0 as f64, y - y0 as f64);
    let x1 = (x0 + 1).min(w - 1);
    let y1 = (y0 + 1).min(h - 1);
    let data = image.data();
    let at = |px: usize, py: usize, c: usize| data[(py * w + px) * 3 + c] as f64;
    let mut out = [0.0; 3];
    for (c, o) in out.iter_mut().enumerate() {
        let top = at(x0, y0, c) * (1.0 - fx) + at(x1, y0, c) * fx;
        let bottom = at(x0, y1, c) * (1.0 - fx) + at(x1, y1, c) * fx;
        *o = top * (1.0 - fy) + bottom * fy;
    }
    out
}

pub fn build_features(x: &Vector3<f64>, refs: &ReferenceSet, mode: FeatureMode) -> Result<FeatureVector> {
    let layout = FeatureLayout {
        n_refs: refs.len(),
        mode,
        uv_freqs: 0,
    };
    let mut values = vec![0.0; layout.len()];
    build_features_into(x, refs, &layout, &mut values)?;
    Ok(FeatureVector { values, mode })
}

/// Writes the decoder input for `x` into `out`, which must hold exactly
/// `layout.len()` values.
pub fn build_features_into<T: num_traits::Float>(
    x: &Vector3<f64>,
    refs: &ReferenceSet,
    layout: &FeatureLayout,
    out: &mut [T],
) -> Result<()> {
    ensure!(
        layout.n_refs == refs.len(),
        Validation,
        "layout expects {} references, set has {}",
        layout.n_refs,
        refs.len()
    );
    ensure!(
        out.len() == layout.len(),
        Validation,
        "feature buffer holds {} values, layout needs {}",
        out.len(),
        layout.len()
    );
    ensure!(
        x.iter().all(|c| c.is_finite()),
        InputDomain,
        "non-finite sample point {x:?}"
    );
    let cast = |v: f64| T::from(v).expect("finite feature value");
    for (reference, block) in refs.iter().zip(out.chunks_exact_mut(layout.block_len())) {
        let p = project_point(x, &reference.camera);
        let rgb = if p.in_bounds {
            bilinear_in_bounds(&reference.image, p.uv.x, p.uv.y)
        } else {
            [0.0; 3]
        };
        let mut k = 0;
        for c in rgb {
            block[k] = cast(c);
            k += 1;
        }
        if layout.uv_freqs == 0 {
            block[k] = cast(p.uv_norm.x);
            block[k + 1] = cast(p.uv_norm.y);
            k += 2;
        } else {
            let enc = crate::decoder::positional_encode(p.uv_norm.as_slice(), layout.uv_freqs);
            for v in enc {
                block[k] = cast(v);
                k += 1;
            }
        }
        if layout.mode == FeatureMode::Generalization {
            for c in reference.camera.position().iter() {
                block[k] = cast(*c);
                k += 1;
            }
        }
        debug_assert_eq!(k, block.len());
    }
    Ok(())
}

/// First `k` references of `a` followed by the last `n − k` of `b`.
pub fn mix_references(a: &ReferenceSet, b: &ReferenceSet, k: usize) -> Result<ReferenceSet> {
    let n = a.len();
    ensure!(
        b.len() == n,
        Validation,
        "cannot mix reference sets of size {n} and {}",
        b.len()
    );
    ensure!(k <= n, Validation, "mix count {k} exceeds set size {n}");
    let images = a.images[..k]
        .iter()
        .chain(&b.images[k..])
        .cloned()
        .collect();
    ReferenceSet::new(images)
}
