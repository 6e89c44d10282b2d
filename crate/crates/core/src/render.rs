//! Sampling along rays and volumetric compositing.
//!
//! For samples `t_1 < … < t_N` with spacings `δ_i = t_{i+1} − t_i` (the last
//! spacing is [`LAST_DELTA`]) the pixel color is
//!
//! ```text
//! C = Σ_i T_i (1 − exp(−σ_i δ_i)) c_i + T_{N+1}·background,
//! T_i = exp(−Σ_{j<i} σ_j δ_j)
//! ```

use nalgebra::Vector3;
use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::decoder::{DecoderParams, ForwardCache, Gradients, RadianceOutput};
use crate::error::{ensure, Error, Result};
use crate::geometry::{ray_for_pixel, Camera, Ray};
use crate::raster::RgbImage;
use crate::real::Real;
use crate::repr::ReferenceSet;

/// Spacing assigned to the last sample on each ray.
pub const LAST_DELTA: f64 = 1e10;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplingMode {
    /// One uniform draw per bin.
    Stratified,
    /// Bin centers; deterministic.
    Midpoint,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RenderConfig {
    pub near: f64,
    pub far: f64,
    pub samples_per_ray: usize,
    pub background: [f64; 3],
    pub sampling: SamplingMode,
    pub seed: u64,
    /// Rays evaluated per decoder batch.
    pub chunk_rays: usize,
}

impl Default for RenderConfig {
    fn default() -> Self {
        Self {
            near: 2.0,
            far: 6.0,
            samples_per_ray: 64,
            background: [1.0; 3],
            sampling: SamplingMode::Midpoint,
            seed: 0,
            chunk_rays: 64,
        }
    }
}

impl RenderConfig {
    pub fn validate(&self) -> Result<()> {
        ensure!(
            self.near >= 0.0 && self.far > self.near,
            Validation,
            "render bounds must satisfy 0 <= near < far, got [{}, {}]",
            self.near,
            self.far
        );
        ensure!(self.samples_per_ray > 0, Validation, "samples_per_ray must be >= 1");
        ensure!(self.chunk_rays > 0, Validation, "chunk_rays must be >= 1");
        ensure!(
            self.background.iter().all(|c| (0.0..=1.0).contains(c)),
            Validation,
            "background must lie in [0, 1]"
        );
        Ok(())
    }
}

/// SplitMix64 finalizer; derives independent per-ray stream seeds.
pub fn mix_seed(a: u64, b: u64) -> u64 {
    let mut z = a ^ b.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(0x632B_E59B_D9B4_E019);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Splits `[t_near, t_far]` into `n` equal bins and picks one `t` per bin.
pub fn stratified_sample(ray: &Ray, n: usize, mode: SamplingMode, seed: u64) -> Result<Vec<f64>> {
    ensure!(n > 0, Validation, "cannot sample zero points along a ray");
    ensure!(
        ray.t_near.is_finite() && ray.t_far.is_finite() && ray.t_far > ray.t_near,
        Validation,
        "ray needs finite bounds, got [{}, {}]",
        ray.t_near,
        ray.t_far
    );
    let width = (ray.t_far - ray.t_near) / n as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..n)
        .map(|i| {
            let offset = match mode {
                SamplingMode::Midpoint => 0.5,
                SamplingMode::Stratified => rng.random::<f64>(),
            };
            ray.t_near + (i as f64 + offset) * width
        })
        .collect())
}

#[derive(Clone, Debug, PartialEq)]
pub struct RaySampleBatch<T> {
    pub t_values: Vec<f64>,
    pub deltas: Vec<T>,
    pub samples: Vec<RadianceOutput<T>>,
    /// Filled by [`composite`].
    pub weights: Vec<T>,
}

impl<T: Real> RaySampleBatch<T> {
    pub fn new(t_values: Vec<f64>, samples: Vec<RadianceOutput<T>>) -> Result<Self> {
        ensure!(
            !t_values.is_empty() && t_values.len() == samples.len(),
            Validation,
            "need one sample per t value ({} vs {})",
            t_values.len(),
            samples.len()
        );
        ensure!(
            t_values.windows(2).all(|w| w[1] > w[0]),
            Validation,
            "t values must be strictly ascending"
        );
        Ok(Self {
            deltas: deltas_for(&t_values),
            weights: vec![T::zero(); t_values.len()],
            t_values,
            samples,
        })
    }
}

pub fn deltas_for<T: Real>(t_values: &[f64]) -> Vec<T> {
    let mut deltas: Vec<T> = t_values.windows(2).map(|w| T::lit(w[1] - w[0])).collect();
    deltas.push(T::lit(LAST_DELTA));
    deltas
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RenderedPixel<T> {
    pub color: [T; 3],
    pub accumulated_alpha: T,
}

/// Alpha-composites the samples front to back over `background`, storing the
/// per-sample weights `T_i·(1 − exp(−σ_i δ_i))` in `batch.weights`.
pub fn composite<T: Real>(batch: &mut RaySampleBatch<T>, background: [T; 3]) -> Result<RenderedPixel<T>> {
    ensure!(
        batch
            .samples
            .iter()
            .all(|s| s.sigma.is_finite() && s.color.iter().all(|c| c.is_finite())),
        Numeric,
        "non-finite decoder output in sample batch"
    );
    ensure!(
        batch.samples.iter().all(|s| s.sigma >= T::zero()),
        Validation,
        "negative density in sample batch"
    );
    batch.weights.resize(batch.samples.len(), T::zero());
    let mut transmittance = T::one();
    let mut color = [T::zero(); 3];
    let mut alpha_sum = T::zero();
    for ((sample, &delta), weight) in batch.samples.iter().zip(&batch.deltas).zip(&mut batch.weights) {
        let tau = sample.sigma * delta;
        let alpha = -(-tau).exp_m1();
        let w = transmittance * alpha;
        *weight = w;
        for c in 0..3 {
            color[c] += w * sample.color[c];
        }
        alpha_sum += w;
        transmittance *= (-tau).exp();
    }
    for c in 0..3 {
        color[c] += (T::one() - alpha_sum) * background[c];
    }
    Ok(RenderedPixel {
        color,
        accumulated_alpha: alpha_sum,
    })
}

/// Per-sample gradients of `d_pixel·C` with respect to `σ_i` and `c_i`, given
/// a batch already passed through [`composite`].
pub fn composite_backward<T: Real>(
    batch: &RaySampleBatch<T>,
    background: [T; 3],
    d_pixel: [T; 3],
) -> (Vec<T>, Vec<[T; 3]>) {
    let n = batch.samples.len();
    let d_color = batch
        .weights
        .iter()
        .map(|&w| d_pixel.map(|g| g * w))
        .collect();
    // Transmittance after each sample: T_{i+1} = T_i − w_i.
    let mut after = Vec::with_capacity(n);
    let mut t = T::one();
    for (s, &delta) in batch.samples.iter().zip(&batch.deltas) {
        t *= (-(s.sigma * delta)).exp();
        after.push(t);
    }
    let dot = |a: [T; 3]| a[0] * d_pixel[0] + a[1] * d_pixel[1] + a[2] * d_pixel[2];
    let mut d_sigma = vec![T::zero(); n];
    // Color contribution from everything behind sample i.
    let mut behind = after[n - 1] * dot(background);
    for i in (0..n).rev() {
        let here = dot(batch.samples[i].color);
        d_sigma[i] = batch.deltas[i] * (after[i] * here - behind);
        behind += batch.weights[i] * here;
    }
    (d_sigma, d_color)
}

/// A ray to render, the reference set its samples are projected onto, and
/// the seed of its sampling stream.
#[derive(Clone, Copy, Debug)]
pub struct RayQuery<'a> {
    pub ray: Ray,
    pub refs: Option<&'a ReferenceSet>,
    pub seed: u64,
}

/// Decoder evaluation for a group of rays, kept for compositing and the
/// backward pass.
pub struct ChunkTrace<T> {
    samples_per_ray: usize,
    batches: Vec<RaySampleBatch<T>>,
    cache: ForwardCache<T>,
}

impl<T: Real> ChunkTrace<T> {
    pub fn batches(&self) -> &[RaySampleBatch<T>] {
        &self.batches
    }

    pub fn composite(&mut self, background: [T; 3]) -> Result<Vec<RenderedPixel<T>>> {
        self.batches
            .iter_mut()
            .map(|b| composite(b, background))
            .collect()
    }

    /// Accumulates parameter gradients for upstream pixel gradients
    /// `d_pixels` (one per ray). Must follow [`ChunkTrace::composite`].
    pub fn backward(
        &self,
        params: &DecoderParams<T>,
        background: [T; 3],
        d_pixels: &[[T; 3]],
        grads: &mut Gradients<T>,
    ) -> Result<()> {
        ensure!(
            d_pixels.len() == self.batches.len(),
            Validation,
            "{} pixel gradients for {} rays",
            d_pixels.len(),
            self.batches.len()
        );
        let rows = self.batches.len() * self.samples_per_ray;
        let mut d_color = Array2::zeros((rows, 3));
        let mut d_sigma = Array1::zeros(rows);
        for (r, (batch, &d_px)) in self.batches.iter().zip(d_pixels).enumerate() {
            let (ds, dc) = composite_backward(batch, background, d_px);
            for (i, (s, c)) in ds.into_iter().zip(dc).enumerate() {
                let row = r * self.samples_per_ray + i;
                d_sigma[row] = s;
                for k in 0..3 {
                    d_color[(row, k)] = c[k];
                }
            }
        }
        params.backward(&self.cache, d_color.view(), d_sigma.view(), grads)
    }
}

/// Samples every ray, builds decoder inputs and runs one batched forward
/// pass. `sigma_noise_std > 0` perturbs the density pre-activation with
/// Gaussian noise drawn from each ray's stream.
pub fn trace_chunk<T: Real>(
    params: &DecoderParams<T>,
    queries: &[RayQuery<'_>],
    config: &RenderConfig,
    sigma_noise_std: f64,
) -> Result<ChunkTrace<T>> {
    let arch = params.architecture();
    let n = config.samples_per_ray;
    let rows = queries.len() * n;
    let in_dim = arch.input_dim();
    let mut inputs = Array2::<T>::zeros((rows, in_dim));
    let mut dirs = Array2::<T>::zeros((rows, 3));
    let mut noise = (sigma_noise_std > 0.0).then(|| Array1::<T>::zeros(rows));
    let normal = Normal::new(0.0, sigma_noise_std.max(0.0))
        .map_err(|e| Error::Validation(format!("sigma noise: {e}")))?;
    let mut t_all = Vec::with_capacity(queries.len());
    {
        let buf = inputs
            .as_slice_mut()
            .expect("freshly allocated arrays are contiguous");
        for (r, q) in queries.iter().enumerate() {
            let ray = q.ray.with_bounds(config.near, config.far)?;
            let t_values = stratified_sample(&ray, n, config.sampling, q.seed)?;
            for (i, &t) in t_values.iter().enumerate() {
                let row = r * n + i;
                let x: Vector3<f64> = ray.at(t);
                arch.write_input(&x, q.refs, &mut buf[row * in_dim..(row + 1) * in_dim])?;
                for k in 0..3 {
                    dirs[(row, k)] = T::lit(ray.direction[k]);
                }
            }
            if let Some(noise) = noise.as_mut() {
                let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(q.seed, 0x5167_4d41));
                for i in 0..n {
                    noise[r * n + i] = T::lit(normal.sample(&mut rng));
                }
            }
            t_all.push(t_values);
        }
    }
    let (out, cache) = params.forward(inputs.view(), dirs.view(), noise.as_ref().map(|a| a.view()))?;
    let batches = t_all
        .into_iter()
        .enumerate()
        .map(|(r, t_values)| {
            let samples = (0..n).map(|i| out.get(r * n + i)).collect();
            RaySampleBatch::new(t_values, samples)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ChunkTrace {
        samples_per_ray: n,
        batches,
        cache,
    })
}

pub fn background<T: Real>(config: &RenderConfig) -> [T; 3] {
    config.background.map(T::lit)
}

/// Renders a single ray: sample, build features, decode, composite.
pub fn render_ray<T: Real>(
    params: &DecoderParams<T>,
    refs: Option<&ReferenceSet>,
    ray: &Ray,
    seed: u64,
    config: &RenderConfig,
) -> Result<RenderedPixel<T>> {
    config.validate()?;
    let query = RayQuery {
        ray: *ray,
        refs,
        seed,
    };
    let mut trace = trace_chunk(params, &[query], config, 0.0)?;
    Ok(trace.composite(background(config))?[0])
}

/// Seed of the sampling stream for pixel `index` of an image render.
pub fn pixel_seed(config: &RenderConfig, index: usize) -> u64 {
    mix_seed(config.seed, index as u64)
}

/// Renders every pixel center of `camera`, row-major. Rays are processed in
/// groups of `chunk_rays` across the current rayon pool; the result does not
/// depend on the chunk size or the number of threads.
pub fn render_image<T: Real>(
    params: &DecoderParams<T>,
    refs: Option<&ReferenceSet>,
    camera: &Camera,
    config: &RenderConfig,
) -> Result<RgbImage> {
    config.validate()?;
    let (w, h) = (camera.width(), camera.height());
    let bg = background::<T>(config);
    let indices: Vec<usize> = (0..w * h).collect();
    let pixels = indices
        .par_chunks(config.chunk_rays)
        .map(|chunk| {
            let queries = chunk
                .iter()
                .map(|&i| {
                    let (x, y) = (i % w, i / w);
                    Ok(RayQuery {
                        ray: ray_for_pixel(camera, x as f64 + 0.5, y as f64 + 0.5)?,
                        refs,
                        seed: pixel_seed(config, i),
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            trace_chunk(params, &queries, config, 0.0)?.composite(bg)
        })
        .collect::<Result<Vec<_>>>()?;
    let data = pixels
        .into_iter()
        .flatten()
        .flat_map(|p| p.color.map(|c| c.as_f64().clamp(0.0, 1.0) as f32))
        .collect();
    RgbImage::new(w, h, data)
}
