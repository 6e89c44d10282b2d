//! Photometric training of the decoder with Adam.
//!
//! Each step draws `batch_rays` random pixels from the training views (across
//! objects when there are several), renders them through the reference
//! images, and minimizes the mean squared color error. Only decoder weights
//! change; reference images are read-only inputs.

use std::f64::consts::TAU;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{ObjectViews, View};
use crate::decoder::{init_params, Architecture, DecoderParams, Gradients, InputKind, BASELINE_POSITION_FREQS};
use crate::error::{ensure, Error, Result};
use crate::geometry::ray_for_pixel;
use crate::real::Real;
use crate::render::{background, mix_seed, trace_chunk, RayQuery, RenderConfig, SamplingMode};
use crate::repr::{FeatureLayout, FeatureMode, ReferenceSet};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    /// Decoder over projected reference images.
    MultiPlane,
    /// Positional-encoding MLP over the 3D point (vanilla NeRF, single pass).
    Baseline,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitStrategy {
    FirstN,
    AzimuthStratified,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    /// Learning rate reached at the last iteration (exponential decay).
    pub final_learning_rate: f64,
    pub batch_rays: usize,
    pub iterations: usize,
    pub samples_per_ray: usize,
    pub sigma_noise_std: f64,
    pub seed: u64,
    pub mode: FeatureMode,
    pub model: ModelKind,
    pub n_refs: usize,
    pub split: SplitStrategy,
    pub hidden_width: usize,
    pub hidden_layers: usize,
    pub color_width: usize,
    pub dir_freqs: usize,
    pub uv_freqs: usize,
    pub near: f64,
    pub far: f64,
    pub background: [f64; 3],
    /// Rays per gradient shard. Shards are reduced in a fixed order, so this
    /// (not the thread count) determines floating-point summation order.
    pub chunk_rays: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 5e-4,
            final_learning_rate: 5e-5,
            batch_rays: 1024,
            iterations: 20_000,
            samples_per_ray: 64,
            sigma_noise_std: 0.0,
            seed: 0,
            mode: FeatureMode::Standard,
            model: ModelKind::MultiPlane,
            n_refs: 12,
            split: SplitStrategy::AzimuthStratified,
            hidden_width: 256,
            hidden_layers: 8,
            color_width: 128,
            dir_freqs: 4,
            uv_freqs: 0,
            near: 2.0,
            far: 6.0,
            background: [1.0; 3],
            chunk_rays: 32,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        ensure!(self.iterations > 0, Validation, "iterations must be >= 1");
        ensure!(self.batch_rays > 0, Validation, "batch_rays must be >= 1");
        ensure!(self.chunk_rays > 0, Validation, "chunk_rays must be >= 1");
        ensure!(
            self.learning_rate > 0.0 && self.final_learning_rate > 0.0,
            Validation,
            "learning rates must be positive"
        );
        ensure!(
            self.sigma_noise_std >= 0.0 && self.sigma_noise_std.is_finite(),
            Validation,
            "sigma_noise_std must be a finite non-negative number"
        );
        ensure!(
            self.model == ModelKind::Baseline || self.n_refs > 0,
            Validation,
            "n_refs must be >= 1"
        );
        self.render_config(SamplingMode::Stratified).validate()?;
        self.architecture().validate()
    }

    pub fn architecture(&self) -> Architecture {
        let input = match self.model {
            ModelKind::MultiPlane => InputKind::MultiPlane(FeatureLayout {
                n_refs: self.n_refs,
                mode: self.mode,
                uv_freqs: self.uv_freqs,
            }),
            ModelKind::Baseline => InputKind::Positional {
                n_freq: BASELINE_POSITION_FREQS,
            },
        };
        Architecture {
            input,
            hidden_width: self.hidden_width,
            hidden_layers: self.hidden_layers,
            color_width: self.color_width,
            dir_freqs: self.dir_freqs,
        }
    }

    pub fn render_config(&self, sampling: SamplingMode) -> RenderConfig {
        RenderConfig {
            near: self.near,
            far: self.far,
            samples_per_ray: self.samples_per_ray,
            background: self.background,
            sampling,
            seed: self.seed,
            chunk_rays: self.chunk_rays,
        }
    }

    /// `lr₀·(lr_final/lr₀)^(step/iterations)`.
    pub fn learning_rate_at(&self, step: u64) -> f64 {
        let progress = (step as f64 / self.iterations as f64).min(1.0);
        self.learning_rate * (self.final_learning_rate / self.learning_rate).powf(progress)
    }
}

/// Mean over rays of the squared color error, `Σ_r ‖pred_r − truth_r‖² / R`.
pub fn mse_loss(pred: &[[f64; 3]], truth: &[[f64; 3]]) -> Result<f64> {
    ensure!(
        pred.len() == truth.len(),
        Validation,
        "{} predictions for {} targets",
        pred.len(),
        truth.len()
    );
    ensure!(!pred.is_empty(), Validation, "empty batch");
    let total: f64 = pred
        .iter()
        .zip(truth)
        .map(|(p, t)| (0..3).map(|c| (p[c] - t[c]).powi(2)).sum::<f64>())
        .sum();
    Ok(total / pred.len() as f64)
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T> {
    pub first_moment: Gradients<T>,
    pub second_moment: Gradients<T>,
    pub step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl<T: Real> AdamState<T> {
    pub fn new(params: &DecoderParams<T>) -> Self {
        Self {
            first_moment: params.zeros_like(),
            second_moment: params.zeros_like(),
            step: 0,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// One bias-corrected Adam update in place.
pub fn adam_step<T: Real>(
    params: &mut DecoderParams<T>,
    grads: &Gradients<T>,
    state: &mut AdamState<T>,
    lr: f64,
) -> Result<()> {
    ensure!(
        params.is_congruent(grads)
            && params.is_congruent(&state.first_moment)
            && params.is_congruent(&state.second_moment),
        Validation,
        "parameters, gradients and optimizer state differ in shape"
    );
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2) = (T::lit(state.beta1), T::lit(state.beta2));
    let one = T::one();
    let c1 = T::lit(1.0 - state.beta1.powi(t));
    let c2 = T::lit(1.0 - state.beta2.powi(t));
    let lr = T::lit(lr);
    let eps = T::lit(state.epsilon);
    for (((p, &g), m), v) in params
        .iter_flat_mut()
        .zip(grads.iter_flat())
        .zip(state.first_moment.iter_flat_mut())
        .zip(state.second_moment.iter_flat_mut())
    {
        *m = b1 * *m + (one - b1) * g;
        *v = b2 * *v + (one - b2) * g * g;
        let m_hat = *m / c1;
        let v_hat = *v / c2;
        *p -= lr * m_hat / (v_hat.sqrt() + eps);
    }
    Ok(())
}

fn azimuth(view: &View) -> f64 {
    let p = view.camera.position();
    p.y.atan2(p.x)
}

fn circular_distance(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(TAU);
    d.min(TAU - d)
}

/// Indices of the views chosen as references, in selection order.
pub fn select_references(views: &[View], n_refs: usize, strategy: SplitStrategy) -> Result<Vec<usize>> {
    ensure!(n_refs > 0, Validation, "need at least one reference");
    ensure!(
        n_refs < views.len(),
        Validation,
        "cannot take {n_refs} references from {} views and keep training views",
        views.len()
    );
    Ok(match strategy {
        SplitStrategy::FirstN => (0..n_refs).collect(),
        SplitStrategy::AzimuthStratified => {
            // Targets evenly spaced in azimuth, anchored at the first view;
            // each target takes the nearest unused view.
            let angles: Vec<f64> = views.iter().map(azimuth).collect();
            let mut used = vec![false; views.len()];
            let mut picked = Vec::with_capacity(n_refs);
            for k in 0..n_refs {
                let target = angles[0] + k as f64 * TAU / n_refs as f64;
                let best = (0..views.len())
                    .filter(|&i| !used[i])
                    .min_by(|&a, &b| {
                        circular_distance(angles[a], target).total_cmp(&circular_distance(angles[b], target))
                    })
                    .expect("fewer references than views");
                used[best] = true;
                picked.push(best);
            }
            picked
        }
    })
}

/// Splits posed views into a reference set and the remaining training views
/// (original order preserved).
pub fn split_views(views: &[View], n_refs: usize, strategy: SplitStrategy) -> Result<(ReferenceSet, Vec<View>)> {
    let picked = select_references(views, n_refs, strategy)?;
    let refs = ReferenceSet::new(
        picked
            .iter()
            .map(|&i| views[i].to_reference())
            .collect::<Result<_>>()?,
    )?;
    let rest = views
        .iter()
        .enumerate()
        .filter(|(i, _)| !picked.contains(i))
        .map(|(_, v)| v.clone())
        .collect();
    Ok((refs, rest))
}

/// The views of one object together with the references its rays are
/// projected onto (`None` for the baseline model).
#[derive(Clone, Debug)]
pub struct TrainingObject {
    pub refs: Option<ReferenceSet>,
    pub views: Vec<View>,
}

#[derive(Clone, Debug)]
pub struct TrainingSet {
    pub objects: Vec<TrainingObject>,
}

impl TrainingSet {
    /// Builds the training set for one scene: references are split off unless
    /// the model does not use them.
    pub fn single(views: &[View], config: &TrainConfig) -> Result<Self> {
        let object = match config.model {
            ModelKind::MultiPlane => {
                let (refs, rest) = split_views(views, config.n_refs, config.split)?;
                TrainingObject {
                    refs: Some(refs),
                    views: rest,
                }
            }
            ModelKind::Baseline => TrainingObject {
                refs: None,
                views: views.to_vec(),
            },
        };
        Ok(Self {
            objects: vec![object],
        })
    }

    pub fn multi(objects: &[ObjectViews], config: &TrainConfig) -> Result<Self> {
        let objects = objects
            .iter()
            .map(|o| {
                let (refs, rest) = split_views(&o.views.views, config.n_refs, config.split)?;
                Ok(TrainingObject {
                    refs: Some(refs),
                    views: rest,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { objects })
    }

    fn validate(&self) -> Result<()> {
        ensure!(
            !self.objects.is_empty() && self.objects.iter().all(|o| !o.views.is_empty()),
            Validation,
            "training set has no training views"
        );
        Ok(())
    }
}

/// A sampled training pixel.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PixelDraw {
    pub object: usize,
    pub view: usize,
    pub x: usize,
    pub y: usize,
}

/// Pixels for `step`. With two or more objects every batch of two or more
/// rays touches at least two of them.
pub fn draw_pixels(set: &TrainingSet, batch_rays: usize, seed: u64, step: u64) -> Vec<PixelDraw> {
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, step.wrapping_mul(2).wrapping_add(1)));
    let n_obj = set.objects.len();
    let mut objects: Vec<usize> = (0..batch_rays).map(|_| rng.random_range(0..n_obj)).collect();
    if n_obj > 1 && batch_rays > 1 && objects.iter().all(|&o| o == objects[0]) {
        let shift = rng.random_range(1..n_obj);
        objects[batch_rays - 1] = (objects[0] + shift) % n_obj;
    }
    objects
        .into_iter()
        .map(|object| {
            let views = &set.objects[object].views;
            let view = rng.random_range(0..views.len());
            let img = &views[view].image;
            PixelDraw {
                object,
                view,
                x: rng.random_range(0..img.width()),
                y: rng.random_range(0..img.height()),
            }
        })
        .collect()
}

/// One optimization step; returns the batch loss before the update.
pub fn train_step<T: Real>(
    params: &mut DecoderParams<T>,
    state: &mut AdamState<T>,
    set: &TrainingSet,
    config: &TrainConfig,
    step: u64,
) -> Result<f64> {
    set.validate()?;
    let draws = draw_pixels(set, config.batch_rays, config.seed, step);
    let render = config.render_config(SamplingMode::Stratified);
    let bg = background::<T>(&render);
    let scale = T::lit(2.0 / draws.len() as f64);
    let step_seed = mix_seed(config.seed, step);
    let frozen: &DecoderParams<T> = params;

    let shards = draws
        .par_chunks(config.chunk_rays)
        .enumerate()
        .map(|(c, chunk)| -> Result<(f64, Gradients<T>)> {
            let mut queries = Vec::with_capacity(chunk.len());
            let mut targets = Vec::with_capacity(chunk.len());
            for (k, d) in chunk.iter().enumerate() {
                let object = &set.objects[d.object];
                let view = &object.views[d.view];
                queries.push(RayQuery {
                    ray: ray_for_pixel(&view.camera, d.x as f64 + 0.5, d.y as f64 + 0.5)?,
                    refs: object.refs.as_ref(),
                    seed: mix_seed(step_seed, (c * config.chunk_rays + k) as u64),
                });
                targets.push(view.image.pixel(d.x, d.y));
            }
            let mut trace = trace_chunk(frozen, &queries, &render, config.sigma_noise_std)?;
            let pixels = trace.composite(bg)?;
            let mut loss = 0.0;
            let d_pixels: Vec<[T; 3]> = pixels
                .iter()
                .zip(&targets)
                .map(|(p, t)| {
                    let diff = [0, 1, 2].map(|c| p.color[c] - T::lit(t[c] as f64));
                    loss += diff.iter().map(|d| d.as_f64().powi(2)).sum::<f64>();
                    diff.map(|d| d * scale)
                })
                .collect();
            let mut grads = frozen.zeros_like();
            trace.backward(frozen, bg, &d_pixels, &mut grads)?;
            Ok((loss, grads))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut total = 0.0;
    let mut grads = params.zeros_like();
    for (loss, g) in &shards {
        total += loss;
        grads.accumulate(g);
    }
    let loss = total / draws.len() as f64;
    if !loss.is_finite() {
        return Err(Error::Numeric(format!("loss became {loss} at step {step}")));
    }
    adam_step(params, &grads, state, config.learning_rate_at(step))?;
    Ok(loss)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepReport {
    pub step: u64,
    pub loss: f64,
    pub learning_rate: f64,
}

/// Optimizer state plus the data it trains on.
pub struct Trainer<T> {
    pub params: DecoderParams<T>,
    pub adam: AdamState<T>,
    pub set: TrainingSet,
    pub config: TrainConfig,
}

impl<T: Real> Trainer<T> {
    pub fn new(set: TrainingSet, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        set.validate()?;
        if config.model == ModelKind::MultiPlane {
            for o in &set.objects {
                let refs = o.refs.as_ref().ok_or_else(|| {
                    Error::Validation("multi-image model needs references for every object".into())
                })?;
                ensure!(
                    refs.len() == config.n_refs,
                    Validation,
                    "object has {} references, config expects {}",
                    refs.len(),
                    config.n_refs
                );
            }
        }
        let params = init_params(&config.architecture(), config.seed)?;
        let adam = AdamState::new(&params);
        Ok(Self {
            params,
            adam,
            set,
            config,
        })
    }

    pub fn step(&mut self) -> Result<StepReport> {
        let step = self.adam.step;
        let loss = train_step(&mut self.params, &mut self.adam, &self.set, &self.config, step)?;
        Ok(StepReport {
            step,
            loss,
            learning_rate: self.config.learning_rate_at(step),
        })
    }

    /// Runs the remaining iterations, calling `observe` after every step.
    pub fn run(mut self, mut observe: impl FnMut(&StepReport, &DecoderParams<T>) -> Result<()>) -> Result<DecoderParams<T>> {
        while (self.adam.step as usize) < self.config.iterations {
            let report = self.step()?;
            observe(&report, &self.params)?;
        }
        Ok(self.params)
    }
}

/// Trains one decoder over several objects (camera positions in the input),
/// sampling every batch across objects.
pub fn train_multi_object<T: Real>(objects: &[ObjectViews], config: &TrainConfig) -> Result<DecoderParams<T>> {
    ensure!(
        config.mode == FeatureMode::Generalization,
        Validation,
        "multi-object training requires generalization features"
    );
    ensure!(
        config.model == ModelKind::MultiPlane,
        Validation,
        "multi-object training requires the multi-image model"
    );
    ensure!(
        objects.len() >= 2,
        Validation,
        "multi-object training needs at least two objects, got {}",
        objects.len()
    );
    let set = TrainingSet::multi(objects, config)?;
    Trainer::new(set, config.clone())?.run(|_, _| Ok(()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{orbit_pose, Camera};
    use crate::raster::RgbImage;

    fn views_at(azimuths: &[f64], size: usize) -> Vec<View> {
        azimuths
            .iter()
            .enumerate()
            .map(|(i, &az)| View {
                path: format!("v{i}").into(),
                image: RgbImage::filled(size, size, [0.1 * (i % 10) as f32, 0.5, 0.2]).unwrap(),
                camera: Camera::from_fov_x(size, size, 0.7, orbit_pose(az, 0.4, 4.0).unwrap()).unwrap(),
            })
            .collect()
    }

    #[test]
    fn mse_cases() {
        assert_eq!(mse_loss(&[[0.2, 0.3, 0.4]], &[[0.2, 0.3, 0.4]]).unwrap(), 0.0);
        assert!((mse_loss(&[[0.6, 0.0, 0.0]], &[[0.5, 0.0, 0.0]]).unwrap() - 0.01).abs() < 1e-15);
        let p = [[0.1, 0.2, 0.3], [0.9, 0.1, 0.0], [0.4, 0.4, 0.4]];
        let t = [[0.0, 0.2, 0.5], [1.0, 0.0, 0.0], [0.3, 0.3, 0.9]];
        let base = mse_loss(&p, &t).unwrap();
        let (mut pr, mut tr) = (p, t);
        pr.reverse();
        tr.reverse();
        assert!((mse_loss(&pr, &tr).unwrap() - base).abs() < 1e-15);
        assert!(mse_loss(&p[..2], &t).is_err());
    }

    #[test]
    fn adam_first_step_moves_by_learning_rate() {
        let arch = Architecture::multiplane(1, FeatureMode::Standard).with_size(3, 1, 2);
        let params = init_params::<f64>(&arch, 0).unwrap();
        let mut grads = params.zeros_like();
        for (i, g) in grads.iter_flat_mut().enumerate() {
            *g = if i % 3 == 0 { 0.0 } else { (i as f64 - 7.5) * 10f64.powi(i as i32 % 5 - 2) };
        }
        let mut state = AdamState::new(&params);
        let mut updated = params.clone();
        adam_step(&mut updated, &grads, &mut state, 1e-3).unwrap();
        for ((p0, p1), g) in params.iter_flat().zip(updated.iter_flat()).zip(grads.iter_flat()) {
            if *g == 0.0 {
                assert_eq!(p0, p1);
            } else {
                let step = p0 - p1;
                assert!((step - 1e-3 * g.signum()).abs() < 1e-3 * 1e-4, "{step} for grad {g}");
            }
        }
        // Same state and inputs, same result.
        let mut again = params.clone();
        let mut state2 = AdamState::new(&params);
        adam_step(&mut again, &grads, &mut state2, 1e-3).unwrap();
        assert_eq!(again, updated);
        assert_eq!(state2, state);
    }

    #[test]
    fn adam_rejects_shape_mismatch() {
        let a = init_params::<f64>(&Architecture::multiplane(1, FeatureMode::Standard).with_size(3, 1, 2), 0).unwrap();
        let b = init_params::<f64>(&Architecture::multiplane(2, FeatureMode::Standard).with_size(3, 1, 2), 0).unwrap();
        let mut state = AdamState::new(&a);
        let mut p = a.clone();
        assert!(adam_step(&mut p, &b, &mut state, 1e-3).is_err());
    }

    #[test]
    fn first_n_split() {
        let views = views_at(&(0..10).map(|i| i as f64).collect::<Vec<_>>(), 4);
        let picked = select_references(&views, 3, SplitStrategy::FirstN).unwrap();
        assert_eq!(picked, vec![0, 1, 2]);
        let (refs, rest) = split_views(&views, 3, SplitStrategy::FirstN).unwrap();
        assert_eq!(refs.len(), 3);
        assert_eq!(rest.len(), 7);
        assert_eq!(rest[0].path, views[3].path);
        assert!(split_views(&views, 10, SplitStrategy::FirstN).is_err());
    }

    #[test]
    fn splits_are_disjoint() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let az: Vec<f64> = (0..30).map(|_| rng.random_range(0.0..TAU)).collect();
        let views = views_at(&az, 2);
        for strategy in [SplitStrategy::FirstN, SplitStrategy::AzimuthStratified] {
            for n in 1..30 {
                let mut picked = select_references(&views, n, strategy).unwrap();
                picked.sort();
                picked.dedup();
                assert_eq!(picked.len(), n);
                let (_, rest) = split_views(&views, n, strategy).unwrap();
                assert_eq!(rest.len(), 30 - n);
                assert!(rest.iter().all(|v| picked.iter().all(|&i| views[i].path != v.path)));
            }
        }
    }

    #[test]
    fn azimuth_split_spacing() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let az: Vec<f64> = (0..100).map(|_| rng.random_range(0.0..TAU)).collect();
        let views = views_at(&az, 2);
        let picked = select_references(&views, 12, SplitStrategy::AzimuthStratified).unwrap();
        let mut angles: Vec<f64> = picked.iter().map(|&i| az[i]).collect();
        angles.sort_by(f64::total_cmp);
        let uniform = TAU / 12.0;
        for k in 0..12 {
            let gap = (angles[(k + 1) % 12] - angles[k]).rem_euclid(TAU);
            assert!(gap >= uniform / 2.0 && gap <= uniform * 2.0, "gap {gap} vs {uniform}");
        }
    }

    #[test]
    fn batches_touch_several_objects() {
        let object = |seed: usize| TrainingObject {
            refs: None,
            views: views_at(&[seed as f64], 3),
        };
        let set = TrainingSet {
            objects: (0..5).map(object).collect(),
        };
        for step in 0..200 {
            for batch in [2, 3, 8] {
                let draws = draw_pixels(&set, batch, 9, step);
                let first = draws[0].object;
                assert!(draws.iter().any(|d| d.object != first));
            }
        }
    }

    #[test]
    fn lr_decays_exponentially() {
        let cfg = TrainConfig {
            iterations: 100,
            ..TrainConfig::default()
        };
        assert_eq!(cfg.learning_rate_at(0), 5e-4);
        assert!((cfg.learning_rate_at(50) - (5e-4f64 * 5e-5).sqrt()).abs() < 1e-12);
        assert!((cfg.learning_rate_at(100) - 5e-5).abs() < 1e-15);
    }

    #[test]
    fn empty_training_set_is_rejected() {
        let cfg = TrainConfig {
            model: ModelKind::Baseline,
            hidden_width: 4,
            hidden_layers: 1,
            color_width: 4,
            ..TrainConfig::default()
        };
        let set = TrainingSet {
            objects: vec![TrainingObject {
                refs: None,
                views: vec![],
            }],
        };
        let mut params = init_params::<f32>(&cfg.architecture(), 0).unwrap();
        let mut state = AdamState::new(&params);
        assert!(matches!(
            train_step(&mut params, &mut state, &set, &cfg, 0),
            Err(Error::Validation(_))
        ));
    }

    fn tiny_scene() -> (TrainingSet, TrainConfig) {
        use crate::dataset::toy::{ring_cameras, ToyObject, SYNTHETIC_FOV_X};
        let scene = ToyObject::desk_scene();
        let refs = ring_cameras(3, 16, 0.0)
            .unwrap()
            .into_iter()
            .map(|cam| {
                let img = scene.render(&cam, 1).unwrap().composite([1.0; 3]).quantized();
                crate::repr::ReferenceImage::new(img, cam).unwrap()
            })
            .collect();
        let cam = Camera::from_fov_x(5, 2, SYNTHETIC_FOV_X, orbit_pose(0.5, 0.5, 4.0).unwrap()).unwrap();
        let image = scene.render(&cam, 1).unwrap().composite([1.0; 3]).quantized();
        let set = TrainingSet {
            objects: vec![TrainingObject {
                refs: Some(ReferenceSet::new(refs).unwrap()),
                views: vec![View {
                    path: "train".into(),
                    image,
                    camera: cam,
                }],
            }],
        };
        let config = TrainConfig {
            learning_rate: 5e-3,
            final_learning_rate: 1e-3,
            batch_rays: 10,
            iterations: 200,
            samples_per_ray: 16,
            n_refs: 3,
            hidden_width: 32,
            hidden_layers: 2,
            color_width: 16,
            chunk_rays: 4,
            ..TrainConfig::default()
        };
        (set, config)
    }

    #[test]
    fn overfits_ten_pixels() {
        let (set, config) = tiny_scene();
        let mut losses = Vec::new();
        Trainer::<f32>::new(set, config)
            .unwrap()
            .run(|r, _| {
                losses.push(r.loss);
                Ok(())
            })
            .unwrap();
        let first = losses[..5].iter().sum::<f64>() / 5.0;
        let last = losses[losses.len() - 5..].iter().sum::<f64>() / 5.0;
        assert!(last * 10.0 <= first, "loss {first} -> {last}");
    }

    #[test]
    fn training_is_deterministic_and_leaves_references_untouched() {
        let (set, mut config) = tiny_scene();
        config.iterations = 20;
        let before = set.objects[0].refs.clone().unwrap();
        let mut trainer = Trainer::<f32>::new(set.clone(), config.clone()).unwrap();
        for _ in 0..config.iterations {
            trainer.step().unwrap();
        }
        let after = trainer.set.objects[0].refs.as_ref().unwrap();
        for (x, y) in before.iter().zip(after.iter()) {
            assert_eq!(x.image().data(), y.image().data());
            assert_eq!(x.camera().pose(), y.camera().pose());
        }
        let pool = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap();
        let again = pool.install(|| Trainer::<f32>::new(set, config).unwrap().run(|_, _| Ok(())).unwrap());
        assert_eq!(trainer.params, again);
    }

    #[test]
    fn generalization_requires_two_objects() {
        let cfg = TrainConfig {
            mode: FeatureMode::Generalization,
            ..TrainConfig::default()
        };
        assert!(matches!(
            train_multi_object::<f32>(&[], &cfg),
            Err(Error::Validation(_))
        ));
        let standard = TrainConfig::default();
        assert!(train_multi_object::<f32>(&[], &standard).is_err());
    }
}
