//! The implicit decoder: a small ReLU MLP mapping a per-sample input vector
//! and a viewing direction to `(rgb, σ)`, with hand-written reverse-mode
//! gradients.
//!
//! Topology (vanilla NeRF head layout):
//!
//! ```text
//! input ─► [dense+relu] × hidden_layers ─┬─► dense ─► softplus ─► σ
//!                                         └─► dense (feature) ─┐
//!                          encode(dir, dir_freqs) ─────────────┴─► dense+relu ─► dense ─► sigmoid ─► rgb
//! ```
//!
//! Weights are stored `fan_in × fan_out` so a batch `X` (rows are samples)
//! maps to `X·W + b`.

use nalgebra::Vector3;
use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis, Zip};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::real::{sigmoid, softplus, Real};
use crate::repr::{build_features_into, FeatureLayout, FeatureMode, FeatureVector, ReferenceSet};

/// Frequencies used for the point encoding of the baseline decoder.
pub const BASELINE_POSITION_FREQS: usize = 10;

/// What the first layer consumes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum InputKind {
    /// Colors and positions projected onto reference images.
    MultiPlane(FeatureLayout),
    /// Sinusoidal encoding of the 3D point itself (vanilla NeRF).
    Positional { n_freq: usize },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    pub input: InputKind,
    pub hidden_width: usize,
    pub hidden_layers: usize,
    pub color_width: usize,
    pub dir_freqs: usize,
}

impl Architecture {
    /// Default multi-image decoder: 8 × 256 trunk, 128-wide color branch.
    pub fn multiplane(n_refs: usize, mode: FeatureMode) -> Self {
        Self {
            input: InputKind::MultiPlane(FeatureLayout {
                n_refs,
                mode,
                uv_freqs: 0,
            }),
            hidden_width: 256,
            hidden_layers: 8,
            color_width: 128,
            dir_freqs: 4,
        }
    }

    pub fn baseline() -> Self {
        Self {
            input: InputKind::Positional {
                n_freq: BASELINE_POSITION_FREQS,
            },
            ..Self::multiplane(1, FeatureMode::Standard)
        }
    }

    pub fn with_size(mut self, hidden_width: usize, hidden_layers: usize, color_width: usize) -> Self {
        self.hidden_width = hidden_width;
        self.hidden_layers = hidden_layers;
        self.color_width = color_width;
        self
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(
            self.hidden_width > 0 && self.hidden_layers > 0 && self.color_width > 0,
            Validation,
            "decoder widths and depth must be positive: {self:?}"
        );
        ensure!(self.input_dim() > 0, Validation, "decoder input is empty");
        if let InputKind::MultiPlane(layout) = self.input {
            ensure!(layout.n_refs > 0, Validation, "decoder needs at least one reference");
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        match self.input {
            InputKind::MultiPlane(layout) => layout.len(),
            InputKind::Positional { n_freq } => 3 * 2 * n_freq,
        }
    }

    pub fn dir_dim(&self) -> usize {
        3 * 2 * self.dir_freqs
    }

    pub fn feature_layout(&self) -> Option<FeatureLayout> {
        match self.input {
            InputKind::MultiPlane(layout) => Some(layout),
            InputKind::Positional { .. } => None,
        }
    }

    fn sigma_layer(&self) -> usize {
        self.hidden_layers
    }

    fn feature_layer(&self) -> usize {
        self.hidden_layers + 1
    }

    fn view_layer(&self) -> usize {
        self.hidden_layers + 2
    }

    fn rgb_layer(&self) -> usize {
        self.hidden_layers + 3
    }

    /// `(fan_in, fan_out)` of every layer in storage order: trunk, σ head,
    /// feature, view-dependent hidden, rgb head.
    pub fn layer_shapes(&self) -> Vec<(usize, usize)> {
        let w = self.hidden_width;
        let mut shapes = vec![(self.input_dim(), w)];
        shapes.extend(std::iter::repeat_n((w, w), self.hidden_layers - 1));
        shapes.push((w, 1));
        shapes.push((w, w));
        shapes.push((w + self.dir_dim(), self.color_width));
        shapes.push((self.color_width, 3));
        shapes
    }

    pub fn parameter_count(&self) -> usize {
        self.layer_shapes().iter().map(|(i, o)| i * o + o).sum()
    }

    /// Writes the first-layer input for the sample point `x` into `out`.
    pub fn write_input<T: Real>(
        &self,
        x: &Vector3<f64>,
        refs: Option<&ReferenceSet>,
        out: &mut [T],
    ) -> Result<()> {
        match self.input {
            InputKind::MultiPlane(layout) => {
                let refs = refs.ok_or_else(|| {
                    Error::Validation("multi-image decoder requires a reference set".into())
                })?;
                build_features_into(x, refs, &layout, out)
            }
            InputKind::Positional { n_freq } => {
                ensure!(
                    out.len() == 6 * n_freq,
                    Validation,
                    "input buffer holds {}, expected {}",
                    out.len(),
                    6 * n_freq
                );
                encode_into(x.as_slice(), n_freq, out);
                Ok(())
            }
        }
    }
}

/// Sinusoidal encoding: for each component `v_i` (outer) and each frequency
/// `2^k`, `k < n_freq` (inner), emits `sin(2^k·π·v_i), cos(2^k·π·v_i)`.
pub fn positional_encode(v: &[f64], n_freq: usize) -> Vec<f64> {
    let mut out = vec![0.0; v.len() * 2 * n_freq];
    encode_into(v, n_freq, &mut out);
    out
}

pub(crate) fn encode_into<T: Real>(v: &[f64], n_freq: usize, out: &mut [T]) {
    debug_assert_eq!(out.len(), v.len() * 2 * n_freq);
    let mut k = 0;
    for &c in v {
        let mut f = std::f64::consts::PI;
        for _ in 0..n_freq {
            let (s, co) = (f * c).sin_cos();
            out[k] = T::lit(s);
            out[k + 1] = T::lit(co);
            k += 2;
            f *= 2.0;
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Layer<T> {
    /// `fan_in × fan_out`.
    pub weight: Array2<T>,
    pub bias: Array1<T>,
}

impl<T: Real> Layer<T> {
    fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Self {
            weight: Array2::zeros((fan_in, fan_out)),
            bias: Array1::zeros(fan_out),
        }
    }

    fn shape(&self) -> (usize, usize) {
        self.weight.dim()
    }

    /// `x·W + b`, one sample per row.
    fn apply(&self, x: &ArrayView2<T>) -> Array2<T> {
        let mut out = Array2::from_shape_fn((x.nrows(), self.bias.len()), |(_, j)| self.bias[j]);
        general_mat_mul(T::one(), x, &self.weight, T::one(), &mut out);
        out
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DecoderParams<T> {
    arch: Architecture,
    layers: Vec<Layer<T>>,
}

/// Accumulated parameter gradients; same shapes as [`DecoderParams`].
pub type Gradients<T> = DecoderParams<T>;

impl<T: Real> DecoderParams<T> {
    pub fn zeros(arch: &Architecture) -> Result<Self> {
        arch.validate()?;
        let layers = arch
            .layer_shapes()
            .into_iter()
            .map(|(i, o)| Layer::zeros(i, o))
            .collect();
        Ok(Self {
            arch: arch.clone(),
            layers,
        })
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            arch: self.arch.clone(),
            layers: self
                .layers
                .iter()
                .map(|l| Layer::zeros(l.weight.nrows(), l.weight.ncols()))
                .collect(),
        }
    }

    pub(crate) fn from_layers(arch: Architecture, layers: Vec<Layer<T>>) -> Result<Self> {
        arch.validate()?;
        let expected = arch.layer_shapes();
        ensure!(
            layers.len() == expected.len(),
            Validation,
            "architecture has {} layers, got {}",
            expected.len(),
            layers.len()
        );
        for (k, (layer, &(i, o))) in layers.iter().zip(&expected).enumerate() {
            ensure!(
                layer.shape() == (i, o) && layer.bias.len() == o,
                Validation,
                "layer {k}: expected {i}x{o}, got {:?} with bias {}",
                layer.shape(),
                layer.bias.len()
            );
        }
        Ok(Self { arch, layers })
    }

    pub fn architecture(&self) -> &Architecture {
        &self.arch
    }

    pub fn layers(&self) -> &[Layer<T>] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer<T>] {
        &mut self.layers
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum()
    }

    pub fn is_congruent(&self, other: &Self) -> bool {
        self.layers.len() == other.layers.len()
            && self
                .layers
                .iter()
                .zip(&other.layers)
                .all(|(a, b)| a.shape() == b.shape() && a.bias.len() == b.bias.len())
    }

    /// Every parameter in storage order (per layer: weights row-major, then
    /// bias).
    pub fn iter_flat(&self) -> impl Iterator<Item = &T> {
        self.layers.iter().flat_map(|l| l.weight.iter().chain(l.bias.iter()))
    }

    pub fn iter_flat_mut(&mut self) -> impl Iterator<Item = &mut T> {
        self.layers
            .iter_mut()
            .flat_map(|l| l.weight.iter_mut().chain(l.bias.iter_mut()))
    }

    pub fn fill_zero(&mut self) {
        self.iter_flat_mut().for_each(|v| *v = T::zero());
    }

    /// `self += other`.
    pub fn accumulate(&mut self, other: &Self) {
        debug_assert!(self.is_congruent(other));
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.weight += &b.weight;
            a.bias += &b.bias;
        }
    }

    pub fn scale(&mut self, factor: T) {
        self.iter_flat_mut().for_each(|v| *v *= factor);
    }

    pub fn cast<U: Real>(&self) -> DecoderParams<U> {
        DecoderParams {
            arch: self.arch.clone(),
            layers: self
                .layers
                .iter()
                .map(|l| Layer {
                    weight: l.weight.mapv(|v| U::lit(v.as_f64())),
                    bias: l.bias.mapv(|v| U::lit(v.as_f64())),
                })
                .collect(),
        }
    }

    /// Evaluates a batch: `inputs` is `B × input_dim`, `dirs` is `B × 3`
    /// unit viewing directions. `sigma_noise`, when given, is added to the
    /// density pre-activation.
    pub fn forward(
        &self,
        inputs: ArrayView2<T>,
        dirs: ArrayView2<T>,
        sigma_noise: Option<ArrayView1<T>>,
    ) -> Result<(RadianceBatch<T>, ForwardCache<T>)> {
        let batch = inputs.nrows();
        ensure!(
            inputs.ncols() == self.arch.input_dim(),
            Validation,
            "decoder expects {} inputs per sample, got {}",
            self.arch.input_dim(),
            inputs.ncols()
        );
        ensure!(
            dirs.dim() == (batch, 3),
            Validation,
            "expected {batch}x3 directions, got {:?}",
            dirs.dim()
        );
        if let Some(noise) = &sigma_noise {
            ensure!(noise.len() == batch, Validation, "noise length mismatch");
        }
        let arch = &self.arch;

        let mut trunk = Vec::with_capacity(arch.hidden_layers);
        let mut h = self.layers[0].apply(&inputs);
        relu_in_place(&mut h);
        trunk.push(h);
        for layer in &self.layers[1..arch.hidden_layers] {
            let mut next = layer.apply(&trunk.last().unwrap().view());
            relu_in_place(&mut next);
            trunk.push(next);
        }
        let top = trunk.last().unwrap().view();

        let mut sigma_pre = self.layers[arch.sigma_layer()].apply(&top).remove_axis(Axis(1));
        if let Some(noise) = sigma_noise {
            sigma_pre += &noise;
        }
        let sigma = sigma_pre.mapv(softplus);

        let feature = self.layers[arch.feature_layer()].apply(&top);
        let w = arch.hidden_width;
        let mut view_in = Array2::zeros((batch, w + arch.dir_dim()));
        view_in.slice_mut(s![.., ..w]).assign(&feature);
        let mut enc = vec![T::zero(); arch.dir_dim()];
        for (mut row, dir) in view_in.rows_mut().into_iter().zip(dirs.rows()) {
            let d = [dir[0].as_f64(), dir[1].as_f64(), dir[2].as_f64()];
            encode_into(&d, arch.dir_freqs, &mut enc);
            row.slice_mut(s![w..]).assign(&ArrayView1::from(&enc[..]));
        }
        let mut view_act = self.layers[arch.view_layer()].apply(&view_in.view());
        relu_in_place(&mut view_act);
        let color = self.layers[arch.rgb_layer()]
            .apply(&view_act.view())
            .mapv(sigmoid);

        let out = RadianceBatch {
            color: color.clone(),
            sigma,
        };
        let cache = ForwardCache {
            inputs: inputs.to_owned(),
            trunk,
            sigma_pre,
            view_in,
            view_act,
            color,
        };
        Ok((out, cache))
    }

    /// Accumulates into `grads` the gradient of `Σ d_color·color + Σ
    /// d_sigma·σ` with respect to every parameter. Input features receive no
    /// gradient; they are not trainable.
    pub fn backward(
        &self,
        cache: &ForwardCache<T>,
        d_color: ArrayView2<T>,
        d_sigma: ArrayView1<T>,
        grads: &mut Gradients<T>,
    ) -> Result<()> {
        let batch = cache.inputs.nrows();
        ensure!(
            cache.inputs.ncols() == self.arch.input_dim()
                && cache.trunk.len() == self.arch.hidden_layers,
            Usage,
            "forward cache was produced by a different architecture"
        );
        ensure!(
            d_color.dim() == (batch, 3) && d_sigma.len() == batch,
            Validation,
            "upstream gradient shapes {:?}/{} do not match batch {batch}",
            d_color.dim(),
            d_sigma.len()
        );
        ensure!(
            self.is_congruent(grads),
            Validation,
            "gradient buffer is not congruent with the parameters"
        );
        let arch = &self.arch;
        let one = T::one();

        // rgb head
        let d_rgb_pre = Zip::from(&d_color)
            .and(&cache.color)
            .map_collect(|&g, &c| g * c * (one - c));
        accumulate_layer(&mut grads.layers[arch.rgb_layer()], &cache.view_act.view(), &d_rgb_pre);

        // view-dependent hidden layer
        let mut d_view = d_rgb_pre.dot(&self.layers[arch.rgb_layer()].weight.t());
        relu_backward(&mut d_view, &cache.view_act);
        accumulate_layer(&mut grads.layers[arch.view_layer()], &cache.view_in.view(), &d_view);
        let d_view_in = d_view.dot(&self.layers[arch.view_layer()].weight.t());
        let d_feature = d_view_in.slice(s![.., ..arch.hidden_width]).to_owned();

        // density head
        let d_sigma_pre = Zip::from(&d_sigma)
            .and(&cache.sigma_pre)
            .map_collect(|&g, &p| g * sigmoid(p))
            .insert_axis(Axis(1));

        let top = cache.trunk.last().unwrap();
        accumulate_layer(&mut grads.layers[arch.sigma_layer()], &top.view(), &d_sigma_pre);
        accumulate_layer(&mut grads.layers[arch.feature_layer()], &top.view(), &d_feature);

        let mut d_h = d_feature.dot(&self.layers[arch.feature_layer()].weight.t());
        general_mat_mul(
            one,
            &d_sigma_pre,
            &self.layers[arch.sigma_layer()].weight.t(),
            one,
            &mut d_h,
        );

        for l in (0..arch.hidden_layers).rev() {
            relu_backward(&mut d_h, &cache.trunk[l]);
            let below = if l == 0 {
                cache.inputs.view()
            } else {
                cache.trunk[l - 1].view()
            };
            accumulate_layer(&mut grads.layers[l], &below, &d_h);
            if l > 0 {
                d_h = d_h.dot(&self.layers[l].weight.t());
            }
        }
        Ok(())
    }
}

fn relu_in_place<T: Real>(a: &mut Array2<T>) {
    a.mapv_inplace(|v| if v > T::zero() { v } else { T::zero() });
}

/// Zeroes gradient entries whose forward activation was clamped.
fn relu_backward<T: Real>(grad: &mut Array2<T>, activation: &Array2<T>) {
    Zip::from(grad).and(activation).for_each(|g, &a| {
        if a <= T::zero() {
            *g = T::zero();
        }
    });
}

fn accumulate_layer<T: Real>(grad: &mut Layer<T>, input: &ArrayView2<T>, d_out: &Array2<T>) {
    general_mat_mul(T::one(), &input.t(), d_out, T::one(), &mut grad.weight);
    grad.bias += &d_out.sum_axis(Axis(0));
}

/// Decoder outputs for a batch; `color` is `B × 3`.
#[derive(Clone, Debug, PartialEq)]
pub struct RadianceBatch<T> {
    pub color: Array2<T>,
    pub sigma: Array1<T>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RadianceOutput<T> {
    pub color: [T; 3],
    pub sigma: T,
}

impl<T: Real> RadianceBatch<T> {
    pub fn get(&self, i: usize) -> RadianceOutput<T> {
        RadianceOutput {
            color: [self.color[(i, 0)], self.color[(i, 1)], self.color[(i, 2)]],
            sigma: self.sigma[i],
        }
    }
}

/// Activations retained by [`DecoderParams::forward`] for the backward pass.
#[derive(Clone, Debug)]
pub struct ForwardCache<T> {
    inputs: Array2<T>,
    trunk: Vec<Array2<T>>,
    sigma_pre: Array1<T>,
    view_in: Array2<T>,
    view_act: Array2<T>,
    color: Array2<T>,
}

impl<T> ForwardCache<T> {
    pub fn batch_len(&self) -> usize {
        self.inputs.nrows()
    }
}

/// Single-sample forward/backward with the cache held internally.
#[derive(Debug)]
pub struct DecoderTape<'a, T> {
    params: &'a DecoderParams<T>,
    cache: Option<ForwardCache<T>>,
}

impl<'a, T: Real> DecoderTape<'a, T> {
    pub fn new(params: &'a DecoderParams<T>) -> Self {
        Self { params, cache: None }
    }

    pub fn forward(&mut self, input: &[T], dir: [T; 3]) -> Result<RadianceOutput<T>> {
        let inputs = ArrayView2::from_shape((1, input.len()), input)
            .map_err(|e| Error::Validation(e.to_string()))?;
        let dirs = ArrayView2::from_shape((1, 3), &dir[..]).expect("static shape");
        let (out, cache) = self.params.forward(inputs, dirs, None)?;
        self.cache = Some(cache);
        Ok(out.get(0))
    }

    /// Gradient of `upstream·output` for the most recent forward call.
    pub fn backward(&self, upstream: &RadianceOutput<T>) -> Result<Gradients<T>> {
        let cache = self
            .cache
            .as_ref()
            .ok_or_else(|| Error::Usage("backward called before forward".into()))?;
        let mut grads = self.params.zeros_like();
        let d_color = ArrayView2::from_shape((1, 3), &upstream.color[..]).expect("static shape");
        let sigma = [upstream.sigma];
        self.params
            .backward(cache, d_color, ArrayView1::from(&sigma[..]), &mut grads)?;
        Ok(grads)
    }
}

/// He-uniform weights (`U(±√(6/fan_in))`) for the ReLU layers and
/// Glorot-uniform for the linear heads; zero biases.
pub fn init_params<T: Real>(arch: &Architecture, seed: u64) -> Result<DecoderParams<T>> {
    let mut params = DecoderParams::<T>::zeros(arch)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let relu_layers: Vec<usize> = (0..arch.hidden_layers).chain([arch.view_layer()]).collect();
    for (k, layer) in params.layers.iter_mut().enumerate() {
        let (fan_in, fan_out) = layer.shape();
        let bound = if relu_layers.contains(&k) {
            (6.0 / fan_in as f64).sqrt()
        } else {
            (6.0 / (fan_in + fan_out) as f64).sqrt()
        };
        layer
            .weight
            .iter_mut()
            .for_each(|w| *w = T::lit(rng.random_range(-bound..bound)));
    }
    Ok(params)
}

fn dir_array<T: Real>(dir: &Vector3<f64>) -> [T; 3] {
    [T::lit(dir.x), T::lit(dir.y), T::lit(dir.z)]
}

/// Evaluates the multi-image decoder on one feature vector.
pub fn decoder_forward<T: Real>(
    params: &DecoderParams<T>,
    z: &FeatureVector,
    dir: &Vector3<f64>,
) -> Result<RadianceOutput<T>> {
    if let Some(layout) = params.arch.feature_layout() {
        ensure!(
            layout.mode == z.mode(),
            Validation,
            "decoder built for {:?} features, got {:?}",
            layout.mode,
            z.mode()
        );
    }
    let input: Vec<T> = z.values().iter().map(|&v| T::lit(v)).collect();
    DecoderTape::new(params).forward(&input, dir_array(dir))
}

/// Evaluates a positional-encoding baseline decoder at a 3D point.
pub fn baseline_forward<T: Real>(
    params: &DecoderParams<T>,
    x: &Vector3<f64>,
    dir: &Vector3<f64>,
) -> Result<RadianceOutput<T>> {
    let mut input = vec![T::zero(); params.arch.input_dim()];
    params.arch.write_input(x, None, &mut input)?;
    DecoderTape::new(params).forward(&input, dir_array(dir))
}
