//! The FAOR network: a sphere-aware feature encoder (stack of blocks, each
//! LN → affine feature modulation → channel cross-attention → residual MLP)
//! and a spherical implicit image function that decodes one resampled latent
//! vector plus its spherical coordinate into RGB.
//!
//! Upscaling follows resample-then-represent: the latent grid is geodesically
//! resampled to the target lattice first, so the implicit function runs
//! exactly once per output pixel.

use crate::error::{FaorError, Result};
use crate::geometry::{coord_lattice, hr_coordinate_grid, CoordGrid, ErpGrid, SphericalCoord};
use crate::io::ErpImage;
use crate::resample::{compile_taps, CompiledTaps, GridFrame, LatentGrid, ResamplerKind};
use crate::scalar::Scalar;
use crate::tensor::{conv3x3, layer_norm, Parameter, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::cell::Cell;
use std::f64::consts::PI;
use std::rc::Rc;
use std::time::Instant;

/// Hidden width of the per-block prior-conditioning network.
const ATFM_HIDDEN: usize = 16;

/// Row chunk size for streaming inference (bounds peak memory).
const SGIF_CHUNK: usize = 1 << 16;

/// How target spherical coordinates are presented to the implicit function.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CoordEncoding {
    /// (2·lat/π, lon/π), both in [−1, 1).
    Raw,
    /// Raw pair plus sin/cos features at `freqs` octaves.
    SinCos { freqs: usize },
}

impl CoordEncoding {
    pub fn dim(&self) -> usize {
        match self {
            CoordEncoding::Raw => 2,
            CoordEncoding::SinCos { freqs } => 2 + 4 * freqs,
        }
    }

    fn write_features(&self, lat: f64, lon: f64, out: &mut Vec<f64>) {
        let a = 2.0 * lat / PI;
        let b = lon / PI;
        out.push(a);
        out.push(b);
        if let CoordEncoding::SinCos { freqs } = self {
            for k in 0..*freqs {
                let f = (1u64 << k) as f64 * PI;
                out.push((f * a).sin());
                out.push((f * a).cos());
                out.push((f * b).sin());
                out.push((f * b).cos());
            }
        }
    }
}

/// Spatial footprint of the channel-lift layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LiftKernel {
    /// Per-pixel linear lift, no spatial mixing.
    Pointwise,
    /// 3×3 convolution with seam-wrap columns and replicate rows.
    Conv3,
}

#[derive(Debug, Clone, Copy)]
pub struct ModelConfig {
    pub num_blocks: usize,
    pub channels: usize,
    /// Attention scaling factor d_k; the scores are divided by √d_k.
    pub attention_scale: f64,
    pub mlp_hidden: usize,
    pub coord_encoding: CoordEncoding,
    pub lift_kernel: LiftKernel,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            num_blocks: 4,
            channels: 32,
            attention_scale: 32.0,
            mlp_hidden: 64,
            coord_encoding: CoordEncoding::Raw,
            lift_kernel: LiftKernel::Pointwise,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_blocks < 1 || self.channels < 2 {
            return Err(FaorError::Config(format!(
                "need at least 1 block and 2 channels, got L={} D={}",
                self.num_blocks, self.channels
            )));
        }
        if !(self.attention_scale.is_finite() && self.attention_scale > 0.0) {
            return Err(FaorError::Config("attention scale must be positive".into()));
        }
        if self.mlp_hidden < 1 {
            return Err(FaorError::Config("mlp_hidden must be positive".into()));
        }
        Ok(())
    }
}

/// Offline priors conditioning the feature modulation: a stretching-ratio map
/// rescaled to [0, 1] (row-constant cos-latitude) and an instance-id map
/// (0 = background).
#[derive(Debug, Clone)]
pub struct PriorMaps {
    height: usize,
    width: usize,
    /// cos-latitude per row.
    m_d: Vec<f64>,
    /// instance ids per pixel; empty means all background.
    m_s: Vec<u32>,
}

impl PriorMaps {
    /// Analytic priors for a sampling frame (recomputed at the frame's own
    /// resolution rather than resized).
    pub fn for_frame(frame: &GridFrame, segmentation: Option<Vec<u32>>) -> Result<Self> {
        let m_d = (0..frame.height())
            .map(|i| frame.row_latitude(i).cos())
            .collect();
        let m_s = match segmentation {
            Some(ids) => {
                if ids.len() != frame.height() * frame.width() {
                    return Err(FaorError::ShapeMismatch {
                        op: "PriorMaps",
                        expected: vec![frame.height(), frame.width()],
                        got: vec![ids.len()],
                    });
                }
                ids
            }
            None => Vec::new(),
        };
        Ok(Self {
            height: frame.height(),
            width: frame.width(),
            m_d,
            m_s,
        })
    }

    pub fn for_grid(grid: &ErpGrid, segmentation: Option<Vec<u32>>) -> Result<Self> {
        Self::for_frame(&GridFrame::erp(grid), segmentation)
    }

    /// Ablated priors: both channels identically zero.
    pub fn zeroed(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            m_d: vec![0.0; height],
            m_s: Vec::new(),
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    /// (H·W, 2) conditioning tensor: [m_d, encoded m_s] per pixel. Instance
    /// ids fold into one channel as (id mod 256)/255.
    pub fn to_tensor<T: Scalar>(&self) -> Result<Tensor<T>> {
        let n = self.height * self.width;
        let mut data = Vec::with_capacity(n * 2);
        for h in 0..self.height {
            let d = T::from_f64(self.m_d[h]);
            for w in 0..self.width {
                data.push(d);
                let id = self.m_s.get(h * self.width + w).copied().unwrap_or(0);
                data.push(T::from_f64((id % 256) as f64 / 255.0));
            }
        }
        Tensor::from_vec(&[n, 2], data)
    }
}

/// Fully-connected layer: x (N×in) ↦ x·W + b with W stored (in×out).
pub struct Linear<T: Scalar> {
    pub weight: Parameter<T>,
    pub bias: Parameter<T>,
}

impl<T: Scalar> Linear<T> {
    fn new(name: &str, fan_in: usize, fan_out: usize, rng: &mut ChaCha8Rng, zero: bool) -> Result<Self> {
        let bound = 1.0 / (fan_in as f64).sqrt();
        let weight: Vec<T> = (0..fan_in * fan_out)
            .map(|_| {
                if zero {
                    T::zero()
                } else {
                    T::from_f64(rng.gen_range(-bound..bound))
                }
            })
            .collect();
        Ok(Self {
            weight: Parameter::new(format!("{name}.weight"), &[fan_in, fan_out], weight)?,
            bias: Parameter::new(format!("{name}.bias"), &[fan_out], vec![T::zero(); fan_out])?,
        })
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        x.affine(self.weight.tensor(), self.bias.tensor())
    }

    fn params(&self) -> [&Parameter<T>; 2] {
        [&self.weight, &self.bias]
    }
}

/// Prior-conditioning network producing per-element affine parameters.
/// With the final layer at zero it is the identity modulation (α=1, β=0).
pub struct AtfmNet<T: Scalar> {
    pub fc1: Linear<T>,
    pub fc2: Linear<T>,
    channels: usize,
}

impl<T: Scalar> AtfmNet<T> {
    fn new(name: &str, channels: usize, rng: &mut ChaCha8Rng, zero_terminal: bool) -> Result<Self> {
        Ok(Self {
            fc1: Linear::new(&format!("{name}.fc1"), 2, ATFM_HIDDEN, rng, false)?,
            fc2: Linear::new(&format!("{name}.fc2"), ATFM_HIDDEN, 2 * channels, rng, zero_terminal)?,
            channels,
        })
    }

    /// Affine feature modulation: α ⊙ f_ln + β with (Δα, β) produced from the
    /// prior stack and α = 1 + Δα.
    pub fn forward(&self, f_ln: &Tensor<T>, priors: &Tensor<T>) -> Result<Tensor<T>> {
        let h = self.fc1.forward(priors)?.gelu()?;
        let ab = self.fc2.forward(&h)?;
        let alpha = ab.narrow_last(0, self.channels)?.add_scalar(1.0)?;
        let beta = ab.narrow_last(self.channels, self.channels)?;
        f_ln.mul_add(&alpha, &beta)
    }

    fn params(&self) -> Vec<&Parameter<T>> {
        let mut v = Vec::new();
        v.extend(self.fc1.params());
        v.extend(self.fc2.params());
        v
    }
}

/// Channel-wise cross-attention between the normalized features (query) and
/// the modulated features (key/value), followed by a two-layer MLP.
pub struct CrossAttention<T: Scalar> {
    pub q: Linear<T>,
    pub k: Linear<T>,
    pub v: Linear<T>,
    pub mlp1: Linear<T>,
    pub mlp2: Linear<T>,
}

impl<T: Scalar> CrossAttention<T> {
    fn new(
        name: &str,
        channels: usize,
        mlp_hidden: usize,
        rng: &mut ChaCha8Rng,
        zero_terminal: bool,
    ) -> Result<Self> {
        Ok(Self {
            q: Linear::new(&format!("{name}.q"), channels, channels, rng, false)?,
            k: Linear::new(&format!("{name}.k"), channels, channels, rng, false)?,
            v: Linear::new(&format!("{name}.v"), channels, channels, rng, false)?,
            mlp1: Linear::new(&format!("{name}.mlp1"), channels, mlp_hidden, rng, false)?,
            mlp2: Linear::new(&format!("{name}.mlp2"), mlp_hidden, channels, rng, zero_terminal)?,
        })
    }

    /// Row-normalized D×D channel-attention matrix softmax((qᵀk)/√d_k).
    pub fn attention_matrix(
        &self,
        f_ln: &Tensor<T>,
        f_at: &Tensor<T>,
        d_k: f64,
    ) -> Result<Tensor<T>> {
        let q = self.q.forward(f_ln)?;
        let k = self.k.forward(f_at)?;
        q.matmul_tn(&k)?.scale(1.0 / d_k.sqrt())?.softmax(1)
    }

    pub fn forward(&self, f_ln: &Tensor<T>, f_at: &Tensor<T>, d_k: f64) -> Result<Tensor<T>> {
        let attn = self.attention_matrix(f_ln, f_at, d_k)?;
        let v = self.v.forward(f_at)?;
        // output channel i mixes value channels with attention row i
        let mixed = v.matmul(&attn.transpose2()?)?;
        let h = self.mlp1.forward(&mixed)?.gelu()?;
        self.mlp2.forward(&h)
    }

    fn params(&self) -> Vec<&Parameter<T>> {
        let mut out = Vec::new();
        for l in [&self.q, &self.k, &self.v, &self.mlp1, &self.mlp2] {
            out.extend(l.params());
        }
        out
    }
}

/// One encoder block:
/// f_ln = LN(f); f_at = ATFM(f_ln); f̃ = f + CA(f_ln, f_at);
/// out = f̃ + MLP(LN(f̃)).
pub struct EncoderBlock<T: Scalar> {
    pub ln1_gain: Parameter<T>,
    pub ln1_bias: Parameter<T>,
    pub atfm: AtfmNet<T>,
    pub ca: CrossAttention<T>,
    pub ln2_gain: Parameter<T>,
    pub ln2_bias: Parameter<T>,
    pub mlp1: Linear<T>,
    pub mlp2: Linear<T>,
}

impl<T: Scalar> EncoderBlock<T> {
    fn new(
        name: &str,
        channels: usize,
        mlp_hidden: usize,
        rng: &mut ChaCha8Rng,
        zero_terminal: bool,
    ) -> Result<Self> {
        Ok(Self {
            ln1_gain: Parameter::new(format!("{name}.ln1.gain"), &[channels], vec![T::one(); channels])?,
            ln1_bias: Parameter::new(format!("{name}.ln1.bias"), &[channels], vec![T::zero(); channels])?,
            atfm: AtfmNet::new(&format!("{name}.atfm"), channels, rng, zero_terminal)?,
            ca: CrossAttention::new(&format!("{name}.ca"), channels, mlp_hidden, rng, zero_terminal)?,
            ln2_gain: Parameter::new(format!("{name}.ln2.gain"), &[channels], vec![T::one(); channels])?,
            ln2_bias: Parameter::new(format!("{name}.ln2.bias"), &[channels], vec![T::zero(); channels])?,
            mlp1: Linear::new(&format!("{name}.mlp1"), channels, mlp_hidden, rng, false)?,
            mlp2: Linear::new(&format!("{name}.mlp2"), mlp_hidden, channels, rng, zero_terminal)?,
        })
    }

    pub fn forward(&self, f: &Tensor<T>, priors: &Tensor<T>, d_k: f64) -> Result<Tensor<T>> {
        let f_ln = layer_norm(f, self.ln1_gain.tensor(), self.ln1_bias.tensor())?;
        let f_at = self.atfm.forward(&f_ln, priors)?;
        let f_ca = self.ca.forward(&f_ln, &f_at, d_k)?;
        let f_mid = f.add(&f_ca)?;
        let f_ln2 = layer_norm(&f_mid, self.ln2_gain.tensor(), self.ln2_bias.tensor())?;
        let h = self.mlp1.forward(&f_ln2)?.gelu()?;
        f_mid.add(&self.mlp2.forward(&h)?)
    }

    fn params(&self) -> Vec<&Parameter<T>> {
        let mut out: Vec<&Parameter<T>> = vec![&self.ln1_gain, &self.ln1_bias];
        out.extend(self.atfm.params());
        out.extend(self.ca.params());
        out.push(&self.ln2_gain);
        out.push(&self.ln2_bias);
        out.extend(self.mlp1.params());
        out.extend(self.mlp2.params());
        out
    }
}

enum Lift<T: Scalar> {
    Pointwise(Linear<T>),
    Conv3 {
        kernel: Parameter<T>,
        bias: Parameter<T>,
    },
}

/// Implicit image function head: 4-layer MLP from (latent ⊕ coordinate
/// features) to RGB.
pub struct SgifHead<T: Scalar> {
    pub fc1: Linear<T>,
    pub fc2: Linear<T>,
    pub fc3: Linear<T>,
    pub fc4: Linear<T>,
}

impl<T: Scalar> SgifHead<T> {
    fn new(
        in_dim: usize,
        hidden: usize,
        rng: &mut ChaCha8Rng,
        zero_terminal: bool,
    ) -> Result<Self> {
        Ok(Self {
            fc1: Linear::new("sgif.fc1", in_dim, hidden, rng, false)?,
            fc2: Linear::new("sgif.fc2", hidden, hidden, rng, false)?,
            fc3: Linear::new("sgif.fc3", hidden, hidden, rng, false)?,
            fc4: Linear::new("sgif.fc4", hidden, 3, rng, zero_terminal)?,
        })
    }

    fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let h = self.fc1.forward(x)?.gelu()?;
        let h = self.fc2.forward(&h)?.gelu()?;
        let h = self.fc3.forward(&h)?.gelu()?;
        self.fc4.forward(&h)
    }

    fn params(&self) -> Vec<&Parameter<T>> {
        let mut out = Vec::new();
        for l in [&self.fc1, &self.fc2, &self.fc3, &self.fc4] {
            out.extend(l.params());
        }
        out
    }
}

/// Parameter initialization scheme.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitMode {
    /// Branch-terminal layers start at zero: every encoder block is the
    /// identity and the implicit head outputs zero, so training starts from
    /// a well-behaved state.
    Training,
    /// Every layer randomized (gradient-check instrumentation).
    FullRandom,
}

/// Per-stage wall-clock breakdown and the implicit-function call count of one
/// upscaling run.
#[derive(Debug, Clone, Copy, Default)]
pub struct SrStats {
    pub encode_ms: f64,
    pub resample_ms: f64,
    pub sgif_ms: f64,
    pub sgif_evals: u64,
}

pub struct Model<T: Scalar> {
    config: ModelConfig,
    lift: Lift<T>,
    blocks: Vec<EncoderBlock<T>>,
    sgif: SgifHead<T>,
    sgif_evals: Cell<u64>,
}

impl<T: Scalar> Model<T> {
    pub fn new(config: ModelConfig, seed: u64, mode: InitMode) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let zero_terminal = mode == InitMode::Training;
        let d = config.channels;
        let lift = match config.lift_kernel {
            LiftKernel::Pointwise => Lift::Pointwise(Linear::new("lift", 3, d, &mut rng, false)?),
            LiftKernel::Conv3 => {
                let bound = 1.0 / (9.0 * 3.0f64).sqrt();
                let kernel: Vec<T> = (0..9 * 3 * d)
                    .map(|_| T::from_f64(rng.gen_range(-bound..bound)))
                    .collect();
                Lift::Conv3 {
                    kernel: Parameter::new("lift.kernel", &[3, 3, 3, d], kernel)?,
                    bias: Parameter::new("lift.bias", &[d], vec![T::zero(); d])?,
                }
            }
        };
        let blocks = (0..config.num_blocks)
            .map(|i| {
                EncoderBlock::new(
                    &format!("block{i}"),
                    d,
                    config.mlp_hidden,
                    &mut rng,
                    zero_terminal,
                )
            })
            .collect::<Result<Vec<_>>>()?;
        let sgif = SgifHead::new(
            d + config.coord_encoding.dim(),
            config.mlp_hidden,
            &mut rng,
            zero_terminal,
        )?;
        Ok(Self {
            config,
            lift,
            blocks,
            sgif,
            sgif_evals: Cell::new(0),
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn blocks(&self) -> &[EncoderBlock<T>] {
        &self.blocks
    }

    /// All parameters in declaration order (the checkpoint order).
    pub fn parameters(&self) -> Vec<&Parameter<T>> {
        let mut out: Vec<&Parameter<T>> = Vec::new();
        match &self.lift {
            Lift::Pointwise(l) => out.extend(l.params()),
            Lift::Conv3 { kernel, bias } => {
                out.push(kernel);
                out.push(bias);
            }
        }
        for b in &self.blocks {
            out.extend(b.params());
        }
        out.extend(self.sgif.params());
        out
    }

    pub fn zero_grads(&self) {
        for p in self.parameters() {
            p.zero_grad();
        }
    }

    pub fn sgif_evals(&self) -> u64 {
        self.sgif_evals.get()
    }

    pub fn reset_sgif_counter(&self) {
        self.sgif_evals.set(0);
    }

    /// Encode an (H·W × 3) image tensor into the (H·W × D) latent grid.
    /// No spatial downsampling happens anywhere in the stack.
    pub fn encode(
        &self,
        x: &Tensor<T>,
        height: usize,
        width: usize,
        priors: &Tensor<T>,
        wrap_cols: bool,
    ) -> Result<Tensor<T>> {
        if x.shape() != [height * width, 3] {
            return Err(FaorError::ShapeMismatch {
                op: "encode",
                expected: vec![height * width, 3],
                got: x.shape().to_vec(),
            });
        }
        if priors.shape() != [height * width, 2] {
            return Err(FaorError::ShapeMismatch {
                op: "encode",
                expected: vec![height * width, 2],
                got: priors.shape().to_vec(),
            });
        }
        let mut f = match &self.lift {
            Lift::Pointwise(l) => l.forward(x)?,
            Lift::Conv3 { kernel, bias } => {
                conv3x3(x, kernel.tensor(), bias.tensor(), height, width, wrap_cols)?
            }
        };
        for block in &self.blocks {
            f = block.forward(&f, priors, self.config.attention_scale)?;
        }
        Ok(f)
    }

    /// Coordinate features for the implicit head, as a constant tensor.
    pub fn coord_features(&self, coords: &[SphericalCoord]) -> Result<Tensor<T>> {
        let dim = self.config.coord_encoding.dim();
        let mut data = Vec::with_capacity(coords.len() * dim);
        let mut scratch = Vec::with_capacity(dim);
        for c in coords {
            scratch.clear();
            self.config
                .coord_encoding
                .write_features(c.lat(), c.lon(), &mut scratch);
            data.extend(scratch.iter().map(|&v| T::from_f64(v)));
        }
        Tensor::from_vec(&[coords.len(), dim], data)
    }

    /// Implicit-function decode of a batch of latent vectors with their
    /// coordinate features. Counts one evaluation per row.
    pub fn sgif_forward(&self, z: &Tensor<T>, coord_feats: &Tensor<T>) -> Result<Tensor<T>> {
        let p = z.shape()[0];
        if coord_feats.shape() != [p, self.config.coord_encoding.dim()] {
            return Err(FaorError::ShapeMismatch {
                op: "sgif_forward",
                expected: vec![p, self.config.coord_encoding.dim()],
                got: coord_feats.shape().to_vec(),
            });
        }
        let x = z.concat_last(coord_feats)?;
        self.sgif_evals.set(self.sgif_evals.get() + p as u64);
        self.sgif.forward(&x)
    }

    /// Full training-path forward: encode a patch, geodesically resample its
    /// latents at scattered target coordinates, decode once per target.
    pub fn predict_at(
        &self,
        patch: &ErpImage,
        frame: &GridFrame,
        priors: &PriorMaps,
        coords: &[SphericalCoord],
        kind: ResamplerKind,
    ) -> Result<Tensor<T>> {
        let (h, w) = (patch.height(), patch.width());
        let x = image_tensor::<T>(patch)?;
        let pt = priors.to_tensor::<T>()?;
        let z = self.encode(&x, h, w, &pt, frame.wrap_cols())?;
        let taps = Rc::new(compile_taps(frame, kind, coords));
        let z_hat = z.gather_resample(taps)?;
        let feats = self.coord_features(coords)?;
        self.sgif_forward(&z_hat, &feats)
    }

    /// Arbitrary-scale upscaling: output dims are round(s·H) × round(s·W).
    pub fn super_resolve(
        &self,
        img: &ErpImage,
        scale: f64,
        priors: &PriorMaps,
        kind: ResamplerKind,
    ) -> Result<(ErpImage, SrStats)> {
        let targets = hr_coordinate_grid(&img.grid(), scale)?;
        self.super_resolve_targets(img, &targets, priors, kind)
    }

    /// Upscale to explicit output dimensions.
    pub fn super_resolve_to(
        &self,
        img: &ErpImage,
        out_h: usize,
        out_w: usize,
        priors: &PriorMaps,
        kind: ResamplerKind,
    ) -> Result<(ErpImage, SrStats)> {
        let targets = coord_lattice(out_h, out_w)?;
        self.super_resolve_targets(img, &targets, priors, kind)
    }

    fn super_resolve_targets(
        &self,
        img: &ErpImage,
        targets: &CoordGrid,
        priors: &PriorMaps,
        kind: ResamplerKind,
    ) -> Result<(ErpImage, SrStats)> {
        let (h, w) = (img.height(), img.width());
        if priors.height() != h || priors.width() != w {
            return Err(FaorError::ShapeMismatch {
                op: "super_resolve",
                expected: vec![h, w],
                got: vec![priors.height(), priors.width()],
            });
        }
        let mut stats = SrStats::default();
        let frame = GridFrame::erp(&img.grid());

        let t0 = Instant::now();
        let x = image_tensor::<T>(img)?;
        let pt = priors.to_tensor::<T>()?;
        let z = self.encode(&x, h, w, &pt, true)?;
        let latent = LatentGrid::new(h, w, self.config.channels, z.to_vec())?;
        stats.encode_ms = t0.elapsed().as_secs_f64() * 1e3;

        let (out_h, out_w) = (targets.height(), targets.width());
        let mut out = vec![0.0f32; out_h * out_w * 3];
        let rows_per_band = (SGIF_CHUNK / out_w).max(1);
        let evals_before = self.sgif_evals.get();
        let mut band_coords: Vec<SphericalCoord> = Vec::with_capacity(rows_per_band * out_w);
        let mut row = 0usize;
        while row < out_h {
            let band = rows_per_band.min(out_h - row);
            band_coords.clear();
            for i in row..row + band {
                let lat = targets.lats()[i];
                for &lon in targets.lons() {
                    band_coords.push(SphericalCoord::new(lat, lon)?);
                }
            }
            let t1 = Instant::now();
            let taps = Rc::new(compile_taps(&frame, kind, &band_coords));
            let z_band = latent_gather(&latent, &taps);
            stats.resample_ms += t1.elapsed().as_secs_f64() * 1e3;

            let t2 = Instant::now();
            let z_tensor = Tensor::from_vec(&[band_coords.len(), self.config.channels], z_band)?;
            let feats = self.coord_features(&band_coords)?;
            let rgb = self.sgif_forward(&z_tensor, &feats)?;
            let rgb = rgb.to_vec();
            let dst = &mut out[row * out_w * 3..(row + band) * out_w * 3];
            for (o, v) in dst.iter_mut().zip(rgb.iter()) {
                *o = v.to_f64_lossy().clamp(0.0, 1.0) as f32;
            }
            stats.sgif_ms += t2.elapsed().as_secs_f64() * 1e3;
            row += band;
        }
        stats.sgif_evals = self.sgif_evals.get() - evals_before;
        Ok((ErpImage::new(out_h, out_w, 3, out)?, stats))
    }
}

/// (H·W × 3) tensor view of an image (grayscale replicates to 3 channels).
pub fn image_tensor<T: Scalar>(img: &ErpImage) -> Result<Tensor<T>> {
    let n = img.height() * img.width();
    let mut data = Vec::with_capacity(n * 3);
    match img.channels() {
        3 => data.extend(img.data().iter().map(|&v| T::from_f64(v as f64))),
        _ => {
            for &v in img.data() {
                let t = T::from_f64(v as f64);
                data.extend_from_slice(&[t, t, t]);
            }
        }
    }
    Tensor::from_vec(&[n, 3], data)
}

/// Plain (non-differentiable) application of compiled taps to a latent grid.
fn latent_gather<T: Scalar>(latent: &LatentGrid<T>, taps: &CompiledTaps) -> Vec<T> {
    let d = latent.channels();
    let mut out = vec![T::zero(); taps.n_targets() * d];
    for (ti, orow) in out.chunks_mut(d).enumerate() {
        for &(src, w) in taps.target(ti) {
            let wv = T::from_f64(w);
            let base = src as usize * d;
            let srow = &latent.data()[base..base + d];
            for (o, &s) in orow.iter_mut().zip(srow.iter()) {
                *o = *o + wv * s;
            }
        }
    }
    out
}
