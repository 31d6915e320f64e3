//! Self-supervised arbitrary-scale training: random-scale LR/HR pair
//! construction, random pixel supervision, L1 loss, Adam with a halving
//! learning-rate schedule.

use crate::checkpoint::save_model;
use crate::config::ConfigFile;
use crate::error::{FaorError, Result};
use crate::geometry::{pixel_to_spherical, SphericalCoord};
use crate::io::{write_loss_csv, ErpImage};
use crate::model::{Model, PriorMaps};
use crate::resample::{resize_bicubic, GridFrame, LatentGrid, ResamplerKind};
use crate::scalar::Scalar;
use crate::tensor::{Parameter, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::f64::consts::{PI, TAU};
use std::path::Path;

#[derive(Debug, Clone)]
pub struct TrainConfig {
    /// LR patch side; crops are base_patch·r square.
    pub base_patch: usize,
    pub r_min: f64,
    pub r_max: f64,
    /// Ground-truth pixels sampled per patch.
    pub pixels_per_patch: usize,
    pub lr0: f64,
    /// Iterations at which the learning rate halves.
    pub lr_milestones: Vec<u64>,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub max_iters: u64,
    pub seed: u64,
    pub log_every: u64,
    /// Checkpoint interval in iterations; 0 disables intermediate saves.
    pub ckpt_every: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            base_patch: 128,
            r_min: 1.0,
            r_max: 4.0,
            pixels_per_patch: 2048,
            lr0: 1e-4,
            lr_milestones: vec![30_000, 50_000, 100_000, 400_000],
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            max_iters: 5000,
            seed: 0,
            log_every: 100,
            ckpt_every: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.base_patch < 8 {
            return Err(FaorError::Config("base_patch must be at least 8".into()));
        }
        if !(self.r_min >= 1.0 && self.r_max >= self.r_min) {
            return Err(FaorError::Config(format!(
                "scale range [{}, {}] must satisfy 1 <= r_min <= r_max",
                self.r_min, self.r_max
            )));
        }
        if self.pixels_per_patch < 1 {
            return Err(FaorError::Config("pixels_per_patch must be positive".into()));
        }
        if !(self.lr0.is_finite() && self.lr0 > 0.0) {
            return Err(FaorError::Config("lr0 must be positive".into()));
        }
        Ok(())
    }
}

/// Learning rate at an iteration: lr0 halved once per milestone ≤ iteration.
pub fn lr_at(cfg: &TrainConfig, iteration: u64) -> f64 {
    let halvings = cfg
        .lr_milestones
        .iter()
        .filter(|&&m| m <= iteration)
        .count() as i32;
    cfg.lr0 * 0.5f64.powi(halvings)
}

/// One training pair: an LR patch, its sampling frame in the full-image
/// coordinate system, and scattered ground-truth pixels.
pub struct TrainSample {
    pub lr_patch: ErpImage,
    pub frame: GridFrame,
    pub coords: Vec<SphericalCoord>,
    /// Ground-truth RGB triplets, coords.len()·3 values.
    pub values: Vec<f32>,
    /// Effective scale (crop side / base patch) after fitting the image.
    pub r: f64,
}

/// Crop a random base·r square from `hr`, bicubic-downsample it to the base
/// patch size, and sample ground-truth pixels uniformly from the crop with
/// spherical coordinates in the full-image frame.
///
/// Scales whose crop would not fit the image are clamped to the largest
/// fitting square.
pub fn make_pair(
    hr: &ErpImage,
    r: f64,
    base_patch: usize,
    pixels_per_patch: usize,
    rng: &mut ChaCha8Rng,
) -> Result<TrainSample> {
    let (h, w) = (hr.height(), hr.width());
    if h < base_patch || w < base_patch {
        return Err(FaorError::invalid(format!(
            "image {h}x{w} smaller than the {base_patch} base patch"
        )));
    }
    if !(r.is_finite() && r >= 1.0) {
        return Err(FaorError::invalid(format!("scale r={r} must be >= 1")));
    }
    let cs = ((base_patch as f64 * r).round() as usize).min(h.min(w));
    let r_eff = cs as f64 / base_patch as f64;
    let y0 = rng.gen_range(0..=h - cs);
    let x0 = rng.gen_range(0..=w - cs);

    // crop, then downsample to the base patch (window: clamped edges)
    let ch = hr.channels();
    let mut crop = Vec::with_capacity(cs * cs * ch);
    for y in y0..y0 + cs {
        let base = (y * w + x0) * ch;
        crop.extend_from_slice(&hr.data()[base..base + cs * ch]);
    }
    let crop_grid = LatentGrid::new(cs, cs, ch, crop)?;
    let lr_grid = resize_bicubic(&crop_grid, base_patch, base_patch, false)?;
    let lr_patch = ErpImage::from_latent(&lr_grid)?;

    // sampling frame of the LR patch in full-image coordinates
    let step = cs as f64 / base_patch as f64;
    let lat0 = (0.5 - (y0 as f64 + 0.5 * step) / h as f64) * PI;
    let dlat = step * PI / h as f64;
    let lon0 = ((x0 as f64 + 0.5 * step) / w as f64 - 0.5) * TAU;
    let dlon = step * TAU / w as f64;
    let frame = GridFrame::from_centers(base_patch, base_patch, lat0, dlat, lon0, dlon, false)?;

    let full = hr.grid();
    let mut coords = Vec::with_capacity(pixels_per_patch);
    let mut values = Vec::with_capacity(pixels_per_patch * 3);
    for _ in 0..pixels_per_patch {
        let gy = y0 + rng.gen_range(0..cs);
        let gx = x0 + rng.gen_range(0..cs);
        coords.push(pixel_to_spherical(&full, gy as f64, gx as f64)?);
        let px = hr.pixel(gy, gx);
        if ch == 3 {
            values.extend_from_slice(px);
        } else {
            values.extend_from_slice(&[px[0], px[0], px[0]]);
        }
    }
    Ok(TrainSample {
        lr_patch,
        frame,
        coords,
        values,
        r: r_eff,
    })
}

/// Mean absolute difference over all samples and channels.
pub fn l1_loss<T: Scalar>(pred: &Tensor<T>, gt: &Tensor<T>) -> Result<Tensor<T>> {
    pred.sub(gt)?.abs()?.mean()
}

/// Adam first/second-moment state, one slot per parameter.
pub struct AdamState<T: Scalar> {
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
    step: u64,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(params: &[&Parameter<T>]) -> Self {
        Self {
            m: params.iter().map(|p| vec![T::zero(); p.len()]).collect(),
            v: params.iter().map(|p| vec![T::zero(); p.len()]).collect(),
            step: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }
}

/// One bias-corrected Adam update from the gradients currently stored on the
/// parameters.
pub fn adam_step<T: Scalar>(
    params: &[&Parameter<T>],
    state: &mut AdamState<T>,
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
) -> Result<()> {
    if params.len() != state.m.len() {
        return Err(FaorError::invalid("Adam state does not match parameter list"));
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - beta1.powi(t);
    let bc2 = 1.0 - beta2.powi(t);
    let (b1, b2) = (T::from_f64(beta1), T::from_f64(beta2));
    let (ib1, ib2) = (T::from_f64(1.0 - beta1), T::from_f64(1.0 - beta2));
    let lr_t = T::from_f64(lr / bc1);
    let inv_sqrt_bc2 = T::from_f64(1.0 / bc2.sqrt());
    let epsv = T::from_f64(eps);
    for (i, p) in params.iter().enumerate() {
        let grad = p.grad().ok_or_else(|| {
            FaorError::invalid(format!("missing gradient for parameter `{}`", p.name()))
        })?;
        if grad.iter().any(|g| !g.is_finite()) {
            return Err(FaorError::NonFinite { op: "adam_step" });
        }
        let mut data = p.to_vec();
        let m = &mut state.m[i];
        let v = &mut state.v[i];
        for j in 0..data.len() {
            let g = grad[j];
            m[j] = b1 * m[j] + ib1 * g;
            v[j] = b2 * v[j] + ib2 * g * g;
            let denom = (v[j].sqrt() * inv_sqrt_bc2) + epsv;
            data[j] = data[j] - lr_t * m[j] / denom;
        }
        p.set_data(&data)?;
    }
    Ok(())
}

/// One (iteration, lr, loss) log row.
pub type LossPoint = (u64, f64, f64);

pub struct TrainReport {
    pub history: Vec<LossPoint>,
    pub initial_loss: f64,
    pub final_loss: f64,
}

/// Run the training loop: per iteration draw a random scale and patch, build
/// the LR/HR pair, forward through encode → geodesic resample → implicit
/// decode restricted to the sampled coordinates, L1 loss, backward, Adam.
///
/// Deterministic under a fixed seed. A NaN loss aborts with a numeric error.
/// When `out_dir` is given, writes `loss.csv`, `model.fckpt`, and periodic
/// checkpoints every `ckpt_every` iterations.
pub fn train_loop(
    model: &Model<f32>,
    dataset: &[ErpImage],
    cfg: &ConfigFile,
    resampler: ResamplerKind,
    out_dir: Option<&Path>,
) -> Result<TrainReport> {
    cfg.train.validate()?;
    if dataset.is_empty() {
        return Err(FaorError::invalid("empty training dataset"));
    }
    let tc = &cfg.train;
    let params = model.parameters();
    let mut adam = AdamState::new(&params);
    // data stream decorrelated from the parameter-init stream
    let mut rng = ChaCha8Rng::seed_from_u64(tc.seed ^ 0x9e37_79b9_7f4a_7c15);
    let mut history: Vec<LossPoint> = Vec::new();
    let mut initial_loss = f64::NAN;
    let mut final_loss = f64::NAN;

    for it in 0..tc.max_iters {
        let img = &dataset[rng.gen_range(0..dataset.len())];
        let r = if tc.r_max > tc.r_min {
            rng.gen_range(tc.r_min..tc.r_max)
        } else {
            tc.r_min
        };
        let sample = make_pair(img, r, tc.base_patch, tc.pixels_per_patch, &mut rng)?;
        let priors = PriorMaps::for_frame(&sample.frame, None)?;
        let pred = model.predict_at(
            &sample.lr_patch,
            &sample.frame,
            &priors,
            &sample.coords,
            resampler,
        )?;
        let gt = Tensor::from_vec(&[sample.coords.len(), 3], sample.values.clone())?;
        let loss = l1_loss(&pred, &gt)?;
        let loss_v = loss.item()? as f64;
        if !loss_v.is_finite() {
            return Err(FaorError::NonFinite { op: "train_loop" });
        }
        loss.backward()?;
        let lr = lr_at(tc, it);
        adam_step(&params, &mut adam, lr, tc.beta1, tc.beta2, tc.eps)?;
        model.zero_grads();

        if it == 0 {
            initial_loss = loss_v;
        }
        final_loss = loss_v;
        if it % tc.log_every.max(1) == 0 || it + 1 == tc.max_iters {
            history.push((it, lr, loss_v));
        }
        if let Some(dir) = out_dir {
            if tc.ckpt_every > 0 && (it + 1) % tc.ckpt_every == 0 && it + 1 != tc.max_iters {
                save_model(model, cfg, &dir.join(format!("ckpt_{:07}.fckpt", it + 1)))?;
            }
        }
    }

    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir)?;
        write_loss_csv(&dir.join("loss.csv"), &history)?;
        save_model(model, cfg, &dir.join("model.fckpt"))?;
    }
    Ok(TrainReport {
        history,
        initial_loss,
        final_loss,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{CoordEncoding, InitMode, LiftKernel, ModelConfig};

    fn toy_model_config() -> ModelConfig {
        ModelConfig {
            num_blocks: 1,
            channels: 4,
            attention_scale: 4.0,
            mlp_hidden: 8,
            coord_encoding: CoordEncoding::Raw,
            lift_kernel: LiftKernel::Pointwise,
        }
    }

    fn random_hr(seed: u64, h: usize, w: usize) -> ErpImage {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data: Vec<f32> = (0..h * w * 3).map(|_| rng.gen_range(0.0..1.0)).collect();
        ErpImage::new(h, w, 3, data).unwrap()
    }

    #[test]
    fn lr_schedule_examples() {
        let cfg = TrainConfig {
            lr0: 1e-4,
            ..Default::default()
        };
        assert_eq!(lr_at(&cfg, 0), 1e-4);
        assert_eq!(lr_at(&cfg, 29_999), 1e-4);
        assert_eq!(lr_at(&cfg, 30_000), 5e-5);
        assert_eq!(lr_at(&cfg, 1_000_000), 6.25e-6);
    }

    #[test]
    fn l1_loss_examples() {
        let a = Tensor::from_vec(&[2, 3], vec![0.1f64, 0.2, 0.3, 0.4, 0.5, 0.6]).unwrap();
        assert_eq!(l1_loss(&a, &a).unwrap().item().unwrap(), 0.0);
        let b = a.add_scalar(0.5).unwrap();
        assert!((l1_loss(&b, &a).unwrap().item().unwrap() - 0.5).abs() < 1e-12);
        // random pair against an explicit loop
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x: Vec<f64> = (0..12).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let y: Vec<f64> = (0..12).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let expected = x
            .iter()
            .zip(y.iter())
            .map(|(a, b)| (a - b).abs())
            .sum::<f64>()
            / 12.0;
        let xt = Tensor::from_vec(&[4, 3], x).unwrap();
        let yt = Tensor::from_vec(&[4, 3], y).unwrap();
        assert!((l1_loss(&xt, &yt).unwrap().item().unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn adam_zero_gradient_keeps_parameters() {
        let p = Parameter::new("p", &[3], vec![1.0f64, -2.0, 0.5]).unwrap();
        let loss = p.tensor().mul(&Tensor::from_vec(&[3], vec![0.0; 3]).unwrap()).unwrap();
        loss.sum().unwrap().backward().unwrap();
        let params = [&p];
        let mut state = AdamState::new(&params);
        adam_step(&params, &mut state, 1e-2, 0.9, 0.999, 1e-8).unwrap();
        assert_eq!(p.to_vec(), vec![1.0, -2.0, 0.5]);
    }

    #[test]
    fn adam_single_step_matches_scalar_reference() {
        // independent scalar implementation of one bias-corrected update
        let scalar_adam = |theta: f64, g: f64, lr: f64, b1: f64, b2: f64, eps: f64| -> f64 {
            let m = (1.0 - b1) * g;
            let v = (1.0 - b2) * g * g;
            let m_hat = m / (1.0 - b1);
            let v_hat = v / (1.0 - b2);
            theta - lr * m_hat / (v_hat.sqrt() + eps)
        };
        let g = 0.37f64;
        let p = Parameter::new("p", &[1], vec![2.0f64]).unwrap();
        let c = Tensor::from_vec(&[1], vec![g]).unwrap();
        p.tensor().mul(&c).unwrap().sum().unwrap().backward().unwrap();
        let params = [&p];
        let mut state = AdamState::new(&params);
        adam_step(&params, &mut state, 1e-3, 0.9, 0.999, 1e-8).unwrap();
        let expected = scalar_adam(2.0, g, 1e-3, 0.9, 0.999, 1e-8);
        assert!((p.to_vec()[0] - expected).abs() < 1e-12);
    }

    #[test]
    fn adam_constant_gradient_step_approaches_lr() {
        let p = Parameter::new("p", &[1], vec![0.0f64]).unwrap();
        let params = [&p];
        let mut state = AdamState::new(&params);
        let lr = 1e-3;
        let mut prev = 0.0;
        let mut step_size = 0.0;
        for _ in 0..5000 {
            p.zero_grad();
            let c = Tensor::from_vec(&[1], vec![0.8f64]).unwrap();
            p.tensor().mul(&c).unwrap().sum().unwrap().backward().unwrap();
            adam_step(&params, &mut state, lr, 0.9, 0.999, 1e-8).unwrap();
            let cur = p.to_vec()[0];
            step_size = (cur - prev).abs();
            prev = cur;
        }
        assert!((step_size - lr).abs() < lr * 0.01, "step {step_size}");
    }

    #[test]
    fn adam_rejects_non_finite_gradients() {
        let p = Parameter::new("p", &[1], vec![0.0f64]).unwrap();
        // plant a NaN gradient directly
        p.zero_grad();
        let c = Tensor::from_vec(&[1], vec![1.0f64]).unwrap();
        p.tensor().mul(&c).unwrap().sum().unwrap().backward().unwrap();
        let params = [&p];
        let mut state = AdamState::new(&params);
        adam_step(&params, &mut state, f64::NAN, 0.9, 0.999, 1e-8)
            .expect_err("nan lr must surface as non-finite parameters");
    }

    #[test]
    fn make_pair_identity_scale_and_bounds() {
        let hr = random_hr(5, 256, 512);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let s = make_pair(&hr, 1.0, 128, 64, &mut rng).unwrap();
        assert_eq!(s.lr_patch.height(), 128);
        assert_eq!(s.lr_patch.width(), 128);
        assert_eq!(s.r, 1.0);
        assert_eq!(s.coords.len(), 64);
        assert_eq!(s.values.len(), 64 * 3);

        let s2 = make_pair(&hr, 2.0, 128, 64, &mut rng).unwrap();
        assert_eq!(s2.r, 2.0);
        // every GT coordinate lies inside the patch's angular footprint
        for c in &s2.coords {
            let row = s2.frame.row_position(c.lat());
            let col = s2.frame.col_position(c.lon());
            assert!(row > -0.5 - 1e-9 && row < 128.5 + 1e-9, "row {row}");
            assert!(col > -0.5 - 1e-9 && col < 128.5 + 1e-9, "col {col}");
        }
    }

    #[test]
    fn make_pair_clamps_oversized_crops() {
        let hr = random_hr(6, 256, 512);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let s = make_pair(&hr, 4.0, 128, 8, &mut rng).unwrap();
        // 128*4 = 512 > 256 rows: clamped to a 256-pixel crop
        assert_eq!(s.r, 2.0);
        assert!(make_pair(&random_hr(7, 64, 64), 1.0, 128, 8, &mut rng).is_err());
    }

    #[test]
    fn make_pair_coordinates_uniform_chi_squared() {
        let hr = random_hr(8, 256, 512);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        // one large sample; bin GT pixels into an 8x8 histogram over the crop
        let n = 100_000usize;
        let s = make_pair(&hr, 2.0, 128, n, &mut rng).unwrap();
        let cs = 256.0;
        let mut bins = [0u64; 64];
        // with step = 2, crop pixel offset = 2*frame_position + 0.5; round to
        // the integer pixel before binning
        for c in &s.coords {
            let row = (s.frame.row_position(c.lat()) * 2.0 + 0.5).round();
            let col = (s.frame.col_position(c.lon()) * 2.0 + 0.5).round();
            let by = ((row / (cs / 8.0)) as usize).min(7);
            let bx = ((col / (cs / 8.0)) as usize).min(7);
            bins[by * 8 + bx] += 1;
        }
        let expected = n as f64 / 64.0;
        let chi2: f64 = bins
            .iter()
            .map(|&o| {
                let d = o as f64 - expected;
                d * d / expected
            })
            .sum();
        // chi-square critical value, 63 dof, alpha = 0.01
        assert!(chi2 < 92.01, "chi2 {chi2}");
    }

    #[test]
    fn train_initial_loss_matches_constant_color_oracle() {
        // identity-initialized model predicts zero before training, so the
        // first loss is the mean channel value of the constant image
        let color = [0.25f32, 0.5, 0.75];
        let mut data = Vec::new();
        for _ in 0..256 * 512 {
            data.extend_from_slice(&color);
        }
        let img = ErpImage::new(256, 512, 3, data).unwrap();
        let cfg = ConfigFile {
            model: toy_model_config(),
            train: TrainConfig {
                max_iters: 1,
                pixels_per_patch: 128,
                log_every: 1,
                ..Default::default()
            },
        };
        let model = Model::<f32>::new(cfg.model, 3, InitMode::Training).unwrap();
        let report = train_loop(&model, &[img], &cfg, ResamplerKind::Geodesic, None).unwrap();
        let expected = (0.25 + 0.5 + 0.75) / 3.0;
        assert!((report.initial_loss - expected).abs() < 1e-6);
    }

    #[test]
    fn training_is_deterministic_across_runs() {
        let imgs: Vec<ErpImage> = (0..2).map(|i| random_hr(20 + i, 160, 320)).collect();
        let cfg = ConfigFile {
            model: toy_model_config(),
            train: TrainConfig {
                max_iters: 6,
                pixels_per_patch: 64,
                log_every: 1,
                seed: 9,
                ..Default::default()
            },
        };
        let run = || {
            let model = Model::<f32>::new(cfg.model, cfg.train.seed, InitMode::Training).unwrap();
            train_loop(&model, &imgs, &cfg, ResamplerKind::Geodesic, None)
                .unwrap()
                .history
        };
        let a = run();
        let b = run();
        assert_eq!(a.len(), b.len());
        for ((i1, l1, v1), (i2, l2, v2)) in a.iter().zip(b.iter()) {
            assert_eq!(i1, i2);
            assert_eq!(l1, l2);
            assert_eq!(v1.to_bits(), v2.to_bits());
        }
    }
}
