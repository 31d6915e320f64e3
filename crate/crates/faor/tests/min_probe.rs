use faor::model::{image_tensor, InitMode, LiftKernel, Model, ModelConfig, PriorMaps};
use faor::resample::{compile_taps, GridFrame, ResamplerKind};
use faor::synthetic::synthetic_odi;
use faor::train::{make_pair, l1_loss};
use faor::tensor::Tensor;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::rc::Rc;
use std::time::Instant;

#[test]
fn min_probe() {
    let img = synthetic_odi(256, 512, 0);
    let cfg = ModelConfig {
        num_blocks: 4, channels: 32, attention_scale: 32.0, mlp_hidden: 64,
        coord_encoding: faor::model::CoordEncoding::Raw, lift_kernel: LiftKernel::Conv3,
    };
    let model = Model::<f32>::new(cfg, 1, InitMode::Training).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let sample = make_pair(&img, 2.0, 128, 2048, &mut rng).unwrap();
    let priors = PriorMaps::for_frame(&sample.frame, None).unwrap();
    let mut best_fwd = f64::MAX;
    let mut best_full = f64::MAX;
    for _ in 0..8 {
        let t1 = Instant::now();
        let x = image_tensor::<f32>(&sample.lr_patch).unwrap();
        let pt = priors.to_tensor::<f32>().unwrap();
        let z = model.encode(&x, 128, 128, &pt, false).unwrap();
        let taps = Rc::new(compile_taps(&sample.frame, ResamplerKind::Geodesic, &sample.coords));
        let zh = z.gather_resample(taps).unwrap();
        let feats = model.coord_features(&sample.coords).unwrap();
        let pred = model.sgif_forward(&zh, &feats).unwrap();
        let gt = Tensor::from_vec(&[2048, 3], sample.values.clone()).unwrap();
        let loss = l1_loss(&pred, &gt).unwrap();
        let fwd = t1.elapsed().as_secs_f64()*1e3;
        loss.backward().unwrap();
        model.zero_grads();
        let full = t1.elapsed().as_secs_f64()*1e3;
        best_fwd = best_fwd.min(fwd);
        best_full = best_full.min(full);
        println!("fwd {fwd:.0}ms full {full:.0}ms");
    }
    println!("BEST fwd {best_fwd:.0}ms full {best_full:.0}ms");
}
