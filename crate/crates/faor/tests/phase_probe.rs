use faor::model::{image_tensor, InitMode, LiftKernel, Model, ModelConfig, PriorMaps};
use faor::resample::{compile_taps, GridFrame, ResamplerKind};
use faor::synthetic::synthetic_odi;
use faor::train::{make_pair, l1_loss, adam_step, AdamState};
use faor::tensor::Tensor;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::rc::Rc;
use std::time::Instant;

#[test]
fn phase_probe() {
    let img = synthetic_odi(256, 512, 0);
    let cfg = ModelConfig {
        num_blocks: 4, channels: 32, attention_scale: 32.0, mlp_hidden: 64,
        coord_encoding: faor::model::CoordEncoding::Raw, lift_kernel: LiftKernel::Conv3,
    };
    let model = Model::<f32>::new(cfg, 1, InitMode::Training).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let t0 = Instant::now();
    let sample = make_pair(&img, 2.0, 128, 2048, &mut rng).unwrap();
    println!("make_pair: {:.1}ms", t0.elapsed().as_secs_f64()*1e3);
    let priors = PriorMaps::for_frame(&sample.frame, None).unwrap();

    for rep in 0..3 {
        let t1 = Instant::now();
        let x = image_tensor::<f32>(&sample.lr_patch).unwrap();
        let pt = priors.to_tensor::<f32>().unwrap();
        let z = model.encode(&x, 128, 128, &pt, false).unwrap();
        let t_enc = t1.elapsed().as_secs_f64()*1e3;

        let t2 = Instant::now();
        let taps = Rc::new(compile_taps(&sample.frame, ResamplerKind::Geodesic, &sample.coords));
        let zh = z.gather_resample(taps).unwrap();
        let feats = model.coord_features(&sample.coords).unwrap();
        let pred = model.sgif_forward(&zh, &feats).unwrap();
        let t_sgif = t2.elapsed().as_secs_f64()*1e3;

        let t3 = Instant::now();
        let gt = Tensor::from_vec(&[2048, 3], sample.values.clone()).unwrap();
        let loss = l1_loss(&pred, &gt).unwrap();
        loss.backward().unwrap();
        let t_bwd = t3.elapsed().as_secs_f64()*1e3;

        let t4 = Instant::now();
        let params = model.parameters();
        let mut adam = AdamState::new(&params);
        adam_step(&params, &mut adam, 1e-4, 0.9, 0.999, 1e-8).unwrap();
        model.zero_grads();
        let t_adam = t4.elapsed().as_secs_f64()*1e3;
        println!("rep{rep}: encode {t_enc:.0}ms | sgif {t_sgif:.1}ms | backward {t_bwd:.0}ms | adam {t_adam:.1}ms");
    }
}
