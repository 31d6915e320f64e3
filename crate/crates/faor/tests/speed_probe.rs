use faor::config::ConfigFile;
use faor::model::{InitMode, LiftKernel, Model, ModelConfig};
use faor::resample::ResamplerKind;
use faor::synthetic::synthetic_odi;
use faor::train::{train_loop, TrainConfig};
use std::time::Instant;

#[test]
fn speed_probe() {
    let imgs: Vec<_> = (0..4).map(|i| synthetic_odi(256, 512, i)).collect();
    let cfg = ConfigFile {
        model: ModelConfig {
            num_blocks: 4,
            channels: 32,
            attention_scale: 32.0,
            mlp_hidden: 64,
            coord_encoding: faor::model::CoordEncoding::Raw,
            lift_kernel: LiftKernel::Conv3,
        },
        train: TrainConfig {
            max_iters: 20,
            pixels_per_patch: 2048,
            log_every: 5,
            seed: 1,
            ..Default::default()
        },
    };
    let model = Model::<f32>::new(cfg.model, 1, InitMode::Training).unwrap();
    let t = Instant::now();
    let report = train_loop(&model, &imgs, &cfg, ResamplerKind::Geodesic, None).unwrap();
    let dt = t.elapsed().as_secs_f64();
    println!("20 iters in {dt:.2}s -> {:.0}ms/iter; 5000 iters ~ {:.1} min", dt / 20.0 * 1000.0, dt / 20.0 * 5000.0 / 60.0);
    println!("initial {} final {}", report.initial_loss, report.final_loss);
}
