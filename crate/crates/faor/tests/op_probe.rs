use faor::tensor::{layer_norm, Parameter, Tensor};
use std::time::Instant;

fn timeit(name: &str, mut f: impl FnMut()) {
    let t = Instant::now();
    let reps = 50;
    for _ in 0..reps { f(); }
    println!("{name}: {:.2}ms", t.elapsed().as_secs_f64()*1e3/reps as f64);
}

#[test]
fn op_probe() {
    let n = 16384usize;
    let d = 32usize;
    let x: Vec<f32> = (0..n*d).map(|i| (i as f32*0.01).sin()).collect();
    let w: Vec<f32> = (0..d*d).map(|i| (i as f32*0.02).cos()).collect();
    let xt = Tensor::from_vec(&[n, d], x.clone()).unwrap();
    let wt = Tensor::from_vec(&[d, d], w.clone()).unwrap();
    let wide: Vec<f32> = (0..n*64).map(|i| (i as f32*0.01).sin()).collect();
    let widet = Tensor::from_vec(&[n, 64], wide).unwrap();
    let gain = Parameter::new("g", &[d], vec![1.0f32; d]).unwrap();
    let bias = Parameter::new("b", &[d], vec![0.0f32; d]).unwrap();
    let small: Vec<f32> = (0..n*2).map(|i| (i as f32*0.01).sin()).collect();
    let smallt = Tensor::from_vec(&[n, 2], small).unwrap();
    let w2: Vec<f32> = (0..2*16).map(|i| (i as f32*0.02).cos()).collect();
    let w2t = Tensor::from_vec(&[2, 16], w2).unwrap();

    timeit("matmul 16384x32x32", || { xt.matmul(&wt).unwrap(); });
    timeit("matmul 16384x2x16 ", || { smallt.matmul(&w2t).unwrap(); });
    timeit("transpose2 16384x32", || { xt.transpose2().unwrap(); });
    timeit("attn qTk (32x16384)(16384x32)", || { xt.transpose2().unwrap().matmul(&xt).unwrap(); });
    timeit("gelu 16384x64", || { widet.gelu().unwrap(); });
    timeit("layer_norm 16384x32", || { layer_norm(&xt, gain.tensor(), bias.tensor()).unwrap(); });
    timeit("add 16384x32", || { xt.add(&xt).unwrap(); });
    timeit("mul 16384x32", || { xt.mul(&xt).unwrap(); });
    timeit("narrow 16384x64->32", || { widet.narrow_last(0, 32).unwrap(); });
    timeit("from_vec 16384x32", || { Tensor::from_vec(&[n, d], x.clone()).unwrap(); });
}
