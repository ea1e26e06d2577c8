//! Rough per-step timing for the two segmentation networks.

use idseg::data::{generate_synthetic_sample, GeneratorConfig};
use idseg::models::{build_densenet10, build_mobileunet, ModelSpec, SegNet};
use idseg::train::{crossentropy_grad_logits, pixel_crossentropy, Adam};
use idseg::imgproc::{resize_bilinear_rgb, resize_nearest_u8, to_chw_norm};
use idseg::data::SegMask;
use idseg::tensor::softmax_channels;
use std::time::Instant;

fn bench(net: &mut dyn SegNet<f32>, name: &str) {
    let cfg = GeneratorConfig::desk(320, 180);
    let s = generate_synthetic_sample(&cfg, 1).unwrap();
    let side = net.spec().input_size;
    let img = resize_bilinear_rgb(&s.image, side, side);
    let x = to_chw_norm::<f32>(&img);
    let y = SegMask::from_nonzero(resize_nearest_u8(s.mask.labels(), side, side));
    let mut adam = Adam::<f32>::new(1e-3);
    // warmup + timed
    let t0 = Instant::now();
    let logits = net.forward_logits(&x);
    println!("{name}: inference fwd {:.3}s", t0.elapsed().as_secs_f64());
    let n = 3;
    let (mut t_f, mut t_l, mut t_b, mut t_a) = (0.0, 0.0, 0.0, 0.0);
    for _ in 0..n {
        idseg::models::zero_grads(net);
        let t = Instant::now();
        let logits = net.forward_train(&x);
        t_f += t.elapsed().as_secs_f64();
        let t = Instant::now();
        let probs = softmax_channels(&logits);
        let _l = pixel_crossentropy(&probs, &y).unwrap();
        let d = crossentropy_grad_logits(&probs, &y);
        t_l += t.elapsed().as_secs_f64();
        let t = Instant::now();
        net.backward(&d);
        t_b += t.elapsed().as_secs_f64();
        let t = Instant::now();
        adam.step(net, 1.0);
        t_a += t.elapsed().as_secs_f64();
    }
    let per = (t_f + t_l + t_b + t_a) / n as f64;
    println!("{name}: fwd_train {:.3}s loss {:.3}s backward {:.3}s adam {:.3}s", t_f/n as f64, t_l/n as f64, t_b/n as f64, t_a/n as f64);
    println!("{name}: train step (1 img) {per:.3}s  -> desk-scale 600 steps x10 imgs = {:.1} min", per * 10.0 * 600.0 / 60.0);
    let _ = logits;
}

fn main() {
    let mut spec = ModelSpec::mobileunet(224);
    spec.pretrained_encoder = false;
    let mut unet = build_mobileunet::<f32>(spec, 0).unwrap();
    println!("mobileunet params: {}", unet.param_count());
    bench(&mut unet, "mobileunet-224");
    let mut dn = build_densenet10::<f32>(ModelSpec::densenet10(224, 5), 0).unwrap();
    println!("densenet10 params: {}", dn.param_count());
    bench(&mut dn, "densenet10-224");
}
