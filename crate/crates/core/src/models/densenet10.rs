//! DenseNet10: a compact densely connected segmentation network.
//!
//! Three dense blocks with ten pre-activated composite layers in total
//! (1 + 8 + 1), one Transition Down in the contracting path (strided 3×3),
//! one Transition Up in the expansive path (transposed 3×3), and a skip
//! concatenating the pre-TD features after the TU. Most composite layers sit
//! below the TD where convolutions are four times cheaper. With growth rate 5
//! the transition widths below land at ≈210 k trainable parameters (the
//! published figure is 210,732).

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::models::blocks::{DenseBlock, NormActConv, TransitionUp};
use crate::models::{ModelSpec, SegNet};
use crate::scalar::Real;
use crate::tensor::{concat_channels, split_channels, Act, Conv2d, Fmap, Norm2d};

/// Composite layers per dense block.
const LAYERS: [usize; 3] = [1, 8, 1];
/// Stem width.
const C0: usize = 48;
/// Transition Down width (the main parameter bank, at half resolution).
const C_TD: usize = 191;
/// Transition Up width.
const C_TU: usize = 16;

/// Published parameter count for growth rate 5, with the accepted ±5% band.
pub const REFERENCE_PARAMS: usize = 210_732;
pub const PARAM_TOLERANCE: f64 = 0.05;

pub struct DenseNet10G<R: Real> {
    spec: ModelSpec,
    stem: Conv2d<R>,
    db1: DenseBlock<R>,
    td: NormActConv<R>,
    db2: DenseBlock<R>,
    tu: TransitionUp<R>,
    db3: DenseBlock<R>,
    head_norm: Norm2d<R>,
    head: Conv2d<R>,
    ctx: Option<Ctx<R>>,
}

struct Ctx<R: Real> {
    stem: crate::tensor::ConvCtx<R>,
    db1: crate::models::blocks::DenseBlockCtx<R>,
    td: crate::models::blocks::NacCtx<R>,
    db2: crate::models::blocks::DenseBlockCtx<R>,
    tu: crate::models::blocks::TuCtx<R>,
    db3: crate::models::blocks::DenseBlockCtx<R>,
    head_norm: crate::tensor::NormCtx<R>,
    head_act: crate::tensor::ActCtx,
    head: crate::tensor::ConvCtx<R>,
}

pub fn build_densenet10<R: Real>(spec: ModelSpec, seed: u64) -> Result<DenseNet10G<R>> {
    if spec.arch != crate::models::Arch::DenseNet10 {
        return Err(Error::ModelBuild(format!(
            "build_densenet10 got arch {:?}",
            spec.arch
        )));
    }
    spec.validate()?;
    let k = spec.growth_rate;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x64656e7365); // "dense"
    let stem = Conv2d::new(&mut rng, 3, C0, 3, 1, 1, false);
    let db1 = DenseBlock::new(&mut rng, C0, k, LAYERS[0]);
    let skip_channels = db1.c_out();
    let td = NormActConv::new(&mut rng, skip_channels, C_TD, 3, 2);
    let db2 = DenseBlock::new(&mut rng, C_TD, k, LAYERS[1]);
    let tu = TransitionUp::new(&mut rng, db2.c_out(), C_TU);
    let db3 = DenseBlock::new(&mut rng, C_TU + skip_channels, k, LAYERS[2]);
    let c_head = db3.c_out();
    let head_norm = Norm2d::new(c_head);
    let head = Conv2d::new(&mut rng, c_head, spec.num_classes, 1, 1, 0, true);
    let net = DenseNet10G {
        spec,
        stem,
        db1,
        td,
        db2,
        tu,
        db3,
        head_norm,
        head,
        ctx: None,
    };
    if net.spec.growth_rate == 5 {
        let count = net.param_count();
        let lo = (REFERENCE_PARAMS as f64 * (1.0 - PARAM_TOLERANCE)) as usize;
        let hi = (REFERENCE_PARAMS as f64 * (1.0 + PARAM_TOLERANCE)) as usize;
        if !(lo..=hi).contains(&count) {
            eprintln!("warning: densenet10 (k=5) has {count} parameters, outside [{lo}, {hi}]");
        }
    }
    Ok(net)
}

impl<R: Real> SegNet<R> for DenseNet10G<R> {
    fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    fn forward_logits(&self, x: &Fmap<R>) -> Fmap<R> {
        let h = self.stem.forward(x);
        let skip = self.db1.forward(&h);
        let h = self.td.forward(&skip);
        let h = self.db2.forward(&h);
        let up = self.tu.forward(&h);
        let h = self.db3.forward(&concat_channels(&up, &skip));
        let h = Act::Relu.forward(self.head_norm.forward(&h));
        self.head.forward(&h)
    }

    fn forward_train(&mut self, x: &Fmap<R>) -> Fmap<R> {
        let (h, stem) = self.stem.forward_train(x);
        let (skip, db1) = self.db1.forward_train(&h);
        let (h, td) = self.td.forward_train(&skip);
        let (h, db2) = self.db2.forward_train(&h);
        let (up, tu) = self.tu.forward_train(&h);
        let (h, db3) = self.db3.forward_train(&concat_channels(&up, &skip));
        let (h, head_norm) = self.head_norm.forward_train(&h);
        let (h, head_act) = Act::Relu.forward_train(h);
        let (logits, head) = self.head.forward_train(&h);
        self.ctx = Some(Ctx {
            stem,
            db1,
            td,
            db2,
            tu,
            db3,
            head_norm,
            head_act,
            head,
        });
        logits
    }

    fn backward(&mut self, dlogits: &Fmap<R>) {
        let ctx = self.ctx.take().expect("forward_train before backward");
        let dh = self.head.backward(&ctx.head, dlogits);
        let dh = Act::Relu.backward(&ctx.head_act, dh);
        let dh = self.head_norm.backward(&ctx.head_norm, &dh);
        let dcat = self.db3.backward(&ctx.db3, &dh);
        let (dup, dskip_cat) = split_channels(&dcat, C_TU);
        let dh = self.tu.backward(&ctx.tu, &dup);
        let dh = self.db2.backward(&ctx.db2, &dh);
        let dskip_td = self.td.backward(&ctx.td, &dh);
        let dskip = dskip_cat + dskip_td;
        let dh = self.db1.backward(&ctx.db1, &dskip);
        let _ = self.stem.backward(&ctx.stem, &dh);
    }

    fn visit_params(&mut self, f: &mut dyn FnMut(&mut [R], &mut [R])) {
        self.stem.visit_params(f);
        self.db1.visit_params(f);
        self.td.visit_params(f);
        self.db2.visit_params(f);
        self.tu.visit_params(f);
        self.db3.visit_params(f);
        self.head_norm.visit_params(f);
        self.head.visit_params(f);
    }

    fn param_count(&self) -> usize {
        self.stem.param_count()
            + self.db1.param_count()
            + self.td.param_count()
            + self.db2.param_count()
            + self.tu.param_count()
            + self.db3.param_count()
            + self.head_norm.param_count()
            + self.head.param_count()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::forward_probs;
    use ndarray::Array3;

    #[test]
    fn growth_five_lands_within_published_tolerance() {
        let net = build_densenet10::<f32>(ModelSpec::densenet10(448, 5), 0).unwrap();
        let count = net.param_count();
        let lo = (REFERENCE_PARAMS as f64 * 0.95) as usize;
        let hi = (REFERENCE_PARAMS as f64 * 1.05) as usize;
        assert!(
            (lo..=hi).contains(&count),
            "parameter count {count} outside [{lo}, {hi}]"
        );
    }

    #[test]
    fn forward_shapes_and_normalization() {
        let net = build_densenet10::<f32>(ModelSpec::densenet10(64, 5), 2).unwrap();
        let x = Array3::<f32>::zeros((3, 64, 64));
        let p = forward_probs(&net, &x);
        assert_eq!(p.dim(), (2, 64, 64));
        for y in [0usize, 17, 63] {
            for x2 in [0usize, 30, 63] {
                assert!((p[(0, y, x2)] + p[(1, y, x2)] - 1.0).abs() < 1e-5);
            }
        }
    }

    #[test]
    fn train_forward_matches_inference_forward() {
        let mut net = build_densenet10::<f32>(ModelSpec::densenet10(32, 5), 9).unwrap();
        let x = Array3::<f32>::from_shape_fn((3, 32, 32), |(c, y, x)| {
            0.2 * (c as f32) - 0.01 * (y as f32) + 0.02 * (x as f32)
        });
        let a = net.forward_logits(&x);
        let b = net.forward_train(&x);
        let mut max_err = 0.0f32;
        for (va, vb) in a.iter().zip(b.iter()) {
            max_err = max_err.max((va - vb).abs());
        }
        assert!(max_err < 1e-5);
    }

    #[test]
    fn growth_rate_changes_parameter_count() {
        let k5 = build_densenet10::<f32>(ModelSpec::densenet10(64, 5), 0)
            .unwrap()
            .param_count();
        let k8 = build_densenet10::<f32>(ModelSpec::densenet10(64, 8), 0)
            .unwrap()
            .param_count();
        assert!(k8 > k5);
    }

    /// The fused dense-block gradients must agree with finite differences.
    #[test]
    fn dense_net_gradients_match_finite_differences() {
        use crate::models::{read_grads, read_params, write_params};
        use crate::tensor::softmax_channels;
        use crate::train::{crossentropy_grad_logits, pixel_crossentropy};
        let spec = ModelSpec::densenet10(32, 2);
        let mut net = build_densenet10::<f64>(spec, 3).unwrap();
        let x = Array3::<f64>::from_shape_fn((3, 32, 32), |(c, y, x)| {
            ((c * 31 + y * 7 + x * 3) % 17) as f64 / 17.0 - 0.5
        });
        let target = crate::data::SegMask::new(ndarray::Array2::from_shape_fn(
            (32, 32),
            |(y, x)| ((y / 5 + x / 7) % 2) as u8,
        ))
        .unwrap();
        crate::models::zero_grads(&mut net);
        let logits = net.forward_train(&x);
        let probs = softmax_channels(&logits);
        let d = crossentropy_grad_logits(&probs, &target);
        net.backward(&d);
        let grads = read_grads(&mut net);
        let theta = read_params(&mut net);
        let mut rng = <ChaCha8Rng as rand::SeedableRng>::seed_from_u64(12);
        let h = 1e-4;
        for _ in 0..12 {
            let i = rand::Rng::random_range(&mut rng, 0..theta.len());
            let mut plus = theta.clone();
            plus[i] += h;
            write_params(&mut net, &plus);
            let lp =
                pixel_crossentropy(&softmax_channels(&net.forward_logits(&x)), &target).unwrap();
            let mut minus = theta.clone();
            minus[i] -= h;
            write_params(&mut net, &minus);
            let lm =
                pixel_crossentropy(&softmax_channels(&net.forward_logits(&x)), &target).unwrap();
            let numeric = (lp - lm) / (2.0 * h);
            let denom = numeric.abs().max(grads[i].abs()).max(1e-8);
            assert!(
                (numeric - grads[i]).abs() / denom < 1e-4,
                "param {i}: numeric {numeric} vs analytic {}",
                grads[i]
            );
        }
        write_params(&mut net, &theta);
    }
}
