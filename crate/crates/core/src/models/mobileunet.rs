//! MobileUNet: a MobileNetV2 feature extractor (width 1.0) as the contracting
//! path, with a UNet expansive path.
//!
//! Encoder taps sit at strides 2/4/8/16/32 (the projection outputs of the
//! standard bottleneck stack). The decoder runs five stages of 2× upsampling,
//! skip concatenation and two 3×3 convolutions; the fifth stage concatenates
//! the normalized input image as its stride-1 skip. Decoder widths
//! (448/144/64/32/16) put the total at ≈6.4 M trainable parameters.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::path::PathBuf;

use crate::error::{Error, Result};
use crate::models::blocks::{ConvNormAct, DecoderStage, InvertedResidual};
use crate::models::{load_pretrained_encoder, ModelSpec, SegNet, PRETRAINED_ENCODER_ENV};
use crate::scalar::Real;
use crate::tensor::{Act, Conv2d, Fmap};

/// MobileNetV2 bottleneck schedule: (expand ratio, channels, repeats, stride).
const BOTTLENECKS: [(usize, usize, usize, usize); 7] = [
    (1, 16, 1, 1),
    (6, 24, 2, 2),
    (6, 32, 3, 2),
    (6, 64, 4, 2),
    (6, 96, 3, 1),
    (6, 160, 3, 2),
    (6, 320, 1, 1),
];

/// Indices of blocks whose output feeds a decoder skip (strides 2/4/8/16/32).
const TAPS: [usize; 5] = [0, 2, 5, 12, 16];

/// Decoder widths, deepest stage first.
const DECODER: [usize; 5] = [448, 144, 64, 32, 16];

pub struct MobileUNetG<R: Real> {
    spec: ModelSpec,
    stem: ConvNormAct<R>,
    blocks: Vec<InvertedResidual<R>>,
    stages: Vec<DecoderStage<R>>,
    head: Conv2d<R>,
    ctx: Option<Ctx<R>>,
}

struct Ctx<R: Real> {
    stem: crate::models::blocks::CnaCtx<R>,
    blocks: Vec<crate::models::blocks::InvResCtx<R>>,
    stages: Vec<crate::models::blocks::DecoderCtx<R>>,
    head: crate::tensor::ConvCtx<R>,
}

/// Builds the network; honours `spec.pretrained_encoder` by loading the
/// checkpoint named by `IDSEG_MOBILENETV2_WEIGHTS` (errors when missing).
pub fn build_mobileunet<R: Real>(spec: ModelSpec, seed: u64) -> Result<MobileUNetG<R>> {
    if spec.arch != crate::models::Arch::MobileUNet {
        return Err(Error::ModelBuild(format!(
            "build_mobileunet got arch {:?}",
            spec.arch
        )));
    }
    spec.validate()?;
    let mut net = MobileUNetG::init(spec, seed);
    if net.spec.pretrained_encoder {
        let path = std::env::var_os(PRETRAINED_ENCODER_ENV)
            .map(PathBuf::from)
            .unwrap_or_else(|| PathBuf::from("weights/mobilenetv2_imagenet.ckpt"));
        if !path.is_file() {
            return Err(Error::PretrainedUnavailable { path });
        }
        load_pretrained_encoder(&mut net, &path)?;
    }
    Ok(net)
}

impl<R: Real> MobileUNetG<R> {
    fn init(spec: ModelSpec, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x6d6f_6269_6c65); // "mobile"
        let stem = ConvNormAct::new(&mut rng, 3, 32, 3, 2, Act::Relu6);
        let mut blocks = Vec::new();
        let mut c_in = 32usize;
        for &(t, c, n, s) in &BOTTLENECKS {
            for i in 0..n {
                let stride = if i == 0 { s } else { 1 };
                blocks.push(InvertedResidual::new(&mut rng, c_in, c, stride, t));
                c_in = c;
            }
        }
        debug_assert_eq!(blocks.len(), 17);
        // skip channels per stage: t3 (96), t2 (32), t1 (24), t0 (16), input (3)
        let skips = [96usize, 32, 24, 16, 3];
        let mut stages = Vec::new();
        let mut c_low = 320usize;
        for (i, &c_out) in DECODER.iter().enumerate() {
            stages.push(DecoderStage::new(&mut rng, c_low, skips[i], c_out));
            c_low = c_out;
        }
        let head = Conv2d::new(&mut rng, DECODER[4], spec.num_classes, 1, 1, 0, true);
        MobileUNetG {
            spec,
            stem,
            blocks,
            stages,
            head,
            ctx: None,
        }
    }

    /// Encoder outputs: taps at strides 2/4/8/16/32.
    fn encode(&self, x: &Fmap<R>) -> [Fmap<R>; 5] {
        let mut h = self.stem.forward(x);
        let mut taps: Vec<Fmap<R>> = Vec::with_capacity(5);
        for (i, b) in self.blocks.iter().enumerate() {
            h = b.forward(&h);
            if TAPS.contains(&i) {
                taps.push(h.clone());
            }
        }
        taps.try_into().ok().expect("five taps")
    }

    pub fn encoder_param_count(&self) -> usize {
        self.stem.param_count() + self.blocks.iter().map(|b| b.param_count()).sum::<usize>()
    }

    pub fn visit_encoder_params(&mut self, f: &mut dyn FnMut(&mut [R], &mut [R])) {
        self.stem.visit_params(f);
        for b in &mut self.blocks {
            b.visit_params(f);
        }
    }
}

impl<R: Real> SegNet<R> for MobileUNetG<R> {
    fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    fn forward_logits(&self, x: &Fmap<R>) -> Fmap<R> {
        let [t0, t1, t2, t3, t4] = self.encode(x);
        let skips = [&t3, &t2, &t1, &t0, x];
        let mut h = t4;
        for (stage, skip) in self.stages.iter().zip(skips) {
            h = stage.forward(&h, skip);
        }
        self.head.forward(&h)
    }

    fn forward_train(&mut self, x: &Fmap<R>) -> Fmap<R> {
        let (mut h, stem_ctx) = self.stem.forward_train(x);
        let mut block_ctxs = Vec::with_capacity(self.blocks.len());
        let mut taps: Vec<Fmap<R>> = Vec::with_capacity(5);
        for (i, b) in self.blocks.iter().enumerate() {
            let (nh, c) = b.forward_train(&h);
            h = nh;
            block_ctxs.push(c);
            if TAPS.contains(&i) {
                taps.push(h.clone());
            }
        }
        let skips = [&taps[3], &taps[2], &taps[1], &taps[0], x];
        let mut stage_ctxs = Vec::with_capacity(5);
        let mut d = taps[4].clone();
        for (stage, skip) in self.stages.iter().zip(skips) {
            let (nd, c) = stage.forward_train(&d, skip);
            d = nd;
            stage_ctxs.push(c);
        }
        let (logits, head_ctx) = self.head.forward_train(&d);
        self.ctx = Some(Ctx {
            stem: stem_ctx,
            blocks: block_ctxs,
            stages: stage_ctxs,
            head: head_ctx,
        });
        logits
    }

    fn backward(&mut self, dlogits: &Fmap<R>) {
        let ctx = self.ctx.take().expect("forward_train before backward");
        let mut d = self.head.backward(&ctx.head, dlogits);
        // decoder stages in reverse; collect skip gradients
        let mut dskips: Vec<Fmap<R>> = Vec::with_capacity(5);
        for (stage, sctx) in self.stages.iter_mut().zip(&ctx.stages).rev() {
            let (dlow, dskip) = stage.backward(sctx, d);
            dskips.push(dskip);
            d = dlow;
        }
        // dskips is [input, t0, t1, t2, t3] after the reversed walk
        let dt0 = &dskips[1];
        let dt1 = &dskips[2];
        let dt2 = &dskips[3];
        let dt3 = &dskips[4];
        // `d` is now the gradient at tap 4 (block 16 output)
        let mut g = d;
        for i in (0..self.blocks.len()).rev() {
            match i {
                12 => g = g + dt3,
                5 => g = g + dt2,
                2 => g = g + dt1,
                0 => g = g + dt0,
                _ => {}
            }
            g = self.blocks[i].backward(&ctx.blocks[i], &g);
        }
        let _ = self.stem.backward(&ctx.stem, g);
    }

    fn visit_params(&mut self, f: &mut dyn FnMut(&mut [R], &mut [R])) {
        self.stem.visit_params(f);
        for b in &mut self.blocks {
            b.visit_params(f);
        }
        for s in &mut self.stages {
            s.visit_params(f);
        }
        self.head.visit_params(f);
    }

    fn param_count(&self) -> usize {
        self.encoder_param_count()
            + self.stages.iter().map(|s| s.param_count()).sum::<usize>()
            + self.head.param_count()
    }

    fn encoder_params(&self) -> usize {
        self.encoder_param_count()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::forward_probs;
    use ndarray::Array3;

    fn spec_no_pretrain(input: usize) -> ModelSpec {
        let mut s = ModelSpec::mobileunet(input);
        s.pretrained_encoder = false;
        s
    }

    #[test]
    fn parameter_count_in_published_window() {
        let net = build_mobileunet::<f32>(spec_no_pretrain(448), 0).unwrap();
        let count = net.param_count();
        assert!(
            (6_000_000..=7_000_000).contains(&count),
            "parameter count {count} outside [6.0M, 7.0M]"
        );
    }

    #[test]
    fn encoder_taps_compose_and_probs_normalize_on_small_input() {
        let net = build_mobileunet::<f32>(spec_no_pretrain(64), 1).unwrap();
        let x = Array3::<f32>::zeros((3, 64, 64));
        let p = forward_probs(&net, &x);
        assert_eq!(p.dim(), (2, 64, 64));
        let mut max_err = 0.0f32;
        for y in 0..64 {
            for x2 in 0..64 {
                max_err = max_err.max((p[(0, y, x2)] + p[(1, y, x2)] - 1.0).abs());
            }
        }
        assert!(max_err < 1e-5);
    }

    #[test]
    fn inference_is_deterministic() {
        let net = build_mobileunet::<f32>(spec_no_pretrain(64), 1).unwrap();
        let x = Array3::<f32>::from_shape_fn((3, 64, 64), |(c, y, x)| {
            ((c + 1) as f32 * 0.3 * (y as f32 * 0.11 + x as f32 * 0.07).sin()) as f32
        });
        let a = net.forward_logits(&x);
        let b = net.forward_logits(&x);
        assert_eq!(a, b);
    }

    #[test]
    fn pretrained_flag_errors_without_checkpoint() {
        let spec = ModelSpec::mobileunet(224);
        assert!(spec.pretrained_encoder);
        match build_mobileunet::<f32>(spec, 0) {
            Err(Error::PretrainedUnavailable { .. }) => {}
            other => panic!("expected pretrained-unavailable error, got {:?}", other.map(|_| ())),
        }
    }

    #[test]
    fn train_forward_matches_inference_forward() {
        let mut net = build_mobileunet::<f32>(spec_no_pretrain(32), 4).unwrap();
        let x = Array3::<f32>::from_shape_fn((3, 32, 32), |(c, y, x)| {
            0.1 * (c as f32 - 1.0) + 0.01 * (y as f32 - x as f32)
        });
        let a = net.forward_logits(&x);
        let b = net.forward_train(&x);
        let mut max_err = 0.0f32;
        for (va, vb) in a.iter().zip(b.iter()) {
            max_err = max_err.max((va - vb).abs());
        }
        assert!(max_err < 1e-5, "max divergence {max_err}");
    }
}
