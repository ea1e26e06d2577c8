//! The three segmentation methods: MobileUNet, DenseNet10 and the HOG/SVM
//! sliding-window baseline, plus model specs, checkpoints and prediction
//! plumbing.

pub mod blocks;
pub mod densenet10;
pub mod hog;
pub mod mobileunet;
pub mod svm;
pub mod window;

use serde::{Deserialize, Serialize};
use std::fmt;
use std::io::{Read, Write};
use std::path::Path;

use crate::data::SegMask;
use crate::error::{Error, Result};
use crate::eval::MaskPredictor;
use crate::imgproc::{resize_bilinear_chw, resize_nearest_u8, to_chw_norm, Rgb8};
use crate::scalar::{r, to_f64, Real};
use crate::tensor::{softmax_channels, Fmap};

pub use densenet10::{build_densenet10, DenseNet10G};
pub use hog::{hog_descriptor, hog_descriptor_len, HogParams};
pub use mobileunet::{build_mobileunet, MobileUNetG};
pub use svm::{train_svm, LinearSvm};
pub use window::{sliding_window_segment, train_hog_svm, HogSvmModel};

/// Environment variable naming a pretrained-encoder checkpoint for MobileUNet.
pub const PRETRAINED_ENCODER_ENV: &str = "IDSEG_MOBILENETV2_WEIGHTS";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Arch {
    MobileUNet,
    DenseNet10,
    /// Diagnostic micro-network used by gradient checks and smoke tests.
    Tiny,
}

impl fmt::Display for Arch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Arch::MobileUNet => "mobileunet",
            Arch::DenseNet10 => "densenet10",
            Arch::Tiny => "tiny",
        };
        f.write_str(s)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub arch: Arch,
    /// Square network input side.
    pub input_size: usize,
    pub num_classes: usize,
    /// DenseNet10 growth rate (ignored by the other archs).
    pub growth_rate: usize,
    /// MobileUNet only: initialize the encoder from a pretrained checkpoint.
    pub pretrained_encoder: bool,
}

impl ModelSpec {
    pub fn mobileunet(input_size: usize) -> Self {
        ModelSpec {
            arch: Arch::MobileUNet,
            input_size,
            num_classes: 2,
            growth_rate: 5,
            pretrained_encoder: true,
        }
    }

    pub fn densenet10(input_size: usize, growth_rate: usize) -> Self {
        ModelSpec {
            arch: Arch::DenseNet10,
            input_size,
            num_classes: 2,
            growth_rate,
            pretrained_encoder: false,
        }
    }

    pub fn tiny(input_size: usize) -> Self {
        ModelSpec {
            arch: Arch::Tiny,
            input_size,
            num_classes: 2,
            growth_rate: 5,
            pretrained_encoder: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let stride = match self.arch {
            Arch::Tiny => 4,
            _ => 32,
        };
        if self.input_size == 0 || self.input_size % stride != 0 {
            return Err(Error::ModelBuild(format!(
                "input_size {} must be a positive multiple of {stride}",
                self.input_size
            )));
        }
        if self.num_classes < 2 {
            return Err(Error::ModelBuild("num_classes must be at least 2".into()));
        }
        if self.growth_rate < 1 {
            return Err(Error::ModelBuild("growth_rate must be at least 1".into()));
        }
        Ok(())
    }
}

/// A trainable segmentation network operating on CHW inputs in `[-1, 1]`.
///
/// `forward_logits` is pure and safe to call from read-only contexts;
/// `forward_train`/`backward` form the single-controller training path
/// (`forward_train` caches what `backward` consumes).
pub trait SegNet<R: Real> {
    fn spec(&self) -> &ModelSpec;
    fn forward_logits(&self, x: &Fmap<R>) -> Fmap<R>;
    fn forward_train(&mut self, x: &Fmap<R>) -> Fmap<R>;
    fn backward(&mut self, dlogits: &Fmap<R>);
    fn visit_params(&mut self, f: &mut dyn FnMut(&mut [R], &mut [R]));
    fn param_count(&self) -> usize;
    /// Leading parameters that belong to a pretrained encoder (candidates for
    /// freezing); zero for architectures without one.
    fn encoder_params(&self) -> usize {
        0
    }
}

/// Per-pixel class probabilities (softmax over the logits).
pub fn forward_probs<R: Real>(net: &dyn SegNet<R>, x: &Fmap<R>) -> Fmap<R> {
    softmax_channels(&net.forward_logits(x))
}

/// Total trainable scalar parameters.
pub fn count_parameters<R: Real>(net: &dyn SegNet<R>) -> usize {
    net.param_count()
}

/// Predicts a {0,1} mask for an arbitrary-size image: bilinear resize to the
/// network input, forward, per-pixel argmax (ties break toward background),
/// nearest-neighbour resize back.
pub fn predict_mask<R: Real>(net: &dyn SegNet<R>, image: &Rgb8) -> SegMask {
    let (h, w, _) = image.dim();
    let s = net.spec().input_size;
    let x = resize_bilinear_chw(&to_chw_norm::<R>(image), s, s);
    let logits = net.forward_logits(&x);
    let small = argmax_mask(&logits);
    SegMask::from_nonzero(resize_nearest_u8(&small, w, h))
}

/// Argmax over the class axis; class 1 wins only with a strictly larger score.
pub fn argmax_mask<R: Real>(logits: &Fmap<R>) -> ndarray::Array2<u8> {
    let (_, h, w) = logits.dim();
    let n = h * w;
    let ls = logits.as_slice().expect("contiguous logits");
    let mut out = ndarray::Array2::<u8>::zeros((h, w));
    let os = out.as_slice_mut().unwrap();
    for i in 0..n {
        os[i] = (ls[n + i] > ls[i]) as u8;
    }
    out
}

// ---------------------------------------------------------------------------
// Parameter vector helpers (gradient check, checkpointing, best-epoch snapshots)
// ---------------------------------------------------------------------------

pub fn read_params<R: Real>(net: &mut dyn SegNet<R>) -> Vec<R> {
    let mut out = Vec::with_capacity(net.param_count());
    net.visit_params(&mut |w, _| out.extend_from_slice(w));
    out
}

pub fn write_params<R: Real>(net: &mut dyn SegNet<R>, values: &[R]) {
    let mut off = 0usize;
    net.visit_params(&mut |w, _| {
        w.copy_from_slice(&values[off..off + w.len()]);
        off += w.len();
    });
    assert_eq!(off, values.len(), "parameter vector length mismatch");
}

pub fn read_grads<R: Real>(net: &mut dyn SegNet<R>) -> Vec<R> {
    let mut out = Vec::with_capacity(net.param_count());
    net.visit_params(&mut |_, g| out.extend_from_slice(g));
    out
}

pub fn zero_grads<R: Real>(net: &mut dyn SegNet<R>) {
    net.visit_params(&mut |_, g| g.fill(R::zero()));
}

// ---------------------------------------------------------------------------
// Checkpoints: JSON header + little-endian f32 blob, versioned
// ---------------------------------------------------------------------------

const CKPT_MAGIC: &[u8; 8] = b"IDSEGCK1";

#[derive(Serialize, Deserialize)]
struct CkptHeader {
    version: u32,
    spec: ModelSpec,
    param_count: usize,
}

pub fn save_checkpoint<R: Real>(net: &mut dyn SegNet<R>, path: &Path) -> Result<()> {
    let header = CkptHeader {
        version: 1,
        spec: net.spec().clone(),
        param_count: net.param_count(),
    };
    let header_json = serde_json::to_vec(&header).expect("serializable header");
    let params = read_params(net);
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(CKPT_MAGIC).map_err(|e| Error::io(path, e))?;
    f.write_all(&(header_json.len() as u32).to_le_bytes())
        .map_err(|e| Error::io(path, e))?;
    f.write_all(&header_json).map_err(|e| Error::io(path, e))?;
    let mut blob = Vec::with_capacity(params.len() * 4);
    for v in params {
        blob.extend_from_slice(&(to_f64(v) as f32).to_le_bytes());
    }
    f.write_all(&blob).map_err(|e| Error::io(path, e))?;
    Ok(())
}

fn read_ckpt(path: &Path) -> Result<(CkptHeader, Vec<f32>)> {
    let mut f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut magic = [0u8; 8];
    f.read_exact(&mut magic).map_err(|e| Error::io(path, e))?;
    if &magic != CKPT_MAGIC {
        return Err(Error::Checkpoint {
            path: path.to_path_buf(),
            msg: "bad magic; not an idseg checkpoint".into(),
        });
    }
    let mut len4 = [0u8; 4];
    f.read_exact(&mut len4).map_err(|e| Error::io(path, e))?;
    let hlen = u32::from_le_bytes(len4) as usize;
    let mut hjson = vec![0u8; hlen];
    f.read_exact(&mut hjson).map_err(|e| Error::io(path, e))?;
    let header: CkptHeader = serde_json::from_slice(&hjson).map_err(|e| Error::Checkpoint {
        path: path.to_path_buf(),
        msg: format!("header parse: {e}"),
    })?;
    let mut blob = Vec::new();
    f.read_to_end(&mut blob).map_err(|e| Error::io(path, e))?;
    if blob.len() != header.param_count * 4 {
        return Err(Error::Checkpoint {
            path: path.to_path_buf(),
            msg: format!(
                "weights blob holds {} bytes, expected {}",
                blob.len(),
                header.param_count * 4
            ),
        });
    }
    let params = blob
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    Ok((header, params))
}

/// Rebuilds the architecture named in the checkpoint and loads its weights.
pub fn load_checkpoint(path: &Path) -> Result<Box<dyn SegNet<f32>>> {
    let (header, params) = read_ckpt(path)?;
    let mut spec = header.spec;
    // weights replace any pretrained initialization
    spec.pretrained_encoder = false;
    let mut net: Box<dyn SegNet<f32>> = build_net(&spec, 0)?;
    if net.param_count() != params.len() {
        return Err(Error::Checkpoint {
            path: path.to_path_buf(),
            msg: format!(
                "architecture expects {} parameters, checkpoint holds {}",
                net.param_count(),
                params.len()
            ),
        });
    }
    write_params(net.as_mut(), &params);
    Ok(net)
}

/// Builds any architecture from its spec (random init, seeded).
pub fn build_net(spec: &ModelSpec, seed: u64) -> Result<Box<dyn SegNet<f32>>> {
    match spec.arch {
        Arch::MobileUNet => Ok(Box::new(build_mobileunet::<f32>(spec.clone(), seed)?)),
        Arch::DenseNet10 => Ok(Box::new(build_densenet10::<f32>(spec.clone(), seed)?)),
        Arch::Tiny => Ok(Box::new(TinyNet::<f32>::new(spec.clone(), seed)?)),
    }
}

/// Loads pretrained encoder weights into a MobileUNet. Accepts either an
/// encoder-only blob or a full-model checkpoint (encoder parameters come
/// first in visit order).
pub fn load_pretrained_encoder<R: Real>(net: &mut MobileUNetG<R>, path: &Path) -> Result<()> {
    let (_, params) = read_ckpt(path)?;
    let need = net.encoder_param_count();
    if params.len() < need {
        return Err(Error::Checkpoint {
            path: path.to_path_buf(),
            msg: format!(
                "encoder needs {need} parameters, checkpoint holds {}",
                params.len()
            ),
        });
    }
    let mut off = 0usize;
    net.visit_encoder_params(&mut |w: &mut [R], _g: &mut [R]| {
        for (i, slot) in w.iter_mut().enumerate() {
            *slot = r::<R>(params[off + i] as f64);
        }
        off += w.len();
    });
    debug_assert_eq!(off, need);
    Ok(())
}

// ---------------------------------------------------------------------------
// Network-backed mask predictor
// ---------------------------------------------------------------------------

pub struct NetPredictor<'a, R: Real> {
    pub net: &'a dyn SegNet<R>,
}

impl<R: Real> MaskPredictor for NetPredictor<'_, R> {
    fn predict(&self, image: &Rgb8) -> SegMask {
        predict_mask(self.net, image)
    }

    fn model_id(&self) -> String {
        format!("{}-{}", self.net.spec().arch, self.net.spec().input_size)
    }
}

impl MaskPredictor for Box<dyn SegNet<f32>> {
    fn predict(&self, image: &Rgb8) -> SegMask {
        predict_mask(self.as_ref(), image)
    }

    fn model_id(&self) -> String {
        format!("{}-{}", self.spec().arch, self.spec().input_size)
    }
}

// ---------------------------------------------------------------------------
// Tiny diagnostic network (two strided conv blocks and a 1×1 head at 1/4 res)
// ---------------------------------------------------------------------------

pub struct TinyNet<R: Real> {
    spec: ModelSpec,
    c1: blocks::ConvNormAct<R>,
    c2: blocks::ConvNormAct<R>,
    head: crate::tensor::Conv2d<R>,
    ctx: Option<TinyCtx<R>>,
}

struct TinyCtx<R: Real> {
    c1: blocks::CnaCtx<R>,
    c2: blocks::CnaCtx<R>,
    head: crate::tensor::ConvCtx<R>,
    in_hw: (usize, usize),
}

impl<R: Real> TinyNet<R> {
    pub fn new(spec: ModelSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed ^ 0x7131);
        Ok(TinyNet {
            c1: blocks::ConvNormAct::new(&mut rng, 3, 8, 3, 2, crate::tensor::Act::Relu),
            c2: blocks::ConvNormAct::new(&mut rng, 8, 12, 3, 2, crate::tensor::Act::Relu),
            head: crate::tensor::Conv2d::new(&mut rng, 12, spec.num_classes, 1, 1, 0, true),
            spec,
            ctx: None,
        })
    }
}

impl<R: Real> SegNet<R> for TinyNet<R> {
    fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    fn forward_logits(&self, x: &Fmap<R>) -> Fmap<R> {
        let (_, h, w) = x.dim();
        let y = self.head.forward(&self.c2.forward(&self.c1.forward(x)));
        upsample_logits(&y, h, w)
    }

    fn forward_train(&mut self, x: &Fmap<R>) -> Fmap<R> {
        let (_, h, w) = x.dim();
        let (a, c1) = self.c1.forward_train(x);
        let (b, c2) = self.c2.forward_train(&a);
        let (y, head) = self.head.forward_train(&b);
        self.ctx = Some(TinyCtx {
            c1,
            c2,
            head,
            in_hw: (h, w),
        });
        upsample_logits(&y, h, w)
    }

    fn backward(&mut self, dlogits: &Fmap<R>) {
        let ctx = self.ctx.take().expect("forward_train before backward");
        let dsmall = downsample_logit_grad(dlogits, ctx.in_hw.0 / 4, ctx.in_hw.1 / 4);
        let db = self.head.backward(&ctx.head, &dsmall);
        let da = self.c2.backward(&ctx.c2, db);
        let _ = self.c1.backward(&ctx.c1, da);
    }

    fn visit_params(&mut self, f: &mut dyn FnMut(&mut [R], &mut [R])) {
        self.c1.visit_params(f);
        self.c2.visit_params(f);
        self.head.visit_params(f);
    }

    fn param_count(&self) -> usize {
        self.c1.param_count() + self.c2.param_count() + self.head.param_count()
    }
}

/// Nearest-neighbour upsampling of a logit map to the full input resolution.
pub(crate) fn upsample_logits<R: Real>(y: &Fmap<R>, h: usize, w: usize) -> Fmap<R> {
    let (c, yh, yw) = y.dim();
    if (yh, yw) == (h, w) {
        return y.clone();
    }
    let mut out = Fmap::<R>::zeros((c, h, w));
    for ci in 0..c {
        for oy in 0..h {
            let iy = oy * yh / h;
            for ox in 0..w {
                let ix = ox * yw / w;
                out[(ci, oy, ox)] = y[(ci, iy, ix)];
            }
        }
    }
    out
}

/// Adjoint of [`upsample_logits`].
pub(crate) fn downsample_logit_grad<R: Real>(dy: &Fmap<R>, yh: usize, yw: usize) -> Fmap<R> {
    let (c, h, w) = dy.dim();
    if (yh, yw) == (h, w) {
        return dy.clone();
    }
    let mut out = Fmap::<R>::zeros((c, yh, yw));
    for ci in 0..c {
        for oy in 0..h {
            let iy = oy * yh / h;
            for ox in 0..w {
                let ix = ox * yw / w;
                out[(ci, iy, ix)] = out[(ci, iy, ix)] + dy[(ci, oy, ox)];
            }
        }
    }
    out
}
