//! Composite layers shared by the segmentation networks.

use rand_chacha::ChaCha8Rng;

use crate::scalar::Real;
use crate::tensor::{
    concat_channels, split_channels, upsample2x, upsample2x_backward, Act, ActCtx, Conv2d,
    ConvCtx, ConvT2d, ConvTCtx, DwConv2d, DwCtx, Fmap, Norm2d, NormCtx,
};

// ---------------------------------------------------------------------------
// conv -> norm -> activation
// ---------------------------------------------------------------------------

pub struct ConvNormAct<R: Real> {
    pub conv: Conv2d<R>,
    pub norm: Norm2d<R>,
    pub act: Act,
}

pub struct CnaCtx<R: Real> {
    conv: ConvCtx<R>,
    norm: NormCtx<R>,
    act: ActCtx,
}

impl<R: Real> ConvNormAct<R> {
    pub fn new(
        rng: &mut ChaCha8Rng,
        c_in: usize,
        c_out: usize,
        k: usize,
        stride: usize,
        act: Act,
    ) -> Self {
        ConvNormAct {
            conv: Conv2d::new(rng, c_in, c_out, k, stride, k / 2, false),
            norm: Norm2d::new(c_out),
            act,
        }
    }

    pub fn forward(&self, x: &Fmap<R>) -> Fmap<R> {
        self.act.forward(self.norm.forward(&self.conv.forward(x)))
    }

    pub fn forward_train(&self, x: &Fmap<R>) -> (Fmap<R>, CnaCtx<R>) {
        let (y, conv) = self.conv.forward_train(x);
        let (y, norm) = self.norm.forward_train(&y);
        let (y, act) = self.act.forward_train(y);
        (y, CnaCtx { conv, norm, act })
    }

    pub fn backward(&mut self, ctx: &CnaCtx<R>, dy: Fmap<R>) -> Fmap<R> {
        let dy = self.act.backward(&ctx.act, dy);
        let dy = self.norm.backward(&ctx.norm, &dy);
        self.conv.backward(&ctx.conv, &dy)
    }

    pub fn param_count(&self) -> usize {
        self.conv.param_count() + self.norm.param_count()
    }

    pub fn visit_params(&mut self, f: &mut dyn FnMut(&mut [R], &mut [R])) {
        self.conv.visit_params(f);
        self.norm.visit_params(f);
    }
}

// ---------------------------------------------------------------------------
// norm -> activation -> conv (pre-activation, dense-net style)
// ---------------------------------------------------------------------------

pub struct NormActConv<R: Real> {
    pub norm: Norm2d<R>,
    pub act: Act,
    pub conv: Conv2d<R>,
}

pub struct NacCtx<R: Real> {
    norm: NormCtx<R>,
    act: ActCtx,
    conv: ConvCtx<R>,
}

impl<R: Real> NormActConv<R> {
    pub fn new(rng: &mut ChaCha8Rng, c_in: usize, c_out: usize, k: usize, stride: usize) -> Self {
        NormActConv {
            norm: Norm2d::new(c_in),
            act: Act::Relu,
            conv: Conv2d::new(rng, c_in, c_out, k, stride, k / 2, false),
        }
    }

    pub fn forward(&self, x: &Fmap<R>) -> Fmap<R> {
        self.conv.forward(&self.act.forward(self.norm.forward(x)))
    }

    pub fn forward_train(&self, x: &Fmap<R>) -> (Fmap<R>, NacCtx<R>) {
        let (h, norm) = self.norm.forward_train(x);
        let (h, act) = self.act.forward_train(h);
        let (y, conv) = self.conv.forward_train(&h);
        (y, NacCtx { norm, act, conv })
    }

    pub fn backward(&mut self, ctx: &NacCtx<R>, dy: &Fmap<R>) -> Fmap<R> {
        let dh = self.conv.backward(&ctx.conv, dy);
        let dh = self.act.backward(&ctx.act, dh);
        self.norm.backward(&ctx.norm, &dh)
    }

    pub fn param_count(&self) -> usize {
        self.conv.param_count() + self.norm.param_count()
    }

    pub fn visit_params(&mut self, f: &mut dyn FnMut(&mut [R], &mut [R])) {
        self.norm.visit_params(f);
        self.conv.visit_params(f);
    }
}

// ---------------------------------------------------------------------------
// Inverted residual bottleneck (expand -> depthwise -> project)
// ---------------------------------------------------------------------------

pub struct InvertedResidual<R: Real> {
    expand: Option<ConvNormAct<R>>,
    dw: DwConv2d<R>,
    dw_norm: Norm2d<R>,
    project: Conv2d<R>,
    project_norm: Norm2d<R>,
    use_res: bool,
}

pub struct InvResCtx<R: Real> {
    expand: Option<CnaCtx<R>>,
    dw: DwCtx<R>,
    dw_norm: NormCtx<R>,
    dw_act: ActCtx,
    project: ConvCtx<R>,
    project_norm: NormCtx<R>,
}

impl<R: Real> InvertedResidual<R> {
    pub fn new(
        rng: &mut ChaCha8Rng,
        c_in: usize,
        c_out: usize,
        stride: usize,
        expand_ratio: usize,
    ) -> Self {
        let hidden = c_in * expand_ratio;
        InvertedResidual {
            expand: (expand_ratio != 1)
                .then(|| ConvNormAct::new(rng, c_in, hidden, 1, 1, Act::Relu6)),
            dw: DwConv2d::new(rng, hidden, stride),
            dw_norm: Norm2d::new(hidden),
            project: Conv2d::new(rng, hidden, c_out, 1, 1, 0, false),
            project_norm: Norm2d::new(c_out),
            use_res: stride == 1 && c_in == c_out,
        }
    }

    pub fn forward(&self, x: &Fmap<R>) -> Fmap<R> {
        let h = match &self.expand {
            Some(e) => e.forward(x),
            None => x.clone(),
        };
        let h = Act::Relu6.forward(self.dw_norm.forward(&self.dw.forward(&h)));
        let y = self.project_norm.forward(&self.project.forward(&h));
        if self.use_res {
            y + x
        } else {
            y
        }
    }

    pub fn forward_train(&self, x: &Fmap<R>) -> (Fmap<R>, InvResCtx<R>) {
        let (h, expand) = match &self.expand {
            Some(e) => {
                let (h, c) = e.forward_train(x);
                (h, Some(c))
            }
            None => (x.clone(), None),
        };
        let (h, dw) = self.dw.forward_train(&h);
        let (h, dw_norm) = self.dw_norm.forward_train(&h);
        let (h, dw_act) = Act::Relu6.forward_train(h);
        let (y, project) = self.project.forward_train(&h);
        let (y, project_norm) = self.project_norm.forward_train(&y);
        let out = if self.use_res { y + x } else { y };
        (
            out,
            InvResCtx {
                expand,
                dw,
                dw_norm,
                dw_act,
                project,
                project_norm,
            },
        )
    }

    pub fn backward(&mut self, ctx: &InvResCtx<R>, dy: &Fmap<R>) -> Fmap<R> {
        let dh = self.project_norm.backward(&ctx.project_norm, dy);
        let dh = self.project.backward(&ctx.project, &dh);
        let dh = Act::Relu6.backward(&ctx.dw_act, dh);
        let dh = self.dw_norm.backward(&ctx.dw_norm, &dh);
        let dh = self.dw.backward(&ctx.dw, &dh);
        let dx = match (&mut self.expand, &ctx.expand) {
            (Some(e), Some(c)) => e.backward(c, dh),
            _ => dh,
        };
        if self.use_res {
            dx + dy
        } else {
            dx
        }
    }

    pub fn param_count(&self) -> usize {
        self.expand.as_ref().map_or(0, |e| e.param_count())
            + self.dw.param_count()
            + self.dw_norm.param_count()
            + self.project.param_count()
            + self.project_norm.param_count()
    }

    pub fn visit_params(&mut self, f: &mut dyn FnMut(&mut [R], &mut [R])) {
        if let Some(e) = &mut self.expand {
            e.visit_params(f);
        }
        self.dw.visit_params(f);
        self.dw_norm.visit_params(f);
        self.project.visit_params(f);
        self.project_norm.visit_params(f);
    }
}

// ---------------------------------------------------------------------------
// UNet decoder stage: upsample, concat skip, two 3×3 convs
// ---------------------------------------------------------------------------

pub struct DecoderStage<R: Real> {
    pub c1: ConvNormAct<R>,
    pub c2: ConvNormAct<R>,
}

pub struct DecoderCtx<R: Real> {
    c1: CnaCtx<R>,
    c2: CnaCtx<R>,
    c_up: usize,
}

impl<R: Real> DecoderStage<R> {
    pub fn new(rng: &mut ChaCha8Rng, c_low: usize, c_skip: usize, c_out: usize) -> Self {
        DecoderStage {
            c1: ConvNormAct::new(rng, c_low + c_skip, c_out, 3, 1, Act::Relu),
            c2: ConvNormAct::new(rng, c_out, c_out, 3, 1, Act::Relu),
        }
    }

    pub fn forward(&self, x_low: &Fmap<R>, skip: &Fmap<R>) -> Fmap<R> {
        let up = upsample2x(x_low);
        debug_assert_eq!(
            (up.dim().1, up.dim().2),
            (skip.dim().1, skip.dim().2),
            "decoder stage output must match its skip's spatial size"
        );
        let cat = concat_channels(&up, skip);
        self.c2.forward(&self.c1.forward(&cat))
    }

    pub fn forward_train(&self, x_low: &Fmap<R>, skip: &Fmap<R>) -> (Fmap<R>, DecoderCtx<R>) {
        let up = upsample2x(x_low);
        let cat = concat_channels(&up, skip);
        let (h, c1) = self.c1.forward_train(&cat);
        let (y, c2) = self.c2.forward_train(&h);
        (
            y,
            DecoderCtx {
                c1,
                c2,
                c_up: x_low.dim().0,
            },
        )
    }

    /// Returns (gradient to the low-res input, gradient to the skip).
    pub fn backward(&mut self, ctx: &DecoderCtx<R>, dy: Fmap<R>) -> (Fmap<R>, Fmap<R>) {
        let dh = self.c2.backward(&ctx.c2, dy);
        let dcat = self.c1.backward(&ctx.c1, dh);
        let (dup, dskip) = split_channels(&dcat, ctx.c_up);
        (upsample2x_backward(&dup), dskip)
    }

    pub fn param_count(&self) -> usize {
        self.c1.param_count() + self.c2.param_count()
    }

    pub fn visit_params(&mut self, f: &mut dyn FnMut(&mut [R], &mut [R])) {
        self.c1.visit_params(f);
        self.c2.visit_params(f);
    }
}

// ---------------------------------------------------------------------------
// Dense block: pre-activated 3×3 layers, each appending `growth` channels
// ---------------------------------------------------------------------------

/// A whole dense block run in one growing channel buffer.
///
/// Layer `i` reads the first `c_in + i·growth` channels (a contiguous prefix
/// in CHW layout), applies norm → ReLU → 3×3 conv (kn2row) and writes its
/// `growth` feature maps into the next channel slots. Fusing the block this
/// way avoids the per-layer concatenate/pad/mask copies of a naive
/// composition; parameters and gradients still live in ordinary
/// [`Norm2d`]/[`Conv2d`] holders.
pub struct DenseBlock<R: Real> {
    layers: Vec<(Norm2d<R>, Conv2d<R>)>,
    pub c_in: usize,
    pub growth: usize,
}

pub struct DenseBlockCtx<R: Real> {
    /// Per layer: normalized input, per-channel inverse std, padded relu
    /// output (the conv's GEMM operand).
    layers: Vec<(ndarray::Array2<R>, ndarray::Array1<R>, ndarray::Array2<R>)>,
    h: usize,
    w: usize,
}

impl<R: Real> DenseBlock<R> {
    pub fn new(rng: &mut ChaCha8Rng, c_in: usize, growth: usize, n_layers: usize) -> Self {
        let mut layers = Vec::with_capacity(n_layers);
        let mut c = c_in;
        for _ in 0..n_layers {
            layers.push((
                Norm2d::new(c),
                Conv2d::new(rng, c, growth, 3, 1, 1, false),
            ));
            c += growth;
        }
        DenseBlock {
            layers,
            c_in,
            growth,
        }
    }

    pub fn c_out(&self) -> usize {
        self.c_in + self.layers.len() * self.growth
    }

    /// Channel statistics of the first `c` channels of a flat buffer.
    fn stats(buf: &[R], c: usize, n: usize) -> (Vec<R>, Vec<R>) {
        let eps = crate::scalar::r::<R>(R::EPS_NORM);
        let nn = crate::scalar::r::<R>(n as f64);
        let mut mean = Vec::with_capacity(c);
        let mut inv = Vec::with_capacity(c);
        for ci in 0..c {
            let row = &buf[ci * n..(ci + 1) * n];
            let mut s = R::zero();
            for &v in row {
                s = s + v;
            }
            let m = s / nn;
            let mut var = R::zero();
            for &v in row {
                let d = v - m;
                var = var + d * d;
            }
            mean.push(m);
            inv.push(R::one() / (var / nn + eps).sqrt());
        }
        (mean, inv)
    }

    /// One fused layer pass: fills `yp` (padded relu output) and optionally
    /// `xhat`, then GEMMs the kn2row partial products and accumulates the
    /// growth channels into `buf[c..c+growth]`.
    #[allow(clippy::too_many_arguments)]
    fn layer_forward(
        norm: &Norm2d<R>,
        conv: &Conv2d<R>,
        buf: &mut [R],
        c: usize,
        growth: usize,
        h: usize,
        w: usize,
        mut xhat_out: Option<&mut [R]>,
    ) -> (ndarray::Array1<R>, ndarray::Array2<R>) {
        let n = h * w;
        let (wp, np) = (w + 2, (h + 2) * (w + 2));
        let (mean, inv) = Self::stats(buf, c, n);
        let mut yp = ndarray::Array2::<R>::zeros((c, np));
        {
            let yps = yp.as_slice_mut().unwrap();
            for ci in 0..c {
                let (g, b) = (norm.gamma[ci], norm.beta[ci]);
                let (m, iv) = (mean[ci], inv[ci]);
                let src = &buf[ci * n..(ci + 1) * n];
                for iy in 0..h {
                    let dst = &mut yps[ci * np + (iy + 1) * wp + 1..ci * np + (iy + 1) * wp + 1 + w];
                    let srow = &src[iy * w..(iy + 1) * w];
                    match xhat_out.as_deref_mut() {
                        Some(xh) => {
                            let xrow = &mut xh[ci * n + iy * w..ci * n + (iy + 1) * w];
                            for i in 0..w {
                                let v = (srow[i] - m) * iv;
                                xrow[i] = v;
                                let a = g * v + b;
                                dst[i] = if a > R::zero() { a } else { R::zero() };
                            }
                        }
                        None => {
                            for i in 0..w {
                                let a = g * (srow[i] - m) * iv + b;
                                dst[i] = if a > R::zero() { a } else { R::zero() };
                            }
                        }
                    }
                }
            }
        }
        let mut partial = ndarray::Array2::<R>::zeros((9 * growth, np));
        ndarray::linalg::general_mat_mul(
            R::one(),
            &conv.w.view(),
            &yp.view(),
            R::zero(),
            &mut partial,
        );
        let ps = partial.as_slice().unwrap();
        for tap in 0..9usize {
            let (ky, kx) = (tap / 3, tap % 3);
            for gi in 0..growth {
                let prow = &ps[(tap * growth + gi) * np..(tap * growth + gi + 1) * np];
                for oy in 0..h {
                    let src = &prow[(oy + ky) * wp + kx..(oy + ky) * wp + kx + w];
                    let dst = &mut buf[(c + gi) * n + oy * w..(c + gi) * n + (oy + 1) * w];
                    for i in 0..w {
                        dst[i] = dst[i] + src[i];
                    }
                }
            }
        }
        (ndarray::Array1::from_vec(inv), yp)
    }

    pub fn forward(&self, x: &Fmap<R>) -> Fmap<R> {
        let (c_in, h, w) = x.dim();
        debug_assert_eq!(c_in, self.c_in);
        let n = h * w;
        let mut out = Fmap::<R>::zeros((self.c_out(), h, w));
        out.as_slice_mut().unwrap()[..c_in * n].copy_from_slice(x.as_slice().unwrap());
        let buf = out.as_slice_mut().unwrap();
        let mut c = c_in;
        for (norm, conv) in &self.layers {
            Self::layer_forward(norm, conv, buf, c, self.growth, h, w, None);
            c += self.growth;
        }
        out
    }

    pub fn forward_train(&self, x: &Fmap<R>) -> (Fmap<R>, DenseBlockCtx<R>) {
        let (c_in, h, w) = x.dim();
        let n = h * w;
        let mut out = Fmap::<R>::zeros((self.c_out(), h, w));
        out.as_slice_mut().unwrap()[..c_in * n].copy_from_slice(x.as_slice().unwrap());
        let buf = out.as_slice_mut().unwrap();
        let mut ctx = DenseBlockCtx {
            layers: Vec::with_capacity(self.layers.len()),
            h,
            w,
        };
        let mut c = c_in;
        for (norm, conv) in &self.layers {
            let mut xhat = ndarray::Array2::<R>::zeros((c, n));
            let (inv, yp) = Self::layer_forward(
                norm,
                conv,
                buf,
                c,
                self.growth,
                h,
                w,
                Some(xhat.as_slice_mut().unwrap()),
            );
            ctx.layers.push((xhat, inv, yp));
            c += self.growth;
        }
        (out, ctx)
    }

    /// `dy` carries gradients for all `c_out` channels; returns gradients for
    /// the block input.
    pub fn backward(&mut self, ctx: &DenseBlockCtx<R>, dy: &Fmap<R>) -> Fmap<R> {
        let (h, w) = (ctx.h, ctx.w);
        let n = h * w;
        let (wp, np) = (w + 2, (h + 2) * (w + 2));
        let growth = self.growth;
        let mut dbuf = dy.clone();
        let dbuf_s = dbuf.as_slice_mut().unwrap();
        for (li, (norm, conv)) in self.layers.iter_mut().enumerate().rev() {
            let c = self.c_in + li * growth;
            let (xhat, inv, yp) = &ctx.layers[li];
            // scatter the growth-channel gradients into tap-major layout
            let mut dpartial = ndarray::Array2::<R>::zeros((9 * growth, np));
            {
                let dp = dpartial.as_slice_mut().unwrap();
                for tap in 0..9usize {
                    let (ky, kx) = (tap / 3, tap % 3);
                    for gi in 0..growth {
                        let src_base = (c + gi) * n;
                        let dst_base = (tap * growth + gi) * np;
                        for oy in 0..h {
                            let src = &dbuf_s[src_base + oy * w..src_base + (oy + 1) * w];
                            let at = dst_base + (oy + ky) * wp + kx;
                            dp[at..at + w].copy_from_slice(src);
                        }
                    }
                }
            }
            ndarray::linalg::general_mat_mul(
                R::one(),
                &dpartial.view(),
                &yp.t(),
                R::one(),
                &mut conv.gw,
            );
            let mut dyp = ndarray::Array2::<R>::zeros((c, np));
            ndarray::linalg::general_mat_mul(
                R::one(),
                &conv.w.t(),
                &dpartial.view(),
                R::zero(),
                &mut dyp,
            );
            // fused relu + norm backward, accumulating into the prefix
            let nn = crate::scalar::r::<R>(n as f64);
            let dyps = dyp.as_slice().unwrap();
            let yps = yp.as_slice().unwrap();
            let xhs = xhat.as_slice().unwrap();
            let mut drow = vec![R::zero(); n];
            for ci in 0..c {
                let gma = norm.gamma[ci];
                let iv = inv[ci];
                let mut s_dy = R::zero();
                let mut s_dyxh = R::zero();
                for iy in 0..h {
                    let dsrc = &dyps[ci * np + (iy + 1) * wp + 1..ci * np + (iy + 1) * wp + 1 + w];
                    let ysrc = &yps[ci * np + (iy + 1) * wp + 1..ci * np + (iy + 1) * wp + 1 + w];
                    let xrow = &xhs[ci * n + iy * w..ci * n + (iy + 1) * w];
                    let dst = &mut drow[iy * w..(iy + 1) * w];
                    for i in 0..w {
                        let d = if ysrc[i] > R::zero() { dsrc[i] } else { R::zero() };
                        dst[i] = d;
                        s_dy = s_dy + d;
                        s_dyxh = s_dyxh + d * xrow[i];
                    }
                }
                norm.gb[ci] = norm.gb[ci] + s_dy;
                norm.gg[ci] = norm.gg[ci] + s_dyxh;
                let m_dy = s_dy / nn;
                let m_dyxh = s_dyxh / nn;
                let giv = gma * iv;
                let dst = &mut dbuf_s[ci * n..(ci + 1) * n];
                let xrow = &xhs[ci * n..(ci + 1) * n];
                for i in 0..n {
                    dst[i] = dst[i] + giv * (drow[i] - m_dy - xrow[i] * m_dyxh);
                }
            }
        }
        let mut dx = Fmap::<R>::zeros((self.c_in, h, w));
        dx.as_slice_mut()
            .unwrap()
            .copy_from_slice(&dbuf.as_slice().unwrap()[..self.c_in * n]);
        dx
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|(norm, conv)| norm.param_count() + conv.param_count())
            .sum()
    }

    pub fn visit_params(&mut self, f: &mut dyn FnMut(&mut [R], &mut [R])) {
        for (norm, conv) in &mut self.layers {
            norm.visit_params(f);
            conv.visit_params(f);
        }
    }
}

// ---------------------------------------------------------------------------
// Transition Up: pre-activated transposed conv doubling resolution
// ---------------------------------------------------------------------------

pub struct TransitionUp<R: Real> {
    pub norm: Norm2d<R>,
    pub convt: ConvT2d<R>,
}

pub struct TuCtx<R: Real> {
    norm: NormCtx<R>,
    act: ActCtx,
    convt: ConvTCtx<R>,
}

impl<R: Real> TransitionUp<R> {
    pub fn new(rng: &mut ChaCha8Rng, c_in: usize, c_out: usize) -> Self {
        TransitionUp {
            norm: Norm2d::new(c_in),
            convt: ConvT2d::new(rng, c_in, c_out),
        }
    }

    pub fn forward(&self, x: &Fmap<R>) -> Fmap<R> {
        self.convt.forward(&Act::Relu.forward(self.norm.forward(x)))
    }

    pub fn forward_train(&self, x: &Fmap<R>) -> (Fmap<R>, TuCtx<R>) {
        let (h, norm) = self.norm.forward_train(x);
        let (h, act) = Act::Relu.forward_train(h);
        let (y, convt) = self.convt.forward_train(&h);
        (y, TuCtx { norm, act, convt })
    }

    pub fn backward(&mut self, ctx: &TuCtx<R>, dy: &Fmap<R>) -> Fmap<R> {
        let dh = self.convt.backward(&ctx.convt, dy);
        let dh = Act::Relu.backward(&ctx.act, dh);
        self.norm.backward(&ctx.norm, &dh)
    }

    pub fn param_count(&self) -> usize {
        self.norm.param_count() + self.convt.param_count()
    }

    pub fn visit_params(&mut self, f: &mut dyn FnMut(&mut [R], &mut [R])) {
        self.norm.visit_params(f);
        self.convt.visit_params(f);
    }
}
