use super::{Scalar, Tensor};
use crate::error::{Error, Result};

/// `floor((extent + 2·padding − kernel) / stride) + 1`, or `None` when the
/// kernel does not fit the padded input.
pub fn conv_output_extent(extent: usize, kernel: usize, stride: usize, padding: usize) -> Option<usize> {
    let padded = extent + 2 * padding;
    if stride == 0 || kernel == 0 || padded < kernel {
        return None;
    }
    Some((padded - kernel) / stride + 1)
}

#[derive(Clone, Copy)]
struct Geometry {
    c: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
}

impl Geometry {
    fn rows(&self) -> usize {
        self.c * self.k * self.k
    }

    fn cols(&self) -> usize {
        self.ho * self.wo
    }

    /// Source index for (kernel row, output row); `None` when it lands in padding.
    #[inline]
    fn src(&self, out: usize, tap: usize, extent: usize) -> Option<usize> {
        let pos = (out * self.stride + tap) as isize - self.pad as isize;
        (pos >= 0 && (pos as usize) < extent).then_some(pos as usize)
    }
}

fn im2col<T: Scalar>(img: &[T], g: &Geometry, cols: &mut [T]) {
    let ncols = g.cols();
    for c in 0..g.c {
        let plane = &img[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ki in 0..g.k {
            for kj in 0..g.k {
                let row = (c * g.k + ki) * g.k + kj;
                let dst = &mut cols[row * ncols..(row + 1) * ncols];
                for oh in 0..g.ho {
                    let line = &mut dst[oh * g.wo..(oh + 1) * g.wo];
                    match g.src(oh, ki, g.h) {
                        None => line.fill(T::zero()),
                        Some(ih) => {
                            let src_row = &plane[ih * g.w..(ih + 1) * g.w];
                            for (ow, v) in line.iter_mut().enumerate() {
                                *v = match g.src(ow, kj, g.w) {
                                    Some(iw) => src_row[iw],
                                    None => T::zero(),
                                };
                            }
                        }
                    }
                }
            }
        }
    }
}

fn col2im<T: Scalar>(cols: &[T], g: &Geometry, img: &mut [T]) {
    let ncols = g.cols();
    for c in 0..g.c {
        let plane = &mut img[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ki in 0..g.k {
            for kj in 0..g.k {
                let row = (c * g.k + ki) * g.k + kj;
                let src = &cols[row * ncols..(row + 1) * ncols];
                for oh in 0..g.ho {
                    let Some(ih) = g.src(oh, ki, g.h) else { continue };
                    let line = &src[oh * g.wo..(oh + 1) * g.wo];
                    for (ow, &v) in line.iter().enumerate() {
                        if let Some(iw) = g.src(ow, kj, g.w) {
                            plane[ih * g.w + iw] = plane[ih * g.w + iw] + v;
                        }
                    }
                }
            }
        }
    }
}

/// 2-D cross-correlation over NCHW input with OIKK weights and optional bias.
pub fn conv2d<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    stride: usize,
    padding: usize,
) -> Result<Tensor<T>> {
    let (xs, ws) = (input.shape(), weight.shape());
    let mismatch = || {
        Error::config(
            "conv2d",
            format!(
                "input {:?} incompatible with weight {:?} (stride {stride}, padding {padding})",
                xs, ws
            ),
        )
    };
    if xs.len() != 4 || ws.len() != 4 || xs[1] != ws[1] || ws[2] != ws[3] || stride == 0 {
        return Err(mismatch());
    }
    if let Some(b) = bias {
        if b.shape() != [ws[0]] {
            return Err(Error::config(
                "conv2d",
                format!("bias {:?} does not match weight {:?}", b.shape(), ws),
            ));
        }
    }
    let (n, c, h, w) = (xs[0], xs[1], xs[2], xs[3]);
    let (o, k) = (ws[0], ws[2]);
    let ho = conv_output_extent(h, k, stride, padding).ok_or_else(mismatch)?;
    let wo = conv_output_extent(w, k, stride, padding).ok_or_else(mismatch)?;
    let g = Geometry {
        c,
        h,
        w,
        k,
        stride,
        pad: padding,
        ho,
        wo,
    };
    let (rows, ncols) = (g.rows(), g.cols());
    let in_plane = c * h * w;
    let out_plane = o * ncols;

    let mut out = vec![T::zero(); n * out_plane];
    let mut cols = vec![T::zero(); rows * ncols];
    for b in 0..n {
        im2col(&input.data()[b * in_plane..(b + 1) * in_plane], &g, &mut cols);
        let dst = &mut out[b * out_plane..(b + 1) * out_plane];
        if let Some(bias) = bias {
            for (oc, chunk) in dst.chunks_mut(ncols).enumerate() {
                chunk.fill(bias.data()[oc]);
            }
        }
        T::gemm(
            o,
            rows,
            ncols,
            T::one(),
            weight.data(),
            rows as isize,
            1,
            &cols,
            ncols as isize,
            1,
            T::one(),
            dst,
            ncols as isize,
            1,
        );
    }

    let mut parents = vec![input.clone(), weight.clone()];
    if let Some(b) = bias {
        parents.push(b.clone());
    }
    let has_bias = bias.is_some();
    let (x, wt) = (input.clone(), weight.clone());
    let (need_x, need_w) = (input.requires_grad(), weight.requires_grad());
    Tensor::from_op(
        "conv2d",
        vec![n, o, ho, wo],
        out,
        parents,
        Box::new(move |grad| {
            let mut gx = need_x.then(|| vec![T::zero(); n * in_plane]);
            let mut gw = need_w.then(|| vec![T::zero(); o * rows]);
            let mut cols = vec![T::zero(); rows * ncols];
            for b in 0..n {
                let gb = &grad[b * out_plane..(b + 1) * out_plane];
                if let Some(gw) = gw.as_mut() {
                    im2col(&x.data()[b * in_plane..(b + 1) * in_plane], &g, &mut cols);
                    // gw [O, rows] += g [O, cols] · colsᵀ [cols, rows]
                    T::gemm(
                        o,
                        ncols,
                        rows,
                        T::one(),
                        gb,
                        ncols as isize,
                        1,
                        &cols,
                        1,
                        ncols as isize,
                        T::one(),
                        gw,
                        rows as isize,
                        1,
                    );
                }
                if let Some(gx) = gx.as_mut() {
                    // dcols [rows, cols] = wᵀ [rows, O] · g [O, cols]
                    T::gemm(
                        rows,
                        o,
                        ncols,
                        T::one(),
                        wt.data(),
                        1,
                        rows as isize,
                        gb,
                        ncols as isize,
                        1,
                        T::zero(),
                        &mut cols,
                        ncols as isize,
                        1,
                    );
                    col2im(&cols, &g, &mut gx[b * in_plane..(b + 1) * in_plane]);
                }
            }
            let mut result = vec![gx, gw];
            if has_bias {
                let mut gbias = vec![T::zero(); o];
                for b in 0..n {
                    for (oc, chunk) in grad[b * out_plane..(b + 1) * out_plane]
                        .chunks(ncols)
                        .enumerate()
                    {
                        gbias[oc] = gbias[oc] + chunk.iter().copied().sum::<T>();
                    }
                }
                result.push(Some(gbias));
            }
            result
        }),
    )
}

/// Non-overlapping max pooling with a square window.
pub fn max_pool2d<T: Scalar>(input: &Tensor<T>, window: usize) -> Result<Tensor<T>> {
    let xs = input.shape();
    if xs.len() != 4 || window == 0 || xs[2] < window || xs[3] < window {
        return Err(Error::config(
            "max_pool2d",
            format!("window {window} on input {:?}", xs),
        ));
    }
    let (n, c, h, w) = (xs[0], xs[1], xs[2], xs[3]);
    let (ho, wo) = (h / window, w / window);
    let mut out = Vec::with_capacity(n * c * ho * wo);
    let mut argmax = Vec::with_capacity(n * c * ho * wo);
    let data = input.data();
    for p in 0..n * c {
        let base = p * h * w;
        for oh in 0..ho {
            for ow in 0..wo {
                let mut best = base + oh * window * w + ow * window;
                for i in 0..window {
                    for j in 0..window {
                        let idx = base + (oh * window + i) * w + ow * window + j;
                        if data[idx] > data[best] {
                            best = idx;
                        }
                    }
                }
                out.push(data[best]);
                argmax.push(best);
            }
        }
    }
    let total = input.numel();
    Tensor::from_op(
        "max_pool2d",
        vec![n, c, ho, wo],
        out,
        vec![input.clone()],
        Box::new(move |g| {
            let mut gx = vec![T::zero(); total];
            for (&src, &gv) in argmax.iter().zip(g) {
                gx[src] = gx[src] + gv;
            }
            vec![Some(gx)]
        }),
    )
}
