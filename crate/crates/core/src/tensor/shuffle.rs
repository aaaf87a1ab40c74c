use super::{Scalar, Tensor};
use crate::error::{Error, Result};

/// Index into the packed `(n, c·r², h, w)` layout for output pixel
/// `(n, c, r·h + i, r·w + j)`.
#[inline]
fn packed_index(n: usize, c: usize, i: usize, j: usize, h: usize, w: usize, dims: (usize, usize, usize, usize)) -> usize {
    let (channels, r, height, width) = dims;
    let pc = c * r * r + i * r + j;
    ((n * channels * r * r + pc) * height + h) * width + w
}

/// Rearranges `N × (C·r²) × H × W` into `N × C × (rH) × (rW)`.
pub fn pixel_shuffle<T: Scalar>(input: &Tensor<T>, r: usize) -> Result<Tensor<T>> {
    let s = input.shape();
    if s.len() != 4 || r == 0 || s[1] % (r * r) != 0 {
        return Err(Error::config(
            "pixel_shuffle",
            format!("input {:?} channel count not divisible by {}", s, r * r),
        ));
    }
    let (n, c, h, w) = (s[0], s[1] / (r * r), s[2], s[3]);
    let dims = (c, r, h, w);
    let mut perm = Vec::with_capacity(input.numel());
    for b in 0..n {
        for ch in 0..c {
            for y in 0..h * r {
                for x in 0..w * r {
                    perm.push(packed_index(b, ch, y % r, x % r, y / r, x / r, dims));
                }
            }
        }
    }
    let data = perm.iter().map(|&p| input.data()[p]).collect();
    Tensor::from_op(
        "pixel_shuffle",
        vec![n, c, h * r, w * r],
        data,
        vec![input.clone()],
        Box::new(move |g| {
            let mut gx = vec![T::zero(); g.len()];
            for (&p, &v) in perm.iter().zip(g) {
                gx[p] = v;
            }
            vec![Some(gx)]
        }),
    )
}

/// Inverse of [`pixel_shuffle`].
pub fn pixel_unshuffle<T: Scalar>(input: &Tensor<T>, r: usize) -> Result<Tensor<T>> {
    let s = input.shape();
    if s.len() != 4 || r == 0 || s[2] % r != 0 || s[3] % r != 0 {
        return Err(Error::config(
            "pixel_unshuffle",
            format!("input {:?} extents not divisible by {r}", s),
        ));
    }
    let (n, c, h, w) = (s[0], s[1], s[2] / r, s[3] / r);
    let dims = (c, r, h, w);
    // perm[packed] = index in the spatial layout
    let mut perm = vec![0usize; input.numel()];
    let mut idx = 0;
    for b in 0..n {
        for ch in 0..c {
            for y in 0..h * r {
                for x in 0..w * r {
                    perm[packed_index(b, ch, y % r, x % r, y / r, x / r, dims)] = idx;
                    idx += 1;
                }
            }
        }
    }
    let data = perm.iter().map(|&p| input.data()[p]).collect();
    Tensor::from_op(
        "pixel_unshuffle",
        vec![n, c * r * r, h, w],
        data,
        vec![input.clone()],
        Box::new(move |g| {
            let mut gx = vec![T::zero(); g.len()];
            for (&p, &v) in perm.iter().zip(g) {
                gx[p] = v;
            }
            vec![Some(gx)]
        }),
    )
}
