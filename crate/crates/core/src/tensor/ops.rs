use super::{numel, Scalar, Tensor};
use crate::error::{Error, Result};

fn same_shape<T: Scalar>(op: &str, a: &Tensor<T>, b: &Tensor<T>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::config(
            op,
            format!("shapes {:?} and {:?} differ", a.shape(), b.shape()),
        ));
    }
    Ok(())
}

impl<T: Scalar> Tensor<T> {
    /// Elementwise map with a derivative expressed in terms of the input.
    fn unary(
        &self,
        op: &'static str,
        f: impl Fn(T) -> T,
        df: impl Fn(T) -> T + 'static,
    ) -> Result<Self> {
        let data: Vec<T> = self.data().iter().map(|&v| f(v)).collect();
        let x = self.clone();
        Tensor::from_op(
            op,
            self.shape().to_vec(),
            data,
            vec![self.clone()],
            Box::new(move |g| {
                let gx = g
                    .iter()
                    .zip(x.data())
                    .map(|(&g, &v)| g * df(v))
                    .collect();
                vec![Some(gx)]
            }),
        )
    }

    pub fn add(&self, other: &Tensor<T>) -> Result<Self> {
        same_shape("add", self, other)?;
        let data = self
            .data()
            .iter()
            .zip(other.data())
            .map(|(&a, &b)| a + b)
            .collect();
        Tensor::from_op(
            "add",
            self.shape().to_vec(),
            data,
            vec![self.clone(), other.clone()],
            Box::new(|g| vec![Some(g.to_vec()), Some(g.to_vec())]),
        )
    }

    pub fn sub(&self, other: &Tensor<T>) -> Result<Self> {
        same_shape("sub", self, other)?;
        let data = self
            .data()
            .iter()
            .zip(other.data())
            .map(|(&a, &b)| a - b)
            .collect();
        Tensor::from_op(
            "sub",
            self.shape().to_vec(),
            data,
            vec![self.clone(), other.clone()],
            Box::new(|g| vec![Some(g.to_vec()), Some(g.iter().map(|&v| -v).collect())]),
        )
    }

    pub fn mul(&self, other: &Tensor<T>) -> Result<Self> {
        same_shape("mul", self, other)?;
        let data = self
            .data()
            .iter()
            .zip(other.data())
            .map(|(&a, &b)| a * b)
            .collect();
        let (a, b) = (self.clone(), other.clone());
        Tensor::from_op(
            "mul",
            self.shape().to_vec(),
            data,
            vec![self.clone(), other.clone()],
            Box::new(move |g| {
                let ga = g.iter().zip(b.data()).map(|(&g, &v)| g * v).collect();
                let gb = g.iter().zip(a.data()).map(|(&g, &v)| g * v).collect();
                vec![Some(ga), Some(gb)]
            }),
        )
    }

    pub fn scale(&self, factor: f64) -> Result<Self> {
        let s = T::from_f64(factor);
        let data = self.data().iter().map(|&v| v * s).collect();
        Tensor::from_op(
            "scale",
            self.shape().to_vec(),
            data,
            vec![self.clone()],
            Box::new(move |g| vec![Some(g.iter().map(|&v| v * s).collect())]),
        )
    }

    /// Adds a per-channel constant to an NCHW tensor.
    pub fn add_channel(&self, shift: &[f64]) -> Result<Self> {
        let shape = self.shape();
        if shape.len() != 4 || shape[1] != shift.len() {
            return Err(Error::config(
                "add_channel",
                format!("{} shifts for tensor of shape {:?}", shift.len(), shape),
            ));
        }
        let plane = shape[2] * shape[3];
        let c = shape[1];
        let data = self
            .data()
            .iter()
            .enumerate()
            .map(|(i, &v)| v + T::from_f64(shift[(i / plane) % c]))
            .collect();
        Tensor::from_op(
            "add_channel",
            shape.to_vec(),
            data,
            vec![self.clone()],
            Box::new(|g| vec![Some(g.to_vec())]),
        )
    }

    /// Multiplies each channel of an NCHW tensor by its own factor.
    pub fn mul_channel(&self, factors: &[f64]) -> Result<Self> {
        let shape = self.shape();
        if shape.len() != 4 || shape[1] != factors.len() {
            return Err(Error::config(
                "mul_channel",
                format!("{} factors for tensor of shape {:?}", factors.len(), shape),
            ));
        }
        let plane = shape[2] * shape[3];
        let c = shape[1];
        let f: Vec<T> = factors.iter().map(|&v| T::from_f64(v)).collect();
        let data = self
            .data()
            .iter()
            .enumerate()
            .map(|(i, &v)| v * f[(i / plane) % c])
            .collect();
        Tensor::from_op(
            "mul_channel",
            shape.to_vec(),
            data,
            vec![self.clone()],
            Box::new(move |g| {
                vec![Some(
                    g.iter().enumerate().map(|(i, &v)| v * f[(i / plane) % c]).collect(),
                )]
            }),
        )
    }

    pub fn relu(&self) -> Result<Self> {
        self.unary(
            "relu",
            |v| v.max(T::zero()),
            |v| if v > T::zero() { T::one() } else { T::zero() },
        )
    }

    pub fn leaky_relu(&self, slope: f64) -> Result<Self> {
        let s = T::from_f64(slope);
        self.unary(
            "leaky_relu",
            move |v| if v > T::zero() { v } else { v * s },
            move |v| if v > T::zero() { T::one() } else { s },
        )
    }

    pub fn sigmoid(&self) -> Result<Self> {
        // σ'(z) = σ(z)σ(−z) stays nonzero where σ(z) rounds to 1.
        self.unary("sigmoid", sigmoid, |v| sigmoid(v) * sigmoid(-v))
    }

    /// Elementwise `-ln(clamp(x, eps, 1 - eps))`. The gradient is evaluated
    /// at the clamped value so saturated inputs still receive a signal.
    pub fn neg_log_clipped(&self, eps: f64) -> Result<Self> {
        let lo = T::from_f64(eps);
        let hi = T::one() - lo;
        self.unary(
            "neg_log",
            move |v| -v.max(lo).min(hi).ln(),
            move |v| -T::one() / v.max(lo).min(hi),
        )
    }

    /// `neg_log_clipped(sigmoid(z))` fused on logits. Same value; the
    /// gradient is that of softplus(-z), which does not vanish where the
    /// sigmoid saturates.
    pub fn neg_log_sigmoid_clipped(&self, eps: f64) -> Result<Self> {
        let lo = T::from_f64(eps);
        let hi = T::one() - lo;
        self.unary(
            "neg_log_sigmoid",
            move |z| -sigmoid(z).max(lo).min(hi).ln(),
            move |z| -sigmoid(-z),
        )
    }

    /// `neg_log1m_clipped(sigmoid(z))` fused on logits, using 1 - σ(z) = σ(-z).
    pub fn neg_log1m_sigmoid_clipped(&self, eps: f64) -> Result<Self> {
        let lo = T::from_f64(eps);
        let hi = T::one() - lo;
        self.unary(
            "neg_log1m_sigmoid",
            move |z| -sigmoid(-z).max(lo).min(hi).ln(),
            sigmoid,
        )
    }

    /// Elementwise `-ln(1 - clamp(x, eps, 1 - eps))`.
    pub fn neg_log1m_clipped(&self, eps: f64) -> Result<Self> {
        let lo = T::from_f64(eps);
        let hi = T::one() - lo;
        self.unary(
            "neg_log1m",
            move |v| -(T::one() - v.max(lo).min(hi)).ln(),
            move |v| T::one() / (T::one() - v.max(lo).min(hi)),
        )
    }

    pub fn sum(&self) -> Result<Self> {
        let total: T = self.data().iter().copied().sum();
        let n = self.numel();
        Tensor::from_op(
            "sum",
            Vec::new(),
            vec![total],
            vec![self.clone()],
            Box::new(move |g| vec![Some(vec![g[0]; n])]),
        )
    }

    pub fn mean(&self) -> Result<Self> {
        let n = self.numel();
        if n == 0 {
            return Err(Error::usage("mean of an empty tensor"));
        }
        let inv = T::one() / T::from_f64(n as f64);
        let total: T = self.data().iter().copied().sum();
        Tensor::from_op(
            "mean",
            Vec::new(),
            vec![total * inv],
            vec![self.clone()],
            Box::new(move |g| vec![Some(vec![g[0] * inv; n])]),
        )
    }

    /// Mean of squared elements.
    pub fn mean_square(&self) -> Result<Self> {
        let n = self.numel();
        if n == 0 {
            return Err(Error::usage("mean_square of an empty tensor"));
        }
        let inv = T::one() / T::from_f64(n as f64);
        let total: T = self.data().iter().map(|&v| v * v).sum();
        let x = self.clone();
        Tensor::from_op(
            "mean_square",
            Vec::new(),
            vec![total * inv],
            vec![self.clone()],
            Box::new(move |g| {
                let k = g[0] * inv * T::from_f64(2.0);
                vec![Some(x.data().iter().map(|&v| v * k).collect())]
            }),
        )
    }

    /// Mean squared difference between two equally shaped tensors.
    pub fn mse(&self, other: &Tensor<T>) -> Result<Self> {
        same_shape("mse", self, other)?;
        let n = self.numel();
        if n == 0 {
            return Err(Error::usage("mse of empty tensors"));
        }
        let inv = T::one() / T::from_f64(n as f64);
        let diff: Vec<T> = self
            .data()
            .iter()
            .zip(other.data())
            .map(|(&a, &b)| a - b)
            .collect();
        let total: T = diff.iter().map(|&d| d * d).sum();
        Tensor::from_op(
            "mse",
            Vec::new(),
            vec![total * inv],
            vec![self.clone(), other.clone()],
            Box::new(move |g| {
                let k = g[0] * inv * T::from_f64(2.0);
                let ga: Vec<T> = diff.iter().map(|&d| d * k).collect();
                let gb = ga.iter().map(|&v| -v).collect();
                vec![Some(ga), Some(gb)]
            }),
        )
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Self> {
        if numel(shape) != self.numel() {
            return Err(Error::config(
                "reshape",
                format!("cannot view {:?} as {:?}", self.shape(), shape),
            ));
        }
        Tensor::from_op(
            "reshape",
            shape.to_vec(),
            self.to_vec(),
            vec![self.clone()],
            Box::new(|g| vec![Some(g.to_vec())]),
        )
    }

    /// Collapses all but the leading (batch) dimension.
    pub fn flatten(&self) -> Result<Self> {
        let n = *self
            .shape()
            .first()
            .ok_or_else(|| Error::usage("flatten of a 0-d tensor"))?;
        let rest = if n == 0 { 0 } else { self.numel() / n };
        self.reshape(&[n, rest])
    }

    /// Values clamped to `[lo, hi]`; gradient passes only inside the interval.
    pub fn clamp(&self, lo: f64, hi: f64) -> Result<Self> {
        let (lo, hi) = (T::from_f64(lo), T::from_f64(hi));
        self.unary(
            "clamp",
            move |v| v.max(lo).min(hi),
            move |v| {
                if v >= lo && v <= hi {
                    T::one()
                } else {
                    T::zero()
                }
            },
        )
    }
}

/// Logistic function, saturating at the representable values nearest to
/// 0 and 1 so the output stays strictly inside the open interval.
fn sigmoid<T: Scalar>(v: T) -> T {
    let s = if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    };
    let top = T::one() - T::epsilon() / T::from_f64(2.0);
    s.max(T::min_positive_value()).min(top)
}

/// Fully connected layer: `x [N, I]`, `weight [O, I]`, `bias [O]` → `[N, O]`.
pub fn linear<T: Scalar>(x: &Tensor<T>, weight: &Tensor<T>, bias: &Tensor<T>) -> Result<Tensor<T>> {
    let (xs, ws, bs) = (x.shape(), weight.shape(), bias.shape());
    if xs.len() != 2 || ws.len() != 2 || bs.len() != 1 || xs[1] != ws[1] || bs[0] != ws[0] {
        return Err(Error::config(
            "linear",
            format!("input {:?}, weight {:?}, bias {:?}", xs, ws, bs),
        ));
    }
    let (n, i, o) = (xs[0], xs[1], ws[0]);
    let mut out = Vec::with_capacity(n * o);
    for _ in 0..n {
        out.extend_from_slice(bias.data());
    }
    // out [N,O] += x [N,I] · wᵀ [I,O]
    T::gemm(
        n,
        i,
        o,
        T::one(),
        x.data(),
        i as isize,
        1,
        weight.data(),
        1,
        i as isize,
        T::one(),
        &mut out,
        o as isize,
        1,
    );
    let (xc, wc) = (x.clone(), weight.clone());
    let (need_x, need_w) = (x.requires_grad(), weight.requires_grad());
    Tensor::from_op(
        "linear",
        vec![n, o],
        out,
        vec![x.clone(), weight.clone(), bias.clone()],
        Box::new(move |g| {
            let gx = need_x.then(|| {
                // gx [N,I] = g [N,O] · w [O,I]
                let mut gx = vec![T::zero(); n * i];
                T::gemm(
                    n,
                    o,
                    i,
                    T::one(),
                    g,
                    o as isize,
                    1,
                    wc.data(),
                    i as isize,
                    1,
                    T::zero(),
                    &mut gx,
                    i as isize,
                    1,
                );
                gx
            });
            let gw = need_w.then(|| {
                // gw [O,I] = gᵀ [O,N] · x [N,I]
                let mut gw = vec![T::zero(); o * i];
                T::gemm(
                    o,
                    n,
                    i,
                    T::one(),
                    g,
                    1,
                    o as isize,
                    xc.data(),
                    i as isize,
                    1,
                    T::zero(),
                    &mut gw,
                    i as isize,
                    1,
                );
                gw
            });
            let mut gb = vec![T::zero(); o];
            for row in g.chunks(o) {
                gb.iter_mut().zip(row).for_each(|(a, &b)| *a = *a + b);
            }
            vec![gx, gw, Some(gb)]
        }),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], v: Vec<f64>) -> Tensor<f64> {
        Tensor::from_vec(shape, v).unwrap()
    }

    #[test]
    fn relu_and_sigmoid_definitions() {
        let x = t(&[2], vec![-1.0, 2.0]);
        assert_eq!(x.relu().unwrap().to_vec(), vec![0.0, 2.0]);
        assert_eq!(t(&[1], vec![0.0]).sigmoid().unwrap().to_vec(), vec![0.5]);
        assert_eq!(
            x.leaky_relu(0.2).unwrap().to_vec(),
            vec![-0.2, 2.0]
        );
    }

    #[test]
    fn fully_connected_identity() {
        let x = t(&[1, 2], vec![1.0, 2.0]);
        let w = t(&[2, 2], vec![1.0, 0.0, 0.0, 1.0]);
        let b = t(&[2], vec![0.0, 0.0]);
        assert_eq!(linear(&x, &w, &b).unwrap().to_vec(), vec![1.0, 2.0]);
    }

    #[test]
    fn linear_rejects_mismatch() {
        let x = t(&[1, 3], vec![1.0; 3]);
        let w = t(&[2, 2], vec![1.0; 4]);
        let b = t(&[2], vec![0.0; 2]);
        let err = linear(&x, &w, &b).unwrap_err();
        assert!(err.to_string().contains("[1, 3]"));
    }

    #[test]
    fn add_rejects_shape_mismatch() {
        let err = t(&[2], vec![0.0; 2]).add(&t(&[3], vec![0.0; 3])).unwrap_err();
        assert!(matches!(err, Error::Config { .. }));
        assert!(err.to_string().contains("[2]") && err.to_string().contains("[3]"));
    }

    #[test]
    fn scale_overflow_is_numeric_error() {
        let err = t(&[1], vec![1e300]).scale(1e300).unwrap_err();
        assert!(matches!(err, Error::Numeric(_)));
    }

    #[test]
    fn mse_of_constant_offset() {
        let a = t(&[4], vec![0.1, 0.2, 0.3, 0.4]);
        let b = t(&[4], vec![0.6, 0.7, 0.8, 0.9]);
        let v = a.mse(&b).unwrap().item().unwrap();
        assert!((v - 0.25).abs() < 1e-15);
    }

    #[test]
    fn clipped_logs() {
        let half = t(&[1], vec![0.5]);
        let v = half.neg_log_clipped(1e-7).unwrap().item().unwrap();
        assert!((v - std::f64::consts::LN_2).abs() < 1e-15);
        let one = t(&[1], vec![1.0]);
        let v = one.neg_log_clipped(1e-7).unwrap().item().unwrap();
        assert!(v > 0.0 && v < 2e-7);
        let zero = t(&[1], vec![0.0]);
        assert!(zero.neg_log_clipped(1e-7).unwrap().item().unwrap().is_finite());
    }
}
