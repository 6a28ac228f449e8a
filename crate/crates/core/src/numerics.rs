//! Dense kernels shared by the ANN forward/backward passes and the per-timestep SNN drive.
//!
//! Every kernel sums in a fixed order (ascending input index; for convolutions channel,
//! then kernel row, then kernel column) and adds the bias last, so repeated runs are
//! bit-identical.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense row-major `f64` array with an explicit shape.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawTensor", into = "RawTensor")]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct RawTensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl TryFrom<RawTensor> for Tensor {
    type Error = Error;
    fn try_from(raw: RawTensor) -> Result<Self> {
        Tensor::new(raw.shape, raw.data)
    }
}

impl From<Tensor> for RawTensor {
    fn from(t: Tensor) -> Self {
        RawTensor {
            shape: t.shape,
            data: t.data,
        }
    }
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.contains(&0) {
            return Err(Error::Config(format!(
                "tensor extents must be positive, got {shape:?}"
            )));
        }
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::dimension(
                "tensor data",
                format!("{expected} values for shape {shape:?}"),
                format!("{} values", data.len()),
            ));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; n],
        }
    }

    pub fn filled(shape: &[usize], value: f64) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; n],
        }
    }

    /// One-dimensional tensor. Panics on an empty vector.
    pub fn vector(data: Vec<f64>) -> Self {
        assert!(!data.is_empty(), "empty vector tensor");
        Tensor {
            shape: vec![data.len()],
            data,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != self.data.len() || shape.contains(&0) {
            return Err(Error::dimension(
                "reshape",
                format!("{} elements", self.data.len()),
                format!("shape {shape:?}"),
            ));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Index of the largest value; ties go to the lowest index.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &v) in self.data.iter().enumerate().skip(1) {
            if v > self.data[best] {
                best = i;
            }
        }
        best
    }

    pub fn max(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Squared Euclidean distance to `other`, which must hold the same number of values.
    pub fn squared_distance(&self, other: &Tensor) -> f64 {
        debug_assert_eq!(self.len(), other.len());
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b) * (a - b))
            .sum()
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

fn expect_rank(t: &Tensor, operand: &str, rank: usize) -> Result<()> {
    if t.shape.len() != rank {
        return Err(Error::dimension(
            operand,
            format!("rank {rank}"),
            format!("shape {:?}", t.shape),
        ));
    }
    Ok(())
}

fn check_affine(w: &Tensor, b: &Tensor, x_len: usize) -> Result<(usize, usize)> {
    expect_rank(w, "weight", 2)?;
    let (out, inp) = (w.shape[0], w.shape[1]);
    if b.len() != out {
        return Err(Error::dimension("bias", out, b.len()));
    }
    if x_len != inp {
        return Err(Error::dimension("input", inp, x_len));
    }
    Ok((out, inp))
}

/// `y = W x + b` for `W` of shape `[out, in]`. The input may have any shape holding `in` values.
pub fn affine(w: &Tensor, b: &Tensor, x: &Tensor) -> Result<Tensor> {
    let (out, inp) = check_affine(w, b, x.len())?;
    let mut y = Vec::with_capacity(out);
    for i in 0..out {
        let row = &w.data[i * inp..(i + 1) * inp];
        let mut acc = 0.0;
        for (wij, xj) in row.iter().zip(&x.data) {
            acc += wij * xj;
        }
        y.push(acc + b.data[i]);
    }
    Ok(Tensor {
        shape: vec![out],
        data: y,
    })
}

/// Same result as [`affine`], bit for bit, but skips zero inputs. Used for spike vectors.
pub fn affine_sparse(w: &Tensor, b: &Tensor, x: &Tensor) -> Result<Tensor> {
    let (out, inp) = check_affine(w, b, x.len())?;
    let mut acc = vec![0.0; out];
    for (j, &xj) in x.data.iter().enumerate() {
        if xj == 0.0 {
            continue;
        }
        for (i, a) in acc.iter_mut().enumerate() {
            *a += w.data[i * inp + j] * xj;
        }
    }
    for (a, bi) in acc.iter_mut().zip(&b.data) {
        *a += bi;
    }
    Ok(Tensor {
        shape: vec![out],
        data: acc,
    })
}

/// Gradients of `y = W x + b` given `dy`: returns `(dW, db, dx)`; `dx` has the shape of `x`.
pub fn affine_backward(w: &Tensor, x: &Tensor, dy: &Tensor) -> (Tensor, Tensor, Tensor) {
    let (out, inp) = (w.shape[0], w.shape[1]);
    let mut dw = vec![0.0; out * inp];
    let mut dx = vec![0.0; inp];
    for i in 0..out {
        let g = dy.data[i];
        if g == 0.0 {
            continue;
        }
        let row = &w.data[i * inp..(i + 1) * inp];
        let drow = &mut dw[i * inp..(i + 1) * inp];
        for j in 0..inp {
            drow[j] = g * x.data[j];
            dx[j] += g * row[j];
        }
    }
    (
        Tensor {
            shape: w.shape.clone(),
            data: dw,
        },
        dy.clone(),
        Tensor {
            shape: x.shape.clone(),
            data: dx,
        },
    )
}

fn window_output(
    extent: usize,
    padding: usize,
    k: usize,
    stride: usize,
    what: &str,
) -> Result<usize> {
    if stride == 0 || k == 0 {
        return Err(Error::Config(format!(
            "{what}: kernel and stride must be positive"
        )));
    }
    let padded = extent + 2 * padding;
    if padded < k {
        return Err(Error::Config(format!(
            "{what}: window {k} larger than padded extent {padded}"
        )));
    }
    if !(padded - k).is_multiple_of(stride) {
        return Err(Error::Config(format!(
            "{what}: output size ({padded} - {k})/{stride} + 1 is not integral"
        )));
    }
    Ok((padded - k) / stride + 1)
}

/// Output shape `[oc, h', w']` of a convolution over an `[ic, h, w]` input.
pub fn conv2d_output_shape(
    kernel_shape: &[usize],
    input_shape: &[usize],
    stride: usize,
    padding: usize,
) -> Result<Vec<usize>> {
    if kernel_shape.len() != 4 {
        return Err(Error::dimension(
            "kernel",
            "rank 4",
            format!("shape {kernel_shape:?}"),
        ));
    }
    if input_shape.len() != 3 {
        return Err(Error::dimension(
            "input",
            "rank 3",
            format!("shape {input_shape:?}"),
        ));
    }
    if input_shape[0] != kernel_shape[1] {
        return Err(Error::dimension(
            "input channels",
            kernel_shape[1],
            input_shape[0],
        ));
    }
    let oh = window_output(
        input_shape[1],
        padding,
        kernel_shape[2],
        stride,
        "conv2d rows",
    )?;
    let ow = window_output(
        input_shape[2],
        padding,
        kernel_shape[3],
        stride,
        "conv2d columns",
    )?;
    Ok(vec![kernel_shape[0], oh, ow])
}

/// Cross-correlation with zero padding.
pub fn conv2d(
    kernel: &Tensor,
    bias: &Tensor,
    x: &Tensor,
    stride: usize,
    padding: usize,
) -> Result<Tensor> {
    let out_shape = conv2d_output_shape(&kernel.shape, &x.shape, stride, padding)?;
    let (oc, ic, kh, kw) = (
        kernel.shape[0],
        kernel.shape[1],
        kernel.shape[2],
        kernel.shape[3],
    );
    if bias.len() != oc {
        return Err(Error::dimension("bias", oc, bias.len()));
    }
    let (h, w) = (x.shape[1] as isize, x.shape[2] as isize);
    let (oh, ow) = (out_shape[1], out_shape[2]);
    let mut y = vec![0.0; oc * oh * ow];
    for o in 0..oc {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut acc = 0.0;
                for c in 0..ic {
                    for ki in 0..kh {
                        let iy = (oy * stride + ki) as isize - padding as isize;
                        if iy < 0 || iy >= h {
                            continue;
                        }
                        for kj in 0..kw {
                            let ix = (ox * stride + kj) as isize - padding as isize;
                            if ix < 0 || ix >= w {
                                continue;
                            }
                            let kv = kernel.data[((o * ic + c) * kh + ki) * kw + kj];
                            let xv =
                                x.data[(c * h as usize + iy as usize) * w as usize + ix as usize];
                            acc += kv * xv;
                        }
                    }
                }
                y[(o * oh + oy) * ow + ox] = acc + bias.data[o];
            }
        }
    }
    Ok(Tensor {
        shape: out_shape,
        data: y,
    })
}

/// Gradients of [`conv2d`]: returns `(dkernel, dbias, dx)`.
pub fn conv2d_backward(
    kernel: &Tensor,
    x: &Tensor,
    stride: usize,
    padding: usize,
    dy: &Tensor,
) -> (Tensor, Tensor, Tensor) {
    let (oc, ic, kh, kw) = (
        kernel.shape[0],
        kernel.shape[1],
        kernel.shape[2],
        kernel.shape[3],
    );
    let (h, w) = (x.shape[1] as isize, x.shape[2] as isize);
    let (oh, ow) = (dy.shape[1], dy.shape[2]);
    let mut dk = vec![0.0; kernel.len()];
    let mut db = vec![0.0; oc];
    let mut dx = vec![0.0; x.len()];
    for (o, db_o) in db.iter_mut().enumerate() {
        for oy in 0..oh {
            for ox in 0..ow {
                let g = dy.data[(o * oh + oy) * ow + ox];
                *db_o += g;
                if g == 0.0 {
                    continue;
                }
                for c in 0..ic {
                    for ki in 0..kh {
                        let iy = (oy * stride + ki) as isize - padding as isize;
                        if iy < 0 || iy >= h {
                            continue;
                        }
                        for kj in 0..kw {
                            let ix = (ox * stride + kj) as isize - padding as isize;
                            if ix < 0 || ix >= w {
                                continue;
                            }
                            let kidx = ((o * ic + c) * kh + ki) * kw + kj;
                            let xidx = (c * h as usize + iy as usize) * w as usize + ix as usize;
                            dk[kidx] += g * x.data[xidx];
                            dx[xidx] += g * kernel.data[kidx];
                        }
                    }
                }
            }
        }
    }
    (
        Tensor {
            shape: kernel.shape.clone(),
            data: dk,
        },
        Tensor {
            shape: vec![oc],
            data: db,
        },
        Tensor {
            shape: x.shape.clone(),
            data: dx,
        },
    )
}

pub fn avgpool_output_shape(input_shape: &[usize], k: usize, stride: usize) -> Result<Vec<usize>> {
    if input_shape.len() != 3 {
        return Err(Error::dimension(
            "input",
            "rank 3",
            format!("shape {input_shape:?}"),
        ));
    }
    let oh = window_output(input_shape[1], 0, k, stride, "avgpool rows")?;
    let ow = window_output(input_shape[2], 0, k, stride, "avgpool columns")?;
    Ok(vec![input_shape[0], oh, ow])
}

/// Mean over each `k x k` window, per channel.
pub fn avgpool(x: &Tensor, k: usize, stride: usize) -> Result<Tensor> {
    let out_shape = avgpool_output_shape(&x.shape, k, stride)?;
    let (c, h, w) = (x.shape[0], x.shape[1], x.shape[2]);
    let (oh, ow) = (out_shape[1], out_shape[2]);
    let area = (k * k) as f64;
    let mut y = vec![0.0; c * oh * ow];
    for ch in 0..c {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut acc = 0.0;
                for ki in 0..k {
                    let row = (ch * h + oy * stride + ki) * w + ox * stride;
                    for v in &x.data[row..row + k] {
                        acc += v;
                    }
                }
                y[(ch * oh + oy) * ow + ox] = acc / area;
            }
        }
    }
    Ok(Tensor {
        shape: out_shape,
        data: y,
    })
}

pub fn avgpool_backward(input_shape: &[usize], k: usize, stride: usize, dy: &Tensor) -> Tensor {
    let (c, h, w) = (input_shape[0], input_shape[1], input_shape[2]);
    let (oh, ow) = (dy.shape[1], dy.shape[2]);
    let area = (k * k) as f64;
    let mut dx = vec![0.0; c * h * w];
    for ch in 0..c {
        for oy in 0..oh {
            for ox in 0..ow {
                let g = dy.data[(ch * oh + oy) * ow + ox] / area;
                for ki in 0..k {
                    let row = (ch * h + oy * stride + ki) * w + ox * stride;
                    for d in &mut dx[row..row + k] {
                        *d += g;
                    }
                }
            }
        }
    }
    Tensor {
        shape: input_shape.to_vec(),
        data: dx,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn affine_examples() {
        let eye = t(&[2, 2], &[1.0, 0.0, 0.0, 1.0]);
        let y = affine(&eye, &Tensor::zeros(&[2]), &Tensor::vector(vec![3.0, -1.0])).unwrap();
        assert_eq!(y.data(), &[3.0, -1.0]);

        let y = affine(
            &t(&[1, 2], &[1.0, 2.0]),
            &Tensor::vector(vec![1.0]),
            &Tensor::vector(vec![3.0, 4.0]),
        )
        .unwrap();
        assert_eq!(y.data(), &[12.0]);

        let y = affine(
            &Tensor::zeros(&[2, 2]),
            &Tensor::vector(vec![5.0, 6.0]),
            &Tensor::vector(vec![9.0, 9.0]),
        )
        .unwrap();
        assert_eq!(y.data(), &[5.0, 6.0]);
    }

    #[test]
    fn affine_names_offending_operand() {
        let w = Tensor::zeros(&[2, 3]);
        let err = affine(&w, &Tensor::zeros(&[2]), &Tensor::zeros(&[4])).unwrap_err();
        assert!(err.to_string().contains("`input`"), "{err}");
        let err = affine(&w, &Tensor::zeros(&[3]), &Tensor::zeros(&[3])).unwrap_err();
        assert!(err.to_string().contains("`bias`"), "{err}");
        let err = affine(
            &Tensor::zeros(&[6]),
            &Tensor::zeros(&[3]),
            &Tensor::zeros(&[3]),
        )
        .unwrap_err();
        assert!(err.to_string().contains("`weight`"), "{err}");
    }

    #[test]
    fn tensor_rejects_bad_length() {
        assert!(matches!(
            Tensor::new(vec![2, 2], vec![1.0; 3]),
            Err(Error::Dimension { .. })
        ));
    }

    #[test]
    fn conv2d_examples() {
        let x = t(&[1, 2, 2], &[1.0, 2.0, 3.0, 4.0]);
        let y = conv2d(&t(&[1, 1, 1, 1], &[2.0]), &Tensor::zeros(&[1]), &x, 1, 0).unwrap();
        assert_eq!(y.shape(), &[1, 2, 2]);
        assert_eq!(y.data(), &[2.0, 4.0, 6.0, 8.0]);

        let y = conv2d(
            &Tensor::filled(&[1, 1, 2, 2], 1.0),
            &Tensor::zeros(&[1]),
            &x,
            1,
            0,
        )
        .unwrap();
        assert_eq!(y.shape(), &[1, 1, 1]);
        assert_eq!(y.data(), &[10.0]);

        let k = t(
            &[2, 1, 3, 3],
            &[
                0.3, -0.1, 0.7, 0.2, 0.9, -0.5, 0.4, 0.1, 0.6, 1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0,
                8.0, 9.0,
            ],
        );
        let y = conv2d(
            &k,
            &Tensor::vector(vec![0.25, -1.5]),
            &Tensor::zeros(&[1, 4, 4]),
            1,
            1,
        )
        .unwrap();
        assert_eq!(y.shape(), &[2, 4, 4]);
        assert!(y.data()[..16].iter().all(|&v| v == 0.25));
        assert!(y.data()[16..].iter().all(|&v| v == -1.5));
    }

    #[test]
    fn conv2d_padding_matches_hand_computation() {
        // 3x3 ones kernel with padding 1 on a 2x2 input: every output sees all four inputs.
        let x = t(&[1, 2, 2], &[1.0, 2.0, 3.0, 4.0]);
        let y = conv2d(
            &Tensor::filled(&[1, 1, 3, 3], 1.0),
            &Tensor::zeros(&[1]),
            &x,
            1,
            1,
        )
        .unwrap();
        assert_eq!(y.data(), &[10.0, 10.0, 10.0, 10.0]);
    }

    #[test]
    fn conv2d_non_integral_output_is_config_error() {
        let err = conv2d(
            &Tensor::zeros(&[1, 1, 2, 2]),
            &Tensor::zeros(&[1]),
            &Tensor::zeros(&[1, 5, 5]),
            2,
            0,
        )
        .unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn avgpool_examples() {
        let x = t(&[1, 2, 2], &[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(avgpool(&x, 2, 2).unwrap().data(), &[2.5]);
        assert_eq!(avgpool(&x, 1, 1).unwrap(), x);
        let c = Tensor::filled(&[1, 4, 4], 7.0);
        let y = avgpool(&c, 2, 2).unwrap();
        assert_eq!(y.shape(), &[1, 2, 2]);
        assert!(y.data().iter().all(|&v| v == 7.0));
        assert!(matches!(
            avgpool(&Tensor::zeros(&[1, 5, 5]), 2, 2),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn argmax_prefers_lowest_index() {
        assert_eq!(Tensor::vector(vec![1.0, 3.0, 3.0]).argmax(), 1);
        assert_eq!(Tensor::vector(vec![0.0, 0.0]).argmax(), 0);
    }

    fn close(a: &[f64], b: &[f64]) -> bool {
        a.iter().zip(b).all(|(x, y)| {
            let scale = x.abs().max(y.abs()).max(1.0);
            (x - y).abs() <= 1e-12 * scale
        })
    }

    fn lin_comb(alpha: f64, x: &Tensor, beta: f64, y: &Tensor) -> Tensor {
        let data = x
            .data()
            .iter()
            .zip(y.data())
            .map(|(a, b)| alpha * a + beta * b)
            .collect();
        Tensor::new(x.shape().to_vec(), data).unwrap()
    }

    proptest! {
        #[test]
        fn affine_is_linear(
            w in proptest::collection::vec(-2.0f64..2.0, 12),
            b in proptest::collection::vec(-2.0f64..2.0, 3),
            x in proptest::collection::vec(-2.0f64..2.0, 4),
            y in proptest::collection::vec(-2.0f64..2.0, 4),
            alpha in -3.0f64..3.0,
            beta in -3.0f64..3.0,
        ) {
            let w = t(&[3, 4], &w);
            let b = Tensor::vector(b);
            let zero = Tensor::zeros(&[3]);
            let (x, y) = (Tensor::vector(x), Tensor::vector(y));
            let lhs = affine(&w, &b, &lin_comb(alpha, &x, beta, &y)).unwrap();
            let fx = affine(&w, &zero, &x).unwrap();
            let fy = affine(&w, &zero, &y).unwrap();
            let rhs: Vec<f64> = fx.data().iter().zip(fy.data()).zip(b.data())
                .map(|((p, q), c)| alpha * p + beta * q + c).collect();
            prop_assert!(close(lhs.data(), &rhs));
        }

        #[test]
        fn sparse_affine_is_bit_identical(
            w in proptest::collection::vec(-2.0f64..2.0, 15),
            b in proptest::collection::vec(-2.0f64..2.0, 3),
            mask in proptest::collection::vec(any::<bool>(), 5),
        ) {
            let w = t(&[3, 5], &w);
            let b = Tensor::vector(b);
            let x = Tensor::vector(mask.iter().map(|&m| if m { 0.75 } else { 0.0 }).collect());
            prop_assert_eq!(affine(&w, &b, &x).unwrap(), affine_sparse(&w, &b, &x).unwrap());
        }

        #[test]
        fn conv_and_pool_are_linear(
            k in proptest::collection::vec(-1.0f64..1.0, 2 * 2 * 2 * 2),
            x in proptest::collection::vec(-1.0f64..1.0, 2 * 4 * 4),
            y in proptest::collection::vec(-1.0f64..1.0, 2 * 4 * 4),
            alpha in -2.0f64..2.0,
            beta in -2.0f64..2.0,
        ) {
            let k = t(&[2, 2, 2, 2], &k);
            let zero = Tensor::zeros(&[2]);
            let (x, y) = (t(&[2, 4, 4], &x), t(&[2, 4, 4], &y));
            let mix = lin_comb(alpha, &x, beta, &y);
            let lhs = conv2d(&k, &zero, &mix, 2, 1).unwrap();
            let rhs = lin_comb(alpha, &conv2d(&k, &zero, &x, 2, 1).unwrap(), beta, &conv2d(&k, &zero, &y, 2, 1).unwrap());
            prop_assert!(close(lhs.data(), rhs.data()));

            let lhs = avgpool(&mix, 2, 2).unwrap();
            let rhs = lin_comb(alpha, &avgpool(&x, 2, 2).unwrap(), beta, &avgpool(&y, 2, 2).unwrap());
            prop_assert!(close(lhs.data(), rhs.data()));
        }

        #[test]
        fn avgpool_matches_averaging_matrix(x in proptest::collection::vec(-5.0f64..5.0, 16)) {
            let x = t(&[1, 4, 4], &x);
            // Each output row of the matrix holds 1/4 on the four inputs of its window.
            let mut m = vec![0.0; 4 * 16];
            for oy in 0..2 {
                for ox in 0..2 {
                    for ki in 0..2 {
                        for kj in 0..2 {
                            m[(oy * 2 + ox) * 16 + (2 * oy + ki) * 4 + 2 * ox + kj] = 0.25;
                        }
                    }
                }
            }
            let via_matrix = affine(&t(&[4, 16], &m), &Tensor::zeros(&[4]), &x).unwrap();
            let pooled = avgpool(&x, 2, 2).unwrap();
            prop_assert!(close(pooled.data(), via_matrix.data()));
        }
    }
}
