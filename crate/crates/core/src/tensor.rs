//! Dense row-major tensors of `f64` and the value-level kernels the
//! autodiff graph is built on.

use std::fmt;

use crate::error::{Error, Result};
use crate::linalg;

/// Dense n-dimensional array in row-major order.
///
/// `data.len()` always equals the product of `shape`. A rank-0 tensor
/// (empty shape) holds one scalar.
#[derive(Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.shape)
            .field("data", &self.data)
            .finish()
    }
}

pub(crate) fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl Tensor {
    pub fn new(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        if shape.iter().any(|&s| s == 0) {
            return Err(Error::contract(format!(
                "tensor dimensions must be positive, got {shape:?}"
            )));
        }
        if numel(shape) != data.len() {
            return Err(Error::contract(format!(
                "shape {shape:?} needs {} elements, got {}",
                numel(shape),
                data.len()
            )));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
        })
    }

    /// Internal constructor for shapes already known to be consistent.
    pub(crate) fn from_parts(shape: Vec<usize>, data: Vec<f64>) -> Self {
        debug_assert_eq!(numel(&shape), data.len());
        Tensor { shape, data }
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        Tensor::from_parts(shape.to_vec(), vec![value; numel(shape)])
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Tensor::full(shape, 0.0)
    }

    pub fn ones(shape: &[usize]) -> Self {
        Tensor::full(shape, 1.0)
    }

    pub fn scalar(value: f64) -> Self {
        Tensor::from_parts(Vec::new(), vec![value])
    }

    pub fn eye(n: usize) -> Self {
        let mut t = Tensor::zeros(&[n, n]);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> f64) -> Self {
        Tensor::from_parts(shape.to_vec(), (0..numel(shape)).map(&mut f).collect())
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
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

    /// Value of a one-element tensor.
    pub fn item(&self) -> Result<f64> {
        if self.data.len() != 1 {
            return Err(Error::contract(format!(
                "item() needs a single element, shape is {:?}",
                self.shape
            )));
        }
        Ok(self.data[0])
    }

    pub fn strides(&self) -> Vec<usize> {
        strides(&self.shape)
    }

    /// Flat offset of a multi-index.
    pub fn offset(&self, index: &[usize]) -> Result<usize> {
        if index.len() != self.shape.len() || index.iter().zip(&self.shape).any(|(i, s)| i >= s) {
            return Err(Error::contract(format!(
                "index {index:?} out of bounds for shape {:?}",
                self.shape
            )));
        }
        Ok(index
            .iter()
            .zip(self.strides())
            .map(|(i, s)| i * s)
            .sum())
    }

    /// Multi-index of a flat offset; inverse of [`Tensor::offset`].
    pub fn unravel(&self, mut offset: usize) -> Vec<usize> {
        let mut index = vec![0; self.shape.len()];
        for (axis, &dim) in self.shape.iter().enumerate().rev() {
            index[axis] = offset % dim;
            offset /= dim;
        }
        index
    }

    pub fn get(&self, index: &[usize]) -> Result<f64> {
        Ok(self.data[self.offset(index)?])
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor> {
        if numel(shape) != self.len() {
            return Err(Error::shape("reshape", &self.shape, shape));
        }
        Ok(Tensor::from_parts(shape.to_vec(), self.data.clone()))
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor::from_parts(self.shape.clone(), self.data.iter().map(|&x| f(x)).collect())
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> Result<f64> {
        if self.shape != other.shape {
            return Err(Error::shape("max_abs_diff", &self.shape, &other.shape));
        }
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max))
    }

    pub(crate) fn add_assign(&mut self, other: &Tensor) {
        debug_assert_eq!(self.shape, other.shape);
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }
}

pub(crate) fn strides(shape: &[usize]) -> Vec<usize> {
    let mut strides = vec![1; shape.len()];
    for axis in (0..shape.len().saturating_sub(1)).rev() {
        strides[axis] = strides[axis + 1] * shape[axis + 1];
    }
    strides
}

/// Geometry of a (possibly batched) matrix product.
#[derive(Debug, Clone)]
pub(crate) struct MatmulDims {
    pub batch: usize,
    pub a_batched: bool,
    pub b_batched: bool,
    pub m: usize,
    pub p: usize,
    pub q: usize,
    pub out_shape: Vec<usize>,
}

pub(crate) fn matmul_dims(a: &[usize], b: &[usize]) -> Result<MatmulDims> {
    if a.len() < 2 || b.len() < 2 {
        return Err(Error::shape("matmul", a, b));
    }
    let (a_lead, a_mat) = a.split_at(a.len() - 2);
    let (b_lead, b_mat) = b.split_at(b.len() - 2);
    let (m, p) = (a_mat[0], a_mat[1]);
    let (p2, q) = (b_mat[0], b_mat[1]);
    if p != p2 {
        return Err(Error::shape("matmul", a, b));
    }
    let (na, nb) = (numel(a_lead), numel(b_lead));
    let lead: &[usize] = if a_lead == b_lead || nb == 1 {
        a_lead
    } else if na == 1 {
        b_lead
    } else {
        return Err(Error::shape("matmul", a, b));
    };
    let mut out_shape = lead.to_vec();
    out_shape.extend([m, q]);
    let batch = numel(lead);
    Ok(MatmulDims {
        batch,
        a_batched: na == batch && batch > 1,
        b_batched: nb == batch && batch > 1,
        m,
        p,
        q,
        out_shape,
    })
}

/// Matrix product over the last two axes. Leading (batch) axes must agree,
/// or one side's leading axes must hold a single matrix that is broadcast.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let dims = matmul_dims(a.shape(), b.shape())?;
    let MatmulDims { batch, m, p, q, .. } = dims;
    let mut out = vec![0.0; batch * m * q];
    if !dims.b_batched {
        // One shared right-hand matrix: fold the batch into the row count.
        let rows = if dims.a_batched { batch * m } else { m };
        if dims.a_batched || batch == 1 {
            linalg::gemm_nn(a.data(), b.data(), &mut out, rows, p, q);
        } else {
            for t in 0..batch {
                linalg::gemm_nn(a.data(), b.data(), &mut out[t * m * q..], m, p, q);
            }
        }
    } else {
        for t in 0..batch {
            let ao = if dims.a_batched { t * m * p } else { 0 };
            linalg::gemm_nn(
                &a.data()[ao..],
                &b.data()[t * p * q..],
                &mut out[t * m * q..],
                m,
                p,
                q,
            );
        }
    }
    Ok(Tensor::from_parts(dims.out_shape, out))
}

/// Split a shape around `axis` into (outer, len, inner) extents.
pub(crate) fn axis_extents(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = numel(&shape[..axis]);
    let inner = numel(&shape[axis + 1..]);
    (outer, shape[axis], inner)
}

pub(crate) fn check_axis(op: &'static str, shape: &[usize], axis: usize) -> Result<()> {
    if axis >= shape.len() {
        return Err(Error::contract(format!(
            "{op}: axis {axis} invalid for shape {shape:?}"
        )));
    }
    Ok(())
}

/// Softmax along `axis`, with the row maximum subtracted before
/// exponentiation.
pub fn softmax(x: &Tensor, axis: usize) -> Result<Tensor> {
    check_axis("softmax", x.shape(), axis)?;
    let (outer, len, inner) = axis_extents(x.shape(), axis);
    let mut out = x.data().to_vec();
    for o in 0..outer {
        for i in 0..inner {
            let base = o * len * inner + i;
            let mut max = f64::NEG_INFINITY;
            for j in 0..len {
                max = max.max(out[base + j * inner]);
            }
            let mut sum = 0.0;
            for j in 0..len {
                let e = (out[base + j * inner] - max).exp();
                out[base + j * inner] = e;
                sum += e;
            }
            for j in 0..len {
                out[base + j * inner] /= sum;
            }
        }
    }
    Ok(Tensor::from_parts(x.shape().to_vec(), out))
}

/// Log-softmax over the last axis.
pub fn log_softmax_last(x: &Tensor) -> Tensor {
    let v = *x.shape().last().unwrap_or(&1);
    let mut out = x.data().to_vec();
    for row in out.chunks_mut(v) {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
        for z in row.iter_mut() {
            *z -= lse;
        }
    }
    Tensor::from_parts(x.shape().to_vec(), out)
}

/// Permute axes: output axis `a` is input axis `perm[a]`.
pub fn permute(x: &Tensor, perm: &[usize]) -> Result<Tensor> {
    let rank = x.rank();
    let mut seen = vec![false; rank];
    if perm.len() != rank || perm.iter().any(|&p| p >= rank || std::mem::replace(&mut seen[p], true)) {
        return Err(Error::contract(format!(
            "permute: {perm:?} is not a permutation of rank {rank}"
        )));
    }
    let in_strides = x.strides();
    let out_shape: Vec<usize> = perm.iter().map(|&p| x.shape()[p]).collect();
    let src_strides: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
    let mut out = Vec::with_capacity(x.len());
    let mut index = vec![0usize; rank];
    let mut src = 0usize;
    for _ in 0..x.len() {
        out.push(x.data()[src]);
        for axis in (0..rank).rev() {
            index[axis] += 1;
            src += src_strides[axis];
            if index[axis] < out_shape[axis] {
                break;
            }
            src -= src_strides[axis] * out_shape[axis];
            index[axis] = 0;
        }
    }
    Ok(Tensor::from_parts(out_shape, out))
}

pub(crate) fn inverse_permutation(perm: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; perm.len()];
    for (i, &p) in perm.iter().enumerate() {
        inv[p] = i;
    }
    inv
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_times_matrix() {
        let a = Tensor::new(&[2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let out = matmul(&Tensor::eye(2), &a).unwrap();
        assert_eq!(out, a);
    }

    #[test]
    fn row_times_column_is_dot_product() {
        let a = Tensor::new(&[1, 2], vec![1.0, 2.0]).unwrap();
        let b = Tensor::new(&[2, 1], vec![3.0, 4.0]).unwrap();
        assert_eq!(matmul(&a, &b).unwrap().data(), &[11.0]);
    }

    #[test]
    fn batched_product_matches_single() {
        let m = Tensor::new(&[2, 2], vec![1.0, -2.0, 0.5, 3.0]).unwrap();
        let n = Tensor::new(&[2, 2], vec![2.0, 1.0, -1.0, 4.0]).unwrap();
        let single = matmul(&m, &n).unwrap();
        let mb = Tensor::new(&[2, 2, 2], [m.data(), m.data()].concat()).unwrap();
        let nb = Tensor::new(&[2, 2, 2], [n.data(), n.data()].concat()).unwrap();
        let batched = matmul(&mb, &nb).unwrap();
        assert_eq!(&batched.data()[..4], single.data());
        assert_eq!(&batched.data()[4..], single.data());
        // Broadcasting the right-hand matrix gives the same answer.
        assert_eq!(matmul(&mb, &n).unwrap(), batched);
        assert_eq!(matmul(&m, &nb).unwrap(), batched);
    }

    #[test]
    fn matmul_shape_mismatch_names_both_shapes() {
        let a = Tensor::zeros(&[2, 3]);
        let b = Tensor::zeros(&[2, 3]);
        let msg = matmul(&a, &b).unwrap_err().to_string();
        assert!(msg.contains("[2, 3]"), "{msg}");
        let c = Tensor::zeros(&[3, 2, 3]);
        let d = Tensor::zeros(&[2, 3, 2]);
        assert!(matmul(&c, &d).is_err());
    }

    #[test]
    fn softmax_examples() {
        let u = softmax(&Tensor::zeros(&[3]), 0).unwrap();
        for &p in u.data() {
            assert!((p - 1.0 / 3.0).abs() < 1e-15);
        }
        let t = softmax(&Tensor::new(&[2], vec![0.0, 2f64.ln()]).unwrap(), 0).unwrap();
        assert!((t.data()[0] - 1.0 / 3.0).abs() < 1e-15);
        assert!((t.data()[1] - 2.0 / 3.0).abs() < 1e-15);
        let big = softmax(&Tensor::new(&[2], vec![1000.0, 1000.0]).unwrap(), 0).unwrap();
        assert_eq!(big.data(), &[0.5, 0.5]);
    }

    #[test]
    fn softmax_rejects_bad_axis() {
        assert!(softmax(&Tensor::zeros(&[2, 2]), 2).is_err());
    }

    #[test]
    fn softmax_along_inner_axis() {
        let x = Tensor::new(&[2, 2], vec![0.0, 5.0, 0.0, 5.0]).unwrap();
        let s = softmax(&x, 0).unwrap();
        assert_eq!(s.data(), &[0.5, 0.5, 0.5, 0.5]);
    }

    #[test]
    fn offset_round_trip() {
        let t = Tensor::zeros(&[3, 4, 5]);
        for off in 0..t.len() {
            assert_eq!(t.offset(&t.unravel(off)).unwrap(), off);
        }
        assert!(t.offset(&[3, 0, 0]).is_err());
    }

    #[test]
    fn permute_transposes() {
        let x = Tensor::new(&[2, 3], (0..6).map(f64::from).collect()).unwrap();
        let t = permute(&x, &[1, 0]).unwrap();
        assert_eq!(t.shape(), &[3, 2]);
        assert_eq!(t.data(), &[0.0, 3.0, 1.0, 4.0, 2.0, 5.0]);
        let back = permute(&t, &inverse_permutation(&[1, 0])).unwrap();
        assert_eq!(back, x);
        assert!(permute(&x, &[0, 0]).is_err());
    }

    #[test]
    fn constructor_checks_length() {
        assert!(Tensor::new(&[2, 2], vec![1.0; 3]).is_err());
        assert!(Tensor::new(&[0], vec![]).is_err());
        assert_eq!(Tensor::scalar(2.5).item().unwrap(), 2.5);
    }
}
