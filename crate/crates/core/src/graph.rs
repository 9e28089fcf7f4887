//! Tape-based reverse-mode automatic differentiation over [`Tensor`] values.
//!
//! A [`Graph`] records every operation as a node holding its output value,
//! its parents and a closure that maps the output gradient to parent
//! gradients. Nodes are appended in evaluation order, so walking the tape
//! from the back visits them in reverse topological order.
//!
//! ```
//! use convseq::{Graph, Tensor};
//!
//! let mut g = Graph::new();
//! let x = g.param(Tensor::new(&[2], vec![1.0, 2.0]).unwrap());
//! let sq = g.square(x);
//! let loss = g.sum_all(sq);
//! let grads = g.backward(loss).unwrap();
//! assert_eq!(grads.get(x).unwrap().data(), &[2.0, 4.0]);
//! ```

use std::rc::Rc;

use crate::error::{Error, Result};
use crate::tensor::{self, axis_extents, check_axis, numel, Tensor};
use crate::linalg;

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Maps `(output gradient, output value, parent values)` to one optional
/// gradient per parent.
pub(crate) type BackwardFn = Box<dyn Fn(&Tensor, &Tensor, &[&Tensor]) -> Vec<Option<Tensor>>>;

struct Node {
    value: Rc<Tensor>,
    parents: Vec<Var>,
    backward: Option<BackwardFn>,
    requires_grad: bool,
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    /// Smallest |input| seen by a kinked op (relu, abs).
    kink_margin: Option<f64>,
}

/// Gradients of a scalar with respect to every trainable leaf.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}

impl Graph {
    pub fn new() -> Self {
        Graph::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Distance of the closest `relu`/`abs` input to the kink at 0, or
    /// infinity if no such op was recorded. Finite differences are only
    /// meaningful when this exceeds the step.
    pub fn kink_margin(&self) -> f64 {
        self.kink_margin.unwrap_or(f64::INFINITY)
    }

    fn note_kinks(&mut self, a: Var) {
        let m = self.value(a).data().iter().fold(f64::INFINITY, |m, x| m.min(x.abs()));
        self.kink_margin = Some(self.kink_margin().min(m));
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: impl Into<Rc<Tensor>>) -> Var {
        self.leaf(value.into(), true)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, value: impl Into<Rc<Tensor>>) -> Var {
        self.leaf(value.into(), false)
    }

    fn leaf(&mut self, value: Rc<Tensor>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            parents: Vec::new(),
            backward: None,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub(crate) fn push(&mut self, value: Tensor, parents: Vec<Var>, backward: BackwardFn) -> Var {
        let requires_grad = parents.iter().any(|p| self.nodes[p.0].requires_grad);
        self.nodes.push(Node {
            value: Rc::new(value),
            parents,
            backward: requires_grad.then_some(backward),
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Reverse pass from a scalar `loss`. Every trainable leaf gets an entry,
    /// zero-filled when the loss does not depend on it.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let out = self.value(loss);
        if out.len() != 1 {
            return Err(Error::contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                out.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(out.shape(), 1.0));
        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            let Some(backward) = &node.backward else {
                continue;
            };
            let Some(grad) = grads[idx].take() else {
                continue;
            };
            let parent_values: Vec<&Tensor> =
                node.parents.iter().map(|p| &*self.nodes[p.0].value).collect();
            let parent_grads = backward(&grad, &node.value, &parent_values);
            debug_assert_eq!(parent_grads.len(), node.parents.len());
            for (p, pg) in node.parents.iter().zip(parent_grads) {
                let Some(pg) = pg else { continue };
                if !self.nodes[p.0].requires_grad {
                    continue;
                }
                debug_assert_eq!(pg.shape(), self.nodes[p.0].value.shape());
                match &mut grads[p.0] {
                    Some(acc) => acc.add_assign(&pg),
                    slot => *slot = Some(pg),
                }
            }
        }
        for (idx, node) in self.nodes.iter().enumerate() {
            if node.requires_grad && node.parents.is_empty() && grads[idx].is_none() {
                grads[idx] = Some(Tensor::zeros(node.value.shape()));
            }
        }
        Ok(Gradients { grads })
    }

    // ---------------------------------------------------------------------
    // Linear algebra

    /// Batched matrix product; see [`tensor::matmul`] for broadcasting rules.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = tensor::matmul(self.value(a), self.value(b))?;
        let dims = tensor::matmul_dims(self.shape(a), self.shape(b))?;
        let a_shape = self.shape(a).to_vec();
        let b_shape = self.shape(b).to_vec();
        Ok(self.push(
            value,
            vec![a, b],
            Box::new(move |g, _, parents| {
                let (av, bv) = (parents[0].data(), parents[1].data());
                let (m, p, q) = (dims.m, dims.p, dims.q);
                let mut da = vec![0.0; numel(&a_shape)];
                let mut db = vec![0.0; numel(&b_shape)];
                if !dims.b_batched && (dims.a_batched || dims.batch == 1) {
                    let rows = if dims.a_batched { dims.batch * m } else { m };
                    linalg::gemm_nt(g.data(), bv, &mut da, rows, q, p);
                    linalg::gemm_tn(av, g.data(), &mut db, rows, p, q);
                } else {
                    for t in 0..dims.batch {
                        let go = &g.data()[t * m * q..(t + 1) * m * q];
                        let ao = if dims.a_batched { t * m * p } else { 0 };
                        let bo = if dims.b_batched { t * p * q } else { 0 };
                        linalg::gemm_nt(go, &bv[bo..], &mut da[ao..], m, q, p);
                        linalg::gemm_tn(&av[ao..], go, &mut db[bo..], m, p, q);
                    }
                }
                vec![
                    Some(Tensor::from_parts(a_shape.clone(), da)),
                    Some(Tensor::from_parts(b_shape.clone(), db)),
                ]
            }),
        ))
    }

    // ---------------------------------------------------------------------
    // Elementwise

    fn suffix_repeats(op: &'static str, a: &[usize], b: &[usize]) -> Result<usize> {
        if b.len() > a.len() || a[a.len() - b.len()..] != *b {
            return Err(Error::shape(op, a, b));
        }
        Ok(numel(a) / numel(b))
    }

    /// `a + b`, where `b` has the shape of `a` or of a trailing suffix of it
    /// (broadcast across the leading axes).
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let reps = Self::suffix_repeats("add", self.shape(a), self.shape(b))?;
        let (av, bv) = (self.value(a), self.value(b));
        let n = bv.len();
        let data = av.data().iter().enumerate().map(|(i, x)| x + bv.data()[i % n]).collect();
        let value = Tensor::from_parts(av.shape().to_vec(), data);
        let b_shape = bv.shape().to_vec();
        Ok(self.push(
            value,
            vec![a, b],
            Box::new(move |g, _, _| {
                let db = if reps == 1 {
                    g.clone()
                } else {
                    let mut acc = vec![0.0; n];
                    for chunk in g.data().chunks(n) {
                        for (s, x) in acc.iter_mut().zip(chunk) {
                            *s += x;
                        }
                    }
                    Tensor::from_parts(b_shape.clone(), acc)
                };
                vec![Some(g.clone()), Some(db)]
            }),
        ))
    }

    /// Elementwise `a ⊙ b` with the same broadcasting as [`Graph::add`].
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        Self::suffix_repeats("mul", self.shape(a), self.shape(b))?;
        let (av, bv) = (self.value(a), self.value(b));
        let n = bv.len();
        let data = av.data().iter().enumerate().map(|(i, x)| x * bv.data()[i % n]).collect();
        let value = Tensor::from_parts(av.shape().to_vec(), data);
        Ok(self.push(
            value,
            vec![a, b],
            Box::new(move |g, _, parents| {
                let (av, bv) = (parents[0], parents[1]);
                let da: Vec<f64> = g
                    .data()
                    .iter()
                    .enumerate()
                    .map(|(i, gi)| gi * bv.data()[i % n])
                    .collect();
                let mut db = vec![0.0; n];
                for (i, (gi, ai)) in g.data().iter().zip(av.data()).enumerate() {
                    db[i % n] += gi * ai;
                }
                vec![
                    Some(Tensor::from_parts(av.shape().to_vec(), da)),
                    Some(Tensor::from_parts(bv.shape().to_vec(), db)),
                ]
            }),
        ))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let value = self.value(a).map(|x| c * x);
        self.push(value, vec![a], Box::new(move |g, _, _| vec![Some(g.map(|x| c * x))]))
    }

    /// Elementwise map with derivative `df(x, y)` where `y = f(x)`.
    fn unary(
        &mut self,
        a: Var,
        f: impl Fn(f64) -> f64,
        df: impl Fn(f64, f64) -> f64 + 'static,
    ) -> Var {
        let value = self.value(a).map(f);
        self.push(
            value,
            vec![a],
            Box::new(move |g, out, parents| {
                let data = g
                    .data()
                    .iter()
                    .zip(parents[0].data())
                    .zip(out.data())
                    .map(|((gi, x), y)| gi * df(*x, *y))
                    .collect();
                vec![Some(Tensor::from_parts(g.shape().to_vec(), data))]
            }),
        )
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, sigmoid, |_, y| y * (1.0 - y))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, f64::tanh, |_, y| 1.0 - y * y)
    }

    /// ReLU; the subgradient at 0 is 0.
    pub fn relu(&mut self, a: Var) -> Var {
        self.note_kinks(a);
        self.unary(a, |x| x.max(0.0), |x, _| if x > 0.0 { 1.0 } else { 0.0 })
    }

    /// |x|; the subgradient at 0 is 0.
    pub fn abs(&mut self, a: Var) -> Var {
        self.note_kinks(a);
        self.unary(a, f64::abs, |x, _| sign(x))
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.unary(a, |x| x * x, |x, _| 2.0 * x)
    }

    // ---------------------------------------------------------------------
    // Reductions

    pub fn sum_all(&mut self, a: Var) -> Var {
        let value = Tensor::scalar(compensated_sum(self.value(a).data()));
        let shape = self.shape(a).to_vec();
        self.push(
            value,
            vec![a],
            Box::new(move |g, _, _| vec![Some(Tensor::full(&shape, g.data()[0]))]),
        )
    }

    pub fn mean_all(&mut self, a: Var) -> Var {
        let n = self.value(a).len() as f64;
        let s = self.sum_all(a);
        self.scale(s, 1.0 / n)
    }

    /// Sum over `axis`, removing it from the shape.
    pub fn sum_axis(&mut self, a: Var, axis: usize) -> Result<Var> {
        check_axis("sum_axis", self.shape(a), axis)?;
        let shape = self.shape(a).to_vec();
        let (outer, len, inner) = axis_extents(&shape, axis);
        let x = self.value(a).data();
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            for j in 0..len {
                let src = &x[(o * len + j) * inner..(o * len + j + 1) * inner];
                for (d, s) in out[o * inner..(o + 1) * inner].iter_mut().zip(src) {
                    *d += s;
                }
            }
        }
        let mut out_shape = shape.clone();
        out_shape.remove(axis);
        Ok(self.push(
            Tensor::from_parts(out_shape, out),
            vec![a],
            Box::new(move |g, _, _| {
                let mut dx = vec![0.0; numel(&shape)];
                for o in 0..outer {
                    for j in 0..len {
                        dx[(o * len + j) * inner..(o * len + j + 1) * inner]
                            .copy_from_slice(&g.data()[o * inner..(o + 1) * inner]);
                    }
                }
                vec![Some(Tensor::from_parts(shape.clone(), dx))]
            }),
        ))
    }

    pub fn mean_axis(&mut self, a: Var, axis: usize) -> Result<Var> {
        check_axis("mean_axis", self.shape(a), axis)?;
        let len = self.shape(a)[axis] as f64;
        let s = self.sum_axis(a, axis)?;
        Ok(self.scale(s, 1.0 / len))
    }

    // ---------------------------------------------------------------------
    // Normalization

    pub fn softmax(&mut self, a: Var, axis: usize) -> Result<Var> {
        let value = tensor::softmax(self.value(a), axis)?;
        let (outer, len, inner) = axis_extents(self.shape(a), axis);
        let shape = self.shape(a).to_vec();
        Ok(self.push(
            value,
            vec![a],
            Box::new(move |g, y, _| {
                let (g, y) = (g.data(), y.data());
                let mut dx = vec![0.0; y.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let base = o * len * inner + i;
                        let dot: f64 = (0..len).map(|j| g[base + j * inner] * y[base + j * inner]).sum();
                        for j in 0..len {
                            let k = base + j * inner;
                            dx[k] = y[k] * (g[k] - dot);
                        }
                    }
                }
                vec![Some(Tensor::from_parts(shape.clone(), dx))]
            }),
        ))
    }

    /// Layer normalization over the last axis with variance epsilon 1e-5,
    /// followed by the affine map `gain ⊙ x̂ + bias`.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Result<Var> {
        const EPS: f64 = 1e-5;
        let shape = self.shape(x).to_vec();
        let d = *shape.last().ok_or_else(|| Error::contract("layer_norm on a scalar"))?;
        if self.shape(gain) != [d] || self.shape(bias) != [d] {
            return Err(Error::shape("layer_norm", &shape, self.shape(gain)));
        }
        let xv = self.value(x).data();
        let (gv, bv) = (self.value(gain).data(), self.value(bias).data());
        let rows = xv.len() / d;
        let mut xhat = vec![0.0; xv.len()];
        let mut inv_std = vec![0.0; rows];
        let mut out = vec![0.0; xv.len()];
        for r in 0..rows {
            let row = &xv[r * d..(r + 1) * d];
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let is = 1.0 / (var + EPS).sqrt();
            inv_std[r] = is;
            for c in 0..d {
                let h = (row[c] - mean) * is;
                xhat[r * d + c] = h;
                out[r * d + c] = h * gv[c] + bv[c];
            }
        }
        Ok(self.push(
            Tensor::from_parts(shape.clone(), out),
            vec![x, gain, bias],
            Box::new(move |g, _, parents| {
                let gd = g.data();
                let gain = parents[1].data();
                let mut dx = vec![0.0; gd.len()];
                let mut dgain = vec![0.0; d];
                let mut dbias = vec![0.0; d];
                for r in 0..rows {
                    let mut mean_dh = 0.0;
                    let mut mean_dh_h = 0.0;
                    for c in 0..d {
                        let k = r * d + c;
                        let dh = gd[k] * gain[c];
                        mean_dh += dh;
                        mean_dh_h += dh * xhat[k];
                        dgain[c] += gd[k] * xhat[k];
                        dbias[c] += gd[k];
                    }
                    mean_dh /= d as f64;
                    mean_dh_h /= d as f64;
                    for c in 0..d {
                        let k = r * d + c;
                        let dh = gd[k] * gain[c];
                        dx[k] = inv_std[r] * (dh - mean_dh - xhat[k] * mean_dh_h);
                    }
                }
                vec![
                    Some(Tensor::from_parts(shape.clone(), dx)),
                    Some(Tensor::from_parts(vec![d], dgain)),
                    Some(Tensor::from_parts(vec![d], dbias)),
                ]
            }),
        ))
    }

    // ---------------------------------------------------------------------
    // Shape manipulation

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(a).reshape(shape)?;
        let orig = self.shape(a).to_vec();
        Ok(self.push(
            value,
            vec![a],
            Box::new(move |g, _, _| vec![Some(Tensor::from_parts(orig.clone(), g.data().to_vec()))]),
        ))
    }

    /// Output axis `i` is input axis `perm[i]`.
    pub fn permute(&mut self, a: Var, perm: &[usize]) -> Result<Var> {
        let value = tensor::permute(self.value(a), perm)?;
        let inv = tensor::inverse_permutation(perm);
        Ok(self.push(
            value,
            vec![a],
            Box::new(move |g, _, _| vec![Some(tensor::permute(g, &inv).expect("valid permutation"))]),
        ))
    }

    /// Swap the last two axes.
    pub fn transpose_last(&mut self, a: Var) -> Result<Var> {
        let r = self.shape(a).len();
        if r < 2 {
            return Err(Error::contract("transpose_last needs rank >= 2"));
        }
        let mut perm: Vec<usize> = (0..r).collect();
        perm.swap(r - 2, r - 1);
        self.permute(a, &perm)
    }

    /// Contiguous slice `[start, start + len)` along `axis`.
    pub fn slice_axis(&mut self, a: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        check_axis("slice_axis", &shape, axis)?;
        if len == 0 || start + len > shape[axis] {
            return Err(Error::contract(format!(
                "slice [{start}, {}) out of range for axis {axis} of {shape:?}",
                start + len
            )));
        }
        let (outer, full, inner) = axis_extents(&shape, axis);
        let x = self.value(a).data();
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            out.extend_from_slice(&x[(o * full + start) * inner..(o * full + start + len) * inner]);
        }
        let mut out_shape = shape.clone();
        out_shape[axis] = len;
        Ok(self.push(
            Tensor::from_parts(out_shape, out),
            vec![a],
            Box::new(move |g, _, _| {
                let mut dx = vec![0.0; numel(&shape)];
                for o in 0..outer {
                    dx[(o * full + start) * inner..(o * full + start + len) * inner]
                        .copy_from_slice(&g.data()[o * len * inner..(o + 1) * len * inner]);
                }
                vec![Some(Tensor::from_parts(shape.clone(), dx))]
            }),
        ))
    }

    /// Shift along the second-to-last (time) axis: `out[.., i, :] = a[.., i + offset, :]`,
    /// zero where `i + offset` falls outside the sequence.
    pub fn shift_time(&mut self, a: Var, offset: isize) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        if shape.len() < 2 {
            return Err(Error::contract("shift_time needs rank >= 2"));
        }
        let (n, d) = (shape[shape.len() - 2], shape[shape.len() - 1]);
        let batch = numel(&shape) / (n * d);
        let shift = move |src: &[f64], forward: bool| {
            let mut out = vec![0.0; src.len()];
            for b in 0..batch {
                for i in 0..n {
                    let j = i as isize + offset;
                    if j < 0 || j >= n as isize {
                        continue;
                    }
                    let j = j as usize;
                    let (dst_i, src_i) = if forward { (i, j) } else { (j, i) };
                    let base = b * n * d;
                    out[base + dst_i * d..base + (dst_i + 1) * d]
                        .copy_from_slice(&src[base + src_i * d..base + (src_i + 1) * d]);
                }
            }
            out
        };
        let value = Tensor::from_parts(shape.clone(), shift(self.value(a).data(), true));
        Ok(self.push(
            value,
            vec![a],
            Box::new(move |g, _, _| {
                vec![Some(Tensor::from_parts(shape.clone(), shift(g.data(), false)))]
            }),
        ))
    }

    /// Row lookup: `out[t, :] = table[ids[t], :]`, output shape `lead ++ [d]`.
    /// Gradient rows for `frozen` are dropped.
    pub fn embedding(
        &mut self,
        table: Var,
        ids: &[usize],
        lead: &[usize],
        frozen: Option<usize>,
    ) -> Result<Var> {
        let tshape = self.shape(table).to_vec();
        if tshape.len() != 2 || numel(lead) != ids.len() {
            return Err(Error::shape("embedding", &tshape, lead));
        }
        let (rows, d) = (tshape[0], tshape[1]);
        if let Some(&bad) = ids.iter().find(|&&id| id >= rows) {
            return Err(Error::contract(format!(
                "token id {bad} out of range for vocabulary of {rows}"
            )));
        }
        let tv = self.value(table).data();
        let mut out = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            out.extend_from_slice(&tv[id * d..(id + 1) * d]);
        }
        let mut out_shape = lead.to_vec();
        out_shape.push(d);
        let ids = ids.to_vec();
        Ok(self.push(
            Tensor::from_parts(out_shape, out),
            vec![table],
            Box::new(move |g, _, _| {
                let mut dt = vec![0.0; rows * d];
                for (t, &id) in ids.iter().enumerate() {
                    if Some(id) == frozen {
                        continue;
                    }
                    for c in 0..d {
                        dt[id * d + c] += g.data()[t * d + c];
                    }
                }
                vec![Some(Tensor::from_parts(vec![rows, d], dt))]
            }),
        ))
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Neumaier-compensated sum, accurate to a few ulps of the result.
pub(crate) fn compensated_sum(xs: &[f64]) -> f64 {
    let (mut sum, mut c) = (0.0f64, 0.0f64);
    for &x in xs {
        let t = sum + x;
        c += if sum.abs() >= x.abs() { (sum - t) + x } else { (x - t) + sum };
        sum = t;
    }
    sum + c
}
