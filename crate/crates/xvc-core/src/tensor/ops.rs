//! Elementwise, reduction, and shape operations on the tape.
//!
//! Binary operations broadcast numpy-style. Non-smooth points get documented
//! subgradients: `abs` and `sqrt` use 0 at the origin, `clip` uses 0 on its
//! boundaries. The two straight-through ops (`floor_ste`, `sign_ste`) have
//! surrogate backward rules; see the voxel-density module for their contract.

use std::sync::Arc;

use super::{numel_of, Graph, Tensor};
use crate::error::{Error, Result};

/// Broadcast result shape of two operand shapes, trailing-aligned.
pub fn broadcast_shape(op: &'static str, a: &[usize], b: &[usize]) -> Result<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0usize; rank];
    for i in 0..rank {
        let da = if i < rank - a.len() { 1 } else { a[i - (rank - a.len())] };
        let db = if i < rank - b.len() { 1 } else { b[i - (rank - b.len())] };
        if da != db && da != 1 && db != 1 {
            return Err(Error::ShapeMismatch { op, lhs: a.to_vec(), rhs: b.to_vec() });
        }
        out[i] = da.max(db);
    }
    Ok(out)
}

/// Flat map from broadcast-output indices to operand indices.
/// `None` means the operand already has the output shape.
fn broadcast_map(from: &[usize], to: &[usize]) -> Option<Vec<usize>> {
    if from == to {
        return None;
    }
    let rank = to.len();
    let mut padded = vec![1usize; rank];
    padded[rank - from.len()..].copy_from_slice(from);
    let numel = numel_of(to);
    let mut map = vec![0usize; numel];
    for (flat, slot) in map.iter_mut().enumerate() {
        let mut rem = flat;
        let mut idx = 0usize;
        let mut stride = 1usize;
        // Walk dimensions right to left, skipping broadcast (size-1) dims.
        for d in (0..rank).rev() {
            let coord = rem % to[d];
            rem /= to[d];
            let c = if padded[d] == 1 { 0 } else { coord };
            idx += c * stride;
            stride *= padded[d];
        }
        *slot = idx;
    }
    Some(map)
}

fn apply_map(map: &Option<Vec<usize>>, i: usize) -> usize {
    match map {
        Some(m) => m[i],
        None => i,
    }
}

/// Plan for reducing `shape` over `axes`: output shape plus a flat map from
/// input positions to output positions.
fn reduce_plan(
    op: &'static str,
    shape: &[usize],
    axes: Option<&[usize]>,
) -> Result<(Vec<usize>, Vec<usize>, usize)> {
    let numel = numel_of(shape);
    let Some(axes) = axes else {
        return Ok((Vec::new(), vec![0; numel], numel.max(1)));
    };
    let rank = shape.len();
    let mut reduce = vec![false; rank];
    for &ax in axes {
        if ax >= rank {
            return Err(Error::contract(
                op,
                format!("axis {} out of range for shape {:?}", ax, shape),
            ));
        }
        if reduce[ax] {
            return Err(Error::contract(op, format!("duplicate axis {}", ax)));
        }
        reduce[ax] = true;
    }
    let out_shape: Vec<usize> = shape
        .iter()
        .enumerate()
        .filter(|(d, _)| !reduce[*d])
        .map(|(_, &s)| s)
        .collect();
    let reduced_count: usize = shape
        .iter()
        .enumerate()
        .filter(|(d, _)| reduce[*d])
        .map(|(_, &s)| s)
        .product();
    let mut map = vec![0usize; numel];
    for (flat, slot) in map.iter_mut().enumerate() {
        let mut rem = flat;
        let mut out_idx = 0usize;
        let mut out_stride = 1usize;
        for d in (0..rank).rev() {
            let coord = rem % shape[d];
            rem /= shape[d];
            if !reduce[d] {
                out_idx += coord * out_stride;
                out_stride *= shape[d];
            }
        }
        *slot = out_idx;
    }
    Ok((out_shape, map, reduced_count.max(1)))
}

impl Graph {
    fn binary_op(
        &mut self,
        name: &'static str,
        a: &Tensor,
        b: &Tensor,
        forward: impl Fn(f64, f64) -> f64,
        da: impl Fn(f64, f64) -> f64 + Send + Sync + 'static,
        db: impl Fn(f64, f64) -> f64 + Send + Sync + 'static,
    ) -> Result<Tensor> {
        let out_shape = broadcast_shape(name, a.shape(), b.shape())?;
        let map_a = broadcast_map(a.shape(), &out_shape);
        let map_b = broadcast_map(b.shape(), &out_shape);
        let av = self.data_arc(a);
        let bv = self.data_arc(b);
        let numel = numel_of(&out_shape);
        let mut data = vec![0.0; numel];
        for (i, slot) in data.iter_mut().enumerate() {
            *slot = forward(av[apply_map(&map_a, i)], bv[apply_map(&map_b, i)]);
        }
        let (ida, idb) = (a.id(), b.id());
        let backward = Box::new(move |up: &[f64], sink: &mut super::GradSink<'_>| {
            for (i, &u) in up.iter().enumerate() {
                let x = av[apply_map(&map_a, i)];
                let y = bv[apply_map(&map_b, i)];
                sink.add(ida, apply_map(&map_a, i), u * da(x, y));
                sink.add(idb, apply_map(&map_b, i), u * db(x, y));
            }
        });
        Ok(self.record(name, &[a, b], out_shape, data, backward))
    }

    fn unary_op(
        &mut self,
        name: &'static str,
        a: &Tensor,
        forward: impl Fn(f64) -> f64,
        dx: impl Fn(f64) -> f64 + Send + Sync + 'static,
    ) -> Tensor {
        let av = self.data_arc(a);
        let data: Vec<f64> = av.iter().map(|&x| forward(x)).collect();
        let id = a.id();
        let backward = Box::new(move |up: &[f64], sink: &mut super::GradSink<'_>| {
            for (i, &u) in up.iter().enumerate() {
                sink.add(id, i, u * dx(av[i]));
            }
        });
        self.record(name, &[a], a.shape().to_vec(), data, backward)
    }

    pub fn add(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        self.binary_op("add", a, b, |x, y| x + y, |_, _| 1.0, |_, _| 1.0)
    }

    pub fn sub(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        self.binary_op("sub", a, b, |x, y| x - y, |_, _| 1.0, |_, _| -1.0)
    }

    pub fn mul(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        self.binary_op("mul", a, b, |x, y| x * y, |_, y| y, |x, _| x)
    }

    /// Elementwise division. Any zero in the divisor is a domain error naming
    /// the offending index.
    pub fn div(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        if let Some(i) = self.value(b).iter().position(|&y| y == 0.0) {
            return Err(Error::domain("div", format!("zero divisor at index {}", i)));
        }
        self.binary_op("div", a, b, |x, y| x / y, |_, y| 1.0 / y, |x, y| -x / (y * y))
    }

    pub fn neg(&mut self, a: &Tensor) -> Tensor {
        self.unary_op("neg", a, |x| -x, |_| -1.0)
    }

    /// |x|, with subgradient 0 at x = 0.
    pub fn abs(&mut self, a: &Tensor) -> Tensor {
        self.unary_op(
            "abs",
            a,
            f64::abs,
            |x| {
                if x > 0.0 {
                    1.0
                } else if x < 0.0 {
                    -1.0
                } else {
                    0.0
                }
            },
        )
    }

    /// e^x. Overflow to non-finite values is a domain error.
    pub fn exp(&mut self, a: &Tensor) -> Result<Tensor> {
        if let Some(i) = self.value(a).iter().position(|&x| x.exp().is_infinite()) {
            return Err(Error::domain(
                "exp",
                format!("overflow for operand {} at index {}", self.value(a)[i], i),
            ));
        }
        Ok(self.unary_op("exp", a, f64::exp, f64::exp))
    }

    /// Natural log; every operand must be strictly positive.
    pub fn log(&mut self, a: &Tensor) -> Result<Tensor> {
        if let Some(i) = self.value(a).iter().position(|&x| x <= 0.0) {
            return Err(Error::domain(
                "log",
                format!("non-positive operand {} at index {}", self.value(a)[i], i),
            ));
        }
        Ok(self.unary_op("log", a, f64::ln, |x| 1.0 / x))
    }

    /// √x for x ≥ 0, with subgradient 0 at x = 0.
    pub fn sqrt(&mut self, a: &Tensor) -> Result<Tensor> {
        if let Some(i) = self.value(a).iter().position(|&x| x < 0.0) {
            return Err(Error::domain(
                "sqrt",
                format!("negative operand {} at index {}", self.value(a)[i], i),
            ));
        }
        Ok(self.unary_op(
            "sqrt",
            a,
            f64::sqrt,
            |x| if x == 0.0 { 0.0 } else { 0.5 / x.sqrt() },
        ))
    }

    /// ⌊x⌋ forward; straight-through (identity) backward.
    pub fn floor_ste(&mut self, a: &Tensor) -> Tensor {
        self.unary_op("floor_ste", a, f64::floor, |_| 1.0)
    }

    /// Three-valued sign forward. The backward is the derivative of the
    /// declared surrogate Htanh(r) = clip(r, -1, 1) with r = (x - 1/2) * 2:
    /// gradient 2 where 0 < x < 1, zero elsewhere.
    pub fn sign_ste(&mut self, a: &Tensor) -> Tensor {
        self.unary_op(
            "sign_ste",
            a,
            |x| {
                if x > 0.0 {
                    1.0
                } else if x < 0.0 {
                    -1.0
                } else {
                    0.0
                }
            },
            |x| if x > 0.0 && x < 1.0 { 2.0 } else { 0.0 },
        )
    }

    /// Clamp to [lo, hi]; gradient passes on the closed interval (the
    /// boundary subgradient is 1, so values sitting exactly on a limit —
    /// e.g. indices in a grid's first cell — keep their gradient).
    pub fn clip(&mut self, a: &Tensor, lo: f64, hi: f64) -> Result<Tensor> {
        if !(lo <= hi) {
            return Err(Error::contract(
                "clip",
                format!("empty interval [{}, {}]", lo, hi),
            ));
        }
        Ok(self.unary_op(
            "clip",
            a,
            move |x| x.clamp(lo, hi),
            move |x| if x >= lo && x <= hi { 1.0 } else { 0.0 },
        ))
    }

    /// Multiply by a compile-time constant.
    pub fn scale(&mut self, a: &Tensor, c: f64) -> Result<Tensor> {
        if !c.is_finite() {
            return Err(Error::contract("scale", format!("non-finite factor {}", c)));
        }
        Ok(self.unary_op("scale", a, move |x| x * c, move |_| c))
    }

    /// Add a constant to every element.
    pub fn add_scalar(&mut self, a: &Tensor, c: f64) -> Result<Tensor> {
        if !c.is_finite() {
            return Err(Error::contract(
                "add_scalar",
                format!("non-finite addend {}", c),
            ));
        }
        Ok(self.unary_op("add_scalar", a, move |x| x + c, |_| 1.0))
    }

    /// Sum over `axes` (all axes when `None`, yielding a rank-0 tensor).
    pub fn sum(&mut self, a: &Tensor, axes: Option<&[usize]>) -> Result<Tensor> {
        let (out_shape, map, _) = reduce_plan("sum", a.shape(), axes)?;
        let av = self.data_arc(a);
        let mut data = vec![0.0; numel_of(&out_shape)];
        for (i, &x) in av.iter().enumerate() {
            data[map[i]] += x;
        }
        let id = a.id();
        let map = Arc::new(map);
        let bmap = Arc::clone(&map);
        let backward = Box::new(move |up: &[f64], sink: &mut super::GradSink<'_>| {
            for i in 0..bmap.len() {
                sink.add(id, i, up[bmap[i]]);
            }
        });
        Ok(self.record("sum", &[a], out_shape, data, backward))
    }

    /// Arithmetic mean over `axes`.
    pub fn mean(&mut self, a: &Tensor, axes: Option<&[usize]>) -> Result<Tensor> {
        let (out_shape, map, count) = reduce_plan("mean", a.shape(), axes)?;
        if a.numel() == 0 {
            return Err(Error::domain("mean", "empty tensor"));
        }
        let av = self.data_arc(a);
        let inv = 1.0 / count as f64;
        let mut data = vec![0.0; numel_of(&out_shape)];
        for (i, &x) in av.iter().enumerate() {
            data[map[i]] += x * inv;
        }
        let id = a.id();
        let map = Arc::new(map);
        let bmap = Arc::clone(&map);
        let backward = Box::new(move |up: &[f64], sink: &mut super::GradSink<'_>| {
            for i in 0..bmap.len() {
                sink.add(id, i, up[bmap[i]] * inv);
            }
        });
        Ok(self.record("mean", &[a], out_shape, data, backward))
    }

    /// Σ|x| over `axes`.
    pub fn l1_norm(&mut self, a: &Tensor, axes: Option<&[usize]>) -> Result<Tensor> {
        let t = self.abs(a);
        self.sum(&t, axes)
    }

    /// Σx² over `axes`.
    pub fn l2_norm_sq(&mut self, a: &Tensor, axes: Option<&[usize]>) -> Result<Tensor> {
        let t = self.mul(a, a)?;
        self.sum(&t, axes)
    }

    /// View with a new shape; element count must be preserved.
    pub fn reshape(&mut self, a: &Tensor, shape: &[usize]) -> Result<Tensor> {
        if numel_of(shape) != a.numel() {
            return Err(Error::contract(
                "reshape",
                format!("cannot reshape {:?} into {:?}", a.shape(), shape),
            ));
        }
        let data = self.value(a).to_vec();
        let id = a.id();
        let backward = Box::new(move |up: &[f64], sink: &mut super::GradSink<'_>| {
            sink.add_slice(id, up);
        });
        Ok(self.record("reshape", &[a], shape.to_vec(), data, backward))
    }

    /// Concatenate tensors (each flattened) into one rank-1 tensor.
    pub fn concat_flat(&mut self, parts: &[&Tensor]) -> Result<Tensor> {
        if parts.is_empty() {
            return Err(Error::contract("concat_flat", "no tensors to concatenate"));
        }
        let total: usize = parts.iter().map(|t| t.numel()).sum();
        let mut data = Vec::with_capacity(total);
        let mut spans = Vec::with_capacity(parts.len());
        for t in parts {
            let start = data.len();
            data.extend_from_slice(self.value(t));
            spans.push((t.id(), start, t.numel()));
        }
        let backward = Box::new(move |up: &[f64], sink: &mut super::GradSink<'_>| {
            for &(id, start, len) in &spans {
                for i in 0..len {
                    sink.add(id, i, up[start + i]);
                }
            }
        });
        Ok(self.record("concat_flat", parts, vec![total], data, backward))
    }

    /// Reorder axes by `perm` (a permutation of 0..rank).
    pub fn permute(&mut self, a: &Tensor, perm: &[usize]) -> Result<Tensor> {
        let rank = a.rank();
        let mut seen = vec![false; rank];
        if perm.len() != rank || perm.iter().any(|&p| p >= rank || std::mem::replace(&mut seen[p], true)) {
            return Err(Error::contract(
                "permute",
                format!("{:?} is not a permutation of 0..{}", perm, rank),
            ));
        }
        let in_shape = a.shape().to_vec();
        let out_shape: Vec<usize> = perm.iter().map(|&p| in_shape[p]).collect();
        let numel = a.numel();
        // map[out_flat] = in_flat
        let mut map = vec![0usize; numel];
        let mut in_strides = vec![1usize; rank];
        for d in (0..rank.saturating_sub(1)).rev() {
            in_strides[d] = in_strides[d + 1] * in_shape[d + 1];
        }
        for (flat, slot) in map.iter_mut().enumerate() {
            let mut rem = flat;
            let mut coords = vec![0usize; rank];
            for d in (0..rank).rev() {
                coords[d] = rem % out_shape[d];
                rem /= out_shape[d];
            }
            let mut idx = 0;
            for d in 0..rank {
                idx += coords[d] * in_strides[perm[d]];
            }
            *slot = idx;
        }
        let av = self.data_arc(a);
        let data: Vec<f64> = map.iter().map(|&i| av[i]).collect();
        let id = a.id();
        let map = Arc::new(map);
        let backward = Box::new(move |up: &[f64], sink: &mut super::GradSink<'_>| {
            for (o, &i) in map.iter().enumerate() {
                sink.add(id, i, up[o]);
            }
        });
        Ok(self.record("permute", &[a], out_shape, data, backward))
    }
}
