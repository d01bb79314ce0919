//! Fused log-sum-product kernel.
//!
//! Each operand is shifted by its own maximum along the summed axis and exponentiated once,
//! so the inner loop is a plain sum of products. Output entries whose exp-space sum falls
//! below [`Real::underflow_guard`] are recomputed directly in log space.

use super::{strides_in, union_layout, walk, Axis, Tensor};
use crate::error::{Error, Result};
use crate::scalar::Real;

/// Per-output exp-space sums kept for the backward pass.
#[derive(Clone, Debug, PartialEq)]
pub(crate) struct ContractSaved<T> {
    pub sums: Vec<T>,
}

struct Prepared<T> {
    out_axes: Vec<Axis>,
    out_shape: Vec<usize>,
    k_size: usize,
    shifts: Vec<Vec<T>>,
    exps: Vec<Vec<T>>,
    shift_strides: Vec<Vec<usize>>,
    elem_strides: Vec<Vec<usize>>,
    k_strides: Vec<usize>,
}

fn prepare<T: Real>(ops: &[&Tensor<T>], axis: Axis) -> Result<Prepared<T>> {
    let (axes, shape) = union_layout(ops)?;
    let p = axes.iter().position(|&a| a == axis).ok_or(Error::MissingAxis(axis))?;
    let k_size = shape[p];
    let mut out_axes = axes.clone();
    let mut out_shape = shape.clone();
    out_axes.remove(p);
    out_shape.remove(p);

    let mut shifts = Vec::with_capacity(ops.len());
    let mut exps = Vec::with_capacity(ops.len());
    let mut shift_strides = Vec::with_capacity(ops.len());
    let mut elem_strides = Vec::with_capacity(ops.len());
    let mut k_strides = Vec::with_capacity(ops.len());
    let ninf = T::neg_infinity();

    for op in ops {
        let own = op.strides();
        let data = op.data();
        match op.position(axis) {
            Some(q) => {
                let mut r_axes = op.axes().to_vec();
                let mut r_shape = op.shape().to_vec();
                let mut r_src = own.clone();
                r_axes.remove(q);
                r_shape.remove(q);
                r_src.remove(q);
                let kq = own[q];
                let n = op.shape()[q];
                let mut shift = Vec::with_capacity(r_shape.iter().product());
                let mut e = vec![T::zero(); data.len()];
                walk(&r_shape, &[r_src], |off| {
                    let base = off[0];
                    let mut m = ninf;
                    for k in 0..n {
                        m = m.max(data[base + k * kq]);
                    }
                    let s = if m == ninf { T::zero() } else { m };
                    for k in 0..n {
                        e[base + k * kq] = (data[base + k * kq] - s).exp();
                    }
                    shift.push(s);
                });
                shift_strides.push(strides_in(&out_axes, &r_axes, &r_shape));
                shifts.push(shift);
                exps.push(e);
                k_strides.push(kq);
            }
            None => {
                let shift = data.iter().map(|&v| if v == ninf { T::zero() } else { v }).collect();
                let e = data.iter().map(|&v| if v == ninf { T::zero() } else { T::one() }).collect();
                shift_strides.push(strides_in(&out_axes, op.axes(), op.shape()));
                shifts.push(shift);
                exps.push(e);
                k_strides.push(0);
            }
        }
        elem_strides.push(strides_in(&out_axes, op.axes(), op.shape()));
    }
    Ok(Prepared {
        out_axes,
        out_shape,
        k_size,
        shifts,
        exps,
        shift_strides,
        elem_strides,
        k_strides,
    })
}

pub(crate) fn contract_forward<T: Real>(
    ops: &[&Tensor<T>],
    axis: Axis,
    log_k: T,
) -> Result<(Tensor<T>, ContractSaved<T>)> {
    let pr = prepare(ops, axis)?;
    let n = ops.len();
    let guard = T::underflow_guard();
    let ninf = T::neg_infinity();
    let total: usize = pr.out_shape.iter().product();
    let mut out = Vec::with_capacity(total);
    let mut sums = Vec::with_capacity(total);

    let mut strides = pr.shift_strides.clone();
    strides.extend(pr.elem_strides.iter().cloned());
    walk(&pr.out_shape, &strides, |off| {
        let (soff, eoff) = off.split_at(n);
        let mut shift = T::zero();
        for l in 0..n {
            shift = shift + pr.shifts[l][soff[l]];
        }
        let mut s = T::zero();
        for k in 0..pr.k_size {
            let mut prod = T::one();
            for l in 0..n {
                prod = prod * pr.exps[l][eoff[l] + k * pr.k_strides[l]];
            }
            s = s + prod;
        }
        let v = if s >= guard {
            shift + s.ln() - log_k
        } else {
            // Underflow (or an exact zero): redo this entry in log space.
            let mut m = ninf;
            for k in 0..pr.k_size {
                m = m.max(log_term(ops, eoff, &pr.k_strides, k));
            }
            if m == ninf {
                ninf
            } else {
                let mut acc = T::zero();
                for k in 0..pr.k_size {
                    acc = acc + (log_term(ops, eoff, &pr.k_strides, k) - m).exp();
                }
                m + acc.ln() - log_k
            }
        };
        out.push(v);
        sums.push(s);
    });
    Ok((Tensor::from_parts(pr.out_axes, pr.out_shape, out), ContractSaved { sums }))
}

#[inline]
fn log_term<T: Real>(ops: &[&Tensor<T>], eoff: &[usize], ks: &[usize], k: usize) -> T {
    let mut v = T::zero();
    for (l, op) in ops.iter().enumerate() {
        v = v + op.data()[eoff[l] + k * ks[l]];
    }
    v
}

/// Gradient of the fused contraction output with respect to every operand's log-space
/// entries. Entries feeding a `-inf` output receive zero gradient.
pub(crate) fn contract_backward<T: Real>(
    ops: &[&Tensor<T>],
    axis: Axis,
    log_k: T,
    out: &Tensor<T>,
    saved: &ContractSaved<T>,
    grad_out: &Tensor<T>,
) -> Result<Vec<Tensor<T>>> {
    let pr = prepare(ops, axis)?;
    let n = ops.len();
    let guard = T::underflow_guard();
    let mut grads: Vec<Vec<T>> = ops.iter().map(|op| vec![T::zero(); op.len()]).collect();
    let g_aligned = grad_out.permuted(&pr.out_axes)?;
    let out_aligned = out.permuted(&pr.out_axes)?;
    let (gd, od) = (g_aligned.data(), out_aligned.data());

    let mut o = 0usize;
    walk(&pr.out_shape, &pr.elem_strides, |eoff| {
        let g = gd[o];
        let v = od[o];
        let s = saved.sums[o];
        o += 1;
        if g == T::zero() || v == T::neg_infinity() {
            return;
        }
        if s >= guard {
            let c = g / s;
            for k in 0..pr.k_size {
                let mut prod = T::one();
                for l in 0..n {
                    prod = prod * pr.exps[l][eoff[l] + k * pr.k_strides[l]];
                }
                let w = c * prod;
                for l in 0..n {
                    let i = eoff[l] + k * pr.k_strides[l];
                    grads[l][i] = grads[l][i] + w;
                }
            }
        } else {
            let lse = v + log_k;
            for k in 0..pr.k_size {
                let w = g * (log_term(ops, eoff, &pr.k_strides, k) - lse).exp();
                for l in 0..n {
                    let i = eoff[l] + k * pr.k_strides[l];
                    grads[l][i] = grads[l][i] + w;
                }
            }
        }
    });
    Ok(ops
        .iter()
        .zip(grads)
        .map(|(op, g)| Tensor::from_parts(op.axes().to_vec(), op.shape().to_vec(), g))
        .collect())
}
