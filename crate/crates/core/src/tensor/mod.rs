//! Named-axis dense tensors and the log-space primitives used by the contraction engine.
//!
//! Axes are matched by name, never by position. A [`LogTensor`] holds log-space values
//! (`-inf` is zero probability) and rejects `NaN` and `+inf` at construction.

mod kernel;

use std::fmt;
use std::ops::Deref;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;

pub(crate) use kernel::{contract_backward, contract_forward, ContractSaved};

/// Axis identity: one K-axis per latent (sample index) or one axis per plate.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Axis {
    K(u32),
    Plate(u32),
}

impl Axis {
    pub fn is_plate(self) -> bool {
        matches!(self, Axis::Plate(_))
    }

    pub fn id(self) -> u32 {
        match self {
            Axis::K(i) | Axis::Plate(i) => i,
        }
    }
}

impl fmt::Display for Axis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Axis::K(i) => write!(f, "K{i}"),
            Axis::Plate(i) => write!(f, "P{i}"),
        }
    }
}

/// Dense row-major tensor over an ordered list of named axes.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T> {
    axes: Vec<Axis>,
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Copy> Tensor<T> {
    pub fn new(axes: Vec<Axis>, shape: Vec<usize>, data: Vec<T>) -> Result<Self> {
        if axes.len() != shape.len() {
            return Err(Error::InvalidTensor(format!(
                "{} axes but {} sizes",
                axes.len(),
                shape.len()
            )));
        }
        if let Some(p) = shape.iter().position(|&s| s == 0) {
            return Err(Error::InvalidTensor(format!("axis {} has size 0", axes[p])));
        }
        for (i, a) in axes.iter().enumerate() {
            if axes[..i].contains(a) {
                return Err(Error::InvalidTensor(format!("axis {a} appears twice")));
            }
        }
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::InvalidTensor(format!(
                "shape holds {n} entries but {} values given",
                data.len()
            )));
        }
        Ok(Self { axes, shape, data })
    }

    pub(crate) fn from_parts(axes: Vec<Axis>, shape: Vec<usize>, data: Vec<T>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Self { axes, shape, data }
    }

    pub fn filled(axes: Vec<Axis>, shape: Vec<usize>, value: T) -> Result<Self> {
        let n = shape.iter().product();
        Self::new(axes, shape, vec![value; n])
    }

    pub fn scalar(value: T) -> Self {
        Self { axes: Vec::new(), shape: Vec::new(), data: vec![value] }
    }

    pub fn axes(&self) -> &[Axis] {
        &self.axes
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn rank(&self) -> usize {
        self.axes.len()
    }

    pub fn is_scalar(&self) -> bool {
        self.axes.is_empty()
    }

    pub fn position(&self, axis: Axis) -> Option<usize> {
        self.axes.iter().position(|&a| a == axis)
    }

    pub fn size_of(&self, axis: Axis) -> Option<usize> {
        self.position(axis).map(|p| self.shape[p])
    }

    pub fn signature(&self) -> Vec<(Axis, usize)> {
        self.axes.iter().copied().zip(self.shape.iter().copied()).collect()
    }

    pub fn strides(&self) -> Vec<usize> {
        row_major_strides(&self.shape)
    }

    /// Entry at a multi-index given in this tensor's axis order.
    pub fn get(&self, index: &[usize]) -> T {
        let off: usize = index.iter().zip(self.strides()).map(|(i, s)| i * s).sum();
        self.data[off]
    }

    /// Entry at a multi-index given as `(axis, index)` pairs; extra axes are ignored.
    pub fn get_named(&self, index: &[(Axis, usize)]) -> T {
        let strides = self.strides();
        let mut off = 0;
        for (p, a) in self.axes.iter().enumerate() {
            let i = index
                .iter()
                .find(|(b, _)| b == a)
                .map(|&(_, i)| i)
                .unwrap_or_else(|| panic!("index for axis {a} missing"));
            off += i * strides[p];
        }
        self.data[off]
    }

    pub fn map<U: Copy>(&self, f: impl Fn(T) -> U) -> Tensor<U> {
        Tensor {
            axes: self.axes.clone(),
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    /// Same values laid out in a different axis order.
    pub fn permuted(&self, order: &[Axis]) -> Result<Self> {
        if order.len() != self.axes.len() || order.iter().any(|a| self.position(*a).is_none()) {
            return Err(Error::Structure(format!(
                "cannot reorder axes {:?} to {:?}",
                self.axes, order
            )));
        }
        let shape: Vec<usize> = order.iter().map(|a| self.size_of(*a).unwrap()).collect();
        let src = strides_in(order, &self.axes, &self.shape);
        let mut data = Vec::with_capacity(self.data.len());
        walk(&shape, &[src], |off| data.push(self.data[off[0]]));
        Ok(Self { axes: order.to_vec(), shape, data })
    }
}

impl<T: Real> Tensor<T> {
    pub fn cast<U: Real>(&self) -> Tensor<U> {
        self.map(|x| U::from_f64_lossy(x.to_f64().unwrap_or(f64::NAN)))
    }

    /// Sum over every axis not in `axes`, returning a tensor laid out in `axes` order.
    pub fn sum_to(&self, axes: &[Axis]) -> Result<Self> {
        let mut shape = Vec::with_capacity(axes.len());
        for a in axes {
            shape.push(self.size_of(*a).ok_or(Error::MissingAxis(*a))?);
        }
        let n: usize = shape.iter().product();
        let mut data = vec![T::zero(); n];
        let dst = strides_in(&self.axes, axes, &shape);
        let src = row_major_strides(&self.shape);
        walk(&self.shape, &[src, dst], |off| {
            data[off[1]] = data[off[1]] + self.data[off[0]];
        });
        Ok(Self { axes: axes.to_vec(), shape, data })
    }

    pub fn sum(&self) -> T {
        self.data.iter().fold(T::zero(), |acc, &x| acc + x)
    }
}

/// Log-space tensor: entries are finite or `-inf`.
#[derive(Clone, Debug, PartialEq)]
pub struct LogTensor<T>(Tensor<T>);

impl<T: Real> LogTensor<T> {
    pub fn new(axes: Vec<Axis>, shape: Vec<usize>, data: Vec<T>) -> Result<Self> {
        Self::from_tensor(Tensor::new(axes, shape, data)?)
    }

    pub fn from_tensor(t: Tensor<T>) -> Result<Self> {
        if let Some(bad) = t.data.iter().find(|x| x.is_nan() || *x == &T::infinity()) {
            return Err(Error::InvalidTensor(format!("log-space entry {bad:?} is not allowed")));
        }
        Ok(Self(t))
    }

    pub(crate) fn from_tensor_unchecked(t: Tensor<T>) -> Self {
        Self(t)
    }

    pub fn zeros(axes: Vec<Axis>, shape: Vec<usize>) -> Result<Self> {
        Self::from_tensor(Tensor::filled(axes, shape, T::zero())?)
    }

    pub fn scalar(value: T) -> Result<Self> {
        Self::from_tensor(Tensor::scalar(value))
    }

    pub fn as_tensor(&self) -> &Tensor<T> {
        &self.0
    }

    pub fn into_tensor(self) -> Tensor<T> {
        self.0
    }

    pub fn cast<U: Real>(&self) -> LogTensor<U> {
        LogTensor(self.0.cast())
    }

    pub fn permuted(&self, order: &[Axis]) -> Result<Self> {
        Ok(Self(self.0.permuted(order)?))
    }

    /// Value of a scalar tensor.
    pub fn value(&self) -> Result<T> {
        if self.0.is_scalar() {
            Ok(self.0.data[0])
        } else {
            Err(Error::Structure(format!("expected a scalar, found axes {:?}", self.0.axes)))
        }
    }
}

impl<T> Deref for LogTensor<T> {
    type Target = Tensor<T>;
    fn deref(&self) -> &Tensor<T> {
        &self.0
    }
}

/// Log-space product: broadcast-aligned entrywise sum over the union of axes.
pub fn log_mul<T: Real>(a: &LogTensor<T>, b: &LogTensor<T>) -> Result<LogTensor<T>> {
    let (axes, shape) = union_layout(&[a.as_tensor(), b.as_tensor()])?;
    let sa = strides_in(&axes, a.axes(), a.shape());
    let sb = strides_in(&axes, b.axes(), b.shape());
    let n = shape.iter().product();
    let mut data = Vec::with_capacity(n);
    let (da, db) = (a.data(), b.data());
    walk(&shape, &[sa, sb], |off| data.push(da[off[0]] + db[off[1]]));
    Ok(LogTensor(Tensor { axes, shape, data }))
}

/// Stable log-sum-exp over `axis`, optionally averaging (subtracting the log of the axis size).
pub fn log_sum_exp<T: Real>(
    a: &LogTensor<T>,
    axis: Axis,
    subtract_log_k: bool,
) -> Result<LogTensor<T>> {
    let size = a.size_of(axis).ok_or(Error::MissingAxis(axis))?;
    let log_k = if subtract_log_k { T::from_usize(size).unwrap().ln() } else { T::zero() };
    let (out, _) = contract_forward(&[a.as_tensor()], axis, log_k)?;
    Ok(LogTensor(out))
}

/// Log-space product over the instances of a plate: plain sum of entries along the axis.
pub fn log_plate_sum<T: Real>(a: &LogTensor<T>, axis: Axis) -> Result<LogTensor<T>> {
    if !axis.is_plate() {
        return Err(Error::NotPlateAxis(axis));
    }
    let p = a.position(axis).ok_or(Error::MissingAxis(axis))?;
    let mut axes = a.axes().to_vec();
    axes.remove(p);
    Ok(LogTensor(a.sum_to(&axes)?))
}

/// Fused log-space product followed by log-sum-exp over `axis`, without materialising the product.
pub fn log_contract<T: Real>(
    operands: &[&LogTensor<T>],
    axis: Axis,
    subtract_log_k: bool,
) -> Result<LogTensor<T>> {
    let ts: Vec<&Tensor<T>> = operands.iter().map(|t| t.as_tensor()).collect();
    let (axes, shape) = union_layout(&ts)?;
    let size = axes
        .iter()
        .position(|&a| a == axis)
        .map(|p| shape[p])
        .ok_or(Error::MissingAxis(axis))?;
    let log_k = if subtract_log_k { T::from_usize(size).unwrap().ln() } else { T::zero() };
    Ok(LogTensor(contract_forward(&ts, axis, log_k)?.0))
}

pub(crate) fn row_major_strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

/// Strides of a tensor `(axes, shape)` expressed along `over`; 0 for axes it lacks.
pub(crate) fn strides_in(over: &[Axis], axes: &[Axis], shape: &[usize]) -> Vec<usize> {
    let own = row_major_strides(shape);
    over.iter()
        .map(|a| axes.iter().position(|b| b == a).map(|p| own[p]).unwrap_or(0))
        .collect()
}

/// Union of axes in first-appearance order, checking that shared axes agree in size.
pub(crate) fn union_layout<T>(ts: &[&Tensor<T>]) -> Result<(Vec<Axis>, Vec<usize>)> {
    let mut axes: Vec<Axis> = Vec::new();
    let mut shape: Vec<usize> = Vec::new();
    for t in ts {
        for (a, &s) in t.axes.iter().zip(&t.shape) {
            match axes.iter().position(|b| b == a) {
                Some(p) if shape[p] != s => {
                    return Err(Error::AxisMismatch { axis: *a, left: shape[p], right: s })
                }
                Some(_) => {}
                None => {
                    axes.push(*a);
                    shape.push(s);
                }
            }
        }
    }
    Ok((axes, shape))
}

/// Visit every multi-index of `shape` in row-major order, passing one running offset per
/// stride set.
pub(crate) fn walk(shape: &[usize], strides: &[Vec<usize>], mut f: impl FnMut(&[usize])) {
    let n = shape.len();
    let m = strides.len();
    let total: usize = shape.iter().product();
    let mut idx = vec![0usize; n];
    let mut off = vec![0usize; m];
    for _ in 0..total {
        f(&off);
        let mut d = n;
        while d > 0 {
            d -= 1;
            idx[d] += 1;
            for j in 0..m {
                off[j] += strides[j][d];
            }
            if idx[d] < shape[d] {
                break;
            }
            for j in 0..m {
                off[j] -= strides[j][d] * shape[d];
            }
            idx[d] = 0;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const K1: Axis = Axis::K(1);
    const K2: Axis = Axis::K(2);
    const K3: Axis = Axis::K(3);
    const P0: Axis = Axis::Plate(0);

    fn lt(axes: Vec<Axis>, shape: Vec<usize>, data: Vec<f64>) -> LogTensor<f64> {
        LogTensor::new(axes, shape, data).unwrap()
    }

    fn lcg(seed: &mut u64) -> f64 {
        *seed = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        ((*seed >> 11) as f64 / (1u64 << 53) as f64) * 6.0 - 3.0
    }

    #[test]
    fn scalar_product_adds_logs() {
        let a = LogTensor::scalar(2f64.ln()).unwrap();
        let b = LogTensor::scalar(3f64.ln()).unwrap();
        let c = log_mul(&a, &b).unwrap();
        assert!((c.value().unwrap() - 6f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn broadcast_with_annihilator() {
        let a = lt(vec![K1], vec![2], vec![0.0, f64::NEG_INFINITY]);
        let b = lt(vec![K2], vec![2], vec![0.0, 0.0]);
        let c = log_mul(&a, &b).unwrap();
        assert_eq!(c.axes(), &[K1, K2]);
        assert_eq!(c.data(), &[0.0, 0.0, f64::NEG_INFINITY, f64::NEG_INFINITY]);
    }

    #[test]
    fn log_mul_matches_exp_space_double_loop() {
        let mut s = 7;
        let a = lt(vec![K1, K2], vec![3, 4], (0..12).map(|_| lcg(&mut s)).collect());
        let b = lt(vec![K2, K3], vec![4, 5], (0..20).map(|_| lcg(&mut s)).collect());
        let c = log_mul(&a, &b).unwrap();
        assert_eq!(c.axes(), &[K1, K2, K3]);
        for i in 0..3 {
            for j in 0..4 {
                for k in 0..5 {
                    let direct = a.get(&[i, j]).exp() * b.get(&[j, k]).exp();
                    let got = c.get(&[i, j, k]).exp();
                    assert!((got - direct).abs() <= 1e-12 * direct);
                }
            }
        }
    }

    #[test]
    fn log_mul_commutes_up_to_axis_order() {
        let mut s = 3;
        let a = lt(vec![K1, P0], vec![2, 3], (0..6).map(|_| lcg(&mut s)).collect());
        let b = lt(vec![K2, K1], vec![4, 2], (0..8).map(|_| lcg(&mut s)).collect());
        let ab = log_mul(&a, &b).unwrap();
        let ba = log_mul(&b, &a).unwrap().permuted(ab.axes()).unwrap();
        assert_eq!(ab, ba);
    }

    #[test]
    fn size_mismatch_names_axis() {
        let a = lt(vec![K1], vec![2], vec![0.0; 2]);
        let b = lt(vec![K1], vec![3], vec![0.0; 3]);
        match log_mul(&a, &b) {
            Err(Error::AxisMismatch { axis, .. }) => assert_eq!(axis, K1),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn log_sum_exp_examples() {
        let a = lt(vec![K1], vec![2], vec![0.0, 0.0]);
        let r = log_sum_exp(&a, K1, false).unwrap().value().unwrap();
        assert!((r - 2f64.ln()).abs() < 1e-15);
        let b = lt(vec![K1], vec![2], vec![0.0, f64::NEG_INFINITY]);
        let r = log_sum_exp(&b, K1, true).unwrap().value().unwrap();
        assert!((r + 2f64.ln()).abs() < 1e-15);
        let c = lt(vec![K1], vec![3], vec![f64::NEG_INFINITY; 3]);
        assert_eq!(log_sum_exp(&c, K1, false).unwrap().value().unwrap(), f64::NEG_INFINITY);
        assert!(matches!(log_sum_exp(&c, K2, false), Err(Error::MissingAxis(_))));
    }

    #[test]
    fn log_sum_exp_matches_direct_sum() {
        let mut s = 11;
        let v: Vec<f64> = (0..6).map(|_| lcg(&mut s)).collect();
        let direct: f64 = v.iter().map(|x| x.exp()).sum::<f64>().ln();
        let got = log_sum_exp(&lt(vec![K1], vec![6], v), K1, false).unwrap().value().unwrap();
        assert!((got - direct).abs() <= 1e-12 * direct.abs());
    }

    #[test]
    fn log_sum_exp_is_stable_at_extremes() {
        for c in [-700.0, -300.0, 0.0, 300.0, 700.0] {
            let a = lt(vec![K1], vec![5], vec![c; 5]);
            let r = log_sum_exp(&a, K1, false).unwrap().value().unwrap();
            assert!((r - (c + 5f64.ln())).abs() < 1e-12 * (1.0 + c.abs()));
        }
    }

    #[test]
    fn tiny_values_fall_back_to_log_domain() {
        // The two operands peak at different slots, so the exp-space sum underflows.
        let a = lt(vec![K1], vec![2], vec![0.0, -800.0]);
        let b = lt(vec![K1], vec![2], vec![-800.0, 0.0]);
        let r = log_contract(&[&a, &b], K1, false).unwrap().value().unwrap();
        assert!((r - (-800.0 + 2f64.ln())).abs() < 1e-12);
    }

    #[test]
    fn plate_sum_examples() {
        let a = lt(vec![P0], vec![2], vec![2f64.ln(), 3f64.ln()]);
        assert!((log_plate_sum(&a, P0).unwrap().value().unwrap() - 6f64.ln()).abs() < 1e-15);
        let z = LogTensor::<f64>::zeros(vec![P0], vec![5]).unwrap();
        assert_eq!(log_plate_sum(&z, P0).unwrap().value().unwrap(), 0.0);
        assert!(matches!(log_plate_sum(&a, K1), Err(Error::NotPlateAxis(_))));
        assert!(matches!(log_plate_sum(&a, Axis::Plate(9)), Err(Error::MissingAxis(_))));
    }

    #[test]
    fn plate_sum_matches_column_sums() {
        let mut s = 5;
        let a = lt(vec![P0, K1], vec![4, 3], (0..12).map(|_| lcg(&mut s)).collect());
        let r = log_plate_sum(&a, P0).unwrap();
        for j in 0..3 {
            let direct: f64 = (0..4).map(|i| a.get(&[i, j])).sum();
            assert!((r.get(&[j]) - direct).abs() < 1e-14);
        }
    }

    #[test]
    fn rejects_nan_and_positive_infinity() {
        assert!(LogTensor::new(vec![K1], vec![1], vec![f64::NAN]).is_err());
        assert!(LogTensor::new(vec![K1], vec![1], vec![f64::INFINITY]).is_err());
        assert!(LogTensor::new(vec![K1, K1], vec![1, 1], vec![0.0]).is_err());
        assert!(LogTensor::<f64>::new(vec![K1], vec![0], vec![]).is_err());
    }

    #[test]
    fn fused_contraction_equals_product_then_reduce() {
        let mut s = 19;
        let a = lt(vec![P0, K1, K2], vec![2, 3, 4], (0..24).map(|_| lcg(&mut s)).collect());
        let b = lt(vec![K2, K3], vec![4, 2], (0..8).map(|_| lcg(&mut s)).collect());
        let fused = log_contract(&[&a, &b], K2, true).unwrap();
        let naive = log_sum_exp(&log_mul(&a, &b).unwrap(), K2, true).unwrap();
        let naive = naive.permuted(fused.axes()).unwrap();
        for (x, y) in fused.data().iter().zip(naive.data()) {
            assert!((x - y).abs() < 1e-13);
        }
    }
}
