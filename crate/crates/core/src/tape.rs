//! Reverse-mode gradient tape over the log-space primitives.
//!
//! The tape records each primitive with its operands and output. Gradients are taken of the
//! final scalar with respect to the tensors registered as seeds (typically source terms).

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::tensor::{
    contract_backward, contract_forward, log_mul, log_plate_sum, strides_in, union_layout, walk,
    Axis, ContractSaved, LogTensor, Tensor,
};

/// Handle to a tensor recorded on a [`GradTape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op<T> {
    Leaf,
    Mul(Var, Var),
    Contract { inputs: Vec<Var>, axis: Axis, log_k: T, saved: ContractSaved<T> },
    PlateSum { input: Var, axis: Axis },
    Scale { source: Var, coeff: Tensor<T> },
}

struct Node<T> {
    value: LogTensor<T>,
    op: Op<T>,
}

pub struct GradTape<T> {
    nodes: Vec<Node<T>>,
    seeds: Vec<Var>,
    consumed: bool,
}

/// Gradients of the tape output, keyed by seed.
#[derive(Debug, Clone)]
pub struct Gradients<T> {
    grads: BTreeMap<Var, Tensor<T>>,
}

impl<T: Copy> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(&v)
    }

    pub fn iter(&self) -> impl Iterator<Item = (Var, &Tensor<T>)> {
        self.grads.iter().map(|(v, t)| (*v, t))
    }
}

impl<T: Real> Default for GradTape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> GradTape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new(), seeds: Vec::new(), consumed: false }
    }

    fn push(&mut self, value: LogTensor<T>, op: Op<T>) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    fn check(&self, v: Var) -> Result<()> {
        if v.0 < self.nodes.len() {
            Ok(())
        } else {
            Err(Error::Structure(format!("variable {} was not produced by this tape", v.0)))
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn leaf(&mut self, t: LogTensor<T>) -> Var {
        self.push(t, Op::Leaf)
    }

    /// Record a leaf whose gradient will be reported by [`GradTape::backward`].
    pub fn seed(&mut self, t: LogTensor<T>) -> Var {
        let v = self.push(t, Op::Leaf);
        self.seeds.push(v);
        v
    }

    pub fn seeds(&self) -> &[Var] {
        &self.seeds
    }

    pub fn value(&self, v: Var) -> &LogTensor<T> {
        &self.nodes[v.0].value
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check(a)?;
        self.check(b)?;
        let out = log_mul(self.value(a), self.value(b))?;
        Ok(self.push(out, Op::Mul(a, b)))
    }

    /// Product of `inputs` reduced by log-sum-exp over `axis` (see [`crate::tensor::log_contract`]).
    pub fn contract(&mut self, inputs: &[Var], axis: Axis, subtract_log_k: bool) -> Result<Var> {
        for &v in inputs {
            self.check(v)?;
        }
        let ts: Vec<&Tensor<T>> = inputs.iter().map(|v| self.value(*v).as_tensor()).collect();
        let (axes, shape) = union_layout(&ts)?;
        let size = axes
            .iter()
            .position(|&a| a == axis)
            .map(|p| shape[p])
            .ok_or(Error::MissingAxis(axis))?;
        let log_k = if subtract_log_k { T::from_usize(size).unwrap().ln() } else { T::zero() };
        let (out, saved) = contract_forward(&ts, axis, log_k)?;
        let out = LogTensor::from_tensor_unchecked(out);
        Ok(self.push(out, Op::Contract { inputs: inputs.to_vec(), axis, log_k, saved }))
    }

    pub fn log_sum_exp(&mut self, a: Var, axis: Axis, subtract_log_k: bool) -> Result<Var> {
        self.contract(&[a], axis, subtract_log_k)
    }

    pub fn plate_sum(&mut self, a: Var, axis: Axis) -> Result<Var> {
        self.check(a)?;
        let out = log_plate_sum(self.value(a), axis)?;
        Ok(self.push(out, Op::PlateSum { input: a, axis }))
    }

    /// Entrywise `source * coeff`, with `source` broadcast over the axes of `coeff`.
    pub fn scale(&mut self, source: Var, coeff: Tensor<T>) -> Result<Var> {
        self.check(source)?;
        let out = scale_forward(self.value(source), &coeff)?;
        Ok(self.push(out, Op::Scale { source, coeff }))
    }

    /// Gradient of the scalar `output` with respect to every seed.
    ///
    /// `output` must be the last recorded node. The tape can be differentiated once.
    pub fn backward(&mut self, output: Var) -> Result<Gradients<T>> {
        if self.consumed {
            return Err(Error::Usage("gradient tape already consumed".into()));
        }
        self.check(output)?;
        if output.0 + 1 != self.nodes.len() {
            return Err(Error::Structure("output is not the final node of the tape".into()));
        }
        if !self.value(output).is_scalar() {
            return Err(Error::Structure("gradients are defined for a scalar output only".into()));
        }
        self.consumed = true;

        let mut adj: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        adj[output.0] = Some(Tensor::scalar(T::one()));
        let is_seed: Vec<bool> = {
            let mut s = vec![false; self.nodes.len()];
            for v in &self.seeds {
                s[v.0] = true;
            }
            s
        };

        for i in (0..self.nodes.len()).rev() {
            let Some(g) = (if is_seed[i] { adj[i].clone() } else { adj[i].take() }) else {
                continue;
            };
            let node = &self.nodes[i];
            match &node.op {
                Op::Leaf => {}
                Op::Mul(a, b) => {
                    let ga = g.sum_to(self.value(*a).axes())?;
                    let gb = g.sum_to(self.value(*b).axes())?;
                    accumulate(&mut adj[a.0], ga);
                    accumulate(&mut adj[b.0], gb);
                }
                Op::PlateSum { input, axis: _ } => {
                    let inp = self.value(*input);
                    let src = strides_in(inp.axes(), g.axes(), g.shape());
                    let mut data = Vec::with_capacity(inp.len());
                    let gd = g.data();
                    walk(inp.shape(), &[src], |off| data.push(gd[off[0]]));
                    let gi = Tensor::from_parts(inp.axes().to_vec(), inp.shape().to_vec(), data);
                    accumulate(&mut adj[input.0], gi);
                }
                Op::Contract { inputs, axis, log_k, saved } => {
                    let ts: Vec<&Tensor<T>> =
                        inputs.iter().map(|v| self.value(*v).as_tensor()).collect();
                    let gs = contract_backward(&ts, *axis, *log_k, node.value.as_tensor(), saved, &g)?;
                    for (v, gi) in inputs.iter().zip(gs) {
                        accumulate(&mut adj[v.0], gi);
                    }
                }
                Op::Scale { source, coeff } => {
                    let g = g.permuted(coeff.axes())?;
                    let prod = Tensor::from_parts(
                        coeff.axes().to_vec(),
                        coeff.shape().to_vec(),
                        g.data().iter().zip(coeff.data()).map(|(&a, &b)| a * b).collect(),
                    );
                    let gs = prod.sum_to(self.value(*source).axes())?;
                    accumulate(&mut adj[source.0], gs);
                }
            }
        }

        let mut grads = BTreeMap::new();
        for &s in &self.seeds {
            let shape_of = self.value(s);
            let g = match adj[s.0].take() {
                Some(g) => g,
                None => Tensor::filled(shape_of.axes().to_vec(), shape_of.shape().to_vec(), T::zero())?,
            };
            grads.insert(s, g);
        }
        Ok(Gradients { grads })
    }

    /// Recompute every recorded step from its operands and check the outputs are bit-identical.
    pub fn replay(&self) -> Result<bool> {
        for node in &self.nodes {
            let again = match &node.op {
                Op::Leaf => continue,
                Op::Mul(a, b) => log_mul(self.value(*a), self.value(*b))?.into_tensor(),
                Op::PlateSum { input, axis } => log_plate_sum(self.value(*input), *axis)?.into_tensor(),
                Op::Contract { inputs, axis, log_k, .. } => {
                    let ts: Vec<&Tensor<T>> =
                        inputs.iter().map(|v| self.value(*v).as_tensor()).collect();
                    contract_forward(&ts, *axis, *log_k)?.0
                }
                Op::Scale { source, coeff } => scale_forward(self.value(*source), coeff)?.into_tensor(),
            };
            let same = again.axes() == node.value.axes()
                && again
                    .data()
                    .iter()
                    .zip(node.value.data())
                    .all(|(x, y)| x.to_f64().map(f64::to_bits) == y.to_f64().map(f64::to_bits));
            if !same {
                return Ok(false);
            }
        }
        Ok(true)
    }
}

fn accumulate<T: Real>(slot: &mut Option<Tensor<T>>, g: Tensor<T>) {
    match slot {
        None => *slot = Some(g),
        Some(acc) => {
            let g = if g.axes() == acc.axes() { g } else { g.permuted(acc.axes()).expect("same axes") };
            for (a, b) in acc.data_mut().iter_mut().zip(g.data()) {
                *a = *a + *b;
            }
        }
    }
}

fn scale_forward<T: Real>(source: &LogTensor<T>, coeff: &Tensor<T>) -> Result<LogTensor<T>> {
    for a in source.axes() {
        match coeff.size_of(*a) {
            None => {
                return Err(Error::Structure(format!(
                    "source axis {a} is not covered by the coefficient tensor"
                )))
            }
            Some(s) if Some(s) != source.size_of(*a) => {
                return Err(Error::AxisMismatch { axis: *a, left: source.size_of(*a).unwrap(), right: s })
            }
            _ => {}
        }
    }
    let ss = strides_in(coeff.axes(), source.axes(), source.shape());
    let cs = coeff.strides();
    let mut data = Vec::with_capacity(coeff.len());
    let (sd, cd) = (source.data(), coeff.data());
    walk(coeff.shape(), &[ss, cs], |off| data.push(sd[off[0]] * cd[off[1]]));
    LogTensor::from_tensor(Tensor::from_parts(coeff.axes().to_vec(), coeff.shape().to_vec(), data))
}

#[cfg(test)]
mod tests {
    use super::*;

    const K1: Axis = Axis::K(1);
    const K2: Axis = Axis::K(2);
    const K3: Axis = Axis::K(3);

    fn lt(axes: Vec<Axis>, shape: Vec<usize>, data: Vec<f64>) -> LogTensor<f64> {
        LogTensor::new(axes, shape, data).unwrap()
    }

    #[test]
    fn softmax_gradient_of_log_sum_exp() {
        let c = [0.3, -1.2];
        let mut tape = GradTape::new();
        let j = tape.seed(LogTensor::zeros(vec![K1], vec![2]).unwrap());
        let base = tape.leaf(lt(vec![K1], vec![2], c.to_vec()));
        let s = tape.mul(j, base).unwrap();
        let out = tape.log_sum_exp(s, K1, false).unwrap();
        let g = tape.backward(out).unwrap();
        let g = g.get(j).unwrap();
        let z = c[0].exp() + c[1].exp();
        assert!((g.data()[0] - c[0].exp() / z).abs() < 1e-15);
        assert!((g.data()[1] - c[1].exp() / z).abs() < 1e-15);
        assert!((g.sum() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn unused_seed_has_zero_gradient() {
        let mut tape = GradTape::new();
        let unused = tape.seed(LogTensor::zeros(vec![K2], vec![3]).unwrap());
        let a = tape.leaf(lt(vec![K1], vec![2], vec![0.1, 0.2]));
        let out = tape.log_sum_exp(a, K1, true).unwrap();
        let g = tape.backward(out).unwrap();
        assert_eq!(g.get(unused).unwrap().data(), &[0.0; 3]);
    }

    #[test]
    fn tape_is_single_use_and_output_must_be_final() {
        let mut tape = GradTape::new();
        let a = tape.seed(lt(vec![K1], vec![2], vec![0.1, 0.2]));
        let out = tape.log_sum_exp(a, K1, true).unwrap();
        assert!(matches!(tape.backward(a), Err(Error::Structure(_))));
        tape.backward(out).unwrap();
        assert!(matches!(tape.backward(out), Err(Error::Usage(_))));
        assert!(matches!(tape.backward(Var(99)), Err(Error::Usage(_))));
    }

    #[test]
    fn scale_gradient_is_weighted_sum() {
        // d/dJ log sum_k exp(c_k + J m_k) at J = 0 is the softmax(c)-weighted mean of m.
        let c = vec![0.5, -0.5, 1.0];
        let m = vec![2.0, -1.0, 4.0];
        let mut tape = GradTape::new();
        let j = tape.seed(LogTensor::scalar(0.0).unwrap());
        let src = tape.scale(j, Tensor::new(vec![K1], vec![3], m.clone()).unwrap()).unwrap();
        let base = tape.leaf(lt(vec![K1], vec![3], c.clone()));
        let prod = tape.mul(base, src).unwrap();
        let out = tape.log_sum_exp(prod, K1, true).unwrap();
        let g = tape.backward(out).unwrap().get(j).unwrap().data()[0];
        let z: f64 = c.iter().map(|x| x.exp()).sum();
        let want: f64 = c.iter().zip(&m).map(|(x, y)| x.exp() / z * y).sum();
        assert!((g - want).abs() < 1e-14);
    }

    fn chain_value(f1: &[f64], f2: &[f64], f3: &[f64]) -> f64 {
        let mut tape = GradTape::new();
        let a = tape.leaf(lt(vec![K1], vec![3], f1.to_vec()));
        let b = tape.leaf(lt(vec![K1, K2], vec![3, 3], f2.to_vec()));
        let c = tape.leaf(lt(vec![K2, K3], vec![3, 3], f3.to_vec()));
        let x = tape.contract(&[a, b], K1, true).unwrap();
        let y = tape.contract(&[x, c], K2, true).unwrap();
        let z = tape.log_sum_exp(y, K3, true).unwrap();
        tape.value(z).value().unwrap()
    }

    #[test]
    fn gradients_match_central_differences() {
        let mut s = 42u64;
        let mut next = || {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((s >> 11) as f64 / (1u64 << 53) as f64) * 4.0 - 2.0
        };
        let f1: Vec<f64> = (0..3).map(|_| next()).collect();
        let f2: Vec<f64> = (0..9).map(|_| next()).collect();
        let f3: Vec<f64> = (0..9).map(|_| next()).collect();

        let mut tape = GradTape::new();
        let a = tape.seed(lt(vec![K1], vec![3], f1.clone()));
        let b = tape.seed(lt(vec![K1, K2], vec![3, 3], f2.clone()));
        let c = tape.seed(lt(vec![K2, K3], vec![3, 3], f3.clone()));
        let x = tape.contract(&[a, b], K1, true).unwrap();
        let y = tape.contract(&[x, c], K2, true).unwrap();
        let z = tape.log_sum_exp(y, K3, true).unwrap();
        assert!(tape.replay().unwrap());
        let g = tape.backward(z).unwrap();

        let h = 1e-5;
        let check = |analytic: &Tensor<f64>, which: usize| {
            let base = [f1.clone(), f2.clone(), f3.clone()];
            for i in 0..base[which].len() {
                let mut up = base.clone();
                let mut dn = base.clone();
                up[which][i] += h;
                dn[which][i] -= h;
                let fd = (chain_value(&up[0], &up[1], &up[2]) - chain_value(&dn[0], &dn[1], &dn[2]))
                    / (2.0 * h);
                let an = analytic.data()[i];
                let rel = (an - fd).abs() / an.abs().max(fd.abs()).max(1e-3);
                assert!(rel < 1e-6, "entry {i} of factor {which}: {an} vs {fd}");
            }
        };
        check(g.get(a).unwrap(), 0);
        check(g.get(b).unwrap(), 1);
        check(g.get(c).unwrap(), 2);
    }

    #[test]
    fn all_negative_infinity_reduction_has_zero_gradient() {
        let mut tape = GradTape::new();
        let a = tape.seed(lt(vec![K1], vec![2], vec![f64::NEG_INFINITY; 2]));
        let out = tape.log_sum_exp(a, K1, false).unwrap();
        assert_eq!(tape.value(out).value().unwrap(), f64::NEG_INFINITY);
        let g = tape.backward(out).unwrap();
        assert_eq!(g.get(a).unwrap().data(), &[0.0, 0.0]);
    }
}
