//! Planning and executing the elimination of every K-axis and plate axis.
//!
//! A latent inside plates has one K index per plate instance. Its K-axis can be summed out
//! once every operand carrying it has no plate axes beyond the latent's own, and a plate axis
//! can be summed (a product over instances) out of an operand once that operand no longer
//! carries the K-axis of any latent inside the plate.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::model::Model;
use crate::scalar::Real;
use crate::tape::{GradTape, Var};
use crate::tensor::{Axis, LogTensor, Tensor};

pub type Signature = Vec<(Axis, usize)>;

/// Plate membership of each K-axis.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct AxisInfo {
    k_plates: BTreeMap<Axis, BTreeSet<Axis>>,
}

impl AxisInfo {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, k: Axis, plates: impl IntoIterator<Item = Axis>) {
        self.k_plates.insert(k, plates.into_iter().collect());
    }

    pub fn from_model(model: &Model) -> Self {
        let mut info = Self::new();
        for (i, s) in model.latents().iter().enumerate() {
            info.insert(Axis::K(i as u32), s.plates.iter().map(|&p| Axis::Plate(p as u32)));
        }
        info
    }

    /// Plates the latent behind K-axis `k` lives in (empty when unknown).
    pub fn plates_of(&self, k: Axis) -> impl Iterator<Item = Axis> + '_ {
        self.k_plates.get(&k).into_iter().flatten().copied()
    }

    fn in_plate(&self, k: Axis, plate: Axis) -> bool {
        self.k_plates.get(&k).is_some_and(|s| s.contains(&plate))
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Step {
    /// Log-sum-exp over a K-axis of the product of `operands`, minus log K.
    SumK { axis: Axis, operands: Vec<usize>, output: usize },
    /// Sum of log values over a plate axis of one operand.
    Plate { axis: Axis, operand: usize, output: usize },
    /// Product of the remaining scalars.
    Product { operands: Vec<usize>, output: usize },
}

impl Step {
    pub fn output(&self) -> usize {
        match self {
            Step::SumK { output, .. } | Step::Plate { output, .. } | Step::Product { output, .. } => *output,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Planner {
    /// Smallest output first; ties by axis, then operand id.
    Greedy,
    /// Uniformly random valid step at every point, seeded.
    Random(u64),
}

/// An elimination schedule. Operand ids `0..inputs` are the inputs; each step appends one.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ContractionPlan {
    inputs: usize,
    signatures: Vec<Signature>,
    steps: Vec<Step>,
    result: usize,
}

fn entries(sig: &Signature) -> u128 {
    sig.iter().map(|&(_, s)| s as u128).product()
}

impl ContractionPlan {
    pub fn steps(&self) -> &[Step] {
        &self.steps
    }

    pub fn inputs(&self) -> usize {
        self.inputs
    }

    pub fn signature(&self, id: usize) -> &Signature {
        &self.signatures[id]
    }

    pub fn result(&self) -> usize {
        self.result
    }

    /// The K-axes, in elimination order.
    pub fn k_order(&self) -> Vec<Axis> {
        self.steps
            .iter()
            .filter_map(|s| match s {
                Step::SumK { axis, .. } => Some(*axis),
                _ => None,
            })
            .collect()
    }

    /// Entries in the largest tensor materialized: inputs or step outputs.
    pub fn peak_entries(&self) -> u128 {
        self.signatures.iter().map(entries).max().unwrap_or(1)
    }

    /// Entries in the largest summation space a K step iterates over.
    pub fn peak_union_entries(&self) -> u128 {
        self.steps
            .iter()
            .filter_map(|s| match s {
                Step::SumK { operands, .. } => Some(entries(&union_sig(operands.iter().map(|&o| &self.signatures[o])))),
                _ => None,
            })
            .max()
            .unwrap_or(0)
    }

    pub fn dump(&self) -> String {
        let fmt_sig = |s: &Signature| {
            let inner: Vec<String> = s.iter().map(|(a, n)| format!("{a}:{n}")).collect();
            format!("[{}]", inner.join(", "))
        };
        let mut out = String::new();
        for id in 0..self.inputs {
            let _ = writeln!(out, "input t{id} {}", fmt_sig(&self.signatures[id]));
        }
        for (n, step) in self.steps.iter().enumerate() {
            let o = step.output();
            let sig = &self.signatures[o];
            let line = match step {
                Step::SumK { axis, operands, .. } => {
                    let ops: Vec<String> = operands.iter().map(|i| format!("t{i}")).collect();
                    format!("sum {axis} over {}", ops.join(" "))
                }
                Step::Plate { axis, operand, .. } => format!("plate {axis} of t{operand}"),
                Step::Product { operands, .. } => {
                    let ops: Vec<String> = operands.iter().map(|i| format!("t{i}")).collect();
                    format!("product {}", ops.join(" "))
                }
            };
            let _ = writeln!(out, "step {n}: {line} -> t{o} {} ({} entries)", fmt_sig(sig), entries(sig));
        }
        let _ = writeln!(out, "result t{} peak {} entries", self.result, self.peak_entries());
        out
    }
}

fn union_sig<'a>(sigs: impl Iterator<Item = &'a Signature>) -> Signature {
    let mut out: Signature = Vec::new();
    for s in sigs {
        for &(a, n) in s {
            if !out.iter().any(|&(b, _)| b == a) {
                out.push((a, n));
            }
        }
    }
    out
}

fn check_sizes(sigs: &[Signature]) -> Result<()> {
    let mut sizes: BTreeMap<Axis, usize> = BTreeMap::new();
    for s in sigs {
        let mut seen = BTreeSet::new();
        for &(a, n) in s {
            if !seen.insert(a) {
                return Err(Error::Structure(format!("axis {a} appears twice in one operand")));
            }
            if n == 0 {
                return Err(Error::Structure(format!("axis {a} has size 0")));
            }
            match sizes.get(&a) {
                Some(&m) if m != n => return Err(Error::AxisMismatch { axis: a, left: m, right: n }),
                _ => {
                    sizes.insert(a, n);
                }
            }
        }
    }
    Ok(())
}

#[derive(Clone)]
struct Candidate {
    step: Step,
    sig: Signature,
    cost: u128,
    key: (Axis, usize),
}

/// Builds a valid elimination schedule for operands with the given signatures.
pub fn plan(sigs: &[Signature], info: &AxisInfo, planner: Planner) -> Result<ContractionPlan> {
    check_sizes(sigs)?;
    let mut signatures: Vec<Signature> = sigs.to_vec();
    let mut live: BTreeSet<usize> = (0..sigs.len()).collect();
    let mut steps = Vec::new();
    let mut rng = match planner {
        Planner::Random(seed) => Some(ChaCha8Rng::seed_from_u64(seed)),
        Planner::Greedy => None,
    };

    loop {
        let pending: Vec<usize> = live.iter().copied().filter(|&i| !signatures[i].is_empty()).collect();
        if pending.is_empty() {
            break;
        }
        let next = signatures.len();
        let mut cands: Vec<Candidate> = Vec::new();

        let k_axes: BTreeSet<Axis> = pending
            .iter()
            .flat_map(|&i| signatures[i].iter().map(|&(a, _)| a))
            .filter(|a| !a.is_plate())
            .collect();
        for &k in &k_axes {
            let ops: Vec<usize> =
                pending.iter().copied().filter(|&i| signatures[i].iter().any(|&(a, _)| a == k)).collect();
            let ok = ops.iter().all(|&i| {
                signatures[i].iter().all(|&(a, _)| !a.is_plate() || info.in_plate(k, a))
            });
            if !ok {
                continue;
            }
            let mut sig = union_sig(ops.iter().map(|&i| &signatures[i]));
            sig.retain(|&(a, _)| a != k);
            cands.push(Candidate {
                cost: entries(&sig),
                step: Step::SumK { axis: k, operands: ops.clone(), output: next },
                sig,
                key: (k, ops[0]),
            });
        }
        for &i in &pending {
            for &(p, _) in signatures[i].iter().filter(|(a, _)| a.is_plate()) {
                let blocked = signatures[i].iter().any(|&(a, _)| !a.is_plate() && info.in_plate(a, p));
                if blocked {
                    continue;
                }
                let sig: Signature = signatures[i].iter().copied().filter(|&(a, _)| a != p).collect();
                cands.push(Candidate {
                    cost: entries(&sig),
                    step: Step::Plate { axis: p, operand: i, output: next },
                    sig,
                    key: (p, i),
                });
            }
        }

        if cands.is_empty() {
            let left: Vec<String> = pending
                .iter()
                .map(|&i| {
                    let axes: Vec<String> = signatures[i].iter().map(|(a, _)| a.to_string()).collect();
                    format!("t{i}[{}]", axes.join(","))
                })
                .collect();
            return Err(Error::Structure(format!(
                "no valid elimination step remains (crossed plates?): {}",
                left.join(" ")
            )));
        }
        let chosen = match rng.as_mut() {
            Some(r) => cands.swap_remove(r.random_range(0..cands.len())),
            None => cands.into_iter().min_by_key(|c| (c.cost, c.key)).unwrap(),
        };
        match &chosen.step {
            Step::SumK { operands, .. } => operands.iter().for_each(|i| {
                live.remove(i);
            }),
            Step::Plate { operand, .. } => {
                live.remove(operand);
            }
            Step::Product { .. } => unreachable!(),
        }
        live.insert(next);
        signatures.push(chosen.sig);
        steps.push(chosen.step);
    }

    let rest: Vec<usize> = live.into_iter().collect();
    let result = if rest.len() == 1 {
        rest[0]
    } else {
        let out = signatures.len();
        signatures.push(Vec::new());
        steps.push(Step::Product { operands: rest, output: out });
        out
    };
    Ok(ContractionPlan { inputs: sigs.len(), signatures, steps, result })
}

/// A zero-valued perturbation whose gradient at zero is the quantity of interest.
#[derive(Clone, Debug)]
pub enum SourceTerm<T> {
    /// Added in log space (multiplies by `exp(J)`).
    Additive(LogTensor<T>),
    /// `J * m`, with `J` over a subset of the axes of `m`.
    Scaled { j: LogTensor<T>, m: Tensor<T> },
}

impl<T: Real> SourceTerm<T> {
    pub fn signature(&self) -> Signature {
        match self {
            SourceTerm::Additive(t) => t.signature(),
            SourceTerm::Scaled { m, .. } => m.signature(),
        }
    }

    /// Zero additive source over `sig`.
    pub fn zeros(sig: &Signature) -> Result<Self> {
        let (a, s) = sig.iter().copied().unzip();
        Ok(SourceTerm::Additive(LogTensor::zeros(a, s)?))
    }
}

fn covers(factor: &Signature, src: &Signature) -> bool {
    src.iter().all(|x| factor.contains(x))
}

/// For each source: `Some(factor)` if it is folded into that factor, else `None`.
pub fn attachments(factor_sigs: &[Signature],sources: &[Signature]) -> Vec<Option<usize>> {
    sources.iter().map(|s| factor_sigs.iter().position(|f| covers(f, s))).collect()
}

/// Signatures the plan must be built for: the factors, then sources no factor covers.
pub fn operand_signatures<T: Real>(factors: &[LogTensor<T>], sources: &[SourceTerm<T>]) -> Vec<Signature> {
    let mut sigs: Vec<Signature> = factors.iter().map(|f| f.signature()).collect();
    let ss: Vec<Signature> = sources.iter().map(|s| s.signature()).collect();
    for (s, a) in ss.iter().zip(attachments(&sigs, &ss)) {
        if a.is_none() {
            sigs.push(s.clone());
        }
    }
    sigs
}

pub fn plan_for<T: Real>(
    factors: &[LogTensor<T>],
    sources: &[SourceTerm<T>],
    info: &AxisInfo,
    planner: Planner,
) -> Result<ContractionPlan> {
    plan(&operand_signatures(factors, sources), info, planner)
}

/// Tape handles produced by [`execute`].
#[derive(Clone, Debug)]
pub struct Execution<T> {
    pub value: T,
    pub output: Var,
    /// Seed of each source term, in input order.
    pub seeds: Vec<Var>,
    /// Tape variable of every plan operand id.
    pub operands: Vec<Var>,
}

fn same_axes(a: &Signature, b: &Signature) -> bool {
    a.len() == b.len() && a.iter().all(|x| b.contains(x))
}

/// Runs `plan` on the tape. Sources are folded into the first factor covering their axes
/// or enter as extra operands; their seeds are registered for gradients.
pub fn execute<T: Real>(
    plan: &ContractionPlan,
    factors: &[LogTensor<T>],
    sources: &[SourceTerm<T>],
    tape: &mut GradTape<T>,
) -> Result<Execution<T>> {
    let fsigs: Vec<Signature> = factors.iter().map(|f| f.signature()).collect();
    let ssigs: Vec<Signature> = sources.iter().map(|s| s.signature()).collect();
    let att = attachments(&fsigs, &ssigs);
    let standalone = att.iter().filter(|a| a.is_none()).count();
    if plan.inputs != factors.len() + standalone {
        return Err(Error::Structure(format!(
            "plan expects {} inputs but {} were supplied",
            plan.inputs,
            factors.len() + standalone
        )));
    }

    let mut operands: Vec<Var> = factors.iter().map(|f| tape.leaf(f.clone())).collect();
    let mut seeds = Vec::with_capacity(sources.len());
    for (s, a) in sources.iter().zip(&att) {
        let v = match s {
            SourceTerm::Additive(t) => {
                let v = tape.seed(t.clone());
                seeds.push(v);
                v
            }
            SourceTerm::Scaled { j, m } => {
                let jv = tape.seed(j.clone());
                seeds.push(jv);
                tape.scale(jv, m.clone())?
            }
        };
        match a {
            Some(f) => operands[*f] = tape.mul(operands[*f], v)?,
            None => operands.push(v),
        }
    }
    for (id, v) in operands.iter().enumerate() {
        if !same_axes(&tape.value(*v).signature(), &plan.signatures[id]) {
            return Err(Error::Structure(format!("operand t{id} does not match the plan signature")));
        }
    }

    for step in &plan.steps {
        let v = match step {
            Step::SumK { axis, operands: ops, .. } => {
                let vs: Vec<Var> = ops.iter().map(|&i| operands[i]).collect();
                tape.contract(&vs, *axis, true)?
            }
            Step::Plate { axis, operand, .. } => tape.plate_sum(operands[*operand], *axis)?,
            Step::Product { operands: ops, .. } => match ops.split_first() {
                None => tape.leaf(LogTensor::scalar(T::zero())?),
                Some((&first, rest)) => {
                    let mut acc = operands[first];
                    if rest.is_empty() {
                        // Keep the output as the final node of the tape.
                        let one = tape.leaf(LogTensor::scalar(T::zero())?);
                        acc = tape.mul(acc, one)?;
                    }
                    for &r in rest {
                        acc = tape.mul(acc, operands[r])?;
                    }
                    acc
                }
            },
        };
        operands.push(v);
    }
    let output = operands[plan.result];
    let value = tape.value(output).value()?;
    Ok(Execution { value, output, seeds, operands })
}
