//! Evidence estimates, posterior expectations, marginal weights and posterior index sampling.
//!
//! Everything except the evidence itself comes from the gradient of the log evidence with
//! respect to a zero-valued source term folded into one of the factors.

mod global;
mod predictive;

pub use global::{global_is, GlobalIs};
pub use predictive::predictive_log_likelihood;

use rand::Rng;

use crate::contraction::{execute, plan_for, ContractionPlan, Execution, Planner, SourceTerm, Step};
use crate::error::{Error, Result};
use crate::model::Model;
use crate::sampler::{build_factors, draw, plate_axes, Factors, SampleStore};
use crate::scalar::Real;
use crate::tape::GradTape;
use crate::tensor::{Axis, LogTensor, Tensor};

/// Largest intermediate the engine is allowed to materialize.
pub const MAX_INTERMEDIATE_ENTRIES: u128 = 1 << 28;

/// A recorded source-free contraction, reusable for any number of posterior draws.
pub struct Forward<T> {
    plan: ContractionPlan,
    tape: GradTape<T>,
    exe: Execution<T>,
}

impl<T: Real> Forward<T> {
    pub fn log_evidence(&self) -> T {
        self.exe.value
    }

    pub fn plan(&self) -> &ContractionPlan {
        &self.plan
    }
}

/// A pointwise function of the sampled values whose posterior mean is wanted.
#[derive(Clone, Debug, PartialEq)]
pub enum MomentQuery {
    Identity { latent: usize, component: usize },
    Square { latent: usize, component: usize },
    /// Arbitrary values over plate axes and K-axes; the K-axes must share one factor
    /// for the cost to stay that of the evidence.
    Table(Tensor<f64>),
}

/// One posterior draw of the sample index of every latent at every plate instance.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct IndexSample {
    pub k: Vec<Vec<usize>>,
}

impl IndexSample {
    /// The index vector that picks slot `k` everywhere (a global joint sample).
    pub fn constant(model: &Model, k: usize) -> Self {
        Self { k: model.latents().iter().map(|s| vec![k; s.instances]).collect() }
    }

    pub fn value<'s>(&self, store: &'s SampleStore, latent: usize, inst: usize) -> &'s [f64] {
        store.value(latent, inst, self.k[latent][inst])
    }
}

/// Log evidence of one parallel-proposal run.
pub fn mp_log_evidence(model: &Model, k: usize, seed: u64, run: u64) -> Result<f64> {
    let store = draw(model, k, seed, run)?;
    Inference::<f64>::new(model, &store)?.log_evidence()
}

/// Estimators over one set of proposal samples.
#[derive(Clone, Debug)]
pub struct Inference<'a, T> {
    model: &'a Model,
    store: &'a SampleStore,
    factors: Factors<T>,
    planner: Planner,
}

pub type Inference64<'a> = Inference<'a, f64>;
pub type Inference32<'a> = Inference<'a, f32>;

fn table_for_latent(model: &Model, store: &SampleStore, i: usize, f: impl Fn(&[f64]) -> f64) -> Result<Tensor<f64>> {
    let site = model.latent(i);
    let k = store.k();
    let mut sig = plate_axes(site);
    sig.push((Axis::K(i as u32), k));
    let (axes, shape) = sig.into_iter().unzip();
    let mut data = Vec::with_capacity(site.instances * k);
    for inst in 0..site.instances {
        for kk in 0..k {
            data.push(f(store.value(i, inst, kk)));
        }
    }
    Tensor::new(axes, shape, data)
}

fn slot_name(t: &Tensor<f64>, flat: usize) -> String {
    let mut rem = flat;
    let mut idx = vec![0; t.rank()];
    for d in (0..t.rank()).rev() {
        idx[d] = rem % t.shape()[d];
        rem /= t.shape()[d];
    }
    let parts: Vec<String> = t.axes().iter().zip(&idx).map(|(a, i)| format!("{a}={i}")).collect();
    parts.join(",")
}

impl<'a, T: Real> Inference<'a, T> {
    pub fn new(model: &'a Model, store: &'a SampleStore) -> Result<Self> {
        Ok(Self { model, store, factors: build_factors(model, store)?, planner: Planner::Greedy })
    }

    pub fn with_planner(mut self, planner: Planner) -> Self {
        self.planner = planner;
        self
    }

    pub fn model(&self) -> &Model {
        self.model
    }

    pub fn store(&self) -> &SampleStore {
        self.store
    }

    pub fn factors(&self) -> &Factors<T> {
        &self.factors
    }

    /// The elimination plan for the given source terms, refused if it is too large.
    pub fn plan(&self, sources: &[SourceTerm<T>]) -> Result<ContractionPlan> {
        let p = plan_for(&self.factors.tensors, sources, &self.factors.info, self.planner)?;
        if p.peak_entries() > MAX_INTERMEDIATE_ENTRIES {
            return Err(Error::SizeCap { entries: p.peak_entries(), cap: MAX_INTERMEDIATE_ENTRIES });
        }
        Ok(p)
    }

    pub fn log_evidence(&self) -> Result<T> {
        let p = self.plan(&[])?;
        let mut tape = GradTape::new();
        Ok(execute(&p, &self.factors.tensors, &[], &mut tape)?.value)
    }

    /// Log evidence and the gradient with respect to each source term at zero.
    pub fn differentiate(&self, sources: &[SourceTerm<T>]) -> Result<(T, Vec<Tensor<T>>)> {
        let p = self.plan(sources)?;
        let mut tape = GradTape::new();
        let e = execute(&p, &self.factors.tensors, sources, &mut tape)?;
        let g = tape.backward(e.output)?;
        let grads = e.seeds.iter().map(|&s| g.get(s).expect("seed gradient").clone()).collect();
        Ok((e.value, grads))
    }

    fn query_table(&self, q: &MomentQuery) -> Result<Tensor<f64>> {
        let check = |i: usize, c: usize| {
            let s = self.model.latents();
            match s.get(i) {
                None => Err(Error::Usage(format!("no latent with index {i}"))),
                Some(site) if c >= site.dim => {
                    Err(Error::Usage(format!("`{}` has no component {c}", site.name)))
                }
                _ => Ok(()),
            }
        };
        let (t, name) = match q {
            MomentQuery::Identity { latent, component } => {
                check(*latent, *component)?;
                (table_for_latent(self.model, self.store, *latent, |z| z[*component])?, self.model.latent(*latent).name.clone())
            }
            MomentQuery::Square { latent, component } => {
                check(*latent, *component)?;
                (table_for_latent(self.model, self.store, *latent, |z| z[*component].powi(2))?, self.model.latent(*latent).name.clone())
            }
            MomentQuery::Table(t) => {
                for &a in t.axes() {
                    if let Axis::K(i) = a {
                        check(i as usize, 0)?;
                        if t.size_of(a) != Some(self.store.k()) {
                            return Err(Error::AxisMismatch { axis: a, left: self.store.k(), right: t.size_of(a).unwrap() });
                        }
                    }
                }
                (t.clone(), "table".to_string())
            }
        };
        if let Some(bad) = t.data().iter().position(|v| !v.is_finite()) {
            return Err(Error::Evaluation {
                site: name,
                message: format!("moment function is not finite at slot ({})", slot_name(&t, bad)),
            });
        }
        Ok(t)
    }

    /// Posterior mean of the query at every instance of its plates.
    pub fn expectation(&self, q: &MomentQuery) -> Result<Tensor<T>> {
        let m = self.query_table(q)?;
        let (axes, shape): (Vec<Axis>, Vec<usize>) = m.signature().into_iter().filter(|(a, _)| a.is_plate()).unzip();
        let j = LogTensor::zeros(axes, shape)?;
        let src = SourceTerm::Scaled { j, m: m.cast() };
        let (_, mut g) = self.differentiate(&[src])?;
        Ok(g.remove(0))
    }

    /// Normalized importance weights of each latent over `[plates, K_i]`, from one pass.
    pub fn marginal_weights(&self) -> Result<Vec<Tensor<T>>> {
        let sources = self
            .model
            .latents()
            .iter()
            .enumerate()
            .map(|(i, s)| {
                let mut sig = plate_axes(s);
                sig.push((Axis::K(i as u32), self.store.k()));
                SourceTerm::zeros(&sig)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(self.differentiate(&sources)?.1)
    }

    /// Posterior probability of every `(k_i, k_parents)` combination at every instance,
    /// laid out like the latent's factor, for all latents from one pass.
    pub fn joint_tables(&self) -> Result<Vec<Tensor<T>>> {
        let sources = self
            .factors
            .latent_factor
            .iter()
            .map(|&f| SourceTerm::zeros(&self.factors.tensors[f].signature()))
            .collect::<Result<Vec<_>>>()?;
        Ok(self.differentiate(&sources)?.1)
    }

    /// Distribution of `k_i` at instance `inst` given the indices of its generative parents.
    pub fn conditional_table(&self, i: usize, inst: usize, parent_k: &[usize]) -> Result<Vec<T>> {
        let f = self.factors.latent_factor[i];
        let src = SourceTerm::zeros(&self.factors.tensors[f].signature())?;
        let (_, g) = self.differentiate(&[src])?;
        conditional_row(self.model, &g[0], i, inst, parent_k)
    }

    /// `count` exact draws of the index vector from its posterior given the samples.
    ///
    /// The K-axes are sampled in the reverse of their elimination order, each from the
    /// product of the operands of its elimination step with later axes already fixed.
    pub fn posterior_sample<R: Rng + ?Sized>(&self, rng: &mut R, count: usize) -> Result<Vec<IndexSample>> {
        self.posterior_sample_from(&self.forward()?, rng, count)
    }

    /// Runs the evidence contraction and keeps its intermediates.
    pub fn forward(&self) -> Result<Forward<T>> {
        let plan = self.plan(&[])?;
        let mut tape = GradTape::new();
        let exe = execute(&plan, &self.factors.tensors, &[], &mut tape)?;
        Ok(Forward { plan, tape, exe })
    }

    /// Like [`Self::posterior_sample`], reusing a forward pass of this inference.
    pub fn posterior_sample_from<R: Rng + ?Sized>(&self, fwd: &Forward<T>, rng: &mut R, count: usize) -> Result<Vec<IndexSample>> {
        let (plan, tape, exe) = (&fwd.plan, &fwd.tape, &fwd.exe);
        let k = self.store.k();

        struct Operand<'t, T> {
            data: &'t [T],
            base: Vec<usize>,
            own_stride: usize,
            others: Vec<(usize, usize, Vec<usize>)>,
        }
        struct Backward<'t, T> {
            latent: usize,
            ops: Vec<Operand<'t, T>>,
        }

        let mut steps = Vec::new();
        for step in plan.steps().iter().rev() {
            let Step::SumK { axis, operands, .. } = step else { continue };
            let i = axis.id() as usize;
            let site = self.model.latent(i);
            let coords = instance_coords(&site.sizes);
            let ops = operands
                .iter()
                .map(|&o| {
                    let t = tape.value(exe.operands[o]);
                    let strides = t.strides();
                    let mut base = vec![0usize; site.instances];
                    let mut own_stride = 0;
                    let mut others = Vec::new();
                    for (d, &a) in t.axes().iter().enumerate() {
                        match a {
                            Axis::Plate(p) => {
                                let pos = site.plates.iter().position(|&q| q == p as usize).expect("plate of the latent");
                                for (b, c) in base.iter_mut().zip(&coords) {
                                    *b += c[pos] * strides[d];
                                }
                            }
                            Axis::K(j) if j as usize == i => own_stride = strides[d],
                            Axis::K(j) => {
                                let other = self.model.latent(j as usize);
                                let proj = project(site, &coords, &other.plates, &other.sizes);
                                others.push((j as usize, strides[d], proj));
                            }
                        }
                    }
                    Operand { data: t.data(), base, own_stride, others }
                })
                .collect();
            steps.push(Backward { latent: i, ops });
        }

        let mut out = Vec::with_capacity(count);
        let mut logw = vec![0f64; k];
        for _ in 0..count {
            let mut ks: Vec<Vec<usize>> = self.model.latents().iter().map(|s| vec![0; s.instances]).collect();
            for st in &steps {
                let site = self.model.latent(st.latent);
                for inst in 0..site.instances {
                    logw.iter_mut().for_each(|w| *w = 0.0);
                    for op in &st.ops {
                        let mut off = op.base[inst];
                        for (j, stride, proj) in &op.others {
                            off += stride * ks[*j][proj[inst]];
                        }
                        for (kk, w) in logw.iter_mut().enumerate() {
                            *w += op.data[off + kk * op.own_stride].to_f64().unwrap();
                        }
                    }
                    ks[st.latent][inst] = sample_log_weights(&logw, rng)
                        .ok_or_else(|| Error::Degenerate { site: format!("{}[{inst}]", site.name) })?;
                }
            }
            out.push(IndexSample { k: ks });
        }
        Ok(out)
    }
}

/// Slice of a joint table at instance `inst` and fixed parent indices, renormalized.
pub fn conditional_row<T: Real>(model: &Model, joint: &Tensor<T>, i: usize, inst: usize, parent_k: &[usize]) -> Result<Vec<T>> {
    let site = model.latent(i);
    if parent_k.len() != site.p_parents.len() {
        return Err(Error::Usage(format!(
            "`{}` has {} parents but {} indices were given",
            site.name,
            site.p_parents.len(),
            parent_k.len()
        )));
    }
    if inst >= site.instances {
        return Err(Error::Usage(format!("`{}` has no instance {inst}", site.name)));
    }
    let coords = &instance_coords(&site.sizes)[inst];
    let mut idx: Vec<(Axis, usize)> = site.plates.iter().zip(coords).map(|(&p, &c)| (Axis::Plate(p as u32), c)).collect();
    idx.push((Axis::K(i as u32), 0));
    idx.extend(site.p_parents.iter().zip(parent_k).map(|(&j, &k)| (Axis::K(j as u32), k)));
    let own = site.plates.len();
    let k = joint.size_of(Axis::K(i as u32)).ok_or(Error::MissingAxis(Axis::K(i as u32)))?;
    let row: Vec<T> = (0..k)
        .map(|kk| {
            idx[own].1 = kk;
            joint.get_named(&idx)
        })
        .collect();
    let total = row.iter().fold(T::zero(), |a, &b| a + b);
    if total <= T::zero() || !total.is_finite() {
        return Err(Error::Degenerate { site: format!("{}[{inst}]", site.name) });
    }
    Ok(row.into_iter().map(|v| v / total).collect())
}

/// Row-major multi-indices of all plate instances.
pub(crate) fn instance_coords(sizes: &[usize]) -> Vec<Vec<usize>> {
    let total: usize = sizes.iter().product();
    let mut out = Vec::with_capacity(total);
    let mut idx = vec![0usize; sizes.len()];
    for _ in 0..total {
        out.push(idx.clone());
        for d in (0..idx.len()).rev() {
            idx[d] += 1;
            if idx[d] < sizes[d] {
                break;
            }
            idx[d] = 0;
        }
    }
    out
}

/// Instance of a site over `plates` (a subset of `site`'s) seen by each instance of `site`.
fn project(site: &crate::model::Site, coords: &[Vec<usize>], plates: &[usize], sizes: &[usize]) -> Vec<usize> {
    let pos: Vec<usize> = plates
        .iter()
        .map(|p| site.plates.iter().position(|q| q == p).expect("nested plates"))
        .collect();
    coords
        .iter()
        .map(|c| pos.iter().zip(sizes).fold(0, |acc, (&d, &s)| acc * s + c[d]))
        .collect()
}

/// Categorical draw from unnormalized log weights; `None` if every weight is zero.
pub(crate) fn sample_log_weights<R: Rng + ?Sized>(logw: &[f64], rng: &mut R) -> Option<usize> {
    let m = logw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY || m.is_nan() {
        return None;
    }
    let total: f64 = logw.iter().map(|w| (w - m).exp()).sum();
    let mut u = rng.random::<f64>() * total;
    let mut last = 0;
    for (k, w) in logw.iter().enumerate() {
        let p = (w - m).exp();
        if p > 0.0 {
            last = k;
            if u < p {
                return Some(k);
            }
            u -= p;
        }
    }
    Some(last)
}
