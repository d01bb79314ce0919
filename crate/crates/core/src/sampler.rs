//! Proposal sampling and factor construction.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::contraction::AxisInfo;
use crate::error::{Error, Result};
use crate::model::{Model, Site, Which};
use crate::scalar::Real;
use crate::tensor::{Axis, LogTensor};

/// Stream used for posterior index sampling.
pub const STREAM_POSTERIOR: u64 = 1 << 32;
/// Stream used for drawing test-only latents.
pub const STREAM_PREDICTIVE: u64 = 2 << 32;

/// Keyed ChaCha8 stream: the key holds `seed` and `stream`, the nonce holds `run`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RngStream {
    pub seed: u64,
    pub run: u64,
    pub stream: u64,
}

impl RngStream {
    pub fn new(seed: u64, run: u64, stream: u64) -> Self {
        Self { seed, run, stream }
    }

    pub fn rng(&self) -> ChaCha8Rng {
        let mut key = [0u8; 32];
        key[..8].copy_from_slice(&self.seed.to_le_bytes());
        key[8..16].copy_from_slice(&self.stream.to_le_bytes());
        let mut r = ChaCha8Rng::from_seed(key);
        r.set_stream(self.run);
        r
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ProposalKind {
    /// K samples per latent, each conditioning on uniformly chosen parent samples.
    Parallel,
    /// K joint samples: slot k of a latent conditions on slot k of its parents.
    Global,
}

/// Drawn proposal samples, laid out per latent as `[instance, k, component]`.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleStore {
    k: usize,
    kind: ProposalKind,
    dims: Vec<usize>,
    instances: Vec<usize>,
    values: Vec<Vec<f64>>,
}

impl SampleStore {
    /// Builds a store from explicit values (`values[i]` has `instances * k * dim` entries).
    pub fn from_values(model: &Model, k: usize, kind: ProposalKind, values: Vec<Vec<f64>>) -> Result<Self> {
        if k == 0 {
            return Err(Error::Usage("K must be at least 1".into()));
        }
        if values.len() != model.num_latents() {
            return Err(Error::Usage("one value array per latent is required".into()));
        }
        for (s, v) in model.latents().iter().zip(&values) {
            if v.len() != s.instances * k * s.dim {
                return Err(Error::Usage(format!(
                    "latent `{}` has {} values, expected {}",
                    s.name,
                    v.len(),
                    s.instances * k * s.dim
                )));
            }
        }
        Ok(Self {
            k,
            kind,
            dims: model.latents().iter().map(|s| s.dim).collect(),
            instances: model.latents().iter().map(|s| s.instances).collect(),
            values,
        })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn kind(&self) -> ProposalKind {
        self.kind
    }

    pub fn value(&self, latent: usize, inst: usize, k: usize) -> &[f64] {
        let d = self.dims[latent];
        let o = (inst * self.k + k) * d;
        &self.values[latent][o..o + d]
    }

    pub fn latent_values(&self, latent: usize) -> &[f64] {
        &self.values[latent]
    }

    pub fn instances(&self, latent: usize) -> usize {
        self.instances[latent]
    }

    pub fn num_latents(&self) -> usize {
        self.values.len()
    }

    /// Reorders the K slots of one latent: new slot `k` holds old slot `perm[k]`.
    pub fn permute_slots(&mut self, latent: usize, perm: &[usize]) {
        assert_eq!(perm.len(), self.k);
        let d = self.dims[latent];
        let old = self.values[latent].clone();
        for inst in 0..self.instances[latent] {
            for (k, &p) in perm.iter().enumerate() {
                let dst = (inst * self.k + k) * d;
                let src = (inst * self.k + p) * d;
                self.values[latent][dst..dst + d].copy_from_slice(&old[src..src + d]);
            }
        }
    }
}

fn draw_impl(model: &Model, k: usize, seed: u64, run: u64, kind: ProposalKind) -> Result<SampleStore> {
    if k == 0 {
        return Err(Error::Usage("K must be at least 1".into()));
    }
    let mut values: Vec<Vec<f64>> = model.latents().iter().map(|_| Vec::new()).collect();
    for &i in model.order() {
        let site = model.latent(i);
        let mut rng = RngStream::new(seed, run, i as u64).rng();
        let mut out = vec![0.0; site.instances * k * site.dim];
        let mut parent_k = vec![0usize; site.q_parents.len()];
        for inst in 0..site.instances {
            for kk in 0..k {
                for pk in parent_k.iter_mut() {
                    *pk = match kind {
                        ProposalKind::Parallel => rng.random_range(0..k),
                        ProposalKind::Global => kk,
                    };
                }
                let parents: Vec<&[f64]> = site
                    .q_parents
                    .iter()
                    .enumerate()
                    .map(|(s, &j)| {
                        let pi = site.parent_instance(Which::Q, s, inst);
                        let d = model.latent(j).dim;
                        let o = (pi * k + parent_k[s]) * d;
                        &values[j][o..o + d]
                    })
                    .collect();
                let o = (inst * k + kk) * site.dim;
                model.sample(site, Which::Q, inst, &parents, &mut rng, &mut out[o..o + site.dim])?;
            }
        }
        values[i] = out;
    }
    SampleStore::from_values(model, k, kind, values)
}

/// Draws K proposal samples per latent and plate instance.
///
/// A latent with proposal parents picks, for each draw, one uniformly random sample of each
/// parent independently.
pub fn draw(model: &Model, k: usize, seed: u64, run: u64) -> Result<SampleStore> {
    draw_impl(model, k, seed, run, ProposalKind::Parallel)
}

/// Draws K joint samples from the proposal.
pub fn draw_global(model: &Model, k: usize, seed: u64, run: u64) -> Result<SampleStore> {
    draw_impl(model, k, seed, run, ProposalKind::Global)
}

/// Values of the parents of `site` (in `which` order) at instance `inst`, with parent
/// `slot` taking sample `ks[slot]`.
pub fn parent_values<'a>(store: &'a SampleStore, site: &Site, which: Which, inst: usize, ks: &[usize]) -> Vec<&'a [f64]> {
    site.parents(which)
        .iter()
        .enumerate()
        .map(|(s, &j)| store.value(j, site.parent_instance(which, s, inst), ks[s]))
        .collect()
}

/// Log of the parallel proposal density of sample `k` of latent `i` at instance `inst`:
/// the uniform mixture over all combinations of parent samples.
pub fn log_q_mp(model: &Model, store: &SampleStore, i: usize, inst: usize, k: usize) -> Result<f64> {
    let site = model.latent(i);
    let z = store.value(i, inst, k);
    let np = site.q_parents.len();
    if np == 0 {
        return model.log_prob(site, Which::Q, inst, z, &[]);
    }
    let kk = store.k();
    let mut ks = vec![0usize; np];
    let mut terms = Vec::with_capacity(kk.pow(np as u32));
    loop {
        let parents = parent_values(store, site, Which::Q, inst, &ks);
        terms.push(model.log_prob(site, Which::Q, inst, z, &parents)?);
        if !odometer(&mut ks, kk) {
            break;
        }
    }
    Ok(log_sum_exp_f64(&terms) - np as f64 * (kk as f64).ln())
}

pub(crate) fn odometer(idx: &mut [usize], k: usize) -> bool {
    for d in (0..idx.len()).rev() {
        idx[d] += 1;
        if idx[d] < k {
            return true;
        }
        idx[d] = 0;
    }
    false
}

pub(crate) fn log_sum_exp_f64(v: &[f64]) -> f64 {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Factor tensors for one sample store, ready for contraction.
#[derive(Clone, Debug)]
pub struct Factors<T> {
    pub tensors: Vec<LogTensor<T>>,
    pub names: Vec<String>,
    /// Index into `tensors` of the factor of each latent.
    pub latent_factor: Vec<usize>,
    pub info: AxisInfo,
}

pub fn plate_axes(site: &Site) -> Vec<(Axis, usize)> {
    site.plates.iter().zip(&site.sizes).map(|(&p, &s)| (Axis::Plate(p as u32), s)).collect()
}

fn site_factor(model: &Model, store: &SampleStore, site: &Site, own: Option<usize>) -> Result<LogTensor<f64>> {
    let k = store.k();
    let mut sig = plate_axes(site);
    if let Some(i) = own {
        sig.push((Axis::K(i as u32), k));
    }
    for &j in &site.p_parents {
        sig.push((Axis::K(j as u32), k));
    }
    let (axes, shape): (Vec<Axis>, Vec<usize>) = sig.into_iter().unzip();
    let np = site.p_parents.len();
    let mut data = Vec::with_capacity(shape.iter().product());
    let own_k = if own.is_some() { k } else { 1 };
    let mut ks = vec![0usize; np];
    for inst in 0..site.instances {
        for ki in 0..own_k {
            let (z, denom) = match own {
                Some(i) => (store.value(i, inst, ki), log_q_mp(model, store, i, inst, ki)?),
                None => (&site.data[inst..inst + 1], 0.0),
            };
            ks.iter_mut().for_each(|x| *x = 0);
            loop {
                let parents = parent_values(store, site, Which::P, inst, &ks);
                let lp = model.log_prob(site, Which::P, inst, z, &parents)?;
                data.push(if lp == f64::NEG_INFINITY { lp } else { lp - denom });
                if !odometer(&mut ks, k) {
                    break;
                }
            }
        }
    }
    LogTensor::from_tensor(crate::tensor::Tensor::new(axes, shape, data)?).map_err(|e| Error::Evaluation {
        site: site.name.clone(),
        message: format!("factor has an invalid entry ({e})"),
    })
}

/// One factor per latent over `[plates, K_i, K_parents]` holding `log P - log Q_mp`, and one
/// per observation over `[plates, K_parents]` holding `log P(x | ...)`.
pub fn build_factors<T: Real>(model: &Model, store: &SampleStore) -> Result<Factors<T>> {
    if store.kind() != ProposalKind::Parallel {
        return Err(Error::Usage("factors are defined for parallel proposal samples only".into()));
    }
    if store.num_latents() != model.num_latents() {
        return Err(Error::Usage("sample store does not match the model".into()));
    }
    let mut tensors = Vec::new();
    let mut names = Vec::new();
    let mut latent_factor = Vec::new();
    for (i, site) in model.latents().iter().enumerate() {
        latent_factor.push(tensors.len());
        tensors.push(site_factor(model, store, site, Some(i))?.cast());
        names.push(site.name.clone());
    }
    for site in model.observations() {
        tensors.push(site_factor(model, store, site, None)?.cast());
        names.push(site.name.clone());
    }
    Ok(Factors { tensors, names, latent_factor, info: AxisInfo::from_model(model) })
}
