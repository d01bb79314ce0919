//! Synthetic test models: conjugate Gaussian toys with closed-form answers, and small
//! renditions of four hierarchical models with data forward-sampled from their prior.

mod conjugate;
mod hierarchical;
mod random;

use std::collections::BTreeMap;

use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::model::{Model, ModelGraph, Which};
use crate::sampler::RngStream;

pub use conjugate::{chain_exact_posterior, linear_gaussian_log_evidence};
pub use random::{random_model, RandomLimits, RandomModel};

/// Named numeric build parameters (plate sizes, chain depth, datum).
pub type Params = BTreeMap<String, f64>;

/// Closed-form references.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Analytic {
    pub log_evidence: f64,
    /// Posterior mean and variance per latent name (scalar, global latents only).
    pub posterior: BTreeMap<String, (f64, f64)>,
}

#[derive(Clone, Debug)]
pub struct ZooEntry {
    pub name: String,
    pub train: ModelGraph,
    pub test: Option<ModelGraph>,
    pub analytic: Option<Analytic>,
}

pub const NAMES: [&str; 6] = ["conjugate-chain", "conjugate-tree", "bus", "chimpanzees", "movielens", "occupancy"];

fn canonical(name: &str) -> Option<&'static str> {
    let base = name.strip_suffix("-like").unwrap_or(name);
    NAMES.iter().copied().find(|n| *n == base)
}

/// Default parameters of a model, at desk scale.
pub fn default_params(name: &str) -> Result<Params> {
    let name = canonical(name).ok_or_else(|| Error::UnknownModel(name.to_string()))?;
    let kv: &[(&str, f64)] = match name {
        "conjugate-chain" => &[("depth", 2.0), ("x", 1.0), ("exact_q", 0.0)],
        "conjugate-tree" => &[("G", 3.0), ("N", 2.0)],
        "bus" => &[("Y", 3.0), ("B", 3.0), ("I", 4.0), ("C", 5.0), ("J", 3.0)],
        "chimpanzees" => &[("A", 3.0), ("B", 2.0), ("R", 4.0)],
        "movielens" => &[("M", 8.0), ("N", 5.0), ("F", 4.0)],
        "occupancy" => &[("J", 3.0), ("M", 2.0), ("I", 4.0), ("R", 3.0)],
        _ => unreachable!(),
    };
    Ok(kv.iter().map(|(k, v)| (k.to_string(), *v)).collect())
}

pub(crate) struct P<'a> {
    params: &'a Params,
}

impl P<'_> {
    fn get(&self, key: &str) -> f64 {
        self.params[key]
    }

    /// A size parameter: an integer in `1..=max`.
    fn size(&self, key: &str, max: usize) -> Result<usize> {
        let v = self.get(key);
        if v.fract() != 0.0 || v < 1.0 || v > max as f64 {
            return Err(Error::Usage(format!("parameter `{key}` must be an integer in 1..={max}, got {v}")));
        }
        Ok(v as usize)
    }
}

/// Builds a model by name. Unspecified parameters take their defaults; unknown ones are errors.
pub fn build(name: &str, params: &Params, seed: u64) -> Result<ZooEntry> {
    let canon = canonical(name).ok_or_else(|| Error::UnknownModel(name.to_string()))?;
    let mut full = default_params(canon)?;
    for (k, v) in params {
        if !full.contains_key(k) {
            return Err(Error::Usage(format!("model `{canon}` has no parameter `{k}`")));
        }
        full.insert(k.clone(), *v);
    }
    let p = P { params: &full };
    let mut rng = RngStream::new(seed, 0, 0xDA7A).rng();
    let entry = match canon {
        "conjugate-chain" => conjugate::chain(&p)?,
        "conjugate-tree" => conjugate::tree(&p, &mut rng)?,
        "bus" => hierarchical::bus(&p, &mut rng)?,
        "chimpanzees" => hierarchical::chimpanzees(&p, &mut rng)?,
        "movielens" => hierarchical::movielens(&p, &mut rng)?,
        "occupancy" => hierarchical::occupancy(&p, &mut rng)?,
        _ => unreachable!(),
    };
    let mut entry = ZooEntry { name: canon.to_string(), ..entry };
    entry.train.seed = Some(seed);
    if let Some(t) = entry.test.as_mut() {
        t.seed = Some(seed);
    }
    Ok(entry)
}

/// Forward-samples every latent and observation of `graph` from the generative model and
/// writes the observations into the graph. `accept` may reject a drawn datum; it is redrawn
/// up to 1000 times, after which all latents are redrawn.
pub(crate) fn forward_fill(graph: &mut ModelGraph, rng: &mut ChaCha8Rng, accept: impl Fn(&str, f64) -> bool) -> Result<()> {
    let model = Model::compile(graph)?;
    'outer: for _ in 0..1000 {
        let mut values: Vec<Vec<f64>> = model.latents().iter().map(|s| vec![0.0; s.instances * s.dim]).collect();
        for &i in model.order() {
            let site = model.latent(i);
            for inst in 0..site.instances {
                let parents = parents_of(&model, &values, site, inst);
                let mut out = vec![0.0; site.dim];
                model.sample(site, Which::P, inst, &parents, rng, &mut out)?;
                values[i][inst * site.dim..(inst + 1) * site.dim].copy_from_slice(&out);
            }
        }
        let mut data = Vec::new();
        for site in model.observations() {
            let mut obs = Vec::with_capacity(site.instances);
            for inst in 0..site.instances {
                let parents = parents_of(&model, &values, site, inst);
                let mut out = [0.0];
                let mut tries = 0;
                loop {
                    model.sample(site, Which::P, inst, &parents, rng, &mut out)?;
                    if accept(&site.name, out[0]) && out[0].is_finite() {
                        break;
                    }
                    tries += 1;
                    if tries == 1000 {
                        continue 'outer;
                    }
                }
                obs.push(out[0]);
            }
            data.push(obs);
        }
        for (o, d) in graph.observations.iter_mut().zip(data) {
            o.data = d;
        }
        return Ok(());
    }
    Err(Error::Evaluation { site: graph.name.clone(), message: "could not generate acceptable data".into() })
}

fn parents_of<'v>(model: &Model, values: &'v [Vec<f64>], site: &crate::model::Site, inst: usize) -> Vec<&'v [f64]> {
    site.p_parents
        .iter()
        .enumerate()
        .map(|(s, &j)| {
            let d = model.latent(j).dim;
            let pi = site.parent_instance(Which::P, s, inst);
            &values[j][pi * d..(pi + 1) * d]
        })
        .collect()
}

/// Splits `full` along `plate`: instances `0..keep` form the first graph, the rest the
/// second. Observation data and covariate values are sliced accordingly.
pub(crate) fn split(full: &ModelGraph, plate: &str, keep: usize) -> Result<(ModelGraph, ModelGraph)> {
    let total = full.plate(plate).ok_or_else(|| Error::Usage(format!("no plate `{plate}`")))?.size;
    if keep == 0 || keep >= total {
        return Err(Error::Usage(format!("cannot split plate `{plate}` of size {total} at {keep}")));
    }
    let order: Vec<&str> = full.plates.iter().map(|p| p.id.as_str()).collect();
    let sizes: BTreeMap<&str, usize> = full.plates.iter().map(|p| (p.id.as_str(), p.size)).collect();
    let part = |lo: usize, hi: usize| -> ModelGraph {
        let mut g = full.clone();
        for p in g.plates.iter_mut().filter(|p| p.id == plate) {
            p.size = hi - lo;
        }
        let slice = |plates: &[String], dim: usize, values: &[f64]| -> Vec<f64> {
            let mut ps: Vec<&str> = plates.iter().map(|s| s.as_str()).collect();
            ps.sort_by_key(|p| order.iter().position(|o| o == p));
            let Some(pos) = ps.iter().position(|&p| p == plate) else {
                return values.to_vec();
            };
            let shape: Vec<usize> = ps.iter().map(|p| sizes[p]).collect();
            let inner: usize = shape[pos + 1..].iter().product::<usize>() * dim;
            let mut out = Vec::new();
            for (n, chunk) in values.chunks(inner).enumerate() {
                let c = n % shape[pos];
                if (lo..hi).contains(&c) {
                    out.extend_from_slice(chunk);
                }
            }
            out
        };
        for o in g.observations.iter_mut() {
            o.data = slice(&o.plates, 1, &o.data);
        }
        for c in g.covariates.iter_mut() {
            c.values = slice(&c.plates, c.dim, &c.values);
        }
        g
    };
    Ok((part(0, keep), part(keep, total)))
}

#[cfg(test)]
mod tests;
