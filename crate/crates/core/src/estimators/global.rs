use rand::Rng;

use super::{sample_log_weights, IndexSample, MomentQuery};
use crate::error::{Error, Result};
use crate::model::{Model, Which};
use crate::sampler::{draw_global, log_sum_exp_f64, parent_values, ProposalKind, SampleStore};

/// K joint proposal samples with their importance ratios.
#[derive(Clone, Debug)]
pub struct GlobalIs {
    pub store: SampleStore,
    /// `log P(x, z^k) - log Q(z^k)` per joint sample.
    pub log_r: Vec<f64>,
    pub log_evidence: f64,
    /// Self-normalized weights.
    pub weights: Vec<f64>,
}

pub fn global_is(model: &Model, k: usize, seed: u64, run: u64) -> Result<GlobalIs> {
    GlobalIs::from_store(model, draw_global(model, k, seed, run)?)
}

impl GlobalIs {
    pub fn from_store(model: &Model, store: SampleStore) -> Result<Self> {
        if store.kind() != ProposalKind::Global {
            return Err(Error::Usage("global importance sampling needs joint samples".into()));
        }
        let k = store.k();
        let mut log_r = vec![0.0; k];
        for (kk, lr) in log_r.iter_mut().enumerate() {
            let ks_p = vec![kk; model.num_latents()];
            for (i, site) in model.latents().iter().enumerate() {
                for inst in 0..site.instances {
                    let z = store.value(i, inst, kk);
                    let pp = parent_values(&store, site, Which::P, inst, &ks_p[..site.p_parents.len()]);
                    let qp = parent_values(&store, site, Which::Q, inst, &ks_p[..site.q_parents.len()]);
                    let lp = model.log_prob(site, Which::P, inst, z, &pp)?;
                    if lp == f64::NEG_INFINITY {
                        *lr = lp;
                        continue;
                    }
                    *lr += lp - model.log_prob(site, Which::Q, inst, z, &qp)?;
                }
            }
            for site in model.observations() {
                for inst in 0..site.instances {
                    let pp = parent_values(&store, site, Which::P, inst, &ks_p[..site.p_parents.len()]);
                    *lr += model.log_prob(site, Which::P, inst, &site.data[inst..inst + 1], &pp)?;
                }
            }
            if lr.is_nan() {
                *lr = f64::NEG_INFINITY;
            }
        }
        let lse = log_sum_exp_f64(&log_r);
        let log_evidence = lse - (k as f64).ln();
        let weights = if lse == f64::NEG_INFINITY {
            vec![0.0; k]
        } else {
            log_r.iter().map(|l| (l - lse).exp()).collect()
        };
        Ok(Self { store, log_r, log_evidence, weights })
    }

    pub fn k(&self) -> usize {
        self.store.k()
    }

    /// Self-normalized estimate of the query at every instance of its plates.
    ///
    /// A table query is read with every K-axis set to the same joint sample.
    pub fn expectation(&self, model: &Model, q: &MomentQuery) -> Result<Vec<f64>> {
        let per_k: Vec<Vec<f64>> = match q {
            MomentQuery::Identity { latent, component } | MomentQuery::Square { latent, component } => {
                let sq = matches!(q, MomentQuery::Square { .. });
                let site = model.latents().get(*latent).ok_or_else(|| Error::Usage(format!("no latent with index {latent}")))?;
                if *component >= site.dim {
                    return Err(Error::Usage(format!("`{}` has no component {component}", site.name)));
                }
                (0..self.k())
                    .map(|kk| {
                        (0..site.instances)
                            .map(|inst| {
                                let v = self.store.value(*latent, inst, kk)[*component];
                                if sq {
                                    v * v
                                } else {
                                    v
                                }
                            })
                            .collect()
                    })
                    .collect()
            }
            MomentQuery::Table(t) => {
                let plates: Vec<usize> = t.axes().iter().filter(|a| a.is_plate()).map(|a| t.size_of(*a).unwrap()).collect();
                let coords = super::instance_coords(&plates);
                (0..self.k())
                    .map(|kk| {
                        coords
                            .iter()
                            .map(|c| {
                                let mut pi = c.iter();
                                let idx: Vec<usize> =
                                    t.axes().iter().map(|a| if a.is_plate() { *pi.next().unwrap() } else { kk }).collect();
                                t.get(&idx)
                            })
                            .collect()
                    })
                    .collect()
            }
        };
        let n = per_k.first().map_or(0, |v| v.len());
        let mut out = vec![0.0; n];
        for (w, vals) in self.weights.iter().zip(&per_k) {
            if *w == 0.0 {
                continue;
            }
            for (o, v) in out.iter_mut().zip(vals) {
                if !v.is_finite() {
                    return Err(Error::Evaluation { site: "moment".into(), message: "moment function is not finite".into() });
                }
                *o += w * v;
            }
        }
        Ok(out)
    }

    /// Draws one joint sample according to the weights.
    pub fn sample<R: Rng + ?Sized>(&self, model: &Model, rng: &mut R) -> Result<IndexSample> {
        let k = sample_log_weights(&self.log_r, rng).ok_or_else(|| Error::Degenerate { site: "joint sample".into() })?;
        Ok(IndexSample::constant(model, k))
    }
}
