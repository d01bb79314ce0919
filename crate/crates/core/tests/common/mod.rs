#![allow(dead_code)]

use mpis::estimators::{conditional_row, Inference64, MomentQuery};
use mpis::model::Model;
use mpis::oracle::{enumerate, JointTable};
use mpis::sampler::{draw, SampleStore};
use mpis::zoo::{random_model, RandomLimits};

pub struct Case {
    pub seed: u64,
    pub model: Model,
    pub store: SampleStore,
}

pub fn case(seed: u64) -> Case {
    let r = random_model(seed, RandomLimits::default());
    let model = Model::compile(&r.graph).unwrap_or_else(|e| panic!("seed {seed}: {e}"));
    let store = draw(&model, r.k, seed ^ 0x5eed, 0).unwrap();
    Case { seed, model, store }
}

pub fn diff(a: f64, b: f64) -> f64 {
    if a == b {
        0.0
    } else {
        (a - b).abs()
    }
}

/// Largest engine/oracle gaps: log evidence, marginal weights, expectations, conditional rows.
pub fn discrepancies(c: &Case) -> [f64; 4] {
    let (m, s) = (&c.model, &c.store);
    let table: JointTable = enumerate(m, s).unwrap();
    let inf = Inference64::new(m, s).unwrap();
    let k = s.k();
    let mut out = [diff(inf.log_evidence().unwrap(), table.normalizer), 0.0, 0.0, 0.0];
    let weights = inf.marginal_weights().unwrap();
    for (i, site) in m.latents().iter().enumerate() {
        for inst in 0..site.instances {
            let slot = table.slot(i, inst).unwrap();
            for (kk, w) in table.marginal(i, inst).iter().enumerate() {
                out[1] = out[1].max(diff(weights[i].data()[inst * k + kk], *w));
            }
            let e = inf.expectation(&MomentQuery::Identity { latent: i, component: 0 }).unwrap();
            let want = table.moment(|idx| s.value(i, inst, idx[slot])[0]);
            out[2] = out[2].max(diff(e.data()[inst], want));
            let e2 = inf.expectation(&MomentQuery::Square { latent: i, component: 0 }).unwrap();
            let want2 = table.moment(|idx| s.value(i, inst, idx[slot])[0].powi(2));
            out[2] = out[2].max(diff(e2.data()[inst], want2));
            let np = site.p_parents.len() as u32;
            for flat in 0..k.pow(np) {
                let pk: Vec<usize> = (0..np).rev().map(|p| flat / k.pow(p) % k).collect();
                let got = inf.conditional_table(i, inst, &pk).ok();
                let want = table.conditional(m, i, inst, &pk);
                let d = match (got, want) {
                    (None, None) => 0.0,
                    (Some(g), Some(w)) => g.iter().zip(&w).map(|(a, b)| diff(*a, *b)).fold(0.0, f64::max),
                    _ => f64::INFINITY,
                };
                out[3] = out[3].max(d);
            }
        }
    }
    out
}

/// Every conditional row of every latent, computed from one set of joint tables.
pub fn conditional_rows(c: &Case) -> Vec<Vec<f64>> {
    let inf = Inference64::new(&c.model, &c.store).unwrap();
    let joints = inf.joint_tables().unwrap();
    let k = c.store.k();
    let mut rows = Vec::new();
    for (i, site) in c.model.latents().iter().enumerate() {
        let np = site.p_parents.len() as u32;
        for inst in 0..site.instances {
            for flat in 0..k.pow(np) {
                let pk: Vec<usize> = (0..np).rev().map(|p| flat / k.pow(p) % k).collect();
                if let Ok(r) = conditional_row(&c.model, &joints[i], i, inst, &pk) {
                    rows.push(r);
                }
            }
        }
    }
    rows
}
