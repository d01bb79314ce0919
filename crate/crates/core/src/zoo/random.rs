//! Small random plated models for property tests.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::model::{DistSpec, Expr, LatentDecl, ModelGraph, ObservationDecl, PlateDecl};

/// Upper bounds on the size of a generated model.
#[derive(Clone, Copy, Debug)]
pub struct RandomLimits {
    pub max_latents: usize,
    pub max_k: usize,
    pub max_plate_volume: usize,
    /// Cap on `K^slots`, the number of index combinations.
    pub max_combinations: usize,
}

impl Default for RandomLimits {
    fn default() -> Self {
        Self { max_latents: 5, max_k: 4, max_plate_volume: 8, max_combinations: 4096 }
    }
}

#[derive(Clone, Debug)]
pub struct RandomModel {
    pub graph: ModelGraph,
    pub k: usize,
}

fn linear(rng: &mut ChaCha8Rng, parents: &[String], discrete: &[bool]) -> Expr {
    let mut e = Expr::c(rng.random_range(-1.0..1.0));
    for (p, &d) in parents.iter().zip(discrete) {
        let w = rng.random_range(-1.5..1.5);
        let term = if d { Expr::parent(p).mul(Expr::c(2.0)).sub(Expr::c(1.0)) } else { Expr::parent(p) };
        e = e.add(term.mul(Expr::c(w)));
    }
    e
}

/// A random valid model: up to five latents in nested or disjoint plates, mixed continuous and
/// binary latents, optional proposal parents, and Gaussian observations, with a K that keeps
/// brute-force enumeration cheap.
pub fn random_model(seed: u64, limits: RandomLimits) -> RandomModel {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    loop {
        if let Some(m) = attempt(&mut rng, limits) {
            return m;
        }
    }
}

fn attempt(rng: &mut ChaCha8Rng, limits: RandomLimits) -> Option<RandomModel> {
    let vol = limits.max_plate_volume.max(1);
    let mut plates = Vec::new();
    let mut levels: Vec<Vec<String>> = vec![vec![]];
    match rng.random_range(0..4) {
        0 => {}
        1 if vol >= 2 => {
            plates.push(PlateDecl::new("A", rng.random_range(2..=vol.min(4)), None));
            levels.push(vec!["A".into()]);
        }
        2 if vol >= 4 => {
            let a = rng.random_range(2..=(vol / 2).min(3));
            let b = rng.random_range(2..=(vol / a).max(2));
            plates.push(PlateDecl::new("A", a, None));
            plates.push(PlateDecl::new("B", b, Some("A")));
            levels.push(vec!["A".into()]);
            levels.push(vec!["A".into(), "B".into()]);
        }
        3 if vol >= 2 => {
            plates.push(PlateDecl::new("A", 2, None));
            plates.push(PlateDecl::new("C", 2, None));
            levels.push(vec!["A".into()]);
            levels.push(vec!["C".into()]);
        }
        _ => return None,
    }
    let size = |ps: &[String]| ps.iter().map(|p| plates.iter().find(|d| &d.id == p).unwrap().size).product::<usize>();
    let within = |inner: &[String], outer: &[String]| inner.iter().all(|p| outer.contains(p));

    let n = rng.random_range(1..=limits.max_latents);
    let mut latents: Vec<LatentDecl> = Vec::new();
    let mut is_discrete = Vec::new();
    for i in 0..n {
        let level = levels[rng.random_range(0..levels.len())].clone();
        let cands: Vec<usize> = (0..i).filter(|&j| within(&latents[j].plates, &level)).collect();
        let mut parents = Vec::new();
        for &j in &cands {
            if parents.len() < 2 && rng.random_bool(0.5) {
                parents.push(j);
            }
        }
        let names: Vec<String> = parents.iter().map(|&j| latents[j].id.clone()).collect();
        let disc: Vec<bool> = parents.iter().map(|&j| is_discrete[j]).collect();
        let name = format!("z{i}");
        let pl: Vec<&str> = level.iter().map(String::as_str).collect();
        let pp: Vec<&str> = names.iter().map(String::as_str).collect();
        let discrete = rng.random_bool(0.25);
        let mean = linear(rng, &names, &disc);
        let (p, q) = if discrete {
            let q = DistSpec::Bernoulli { logits: Expr::c(rng.random_range(-1.0..1.0)) };
            (DistSpec::Bernoulli { logits: mean }, q)
        } else {
            let std = if !names.is_empty() && !disc[0] && rng.random_bool(0.3) {
                Expr::parent(&names[0]).mul(Expr::c(0.3)).exp()
            } else {
                Expr::c(rng.random_range(0.5..1.5))
            };
            let q = DistSpec::normal(Expr::c(rng.random_range(-1.0..1.0)), Expr::c(rng.random_range(0.8..2.0)));
            (DistSpec::normal(mean, std), q)
        };
        let mut decl = LatentDecl::new(&name, &pl, &pp, p, q);
        if !discrete && !names.is_empty() && !disc[0] && rng.random_bool(0.3) {
            decl.q_dist = DistSpec::normal(Expr::parent(&names[0]).mul(Expr::c(0.5)), Expr::c(rng.random_range(0.8..2.0)));
            decl = decl.with_q_parents(&[&names[0]]);
        }
        latents.push(decl);
        is_discrete.push(discrete);
    }

    let slots: usize = latents.iter().map(|l| size(&l.plates)).sum();
    let mut kmax = 1;
    while kmax < limits.max_k && (kmax + 1).checked_pow(slots as u32).is_some_and(|c| c <= limits.max_combinations) {
        kmax += 1;
    }
    if kmax < 2 && rng.random_bool(0.9) {
        return None;
    }
    let k = if kmax >= 2 { rng.random_range(2..=kmax) } else { 1 };

    let mut observations = Vec::new();
    for i in 0..n {
        if observations.is_empty() && i + 1 == n || rng.random_bool(0.6) {
            let mut level = latents[i].plates.clone();
            if level == ["A"] && levels.iter().any(|l| l.len() == 2 && l[1] == "B") && rng.random_bool(0.5) {
                level.push("B".into());
            }
            let mut parents = vec![i];
            if let Some(j) = (0..n).find(|&j| j != i && within(&latents[j].plates, &level) && rng.random_bool(0.3)) {
                parents.push(j);
            }
            let names: Vec<String> = parents.iter().map(|&j| latents[j].id.clone()).collect();
            let disc: Vec<bool> = parents.iter().map(|&j| is_discrete[j]).collect();
            let pl: Vec<&str> = level.iter().map(String::as_str).collect();
            let pp: Vec<&str> = names.iter().map(String::as_str).collect();
            let data = (0..size(&level)).map(|_| 1.5 * rng.sample::<f64, _>(StandardNormal)).collect();
            let mean = linear(rng, &names, &disc);
            observations.push(ObservationDecl::new(&format!("x{i}"), &pl, &pp, DistSpec::normal(mean, Expr::c(1.0)), data));
        }
    }

    Some(RandomModel {
        graph: ModelGraph { name: "random".into(), plates, latents, observations, ..Default::default() },
        k,
    })
}
