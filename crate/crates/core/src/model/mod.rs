//! Plate-structured model declarations for the generative model `P` and proposal `Q`.
//!
//! A [`ModelGraph`] is the serializable declaration. [`Model::compile`] validates it and
//! resolves every name to an index, producing the form the sampler and estimators use.
//!
//! Plate instances of a site are linearized row-major over its plates, taken in declaration
//! order of the plates.

mod dist;
mod expr;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

pub use dist::{log_prob, log_sigmoid, sample, sigmoid, DistSpec, Family};
pub use expr::Expr;

use crate::error::{Error, Result};
use expr::{CExpr, Env, Scope};

const MAX_COVARIATES_PER_SITE: usize = 8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlateDecl {
    pub id: String,
    pub size: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parent: Option<String>,
}

fn one() -> usize {
    1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatentDecl {
    pub id: String,
    #[serde(default)]
    pub plates: Vec<String>,
    /// Number of independent components (vector-valued latents have `dim > 1`).
    #[serde(default = "one")]
    pub dim: usize,
    #[serde(default)]
    pub p_parents: Vec<String>,
    #[serde(default)]
    pub q_parents: Vec<String>,
    pub p_dist: DistSpec,
    pub q_dist: DistSpec,
    #[serde(default)]
    pub discrete: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObservationDecl {
    pub id: String,
    #[serde(default)]
    pub plates: Vec<String>,
    #[serde(default)]
    pub p_parents: Vec<String>,
    pub p_dist: DistSpec,
    pub data: Vec<f64>,
}

/// Known per-instance inputs, such as category indices or feature vectors.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CovariateDecl {
    pub id: String,
    #[serde(default)]
    pub plates: Vec<String>,
    #[serde(default = "one")]
    pub dim: usize,
    pub values: Vec<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ModelGraph {
    #[serde(default)]
    pub name: String,
    #[serde(default)]
    pub plates: Vec<PlateDecl>,
    #[serde(default)]
    pub latents: Vec<LatentDecl>,
    #[serde(default)]
    pub observations: Vec<ObservationDecl>,
    #[serde(default)]
    pub covariates: Vec<CovariateDecl>,
    /// Plates whose instances in a test graph are disjoint from the training ones.
    #[serde(default)]
    pub fresh_plates: Vec<String>,
    /// Seed the synthetic data and covariates were generated with.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl ModelGraph {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("model graphs always serialize")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| Error::Usage(format!("model JSON: {e}")))
    }

    pub fn plate(&self, id: &str) -> Option<&PlateDecl> {
        self.plates.iter().find(|p| p.id == id)
    }

    pub fn plate_volume(&self, plates: &[String]) -> usize {
        plates.iter().map(|p| self.plate(p).map_or(0, |d| d.size)).product()
    }
}

/// A well-formedness problem, with the ids it concerns.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Diagnostic {
    pub ids: Vec<String>,
    pub message: String,
}

impl Diagnostic {
    fn new(ids: &[&str], message: impl Into<String>) -> Self {
        Self { ids: ids.iter().map(|s| s.to_string()).collect(), message: message.into() }
    }
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}] {}", self.ids.join(", "), self.message)
    }
}

/// Latents in an order where every latent follows its `p_parents` and `q_parents`.
///
/// Ties go to declaration order. Unknown parent names are ignored here; [`validate`]
/// reports them.
pub fn topological_order(graph: &ModelGraph) -> Result<Vec<String>> {
    let idx: BTreeMap<&str, usize> =
        graph.latents.iter().enumerate().map(|(i, l)| (l.id.as_str(), i)).collect();
    let parents: Vec<BTreeSet<usize>> = graph
        .latents
        .iter()
        .map(|l| {
            l.p_parents
                .iter()
                .chain(&l.q_parents)
                .filter_map(|p| idx.get(p.as_str()).copied())
                .collect()
        })
        .collect();
    let n = graph.latents.len();
    let mut done = vec![false; n];
    let mut order = Vec::with_capacity(n);
    while order.len() < n {
        let next = (0..n).find(|&i| !done[i] && parents[i].iter().all(|&p| done[p]));
        match next {
            Some(i) => {
                done[i] = true;
                order.push(graph.latents[i].id.clone());
            }
            None => {
                // Walk parent edges inside the stuck set until a node repeats.
                let mut cur = (0..n).find(|&i| !done[i]).unwrap();
                let mut seen = vec![cur];
                loop {
                    cur = *parents[cur].iter().find(|&&p| !done[p]).unwrap();
                    if let Some(pos) = seen.iter().position(|&s| s == cur) {
                        let mut cyc: Vec<String> =
                            seen[pos..].iter().rev().map(|&i| graph.latents[i].id.clone()).collect();
                        cyc.push(cyc[0].clone());
                        return Err(Error::Cycle(cyc));
                    }
                    seen.push(cur);
                }
            }
        }
    }
    Ok(order)
}

/// Well-formedness diagnostics; empty iff [`Model::compile`] succeeds.
pub fn validate(graph: &ModelGraph) -> Vec<Diagnostic> {
    match build(graph) {
        Ok(_) => Vec::new(),
        Err(d) => d,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Which {
    P,
    Q,
}

#[derive(Clone, Debug)]
struct CDist {
    family: Family,
    params: Vec<CExpr>,
}

/// A compiled latent or observation.
#[derive(Clone, Debug)]
pub struct Site {
    pub name: String,
    /// Plate indices, in declaration order.
    pub plates: Vec<usize>,
    pub sizes: Vec<usize>,
    pub instances: usize,
    pub dim: usize,
    pub discrete: bool,
    pub p_parents: Vec<usize>,
    pub q_parents: Vec<usize>,
    pub fresh: bool,
    p: CDist,
    q: Option<CDist>,
    p_proj: Vec<Vec<usize>>,
    q_proj: Vec<Vec<usize>>,
    covs: Vec<usize>,
    cov_proj: Vec<Vec<usize>>,
    pub data: Vec<f64>,
}

impl Site {
    pub fn parents(&self, which: Which) -> &[usize] {
        match which {
            Which::P => &self.p_parents,
            Which::Q => &self.q_parents,
        }
    }

    /// Instance of the `slot`-th parent (in `which` order) seen by instance `inst`.
    pub fn parent_instance(&self, which: Which, slot: usize, inst: usize) -> usize {
        match which {
            Which::P => self.p_proj[slot][inst],
            Which::Q => self.q_proj[slot][inst],
        }
    }

    pub fn family(&self, which: Which) -> Family {
        match which {
            Which::P => self.p.family,
            Which::Q => self.q.as_ref().expect("observations have no proposal").family,
        }
    }
}

#[derive(Clone, Debug)]
struct CovData {
    dim: usize,
    values: Vec<f64>,
}

/// A validated model with names resolved to indices.
#[derive(Clone, Debug)]
pub struct Model {
    graph: ModelGraph,
    plate_sizes: Vec<usize>,
    latents: Vec<Site>,
    observations: Vec<Site>,
    covariates: Vec<CovData>,
    order: Vec<usize>,
}

impl Model {
    pub fn compile(graph: &ModelGraph) -> Result<Self> {
        build(graph).map_err(Error::InvalidModel)
    }

    pub fn graph(&self) -> &ModelGraph {
        &self.graph
    }

    pub fn plate_sizes(&self) -> &[usize] {
        &self.plate_sizes
    }

    pub fn latents(&self) -> &[Site] {
        &self.latents
    }

    pub fn observations(&self) -> &[Site] {
        &self.observations
    }

    pub fn latent(&self, i: usize) -> &Site {
        &self.latents[i]
    }

    pub fn latent_index(&self, name: &str) -> Option<usize> {
        self.latents.iter().position(|l| l.name == name)
    }

    /// Latent indices in topological order.
    pub fn order(&self) -> &[usize] {
        &self.order
    }

    pub fn num_latents(&self) -> usize {
        self.latents.len()
    }

    fn with_env<R>(&self, site: &Site, which: Which, inst: usize, parents: &[&[f64]], f: impl FnOnce(&CDist, &Env) -> R) -> R {
        let mut cov: [&[f64]; MAX_COVARIATES_PER_SITE] = [&[]; MAX_COVARIATES_PER_SITE];
        for (slot, &c) in site.covs.iter().enumerate() {
            let d = &self.covariates[c];
            let j = site.cov_proj[slot][inst];
            cov[slot] = &d.values[j * d.dim..(j + 1) * d.dim];
        }
        let dist = match which {
            Which::P => &site.p,
            Which::Q => site.q.as_ref().expect("observations have no proposal"),
        };
        let env = Env { parents, covs: &cov[..site.covs.len()] };
        f(dist, &env)
    }

    fn params(site: &Site, dist: &CDist, env: &Env, inst: usize, c: usize) -> Result<[f64; 2]> {
        let mut p = [0.0; 2];
        for (k, e) in dist.params.iter().enumerate() {
            p[k] = e.eval(c, env);
        }
        dist::check_params(dist.family, &p[..dist.params.len()]).map_err(|message| Error::Evaluation {
            site: format!("{}[{inst}]", site.name),
            message,
        })?;
        Ok(p)
    }

    /// Log density of `value` at instance `inst`, given parent values in `which` order.
    pub fn log_prob(&self, site: &Site, which: Which, inst: usize, value: &[f64], parents: &[&[f64]]) -> Result<f64> {
        self.with_env(site, which, inst, parents, |dist, env| {
            let mut total = 0.0;
            for (c, &v) in value.iter().enumerate() {
                let p = Self::params(site, dist, env, inst, c)?;
                total += dist::log_prob(dist.family, &p[..dist.params.len()], v);
            }
            Ok(total)
        })
    }

    /// Draws a value for instance `inst` into `out` (length `site.dim`).
    pub fn sample<R: Rng + ?Sized>(
        &self,
        site: &Site,
        which: Which,
        inst: usize,
        parents: &[&[f64]],
        rng: &mut R,
        out: &mut [f64],
    ) -> Result<()> {
        self.with_env(site, which, inst, parents, |dist, env| {
            for (c, o) in out.iter_mut().enumerate() {
                let p = Self::params(site, dist, env, inst, c)?;
                *o = dist::sample(dist.family, &p[..dist.params.len()], rng);
            }
            Ok(())
        })
    }
}

/// Plate coordinate projection: for each instance of a site over `plates`, the instance of
/// a sub-site over `sub` (which must be a subset).
fn projection(plates: &[usize], sizes: &[usize], sub: &[usize]) -> Vec<usize> {
    let total: usize = sizes.iter().product();
    let mut stride_in_sub = vec![0usize; plates.len()];
    let mut s = 1;
    for &p in sub.iter().rev() {
        let pos = plates.iter().position(|&q| q == p).expect("subset of plates");
        stride_in_sub[pos] = s;
        s *= sizes[pos];
    }
    let mut out = Vec::with_capacity(total);
    let mut idx = vec![0usize; plates.len()];
    for _ in 0..total {
        out.push(idx.iter().zip(&stride_in_sub).map(|(i, s)| i * s).sum());
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

struct SiteScope<'a> {
    parents: &'a [(String, usize)],
    covs: &'a [(String, usize)],
}

impl Scope for SiteScope<'_> {
    fn parent(&self, name: &str) -> Option<(usize, usize)> {
        self.parents.iter().position(|(n, _)| n == name).map(|i| (i, self.parents[i].1))
    }

    fn covariate(&self, name: &str) -> Option<(usize, usize)> {
        self.covs.iter().position(|(n, _)| n == name).map(|i| (i, self.covs[i].1))
    }
}

fn build(g: &ModelGraph) -> std::result::Result<Model, Vec<Diagnostic>> {
    let mut diags = Vec::new();

    let mut seen: BTreeMap<&str, &str> = BTreeMap::new();
    let kinds = g
        .plates
        .iter()
        .map(|p| (p.id.as_str(), "plate"))
        .chain(g.latents.iter().map(|l| (l.id.as_str(), "latent")))
        .chain(g.observations.iter().map(|o| (o.id.as_str(), "observation")))
        .chain(g.covariates.iter().map(|c| (c.id.as_str(), "covariate")));
    for (id, kind) in kinds {
        if let Some(prev) = seen.insert(id, kind) {
            diags.push(Diagnostic::new(&[id], format!("id is declared twice ({prev} and {kind})")));
        }
    }

    let plate_idx: BTreeMap<&str, usize> =
        g.plates.iter().enumerate().map(|(i, p)| (p.id.as_str(), i)).collect();
    for p in &g.plates {
        if p.size == 0 {
            diags.push(Diagnostic::new(&[&p.id], "plate size must be positive"));
        }
        if let Some(par) = &p.parent {
            if !plate_idx.contains_key(par.as_str()) {
                diags.push(Diagnostic::new(&[&p.id, par], "parent plate is not declared"));
            }
        }
    }
    for p in &g.plates {
        let mut cur = p.parent.clone();
        let mut steps = 0;
        while let Some(c) = cur {
            steps += 1;
            if c == p.id || steps > g.plates.len() {
                diags.push(Diagnostic::new(&[&p.id], "plate nesting has a cycle"));
                break;
            }
            cur = g.plate(&c).and_then(|d| d.parent.clone());
        }
    }
    for f in &g.fresh_plates {
        if !plate_idx.contains_key(f.as_str()) {
            diags.push(Diagnostic::new(&[f], "fresh plate is not declared"));
        }
    }

    let resolve_plates = |site: &str, names: &[String], diags: &mut Vec<Diagnostic>| -> Vec<usize> {
        let mut out = Vec::new();
        for n in names {
            match plate_idx.get(n.as_str()) {
                Some(&i) if out.contains(&i) => {
                    diags.push(Diagnostic::new(&[site, n], "plate listed twice"))
                }
                Some(&i) => out.push(i),
                None => diags.push(Diagnostic::new(&[site, n], "plate is not declared")),
            }
        }
        out.sort_unstable();
        out
    };

    let latent_idx: BTreeMap<&str, usize> =
        g.latents.iter().enumerate().map(|(i, l)| (l.id.as_str(), i)).collect();
    let latent_plates: Vec<Vec<usize>> =
        g.latents.iter().map(|l| resolve_plates(&l.id, &l.plates, &mut diags)).collect();
    let cov_idx: BTreeMap<&str, usize> =
        g.covariates.iter().enumerate().map(|(i, c)| (c.id.as_str(), i)).collect();
    let cov_plates: Vec<Vec<usize>> =
        g.covariates.iter().map(|c| resolve_plates(&c.id, &c.plates, &mut diags)).collect();
    let volume = |ps: &[usize]| ps.iter().map(|&p| g.plates[p].size).product::<usize>();

    for (c, ps) in g.covariates.iter().zip(&cov_plates) {
        if c.dim == 0 {
            diags.push(Diagnostic::new(&[&c.id], "covariate dimension must be positive"));
        } else if c.values.len() != volume(ps) * c.dim {
            diags.push(Diagnostic::new(
                &[&c.id],
                format!("covariate has {} values, expected {}", c.values.len(), volume(ps) * c.dim),
            ));
        }
        if c.values.iter().any(|v| !v.is_finite()) {
            diags.push(Diagnostic::new(&[&c.id], "covariate values must be finite"));
        }
    }

    let fresh: BTreeSet<usize> =
        g.fresh_plates.iter().filter_map(|f| plate_idx.get(f.as_str()).copied()).collect();

    let compile_site = |id: &str,
                            plates: &[usize],
                            dim: usize,
                            p_parents: &[String],
                            q_parents: Option<&[String]>,
                            p_dist: &DistSpec,
                            q_dist: Option<&DistSpec>,
                            diags: &mut Vec<Diagnostic>|
     -> Option<(Vec<usize>, Vec<usize>, CDist, Option<CDist>, Vec<usize>)> {
        let mut ok = true;
        let mut resolve = |list: &[String], role: &str, diags: &mut Vec<Diagnostic>| -> Vec<usize> {
            let mut out = Vec::new();
            for p in list {
                match latent_idx.get(p.as_str()) {
                    Some(&j) if out.contains(&j) => {
                        diags.push(Diagnostic::new(&[id, p], format!("{role} listed twice")));
                        ok = false;
                    }
                    Some(&j) => {
                        if p == id {
                            diags.push(Diagnostic::new(&[id], "latent is its own parent"));
                            ok = false;
                        }
                        let missing: Vec<&str> = latent_plates[j]
                            .iter()
                            .filter(|q| !plates.contains(q))
                            .map(|&q| g.plates[q].id.as_str())
                            .collect();
                        if !missing.is_empty() {
                            let mut ids = vec![id, p.as_str()];
                            ids.extend(&missing);
                            diags.push(Diagnostic::new(
                                &ids,
                                format!(
                                    "{role} `{p}` lives in plate(s) {} that `{id}` does not",
                                    missing.join(", ")
                                ),
                            ));
                            ok = false;
                        }
                        out.push(j);
                    }
                    None => {
                        diags.push(Diagnostic::new(&[id, p], format!("{role} is not a declared latent")));
                        ok = false;
                    }
                }
            }
            out
        };
        let pp = resolve(p_parents, "parent", diags);
        let qp = q_parents.map(|q| resolve(q, "proposal parent", diags)).unwrap_or_default();

        let mut covs: Vec<usize> = Vec::new();
        let mut symbol_check = |d: &DistSpec, diags: &mut Vec<Diagnostic>| {
            for e in d.params() {
                e.visit_symbols(&mut |is_cov, name| {
                    if !is_cov {
                        return;
                    }
                    match cov_idx.get(name) {
                        Some(&c) => {
                            if cov_plates[c].iter().any(|p| !plates.contains(p)) {
                                diags.push(Diagnostic::new(
                                    &[id, name],
                                    "covariate lives in a plate the site does not",
                                ));
                            } else if !covs.contains(&c) {
                                covs.push(c);
                            }
                        }
                        None => diags.push(Diagnostic::new(&[id, name], "covariate is not declared")),
                    }
                });
            }
        };
        symbol_check(p_dist, diags);
        if let Some(q) = q_dist {
            symbol_check(q, diags);
        }
        if covs.len() > MAX_COVARIATES_PER_SITE {
            diags.push(Diagnostic::new(
                &[id],
                format!("at most {MAX_COVARIATES_PER_SITE} covariates per site are supported"),
            ));
            return None;
        }
        let cov_syms: Vec<(String, usize)> =
            covs.iter().map(|&c| (g.covariates[c].id.clone(), g.covariates[c].dim)).collect();

        let compile_dist = |d: &DistSpec, parents: &[usize], diags: &mut Vec<Diagnostic>| -> Option<CDist> {
            let syms: Vec<(String, usize)> =
                parents.iter().map(|&j| (g.latents[j].id.clone(), g.latents[j].dim)).collect();
            let scope = SiteScope { parents: &syms, covs: &cov_syms };
            let mut params = Vec::new();
            for e in d.params() {
                match expr::compile(e, &scope) {
                    Ok((c, k)) if k == 1 || k == dim => params.push(c),
                    Ok((_, k)) => {
                        diags.push(Diagnostic::new(
                            &[id],
                            format!("parameter has {k} components but the site has {dim}"),
                        ));
                        return None;
                    }
                    Err(m) => {
                        diags.push(Diagnostic::new(&[id], m));
                        return None;
                    }
                }
            }
            Some(CDist { family: d.family(), params })
        };
        if !ok {
            return None;
        }
        let p = compile_dist(p_dist, &pp, diags)?;
        let q = match q_dist {
            Some(q) => Some(compile_dist(q, &qp, diags)?),
            None => None,
        };
        Some((pp, qp, p, q, covs))
    };

    let mut latents = Vec::new();
    for (l, plates) in g.latents.iter().zip(&latent_plates) {
        if l.dim == 0 {
            diags.push(Diagnostic::new(&[&l.id], "dimension must be positive"));
            continue;
        }
        let pd = l.p_dist.family().is_discrete();
        let qd = l.q_dist.family().is_discrete();
        if pd != l.discrete || qd != l.discrete {
            diags.push(Diagnostic::new(
                &[&l.id],
                "discrete flag must match the support of both the model and proposal families",
            ));
        }
        if let Some((pp, qp, p, q, covs)) = compile_site(
            &l.id,
            plates,
            l.dim,
            &l.p_parents,
            Some(&l.q_parents),
            &l.p_dist,
            Some(&l.q_dist),
            &mut diags,
        ) {
            latents.push(Site {
                name: l.id.clone(),
                plates: plates.clone(),
                sizes: plates.iter().map(|&p| g.plates[p].size).collect(),
                instances: volume(plates),
                dim: l.dim,
                discrete: l.discrete,
                p_parents: pp,
                q_parents: qp,
                fresh: plates.iter().any(|p| fresh.contains(p)),
                p,
                q,
                p_proj: Vec::new(),
                q_proj: Vec::new(),
                covs,
                cov_proj: Vec::new(),
                data: Vec::new(),
            });
        }
    }

    let mut observations = Vec::new();
    for o in &g.observations {
        let plates = resolve_plates(&o.id, &o.plates, &mut diags);
        if o.data.len() != volume(&plates) {
            diags.push(Diagnostic::new(
                &[&o.id],
                format!("observation has {} values, expected {}", o.data.len(), volume(&plates)),
            ));
        }
        if o.data.iter().any(|v| !v.is_finite()) {
            diags.push(Diagnostic::new(&[&o.id], "observed values must be finite"));
        }
        if let Some((pp, _, p, _, covs)) =
            compile_site(&o.id, &plates, 1, &o.p_parents, None, &o.p_dist, None, &mut diags)
        {
            observations.push(Site {
                name: o.id.clone(),
                sizes: plates.iter().map(|&p| g.plates[p].size).collect(),
                instances: volume(&plates),
                plates,
                dim: 1,
                discrete: o.p_dist.family().is_discrete(),
                p_parents: pp,
                q_parents: Vec::new(),
                fresh: false,
                p,
                q: None,
                p_proj: Vec::new(),
                q_proj: Vec::new(),
                covs,
                cov_proj: Vec::new(),
                data: o.data.clone(),
            });
        }
    }

    let order = match topological_order(g) {
        Ok(o) => o,
        Err(Error::Cycle(c)) => {
            let ids: Vec<&str> = c.iter().map(|s| s.as_str()).collect();
            diags.push(Diagnostic::new(&ids, format!("dependency cycle: {}", c.join(" -> "))));
            Vec::new()
        }
        Err(e) => {
            diags.push(Diagnostic::new(&[], e.to_string()));
            Vec::new()
        }
    };

    // Lookup indices must be integers in range of the table they index.
    for (site, decl_dists) in latents
        .iter()
        .map(|s| (s, g.latents.iter().find(|l| l.id == s.name).map(|l| vec![&l.p_dist, &l.q_dist])))
        .chain(observations.iter().map(|s| {
            (s, g.observations.iter().find(|o| o.id == s.name).map(|o| vec![&o.p_dist]))
        }))
    {
        for d in decl_dists.into_iter().flatten() {
            for e in d.params() {
                check_lookups(g, e, &site.name, &latent_idx, &cov_idx, &mut diags);
            }
        }
    }

    if !diags.is_empty() {
        return Err(diags);
    }

    let plate_sizes: Vec<usize> = g.plates.iter().map(|p| p.size).collect();
    let finish = |s: &mut Site| {
        s.p_proj = s.p_parents.iter().map(|&j| projection(&s.plates, &s.sizes, &latent_plates[j])).collect();
        s.q_proj = s.q_parents.iter().map(|&j| projection(&s.plates, &s.sizes, &latent_plates[j])).collect();
        s.cov_proj = s.covs.iter().map(|&c| projection(&s.plates, &s.sizes, &cov_plates[c])).collect();
    };
    latents.iter_mut().for_each(finish);
    observations.iter_mut().for_each(finish);

    Ok(Model {
        graph: g.clone(),
        plate_sizes,
        latents,
        observations,
        covariates: g.covariates.iter().map(|c| CovData { dim: c.dim, values: c.values.clone() }).collect(),
        order: order.iter().map(|n| latent_idx[n.as_str()]).collect(),
    })
}

fn check_lookups(
    g: &ModelGraph,
    e: &Expr,
    site: &str,
    latent_idx: &BTreeMap<&str, usize>,
    cov_idx: &BTreeMap<&str, usize>,
    diags: &mut Vec<Diagnostic>,
) {
    match e {
        Expr::Lookup { table, index } => {
            if let (Some(&t), Some(&c)) = (latent_idx.get(table.as_str()), cov_idx.get(index.as_str())) {
                let n = g.latents[t].dim;
                if g.covariates[c].values.iter().any(|&v| v < 0.0 || v.fract() != 0.0 || v as usize >= n) {
                    diags.push(Diagnostic::new(
                        &[site, index, table],
                        format!("lookup indices must be integers in 0..{n}"),
                    ));
                }
            }
        }
        Expr::Dot(a, b) | Expr::Add(a, b) | Expr::Sub(a, b) | Expr::Mul(a, b) => {
            check_lookups(g, a, site, latent_idx, cov_idx, diags);
            check_lookups(g, b, site, latent_idx, cov_idx, diags);
        }
        Expr::Exp(a) | Expr::Sigmoid(a) | Expr::Sqrt(a) => {
            check_lookups(g, a, site, latent_idx, cov_idx, diags)
        }
        Expr::Const(_) | Expr::Parent(_) | Expr::Covariate(_) => {}
    }
}

/// Convenience constructors used by the model zoo and tests.
impl LatentDecl {
    pub fn new(id: &str, plates: &[&str], p_parents: &[&str], p_dist: DistSpec, q_dist: DistSpec) -> Self {
        Self {
            id: id.to_string(),
            plates: plates.iter().map(|s| s.to_string()).collect(),
            dim: 1,
            p_parents: p_parents.iter().map(|s| s.to_string()).collect(),
            q_parents: Vec::new(),
            discrete: p_dist.family().is_discrete(),
            p_dist,
            q_dist,
        }
    }

    pub fn with_dim(mut self, dim: usize) -> Self {
        self.dim = dim;
        self
    }

    pub fn with_q_parents(mut self, q: &[&str]) -> Self {
        self.q_parents = q.iter().map(|s| s.to_string()).collect();
        self
    }
}

impl ObservationDecl {
    pub fn new(id: &str, plates: &[&str], p_parents: &[&str], p_dist: DistSpec, data: Vec<f64>) -> Self {
        Self {
            id: id.to_string(),
            plates: plates.iter().map(|s| s.to_string()).collect(),
            p_parents: p_parents.iter().map(|s| s.to_string()).collect(),
            p_dist,
            data,
        }
    }
}

impl PlateDecl {
    pub fn new(id: &str, size: usize, parent: Option<&str>) -> Self {
        Self { id: id.to_string(), size, parent: parent.map(str::to_string) }
    }
}

impl CovariateDecl {
    pub fn new(id: &str, plates: &[&str], dim: usize, values: Vec<f64>) -> Self {
        Self { id: id.to_string(), plates: plates.iter().map(|s| s.to_string()).collect(), dim, values }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn chain() -> ModelGraph {
        ModelGraph {
            name: "chain".into(),
            latents: vec![
                LatentDecl::new("a", &[], &[], DistSpec::std_normal(), DistSpec::std_normal()),
                LatentDecl::new(
                    "b",
                    &[],
                    &["a"],
                    DistSpec::normal(Expr::parent("a"), Expr::c(1.0)),
                    DistSpec::std_normal(),
                ),
            ],
            observations: vec![ObservationDecl::new(
                "x",
                &[],
                &["b"],
                DistSpec::normal(Expr::parent("b"), Expr::c(1.0)),
                vec![1.0],
            )],
            ..Default::default()
        }
    }

    #[test]
    fn chain_is_well_formed() {
        let g = chain();
        assert!(validate(&g).is_empty());
        assert_eq!(validate(&g), validate(&g));
        let m = Model::compile(&g).unwrap();
        assert_eq!(m.order(), &[0, 1]);
    }

    #[test]
    fn parent_in_foreign_plate_names_both() {
        let mut g = chain();
        g.plates.push(PlateDecl::new("P", 3, None));
        g.latents[0].plates = vec!["P".into()];
        let d = validate(&g);
        assert!(d.iter().any(|d| d.ids.contains(&"a".into()) && d.ids.contains(&"b".into())), "{d:?}");
    }

    #[test]
    fn unknown_symbols_and_bad_data() {
        let mut g = chain();
        g.observations[0].p_dist = DistSpec::normal(Expr::parent("zz"), Expr::c(1.0));
        g.observations[0].data = vec![1.0, 2.0];
        let d = validate(&g);
        assert_eq!(d.len(), 2, "{d:?}");
    }

    #[test]
    fn topological_orders() {
        let mut g = chain();
        assert_eq!(topological_order(&g).unwrap(), vec!["a", "b"]);
        g.latents.swap(0, 1);
        assert_eq!(topological_order(&g).unwrap(), vec!["a", "b"]);
        let u = ModelGraph {
            latents: vec![
                LatentDecl::new("u", &[], &[], DistSpec::std_normal(), DistSpec::std_normal()),
                LatentDecl::new("v", &[], &[], DistSpec::std_normal(), DistSpec::std_normal()),
            ],
            ..Default::default()
        };
        assert_eq!(topological_order(&u).unwrap(), vec!["u", "v"]);
    }

    #[test]
    fn cycle_is_listed() {
        let mut g = chain();
        g.latents[0].q_parents = vec!["b".into()];
        match topological_order(&g) {
            Err(Error::Cycle(c)) => {
                assert_eq!(c.first(), c.last());
                assert!(c.contains(&"a".into()) && c.contains(&"b".into()));
            }
            other => panic!("{other:?}"),
        }
        assert!(!validate(&g).is_empty());
    }

    #[test]
    fn non_finite_parameter_names_site() {
        let mut g = chain();
        g.latents[1].p_dist = DistSpec::normal(Expr::parent("a"), Expr::c(0.0).mul(Expr::parent("a")));
        let m = Model::compile(&g).unwrap();
        let err = m.log_prob(m.latent(1), Which::P, 0, &[0.0], &[&[1.0]]).unwrap_err();
        assert!(err.to_string().contains("b[0]"), "{err}");
    }

    #[test]
    fn projections_follow_plate_order() {
        // Site over plates (0, 1) with sizes (2, 3); sub-site over plate 1 only.
        assert_eq!(projection(&[0, 1], &[2, 3], &[1]), vec![0, 1, 2, 0, 1, 2]);
        assert_eq!(projection(&[0, 1], &[2, 3], &[0]), vec![0, 0, 0, 1, 1, 1]);
        assert_eq!(projection(&[0, 1], &[2, 3], &[]), vec![0; 6]);
    }

    #[test]
    fn json_round_trip() {
        let g = chain();
        let back = ModelGraph::from_json(&g.to_json()).unwrap();
        assert_eq!(back, g);
    }
}
