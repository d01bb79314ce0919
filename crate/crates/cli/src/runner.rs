//! The `run` verb: a sweep over methods, K and repeated runs.

use std::path::Path;
use std::time::Instant;

use mpis::estimators::{global_is, predictive_log_likelihood, Inference64};
use mpis::model::Model;
use mpis::sampler::{draw, RngStream, STREAM_POSTERIOR, STREAM_PREDICTIVE};
use mpis::stats::{mean, std_error};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{ExperimentConfig, Method};
use crate::svg::{line_chart, Series};
use crate::{io_err, CliError};

/// Training and test models of one experiment.
pub struct Experiment {
    pub train: Model,
    pub test: Model,
}

impl Experiment {
    pub fn build(cfg: &ExperimentConfig) -> Result<Self, CliError> {
        let entry = mpis::zoo::build(&cfg.model, &cfg.sizes, cfg.data_seed)?;
        let train = Model::compile(&entry.train)?;
        let test = match &entry.test {
            Some(t) => Model::compile(t)?,
            None => Model::compile(&entry.train)?,
        };
        Ok(Self { train, test })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunRecord {
    pub run_id: usize,
    pub method: &'static str,
    #[serde(rename = "K")]
    pub k: usize,
    pub log_evidence_estimate: f64,
    pub predictive_log_likelihood: f64,
    pub wall_time_seconds: f64,
    pub peak_intermediate_entries: u128,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SummaryRow {
    pub method: &'static str,
    #[serde(rename = "K")]
    pub k: usize,
    pub runs: usize,
    pub elbo_mean: f64,
    pub elbo_se: f64,
    pub predictive_ll_mean: f64,
    pub predictive_ll_se: f64,
    pub wall_time_mean: f64,
}

fn numeric(method: Method, k: usize, run: usize) -> impl FnOnce(mpis::error::Error) -> CliError {
    move |e| match CliError::from(e) {
        CliError::Numeric(m) => CliError::Numeric(format!("{} K={k} run {run}: {m}", method.name())),
        other => other,
    }
}

/// One run. The timed window covers drawing the samples and estimating the evidence.
pub fn run_one(exp: &Experiment, cfg: &ExperimentConfig, method: Method, k: usize, run: usize) -> Result<RunRecord, CliError> {
    let seed = cfg.job_seed(method, k);
    let r = run as u64;
    let err = || numeric(method, k, run);
    let mut post = RngStream::new(seed, r, STREAM_POSTERIOR).rng();
    let mut pred = RngStream::new(seed, r, STREAM_PREDICTIVE).rng();
    let (log_evidence, wall, peak, predictive) = match method {
        Method::Mp => {
            let start = Instant::now();
            let store = draw(&exp.train, k, seed, r).map_err(err())?;
            let inf = Inference64::new(&exp.train, &store).map_err(err())?;
            let fwd = inf.forward().map_err(err())?;
            let wall = start.elapsed().as_secs_f64();
            let (le, peak) = (fwd.log_evidence(), fwd.plan().peak_entries());
            let samples = inf.posterior_sample_from(&fwd, &mut post, cfg.posterior_samples).map_err(err())?;
            let pll = predictive_log_likelihood(&exp.train, &exp.test, &store, &samples, &mut pred).map_err(err())?;
            (le, wall, peak, pll)
        }
        Method::Global => {
            let start = Instant::now();
            let g = global_is(&exp.train, k, seed, r).map_err(err())?;
            let wall = start.elapsed().as_secs_f64();
            let samples = (0..cfg.posterior_samples).map(|_| g.sample(&exp.train, &mut post)).collect::<Result<Vec<_>, _>>().map_err(err())?;
            let pll = predictive_log_likelihood(&exp.train, &exp.test, &g.store, &samples, &mut pred).map_err(err())?;
            (g.log_evidence, wall, k as u128, pll)
        }
    };
    if log_evidence.is_nan() || predictive.is_nan() {
        return Err(CliError::Numeric(format!("{} K={k} run {run}: estimate is NaN", method.name())));
    }
    Ok(RunRecord {
        run_id: run,
        method: method.name(),
        k,
        log_evidence_estimate: log_evidence,
        predictive_log_likelihood: predictive,
        wall_time_seconds: wall,
        peak_intermediate_entries: peak,
    })
}

/// Every run of the sweep, ordered by method, then K, then run index.
pub fn run_all(cfg: &ExperimentConfig) -> Result<Vec<RunRecord>, CliError> {
    let exp = Experiment::build(cfg)?;
    let jobs: Vec<(Method, usize, usize)> = cfg
        .methods
        .iter()
        .flat_map(|&m| cfg.k_values.iter().flat_map(move |&k| (0..cfg.runs).map(move |r| (m, k, r))))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build()
        .map_err(|e| CliError::Io(format!("cannot start worker pool: {e}")))?;
    pool.install(|| jobs.par_iter().map(|&(m, k, r)| run_one(&exp, cfg, m, k, r)).collect())
}

pub fn summarize(cfg: &ExperimentConfig, records: &[RunRecord]) -> Vec<SummaryRow> {
    let mut out = Vec::new();
    for &m in &cfg.methods {
        for &k in &cfg.k_values {
            let rows: Vec<&RunRecord> = records.iter().filter(|r| r.method == m.name() && r.k == k).collect();
            let col = |f: fn(&RunRecord) -> f64| rows.iter().map(|r| f(r)).collect::<Vec<f64>>();
            let elbo = col(|r| r.log_evidence_estimate);
            let pll = col(|r| r.predictive_log_likelihood);
            out.push(SummaryRow {
                method: m.name(),
                k,
                runs: rows.len(),
                elbo_mean: mean(&elbo),
                elbo_se: if rows.len() > 1 { std_error(&elbo) } else { 0.0 },
                predictive_ll_mean: mean(&pll),
                predictive_ll_se: if rows.len() > 1 { std_error(&pll) } else { 0.0 },
                wall_time_mean: mean(&col(|r| r.wall_time_seconds)),
            });
        }
    }
    out
}

fn write_csv<S: Serialize>(path: &Path, rows: &[S]) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| CliError::Io(format!("cannot write {}: {e}", path.display())))?;
    for r in rows {
        w.serialize(r).map_err(|e| CliError::Io(format!("cannot write {}: {e}", path.display())))?;
    }
    w.flush().map_err(io_err(path))
}

fn charts(cfg: &ExperimentConfig, summary: &[SummaryRow]) -> Vec<(String, String)> {
    let metrics: [(&str, &str, fn(&SummaryRow) -> (f64, f64)); 2] = [
        ("elbo", "ELBO", |s| (s.elbo_mean, s.elbo_se)),
        ("predictive_ll", "predictive log-likelihood", |s| (s.predictive_ll_mean, s.predictive_ll_se)),
    ];
    let mut out = Vec::new();
    for (file, label, metric) in metrics {
        for (axis, x_label, x_of) in
            [("k", "K", (|s: &SummaryRow| s.k as f64) as fn(&SummaryRow) -> f64), ("time", "mean wall time (s)", |s| s.wall_time_mean)]
        {
            let series: Vec<Series> = cfg
                .methods
                .iter()
                .map(|m| Series {
                    name: m.name().into(),
                    points: summary
                        .iter()
                        .filter(|s| s.method == m.name())
                        .map(|s| {
                            let (y, e) = metric(s);
                            (x_of(s), y, e)
                        })
                        .collect(),
                })
                .collect();
            let title = format!("{}: {label} vs {x_label}", cfg.model);
            out.push((format!("{file}_vs_{axis}.svg"), line_chart(&title, x_label, label, true, &series)));
        }
    }
    out
}

/// Runs the sweep and writes `runs.csv`, `summary.csv`, `config.json` and the charts.
pub fn run(cfg: &ExperimentConfig) -> Result<Vec<SummaryRow>, CliError> {
    let records = run_all(cfg)?;
    let summary = summarize(cfg, &records);
    let out = &cfg.out;
    std::fs::create_dir_all(out).map_err(io_err(out))?;
    write_csv(&out.join("runs.csv"), &records)?;
    write_csv(&out.join("summary.csv"), &summary)?;
    let path = out.join("config.json");
    std::fs::write(&path, serde_json::to_string_pretty(cfg).expect("config serializes")).map_err(io_err(&path))?;
    for (name, svg) in charts(cfg, &summary) {
        let path = out.join(name);
        std::fs::write(&path, svg).map_err(io_err(&path))?;
    }
    Ok(summary)
}

#[cfg(test)]
mod tests {
    use super::*;
    use mpis::sampler::draw_global;

    fn cfg(text: &str) -> ExperimentConfig {
        let c = ExperimentConfig::parse(text).unwrap();
        c.validate().unwrap();
        c
    }

    #[test]
    fn single_global_run_is_one_ratio() {
        let c = cfg(r#"{"model": "conjugate-chain", "k_values": [1], "runs": 1, "methods": ["global"]}"#);
        let recs = run_all(&c).unwrap();
        assert_eq!(recs.len(), 1);
        let exp = Experiment::build(&c).unwrap();
        let store = draw_global(&exp.train, 1, c.job_seed(Method::Global, 1), 0).unwrap();
        let z = store.value(0, 0, 0)[0];
        let ln = |x: f64, m: f64| -0.5 * (2.0 * std::f64::consts::PI).ln() - 0.5 * (x - m).powi(2);
        let want = ln(z, 0.0) + ln(1.0, z) - ln(z, 0.0);
        assert!((recs[0].log_evidence_estimate - want).abs() < 1e-12);
    }

    #[test]
    fn standard_errors_match_the_column() {
        let c = cfg(r#"{"model": "conjugate-tree", "k_values": [2, 4], "runs": 5, "posterior_samples": 3}"#);
        let recs = run_all(&c).unwrap();
        let summary = summarize(&c, &recs);
        assert_eq!(summary.len(), 4);
        for s in &summary {
            let col: Vec<f64> = recs.iter().filter(|r| r.method == s.method && r.k == s.k).map(|r| r.log_evidence_estimate).collect();
            let m = col.iter().sum::<f64>() / col.len() as f64;
            let sd = (col.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (col.len() - 1) as f64).sqrt();
            assert!((s.elbo_se - sd / (col.len() as f64).sqrt()).abs() < 1e-12);
        }
    }

    #[test]
    fn writes_every_artifact() {
        let dir = tempfile::tempdir().unwrap();
        let mut c = cfg(r#"{"model": "chimpanzees", "k_values": [2, 3], "runs": 2, "posterior_samples": 4}"#);
        c.out = dir.path().join("o");
        run(&c).unwrap();
        for f in ["runs.csv", "summary.csv", "config.json", "elbo_vs_k.svg", "elbo_vs_time.svg", "predictive_ll_vs_k.svg", "predictive_ll_vs_time.svg"] {
            assert!(c.out.join(f).exists(), "{f}");
        }
        let text = std::fs::read_to_string(c.out.join("runs.csv")).unwrap();
        assert_eq!(
            text.lines().next().unwrap(),
            "run_id,method,K,log_evidence_estimate,predictive_log_likelihood,wall_time_seconds,peak_intermediate_entries"
        );
        assert_eq!(text.lines().count(), 1 + 2 * 2 * 2);
    }
}
