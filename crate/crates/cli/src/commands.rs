use std::fs::File;
use std::io::Write;
use std::path::Path;

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};

use lcm_ito::experiment::{run_experiment, ExperimentConfig};
use lcm_ito::io::{self, GraphReport, TestReport};
use lcm_ito::ligraph::{self, DiscoveryConfig, EdgeScores, StabilityReport};
use lcm_ito::sdesim::{gen_random_phi, simulate_nonlinear, simulate_ou};
use lcm_ito::{lcmtest, EstimationConfig, LIGraph, Matrix, OUModel, QuerySpec, TimeGrid};

use crate::config::{check, read_file, Settings};

/// Drift file: `{"phi": [[row], ...], "sigma": σ}`.
#[derive(Debug, Serialize, Deserialize)]
struct DriftFile {
    phi: Vec<Vec<f64>>,
    sigma: f64,
}

fn rows(m: &Matrix) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

fn from_rows(r: &[Vec<f64>]) -> Result<Matrix> {
    let d = r.len();
    check(d > 0 && r.iter().all(|x| x.len() == d), "drift must be a nonempty square matrix")?;
    Ok(Matrix::from_fn(d, d, |i, j| r[i][j]))
}

fn read_drift(path: &str) -> Result<(Matrix, f64)> {
    let f: DriftFile = serde_json::from_str(&read_file(path)?).with_context(|| format!("parsing {path}"))?;
    Ok((from_rows(&f.phi)?, f.sigma))
}

fn create(path: &str) -> Result<File> {
    File::create(path).with_context(|| format!("creating {path}"))
}

/// Writes to `path`, or stdout when absent.
fn emit(path: Option<&str>, f: impl FnOnce(&mut dyn Write) -> lcm_ito::Result<()>) -> Result<()> {
    match path {
        Some(p) => f(&mut create(p)?)?,
        None => f(&mut std::io::stdout().lock())?,
    }
    Ok(())
}

fn grid(s: &mut Settings) -> Result<TimeGrid> {
    let delta = s.get("delta", 0.01f64)?;
    let n = s.get("n_steps", 100usize)?;
    Ok(TimeGrid::new(delta, n)?)
}

fn estimation(s: &mut Settings) -> Result<EstimationConfig> {
    let d = EstimationConfig::default();
    let c = EstimationConfig {
        stride: s.get("stride", d.stride)?,
        u: s.get("u", d.u)?,
        pool_lags: s.get("pool_lags", d.pool_lags)?,
    };
    c.validate()?;
    Ok(c)
}

fn coordinate(s: &mut Settings, key: &str, d: usize) -> Result<usize> {
    let v: usize = s.require(key)?;
    check((1..=d).contains(&v), &format!("{key} must be in 1..={d}"))?;
    Ok(v - 1)
}

fn echo(map: &std::collections::BTreeMap<String, String>) -> serde_json::Value {
    serde_json::to_value(map).expect("string map serializes")
}

pub fn simulate(mut s: Settings) -> Result<()> {
    let seed = s.get("seed", 0u64)?;
    let out = s.get_opt::<String>("out")?;
    let grid = grid(&mut s)?;
    let n_traj = s.get("n_traj", 250usize)?;
    let model_kind = s.get("model", "ou".to_string())?;
    let phi_out = s.get_opt::<String>("phi_out")?;
    let (phi, sigma) = match s.get_opt::<String>("phi")? {
        Some(path) => {
            let (phi, file_sigma) = read_drift(&path)?;
            (phi, s.get("sigma", file_sigma)?)
        }
        None => {
            let d = s.get("d", 10usize)?;
            let edge_prob = s.get("edge_prob", 0.3f64)?;
            let diag = s.get("diag", 2.0f64)?;
            (gen_random_phi(d, edge_prob, diag, seed)?, s.get("sigma", 1.0f64)?)
        }
    };
    s.finish()?;
    check(n_traj > 0, "n_traj must be positive")?;
    let model = OUModel::new(phi, sigma)?;
    let data = match model_kind.as_str() {
        "ou" => simulate_ou(&model, grid, n_traj, seed)?,
        "nonlinear" => simulate_nonlinear(&model, grid, n_traj, seed)?,
        other => return Err(anyhow::anyhow!(crate::config::ConfigError(format!("unknown model {other:?}")))),
    };
    if let Some(p) = phi_out {
        io::write_json(&DriftFile { phi: rows(&model.phi), sigma }, create(&p)?)?;
    }
    emit(out.as_deref(), |w| io::write_trajectories(&data, w))
}

#[derive(Serialize)]
struct EstimateReport {
    phi_tilde: Vec<Vec<f64>>,
    sigma_hat: Vec<Vec<f64>>,
    f_hat: Vec<Vec<f64>>,
    omega_hat: Vec<Vec<f64>>,
    delta_c: f64,
    u: f64,
    n_pairs: usize,
}

pub fn estimate(mut s: Settings) -> Result<()> {
    let data_path: String = s.require("data")?;
    let out = s.get_opt::<String>("out")?;
    let cfg = estimation(&mut s)?;
    s.finish()?;
    let data = io::ingest_csv(&data_path).with_context(|| format!("reading {data_path}"))?;
    let m = lcm_ito::ouest::fit(&data, &cfg)?;
    let report = EstimateReport {
        phi_tilde: rows(&m.phi_tilde),
        sigma_hat: rows(&m.sigma_hat),
        f_hat: rows(&m.f_hat),
        omega_hat: rows(&m.omega_hat),
        delta_c: m.delta_c,
        u: m.u_used,
        n_pairs: m.n_pairs,
    };
    emit(out.as_deref(), |w| io::write_json(&report, w))
}

fn gamma_path_for(out: &str) -> String {
    let p = Path::new(out);
    let stem = p.file_stem().and_then(|s| s.to_str()).unwrap_or("result");
    p.with_file_name(format!("{stem}_gamma.csv")).to_string_lossy().into_owned()
}

pub fn test(mut s: Settings) -> Result<()> {
    let seed = s.get("seed", 0u64)?;
    let out: String = s.require("out")?;
    let data_path: String = s.require("data")?;
    let data = io::ingest_csv(&data_path).with_context(|| format!("reading {data_path}"))?;
    let d = data.dim();
    let alpha = coordinate(&mut s, "alpha", d)?;
    let beta = coordinate(&mut s, "beta", d)?;
    let cond = match s.get_opt::<String>("cond")? {
        Some(list) => list
            .split(',')
            .map(str::trim)
            .filter(|x| !x.is_empty())
            .map(|x| {
                let v: usize = x.parse().map_err(|_| crate::config::ConfigError(format!("cond entry {x:?}")))?;
                check((1..=d).contains(&v), "cond entries must be in 1..=d")?;
                Ok(v - 1)
            })
            .collect::<Result<Vec<usize>>>()?,
        None => (0..d).filter(|&i| i != alpha).collect(),
    };
    let folds = s.get("folds", 3usize)?;
    let level = s.get("level", 0.05f64)?;
    let gamma_out = s.get("gamma_out", gamma_path_for(&out))?;
    let cfg = estimation(&mut s)?;
    let config_echo = echo(&s.finish()?);
    let query = QuerySpec::new(alpha, beta, cond);
    query.validate(d)?;
    let result = lcmtest::run_crossfit_test(&data, &query, folds, &cfg, level, seed)?;
    io::write_gamma_path(data.grid(), &result.gamma_path, create(&gamma_out)?)?;
    let report = TestReport::new(&result, Some(gamma_out), config_echo, seed);
    io::write_json(&report, create(&out)?)?;
    eprintln!(
        "statistic {:.4}  p-value {:.4}{}",
        result.statistic,
        result.p_value,
        if result.degenerate_variance { "  (degenerate variance)" } else { "" }
    );
    Ok(())
}

#[derive(Serialize)]
struct DiscoveryReport {
    flagged: Vec<(usize, usize)>,
    scores: Option<EdgeScores>,
    stability: Option<StabilityReport>,
}

pub fn discover(mut s: Settings) -> Result<()> {
    let seed = s.get("seed", 0u64)?;
    let out = s.get_opt::<String>("out")?;
    let data_path: String = s.require("data")?;
    let def = DiscoveryConfig::default();
    let folds = s.get("folds", def.folds)?;
    let level = s.get("level", def.level)?;
    let bonferroni = s.get("bonferroni", def.bonferroni)?;
    let splits = s.get("splits", 1usize)?;
    let truth = s.get_opt::<String>("truth")?;
    let report_path = s.get_opt::<String>("report")?;
    let estimation = estimation(&mut s)?;
    s.finish()?;
    check(splits >= 1, "splits must be positive")?;
    let cfg = DiscoveryConfig { folds, level, bonferroni, estimation };
    let data = io::ingest_csv(&data_path).with_context(|| format!("reading {data_path}"))?;
    let (graph, stability) = if splits >= 2 {
        let rep = ligraph::stability_report(&data, splits, &cfg, seed)?;
        (rep.graphs[0].clone(), Some(rep))
    } else {
        (ligraph::recover_lig(&data, &cfg, seed)?, None)
    };
    let scores = match truth {
        Some(p) => {
            let (phi, _) = read_drift(&p)?;
            Some(ligraph::edge_scores(&graph, &LIGraph::from_drift(&phi))?)
        }
        None => None,
    };
    eprintln!("{} edges", graph.n_edges());
    if let Some(sc) = &scores {
        eprintln!("precision {:.3}  recall {:.3}", sc.precision, sc.recall);
    }
    if let Some(st) = &stability {
        eprintln!("max SHD across fold seeds {}", st.max_shd());
    }
    if let Some(p) = report_path {
        let flagged = graph.flagged.iter().map(|&(a, b)| (a + 1, b + 1)).collect();
        io::write_json(&DiscoveryReport { flagged, scores, stability }, create(&p)?)?;
    }
    emit(out.as_deref(), |w| io::write_json(&GraphReport::from(&graph), w))
}

pub fn experiment(mut s: Settings) -> Result<()> {
    let def = ExperimentConfig::default();
    let seed = s.get("seed", def.seed)?;
    let out = s.get_opt::<String>("out")?;
    let d = s.get("d", def.d)?;
    let n_traj = s.get_list("n_traj", def.n_traj.clone())?;
    let effects = s.get_list("effects", def.effects.clone())?;
    let n_phi = s.get("n_phi", def.n_phi)?;
    let reps = s.get("reps", def.reps_per_phi)?;
    let folds = s.get("folds", def.folds.unwrap_or(0))?;
    let level = s.get("level", def.level)?;
    let grid = grid(&mut s)?;
    let edge_prob = s.get("edge_prob", def.edge_prob)?;
    let diag = s.get("diag", def.diag)?;
    let sigma = s.get("sigma", def.sigma)?;
    let alpha = s.get("alpha", def.alpha + 1)?;
    let beta = s.get("beta", def.beta + 1)?;
    let identifiable_only = s.get("identifiable_only", def.identifiable_only)?;
    let estimation = estimation(&mut s)?;
    s.finish()?;
    check(alpha >= 1 && beta >= 1, "alpha and beta are 1-based")?;
    let cfg = ExperimentConfig {
        d,
        n_traj,
        effects,
        n_phi,
        reps_per_phi: reps,
        folds: (folds > 0).then_some(folds),
        level,
        grid,
        estimation,
        edge_prob,
        diag,
        sigma,
        alpha: alpha - 1,
        beta: beta - 1,
        identifiable_only,
        seed,
    };
    cfg.validate()?;
    let rows = run_experiment(&cfg)?;
    emit(out.as_deref(), |w| {
        writeln!(w, "n_traj,effect,runs,rejections,degenerate,failures,pooled_rate,mean_phi_rate,per_phi_rates")?;
        for r in &rows {
            let per: Vec<String> = r.per_phi_rates.iter().map(|x| x.to_string()).collect();
            writeln!(
                w,
                "{},{},{},{},{},{},{},{},{}",
                r.n_traj,
                r.effect,
                r.runs,
                r.rejections,
                r.degenerate,
                r.failures,
                r.pooled_rate,
                r.mean_phi_rate,
                per.join(";")
            )?;
        }
        Ok(())
    })
}
