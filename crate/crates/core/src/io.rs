//! Trajectory CSV and result JSON.
//!
//! Trajectories use the header `traj_id,t,x_1,...,x_d` with rows sorted by
//! `(traj_id, t)`. Values are written with 17 significant digits so a write
//! followed by a read reproduces every bit.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lcmtest::TestResult;
use crate::ligraph::LIGraph;
use crate::sdesim::{TimeGrid, TrajectorySet};

const GRID_TOL: f64 = 1e-9;

fn fmt(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn write_trajectories<W: Write>(data: &TrajectorySet, out: W) -> Result<()> {
    let mut w = BufWriter::new(out);
    let header: Vec<String> = (1..=data.dim()).map(|i| format!("x_{i}")).collect();
    writeln!(w, "traj_id,t,{}", header.join(","))?;
    for j in 0..data.n_traj() {
        for k in 0..data.grid().n_points() {
            write!(w, "{j},{}", fmt(data.grid().time(k)))?;
            for v in data.state(j, k) {
                write!(w, ",{}", fmt(*v))?;
            }
            writeln!(w)?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn save_trajectories(data: &TrajectorySet, path: impl AsRef<Path>) -> Result<()> {
    write_trajectories(data, File::create(path)?)
}

fn parse_err(line: u64, msg: impl Into<String>) -> Error {
    Error::Parse { line: line as usize, msg: msg.into() }
}

/// Parses and validates a trajectory CSV.
pub fn read_trajectories<R: Read>(input: R) -> Result<TrajectorySet> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(BufReader::new(input));
    let header = rdr.headers().map_err(|e| parse_err(1, e.to_string()))?.clone();
    let cols: Vec<&str> = header.iter().collect();
    if cols.len() < 3 || cols[0] != "traj_id" || cols[1] != "t" {
        return Err(parse_err(1, "header must be traj_id,t,x_1,...,x_d"));
    }
    let d = cols.len() - 2;
    for (i, c) in cols[2..].iter().enumerate() {
        if *c != format!("x_{}", i + 1) {
            return Err(parse_err(1, format!("expected column x_{}, found {c:?}", i + 1)));
        }
    }

    let mut values = Vec::new();
    let mut times: Vec<f64> = Vec::new(); // times of the first trajectory
    let mut first_id: Option<u64> = None;
    let mut cur_id = 0u64;
    let mut cur_len = 0usize;
    let mut n_traj = 0usize;
    let mut last_line = 1u64;
    for rec in rdr.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map(|p| p.line()).unwrap_or(last_line + 1);
            parse_err(line, e.to_string())
        })?;
        let line = rec.position().map(|p| p.line()).unwrap_or(last_line + 1);
        last_line = line;
        if rec.len() != d + 2 {
            return Err(parse_err(line, format!("expected {} cells, found {}", d + 2, rec.len())));
        }
        let id: u64 = rec[0]
            .parse()
            .map_err(|_| parse_err(line, format!("traj_id {:?} is not a nonnegative integer", &rec[0])))?;
        let num = |i: usize, name: &str| -> Result<f64> {
            let v: f64 = rec[i]
                .parse()
                .map_err(|_| parse_err(line, format!("{name} {:?} is not a number", &rec[i])))?;
            if v.is_finite() {
                Ok(v)
            } else {
                Err(parse_err(line, format!("{name} is not finite")))
            }
        };
        let t = num(1, "t")?;

        match first_id {
            None => {
                first_id = Some(id);
                cur_id = id;
                n_traj = 1;
            }
            Some(_) if id == cur_id => {}
            Some(_) if id == cur_id + 1 => {
                if n_traj == 1 {
                    if times.len() < 2 {
                        return Err(parse_err(line, "trajectories need at least two time points"));
                    }
                } else if cur_len != times.len() {
                    return Err(parse_err(
                        line,
                        format!("trajectory {cur_id} has {cur_len} rows, expected {}", times.len()),
                    ));
                }
                cur_id = id;
                cur_len = 0;
                n_traj += 1;
            }
            Some(_) => {
                return Err(parse_err(line, format!("traj_id {id} follows {cur_id}; ids must be contiguous and sorted")));
            }
        }

        if n_traj == 1 {
            if let Some(&prev) = times.last() {
                if t <= prev {
                    return Err(parse_err(line, "time must increase within a trajectory"));
                }
                if times.len() >= 2 {
                    let delta = times[1] - times[0];
                    let want = times[0] + times.len() as f64 * delta;
                    if (t - want).abs() > GRID_TOL * delta.max(want.abs()) {
                        return Err(parse_err(line, format!("non-uniform grid: t = {t}, expected {want}")));
                    }
                }
            }
            times.push(t);
        } else {
            match times.get(cur_len) {
                None => {
                    return Err(parse_err(line, format!("trajectory {cur_id} has more than {} rows", times.len())));
                }
                Some(&want) => {
                    let scale = (times[1] - times[0]).max(want.abs());
                    if (t - want).abs() > GRID_TOL * scale {
                        return Err(parse_err(line, format!("t = {t} does not match the grid value {want}")));
                    }
                }
            }
        }
        cur_len += 1;
        for i in 0..d {
            values.push(num(i + 2, &format!("x_{}", i + 1))?);
        }
    }
    if first_id.is_none() {
        return Err(parse_err(last_line, "no data rows"));
    }
    if times.len() < 2 {
        return Err(parse_err(last_line, "trajectories need at least two time points"));
    }
    if cur_len != times.len() {
        return Err(parse_err(
            last_line,
            format!("trajectory {cur_id} has {cur_len} rows, expected {}", times.len()),
        ));
    }
    let n = times.len() - 1;
    let grid = TimeGrid::new((times[n] - times[0]) / n as f64, n)?;
    TrajectorySet::new(grid, d, n_traj, values)
}

pub fn ingest_csv(path: impl AsRef<Path>) -> Result<TrajectorySet> {
    read_trajectories(File::open(path)?)
}

/// `(t, γ̂_t)` rows for plotting.
pub fn write_gamma_path<W: Write>(grid: &TimeGrid, gamma: &[f64], out: W) -> Result<()> {
    if gamma.len() != grid.n_points() {
        return Err(Error::Shape("gamma path does not match the grid".into()));
    }
    let mut w = BufWriter::new(out);
    writeln!(w, "t,gamma")?;
    for (k, g) in gamma.iter().enumerate() {
        writeln!(w, "{},{}", fmt(grid.time(k)), fmt(*g))?;
    }
    w.flush()?;
    Ok(())
}

/// Query with 1-based coordinates, matching the CSV column names.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryRecord {
    pub alpha: usize,
    pub beta: usize,
    pub cond_set: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestReport {
    pub query: QueryRecord,
    pub statistic: f64,
    pub p_value: f64,
    #[serde(rename = "variance_T")]
    pub variance_t: f64,
    pub degenerate: bool,
    pub gamma_path_file: Option<String>,
    pub config_echo: serde_json::Value,
    pub seed: u64,
}

impl TestReport {
    pub fn new(result: &TestResult, gamma_path_file: Option<String>, config_echo: serde_json::Value, seed: u64) -> Self {
        let q = &result.query;
        Self {
            query: QueryRecord {
                alpha: q.alpha + 1,
                beta: q.beta + 1,
                cond_set: q.cond_set.iter().map(|c| c + 1).collect(),
            },
            statistic: result.statistic,
            p_value: result.p_value,
            variance_t: result.variance_t,
            degenerate: result.degenerate_variance,
            gamma_path_file,
            config_echo,
            seed,
        }
    }
}

/// Graph as `{d, edges: [[from, to, p_value, weight], ...]}` with 1-based
/// node labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphReport {
    pub d: usize,
    pub edges: Vec<(usize, usize, f64, f64)>,
}

impl From<&LIGraph> for GraphReport {
    fn from(g: &LIGraph) -> Self {
        Self {
            d: g.d,
            edges: g
                .edge_list()
                .into_iter()
                .map(|(a, b)| (a + 1, b + 1, g.p_values[a][b], g.weights[a][b]))
                .collect(),
        }
    }
}

pub fn write_json<T: Serialize, W: Write>(value: &T, out: W) -> Result<()> {
    let mut w = BufWriter::new(out);
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}
