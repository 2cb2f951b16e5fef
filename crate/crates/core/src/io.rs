//! CSV persistence for trajectories, batches and coefficient vectors.
//!
//! Every file opens with `#` comment lines. The first carries
//! `key=value` metadata; the reader requires `eta` and ignores keys it
//! does not know.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::{BufRead, Write};

use crate::error::{Error, Result};
use crate::process::{Trajectory, TrajectoryBatch};

/// Crate version stamped into output headers.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

fn header_line(meta: &BTreeMap<String, String>) -> String {
    let mut s = String::from("#");
    for (k, v) in meta {
        let _ = write!(s, " {k}={v}");
    }
    s
}

fn parse_meta(line: &str, meta: &mut BTreeMap<String, String>) {
    for tok in line.trim_start_matches('#').split_whitespace() {
        if let Some((k, v)) = tok.split_once('=') {
            meta.insert(k.to_string(), v.to_string());
        }
    }
}

fn meta_f64(meta: &BTreeMap<String, String>, key: &str) -> Result<f64> {
    meta.get(key)
        .ok_or_else(|| Error::Parse(format!("header lacks `{key}`")))?
        .parse()
        .map_err(|_| Error::Parse(format!("bad `{key}` in header")))
}

fn meta_u64(meta: &BTreeMap<String, String>, key: &str) -> Result<u64> {
    meta.get(key).map_or(Ok(0), |v| {
        v.parse().map_err(|_| Error::Parse(format!("bad `{key}` in header")))
    })
}

/// Writes one trajectory as `step,x0[,x1..],reward`.
pub fn write_trajectory<W: Write>(
    w: &mut W,
    traj: &Trajectory,
    extra: &BTreeMap<String, String>,
) -> Result<()> {
    let mut meta = extra.clone();
    meta.insert("version".into(), VERSION.into());
    meta.insert("eta".into(), format!("{:e}", traj.eta));
    meta.insert("seed".into(), traj.seed.to_string());
    if let Some(k) = traj.kill_step {
        meta.insert("kill_step".into(), k.to_string());
    }
    writeln!(w, "{}", header_line(&meta))?;
    writeln!(w, "step,{},reward", state_columns(traj.dim))?;
    for k in 0..traj.len() {
        write!(w, "{k}")?;
        for x in traj.state(k) {
            write!(w, ",{x:.17e}")?;
        }
        writeln!(w, ",{:.17e}", traj.rewards[k])?;
    }
    Ok(())
}

/// Writes a batch as `traj,step,x0[,..],reward`, kill steps in the header.
pub fn write_batch<W: Write>(
    w: &mut W,
    batch: &TrajectoryBatch,
    extra: &BTreeMap<String, String>,
) -> Result<()> {
    let dim = batch.trajectories.first().map_or(1, |t| t.dim);
    let kills: Vec<String> = batch
        .trajectories
        .iter()
        .map(|t| t.kill_step.map_or("-".into(), |k| k.to_string()))
        .collect();
    let mut meta = extra.clone();
    meta.insert("version".into(), VERSION.into());
    meta.insert("eta".into(), format!("{:e}", batch.eta));
    meta.insert("seed".into(), batch.seed.to_string());
    writeln!(w, "{}", header_line(&meta))?;
    writeln!(w, "# kill_steps={}", kills.join(";"))?;
    writeln!(w, "traj,step,{},reward", state_columns(dim))?;
    for (i, t) in batch.trajectories.iter().enumerate() {
        for k in 0..t.len() {
            write!(w, "{i},{k}")?;
            for x in t.state(k) {
                write!(w, ",{x:.17e}")?;
            }
            writeln!(w, ",{:.17e}", t.rewards[k])?;
        }
    }
    Ok(())
}

fn state_columns(dim: usize) -> String {
    (0..dim).map(|i| format!("x{i}")).collect::<Vec<_>>().join(",")
}

struct Table {
    meta: BTreeMap<String, String>,
    columns: Vec<String>,
    rows: Vec<Vec<f64>>,
}

fn read_table<R: BufRead>(r: R) -> Result<Table> {
    let mut meta = BTreeMap::new();
    let mut columns = None;
    let mut rows = Vec::new();
    for (lineno, line) in r.lines().enumerate() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if line.starts_with('#') {
            parse_meta(line, &mut meta);
            continue;
        }
        if columns.is_none() {
            columns = Some(line.split(',').map(|s| s.trim().to_string()).collect::<Vec<_>>());
            continue;
        }
        let row = line
            .split(',')
            .map(|s| s.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::Parse(format!("line {}: {e}", lineno + 1)))?;
        rows.push(row);
    }
    let columns = columns.ok_or_else(|| Error::Parse("missing column header".into()))?;
    if let Some(bad) = rows.iter().position(|r| r.len() != columns.len()) {
        return Err(Error::Parse(format!("data row {} has the wrong number of fields", bad + 1)));
    }
    Ok(Table { meta, columns, rows })
}

fn check_columns(cols: &[String], lead: &[&str]) -> Result<usize> {
    let n = cols.len();
    let ok = n > lead.len() + 1
        && cols.iter().zip(lead).all(|(c, l)| c == l)
        && cols[n - 1] == "reward";
    if !ok {
        return Err(Error::Parse(format!(
            "expected columns {},x0..,reward",
            lead.join(",")
        )));
    }
    Ok(n - lead.len() - 1)
}

fn index(v: f64, what: &str) -> Result<usize> {
    if v >= 0.0 && v.fract() == 0.0 {
        Ok(v as usize)
    } else {
        Err(Error::Parse(format!("bad {what} index {v}")))
    }
}

/// Reads a file written by [`write_trajectory`].
pub fn read_trajectory<R: BufRead>(r: R) -> Result<Trajectory> {
    let t = read_table(r)?;
    let dim = check_columns(&t.columns, &["step"])?;
    let mut traj = Trajectory {
        eta: meta_f64(&t.meta, "eta")?,
        dim,
        states: Vec::with_capacity(t.rows.len() * dim),
        rewards: Vec::with_capacity(t.rows.len()),
        seed: meta_u64(&t.meta, "seed")?,
        kill_step: match t.meta.get("kill_step") {
            Some(v) => Some(v.parse().map_err(|_| Error::Parse("bad kill_step".into()))?),
            None => None,
        },
    };
    for (k, row) in t.rows.iter().enumerate() {
        if index(row[0], "step")? != k {
            return Err(Error::Parse(format!("steps out of order at row {}", k + 1)));
        }
        traj.states.extend_from_slice(&row[1..=dim]);
        traj.rewards.push(row[dim + 1]);
    }
    traj.validate()?;
    Ok(traj)
}

/// Reads a file written by [`write_batch`].
pub fn read_batch<R: BufRead>(r: R) -> Result<TrajectoryBatch> {
    let t = read_table(r)?;
    let dim = check_columns(&t.columns, &["traj", "step"])?;
    let eta = meta_f64(&t.meta, "eta")?;
    let seed = meta_u64(&t.meta, "seed")?;
    let mut trajectories: Vec<Trajectory> = Vec::new();
    for row in &t.rows {
        let i = index(row[0], "traj")?;
        let k = index(row[1], "step")?;
        if i == trajectories.len() {
            trajectories.push(Trajectory {
                eta,
                dim,
                states: Vec::new(),
                rewards: Vec::new(),
                seed,
                kill_step: None,
            });
        }
        let count = trajectories.len();
        let traj = match trajectories.get_mut(i) {
            Some(tr) if i + 1 == count && tr.len() == k => tr,
            _ => return Err(Error::Parse(format!("rows out of order at traj {i} step {k}"))),
        };
        traj.states.extend_from_slice(&row[2..2 + dim]);
        traj.rewards.push(row[2 + dim]);
    }
    if let Some(kills) = t.meta.get("kill_steps") {
        let kills: Vec<&str> = kills.split(';').collect();
        if kills.len() != trajectories.len() {
            return Err(Error::Parse("kill_steps does not match the trajectory count".into()));
        }
        for (tr, k) in trajectories.iter_mut().zip(kills) {
            tr.kill_step = match k {
                "-" => None,
                k => Some(k.parse().map_err(|_| Error::Parse(format!("bad kill step `{k}`")))?),
            };
        }
    }
    for tr in &trajectories {
        tr.validate()?;
    }
    Ok(TrajectoryBatch { eta, seed, trajectories })
}

/// `index,value` lines at full precision.
pub fn write_coefficients<W: Write>(w: &mut W, header: &str, values: &[f64]) -> Result<()> {
    writeln!(w, "# {header}")?;
    writeln!(w, "index,value")?;
    for (i, v) in values.iter().enumerate() {
        writeln!(w, "{i},{v:.16e}")?;
    }
    Ok(())
}
