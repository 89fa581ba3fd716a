//! Ensemble persistence.
//!
//! * CSV with columns `traj_id,step,x`.
//! * Binary container: the magic bytes `WGEN1`, a newline, a single-line JSON
//!   header (`dt`, `n_traj`, `n_steps`, `master_seed`, `per_traj_seeds`)
//!   terminated by a newline, then `n_traj * (n_steps + 1)` little-endian
//!   `f64` values in trajectory-major order.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::Ensemble;
use crate::error::{Error, Result};
use crate::fmt_f64;

pub const MAGIC: &[u8; 5] = b"WGEN1";

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    dt: f64,
    n_traj: usize,
    n_steps: usize,
    master_seed: u64,
    per_traj_seeds: Vec<u64>,
}

pub fn write_csv<W: Write>(ens: &Ensemble, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["traj_id", "step", "x"])?;
    for (r, traj) in ens.trajectories().enumerate() {
        for (n, &x) in traj.iter().enumerate() {
            w.write_record([r.to_string(), n.to_string(), fmt_f64(x)])?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_csv_file(ens: &Ensemble, path: impl AsRef<Path>) -> Result<()> {
    write_csv(ens, BufWriter::new(File::create(path)?))
}

/// Reads the CSV layout back. Rows may come in any order but every
/// `(traj_id, step)` cell must appear exactly once.
pub fn read_csv<R: Read>(reader: R, dt: f64) -> Result<Ensemble> {
    let mut rdr = csv::Reader::from_reader(reader);
    let headers = rdr.headers()?.clone();
    if headers.len() != 3 || &headers[0] != "traj_id" || &headers[1] != "step" || &headers[2] != "x" {
        return Err(Error::Format(format!("expected header traj_id,step,x, got {headers:?}")));
    }
    let mut cells = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let parse_err = |what: &str| Error::Format(format!("bad {what} in row {rec:?}"));
        let r: usize = rec[0].trim().parse().map_err(|_| parse_err("traj_id"))?;
        let n: usize = rec[1].trim().parse().map_err(|_| parse_err("step"))?;
        let x: f64 = rec[2].trim().parse().map_err(|_| parse_err("x"))?;
        cells.push((r, n, x));
    }
    if cells.is_empty() {
        return Err(Error::Format("ensemble CSV has no rows".into()));
    }
    let n_traj = cells.iter().map(|c| c.0).max().unwrap_or(0) + 1;
    let n_states = cells.iter().map(|c| c.1).max().unwrap_or(0) + 1;
    if n_states < 2 {
        return Err(Error::Format("trajectories need at least two states".into()));
    }
    if cells.len() != n_traj * n_states {
        return Err(Error::Format(format!(
            "{} rows cannot fill {n_traj} trajectories of {n_states} states",
            cells.len()
        )));
    }
    let mut states = vec![f64::NAN; n_traj * n_states];
    let mut seen = vec![false; n_traj * n_states];
    for (r, n, x) in cells {
        let i = r * n_states + n;
        if seen[i] {
            return Err(Error::Format(format!("duplicate row for trajectory {r}, step {n}")));
        }
        seen[i] = true;
        states[i] = x;
    }
    Ensemble::from_parts(states, n_traj, n_states - 1, dt, 0, (0..n_traj as u64).collect())
}

pub fn read_csv_file(path: impl AsRef<Path>, dt: f64) -> Result<Ensemble> {
    read_csv(BufReader::new(File::open(path)?), dt)
}

pub fn write_binary<W: Write>(ens: &Ensemble, mut w: W) -> Result<()> {
    let header = Header {
        dt: ens.dt,
        n_traj: ens.n_traj(),
        n_steps: ens.n_steps(),
        master_seed: ens.master_seed,
        per_traj_seeds: ens.per_traj_seeds.clone(),
    };
    w.write_all(MAGIC)?;
    w.write_all(b"\n")?;
    serde_json::to_writer(&mut w, &header)?;
    w.write_all(b"\n")?;
    for &x in ens.states() {
        w.write_all(&x.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_binary_file(ens: &Ensemble, path: impl AsRef<Path>) -> Result<()> {
    write_binary(ens, BufWriter::new(File::create(path)?))
}

pub fn read_binary<R: Read>(reader: R) -> Result<Ensemble> {
    let mut r = BufReader::new(reader);
    let mut magic = [0u8; 6];
    r.read_exact(&mut magic).map_err(|_| Error::Format("file too short for WGEN1 magic".into()))?;
    if &magic[..5] != MAGIC || magic[5] != b'\n' {
        return Err(Error::Format("missing WGEN1 magic bytes".into()));
    }
    let mut line = String::new();
    r.read_line(&mut line)?;
    let header: Header = serde_json::from_str(line.trim_end())?;
    let count = header
        .n_traj
        .checked_mul(header.n_steps + 1)
        .ok_or_else(|| Error::Format("header dimensions overflow".into()))?;
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    if bytes.len() != count * 8 {
        return Err(Error::Format(format!(
            "expected {} bytes of state data, found {}",
            count * 8,
            bytes.len()
        )));
    }
    let states = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect();
    Ensemble::from_parts(states, header.n_traj, header.n_steps, header.dt, header.master_seed, header.per_traj_seeds)
}

pub fn read_binary_file(path: impl AsRef<Path>) -> Result<Ensemble> {
    read_binary(File::open(path)?)
}
