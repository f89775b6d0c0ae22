//! CSV and JSON artifacts.
//!
//! Every artifact carries the SHA-256 of the configuration text it came
//! from: CSV files on a leading `#` comment line, JSON files as a top-level
//! `config_hash` key. Numbers use the shortest decimal that round-trips.

use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::Path;

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::periodic::PeriodicOrbit;

pub fn config_hash(text: &str) -> String {
    let digest = Sha256::digest(text.as_bytes());
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

fn header(hash: &str, columns: &str) -> String {
    format!("# config_sha256={hash}\n{columns}\n")
}

/// `t,x,u` rows for a list of recorded states.
pub fn trajectory_csv(hash: &str, nodes: &[f64], samples: &[(f64, Vec<f64>)]) -> String {
    let mut out = header(hash, "t,x,u");
    for (t, u) in samples {
        for (x, v) in nodes.iter().zip(u) {
            let _ = writeln!(out, "{t},{x},{v}");
        }
    }
    out
}

/// `snapshot_index,t,x,u` rows for one period of an orbit.
pub fn orbit_csv(hash: &str, nodes: &[f64], orbit: &PeriodicOrbit) -> String {
    let mut out = header(hash, "snapshot_index,t,x,u");
    for (j, (t, u)) in orbit
        .snapshot_times()
        .iter()
        .zip(orbit.snapshots())
        .enumerate()
    {
        for (x, v) in nodes.iter().zip(u) {
            let _ = writeln!(out, "{j},{t},{x},{v}");
        }
    }
    out
}

#[derive(Serialize)]
struct Stamped<'a, T: Serialize> {
    config_hash: &'a str,
    #[serde(flatten)]
    body: &'a T,
}

/// Pretty JSON object with the config hash merged in at top level.
pub fn stamped_json<T: Serialize>(hash: &str, body: &T) -> serde_json::Result<String> {
    let mut s = serde_json::to_string_pretty(&Stamped {
        config_hash: hash,
        body,
    })?;
    s.push('\n');
    Ok(s)
}

pub fn write_artifact(dir: &Path, name: &str, contents: &str) -> io::Result<std::path::PathBuf> {
    fs::create_dir_all(dir)?;
    let path = dir.join(name);
    fs::write(&path, contents)?;
    Ok(path)
}
