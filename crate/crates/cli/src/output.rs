//! Deterministic file emission: JSON reports and CSV trajectories with
//! lossless float formatting.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::Context;
use serde::Serialize;

/// 17 significant decimal digits: round-trips every f64 exactly.
pub fn format_float(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn ensure_dir(dir: &Path) -> anyhow::Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))
}

/// Pretty-printed JSON with a trailing newline. Struct field order is
/// fixed, so repeated runs emit identical bytes.
pub fn write_json<T: Serialize>(dir: &Path, name: &str, value: &T) -> anyhow::Result<PathBuf> {
    ensure_dir(dir)?;
    let path = dir.join(name);
    let mut body = serde_json::to_string_pretty(value).context("serializing report")?;
    body.push('\n');
    fs::write(&path, body).with_context(|| format!("cannot write {}", path.display()))?;
    Ok(path)
}

/// CSV with the fixed `t,x1,x2,x3,i` schema.
pub fn trajectory_csv(rows: impl Iterator<Item = (f64, [f64; 3], usize)>) -> String {
    let mut out = String::from("t,x1,x2,x3,i\n");
    for (t, x, i) in rows {
        out.push_str(&format_float(t));
        for v in x {
            out.push(',');
            out.push_str(&format_float(v));
        }
        out.push(',');
        out.push_str(&i.to_string());
        out.push('\n');
    }
    out
}
