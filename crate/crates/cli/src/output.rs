//! Deterministic file output. All floats are written in scientific notation
//! (shortest round-trip form), so reruns with the same seed are
//! byte-identical and every value parses back exactly.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use mplc_sim::QuantileRow;
use serde::Serialize;

use crate::config::Resolved;
use crate::CliResult;

/// Short file-name label for a step or sigma value: π/2 becomes `pi2`,
/// exact powers of two become `2m<k>`/`2p<k>`, small integers stay bare,
/// anything else uses its decimal form with `.` replaced by `p`.
pub fn value_label(v: f64) -> String {
    if v == 0.0 {
        return "0".to_string();
    }
    if (v - std::f64::consts::FRAC_PI_2).abs() < 1e-15 {
        return "pi2".to_string();
    }
    if v > 0.0 && v == v.trunc() && v <= 4096.0 {
        return format!("{}", v as u64);
    }
    let log2 = v.log2();
    if v > 0.0 && log2 == log2.trunc() {
        let k = log2 as i64;
        return if k < 0 {
            format!("2m{}", -k)
        } else {
            format!("2p{k}")
        };
    }
    format!("{v}").replace('.', "p").replace('-', "m")
}

pub struct OutDir {
    dir: PathBuf,
}

impl OutDir {
    pub fn create(cfg: &Resolved) -> CliResult<Self> {
        fs::create_dir_all(&cfg.out)?;
        Ok(Self { dir: cfg.out.clone() })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    /// Write a CSV with the given header and rows of pre-formatted cells.
    pub fn write_csv(&self, name: &str, header: &str, rows: &[Vec<String>]) -> CliResult<PathBuf> {
        let path = self.path(name);
        let mut buf = String::with_capacity(rows.len() * 64 + header.len() + 1);
        buf.push_str(header);
        buf.push('\n');
        for row in rows {
            buf.push_str(&row.join(","));
            buf.push('\n');
        }
        fs::write(&path, buf)?;
        Ok(path)
    }

    /// Write the per-iteration quantile table.
    pub fn write_quantiles(&self, name: &str, rows: &[QuantileRow<f64>]) -> CliResult<PathBuf> {
        let formatted: Vec<Vec<String>> = rows
            .iter()
            .map(|r| {
                vec![
                    r.iteration.to_string(),
                    fmt(r.min),
                    fmt(r.q25),
                    fmt(r.median),
                    fmt(r.q75),
                    fmt(r.max),
                ]
            })
            .collect();
        self.write_csv(name, "iteration,min,q25,median,q75,max", &formatted)
    }

    /// Write the JSON sidecar for a dataset: artifact version, resolved
    /// configuration and the command-specific results summary.
    pub fn write_sidecar<R: Serialize>(
        &self,
        name: &str,
        cfg: &Resolved,
        results: &R,
    ) -> CliResult<PathBuf> {
        #[derive(Serialize)]
        struct Sidecar<'a, R> {
            artifact: Artifact,
            config: &'a Resolved,
            results: &'a R,
        }
        #[derive(Serialize)]
        struct Artifact {
            name: &'static str,
            version: &'static str,
        }
        let path = self.path(name);
        let doc = Sidecar {
            artifact: Artifact {
                name: "mplc-sim",
                version: env!("CARGO_PKG_VERSION"),
            },
            config: cfg,
            results,
        };
        let mut file = fs::File::create(&path)?;
        serde_json::to_writer_pretty(&mut file, &doc)
            .map_err(|e| crate::CliError::Runtime(format!("writing {}: {e}", path.display())))?;
        file.write_all(b"\n")?;
        Ok(path)
    }
}

/// Scientific-notation, shortest round-trip float formatting.
pub fn fmt(v: f64) -> String {
    format!("{v:e}")
}

/// Relative path helper for messages.
pub fn display(path: &Path) -> String {
    path.display().to_string()
}
