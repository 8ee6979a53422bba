use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};

/// What a run did, written next to its primary output as `<output>.manifest`.
#[derive(Debug)]
pub struct RunManifest {
    pub command: String,
    pub cwd: PathBuf,
    /// The full argument list after config expansion; rerunning it from
    /// `cwd` reproduces the outputs.
    pub argv: Vec<String>,
    /// Effective settings, defaults included.
    pub config: String,
    pub seeds: Vec<(String, u64)>,
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
    pub wall_seconds: f64,
}

/// `path` with `.suffix` appended to its file name.
pub fn sidecar(path: &Path, suffix: &str) -> PathBuf {
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(".");
    name.push(suffix);
    path.with_file_name(name)
}

fn join(paths: &[PathBuf]) -> String {
    paths
        .iter()
        .map(|p| p.display().to_string())
        .collect::<Vec<_>>()
        .join(",")
}

impl RunManifest {
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "command={}", self.command);
        let _ = writeln!(out, "tool_version={}", env!("CARGO_PKG_VERSION"));
        let _ = writeln!(out, "cwd={}", self.cwd.display());
        for (i, a) in self.argv.iter().enumerate() {
            let _ = writeln!(out, "argv.{i}={a}");
        }
        for (k, v) in &self.seeds {
            let _ = writeln!(out, "seed.{k}={v}");
        }
        let _ = writeln!(out, "inputs={}", join(&self.inputs));
        let _ = writeln!(out, "outputs={}", join(&self.outputs));
        let _ = writeln!(out, "config={}", self.config);
        let _ = writeln!(out, "wall_seconds={:.3}", self.wall_seconds);
        out
    }

    pub fn write_next_to(&self, output: &Path) -> Result<PathBuf> {
        let path = sidecar(output, "manifest");
        fs::write(&path, self.to_text()).with_context(|| format!("writing {}", path.display()))?;
        Ok(path)
    }
}

/// The working directory and argument list recorded in a manifest.
pub fn parse_invocation(text: &str) -> Result<(PathBuf, Vec<String>)> {
    let mut cwd = None;
    let mut argv = Vec::new();
    for line in text.lines() {
        let Some((k, v)) = line.split_once('=') else {
            continue;
        };
        if k == "cwd" {
            cwd = Some(PathBuf::from(v));
        } else if let Some(i) = k.strip_prefix("argv.") {
            let i: usize = i.parse().with_context(|| format!("bad key {k:?}"))?;
            if i != argv.len() {
                bail!("argv entries out of order at {k:?}");
            }
            argv.push(v.to_string());
        }
    }
    let Some(cwd) = cwd else {
        bail!("no cwd entry");
    };
    if argv.len() < 2 {
        bail!("no recorded command");
    }
    Ok((cwd, argv))
}
