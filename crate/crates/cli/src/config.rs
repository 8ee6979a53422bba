//! `key=value` config files and `--arch` values.

use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use gapfill::vconstruct::ArchConfig;

/// Parses `key=value` lines; `#` starts a comment, blank lines are skipped.
pub fn parse_kv(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (no, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            bail!("line {}: expected key=value, got {raw:?}", no + 1);
        };
        let (k, v) = (k.trim(), v.trim());
        if k.is_empty() {
            bail!("line {}: empty key", no + 1);
        }
        out.push((k.to_string(), v.to_string()));
    }
    Ok(out)
}

/// Replaces `--config FILE` with the file's settings as flags placed right
/// after the subcommand, so flags given on the command line win.
pub fn expand_config(args: Vec<String>) -> Result<Vec<String>> {
    let mut rest = Vec::with_capacity(args.len());
    let mut file = None;
    let mut it = args.into_iter();
    while let Some(a) = it.next() {
        if a == "--config" {
            file = Some(it.next().context("--config needs a file")?);
        } else if let Some(p) = a.strip_prefix("--config=") {
            file = Some(p.to_string());
        } else {
            rest.push(a);
        }
    }
    let Some(file) = file else {
        return Ok(rest);
    };
    let text = fs::read_to_string(&file).with_context(|| format!("--config {file}"))?;
    let mut injected = Vec::new();
    for (k, v) in parse_kv(&text).with_context(|| format!("--config {file}"))? {
        let flag = format!("--{}", k.replace('_', "-"));
        match v.as_str() {
            "true" => injected.push(flag),
            "false" => {}
            _ => {
                injected.push(flag);
                injected.push(v);
            }
        }
    }
    // argv[0] and the subcommand come first.
    let at = rest.len().min(2);
    rest.splice(at..at, injected);
    Ok(rest)
}

fn dims(v: &str) -> Result<Vec<usize>> {
    v.split(',')
        .map(|d| {
            d.trim()
                .parse::<usize>()
                .with_context(|| format!("bad width {d:?}"))
        })
        .collect()
}

/// `desk` (scaled to the grid), `paper`, or a file with `attr_dims`,
/// `enc_dims`, `latent_dim` and optionally `input_pixels`.
pub fn parse_arch(spec: &str, input_pixels: usize) -> Result<ArchConfig> {
    let arch = match spec {
        "desk" => ArchConfig::desk_for(input_pixels),
        "paper" => ArchConfig::paper(),
        path => {
            let text =
                fs::read_to_string(Path::new(path)).with_context(|| format!("--arch {path}"))?;
            let mut arch = ArchConfig {
                input_pixels,
                attr_dims: Vec::new(),
                enc_dims: Vec::new(),
                latent_dim: 0,
            };
            for (k, v) in parse_kv(&text).with_context(|| format!("--arch {path}"))? {
                match k.as_str() {
                    "input_pixels" => arch.input_pixels = v.parse().context("input_pixels")?,
                    "attr_dims" => arch.attr_dims = dims(&v).context("attr_dims")?,
                    "enc_dims" => arch.enc_dims = dims(&v).context("enc_dims")?,
                    "latent_dim" => arch.latent_dim = v.parse().context("latent_dim")?,
                    other => bail!("--arch {path}: unknown key {other:?}"),
                }
            }
            arch
        }
    };
    arch.validate().with_context(|| format!("--arch {spec}"))?;
    if arch.input_pixels != input_pixels {
        bail!(
            "--arch {spec}: architecture takes {} pixels, the grid has {input_pixels}",
            arch.input_pixels
        );
    }
    Ok(arch)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn args(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn kv_parsing() {
        let kv = parse_kv("# c\nseed = 7\n\nepochs=3 # trailing\n").unwrap();
        assert_eq!(
            kv,
            vec![("seed".into(), "7".into()), ("epochs".into(), "3".into())]
        );
        assert!(parse_kv("novalue\n").is_err());
        assert!(parse_kv("=3\n").is_err());
    }

    #[test]
    fn config_flags_go_before_user_flags() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.cfg");
        fs::write(&p, "seed=1\nfit_prior=true\nclimatology=false\n").unwrap();
        let out = expand_config(args(&[
            "gapfill",
            "eval",
            "--seed",
            "2",
            "--config",
            p.to_str().unwrap(),
        ]))
        .unwrap();
        assert_eq!(
            out,
            args(&[
                "gapfill",
                "eval",
                "--seed",
                "1",
                "--fit-prior",
                "--seed",
                "2"
            ])
        );
    }

    #[test]
    fn arch_specs() {
        assert_eq!(parse_arch("desk", 1024).unwrap(), ArchConfig::desk());
        assert!(parse_arch("paper", 1024).is_err());
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.cfg");
        fs::write(&p, "attr_dims=8,4\nenc_dims=6\nlatent_dim=2\n").unwrap();
        let a = parse_arch(p.to_str().unwrap(), 16).unwrap();
        assert_eq!(
            (a.attr_dims, a.enc_dims, a.latent_dim),
            (vec![8, 4], vec![6], 2)
        );
        fs::write(&p, "attr_dims=8,x\n").unwrap();
        assert!(parse_arch(p.to_str().unwrap(), 16).is_err());
    }
}
