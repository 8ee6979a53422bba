#![allow(dead_code)]

use std::path::Path;
use std::process::{Command, Output};

pub fn gapfill(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gapfill"))
        .args(args)
        .current_dir(dir)
        .env_remove("GAPFILL_THREADS")
        .output()
        .expect("spawn gapfill")
}

/// Runs and panics with stderr on a nonzero exit.
pub fn ok(dir: &Path, args: &[&str]) -> Output {
    let out = gapfill(dir, args);
    assert!(
        out.status.success(),
        "gapfill {}: {}",
        args.join(" "),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

pub fn read(dir: &Path, name: &str) -> Vec<u8> {
    std::fs::read(dir.join(name)).unwrap_or_else(|e| panic!("{name}: {e}"))
}

pub fn small_synth(dir: &Path, name: &str, seed: &str) {
    ok(
        dir,
        &[
            "synth", "--output", name, "--seed", seed, "--height", "16", "--width", "16", "--days",
            "120",
        ],
    );
}
