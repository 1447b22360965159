#![allow(dead_code)]

pub mod stub;

use std::path::Path;
use std::process::Command;

pub struct Out {
    pub code: i32,
    pub stdout: String,
    pub stderr: String,
}

/// Runs the binary with `args`. `FDMPO_API_KEY` is cleared unless `env`
/// sets it.
pub fn ieqa(args: &[&str], env: &[(&str, &str)]) -> Out {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_ieqa"));
    cmd.args(args).env_remove("FDMPO_API_KEY");
    for (k, v) in env {
        cmd.env(k, v);
    }
    let out = cmd.output().expect("binary runs");
    Out {
        code: out.status.code().unwrap_or(-1),
        stdout: String::from_utf8_lossy(&out.stdout).into_owned(),
        stderr: String::from_utf8_lossy(&out.stderr).into_owned(),
    }
}

pub fn ok(args: &[&str]) -> Out {
    let out = ieqa(args, &[]);
    assert_eq!(out.code, 0, "ieqa {args:?} failed:\n{}", out.stderr);
    out
}

pub fn s(p: &Path) -> &str {
    p.to_str().expect("utf-8 temp path")
}

/// History file with the timestamp field removed from every record.
pub fn history_without_ts(path: &Path) -> Vec<serde_json::Value> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| {
            let mut v: serde_json::Value = serde_json::from_str(l).unwrap();
            v.as_object_mut().unwrap().remove("ts").expect("ts field present");
            v
        })
        .collect()
}

/// Training report with the wall-clock field removed.
pub fn report_without_clock(path: &Path) -> serde_json::Value {
    let mut v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap();
    v.as_object_mut()
        .unwrap()
        .remove("wall_clock_secs")
        .expect("clock field present");
    v
}
