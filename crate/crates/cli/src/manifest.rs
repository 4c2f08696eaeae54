//! `manifest.txt`: what produced a run directory and how to produce it again.

use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use wsseg::dataio::write_file;
use wsseg::Result;

pub const MANIFEST_FILE: &str = "manifest.txt";

#[derive(Clone, Debug, PartialEq)]
pub struct RunManifest {
    pub command: String,
    /// Full argument vector; re-running it reproduces the artifacts.
    pub args: Vec<String>,
    pub seed: Option<u64>,
    /// Config snapshot, one `key=value` per line.
    pub config: Option<String>,
    pub version: String,
    pub started: u64,
    pub finished: u64,
    pub outputs: Vec<PathBuf>,
}

pub fn unix_now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

impl RunManifest {
    pub fn new(command: &str, args: Vec<String>) -> Self {
        RunManifest {
            command: command.to_string(),
            args,
            seed: None,
            config: None,
            version: format!("wsseg {}", env!("CARGO_PKG_VERSION")),
            started: unix_now(),
            finished: 0,
            outputs: Vec::new(),
        }
    }

    pub fn to_text(&self) -> String {
        let mut s = format!(
            "command: {}\nargs: {}\nversion: {}\nstarted_unix: {}\nfinished_unix: {}\n",
            self.command,
            self.args.join(" "),
            self.version,
            self.started,
            self.finished
        );
        if let Some(seed) = self.seed {
            s.push_str(&format!("seed: {seed}\n"));
        }
        s.push_str("outputs:\n");
        for o in &self.outputs {
            s.push_str(&format!("  {}\n", o.display()));
        }
        if let Some(cfg) = &self.config {
            s.push_str("config:\n");
            for line in cfg.lines() {
                s.push_str(&format!("  {line}\n"));
            }
        }
        s
    }

    /// Stamps the finish time and writes `dir/manifest.txt`.
    pub fn finish(mut self, dir: &Path) -> Result<()> {
        self.finished = unix_now();
        write_file(dir.join(MANIFEST_FILE), self.to_text().as_bytes())
    }
}
