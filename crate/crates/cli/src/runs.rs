//! Run directories: naming, the single-writer lock, the resolved-config
//! snapshot and the line-delimited JSON event log.

use crate::config::RunConfig;
use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

pub const LOCK_NAME: &str = ".uvforge.lock";
pub const SNAPSHOT_NAME: &str = "config.resolved.toml";
pub const EVENTS_NAME: &str = "events.jsonl";

pub struct RunDir {
    pub path: PathBuf,
    events: std::fs::File,
    start: std::time::Instant,
}

/// Create (or adopt) the run directory, take the lock, snapshot the config.
pub fn open_run(out: Option<&Path>, cfg: &RunConfig) -> std::io::Result<RunDir> {
    let path = match out {
        Some(p) => p.to_path_buf(),
        None => {
            let ts = SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .unwrap_or_default()
                .as_secs();
            PathBuf::from(format!("runs/{ts}-{:08x}", cfg.fingerprint() as u32))
        }
    };
    std::fs::create_dir_all(&path)?;
    // single writer per directory
    OpenOptions::new()
        .write(true)
        .create_new(true)
        .open(path.join(LOCK_NAME))
        .map_err(|e| {
            if e.kind() == std::io::ErrorKind::AlreadyExists {
                std::io::Error::new(
                    std::io::ErrorKind::AlreadyExists,
                    format!(
                        "run directory {} is locked by another invocation (remove {} if stale)",
                        path.display(),
                        LOCK_NAME
                    ),
                )
            } else {
                e
            }
        })?;
    std::fs::write(path.join(SNAPSHOT_NAME), cfg.snapshot())?;
    let events = OpenOptions::new()
        .create(true)
        .append(true)
        .open(path.join(EVENTS_NAME))?;
    Ok(RunDir {
        path,
        events,
        start: std::time::Instant::now(),
    })
}

impl RunDir {
    /// Append one event line: `{"event":..., "step":..., ...,"wallclock":s}`.
    pub fn log(&mut self, event: &str, fields: &[(&str, String)]) {
        let mut line = format!("{{\"event\":\"{event}\"");
        for (k, v) in fields {
            line.push_str(&format!(",\"{k}\":{v}"));
        }
        line.push_str(&format!(
            ",\"wallclock\":{:.3}}}\n",
            self.start.elapsed().as_secs_f64()
        ));
        let _ = self.events.write_all(line.as_bytes());
    }

    pub fn release(self) {
        let _ = std::fs::remove_file(self.path.join(LOCK_NAME));
    }
}

impl Drop for RunDir {
    fn drop(&mut self) {
        let _ = std::fs::remove_file(self.path.join(LOCK_NAME));
    }
}
