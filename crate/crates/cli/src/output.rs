use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde_json::{json, Map, Value};

use crate::CliError;

/// `run.csv` -> `run.manifest.json`.
pub fn manifest_path(csv: &Path) -> PathBuf {
    csv.with_extension("manifest.json")
}

/// Writes through a temporary file in the target directory and renames it
/// into place, so a failed run never leaves a partial file behind.
fn write_atomic(path: &Path, contents: &str) -> Result<(), CliError> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(contents.as_bytes())?;
    tmp.flush()?;
    tmp.persist(path).map_err(|e| CliError::Io(e.error))?;
    Ok(())
}

/// Everything one subcommand produced.
pub struct Artifact {
    pub command: &'static str,
    pub parameters: Value,
    /// Parameters that cannot influence the output for this configuration.
    pub inert: Vec<String>,
    pub csv: Option<(PathBuf, String)>,
    /// Extra manifest fields.
    pub extra: Map<String, Value>,
}

impl Artifact {
    pub fn new(command: &'static str, parameters: Value) -> Self {
        Self {
            command,
            parameters,
            inert: Vec::new(),
            csv: None,
            extra: Map::new(),
        }
    }

    pub fn inert<S: Into<String>>(&mut self, names: impl IntoIterator<Item = S>) {
        for n in names {
            let n = n.into();
            if !self.inert.contains(&n) {
                self.inert.push(n);
            }
        }
    }

    /// Writes the CSV and its manifest; removes the CSV again if the
    /// manifest cannot be written.
    pub fn write(mut self, started: Instant, threads: usize) -> Result<(), CliError> {
        let Some((path, body)) = self.csv.take() else {
            return Ok(());
        };
        self.inert.sort();
        let mut manifest = json!({
            "tool": "rmtq",
            "version": env!("CARGO_PKG_VERSION"),
            "command": self.command,
            "parameters": self.parameters,
            "inert": self.inert,
            "threads": threads,
            "csv": path.file_name().map(|f| f.to_string_lossy().into_owned()),
        });
        let obj = manifest.as_object_mut().expect("object literal");
        obj.extend(self.extra);
        write_atomic(&path, &body)?;
        obj.insert("wall_time_seconds".into(), json!(started.elapsed().as_secs_f64()));
        let text = serde_json::to_string_pretty(&manifest).map_err(|e| CliError::Usage(e.to_string()))?;
        if let Err(e) = write_atomic(&manifest_path(&path), &(text + "\n")) {
            let _ = std::fs::remove_file(&path);
            return Err(e);
        }
        Ok(())
    }
}
