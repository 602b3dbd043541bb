//! Report envelope, config loading and atomic file output.

use std::fs;
use std::io::{ErrorKind, Write};
use std::path::{Path, PathBuf};

use anyhow::anyhow;
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{CliError, CliResult};
use crate::CommonArgs;

pub const TOOL_NAME: &str = "scalelaw";

#[derive(Debug, Clone, Serialize)]
pub struct ToolInfo {
    pub name: &'static str,
    pub version: &'static str,
}

impl Default for ToolInfo {
    fn default() -> Self {
        Self {
            name: TOOL_NAME,
            version: env!("CARGO_PKG_VERSION"),
        }
    }
}

/// An input identified by content, never by path, so reports are
/// reproducible from anywhere.
#[derive(Debug, Clone, Serialize)]
pub struct InputRef {
    pub role: String,
    pub sha256: String,
}

/// Top-level JSON report shared by every command.
#[derive(Debug, Serialize)]
pub struct Report<T: Serialize> {
    pub tool: ToolInfo,
    pub command: &'static str,
    pub inputs: Vec<InputRef>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(flatten)]
    pub body: T,
    /// Names of the sibling `<report>.<section>.csv` files.
    pub csv_sections: Vec<String>,
    pub warnings: Vec<String>,
}

pub fn read_bytes(path: &Path) -> CliResult<Vec<u8>> {
    fs::read(path).map_err(|e| {
        if e.kind() == ErrorKind::NotFound {
            CliError::input(anyhow!("input file not found: {}", path.display()))
        } else {
            CliError::internal(anyhow!("cannot read {}: {e}", path.display()))
        }
    })
}

/// Parses the command's JSON config, or returns the default when absent.
pub fn load_config<T: DeserializeOwned + Default>(path: Option<&Path>) -> CliResult<T> {
    match path {
        None => Ok(T::default()),
        Some(p) => {
            let bytes = read_bytes(p)?;
            serde_json::from_slice(&bytes)
                .map_err(|e| CliError::input(anyhow!("config {}: {e}", p.display())))
        }
    }
}

/// `--output`, else `<output dir>/<default_name>`, else `./<default_name>`.
pub fn resolve_output(common: &CommonArgs, default_name: &str) -> PathBuf {
    match (&common.output, &common.output_dir) {
        (Some(p), _) => p.clone(),
        (None, Some(dir)) => dir.join(default_name),
        (None, None) => PathBuf::from(default_name),
    }
}

/// Writes via a temporary file in the target directory and renames it into place.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> CliResult<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    };
    fs::create_dir_all(&dir).map_err(|e| CliError::internal(anyhow!("cannot create {}: {e}", dir.display())))?;
    let mut tmp = tempfile::NamedTempFile::new_in(&dir)
        .map_err(|e| CliError::internal(anyhow!("cannot create temp file in {}: {e}", dir.display())))?;
    tmp.write_all(bytes)
        .and_then(|_| tmp.as_file().sync_all())
        .map_err(|e| CliError::internal(anyhow!("cannot write {}: {e}", path.display())))?;
    tmp.persist(path)
        .map_err(|e| CliError::internal(anyhow!("cannot move output into {}: {e}", path.display())))?;
    Ok(())
}

/// `<stem>.<section>.csv` next to a report at `report`.
pub fn section_path(report: &Path, section: &str) -> PathBuf {
    let stem = match report.extension() {
        Some(ext) if ext == "json" => report.with_extension(""),
        _ => report.to_path_buf(),
    };
    let mut name = stem.file_name().map(|s| s.to_os_string()).unwrap_or_default();
    name.push(format!(".{section}.csv"));
    stem.with_file_name(name)
}

/// A CSV section under construction.
pub struct CsvSection {
    pub name: &'static str,
    writer: csv::Writer<Vec<u8>>,
}

impl CsvSection {
    pub fn new(name: &'static str, header: &[&str]) -> Self {
        let mut writer = csv::Writer::from_writer(Vec::new());
        writer.write_record(header).expect("writing to memory cannot fail");
        Self { name, writer }
    }

    pub fn row<I, S>(&mut self, fields: I)
    where
        I: IntoIterator<Item = S>,
        S: AsRef<[u8]>,
    {
        self.writer.write_record(fields).expect("writing to memory cannot fail");
    }

    fn into_bytes(self) -> Vec<u8> {
        self.writer.into_inner().expect("writing to memory cannot fail")
    }
}

/// Writes the report JSON and its CSV sections.
pub fn emit<T: Serialize>(
    path: &Path,
    command: &'static str,
    inputs: Vec<InputRef>,
    seed: Option<u64>,
    body: T,
    sections: Vec<CsvSection>,
    warnings: Vec<String>,
) -> CliResult<()> {
    let report = Report {
        tool: ToolInfo::default(),
        command,
        inputs,
        seed,
        body,
        csv_sections: sections.iter().map(|s| s.name.to_string()).collect(),
        warnings,
    };
    for w in &report.warnings {
        log::warn!("{w}");
    }
    let mut json = serde_json::to_vec_pretty(&report).map_err(CliError::internal)?;
    json.push(b'\n');
    for s in sections {
        let p = section_path(path, s.name);
        atomic_write(&p, &s.into_bytes())?;
    }
    atomic_write(path, &json)?;
    log::info!("wrote {}", path.display());
    Ok(())
}
