use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use pamt::audio::{read_wav, write_wav, LabeledClip};
use serde::Serialize;

use crate::config::RunConfig;
use crate::CliError;

/// Identifies the tool version, seed and configuration behind an output.
#[derive(Debug, Clone, Serialize)]
pub struct Provenance {
    pub tool: &'static str,
    pub version: &'static str,
    pub seed: u64,
    pub config_sha256: String,
    pub command: String,
}

impl Provenance {
    pub fn new(cfg: &RunConfig, command: &str) -> Self {
        Self {
            tool: "pamt",
            version: env!("CARGO_PKG_VERSION"),
            seed: cfg.seed,
            config_sha256: cfg.hash(),
            command: command.to_string(),
        }
    }

    fn header(&self) -> String {
        format!(
            "# {} {} | command {} | seed {} | config sha256 {}\n",
            self.tool, self.version, self.command, self.seed, self.config_sha256
        )
    }
}

pub fn create_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir)
        .with_context(|| format!("creating {}", dir.display()))
        .map_err(CliError::Runtime)
}

/// Writes an RFC 4180 table preceded by `#` comment lines carrying the
/// provenance and any protocol notes.
pub fn write_csv<R: Serialize>(path: &Path, prov: &Provenance, notes: &[&str], rows: &[R]) -> Result<(), CliError> {
    let mut body = Vec::new();
    {
        let mut w = csv::Writer::from_writer(&mut body);
        for r in rows {
            w.serialize(r).map_err(|e| CliError::Runtime(e.into()))?;
        }
        w.flush().map_err(|e| CliError::Runtime(e.into()))?;
    }
    let mut out = prov.header();
    for n in notes {
        out.push_str(&format!("# {n}\n"));
    }
    let mut f = fs::File::create(path)
        .with_context(|| format!("creating {}", path.display()))
        .map_err(CliError::Runtime)?;
    f.write_all(out.as_bytes())
        .and_then(|_| f.write_all(&body))
        .with_context(|| format!("writing {}", path.display()))
        .map_err(CliError::Runtime)
}

pub fn write_json<T: Serialize>(path: &Path, prov: &Provenance, key: &str, value: &T) -> Result<(), CliError> {
    let doc = serde_json::json!({ "provenance": prov, key: value });
    let text = serde_json::to_string_pretty(&doc).map_err(|e| CliError::Runtime(e.into()))?;
    fs::write(path, text + "\n")
        .with_context(|| format!("writing {}", path.display()))
        .map_err(CliError::Runtime)
}

pub fn csv_reader(path: &Path) -> Result<csv::Reader<fs::File>, CliError> {
    let f = fs::File::open(path)
        .with_context(|| format!("opening {}", path.display()))
        .map_err(CliError::Runtime)?;
    Ok(csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(f))
}

#[derive(Debug, Serialize, serde::Deserialize)]
pub struct LabelRow {
    pub clip_id: String,
    pub label: usize,
}

pub const LABELS_FILE: &str = "labels.csv";

pub fn write_corpus(dir: &Path, corpus: &[LabeledClip], prov: &Provenance) -> Result<(), CliError> {
    create_dir(dir)?;
    for c in corpus {
        write_wav(&c.clip, dir.join(format!("{}.wav", c.id)))?;
    }
    let rows: Vec<LabelRow> = corpus
        .iter()
        .map(|c| LabelRow {
            clip_id: c.id.clone(),
            label: c.label,
        })
        .collect();
    write_csv(&dir.join(LABELS_FILE), prov, &[], &rows)
}

/// Reads a directory written by `synth`: `labels.csv` plus one WAV per clip.
pub fn read_corpus(dir: &Path) -> Result<Vec<LabeledClip>, CliError> {
    let labels = dir.join(LABELS_FILE);
    if !labels.exists() {
        return Err(CliError::Validation(format!("corpus: {} not found", labels.display())));
    }
    let mut out = Vec::new();
    for row in csv_reader(&labels)?.deserialize::<LabelRow>() {
        let row = row.map_err(|e| CliError::Validation(format!("corpus labels: {e}")))?;
        let clip = read_wav(dir.join(format!("{}.wav", row.clip_id)))?;
        out.push(LabeledClip {
            id: row.clip_id,
            label: row.label,
            clip,
        });
    }
    if out.is_empty() {
        return Err(CliError::Validation("corpus: labels.csv lists no clips".into()));
    }
    Ok(out)
}

/// Files in `dir` with extension `ext`, sorted by name.
pub fn files_with_ext(dir: &Path, ext: &str) -> Result<Vec<PathBuf>, CliError> {
    let mut v: Vec<PathBuf> = fs::read_dir(dir)
        .with_context(|| format!("listing {}", dir.display()))
        .map_err(CliError::Runtime)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == ext))
        .collect();
    v.sort();
    Ok(v)
}

pub fn stem(path: &Path) -> Result<String, CliError> {
    path.file_stem()
        .and_then(|s| s.to_str())
        .map(str::to_string)
        .ok_or_else(|| CliError::Runtime(anyhow!("unusable file name {}", path.display())))
}
