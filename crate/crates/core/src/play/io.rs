use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{LabelSet, Play};
use crate::error::{Error, Result};

/// One JSONL line: the play plus its labels.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlayRecord {
    #[serde(flatten)]
    pub play: Play,
    #[serde(default)]
    pub labels: LabelSet,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ParseConfig {
    pub required_defenders: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LineError {
    /// 1-based line number.
    pub line: usize,
    pub reason: String,
}

#[derive(Clone, Debug, Default)]
pub struct ParseReport {
    pub plays: Vec<(Play, LabelSet)>,
    pub errors: Vec<LineError>,
}

/// Parses and validates a single JSONL line.
pub fn parse_line(line: &str, cfg: &ParseConfig) -> std::result::Result<(Play, LabelSet), String> {
    let rec: PlayRecord = serde_json::from_str(line).map_err(|e| format!("schema: {e}"))?;
    let ev = &rec.play.events;
    if ev.pass_forward.is_none() {
        return Err("missing event: pass_forward".into());
    }
    if ev.pass_arrival.is_none() {
        return Err("missing event: pass_arrival".into());
    }
    rec.play.validate(cfg.required_defenders)?;
    rec.labels.validate(&rec.play)?;
    Ok((rec.play, rec.labels))
}

pub fn parse_plays_str(text: &str, cfg: &ParseConfig) -> ParseReport {
    let mut report = ParseReport::default();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        match parse_line(line, cfg) {
            Ok(p) => report.plays.push(p),
            Err(reason) => report.errors.push(LineError { line: i + 1, reason }),
        }
    }
    report
}

/// Reads a JSONL play file. Bad lines become [`LineError`]s; an unreadable file
/// is fatal.
pub fn parse_plays(path: impl AsRef<Path>, cfg: &ParseConfig) -> Result<ParseReport> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(parse_plays_str(&text, cfg))
}

pub fn write_plays<'a, W: Write>(
    out: &mut W,
    plays: impl IntoIterator<Item = (&'a Play, &'a LabelSet)>,
) -> Result<()> {
    for (play, labels) in plays {
        let rec = PlayRecord {
            play: play.clone(),
            labels: labels.clone(),
        };
        serde_json::to_writer(&mut *out, &rec)?;
        out.write_all(b"\n").map_err(|e| Error::io("<output>", e))?;
    }
    Ok(())
}
