//! Append-only JSON-lines journal for an evaluation session: a header line
//! with the session, then one line per accepted judgment.

use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use mirror_core::evaluation::{EvalSession, Judgment};
use serde::{Deserialize, Serialize};

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "lowercase")]
enum Entry {
    Session(EvalSession),
    Judgment(Judgment),
}

#[derive(Debug)]
pub struct Journal {
    path: PathBuf,
    file: File,
}

impl Journal {
    /// Start a journal for a fresh session. Fails if the file exists.
    pub fn create(path: &Path, session: &EvalSession) -> Result<Self> {
        let mut file = OpenOptions::new()
            .write(true)
            .create_new(true)
            .open(path)
            .with_context(|| format!("creating journal {}", path.display()))?;
        let mut line = serde_json::to_vec(&Entry::Session(session.header()))?;
        line.push(b'\n');
        file.write_all(&line)?;
        file.sync_all()?;
        let mut j = Self {
            path: path.to_path_buf(),
            file,
        };
        for judgment in &session.judgments {
            j.append(judgment)?;
        }
        Ok(j)
    }

    /// Rebuild the session recorded in `path` and reopen it for appending.
    pub fn open(path: &Path) -> Result<(Self, EvalSession)> {
        let session = replay(path)?;
        let bytes = std::fs::read(path)?;
        let keep = bytes.iter().rposition(|&b| b == b'\n').map_or(0, |i| i + 1);
        let file = OpenOptions::new()
            .append(true)
            .open(path)
            .with_context(|| format!("opening journal {}", path.display()))?;
        if keep < bytes.len() {
            file.set_len(keep as u64)?;
        }
        Ok((
            Self {
                path: path.to_path_buf(),
                file,
            },
            session,
        ))
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    /// Durably append one judgment; returns once the data is on disk.
    pub fn append(&mut self, judgment: &Judgment) -> Result<()> {
        let mut line = serde_json::to_vec(&Entry::Judgment(judgment.clone()))?;
        line.push(b'\n');
        self.file.write_all(&line)?;
        self.file.sync_data()?;
        Ok(())
    }
}

/// Reconstruct a session from its journal. A torn final line (crash during
/// a write that was never acknowledged) is ignored.
pub fn replay(path: &Path) -> Result<EvalSession> {
    let f = File::open(path).with_context(|| format!("opening journal {}", path.display()))?;
    let lines: Vec<String> = BufReader::new(f).lines().collect::<std::io::Result<_>>()?;
    let mut header = None;
    let mut judgments = Vec::new();
    let last = lines.len().saturating_sub(1);
    for (i, line) in lines.iter().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let entry: Entry = match serde_json::from_str(line) {
            Ok(e) => e,
            Err(_) if i == last && header.is_some() => break,
            Err(e) => return Err(e).with_context(|| format!("{} line {}", path.display(), i + 1)),
        };
        match entry {
            Entry::Session(s) if header.is_none() => header = Some(s),
            Entry::Session(_) => bail!("{} line {}: second session header", path.display(), i + 1),
            Entry::Judgment(_) if header.is_none() => bail!("{}: judgment before session header", path.display()),
            Entry::Judgment(j) => judgments.push(j),
        }
    }
    let Some(header) = header else {
        bail!("{}: empty journal", path.display());
    };
    Ok(EvalSession::replay(header, judgments)?)
}
