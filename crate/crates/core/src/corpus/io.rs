use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use super::{CorpusError, Dialogue};

/// Reads a dialogue JSONL file, validating every record.
///
/// Blank lines are skipped. With `require_gold`, every dialogue must carry
/// `gold_boundaries`.
pub fn load_dialogues(path: &Path, require_gold: bool) -> Result<Vec<Dialogue>, CorpusError> {
    let file = File::open(path).map_err(|source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    })?;
    read_dialogues(BufReader::new(file), require_gold).map_err(|e| match e {
        CorpusError::Io { source, .. } => CorpusError::Io {
            path: path.display().to_string(),
            source,
        },
        other => other,
    })
}

pub fn read_dialogues<R: BufRead>(reader: R, require_gold: bool) -> Result<Vec<Dialogue>, CorpusError> {
    let mut out = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line.map_err(|source| CorpusError::Io {
            path: "<reader>".into(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let dialogue: Dialogue = serde_json::from_str(&line).map_err(|source| CorpusError::Json {
            line: idx + 1,
            source,
        })?;
        dialogue.validate()?;
        if require_gold && dialogue.gold_boundaries.is_none() {
            return Err(CorpusError::Invalid {
                id: dialogue.id,
                field: "gold_boundaries",
                reason: "gold boundaries required but missing".into(),
            });
        }
        out.push(dialogue);
    }
    Ok(out)
}

pub fn save_dialogues(path: &Path, dialogues: &[Dialogue]) -> Result<(), CorpusError> {
    let io_err = |source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    };
    let file = File::create(path).map_err(io_err)?;
    let mut w = BufWriter::new(file);
    write_dialogues(&mut w, dialogues).map_err(io_err)?;
    w.flush().map_err(io_err)
}

pub fn write_dialogues<W: Write>(mut w: W, dialogues: &[Dialogue]) -> std::io::Result<()> {
    for d in dialogues {
        serde_json::to_writer(&mut w, d)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}
