//! JSON Lines helpers and atomic file output.

use std::fs;
use std::io::{self, BufRead, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum IoError {
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
    #[error("line {line}: {source}")]
    Json {
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error("serialization error: {0}")]
    Serialize(#[from] serde_json::Error),
}

/// Reads one JSON value per nonblank line.
pub fn read_jsonl<T: DeserializeOwned, R: BufRead>(reader: R) -> Result<Vec<T>, IoError> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|source| IoError::Json { line: i + 1, source })?);
    }
    Ok(out)
}

pub fn read_jsonl_file<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, IoError> {
    read_jsonl(io::BufReader::new(fs::File::open(path)?))
}

pub fn write_jsonl<'a, T, W, I>(mut writer: W, items: I) -> Result<(), IoError>
where
    T: Serialize + 'a,
    W: Write,
    I: IntoIterator<Item = &'a T>,
{
    for item in items {
        serde_json::to_writer(&mut writer, item)?;
        writer.write_all(b"\n")?;
    }
    Ok(())
}

/// Writes through a temporary file in the destination directory, then renames
/// it into place. Readers never observe a partially written file.
pub fn atomic_write<F, E>(path: &Path, body: F) -> Result<(), E>
where
    F: FnOnce(&mut dyn Write) -> Result<(), E>,
    E: From<io::Error>,
{
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    fs::create_dir_all(dir)?;
    let tmp = tempfile::NamedTempFile::new_in(dir)?;
    {
        let mut w = BufWriter::new(tmp.as_file());
        body(&mut w)?;
        w.flush()?;
    }
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| e.error)?;
    Ok(())
}

pub fn write_jsonl_file<'a, T, I>(path: &Path, items: I) -> Result<(), IoError>
where
    T: Serialize + 'a,
    I: IntoIterator<Item = &'a T>,
{
    atomic_write(path, |w| write_jsonl(w, items))
}

pub fn write_json_file<T: Serialize>(path: &Path, value: &T) -> Result<(), IoError> {
    atomic_write(path, |w| {
        serde_json::to_writer_pretty(&mut *w, value)?;
        w.write_all(b"\n")?;
        Ok(())
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn jsonl_round_trip_skips_blank_lines() {
        let mut buf = Vec::new();
        write_jsonl(&mut buf, &[1u32, 2, 3]).unwrap();
        buf.extend_from_slice(b"\n\n");
        let back: Vec<u32> = read_jsonl(buf.as_slice()).unwrap();
        assert_eq!(back, vec![1, 2, 3]);
    }

    #[test]
    fn bad_line_reports_line_number() {
        let err = read_jsonl::<u32, _>("1\nx\n".as_bytes()).unwrap_err();
        assert!(matches!(err, IoError::Json { line: 2, .. }));
    }

    #[test]
    fn atomic_write_replaces_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("sub").join("out.json");
        write_json_file(&path, &vec![1, 2]).unwrap();
        write_json_file(&path, &vec![3]).unwrap();
        let s = fs::read_to_string(&path).unwrap();
        assert_eq!(serde_json::from_str::<Vec<u32>>(&s).unwrap(), vec![3]);
        assert_eq!(fs::read_dir(path.parent().unwrap()).unwrap().count(), 1);
    }
}
