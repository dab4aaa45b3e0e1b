//! Little-endian checkpoint container:
//!
//! ```text
//! magic[4] | u32 version | u64 header_len | header JSON | f64 × N
//! ```
//!
//! The header carries caller metadata plus a tensor manifest (name, shape);
//! `N` is the manifest's total element count and the stream must end exactly
//! after the last value.

use std::io::{self, Read, Write};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ContainerError {
    #[error("bad magic {found:?}, expected {expected:?}")]
    Magic { found: [u8; 4], expected: [u8; 4] },
    #[error("unsupported checkpoint version {0}")]
    Version(u32),
    #[error("checkpoint truncated")]
    Truncated,
    #[error("trailing bytes after checkpoint payload")]
    Trailing,
    #[error("malformed checkpoint header: {0}")]
    Header(#[from] serde_json::Error),
    #[error("manifest does not match payload: {0}")]
    Manifest(String),
    #[error("i/o error: {0}")]
    Io(io::Error),
}

impl From<io::Error> for ContainerError {
    fn from(e: io::Error) -> Self {
        if e.kind() == io::ErrorKind::UnexpectedEof {
            ContainerError::Truncated
        } else {
            ContainerError::Io(e)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
}

impl TensorEntry {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Serialize, Deserialize)]
struct Header<M> {
    meta: M,
    manifest: Vec<TensorEntry>,
}

pub fn write<W: Write, M: Serialize>(
    mut sink: W,
    magic: [u8; 4],
    meta: &M,
    tensors: &[(TensorEntry, &[f64])],
) -> Result<(), ContainerError> {
    for (entry, data) in tensors {
        if entry.len() != data.len() {
            return Err(ContainerError::Manifest(entry.name.clone()));
        }
    }
    let header = Header { meta, manifest: tensors.iter().map(|(e, _)| e.clone()).collect() };
    let json = serde_json::to_vec(&header)?;
    sink.write_all(&magic)?;
    sink.write_all(&VERSION.to_le_bytes())?;
    sink.write_all(&(json.len() as u64).to_le_bytes())?;
    sink.write_all(&json)?;
    let mut buf = Vec::with_capacity(8 * tensors.iter().map(|(e, _)| e.len()).sum::<usize>());
    for (_, data) in tensors {
        for v in *data {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    sink.write_all(&buf)?;
    sink.flush()?;
    Ok(())
}

/// Metadata, manifest and one value vector per manifest entry.
pub type Payload<M> = (M, Vec<TensorEntry>, Vec<Vec<f64>>);

pub fn read<R: Read, M: DeserializeOwned>(mut source: R, magic: [u8; 4]) -> Result<Payload<M>, ContainerError> {
    let mut found = [0u8; 4];
    source.read_exact(&mut found)?;
    if found != magic {
        return Err(ContainerError::Magic { found, expected: magic });
    }
    let mut word = [0u8; 4];
    source.read_exact(&mut word)?;
    let version = u32::from_le_bytes(word);
    if version != VERSION {
        return Err(ContainerError::Version(version));
    }
    let mut len = [0u8; 8];
    source.read_exact(&mut len)?;
    let len = u64::from_le_bytes(len) as usize;
    // Guard against absurd lengths from corrupt input before allocating.
    let mut json = Vec::new();
    (&mut source).take(len as u64).read_to_end(&mut json)?;
    if json.len() != len {
        return Err(ContainerError::Truncated);
    }
    let header: Header<M> = serde_json::from_slice(&json)?;

    let total: usize = header.manifest.iter().map(TensorEntry::len).sum();
    let mut raw = Vec::new();
    (&mut source).take(total as u64 * 8).read_to_end(&mut raw)?;
    if raw.len() != total * 8 {
        return Err(ContainerError::Truncated);
    }
    let mut probe = [0u8; 1];
    if source.read(&mut probe)? != 0 {
        return Err(ContainerError::Trailing);
    }
    let mut values = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")));
    let tensors = header.manifest.iter().map(|e| values.by_ref().take(e.len()).collect()).collect();
    Ok((header.meta, header.manifest, tensors))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Vec<u8> {
        let a = [1.0, -2.5, f64::MIN_POSITIVE];
        let b = [0.1];
        let mut buf = Vec::new();
        write(
            &mut buf,
            *b"TEST",
            &"meta",
            &[
                (TensorEntry { name: "a".into(), shape: vec![3] }, &a[..]),
                (TensorEntry { name: "b".into(), shape: vec![1, 1] }, &b[..]),
            ],
        )
        .unwrap();
        buf
    }

    #[test]
    fn round_trip_bit_exact() {
        let (meta, manifest, tensors): Payload<String> = read(sample().as_slice(), *b"TEST").unwrap();
        assert_eq!(meta, "meta");
        assert_eq!(manifest[1].shape, vec![1, 1]);
        assert_eq!(tensors[0][2].to_bits(), f64::MIN_POSITIVE.to_bits());
        assert_eq!(tensors[1], vec![0.1]);
    }

    #[test]
    fn layout_prefix() {
        let buf = sample();
        assert_eq!(&buf[..4], b"TEST");
        assert_eq!(u32::from_le_bytes(buf[4..8].try_into().unwrap()), 1);
    }

    #[test]
    fn corruption_is_detected() {
        let buf = sample();
        let truncated = &buf[..buf.len() - 1];
        assert!(matches!(read::<_, String>(truncated, *b"TEST"), Err(ContainerError::Truncated)));
        assert!(matches!(read::<_, String>(&buf[..10], *b"TEST"), Err(ContainerError::Truncated)));
        let mut extra = buf.clone();
        extra.push(0);
        assert!(matches!(read::<_, String>(extra.as_slice(), *b"TEST"), Err(ContainerError::Trailing)));
        assert!(matches!(read::<_, String>(buf.as_slice(), *b"NOPE"), Err(ContainerError::Magic { .. })));
        let mut v2 = buf.clone();
        v2[4] = 2;
        assert!(matches!(read::<_, String>(v2.as_slice(), *b"TEST"), Err(ContainerError::Version(2))));
    }
}
