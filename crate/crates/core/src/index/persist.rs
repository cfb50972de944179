//! Index persistence: a little-endian binary format plus a JSONL sidecar
//! for bulk loading.
//!
//! Binary layout:
//!
//! ```text
//! magic   8 bytes  "SNTIDX01"
//! version u32      currently 1
//! dim     u32
//! count   u64
//! entry*  entry_id u64
//!         vector   dim × f32
//!         caption, entity_id, image_uri, source_uri
//!                  each u32 length prefix + UTF-8 bytes
//! ```
//!
//! Vectors are stored normalized, exactly as held in memory, so a
//! save/load round trip reproduces query results bit for bit. The JSONL
//! sidecar carries raw entries (vectors base64-encoded little-endian f32)
//! and goes through [`EmbeddingIndex::add_entry`], i.e. through
//! normalization, on load.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use base64::engine::general_purpose::STANDARD as BASE64;
use base64::Engine;
use serde::{Deserialize, Serialize};

use super::{EmbeddingIndex, IndexEntry, IndexError, MAX_DIM, MIN_DIM};

const MAGIC: &[u8; 8] = b"SNTIDX01";
const VERSION: u32 = 1;
/// Upper bound on any string field; a corrupt length prefix fails cleanly
/// instead of attempting a multi-gigabyte allocation.
const MAX_STRING_LEN: usize = 16 * 1024 * 1024;

pub(super) fn save_index(index: &EmbeddingIndex, path: &Path) -> Result<(), IndexError> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(index.dim() as u32).to_le_bytes())?;
    w.write_all(&(index.len() as u64).to_le_bytes())?;
    for e in index.entries() {
        w.write_all(&e.entry_id.to_le_bytes())?;
        for &v in &e.vector {
            w.write_all(&v.to_le_bytes())?;
        }
        for s in [&e.caption, &e.entity_id, &e.image_uri, &e.source_uri] {
            w.write_all(&(s.len() as u32).to_le_bytes())?;
            w.write_all(s.as_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub(super) fn load_index(path: &Path) -> Result<EmbeddingIndex, IndexError> {
    let mut r = BufReader::new(File::open(path)?);

    let mut magic = [0u8; 8];
    read_header(&mut r, &mut magic)?;
    if &magic != MAGIC {
        return Err(IndexError::CorruptHeader(format!(
            "bad magic {:?}, expected {:?}",
            magic, MAGIC
        )));
    }
    let version = read_header_u32(&mut r)?;
    if version != VERSION {
        return Err(IndexError::CorruptHeader(format!(
            "unsupported version {version}, expected {VERSION}"
        )));
    }
    let dim = read_header_u32(&mut r)? as usize;
    if !(MIN_DIM..=MAX_DIM).contains(&dim) {
        return Err(IndexError::CorruptHeader(format!(
            "dimension {dim} out of range"
        )));
    }
    let count = {
        let mut buf = [0u8; 8];
        read_header(&mut r, &mut buf)?;
        u64::from_le_bytes(buf)
    };

    let mut index = EmbeddingIndex::new(dim)?;
    for i in 0..count {
        let entry = read_entry(&mut r, dim).map_err(|e| annotate_entry(e, i))?;
        index.insert_normalized(entry)?;
    }

    // The header promised exactly `count` entries; anything further means
    // the payload does not match its own declaration.
    let mut probe = [0u8; 1];
    match r.read(&mut probe)? {
        0 => Ok(index),
        _ => Err(IndexError::TruncatedPayload(format!(
            "trailing bytes after the {count} declared entries"
        ))),
    }
}

fn annotate_entry(e: IndexError, i: u64) -> IndexError {
    match e {
        IndexError::TruncatedPayload(msg) => {
            IndexError::TruncatedPayload(format!("entry {i}: {msg}"))
        }
        other => other,
    }
}

/// Header reads fail as `CorruptHeader`: a file too short for its own
/// header is not meaningfully "truncated payload".
fn read_header(r: &mut impl Read, buf: &mut [u8]) -> Result<(), IndexError> {
    r.read_exact(buf).map_err(|e| {
        if e.kind() == std::io::ErrorKind::UnexpectedEof {
            IndexError::CorruptHeader("file ends inside the header".to_string())
        } else {
            IndexError::IoFailure(e)
        }
    })
}

fn read_header_u32(r: &mut impl Read) -> Result<u32, IndexError> {
    let mut buf = [0u8; 4];
    read_header(r, &mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

fn read_entry(r: &mut impl Read, dim: usize) -> Result<IndexEntry, IndexError> {
    let entry_id = u64::from_le_bytes(read_payload::<8>(r)?);
    let mut vector = Vec::with_capacity(dim);
    for _ in 0..dim {
        vector.push(f32::from_le_bytes(read_payload::<4>(r)?));
    }
    let caption = read_string(r)?;
    let entity_id = read_string(r)?;
    let image_uri = read_string(r)?;
    let source_uri = read_string(r)?;
    Ok(IndexEntry {
        entry_id,
        vector,
        caption,
        entity_id,
        image_uri,
        source_uri,
    })
}

fn read_payload<const N: usize>(r: &mut impl Read) -> Result<[u8; N], IndexError> {
    let mut buf = [0u8; N];
    r.read_exact(&mut buf).map_err(|e| {
        if e.kind() == std::io::ErrorKind::UnexpectedEof {
            IndexError::TruncatedPayload("file ends mid-entry".to_string())
        } else {
            IndexError::IoFailure(e)
        }
    })?;
    Ok(buf)
}

fn read_string(r: &mut impl Read) -> Result<String, IndexError> {
    let len = u32::from_le_bytes(read_payload::<4>(r)?) as usize;
    if len > MAX_STRING_LEN {
        return Err(IndexError::TruncatedPayload(format!(
            "string length {len} exceeds the {MAX_STRING_LEN}-byte cap"
        )));
    }
    let mut buf = vec![0u8; len];
    r.read_exact(&mut buf).map_err(|e| {
        if e.kind() == std::io::ErrorKind::UnexpectedEof {
            IndexError::TruncatedPayload("file ends mid-string".to_string())
        } else {
            IndexError::IoFailure(e)
        }
    })?;
    String::from_utf8(buf)
        .map_err(|e| IndexError::TruncatedPayload(format!("invalid UTF-8 in string: {e}")))
}

/// JSONL sidecar row. The vector rides as base64 of the little-endian f32
/// bytes so the file stays line-oriented and diff-friendly.
#[derive(Serialize, Deserialize)]
struct SidecarRow {
    entry_id: u64,
    vector: String,
    caption: String,
    entity_id: String,
    image_uri: String,
    source_uri: String,
}

/// Read a JSONL sidecar into raw entries ready for
/// [`EmbeddingIndex::add_entry`]. Blank lines are skipped.
pub fn load_entries_jsonl(path: &Path) -> Result<Vec<IndexEntry>, IndexError> {
    let reader = BufReader::new(File::open(path)?);
    let mut entries = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let row: SidecarRow = serde_json::from_str(&line)
            .map_err(|e| IndexError::SchemaViolation(format!("line {}: {e}", lineno + 1)))?;
        let bytes = BASE64.decode(&row.vector).map_err(|e| {
            IndexError::SchemaViolation(format!("line {}: bad base64 vector: {e}", lineno + 1))
        })?;
        if bytes.len() % 4 != 0 {
            return Err(IndexError::SchemaViolation(format!(
                "line {}: vector byte length {} is not a multiple of 4",
                lineno + 1,
                bytes.len()
            )));
        }
        let vector = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        entries.push(IndexEntry {
            entry_id: row.entry_id,
            vector,
            caption: row.caption,
            entity_id: row.entity_id,
            image_uri: row.image_uri,
            source_uri: row.source_uri,
        });
    }
    Ok(entries)
}

/// Write entries as a JSONL sidecar (the inverse of
/// [`load_entries_jsonl`], modulo normalization on re-add).
pub fn write_entries_jsonl(entries: &[IndexEntry], path: &Path) -> Result<(), IndexError> {
    let mut w = BufWriter::new(File::create(path)?);
    for e in entries {
        let mut bytes = Vec::with_capacity(e.vector.len() * 4);
        for &v in &e.vector {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        let row = SidecarRow {
            entry_id: e.entry_id,
            vector: BASE64.encode(&bytes),
            caption: e.caption.clone(),
            entity_id: e.entity_id.clone(),
            image_uri: e.image_uri.clone(),
            source_uri: e.source_uri.clone(),
        };
        serde_json::to_writer(&mut w, &row)
            .map_err(|e| IndexError::SchemaViolation(e.to_string()))?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn sample_index(n: usize, dim: usize, seed: u64) -> EmbeddingIndex {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut idx = EmbeddingIndex::new(dim).unwrap();
        for id in 0..n {
            idx.add_entry(IndexEntry {
                entry_id: id as u64,
                vector: (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect(),
                caption: format!("caption {id} with spaces"),
                entity_id: format!("entity-{}", id % 7),
                image_uri: format!("img://{id}"),
                source_uri: format!("https://example.test/{id}"),
            })
            .unwrap();
        }
        idx
    }

    #[test]
    fn binary_round_trip_preserves_queries_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("idx.bin");
        let idx = sample_index(40, 8, 5);
        idx.save(&path).unwrap();
        let back = EmbeddingIndex::load(&path).unwrap();
        assert_eq!(back.dim(), idx.dim());
        assert_eq!(back.entries(), idx.entries());

        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..10 {
            let q: Vec<f32> = (0..8).map(|_| rng.random_range(-1.0..1.0)).collect();
            assert_eq!(idx.knn(&q, 5).unwrap(), back.knn(&q, 5).unwrap());
        }
    }

    #[test]
    fn empty_index_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("empty.bin");
        let idx = EmbeddingIndex::new(4).unwrap();
        idx.save(&path).unwrap();
        let back = EmbeddingIndex::load(&path).unwrap();
        assert_eq!(back.len(), 0);
        assert_eq!(back.dim(), 4);
    }

    #[test]
    fn corrupted_magic_and_version_fail_as_corrupt_header() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("idx.bin");
        sample_index(3, 4, 7).save(&path).unwrap();

        let mut bytes = std::fs::read(&path).unwrap();
        bytes[0] ^= 0xff;
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(
            EmbeddingIndex::load(&path),
            Err(IndexError::CorruptHeader(_))
        ));

        let mut bytes = std::fs::read(&path).unwrap();
        bytes[0] ^= 0xff; // restore magic
        bytes[8] = 99; // version
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(
            EmbeddingIndex::load(&path),
            Err(IndexError::CorruptHeader(_))
        ));
    }

    #[test]
    fn short_header_fails_as_corrupt_header() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("short.bin");
        std::fs::write(&path, b"SNTIDX01\x01\x00").unwrap();
        assert!(matches!(
            EmbeddingIndex::load(&path),
            Err(IndexError::CorruptHeader(_))
        ));
    }

    #[test]
    fn truncation_and_trailing_bytes_fail_as_truncated_payload() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("idx.bin");
        sample_index(3, 4, 9).save(&path).unwrap();
        let bytes = std::fs::read(&path).unwrap();

        let cut = bytes.len() - 7;
        std::fs::write(&path, &bytes[..cut]).unwrap();
        assert!(matches!(
            EmbeddingIndex::load(&path),
            Err(IndexError::TruncatedPayload(_))
        ));

        let mut extended = bytes.clone();
        extended.extend_from_slice(b"junk");
        std::fs::write(&path, &extended).unwrap();
        assert!(matches!(
            EmbeddingIndex::load(&path),
            Err(IndexError::TruncatedPayload(_))
        ));
    }

    #[test]
    fn missing_file_is_an_io_failure() {
        assert!(matches!(
            EmbeddingIndex::load(Path::new("/nonexistent/idx.bin")),
            Err(IndexError::IoFailure(_))
        ));
    }

    #[test]
    fn jsonl_sidecar_round_trip_rebuilds_equivalent_index() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("entries.jsonl");
        let idx = sample_index(20, 6, 13);
        write_entries_jsonl(idx.entries(), &path).unwrap();

        let mut rebuilt = EmbeddingIndex::new(6).unwrap();
        for e in load_entries_jsonl(&path).unwrap() {
            rebuilt.add_entry(e).unwrap();
        }
        // Re-adding renormalizes already-normalized vectors, so compare
        // retrieval results (ids and order), not raw bits.
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        for _ in 0..10 {
            let q: Vec<f32> = (0..6).map(|_| rng.random_range(-1.0..1.0)).collect();
            let a: Vec<u64> = idx
                .knn(&q, 5)
                .unwrap()
                .hits()
                .iter()
                .map(|h| h.entry_id)
                .collect();
            let b: Vec<u64> = rebuilt
                .knn(&q, 5)
                .unwrap()
                .hits()
                .iter()
                .map(|h| h.entry_id)
                .collect();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn jsonl_sidecar_rejects_malformed_rows() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.jsonl");

        std::fs::write(&path, "{\"entry_id\":1}\n").unwrap();
        assert!(matches!(
            load_entries_jsonl(&path),
            Err(IndexError::SchemaViolation(_))
        ));

        std::fs::write(
            &path,
            "{\"entry_id\":1,\"vector\":\"!!!\",\"caption\":\"\",\"entity_id\":\"\",\
             \"image_uri\":\"\",\"source_uri\":\"\"}\n",
        )
        .unwrap();
        assert!(matches!(
            load_entries_jsonl(&path),
            Err(IndexError::SchemaViolation(_))
        ));

        // 3 bytes is not a whole number of f32s.
        let b64 = BASE64.encode([1u8, 2, 3]);
        std::fs::write(
            &path,
            format!(
                "{{\"entry_id\":1,\"vector\":\"{b64}\",\"caption\":\"\",\"entity_id\":\"\",\
                 \"image_uri\":\"\",\"source_uri\":\"\"}}\n"
            ),
        )
        .unwrap();
        assert!(matches!(
            load_entries_jsonl(&path),
            Err(IndexError::SchemaViolation(_))
        ));
    }

    #[test]
    fn duplicate_ids_in_binary_file_are_rejected() {
        // Hand-build a file whose two entries share an id.
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("dup.bin");
        let mut idx = EmbeddingIndex::new(2).unwrap();
        idx.add_entry(IndexEntry {
            entry_id: 1,
            vector: vec![1.0, 0.0],
            caption: String::new(),
            entity_id: String::new(),
            image_uri: String::new(),
            source_uri: String::new(),
        })
        .unwrap();
        idx.save(&path).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        // Duplicate the single 32-byte entry and bump the count to 2.
        let entry_bytes = bytes[24..].to_vec();
        bytes.extend_from_slice(&entry_bytes);
        bytes[16..24].copy_from_slice(&2u64.to_le_bytes());
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(
            EmbeddingIndex::load(&path),
            Err(IndexError::DuplicateId(1))
        ));
    }
}
