//! `FNCDB1` file format (little-endian):
//!
//! ```text
//! magic "FNCDB1"
//! key_dim u32 | entry_count u64 | has_class u8
//! per entry: key f32 x key_dim | value shape u32 x 3 | value f32 x c*h*w | class u16 (if has_class)
//! crc32 u32 over everything after the magic
//! ```

use std::fs;
use std::path::Path;

use super::{DbEntry, FeatureMap, PatchDatabase};
use crate::codec::{to_usize, Reader, Writer};
use crate::error::{Error, Result};

pub const DB_MAGIC: &[u8] = b"FNCDB1";

pub fn save(db: &PatchDatabase) -> Vec<u8> {
    let mut w = Writer::new(DB_MAGIC);
    let labelled = db.is_labelled();
    w.u32(db.key_dim() as u32);
    w.u64(db.len() as u64);
    w.u8(u8::from(labelled));
    for e in db.entries() {
        w.f32s(&e.key);
        let (c, h, wd) = e.value.shape();
        for d in [c, h, wd] {
            w.u32(d as u32);
        }
        w.f32s(e.value.data());
        if let Some(label) = e.class_label {
            w.u16(label);
        }
    }
    w.finish(DB_MAGIC.len())
}

pub fn load(bytes: &[u8]) -> Result<PatchDatabase> {
    let mut r = Reader::open(bytes, DB_MAGIC)?;
    let at = r.offset();
    let key_dim = r.u32()? as usize;
    if key_dim == 0 {
        return Err(Error::format(at, "key_dim is zero"));
    }
    let at = r.offset();
    let count = to_usize(r.u64()?, at, "entry count")?;
    let at = r.offset();
    let has_class = match r.u8()? {
        0 => false,
        1 => true,
        v => return Err(Error::format(at, format!("has_class flag {v}"))),
    };
    // smallest possible entry: key + shape + one value
    r.ensure(count, 4 * key_dim + 16)?;

    let mut entries = Vec::with_capacity(count);
    for _ in 0..count {
        let key = r.f32s(key_dim)?;
        let at = r.offset();
        let (c, h, w) = (r.u32()? as usize, r.u32()? as usize, r.u32()? as usize);
        let n = c
            .checked_mul(h)
            .and_then(|v| v.checked_mul(w))
            .filter(|&n| n > 0)
            .ok_or_else(|| Error::format(at, format!("bad value shape {c}x{h}x{w}")))?;
        let data = r.f32s(n)?;
        let value = FeatureMap::new(c, h, w, data).map_err(|e| Error::format(at, e.to_string()))?;
        let class_label = if has_class { Some(r.u16()?) } else { None };
        entries.push(DbEntry {
            key,
            value,
            class_label,
        });
    }
    let end = r.offset();
    r.finish()?;
    PatchDatabase::from_entries(key_dim, entries).map_err(|e| Error::format(end, e.to_string()))
}

pub fn write_file(db: &PatchDatabase, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, save(db))?;
    Ok(())
}

pub fn read_file(path: impl AsRef<Path>) -> Result<PatchDatabase> {
    load(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::patch_store::build_database;

    fn small_db(labelled: bool) -> PatchDatabase {
        let entries = (0..5)
            .map(|i| DbEntry {
                key: vec![i as f32, -0.5 * i as f32],
                value: FeatureMap::new(2, 1, 2, vec![i as f32; 4]).unwrap(),
                class_label: labelled.then_some(i % 2),
            })
            .collect();
        build_database(entries, 10, 0).unwrap()
    }

    #[test]
    fn empty_roundtrip() {
        let db = PatchDatabase::empty(7).unwrap();
        let bytes = save(&db);
        assert_eq!(&bytes[..6], DB_MAGIC);
        assert_eq!(load(&bytes).unwrap(), db);
    }

    #[test]
    fn labelled_and_unlabelled_roundtrip() {
        for labelled in [false, true] {
            let db = small_db(labelled);
            let back = load(&save(&db)).unwrap();
            assert_eq!(back, db);
            assert_eq!(back.class_index(), db.class_index());
        }
    }

    #[test]
    fn header_layout() {
        let bytes = save(&small_db(true));
        assert_eq!(u32::from_le_bytes(bytes[6..10].try_into().unwrap()), 2);
        assert_eq!(u64::from_le_bytes(bytes[10..18].try_into().unwrap()), 5);
        assert_eq!(bytes[18], 1);
    }

    #[test]
    fn corrupted_count_is_rejected() {
        let mut bytes = save(&small_db(false));
        bytes[10] = 0xff;
        match load(&bytes) {
            Err(Error::Format { offset, .. }) => assert_eq!(offset, bytes.len() - 4),
            other => panic!("expected format error, got {other:?}"),
        }
    }

    #[test]
    fn consistent_but_wrong_count_is_rejected() {
        // rewrite the count and re-seal the checksum: the parser itself must
        // catch the mismatch
        let mut bytes = save(&small_db(false));
        bytes[10..18].copy_from_slice(&1000u64.to_le_bytes());
        let n = bytes.len();
        let crc = crc32fast::hash(&bytes[6..n - 4]);
        bytes[n - 4..].copy_from_slice(&crc.to_le_bytes());
        assert!(matches!(
            load(&bytes),
            Err(Error::Format { offset: 19, .. })
        ));
    }

    #[test]
    fn truncation_is_rejected() {
        let bytes = save(&small_db(true));
        for cut in [0, 3, 6, 12, bytes.len() - 1] {
            assert!(matches!(load(&bytes[..cut]), Err(Error::Format { .. })));
        }
    }
}
