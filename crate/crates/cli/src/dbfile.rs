//! On-disk database format.
//!
//! ```text
//! "PCSIDB" | version u8 | q u16 | K u16 | m u16 | K·m element words
//! ```
//! All integers little-endian; elements are message-major.

use std::path::Path;

use pcsi_core::{Database, FieldParams};
use thiserror::Error;

pub const MAGIC: &[u8; 6] = b"PCSIDB";
pub const VERSION: u8 = 0x01;
pub const HEADER_LEN: usize = 13;

#[derive(Debug, Error)]
pub enum DbFileError {
    #[error("bad database magic")]
    BadMagic,
    #[error("unsupported database version {0}")]
    BadVersion(u8),
    #[error("database file is {have} bytes, expected {expected}")]
    Length { have: usize, expected: usize },
    #[error("element {value} at offset {offset} not below q = {q}")]
    ElementOutOfRange { value: u16, offset: usize, q: u16 },
    #[error(transparent)]
    Core(#[from] pcsi_core::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub fn encode(db: &Database) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + 2 * db.k() * db.message_len());
    out.extend_from_slice(MAGIC);
    out.push(VERSION);
    out.extend_from_slice(&db.field().modulus().to_le_bytes());
    out.extend_from_slice(&(db.k() as u16).to_le_bytes());
    out.extend_from_slice(&(db.message_len() as u16).to_le_bytes());
    for msg in db.messages() {
        for e in msg {
            out.extend_from_slice(&e.value().to_le_bytes());
        }
    }
    out
}

pub fn decode(bytes: &[u8]) -> Result<Database, DbFileError> {
    if bytes.len() < HEADER_LEN {
        return Err(DbFileError::Length {
            have: bytes.len(),
            expected: HEADER_LEN,
        });
    }
    if &bytes[..6] != MAGIC {
        return Err(DbFileError::BadMagic);
    }
    if bytes[6] != VERSION {
        return Err(DbFileError::BadVersion(bytes[6]));
    }
    let word = |at: usize| u16::from_le_bytes([bytes[at], bytes[at + 1]]);
    let q = word(7);
    let k = word(9) as usize;
    let m = word(11) as usize;
    let expected = HEADER_LEN + 2 * k * m;
    if bytes.len() != expected {
        return Err(DbFileError::Length {
            have: bytes.len(),
            expected,
        });
    }
    let field = FieldParams::new(q as u32)?;
    let mut messages = Vec::with_capacity(k);
    for i in 0..k {
        let mut msg = Vec::with_capacity(m);
        for j in 0..m {
            let offset = HEADER_LEN + 2 * (i * m + j);
            let value = word(offset);
            let e = field
                .try_elem(value)
                .map_err(|_| DbFileError::ElementOutOfRange { value, offset, q })?;
            msg.push(e);
        }
        messages.push(msg);
    }
    Ok(Database::new(field, messages)?)
}

pub fn read(path: &Path) -> Result<Database, DbFileError> {
    decode(&std::fs::read(path)?)
}

pub fn write(path: &Path, db: &Database) -> Result<(), DbFileError> {
    std::fs::write(path, encode(db))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn layout_and_round_trip() {
        let f = FieldParams::new(5).unwrap();
        let db = Database::new(f, vec![vec![f.elem(2)], vec![f.elem(3)], vec![f.elem(4)]]).unwrap();
        let bytes = encode(&db);
        assert_eq!(
            bytes,
            [b'P', b'C', b'S', b'I', b'D', b'B', 1, 5, 0, 3, 0, 1, 0, 2, 0, 3, 0, 4, 0]
        );
        assert_eq!(decode(&bytes).unwrap(), db);

        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let f = FieldParams::new(65_521).unwrap();
        let db = Database::random(f, 7, 11, &mut rng).unwrap();
        let bytes = encode(&db);
        assert_eq!(bytes.len(), HEADER_LEN + 2 * 7 * 11);
        assert_eq!(decode(&bytes).unwrap(), db);
    }

    #[test]
    fn rejections() {
        let f = FieldParams::new(5).unwrap();
        let db = Database::new(f, vec![vec![f.elem(2)], vec![f.elem(3)]]).unwrap();
        let good = encode(&db);

        let mut bad = good.clone();
        bad[0] = b'X';
        assert!(matches!(decode(&bad), Err(DbFileError::BadMagic)));
        let mut bad = good.clone();
        bad[6] = 9;
        assert!(matches!(decode(&bad), Err(DbFileError::BadVersion(9))));
        assert!(matches!(
            decode(&good[..good.len() - 1]),
            Err(DbFileError::Length { .. })
        ));
        let mut bad = good.clone();
        bad[13] = 5;
        assert!(matches!(
            decode(&bad),
            Err(DbFileError::ElementOutOfRange {
                value: 5,
                offset: 13,
                q: 5
            })
        ));
        let mut bad = good;
        bad[7] = 4;
        assert!(matches!(decode(&bad), Err(DbFileError::Core(_))));
    }
}
