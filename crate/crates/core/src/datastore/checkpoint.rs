use std::fs;
use std::path::Path;

use ndarray::Array2;

use super::binary::{put_f32s, put_u32, ByteReader};
use crate::error::{Error, Result};

const MAGIC: [u8; 4] = *b"VMPG";
const VERSION: u32 = 1;

pub type NamedBlock = (String, Array2<f32>);

/// Serialize named `f32` blocks in the `VMPG` layout.
pub fn write_blocks_to(blocks: &[NamedBlock]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(&MAGIC);
    put_u32(&mut out, VERSION);
    put_u32(&mut out, blocks.len() as u32);
    for (name, block) in blocks {
        if !block.iter().all(|v| v.is_finite()) {
            return Err(Error::non_finite(format!("checkpoint block {name}")));
        }
        put_u32(&mut out, name.len() as u32);
        out.extend_from_slice(name.as_bytes());
        put_u32(&mut out, block.nrows() as u32);
        put_u32(&mut out, block.ncols() as u32);
        put_f32s(&mut out, block.iter().copied());
    }
    Ok(out)
}

pub fn read_blocks_from(buf: &[u8]) -> Result<Vec<NamedBlock>> {
    let mut r = ByteReader::new(buf);
    r.magic(MAGIC)?;
    r.version(VERSION)?;
    let count = r.u32("block count")? as usize;
    let mut blocks = Vec::with_capacity(count);
    for b in 0..count {
        let name_len = r.u32(&format!("name length of block {b}"))? as usize;
        let offset = r.offset();
        let name = String::from_utf8(r.take(name_len, &format!("name of block {b}"))?.to_vec()).map_err(|_| {
            Error::Truncated {
                offset,
                what: format!("block {b} name is not UTF-8"),
            }
        })?;
        let rows = r.u32(&format!("rows of {name}"))? as usize;
        let cols = r.u32(&format!("cols of {name}"))? as usize;
        let data = r.f32s(rows * cols, &format!("data of {name}"))?;
        let block = Array2::from_shape_vec((rows, cols), data).expect("sized above");
        blocks.push((name, block));
    }
    r.finish()?;
    Ok(blocks)
}

pub fn write_blocks(blocks: &[NamedBlock], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = write_blocks_to(blocks)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_blocks(path: impl AsRef<Path>) -> Result<Vec<NamedBlock>> {
    let path = path.as_ref();
    let buf = fs::read(path).map_err(|e| Error::io(path, e))?;
    read_blocks_from(&buf)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn layout_and_round_trip() {
        let blocks = vec![
            ("a.w".to_string(), array![[1.0f32, 2.0], [3.0, 4.0]]),
            ("b".to_string(), array![[-0.5f32]]),
        ];
        let bytes = write_blocks_to(&blocks).unwrap();
        assert_eq!(&bytes[..4], b"VMPG");
        assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 2);
        assert_eq!(u32::from_le_bytes(bytes[12..16].try_into().unwrap()), 3);
        assert_eq!(&bytes[16..19], b"a.w");
        assert_eq!(read_blocks_from(&bytes).unwrap(), blocks);
    }

    #[test]
    fn bad_magic_and_truncation() {
        let blocks = vec![("x".to_string(), array![[1.0f32]])];
        let mut bytes = write_blocks_to(&blocks).unwrap();
        assert!(read_blocks_from(&bytes[..bytes.len() - 1]).is_err());
        bytes[1] = 0;
        assert!(matches!(
            read_blocks_from(&bytes),
            Err(Error::BadMagic { offset: 0, .. })
        ));
    }
}
