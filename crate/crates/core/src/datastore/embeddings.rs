use std::collections::HashMap;
use std::fs;
use std::path::Path;

use ndarray::{Array2, ArrayView1, ArrayView2};

use super::binary::{put_f32s, put_u32, put_u64, ByteReader};
use crate::error::{Error, Result};

const MAGIC: [u8; 4] = *b"VMEB";
const VERSION: u32 = 1;

/// Id-indexed dense vectors. Row order defines each id's position.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingTable {
    ids: Vec<u64>,
    data: Array2<f32>,
    index: HashMap<u64, usize>,
}

impl EmbeddingTable {
    /// Builds a table; rows of `data` line up with `ids`.
    pub fn new(ids: Vec<u64>, data: Array2<f32>) -> Result<Self> {
        if ids.len() != data.nrows() {
            return Err(Error::InvalidTable(format!(
                "{} ids for {} rows",
                ids.len(),
                data.nrows()
            )));
        }
        let mut index = HashMap::with_capacity(ids.len());
        for (pos, &id) in ids.iter().enumerate() {
            if index.insert(id, pos).is_some() {
                return Err(Error::InvalidTable(format!("duplicate id {id}")));
            }
        }
        let data = data.as_standard_layout().into_owned();
        Ok(EmbeddingTable { ids, data, index })
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim() == 0 {
            return Err(Error::InvalidTable("dimension is zero".into()));
        }
        if let Some(pos) = self
            .data
            .rows()
            .into_iter()
            .position(|r| !r.iter().all(|v| v.is_finite()))
        {
            return Err(Error::InvalidTable(format!(
                "non-finite entry in row for id {}",
                self.ids[pos]
            )));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.data.ncols()
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[u64] {
        &self.ids
    }

    pub fn position(&self, id: u64) -> Option<usize> {
        self.index.get(&id).copied()
    }

    pub fn get(&self, id: u64) -> Option<ArrayView1<'_, f32>> {
        self.position(id).map(|p| self.data.row(p))
    }

    pub fn row(&self, pos: usize) -> ArrayView1<'_, f32> {
        self.data.row(pos)
    }

    pub fn matrix(&self) -> ArrayView2<'_, f32> {
        self.data.view()
    }

    /// Rows for `ids`, stacked in the given order.
    pub fn gather(&self, ids: &[u64]) -> Result<Array2<f32>> {
        let mut out = Array2::zeros((ids.len(), self.dim()));
        for (r, &id) in ids.iter().enumerate() {
            let pos = self.position(id).ok_or(Error::UnknownItem(id))?;
            out.row_mut(r).assign(&self.data.row(pos));
        }
        Ok(out)
    }

    /// A new table holding only the rows at `positions`, in that order.
    pub fn select(&self, positions: &[usize]) -> EmbeddingTable {
        let ids = positions.iter().map(|&p| self.ids[p]).collect();
        let data = self.data.select(ndarray::Axis(0), positions);
        EmbeddingTable::new(ids, data).expect("subset of a valid table")
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        self.validate()?;
        let n = u32::try_from(self.len()).map_err(|_| Error::InvalidTable("too many rows".into()))?;
        let mut out = Vec::with_capacity(16 + self.len() * (8 + 4 * self.dim()));
        out.extend_from_slice(&MAGIC);
        put_u32(&mut out, VERSION);
        put_u32(&mut out, n);
        put_u32(&mut out, self.dim() as u32);
        for (pos, &id) in self.ids.iter().enumerate() {
            put_u64(&mut out, id);
            put_f32s(&mut out, self.data.row(pos).iter().copied());
        }
        Ok(out)
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(buf);
        r.magic(MAGIC)?;
        r.version(VERSION)?;
        let n = r.u32("row count")? as usize;
        let dim_offset = r.offset();
        let dim = r.u32("dimension")? as usize;
        if dim == 0 {
            return Err(Error::InvalidTable(format!("zero dimension at offset {dim_offset}")));
        }
        let mut ids = Vec::with_capacity(n);
        let mut data = Vec::with_capacity(n * dim);
        for row in 0..n {
            ids.push(r.u64(&format!("id of row {row}"))?);
            data.extend(r.f32s(dim, &format!("values of row {row}"))?);
        }
        r.finish()?;
        let data = Array2::from_shape_vec((n, dim), data).expect("sized above");
        let table = EmbeddingTable::new(ids, data)?;
        table.validate()?;
        Ok(table)
    }
}

pub fn save_embeddings(table: &EmbeddingTable, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = table.to_bytes()?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_embeddings(path: impl AsRef<Path>) -> Result<EmbeddingTable> {
    let path = path.as_ref();
    let buf = fs::read(path).map_err(|e| Error::io(path, e))?;
    EmbeddingTable::from_bytes(&buf)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn table() -> EmbeddingTable {
        EmbeddingTable::new(vec![10, 3, 7], array![[1.0, -2.5], [0.0, 3.25], [1e-30, f32::MAX]]).unwrap()
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.vmeb");
        let t = table();
        save_embeddings(&t, &path).unwrap();
        let back = load_embeddings(&path).unwrap();
        assert_eq!(back, t);
        assert_eq!(back.ids(), &[10, 3, 7]);
        assert_eq!(back.position(7), Some(2));
    }

    #[test]
    fn header_layout() {
        let bytes = table().to_bytes().unwrap();
        assert_eq!(&bytes[0..4], b"VMEB");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 1);
        assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 3);
        assert_eq!(u32::from_le_bytes(bytes[12..16].try_into().unwrap()), 2);
        assert_eq!(u64::from_le_bytes(bytes[16..24].try_into().unwrap()), 10);
        assert_eq!(bytes.len(), 16 + 3 * (8 + 8));
    }

    #[test]
    fn corrupt_magic() {
        let mut bytes = table().to_bytes().unwrap();
        bytes[0] = b'X';
        let err = EmbeddingTable::from_bytes(&bytes).unwrap_err();
        assert!(err.to_string().contains("bad magic"), "{err}");
    }

    #[test]
    fn wrong_version() {
        let mut bytes = table().to_bytes().unwrap();
        bytes[4] = 2;
        let err = EmbeddingTable::from_bytes(&bytes).unwrap_err();
        assert!(matches!(
            err,
            Error::BadVersion {
                offset: 4,
                found: 2,
                ..
            }
        ));
    }

    #[test]
    fn truncation_names_offset() {
        let bytes = table().to_bytes().unwrap();
        let err = EmbeddingTable::from_bytes(&bytes[..bytes.len() - 3]).unwrap_err();
        match err {
            Error::Truncated { offset, .. } => assert_eq!(offset, 16 + 2 * 16 + 8),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn zero_dim_rejected_on_save() {
        let t = EmbeddingTable::new(vec![1, 2], Array2::zeros((2, 0))).unwrap();
        let dir = tempfile::tempdir().unwrap();
        assert!(save_embeddings(&t, dir.path().join("z")).is_err());
    }

    #[test]
    fn duplicate_ids_rejected() {
        assert!(EmbeddingTable::new(vec![1, 1], Array2::zeros((2, 2))).is_err());
    }
}
