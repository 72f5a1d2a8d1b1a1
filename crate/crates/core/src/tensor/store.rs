//! Named-tensor collections and their raw-blob serialization.
//!
//! A [`NamedTensors`] serializes to a table of [`TensorRecord`]s plus one
//! little-endian f64 blob, concatenated in lexicographic name order. The
//! checkpoint format in the models module is built on this.

use std::collections::BTreeMap;

use super::{Result, Tensor, TensorError};

#[derive(Clone, Debug, Default, PartialEq)]
pub struct NamedTensors {
    map: BTreeMap<String, Tensor>,
}

/// One manifest row: where a tensor lives inside the blob.
/// `offset` and `count` are in elements (8 bytes each).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TensorRecord {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: u64,
    pub count: u64,
}

impl NamedTensors {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: String, tensor: Tensor) {
        self.map.insert(name, tensor);
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.map.get(name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.map.contains_key(name)
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.map.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.map.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn total_elements(&self) -> usize {
        self.map.values().map(Tensor::numel).sum()
    }

    /// Serialize to (records, blob). Record order and blob layout follow
    /// lexicographic name order, so equal contents give equal bytes.
    pub fn to_blob(&self) -> (Vec<TensorRecord>, Vec<u8>) {
        let mut records = Vec::with_capacity(self.map.len());
        let mut blob = Vec::with_capacity(self.total_elements() * 8);
        let mut offset = 0u64;
        for (name, tensor) in &self.map {
            let count = tensor.numel() as u64;
            records.push(TensorRecord {
                name: name.clone(),
                shape: tensor.shape().to_vec(),
                offset,
                count,
            });
            for v in tensor.data() {
                blob.extend_from_slice(&v.to_le_bytes());
            }
            offset += count;
        }
        (records, blob)
    }

    pub fn from_blob(records: &[TensorRecord], blob: &[u8]) -> Result<Self> {
        let mut out = NamedTensors::new();
        for rec in records {
            let expected: usize = rec.shape.iter().product();
            if expected as u64 != rec.count {
                return Err(TensorError::RecordShapeMismatch {
                    name: rec.name.clone(),
                    shape: rec.shape.clone(),
                    count: rec.count,
                });
            }
            let start = rec.offset * 8;
            let end = start + rec.count * 8;
            if end > blob.len() as u64 {
                return Err(TensorError::TruncatedBlob {
                    name: rec.name.clone(),
                    start,
                    end,
                    blob_len: blob.len() as u64,
                });
            }
            let bytes = &blob[start as usize..end as usize];
            let data: Vec<f64> = bytes
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            if out.contains(&rec.name) {
                return Err(TensorError::DuplicateName(rec.name.clone()));
            }
            out.insert(rec.name.clone(), Tensor::new(rec.shape.clone(), data)?);
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> NamedTensors {
        let mut t = NamedTensors::new();
        t.insert("b.weight".into(), Tensor::new(vec![2, 2], vec![1.0, -2.0, 0.5, 1e-300]).unwrap());
        t.insert("a.bias".into(), Tensor::new(vec![3], vec![0.0, f64::MIN_POSITIVE, 7.25]).unwrap());
        t
    }

    #[test]
    fn blob_roundtrip_is_exact() {
        let t = sample();
        let (records, blob) = t.to_blob();
        let back = NamedTensors::from_blob(&records, &blob).unwrap();
        assert_eq!(t, back);
        // Bit-exactness: re-serializing gives identical bytes.
        let (_, blob2) = back.to_blob();
        assert_eq!(blob, blob2);
    }

    #[test]
    fn records_are_name_ordered() {
        let (records, _) = sample().to_blob();
        assert_eq!(records[0].name, "a.bias");
        assert_eq!(records[1].name, "b.weight");
        assert_eq!(records[1].offset, 3);
    }

    #[test]
    fn truncated_blob_reports_offsets() {
        let (records, blob) = sample().to_blob();
        let err = NamedTensors::from_blob(&records, &blob[..blob.len() - 8]).unwrap_err();
        match err {
            TensorError::TruncatedBlob { name, end, blob_len, .. } => {
                assert_eq!(name, "b.weight");
                assert!(end > blob_len);
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn shape_count_disagreement_rejected() {
        let (mut records, blob) = sample().to_blob();
        records[0].count = 2;
        let err = NamedTensors::from_blob(&records, &blob).unwrap_err();
        assert!(matches!(err, TensorError::RecordShapeMismatch { .. }));
    }
}
