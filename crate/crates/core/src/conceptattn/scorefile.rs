//! `CAS1` score files.
//!
//! ```text
//! "CAS1"                 4 bytes
//! header length          u64 LE
//! header                 JSON object (see below)
//! scores                 img_h · img_w · r × f64 LE, pixel-major, concept-minor
//! ```
//!
//! Header keys: `img_h`, `img_w`, `vocabulary` (`{"concepts": [...],
//! "background": [...]}`) are required. `config_hash`, `layers`, `timestep`,
//! `space` (`cross_attention|value|output`), `softmax`, `head_agg`
//! (`concat|mean`), `softmax_axis` (`concepts|pixels`) and `frames` are
//! optional, so external producers can write minimal headers.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mmdit::ByteReader;
use crate::numerics::{Matrix, Real};

use super::{Provenance, SaliencyMap};

pub const SCORES_MAGIC: &[u8; 4] = b"CAS1";

#[derive(Serialize, Deserialize)]
struct Header {
    img_h: usize,
    img_w: usize,
    #[serde(flatten)]
    provenance: Provenance,
}

impl<T: Real> SaliencyMap<T> {
    pub fn to_cas1_bytes(&self) -> Vec<u8> {
        let header = Header {
            img_h: self.img_h,
            img_w: self.img_w,
            provenance: self.provenance.clone(),
        };
        let json = serde_json::to_string(&header).expect("header serializes");
        let mut out = Vec::with_capacity(12 + json.len() + 8 * self.scores.data().len());
        out.extend_from_slice(SCORES_MAGIC);
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(json.as_bytes());
        for v in self.scores.data() {
            out.extend_from_slice(&v.as_f64().to_le_bytes());
        }
        out
    }

    pub fn from_cas1_bytes(buf: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(buf, "CAS1");
        if r.take(4)? != SCORES_MAGIC {
            return Err(Error::format("CAS1", "bad magic"));
        }
        let len = r.len_u64()?;
        let header: Header = serde_json::from_slice(r.take(len)?)?;
        let n = header.img_h * header.img_w;
        let rc = header.provenance.vocabulary.len();
        let values = r.f64s(n * rc)?;
        r.finish()?;
        let scores = Matrix::from_vec(n, rc, values.into_iter().map(T::from_f64_lossy).collect())?;
        SaliencyMap::new(header.img_h, header.img_w, scores, header.provenance)
    }

    pub fn save_cas1(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_cas1_bytes())?;
        Ok(())
    }

    pub fn load_cas1(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_cas1_bytes(&std::fs::read(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::conceptattn::ConceptVocabulary;

    fn sample() -> SaliencyMap {
        let vocab = ConceptVocabulary::from_strs(&["cat", "sky"], &["sky"]).unwrap();
        let scores = Matrix::from_fn(6, 2, |i, j| i as f64 * 0.5 - j as f64);
        SaliencyMap::new(
            2,
            3,
            scores,
            Provenance {
                config_hash: "abc".into(),
                vocabulary: vocab,
                layers: vec![1, 2],
                timestep: 500,
                space: Default::default(),
                softmax: false,
                head_agg: Default::default(),
                softmax_axis: Default::default(),
                frames: 1,
            },
        )
        .unwrap()
    }

    #[test]
    fn round_trip() {
        let m = sample();
        let bytes = m.to_cas1_bytes();
        let back = SaliencyMap::<f64>::from_cas1_bytes(&bytes).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.to_cas1_bytes(), bytes);
    }

    #[test]
    fn minimal_header_is_accepted() {
        let json = br#"{"img_h":1,"img_w":2,"vocabulary":{"concepts":["dog"]}}"#;
        let mut bytes = b"CAS1".to_vec();
        bytes.extend_from_slice(&(json.len() as u64).to_le_bytes());
        bytes.extend_from_slice(json);
        bytes.extend_from_slice(&1.5f64.to_le_bytes());
        bytes.extend_from_slice(&(-2.0f64).to_le_bytes());
        let m = SaliencyMap::<f64>::from_cas1_bytes(&bytes).unwrap();
        assert_eq!(m.scores.data(), &[1.5, -2.0]);
        assert_eq!(m.provenance.frames, 1);
        assert!(SaliencyMap::<f64>::from_cas1_bytes(&bytes[..bytes.len() - 3]).is_err());
    }
}
