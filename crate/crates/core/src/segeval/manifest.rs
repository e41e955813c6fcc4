//! JSON-lines dataset manifests. Relative paths resolve against the
//! manifest's directory.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::conceptattn::SaliencyMap;
use crate::error::{Error, Result};

use super::{LabelMask, SegmentationSample};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scores_path: Option<PathBuf>,
    pub mask_path: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_concept: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label_map: Option<BTreeMap<String, u8>>,
    /// Grayscale input image, needed only when saliency is recomputed.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_path: Option<PathBuf>,
}

#[derive(Debug, Clone)]
pub struct Manifest {
    pub base_dir: PathBuf,
    pub records: Vec<ManifestRecord>,
}

impl Manifest {
    pub fn parse(text: &str, base_dir: impl Into<PathBuf>) -> Result<Self> {
        let records = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
            .map(|(i, l)| {
                serde_json::from_str(l)
                    .map_err(|e| Error::format("manifest", format!("line {}: {e}", i + 1)))
            })
            .collect::<Result<Vec<ManifestRecord>>>()?;
        if records.is_empty() {
            return Err(Error::Empty("manifest"));
        }
        Ok(Self {
            base_dir: base_dir.into(),
            records,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text, path.parent().unwrap_or(Path::new(".")))
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    /// Loads every record's CAS1 scores and mask; errors name the sample id.
    pub fn load_samples(&self) -> Result<Vec<SegmentationSample>> {
        self.records
            .iter()
            .map(|r| self.load_sample(r).map_err(|e| e.in_sample(&r.id)))
            .collect()
    }

    fn load_sample(&self, r: &ManifestRecord) -> Result<SegmentationSample> {
        let scores = r
            .scores_path
            .as_ref()
            .ok_or_else(|| Error::Invalid("record has no scores_path".into()))?;
        let map = SaliencyMap::load_cas1(self.resolve(scores))?;
        let gt = LabelMask::load_pgm(self.resolve(&r.mask_path))?;
        if gt.shape() != (map.img_h, map.img_w) {
            return Err(Error::shape(
                "mask vs scores",
                gt.shape(),
                (map.img_h, map.img_w),
            ));
        }
        Ok(SegmentationSample {
            id: r.id.clone(),
            map,
            gt,
            target_concept: r.target_concept.clone(),
            label_map: r.label_map.clone(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_records_and_rejects_empty() {
        let text = r#"{"id":"a","scores_path":"a.cas","mask_path":"a.pgm","target_concept":"dog"}

{"id":"b","mask_path":"b.pgm","label_map":{"dog":1},"image_path":"b_img.pgm"}
"#;
        let m = Manifest::parse(text, "/data").unwrap();
        assert_eq!(m.records.len(), 2);
        assert_eq!(m.records[1].label_map.as_ref().unwrap()["dog"], 1);
        assert_eq!(m.resolve(Path::new("x.pgm")), PathBuf::from("/data/x.pgm"));
        assert!(matches!(Manifest::parse("\n\n", "."), Err(Error::Empty(_))));
        assert!(Manifest::parse("{not json}", ".").is_err());
    }
}
