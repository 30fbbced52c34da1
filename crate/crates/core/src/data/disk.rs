//! On-disk dataset: `<root>/<domain>/<split>/<label>/<id>.ppm` plus a
//! `manifest.csv` at the root.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use super::ppm::{load_ppm, save_ppm};
use super::sample::{Domain, FakeKind, ImageSample};
use super::splits::{DomainSplits, Split, SplitDataset};
use crate::error::{Result, TarError};
use crate::model::Label;

pub const MANIFEST_FILE: &str = "manifest.csv";
const HEADER: &str = "id,domain,split,label,seed";

/// One line of the manifest.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ManifestRow {
    pub id: u64,
    pub domain: FakeKind,
    pub split: Split,
    pub label: Label,
    pub seed: u64,
}

impl ManifestRow {
    pub fn path(&self, root: &Path) -> PathBuf {
        root.join(self.domain.name())
            .join(self.split.name())
            .join(self.label.name())
            .join(format!("{}.ppm", self.id))
    }
}

/// Write every image and the manifest. Rows are ordered by domain, split,
/// then sample order within the split.
pub fn write_dataset(data: &SplitDataset, root: &Path, seed: u64) -> Result<Vec<ManifestRow>> {
    let mut rows = Vec::new();
    let mut csv = format!("{HEADER}\n");
    for d in &data.domains {
        for split in Split::ALL {
            for s in d.get(split) {
                let row = ManifestRow {
                    id: s.id,
                    domain: d.kind,
                    split,
                    label: s.label,
                    seed,
                };
                save_ppm(&s.pixels, &row.path(root))?;
                let _ = writeln!(csv, "{},{},{},{},{}", row.id, row.domain, split.name(), row.label.name(), seed);
                rows.push(row);
            }
        }
    }
    let path = root.join(MANIFEST_FILE);
    let tmp = root.join(format!(".{MANIFEST_FILE}.tmp"));
    std::fs::write(&tmp, csv).map_err(|e| TarError::io(&tmp, e))?;
    std::fs::rename(&tmp, &path).map_err(|e| TarError::io(&path, e))?;
    Ok(rows)
}

pub fn read_manifest(root: &Path) -> Result<Vec<ManifestRow>> {
    let path = root.join(MANIFEST_FILE);
    let text = std::fs::read_to_string(&path).map_err(|e| TarError::io(&path, e))?;
    let mut offset = 0;
    let mut rows = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let here = offset;
        offset += line.len() + 1;
        if n == 0 {
            if line != HEADER {
                return Err(TarError::format(0, format!("manifest header must be {HEADER:?}")));
            }
            continue;
        }
        if line.is_empty() {
            continue;
        }
        let bad = |what: &str| TarError::format(here, format!("manifest line {}: bad {what}", n + 1));
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 5 {
            return Err(bad("field count"));
        }
        rows.push(ManifestRow {
            id: f[0].parse().map_err(|_| bad("id"))?,
            domain: f[1].parse().map_err(|_| bad("domain"))?,
            split: f[2].parse().map_err(|_| bad("split"))?,
            label: f[3].parse().map_err(|_| bad("label"))?,
            seed: f[4].parse().map_err(|_| bad("seed"))?,
        });
    }
    Ok(rows)
}

/// Load one split of one domain in manifest order.
pub fn load_split(root: &Path, rows: &[ManifestRow], domain: FakeKind, split: Split) -> Result<Vec<ImageSample>> {
    rows.iter()
        .filter(|r| r.domain == domain && r.split == split)
        .map(|r| {
            let pixels = load_ppm(&r.path(root))?;
            let dom = match r.label {
                Label::Real => Domain::Real,
                Label::Fake => Domain::Fake(domain),
            };
            ImageSample::new(pixels, dom, r.id)
        })
        .collect()
}

impl SplitDataset {
    /// Load every domain listed in the manifest.
    pub fn load(root: &Path) -> Result<Self> {
        let rows = read_manifest(root)?;
        let mut kinds: Vec<FakeKind> = rows.iter().map(|r| r.domain).collect();
        kinds.sort();
        kinds.dedup();
        let mut domains = Vec::new();
        for kind in kinds {
            domains.push(DomainSplits {
                kind,
                train: load_split(root, &rows, kind, Split::Train)?,
                fewshot: load_split(root, &rows, kind, Split::FewShot)?,
                test: load_split(root, &rows, kind, Split::Test)?,
            });
        }
        let size = domains
            .iter()
            .flat_map(|d| d.train.iter().chain(&d.fewshot).chain(&d.test))
            .map(ImageSample::size)
            .next()
            .ok_or_else(|| TarError::config(format!("dataset at {} is empty", root.display())))?;
        Ok(SplitDataset { size, domains })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::SplitSpec;

    #[test]
    fn layout_and_manifest_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let spec = SplitSpec {
            train_per_class: 2,
            fewshot_per_class: 1,
            test_per_class: 1,
        };
        let data = SplitDataset::generate(&[FakeKind::BlendSwap], &spec, 8, 4).unwrap();
        let rows = write_dataset(&data, dir.path(), 4).unwrap();
        assert_eq!(rows.len(), 8);
        let first = &rows[0];
        let expect = dir
            .path()
            .join("blendswap/train/real")
            .join(format!("{}.ppm", first.id));
        assert!(expect.is_file());
        assert_eq!(read_manifest(dir.path()).unwrap(), rows);
        let back = SplitDataset::load(dir.path()).unwrap();
        let (a, b) = (&data.domains[0].test, &back.domains[0].test);
        assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(b) {
            assert_eq!((x.id, x.label, x.domain), (y.id, y.label, y.domain));
            assert!(x.pixels.max_abs_diff(&y.pixels).unwrap() <= 1.0 / 255.0 + 1e-6);
        }
    }
}
