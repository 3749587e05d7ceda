//! On-disk datasets and subject-exclusive folds.
//!
//! A dataset directory holds
//!
//! ```text
//! labels.csv      image_id,subject_id,au<ID>,...   cells in {0,1}
//! landmarks.csv   image_id,x1,y1,...,x49,y49       pixels, 1-based order
//! images/<image_id>.png
//! folds.csv       subject_id,fold                  optional
//! ```
//!
//! Without `folds.csv`, sorted subject ids are dealt round-robin into folds.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use sacl_core::geometry::N_LANDMARKS;

use crate::align::align_face;
use crate::config::RunConfig;
use crate::error::{io_err, manifest_err, PipelineError, Result};
use crate::imaging::Image;
use crate::synth::RawSample;

pub const LABELS_CSV: &str = "labels.csv";
pub const LANDMARKS_CSV: &str = "landmarks.csv";
pub const FOLDS_CSV: &str = "folds.csv";
pub const IMAGES_DIR: &str = "images";

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetManifest {
    pub root: PathBuf,
    pub images_dir: PathBuf,
    pub labels_csv: PathBuf,
    pub landmarks_csv: PathBuf,
    pub folds_csv: Option<PathBuf>,
    pub aus: Vec<u32>,
}

/// An aligned face ready for augmentation.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub id: String,
    pub subject: String,
    pub image: Image,
    pub landmarks: Vec<f64>,
    pub labels: Vec<u8>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub aus: Vec<u32>,
    pub size: usize,
    pub samples: Vec<Sample>,
    /// Subject id → fold in `1..=k`.
    pub folds: BTreeMap<String, usize>,
}

fn csv_err(path: &Path) -> impl FnOnce(csv::Error) -> PipelineError + '_ {
    move |source| PipelineError::Csv {
        path: path.to_path_buf(),
        source,
    }
}

fn open_csv(path: &Path) -> Result<csv::Reader<std::fs::File>> {
    csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path).map_err(csv_err(path))
}

fn header(path: &Path) -> Result<Vec<String>> {
    Ok(open_csv(path)?.headers().map_err(csv_err(path))?.iter().map(str::to_owned).collect())
}

fn parse_au_column(col: &str) -> Option<u32> {
    col.strip_prefix("au").or_else(|| col.strip_prefix("AU"))?.parse().ok()
}

impl DatasetManifest {
    /// Standard layout under `root`; the AU list is read from the label header.
    pub fn discover(root: &Path) -> Result<Self> {
        let labels_csv = root.join(LABELS_CSV);
        let cols = header(&labels_csv)?;
        if cols.len() < 3 || cols[0] != "image_id" || cols[1] != "subject_id" {
            return Err(manifest_err(LABELS_CSV, "header must start with image_id,subject_id"));
        }
        let aus = cols[2..]
            .iter()
            .map(|c| parse_au_column(c).ok_or_else(|| manifest_err(LABELS_CSV, format!("column `{c}` is not au<ID>"))))
            .collect::<Result<Vec<_>>>()?;
        let folds = root.join(FOLDS_CSV);
        Ok(Self {
            root: root.to_path_buf(),
            images_dir: root.join(IMAGES_DIR),
            labels_csv,
            landmarks_csv: root.join(LANDMARKS_CSV),
            folds_csv: folds.exists().then_some(folds),
            aus,
        })
    }
}

pub struct LabelRow {
    pub id: String,
    pub subject: String,
    pub labels: Vec<u8>,
}

/// Rows of the label file; the AU columns must be exactly `aus` in order.
pub fn read_labels(path: &Path, aus: &[u32]) -> Result<Vec<LabelRow>> {
    let cols = header(path)?;
    let expected: Vec<String> = ["image_id".to_string(), "subject_id".to_string()]
        .into_iter()
        .chain(aus.iter().map(|a| format!("au{a}")))
        .collect();
    for (i, want) in expected.iter().enumerate() {
        match cols.get(i) {
            Some(c) if c == want || (i >= 2 && parse_au_column(c) == Some(aus[i - 2])) => {}
            Some(c) => return Err(manifest_err(LABELS_CSV, format!("column `{c}` where `{want}` was expected"))),
            None => return Err(manifest_err(LABELS_CSV, format!("missing column `{want}`"))),
        }
    }
    if let Some(extra) = cols.get(expected.len()) {
        return Err(manifest_err(LABELS_CSV, format!("unexpected column `{extra}`")));
    }
    let mut rows = Vec::new();
    for rec in open_csv(path)?.records() {
        let rec = rec.map_err(csv_err(path))?;
        let id = rec[0].to_string();
        let labels = (0..aus.len())
            .map(|j| match &rec[j + 2] {
                "0" => Ok(0),
                "1" => Ok(1),
                v => Err(manifest_err(&id, format!("label `{v}` in column au{} is not 0 or 1", aus[j]))),
            })
            .collect::<Result<Vec<u8>>>()?;
        rows.push(LabelRow {
            subject: rec[1].to_string(),
            id,
            labels,
        });
    }
    Ok(rows)
}

pub fn read_landmarks(path: &Path) -> Result<BTreeMap<String, Vec<f64>>> {
    let cols = header(path)?;
    let expected: Vec<String> = std::iter::once("image_id".to_string())
        .chain((1..=N_LANDMARKS).flat_map(|k| [format!("x{k}"), format!("y{k}")]))
        .collect();
    if cols != expected {
        let bad = cols.iter().zip(&expected).find(|(a, b)| a != b).map(|(a, _)| a.clone());
        return Err(manifest_err(
            LANDMARKS_CSV,
            format!("header must be image_id,x1,y1,...,x49,y49 (first mismatch: {bad:?})"),
        ));
    }
    let mut out = BTreeMap::new();
    for rec in open_csv(path)?.records() {
        let rec = rec.map_err(csv_err(path))?;
        let id = rec[0].to_string();
        let vals = rec
            .iter()
            .skip(1)
            .map(|v| v.parse::<f64>().ok().filter(|x| x.is_finite()))
            .collect::<Option<Vec<f64>>>()
            .ok_or_else(|| manifest_err(&id, "non-numeric landmark coordinate"))?;
        if out.insert(id.clone(), vals).is_some() {
            return Err(manifest_err(&id, "duplicate landmark row"));
        }
    }
    Ok(out)
}

fn read_folds(path: &Path) -> Result<BTreeMap<String, usize>> {
    let mut out = BTreeMap::new();
    for rec in open_csv(path)?.records() {
        let rec = rec.map_err(csv_err(path))?;
        let subject = rec.get(0).unwrap_or_default().to_string();
        let fold: usize = rec
            .get(1)
            .and_then(|f| f.parse().ok())
            .ok_or_else(|| manifest_err(&subject, "fold must be a positive integer"))?;
        if let Some(prev) = out.insert(subject.clone(), fold) {
            if prev != fold {
                return Err(manifest_err(&subject, format!("subject listed in folds {prev} and {fold}")));
            }
        }
    }
    Ok(out)
}

/// Deal sorted subjects round-robin into `k` folds numbered from 1.
pub fn assign_folds<'a>(subjects: impl IntoIterator<Item = &'a str>, k: usize) -> BTreeMap<String, usize> {
    let sorted: BTreeSet<&str> = subjects.into_iter().collect();
    sorted.into_iter().enumerate().map(|(i, s)| (s.to_string(), i % k + 1)).collect()
}

impl Dataset {
    /// Align raw faces onto the template frame.
    pub fn from_raw(raw: Vec<RawSample>, aus: &[u32], cfg: &RunConfig) -> Result<Self> {
        let size = cfg.data.aligned_size;
        let mut samples = Vec::with_capacity(raw.len());
        for r in raw {
            if r.landmarks.len() != 2 * N_LANDMARKS || r.labels.len() != aus.len() {
                return Err(manifest_err(&r.id, "landmark or label count mismatch"));
            }
            let (image, landmarks, _) = align_face(&r.image, &r.landmarks, &cfg.data.align_anchors, size)
                .map_err(|e| manifest_err(&r.id, e.to_string()))?;
            samples.push(Sample {
                id: r.id,
                subject: r.subject,
                image,
                landmarks,
                labels: r.labels,
            });
        }
        let folds = assign_folds(samples.iter().map(|s| s.subject.as_str()), cfg.data.folds);
        Ok(Self {
            aus: aus.to_vec(),
            size,
            samples,
            folds,
        })
    }

    pub fn load(manifest: &DatasetManifest, cfg: &RunConfig) -> Result<Self> {
        let aus = cfg.model.au_list()?;
        if manifest.aus != aus {
            return Err(manifest_err(
                LABELS_CSV,
                format!("AU columns {:?} do not match the configured AUs {aus:?}", manifest.aus),
            ));
        }
        let labels = read_labels(&manifest.labels_csv, &aus)?;
        let mut landmarks = read_landmarks(&manifest.landmarks_csv)?;
        let mut seen = BTreeSet::new();
        let mut raw = Vec::with_capacity(labels.len());
        for row in labels {
            if !seen.insert(row.id.clone()) {
                return Err(manifest_err(&row.id, "duplicate label row"));
            }
            let lm = landmarks
                .remove(&row.id)
                .ok_or_else(|| manifest_err(&row.id, "labelled image has no landmark row"))?;
            let path = manifest.images_dir.join(format!("{}.png", row.id));
            if !path.exists() {
                return Err(manifest_err(&row.id, format!("missing image {}", path.display())));
            }
            raw.push(RawSample {
                image: Image::load(&path)?,
                id: row.id,
                subject: row.subject,
                landmarks: lm,
                labels: row.labels,
            });
        }
        if let Some(extra) = landmarks.keys().next() {
            return Err(manifest_err(extra, "landmark row without labels"));
        }
        let mut ds = Self::from_raw(raw, &aus, cfg)?;
        if let Some(path) = &manifest.folds_csv {
            let folds = read_folds(path)?;
            for s in &ds.samples {
                match folds.get(&s.subject) {
                    Some(f) if (1..=cfg.data.folds).contains(f) => {}
                    Some(f) => return Err(manifest_err(&s.subject, format!("fold {f} outside 1..={}", cfg.data.folds))),
                    None => return Err(manifest_err(&s.subject, "subject missing from folds.csv")),
                }
            }
            ds.folds = folds;
        }
        Ok(ds)
    }

    /// `(train, test)` sample indices. Without a fold both are everything.
    pub fn split(&self, fold: Option<usize>) -> Result<(Vec<usize>, Vec<usize>)> {
        let all: Vec<usize> = (0..self.samples.len()).collect();
        let Some(f) = fold else {
            return Ok((all.clone(), all));
        };
        if !self.folds.values().any(|&v| v == f) {
            return Err(PipelineError::Config(format!("fold {f} has no subjects")));
        }
        let (test, train): (Vec<usize>, Vec<usize>) = all.into_iter().partition(|&i| self.folds[&self.samples[i].subject] == f);
        if train.is_empty() {
            return Err(PipelineError::Config(format!("fold {f} leaves no training subjects")));
        }
        Ok((train, test))
    }

    /// Positive rate of each AU over `idx`.
    pub fn occurrence_rates(&self, idx: &[usize]) -> Vec<f64> {
        (0..self.aus.len())
            .map(|j| idx.iter().filter(|&&i| self.samples[i].labels[j] == 1).count() as f64 / idx.len().max(1) as f64)
            .collect()
    }
}

/// Write raw samples in the standard layout.
pub fn write_dataset(dir: &Path, raw: &[RawSample], aus: &[u32]) -> Result<()> {
    let images = dir.join(IMAGES_DIR);
    std::fs::create_dir_all(&images).map_err(io_err(&images))?;
    let lpath = dir.join(LABELS_CSV);
    let mut lw = csv::Writer::from_path(&lpath).map_err(csv_err(&lpath))?;
    let head: Vec<String> = ["image_id".into(), "subject_id".into()]
        .into_iter()
        .chain(aus.iter().map(|a| format!("au{a}")))
        .collect();
    lw.write_record(&head).map_err(csv_err(&lpath))?;
    let mpath = dir.join(LANDMARKS_CSV);
    let mut mw = csv::Writer::from_path(&mpath).map_err(csv_err(&mpath))?;
    let head: Vec<String> = std::iter::once("image_id".to_string())
        .chain((1..=N_LANDMARKS).flat_map(|k| [format!("x{k}"), format!("y{k}")]))
        .collect();
    mw.write_record(&head).map_err(csv_err(&mpath))?;
    for r in raw {
        let row: Vec<String> = [r.id.clone(), r.subject.clone()]
            .into_iter()
            .chain(r.labels.iter().map(u8::to_string))
            .collect();
        lw.write_record(&row).map_err(csv_err(&lpath))?;
        let row: Vec<String> = std::iter::once(r.id.clone()).chain(r.landmarks.iter().map(f64::to_string)).collect();
        mw.write_record(&row).map_err(csv_err(&mpath))?;
        r.image.save_png(&images.join(format!("{}.png", r.id)))?;
    }
    lw.flush().map_err(io_err(&lpath))?;
    mw.flush().map_err(io_err(&mpath))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_robin_folds_keep_subjects_together() {
        let folds = assign_folds(["b", "a", "c", "a", "d"], 3);
        assert_eq!(folds["a"], 1);
        assert_eq!(folds["b"], 2);
        assert_eq!(folds["c"], 3);
        assert_eq!(folds["d"], 1);
    }

    #[test]
    fn au_columns_parse_in_either_case() {
        assert_eq!(parse_au_column("au12"), Some(12));
        assert_eq!(parse_au_column("AU4"), Some(4));
        assert_eq!(parse_au_column("p_au4"), None);
    }
}
