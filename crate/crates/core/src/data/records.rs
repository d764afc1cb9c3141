//! On-disk datasets: one directory per trunk holding `records.jsonl`, a
//! `manifest.toml` at the root, and `labels.txt` when samples carry labels.

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use serde::{Deserialize, Serialize};

use super::loader::Fetch;
use super::shard::{Trunk, TrunkManifest};
use super::synth::SyntheticSample;
use crate::error::{Error, Result};
use crate::image::Image;
use crate::model::Visual;

pub const MANIFEST_FILE: &str = "manifest.toml";
pub const LABELS_FILE: &str = "labels.txt";
const RECORDS_FILE: &str = "records.jsonl";

/// Raw little-endian `f32` pixels, base-64 encoded, with their HWC shape.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncodedImage {
    pub shape: [usize; 3],
    pub data: String,
}

impl EncodedImage {
    pub fn encode(img: &Image) -> Self {
        let mut raw = Vec::with_capacity(img.pixels().len() * 4);
        for p in img.pixels() {
            raw.extend_from_slice(&p.to_le_bytes());
        }
        EncodedImage {
            shape: img.shape(),
            data: STANDARD.encode(raw),
        }
    }

    pub fn decode(&self) -> Result<Image> {
        let raw = STANDARD
            .decode(&self.data)
            .map_err(|e| Error::format("record", format!("image payload: {e}")))?;
        let [h, w, c] = self.shape;
        let want = h
            .checked_mul(w)
            .and_then(|v| v.checked_mul(c))
            .and_then(|v| v.checked_mul(4))
            .ok_or_else(|| Error::format("record", "image shape overflows"))?;
        if raw.len() != want {
            return Err(Error::format(
                "record",
                format!("image payload has {} bytes, shape {:?} needs {want}", raw.len(), self.shape),
            ));
        }
        let pixels: Vec<f32> = raw
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
            .collect();
        if pixels.iter().any(|p| !p.is_finite()) {
            return Err(Error::format("record", "image has non-finite pixels"));
        }
        Image::new(h, w, c, pixels).map_err(|e| Error::format("record", e.to_string()))
    }
}

/// One line of `records.jsonl`. Exactly one of `image` and `frames` is set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Record {
    pub id: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image: Option<EncodedImage>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub frames: Option<Vec<EncodedImage>>,
    pub caption: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub question: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub answer: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
}

impl Record {
    pub fn from_sample(id: usize, s: &SyntheticSample) -> Self {
        let (image, frames) = match &s.visual {
            Visual::Image(img) => (Some(EncodedImage::encode(img)), None),
            Visual::Video(fs) => (None, Some(fs.iter().map(EncodedImage::encode).collect())),
        };
        Record {
            id,
            image,
            frames,
            caption: s.caption.clone(),
            question: s.question.clone(),
            answer: s.answer.clone(),
            label: s.label.clone(),
        }
    }

    pub fn to_sample(&self) -> Result<SyntheticSample> {
        let visual = match (&self.image, &self.frames) {
            (Some(img), None) => Visual::Image(img.decode()?),
            (None, Some(fs)) if !fs.is_empty() => {
                let frames = fs.iter().map(EncodedImage::decode).collect::<Result<Vec<_>>>()?;
                if frames.windows(2).any(|w| w[0].shape() != w[1].shape()) {
                    return Err(Error::format("record", "frames differ in shape"));
                }
                Visual::Video(frames)
            }
            _ => {
                return Err(Error::format(
                    "record",
                    format!("record {} needs exactly one of image or frames", self.id),
                ))
            }
        };
        if self.question.is_some() != self.answer.is_some() {
            return Err(Error::format(
                "record",
                format!("record {} has a question without an answer or vice versa", self.id),
            ));
        }
        Ok(SyntheticSample {
            visual,
            caption: self.caption.clone(),
            question: self.question.clone(),
            answer: self.answer.clone(),
            label: self.label.clone(),
        })
    }

    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("record serializes")
    }

    /// Parses and fully validates one JSONL line.
    pub fn parse_line(line: &str) -> Result<(usize, SyntheticSample)> {
        let rec: Record =
            serde_json::from_str(line).map_err(|e| Error::format("record", e.to_string()))?;
        let sample = rec.to_sample()?;
        Ok((rec.id, sample))
    }
}

fn trunk_dir(id: usize) -> String {
    format!("trunk-{id:05}")
}

/// Writes `samples` as one node shard cut into `trunk_size` trunks.
pub fn write_dataset(dir: &Path, samples: &[SyntheticSample], trunk_size: usize) -> Result<TrunkManifest> {
    let mut manifest = TrunkManifest::new(0, 0..samples.len(), trunk_size)?;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for t in &mut manifest.trunks {
        let sub = dir.join(trunk_dir(t.id));
        fs::create_dir_all(&sub).map_err(|e| Error::io(&sub, e))?;
        let rel = format!("{}/{RECORDS_FILE}", trunk_dir(t.id));
        let path = dir.join(&rel);
        let file = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
        let mut w = std::io::BufWriter::new(file);
        for i in t.range() {
            writeln!(w, "{}", Record::from_sample(i, &samples[i]).to_json_line())
                .map_err(|e| Error::io(&path, e))?;
        }
        w.flush().map_err(|e| Error::io(&path, e))?;
        t.file = Some(rel);
    }
    let mpath = dir.join(MANIFEST_FILE);
    fs::write(&mpath, manifest.to_toml()).map_err(|e| Error::io(&mpath, e))?;

    let mut labels: Vec<&str> = samples.iter().filter_map(|s| s.label.as_deref()).collect();
    if !labels.is_empty() {
        labels.sort_unstable();
        labels.dedup();
        write_labels(&dir.join(LABELS_FILE), &labels)?;
    }
    Ok(manifest)
}

pub fn write_labels(path: &Path, labels: &[&str]) -> Result<()> {
    let mut text = labels.join("\n");
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Non-empty trimmed lines of a labels file.
pub fn read_labels(path: &Path) -> Result<Vec<String>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let labels: Vec<String> = text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(String::from)
        .collect();
    if labels.is_empty() {
        return Err(Error::format("labels", format!("{} lists no labels", path.display())));
    }
    Ok(labels)
}

pub fn read_manifest(dir: &Path) -> Result<TrunkManifest> {
    let path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let m = TrunkManifest::from_toml(&text)?;
    if m.trunks.iter().any(|t| t.file.is_none()) {
        return Err(Error::format("manifest", "every trunk needs a record file"));
    }
    Ok(m)
}

/// Loads every sample of a dataset directory in index order.
pub fn read_dataset(dir: &Path) -> Result<Vec<SyntheticSample>> {
    let m = read_manifest(dir)?;
    let fetch = DiskFetch::new(dir);
    let mut out = Vec::with_capacity(m.shard_len);
    for t in &m.trunks {
        out.extend(fetch.fetch(t)?);
    }
    Ok(out)
}

/// Reads trunks from a dataset directory.
#[derive(Debug, Clone)]
pub struct DiskFetch {
    root: PathBuf,
}

impl DiskFetch {
    pub fn new(root: &Path) -> Self {
        DiskFetch {
            root: root.to_path_buf(),
        }
    }
}

impl Fetch for DiskFetch {
    type Item = SyntheticSample;

    fn fetch(&self, trunk: &Trunk) -> Result<Vec<SyntheticSample>> {
        let rel = trunk
            .file
            .as_deref()
            .ok_or_else(|| Error::format("manifest", format!("trunk {} has no file", trunk.id)))?;
        if Path::new(rel).is_absolute() || rel.split('/').any(|c| c == "..") {
            return Err(Error::format("manifest", format!("trunk path {rel:?} leaves the dataset")));
        }
        let path = self.root.join(rel);
        let file = fs::File::open(&path).map_err(|e| Error::io(&path, e))?;
        let mut out = Vec::with_capacity(trunk.len);
        for (n, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::io(&path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let (id, sample) = Record::parse_line(&line).map_err(|e| {
                Error::format("record", format!("{}:{}: {e}", path.display(), n + 1))
            })?;
            let want = trunk.start + out.len();
            if id != want {
                return Err(Error::format(
                    "record",
                    format!("{}:{}: id {id}, expected {want}", path.display(), n + 1),
                ));
            }
            out.push(sample);
        }
        if out.len() != trunk.len {
            return Err(Error::format(
                "record",
                format!("{} holds {} records, manifest says {}", path.display(), out.len(), trunk.len),
            ));
        }
        Ok(out)
    }
}
