//! Dataset manifests and tensor blobs.
//!
//! A manifest is UTF-8 text, one entry per line. `#` lines are comments.
//! Header lines are single `key:value` pairs (`format:triad-manifest/1`,
//! then `generator.<field>:<value>` echoes). Each record is one line of
//! space-separated `key:value` fields in this order:
//!
//! ```text
//! id:<id> label:<0|1> domain:<P|A> split:<train|test> shape:<d0>x<d1>.. (blob:<path> [mask:<path>] | vector:<v0>,<v1>,..)
//! ```
//!
//! Blob paths are relative to the manifest's directory. A blob file is the
//! magic `TBLOB1`, a `u8` rank, `rank` little-endian `u32` extents and the
//! row-major little-endian `f64` values.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use super::sample::{valid_id, Dataset, Domain, LabeledSample, Split};
use crate::error::{Error, Result};
use crate::util::write_atomic;
use crate::Tensor64;

pub const BLOB_MAGIC: &[u8; 6] = b"TBLOB1";
pub const MANIFEST_FORMAT: &str = "triad-manifest/1";
pub const MANIFEST_FILE: &str = "manifest.txt";

pub fn encode_blob(t: &Tensor64) -> Vec<u8> {
    let mut out = Vec::with_capacity(7 + 4 * t.rank() + 8 * t.len());
    out.extend_from_slice(BLOB_MAGIC);
    out.push(t.rank() as u8);
    for &e in t.shape() {
        out.extend_from_slice(&(e as u32).to_le_bytes());
    }
    for v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_blob(bytes: &[u8]) -> Result<Tensor64> {
    let bad = |detail: String| Error::Integrity {
        section: "blob".into(),
        detail,
    };
    if bytes.len() < 7 || &bytes[..6] != BLOB_MAGIC {
        return Err(bad("missing TBLOB1 magic".into()));
    }
    let rank = bytes[6] as usize;
    let mut pos = 7;
    let mut shape = Vec::with_capacity(rank);
    for _ in 0..rank {
        let chunk = bytes
            .get(pos..pos + 4)
            .ok_or_else(|| bad("truncated extents".into()))?;
        shape.push(u32::from_le_bytes(chunk.try_into().expect("4 bytes")) as usize);
        pos += 4;
    }
    let count: usize = shape.iter().product();
    let body = &bytes[pos..];
    if body.len() != count * 8 {
        return Err(bad(format!("expected {} data bytes, found {}", count * 8, body.len())));
    }
    let data = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    Tensor64::new(shape, data).map_err(|e| bad(e.to_string()))
}

#[derive(Clone, Debug, PartialEq)]
pub enum SampleSource {
    Blob { path: String, mask: Option<String> },
    Inline(Vec<f64>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct ManifestRecord {
    pub id: String,
    pub label: u8,
    pub domain: Domain,
    pub split: Split,
    pub shape: Vec<usize>,
    pub source: SampleSource,
}

#[derive(Clone, Debug, PartialEq, Default)]
pub struct DatasetManifest {
    /// Generator configuration echo, in insertion order.
    pub echo: Vec<(String, String)>,
    pub records: Vec<ManifestRecord>,
}

fn format_shape(shape: &[usize]) -> String {
    shape.iter().map(usize::to_string).collect::<Vec<_>>().join("x")
}

fn parse_shape(s: &str) -> Option<Vec<usize>> {
    s.split('x').map(|p| p.parse().ok().filter(|&e| e > 0)).collect()
}

impl DatasetManifest {
    pub fn to_text(&self) -> String {
        let mut out = format!("# triad dataset manifest\nformat:{MANIFEST_FORMAT}\n");
        for (k, v) in &self.echo {
            out.push_str(&format!("generator.{k}:{v}\n"));
        }
        for r in &self.records {
            out.push_str(&format!(
                "id:{} label:{} domain:{} split:{} shape:{}",
                r.id,
                r.label,
                r.domain.as_str(),
                r.split.as_str(),
                format_shape(&r.shape)
            ));
            match &r.source {
                SampleSource::Blob { path, mask } => {
                    out.push_str(&format!(" blob:{path}"));
                    if let Some(m) = mask {
                        out.push_str(&format!(" mask:{m}"));
                    }
                }
                SampleSource::Inline(v) => {
                    let vals: Vec<String> = v.iter().map(f64::to_string).collect();
                    out.push_str(&format!(" vector:{}", vals.join(",")));
                }
            }
            out.push('\n');
        }
        out
    }

    /// Parses manifest text, collecting every problem with its line number.
    pub fn parse(text: &str) -> Result<Self> {
        let mut manifest = DatasetManifest::default();
        let mut problems = Vec::new();
        let mut saw_format = false;
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            let lineno = n + 1;
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if line.starts_with("id:") {
                match parse_record(line) {
                    Ok(r) => manifest.records.push(r),
                    Err(e) => problems.push(format!("line {lineno}: {e}")),
                }
                continue;
            }
            match line.split_once(':') {
                Some(("format", v)) if v == MANIFEST_FORMAT => saw_format = true,
                Some(("format", v)) => problems.push(format!("line {lineno}: unsupported format `{v}`")),
                Some((k, v)) if k.starts_with("generator.") => manifest
                    .echo
                    .push((k["generator.".len()..].to_string(), v.to_string())),
                _ => problems.push(format!("line {lineno}: unrecognized line `{line}`")),
            }
        }
        if !saw_format {
            problems.insert(0, format!("missing `format:{MANIFEST_FORMAT}` header"));
        }
        if problems.is_empty() {
            Ok(manifest)
        } else {
            Err(Error::Manifest(problems))
        }
    }
}

fn parse_record(line: &str) -> std::result::Result<ManifestRecord, String> {
    let fields: Vec<(&str, &str)> = line
        .split_whitespace()
        .map(|f| f.split_once(':').ok_or_else(|| format!("field `{f}` is not key:value")))
        .collect::<std::result::Result<_, _>>()?;
    let get = |key: &str| fields.iter().find(|(k, _)| *k == key).map(|(_, v)| *v);
    let id = get("id").unwrap_or_default().to_string();
    let need = |key: &str| get(key).ok_or_else(|| format!("record `{id}`: missing field `{key}`"));
    if !valid_id(&id) {
        return Err(format!("invalid id `{id}`"));
    }
    let label = match need("label")? {
        "0" => 0,
        "1" => 1,
        other => return Err(format!("record `{id}`: label `{other}` is not 0 or 1")),
    };
    let domain = Domain::parse(need("domain")?).map_err(|e| format!("record `{id}`: {e}"))?;
    let split = Split::parse(need("split")?).map_err(|e| format!("record `{id}`: {e}"))?;
    let shape = parse_shape(need("shape")?).ok_or_else(|| format!("record `{id}`: malformed shape"))?;
    let source = match (get("blob"), get("vector")) {
        (Some(path), None) => SampleSource::Blob {
            path: path.to_string(),
            mask: get("mask").map(str::to_string),
        },
        (None, Some(v)) => SampleSource::Inline(
            v.split(',')
                .map(|x| x.parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| format!("record `{id}`: malformed vector"))?,
        ),
        _ => return Err(format!("record `{id}`: needs exactly one of `blob` or `vector`")),
    };
    Ok(ManifestRecord {
        id,
        label,
        domain,
        split,
        shape,
        source,
    })
}

/// Writes blobs (images) or inline vectors plus `manifest.txt` under `dir`.
/// The manifest is written last, so a present manifest implies complete
/// blobs.
pub fn write_dataset(dir: &Path, dataset: &Dataset, echo: &[(String, String)]) -> Result<DatasetManifest> {
    let mut records = Vec::with_capacity(dataset.len());
    for s in dataset.samples() {
        let source = if s.image.rank() == 1 {
            SampleSource::Inline(s.image.data().to_vec())
        } else {
            let path = format!("blobs/{}.tblob", s.id);
            write_atomic(&dir.join(&path), &encode_blob(&s.image))?;
            let mask = match &s.mask {
                Some(m) => {
                    let mp = format!("blobs/{}.mask.tblob", s.id);
                    write_atomic(&dir.join(&mp), &encode_blob(m))?;
                    Some(mp)
                }
                None => None,
            };
            SampleSource::Blob { path, mask }
        };
        records.push(ManifestRecord {
            id: s.id.clone(),
            label: s.label,
            domain: s.domain,
            split: s.split,
            shape: s.image.shape().to_vec(),
            source,
        });
    }
    let manifest = DatasetManifest {
        echo: echo.to_vec(),
        records,
    };
    write_atomic(&dir.join(MANIFEST_FILE), manifest.to_text().as_bytes())?;
    Ok(manifest)
}

fn load_blob(base: &Path, rel: &str, id: &str, what: &str) -> std::result::Result<Tensor64, String> {
    let path: PathBuf = base.join(rel);
    let bytes = fs::read(&path).map_err(|e| format!("record `{id}`: missing {what} `{rel}` ({e})"))?;
    decode_blob(&bytes).map_err(|e| format!("record `{id}`: {what} `{rel}`: {e}"))
}

/// Loads a manifest (file, or a directory containing `manifest.txt`) and
/// every sample it references.
pub fn ingest_manifest(path: &Path) -> Result<Dataset> {
    let file = if path.is_dir() { path.join(MANIFEST_FILE) } else { path.to_path_buf() };
    let base = file.parent().map(Path::to_path_buf).unwrap_or_default();
    let text = fs::read_to_string(&file)?;
    let manifest = DatasetManifest::parse(&text)?;
    let mut problems = Vec::new();
    let mut seen = BTreeSet::new();
    let mut samples = Vec::with_capacity(manifest.records.len());
    for r in &manifest.records {
        if !seen.insert(r.id.clone()) {
            problems.push(format!("duplicate id `{}`", r.id));
            continue;
        }
        let loaded = match &r.source {
            SampleSource::Inline(v) => Tensor64::new(r.shape.clone(), v.clone())
                .map(|t| (t, None))
                .map_err(|e| format!("record `{}`: {e}", r.id)),
            SampleSource::Blob { path, mask } => load_blob(&base, path, &r.id, "blob").and_then(|img| {
                let m = mask
                    .as_ref()
                    .map(|m| load_blob(&base, m, &r.id, "mask"))
                    .transpose()?;
                Ok((img, m))
            }),
        };
        match loaded {
            Ok((image, _)) if image.shape() != r.shape.as_slice() => problems.push(format!(
                "record `{}`: shape mismatch, declared {} but decoded {}",
                r.id,
                format_shape(&r.shape),
                format_shape(image.shape())
            )),
            Ok((image, mask)) => samples.push(LabeledSample {
                id: r.id.clone(),
                image,
                mask,
                label: r.label,
                domain: r.domain,
                split: r.split,
            }),
            Err(p) => problems.push(p),
        }
    }
    if !problems.is_empty() {
        return Err(Error::Manifest(problems));
    }
    Dataset::new(samples)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn blob_round_trip_and_layout() {
        let t = Tensor64::new(vec![1, 2, 3], vec![0.5, -1.0, 2.0, 3.25, 1e-300, -0.0]).unwrap();
        let b = encode_blob(&t);
        assert_eq!(&b[..6], b"TBLOB1");
        assert_eq!(b[6], 3);
        assert_eq!(&b[7..11], &1u32.to_le_bytes());
        assert_eq!(b.len(), 7 + 12 + 48);
        let back = decode_blob(&b).unwrap();
        assert_eq!(back.shape(), t.shape());
        assert!(back.data().iter().zip(t.data()).all(|(a, b)| a.to_bits() == b.to_bits()));
        assert!(decode_blob(&b[..b.len() - 1]).is_err());
        assert!(decode_blob(b"TBLOB2\x00").is_err());
    }

    #[test]
    fn text_round_trip() {
        let m = DatasetManifest {
            echo: vec![("seed".into(), "7".into())],
            records: vec![
                ManifestRecord {
                    id: "a".into(),
                    label: 1,
                    domain: Domain::Adult,
                    split: Split::Test,
                    shape: vec![3],
                    source: SampleSource::Inline(vec![0.1, -2.5, 1e-17]),
                },
                ManifestRecord {
                    id: "b".into(),
                    label: 0,
                    domain: Domain::Pediatric,
                    split: Split::Train,
                    shape: vec![1, 4, 4],
                    source: SampleSource::Blob {
                        path: "blobs/b.tblob".into(),
                        mask: Some("blobs/b.mask.tblob".into()),
                    },
                },
            ],
        };
        let text = m.to_text();
        assert!(text.contains("id:a label:1 domain:A split:test shape:3 vector:0.1,-2.5,0.00000000000000001"));
        assert_eq!(DatasetManifest::parse(&text).unwrap(), m);
    }

    #[test]
    fn parse_problems_are_itemized() {
        let text = "format:triad-manifest/1\nid:x label:2 domain:P split:train shape:1 vector:0\nbogus\n";
        match DatasetManifest::parse(text).unwrap_err() {
            Error::Manifest(p) => {
                assert_eq!(p.len(), 2);
                assert!(p[0].starts_with("line 2") && p[0].contains("`x`"));
                assert!(p[1].starts_with("line 3"));
            }
            e => panic!("{e}"),
        }
    }
}
