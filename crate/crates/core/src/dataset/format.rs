//! On-disk feature format: `<name>.manifest.json` plus `<name>.tensors.bin`.
//!
//! The tensor blob holds little-endian IEEE-754 `f32` values, in order:
//! vocabulary embeddings (`V_cand x D_e`), then per instance `h_start` (`D`),
//! `h_end` (`D`), `lm_logits_start` (`V_cand`), `lm_logits_end` (`V_cand`).
//! A token-id section follows: per instance a `u32` count and that many
//! `u32` vocabulary indices, all little-endian. Byte offsets of the three
//! sections are recorded in the manifest.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{
    ClassInfo, Dataset, FeatureInstance, Ontology, Placement, Split, StreamLayout, VocabToken,
    Vocabulary,
};
use crate::error::{Error, Result};
use crate::numerics::Matrix;

pub const FORMAT_VERSION: u32 = 1;

const MANIFEST_SUFFIX: &str = ".manifest.json";
const TENSOR_SUFFIX: &str = ".tensors.bin";

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    format_version: u32,
    name: String,
    #[serde(rename = "D")]
    d: usize,
    #[serde(rename = "D_e")]
    d_e: usize,
    #[serde(rename = "V_cand")]
    v_cand: usize,
    tokens: Vec<VocabToken>,
    classes: Vec<ClassInfo>,
    /// Label names per task, in publication order.
    tasks: Vec<Vec<String>>,
    instance_count: usize,
    instances: Vec<InstanceEntry>,
    tensor_file: String,
    sections: Sections,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct InstanceEntry {
    id: String,
    task: usize,
    split: Split,
    label: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Sections {
    embeddings: Section,
    instances: Section,
    token_ids: Section,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Section {
    offset: u64,
    length: u64,
}

/// Locates the single `*.manifest.json` inside `dir`, or accepts a manifest path.
pub fn find_manifest(path: &Path) -> Result<PathBuf> {
    if path.is_file() {
        return Ok(path.to_path_buf());
    }
    let mut found: Vec<PathBuf> = fs::read_dir(path)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| n.ends_with(MANIFEST_SUFFIX))
        })
        .collect();
    found.sort();
    match found.len() {
        1 => Ok(found.remove(0)),
        0 => Err(Error::Config(format!("no manifest in {}", path.display()))),
        n => Err(Error::Config(format!("{n} manifests in {}", path.display()))),
    }
}

fn push_f32s(buf: &mut Vec<u8>, xs: &[f64]) {
    for &x in xs {
        buf.extend_from_slice(&(x as f32).to_le_bytes());
    }
}

/// Writes the manifest and tensor blob into `dir`, returning the manifest path.
///
/// Values are stored as `f32`; data that is already `f32`-representable
/// round-trips bit-exactly.
pub fn write_feature_file(dataset: &Dataset, dir: &Path) -> Result<PathBuf> {
    dataset.validate()?;
    fs::create_dir_all(dir)?;
    let d = dataset.feature_dim();
    let v = dataset.vocab.len();

    let mut blob = Vec::new();
    push_f32s(&mut blob, dataset.vocab.embeddings.as_slice());
    let emb_len = blob.len() as u64;
    for inst in &dataset.instances {
        push_f32s(&mut blob, &inst.h_start);
        push_f32s(&mut blob, &inst.h_end);
        push_f32s(&mut blob, &inst.lm_logits_start);
        push_f32s(&mut blob, &inst.lm_logits_end);
    }
    let inst_len = blob.len() as u64 - emb_len;
    for inst in &dataset.instances {
        blob.extend_from_slice(&(inst.token_ids.len() as u32).to_le_bytes());
        for &t in &inst.token_ids {
            blob.extend_from_slice(&t.to_le_bytes());
        }
    }
    let tok_len = blob.len() as u64 - emb_len - inst_len;

    let names = &dataset.ontology.classes;
    let manifest = Manifest {
        format_version: FORMAT_VERSION,
        name: dataset.name.clone(),
        d,
        d_e: dataset.vocab.embedding_dim(),
        v_cand: v,
        tokens: dataset.vocab.tokens.clone(),
        classes: names.clone(),
        tasks: dataset
            .layout
            .task_labels
            .iter()
            .map(|ls| ls.iter().map(|&l| names[l].name.clone()).collect())
            .collect(),
        instance_count: dataset.instances.len(),
        instances: dataset
            .instances
            .iter()
            .zip(&dataset.layout.placement)
            .map(|(inst, p)| InstanceEntry {
                id: inst.instance_id.clone(),
                task: p.task,
                split: p.split,
                label: names[inst.label].name.clone(),
            })
            .collect(),
        tensor_file: format!("{}{TENSOR_SUFFIX}", dataset.name),
        sections: Sections {
            embeddings: Section { offset: 0, length: emb_len },
            instances: Section { offset: emb_len, length: inst_len },
            token_ids: Section {
                offset: emb_len + inst_len,
                length: tok_len,
            },
        },
    };

    let manifest_path = dir.join(format!("{}{MANIFEST_SUFFIX}", dataset.name));
    let mut text = serde_json::to_string_pretty(&manifest)?;
    text.push('\n');
    fs::write(&manifest_path, text)?;
    fs::write(dir.join(&manifest.tensor_file), blob)?;
    Ok(manifest_path)
}

struct BlobReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl BlobReader<'_> {
    fn f32s(&mut self, n: usize, what: &str) -> Result<Vec<f64>> {
        let end = self.pos + 4 * n;
        let out: Vec<f64> = self.bytes[self.pos..end]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect();
        self.pos = end;
        if out.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinitePayload(what.to_string()));
        }
        Ok(out)
    }

    fn u32(&mut self) -> Option<u32> {
        let c = self.bytes.get(self.pos..self.pos + 4)?;
        self.pos += 4;
        Some(u32::from_le_bytes([c[0], c[1], c[2], c[3]]))
    }
}

/// Reads and validates a dataset from a manifest path (or a directory holding one).
pub fn read_feature_file(path: &Path) -> Result<Dataset> {
    let manifest_path = find_manifest(path)?;
    let malformed = |reason: String| Error::MalformedHeader {
        path: manifest_path.clone(),
        reason,
    };
    let text = fs::read_to_string(&manifest_path)?;
    let m: Manifest = serde_json::from_str(&text).map_err(|e| malformed(e.to_string()))?;
    if m.format_version != FORMAT_VERSION {
        return Err(malformed(format!("unsupported format_version {}", m.format_version)));
    }
    if m.instance_count != m.instances.len() {
        return Err(malformed(format!(
            "instance_count {} but {} instance entries",
            m.instance_count,
            m.instances.len()
        )));
    }
    if m.tokens.len() != m.v_cand {
        return Err(Error::DimensionMismatch(format!(
            "V_cand = {} but {} tokens listed",
            m.v_cand,
            m.tokens.len()
        )));
    }
    let emb_expected = 4 * (m.v_cand * m.d_e) as u64;
    let inst_expected = 4 * ((2 * m.d + 2 * m.v_cand) * m.instance_count) as u64;
    let s = m.sections;
    if s.embeddings.length != emb_expected || s.instances.length != inst_expected {
        return Err(Error::DimensionMismatch(format!(
            "tensor sections of {} / {} bytes do not match D={}, D_e={}, V_cand={}, {} instances",
            s.embeddings.length, s.instances.length, m.d, m.d_e, m.v_cand, m.instance_count
        )));
    }
    if s.embeddings.offset != 0
        || s.instances.offset != s.embeddings.length
        || s.token_ids.offset != s.instances.offset + s.instances.length
    {
        return Err(malformed("section offsets are not contiguous".into()));
    }

    let blob_path = manifest_path
        .parent()
        .unwrap_or_else(|| Path::new("."))
        .join(&m.tensor_file);
    let bytes = fs::read(&blob_path)?;
    let expected = s.token_ids.offset + s.token_ids.length;
    if (bytes.len() as u64) < expected {
        return Err(Error::TruncatedBlob {
            path: blob_path,
            expected,
            found: bytes.len() as u64,
        });
    }
    if bytes.len() as u64 != expected {
        return Err(malformed(format!(
            "tensor blob has {} bytes, sections declare {expected}",
            bytes.len()
        )));
    }

    let mut r = BlobReader { bytes: &bytes, pos: 0 };
    let emb = r.f32s(m.v_cand * m.d_e, "vocabulary embeddings")?;
    let vocab = Vocabulary::new(m.tokens, Matrix::from_vec(m.v_cand, m.d_e, emb)?)?;
    let ontology = Ontology::new(m.classes, m.v_cand)?;

    let label_of = |name: &str| {
        ontology
            .index_of(name)
            .ok_or_else(|| Error::Ontology(format!("unknown label {name:?}")))
    };
    let mut instances = Vec::with_capacity(m.instance_count);
    let mut placement = Vec::with_capacity(m.instance_count);
    for e in &m.instances {
        let what = format!("instance {}", e.id);
        instances.push(FeatureInstance {
            instance_id: e.id.clone(),
            label: label_of(&e.label)?,
            h_start: r.f32s(m.d, &what)?,
            h_end: r.f32s(m.d, &what)?,
            lm_logits_start: r.f32s(m.v_cand, &what)?,
            lm_logits_end: r.f32s(m.v_cand, &what)?,
            token_ids: Vec::new(),
        });
        placement.push(Placement {
            task: e.task,
            split: e.split,
        });
    }
    let end = expected as usize;
    for inst in instances.iter_mut() {
        let truncated = || Error::DimensionMismatch("token-id section shorter than its counts".into());
        let n = r.u32().ok_or_else(truncated)? as usize;
        if r.pos + 4 * n > end {
            return Err(truncated());
        }
        inst.token_ids = (0..n).map(|_| r.u32().unwrap()).collect();
    }
    if r.pos != end {
        return Err(Error::DimensionMismatch(format!(
            "token-id section has {} trailing bytes",
            end - r.pos
        )));
    }

    let task_labels = m
        .tasks
        .iter()
        .map(|names| names.iter().map(|n| label_of(n)).collect::<Result<Vec<_>>>())
        .collect::<Result<Vec<_>>>()?;
    let dataset = Dataset {
        name: m.name,
        vocab,
        ontology,
        instances,
        layout: StreamLayout {
            task_labels,
            placement,
        },
    };
    dataset.validate()?;
    Ok(dataset)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{make_synthetic_stream, SyntheticConfig};
    use crate::numerics::SeededRng;

    fn tiny() -> Dataset {
        let cfg = SyntheticConfig {
            tasks: 2,
            classes_per_task: 2,
            train_per_class: 2,
            dev_per_class: 1,
            test_per_class: 1,
            feature_dim: 3,
            embed_dim: 4,
            vocab_size: 12,
            verb_count: 6,
            neighbors: 2,
            ..SyntheticConfig::default()
        };
        make_synthetic_stream(&cfg, &mut SeededRng::new(1)).unwrap()
    }

    #[test]
    fn round_trip_and_byte_identical() {
        let ds = tiny();
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let pa = write_feature_file(&ds, a.path()).unwrap();
        let pb = write_feature_file(&ds, b.path()).unwrap();
        assert_eq!(fs::read(&pa).unwrap(), fs::read(&pb).unwrap());
        let blob = format!("{}{TENSOR_SUFFIX}", ds.name);
        assert_eq!(
            fs::read(a.path().join(&blob)).unwrap(),
            fs::read(b.path().join(&blob)).unwrap()
        );
        let back = read_feature_file(a.path()).unwrap();
        assert_eq!(back, ds);
    }

    #[test]
    fn empty_instance_list() {
        let mut ds = tiny();
        ds.instances.clear();
        ds.layout.placement.clear();
        let dir = tempfile::tempdir().unwrap();
        write_feature_file(&ds, dir.path()).unwrap();
        let back = read_feature_file(dir.path()).unwrap();
        assert!(back.instances.is_empty());
        assert_eq!(back.vocab, ds.vocab);
    }

    fn rewrite_manifest(dir: &Path, name: &str, f: impl FnOnce(&mut serde_json::Value)) {
        let p = dir.join(format!("{name}{MANIFEST_SUFFIX}"));
        let mut v: serde_json::Value = serde_json::from_str(&fs::read_to_string(&p).unwrap()).unwrap();
        f(&mut v);
        fs::write(&p, serde_json::to_string(&v).unwrap()).unwrap();
    }

    #[test]
    fn short_logit_rows_are_a_dimension_mismatch() {
        // Write a dataset whose logit rows hold V-1 values, then claim V.
        let mut ds = tiny();
        let v = ds.vocab.len();
        let dir = tempfile::tempdir().unwrap();
        write_feature_file(&ds, dir.path()).unwrap();
        for inst in ds.instances.iter_mut() {
            inst.lm_logits_start.pop();
            inst.lm_logits_end.pop();
        }
        let mut blob = Vec::new();
        push_f32s(&mut blob, ds.vocab.embeddings.as_slice());
        let emb = blob.len() as u64;
        for inst in &ds.instances {
            push_f32s(&mut blob, &inst.h_start);
            push_f32s(&mut blob, &inst.h_end);
            push_f32s(&mut blob, &inst.lm_logits_start);
            push_f32s(&mut blob, &inst.lm_logits_end);
        }
        let inst_len = blob.len() as u64 - emb;
        for inst in &ds.instances {
            blob.extend_from_slice(&(inst.token_ids.len() as u32).to_le_bytes());
            for &t in &inst.token_ids {
                blob.extend_from_slice(&t.to_le_bytes());
            }
        }
        let tok = blob.len() as u64 - emb - inst_len;
        fs::write(dir.path().join(format!("{}{TENSOR_SUFFIX}", ds.name)), &blob).unwrap();
        rewrite_manifest(dir.path(), &ds.name, |m| {
            assert_eq!(m["V_cand"], v);
            m["sections"]["instances"]["length"] = inst_len.into();
            m["sections"]["token_ids"]["offset"] = (emb + inst_len).into();
            m["sections"]["token_ids"]["length"] = tok.into();
        });
        let err = read_feature_file(dir.path()).unwrap_err();
        assert!(matches!(err, Error::DimensionMismatch(_)), "{err}");
    }

    #[test]
    fn distinct_error_codes() {
        let ds = tiny();
        let dir = tempfile::tempdir().unwrap();
        write_feature_file(&ds, dir.path()).unwrap();
        let blob = dir.path().join(format!("{}{TENSOR_SUFFIX}", ds.name));
        let bytes = fs::read(&blob).unwrap();

        fs::write(&blob, &bytes[..bytes.len() - 7]).unwrap();
        assert!(matches!(read_feature_file(dir.path()), Err(Error::TruncatedBlob { .. })));

        let mut bad = bytes.clone();
        bad[0..4].copy_from_slice(&f32::NAN.to_le_bytes());
        fs::write(&blob, &bad).unwrap();
        assert!(matches!(read_feature_file(dir.path()), Err(Error::NonFinitePayload(_))));

        fs::write(&blob, &bytes).unwrap();
        rewrite_manifest(dir.path(), &ds.name, |m| m["format_version"] = 7.into());
        assert!(matches!(read_feature_file(dir.path()), Err(Error::MalformedHeader { .. })));

        let p = dir.path().join(format!("{}{MANIFEST_SUFFIX}", ds.name));
        fs::write(&p, "{ not json").unwrap();
        assert!(matches!(read_feature_file(&p), Err(Error::MalformedHeader { .. })));
    }
}
