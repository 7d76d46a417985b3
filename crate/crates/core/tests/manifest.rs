use std::fs;

use triad::data::manifest::MANIFEST_FILE;
use triad::data::{decode_blob, generate_synthetic, ingest_manifest, write_dataset, Dataset, SynthMode, SyntheticConfig};
use triad::Error;

fn small(mode: SynthMode, seed: u64) -> Dataset {
    generate_synthetic(&SyntheticConfig {
        n_per_cell: 5,
        mode,
        image_size: 20,
        seed,
        ..SyntheticConfig::default()
    })
    .unwrap()
}

fn same_bits(a: &Dataset, b: &Dataset) -> bool {
    a.len() == b.len()
        && a.samples().iter().zip(b.samples()).all(|(x, y)| {
            let bits = |t: &triad::Tensor64| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
            x.id == y.id
                && x.label == y.label
                && x.domain == y.domain
                && x.split == y.split
                && x.image.shape() == y.image.shape()
                && bits(&x.image) == bits(&y.image)
                && x.mask.as_ref().map(bits) == y.mask.as_ref().map(bits)
        })
}

#[test]
fn images_round_trip_bit_for_bit() {
    let dir = tempfile::tempdir().unwrap();
    let data = small(SynthMode::Image, 3);
    let echo = vec![("seed".to_string(), "3".to_string())];
    let manifest = write_dataset(dir.path(), &data, &echo).unwrap();
    assert_eq!(manifest.records.len(), 20);
    let back = ingest_manifest(dir.path()).unwrap();
    assert!(same_bits(&data, &back));
    assert!(back.samples().iter().all(|s| s.mask.is_some()));
    let via_file = ingest_manifest(&dir.path().join(MANIFEST_FILE)).unwrap();
    assert!(same_bits(&data, &via_file));
    let text = fs::read_to_string(dir.path().join(MANIFEST_FILE)).unwrap();
    assert!(text.contains("generator.seed:3"));
}

#[test]
fn vectors_round_trip_inline() {
    let dir = tempfile::tempdir().unwrap();
    let data = small(SynthMode::Vector, 4);
    write_dataset(dir.path(), &data, &[]).unwrap();
    assert!(!dir.path().join("blobs").exists());
    assert!(same_bits(&data, &ingest_manifest(dir.path()).unwrap()));
}

#[test]
fn blob_files_use_the_tblob1_layout() {
    let dir = tempfile::tempdir().unwrap();
    let data = small(SynthMode::Image, 5);
    write_dataset(dir.path(), &data, &[]).unwrap();
    let first = &data.samples()[0];
    let bytes = fs::read(dir.path().join(format!("blobs/{}.tblob", first.id))).unwrap();
    let shape = first.image.shape();
    assert_eq!(&bytes[..6], b"TBLOB1");
    assert_eq!(bytes[6] as usize, shape.len());
    for (i, &e) in shape.iter().enumerate() {
        assert_eq!(u32::from_le_bytes(bytes[7 + 4 * i..11 + 4 * i].try_into().unwrap()) as usize, e);
    }
    let body = 7 + 4 * shape.len();
    assert_eq!(bytes.len(), body + 8 * first.image.len());
    assert_eq!(f64::from_le_bytes(bytes[body..body + 8].try_into().unwrap()), first.image.data()[0]);
    assert_eq!(decode_blob(&bytes).unwrap(), first.image);
}

fn manifest_problems(err: Error) -> Vec<String> {
    match err {
        Error::Manifest(p) => p,
        other => panic!("expected a manifest error, got {other}"),
    }
}

#[test]
fn missing_blob_names_the_record() {
    let dir = tempfile::tempdir().unwrap();
    let data = small(SynthMode::Image, 6);
    write_dataset(dir.path(), &data, &[]).unwrap();
    let victim = &data.samples()[7].id;
    fs::remove_file(dir.path().join(format!("blobs/{victim}.tblob"))).unwrap();
    let problems = manifest_problems(ingest_manifest(dir.path()).unwrap_err());
    assert_eq!(problems.len(), 1);
    assert!(problems[0].contains(victim.as_str()), "{problems:?}");
}

#[test]
fn duplicate_id_names_the_record() {
    let dir = tempfile::tempdir().unwrap();
    let data = small(SynthMode::Vector, 7);
    write_dataset(dir.path(), &data, &[]).unwrap();
    let path = dir.path().join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).unwrap();
    let record = text.lines().find(|l| l.starts_with("id:")).unwrap().to_string();
    fs::write(&path, format!("{text}{record}\n")).unwrap();
    let problems = manifest_problems(ingest_manifest(dir.path()).unwrap_err());
    let id = record.split_whitespace().next().unwrap().trim_start_matches("id:");
    assert!(problems.iter().any(|p| p.contains("duplicate") && p.contains(id)), "{problems:?}");
}

#[test]
fn malformed_lines_are_reported_together() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join(MANIFEST_FILE);
    fs::write(
        &path,
        "format:triad-manifest/1\nid:a label:2 domain:P split:train shape:2 vector:1,2\nid:b label:0 domain:X split:train shape:2 vector:1,2\n",
    )
    .unwrap();
    let problems = manifest_problems(ingest_manifest(dir.path()).unwrap_err());
    assert!(problems.len() >= 2, "{problems:?}");
}

#[test]
fn generation_depends_only_on_the_seed() {
    assert!(same_bits(&small(SynthMode::Image, 9), &small(SynthMode::Image, 9)));
    assert!(!same_bits(&small(SynthMode::Image, 9), &small(SynthMode::Image, 10)));
}
