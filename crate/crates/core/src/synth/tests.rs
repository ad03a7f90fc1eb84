use std::fs;
use std::path::Path;

use super::*;
use crate::error::Error;
use crate::labels::{aggregate_soft, rasterize, validity_filter, PolygonAnnotation, RasterConvention, ValidityConfig};

fn small(seed: u64) -> SceneConfig {
    SceneConfig {
        image_size: 32,
        contrail_length: Range::new(12.0, 24.0),
        contrail_width: Range::new(1.5, 3.0),
        seed,
        ..SceneConfig::default()
    }
}

fn dir_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(dir).unwrap().display().to_string(), fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn noiseless_annotators_agree_exactly() {
    let cfg = SceneConfig { annotator_jitter: 0.0, annotator_miss_probability: 0.0, ..small(3) };
    let data = generate(&cfg, 6).unwrap();
    for s in &data.samples {
        let soft = aggregate_soft(s.target_annotations(), cfg.convention).unwrap();
        assert!(soft.values().iter().all(|&v| v == 0.0 || v == 1.0));
        let rings: Vec<_> = s.truth[s.target_index()].iter().map(|c| c.quad()).collect();
        for a in &s.target_annotations().annotations {
            assert_eq!(a.polygons, rings);
        }
    }
}

#[test]
fn generation_is_deterministic_and_thread_independent() {
    let cfg = small(11);
    let a = generate(&cfg, 5).unwrap();
    let b = generate(&cfg, 5).unwrap();
    assert_eq!(a, b);
    assert_eq!(generate_sample(&cfg, 3).unwrap(), a.samples[3]);
    let c = generate(&small(12), 5).unwrap();
    assert_ne!(a.samples[0].frames, c.samples[0].frames);
}

#[test]
fn same_seed_writes_byte_identical_directories() {
    let cfg = small(7);
    let (d1, d2) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    generate(&cfg, 4).unwrap().save(d1.path()).unwrap();
    generate(&cfg, 4).unwrap().save(d2.path()).unwrap();
    let (a, b) = (dir_bytes(d1.path()), dir_bytes(d2.path()));
    assert!(!a.is_empty());
    assert_eq!(a, b);
    assert!(a.iter().any(|(p, _)| p == MANIFEST_FILE));
    assert!(a.iter().any(|(p, _)| p.ends_with("frame_1.ten")));
    assert!(a.iter().any(|(p, _)| p.ends_with("annotations.json")));
    assert!(a.iter().any(|(p, _)| p.ends_with("truth.json")));
}

#[test]
fn save_load_roundtrip_is_bitwise() {
    let cfg = SceneConfig { channels: 2, frames_per_sample: 3, ..small(5) };
    let data = generate(&cfg, 4).unwrap();
    let dir = tempfile::tempdir().unwrap();
    data.save(dir.path()).unwrap();
    let back = Dataset::load(dir.path()).unwrap();
    assert_eq!(back, data);
    for (a, b) in back.samples.iter().zip(&data.samples) {
        for (fa, fb) in a.frames.iter().zip(&b.frames) {
            let bits = |t: &crate::Tensor| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(fa), bits(fb));
        }
    }
}

#[test]
fn manifest_without_height_names_the_field() {
    let dir = tempfile::tempdir().unwrap();
    generate(&small(1), 1).unwrap().save(dir.path()).unwrap();
    let path = dir.path().join(MANIFEST_FILE);
    let mut v: serde_json::Value = serde_json::from_str(&fs::read_to_string(&path).unwrap()).unwrap();
    v.as_object_mut().unwrap().remove("height");
    fs::write(&path, v.to_string()).unwrap();
    match Dataset::load(dir.path()) {
        Err(Error::Format { reason, .. }) => assert!(reason.contains("height"), "{reason}"),
        other => panic!("expected format error, got {other:?}"),
    }
}

#[test]
fn manifest_type_error_carries_pointer() {
    let dir = tempfile::tempdir().unwrap();
    generate(&small(1), 1).unwrap().save(dir.path()).unwrap();
    let path = dir.path().join(MANIFEST_FILE);
    let mut v: serde_json::Value = serde_json::from_str(&fs::read_to_string(&path).unwrap()).unwrap();
    v["scene"]["annotators"] = serde_json::json!("four");
    fs::write(&path, v.to_string()).unwrap();
    match Dataset::load(dir.path()) {
        Err(Error::Format { pointer, .. }) => assert_eq!(pointer, "/scene/annotators"),
        other => panic!("expected format error, got {other:?}"),
    }
}

#[test]
fn truncated_frame_is_an_integrity_error() {
    let dir = tempfile::tempdir().unwrap();
    let data = generate(&small(1), 1).unwrap();
    data.save(dir.path()).unwrap();
    let frame = dir.path().join(&data.samples[0].id).join("frame_0.ten");
    let bytes = fs::read(&frame).unwrap();
    fs::write(&frame, &bytes[..bytes.len() - 9]).unwrap();
    assert!(matches!(Dataset::load(dir.path()), Err(Error::Integrity(_))));
}

#[test]
fn true_contrails_pass_the_validity_filter() {
    let cfg = SceneConfig::default();
    let data = generate(&cfg, 40).unwrap();
    let vcfg = ValidityConfig::default();
    for s in &data.samples {
        let masks: Vec<_> = s
            .truth
            .iter()
            .map(|frame| {
                let poly = PolygonAnnotation { annotator_id: 0, polygons: frame.iter().map(|c| c.quad()).collect() };
                rasterize(&poly, cfg.image_size, cfg.image_size, RasterConvention::Center).unwrap()
            })
            .collect();
        let (kept, report) = validity_filter(&masks, &vcfg).unwrap();
        assert_eq!(kept, masks, "{}", s.id);
        for f in 0..masks.len() {
            let n = report.components.iter().filter(|c| c.frame == f).count();
            assert_eq!(n, s.truth[f].len(), "{}: contrails merged or split", s.id);
        }
    }
}

#[test]
fn jittered_annotations_give_fractional_soft_labels() {
    let data = generate(&SceneConfig::default(), 60).unwrap();
    let fractional = data
        .samples
        .iter()
        .filter(|s| {
            aggregate_soft(s.target_annotations(), RasterConvention::Legacy)
                .unwrap()
                .values()
                .iter()
                .any(|&v| v > 0.0 && v < 1.0)
        })
        .count();
    assert!(fractional * 100 >= 95 * data.samples.len(), "{fractional}/60");
}

#[test]
fn legacy_and_center_labels_differ_for_every_contrail_sample() {
    let data = generate(&SceneConfig::default(), 40).unwrap();
    for s in &data.samples {
        let set = s.target_annotations();
        let differ = set.annotations.iter().any(|a| {
            !a.polygons.is_empty()
                && rasterize(a, set.height, set.width, RasterConvention::Legacy).unwrap()
                    != rasterize(a, set.height, set.width, RasterConvention::Center).unwrap()
        });
        assert!(differ, "{}", s.id);
    }
}

#[test]
fn contrails_are_bright_on_the_target_frame() {
    let cfg = SceneConfig::easy();
    let data = generate(&cfg, 8).unwrap();
    for s in &data.samples {
        let poly = PolygonAnnotation {
            annotator_id: 0,
            polygons: s.truth[s.target_index()].iter().map(|c| c.quad()).collect(),
        };
        let m = rasterize(&poly, cfg.image_size, cfg.image_size, RasterConvention::Center).unwrap();
        let img = s.target_frame().data();
        let (mut on, mut off, mut n_on, mut n_off) = (0.0, 0.0, 0, 0);
        for (v, &b) in img.iter().zip(m.values()) {
            if b == 1 {
                on += v;
                n_on += 1;
            } else {
                off += v;
                n_off += 1;
            }
        }
        assert!(on / n_on as f32 > off / n_off as f32 + 0.5, "{}", s.id);
    }
}

#[test]
fn disk_size_scales_linearly() {
    let cfg = small(9);
    let size = |n: usize| {
        let d = tempfile::tempdir().unwrap();
        generate(&cfg, n).unwrap().save(d.path()).unwrap();
        dir_bytes(d.path()).iter().filter(|(p, _)| p != MANIFEST_FILE).map(|(_, b)| b.len()).sum::<usize>()
    };
    let (a, b) = (size(10), size(20));
    let ratio = b as f64 / a as f64;
    assert!((1.8..=2.2).contains(&ratio), "{ratio}");
}

#[test]
fn invalid_scene_geometry_is_rejected() {
    let short = SceneConfig { contrail_length: Range::new(8.0, 30.0), ..SceneConfig::default() };
    assert!(matches!(short.validate(), Err(Error::Config { field, .. }) if field == "scene.contrail_length"));
    let long = SceneConfig { contrail_length: Range::new(20.0, 200.0), ..SceneConfig::default() };
    assert!(matches!(generate(&long, 1), Err(Error::Config { .. })));
    let one_frame = SceneConfig { frames_per_sample: 1, ..SceneConfig::default() };
    assert!(one_frame.validate().is_err());
}
