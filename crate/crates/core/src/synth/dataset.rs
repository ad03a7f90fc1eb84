use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::scene::{Contrail, SceneConfig};
use crate::container;
use crate::error::{Error, Result};
use crate::labels::AnnotationSet;
use crate::tensor::Tensor;

pub const SCHEMA_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";

/// One scene: a short frame sequence, per-frame annotations and the
/// generator's ideal contrails. The last frame is the labeled target.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub id: String,
    pub frames: Vec<Tensor>,
    pub annotations: Vec<AnnotationSet>,
    pub truth: Vec<Vec<Contrail>>,
}

impl Sample {
    pub fn target_index(&self) -> usize {
        self.frames.len() - 1
    }

    pub fn target_frame(&self) -> &Tensor {
        &self.frames[self.target_index()]
    }

    pub fn target_annotations(&self) -> &AnnotationSet {
        &self.annotations[self.target_index()]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub scene: SceneConfig,
    pub samples: Vec<Sample>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub schema_version: u32,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub frames_per_sample: usize,
    pub scene: SceneConfig,
    pub samples: Vec<String>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Truth {
    frames: Vec<Vec<Contrail>>,
}

fn annotation_file(frame: usize, target: usize) -> String {
    if frame == target {
        "annotations.json".to_string()
    } else {
        format!("annotations_{frame}.json")
    }
}

fn write(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn parse<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let de = &mut serde_json::Deserializer::from_str(&text);
    serde_path_to_error::deserialize(de).map_err(|e| Error::Format {
        pointer: crate::json_pointer(e.path()),
        reason: format!("{}: {}", path.display(), e.inner()),
    })
}

impl Dataset {
    pub fn manifest(&self) -> Manifest {
        Manifest {
            schema_version: SCHEMA_VERSION,
            height: self.scene.image_size,
            width: self.scene.image_size,
            channels: self.scene.channels,
            frames_per_sample: self.scene.frames_per_sample,
            scene: self.scene.clone(),
            samples: self.samples.iter().map(|s| s.id.clone()).collect(),
        }
    }

    pub fn sample(&self, id: &str) -> Option<&Sample> {
        self.samples.iter().find(|s| s.id == id)
    }

    /// Writes the manifest and one directory per sample under `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let manifest = serde_json::to_string_pretty(&self.manifest()).expect("manifest serializes");
        write(&dir.join(MANIFEST_FILE), manifest + "\n")?;
        for s in &self.samples {
            let sd = dir.join(&s.id);
            fs::create_dir_all(&sd).map_err(|e| Error::io(&sd, e))?;
            let target = s.target_index();
            for (i, frame) in s.frames.iter().enumerate() {
                container::save(&sd.join(format!("frame_{i}.ten")), &[("image", frame)])?;
                s.annotations[i].save(&sd.join(annotation_file(i, target)))?;
            }
            let truth = serde_json::to_string_pretty(&Truth { frames: s.truth.clone() }).expect("truth serializes");
            write(&sd.join("truth.json"), truth + "\n")?;
        }
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let m: Manifest = parse(&dir.join(MANIFEST_FILE))?;
        if m.schema_version != SCHEMA_VERSION {
            return Err(Error::Format {
                pointer: "/schema_version".into(),
                reason: format!("unsupported schema version {}", m.schema_version),
            });
        }
        if m.frames_per_sample == 0 {
            return Err(Error::Format { pointer: "/frames_per_sample".into(), reason: "must be >= 1".into() });
        }
        let mut samples = Vec::with_capacity(m.samples.len());
        for id in &m.samples {
            let sd = dir.join(id);
            let target = m.frames_per_sample - 1;
            let mut frames = Vec::with_capacity(m.frames_per_sample);
            let mut annotations = Vec::with_capacity(m.frames_per_sample);
            for i in 0..m.frames_per_sample {
                let path = sd.join(format!("frame_{i}.ten"));
                let mut entries = container::load(&path)?;
                let frame = match (entries.pop(), entries.is_empty()) {
                    (Some((name, t)), true) if name == "image" => t,
                    _ => return Err(Error::Integrity(format!("{}: expected one tensor named image", path.display()))),
                };
                if frame.shape() != [m.channels, m.height, m.width] {
                    return Err(Error::Integrity(format!(
                        "{}: shape {:?} disagrees with manifest",
                        path.display(),
                        frame.shape()
                    )));
                }
                frames.push(frame);
                let set = AnnotationSet::load(&sd.join(annotation_file(i, target)))?;
                if set.height != m.height || set.width != m.width {
                    return Err(Error::Format {
                        pointer: "/height".into(),
                        reason: format!("{id}: annotation size disagrees with manifest"),
                    });
                }
                annotations.push(set);
            }
            let truth: Truth = parse(&sd.join("truth.json"))?;
            samples.push(Sample { id: id.clone(), frames, annotations, truth: truth.frames });
        }
        Ok(Self { scene: m.scene, samples })
    }
}
