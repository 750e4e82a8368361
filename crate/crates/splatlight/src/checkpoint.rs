//! Binary scene checkpoints.
//!
//! Layout (all integers little-endian):
//!
//! | bytes          | content                                   |
//! |----------------|-------------------------------------------|
//! | 8              | magic `SPLTLGHT`                           |
//! | 4              | format version (`u32`)                    |
//! | 4              | header length `n` (`u32`)                 |
//! | n              | UTF-8 JSON [`Header`]                     |
//! | 8 × Σ len      | `f64` sections, in `header.sections` order |
//!
//! Sections hold the Gaussian fields, the ASG bank, both network weight
//! vectors, then (for training checkpoints) the per-frame camera and light
//! corrections and every Adam moment vector. The header records network layer
//! sizes, so loading checks the architecture before touching weights.

use std::collections::BTreeMap;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use splatlight_core::nn::{Mlp, MlpError};
use splatlight_core::optim::{Adam, AdamState};
use splatlight_core::params::ParamBlock;
use splatlight_core::scene::{GaussianScene, SceneError, EMBED_DIM};
use splatlight_core::shading::{AsgBank, LOBE_STRIDE};
use splatlight_core::trainer::{RefinementState, Trainer};

pub const MAGIC: [u8; 8] = *b"SPLTLGHT";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("not a checkpoint (bad magic)")]
    BadMagic,
    #[error("checkpoint format version {found} is not supported (this build reads version {expected})")]
    Version { found: u32, expected: u32 },
    #[error("checkpoint is truncated")]
    Truncated,
    #[error("checkpoint header: {0}")]
    Header(#[from] serde_json::Error),
    #[error("section `{name}` has {got} values, expected {expected}")]
    SectionLen {
        name: String,
        expected: usize,
        got: usize,
    },
    #[error("missing section `{0}`")]
    MissingSection(String),
    #[error("unknown parameter block `{0}`")]
    UnknownBlock(String),
    #[error("{0} trailing bytes after the last section")]
    Trailing(usize),
    #[error("network `{name}`: {source}")]
    Network { name: &'static str, source: MlpError },
    #[error(transparent)]
    Scene(#[from] SceneError),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Section {
    pub name: String,
    pub len: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamHeader {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Step count per block, in section order.
    pub steps: BTreeMap<String, u64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingHeader {
    /// Next iteration to run.
    pub iter: u32,
    pub frames: usize,
    pub seed: u64,
    pub adam: AdamHeader,
    pub frame_adams: Vec<AdamHeader>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Header {
    pub gaussians: usize,
    pub lobes: usize,
    pub embed_dim: usize,
    pub sss_net: Vec<usize>,
    pub shadow_net: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub training: Option<TrainingHeader>,
    pub sections: Vec<Section>,
}

/// Optimizer state needed to resume training bit-for-bit.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainingState {
    pub iter: u32,
    pub seed: u64,
    pub refinement: RefinementState,
    pub adam: Adam,
    pub frame_adams: Vec<Adam>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub version: u32,
    pub scene: GaussianScene,
    pub training: Option<TrainingState>,
}

impl Checkpoint {
    pub fn scene_only(scene: GaussianScene) -> Self {
        Checkpoint {
            version: FORMAT_VERSION,
            scene,
            training: None,
        }
    }

    pub fn from_trainer(t: &Trainer) -> Self {
        Checkpoint {
            version: FORMAT_VERSION,
            scene: t.scene.clone(),
            training: Some(TrainingState {
                iter: t.iter,
                seed: t.config.seed,
                refinement: t.refinement.clone(),
                adam: t.adam.clone(),
                frame_adams: t.delta_optim.clone(),
            }),
        }
    }
}

const SCENE_BLOCKS: [ParamBlock; 8] = [
    ParamBlock::Position,
    ParamBlock::Rotation,
    ParamBlock::Scale,
    ParamBlock::Opacity,
    ParamBlock::DiffuseColor,
    ParamBlock::SpecularColor,
    ParamBlock::SssColor,
    ParamBlock::Embedding,
];

struct Writer {
    sections: Vec<Section>,
    data: Vec<u8>,
}

impl Writer {
    fn put(&mut self, name: impl Into<String>, values: &[f64]) {
        self.sections.push(Section {
            name: name.into(),
            len: values.len(),
        });
        for v in values {
            self.data.extend_from_slice(&v.to_le_bytes());
        }
    }
}

fn adam_header(a: &Adam) -> AdamHeader {
    AdamHeader {
        beta1: a.beta1,
        beta2: a.beta2,
        eps: a.eps,
        steps: a.state.iter().map(|(b, s)| (b.name().to_owned(), s.steps)).collect(),
    }
}

fn put_adam(w: &mut Writer, prefix: &str, a: &Adam) {
    for (b, s) in &a.state {
        w.put(format!("{prefix}.{}.m", b.name()), &s.m);
        w.put(format!("{prefix}.{}.v", b.name()), &s.v);
    }
}

pub fn encode(ck: &Checkpoint) -> Vec<u8> {
    let s = &ck.scene;
    let mut w = Writer {
        sections: Vec::new(),
        data: Vec::new(),
    };
    for b in SCENE_BLOCKS {
        w.put(b.name(), s.block(b).expect("scene block"));
    }
    w.put(ParamBlock::AsgLobes.name(), &s.asg.lobes);
    w.put(ParamBlock::AsgWeights.name(), &s.asg.log_weights);
    w.put(ParamBlock::Fresnel.name(), &[s.asg.f0_logit]);
    w.put(ParamBlock::SssNet.name(), s.sss_net.params());
    w.put(ParamBlock::ShadowNet.name(), s.shadow_net.params());

    let training = ck.training.as_ref().map(|t| {
        let cams: Vec<f64> = t.refinement.cameras.iter().flatten().copied().collect();
        let lights: Vec<f64> = t.refinement.lights.iter().flatten().copied().collect();
        w.put("refine.camera", &cams);
        w.put("refine.light", &lights);
        put_adam(&mut w, "adam", &t.adam);
        for (i, a) in t.frame_adams.iter().enumerate() {
            put_adam(&mut w, &format!("frame{i}"), a);
        }
        TrainingHeader {
            iter: t.iter,
            frames: t.refinement.len(),
            seed: t.seed,
            adam: adam_header(&t.adam),
            frame_adams: t.frame_adams.iter().map(adam_header).collect(),
        }
    });

    let header = Header {
        gaussians: s.len(),
        lobes: s.asg.len(),
        embed_dim: EMBED_DIM,
        sss_net: s.sss_net.sizes().to_vec(),
        shadow_net: s.shadow_net.sizes().to_vec(),
        training,
        sections: w.sections,
    };
    let json = serde_json::to_vec(&header).expect("header serializes");
    let mut out = Vec::with_capacity(16 + json.len() + w.data.len());
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&ck.version.to_le_bytes());
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&w.data);
    out
}

/// Reads only the magic, version and header.
pub fn peek_header(bytes: &[u8]) -> Result<(u32, Header, usize), CheckpointError> {
    if bytes.len() < 16 {
        return Err(if bytes.len() >= 8 && bytes[..8] != MAGIC {
            CheckpointError::BadMagic
        } else {
            CheckpointError::Truncated
        });
    }
    if bytes[..8] != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if version != FORMAT_VERSION {
        return Err(CheckpointError::Version {
            found: version,
            expected: FORMAT_VERSION,
        });
    }
    let n = u32::from_le_bytes(bytes[12..16].try_into().expect("4 bytes")) as usize;
    let json = bytes.get(16..16 + n).ok_or(CheckpointError::Truncated)?;
    Ok((version, serde_json::from_slice(json)?, 16 + n))
}

struct Reader<'a> {
    sections: BTreeMap<&'a str, Vec<f64>>,
}

impl Reader<'_> {
    fn take(&mut self, name: &str, expected: usize) -> Result<Vec<f64>, CheckpointError> {
        let v = self
            .sections
            .remove(name)
            .ok_or_else(|| CheckpointError::MissingSection(name.to_owned()))?;
        if v.len() != expected {
            return Err(CheckpointError::SectionLen {
                name: name.to_owned(),
                expected,
                got: v.len(),
            });
        }
        Ok(v)
    }

    fn adam(&mut self, prefix: &str, h: &AdamHeader) -> Result<Adam, CheckpointError> {
        let mut state = BTreeMap::new();
        for (name, &steps) in &h.steps {
            let block = ParamBlock::from_name(name).ok_or_else(|| CheckpointError::UnknownBlock(name.clone()))?;
            let key = format!("{prefix}.{name}.m");
            let len = self
                .sections
                .get(key.as_str())
                .map(Vec::len)
                .ok_or(CheckpointError::MissingSection(key.clone()))?;
            let m = self.take(&key, len)?;
            let v = self.take(&format!("{prefix}.{name}.v"), len)?;
            state.insert(block, AdamState { m, v, steps });
        }
        Ok(Adam {
            beta1: h.beta1,
            beta2: h.beta2,
            eps: h.eps,
            state,
        })
    }
}

fn block_len(b: ParamBlock, n: usize) -> usize {
    match b {
        ParamBlock::Rotation => 4 * n,
        ParamBlock::Opacity => n,
        ParamBlock::Embedding => EMBED_DIM * n,
        _ => 3 * n,
    }
}

pub fn decode(bytes: &[u8]) -> Result<Checkpoint, CheckpointError> {
    let (version, header, mut pos) = peek_header(bytes)?;
    let mut sections = BTreeMap::new();
    for s in &header.sections {
        let end = s.len.checked_mul(8).and_then(|b| pos.checked_add(b)).ok_or(CheckpointError::Truncated)?;
        let raw = bytes.get(pos..end).ok_or(CheckpointError::Truncated)?;
        let values = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        sections.insert(s.name.as_str(), values);
        pos = end;
    }
    if pos != bytes.len() {
        return Err(CheckpointError::Trailing(bytes.len() - pos));
    }
    let mut r = Reader { sections };
    let n = header.gaussians;
    if header.embed_dim != EMBED_DIM {
        return Err(CheckpointError::SectionLen {
            name: "embed_dim".into(),
            expected: EMBED_DIM,
            got: header.embed_dim,
        });
    }

    let net = |name: &'static str, sizes: &[usize], r: &mut Reader| -> Result<Mlp, CheckpointError> {
        let params = r.take(name, Mlp::param_count(sizes))?;
        Mlp::from_params(sizes, params).map_err(|source| CheckpointError::Network { name, source })
    };
    let sss_net = net(ParamBlock::SssNet.name(), &header.sss_net, &mut r)?;
    let shadow_net = net(ParamBlock::ShadowNet.name(), &header.shadow_net, &mut r)?;
    let asg = AsgBank {
        lobes: r.take(ParamBlock::AsgLobes.name(), header.lobes * LOBE_STRIDE)?,
        log_weights: r.take(ParamBlock::AsgWeights.name(), header.lobes)?,
        f0_logit: r.take(ParamBlock::Fresnel.name(), 1)?[0],
    };
    let mut scene = GaussianScene::empty(asg, sss_net, shadow_net);
    for b in SCENE_BLOCKS {
        let values = r.take(b.name(), block_len(b, n))?;
        match b {
            ParamBlock::Position => scene.positions = values,
            ParamBlock::Rotation => scene.rotations = values,
            ParamBlock::Scale => scene.log_scales = values,
            ParamBlock::Opacity => scene.opacity_logits = values,
            ParamBlock::DiffuseColor => scene.diffuse_logits = values,
            ParamBlock::SpecularColor => scene.specular_logits = values,
            ParamBlock::SssColor => scene.scatter_logits = values,
            ParamBlock::Embedding => scene.embeddings = values,
            _ => unreachable!(),
        }
    }
    scene.validate()?;

    let training = match &header.training {
        None => None,
        Some(t) => {
            let pack = |v: Vec<f64>, k: usize| -> Vec<Vec<f64>> { v.chunks_exact(k).map(<[f64]>::to_vec).collect() };
            let cams = pack(r.take("refine.camera", 6 * t.frames)?, 6);
            let lights = pack(r.take("refine.light", 3 * t.frames)?, 3);
            let refinement = RefinementState {
                cameras: cams.iter().map(|c| c.as_slice().try_into().expect("6 values")).collect(),
                lights: lights.iter().map(|c| c.as_slice().try_into().expect("3 values")).collect(),
            };
            let adam = r.adam("adam", &t.adam)?;
            let frame_adams = t
                .frame_adams
                .iter()
                .enumerate()
                .map(|(i, h)| r.adam(&format!("frame{i}"), h))
                .collect::<Result<_, _>>()?;
            Some(TrainingState {
                iter: t.iter,
                seed: t.seed,
                refinement,
                adam,
                frame_adams,
            })
        }
    };
    if let Some(name) = r.sections.keys().next() {
        return Err(CheckpointError::UnknownBlock((*name).to_owned()));
    }
    Ok(Checkpoint {
        version,
        scene,
        training,
    })
}

pub fn save(path: &Path, ck: &Checkpoint) -> Result<(), CheckpointError> {
    let io_err = |source| CheckpointError::Io {
        path: path.to_owned(),
        source,
    };
    // write-then-rename so a crash never leaves a half-written checkpoint
    let tmp = path.with_extension("tmp");
    let mut f = fs::File::create(&tmp).map_err(io_err)?;
    f.write_all(&encode(ck)).map_err(io_err)?;
    f.sync_all().map_err(io_err)?;
    fs::rename(&tmp, path).map_err(io_err)
}

pub fn load(path: &Path) -> Result<Checkpoint, CheckpointError> {
    let bytes = fs::read(path).map_err(|source| CheckpointError::Io {
        path: path.to_owned(),
        source,
    })?;
    decode(&bytes)
}
