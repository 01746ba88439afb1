//! Run directories, artifact headers and typed checkpoint files.
//!
//! Binary artifacts keep their fixed layouts and carry their header in a
//! `<file>.meta.json` sidecar.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::adm::GeneratorSchedule;
use crate::adp::OdePairDataset;
use crate::nnad::checkpoint::{self, Checkpoint, Role};
use crate::nnad::OptState;
use crate::scorenets::{DataSpaceDiscriminator, Discriminator, NetConfig, Parameterization, ScoreNet};
use crate::{Error, Result};

use super::config::{read_config, write_json};

pub const MANIFEST: &str = "run.json";

/// Identity stamped on every artifact.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Header {
    pub config_hash: String,
    pub seed: u64,
    pub stage: String,
}

impl Header {
    pub fn new(config_hash: String, seed: u64, stage: &str) -> Self {
        Self {
            config_hash,
            seed,
            stage: stage.to_string(),
        }
    }

    /// The `config_hash=… seed=… stage=…` line used in CSV headers.
    pub fn line(&self) -> String {
        format!("config_hash={} seed={} stage={}", self.config_hash, self.seed, self.stage)
    }

    pub fn comment(&self) -> String {
        format!("# {}\n", self.line())
    }
}

/// Creates `dir` and claims it for `header`. A directory already holding a
/// run with a different hash or stage is refused.
pub fn claim_dir(dir: &Path, header: &Header) -> Result<()> {
    fs::create_dir_all(dir)?;
    let manifest = dir.join(MANIFEST);
    if manifest.exists() {
        let prev: Header = read_config(&manifest)
            .map_err(|e| Error::Contract(format!("unreadable manifest {}: {e}", manifest.display())))?;
        if prev.config_hash != header.config_hash || prev.stage != header.stage {
            return Err(Error::Contract(format!(
                "{} already holds stage '{}' with config hash {}; refusing to write hash {}",
                dir.display(),
                prev.stage,
                prev.config_hash,
                header.config_hash
            )));
        }
    }
    write_json(&manifest, header)
}

/// Sidecar of a binary artifact.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArtifactMeta {
    pub config_hash: String,
    pub seed: u64,
    pub stage: String,
    pub role: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub net: Option<NetConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parameterization: Option<Parameterization>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub horizon: Option<f64>,
    /// Sampling points of a distilled generator.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub schedule: Option<GeneratorSchedule>,
    /// Digest of the frozen backbone of a latent discriminator.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub backbone_digest: Option<String>,
}

impl ArtifactMeta {
    fn new(header: &Header, role: &str) -> Self {
        Self {
            config_hash: header.config_hash.clone(),
            seed: header.seed,
            stage: header.stage.clone(),
            role: role.to_string(),
            net: None,
            parameterization: None,
            horizon: None,
            schedule: None,
            backbone_digest: None,
        }
    }

    pub fn header(&self) -> Header {
        Header::new(self.config_hash.clone(), self.seed, &self.stage)
    }
}

pub fn meta_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".meta.json");
    PathBuf::from(s)
}

pub fn read_meta(path: &Path) -> Result<ArtifactMeta> {
    let m = meta_path(path);
    if !m.exists() {
        return Err(Error::Rejected(format!("missing sidecar {}", m.display())));
    }
    read_config(&m)
}

fn require(path: &Path) -> Result<()> {
    if !path.exists() {
        return Err(Error::Rejected(format!("missing input {}", path.display())));
    }
    Ok(())
}

/// A score network with its optimizer state as stored on disk.
#[derive(Clone, Debug, PartialEq)]
pub struct StoredNet {
    pub net: ScoreNet,
    pub opt: Option<OptState>,
    pub role: Role,
    pub meta: ArtifactMeta,
}

pub fn save_net(
    path: &Path,
    role: Role,
    net: &ScoreNet,
    opt: Option<&OptState>,
    schedule: Option<&GeneratorSchedule>,
    header: &Header,
) -> Result<()> {
    checkpoint::save_checkpoint(path, role, &net.params, opt)?;
    let meta = ArtifactMeta {
        net: Some(net.config.clone()),
        parameterization: Some(net.parameterization),
        horizon: Some(net.horizon),
        schedule: schedule.cloned(),
        ..ArtifactMeta::new(header, role.name())
    };
    write_json(&meta_path(path), &meta)
}

pub fn load_net(path: &Path) -> Result<StoredNet> {
    require(path)?;
    let ckpt = checkpoint::load_checkpoint(path)?;
    let meta = read_meta(path)?;
    if meta.role != ckpt.role.name() {
        return Err(Error::Format(format!(
            "{}: sidecar says role {}, checkpoint says {}",
            path.display(),
            meta.role,
            ckpt.role.name()
        )));
    }
    let (Some(cfg), Some(param), Some(horizon)) = (meta.net.clone(), meta.parameterization, meta.horizon)
    else {
        return Err(Error::Format(format!("{}: sidecar lacks the network description", path.display())));
    };
    let net = ScoreNet::from_params(ckpt.params, cfg, param, horizon)?;
    Ok(StoredNet {
        net,
        opt: ckpt.opt,
        role: ckpt.role,
        meta,
    })
}

/// Heads of a latent discriminator, one record per head. The frozen
/// backbone is the teacher and is identified by digest only.
pub fn save_disc_lat(path: &Path, disc: &Discriminator, opt: &[OptState], header: &Header) -> Result<()> {
    let records: Vec<Checkpoint> = disc
        .heads
        .iter()
        .enumerate()
        .map(|(i, h)| Checkpoint {
            role: Role::DiscLat,
            params: h.clone(),
            opt: opt.get(i).cloned(),
        })
        .collect();
    checkpoint::save_records(path, &records)?;
    let meta = ArtifactMeta {
        backbone_digest: Some(disc.backbone_digest()),
        ..ArtifactMeta::new(header, Role::DiscLat.name())
    };
    write_json(&meta_path(path), &meta)
}

pub fn load_disc_lat(path: &Path, teacher: &ScoreNet) -> Result<(Discriminator, Vec<OptState>)> {
    require(path)?;
    let recs = checkpoint::load_records(path)?;
    let meta = read_meta(path)?;
    if meta.backbone_digest.as_deref() != Some(teacher.params.digest().as_str()) {
        return Err(Error::Format(format!("{}: heads were trained on a different backbone", path.display())));
    }
    if recs.iter().any(|r| r.role != Role::DiscLat) {
        return Err(Error::Format(format!("{}: not a latent discriminator", path.display())));
    }
    if recs.len() != teacher.config.hidden.len() {
        return Err(Error::Format(format!(
            "{}: {} heads for {} hidden layers",
            path.display(),
            recs.len(),
            teacher.config.hidden.len()
        )));
    }
    let opt = recs.iter().filter_map(|r| r.opt.clone()).collect();
    let disc = Discriminator {
        backbone: teacher.clone(),
        heads: recs.into_iter().map(|r| r.params).collect(),
    };
    Ok((disc, opt))
}

/// Trunk record followed by one record per head.
pub fn save_disc_data(path: &Path, disc: &DataSpaceDiscriminator, opt: &[OptState], header: &Header) -> Result<()> {
    let mut records = vec![Checkpoint {
        role: Role::DiscData,
        params: disc.trunk.clone(),
        opt: opt.first().cloned(),
    }];
    records.extend(disc.heads.iter().enumerate().map(|(i, h)| Checkpoint {
        role: Role::DiscData,
        params: h.clone(),
        opt: opt.get(i + 1).cloned(),
    }));
    checkpoint::save_records(path, &records)?;
    write_json(&meta_path(path), &ArtifactMeta::new(header, Role::DiscData.name()))
}

pub fn load_disc_data(path: &Path) -> Result<(DataSpaceDiscriminator, Vec<OptState>)> {
    require(path)?;
    let mut recs = checkpoint::load_records(path)?;
    read_meta(path)?;
    if recs.iter().any(|r| r.role != Role::DiscData) {
        return Err(Error::Format(format!("{}: not a data-space discriminator", path.display())));
    }
    let trunk = recs.remove(0);
    if recs.len() != trunk.params.layers.len() {
        return Err(Error::Format(format!("{}: head count does not match the trunk", path.display())));
    }
    let opt = std::iter::once(&trunk)
        .chain(&recs)
        .filter_map(|r| r.opt.clone())
        .collect();
    Ok((
        DataSpaceDiscriminator {
            trunk: trunk.params,
            heads: recs.into_iter().map(|r| r.params).collect(),
        },
        opt,
    ))
}

pub fn save_pairs(path: &Path, pairs: &OdePairDataset, header: &Header) -> Result<()> {
    pairs.save(path)?;
    write_json(&meta_path(path), &ArtifactMeta::new(header, "PAIRS"))
}

pub fn load_pairs(path: &Path) -> Result<OdePairDataset> {
    require(path)?;
    OdePairDataset::load(path)
}

/// Writes a CSV whose first line is the artifact header.
pub fn write_csv(path: &Path, header: &Header, columns: &str, rows: &[String]) -> Result<()> {
    let mut text = header.comment();
    text.push_str(columns);
    text.push('\n');
    for r in rows {
        text.push_str(r);
        text.push('\n');
    }
    fs::write(path, text)?;
    Ok(())
}
