//! Checkpoints: one raw `f64` payload (`.vol`) plus a JSON sidecar.
//!
//! The payload holds, in order, the student parameters, the teacher
//! parameters, the Adam first and second moments, then every EMA pseudo-label
//! target in id order. The sidecar records the layout and run metadata.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{TrainConfig, TrainState};
use crate::error::{Error, Result};
use crate::io::{decode_f64, encode_f64, payload_path, sidecar_path};
use crate::net::{Arch, OptimState, ParamVector};
use crate::pseudo::EmaTargets;
use crate::volume::{Dims, ProbMap};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct TargetEntry {
    id: String,
    dims: [usize; 3],
    classes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub arch: Arch,
    pub classes: usize,
    pub alpha: f64,
    pub seed: u64,
    pub step: u64,
    pub iteration: u64,
    pub param_count: usize,
    pub config_hash: String,
    pub ema_label_decay: f64,
    targets: Vec<TargetEntry>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub meta: CheckpointMeta,
    pub state: TrainState,
}

impl Checkpoint {
    pub fn new(cfg: &TrainConfig, state: TrainState) -> Self {
        let arch = state.student.arch();
        let targets = state
            .ema_targets
            .targets
            .iter()
            .map(|(id, p)| TargetEntry {
                id: id.clone(),
                dims: p.dims().as_array(),
                classes: p.classes(),
            })
            .collect();
        Self {
            meta: CheckpointMeta {
                arch,
                classes: arch.classes,
                alpha: cfg.alpha,
                seed: cfg.seed,
                step: state.opt.step,
                iteration: state.iteration,
                param_count: state.student.len(),
                config_hash: cfg.hash(),
                ema_label_decay: state.ema_targets.decay,
                targets,
            },
            state,
        }
    }

    pub fn params(&self, which: super::Which) -> &ParamVector {
        match which {
            super::Which::Student => &self.state.student,
            super::Which::Teacher => &self.state.teacher,
        }
    }

    /// Reject resuming under a config that would change results.
    pub fn check_config(&self, cfg: &TrainConfig) -> Result<()> {
        if self.meta.config_hash != cfg.hash() {
            return Err(Error::InvalidConfig(format!(
                "checkpoint was written under config {} but this config hashes to {}",
                self.meta.config_hash,
                cfg.hash()
            )));
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent() {
            if !parent.as_os_str().is_empty() {
                fs::create_dir_all(parent)?;
            }
        }
        let s = &self.state;
        let mut values = Vec::new();
        values.extend_from_slice(s.student.values());
        values.extend_from_slice(s.teacher.values());
        values.extend_from_slice(&s.opt.m);
        values.extend_from_slice(&s.opt.v);
        for p in s.ema_targets.targets.values() {
            values.extend_from_slice(p.data());
        }
        fs::write(sidecar_path(path), serde_json::to_string_pretty(&self.meta)?)?;
        fs::write(payload_path(path), encode_f64(&values))?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let side = sidecar_path(path);
        let data = payload_path(path);
        for p in [&side, &data] {
            if !p.exists() {
                return Err(Error::MissingData(format!("{} not found", p.display())));
            }
        }
        let meta: CheckpointMeta = serde_json::from_slice(&fs::read(&side)?)?;
        meta.arch.validate()?;
        let n = meta.arch.param_count();
        if n != meta.param_count || meta.classes != meta.arch.classes {
            return Err(Error::Format(format!("{}: inconsistent layout", side.display())));
        }
        let mut target_dims = Vec::with_capacity(meta.targets.len());
        let mut expected = 4 * n;
        for t in &meta.targets {
            let d = Dims::from_array(t.dims)?;
            expected += d.len() * t.classes;
            target_dims.push(d);
        }
        let bytes = fs::read(&data)?;
        if bytes.len() != expected * 8 {
            return Err(Error::LengthMismatch {
                expected: expected * 8,
                actual: bytes.len(),
            });
        }
        let values = decode_f64(&bytes);
        let mut rest = values.as_slice();
        let mut take = |len: usize| {
            let (head, tail) = rest.split_at(len);
            rest = tail;
            head.to_vec()
        };
        let student = ParamVector::from_values(meta.arch, take(n))?;
        let teacher = ParamVector::from_values(meta.arch, take(n))?;
        let opt = OptimState {
            m: take(n),
            v: take(n),
            step: meta.step,
        };
        let mut ema_targets = EmaTargets::new(meta.ema_label_decay);
        for (t, d) in meta.targets.iter().zip(target_dims) {
            let p = ProbMap::new(d, t.classes, take(d.len() * t.classes))?;
            ema_targets.targets.insert(t.id.clone(), p);
        }
        let state = TrainState {
            student,
            teacher,
            opt,
            iteration: meta.iteration,
            ema_targets,
        };
        Ok(Self { meta, state })
    }
}
