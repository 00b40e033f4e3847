//! Training configuration and its flat `key = value` file format.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::masking::HoleSpec;
use crate::net::{Arch, LossMode};
use crate::phantom::Profile;
use crate::pseudo::PseudoMode;
use crate::volume::Dims;

/// Which parts of the method are active.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ComponentFlags {
    /// Weak/strong augmentation; off means identity views.
    pub wsa: bool,
    /// Copy-paste mixing; off means labeled and unlabeled samples are used unmixed.
    pub bcp: bool,
    /// Uncertainty-adaptive blending; off forces the score to 0.
    pub tue: bool,
    /// Epoch-weighted pseudo-label transition; off falls back to voting.
    pub ipt: bool,
    /// Disagreement re-mixing; off forces the disagreement map to 0.
    pub pdi: bool,
}

impl ComponentFlags {
    pub const ALL: ComponentFlags = ComponentFlags {
        wsa: true,
        bcp: true,
        tue: true,
        ipt: true,
        pdi: true,
    };
    pub const NONE: ComponentFlags = ComponentFlags {
        wsa: false,
        bcp: false,
        tue: false,
        ipt: false,
        pdi: false,
    };
    /// Augmentation and copy-paste only.
    pub const BCP_ONLY: ComponentFlags = ComponentFlags {
        wsa: true,
        bcp: true,
        tue: false,
        ipt: false,
        pdi: false,
    };

    pub fn is_none(&self) -> bool {
        *self == Self::NONE
    }

    fn parse(s: &str) -> Result<Self> {
        let s = s.trim().to_ascii_lowercase();
        match s.as_str() {
            "all" => return Ok(Self::ALL),
            "none" => return Ok(Self::NONE),
            "bcp_only" => return Ok(Self::BCP_ONLY),
            _ => {}
        }
        let mut flags = Self::NONE;
        for name in s.split(',').map(str::trim).filter(|t| !t.is_empty()) {
            match name {
                "wsa" => flags.wsa = true,
                "bcp" => flags.bcp = true,
                "tue" => flags.tue = true,
                "ipt" => flags.ipt = true,
                "pdi" => flags.pdi = true,
                other => return Err(Error::InvalidConfig(format!("unknown component {other:?}"))),
            }
        }
        Ok(flags)
    }
}

impl std::fmt::Display for ComponentFlags {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        if self.is_none() {
            return f.write_str("none");
        }
        let names: Vec<&str> = [
            (self.wsa, "wsa"),
            (self.bcp, "bcp"),
            (self.tue, "tue"),
            (self.ipt, "ipt"),
            (self.pdi, "pdi"),
        ]
        .iter()
        .filter(|(on, _)| *on)
        .map(|(_, n)| *n)
        .collect();
        f.write_str(&names.join(","))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Which {
    Student,
    Teacher,
}

impl FromStr for Which {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "student" => Ok(Which::Student),
            "teacher" => Ok(Which::Teacher),
            other => Err(Error::InvalidConfig(format!("unknown model {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum Inference {
    Whole,
    Sliding { window: Dims, stride: Dims },
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub data: PathBuf,
    pub profile: Profile,
    /// Re-split the training pool at this ratio; `None` keeps the dataset's split.
    pub labeled_ratio: Option<f64>,
    pub batch_size: usize,
    /// Training crop size; `None` trains on whole volumes.
    pub patch: Option<Dims>,
    pub total_iters: u64,
    /// Stop early at this iteration while keeping the `total_iters` schedule.
    pub stop_after: Option<u64>,
    pub base_lr: f64,
    pub lr_power: f64,
    pub alpha: f64,
    pub tau: f64,
    /// Hole ranges for the strong-view mask; `None` uses the profile default.
    pub mask_holes: Option<HoleSpec>,
    /// Hole ranges for the copy-paste mask; `None` follows `mask_holes`.
    pub paste_holes: Option<HoleSpec>,
    /// Reuse the strong-view mask draws for copy-paste.
    pub share_masks: bool,
    pub pseudo_mode: PseudoMode,
    pub ema_label_decay: f64,
    pub loss_mode: LossMode,
    pub seed: u64,
    pub flags: ComponentFlags,
    /// Train on labeled batches only.
    pub supervised: bool,
    /// Leading iterations that train on labeled batches only.
    pub warmup_iters: u64,
    pub weak_prob: f64,
    pub strong_prob: f64,
    pub arch: Arch,
    pub inference: Inference,
    pub eval_model: Which,
    pub out: PathBuf,
    pub resume: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            data: PathBuf::from("data"),
            profile: Profile::Small,
            labeled_ratio: None,
            batch_size: 2,
            patch: None,
            total_iters: 1000,
            stop_after: None,
            base_lr: 2.5e-4,
            lr_power: 0.9,
            alpha: 0.99,
            tau: 0.9,
            mask_holes: None,
            paste_holes: None,
            share_masks: false,
            pseudo_mode: PseudoMode::Ipt,
            ema_label_decay: 0.9,
            loss_mode: LossMode::CeDice,
            seed: 0,
            flags: ComponentFlags::ALL,
            supervised: false,
            warmup_iters: 0,
            weak_prob: 0.3,
            strong_prob: 0.5,
            arch: Arch::default(),
            inference: Inference::Whole,
            eval_model: Which::Student,
            out: PathBuf::from("run"),
            resume: None,
        }
    }
}

fn parse_num<T: FromStr>(key: &str, v: &str) -> Result<T> {
    v.trim()
        .parse()
        .map_err(|_| Error::InvalidConfig(format!("{key}: cannot parse {v:?}")))
}

fn parse_pair<T: FromStr + Copy>(key: &str, v: &str) -> Result<(T, T)> {
    let parts: Vec<&str> = v.split(',').collect();
    match parts.as_slice() {
        [a, b] => Ok((parse_num(key, a)?, parse_num(key, b)?)),
        [a] => {
            let x = parse_num(key, a)?;
            Ok((x, x))
        }
        _ => Err(Error::InvalidConfig(format!("{key}: expected lo,hi but got {v:?}"))),
    }
}

fn parse_dims(key: &str, v: &str) -> Result<Dims> {
    let parts: Vec<usize> = v
        .split(',')
        .map(|p| parse_num(key, p))
        .collect::<Result<_>>()?;
    match parts.as_slice() {
        [e] => Ok(Dims::cube(*e)),
        [d, h, w] => Dims::new(*d, *h, *w).map_err(|_| Error::InvalidConfig(format!("{key}: zero extent"))),
        _ => Err(Error::InvalidConfig(format!("{key}: expected 1 or 3 extents"))),
    }
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v.trim().to_ascii_lowercase().as_str() {
        "true" | "yes" | "on" | "1" => Ok(true),
        "false" | "no" | "off" | "0" => Ok(false),
        _ => Err(Error::InvalidConfig(format!("{key}: expected a boolean, got {v:?}"))),
    }
}

fn optional(v: &str) -> Option<&str> {
    let t = v.trim();
    (!t.is_empty() && !t.eq_ignore_ascii_case("none")).then_some(t)
}

fn fmt_pair<T: std::fmt::Display>((a, b): (T, T)) -> String {
    format!("{a},{b}")
}

fn fmt_dims(d: Dims) -> String {
    format!("{},{},{}", d.depth, d.height, d.width)
}

impl TrainConfig {
    /// Parse a flat `key = value` document; `#` starts a comment. Relative
    /// paths are resolved against `base_dir` when given.
    pub fn parse(text: &str, base_dir: Option<&Path>) -> Result<Self> {
        let mut cfg = TrainConfig::default();
        let mut mask_count = None;
        let mut mask_size = None;
        let mut paste_count = None;
        let mut paste_size = None;
        let mut window = None;
        let mut stride = None;
        let mut inference = None;
        let resolve = |p: &str| {
            let p = PathBuf::from(p.trim());
            match base_dir {
                Some(b) if p.is_relative() => b.join(p),
                _ => p,
            }
        };
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::InvalidConfig(format!("line {}: expected key = value", lineno + 1))
            })?;
            let (key, value) = (key.trim(), value.trim());
            match key {
                "data" => cfg.data = resolve(value),
                "profile" => cfg.profile = value.parse()?,
                "labeled_ratio" => cfg.labeled_ratio = optional(value).map(|v| parse_num(key, v)).transpose()?,
                "batch_size" => cfg.batch_size = parse_num(key, value)?,
                "patch" => cfg.patch = optional(value).map(|v| parse_dims(key, v)).transpose()?,
                "total_iters" => cfg.total_iters = parse_num(key, value)?,
                "stop_after" => cfg.stop_after = optional(value).map(|v| parse_num(key, v)).transpose()?,
                "base_lr" => cfg.base_lr = parse_num(key, value)?,
                "lr_power" => cfg.lr_power = parse_num(key, value)?,
                "alpha" => cfg.alpha = parse_num(key, value)?,
                "tau" => cfg.tau = parse_num(key, value)?,
                "mask_holes" => mask_count = Some(parse_pair(key, value)?),
                "mask_hole_size" => mask_size = Some(parse_pair(key, value)?),
                "paste_holes" => paste_count = Some(parse_pair(key, value)?),
                "paste_hole_size" => paste_size = Some(parse_pair(key, value)?),
                "share_masks" => cfg.share_masks = parse_bool(key, value)?,
                "pseudo_mode" => cfg.pseudo_mode = value.parse()?,
                "ema_label_decay" => cfg.ema_label_decay = parse_num(key, value)?,
                "loss_mode" => cfg.loss_mode = value.parse()?,
                "seed" => cfg.seed = parse_num(key, value)?,
                "components" => cfg.flags = ComponentFlags::parse(value)?,
                "wsa" => cfg.flags.wsa = parse_bool(key, value)?,
                "bcp" => cfg.flags.bcp = parse_bool(key, value)?,
                "tue" => cfg.flags.tue = parse_bool(key, value)?,
                "ipt" => cfg.flags.ipt = parse_bool(key, value)?,
                "pdi" => cfg.flags.pdi = parse_bool(key, value)?,
                "supervised" => cfg.supervised = parse_bool(key, value)?,
                "warmup_iters" => cfg.warmup_iters = parse_num(key, value)?,
                "weak_prob" => cfg.weak_prob = parse_num(key, value)?,
                "strong_prob" => cfg.strong_prob = parse_num(key, value)?,
                "classes" => cfg.arch.classes = parse_num(key, value)?,
                "widths" => {
                    let (a, b) = parse_pair(key, value)?;
                    cfg.arch.widths = [a, b];
                }
                "factor" => cfg.arch.factor = parse_num(key, value)?,
                "inference" => inference = Some(value.to_ascii_lowercase()),
                "window" => window = Some(parse_dims(key, value)?),
                "stride" => stride = Some(parse_dims(key, value)?),
                "eval_model" => cfg.eval_model = value.parse()?,
                "out" => cfg.out = resolve(value),
                "resume" => cfg.resume = optional(value).map(resolve),
                other => return Err(Error::InvalidConfig(format!("unknown key {other:?}"))),
            }
        }
        let defaults = cfg.profile.holes(cfg.patch.unwrap_or(cfg.profile.spec().dims));
        if mask_count.is_some() || mask_size.is_some() {
            cfg.mask_holes = Some(HoleSpec {
                count: mask_count.unwrap_or(defaults.count),
                size: mask_size.unwrap_or(defaults.size),
            });
        }
        if paste_count.is_some() || paste_size.is_some() {
            let base = cfg.mask_holes.unwrap_or(defaults);
            cfg.paste_holes = Some(HoleSpec {
                count: paste_count.unwrap_or(base.count),
                size: paste_size.unwrap_or(base.size),
            });
        }
        cfg.inference = match inference.as_deref() {
            None | Some("whole") => Inference::Whole,
            Some("sliding") => {
                let window = window.ok_or_else(|| Error::InvalidConfig("sliding inference needs window".into()))?;
                Inference::Sliding {
                    window,
                    stride: stride.unwrap_or(window),
                }
            }
            Some(other) => return Err(Error::InvalidConfig(format!("unknown inference {other:?}"))),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::InvalidConfig(format!("{}: {e}", path.display())))?;
        Self::parse(&text, path.parent())
    }

    /// The document [`TrainConfig::parse`] reads back to `self`.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let mut put = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        put("data", self.data.display().to_string());
        put("profile", self.profile.to_string());
        put("labeled_ratio", self.labeled_ratio.map_or("none".into(), |r| r.to_string()));
        put("batch_size", self.batch_size.to_string());
        put("patch", self.patch.map_or("none".into(), fmt_dims));
        put("total_iters", self.total_iters.to_string());
        put("stop_after", self.stop_after.map_or("none".into(), |v| v.to_string()));
        put("base_lr", self.base_lr.to_string());
        put("lr_power", self.lr_power.to_string());
        put("alpha", self.alpha.to_string());
        put("tau", self.tau.to_string());
        if let Some(h) = self.mask_holes {
            put("mask_holes", fmt_pair(h.count));
            put("mask_hole_size", fmt_pair(h.size));
        }
        if let Some(h) = self.paste_holes {
            put("paste_holes", fmt_pair(h.count));
            put("paste_hole_size", fmt_pair(h.size));
        }
        put("share_masks", self.share_masks.to_string());
        put("pseudo_mode", self.pseudo_mode.to_string());
        put("ema_label_decay", self.ema_label_decay.to_string());
        put("loss_mode", self.loss_mode.to_string());
        put("seed", self.seed.to_string());
        put("components", self.flags.to_string());
        put("supervised", self.supervised.to_string());
        put("warmup_iters", self.warmup_iters.to_string());
        put("weak_prob", self.weak_prob.to_string());
        put("strong_prob", self.strong_prob.to_string());
        put("classes", self.arch.classes.to_string());
        put("widths", fmt_pair((self.arch.widths[0], self.arch.widths[1])));
        put("factor", self.arch.factor.to_string());
        match self.inference {
            Inference::Whole => put("inference", "whole".into()),
            Inference::Sliding { window, stride } => {
                put("inference", "sliding".into());
                put("window", fmt_dims(window));
                put("stride", fmt_dims(stride));
            }
        }
        put("eval_model", format!("{:?}", self.eval_model).to_ascii_lowercase());
        put("out", self.out.display().to_string());
        if let Some(r) = &self.resume {
            put("resume", r.display().to_string());
        }
        s
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.batch_size == 0 || self.batch_size % 2 != 0 {
            return bad(format!("batch_size {} must be even and positive", self.batch_size));
        }
        if !(self.tau > 0.0 && self.tau < 1.0) {
            return bad(format!("tau {} outside (0, 1)", self.tau));
        }
        if !(self.alpha >= 0.0 && self.alpha < 1.0) {
            return bad(format!("alpha {} outside [0, 1)", self.alpha));
        }
        if !(self.base_lr >= 0.0 && self.base_lr.is_finite()) || !(self.lr_power > 0.0) {
            return bad("learning rate schedule must be finite and non-negative".into());
        }
        if let Some(r) = self.labeled_ratio {
            if !(r > 0.0 && r <= 1.0) {
                return bad(format!("labeled_ratio {r} outside (0, 1]"));
            }
        }
        if !(0.0..=1.0).contains(&self.ema_label_decay) {
            return bad(format!("ema_label_decay {} outside [0, 1]", self.ema_label_decay));
        }
        if !(0.0..=1.0).contains(&self.weak_prob) || !(0.0..=1.0).contains(&self.strong_prob) {
            return bad("augmentation probabilities must lie in [0, 1]".into());
        }
        if let Some(s) = self.stop_after {
            if s > self.total_iters {
                return bad(format!("stop_after {s} exceeds total_iters {}", self.total_iters));
            }
        }
        self.arch.validate()?;
        if let Some(p) = self.patch {
            self.arch.check_input(p).map_err(|e| Error::InvalidConfig(e.to_string()))?;
            self.mask_spec(p).validate(p)?;
            self.paste_spec(p).validate(p)?;
        }
        if let Inference::Sliding { window, stride } = self.inference {
            self.arch.check_input(window).map_err(|e| Error::InvalidConfig(e.to_string()))?;
            if stride.as_array().iter().zip(window.as_array()).any(|(s, w)| *s > w) {
                return bad("sliding stride larger than window leaves gaps".into());
            }
        }
        Ok(())
    }

    pub fn mask_spec(&self, patch: Dims) -> HoleSpec {
        self.mask_holes.unwrap_or_else(|| self.profile.holes(patch))
    }

    pub fn paste_spec(&self, patch: Dims) -> HoleSpec {
        self.paste_holes.unwrap_or_else(|| self.mask_spec(patch))
    }

    /// Whether iteration `i` trains on labeled data only.
    pub fn supervised_at(&self, iteration: u64) -> bool {
        self.supervised || self.flags.is_none() || iteration < self.warmup_iters
    }

    /// SHA-256 of the canonical text form, excluding run-control keys that do
    /// not change results (`out`, `resume`, `stop_after`).
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.out = PathBuf::new();
        c.resume = None;
        c.stop_after = None;
        hex::encode(Sha256::digest(c.to_text().as_bytes()))
    }

    pub fn log_path(&self) -> PathBuf {
        self.out.join("train_log.csv")
    }

    pub fn checkpoint_path(&self) -> PathBuf {
        self.out.join("checkpoint.vol")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_follow_reference_settings() {
        let c = TrainConfig::default();
        assert_eq!(c.batch_size, 2);
        assert_eq!(c.base_lr, 2.5e-4);
        assert_eq!(c.lr_power, 0.9);
        assert_eq!(c.alpha, 0.99);
        assert_eq!(c.tau, 0.9);
        assert_eq!(c.flags, ComponentFlags::ALL);
    }

    #[test]
    fn parse_round_trip() {
        let text = "
            # comment
            data = /tmp/d
            patch = 32
            total_iters = 50
            tau = 0.7
            mask_holes = 3,6
            pseudo_mode = VOT+IPT
            loss_mode = Dice
            components = wsa,bcp
            inference = sliding
            window = 32,32,32
            stride = 16
        ";
        let c = TrainConfig::parse(text, None).unwrap();
        assert_eq!(c.patch, Some(Dims::cube(32)));
        assert_eq!(c.mask_holes.unwrap().count, (3, 6));
        assert_eq!(c.mask_holes.unwrap().size, HoleSpec::SMALL_TUMOUR.scaled_to(Dims::cube(32)).size);
        assert_eq!(c.pseudo_mode, PseudoMode::VotThenIpt);
        assert_eq!(c.flags, ComponentFlags { wsa: true, bcp: true, ..ComponentFlags::NONE });
        let back = TrainConfig::parse(&c.to_text(), None).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.hash(), c.hash());
    }

    #[test]
    fn invalid_values_are_config_errors() {
        for text in [
            "batch_size = 3",
            "tau = 1.0",
            "alpha = 1.0",
            "bogus = 1",
            "seed = abc",
            "patch = 30",
            "pseudo_mode = median",
            "patch = 16\nmask_hole_size = 2,20",
            "just a line",
            "inference = sliding",
        ] {
            assert!(matches!(TrainConfig::parse(text, None), Err(Error::InvalidConfig(_))), "{text}");
        }
    }

    #[test]
    fn hash_ignores_run_control() {
        let a = TrainConfig::default();
        let b = TrainConfig {
            out: "elsewhere".into(),
            stop_after: Some(3),
            ..a.clone()
        };
        let c = TrainConfig { seed: 1, ..a.clone() };
        assert_eq!(a.hash(), b.hash());
        assert_ne!(a.hash(), c.hash());
    }

    #[test]
    fn all_flags_off_means_supervised() {
        let c = TrainConfig {
            flags: ComponentFlags::NONE,
            ..TrainConfig::default()
        };
        assert!(c.supervised_at(5));
        let w = TrainConfig {
            warmup_iters: 3,
            ..TrainConfig::default()
        };
        assert!(w.supervised_at(2) && !w.supervised_at(3));
    }
}
