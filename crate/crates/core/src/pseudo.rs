//! Pseudo-label synthesis from teacher and student soft predictions.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::volume::{argmax_labels, LabelMap, ProbMap};

/// Argmax of `e/(e+1) * p_t + 1/(e+1) * p_s`; the teacher's weight grows with
/// the epoch `e >= 1`.
pub fn ipt_mix(p_t: &ProbMap, p_s: &ProbMap, epoch: u64) -> Result<LabelMap> {
    if epoch == 0 {
        return Err(Error::InvalidParameter("epoch index starts at 1".into()));
    }
    p_t.check_compatible(p_s)?;
    let e = epoch as f64;
    let w_t = e / (e + 1.0);
    let w_s = 1.0 / (e + 1.0);
    Ok(argmax_labels(&p_t.weighted_sum(w_t, p_s, w_s)))
}

/// Argmax of the plain average of both predictions.
pub fn vot_mix(p_t: &ProbMap, p_s: &ProbMap) -> Result<LabelMap> {
    p_t.check_compatible(p_s)?;
    Ok(argmax_labels(&p_t.weighted_sum(0.5, p_s, 0.5)))
}

/// Running soft target `decay * prev + (1 - decay) * mean(p_t, p_s)`.
pub fn ema_label_mix(
    prev: &ProbMap,
    p_t: &ProbMap,
    p_s: &ProbMap,
    decay: f64,
) -> Result<(ProbMap, LabelMap)> {
    if !(0.0..=1.0).contains(&decay) {
        return Err(Error::InvalidParameter(format!("decay {decay} outside [0, 1]")));
    }
    p_t.check_compatible(p_s)?;
    prev.check_compatible(p_t)?;
    let mean = p_t.weighted_sum(0.5, p_s, 0.5);
    let soft = prev.weighted_sum(decay, &mean, 1.0 - decay);
    let labels = argmax_labels(&soft);
    Ok((soft, labels))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PseudoMode {
    Ipt,
    Vot,
    Ema,
    VotThenIpt,
}

impl PseudoMode {
    pub const ALL: [PseudoMode; 4] = [
        PseudoMode::Ema,
        PseudoMode::Vot,
        PseudoMode::Ipt,
        PseudoMode::VotThenIpt,
    ];
}

impl fmt::Display for PseudoMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PseudoMode::Ipt => "IPT",
            PseudoMode::Vot => "VOT",
            PseudoMode::Ema => "EMA",
            PseudoMode::VotThenIpt => "VOT+IPT",
        })
    }
}

impl FromStr for PseudoMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "IPT" => Ok(PseudoMode::Ipt),
            "VOT" => Ok(PseudoMode::Vot),
            "EMA" => Ok(PseudoMode::Ema),
            "VOT+IPT" => Ok(PseudoMode::VotThenIpt),
            other => Err(Error::InvalidConfig(format!("unknown pseudo-label mode {other:?}"))),
        }
    }
}

/// Last epoch of the voting phase in `VOT+IPT`: the first fifth, rounded up.
pub fn vot_phase_end(total_epochs: u64) -> u64 {
    total_epochs.div_ceil(5)
}

/// Running soft targets for the EMA-of-predictions comparator, keyed by sample id.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EmaTargets {
    pub decay: f64,
    pub targets: BTreeMap<String, ProbMap>,
}

impl EmaTargets {
    pub fn new(decay: f64) -> Self {
        Self {
            decay,
            targets: BTreeMap::new(),
        }
    }

    /// Update the target for `id`. A missing or shape-incompatible prior
    /// starts from the current mean prediction.
    pub fn update(&mut self, id: &str, p_t: &ProbMap, p_s: &ProbMap) -> Result<LabelMap> {
        p_t.check_compatible(p_s)?;
        let prior = match self.targets.get(id) {
            Some(prev) if prev.check_compatible(p_t).is_ok() => prev.clone(),
            _ => p_t.weighted_sum(0.5, p_s, 0.5),
        };
        let (soft, labels) = ema_label_mix(&prior, p_t, p_s, self.decay)?;
        self.targets.insert(id.to_string(), soft);
        Ok(labels)
    }
}

/// Dispatch on the pseudo-label strategy for epoch `epoch` of `total_epochs`.
/// `ema` is only consulted in [`PseudoMode::Ema`].
pub fn pseudo_schedule(
    p_t: &ProbMap,
    p_s: &ProbMap,
    epoch: u64,
    total_epochs: u64,
    mode: PseudoMode,
    ema: Option<(&mut EmaTargets, &str)>,
) -> Result<LabelMap> {
    if epoch == 0 || epoch > total_epochs.max(1) {
        return Err(Error::InvalidParameter(format!(
            "epoch {epoch} outside 1..={total_epochs}"
        )));
    }
    match mode {
        PseudoMode::Ipt => ipt_mix(p_t, p_s, epoch),
        PseudoMode::Vot => vot_mix(p_t, p_s),
        PseudoMode::VotThenIpt => {
            if epoch <= vot_phase_end(total_epochs) {
                vot_mix(p_t, p_s)
            } else {
                ipt_mix(p_t, p_s, epoch)
            }
        }
        PseudoMode::Ema => {
            let (targets, id) = ema.ok_or_else(|| {
                Error::InvalidParameter("EMA pseudo-labels need running targets".into())
            })?;
            targets.update(id, p_t, p_s)
        }
    }
}
