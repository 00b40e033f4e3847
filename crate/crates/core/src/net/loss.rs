//! Soft Dice and cross-entropy segmentation losses, with gradients with
//! respect to the class probabilities.

use std::fmt;
use std::str::FromStr;

use crate::error::{ensure_same_dims, Error, Result};
use crate::volume::{LabelMap, ProbMap};

pub const DICE_SMOOTH: f64 = 1e-5;
pub const CE_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum LossMode {
    Ce,
    Dice,
    #[default]
    CeDice,
}

impl LossMode {
    pub const ALL: [LossMode; 3] = [LossMode::Ce, LossMode::Dice, LossMode::CeDice];

    fn uses_ce(self) -> bool {
        matches!(self, LossMode::Ce | LossMode::CeDice)
    }

    fn uses_dice(self) -> bool {
        matches!(self, LossMode::Dice | LossMode::CeDice)
    }
}

impl fmt::Display for LossMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LossMode::Ce => "CE",
            LossMode::Dice => "Dice",
            LossMode::CeDice => "CE+Dice",
        })
    }
}

impl FromStr for LossMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "ce" => Ok(LossMode::Ce),
            "dice" => Ok(LossMode::Dice),
            "ce+dice" | "dice+ce" => Ok(LossMode::CeDice),
            other => Err(Error::InvalidConfig(format!("unknown loss mode {other:?}"))),
        }
    }
}

fn check(p: &ProbMap, y: &LabelMap) -> Result<()> {
    ensure_same_dims(p.dims(), y.dims())?;
    if p.classes() != y.classes() {
        return Err(Error::ClassMismatch {
            left: p.classes(),
            right: y.classes(),
        });
    }
    Ok(())
}

/// Soft Dice loss averaged over the foreground classes `1..C`.
pub fn dice_loss(p: &ProbMap, y: &LabelMap) -> Result<f64> {
    check(p, y)?;
    Ok(dice_terms(p.data(), p.classes(), y.data(), None))
}

/// Mean voxel cross-entropy with probabilities floored at `CE_EPS`.
pub fn ce_loss(p: &ProbMap, y: &LabelMap) -> Result<f64> {
    check(p, y)?;
    Ok(ce_terms(p.data(), y.data(), None))
}

pub fn combined_loss(p: &ProbMap, y: &LabelMap) -> Result<f64> {
    loss(p, y, LossMode::CeDice)
}

pub fn loss(p: &ProbMap, y: &LabelMap, mode: LossMode) -> Result<f64> {
    check(p, y)?;
    Ok(loss_with_grad(p.data(), p.classes(), y.data(), mode, None))
}

fn ce_terms(probs: &[f64], labels: &[u8], mut grad: Option<&mut [f64]>) -> f64 {
    let n = labels.len();
    let inv = 1.0 / n as f64;
    let mut total = 0.0;
    for (v, &l) in labels.iter().enumerate() {
        let idx = l as usize * n + v;
        let p = probs[idx];
        if p > CE_EPS {
            total -= p.ln();
            if let Some(g) = grad.as_deref_mut() {
                g[idx] -= inv / p;
            }
        } else {
            total -= CE_EPS.ln();
        }
    }
    total * inv
}

fn dice_terms(probs: &[f64], classes: usize, labels: &[u8], mut grad: Option<&mut [f64]>) -> f64 {
    let n = labels.len();
    let fg = (classes - 1) as f64;
    let mut total = 0.0;
    for c in 1..classes {
        let plane = &probs[c * n..(c + 1) * n];
        let mut inter = 0.0;
        let mut psum = 0.0;
        let mut ysum = 0.0;
        for (&p, &l) in plane.iter().zip(labels) {
            psum += p;
            if l as usize == c {
                inter += p;
                ysum += 1.0;
            }
        }
        let num = 2.0 * inter + DICE_SMOOTH;
        let den = psum + ysum + DICE_SMOOTH;
        total += 1.0 - num / den;
        if let Some(g) = grad.as_deref_mut() {
            let gplane = &mut g[c * n..(c + 1) * n];
            let base = num / (den * den);
            let hit = -2.0 / den + base;
            for (gv, &l) in gplane.iter_mut().zip(labels) {
                *gv += (if l as usize == c { hit } else { base }) / fg;
            }
        }
    }
    total / fg
}

/// Loss value and, when `grad` is given, `dL/dp` accumulated into it.
pub(crate) fn loss_with_grad(
    probs: &[f64],
    classes: usize,
    labels: &[u8],
    mode: LossMode,
    mut grad: Option<&mut [f64]>,
) -> f64 {
    let mut total = 0.0;
    if mode.uses_ce() {
        total += ce_terms(probs, labels, grad.as_deref_mut());
    }
    if mode.uses_dice() {
        total += dice_terms(probs, classes, labels, grad.as_deref_mut());
    }
    total
}
