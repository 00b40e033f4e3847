//! Sweeps over one configuration axis with everything else held fixed.

use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::eval::{evaluate_with, MetricsReport, NetSegmenter, RunMeta};
use super::{train_in_memory, ComponentFlags, TrainConfig};
use crate::error::{Error, Result};
use crate::masking::HoleSpec;
use crate::metrics::Summary;
use crate::net::LossMode;
use crate::phantom::Dataset;
use crate::pseudo::PseudoMode;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Axis {
    Tau,
    Holes,
    PseudoMode,
    LossMode,
    ComponentFlags,
}

impl FromStr for Axis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().replace('-', "_").as_str() {
            "tau" => Ok(Axis::Tau),
            "holes" => Ok(Axis::Holes),
            "pseudo_mode" => Ok(Axis::PseudoMode),
            "loss_mode" => Ok(Axis::LossMode),
            "component_flags" | "components" => Ok(Axis::ComponentFlags),
            other => Err(Error::InvalidConfig(format!("unknown ablation axis {other:?}"))),
        }
    }
}

impl Axis {
    pub fn name(self) -> &'static str {
        match self {
            Axis::Tau => "tau",
            Axis::Holes => "holes",
            Axis::PseudoMode => "pseudo_mode",
            Axis::LossMode => "loss_mode",
            Axis::ComponentFlags => "component_flags",
        }
    }
}

pub const TAU_VALUES: [f64; 5] = [0.5, 0.6, 0.7, 0.8, 0.9];
pub const HOLE_COUNTS: [(usize, usize); 5] = [(1, 5), (5, 10), (10, 20), (10, 30), (20, 40)];

/// Named flag sets; `none` trains on labeled data only.
pub fn flag_variants() -> Vec<(&'static str, ComponentFlags)> {
    let all = ComponentFlags::ALL;
    vec![
        ("all", all),
        ("no_wsa", ComponentFlags { wsa: false, ..all }),
        ("no_bcp", ComponentFlags { bcp: false, ..all }),
        ("no_tue", ComponentFlags { tue: false, ..all }),
        ("no_ipt", ComponentFlags { ipt: false, ..all }),
        ("no_pdi", ComponentFlags { pdi: false, ..all }),
        ("bcp_only", ComponentFlags::BCP_ONLY),
        ("none", ComponentFlags::NONE),
    ]
}

/// One config per axis value, in table order.
pub fn variants(base: &TrainConfig, axis: Axis, patch: crate::volume::Dims) -> Vec<(String, TrainConfig)> {
    let with = |f: &dyn Fn(&mut TrainConfig)| {
        let mut c = base.clone();
        f(&mut c);
        c
    };
    match axis {
        Axis::Tau => TAU_VALUES
            .iter()
            .map(|&t| (t.to_string(), with(&|c| c.tau = t)))
            .collect(),
        Axis::Holes => HOLE_COUNTS
            .iter()
            .map(|&count| {
                let size = base.mask_spec(patch).size;
                let spec = HoleSpec { count, size };
                (
                    format!("{}-{}", count.0, count.1),
                    with(&|c| {
                        c.mask_holes = Some(spec);
                        c.paste_holes = Some(spec);
                    }),
                )
            })
            .collect(),
        Axis::PseudoMode => PseudoMode::ALL
            .iter()
            .map(|&m| (m.to_string(), with(&|c| c.pseudo_mode = m)))
            .collect(),
        Axis::LossMode => LossMode::ALL
            .iter()
            .map(|&m| (m.to_string(), with(&|c| c.loss_mode = m)))
            .collect(),
        Axis::ComponentFlags => flag_variants()
            .into_iter()
            .map(|(name, f)| (name.to_string(), with(&|c| c.flags = f)))
            .collect(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub value: String,
    pub config_hash: String,
    pub dice: Summary,
    pub jaccard: Summary,
    pub rmse: Summary,
    pub hd95: Summary,
    pub asd: Summary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub axis: Axis,
    pub seed: u64,
    pub rows: Vec<AblationRow>,
}

impl AblationTable {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// One row per axis value, each metric as `mean,std`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from(
            "value,dice_mean,dice_std,jaccard_mean,jaccard_std,rmse_mean,rmse_std,hd95_mean,hd95_std,asd_mean,asd_std\n",
        );
        for r in &self.rows {
            let cells: Vec<String> = [&r.dice, &r.jaccard, &r.rmse, &r.hd95, &r.asd]
                .iter()
                .flat_map(|m| [m.mean, m.std])
                .map(|x| if x.is_finite() { x.to_string() } else { String::new() })
                .collect();
            let _ = writeln!(s, "{},{}", r.value, cells.join(","));
        }
        s
    }
}

/// Train and evaluate one config on the test split.
pub fn run_one(cfg: &TrainConfig, data: &Dataset) -> Result<MetricsReport> {
    let outcome = train_in_memory(cfg, data)?;
    let params = match cfg.eval_model {
        super::Which::Student => &outcome.state.student,
        super::Which::Teacher => &outcome.state.teacher,
    };
    let meta = RunMeta {
        config_hash: cfg.hash(),
        seed: cfg.seed,
        revision: super::eval::revision(),
        model: format!("{:?}", cfg.eval_model).to_ascii_lowercase(),
        split: "test".into(),
    };
    let seg = NetSegmenter {
        params,
        inference: cfg.inference,
    };
    evaluate_with(&seg, data, &data.split.test, meta)
}

/// Run every value of `axis` from the same seed.
pub fn ablate(base: &TrainConfig, data: &Dataset, axis: Axis) -> Result<AblationTable> {
    let patch = match base.patch {
        Some(p) => p,
        None => {
            let id = data.split.labeled.first().ok_or_else(|| Error::MissingData("no labeled cases".into()))?;
            data.image(id)?.dims()
        }
    };
    let mut rows = Vec::new();
    for (value, cfg) in variants(base, axis, patch) {
        let report = run_one(&cfg, data)?;
        rows.push(AblationRow {
            value,
            config_hash: cfg.hash(),
            dice: report.dice,
            jaccard: report.jaccard,
            rmse: report.rmse,
            hd95: report.hd95,
            asd: report.asd,
        });
    }
    Ok(AblationTable {
        axis,
        seed: base.seed,
        rows,
    })
}
