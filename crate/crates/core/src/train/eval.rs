//! Inference and per-case metric reports.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Checkpoint, Inference, Which};
use crate::error::{Error, Result};
use crate::metrics::{evaluate_case, CaseMetrics, Summary};
use crate::net::{forward, ParamVector};
use crate::phantom::Dataset;
use crate::volume::{argmax_labels, LabelMap, ProbMap, Volume};

/// Revision string stamped into reports.
pub fn revision() -> String {
    format!(
        "ipacp-{}+{}",
        env!("CARGO_PKG_VERSION"),
        option_env!("IPACP_REVISION").unwrap_or("local")
    )
}

/// Anything that turns an image into a label map.
pub trait Segmenter {
    fn segment(&self, id: &str, image: &Volume) -> Result<LabelMap>;
}

/// The network, run whole-volume or by sliding window.
pub struct NetSegmenter<'a> {
    pub params: &'a ParamVector,
    pub inference: Inference,
}

impl Segmenter for NetSegmenter<'_> {
    fn segment(&self, _id: &str, image: &Volume) -> Result<LabelMap> {
        Ok(argmax_labels(&predict(self.params, image, self.inference)?))
    }
}

/// Returns the stored reference labels; used to check the metric pipeline.
pub struct ReferenceSegmenter<'a>(pub &'a Dataset);

impl Segmenter for ReferenceSegmenter<'_> {
    fn segment(&self, id: &str, _image: &Volume) -> Result<LabelMap> {
        self.0.label(id).cloned()
    }
}

/// Predicts background everywhere.
pub struct EmptySegmenter {
    pub classes: usize,
}

impl Segmenter for EmptySegmenter {
    fn segment(&self, _id: &str, image: &Volume) -> Result<LabelMap> {
        Ok(LabelMap::zeros(image.dims(), self.classes))
    }
}

fn window_starts(extent: usize, window: usize, stride: usize) -> Vec<usize> {
    let mut starts: Vec<usize> = (0..=extent - window).step_by(stride).collect();
    if *starts.last().expect("at least one start") != extent - window {
        starts.push(extent - window);
    }
    starts
}

/// Class probabilities for a whole volume. Sliding windows average the
/// probabilities of overlapping tiles.
pub fn predict(params: &ParamVector, image: &Volume, inference: Inference) -> Result<ProbMap> {
    let (window, stride) = match inference {
        Inference::Whole => return forward(params, image),
        Inference::Sliding { window, stride } => (window, stride),
    };
    let dims = image.dims();
    let (d, w, s) = (dims.as_array(), window.as_array(), stride.as_array());
    if (0..3).any(|a| w[a] > d[a] || s[a] == 0) {
        return Err(Error::InvalidDims(format!("window {window} with stride {stride} does not tile {dims}")));
    }
    let classes = params.arch().classes;
    let n = dims.len();
    let mut acc = vec![0.0; n * classes];
    let mut hits = vec![0u32; n];
    for &z0 in &window_starts(d[0], w[0], s[0]) {
        for &y0 in &window_starts(d[1], w[1], s[1]) {
            for &x0 in &window_starts(d[2], w[2], s[2]) {
                let tile = forward(params, &image.crop([z0, y0, x0], window)?)?;
                let tn = window.len();
                for t in 0..tn {
                    let (z, y, x) = window.coords(t);
                    let g = dims.index(z0 + z, y0 + y, x0 + x);
                    hits[g] += 1;
                    for c in 0..classes {
                        acc[c * n + g] += tile.data()[c * tn + t];
                    }
                }
            }
        }
    }
    for c in 0..classes {
        for g in 0..n {
            acc[c * n + g] /= f64::from(hits[g]);
        }
    }
    Ok(ProbMap::from_raw(dims, classes, acc))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMeta {
    pub config_hash: String,
    pub seed: u64,
    pub revision: String,
    pub model: String,
    pub split: String,
}

pub const RMSE_DEFINITION: &str = "100 * sqrt(mean voxelwise (pred - ref)^2) over binary foreground masks";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub meta: RunMeta,
    /// How RMSE was computed; there is no single standard for masks.
    pub rmse_definition: String,
    pub cases: Vec<CaseMetrics>,
    pub dice: Summary,
    pub jaccard: Summary,
    pub rmse: Summary,
    pub hd95: Summary,
    pub asd: Summary,
}

fn fmt_opt(v: Option<f64>) -> String {
    match v {
        Some(x) if x.is_finite() => x.to_string(),
        _ => String::new(),
    }
}

impl MetricsReport {
    pub fn from_cases(meta: RunMeta, cases: Vec<CaseMetrics>) -> Self {
        Self {
            rmse_definition: RMSE_DEFINITION.into(),
            dice: Summary::of(cases.iter().map(|c| Some(c.dice))),
            jaccard: Summary::of(cases.iter().map(|c| Some(c.jaccard))),
            rmse: Summary::of(cases.iter().map(|c| Some(c.rmse))),
            hd95: Summary::of(cases.iter().map(|c| c.hd95)),
            asd: Summary::of(cases.iter().map(|c| c.asd)),
            meta,
            cases,
        }
    }

    fn summaries(&self) -> [&Summary; 5] {
        [&self.dice, &self.jaccard, &self.rmse, &self.hd95, &self.asd]
    }

    /// Per-case rows followed by `mean` and `std` rows. Undefined distances
    /// are empty fields.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("id,dice,jaccard,rmse,hd95,asd\n");
        for c in &self.cases {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{}",
                c.id,
                c.dice,
                c.jaccard,
                c.rmse,
                fmt_opt(c.hd95),
                fmt_opt(c.asd)
            );
        }
        for (name, pick) in [("mean", 0), ("std", 1)] {
            let vals: Vec<String> = self
                .summaries()
                .iter()
                .map(|m| fmt_opt(Some(if pick == 0 { m.mean } else { m.std })))
                .collect();
            let _ = writeln!(s, "{name},{}", vals.join(","));
        }
        s
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Writes `<stem>.json` and `<stem>.csv`.
    pub fn save(&self, stem: &Path) -> Result<()> {
        if let Some(parent) = stem.parent() {
            if !parent.as_os_str().is_empty() {
                fs::create_dir_all(parent)?;
            }
        }
        fs::write(stem.with_extension("json"), self.to_json()?)?;
        fs::write(stem.with_extension("csv"), self.to_csv())?;
        Ok(())
    }
}

/// Segment and score every case in `ids`.
pub fn evaluate_with(seg: &dyn Segmenter, data: &Dataset, ids: &[String], meta: RunMeta) -> Result<MetricsReport> {
    let mut cases = Vec::with_capacity(ids.len());
    for id in ids {
        let image = data.image(id)?;
        let reference = data.label(id)?;
        let pred = seg.segment(id, image)?;
        if pred.dims() != reference.dims() {
            return Err(Error::DimMismatch {
                left: pred.dims(),
                right: reference.dims(),
            });
        }
        let spacing = image.spacing().unwrap_or([1.0; 3]);
        cases.push(evaluate_case(id, &pred.foreground(), &reference.foreground(), spacing)?);
    }
    Ok(MetricsReport::from_cases(meta, cases))
}

/// Evaluate a checkpoint's student or teacher on a named split.
pub fn evaluate(ckpt: &Checkpoint, data: &Dataset, split: &str, which: Which, inference: Inference) -> Result<MetricsReport> {
    let ids = data.split.part(split)?;
    if ids.is_empty() {
        return Err(Error::MissingData(format!("split {split:?} is empty")));
    }
    let params = ckpt.params(which);
    if let Inference::Whole = inference {
        for id in ids {
            params.arch().check_input(data.image(id)?.dims())?;
        }
    }
    let meta = RunMeta {
        config_hash: ckpt.meta.config_hash.clone(),
        seed: ckpt.meta.seed,
        revision: revision(),
        model: format!("{which:?}").to_ascii_lowercase(),
        split: split.to_string(),
    };
    evaluate_with(&NetSegmenter { params, inference }, data, ids, meta)
}
