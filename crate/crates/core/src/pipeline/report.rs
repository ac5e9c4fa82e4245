//! Report types and the Markdown rendering of a report.
//!
//! The JSON report is deterministic: it carries no timings or absolute
//! paths, so the same inputs and config always give the same bytes. Stage
//! timings go to a separate document.

use crate::biomarkers::{BiomarkerRecord, RegionBiomarkers};
use crate::model::TimepointTag;
use crate::norm::NormalizationResult;
use crate::numfmt;
use crate::postprocess::LesionSetSummary;
use crate::response::{DeltaRecord, RecOutcome};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt::Write as _;

pub const REPORT_VERSION: u32 = 1;
pub const TOOL_NAME: &str = "wbdwi";
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Ingest,
    Fit,
    Normalize,
    Segment,
    Postprocess,
    Biomarkers,
    Response,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::Ingest => "ingest",
            Stage::Fit => "fit",
            Stage::Normalize => "normalize",
            Stage::Segment => "segment",
            Stage::Postprocess => "postprocess",
            Stage::Biomarkers => "biomarkers",
            Stage::Response => "response",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageError {
    pub stage: Stage,
    pub message: String,
}

impl std::fmt::Display for StageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "[{}] {}", self.stage.name(), self.message)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ToolInfo {
    pub name: String,
    pub version: String,
}

impl Default for ToolInfo {
    fn default() -> Self {
        ToolInfo { name: TOOL_NAME.into(), version: TOOL_VERSION.into() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSummary {
    pub dims: [usize; 3],
    pub spacing_mm: [f64; 3],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitSummary {
    pub valid_voxels: usize,
    pub total_voxels: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SegSummary {
    pub mask_voxels: usize,
    pub warnings: Vec<String>,
}

/// Everything computed for one timepoint. Sections after a failed stage are absent.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimepointReport {
    pub timepoint: Option<TimepointTag>,
    /// Relative file path → SHA-256 of every input file.
    pub inputs: BTreeMap<String, String>,
    pub grid: Option<GridSummary>,
    #[serde(with = "numfmt::vec_real")]
    pub b_values: Vec<f64>,
    pub fit: Option<FitSummary>,
    pub normalization: Option<NormalizationResult>,
    pub segmentation: Option<SegSummary>,
    pub lesions: Option<LesionSetSummary>,
    pub biomarkers: Option<BiomarkerRecord>,
    pub error: Option<StageError>,
}

impl TimepointReport {
    pub fn empty() -> Self {
        TimepointReport {
            timepoint: None,
            inputs: BTreeMap::new(),
            grid: None,
            b_values: Vec::new(),
            fit: None,
            normalization: None,
            segmentation: None,
            lesions: None,
            biomarkers: None,
            error: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StructuredReport {
    pub report_version: u32,
    pub tool: ToolInfo,
    pub config_hash: String,
    pub backend: String,
    pub pre: TimepointReport,
    pub post: TimepointReport,
    pub delta: Option<DeltaRecord>,
    pub response: Option<RecOutcome>,
}

impl StructuredReport {
    pub fn errors(&self) -> Vec<(&'static str, &StageError)> {
        [("pre", &self.pre.error), ("post", &self.post.error)]
            .into_iter()
            .filter_map(|(k, e)| e.as_ref().map(|e| (k, e)))
            .collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// One-timepoint report fragment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SingleReport {
    pub report_version: u32,
    pub tool: ToolInfo,
    pub config_hash: String,
    pub backend: String,
    pub timepoint: TimepointReport,
}

impl SingleReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StageTiming {
    pub stage: Option<Stage>,
    pub seconds: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TimepointTimings {
    pub stages: Vec<StageTiming>,
    pub total_seconds: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub pre: TimepointTimings,
    pub post: TimepointTimings,
    pub total_seconds: f64,
}

fn g(x: f64) -> String {
    numfmt::round6(x).to_string()
}

fn og(x: Option<f64>) -> String {
    x.map(g).unwrap_or_else(|| "n/a".into())
}

fn region_row(out: &mut String, r: &RegionBiomarkers) {
    let s = r.gadc.as_ref();
    let _ = writeln!(
        out,
        "| {} | {} | {} | {} | {} | {} | {} | {} | {} | {} | {} |",
        r.region.name(),
        g(r.tdv_ml),
        og(r.log_tdv),
        og(s.map(|s| s.mean)),
        og(s.map(|s| s.median)),
        og(s.map(|s| s.variance)),
        og(s.and_then(|s| s.skewness)),
        og(s.and_then(|s| s.kurtosis)),
        r.roi_count,
        r.roi_count_gt_1ml,
        r.roi_count_gt_3ml
    );
}

pub fn render_timepoint(out: &mut String, title: &str, t: &TimepointReport) {
    let _ = writeln!(out, "## {title}\n");
    if let Some(tp) = t.timepoint {
        let _ = writeln!(out, "- timepoint: {tp}");
    }
    if let Some(gr) = &t.grid {
        let _ = writeln!(out, "- grid: {:?} voxels, spacing {:?} mm", gr.dims, gr.spacing_mm);
    }
    if !t.b_values.is_empty() {
        let b: Vec<String> = t.b_values.iter().map(|&b| g(b)).collect();
        let _ = writeln!(out, "- b-values: {}", b.join(", "));
    }
    if let Some(f) = &t.fit {
        let _ = writeln!(out, "- ADC fit: {} of {} voxels valid", f.valid_voxels, f.total_voxels);
    }
    if let Some(n) = &t.normalization {
        let gains: Vec<String> = n.station_gains.iter().map(|&x| g(x)).collect();
        let _ = writeln!(out, "- station gains: {} (reference station {})", gains.join(", "), n.reference_station);
        let _ = writeln!(
            out,
            "- scan gain: {}; canal median {} -> {}",
            g(n.scan_gain),
            g(n.canal_median_before),
            g(n.canal_median_after)
        );
        for w in &n.warnings {
            let _ = writeln!(out, "- normalization warning: {w}");
        }
    }
    if let Some(s) = &t.segmentation {
        let _ = writeln!(out, "- segmentation: {} voxels", s.mask_voxels);
        for w in &s.warnings {
            let _ = writeln!(out, "- segmentation warning: {w}");
        }
    }
    if let Some(e) = &t.error {
        let _ = writeln!(out, "- **error** {e}");
    }
    if let Some(l) = &t.lesions {
        let _ = writeln!(out, "\n### Lesions\n\n| label | region | voxels | volume (mL) | status |\n|---|---|---|---|---|");
        for r in l.kept.iter().chain(&l.excluded) {
            let status = r.excluded_reason.map(|x| format!("excluded: {x:?}")).unwrap_or_else(|| "kept".into());
            let _ = writeln!(out, "| {} | {} | {} | {} | {} |", r.label, r.region.name(), r.voxel_count, g(r.volume_ml), status);
        }
        for w in &l.warnings {
            let _ = writeln!(out, "\n- lesion warning: {w}");
        }
    }
    if let Some(b) = &t.biomarkers {
        let _ = writeln!(
            out,
            "\n### Biomarkers\n\n| region | TDV (mL) | log-TDV | gADC mean | gADC median | gADC variance | skewness | kurtosis | ROIs | ROIs > 1 mL | ROIs > 3 mL |\n|---|---|---|---|---|---|---|---|---|---|---|"
        );
        for r in &b.regions {
            region_row(out, r);
        }
    }
    if !t.inputs.is_empty() {
        let _ = writeln!(out, "\n### Inputs\n");
        for (k, v) in &t.inputs {
            let _ = writeln!(out, "- `{k}` sha256 {v}");
        }
    }
    out.push('\n');
}

fn header(out: &mut String, title: &str, tool: &ToolInfo, hash: &str, backend: &str) {
    let _ = writeln!(out, "# {title}\n");
    let _ = writeln!(out, "- tool: {} {}", tool.name, tool.version);
    let _ = writeln!(out, "- config sha256: {hash}");
    let _ = writeln!(out, "- segmentation backend: {backend}\n");
}

pub fn render_markdown(r: &StructuredReport) -> String {
    let mut out = String::new();
    header(&mut out, "WB-DWI bone disease report", &r.tool, &r.config_hash, &r.backend);
    if let Some(d) = &r.delta {
        let _ = writeln!(out, "## Response\n");
        let _ = writeln!(out, "- ΔTDV: {} %", og(d.delta_tdv_pct));
        let _ = writeln!(out, "- Δ median gADC: {} %", og(d.delta_median_gadc_pct));
        let _ = writeln!(out, "- Δ ROIs > 1 mL: {:+}; Δ ROIs > 3 mL: {:+}", d.delta_roi_gt_1ml, d.delta_roi_gt_3ml);
    }
    if let Some(o) = &r.response {
        let _ = writeln!(out, "- outcome: **{:?}** ({:?})", o.outcome, o.benefit);
        let _ = writeln!(out, "- rationale: {}", o.rationale);
    }
    out.push('\n');
    render_timepoint(&mut out, "Pre-treatment", &r.pre);
    render_timepoint(&mut out, "Post-treatment", &r.post);
    out
}

pub fn render_single_markdown(r: &SingleReport) -> String {
    let mut out = String::new();
    header(&mut out, "WB-DWI single timepoint report", &r.tool, &r.config_hash, &r.backend);
    render_timepoint(&mut out, "Timepoint", &r.timepoint);
    out
}
