//! End-to-end orchestration: per timepoint assemble → fit → normalize →
//! segment → postprocess → biomarkers, then deltas and the response
//! criteria. The two timepoints run concurrently.

pub mod config;
pub mod report;

pub use config::{ConfigError, PipelineConfig, CONFIG_VERSION};
pub use report::{
    render_markdown, render_single_markdown, SingleReport, Stage, StageError, StageTiming, StructuredReport, TimepointReport,
    TimepointTimings, Timings,
};

use crate::adc::{compute_cdwi, fit_monoexponential, FitResult};
use crate::biomarkers::compute_biomarkers;
use crate::io::{load_study, write_label_nifti, write_nifti, NiftiError, StudySource};
use crate::model::{ScalarVolume, StudyBundle};
use crate::norm::normalize_volume;
use crate::postprocess::{postprocess, LesionSet};
use crate::response::{rec_classify, DeltaRecord};
use crate::seg::{binarize, segment, Backend, SegModelWeights};
use report::{FitSummary, GridSummary, SegSummary, ToolInfo, REPORT_VERSION};
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

/// Segmentation backend identity as written into reports.
pub fn backend_identity(cfg: &PipelineConfig, weights: Option<&SegModelWeights>) -> String {
    match (cfg.segmentation.backend, weights) {
        (Backend::Cnn, Some(w)) => format!("cnn sha256:{}", hex::encode(Sha256::digest(w.to_bytes()))),
        (b, _) => b.to_string(),
    }
}

/// SHA-256 of the sidecar and every file it references, keyed by path
/// relative to the study directory.
pub fn input_hashes(dir: &Path) -> Result<BTreeMap<String, String>, String> {
    let src = StudySource::open(dir).map_err(|e| e.to_string())?;
    let mut paths = vec![dir.join(crate::io::sidecar::SIDECAR_FILE)];
    paths.extend(src.manifest.referenced_paths(dir));
    let mut out = BTreeMap::new();
    for p in paths {
        let bytes = std::fs::read(&p).map_err(|e| format!("{}: {e}", p.display()))?;
        let rel = p.strip_prefix(dir).unwrap_or(&p).to_string_lossy().replace('\\', "/");
        out.insert(rel, hex::encode(Sha256::digest(&bytes)));
    }
    Ok(out)
}

/// Result of running one timepoint, including intermediate volumes.
#[derive(Clone, Debug)]
pub struct TimepointRun {
    pub report: TimepointReport,
    pub timings: TimepointTimings,
    pub fit: Option<FitResult>,
    pub normalized_b900: Option<ScalarVolume>,
    pub lesions: Option<LesionSet>,
}

struct Clock {
    timings: TimepointTimings,
    start: Instant,
}

impl Clock {
    fn new() -> Self {
        Clock { timings: TimepointTimings::default(), start: Instant::now() }
    }

    fn time<T>(&mut self, stage: Stage, f: impl FnOnce() -> T) -> T {
        let t = Instant::now();
        let out = f();
        self.timings.stages.push(StageTiming { stage: Some(stage), seconds: t.elapsed().as_secs_f64() });
        out
    }

    fn finish(mut self) -> TimepointTimings {
        self.timings.total_seconds = self.start.elapsed().as_secs_f64();
        self.timings
    }
}

fn fail(run: &mut TimepointRun, stage: Stage, message: impl ToString) {
    run.report.error = Some(StageError { stage, message: message.to_string() });
}

/// Processes an in-memory study. `report.error` is set at the first failing
/// stage; sections already computed are kept.
pub fn process_bundle(bundle: &StudyBundle, cfg: &PipelineConfig, weights: Option<&SegModelWeights>) -> TimepointRun {
    let mut clock = Clock::new();
    let mut run = process_inner(bundle, cfg, weights, &mut clock);
    run.timings = clock.finish();
    run
}

fn process_inner(bundle: &StudyBundle, cfg: &PipelineConfig, weights: Option<&SegModelWeights>, clock: &mut Clock) -> TimepointRun {
    let meta = *bundle.meta();
    let mut report = TimepointReport::empty();
    report.timepoint = Some(bundle.timepoint);
    report.grid = Some(GridSummary { dims: meta.dims, spacing_mm: meta.spacing });
    report.b_values = bundle.b_values.clone();
    let mut run = TimepointRun { report, timings: TimepointTimings::default(), fit: None, normalized_b900: None, lesions: None };
    if let Err(e) = bundle.validate() {
        fail(&mut run, Stage::Ingest, e);
        return run;
    }

    let fit = match clock.time(Stage::Fit, || fit_monoexponential(bundle, &cfg.adc)) {
        Ok(f) => f,
        Err(e) => {
            fail(&mut run, Stage::Fit, e);
            return run;
        }
    };
    run.report.fit = Some(FitSummary { valid_voxels: fit.valid_mask.mask_indices().len(), total_voxels: meta.len() });

    let norm = clock.time(Stage::Normalize, || {
        let cdwi = compute_cdwi(&fit, cfg.normalization.b_target).map_err(|e| e.to_string())?;
        normalize_volume(&cdwi, &bundle.station_slabs, bundle.canal_mask.as_ref(), &cfg.normalization).map_err(|e| e.to_string())
    });
    let mut norm = match norm {
        Ok(n) => n,
        Err(e) => {
            run.fit = Some(fit);
            fail(&mut run, Stage::Normalize, e);
            return run;
        }
    };
    let normalized = norm.normalized_b900.take().expect("normalization returns a volume");
    run.report.normalization = Some(norm);

    let seg = clock.time(Stage::Segment, || {
        let s = segment(&bundle.skeleton_prob, &normalized, weights, &cfg.segmentation).map_err(|e| e.to_string())?;
        let mask = binarize(&s.probability, cfg.segmentation.binarize_threshold).map_err(|e| e.to_string())?;
        Ok::<_, String>((mask, s.warnings))
    });
    let (mask, seg_warnings) = match seg {
        Ok(s) => s,
        Err(e) => {
            run.fit = Some(fit);
            run.normalized_b900 = Some(normalized);
            fail(&mut run, Stage::Segment, e);
            return run;
        }
    };
    run.report.segmentation = Some(SegSummary { mask_voxels: mask.mask_indices().len(), warnings: seg_warnings });

    let lesions =
        clock.time(Stage::Postprocess, || postprocess(&mask, &fit.gadc, &bundle.organ_mask, &bundle.region_labels, &cfg.postprocess));
    let lesions = match lesions {
        Ok(l) => l,
        Err(e) => {
            run.fit = Some(fit);
            run.normalized_b900 = Some(normalized);
            fail(&mut run, Stage::Postprocess, e);
            return run;
        }
    };
    run.report.lesions = Some(lesions.summary());
    run.report.biomarkers = Some(clock.time(Stage::Biomarkers, || compute_biomarkers(&lesions)));
    run.fit = Some(fit);
    run.normalized_b900 = Some(normalized);
    run.lesions = Some(lesions);
    run
}

/// Loads and processes one study directory.
pub fn process_study(dir: &Path, cfg: &PipelineConfig, weights: Option<&SegModelWeights>) -> TimepointRun {
    let mut clock = Clock::new();
    let loaded = clock.time(Stage::Ingest, || input_hashes(dir).and_then(|h| load_study(dir).map(|b| (h, b)).map_err(|e| e.to_string())));
    let mut run = match loaded {
        Ok((hashes, bundle)) => {
            let mut run = process_inner(&bundle, cfg, weights, &mut clock);
            run.report.inputs = hashes;
            run
        }
        Err(e) => {
            let mut report = TimepointReport::empty();
            report.error = Some(StageError { stage: Stage::Ingest, message: e });
            TimepointRun { report, timings: TimepointTimings::default(), fit: None, normalized_b900: None, lesions: None }
        }
    };
    run.timings = clock.finish();
    run
}

#[derive(Clone, Debug)]
pub struct PipelineOutput {
    pub report: StructuredReport,
    pub timings: Timings,
    pub pre: TimepointRun,
    pub post: TimepointRun,
}

impl PipelineOutput {
    pub fn succeeded(&self) -> bool {
        self.report.errors().is_empty()
    }
}

fn pair(pre: TimepointRun, post: TimepointRun, cfg: &PipelineConfig, weights: Option<&SegModelWeights>, wall: Instant) -> PipelineOutput {
    let (delta, response) = match (&pre.report.biomarkers, &post.report.biomarkers) {
        (Some(a), Some(b)) => {
            let d = DeltaRecord::from_records(a, b);
            let r = rec_classify(&d, &cfg.response.cutoffs);
            (Some(d), Some(r))
        }
        _ => (None, None),
    };
    let report = StructuredReport {
        report_version: REPORT_VERSION,
        tool: ToolInfo::default(),
        config_hash: cfg.hash(),
        backend: backend_identity(cfg, weights),
        pre: pre.report.clone(),
        post: post.report.clone(),
        delta,
        response,
    };
    let timings = Timings { pre: pre.timings.clone(), post: post.timings.clone(), total_seconds: wall.elapsed().as_secs_f64() };
    PipelineOutput { report, timings, pre, post }
}

/// Runs both timepoints from study directories.
pub fn run_pipeline(pre: &Path, post: &Path, cfg: &PipelineConfig, weights: Option<&SegModelWeights>) -> PipelineOutput {
    let wall = Instant::now();
    let (a, b) = rayon::join(|| process_study(pre, cfg, weights), || process_study(post, cfg, weights));
    pair(a, b, cfg, weights, wall)
}

/// Runs both timepoints from in-memory studies.
pub fn run_pipeline_bundles(pre: &StudyBundle, post: &StudyBundle, cfg: &PipelineConfig, weights: Option<&SegModelWeights>) -> PipelineOutput {
    let wall = Instant::now();
    let (a, b) = rayon::join(|| process_bundle(pre, cfg, weights), || process_bundle(post, cfg, weights));
    pair(a, b, cfg, weights, wall)
}

pub struct SingleOutput {
    pub report: SingleReport,
    pub run: TimepointRun,
}

pub fn run_single(dir: &Path, cfg: &PipelineConfig, weights: Option<&SegModelWeights>) -> SingleOutput {
    let run = process_study(dir, cfg, weights);
    let report = SingleReport {
        report_version: REPORT_VERSION,
        tool: ToolInfo::default(),
        config_hash: cfg.hash(),
        backend: backend_identity(cfg, weights),
        timepoint: run.report.clone(),
    };
    SingleOutput { report, run }
}

/// Writes the labelled kept-lesion mask of a run, if it got that far.
pub fn write_lesion_labels(run: &TimepointRun, path: &Path) -> Result<bool, NiftiError> {
    match &run.lesions {
        Some(l) => {
            write_label_nifti(&l.meta, &l.label_map(), path)?;
            Ok(true)
        }
        None => Ok(false),
    }
}

/// Writes `report.json`, `report.md`, `timings.json`, and per-timepoint
/// lesion label maps and normalized b900 volumes into `out`.
pub fn write_outputs(output: &PipelineOutput, out: &Path) -> std::io::Result<()> {
    std::fs::create_dir_all(out)?;
    std::fs::write(out.join("report.json"), output.report.to_json())?;
    std::fs::write(out.join("report.md"), render_markdown(&output.report))?;
    std::fs::write(out.join("timings.json"), serde_json::to_string_pretty(&output.timings)?)?;
    for (name, run) in [("pre", &output.pre), ("post", &output.post)] {
        write_lesion_labels(run, &out.join(format!("lesions_{name}.nii"))).map_err(std::io::Error::other)?;
        if let Some(v) = &run.normalized_b900 {
            write_nifti(v, out.join(format!("b900_normalized_{name}.nii"))).map_err(std::io::Error::other)?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phantom::{anatomy, bone_centers, generate_phantom, LesionSpec, PhantomSpec};
    use crate::model::RegionCode;
    use crate::response::Outcome;

    fn spec() -> PhantomSpec {
        let meta = PhantomSpec::default().meta().unwrap();
        let anat = anatomy(&meta);
        let c = bone_centers(&anat, RegionCode::Pelvis)[30];
        PhantomSpec {
            lesions: vec![LesionSpec { center_mm: c, radii_mm: [14.0; 3], s0: None, adc: None }],
            station_gains: vec![1.0, 1.3, 0.8, 1.1],
            scan_gain: 1.4,
            ..PhantomSpec::default()
        }
    }

    #[test]
    fn identity_pair_is_stable() {
        let (b, truth) = generate_phantom(&spec()).unwrap();
        let out = run_pipeline_bundles(&b, &b, &PipelineConfig::default(), None);
        assert!(out.succeeded(), "{:?}", out.report.errors());
        let d = out.report.delta.as_ref().unwrap();
        assert_eq!((d.delta_tdv_pct, d.delta_median_gadc_pct), (Some(0.0), Some(0.0)));
        assert_eq!(out.report.response.as_ref().unwrap().outcome, Outcome::Stable);
        let tdv = out.report.pre.biomarkers.as_ref().unwrap().global().tdv_ml;
        assert!((tdv - truth.summary.lesion_volume_ml).abs() < 1e-9);
    }

    #[test]
    fn missing_canal_fails_at_normalize() {
        let (pre, _) = generate_phantom(&spec()).unwrap();
        let (post, _) = generate_phantom(&PhantomSpec { omit_canal: true, ..spec() }).unwrap();
        let out = run_pipeline_bundles(&pre, &post, &PipelineConfig::default(), None);
        assert!(out.report.pre.biomarkers.is_some());
        assert_eq!(out.report.post.error.as_ref().unwrap().stage, Stage::Normalize);
        assert!(out.report.response.is_none());
        assert!(render_markdown(&out.report).contains("[normalize]"));
    }

    #[test]
    fn report_round_trips_through_json() {
        let (b, _) = generate_phantom(&spec()).unwrap();
        let out = run_pipeline_bundles(&b, &b, &PipelineConfig::default(), None);
        let json = out.report.to_json();
        let back: StructuredReport = serde_json::from_str(&json).unwrap();
        assert_eq!(back, out.report);
        assert_eq!(render_markdown(&back), render_markdown(&out.report));
    }
}
