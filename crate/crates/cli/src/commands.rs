use crate::tables::{self, Table};
use crate::{Cli, CliError, Command, Global};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};
use wbdwi_core::adc::{fit_monoexponential, FitResult};
use wbdwi_core::biomarkers::compute_biomarkers;
use wbdwi_core::io::{load_study, read_nifti, write_label_nifti, write_nifti};
use wbdwi_core::model::{ScalarVolume, StudyBundle};
use wbdwi_core::norm::{normalize_b900, NormalizationResult};
use wbdwi_core::phantom::{generate_cohort, generate_phantom, write_cohort, write_phantom, CohortSpec, PhantomSpec};
use wbdwi_core::pipeline::report::{render_markdown, render_single_markdown, SingleReport, Stage, StructuredReport};
use wbdwi_core::pipeline::{backend_identity, run_pipeline, run_single, write_lesion_labels, write_outputs, PipelineConfig};
use wbdwi_core::postprocess::{postprocess, LesionSet};
use wbdwi_core::response::{percent_change, rec_classify, DeltaRecord, RecOutcome};
use wbdwi_core::seg::{binarize, load_weights, segment, Backend, SegModelWeights};
use wbdwi_core::stats::accuracy::{accuracy_from_counts, diagnostic_accuracy};
use wbdwi_core::stats::cutoffs::{optimize_cutoffs, CutoffCase};
use wbdwi_core::stats::repeatability::{bland_altman, repeatability};

fn invalid(e: impl std::fmt::Display) -> CliError {
    CliError::Validation(e.to_string())
}

fn stage(name: &str) -> impl Fn(&dyn std::fmt::Display) -> CliError + '_ {
    move |e| CliError::Stage(format!("[{name}] {e}"))
}

struct Context {
    cfg: PipelineConfig,
    weights: Option<SegModelWeights>,
    out: Option<PathBuf>,
}

impl Context {
    fn new(g: &Global) -> Result<Self, CliError> {
        let mut cfg = match &g.config {
            Some(p) => PipelineConfig::load(p).map_err(invalid)?,
            None => PipelineConfig::default(),
        };
        if let Some(s) = g.seed {
            cfg.stats.seed = s;
        }
        if let Some(b) = g.backend {
            cfg.segmentation.backend = b.into();
        }
        cfg.validate().map_err(invalid)?;
        let weights = match &g.weights {
            Some(p) => Some(load_weights(p).map_err(|e| invalid(format!("{}: {e}", p.display())))?),
            None => None,
        };
        if cfg.segmentation.backend == Backend::Cnn && weights.is_none() {
            return Err(invalid("the cnn backend needs --weights"));
        }
        Ok(Context { cfg, weights, out: g.out.clone() })
    }

    fn out_dir(&self) -> Result<&Path, CliError> {
        let d = self.out.as_deref().ok_or_else(|| invalid("this command needs --out"))?;
        std::fs::create_dir_all(d)?;
        Ok(d)
    }

    /// Prints `value` and, with --out, also writes it to `name`.
    fn emit<T: Serialize>(&self, value: &T, name: &str) -> Result<(), CliError> {
        let text = serde_json::to_string_pretty(value).map_err(|e| CliError::Io(e.into()))?;
        if let Some(d) = &self.out {
            std::fs::create_dir_all(d)?;
            std::fs::write(d.join(name), &text)?;
        }
        println!("{text}");
        Ok(())
    }
}

fn load(study: &Path) -> Result<StudyBundle, CliError> {
    let b = load_study(study).map_err(|e| invalid(format!("{}: {e}", study.display())))?;
    b.validate().map_err(|e| invalid(format!("{}: {e}", study.display())))?;
    Ok(b)
}

fn fit(b: &StudyBundle, cfg: &PipelineConfig) -> Result<FitResult, CliError> {
    fit_monoexponential(b, &cfg.adc).map_err(|e| stage("fit")(&e))
}

fn normalize(b: &StudyBundle, f: &FitResult, cfg: &PipelineConfig) -> Result<(NormalizationResult, ScalarVolume), CliError> {
    let mut n = normalize_b900(f, b, &cfg.normalization).map_err(|e| stage("normalize")(&e))?;
    let v = n.normalized_b900.take().expect("normalization returns a volume");
    Ok((n, v))
}

fn lesion_mask(b: &StudyBundle, f: &FitResult, ctx: &Context, mask: Option<&Path>) -> Result<ScalarVolume, CliError> {
    if let Some(p) = mask {
        let m = read_nifti(p).map_err(|e| invalid(format!("{}: {e}", p.display())))?;
        if !m.meta().same_grid(b.meta()) {
            return Err(invalid(format!("{}: mask grid differs from the study grid", p.display())));
        }
        return Ok(m);
    }
    let (_, norm) = normalize(b, f, &ctx.cfg)?;
    let s = segment(&b.skeleton_prob, &norm, ctx.weights.as_ref(), &ctx.cfg.segmentation).map_err(|e| stage("segment")(&e))?;
    binarize(&s.probability, ctx.cfg.segmentation.binarize_threshold).map_err(|e| stage("segment")(&e))
}

fn lesions(b: &StudyBundle, f: &FitResult, ctx: &Context, mask: Option<&Path>) -> Result<LesionSet, CliError> {
    let m = lesion_mask(b, f, ctx, mask)?;
    postprocess(&m, &f.gadc, &b.organ_mask, &b.region_labels, &ctx.cfg.postprocess).map_err(|e| stage("postprocess")(&e))
}

fn nifti_err(e: wbdwi_core::io::NiftiError) -> CliError {
    CliError::Io(std::io::Error::other(e))
}

#[derive(Serialize)]
struct FitOutput {
    valid_voxels: usize,
    total_voxels: usize,
    b_values: Vec<f64>,
}

#[derive(Serialize)]
struct SegOutput {
    backend: String,
    mask_voxels: usize,
    warnings: Vec<String>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default)]
struct DeltaInput {
    id: Option<String>,
    delta_tdv_pct: Option<f64>,
    delta_median_gadc_pct: Option<f64>,
    delta_roi_gt_1ml: Option<i64>,
    delta_roi_gt_3ml: Option<i64>,
    tdv_pre: Option<f64>,
    tdv_post: Option<f64>,
    median_gadc_pre: Option<f64>,
    median_gadc_post: Option<f64>,
    roi_gt_1ml_pre: Option<i64>,
    roi_gt_1ml_post: Option<i64>,
    roi_gt_3ml_pre: Option<i64>,
    roi_gt_3ml_post: Option<i64>,
}

impl DeltaInput {
    fn delta(&self) -> DeltaRecord {
        let paired = self.delta_tdv_pct.is_none() && self.delta_median_gadc_pct.is_none() && self.delta_roi_gt_1ml.is_none();
        if !paired {
            return DeltaRecord {
                delta_tdv_pct: self.delta_tdv_pct,
                delta_median_gadc_pct: self.delta_median_gadc_pct,
                delta_roi_gt_1ml: self.delta_roi_gt_1ml.unwrap_or(0),
                delta_roi_gt_3ml: self.delta_roi_gt_3ml.unwrap_or(0),
            };
        }
        let pct = |a: Option<f64>, b: Option<f64>| a.zip(b).and_then(|(a, b)| percent_change(a, b));
        DeltaRecord {
            delta_tdv_pct: pct(self.tdv_pre, self.tdv_post),
            delta_median_gadc_pct: pct(self.median_gadc_pre, self.median_gadc_post),
            delta_roi_gt_1ml: self.roi_gt_1ml_post.unwrap_or(0) - self.roi_gt_1ml_pre.unwrap_or(0),
            delta_roi_gt_3ml: self.roi_gt_3ml_post.unwrap_or(0) - self.roi_gt_3ml_pre.unwrap_or(0),
        }
    }
}

#[derive(Serialize)]
struct Response {
    id: String,
    delta: DeltaRecord,
    response: RecOutcome,
}

fn is_csv(p: &Path) -> bool {
    p.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv"))
}

fn read_json(p: &Path) -> Result<serde_json::Value, CliError> {
    let text = std::fs::read_to_string(p).map_err(|e| invalid(format!("{}: {e}", p.display())))?;
    serde_json::from_str(&text).map_err(|e| invalid(format!("{}: {e}", p.display())))
}

fn deltas(input: &Path) -> Result<Vec<(String, DeltaRecord)>, CliError> {
    if is_csv(input) {
        let t = Table::read(input)?;
        return (0..t.len()).map(|i| Ok((t.id(i), tables::delta_row(&t, i)?))).collect();
    }
    let v = read_json(input)?;
    if v.get("report_version").is_some() {
        let r: StructuredReport = serde_json::from_value(v).map_err(invalid)?;
        let d = r.delta.ok_or_else(|| invalid("report has no deltas (a timepoint failed)"))?;
        return Ok(vec![("report".into(), d)]);
    }
    let rows: Vec<DeltaInput> = match v {
        serde_json::Value::Array(_) => serde_json::from_value(v).map_err(invalid)?,
        other => vec![serde_json::from_value(other).map_err(invalid)?],
    };
    Ok(rows
        .iter()
        .enumerate()
        .map(|(i, r)| (r.id.clone().unwrap_or_else(|| format!("row_{}", i + 1)), r.delta()))
        .collect())
}

pub fn run(cli: &Cli) -> Result<(), CliError> {
    let ctx = Context::new(&cli.global)?;
    let cfg = &ctx.cfg;
    match &cli.command {
        Command::Pipeline { pre, post } => {
            let out = ctx.out_dir()?.to_path_buf();
            let res = run_pipeline(pre, post, cfg, ctx.weights.as_ref());
            write_outputs(&res, &out)?;
            let errors = res.report.errors();
            match res.report.response.as_ref() {
                Some(r) => println!("{:?} ({:?}): {}", r.outcome, r.benefit, r.rationale),
                None => println!("no response category"),
            }
            if errors.is_empty() {
                return Ok(());
            }
            let msg = errors.iter().map(|(tp, e)| format!("{tp}: {e}")).collect::<Vec<_>>().join("; ");
            if errors.iter().all(|(_, e)| e.stage == Stage::Ingest) {
                Err(CliError::Validation(msg))
            } else {
                Err(CliError::Stage(msg))
            }
        }
        Command::Single { study } => {
            let res = run_single(study, cfg, ctx.weights.as_ref());
            if let Some(d) = &ctx.out {
                std::fs::create_dir_all(d)?;
                std::fs::write(d.join("report.json"), res.report.to_json())?;
                std::fs::write(d.join("report.md"), render_single_markdown(&res.report))?;
                std::fs::write(d.join("timings.json"), serde_json::to_string_pretty(&res.run.timings).map_err(invalid)?)?;
                write_lesion_labels(&res.run, &d.join("lesions.nii")).map_err(nifti_err)?;
            } else {
                println!("{}", res.report.to_json());
            }
            match &res.report.timepoint.error {
                None => Ok(()),
                Some(e) if e.stage == Stage::Ingest => Err(CliError::Validation(e.to_string())),
                Some(e) => Err(CliError::Stage(e.to_string())),
            }
        }
        Command::FitAdc { study } => {
            let out = ctx.out_dir()?;
            let b = load(study)?;
            let f = fit(&b, cfg)?;
            write_nifti(&f.gadc, out.join("adc.nii")).map_err(nifti_err)?;
            write_nifti(&f.s0, out.join("s0.nii")).map_err(nifti_err)?;
            write_nifti(&f.valid_mask, out.join("valid_mask.nii")).map_err(nifti_err)?;
            let summary =
                FitOutput { valid_voxels: f.valid_mask.mask_indices().len(), total_voxels: b.meta().len(), b_values: b.b_values.clone() };
            ctx.emit(&summary, "fit.json")
        }
        Command::Normalize { study } => {
            let out = ctx.out_dir()?;
            let b = load(study)?;
            let f = fit(&b, cfg)?;
            let (n, v) = normalize(&b, &f, cfg)?;
            write_nifti(&v, out.join("b900_normalized.nii")).map_err(nifti_err)?;
            ctx.emit(&n, "normalization.json")
        }
        Command::Segment { study } => {
            let out = ctx.out_dir()?;
            let b = load(study)?;
            let f = fit(&b, cfg)?;
            let (_, norm) = normalize(&b, &f, cfg)?;
            let s = segment(&b.skeleton_prob, &norm, ctx.weights.as_ref(), &cfg.segmentation).map_err(|e| stage("segment")(&e))?;
            let mask = binarize(&s.probability, cfg.segmentation.binarize_threshold).map_err(|e| stage("segment")(&e))?;
            write_nifti(&s.probability, out.join("lesion_probability.nii")).map_err(nifti_err)?;
            write_nifti(&mask, out.join("lesion_mask.nii")).map_err(nifti_err)?;
            let summary =
                SegOutput { backend: backend_identity(cfg, ctx.weights.as_ref()), mask_voxels: mask.mask_indices().len(), warnings: s.warnings };
            ctx.emit(&summary, "segmentation.json")
        }
        Command::Postprocess { study, mask } => {
            let out = ctx.out_dir()?;
            let b = load(study)?;
            let f = fit(&b, cfg)?;
            let set = lesions(&b, &f, &ctx, mask.as_deref())?;
            write_label_nifti(&set.meta, &set.label_map(), out.join("lesions.nii")).map_err(nifti_err)?;
            ctx.emit(&set.summary(), "lesions.json")
        }
        Command::Quantify { study, mask } => {
            let b = load(study)?;
            let f = fit(&b, cfg)?;
            let set = lesions(&b, &f, &ctx, mask.as_deref())?;
            ctx.emit(&compute_biomarkers(&set), "biomarkers.json")
        }
        Command::Respond { input } => {
            let rows: Vec<Response> = deltas(input)?
                .into_iter()
                .map(|(id, delta)| {
                    let response = rec_classify(&delta, &cfg.response.cutoffs);
                    Response { id, delta, response }
                })
                .collect();
            ctx.emit(&rows, "responses.json")
        }
        Command::Repeatability { input } => {
            let t = Table::read(input)?;
            let pairs = (0..t.len()).map(|i| Ok((t.f64(i, "first")?, t.f64(i, "second")?))).collect::<Result<Vec<_>, CliError>>()?;
            let rep = repeatability(&pairs, cfg.stats.repeatability_iterations, cfg.stats.seed).map_err(invalid)?;
            let ba = bland_altman(&pairs).map_err(invalid)?;
            ctx.emit(&serde_json::json!({ "repeatability": rep, "bland_altman": ba }), "repeatability.json")
        }
        Command::Accuracy { input, counts, continuity } => {
            let cc = *continuity || cfg.stats.wilson_continuity;
            let report = match (input, counts) {
                (_, Some(c)) if c.len() != 4 => return Err(invalid("--counts takes exactly four values: TP,P,TN,N")),
                (_, Some(c)) => accuracy_from_counts(c[0], c[1], c[2], c[3], cc).map_err(invalid)?,
                (Some(p), None) => {
                    let t = Table::read(p)?;
                    let mut predicted = Vec::with_capacity(t.len());
                    let mut reference = Vec::with_capacity(t.len());
                    for i in 0..t.len() {
                        predicted.push(tables::benefit(&t, i, "predicted")?);
                        let r = tables::benefit(&t, i, "reference")?;
                        if r == wbdwi_core::response::Benefit::Indeterminate {
                            return Err(invalid(format!("{} row {}: reference cannot be indeterminate", p.display(), i + 2)));
                        }
                        reference.push(r == wbdwi_core::response::Benefit::Benefit);
                    }
                    diagnostic_accuracy(&predicted, &reference, cfg.response.review_policy, cc).map_err(invalid)?
                }
                (None, None) => return Err(invalid("give a CSV file or --counts TP,P,TN,N")),
            };
            ctx.emit(&report, "accuracy.json")
        }
        Command::OptimizeCutoffs { input, iterations } => {
            let t = Table::read(input)?;
            let cases = (0..t.len())
                .map(|i| Ok(CutoffCase { delta: tables::delta_row(&t, i)?, reference: tables::outcome(&t, i, "reference")? }))
                .collect::<Result<Vec<_>, CliError>>()?;
            let iters = iterations.unwrap_or(cfg.stats.cutoff_iterations);
            let res = optimize_cutoffs(&cases, &cfg.stats.cutoff_grid, &cfg.response.cutoffs, iters, cfg.stats.seed).map_err(invalid)?;
            ctx.emit(&res, "cutoffs.json")
        }
        Command::Phantom { spec } => {
            let out = ctx.out_dir()?.to_path_buf();
            let v = read_json(spec)?;
            if v.get("plan").is_some() {
                let mut cs: CohortSpec = serde_json::from_value(v).map_err(|e| invalid(format!("{}: {e}", spec.display())))?;
                if let Some(s) = cli.global.seed {
                    cs.seed = s;
                }
                let pairs = generate_cohort(&cs).map_err(invalid)?;
                let index = write_cohort(&pairs, &out).map_err(|e| CliError::Io(std::io::Error::other(e)))?;
                ctx.emit(&index, "cohort.json")
            } else {
                let mut ps: PhantomSpec = serde_json::from_value(v).map_err(|e| invalid(format!("{}: {e}", spec.display())))?;
                if let Some(s) = cli.global.seed {
                    ps.seed = s;
                }
                let (bundle, truth) = generate_phantom(&ps).map_err(invalid)?;
                write_phantom(&bundle, &truth, &out).map_err(|e| CliError::Io(std::io::Error::other(e)))?;
                println!("{}", serde_json::to_string_pretty(&truth.summary).map_err(invalid)?);
                Ok(())
            }
        }
        Command::ReportRender { report } => {
            let v = read_json(report)?;
            let md = if v.get("pre").is_some() {
                render_markdown(&serde_json::from_value::<StructuredReport>(v).map_err(invalid)?)
            } else {
                render_single_markdown(&serde_json::from_value::<SingleReport>(v).map_err(invalid)?)
            };
            match &ctx.out {
                Some(d) => {
                    std::fs::create_dir_all(d)?;
                    std::fs::write(d.join("report.md"), md)?;
                }
                None => print!("{md}"),
            }
            Ok(())
        }
    }
}
