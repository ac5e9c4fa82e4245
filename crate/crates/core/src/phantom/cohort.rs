//! Pre/post phantom pairs with planted response labels.
//!
//! Responders either shrink every lesion (radius x0.7, about -65% volume)
//! or keep their size and raise lesion ADC by 35%. Progressors grow every
//! lesion (radius x1.25) and gain as many new lesions as they had. Stable
//! cases jitter radius and ADC by at most 2%.

use super::{anatomy, bone_centers, generate_phantom, write_phantom, LesionSpec, PhantomError, PhantomSpec, PhantomTruth};
use crate::model::{RegionCode, StudyBundle, TimepointTag};
use crate::response::Outcome;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CohortPlan {
    pub responders: usize,
    pub stable: usize,
    pub progressors: usize,
}

impl CohortPlan {
    pub fn total(&self) -> usize {
        self.responders + self.stable + self.progressors
    }

    /// Planted label of patient `i`, cycling responder, stable, progressor
    /// until each quota is used.
    pub fn labels(&self) -> Vec<Outcome> {
        let mut left = [self.responders, self.stable, self.progressors];
        let kinds = [Outcome::Responder, Outcome::Stable, Outcome::Progression];
        let mut out = Vec::with_capacity(self.total());
        while out.len() < self.total() {
            for k in 0..3 {
                if left[k] > 0 {
                    left[k] -= 1;
                    out.push(kinds[k]);
                }
            }
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CohortSpec {
    pub plan: CohortPlan,
    /// Grid, b-values, tissues, and noise shared by every study. Its lesion
    /// list, gains, and seed are replaced per patient.
    pub template: PhantomSpec,
    pub lesions_per_patient: [usize; 2],
    pub lesion_radius_mm: [f64; 2],
    pub station_gain_range: [f64; 2],
    pub scan_gain_range: [f64; 2],
    pub seed: u64,
}

impl Default for CohortSpec {
    fn default() -> Self {
        CohortSpec {
            plan: CohortPlan::default(),
            template: PhantomSpec { noise_sigma: 0.02, ..PhantomSpec::default() },
            lesions_per_patient: [3, 5],
            lesion_radius_mm: [11.0, 15.0],
            station_gain_range: [0.8, 1.5],
            scan_gain_range: [0.7, 1.6],
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PhantomCase {
    pub spec: PhantomSpec,
    pub bundle: StudyBundle,
    pub truth: PhantomTruth,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CohortPair {
    pub id: String,
    pub label: Outcome,
    pub pre: PhantomCase,
    pub post: PhantomCase,
}

/// Regions that can host a lesion of the default size.
const HOSTS: [RegionCode; 5] = [
    RegionCode::Limbs,
    RegionCode::Pelvis,
    RegionCode::LumbarSpine,
    RegionCode::ThoracicSpine,
    RegionCode::CervicalSpine,
];

fn random_lesion(rng: &mut ChaCha8Rng, hosts: &[Vec<[f64; 3]>], radius: [f64; 2]) -> LesionSpec {
    let pool = &hosts[rng.random_range(0..hosts.len())];
    let c = pool[rng.random_range(0..pool.len())];
    let r = rng.random_range(radius[0]..=radius[1]);
    LesionSpec { center_mm: c, radii_mm: [r; 3], s0: None, adc: None }
}

fn build_pair(cs: &CohortSpec, index: usize, label: Outcome, hosts: &[Vec<[f64; 3]>]) -> Result<CohortPair, PhantomError> {
    let mut rng = ChaCha8Rng::seed_from_u64(cs.seed);
    rng.set_stream(index as u64);
    let t = &cs.template;
    let n = rng.random_range(cs.lesions_per_patient[0]..=cs.lesions_per_patient[1].max(cs.lesions_per_patient[0]));
    let lesion_adc = t.tissues.lesion.adc;
    let mut pre_lesions: Vec<LesionSpec> = (0..n)
        .map(|_| {
            let mut l = random_lesion(&mut rng, hosts, cs.lesion_radius_mm);
            l.adc = Some(if lesion_adc[1] > lesion_adc[0] { rng.random_range(lesion_adc[0]..=lesion_adc[1]) } else { lesion_adc[0] });
            l
        })
        .collect();
    pre_lesions.sort_by(|a, b| a.center_mm[2].total_cmp(&b.center_mm[2]));
    let shrink = rng.random_bool(0.5);
    let mut post_lesions: Vec<LesionSpec> = pre_lesions
        .iter()
        .map(|l| {
            let mut p = l.clone();
            let adc = l.adc.expect("set above");
            let (rs, adcs) = match label {
                Outcome::Responder if shrink => (0.7, 1.0),
                Outcome::Responder => (rng.random_range(0.98..=1.02), 1.35),
                Outcome::Progression => (1.25, 1.0),
                _ => (rng.random_range(0.98..=1.02), rng.random_range(0.98..=1.02)),
            };
            p.radii_mm = l.radii_mm.map(|r| r * rs);
            p.adc = Some(adc * adcs);
            p
        })
        .collect();
    if label == Outcome::Progression {
        for _ in 0..n {
            let mut l = random_lesion(&mut rng, hosts, cs.lesion_radius_mm);
            l.adc = pre_lesions[0].adc;
            post_lesions.push(l);
        }
    }
    let mut gains = |k: usize| -> Vec<f64> { (0..k).map(|_| rng.random_range(cs.station_gain_range[0]..=cs.station_gain_range[1])).collect() };
    let (g_pre, g_post) = (gains(t.stations), gains(t.stations));
    let scan_pre = rng.random_range(cs.scan_gain_range[0]..=cs.scan_gain_range[1]);
    let scan_post = rng.random_range(cs.scan_gain_range[0]..=cs.scan_gain_range[1]);
    let seed_pre: u64 = rng.random();
    let seed_post: u64 = rng.random();
    let make = |lesions, station_gains, scan_gain, seed, timepoint| -> Result<PhantomCase, PhantomError> {
        let spec = PhantomSpec { lesions, station_gains, scan_gain, seed, timepoint, ..t.clone() };
        let (bundle, truth) = generate_phantom(&spec)?;
        Ok(PhantomCase { spec, bundle, truth })
    };
    Ok(CohortPair {
        id: format!("patient_{index:03}"),
        label,
        pre: make(pre_lesions, g_pre, scan_pre, seed_pre, TimepointTag::Pre)?,
        post: make(post_lesions, g_post, scan_post, seed_post, TimepointTag::Post)?,
    })
}

/// Generates every pair of the plan; patients are independent and built in
/// parallel from per-patient RNG streams.
pub fn generate_cohort(cs: &CohortSpec) -> Result<Vec<CohortPair>, PhantomError> {
    let meta = cs.template.validate()?;
    let anat = anatomy(&meta);
    let hosts: Vec<Vec<[f64; 3]>> = HOSTS.iter().map(|&r| bone_centers(&anat, r)).filter(|v| !v.is_empty()).collect();
    if hosts.is_empty() && cs.plan.total() > 0 {
        return Err(PhantomError::Invalid("grid too small to hold any bone".into()));
    }
    cs.plan
        .labels()
        .into_par_iter()
        .enumerate()
        .map(|(i, label)| build_pair(cs, i, label, &hosts))
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CohortIndexEntry {
    pub id: String,
    pub label: Outcome,
    pub pre: String,
    pub post: String,
}

/// Writes `<id>/pre`, `<id>/post` study directories and `cohort.json`.
pub fn write_cohort(pairs: &[CohortPair], dir: impl AsRef<Path>) -> Result<Vec<CohortIndexEntry>, PhantomError> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    let mut index = Vec::new();
    for p in pairs {
        let pre = format!("{}/pre", p.id);
        let post = format!("{}/post", p.id);
        write_phantom(&p.pre.bundle, &p.pre.truth, dir.join(&pre))?;
        write_phantom(&p.post.bundle, &p.post.truth, dir.join(&post))?;
        index.push(CohortIndexEntry { id: p.id.clone(), label: p.label, pre, post });
    }
    std::fs::write(dir.join("cohort.json"), serde_json::to_string_pretty(&index)?)?;
    Ok(index)
}
