//! Response Evaluation Criteria: percentage changes, the decision matrix,
//! and the Benefit / No-Benefit mapping.

use crate::biomarkers::BiomarkerRecord;
use crate::numfmt;
use serde::{Deserialize, Serialize};

/// `100 * (post - pre) / pre`, or `None` when `pre <= 0`.
pub fn percent_change(pre: f64, post: f64) -> Option<f64> {
    (pre > 0.0).then(|| 100.0 * (post - pre) / pre)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeltaRecord {
    #[serde(with = "numfmt::opt_real")]
    pub delta_tdv_pct: Option<f64>,
    #[serde(with = "numfmt::opt_real")]
    pub delta_median_gadc_pct: Option<f64>,
    pub delta_roi_gt_1ml: i64,
    pub delta_roi_gt_3ml: i64,
}

impl DeltaRecord {
    pub fn from_records(pre: &BiomarkerRecord, post: &BiomarkerRecord) -> Self {
        let (a, b) = (pre.global(), post.global());
        let med = |r: &crate::biomarkers::RegionBiomarkers| r.gadc.as_ref().map(|g| g.median);
        let delta_median_gadc_pct = match (med(a), med(b)) {
            (Some(p), Some(q)) => percent_change(p, q),
            _ => None,
        };
        DeltaRecord {
            delta_tdv_pct: percent_change(a.tdv_ml, b.tdv_ml),
            delta_median_gadc_pct,
            delta_roi_gt_1ml: b.roi_count_gt_1ml as i64 - a.roi_count_gt_1ml as i64,
            delta_roi_gt_3ml: b.roi_count_gt_3ml as i64 - a.roi_count_gt_3ml as i64,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Cutoffs {
    /// ΔTDV strictly above this is a significant increase (%).
    pub tdv_increase: f64,
    /// ΔTDV at or below this is a significant decrease (%).
    pub tdv_decrease: f64,
    /// Δmedian gADC at or above this is a significant increase (%).
    pub gadc_increase: f64,
    pub roi_gt_1ml_increase: i64,
    pub roi_gt_3ml_increase: i64,
}

impl Default for Cutoffs {
    fn default() -> Self {
        Cutoffs { tdv_increase: 40.0, tdv_decrease: -40.0, gadc_increase: 25.0, roi_gt_1ml_increase: 10, roi_gt_3ml_increase: 6 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum TdvCategory {
    SigIncrease,
    NoChange,
    SigDecrease,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum GadcCategory {
    SigIncrease,
    NotIncrease,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Outcome {
    Responder,
    Stable,
    Progression,
    Review,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Benefit {
    Benefit,
    NoBenefit,
    Indeterminate,
}

impl Outcome {
    pub fn benefit(self) -> Benefit {
        match self {
            Outcome::Responder | Outcome::Stable => Benefit::Benefit,
            Outcome::Progression => Benefit::NoBenefit,
            Outcome::Review => Benefit::Indeterminate,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecOutcome {
    pub tdv_category: Option<TdvCategory>,
    pub gadc_category: Option<GadcCategory>,
    pub outcome: Outcome,
    pub benefit: Benefit,
    pub rationale: String,
}

/// Category plus a flag set when ROI growth overrides a significant decrease.
pub fn categorize_tdv(delta_tdv_pct: f64, delta_roi_gt_1ml: i64, delta_roi_gt_3ml: i64, cutoffs: &Cutoffs) -> (TdvCategory, bool) {
    let roi_growth = delta_roi_gt_1ml >= cutoffs.roi_gt_1ml_increase || delta_roi_gt_3ml >= cutoffs.roi_gt_3ml_increase;
    if delta_tdv_pct > cutoffs.tdv_increase || roi_growth {
        (TdvCategory::SigIncrease, roi_growth && delta_tdv_pct <= cutoffs.tdv_decrease)
    } else if delta_tdv_pct <= cutoffs.tdv_decrease {
        (TdvCategory::SigDecrease, false)
    } else {
        (TdvCategory::NoChange, false)
    }
}

pub fn categorize_gadc(delta_median_gadc_pct: f64, cutoffs: &Cutoffs) -> GadcCategory {
    if delta_median_gadc_pct >= cutoffs.gadc_increase {
        GadcCategory::SigIncrease
    } else {
        GadcCategory::NotIncrease
    }
}

pub fn rec_outcome(tdv: TdvCategory, gadc: GadcCategory) -> Outcome {
    use GadcCategory as G;
    use TdvCategory as T;
    match (tdv, gadc) {
        (T::SigIncrease, G::SigIncrease) => Outcome::Review,
        (T::SigIncrease, G::NotIncrease) => Outcome::Progression,
        (T::NoChange, G::SigIncrease) => Outcome::Responder,
        (T::NoChange, G::NotIncrease) => Outcome::Stable,
        (T::SigDecrease, _) => Outcome::Responder,
    }
}

fn tdv_row(c: TdvCategory) -> &'static str {
    match c {
        TdvCategory::SigIncrease => "TDV significant increase",
        TdvCategory::NoChange => "TDV no change",
        TdvCategory::SigDecrease => "TDV significant decrease",
    }
}

fn gadc_row(c: GadcCategory, delta: f64) -> &'static str {
    match c {
        GadcCategory::SigIncrease => "median gADC significant increase",
        GadcCategory::NotIncrease if delta < 0.0 => "median gADC decrease",
        GadcCategory::NotIncrease => "median gADC no change",
    }
}

fn outcome_name(o: Outcome) -> &'static str {
    match o {
        Outcome::Responder => "Benefit - Responder",
        Outcome::Stable => "Benefit - Stable",
        Outcome::Progression => "No Benefit - Progression",
        Outcome::Review => "Review - check auto delineations or date of baseline MRI",
    }
}

/// Full classification of one pre/post delta.
pub fn rec_classify(delta: &DeltaRecord, cutoffs: &Cutoffs) -> RecOutcome {
    let (Some(dt), Some(dg)) = (delta.delta_tdv_pct, delta.delta_median_gadc_pct) else {
        return RecOutcome {
            tdv_category: None,
            gadc_category: None,
            outcome: Outcome::Review,
            benefit: Benefit::Indeterminate,
            rationale: "undefined baseline".into(),
        };
    };
    let (tdv, conflict) = categorize_tdv(dt, delta.delta_roi_gt_1ml, delta.delta_roi_gt_3ml, cutoffs);
    let gadc = categorize_gadc(dg, cutoffs);
    let outcome = rec_outcome(tdv, gadc);
    let mut rationale = format!("{} x {} -> {}", tdv_row(tdv), gadc_row(gadc, dg), outcome_name(outcome));
    if conflict {
        rationale.push_str("; ROI count growth despite TDV decrease, review delineations");
    }
    RecOutcome { tdv_category: Some(tdv), gadc_category: Some(gadc), outcome, benefit: outcome.benefit(), rationale }
}

/// How Review outcomes enter binary Benefit / No-Benefit metrics.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReviewPolicy {
    #[default]
    Exclude,
    AsNoBenefit,
}

impl ReviewPolicy {
    /// `Some(true)` for Benefit, `Some(false)` for No Benefit, `None` if dropped.
    pub fn binary(self, benefit: Benefit) -> Option<bool> {
        match (benefit, self) {
            (Benefit::Benefit, _) => Some(true),
            (Benefit::NoBenefit, _) => Some(false),
            (Benefit::Indeterminate, ReviewPolicy::Exclude) => None,
            (Benefit::Indeterminate, ReviewPolicy::AsNoBenefit) => Some(false),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn delta(dt: f64, dg: f64) -> DeltaRecord {
        DeltaRecord { delta_tdv_pct: Some(dt), delta_median_gadc_pct: Some(dg), delta_roi_gt_1ml: 0, delta_roi_gt_3ml: 0 }
    }

    #[test]
    fn percent_changes() {
        assert_eq!(percent_change(100.0, 60.0), Some(-40.0));
        assert_eq!(percent_change(3.5, 3.5), Some(0.0));
        assert!((percent_change(164.0, 155.0).unwrap() + 5.49).abs() < 0.005);
        assert_eq!(percent_change(0.0, 5.0), None);
    }

    #[test]
    fn tdv_boundaries() {
        let c = Cutoffs::default();
        assert_eq!(categorize_tdv(41.0, 0, 0, &c).0, TdvCategory::SigIncrease);
        assert_eq!(categorize_tdv(40.0, 0, 0, &c).0, TdvCategory::NoChange);
        assert_eq!(categorize_tdv(-40.0, 0, 0, &c).0, TdvCategory::SigDecrease);
        assert_eq!(categorize_tdv(-10.0, 0, 6, &c).0, TdvCategory::SigIncrease);
        assert_eq!(categorize_tdv(-10.0, 10, 0, &c).0, TdvCategory::SigIncrease);
        assert_eq!(categorize_tdv(-10.0, 9, 5, &c).0, TdvCategory::NoChange);
        assert_eq!(categorize_tdv(-50.0, 10, 0, &c), (TdvCategory::SigIncrease, true));
    }

    #[test]
    fn gadc_boundaries() {
        let c = Cutoffs::default();
        assert_eq!(categorize_gadc(25.0, &c), GadcCategory::SigIncrease);
        assert_eq!(categorize_gadc(24.9, &c), GadcCategory::NotIncrease);
        assert_eq!(categorize_gadc(-30.0, &c), GadcCategory::NotIncrease);
    }

    #[test]
    fn matrix_examples() {
        let c = Cutoffs::default();
        let r = rec_classify(&delta(-50.0, 30.0), &c);
        assert_eq!((r.outcome, r.benefit), (Outcome::Responder, Benefit::Benefit));
        let r = rec_classify(&delta(50.0, 0.0), &c);
        assert_eq!((r.outcome, r.benefit), (Outcome::Progression, Benefit::NoBenefit));
        let r = rec_classify(&delta(0.0, 0.0), &c);
        assert_eq!((r.outcome, r.benefit), (Outcome::Stable, Benefit::Benefit));
        let r = rec_classify(&delta(50.0, 30.0), &c);
        assert_eq!((r.outcome, r.benefit), (Outcome::Review, Benefit::Indeterminate));
        let r = rec_classify(&delta(0.0, -10.0), &c);
        assert!(r.rationale.contains("median gADC decrease"));
    }

    #[test]
    fn undefined_baseline() {
        let d = DeltaRecord { delta_tdv_pct: None, delta_median_gadc_pct: Some(1.0), delta_roi_gt_1ml: 0, delta_roi_gt_3ml: 0 };
        let r = rec_classify(&d, &Cutoffs::default());
        assert_eq!(r.outcome, Outcome::Review);
        assert_eq!(r.rationale, "undefined baseline");
    }

    #[test]
    fn review_policy() {
        assert_eq!(ReviewPolicy::Exclude.binary(Benefit::Indeterminate), None);
        assert_eq!(ReviewPolicy::AsNoBenefit.binary(Benefit::Indeterminate), Some(false));
        assert_eq!(ReviewPolicy::Exclude.binary(Benefit::Benefit), Some(true));
    }
}
