//! Quantitative whole-body diffusion MRI analysis: ADC fitting, signal
//! normalization, bone-lesion segmentation and post-processing, tumour-burden
//! biomarkers, response classification, and the statistics used to validate
//! them. A synthetic phantom generator provides ground truth for every stage.

pub mod adc;
pub mod biomarkers;
pub mod io;
pub mod model;
pub mod norm;
pub mod phantom;
pub mod pipeline;
pub mod numfmt;
pub mod postprocess;
pub mod response;
pub mod seg;
pub mod stats;
