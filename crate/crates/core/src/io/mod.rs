//! File formats: NIfTI-1 volumes, the study sidecar, and station assembly.

pub mod nifti;
pub mod sidecar;

pub use nifti::{read_nifti, write_label_nifti, write_nifti, NiftiError};
pub use sidecar::{assemble_stations, load_study, write_study, IngestError, SidecarManifest, StudySource};
