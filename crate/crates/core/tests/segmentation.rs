use wbdwi_core::model::{GridMeta, ScalarVolume};
use wbdwi_core::seg::weights::SegModelWeights;
use wbdwi_core::seg::{segment, segment_cnn, Backend, SegConfig};

fn inputs() -> (ScalarVolume, ScalarVolume) {
    let meta = GridMeta::new([20, 18, 12], [2.0, 2.0, 4.0], [0.0; 3]).unwrap();
    let skel = ScalarVolume::from_fn(meta, |x, y, _| if (4..16).contains(&x) && (3..14).contains(&y) { 0.95 } else { 0.02 }).unwrap();
    let b900 = ScalarVolume::from_fn(meta, |x, y, z| 500.0 + 300.0 * ((x + 2 * y + 3 * z) % 11) as f64).unwrap();
    (skel, b900)
}

fn cnn_cfg() -> SegConfig {
    SegConfig { backend: Backend::Cnn, patch_size: [8, 8, 8], inference_spacing_mm: 2.0, ..SegConfig::default() }
}

#[test]
fn cnn_is_deterministic_across_thread_counts() {
    let (skel, b900) = inputs();
    let w = SegModelWeights::random(17);
    let run = |n| {
        rayon::ThreadPoolBuilder::new().num_threads(n).build().unwrap().install(|| segment_cnn(&skel, &b900, &w, &cnn_cfg()).unwrap())
    };
    let a = run(1);
    assert_eq!(a.probability, run(4).probability);
    assert!(a.probability.data().iter().all(|p| (0.0..=1.0).contains(p)));
}

#[test]
fn zero_weights_give_half_probability() {
    let (skel, b900) = inputs();
    let seg = segment_cnn(&skel, &b900, &SegModelWeights::zeros(), &cnn_cfg()).unwrap();
    assert!(seg.probability.data().iter().all(|&p| (p - 0.5).abs() < 1e-6));
}

#[test]
fn empty_skeleton_short_circuits() {
    let (skel, b900) = inputs();
    let empty = ScalarVolume::zeros(*skel.meta());
    let seg = segment_cnn(&empty, &b900, &SegModelWeights::random(1), &cnn_cfg()).unwrap();
    assert!(seg.probability.data().iter().all(|&p| p == 0.0));
    assert_eq!(seg.warnings.len(), 1);
}

#[test]
fn cnn_backend_requires_weights() {
    let (skel, b900) = inputs();
    assert!(segment(&skel, &b900, None, &cnn_cfg()).is_err());
}

#[test]
fn threshold_backend_needs_both_conditions() {
    let (skel, b900) = inputs();
    let seg = segment(&skel, &b900, None, &SegConfig::default()).unwrap();
    for i in 0..skel.meta().len() {
        let expect = skel.data()[i] >= 0.5 && b900.data()[i] >= 2000.0;
        assert_eq!(seg.probability.data()[i] > 0.5, expect);
    }
}
