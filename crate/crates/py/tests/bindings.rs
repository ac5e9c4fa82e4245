use pyo3::prelude::*;
use wbdwi::wbdwi;
use std::ffi::CString;
use std::sync::Once;

fn run(code: &str) {
    static INIT: Once = Once::new();
    INIT.call_once(|| pyo3::append_to_inittab!(wbdwi));
    Python::attach(|py| {
        let code = CString::new(code).unwrap();
        if let Err(e) = py.run(&code, None, None) {
            e.print(py);
            panic!("python code failed");
        }
    });
}

#[test]
fn module_exposes_statistics() {
    run(r#"
import wbdwi
assert abs(wbdwi.log_tdv(55.0) - 4.0073) < 1e-4
lo, hi = wbdwi.wilson_interval(0, 10)
assert lo == 0.0 and abs(hi - 0.2775) < 1e-4
assert wbdwi.classify_response(60.0, 30.0)["outcome"] == "Review"
assert wbdwi.classify_response(40.0, 0.0)["outcome"] == "Stable"
"#);
}

#[test]
fn errors_surface_as_module_exception() {
    run(r#"
import wbdwi
for call in (lambda: wbdwi.wilson_interval(5, 3), lambda: wbdwi.Study.load("/nonexistent"), lambda: wbdwi.SegWeights.from_bytes(b"nope")):
    try:
        call()
    except wbdwi.WbdwiError:
        pass
    else:
        raise AssertionError("no error raised")
"#);
}

#[test]
fn volumes_and_studies() {
    run(r#"
import wbdwi
v = wbdwi.Volume([2, 2, 1], [1.0, 1.0, 2.0], [0.0, 1.0, 2.0, 3.0])
assert v.get(1, 1, 0) == 3.0 and v.count_nonzero() == 3
try:
    v.get(2, 0, 0)
except IndexError:
    pass
study, truth = wbdwi.phantom({"dims": [24, 20, 32], "spacing": [8.0, 8.0, 10.0]})
assert study.b_values == [50.0, 600.0, 900.0]
assert study.volume(0).dims == [24, 20, 32]
frag = wbdwi.process(study)
assert frag["error"] is None and frag["biomarkers"] is not None
"#);
}
