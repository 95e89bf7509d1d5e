use advrep_py::advrep_module;
use pyo3::prelude::*;
use pyo3::types::{PyDict, PyModule};

fn with_module(code: &std::ffi::CStr) {
    Python::attach(|py| {
        let m = PyModule::new(py, "advrep").unwrap();
        advrep_module(&m).unwrap();
        let locals = PyDict::new(py);
        locals.set_item("advrep", m).unwrap();
        if let Err(e) = py.run(code, Some(&locals), None) {
            e.print(py);
            panic!("python snippet failed");
        }
    });
}

#[test]
fn metrics_and_schedule_round_trip() {
    with_module(
        cr#"
assert advrep.roc_auc([0.1, 0.9, 0.5], [False, True, True]) == 1.0
assert advrep.accuracy([1, 0], [1, 1]) == 50.0
c, s = advrep.soft_vote([[0.7, 0.3], [0.2, 0.8], [0.3, 0.7]])
assert c == 1 and abs(s - 0.6) < 1e-12
s = advrep.LrSchedule()
halved = []
for e in range(30):
    lr, h, stop = s.observe(1.0)
    if h:
        halved.append(e)
    if stop:
        break
assert halved == [5, 10, 15, 20] and e == 20 and lr < 0.002, (halved, e, lr)
try:
    advrep.roc_auc([0.5], [True])
    raise SystemExit("expected ValueError")
except ValueError:
    pass
"#,
    );
}

#[test]
fn folds_are_stratified() {
    with_module(
        cr#"
spk = [(f"nt{i}", "nt") for i in range(6)] + [(f"pd{i}", "pd") for i in range(6)]
folds = advrep.make_folds(spk, 3, 1)
assert len(folds) == 3
assert sorted(sum(folds, [])) == sorted(s for s, _ in spk)
assert all(sum(x.startswith("pd") for x in f) == 2 for f in folds)
"#,
    );
}

#[test]
fn network_embeds_corpus_chunks() {
    let dir = tempfile::tempdir().unwrap();
    let code = format!(
        r#"
import os
m = advrep.generate_corpus(r"{d}/c", speakers_per_class=1, utterances_per_speaker=1, duration_s=0.6)
info = advrep.featurize(m, r"{d}/f")
assert info["speakers"] == 2 and info["chunks"] == 2, info
rows = advrep.load_chunks(r"{d}/f")
net = advrep.Network(speakers=3, pd_head=True, feature_maps=[1, 2, 4, 8])
z = net.embed([r[2] for r in rows])
assert len(z) == 2 and len(z[0]) == 128
assert net.parameter_count("pd") == 128 * 64 + 64 + 64 * 2 + 2
net.save(r"{d}/n.ckpt")
assert advrep.Network.load(r"{d}/n.ckpt").embed([rows[0][2]]) == z[:1]
assert net.reconstruction_loss([r[2] for r in rows]) > 0
mel = advrep.log_mel([0.0] * 8000)
assert len(mel) == 126 and len(mel[0]) == 125
"#,
        d = dir.path().display()
    );
    with_module(&std::ffi::CString::new(code).unwrap());
}
