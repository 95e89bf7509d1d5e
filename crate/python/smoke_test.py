"""Smoke test for the Python bindings.

Build the extension first, e.g. `maturin develop -m crates/py/Cargo.toml --features extension-module`,
or `cargo build -p advrep-py --release --features extension-module` and copy
`target/release/libadvrep_py.so` to `advrep.so` somewhere on PYTHONPATH.
"""

import sys
import tempfile
from pathlib import Path

import advrep


def main() -> int:
    with tempfile.TemporaryDirectory() as tmp:
        tmp = Path(tmp)
        manifest = advrep.generate_corpus(str(tmp / "corpus"), speakers_per_class=2, utterances_per_speaker=2, duration_s=1.0)
        info = advrep.featurize(manifest, str(tmp / "features"))
        print("featurized:", info)
        rows = advrep.load_chunks(str(tmp / "features"))

        net = advrep.Network(speakers=2, pd_head=True, feature_maps=[2, 4, 8, 16], seed=1)
        z = net.embed([r[2] for r in rows])
        assert len(z) == len(rows) and all(len(v) == 128 for v in z)
        print("reconstruction loss:", round(net.reconstruction_loss([r[2] for r in rows]), 4))

        scores = [sum(v) for v in z]
        labels = [r[1] == 1 for r in rows]
        print("AUC of a raw bottleneck sum:", round(advrep.roc_auc(scores, labels), 3))

        sched = advrep.LrSchedule()
        halvings = []
        for epoch in range(30):
            _, halved, stop = sched.observe(1.0)
            if halved:
                halvings.append(epoch)
            if stop:
                break
        assert halvings == [5, 10, 15, 20], halvings

        speakers = [(f"nt{i}", "nt") for i in range(5)] + [(f"pd{i}", "pd") for i in range(5)]
        print("folds:", advrep.make_folds(speakers, 5, 0))

        worst = max(err for _, err, _ in advrep.gradcheck(trials=17))
        print(f"gradient check worst relative error: {worst:.2e}")
        assert worst < 1e-4

        code = advrep.run_cli(["synth", "--out", str(tmp / "cli")])
        assert code == 0, code
    print("ok")
    return 0


if __name__ == "__main__":
    sys.exit(main())
