"""End-to-end check of the Python module on a tiny synthetic dataset.

    pip install maturin
    pip install -e crates/py --no-build-isolation
    python python/smoke_test.py
"""

import json
import math
import sys
import tempfile
from pathlib import Path

import covresp


def main() -> int:
    with tempfile.TemporaryDirectory() as tmp:
        tmp = Path(tmp)
        data = tmp / "data"
        manifest = covresp.generate(str(data), n_plays=24, seed=3, p_double_coverage=0.2)
        assert manifest["n_plays"] == 24, manifest
        first = json.loads((data / "plays.jsonl").read_text().splitlines()[0])
        play_id = first["play_id"]

        small = dict(desk=True, epochs=2, d_model=8, heads=2, layers=1, augmentation=False)
        ckpt = tmp / "ckpt"
        for task in ("coverage", "matchup", "target"):
            metrics = covresp.train_model(str(data), task, str(ckpt), **small)
            assert len(metrics) == 2 and math.isfinite(metrics[0]["train_loss"]), metrics
            assert (ckpt / f"{task}.ckpt").exists()

        rep = covresp.evaluate(str(ckpt / "coverage.ckpt"), str(data))
        assert rep["task"] == "coverage" and len(rep["rows"]) == 11
        for row in rep["rows"]:
            assert 0.0 <= row["assigned"]["accuracy"] <= 1.0

        tgt = covresp.evaluate(str(ckpt / "target.ckpt"), str(data), matchup_checkpoint=str(ckpt / "matchup.ckpt"))
        t = tgt["target"]
        print(
            f"target: nearest {t['baseline_accuracy']:.3f}  raw {t['raw_accuracy']:.3f}  "
            f"post-processed {t['postprocessed_accuracy']:.3f}  ({t['n_plays']} plays)"
        )

        frames = covresp.predict(
            str(data), play_id, coverage=str(ckpt / "coverage.ckpt"), matchup=str(ckpt / "matchup.ckpt"), stride=5
        )
        assert frames, "no frames predicted"
        for f in frames:
            for probs in f["coverage"]:
                assert abs(sum(probs) - 1.0) < 1e-4
            assert "target" not in f

        try:
            covresp.generate(str(tmp / "bad"), n_plays=2, p_disguise=1.5)
        except ValueError as e:
            assert "p_disguise" in str(e)
        else:
            raise AssertionError("invalid config accepted")

        assert covresp.main(["gen", "--out", str(tmp / "cli"), "--n-plays", "2"]) == 0
        assert covresp.main(["gen", "--out", str(tmp / "cli"), "--p-disguise", "2"]) == 1

    print(f"covresp {covresp.__version__}: smoke test passed")
    return 0


if __name__ == "__main__":
    sys.exit(main())
