"""Smoke test for the protoscope_py extension.

Build first:

    cargo build --release -p protoscope-py

then run `python python/smoke_test.py`. The script copies the built shared
library into a temporary directory under the importable module name, so no
install step is needed. If the module is already importable (for example
after `maturin develop`), that copy is used instead.
"""

import importlib
import json
import math
import shutil
import sys
import tempfile
from pathlib import Path

ROOT = Path(__file__).resolve().parent.parent


def import_extension():
    try:
        return importlib.import_module("protoscope_py")
    except ImportError:
        pass
    for profile in ("release", "debug"):
        for name in ("libprotoscope_py.so", "libprotoscope_py.dylib", "protoscope_py.dll"):
            lib = ROOT / "target" / profile / name
            if lib.exists():
                tmp = Path(tempfile.mkdtemp())
                suffix = ".pyd" if name.endswith(".dll") else ".so"
                shutil.copy(lib, tmp / f"protoscope_py{suffix}")
                sys.path.insert(0, str(tmp))
                return importlib.import_module("protoscope_py")
    sys.exit("protoscope_py not built; run `cargo build --release -p protoscope-py`")


def main():
    ps = import_extension()
    print("protoscope_py", ps.__version__)

    spec = ps.radial_ensemble(10, 8, mean_norm=3.0, sigma_par=1.0, sigma_perp=0.1, cone_spread=0.5, seed=2)
    assert json.loads(spec)["kind"] == "radial"
    features, labels = ps.sample(spec, 30, seed=3)
    assert len(features) == 300 and len(features[0]) == 8

    raw = ps.evaluate(features, labels, k_shot=1, episodes=100, seed=1)
    l2 = ps.evaluate(features, labels, k_shot=1, episodes=100, seed=1, transform="l2")
    again = ps.evaluate(features, labels, k_shot=1, episodes=100, seed=1, transform="l2")
    assert l2 == again, "evaluation must be deterministic"
    assert 0.0 <= raw["mean_accuracy"] <= 1.0
    print(f"1-shot accuracy none {raw['mean_accuracy']:.4f}  l2 {l2['mean_accuracy']:.4f}")

    b = ps.binary_bound(features, labels, k_shot=1)
    assert b["bound"] is not None and b["bound"] <= 1.0
    scaled = ps.binary_bound([[100.0 * v for v in row] for row in features], labels, k_shot=1)
    assert math.isclose(b["bound"], scaled["bound"], rel_tol=1e-9)

    hand = json.dumps({
        "kind": "discrete",
        "dim": 2,
        "classes": [
            {"points": [[1.0, 0.0]], "probs": [1.0]},
            {"points": [[-1.0, 0.0]], "probs": [1.0]},
        ],
        "class_weights": [0.5, 0.5],
    })
    assert math.isclose(ps.ensemble_bound(hand, 1), 2.0 / 3.0, rel_tol=1e-12)
    assert ps.ensemble_bound(hand, 1, theorem=2) == 0.5
    assert ps.ensemble_bound(hand, 1, theorem=3, n_way=2) == ps.ensemble_bound(hand, 1)

    gauss = ps.gaussian_ensemble(4, 3, mean_radius=1.5, cov_scale=0.8, seed=5)
    risk, stderr = ps.monte_carlo_risk(gauss, 1, trials=50_000, seed=1)
    bound = ps.ensemble_bound(gauss, 1)
    assert risk <= bound + 3 * stderr
    print(f"binary risk {risk:.4f} +- {stderr:.4f} <= bound {bound:.4f}")

    try:
        ps.evaluate(features, labels, k_shot=1, transform="var-norm")
    except ValueError as e:
        assert "var-norm" in str(e)
    else:
        raise AssertionError("var-norm with one shot must be rejected")

    print("smoke test passed")


if __name__ == "__main__":
    main()
