"""Smoke test for the Python bindings.

Build the extension first (see README), then run `python3 python/smoke_test.py`.
"""

import json
import math
import os
import sys

sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

import numpy as np

import ambiforge as af


def main():
    d = af.Direction.from_degrees(70.0, 40.0)
    y = np.array(af.sh_vector(2, d))
    assert y.shape == (9,)
    assert abs(y[0] - 1.0 / math.sqrt(4 * math.pi)) < 1e-12

    signs = af.mirror_parity_signs(2)
    ym = np.array(af.sh_vector(2, d.mirror()))
    assert np.allclose(ym, np.array(signs) * y, atol=1e-12)

    grid = af.grid_directions("design-50-1296")
    assert len(grid) == 1296
    Y = np.array([af.sh_vector(2, g) for g in grid])
    assert np.abs(4 * math.pi / 1296 * Y.T @ Y - np.eye(9)).max() < 1e-8

    rng = np.random.default_rng(0)
    x = rng.standard_normal((2, 4000))
    stft = af.Stft()
    back = np.array(stft.inverse(stft.forward(x.tolist(), 16000), 16000, x.shape[1]))
    assert np.abs(back - x).max() < 1e-9

    scene = {
        "roomDims": [6.0, 5.0, 4.0],
        "rt60": 0.3,
        "arrayCenter": [3.0, 2.5, 2.0],
        "sources": [{"direction": {"thetaDeg": 70.0, "phiDeg": 40.0}, "distance": 1.0}],
        "seed": 3,
        "duration": 0.5,
        "ismOrder": 0,
    }
    out = af.simulate_scene(json.dumps(scene))
    mics = np.array(out["mics"])
    gt = np.array(out["gt_soa"])
    assert mics.shape[0] == 8 and gt.shape[0] == 9
    meta = json.loads(out["meta"])
    assert meta["seed"] == 3

    b = af.encode(out["mics"], out["sample_rate"], method="ls2", halfspace="upper")
    est = af.estimate_doa(b, out["sample_rate"])
    az, el = af.localization_error(est, d)
    assert az <= 5.0, (az, el)

    report = af.evaluate_pair(out["gt_soa"], out["gt_soa"], out["sample_rate"], truth=d)
    assert abs(report["si_snr"] - 80.0) < 1e-9
    assert report["lsd"] == 0.0

    try:
        af.estimate_doa(np.zeros((9, 100)).tolist(), 16000)
    except ValueError:
        pass
    else:
        raise AssertionError("silent input should raise")

    print(f"smoke test ok: LS-II estimate {est!r}, azimuth error {az:.2f} deg")


if __name__ == "__main__":
    main()
