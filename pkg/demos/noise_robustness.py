"""Shot-noise sweep through the experiment harness.

Trains a small direct regressor, then runs the same solve across a grid
of noise levels alpha (0 = clean). Measurements are corrupted with the
Poisson photon model; alpha scales the noise by shrinking the simulated
photon budget. Reads the rows CSV the harness writes and prints MSE and
measured SNR per alpha.
"""

import csv
import io
import tempfile
from pathlib import Path

from phasekit.harness import cmd_sweep_noise, cmd_train

ALPHAS = [0.0, 1.0, 2.0, 3.0, 5.0]
SEED = 0


def summaries(path):
    lines = [ln for ln in Path(path).read_text().splitlines()
             if ln and not ln.startswith("#")]
    rows = list(csv.DictReader(io.StringIO("\n".join(lines))))
    return [r for r in rows if r["sample_index"] == "-1"]


def main():
    scratch = Path(tempfile.mkdtemp(prefix="phasekit_noise_"))
    weights = scratch / "e2e.pka"
    descriptor = {"kind": "fourier2d", "height": 28, "width": 28}

    print("training a 256-wide regressor on 1024 synthetic digits ...")
    cmd_train({
        "dataset": "synthetic", "method": "e2e", "operator": descriptor,
        "seed": SEED, "out": str(weights),
        "train": {"epochs": 30, "hidden": 256, "limit": 1024},
    })

    out = cmd_sweep_noise({
        "dataset": "synthetic", "method": "e2e", "operator": descriptor,
        "seed": SEED, "limit": 32, "weights": str(weights),
        "noise": {"alphas": ALPHAS},
        "out": str(scratch / "noise.csv"),
    })

    print(f"\nrows CSV: {out}")
    print(f"{'alpha':>6} {'mse':>8} {'snr':>6}")
    for row in summaries(out):
        snr = f"{float(row['snr']):.2f}" if row["snr"] else "-"
        print(f"{float(row['alpha']):>6.1f} {float(row['mse']):>8.4f} {snr:>6}")
    print("\nerror grows with alpha; snr near 3 at alpha=3 matches the "
          "photon model's calibration")


if __name__ == "__main__":
    main()
