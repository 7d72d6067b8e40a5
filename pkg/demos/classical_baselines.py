"""Classical projection solvers head to head.

Gerchberg-Saxton, HIO (beta 0.8) and RAAR (beta 0.87) on oversampled
Fourier magnitudes of the same digits, each keeping the best of three
random restarts. Prints per-method MSE / MAE / SSIM means after
registration, plus which restart won how often.
"""

import os
from collections import Counter

import numpy as np

from phasekit.classical import ObjectConstraint, best_of_restarts, gerchberg_saxton, hio, raar
from phasekit.data import load_dataset, make_synthetic_dataset
from phasekit.evaluation import evaluate
from phasekit.measurement import make_operator
from phasekit.numerics import RandomStream

N_DIGITS = 6
ITERS = 800
RESTARTS = 3
SEED = 0


def load_digits(n):
    data_dir = os.environ.get("PHASEKIT_DATA_DIR", "data")
    try:
        ds = load_dataset("mnist", data_dir, split="test", limit=n)
        print(f"using {n} mnist test digits from {data_dir}/")
    except FileNotFoundError:
        ds = make_synthetic_dataset(n, seed=SEED, split="test")
        print(f"mnist idx files not found, using {n} synthetic blobs")
    return ds.images.astype(np.float64)


def main():
    images = load_digits(N_DIGITS)
    operator = make_operator({"kind": "fourier2d", "height": 28, "width": 28,
                              "pad_factor": 2})
    constraint = ObjectConstraint.padded_corner((28, 28), 2)

    solvers = {
        "gs": lambda y: (lambda s: gerchberg_saxton(y, constraint, ITERS, s)),
        "hio": lambda y: (lambda s: hio(y, constraint, 0.8, ITERS, s)),
        "raar": lambda y: (lambda s: raar(y, constraint, 0.87, ITERS, s)),
    }

    print(f"\n{ITERS} iterations, best of {RESTARTS} restarts, registered metrics")
    print(f"{'method':>8} {'mse':>8} {'mae':>8} {'ssim':>8} {'residual':>10}  restart wins")
    for name, make_solve in solvers.items():
        mses, maes, ssims, residuals = [], [], [], []
        wins = Counter()
        for i, x in enumerate(images):
            y = operator.apply(x)
            stream = RandomStream(SEED, 41).child(i)
            result = best_of_restarts(make_solve(y), RESTARTS, stream)
            rec = evaluate(x, result.x_hat[:28, :28])
            mses.append(rec.mse)
            maes.append(rec.mae)
            ssims.append(rec.ssim)
            residuals.append(result.residual)
            wins[result.restart_index] += 1
        tally = " ".join(f"#{k}:{wins[k]}" for k in sorted(wins))
        print(f"{name:>8} {np.mean(mses):>8.4f} {np.mean(maes):>8.4f} "
              f"{np.mean(ssims):>8.4f} {np.mean(residuals):>10.4f}  {tally}")


if __name__ == "__main__":
    main()
