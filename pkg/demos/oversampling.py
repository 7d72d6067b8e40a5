"""Why oversampling matters for Fourier phase retrieval.

Zero padding to 56x56 before the DFT gives 4x more magnitudes than
unknowns plus a known-zero border, and HIO becomes reliable: its worst
case collapses. Without padding the solver sometimes wanders off
entirely. On smooth synthetic blobs the gap shows mostly in the tail
(their own dark margins already oversample a little); on MNIST digits
the unpadded failures are dramatic. This script runs both settings on a
handful of digits and prints the registered MSE side by side.
"""

import os

import numpy as np

from phasekit.classical import ObjectConstraint, best_of_restarts, hio
from phasekit.data import load_dataset, make_synthetic_dataset
from phasekit.evaluation import evaluate
from phasekit.measurement import make_operator
from phasekit.numerics import RandomStream

N_DIGITS = 8
ITERS = 1000
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


def run_case(images, pad_factor):
    operator = make_operator({"kind": "fourier2d", "height": 28, "width": 28,
                              "pad_factor": pad_factor})
    if pad_factor > 1:
        constraint = ObjectConstraint.padded_corner((28, 28), pad_factor)
    else:
        constraint = ObjectConstraint.full_frame((28, 28))
    mses = []
    for i, x in enumerate(images):
        y = operator.apply(x)
        stream = RandomStream(SEED, 41).child(i)
        result = best_of_restarts(
            lambda s, y=y: hio(y, constraint, 0.8, ITERS, s), RESTARTS, stream)
        rec = evaluate(x, result.x_hat[:28, :28])
        mses.append(rec.mse)
    return np.asarray(mses)


def main():
    images = load_digits(N_DIGITS)
    unpadded = run_case(images, pad_factor=1)
    padded = run_case(images, pad_factor=2)

    print(f"\nHIO, beta=0.8, {ITERS} iterations, best of {RESTARTS} restarts")
    print(f"{'digit':>6} {'unpadded mse':>14} {'padded mse':>12}")
    for i in range(len(images)):
        print(f"{i:>6} {unpadded[i]:>14.4f} {padded[i]:>12.4f}")
    print(f"{'mean':>6} {unpadded.mean():>14.4f} {padded.mean():>12.4f}")
    print(f"{'worst':>6} {unpadded.max():>14.4f} {padded.max():>12.4f}")
    print(f"\noversampling shrinks the worst case by "
          f"{unpadded.max() / max(padded.max(), 1e-12):.1f}x "
          f"(mean by {unpadded.mean() / max(padded.mean(), 1e-12):.1f}x)")


if __name__ == "__main__":
    main()
