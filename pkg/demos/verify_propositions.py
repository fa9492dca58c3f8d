"""Numerical checks of the alternative-architecture equilibria and the leakage contrast.

    python3 demos/verify_propositions.py            # equilibria only, a few seconds
    python3 demos/verify_propositions.py --leakage  # adds the two-image training contrast
"""
import argparse

import numpy as np

from milearn.proplab import (LeakageConfig, leakage_experiment, verify_case1_cancellation,
                             verify_zero_equilibrium)
from milearn.textures import texture


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--leakage", action="store_true")
    p.add_argument("--leakage-iterations", type=int, default=LeakageConfig.iterations_per_scale)
    args = p.parse_args()

    for variant in ("shared_encoder_case1", "shared_encoder_case2", "hyper", "shared_disc"):
        print(verify_zero_equilibrium(variant, np.random.default_rng(0)).to_text())
    print(verify_zero_equilibrium("hyper", np.random.default_rng(0), projection_bias=0.1).to_text(),
          "[projection biases 0.1]")
    for seed in range(3):
        print(verify_case1_cancellation(seed).to_text())
    if args.leakage:
        cfg = LeakageConfig(iterations_per_scale=args.leakage_iterations)
        print(leakage_experiment([texture(0, cfg.size, cfg.size), texture(1, cfg.size, cfg.size)], cfg).to_text())


if __name__ == "__main__":
    main()
