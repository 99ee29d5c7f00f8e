"""Compare the future-dependent value function constructions on one fixture."""
import numpy as np

from pomdp_ope.fdvf import CONSTRUCTIONS, construct_fdvf, step_residuals
from pomdp_ope.fixtures import generate_fixture


def main():
    fx = generate_fixture("reveal", seed=0)
    alg = fx.algebra()
    print(f"{fx.name}: H={alg.H}, J(pi_e)={alg.J_e:.4f}")
    print(f"{'construction':<16}{'residual':>12}{'sup norm':>12}")
    for name in CONSTRUCTIONS:
        sol = construct_fdvf(alg, name)
        res = float(np.max(step_residuals(alg, sol.function)))
        print(f"{name:<16}{res:>12.2e}{sol.function.sup_norm():>12.4f}")


if __name__ == "__main__":
    main()
