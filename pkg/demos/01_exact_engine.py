"""Exact policy values and per-step algebra for a random tabular POMDP."""
import numpy as np

from pomdp_ope.exact import brute_force_J, policy_value
from pomdp_ope.fixtures import generate_fixture


def main():
    fx = generate_fixture("random", {"S": 2, "O": 3, "A": 2, "H": 3}, seed=1)
    alg = fx.algebra()
    print(f"{fx.name}: J(pi_e) = {alg.J_e:.6f}, J(pi_b) = {alg.J_b:.6f}")
    print(f"enumeration check: {brute_force_J(fx.model, fx.pi_e):.6f} / "
          f"{policy_value(fx.model, fx.pi_b):.6f}")
    for t in range(alg.H):
        st = alg[t]
        print(f"step {t}: outcome matrix {st.outcome.shape}, rank {st.outcome_rank()}, "
              f"occupancy_e {np.round(alg.occupancy_e[t], 3)}")


if __name__ == "__main__":
    main()
