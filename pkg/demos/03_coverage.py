"""Coverage coefficients across the standard fixture set."""
from pomdp_ope.coverage import coverage_report
from pomdp_ope.errors import PomdpError
from pomdp_ope.fixtures import default_fixture_set

COLUMNS = ("C_FV", "C_FU", "C_Finf", "C_H2", "C_Hinf")


def main():
    print(f"{'fixture':<12}" + "".join(f"{c:>10}" for c in COLUMNS))
    for fx in default_fixture_set(random_count=2):
        try:
            s = coverage_report(fx.algebra()).summary()
        except PomdpError as exc:
            print(f"{fx.name:<12}  not identifiable ({type(exc).__name__})")
            continue
        print(f"{fx.name:<12}" + "".join(f"{s[c]:>10.3f}" for c in COLUMNS))


if __name__ == "__main__":
    main()
