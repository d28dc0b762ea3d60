"""Regenerate the bundled fixtures from a known parameter vector.

Run from the repository root: ``python3 scripts/make_fixtures.py``.
"""

from pathlib import Path

from hospiflow.data import ArrivalSpec, cases_to_csv, field_to_csv, generate_synthetic, scenario_cases
from hospiflow.params import canonical_space, space_to_csv

OUT = Path(__file__).resolve().parent.parent / "fixtures"


def main() -> None:
    space = canonical_space()
    x_true = space.defaults.copy()
    x_true[13] = 0.15  # x14: share of infected patients admitted
    cologne = generate_synthetic(x_true, ArrivalSpec.constant(30, 60, region="cologne"), seed=11)
    bonn = generate_synthetic(x_true, ArrivalSpec.constant(10, 60, region="bonn"), seed=12)
    cases = scenario_cases(cologne, "cologne") + scenario_cases(bonn, "bonn")
    cases.sort(key=lambda c: c.date)
    OUT.mkdir(exist_ok=True)
    (OUT / "params.csv").write_text(space_to_csv(space))
    (OUT / "cases.csv").write_text(cases_to_csv(cases))
    (OUT / "field.csv").write_text(field_to_csv(cologne.field))
    (OUT / "truth.csv").write_text("index,value\n" + "".join(f"{i},{float(v)!r}\n" for i, v in enumerate(x_true, 1)))


if __name__ == "__main__":
    main()
