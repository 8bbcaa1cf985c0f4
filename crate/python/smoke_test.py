"""Smoke test for the rumax Python module.

Build and install first, e.g. `pip install --no-build-isolation ./crates/python`.
"""

import json
import math
import pathlib

import rumax

ROOT = pathlib.Path(__file__).resolve().parent.parent


def binomial_closed_form():
    lat = rumax.Lattice.multiplicative(1, 1.0, [2.0, 0.5])
    prob = rumax.Problem.exponential_hull(lat, [0.0, 0.0], 1.0, [[0.5, 0.5]])
    sol = prob.solve()
    theta = (2.0 / 3.0) * math.log(2.0)
    expected = -0.5 * (math.exp(-theta) + math.exp(theta / 2.0))
    assert sol.converged, sol
    assert abs(sol.value - expected) < 1e-6, sol
    assert abs(sol.strategy[0] - theta) < 1e-6, sol.strategy
    assert abs(sol.martingale[0] - 1.0 / 3.0) < 1e-6, sol.martingale
    ent = prob.entropic()
    assert abs(ent.value + math.log(-expected)) < 1e-6, ent
    # any dual point bounds the value from above
    assert sol.value <= prob.dual_value(2.0, [1 / 3, 2 / 3], [0.5, 0.5]) + 1e-9
    print("binomial:", sol)


def shipped_example():
    prob = rumax.Problem.from_file(ROOT / "fixtures" / "binomial_entropic.json")
    sol = prob.solve()
    assert abs(sol.value + 0.944940) < 1e-6, sol
    assert prob.no_arbitrage() is True
    print("example:", sol)


def arbitrage_and_transport():
    lat = rumax.Lattice.multiplicative(1, 1.0, [2.0, 0.5])
    arb, witness = rumax.admits_arbitrage(lat, [1.0, 0.0])
    assert arb and witness is not None
    assert rumax.find_emm(lat, [1.0, 0.0]) is None
    q = rumax.find_emm(lat, [0.5, 0.5])
    assert q is not None and abs(q[0] - 1.0 / 3.0) < 1e-9
    d = rumax.path_distance(lat, 0, 1)
    assert rumax.wasserstein(lat, [1.0, 0.0], [0.0, 1.0]) == d
    assert rumax.wasserstein(lat, [0.3, 0.7], [0.3, 0.7]) == 0.0
    assert abs(rumax.exp_conjugate(1.0, 1.0) + 1.0) < 1e-12


def generated_instances():
    for kind in ["finite-hull", "moment-set", "wasserstein-ball", "wasserstein-penalty"]:
        text = rumax.generate(7, 2, 2, kind)
        assert json.loads(text)["horizon"] == 2
        sol = rumax.Problem.from_json(text).solve()
        assert sol.value <= sol.upper + 1e-9
        print(f"{kind}: {sol}")


def bad_input_raises():
    try:
        rumax.Problem.from_json("{}")
    except ValueError as e:
        print("rejected:", e)
    else:
        raise AssertionError("empty document accepted")


if __name__ == "__main__":
    binomial_closed_form()
    shipped_example()
    arbitrage_and_transport()
    generated_instances()
    bad_input_raises()
    print("smoke test passed")
