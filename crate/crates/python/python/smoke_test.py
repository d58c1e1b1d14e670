"""Smoke test for the mixvar extension module.

Run after `pip install --no-build-isolation -e crates/python`:

    python crates/python/python/smoke_test.py
"""

import math
import os
import tempfile

import mixvar


def close(x, y, tol):
    assert abs(x - y) <= tol, f"{x} vs {y}"


def check_grid_and_fields():
    grid = mixvar.Grid([1, 2], [9, 11])
    assert grid.num_nodes == 99
    # Evaluation set has (9 - 1) * (11 - 2) nodes on a domain of area 4.
    close(grid.quadrature_weight, 4.0 / 72.0, 1e-15)
    xs = grid.coordinates(1)
    assert xs[0] == -1.0 and xs[-1] == 1.0

    line = mixvar.Grid([2], [17])
    u = mixvar.Field(line, [0.5 * x * x for x in line.coordinates(0)])
    columns, rows = u.a_gradient()
    assert columns == [[2]]
    assert all(abs(r[0] - 1.0) <= 1e-9 for r in rows)

    with tempfile.TemporaryDirectory() as tmp:
        path = os.path.join(tmp, "u.field")
        u.save(path, config_hash="abc")
        assert mixvar.Field.load(path).values == u.values

    try:
        mixvar.Grid([1, 0], [5, 5])
    except ValueError as e:
        assert "a" in str(e)
    else:
        raise AssertionError("zero smoothness order accepted")


def check_integrand():
    f = mixvar.Integrand({"name": "pnorm", "params": {"p": 2}}, 1, 2)
    close(f([3.0, 4.0]), 25.0, 1e-12)
    v, h = [0.3, -1.2], 1e-6
    g = f.grad(v)
    for i in range(2):
        vp = list(v)
        vm = list(v)
        vp[i] += h
        vm[i] -= h
        close(g[i], (f(vp) - f(vm)) / (2 * h), 1e-6)
    assert len(mixvar.kernel_monomials([1, 2])) == 2


def check_envelope_and_relax():
    dw = mixvar.Integrand({"name": "double_well", "params": {"col": 1, "w": 1.0}}, 1, 1)
    opts = {"resolution": 33, "multistart": 4}
    value, f_at_v, phi = mixvar.dacorogna_min(dw, [2], [0.0], opts)
    assert f_at_v > 0.5 and value < 0.1 * f_at_v
    assert phi.is_zero_boundary()

    table = mixvar.tabulate_envelope(dw, [2], [-2.0], [2.0], [9], opts)
    assert table.failures == 0
    assert table([0.0]) < 0.1
    with tempfile.TemporaryDirectory() as tmp:
        path = os.path.join(tmp, "t.qft")
        table.save(path)
        assert mixvar.EnvelopeTable.load(path).values == table.values

    convex = mixvar.Integrand({"name": "pnorm", "params": {"p": 2}}, 1, 1)
    ctable = mixvar.tabulate_envelope(convex, [2], [-2.0], [2.0], [5], {"resolution": 17, "multistart": 2})
    report = mixvar.relax(convex, [2], [9], ctable, 2, datum=[([2], [0.5])])
    assert report["no_gap_detected"], report["gaps"]


def check_solve_and_coercivity():
    pant = mixvar.Integrand({"name": "pantographic"}, 1, 2)
    u, energy, trace = mixvar.solve(pant, [1, 2], [9, 11], datum=[([1, 0], [1.0]), ([0, 2], [0.5])])
    # The datum has a-gradient (1, 1) everywhere: energy is 2 * |Q|.
    close(energy, 8.0, 1e-9)
    assert trace["termination"] in ("gradient", "stop_below", "stagnation")

    f = mixvar.Integrand({"name": "pnorm", "params": {"p": 2}}, 1, 2)
    curve, fit = mixvar.coercivity(f, [1, 2], 2.0, [0.0, 1.0, 2.0, 3.0, 4.0], options={"resolution": 9, "multistart": 2})
    assert len(curve["points"]) == 5
    assert fit["coercive"]


def check_young_measures():
    gen = mixvar.random_generator(mixvar.Grid([2], [33]), amplitude=0.2, seed=3)
    target = mixvar.Grid([2], [257])
    base = mixvar.empirical_measure(gen)
    for j in (0, 1, 2):
        tiled, covered = mixvar.scale_and_tile(gen, j, target)
        nu = mixvar.empirical_measure(tiled)
        close(sum(nu.weights), 1.0, 1e-12)
        bary, _ = nu.moments(2.0)
        close(bary[0], 0.0, 1e-10)
        assert covered > 0.99
        assert mixvar.sliced_w1(nu, base, 16, 0) < 0.5
    quad = mixvar.Integrand({"name": "pnorm", "params": {"p": 2}}, 1, 1)
    table = mixvar.tabulate_envelope(quad, [2], [-1.0], [1.0], [5], {"resolution": 17, "multistart": 2})
    assert mixvar.jensen_gap(base, quad, table) >= -1e-8

    osc, report = mixvar.decompose([gen])
    assert osc[0].is_zero_boundary()
    assert len(report) == 1 and math.isfinite(report[0]["input_p_mass"])


if __name__ == "__main__":
    check_grid_and_fields()
    check_integrand()
    check_envelope_and_relax()
    check_solve_and_coercivity()
    check_young_measures()
    print("smoke test passed")
