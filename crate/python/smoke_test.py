"""Builds the extension with cargo and exercises the bindings end to end."""

import importlib
import pathlib
import shutil
import subprocess
import sys
import tempfile

ROOT = pathlib.Path(__file__).resolve().parent.parent


def build():
    subprocess.run(["cargo", "build", "--release", "-p", "magging-py"], cwd=ROOT, check=True)
    lib = ROOT / "target" / "release" / "libpymagging.so"
    out = pathlib.Path(tempfile.mkdtemp())
    shutil.copy(lib, out / "pymagging.so")
    sys.path.insert(0, str(out))
    return importlib.import_module("pymagging")


def close(a, b, tol):
    return all(abs(x - y) <= tol for x, y in zip(a, b))


def main():
    mg = build()

    qp = mg.solve_simplex_qp([[4.0, 0.0], [0.0, 1.0]])
    assert close(qp["w"], [0.2, 0.8], 1e-8), qp
    assert abs(qp["objective"] - 0.8) < 1e-8

    point, weights = mg.maximin_point([[1.0, 1.0], [1.0, -1.0]])
    assert close(point, [1.0, 0.0], 1e-9), point
    grid = mg.maximin_by_definition([[1.0, 1.0], [1.0, -1.0]])
    assert close(grid, point, 0.02), grid

    sim = mg.simulate_mixture("clusterwise", n=3000, p=5, num_groups=3, seed=1)
    ens = mg.Ensemble.fit(sim.x, sim.y, sim.groups, estimator="ols")
    assert len(ens) == 3
    magging = ens.magging()
    assert abs(sum(magging.weights) - 1.0) < 1e-12
    mean = ens.mean()
    assert close(mean.weights, [1 / 3] * 3, 1e-15)
    stacked = ens.stacked("convex", "oob")
    assert stacked.scheme == "stack:convex:oob"
    cert = sim.certify()
    assert cert["holds"], cert
    print(f"certificate: lhs {cert['lhs']:.3e} <= bound {cert['bound']:.3e}")

    again = mg.simulate_mixture("clusterwise", n=3000, p=5, num_groups=3, seed=1)
    assert again.y == sim.y

    dirty = mg.simulate_mixture(
        "outlier_contamination", n=3000, p=5, num_groups=50, seed=0, contamination_fraction=0.2
    )
    ens = mg.Ensemble.fit(dirty.x, dirty.y, dirty.groups, estimator="ols")
    print("outlier magging theta:", [round(v, 3) for v in ens.magging().theta])
    print("majority coefficients:", [round(v, 3) for v in dirty.majority_b])

    try:
        mg.Ensemble.fit([[1.0, 1.0], [2.0, 2.0]], [1.0, 2.0], [[0, 1]], estimator="ols")
    except ValueError as e:
        print("singular design rejected:", e)
    else:
        raise AssertionError("singular OLS should fail")

    print("smoke test passed")


if __name__ == "__main__":
    main()
