"""Smoke test for the centerlab extension module.

Build and install first:
    pip install maturin
    maturin develop -m crates/py/Cargo.toml   (or: maturin build ... && pip install <wheel>)
"""

import math

import centerlab


def main():
    lam = centerlab.spectral_split([1, -1, 0, -1, 2, -1, 0, -1, 2])
    assert abs(lam[0] - 0.19806226419516) < 1e-10, lam
    assert abs(lam[2] - 3.24697960371747) < 1e-10, lam

    lin = centerlab.DAMap.linear()
    exps, hw = centerlab.lyapunov_spectrum(lin, [0.1, 0.2, 0.3], 100_000, seed=1)
    for e, l in zip(exps, sorted(lam, reverse=True)):
        assert abs(e - math.log(l)) < 1e-3, (exps, hw)

    da = centerlab.DAMap()
    x = [0.3, 0.6, 0.2]
    back = da.inverse(da.evaluate(x))
    assert max(abs(a - b) for a, b in zip(back, x)) < 1e-12, back

    c = centerlab.Conjugator(da, tol=1e-8)
    worst, offset = c.residual_sweep(1000, seed=0)
    assert worst <= 1e-6, worst
    assert c.depth > 0 and offset < 0.1

    series = centerlab.center_series(da, [0.1234, 0.5678, 0.9012], 5000)
    mean = sum(series) / len(series)
    times = centerlab.pliss_blocks(series, mean + 0.05)
    assert len(times) > 0.5 * len(series)
    assert centerlab.pliss_blocks([2.0, 0.0, 0.0, 0.0], 1.0) == [1, 2, 3]

    h = centerlab.partial_entropy(lin, "c", samples=200_000)
    assert abs(h["estimate"] - math.log(lam[1])) < 0.05 * math.log(lam[1]) + 3 * h["half_width"], h

    k = centerlab.KanMap(0.25, 0.1)
    assert len(k.validate()) == 5
    theta, image, residual = k.holonomy(64, 20)
    assert all(b > a for a, b in zip(image, image[1:]))
    try:
        centerlab.KanMap(0.0, 0.0).validate()
    except ValueError as e:
        assert "condition (3)" in str(e), e
    else:
        raise AssertionError("a = 0 must fail validation")

    print("centerlab smoke test passed")


if __name__ == "__main__":
    main()
