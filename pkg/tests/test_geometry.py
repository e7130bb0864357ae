import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from torusdpa.geometry import min_image, torus_cost_sq, wrap


def test_wrap_examples():
    assert wrap(1.25) == pytest.approx(0.25)
    assert wrap(-0.1) == pytest.approx(0.9)
    assert np.allclose(wrap([0.0, 1.0]), [0.0, 0.0])


def test_wrap_range_edge():
    out = wrap([-1e-18, 2.0, -3.75])
    assert np.all(out >= 0.0) and np.all(out < 1.0)


def test_wrap_rejects_nonfinite():
    with pytest.raises(ValueError):
        wrap([np.nan])
    with pytest.raises(ValueError):
        wrap([np.inf])


def test_min_image_examples():
    assert min_image(0.9, 0.1) == pytest.approx(-0.2)
    assert torus_cost_sq(np.array([0.9]), np.array([0.1])) == pytest.approx(0.04)
    assert min_image(0.4, 0.4) == 0.0
    # antipodal tie resolves to +1/2 in both orders
    d = min_image(np.array([0.75, 0.25]), np.array([0.25, 0.75]))
    assert np.all(d == 0.5)
    assert torus_cost_sq(np.array([0.75, 0.25]), np.array([0.25, 0.75])) == pytest.approx(0.5)


def test_min_image_exact_antisymmetry(rng):
    x = rng.random(1000)
    y = rng.random(1000)
    dxy = min_image(x, y)
    dyx = min_image(y, x)
    ties = np.abs(dxy) == 0.5
    assert np.array_equal(dxy[~ties], -dyx[~ties])
    assert np.all(np.abs(dxy) <= 0.5)


coords = st.floats(min_value=0.0, max_value=1.0, exclude_max=True, allow_nan=False)


@settings(max_examples=200, deadline=None)
@given(st.tuples(coords, coords, coords), st.tuples(coords, coords, coords))
def test_cost_symmetry(xs, ys):
    x, y = np.array(xs), np.array(ys)
    assert torus_cost_sq(x, y) == pytest.approx(torus_cost_sq(y, x), abs=1e-15)


@settings(max_examples=200, deadline=None)
@given(
    st.tuples(coords, coords),
    st.tuples(coords, coords),
    st.tuples(coords, coords),
)
def test_triangle_inequality(xs, ys, zs):
    x, y, z = (np.array(v) for v in (xs, ys, zs))
    dxz = np.sqrt(torus_cost_sq(x, z))
    dxy = np.sqrt(torus_cost_sq(x, y))
    dyz = np.sqrt(torus_cost_sq(y, z))
    assert dxz <= dxy + dyz + 1e-12
