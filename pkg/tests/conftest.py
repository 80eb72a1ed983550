import numpy as np
import pytest
from hypothesis import strategies as st

from poissonlab.fieldexpr import constant, coordinate


def random_poly(rng, coords, degree=3, terms=4):
    """Random polynomial field with small integer-ish coefficients."""
    d = len(coords)
    xs = [coordinate(c, coords) for c in coords]
    out = constant(float(rng.normal()), coords)
    for _ in range(terms):
        e = constant(float(np.round(rng.normal(), 3)), coords)
        for _ in range(int(rng.integers(1, degree + 1))):
            e = e * xs[int(rng.integers(d))]
        out = out + e
    return out


@st.composite
def poly_fields(draw, coords=("x", "y"), n=1, degree=3):
    seed = draw(st.integers(0, 2**32 - 1))
    rng = np.random.default_rng(seed)
    fields = [random_poly(rng, coords, degree) for _ in range(n)]
    pts = rng.uniform(-1, 1, size=(8, len(coords)))
    return fields, pts


@pytest.fixture
def rng():
    return np.random.default_rng(42)
