import numpy as np
import pytest
from scipy.integrate import quad

from scatlab import potential as pot
from scatlab.errors import ConfigError
from scatlab.field import GridSpec


def _ft_numeric(p, q):
    # Vhat(q) = (4 pi / q) int_0^inf r sin(q r) V(r) dr for a central potential
    def integrand(r):
        return r * np.sin(q * r) * pot.evaluate(p, r)

    val, _ = quad(integrand, 0.0, pot.interaction_radius(p, floor=1e-14) + 5.0, limit=200)
    return 4.0 * np.pi * val / q


@pytest.mark.parametrize(
    "p",
    [pot.gaussian_bump(0.3, 0.8), pot.gaussian_bump(-1.0, 1.5), pot.square_well(-0.7, 1.2)],
)
def test_fourier_transform_against_quadrature(p):
    for q in (0.3, 1.0, 2.5, 6.0):
        assert np.isclose(pot.fourier_transform(p, q), _ft_numeric(p, q), rtol=1e-8, atol=1e-12)


def test_fourier_transform_zero_limit():
    p = pot.square_well(-0.7, 1.2)
    vol = 4.0 * np.pi / 3.0 * p.v0 * p.range**3
    assert np.isclose(pot.fourier_transform(p, 1e-9), vol, rtol=1e-6)
    # just above the small-q branch switch (q r0 = 1e-2) the closed form must
    # agree with the quadratic series to far better than either branch error
    q = 1.02e-2 / p.range
    series = vol * (1.0 - 0.1 * (q * p.range) ** 2)
    assert np.isclose(pot.fourier_transform(p, q), series, rtol=1e-9)


def test_evaluate_shapes():
    p = pot.gaussian_bump(0.5, 1.0)
    assert np.isclose(pot.evaluate(p, 0.0), 0.5)
    assert pot.evaluate(p, np.array([0.0, 10.0]))[1] < 1e-10
    w = pot.square_well(-1.0, 2.0)
    assert pot.evaluate(w, 1.9) == -1.0
    assert pot.evaluate(w, 2.1) == 0.0


def test_interaction_radius():
    assert pot.interaction_radius(pot.zero()) == 0.0
    assert pot.interaction_radius(pot.square_well(-1.0, 2.0)) == 2.0
    p = pot.gaussian_bump(1.0, 1.0)
    r = pot.interaction_radius(p, floor=1e-6)
    assert np.isclose(pot.evaluate(p, r), 1e-6, rtol=1e-9)


def test_smoothed_well_mass_and_sharp_limit():
    g = GridSpec(48, 0.25)
    p = pot.square_well(-1.0, 2.0)
    sharp = pot.evaluate(p, g.radius_grid())
    smooth = pot.sample_on_grid(p, g, well_smoothing=2.0)
    # the smoothed sample preserves the integrated strength of the continuum
    # ball (the sharp grid sample itself misses it by the staircase error)
    ball = 4.0 / 3.0 * np.pi * p.range**3 * p.v0
    assert np.isclose(np.sum(smooth) * g.cell_volume, ball, rtol=1e-3)
    assert np.isclose(np.sum(sharp) * g.cell_volume, ball, rtol=0.03)
    # and converges to the sharp profile as the width shrinks
    tight = pot.sample_on_grid(p, g, well_smoothing=0.25)
    assert np.max(np.abs(tight - sharp)) < np.max(np.abs(smooth - sharp))


def test_born_parameter():
    assert pot.born_parameter(pot.zero(), 1.0) == 0.0
    p = pot.gaussian_bump(0.1, 1.0)
    assert np.isclose(pot.born_parameter(p, 5.0), 0.1 * (1 + 0.2))
    with pytest.raises(ConfigError):
        pot.born_parameter(p, 0.0)


def test_spec_validation():
    with pytest.raises(ConfigError):
        pot.PotentialSpec("lennard_jones", 1.0, 1.0)
    with pytest.raises(ConfigError):
        pot.PotentialSpec(pot.GAUSSIAN_BUMP, 1.0, -2.0)
