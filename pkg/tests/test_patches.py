import numpy as np
import pytest

from scatlab.errors import GeometryError
from scatlab.field import GridSpec
from scatlab.patches import PatchPartition, SphereQuadrature, check_sphere_fits


def test_areas_sum_to_sphere():
    part = PatchPartition(n_theta=8, n_phi=4)
    assert np.isclose(part.areas.sum(), 4 * np.pi, rtol=1e-14)


def test_classify_matches_bounds():
    part = PatchPartition(n_theta=5, n_phi=6)
    rng = np.random.default_rng(3)
    v = rng.normal(size=(500, 3))
    idx = part.classify(v[:, 0], v[:, 1], v[:, 2])
    theta = np.arccos(v[:, 2] / np.linalg.norm(v, axis=1))
    phi = np.mod(np.arctan2(v[:, 1], v[:, 0]), 2 * np.pi)
    for n, i in enumerate(idx):
        t0, t1, p0, p1 = part.bounds(i)
        assert t0 <= theta[n] <= t1 + 1e-12
        assert p0 <= phi[n] <= p1 + 1e-12


def test_classify_zero_vector():
    part = PatchPartition()
    assert part.classify(np.zeros(1), np.zeros(1), np.zeros(1))[0] == -1


def test_centers_land_in_own_patch():
    part = PatchPartition(n_theta=6, n_phi=8)
    c = part.centers()
    idx = part.classify(c[:, 0], c[:, 1], c[:, 2])
    assert np.array_equal(idx, np.arange(part.n_patches))


def test_binner_conserves_weight_and_splits_edges():
    part = PatchPartition(n_theta=4, n_phi=4)
    g = GridSpec(16, 0.5)
    x, y, z = g.meshgrid()
    w = np.exp(-(x**2 + y**2 + z**2))
    binned = part.binner(x, y, z)(w)
    center = w[g.n // 2, g.n // 2, g.n // 2]
    assert np.isclose(binned.sum(), w.sum() - center, rtol=1e-12)
    # points on the +x half axis (y = 0) sit on a sector edge and must be
    # shared between sectors 0 and 3
    single = np.zeros_like(w)
    single[g.n // 2 + 3, g.n // 2, g.n // 2] = 1.0
    b = part.binner(x, y, z)(single)
    nz = np.nonzero(b)[0]
    assert set(nz % part.n_phi) == {0, part.n_phi - 1}
    assert np.allclose(b[nz], 0.5)


def test_binner_equivariant_under_quarter_turn():
    part = PatchPartition(n_theta=4, n_phi=4)
    g = GridSpec(20, 0.5)
    n = g.n
    x, y, z = g.meshgrid()
    rng = np.random.default_rng(11)
    w = rng.random(x.shape)
    # the x = -L/2 planes have no rotated partner on the even grid; drop them
    w[0, :, :] = 0.0
    w[:, 0, :] = 0.0
    b0 = part.binner(x, y, z)(w)
    # quarter turn about z, (x, y) -> (-y, x): pull back through the inverse map
    I, J, K = np.meshgrid(np.arange(n), np.arange(n), np.arange(n), indexing="ij")
    w_rot = w[J, (n - I) % n, K]
    b1 = part.binner(x, y, z)(w_rot)
    shift = np.roll(b0.reshape(part.n_theta, part.n_phi), 1, axis=1).ravel()
    assert np.allclose(b1, shift, atol=1e-12)


def test_quadrature_integrates_constants_and_polynomials():
    part = PatchPartition(n_theta=6, n_phi=4)
    R = 2.5
    quad = SphereQuadrature(part, R, n_polar=8, n_azimuth=8)
    ones = quad.patch_sums(np.ones(len(quad.weights)))
    assert np.allclose(ones, R**2 * part.areas, rtol=1e-12)
    # int z^2 dA over the sphere = 4 pi R^4 / 3
    z2 = (quad.points[:, 2]) ** 2
    assert np.isclose(quad.patch_sums(z2).sum(), 4 * np.pi * R**4 / 3, rtol=1e-10)


def test_quadrature_order_doubling_consistency():
    # the azimuthal rule is trapezoid on patch sub-intervals, so smooth
    # integrands converge like 1/n^2; check the rate against a high-order
    # reference and the total against the analytic sphere integral
    part = PatchPartition(n_theta=4, n_phi=4)
    f = lambda p: np.exp(p[:, 2]) * (1 + 0.3 * p[:, 0])

    def sums(n):
        q = SphereQuadrature(part, 1.0, n_polar=n, n_azimuth=n)
        return q.patch_sums(f(q.points))

    ref = sums(64)
    e8 = np.max(np.abs(sums(8) - ref))
    e16 = np.max(np.abs(sums(16) - ref))
    e32 = np.max(np.abs(sums(32) - ref))
    assert e16 < e8 / 3.0
    assert e32 < e16 / 3.0
    # int exp(z) dA over the unit sphere = 4 pi sinh(1)
    assert np.isclose(ref.sum(), 4.0 * np.pi * np.sinh(1.0), rtol=1e-4)


def test_sphere_fit_check():
    g = GridSpec(32, 0.5)
    check_sphere_fits(g, 6.0)
    with pytest.raises(GeometryError):
        check_sphere_fits(g, 7.9)
