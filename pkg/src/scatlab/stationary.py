"""Stationary scattering theory: Born amplitudes, partial waves, beam averaging.

Conventions (hbar = m = 1):

  * T kernel, first order:     T1(k, k') = (2 pi)^-3 Vhat(k - k')
  * scattering amplitude:      f = -4 pi^2 T   (so f_Born1 = -Vhat(q) / (2 pi))
  * differential cross section into a patch Sigma at energy k^2/2:
        sigma_diff(Sigma) = 16 pi^4 int_Sigma |T(w k, k z)|^2 dOmega
                          = int_Sigma |f(theta)|^2 dOmega
  * impact-parameter average over the plane a perp k0:
        int |(T psi_a)^hat (k)|^2 d^2 a
          = 16 pi^4 int_{|k'|=|k|} (cos theta')^-1 |T(k,k')|^2 |psihat(k')|^2 dOmega'
    valid for psihat supported in the half space k . k0 >= 0.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.integrate import solve_ivp
from scipy.special import spherical_jn, spherical_yn

from . import potential as pot
from .errors import ConfigError, MatchRadiusError, OffShellError, SupportError
from .patches import PatchPartition, SphereQuadrature


# ---------------------------------------------------------------------------
# first-order Born theory (analytic, used as the weak-coupling reference)

def born1_T(vspec: pot.PotentialSpec, k_out, k_in):
    """First-order T kernel (2 pi)^-3 Vhat(k_out - k_in) for vectors or stacks."""
    k_out = np.asarray(k_out, dtype=float)
    k_in = np.asarray(k_in, dtype=float)
    q = np.linalg.norm(k_out - k_in, axis=-1)
    return pot.fourier_transform(vspec, q) / (2.0 * np.pi) ** 3


def born1_amplitude(vspec: pot.PotentialSpec, k, theta):
    """f_Born1(theta) = -Vhat(q) / (2 pi) with q = 2 k sin(theta / 2)."""
    q = 2.0 * k * np.sin(np.asarray(theta, dtype=float) / 2.0)
    return -pot.fourier_transform(vspec, q) / (2.0 * np.pi)


def amplitude_from_T(t_value):
    """On-shell scattering amplitude f = -4 pi^2 T."""
    return -4.0 * np.pi**2 * np.asarray(t_value)


def check_on_shell(k_out, k_in, tol=1e-9):
    """Both momenta must have equal magnitude (same energy shell)."""
    a = np.linalg.norm(np.asarray(k_out, dtype=float), axis=-1)
    b = np.linalg.norm(np.asarray(k_in, dtype=float), axis=-1)
    if np.any(np.abs(a - b) > tol * np.maximum(a, b)):
        raise OffShellError(f"momenta off the energy shell: |k_out|={a}, |k_in|={b}")


# ---------------------------------------------------------------------------
# partial waves: exact phase shifts for central potentials

@dataclass
class PhaseShifts:
    k: float
    deltas: np.ndarray     # delta_l for l = 0 .. l_max
    r_match: float

    def amplitude(self, theta):
        """f(theta) = (1/k) sum_l (2l+1) e^{i delta_l} sin(delta_l) P_l(cos theta)."""
        ct = np.cos(np.asarray(theta, dtype=float))
        out = np.zeros(np.shape(ct), dtype=complex)
        for ell, d in enumerate(self.deltas):
            coef = np.zeros(ell + 1)
            coef[ell] = 1.0
            pl = np.polynomial.legendre.legval(ct, coef)
            out = out + (2 * ell + 1) * np.exp(1j * d) * np.sin(d) * pl
        return out / self.k

    def total_cross_section(self):
        ell = np.arange(len(self.deltas))
        return 4.0 * np.pi / self.k**2 * float(np.sum((2 * ell + 1) * np.sin(self.deltas) ** 2))

    def optical_theorem_residual(self):
        """|Im f(0) - k sigma_tot / (4 pi)|, relative to k sigma_tot / (4 pi)."""
        lhs = float(self.amplitude(0.0).imag)
        rhs = self.k * self.total_cross_section() / (4.0 * np.pi)
        return abs(lhs - rhs) / max(abs(rhs), 1e-300)


def _radial_delta(vspec, k, ell, r_match, rtol, atol):
    """Phase shift from the regular radial solution matched to Riccati-Bessel."""
    # start close to the origin, but far enough out that the r^(l+1) growth up
    # to r_match stays within double range
    r0 = max(min(1e-4, r_match * 1e-4), r_match * 10.0 ** (-200.0 / (ell + 1)))

    def rhs(r, u):
        return [u[1], (ell * (ell + 1) / (r * r) + 2.0 * pot.evaluate(vspec, r) - k * k) * u[0]]

    # regular boundary behavior u ~ r^(l+1); overall scale is free (linear ODE)
    u0 = 1.0
    du0 = (ell + 1) / r0
    sol = solve_ivp(rhs, (r0, r_match), [u0, du0], method="DOP853", rtol=rtol, atol=atol)
    u, du = sol.y[0, -1], sol.y[1, -1]
    beta = du / u
    x = k * r_match
    j, jp = spherical_jn(ell, x), spherical_jn(ell, x, derivative=True)
    y, yp = spherical_yn(ell, x), spherical_yn(ell, x, derivative=True)
    # Riccati-Bessel S = x j_l, C = -x y_l and their r-derivatives
    s, sp = x * j, k * (j + x * jp)
    c, cp = -x * y, -k * (y + x * yp)
    return float(np.arctan((sp - beta * s) / (beta * c - cp)))


def phase_shifts(vspec: pot.PotentialSpec, k, l_max=None, tail_tol=1e-8,
                 r_match=None, rtol=1e-12, atol=1e-14) -> PhaseShifts:
    """Exact phase shifts by radial integration, truncated once |delta_l| < tail_tol.

    r_match defaults to a radius where the potential is negligible; supplying a
    smaller one raises MatchRadiusError.
    """
    if k <= 0:
        raise ConfigError("phase_shifts requires k > 0")
    r_int = pot.interaction_radius(vspec)
    if r_match is None:
        r_match = max(1.5 * r_int, r_int + 1.0)
    if r_match < r_int:
        raise MatchRadiusError(f"match radius {r_match} inside potential support {r_int:.3f}")
    hard_cap = 80 if l_max is None else l_max
    deltas = []
    for ell in range(hard_cap + 1):
        d = _radial_delta(vspec, k, ell, r_match, rtol, atol)
        deltas.append(d)
        if l_max is None and ell >= max(2, int(k * r_int)) and abs(d) < tail_tol:
            break
    return PhaseShifts(float(k), np.array(deltas), float(r_match))


def square_well_delta0(v0, r0, k):
    """Closed-form s-wave phase shift of the sharp square well (depth v0 < 0 or barrier).

    Inside wavenumber kp = sqrt(k^2 - 2 v0); for a barrier above the energy the
    trigonometric functions continue to their hyperbolic counterparts.
    """
    kp2 = k * k - 2.0 * v0
    if kp2 > 0:
        kp = np.sqrt(kp2)
        t = np.tan(kp * r0) / kp
    else:
        kappa = np.sqrt(-kp2)
        t = np.tanh(kappa * r0) / kappa
    return float(np.arctan(k * t) - k * r0 + np.pi * round((k * r0 - np.arctan(k * t)) / np.pi))


def count_bound_states_s_wave(vspec: pot.PotentialSpec, r_max=None, n_grid=4000):
    """Number of s-wave bound states by counting zero-energy radial nodes.

    Integrates u'' = 2 V u from the origin outward at E = 0; each node of u
    beyond r = 0 marks one bound state (Levinson counting).
    """
    if vspec.kind == pot.ZERO or vspec.v0 >= 0.0:
        return 0
    if r_max is None:
        r_max = pot.interaction_radius(vspec) + 2.0

    def rhs(r, u):
        return [u[1], 2.0 * pot.evaluate(vspec, r) * u[0]]

    r0 = 1e-6
    sol = solve_ivp(rhs, (r0, r_max), [r0, 1.0], method="DOP853",
                    rtol=1e-10, atol=1e-12, dense_output=True)
    rr = np.linspace(r0, r_max, n_grid)
    u = sol.sol(rr)[0]
    return int(np.sum(np.diff(np.sign(u[np.abs(u) > 0])) != 0))


# ---------------------------------------------------------------------------
# differential cross sections on patch partitions

def sigma_diff_patches(amplitude, partition: PatchPartition, beam_direction=(0.0, 0.0, 1.0),
                       n_polar=16, n_azimuth=16):
    """Patchwise integral of |f(theta)|^2 for a theta-only amplitude callable.

    theta is measured from beam_direction; returns one value per patch.
    """
    quad = SphereQuadrature(partition, 1.0, n_polar, n_azimuth)
    b = np.asarray(beam_direction, dtype=float)
    b = b / np.linalg.norm(b)
    ct = np.clip(quad.normals @ b, -1.0, 1.0)
    vals = np.abs(amplitude(np.arccos(ct))) ** 2
    return quad.patch_sums(vals)


def sigma_diff_from_T(t_on_shell, partition: PatchPartition, k_in,
                      n_polar=16, n_azimuth=16):
    """16 pi^4 int_Sigma |T(w |k_in|, k_in)|^2 dOmega per patch.

    t_on_shell(k_out_vectors, k_in_vector) evaluates the kernel on the shell.
    """
    k_in = np.asarray(k_in, dtype=float)
    kmag = float(np.linalg.norm(k_in))
    quad = SphereQuadrature(partition, 1.0, n_polar, n_azimuth)
    k_out = kmag * quad.normals
    check_on_shell(k_out, np.broadcast_to(k_in, k_out.shape))
    tvals = t_on_shell(k_out, k_in)
    return 16.0 * np.pi**4 * quad.patch_sums(np.abs(tvals) ** 2)


# ---------------------------------------------------------------------------
# impact-parameter averaging identity on the energy shell

def _shell_nodes(kmag, n_polar, n_azimuth):
    """Gauss-Legendre x trapezoid-free (periodic) quadrature of the full sphere."""
    x, w = np.polynomial.legendre.leggauss(n_polar)
    phi = 2.0 * np.pi * np.arange(n_azimuth) / n_azimuth
    wphi = 2.0 * np.pi / n_azimuth
    st = np.sqrt(1.0 - x**2)
    nx = st[:, None] * np.cos(phi)[None, :]
    ny = st[:, None] * np.sin(phi)[None, :]
    nz = np.broadcast_to(x[:, None], nx.shape)
    nodes = kmag * np.stack([nx, ny, nz], axis=-1).reshape(-1, 3)
    weights = np.repeat(w, n_azimuth) * wphi
    return nodes, weights


def scattered_wave_on_shell(t_on_shell, psihat, k_out, kmag, n_polar=32, n_azimuth=64):
    """(T psihat)^hat (k_out) = -2 pi i int_{|k'|=kmag} T(k_out,k') psihat(k') kmag dOmega'."""
    nodes, w = _shell_nodes(kmag, n_polar, n_azimuth)
    k_out = np.atleast_2d(np.asarray(k_out, dtype=float))
    check_on_shell(k_out, np.broadcast_to([0.0, 0.0, kmag], k_out.shape), tol=1e-6)
    vals = np.empty(len(k_out), dtype=complex)
    pv = psihat(nodes)
    for i, ko in enumerate(k_out):
        tv = t_on_shell(np.broadcast_to(ko, nodes.shape), nodes)
        vals[i] = np.sum(w * tv * pv) * kmag
    return -2j * np.pi * vals


def gaussian_momentum_profile(k0, sigma_k):
    """Normalized psihat(k) of an isotropic Gaussian packet centered at k0.

    In position space this is a width s = 1/sigma_k packet; |psihat|^2
    integrates to 1.
    """
    k0 = np.asarray(k0, dtype=float)

    def psihat(k):
        k = np.asarray(k, dtype=float)
        d2 = np.sum((k - k0) ** 2, axis=-1)
        return (np.pi * sigma_k**2) ** (-0.75) * np.exp(-d2 / (2.0 * sigma_k**2))

    return psihat


def half_space_defect(psihat, k0, kmag_max, n=48):
    """Mass fraction of |psihat|^2 in the half space k . k0 < 0 (cubature)."""
    k0 = np.asarray(k0, dtype=float)
    x, w = np.polynomial.legendre.leggauss(n)
    g = kmag_max * x
    gw = kmag_max * w
    kx, ky, kz = np.meshgrid(g, g, g, indexing="ij")
    pts = np.stack([kx, ky, kz], axis=-1).reshape(-1, 3)
    rho = np.abs(psihat(pts)) ** 2
    wt = (gw[:, None, None] * gw[None, :, None] * gw[None, None, :]).ravel()
    below = (pts @ k0) < 0
    total = float(np.sum(rho * wt))
    return float(np.sum(rho[below] * wt[below])) / total


@dataclass
class AjsCheckResult:
    lhs: float               # plane-integrated |(T psi_a)^hat|^2 at fixed k_out
    rhs: float               # 16 pi^4 shell integral with the 1/cos(theta') weight
    rel_defect: float
    half_space_mass: float
    translation_shift: float  # relative change of lhs under a lattice translation


def ajs_identity_check(vspec: pot.PotentialSpec, k0, sigma_k, k_out,
                       a_extent=None, n_a=48, n_polar=32, n_azimuth=64,
                       support_tol=1e-6, translation=None) -> AjsCheckResult:
    """Numerical check of the impact-parameter averaging identity.

    Uses the first-order kernel T1 (the identity holds for any kernel) and a
    Gaussian momentum profile around k0.  The left side integrates
    |(T psihat_a)(k_out)|^2 over the impact plane a perp k0 by Gauss-Legendre
    cubature; the right side is the weighted shell integral.
    """
    k0 = np.asarray(k0, dtype=float)
    kmag = float(np.linalg.norm(k0))
    psihat = gaussian_momentum_profile(k0, sigma_k)
    hs = half_space_defect(psihat, k0, kmag + 6.0 * sigma_k)
    if hs > support_tol:
        raise SupportError(
            f"momentum profile has mass {hs:.2e} > {support_tol:.0e} outside the forward half space"
        )
    k_out = np.asarray(k_out, dtype=float)
    check_on_shell(k_out[None, :], k0[None, :], tol=1e-6)

    # orthonormal frame of the impact plane (perpendicular to k0)
    ez = k0 / kmag
    trial = np.array([1.0, 0.0, 0.0])
    if abs(trial @ ez) > 0.9:
        trial = np.array([0.0, 1.0, 0.0])
    e1 = trial - (trial @ ez) * ez
    e1 /= np.linalg.norm(e1)
    e2 = np.cross(ez, e1)

    nodes, w = _shell_nodes(kmag, n_polar, n_azimuth)
    tv = born1_T(vspec, np.broadcast_to(k_out, nodes.shape), nodes)
    pv = psihat(nodes)
    core = w * tv * pv * kmag          # shell integrand without the plane phase

    if a_extent is None:
        a_extent = 8.0 / sigma_k
    gx, gw = np.polynomial.legendre.leggauss(n_a)
    av = a_extent * gx
    aw = a_extent * gw
    a1, a2 = np.meshgrid(av, av, indexing="ij")
    a_pts = a1.reshape(-1, 1) * e1[None, :] + a2.reshape(-1, 1) * e2[None, :]
    a_wts = (aw[:, None] * aw[None, :]).ravel()

    lhs = 0.0
    chunk = 512
    for i in range(0, len(a_pts), chunk):
        phase = np.exp(1j * a_pts[i : i + chunk] @ nodes.T)
        amp = phase @ core
        lhs += float(np.sum(a_wts[i : i + chunk] * np.abs(amp) ** 2))
    lhs *= 4.0 * np.pi**2

    ct = np.clip((nodes @ ez) / kmag, -1.0, 1.0)
    rhs = 16.0 * np.pi**4 * float(np.sum(w * np.abs(tv) ** 2 * np.abs(pv) ** 2 / ct))

    shift_rel = 0.0
    if translation is not None:
        tvec = np.asarray(translation, dtype=float)

        def psihat_shift(k):
            k = np.asarray(k, dtype=float)
            return psihat(k) * np.exp(-1j * (k @ tvec))

        pv2 = psihat_shift(nodes)
        core2 = w * tv * pv2 * kmag
        lhs2 = 0.0
        for i in range(0, len(a_pts), chunk):
            phase = np.exp(1j * a_pts[i : i + chunk] @ nodes.T)
            amp = phase @ core2
            lhs2 += float(np.sum(a_wts[i : i + chunk] * np.abs(amp) ** 2))
        lhs2 *= 4.0 * np.pi**2
        shift_rel = abs(lhs2 - lhs) / max(abs(lhs), 1e-300)

    return AjsCheckResult(lhs, rhs, abs(lhs - rhs) / max(abs(rhs), 1e-300), hs, shift_rel)
