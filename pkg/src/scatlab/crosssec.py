"""Scattering cross-section functionals on patch partitions of the sphere.

Four definitions of the probability scattered into a solid-angle patch Sigma:

  * momentum:  integral of |psihat_out|^2 over the cone through Sigma
  * T-based:   same with psihat_out replaced by psihat_out - psihat_in
  * cone:      long-time limit of the position probability in the cone
  * flux:      time-integrated probability current through R*Sigma

plus the detection-sphere machinery (trilinear current sampling, signed and
absolute flux, interior-mass tracking) needed to compare them.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import GridMismatchError, NotConvergedError, SchemaMismatch
from .field import GridSpec, MomentumAmplitude, WaveFunction
from .patches import PatchPartition, SphereQuadrature, check_sphere_fits


def current(psi: WaveFunction):
    """Probability current j = Im(conj(psi) grad psi), spectral gradient.

    Returns an array of shape (3, n, n, n).
    """
    g = psi.grid
    f = np.fft.fftn(psi.amp)
    k = g.k_axis_fft
    j = np.empty((3,) + psi.amp.shape)
    shapes = [(-1, 1, 1), (1, -1, 1), (1, 1, -1)]
    for ax in range(3):
        grad = np.fft.ifftn((1j * k).reshape(shapes[ax]) * f)
        j[ax] = (np.conj(psi.amp) * grad).imag
    return j


def sigma_momentum(psihat: MomentumAmplitude, partition: PatchPartition):
    """Per-patch mass of |psihat|^2 binned by momentum direction."""
    g = psihat.grid
    k = g.k_axis
    kx, ky, kz = np.meshgrid(k, k, k, indexing="ij")
    return partition.bin_weights(kx, ky, kz, psihat.density() * g.k_cell_volume)


def sigma_T(psihat_out: MomentumAmplitude, psihat_in: MomentumAmplitude, partition: PatchPartition):
    """Per-patch mass of |psihat_out - psihat_in|^2 (the genuinely scattered part)."""
    if psihat_out.grid != psihat_in.grid:
        raise GridMismatchError("out/in momentum amplitudes live on different grids")
    g = psihat_out.grid
    k = g.k_axis
    kx, ky, kz = np.meshgrid(k, k, k, indexing="ij")
    w = np.abs(psihat_out.amp - psihat_in.amp) ** 2 * g.k_cell_volume
    return partition.bin_weights(kx, ky, kz, w)


def cone_mass(psi: WaveFunction, partition: PatchPartition, binner_cache=None):
    """Position probability in each cone C_Sigma at one instant."""
    if binner_cache is None:
        x, y, z = psi.grid.meshgrid()
        binner_cache = partition.binner(x, y, z)
    return binner_cache(psi.density() * psi.grid.cell_volume)


@dataclass
class ConeResult:
    times: np.ndarray                 # snapshot times, ascending
    traces: np.ndarray                # (n_times, n_patches) cone masses
    sigma: np.ndarray                 # extrapolated long-time limit per patch
    cauchy_defect: float              # L1 change between the last two extrapolants


def sigma_cone(snapshots, partition: PatchPartition, tol=None) -> ConeResult:
    """Long-time cone probabilities from late-time snapshots.

    The leading finite-time correction of a freely spreading packet is O(1/t),
    so the limit is taken by Richardson extrapolation in 1/t over consecutive
    snapshot pairs.  With tol set, a NotConvergedError is raised when the last
    two extrapolants still differ by more than tol in L1.
    """
    if len(snapshots) < 3:
        raise NotConvergedError("sigma_cone needs at least three snapshots")
    cache = None
    times, traces = [], []
    for t, psi in snapshots:
        if cache is None:
            x, y, z = psi.grid.meshgrid()
            cache = partition.binner(x, y, z)
        times.append(t)
        traces.append(cone_mass(psi, partition, cache))
    times = np.asarray(times)
    traces = np.asarray(traces)
    extrap = []
    for i in range(len(times) - 1):
        t1, t2 = times[i], times[i + 1]
        extrap.append((t2 * traces[i + 1] - t1 * traces[i]) / (t2 - t1))
    defect = float(np.sum(np.abs(extrap[-1] - extrap[-2]))) if len(extrap) > 1 else np.inf
    if tol is not None and defect > tol:
        raise NotConvergedError(f"sigma_cone extrapolant still changing by {defect:.3e} > {tol:.3e}")
    return ConeResult(times, traces, extrap[-1], defect)


class TrilinearSampler:
    """Trilinear interpolation of grid fields at fixed off-grid points."""

    def __init__(self, grid: GridSpec, points):
        pts = np.asarray(points, dtype=float)
        n = grid.n
        # fractional index of each point on the (periodic) lattice
        u = pts / grid.dx + n // 2
        i0 = np.floor(u).astype(np.int64)
        f = u - i0
        self._n = n
        self._corners = []
        for cx in (0, 1):
            for cy in (0, 1):
                for cz in (0, 1):
                    ix = np.mod(i0[:, 0] + cx, n)
                    iy = np.mod(i0[:, 1] + cy, n)
                    iz = np.mod(i0[:, 2] + cz, n)
                    w = (
                        (f[:, 0] if cx else 1.0 - f[:, 0])
                        * (f[:, 1] if cy else 1.0 - f[:, 1])
                        * (f[:, 2] if cz else 1.0 - f[:, 2])
                    )
                    self._corners.append(((ix * n + iy) * n + iz, w))

    def sample(self, field3d):
        """Interpolate one (n,n,n) array at the stored points."""
        flat = field3d.ravel()
        out = None
        for idx, w in self._corners:
            contrib = w * flat[idx]
            out = contrib if out is None else out + contrib
        return out

    def sample_stack(self, fields):
        """Interpolate a stack of (m, n, n, n) arrays; returns (m, n_points)."""
        return np.stack([self.sample(f) for f in fields])


@dataclass
class FluxSphere:
    radius: float
    quad: SphereQuadrature
    sampler: TrilinearSampler
    interior: np.ndarray              # flattened indices of cells with |x| < R
    signed: np.ndarray = None         # running trapezoid integrals per patch
    absolute: np.ndarray = None
    prev_signed_rate: np.ndarray = None
    prev_abs_rate: np.ndarray = None
    interior_mass: list = field(default_factory=list)


class FluxAccumulator:
    """Time-integrated current through sphere patches R*Sigma, several R at once.

    Feed (t, psi) samples in time order; rates between consecutive samples are
    combined by the trapezoid rule.  Tracks the signed integral of j.dA (net
    outflow) and of |j.dA| (total crossing activity) separately, plus the
    probability mass remaining inside each ball.
    """

    def __init__(self, grid: GridSpec, partition: PatchPartition, radii,
                 n_polar=8, n_azimuth=8):
        self.grid = grid
        self.partition = partition
        r_cell = grid.radius_grid().ravel()
        self.spheres = []
        for R in radii:
            check_sphere_fits(grid, R)
            quad = SphereQuadrature(partition, R, n_polar, n_azimuth)
            sph = FluxSphere(
                radius=float(R),
                quad=quad,
                sampler=TrilinearSampler(grid, quad.points),
                interior=np.nonzero(r_cell < R)[0],
            )
            sph.signed = np.zeros(partition.n_patches)
            sph.absolute = np.zeros(partition.n_patches)
            self.spheres.append(sph)
        self.times = []
        self._prev_t = None

    def add_sample(self, t, psi: WaveFunction):
        j = current(psi)
        rho_flat = psi.density().ravel()
        dt = None if self._prev_t is None else t - self._prev_t
        for sph in self.spheres:
            jn = sph.sampler.sample_stack(j)       # (3, n_nodes)
            f = np.sum(jn * sph.quad.normals.T, axis=0)
            signed_rate = sph.quad.patch_sums(f)
            abs_rate = sph.quad.patch_sums(np.abs(f))
            if dt is not None:
                sph.signed += 0.5 * dt * (sph.prev_signed_rate + signed_rate)
                sph.absolute += 0.5 * dt * (sph.prev_abs_rate + abs_rate)
            sph.prev_signed_rate = signed_rate
            sph.prev_abs_rate = abs_rate
            sph.interior_mass.append(float(np.sum(rho_flat[sph.interior]) * self.grid.cell_volume))
        self.times.append(t)
        self._prev_t = t

    def interior_masses(self):
        """Latest mass inside each ball, keyed by radius."""
        return {sph.radius: sph.interior_mass[-1] for sph in self.spheres}

    def results(self):
        """{radius: (signed_per_patch, absolute_per_patch, interior_mass_trace)}."""
        return {
            sph.radius: (sph.signed.copy(), sph.absolute.copy(), np.asarray(sph.interior_mass))
            for sph in self.spheres
        }


def continuity_residual(psi0: WaveFunction, psi1: WaveFunction, radius,
                        partition: PatchPartition, n_polar=8, n_azimuth=8):
    """Discrete-continuity check over one step on a ball of the given radius.

    Compares the change of mass inside the ball with the net flux through its
    surface, using the midpoint current; returns the absolute residual.
    Purely diagnostic: quantifies the combined quadrature/time-step error of
    the flux machinery.
    """
    g = psi0.grid
    check_sphere_fits(g, radius)
    dt = psi1.time_label - psi0.time_label
    inside = g.radius_grid() < radius
    dmass = float(np.sum((psi1.density() - psi0.density())[inside]) * g.cell_volume)
    quad = SphereQuadrature(partition, radius, n_polar, n_azimuth)
    sampler = TrilinearSampler(g, quad.points)
    j_mid = 0.5 * (current(psi0) + current(psi1))
    jn = sampler.sample_stack(j_mid)
    f = np.sum(jn * quad.normals.T, axis=0)
    outflow = float(np.sum(quad.patch_sums(f)))
    return abs(dmass + dt * outflow)


_REPORT_COLUMNS = (
    "sigma_momentum",
    "sigma_T",
    "sigma_cone",
    "sigma_flux",
    "sigma_absflux",
    "err_estimate",
)


@dataclass
class CrossSectionReport:
    """Per-patch table of the cross-section functionals for one detection radius."""

    partition: PatchPartition
    radius: float
    columns: dict
    metadata: dict = field(default_factory=dict)

    def column(self, name):
        npatch = self.partition.n_patches
        v = self.columns.get(name)
        return np.full(npatch, np.nan) if v is None else np.asarray(v, dtype=float)

    def write_csv(self, path):
        cols = [self.column(name) for name in _REPORT_COLUMNS]
        with open(path, "w") as fh:
            fh.write("patch_id,theta_lo,theta_hi,phi_lo,phi_hi," + ",".join(_REPORT_COLUMNS) + "\n")
            for i in range(self.partition.n_patches):
                t0, t1, p0, p1 = self.partition.bounds(i)
                vals = [i, t0, t1, p0, p1] + [c[i] for c in cols]
                fh.write("%d," % vals[0] + ",".join("%.17g" % v for v in vals[1:]) + "\n")

    @staticmethod
    def read_csv(path):
        with open(path) as fh:
            header = fh.readline().strip().split(",")
            rows = [line.strip().split(",") for line in fh if line.strip()]
        expected = ["patch_id", "theta_lo", "theta_hi", "phi_lo", "phi_hi"] + list(_REPORT_COLUMNS)
        if header != expected:
            raise SchemaMismatch(f"unexpected report header {header}")
        data = np.array([[float(v) for v in row] for row in rows])
        theta_edges = np.append(data[:, 1], data[-1, 2])
        # recover the partition shape: phi sectors repeat within each band
        n_phi = int(np.sum(data[:, 1] == data[0, 1]))
        bands = np.concatenate([data[::n_phi, 1], [data[-1, 2]]])
        part = PatchPartition(n_phi=n_phi, theta_edges=bands)
        columns = {name: data[:, 5 + j] for j, name in enumerate(_REPORT_COLUMNS)}
        return CrossSectionReport(part, np.nan, columns)


def compare_reports(a: CrossSectionReport, b: CrossSectionReport, column="sigma_momentum"):
    """Max absolute and relative per-patch difference of one column."""
    if a.partition.n_patches != b.partition.n_patches or not np.allclose(
        a.partition.theta_edges, b.partition.theta_edges
    ):
        raise SchemaMismatch("patch partitions differ")
    va, vb = a.column(column), b.column(column)
    diff = np.abs(va - vb)
    scale = np.maximum(np.abs(va), np.abs(vb))
    with np.errstate(divide="ignore", invalid="ignore"):
        rel = np.where(scale > 0, diff / scale, 0.0)
    return float(np.max(diff)), float(np.max(rel))


def fas_defect(report: CrossSectionReport, reference="sigma_momentum",
               others=("sigma_cone", "sigma_flux"), floor=1e-3):
    """Worst relative disagreement against the reference column.

    Patches where the reference is below floor are skipped (they carry no
    statistically meaningful signal).
    """
    ref = report.column(reference)
    keep = ref > floor
    worst = 0.0
    for name in others:
        v = report.column(name)
        if np.all(np.isnan(v)):
            continue
        if np.any(keep):
            worst = max(worst, float(np.max(np.abs(v[keep] - ref[keep]) / ref[keep])))
    return worst
