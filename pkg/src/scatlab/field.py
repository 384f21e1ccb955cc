"""Wave functions on a uniform periodic 3-D grid.

Natural units (hbar = m = 1) throughout.  Position-space amplitudes are
stored so that the discrete norm  sum |psi|^2 dx^3  equals the continuum
L2 norm; momentum-space amplitudes use the unitary Fourier convention
psihat(k) = (2 pi)^(-3/2) * integral psi(x) exp(-i k.x) d^3x, so that
Plancherel holds exactly on the lattice.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .errors import GridMismatchError, GridResolutionError

# Fraction of the Nyquist momentum that packet content may occupy.
ANTIALIAS_MARGIN = 0.9


@dataclass(frozen=True)
class GridSpec:
    """Uniform n^3 grid on the origin-centered box [-n dx/2, n dx/2)^3."""

    n: int
    dx: float

    def __post_init__(self):
        if self.n <= 0 or self.n % 2 != 0:
            raise GridResolutionError(f"n must be a positive even integer, got {self.n}")
        if self.dx <= 0:
            raise GridResolutionError(f"dx must be positive, got {self.dx}")

    @property
    def box_length(self):
        return self.n * self.dx

    @property
    def half_extent(self):
        return 0.5 * self.n * self.dx

    @property
    def axis(self):
        """Position coordinates along one axis, ascending, includes 0."""
        return (np.arange(self.n) - self.n // 2) * self.dx

    @property
    def k_axis(self):
        """Momentum lattice along one axis, ascending (symmetric Brillouin zone)."""
        return (np.arange(self.n) - self.n // 2) * self.dk

    @property
    def k_axis_fft(self):
        """Momentum lattice in numpy FFT ordering (for diagonal operators)."""
        return 2.0 * np.pi * np.fft.fftfreq(self.n, d=self.dx)

    @property
    def dk(self):
        return 2.0 * np.pi / (self.n * self.dx)

    @property
    def k_max(self):
        return np.pi / self.dx

    @property
    def cell_volume(self):
        return self.dx**3

    @property
    def k_cell_volume(self):
        return self.dk**3

    def meshgrid(self):
        a = self.axis
        return np.meshgrid(a, a, a, indexing="ij")

    def k_meshgrid_fft(self):
        k = self.k_axis_fft
        return np.meshgrid(k, k, k, indexing="ij")

    def radius_grid(self):
        x, y, z = self.meshgrid()
        return np.sqrt(x * x + y * y + z * z)


def _check_same_grid(a, b):
    if a.grid != b.grid:
        raise GridMismatchError(f"grids differ: {a.grid} vs {b.grid}")


@dataclass
class WaveFunction:
    """Position-space state psi_t on a GridSpec; amp is indexed [ix, iy, iz]."""

    grid: GridSpec
    amp: np.ndarray
    time_label: float = 0.0

    def copy(self):
        return WaveFunction(self.grid, self.amp.copy(), self.time_label)

    def norm_squared(self):
        return float(np.sum(np.abs(self.amp) ** 2).real * self.grid.cell_volume)

    def norm(self):
        return float(np.sqrt(self.norm_squared()))

    def density(self):
        """rho(x) = |psi(x)|^2, the quantum equilibrium density."""
        return np.abs(self.amp) ** 2


@dataclass
class MomentumAmplitude:
    """Momentum-space amplitude on the dual lattice, indexed ascending in k."""

    grid: GridSpec
    amp: np.ndarray

    def copy(self):
        return MomentumAmplitude(self.grid, self.amp.copy())

    def norm_squared(self):
        return float(np.sum(np.abs(self.amp) ** 2).real * self.grid.k_cell_volume)

    def density(self):
        """|psihat(k)|^2, the momentum distribution."""
        return np.abs(self.amp) ** 2

    def mean_momentum(self):
        rho = self.density()
        w = float(np.sum(rho))
        k = self.grid.k_axis
        return np.array(
            [
                np.sum(rho.sum(axis=(1, 2)) * k),
                np.sum(rho.sum(axis=(0, 2)) * k),
                np.sum(rho.sum(axis=(0, 1)) * k),
            ]
        ) / w


@dataclass(frozen=True)
class GaussianPacketSpec:
    """Gaussian packet phi_y: center y, mean momentum k0, position width s."""

    center: tuple
    mean_momentum: tuple
    width: float


def make_gaussian_packet(spec: GaussianPacketSpec, grid: GridSpec) -> WaveFunction:
    """Normalized packet  phi(x) ~ exp(i k0.x - |x - y|^2 / (2 s^2)).

    Preconditions: the packet must be resolvable (s >= 3 dx) and its momentum
    content must stay inside the anti-aliasing margin of the Brillouin zone.
    """
    s = spec.width
    k0 = np.asarray(spec.mean_momentum, dtype=float)
    y = np.asarray(spec.center, dtype=float)
    if s < 2.5 * grid.dx:
        raise GridResolutionError(
            f"packet width {s} below resolvability bound 2.5 dx = {2.5 * grid.dx}"
        )
    k_extent = float(np.linalg.norm(k0)) + 3.0 / s
    if k_extent > ANTIALIAS_MARGIN * grid.k_max:
        raise GridResolutionError(
            f"momentum content |k0| + 3/s = {k_extent:.3f} exceeds "
            f"{ANTIALIAS_MARGIN:.2f} * k_max = {ANTIALIAS_MARGIN * grid.k_max:.3f}"
        )
    x, yy, z = grid.meshgrid()
    # minimum-image displacements keep the envelope exactly periodic on the
    # box (no seam at the boundary, and lattice symmetries hold exactly)
    L = grid.box_length
    dxs = [np.mod(c - y[i] + 0.5 * L, L) - 0.5 * L for i, c in enumerate((x, yy, z))]
    r2 = dxs[0] ** 2 + dxs[1] ** 2 + dxs[2] ** 2
    phase = k0[0] * x + k0[1] * yy + k0[2] * z
    amp = np.exp(1j * phase - r2 / (2.0 * s * s))
    amp /= np.sqrt(np.sum(np.abs(amp) ** 2) * grid.cell_volume)
    return WaveFunction(grid, amp, 0.0)


def to_momentum(psi: WaveFunction) -> MomentumAmplitude:
    """Unitary discrete Fourier transform, output ascending in k."""
    g = psi.grid
    f = np.fft.fftshift(np.fft.fftn(np.fft.ifftshift(psi.amp)))
    return MomentumAmplitude(g, f * (g.cell_volume / (2.0 * np.pi) ** 1.5))


def from_momentum(psihat: MomentumAmplitude) -> WaveFunction:
    """Inverse of to_momentum (exact round trip up to float rounding)."""
    g = psihat.grid
    f = np.fft.fftshift(np.fft.ifftn(np.fft.ifftshift(psihat.amp)))
    return WaveFunction(g, f * ((2.0 * np.pi) ** 1.5 / g.cell_volume), 0.0)


def translate(psi: WaveFunction, shift) -> WaveFunction:
    """Translate psi by the vector shift via the spectral phase e^{-i k.shift}.

    Exact (to rounding) for shifts that are integer multiples of dx.
    """
    g = psi.grid
    shift = np.asarray(shift, dtype=float)
    k = g.k_axis_fft
    ph = np.exp(-1j * shift[0] * k)[:, None, None] \
        * np.exp(-1j * shift[1] * k)[None, :, None] \
        * np.exp(-1j * shift[2] * k)[None, None, :]
    amp = np.fft.ifftn(np.fft.fftn(psi.amp) * ph)
    return WaveFunction(g, amp, psi.time_label)


def density_in_region(psi: WaveFunction, region) -> float:
    """Probability  sum_{x in region} |psi|^2 dx^3  for a predicate region(x, y, z)."""
    x, y, z = psi.grid.meshgrid()
    mask = region(x, y, z)
    return float(np.sum(np.abs(psi.amp[mask]) ** 2) * psi.grid.cell_volume)


def half_space_mass_outside(psihat: MomentumAmplitude, k0) -> float:
    """Fraction of |psihat|^2 outside the half space {k : k.k0 >= 0}.

    Surrogate for the strict-support condition on prepared beam states.
    """
    k0 = np.asarray(k0, dtype=float)
    k = psihat.grid.k_axis
    kx, ky, kz = np.meshgrid(k, k, k, indexing="ij")
    rho = psihat.density()
    outside = (kx * k0[0] + ky * k0[1] + kz * k0[2]) < 0
    return float(np.sum(rho[outside]) / np.sum(rho))


_HEADER = struct.Struct("<qdd")  # n, dx, time_label


def save_wavefunction(psi: WaveFunction, path):
    """Binary dump: header (n, dx, t), then interleaved re/im doubles, x fastest."""
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(psi.grid.n, psi.grid.dx, psi.time_label))
        # transpose so that flattening in C order makes x the fastest index
        a = np.ascontiguousarray(np.transpose(psi.amp, (2, 1, 0)))
        inter = np.empty(a.size * 2, dtype="<f8")
        inter[0::2] = a.real.ravel()
        inter[1::2] = a.imag.ravel()
        inter.tofile(fh)


def load_wavefunction(path) -> WaveFunction:
    with open(path, "rb") as fh:
        n, dx, t = _HEADER.unpack(fh.read(_HEADER.size))
        inter = np.fromfile(fh, dtype="<f8", count=2 * n**3)
    a = (inter[0::2] + 1j * inter[1::2]).reshape(n, n, n)
    return WaveFunction(GridSpec(int(n), float(dx)), np.transpose(a, (2, 1, 0)).copy(), float(t))


def plancherel_residual(psi: WaveFunction) -> float:
    """Relative defect between position- and momentum-space norms."""
    a = psi.norm_squared()
    b = to_momentum(psi).norm_squared()
    return abs(a - b) / a
