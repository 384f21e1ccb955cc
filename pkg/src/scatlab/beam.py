"""Impact-parameter beam averaging of single-particle scattering probabilities.

A beam is modeled as one packet per point of a square lattice on the impact
plane perpendicular to the mean momentum k0 (along +z).  For each offset y the
packet is prepared upstream, evolved through the potential, and the scattered
momentum mass |psihat_out - psihat_in|^2 is binned into sphere patches.  The
lattice sum (weighted by the cell area) approximates the plane integral, which
for a weak potential reproduces 16 pi^4 |T_Born1|^2 per patch.

The lattice, potential, and packet are all symmetric under the 4-fold rotations
and reflections of the impact plane, so only one representative per symmetry
orbit needs an actual propagation run; the remaining offsets follow by
permuting azimuthal sectors.  This is an optimization only and can be turned
off (symmetry=False) to run every lattice point explicitly.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import potential as pot
from .crosssec import sigma_T
from .errors import ConfigError, WindowTooSmall
from .field import GaussianPacketSpec, GridSpec, make_gaussian_packet, to_momentum
from .patches import PatchPartition
from .propagate import PropagationConfig, out_state


@dataclass
class BeamSpec:
    """One beam experiment: lattice of packets aimed along +z at a central potential."""

    k0: float                       # beam momentum (along +z)
    packet_width: float             # position-space width s of each packet
    half_width: float               # lattice spans [-half_width, half_width]^2
    n_side: int                     # lattice points per side
    upstream: float                 # launch distance of the packet center below z = 0
    grid: GridSpec
    potential: pot.PotentialSpec
    prop: PropagationConfig
    partition: PatchPartition
    lattice_shift: float = 0.0      # rigid displacement of the lattice along both axes

    def lattice_axis(self):
        if self.n_side == 1:
            return np.array([self.lattice_shift])
        return np.linspace(-self.half_width, self.half_width, self.n_side) + self.lattice_shift

    @property
    def cell_area(self):
        if self.n_side == 1:
            return (2.0 * self.half_width) ** 2
        return (2.0 * self.half_width / (self.n_side - 1)) ** 2


def sample_offsets(spec: BeamSpec, n, rng):
    """Poisson model of beam arrivals: uniform offsets over the lattice window."""
    return (rng.random((n, 2)) * 2.0 - 1.0) * spec.half_width


def per_particle_sigma(spec: BeamSpec, y1, y2):
    """sigma_T per patch for the packet launched at impact offset (y1, y2).

    Returns (sigma_T_per_patch, diagnostics dict).
    """
    packet = make_gaussian_packet(
        GaussianPacketSpec((y1, y2, -spec.upstream), (0.0, 0.0, spec.k0), spec.packet_width),
        spec.grid,
    )
    psihat_in = to_momentum(packet)
    # the packet starts upstream, so the out-state stopping test is only armed
    # after the whole envelope has had time to cross the interaction region
    t_transit = (spec.upstream + pot.interaction_radius(spec.potential)
                 + 3.0 * spec.packet_width) / abs(spec.k0)
    res = out_state(packet, spec.potential, spec.prop, t_min=t_transit)
    sig = sigma_T(res.momentum_amplitude, psihat_in, spec.partition)
    diag = {
        "t_final": res.t_final,
        "cauchy_residual": res.cauchy_residual,
        "interaction_mass": res.interaction_mass,
        "total": float(sig.sum()),
    }
    return sig, diag


# ---------------------------------------------------------------------------
# 4-fold symmetry bookkeeping on the impact plane

def _d4_orbits(axis):
    """Orbit representatives of the square lattice under the dihedral group.

    Returns a list of (i, j) index pairs with i >= center, j >= center and
    axis[i] >= axis[j] (one fundamental wedge), plus, for every lattice point,
    the representative it maps to and the transformation (quarter turns m,
    reflection flag) carrying the representative onto it.
    """
    n = len(axis)
    c = (n - 1) / 2.0

    def canon(i, j):
        # coordinates relative to the center, canonicalized into the wedge
        a, b = i - c, j - c
        for m in range(4):
            aa, bb = a, b
            for _ in range(m):
                aa, bb = bb, -aa    # inverse quarter turn
            for refl in (False, True):
                x, y = (aa, bb) if not refl else (bb, aa)
                if x >= abs(y) - 1e-9 and y >= -1e-9:
                    return (int(round(x + c)), int(round(y + c))), m, refl
        raise AssertionError("wedge canonicalization failed")

    reps = {}
    mapping = {}
    for i in range(n):
        for j in range(n):
            rep, m, refl = canon(i, j)
            reps.setdefault(rep, []).append((i, j))
            mapping[(i, j)] = (rep, m, refl)
    return reps, mapping


def _sector_permutation(partition: PatchPartition, quarter_turns, reflect):
    """Patch permutation realizing a quarter-turn/reflection of the impact plane.

    perm[p_new] = p_old such that sigma_new[p_new] = sigma_old[p_old].
    """
    n_phi = partition.n_phi
    if n_phi % 4 != 0:
        raise ConfigError("symmetry reduction needs the sector count divisible by 4")
    q = n_phi // 4
    perm = np.empty(partition.n_patches, dtype=np.int64)
    for band in range(partition.n_theta):
        for s in range(n_phi):
            # the offset arises as rotation(quarter_turns) o reflection applied
            # to the representative, so undo the rotation first (phi -> phi -
            # quarter_turns * pi/2), then the diagonal reflection (phi ->
            # pi/2 - phi)
            s_old = (s - quarter_turns * q) % n_phi
            if reflect:
                s_old = (q - 1 - s_old) % n_phi
            perm[band * n_phi + s] = band * n_phi + s_old
    return perm


@dataclass
class BeamResult:
    spec: BeamSpec
    sigma_by_offset: dict            # (i, j) -> per-patch sigma_T
    diagnostics: dict                # (i, j) -> per-run diagnostics (runs only)
    n_runs: int
    run_id_by_offset: dict = field(default_factory=dict)   # (i, j) -> run index

    def beam_sum(self, window=None):
        """Cell-weighted lattice sum of sigma_T per patch.

        window restricts the sum to offsets with |y|_inf <= window.
        """
        axis = self.spec.lattice_axis()
        total = np.zeros(self.spec.partition.n_patches)
        for (i, j), sig in self.sigma_by_offset.items():
            if window is not None and max(abs(axis[i]), abs(axis[j])) > window + 1e-9:
                continue
            total += sig
        return total * self.spec.cell_area

    def boundary_fraction(self):
        """Share of the beam sum carried by the outermost lattice ring."""
        axis = self.spec.lattice_axis()
        edge = np.max(np.abs(axis))
        total = 0.0
        ring = 0.0
        for (i, j), sig in self.sigma_by_offset.items():
            s = float(sig.sum())
            total += s
            if max(abs(axis[i]), abs(axis[j])) > edge - 1e-9:
                ring += s
        return ring / max(total, 1e-300)

    def check_window(self, max_boundary_fraction=0.01):
        bf = self.boundary_fraction()
        if bf > max_boundary_fraction:
            raise WindowTooSmall(
                f"outermost lattice ring carries {bf:.2%} of the beam sum "
                f"(> {max_boundary_fraction:.0%}); enlarge the impact window"
            )
        return bf

    def total_by_offset(self):
        """(y1, y2, total sigma_T) rows for the whole lattice."""
        axis = self.spec.lattice_axis()
        rows = []
        for (i, j), sig in sorted(self.sigma_by_offset.items()):
            rows.append((axis[i], axis[j], float(sig.sum())))
        return rows

    def write_ledger(self, path, defect_by_offset=None):
        """Per-offset CSV: y1, y2, per-patch sigma_T, defect_c, run_id.

        defect_by_offset optionally maps (i, j) to the in-state preparation
        defect at that offset (written as nan when unknown); run_id identifies
        the propagation run that produced the row (symmetry-mapped offsets
        share the id of their orbit representative).
        """
        axis = self.spec.lattice_axis()
        npatch = self.spec.partition.n_patches
        with open(path, "w") as fh:
            fh.write(
                "y1,y2,"
                + ",".join(f"sigma_patch{p}" for p in range(npatch))
                + ",defect_c,run_id\n"
            )
            for (i, j), sig in sorted(self.sigma_by_offset.items()):
                d = np.nan
                if defect_by_offset is not None:
                    d = defect_by_offset.get((i, j), np.nan)
                rid = self.run_id_by_offset.get((i, j), -1)
                fh.write(
                    "%.17g,%.17g," % (axis[i], axis[j])
                    + ",".join("%.17g" % v for v in sig)
                    + ",%.17g,%d\n" % (d, rid)
                )

    def write_summary(self, path, extra=None):
        data = {
            "n_side": self.spec.n_side,
            "half_width": self.spec.half_width,
            "cell_area": self.spec.cell_area,
            "k0": self.spec.k0,
            "packet_width": self.spec.packet_width,
            "n_runs": self.n_runs,
            "boundary_fraction": self.boundary_fraction(),
            "beam_sum": [float(v) for v in self.beam_sum()],
        }
        if extra:
            data.update(extra)
        with open(path, "w") as fh:
            json.dump(data, fh, indent=2, sort_keys=True)
            fh.write("\n")


def run_beam(spec: BeamSpec, symmetry=True, progress=None) -> BeamResult:
    """Propagate the beam lattice and collect per-offset scattered mass.

    With symmetry=True only one representative per symmetry orbit is
    propagated and the others are filled in by sector permutation: the full
    4-fold dihedral group when the lattice is centered on the beam axis, and
    the diagonal reflection alone when the lattice is rigidly shifted along
    the diagonal (which preserves only that reflection).
    """
    axis = spec.lattice_axis()
    sigma_by_offset = {}
    diagnostics = {}
    run_ids = {}
    centered = bool(np.allclose(axis, -axis[::-1]))
    if symmetry and spec.n_side > 1 and centered:
        reps, mapping = _d4_orbits(axis)
        perms = {}
        for run_id, (rep, members) in enumerate(reps.items()):
            i, j = rep
            sig, diag = per_particle_sigma(spec, axis[i], axis[j])
            diagnostics[rep] = diag
            for (ii, jj) in members:
                _, m, refl = mapping[(ii, jj)]
                key = (m, refl)
                if key not in perms:
                    perms[key] = _sector_permutation(spec.partition, m, refl)
                sigma_by_offset[(ii, jj)] = sig[perms[key]]
                run_ids[(ii, jj)] = run_id
            if progress:
                progress(rep, diag)
    elif symmetry and spec.n_side > 1:
        # off-center lattice: only the swap (y1, y2) -> (y2, y1) survives
        perm = _sector_permutation(spec.partition, 0, True)
        run_id = 0
        for i in range(spec.n_side):
            for j in range(i, spec.n_side):
                sig, diag = per_particle_sigma(spec, axis[i], axis[j])
                diagnostics[(i, j)] = diag
                sigma_by_offset[(i, j)] = sig
                run_ids[(i, j)] = run_id
                if j > i:
                    sigma_by_offset[(j, i)] = sig[perm]
                    run_ids[(j, i)] = run_id
                if progress:
                    progress((i, j), diag)
                run_id += 1
    else:
        for run_id, (i, j) in enumerate(
            (i, j) for i in range(spec.n_side) for j in range(spec.n_side)
        ):
            sig, diag = per_particle_sigma(spec, axis[i], axis[j])
            sigma_by_offset[(i, j)] = sig
            diagnostics[(i, j)] = diag
            run_ids[(i, j)] = run_id
            if progress:
                progress((i, j), diag)
    return BeamResult(spec, sigma_by_offset, diagnostics, len(diagnostics), run_ids)


def condition_c_estimate(spec: BeamSpec, offsets, t_back):
    """Cell-weighted sum of in-state preparation defects over sample offsets.

    Estimates how far the prepared packets are from true in-asymptotes (the
    quantity whose vanishing justifies using the prepared state directly);
    reported as sum over the lattice of ||prepared - in_asymptote||^2 * cell
    area, extrapolated from the sampled offsets by nearest |y|.
    """
    from .propagate import in_state_defect

    axis = spec.lattice_axis()
    sampled = {}
    for (y1, y2) in offsets:
        packet = make_gaussian_packet(
            GaussianPacketSpec((y1, y2, -spec.upstream), (0.0, 0.0, spec.k0), spec.packet_width),
            spec.grid,
        )
        sampled[np.hypot(y1, y2)] = in_state_defect(packet, spec.potential, spec.prop, t_back)
    rs = np.array(sorted(sampled))
    ds = np.array([sampled[r] for r in rs])
    total = 0.0
    for i in range(spec.n_side):
        for j in range(spec.n_side):
            r = np.hypot(axis[i], axis[j])
            d = float(np.interp(r, rs, ds))
            total += d * d
    return total * spec.cell_area, sampled
