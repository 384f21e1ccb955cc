"""Bohmian trajectories and crossing statistics on detection spheres.

Trajectories solve dX/dt = v(X, t) with the velocity field v = Im(grad psi / psi),
positions drawn from |psi_0|^2 (quantum equilibrium).  For each detection
radius R the module records, per surface patch:

  * the first exit point X_B of every trajectory (the detection statistic),
  * the number of outward and inward crossings N = n_out + n_in and the
    signed count N_s = n_out - n_in,

so that P(X_B in R Sigma) can be compared with the flux integral, with the
rigorous bound |P - E[N_s]| <= (E[N] - E[N_s]) / 2 as the systematic budget.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.stats import chi2

from .errors import ExcessNodeAborts, NodeProximityError
from .field import GridSpec, WaveFunction
from .patches import PatchPartition


def sample_positions(psi: WaveFunction, n, rng):
    """Draw n points from |psi|^2 dx^3: inverse CDF over cells, uniform in-cell."""
    g = psi.grid
    w = psi.density().ravel()
    cdf = np.cumsum(w)
    cdf /= cdf[-1]
    cells = np.searchsorted(cdf, rng.random(n))
    ix, iy, iz = np.unravel_index(cells, (g.n, g.n, g.n))
    corner = (np.stack([ix, iy, iz], axis=1) - g.n // 2) * g.dx
    return corner + (rng.random((n, 3)) - 0.5) * g.dx


def _gradient(amp, grid: GridSpec):
    """Spectral gradient of a complex field; returns (3, n, n, n)."""
    f = np.fft.fftn(amp)
    k = grid.k_axis_fft
    shapes = [(-1, 1, 1), (1, -1, 1), (1, 1, -1)]
    return np.stack([np.fft.ifftn((1j * k).reshape(s) * f) for s in shapes])


class _PointSampler:
    """Trilinear gather of several complex grids at one set of points."""

    def __init__(self, grid: GridSpec, points):
        n = grid.n
        u = points / grid.dx + n // 2
        i0 = np.floor(u).astype(np.int64)
        f = u - i0
        self.idx = []
        self.wts = []
        for cx in (0, 1):
            for cy in (0, 1):
                for cz in (0, 1):
                    ix = np.mod(i0[:, 0] + cx, n)
                    iy = np.mod(i0[:, 1] + cy, n)
                    iz = np.mod(i0[:, 2] + cz, n)
                    self.idx.append((ix * n + iy) * n + iz)
                    self.wts.append(
                        (f[:, 0] if cx else 1.0 - f[:, 0])
                        * (f[:, 1] if cy else 1.0 - f[:, 1])
                        * (f[:, 2] if cz else 1.0 - f[:, 2])
                    )

    def gather(self, flat_field):
        out = 0.0
        for idx, w in zip(self.idx, self.wts):
            out = out + w * flat_field[idx]
        return out


@dataclass
class FieldSnapshot:
    """Demodulated psi and grad psi on the grid, flattened for gathering.

    Both fields carry a common factor exp(-i k_c . x) (the carrier phase),
    which cancels in the ratio grad psi / psi.  Removing the carrier before
    trilinear interpolation eliminates the dominant phase-oscillation error
    of the velocity field for a packet with mean momentum k_c.
    """

    amp: np.ndarray       # (n^3,) complex, psi * exp(-i k_c . x)
    grad: np.ndarray      # (3, n^3) complex, grad psi * exp(-i k_c . x)

    @staticmethod
    def build(amp, grid: GridSpec, demod=None):
        """demod = (conj_phase_grid, k_c) from make_demodulator, or None."""
        if demod is None:
            g = _gradient(amp, grid)
            return FieldSnapshot(amp.ravel(), g.reshape(3, -1))
        phase, kc = demod
        env = amp * phase
        g = _gradient(env, grid)
        for c in range(3):
            g[c] += 1j * kc[c] * env
        return FieldSnapshot(env.ravel(), g.reshape(3, -1))

    @staticmethod
    def blend(a, b, w):
        return FieldSnapshot((1.0 - w) * a.amp + w * b.amp, (1.0 - w) * a.grad + w * b.grad)


def make_demodulator(grid: GridSpec, carrier):
    """(exp(-i k_c . x) grid, k_c) with k_c snapped to the momentum lattice.

    Snapping keeps the demodulated envelope exactly periodic on the box.
    """
    kc = np.round(np.asarray(carrier, dtype=float) / grid.dk) * grid.dk
    x, y, z = grid.meshgrid()
    return np.exp(-1j * (kc[0] * x + kc[1] * y + kc[2] * z)), kc


def velocity_at(points, snap: FieldSnapshot, grid: GridSpec, node_floor):
    """Guidance velocity Im(grad psi / psi) at scattered points.

    Returns (v, ok) where ok flags points safely away from nodes; velocities at
    flagged points are zeroed rather than trusted.
    """
    s = _PointSampler(grid, points)
    psi = s.gather(snap.amp)
    ok = np.abs(psi) >= node_floor
    safe = np.where(ok, psi, 1.0)
    v = np.stack([(s.gather(snap.grad[c]) / safe).imag for c in range(3)], axis=1)
    v[~ok] = 0.0
    return v, ok


def velocity_field(psi: WaveFunction, points, node_floor_rel=1e-6):
    """Guidance velocity at scattered points; strict about nodes.

    Raises NodeProximityError when any requested point sits where |psi| is
    below node_floor_rel * max |psi|.
    """
    snap = FieldSnapshot.build(psi.amp, psi.grid)
    floor = node_floor_rel * float(np.max(np.abs(psi.amp)))
    v, ok = velocity_at(np.atleast_2d(np.asarray(points, dtype=float)), snap, psi.grid, floor)
    if not np.all(ok):
        raise NodeProximityError(f"{int(np.sum(~ok))} points within the node floor {floor:.3e}")
    return v


@dataclass
class BohmConfig:
    n_traj: int = 10000
    seed: int = 0
    node_floor_rel: float = 1e-6   # node floor relative to max |psi_0|
    abort_budget: float = 1e-3     # max tolerated fraction of aborted trajectories


@dataclass
class SphereTally:
    """Crossing statistics of one detection sphere."""

    radius: float
    n_out: np.ndarray              # outward crossings per patch
    n_in: np.ndarray               # inward crossings per patch
    first_exit_patch: np.ndarray   # per trajectory, -1 while still inside
    first_exit_time: np.ndarray
    traj_out: np.ndarray = None    # outward crossings per trajectory (whole sphere)
    traj_in: np.ndarray = None

    def exit_counts(self, partition: PatchPartition):
        p = self.first_exit_patch
        return np.bincount(p[p >= 0], minlength=partition.n_patches)


def _sphere_crossings(x0, x1, radius):
    """Segment-sphere intersections, exact for the straight step x0 -> x1.

    Returns (traj_idx, s, outward) for every crossing parameter s in (0, 1].
    """
    d = x1 - x0
    a = np.sum(d * d, axis=1)
    b = 2.0 * np.sum(x0 * d, axis=1)
    c = np.sum(x0 * x0, axis=1) - radius * radius
    disc = b * b - 4.0 * a * c
    hit = (disc > 0.0) & (a > 0.0)
    idx = np.nonzero(hit)[0]
    if len(idx) == 0:
        return (np.empty(0, dtype=np.int64), np.empty(0), np.empty(0, dtype=bool))
    sq = np.sqrt(disc[idx])
    out_i, out_s, out_dir = [], [], []
    for root in ((-b[idx] - sq) / (2.0 * a[idx]), (-b[idx] + sq) / (2.0 * a[idx])):
        sel = (root > 0.0) & (root <= 1.0)
        ii = idx[sel]
        ss = root[sel]
        xc = x0[ii] + ss[:, None] * (x1[ii] - x0[ii])
        # outward when the radial component of the step is positive
        outward = np.sum(xc * (x1[ii] - x0[ii]), axis=1) > 0.0
        out_i.append(ii)
        out_s.append(ss)
        out_dir.append(outward)
    return np.concatenate(out_i), np.concatenate(out_s), np.concatenate(out_dir)


@dataclass
class BohmResult:
    config: BohmConfig
    partition: PatchPartition
    tallies: dict                  # radius -> SphereTally
    n_aborted: int
    n_effective: int
    times: np.ndarray
    positions: np.ndarray          # final trajectory positions (n_eff only meaningful)

    def abort_fraction(self):
        return self.n_aborted / self.config.n_traj

    def sigma_bohm(self, radius):
        """(per-patch first-exit probability, binomial MC standard error)."""
        t = self.tallies[radius]
        counts = t.exit_counts(self.partition)
        n = self.n_effective
        p = counts / n
        return p, np.sqrt(np.maximum(p * (1.0 - p), 1.0 / n) / n)

    def signed_crossing_rate(self, radius):
        """E[N_s] per patch (signed crossings per trajectory)."""
        t = self.tallies[radius]
        return (t.n_out - t.n_in) / self.n_effective

    def crossing_moments(self, radius):
        """(E[N_s], SE, E[N], SE) over the whole sphere from per-trajectory counts."""
        t = self.tallies[radius]
        ns = (t.traj_out - t.traj_in).astype(float)
        n = (t.traj_out + t.traj_in).astype(float)
        m = len(ns)
        return (
            float(np.mean(ns)),
            float(np.std(ns) / np.sqrt(m)),
            float(np.mean(n)),
            float(np.std(n) / np.sqrt(m)),
        )

    def crossing_excess_bound(self, radius):
        """(E[N] - E[N_s]) / 2 per patch: bound on |P(X_B in Sigma) - E[N_s]|."""
        t = self.tallies[radius]
        return t.n_in / self.n_effective

    def write_csv(self, path, radius):
        t = self.tallies[radius]
        counts = t.exit_counts(self.partition)
        p, err = self.sigma_bohm(radius)
        xn = self.crossing_excess_bound(radius)
        with open(path, "w") as fh:
            fh.write("patch_id,n_exits,n_out,n_in,sigma_bohm,mc_err,xn_bound\n")
            for i in range(self.partition.n_patches):
                fh.write(
                    "%d,%d,%d,%d,%.17g,%.17g,%.17g\n"
                    % (i, counts[i], t.n_out[i], t.n_in[i], p[i], err[i], xn[i])
                )


class TrajectoryEnsemble:
    """Advances all trajectories through one split-step interval at a time.

    The wave function between consecutive grid snapshots is interpolated
    linearly in time; the positions take one classical RK4 step per interval.
    Steps that come too close to a node are retried with two half steps and
    aborted (trajectory frozen and excluded) if still unsafe.
    """

    def __init__(self, psi0: WaveFunction, cfg: BohmConfig, partition: PatchPartition,
                 radii, carrier=None):
        self.grid = psi0.grid
        self.cfg = cfg
        self.partition = partition
        self.demod = None if carrier is None else make_demodulator(psi0.grid, carrier)
        rng = np.random.default_rng(np.random.PCG64(cfg.seed))
        self.x = sample_positions(psi0, cfg.n_traj, rng)
        self.active = np.ones(cfg.n_traj, dtype=bool)
        self.node_floor = cfg.node_floor_rel * float(np.max(np.abs(psi0.amp)))
        n = cfg.n_traj
        self.tallies = {
            float(R): SphereTally(
                float(R),
                np.zeros(partition.n_patches, dtype=np.int64),
                np.zeros(partition.n_patches, dtype=np.int64),
                np.full(n, -1, dtype=np.int64),
                np.full(n, np.nan),
                np.zeros(n, dtype=np.int64),
                np.zeros(n, dtype=np.int64),
            )
            for R in radii
        }
        self.times = []

    def _rk4(self, x, dt, snap0, snap_mid, snap1):
        g, floor = self.grid, self.node_floor
        k1, ok1 = velocity_at(x, snap0, g, floor)
        k2, ok2 = velocity_at(x + 0.5 * dt * k1, snap_mid, g, floor)
        k3, ok3 = velocity_at(x + 0.5 * dt * k2, snap_mid, g, floor)
        k4, ok4 = velocity_at(x + dt * k3, snap1, g, floor)
        x_new = x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        return x_new, ok1 & ok2 & ok3 & ok4

    def advance(self, t0, dt, snap0: FieldSnapshot, snap1: FieldSnapshot):
        idx = np.nonzero(self.active)[0]
        if len(idx) == 0:
            self.times.append(t0 + dt)
            return
        x0 = self.x[idx]
        snap_mid = FieldSnapshot.blend(snap0, snap1, 0.5)
        x1, ok = self._rk4(x0, dt, snap0, snap_mid, snap1)
        if not np.all(ok):
            # second chance: two half steps through quarter-blended fields
            bad = np.nonzero(~ok)[0]
            snap_q1 = FieldSnapshot.blend(snap0, snap1, 0.25)
            snap_q3 = FieldSnapshot.blend(snap0, snap1, 0.75)
            xa, oka = self._rk4(x0[bad], 0.5 * dt, snap0, snap_q1, snap_mid)
            xb, okb = self._rk4(xa, 0.5 * dt, snap_mid, snap_q3, snap1)
            x1[bad] = xb
            ok2 = oka & okb
            still = bad[~ok2]
            if len(still):
                self.active[idx[still]] = False
                x1[still] = x0[still]
        keep = self.active[idx]
        self._tally_crossings(idx[keep], x0[keep], x1[keep], t0, dt)
        self.x[idx] = x1
        self.times.append(t0 + dt)

    def _tally_crossings(self, traj_idx, x0, x1, t0, dt):
        for R, tally in self.tallies.items():
            ii, ss, outward = _sphere_crossings(x0, x1, R)
            if len(ii) == 0:
                continue
            xc = x0[ii] + ss[:, None] * (x1[ii] - x0[ii])
            patches = self.partition.classify(xc[:, 0], xc[:, 1], xc[:, 2])
            gi = traj_idx[ii]
            np.add.at(tally.n_out, patches[outward], 1)
            np.add.at(tally.n_in, patches[~outward], 1)
            np.add.at(tally.traj_out, gi[outward], 1)
            np.add.at(tally.traj_in, gi[~outward], 1)
            # first exits, earliest crossing per trajectory
            fresh = outward & (tally.first_exit_patch[gi] < 0)
            if np.any(fresh):
                order = np.argsort(ss[fresh])
                for j in np.nonzero(fresh)[0][order]:
                    g = traj_idx[ii[j]]
                    if tally.first_exit_patch[g] < 0:
                        tally.first_exit_patch[g] = patches[j]
                        tally.first_exit_time[g] = t0 + ss[j] * dt

    def finish(self) -> BohmResult:
        n_ab = int(np.sum(~self.active))
        if n_ab > self.cfg.abort_budget * self.cfg.n_traj:
            raise ExcessNodeAborts(
                f"{n_ab} of {self.cfg.n_traj} trajectories aborted near nodes "
                f"(budget {self.cfg.abort_budget:.1%})"
            )
        n_eff = self.cfg.n_traj - n_ab
        return BohmResult(
            self.cfg, self.partition, self.tallies, n_ab, n_eff,
            np.asarray(self.times), self.x.copy(),
        )


def run_trajectories(psi0: WaveFunction, step_iter, cfg: BohmConfig,
                     partition: PatchPartition, radii, stride=1,
                     carrier=None, observer=None) -> BohmResult:
    """Drive an ensemble along a (t, amp) iterator (e.g. propagate_steps).

    stride > 1 coarsens the trajectory step to every stride-th wave snapshot;
    carrier is the packet's mean momentum (enables demodulated interpolation);
    observer(t, amp), when given, sees every snapshot used (e.g. to co-feed a
    flux accumulator so both statistics share identical truncation).
    """
    ens = TrajectoryEnsemble(psi0, cfg, partition, radii, carrier=carrier)
    prev_t, prev_snap = None, None
    for i, (t, amp) in enumerate(step_iter):
        if i % stride:
            continue
        snap = FieldSnapshot.build(amp, psi0.grid, ens.demod)
        if prev_snap is not None:
            ens.advance(prev_t, t - prev_t, prev_snap, snap)
        prev_t, prev_snap = t, snap
        if observer is not None:
            observer(t, amp)
    return ens.finish()


def chi_square_pvalue(counts, probs, n_total=None, min_expected=5.0):
    """Goodness-of-fit p-value of patch counts against expected probabilities.

    Patches with expected count below min_expected are pooled into one bin.
    """
    counts = np.asarray(counts, dtype=float)
    probs = np.asarray(probs, dtype=float)
    if n_total is None:
        n_total = counts.sum()
    probs = probs / probs.sum()
    expected = n_total * probs
    big = expected >= min_expected
    obs = np.append(counts[big], counts[~big].sum())
    exp = np.append(expected[big], expected[~big].sum())
    # drop an empty pooled bin
    if exp[-1] <= 0:
        obs, exp = obs[:-1], exp[:-1]
    # rescale expectation to the observed total (counts need not sum to n_total
    # when some trajectories never exited)
    exp = exp * obs.sum() / exp.sum()
    stat = float(np.sum((obs - exp) ** 2 / np.maximum(exp, 1e-12)))
    dof = max(len(obs) - 1, 1)
    return float(chi2.sf(stat, dof)), stat, dof
