"""Partition of the unit sphere into polar bands x azimuthal sectors.

Patches are half-open in theta and phi so that they are disjoint and cover
S^2 exactly; each patch Sigma generates the momentum/position cone C_Sigma
and the sphere piece R*Sigma used by the cross-section functionals.
"""

from __future__ import annotations

import numpy as np

from .errors import GeometryError


class PatchPartition:
    def __init__(self, n_theta=8, n_phi=4, theta_edges=None):
        if theta_edges is None:
            theta_edges = np.linspace(0.0, np.pi, n_theta + 1)
        self.theta_edges = np.asarray(theta_edges, dtype=float)
        self.n_theta = len(self.theta_edges) - 1
        self.n_phi = int(n_phi)
        self.phi_edges = np.linspace(0.0, 2.0 * np.pi, self.n_phi + 1)
        self.n_patches = self.n_theta * self.n_phi

    @property
    def areas(self):
        """Solid angle per patch; sums to 4 pi."""
        band = np.cos(self.theta_edges[:-1]) - np.cos(self.theta_edges[1:])
        dphi = 2.0 * np.pi / self.n_phi
        return np.repeat(band, self.n_phi) * dphi

    def bounds(self, i):
        """(theta_lo, theta_hi, phi_lo, phi_hi) of patch i."""
        b, s = divmod(i, self.n_phi)
        return (
            self.theta_edges[b],
            self.theta_edges[b + 1],
            self.phi_edges[s],
            self.phi_edges[s + 1],
        )

    def centers(self):
        """Unit vectors at the (theta, phi) midpoints of every patch."""
        out = np.empty((self.n_patches, 3))
        for i in range(self.n_patches):
            t0, t1, p0, p1 = self.bounds(i)
            th, ph = 0.5 * (t0 + t1), 0.5 * (p0 + p1)
            out[i] = (np.sin(th) * np.cos(ph), np.sin(th) * np.sin(ph), np.cos(th))
        return out

    def classify(self, vx, vy, vz):
        """Patch index for each direction; -1 for the zero vector."""
        vx = np.asarray(vx, dtype=float)
        vy = np.asarray(vy, dtype=float)
        vz = np.asarray(vz, dtype=float)
        r = np.sqrt(vx * vx + vy * vy + vz * vz)
        zero = r == 0.0
        rsafe = np.where(zero, 1.0, r)
        theta = np.arccos(np.clip(vz / rsafe, -1.0, 1.0))
        band = np.clip(np.searchsorted(self.theta_edges, theta, side="right") - 1, 0, self.n_theta - 1)
        phi = np.mod(np.arctan2(vy, vx), 2.0 * np.pi)
        sector = np.minimum((phi / (2.0 * np.pi) * self.n_phi).astype(np.int64), self.n_phi - 1)
        idx = band * self.n_phi + sector
        return np.where(zero, -1, idx)

    def patch_of_direction(self, v):
        v = np.asarray(v, dtype=float)
        return int(self.classify(v[0:1], v[1:2], v[2:3])[0])

    def binner(self, vx, vy, vz, edge_tol=1e-9):
        """Precompiled weight binning for a fixed set of directions.

        Unlike classify (one patch per direction), grid binning must treat
        boundary coincidences symmetrically: lattice directions exactly on a
        sector edge (e.g. points with vy = 0) get half their weight in each
        adjacent sector, and directions on the polar axis (vx = vy = 0), where
        the azimuth is undefined, are spread evenly over all sectors of their
        band.  This keeps the binned masses exactly equivariant under the
        lattice rotations/reflections of the partition.
        """
        vx = np.asarray(vx, dtype=float).ravel()
        vy = np.asarray(vy, dtype=float).ravel()
        vz = np.asarray(vz, dtype=float).ravel()
        r = np.sqrt(vx * vx + vy * vy + vz * vz)
        zero = r == 0.0
        axis = (vx == 0.0) & (vy == 0.0) & ~zero
        theta = np.arccos(np.clip(vz / np.where(zero, 1.0, r), -1.0, 1.0))
        band = np.clip(
            np.searchsorted(self.theta_edges, theta, side="right") - 1, 0, self.n_theta - 1
        )
        phi = np.mod(np.arctan2(vy, vx), 2.0 * np.pi)
        width = 2.0 * np.pi / self.n_phi
        pos = phi / width
        sector = np.minimum(pos.astype(np.int64), self.n_phi - 1)
        # distance (in sectors) to the nearest sector edge
        frac = pos - np.round(pos)
        on_edge = (np.abs(frac) * width < edge_tol) & ~axis & ~zero
        lo = np.mod(np.round(pos).astype(np.int64) - 1, self.n_phi)
        hi = np.mod(lo + 1, self.n_phi)
        plain = ~axis & ~zero & ~on_edge
        idx_plain = (band * self.n_phi + sector)[plain]
        idx_lo = (band * self.n_phi + lo)[on_edge]
        idx_hi = (band * self.n_phi + hi)[on_edge]
        base_axis = (band * self.n_phi)[axis]
        n_patches, n_phi = self.n_patches, self.n_phi

        def bin_fn(weights):
            w = np.asarray(weights, dtype=float).ravel()
            out = np.bincount(idx_plain, weights=w[plain], minlength=n_patches)
            if len(idx_lo):
                half = 0.5 * w[on_edge]
                out += np.bincount(idx_lo, weights=half, minlength=n_patches)
                out += np.bincount(idx_hi, weights=half, minlength=n_patches)
            if len(base_axis):
                share = w[axis] / n_phi
                for s in range(n_phi):
                    out += np.bincount(base_axis + s, weights=share, minlength=n_patches)
            return out

        return bin_fn

    def bin_weights(self, vx, vy, vz, weights):
        """Sum weights into patches by direction (zero vector dropped)."""
        return self.binner(vx, vy, vz)(weights)


class SphereQuadrature:
    """Product Gauss-Legendre (polar) x trapezoid (azimuth) nodes on each patch.

    Patch-additive by construction; order-doubling gives a convergence check.
    """

    def __init__(self, partition: PatchPartition, radius, n_polar=8, n_azimuth=8):
        self.partition = partition
        self.radius = float(radius)
        pts, nrm, wts, pid = [], [], [], []
        gl_x, gl_w = np.polynomial.legendre.leggauss(n_polar)
        for i in range(partition.n_patches):
            t0, t1, p0, p1 = partition.bounds(i)
            c_lo, c_hi = np.cos(t1), np.cos(t0)  # ascending in cos(theta)
            cth = 0.5 * (c_hi - c_lo) * gl_x + 0.5 * (c_hi + c_lo)
            wc = 0.5 * (c_hi - c_lo) * gl_w
            phi = np.linspace(p0, p1, n_azimuth)
            wp = np.full(n_azimuth, (p1 - p0) / (n_azimuth - 1))
            wp[0] *= 0.5
            wp[-1] *= 0.5
            sth = np.sqrt(1.0 - cth**2)
            ux = sth[:, None] * np.cos(phi)[None, :]
            uy = sth[:, None] * np.sin(phi)[None, :]
            uz = np.broadcast_to(cth[:, None], ux.shape)
            n = np.stack([ux, uy, uz], axis=-1).reshape(-1, 3)
            w = (wc[:, None] * wp[None, :]).reshape(-1)
            pts.append(self.radius * n)
            nrm.append(n)
            wts.append(self.radius**2 * w)
            pid.append(np.full(len(w), i, dtype=np.int64))
        self.points = np.concatenate(pts)
        self.normals = np.concatenate(nrm)
        self.weights = np.concatenate(wts)
        self.patch_index = np.concatenate(pid)

    def patch_sums(self, node_values):
        """Integrate node samples patch by patch."""
        return np.bincount(
            self.patch_index, weights=self.weights * node_values, minlength=self.partition.n_patches
        )


def check_sphere_fits(grid, radius, margin=1.0):
    if radius + margin * grid.dx > grid.half_extent:
        raise GeometryError(
            f"sphere R={radius} does not fit inside the grid (half extent {grid.half_extent})"
        )
