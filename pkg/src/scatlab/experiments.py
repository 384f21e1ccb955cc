"""Named end-to-end experiments combining the modules into report artifacts.

Each experiment takes a (JSON-friendly) config dict, writes its CSV/JSON
artifacts into an output directory, and returns a summary dict with the
headline comparison numbers.  All experiments are deterministic for a fixed
config (stochastic ones through the configured seed).
"""

from __future__ import annotations

import json
import os
import time

import numpy as np
from scipy.special import erfcx

from . import potential as pot
from .beam import BeamSpec, condition_c_estimate, run_beam
from .bohm import BohmConfig, chi_square_pvalue, run_trajectories
from .crosssec import (
    CrossSectionReport,
    FluxAccumulator,
    continuity_residual,
    sigma_cone,
    sigma_momentum,
)
from .errors import ConfigError
from .field import (
    GaussianPacketSpec,
    GridSpec,
    WaveFunction,
    make_gaussian_packet,
    to_momentum,
)
from .patches import PatchPartition
from .propagate import PropagationConfig, propagate_steps
from .stationary import (
    ajs_identity_check,
    born1_T,
    born1_amplitude,
    phase_shifts,
    sigma_diff_from_T,
    sigma_diff_patches,
    square_well_delta0,
)

EXPERIMENTS = ("fas", "cones", "bohm", "stationary", "ajs", "beam", "full-chain")


# ---------------------------------------------------------------------------
# analytic reference: free Gaussian packet, per-patch momentum-cone masses

def free_gaussian_patch_masses(s, k0_mag, partition: PatchPartition, n_nodes=64):
    """Exact per-patch mass of |phihat|^2 for a Gaussian packet with k0 = k0_mag * z.

    |phihat(k)|^2 = (s^2/pi)^{3/2} exp(-s^2 |k - k0|^2); the radial integral
    has a closed form in erfcx, the polar integral is done by Gauss-Legendre
    (the integrand is smooth), and the azimuthal integral is trivial.
    """
    alpha = s * s

    def g(c):
        # int_0^inf k^2 rho(k, c) dk  with  c = cos(theta); erfcx keeps the
        # backward hemisphere (m < 0) free of overflow
        m = k0_mag * c
        damp = np.exp(-alpha * k0_mag**2)
        radial = (m * m + 0.5 / alpha) * (np.sqrt(np.pi) / (2.0 * np.sqrt(alpha))) * erfcx(
            -np.sqrt(alpha) * m
        ) * damp + (m / (2.0 * alpha)) * damp
        return (alpha / np.pi) ** 1.5 * radial

    x, w = np.polynomial.legendre.leggauss(n_nodes)
    out = np.empty(partition.n_patches)
    dphi = 2.0 * np.pi / partition.n_phi
    for b in range(partition.n_theta):
        c_lo = np.cos(partition.theta_edges[b + 1])
        c_hi = np.cos(partition.theta_edges[b])
        c = 0.5 * (c_hi - c_lo) * x + 0.5 * (c_hi + c_lo)
        band = np.sum(0.5 * (c_hi - c_lo) * w * g(c))
        out[b * partition.n_phi : (b + 1) * partition.n_phi] = band * dphi
    return out


# ---------------------------------------------------------------------------
# config plumbing

FAS_DEFAULTS = {
    "grid": {"n": 96, "dx": 0.35},
    "packet": {"width": 1.0, "k0": 5.0},
    # band edges sit where the momentum density is far below the signal floor:
    # at finite R the flux direction is smeared by the packet's transverse
    # spread (about s / R in angle), so a patch boundary placed inside the
    # signal would leak mass between neighbors at a level no detection radius
    # that fits the box can resolve
    "partition": {
        "n_phi": 4,
        "theta_edges": [0.0, 0.7, 1.1, 1.5707963267948966, 2.0, 2.6, 3.141592653589793],
    },
    "pad_factor": 2,
    "radii": [8.0, 12.0],
    "dt_flux": 0.04,
    "t_flux": 5.0,
    "cone_times": [3.0, 3.75, 4.5],
    "signal_floor": 1e-3,
    # slow broad packet for the outgoing-flux defect: the fast packet above
    # recrosses the spheres only at the 1e-9 quadrature-noise level, so the
    # defect trend in R would be meaningless for it.  The inward-current
    # episodes live where the initial density tail is non-negligible, which
    # sets the radii: the defect falls like the tail (1.5e-4 at R=3, 5e-9 at
    # R=4.5, float noise at 6); spheres close to the periodic boundary would
    # instead pick up wrap interference that grows with R
    "recross": {
        "k0": 1.0,
        "width": 1.0,
        "radii": [3.0, 4.5, 6.0],
        "dt": 0.05,
        "t_end": 7.5,
    },
}

BOHM_DEFAULTS = {
    "grid": {"n": 80, "dx": 0.5},
    "packet": {"width": 1.5, "k0": 3.0, "z0": -5.0},
    "potential": {"kind": "gaussian_bump", "v0": 0.1, "range": 1.0},
    "partition": {"n_theta": 6, "n_phi": 4},
    "radius": 8.0,
    "dt": 0.02,
    "t_end": 7.0,
    "stride": 5,
    "n_traj": 10000,
    "seed": 20230817,
    "equivariance_time": 3.5,
}

STATIONARY_DEFAULTS = {
    "potential": {"kind": "gaussian_bump", "v0": 0.1, "range": 1.0},
    "k": 5.0,
    "n_theta_scan": 181,
    "well": {"v0": -1.0, "range": 1.0, "k_list": [0.5, 1.0, 2.0, 5.0]},
    "partition": {"n_theta": 8, "n_phi": 4},
}

AJS_DEFAULTS = {
    "potential": {"kind": "gaussian_bump", "v0": 0.1, "range": 1.0},
    "k0": 5.0,
    "sigma_k": 1.0,
    "out_theta_deg": 120.0,
    "n_a": 48,
    "n_polar": 32,
    "n_azimuth": 64,
    "translation": [0.7, -0.3, 0.4],
}

BEAM_DEFAULTS = {
    "grid": {"n": 96, "dx": 0.4},
    "packet": {"width": 2.0, "k0": 1.5},
    "potential": {"kind": "gaussian_bump", "v0": 0.05, "range": 0.25},
    "partition": {"n_theta": 8, "n_phi": 4},
    "upstream": 12.0,
    "half_width": 12.0,
    "n_side": 9,
    "dt": 0.016,
    "t_max": 26.0,
    # stopping thresholds sized to the torus: spreading images of the packet
    # re-cross the interaction ball late in the run, which floors the
    # interaction mass near 4e-4 around t = 20 and then drives it back up.
    # sigma_T plateaus over t = 18..22, so we stop there rather than chase an
    # unreachable 1e-4.
    "delta_int": 8e-4,
    "tol_out": 2e-5,
    "s_trail": [1.4, 1.7, 2.0],
    "s_trail_n_side": 5,
    "r_trail": [9.0, 12.0, 15.0],
    "w_trail": [3.0, 6.0, 9.0, 12.0],
    "l_trail": [3.0, 6.0, 12.0],
    "flux_t_end": 24.0,
    "flux_stride": 5,
    "half_cell_shift": True,
}

FULL_CHAIN_DEFAULTS = {
    "grid": {"n": 64, "dx": 0.5},
    "packet": {"width": 1.6, "k0": 1.5},
    "potential": {"kind": "gaussian_bump", "v0": 0.05, "range": 0.25},
    "partition": {"n_theta": 4, "n_phi": 4},
    "upstream": 6.0,
    "half_width": 4.0,
    "n_side": 3,
    "dt": 0.03,
    "t_max": 30.0,
    "n_traj": 2000,
    "seed": 7,
    "radius": 9.0,
    "t_traj": 12.0,
    "stride": 5,
}

_DEFAULTS = {
    "fas": FAS_DEFAULTS,
    "cones": FAS_DEFAULTS,
    "bohm": BOHM_DEFAULTS,
    "stationary": STATIONARY_DEFAULTS,
    "ajs": AJS_DEFAULTS,
    "beam": BEAM_DEFAULTS,
    "full-chain": FULL_CHAIN_DEFAULTS,
}


def default_config(experiment):
    if experiment not in _DEFAULTS:
        raise ConfigError(f"unknown experiment {experiment!r}; expected one of {EXPERIMENTS}")
    return json.loads(json.dumps(_DEFAULTS[experiment]))


def merge_config(experiment, overrides=None):
    """Defaults for the experiment, updated (one nesting level deep) by overrides."""
    cfg = default_config(experiment)
    for key, val in (overrides or {}).items():
        if isinstance(val, dict) and isinstance(cfg.get(key), dict):
            cfg[key].update(val)
        else:
            cfg[key] = val
    return cfg


def _partition(cfg):
    p = cfg["partition"]
    if "theta_edges" in p:
        return PatchPartition(n_phi=p["n_phi"], theta_edges=p["theta_edges"])
    return PatchPartition(n_theta=p["n_theta"], n_phi=p["n_phi"])


def _potential(cfg):
    p = cfg["potential"]
    return pot.PotentialSpec(p["kind"], p.get("v0", 0.0), p.get("range", 1.0))


def _write_json(path, data):
    with open(path, "w") as fh:
        json.dump(data, fh, indent=2, sort_keys=True, default=float)
        fh.write("\n")


def _jsonable(x):
    if isinstance(x, np.ndarray):
        return [float(v) for v in x.ravel()]
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, (np.floating, np.integer)):
        return float(x)
    return x


# ---------------------------------------------------------------------------
# free-packet run: flux-across-surfaces and scattering-into-cones

def _embed_in_padded_grid(psi: WaveFunction, factor):
    """Zero-pad the box by an integer factor (exact for a compactly supported packet)."""
    g = psi.grid
    big = GridSpec(g.n * factor, g.dx)
    amp = np.zeros((big.n,) * 3, dtype=complex)
    lo = (big.n - g.n) // 2
    amp[lo : lo + g.n, lo : lo + g.n, lo : lo + g.n] = psi.amp
    return WaveFunction(big, amp, psi.time_label)


def run_fas(cfg, outdir, progress=None):
    """Free-packet comparison of the flux, cone, and momentum cross sections.

    The packet is prepared on the configured grid; position-space functionals
    (flux through R-spheres, cone masses) are evaluated on a zero-padded copy
    of the box so that no wrapped mass re-enters the detection region inside
    the time window.  The momentum functional is compared against the analytic
    per-patch masses of the Gaussian.
    """
    os.makedirs(outdir, exist_ok=True)
    grid = GridSpec(cfg["grid"]["n"], cfg["grid"]["dx"])
    part = _partition(cfg)
    s = cfg["packet"]["width"]
    k0 = cfg["packet"]["k0"]
    packet = make_gaussian_packet(GaussianPacketSpec((0, 0, 0), (0, 0, k0), s), grid)

    analytic = free_gaussian_patch_masses(s, k0, part)
    sig_mom = sigma_momentum(to_momentum(packet), part)

    big = _embed_in_padded_grid(packet, int(cfg["pad_factor"]))
    bg = big.grid
    f0 = np.fft.fftn(np.fft.ifftshift(big.amp))
    kx, ky, kz = bg.k_meshgrid_fft()
    k2 = kx * kx + ky * ky + kz * kz
    del kx, ky, kz

    def psi_at(t):
        amp = np.fft.fftshift(np.fft.ifftn(np.exp(-0.5j * t * k2) * f0))
        return WaveFunction(bg, amp, t)

    radii = [float(R) for R in cfg["radii"]]
    flux = FluxAccumulator(bg, part, radii)
    times = np.arange(0.0, cfg["t_flux"] + 0.5 * cfg["dt_flux"], cfg["dt_flux"])
    prev_psi = None
    cont_res = None
    for it, t in enumerate(times):
        psi = psi_at(t)
        flux.add_sample(t, psi)
        if it == len(times) // 2:
            prev_psi = psi
        elif prev_psi is not None and cont_res is None:
            cont_res = continuity_residual(prev_psi, psi, min(radii), part)
            prev_psi = None
        if progress:
            progress("flux", t)

    snapshots = [(t, psi_at(t)) for t in cfg["cone_times"]]
    cone = sigma_cone(snapshots, part)

    flux_res = flux.results()
    floor = cfg["signal_floor"]
    keep = analytic > floor
    summary = {
        "config": cfg,
        "sigma_momentum_analytic": analytic,
        "sigma_momentum_grid": sig_mom,
        "sigma_cone": cone.sigma,
        "cone_cauchy_defect": cone.cauchy_defect,
        "continuity_residual": cont_res,
        "per_radius": {},
    }
    for R in radii:
        signed, absolute, interior = flux_res[R]
        rel = np.abs(signed[keep] - analytic[keep]) / analytic[keep]
        tot_s, tot_a = float(np.sum(signed)), float(np.sum(absolute))
        summary["per_radius"][R] = {
            "sigma_flux": signed,
            "sigma_absflux": absolute,
            "interior_mass_final": float(interior[-1]),
            "flux_vs_momentum_max_rel": float(np.max(rel)),
            "outgoing_defect": (tot_a - tot_s) / tot_s,
        }
        report = CrossSectionReport(
            part,
            R,
            {
                "sigma_momentum": sig_mom,
                "sigma_cone": cone.sigma,
                "sigma_flux": signed,
                "sigma_absflux": absolute,
                "err_estimate": np.full(part.n_patches, float(interior[-1])),
            },
        )
        report.write_csv(os.path.join(outdir, "fas_R%g.csv" % R))

    cone_rel = np.abs(cone.sigma[keep] - analytic[keep]) / analytic[keep]
    summary["cone_vs_momentum_max_rel"] = float(np.max(cone_rel))
    summary["outgoing_defects_by_radius"] = [
        summary["per_radius"][R]["outgoing_defect"] for R in radii
    ]
    summary["recross"] = _recross_run(cfg, grid, part, progress=progress)
    _write_json(os.path.join(outdir, "summary.json"), _jsonable(summary))
    return summary


def _recross_run(cfg, grid, part, progress=None):
    """Outgoing-flux defect of a slow broad packet at a list of radii.

    The slow packet genuinely recrosses the smaller spheres while it spreads,
    so (absolute - signed) / signed is well above quadrature noise and its
    decrease with the detection radius is meaningful.
    """
    rc = cfg["recross"]
    packet = make_gaussian_packet(
        GaussianPacketSpec((0, 0, 0), (0, 0, rc["k0"]), rc["width"]), grid
    )
    f0 = np.fft.fftn(np.fft.ifftshift(packet.amp))
    kx, ky, kz = grid.k_meshgrid_fft()
    k2 = kx * kx + ky * ky + kz * kz
    del kx, ky, kz
    radii = [float(R) for R in rc["radii"]]
    flux = FluxAccumulator(grid, part, radii)
    for t in np.arange(0.0, rc["t_end"] + 0.5 * rc["dt"], rc["dt"]):
        amp = np.fft.fftshift(np.fft.ifftn(np.exp(-0.5j * t * k2) * f0))
        flux.add_sample(t, WaveFunction(grid, amp, t))
        if progress:
            progress("recross", t)
    res = flux.results()
    defects = []
    for R in radii:
        signed, absolute, _ = res[R]
        defects.append(float((absolute.sum() - signed.sum()) / signed.sum()))
    return {
        "radii": radii,
        "outgoing_defects": defects,
        "defect_at_largest_radius": defects[-1],
        "decreasing_in_radius": bool(
            all(defects[i + 1] < defects[i] for i in range(len(defects) - 1))
        ),
    }


def run_cones(cfg, outdir, progress=None):
    """Scattering-into-cones on its own: cone traces vs the analytic momentum masses."""
    os.makedirs(outdir, exist_ok=True)
    grid = GridSpec(cfg["grid"]["n"], cfg["grid"]["dx"])
    part = _partition(cfg)
    s = cfg["packet"]["width"]
    k0 = cfg["packet"]["k0"]
    packet = make_gaussian_packet(GaussianPacketSpec((0, 0, 0), (0, 0, k0), s), grid)
    analytic = free_gaussian_patch_masses(s, k0, part)

    big = _embed_in_padded_grid(packet, int(cfg["pad_factor"]))
    bg = big.grid
    f0 = np.fft.fftn(np.fft.ifftshift(big.amp))
    kx, ky, kz = bg.k_meshgrid_fft()
    k2 = kx * kx + ky * ky + kz * kz
    del kx, ky, kz
    snapshots = []
    for t in cfg["cone_times"]:
        amp = np.fft.fftshift(np.fft.ifftn(np.exp(-0.5j * t * k2) * f0))
        snapshots.append((t, WaveFunction(bg, amp, t)))
        if progress:
            progress("cone", t)
    cone = sigma_cone(snapshots, part)
    keep = analytic > cfg["signal_floor"]
    rel = np.abs(cone.sigma[keep] - analytic[keep]) / analytic[keep]
    summary = {
        "config": cfg,
        "sigma_momentum_analytic": analytic,
        "sigma_cone": cone.sigma,
        "cone_traces": cone.traces,
        "cone_times": cone.times,
        "cone_cauchy_defect": cone.cauchy_defect,
        "cone_vs_momentum_max_rel": float(np.max(rel)),
    }
    with open(os.path.join(outdir, "cone_traces.csv"), "w") as fh:
        fh.write("t," + ",".join("patch%d" % i for i in range(part.n_patches)) + "\n")
        for t, row in zip(cone.times, cone.traces):
            fh.write("%.17g," % t + ",".join("%.17g" % v for v in row) + "\n")
    _write_json(os.path.join(outdir, "summary.json"), _jsonable(summary))
    return summary


# ---------------------------------------------------------------------------
# Bohmian ensemble vs flux

def run_bohm(cfg, outdir, progress=None):
    """Trajectory ensemble through a weak bump: sigma_bohm vs sigma_flux, crossing laws."""
    os.makedirs(outdir, exist_ok=True)
    grid = GridSpec(cfg["grid"]["n"], cfg["grid"]["dx"])
    part = _partition(cfg)
    vspec = _potential(cfg)
    s = cfg["packet"]["width"]
    k0 = cfg["packet"]["k0"]
    z0 = cfg["packet"]["z0"]
    packet = make_gaussian_packet(GaussianPacketSpec((0, 0, z0), (0, 0, k0), s), grid)
    prop = PropagationConfig(dt=cfg["dt"], t_max=cfg["t_end"] + 1.0)
    R = float(cfg["radius"])
    bohm_cfg = BohmConfig(n_traj=int(cfg["n_traj"]), seed=int(cfg["seed"]))

    flux = FluxAccumulator(grid, part, [R])
    t_eq = cfg["equivariance_time"]
    eq_snapshot = {}

    def observer(t, amp):
        flux.add_sample(t, WaveFunction(grid, amp, t))
        if "amp" not in eq_snapshot and t >= t_eq - 1e-9:
            eq_snapshot["amp"] = amp.copy()
            eq_snapshot["t"] = t
        if progress:
            progress("step", t)

    steps = propagate_steps(packet, vspec, prop, cfg["t_end"])
    result = run_trajectories(
        packet,
        steps,
        bohm_cfg,
        part,
        [R],
        stride=int(cfg["stride"]),
        carrier=(0.0, 0.0, k0),
        observer=observer,
    )

    signed, absolute, interior = flux.results()[R]
    p, mc_err = result.sigma_bohm(R)
    xn = result.crossing_excess_bound(R)
    budget = 3.0 * (mc_err + xn)
    diff = np.abs(p - signed)

    # crossing-count identities over the full sphere
    ns_mean, ns_se, n_mean, n_se = result.crossing_moments(R)
    tot_signed = float(np.sum(signed))
    tot_abs = float(np.sum(absolute))

    # equivariance: octant masses of |psi_t|^2 vs trajectory positions at t_eq
    psi_eq = WaveFunction(grid, eq_snapshot["amp"], eq_snapshot["t"])
    x, y, z = grid.meshgrid()
    # octant boundaries on cell edges, not through cell centers: the grid
    # planes carry O(dx) mass that continuous trajectory positions would
    # split evenly, so thresholding at 0 would bias the grid masses one-sided
    h = 0.5 * grid.dx
    oct_idx_grid = ((x > h).astype(int) * 4 + (y > h).astype(int) * 2 + (z > h)).ravel()
    oct_mass = np.bincount(oct_idx_grid, weights=psi_eq.density().ravel(), minlength=8)
    oct_mass /= oct_mass.sum()
    # positions of the ensemble at (close to) the same instant are not stored;
    # rerun the sampler deterministically up to t_eq for the position snapshot
    steps2 = propagate_steps(packet, vspec, prop, eq_snapshot["t"])
    mid = run_trajectories(
        packet, steps2, bohm_cfg, part, [R], stride=int(cfg["stride"]),
        carrier=(0.0, 0.0, k0),
    )
    pos = mid.positions
    oct_traj = np.bincount(
        (pos[:, 0] > 0).astype(int) * 4 + (pos[:, 1] > 0).astype(int) * 2 + (pos[:, 2] > 0),
        minlength=8,
    )
    p_eq, chi_stat, dof = chi_square_pvalue(oct_traj, oct_mass)

    result.write_csv(os.path.join(outdir, "bohm_exits.csv"), R)
    report = CrossSectionReport(
        part,
        R,
        {
            "sigma_flux": signed,
            "sigma_absflux": absolute,
            "err_estimate": budget,
        },
    )
    report.write_csv(os.path.join(outdir, "flux_R%g.csv" % R))

    summary = {
        "config": cfg,
        "sigma_bohm": p,
        "sigma_flux": signed,
        "mc_err": mc_err,
        "xn_bound": xn,
        "budget": budget,
        "bohm_vs_flux_max_ratio": float(np.max(diff / np.maximum(budget, 1e-300))),
        "abort_fraction": result.abort_fraction(),
        "ns_mean": ns_mean,
        "ns_se": ns_se,
        "n_mean": n_mean,
        "n_se": n_se,
        "flux_signed_total": tot_signed,
        "flux_absolute_total": tot_abs,
        "ns_vs_signed_sigmas": abs(ns_mean - tot_signed) / max(ns_se, 1e-300),
        "n_vs_absolute_sigmas": abs(n_mean - tot_abs) / max(n_se, 1e-300),
        "equivariance_pvalue": p_eq,
        "equivariance_chi2": chi_stat,
        "equivariance_dof": dof,
        "interior_mass_final": float(interior[-1]),
    }
    _write_json(os.path.join(outdir, "summary.json"), _jsonable(summary))
    return summary


# ---------------------------------------------------------------------------
# stationary-theory oracles

def run_stationary(cfg, outdir, progress=None):
    """Born-1 amplitude vs exact partial waves; square-well s-wave closed form."""
    os.makedirs(outdir, exist_ok=True)
    vspec = _potential(cfg)
    k = cfg["k"]
    ps = phase_shifts(vspec, k)
    thetas = np.linspace(0.0, np.pi, int(cfg["n_theta_scan"]))
    f_pw = ps.amplitude(thetas)
    f_b1 = born1_amplitude(vspec, k, thetas)
    i_pw = np.abs(f_pw) ** 2
    i_b1 = np.abs(f_b1) ** 2
    # relative difference of |f|^2, normalized by the peak (forward) value so
    # that the deep diffraction tail cannot dominate the sup
    sup_rel = float(np.max(np.abs(i_pw - i_b1)) / np.max(i_pw))
    bp = pot.born_parameter(vspec, k)

    well = cfg["well"]
    well_defects = []
    for kw in well["k_list"]:
        d_exact = square_well_delta0(well["v0"], well["range"], kw)
        psw = phase_shifts(
            pot.square_well(well["v0"], well["range"]), kw, l_max=0,
            r_match=well["range"] + 2.0,
        )
        well_defects.append(abs(psw.deltas[0] - d_exact))

    part = _partition(cfg)
    sig_b1 = sigma_diff_patches(lambda th: born1_amplitude(vspec, k, th), part)
    sig_pw = sigma_diff_patches(ps.amplitude, part)

    with open(os.path.join(outdir, "amplitudes.csv"), "w") as fh:
        fh.write("theta,born1_re,born1_im,pw_re,pw_im\n")
        for th, b, p in zip(thetas, f_b1, f_pw):
            fh.write("%.17g,%.17g,%.17g,%.17g,%.17g\n" % (th, b.real, b.imag, p.real, p.imag))

    summary = {
        "config": cfg,
        "k": k,
        "n_partial_waves": len(ps.deltas),
        "phase_shifts": ps.deltas,
        "born_parameter": bp,
        "sup_rel_intensity_diff": sup_rel,
        "optical_theorem_residual": ps.optical_theorem_residual(),
        "square_well_delta0_defects": well_defects,
        "square_well_delta0_max_defect": float(np.max(well_defects)),
        "sigma_diff_born1": sig_b1,
        "sigma_diff_partial_wave": sig_pw,
        "total_cross_section_pw": ps.total_cross_section(),
    }
    _write_json(os.path.join(outdir, "summary.json"), _jsonable(summary))
    return summary


def run_ajs(cfg, outdir, progress=None):
    """Impact-plane averaging identity for the Born-1 kernel, both sides by quadrature."""
    os.makedirs(outdir, exist_ok=True)
    vspec = _potential(cfg)
    k0 = float(cfg["k0"])
    th = np.deg2rad(cfg["out_theta_deg"])
    k_out = k0 * np.array([np.sin(th), 0.0, np.cos(th)])
    res = ajs_identity_check(
        vspec,
        (0.0, 0.0, k0),
        cfg["sigma_k"],
        k_out,
        n_a=int(cfg["n_a"]),
        n_polar=int(cfg["n_polar"]),
        n_azimuth=int(cfg["n_azimuth"]),
        translation=cfg.get("translation"),
    )
    summary = {
        "config": cfg,
        "lhs_plane_integral": res.lhs,
        "rhs_shell_integral": res.rhs,
        "rel_defect": res.rel_defect,
        "half_space_mass": res.half_space_mass,
        "translation_shift_rel": res.translation_shift,
    }
    _write_json(os.path.join(outdir, "summary.json"), _jsonable(summary))
    return summary


# ---------------------------------------------------------------------------
# beam averaging campaign

def _beam_spec(cfg, width=None, n_side=None, half_width=None, upstream=None, shift=0.0):
    grid = GridSpec(cfg["grid"]["n"], cfg["grid"]["dx"])
    part = _partition(cfg)
    prop = PropagationConfig(
        dt=cfg["dt"],
        t_max=cfg["t_max"],
        delta_int=cfg.get("delta_int", 1e-4),
        tol_out=cfg.get("tol_out", 1e-4),
    )
    return BeamSpec(
        k0=cfg["packet"]["k0"],
        packet_width=cfg["packet"]["width"] if width is None else width,
        half_width=cfg["half_width"] if half_width is None else half_width,
        n_side=cfg["n_side"] if n_side is None else n_side,
        upstream=cfg["upstream"] if upstream is None else upstream,
        grid=grid,
        potential=_potential(cfg),
        prop=prop,
        partition=part,
        lattice_shift=shift,
    )


def _backward_mask(part: PatchPartition):
    centers = part.centers()
    return centers[:, 2] < 0.0


def _beam_flux_trail(cfg, radii, progress=None):
    """Per-patch time-integrated flux at several detection radii for the y = 0 run."""
    spec = _beam_spec(cfg)
    packet = make_gaussian_packet(
        GaussianPacketSpec((0.0, 0.0, -spec.upstream), (0.0, 0.0, spec.k0), spec.packet_width),
        spec.grid,
    )
    flux = FluxAccumulator(spec.grid, spec.partition, radii)
    stride = int(cfg["flux_stride"])
    for i, (t, amp) in enumerate(
        propagate_steps(packet, spec.potential, spec.prop, cfg["flux_t_end"])
    ):
        if i % stride == 0:
            flux.add_sample(t, WaveFunction(spec.grid, amp, t))
            if progress:
                progress("flux", t)
    return flux.results()


def run_beam_experiment(cfg, outdir, progress=None):
    """The full impact-parameter averaging campaign.

    Stages (each skipped when its artifact already exists, so an interrupted
    campaign resumes where it stopped):

      main     9x9 lattice beam average (ledger + window checks)
      shifted  the same lattice displaced by half a cell along the diagonal
      s-trail  coarser sub-lattice at decreasing packet widths
      r-trail  detection-radius sequence of the y = 0 flux
      c-trail  in-state preparation defect over an upstream-distance sequence
    """
    os.makedirs(outdir, exist_ok=True)
    part = _partition(cfg)
    backward = _backward_mask(part)
    t0 = time.time()

    def log(msg):
        if progress:
            progress("stage", msg)
        with open(os.path.join(outdir, "campaign.log"), "a") as fh:
            fh.write("[%8.1fs] %s\n" % (time.time() - t0, msg))

    def stage(name, fn):
        path = os.path.join(outdir, name + ".json")
        if os.path.exists(path):
            with open(path) as fh:
                return json.load(fh)
        log("start " + name)
        data = _jsonable(fn())
        _write_json(path, data)
        log("done " + name)
        return data

    spec = _beam_spec(cfg)

    def main_stage():
        res = run_beam(spec, progress=lambda key, d: log("main run %s t=%.1f" % (key, d["t_final"])))
        bf = res.check_window()
        axis = spec.lattice_axis()
        rows = [
            [axis[i], axis[j], res.run_id_by_offset.get((i, j), -1)] + list(map(float, sig))
            for (i, j), sig in sorted(res.sigma_by_offset.items())
        ]
        return {
            "beam_sum": res.beam_sum(),
            "window_sums": {str(W): res.beam_sum(window=W) for W in cfg["w_trail"]},
            "boundary_fraction": bf,
            "n_runs": res.n_runs,
            "rows": rows,
        }

    main = stage("main", main_stage)

    def shifted_stage():
        half_cell = spec.half_width / (spec.n_side - 1)
        sspec = _beam_spec(cfg, shift=half_cell)
        res = run_beam(sspec, progress=lambda key, d: log("shifted run %s" % (key,)))
        res.write_ledger(os.path.join(outdir, "beam_ledger_shifted.csv"))
        return {"beam_sum": res.beam_sum(), "n_runs": res.n_runs}

    shifted = stage("shifted", shifted_stage) if cfg.get("half_cell_shift") else None

    def s_stage():
        n_sub = int(cfg["s_trail_n_side"])
        sums = {}
        for s in cfg["s_trail"][:-1]:
            sub = _beam_spec(cfg, width=s, n_side=n_sub)
            res = run_beam(sub, progress=lambda key, d: log("s=%g run %s" % (s, key)))
            sums[str(s)] = res.beam_sum()
        # the widest packet reuses the main lattice restricted to the sub-lattice
        step = (spec.n_side - 1) // (n_sub - 1)
        axis = spec.lattice_axis()
        sub_cell = (2.0 * spec.half_width / (n_sub - 1)) ** 2
        main_rows = {
            (row[0], row[1]): np.asarray(row[3:], dtype=float) for row in main["rows"]
        }
        total = np.zeros(part.n_patches)
        for i in range(0, spec.n_side, step):
            for j in range(0, spec.n_side, step):
                total += main_rows[(axis[i], axis[j])]
        sums[str(cfg["s_trail"][-1])] = total * sub_cell
        return {"sums": sums}

    s_trail = stage("s_trail", s_stage)

    r_trail = stage(
        "r_trail",
        lambda: {
            str(R): sig
            for R, (sig, _, _) in _beam_flux_trail(
                cfg, [float(R) for R in cfg["r_trail"]],
                progress=lambda key, d: None,
            ).items()
        },
    )

    def c_stage():
        out = {}
        for L in cfg["l_trail"]:
            lspec = _beam_spec(cfg, upstream=L)
            t_back = max(4.0, 2.0 * L / 3.0)
            offsets = [(0.0, 0.0), (6.0, 0.0), (12.0, 0.0)]
            total, sampled = condition_c_estimate(lspec, offsets, t_back)
            log("condition-c L=%g total=%.3e" % (L, total))
            out[str(L)] = {"estimate": total, "sampled": {"%g" % r: d for r, d in sampled.items()}}
        return out

    c_trail = stage("c_trail", c_stage)

    # ---- write the per-offset ledger (with the condition-c defect column)
    sampled = c_trail[str(cfg["l_trail"][-1])]["sampled"]
    rs = np.array(sorted(float(r) for r in sampled))
    ds = np.array([sampled["%g" % r] for r in rs])
    npatch = part.n_patches
    with open(os.path.join(outdir, "beam_ledger.csv"), "w") as fh:
        fh.write(
            "y1,y2,"
            + ",".join(f"sigma_patch{p}" for p in range(npatch))
            + ",defect_c,run_id\n"
        )
        for row in main["rows"]:
            y1, y2, rid = row[0], row[1], int(row[2])
            d = float(np.interp(np.hypot(y1, y2), rs, ds))
            fh.write(
                "%.17g,%.17g," % (y1, y2)
                + ",".join("%.17g" % v for v in row[3:])
                + ",%.17g,%d\n" % (d, rid)
            )

    # ---- assemble the ledgered trails and headline comparisons
    vspec = _potential(cfg)
    k0 = cfg["packet"]["k0"]
    born = sigma_diff_from_T(
        lambda ko, ki: born1_T(vspec, ko, ki), part, (0.0, 0.0, k0)
    )
    beam_sum = np.asarray(main["beam_sum"])
    back_rel = np.abs(beam_sum[backward] - born[backward]) / born[backward]

    def l1(a, b):
        return float(np.sum(np.abs(np.asarray(a) - np.asarray(b))))

    w_keys = [str(W) for W in cfg["w_trail"]]
    w_sums = [np.asarray(main["window_sums"][k]) for k in w_keys]
    w_defects = [l1(w_sums[i + 1], w_sums[i]) for i in range(len(w_sums) - 1)]

    s_keys = [str(s) for s in cfg["s_trail"]]
    s_sums = [np.asarray(s_trail["sums"][k]) for k in s_keys]
    s_defects = [
        l1(s_sums[i + 1][backward], s_sums[i][backward]) for i in range(len(s_sums) - 1)
    ]

    r_keys = [str(float(R)) for R in cfg["r_trail"]]
    r_sigs = [np.asarray(r_trail[k]) for k in r_keys]
    r_defects = [l1(r_sigs[i + 1], r_sigs[i]) for i in range(len(r_sigs) - 1)]

    c_vals = [c_trail[str(L)]["estimate"] for L in cfg["l_trail"]]

    totals = np.asarray([float(np.sum(row[3:])) for row in main["rows"]])
    offsets = np.asarray([row[:2] for row in main["rows"]])
    shadow = np.max(np.abs(offsets), axis=1) <= cfg["half_width"] / 2.0 + 1e-9
    variation = float(np.max(totals[shadow]) / np.min(totals[shadow]))

    summary = {
        "config": cfg,
        "beam_sum": beam_sum,
        "born_target": born,
        "backward_patch_rel_defects": back_rel,
        "backward_max_rel_defect": float(np.max(back_rel)),
        "trail_R": {"values": r_keys, "cauchy_defects": r_defects},
        "trail_W": {"values": w_keys, "cauchy_defects": w_defects},
        "trail_s": {"values": s_keys, "cauchy_defects": s_defects},
        "trail_L_condition_c": {"values": [str(L) for L in cfg["l_trail"]], "estimates": c_vals},
        "boundary_fraction": main["boundary_fraction"],
        "sigma_total_variation_in_shadow": variation,
        "n_runs_main": main["n_runs"],
    }
    if shifted is not None:
        shift_sum = np.asarray(shifted["beam_sum"])
        summary["half_cell_shift_rel"] = float(
            abs(np.sum(shift_sum) - np.sum(beam_sum)) / np.sum(beam_sum)
        )
        summary["half_cell_shift_rel_backward"] = float(
            abs(np.sum(shift_sum[backward]) - np.sum(beam_sum[backward]))
            / np.sum(beam_sum[backward])
        )
    _write_json(os.path.join(outdir, "summary.json"), _jsonable(summary))
    return summary


# ---------------------------------------------------------------------------
# full chain: beam average + per-y Bohmian subsample + Born-1 target

def run_full_chain(cfg, outdir, progress=None):
    """End-to-end pipeline on a reduced scale.

    Runs a small beam average, integrates a Bohmian ensemble for the central
    beam particle (comparing first-exit statistics against its flux), and
    compares the beam average against the Born-1 patch quadrature.
    """
    os.makedirs(outdir, exist_ok=True)
    part = _partition(cfg)
    vspec = _potential(cfg)
    spec = _beam_spec(cfg)
    res = run_beam(spec, progress=None)
    res.write_ledger(os.path.join(outdir, "beam_ledger.csv"))
    beam_sum = res.beam_sum()
    born = sigma_diff_from_T(
        lambda ko, ki: born1_T(vspec, ko, ki), part, (0.0, 0.0, cfg["packet"]["k0"])
    )
    backward = _backward_mask(part)
    back_rel = np.abs(beam_sum[backward] - born[backward]) / born[backward]

    packet = make_gaussian_packet(
        GaussianPacketSpec(
            (0.0, 0.0, -spec.upstream), (0.0, 0.0, spec.k0), spec.packet_width
        ),
        spec.grid,
    )
    R = float(cfg["radius"])
    flux = FluxAccumulator(spec.grid, part, [R])
    bohm_cfg = BohmConfig(n_traj=int(cfg["n_traj"]), seed=int(cfg["seed"]))
    steps = propagate_steps(packet, vspec, spec.prop, cfg["t_traj"])
    result = run_trajectories(
        packet,
        steps,
        bohm_cfg,
        part,
        [R],
        stride=int(cfg["stride"]),
        carrier=(0.0, 0.0, spec.k0),
        observer=lambda t, amp: flux.add_sample(t, WaveFunction(spec.grid, amp, t)),
    )
    signed, absolute, interior = flux.results()[R]
    p, mc_err = result.sigma_bohm(R)
    xn = result.crossing_excess_bound(R)
    budget = 3.0 * (mc_err + xn)
    result.write_csv(os.path.join(outdir, "bohm_exits.csv"), R)

    summary = {
        "config": cfg,
        "beam_sum": beam_sum,
        "born_target": born,
        "backward_max_rel_defect": float(np.max(back_rel)),
        "sigma_bohm": p,
        "sigma_flux": signed,
        "bohm_vs_flux_max_ratio": float(
            np.max(np.abs(p - signed) / np.maximum(budget, 1e-300))
        ),
        "abort_fraction": result.abort_fraction(),
    }
    _write_json(os.path.join(outdir, "summary.json"), _jsonable(summary))
    return summary


_RUNNERS = {
    "fas": run_fas,
    "cones": run_cones,
    "bohm": run_bohm,
    "stationary": run_stationary,
    "ajs": run_ajs,
    "beam": run_beam_experiment,
    "full-chain": run_full_chain,
}


def run_experiment(name, cfg, outdir, progress=None):
    if name not in _RUNNERS:
        raise ConfigError(f"unknown experiment {name!r}; expected one of {EXPERIMENTS}")
    return _RUNNERS[name](cfg, outdir, progress=progress)
