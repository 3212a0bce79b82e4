"""Diagnostics along trajectories: three-dimensional error terms, norm
monitors, decay fits and anchored inequality audits.

Every audited inequality ``lhs <~ rhs`` is checked the same way: the
constant is fitted at an anchor point, ``C = lhs / rhs`` there, and the
inequality ``lhs <= slack * C * rhs`` (default slack 1.25) is then required
at every other point.
"""

import csv
import io as _stdio
import json
import math
from dataclasses import dataclass, asdict, field as dc_field

import numpy as np
import scipy.fft as sfft

from .grid import (Grid, fft_xi, ifft_xi, half_from_full, z_half_to_phys, z_half_from_phys,
                   bz_norm, weighted_lp_norm, _slice_norms)
from .biot_savart import (velocity_hat, inverse_multiplier, split_mass, biot_savart_difference,
                          difference_multiplier)
from .propagators import loglinear_fit

SLACK = 1.25


class GaugeError(ValueError):
    """The state is not in the gauge an operation requires."""


# ---------------------------------------------------------------------------
# helpers on half-ladder arrays


def _half(state):
    return half_from_full(state.array, state.grid.N_z)


def _product_grid(grid):
    # samples that resolve products of two fields exactly (modes up to 2 N_z)
    return sfft.next_fast_len(4 * grid.N_z + 1) if grid.N_z else 1


def _to_phys(a, grid):
    return z_half_to_phys(a, _product_grid(grid))


def _from_phys(p, grid):
    return z_half_from_phys(p, 2 * grid.N_z)


def _wxi_velocity(u, grid, tau):
    """Velocity induced by ``w^xi`` alone: ``(d_z_bar (-Lap_bar)^{-1} (w^xi)^perp, v^z)``."""
    kappa = grid.kappa_for(u.shape[-3])
    a = fft_xi(u)
    a[2] = 0.0
    return velocity_hat(a, grid, tau, kappa)  # xi-spectral


def _grad_bar_hat(a_hat, grid, tau, kappa):
    D = (1j * grid.K[0][None], 1j * grid.K[1][None],
         1j * math.exp(0.5 * tau) * kappa[:, None, None])
    return [D[j] * a_hat for j in range(3)]


def _grad_bar_full(u, grid, tau):
    """``[j, i] = d_bar_j w_i`` (3, 3, n, N, N); the zeta=0 mass of ``w^z`` is
    differentiated analytically."""
    kappa = grid.kappa_for(u.shape[-3])
    a, beta = split_mass(fft_xi(u), grid)
    out = np.empty((3, 3) + u.shape[1:], dtype=complex)
    for j, d in enumerate(_grad_bar_hat(a, grid, tau, kappa)):
        out[j] = ifft_xi(d)
    if beta != 0:
        out[0, 2, 0] += beta * grid.gradG[0]
        out[1, 2, 0] += beta * grid.gradG[1]
    return out


def _norm(a, grid, p, m):
    return bz_norm(a, grid, p, m, half=True)


# ---------------------------------------------------------------------------
# error terms


def error_terms_R(w, m=None, terms=False):
    """Three-dimensional remainder of the equation for ``w^z``.

    ``R = r1 + r2 + r3`` with ``r1 = d_z_bar (-Lap_bar)^{-1} (w^xi)^perp . grad w^z``
    (the gap between the 3D velocity and the 2D-type velocity of ``w^z``),
    ``r2 = v^z d_z_bar w^z`` and ``r3 = -w . grad_bar v^z``.

    Parameters
    ----------
    w : VorticityState
        Full gauge, or core gauge (reconstructed with its ``alpha``).
    m : float, optional
        Weight of the ``B_zL^{4/3}(m)`` norm; defaults to the grid's.
    terms : bool
        Also return the norms of ``r1, r2, r3``.

    Returns
    -------
    field : ndarray
        Modes ``0..2 N_z`` (the product is not truncated), shape (2 N_z + 1, N, N).
    norm : float
    """
    g = w.grid
    m = g.weight_m if m is None else m
    if w.gauge == "core":
        mass = abs(np.sum(w.array[2, g.N_z])) * g.cell_area
        if mass > 1e-10:
            raise GaugeError(f"core-gauge state carries zeta=0 mass {mass:.3e} in w_c^z")
    u = _half(w.full())
    vh = _wxi_velocity(u, g, w.tau)
    vw = ifft_xi(vh)
    kappa = g.kappa_for(u.shape[-3])
    dvz = [ifft_xi(d) for d in _grad_bar_hat(vh[2], g, w.tau, kappa)]
    gw = _grad_bar_full(u, g, w.tau)
    P = lambda a: _to_phys(a, g)
    wp = P(u)
    v1, v2, vz = P(vw[0]), P(vw[1]), P(vw[2])
    gz = [P(gw[j, 2]) for j in range(3)]
    dv = [P(d) for d in dvz]
    r1 = v1 * gz[0] + v2 * gz[1]
    r2 = vz * gz[2]
    r3 = -(wp[0] * dv[0] + wp[1] * dv[1] + wp[2] * dv[2])
    parts = [_from_phys(r, g) for r in (r1, r2, r3)]
    field = parts[0] + parts[1] + parts[2]
    n = _norm(field, g, 4.0 / 3.0, m)
    if terms:
        return field, n, [_norm(p, g, 4.0 / 3.0, m) for p in parts]
    return field, n


def error_terms_Rprime(wc, m=None):
    """Remainder ``div_xi(v_c^xi w_c^z - w_c^xi v_c^z) - grad^perp Lap_bar^{-1} w_c^z . grad w_c^z``.

    The 2D-type velocity of ``w_c^z`` is divergence-free, so its transport
    term cancels against its part of the flux exactly; what is evaluated is
    ``div_xi(v' w_c^z - w_c^xi v_c^z)`` with ``v'`` the velocity induced by
    ``w_c^xi``.  Returns ``(field, norm)`` as :func:`error_terms_R`.
    """
    if wc.gauge != "core":
        raise GaugeError("error_terms_Rprime expects a core-gauge state")
    g = wc.grid
    m = g.weight_m if m is None else m
    u = _half(wc)
    vw = ifft_xi(_wxi_velocity(u, g, wc.tau))
    P = lambda a: _to_phys(a, g)
    wp = P(u)
    v1, v2, vz = P(vw[0]), P(vw[1]), P(vw[2])
    f1 = _from_phys(v1 * wp[2] - wp[0] * vz, g)
    f2 = _from_phys(v2 * wp[2] - wp[1] * vz, g)
    field = ifft_xi(1j * g.K[0] * fft_xi(f1) + 1j * g.K[1] * fft_xi(f2))
    return field, _norm(field, g, 4.0 / 3.0, m)


# ---------------------------------------------------------------------------
# monitors


def chordal_weight(z, zc, period):
    """Period-aware distance ``(P / pi) |sin(pi (z - zc) / P)|``."""
    return (period / np.pi) * np.abs(np.sin(np.pi * (np.asarray(z) - zc) / period))


def _z_center(u, grid):
    # circular mean of the z-profile of int |w_c^z|^2
    Mf = 8 * (grid.N_z + 1)
    prof = np.sum(np.abs(z_half_to_phys(u[2], Mf)) ** 2, axis=(-2, -1))
    z = grid.z_period * np.arange(Mf) / Mf
    ang = 2 * np.pi * z / grid.z_period
    c = np.sum(prof * np.exp(1j * ang))
    if abs(c) < 1e-300:
        return 0.0
    return float((np.angle(c) % (2 * np.pi)) * grid.z_period / (2 * np.pi))


def z_weighted_norm(u_z, grid, zc, m):
    """``|| chordal(z) f ||_{B_zL^2(m)}`` of a half-ladder scalar, on a fine z-grid."""
    Mf = 16 * (grid.N_z + 1)
    z = grid.z_period * np.arange(Mf) / Mf
    vals = z_half_to_phys(u_z, Mf) * chordal_weight(z, zc, grid.z_period)[:, None, None]
    modes = sfft.fft(vals, axis=0) / Mf
    return float(np.sum(_slice_norms(modes, grid, 2.0, m)))


@dataclass
class AssumptionMonitor:
    """Norm series along a trajectory, one entry per snapshot."""

    tau: list
    wc: list
    wc_xi: list
    dz_wcz: list
    z_wcz: list
    grad_w: list
    tail: list
    m: float
    R_cut: int
    z_center: float
    extra: dict = dc_field(default_factory=dict)

    def __post_init__(self):
        for name in ("wc", "wc_xi", "dz_wcz", "z_wcz", "grad_w", "tail"):
            vals = np.asarray(getattr(self, name), dtype=float)
            if vals.size and (not np.all(np.isfinite(vals)) or np.any(vals < 0)):
                raise ValueError(f"monitor series {name} has non-finite or negative values")

    def series(self):
        out = {k: getattr(self, k) for k in ("wc", "wc_xi", "dz_wcz", "z_wcz", "grad_w", "tail")}
        out.update(self.extra)
        return out

    def to_dict(self):
        return asdict(self)

    def to_csv(self):
        cols = self.series()
        buf = _stdio.StringIO()
        wr = csv.writer(buf, lineterminator="\n")
        wr.writerow(["tau"] + list(cols))
        for i, t in enumerate(self.tau):
            wr.writerow([repr(float(t))] + [repr(float(cols[k][i])) for k in cols])
        return buf.getvalue()


def monitor(traj, m=None, R_cut=None, z_center=None, error_terms=False):
    """Assumption monitors for every snapshot of ``traj``.

    ``tail`` is ``sum_{|zeta| > R_cut} || w_hat^z(zeta) ||_{L^2(m)}`` (default
    cutoff ``N_z // 2``).  ``extra`` holds ``grad_wxi`` (``||grad_bar w^xi||``),
    ``dzbar_wz`` (``||d_z_bar w^z||``), ``gradxi_wxi`` and, with
    ``error_terms``, the ``B_zL^{4/3}(m)`` norms ``R`` and ``Rprime``.
    """
    states = traj.states if hasattr(traj, "states") else list(traj)
    g = states[0].grid
    m = g.weight_m if m is None else m
    R_cut = g.N_z // 2 if R_cut is None else int(R_cut)
    if z_center is None:
        z_center = _z_center(_half(states[0].core()), g)
    cols = {k: [] for k in ("wc", "wc_xi", "dz_wcz", "z_wcz", "grad_w", "tail",
                            "grad_wxi", "dzbar_wz", "gradxi_wxi")}
    if error_terms:
        cols["R"], cols["Rprime"] = [], []
    for s in states:
        wc = s.core()
        u = _half(wc)
        kap = g.kappa_for(u.shape[-3])[:, None, None]
        cols["wc"].append(_norm(u, g, 2, m))
        cols["wc_xi"].append(_norm(u[:2], g, 2, m))
        cols["dz_wcz"].append(_norm(1j * kap * u[2], g, 2, m))
        cols["z_wcz"].append(z_weighted_norm(u[2], g, z_center, m))
        gw = _grad_bar_full(_half(s.full()), g, s.tau)
        cols["grad_w"].append(_norm(gw, g, 2, m))
        cols["grad_wxi"].append(_norm(gw[:, :2], g, 2, m))
        cols["gradxi_wxi"].append(_norm(gw[:2, :2], g, 2, m))
        cols["dzbar_wz"].append(_norm(gw[2, 2], g, 2, m))
        sl = _slice_norms(u[2], g, 2.0, m)
        cols["tail"].append(float(2.0 * np.sum(sl[R_cut + 1:])))
        if error_terms:
            cols["R"].append(error_terms_R(s, m)[1])
            cols["Rprime"].append(error_terms_Rprime(wc, m)[1])
    extra = {k: cols.pop(k) for k in list(cols) if k not in
             ("wc", "wc_xi", "dz_wcz", "z_wcz", "grad_w", "tail")}
    return AssumptionMonitor(tau=[s.tau for s in states], m=float(m), R_cut=R_cut,
                             z_center=z_center, extra=extra, **cols)


# ---------------------------------------------------------------------------
# fits and inequality audits


@dataclass
class FitResult:
    exponent: float
    intercept: float
    rms: float
    window: tuple
    n_points: int

    def to_dict(self):
        return asdict(self)


def fit_decay_rate(series, window=None):
    """Least-squares slope of ``log(value)`` against ``tau``.

    Parameters
    ----------
    series : sequence of (tau, value)
    window : (tau_lo, tau_hi), optional
        Only points with ``tau_lo <= tau <= tau_hi`` are used.
    """
    pts = [(float(t), float(v)) for t, v in series]
    if window is not None:
        lo, hi = window
        pts = [(t, v) for t, v in pts if lo <= t <= hi]
    if len(pts) < 4:
        raise ValueError("fit_decay_rate needs at least 4 points")
    t = np.array([p[0] for p in pts])
    v = np.array([p[1] for p in pts])
    if np.any(~(v > 0)):
        raise ValueError("fit_decay_rate needs positive values")
    slope, icpt, rms = loglinear_fit(t, v)
    return FitResult(float(slope), float(icpt), float(rms), (float(t[0]), float(t[-1])), len(pts))


def anchored_check(lhs, rhs, anchor=0, slack=SLACK):
    """Fit ``C = lhs[anchor] / rhs[anchor]`` and require ``lhs <= slack C rhs``."""
    lhs = np.asarray(lhs, dtype=float)
    rhs = np.asarray(rhs, dtype=float)
    if rhs[anchor] <= 0:
        raise ValueError("anchor value of the bound must be positive")
    C = lhs[anchor] / rhs[anchor]
    ratio = np.divide(lhs, C * rhs, out=np.zeros_like(lhs), where=rhs > 0)
    bad = (lhs > slack * C * rhs) & ~(np.isclose(lhs, 0.0, atol=1e-300))
    return {"constant": float(C), "slack": slack, "max_ratio": float(np.max(ratio)),
            "holds": bool(not np.any(bad)), "violations": np.flatnonzero(bad).tolist()}


def decreasing_after(values, start=0, rtol=1e-6, floor_rel=1e-9):
    """True when ``values[start:]`` never increases.

    Increases smaller than ``rtol`` relative, or confined to the round-off
    floor ``floor_rel * max(values)``, are not counted.
    """
    v = np.asarray(values, dtype=float)
    atol = floor_rel * float(np.max(np.abs(v))) if v.size else 0.0
    v = v[start:]
    return bool(np.all(v[1:] <= v[:-1] * (1 + rtol) + atol))


def transient_index(taus, tau_transient):
    taus = np.asarray(taus)
    return int(np.searchsorted(taus, taus[0] + tau_transient - 1e-12))


def audit_gradient_bound(traj, m=None, tau_transient=1.0):
    """Uniform bound on ``||grad_bar w||`` and decay of ``grad_bar w^xi`` and ``d_z_bar w^z``."""
    if len(traj) < 10:
        raise ValueError("audit_gradient_bound needs at least 10 snapshots")
    mon = monitor(traj, m)
    taus = mon.tau
    i0 = transient_index(taus, tau_transient)
    out = {"sup_grad_w": float(max(mon.grad_w)), "tau": taus, "grad_w": mon.grad_w,
           "grad_wxi": mon.extra["grad_wxi"], "dzbar_wz": mon.extra["dzbar_wz"], "fits": {},
           "decreasing": {}}
    for key in ("grad_wxi", "dzbar_wz"):
        ser = out[key]
        out["decreasing"][key] = decreasing_after(ser, i0)
        pts = [(t, v) for t, v in zip(taus[i0:], ser[i0:]) if v > 1e-300]
        try:
            out["fits"][key] = fit_decay_rate(pts).to_dict()
        except ValueError:
            out["fits"][key] = None
    return out


# ---------------------------------------------------------------------------
# inequality constants for products and velocities


def convolve_z(f, g):
    """z-product of two full mode ladders without truncation (modes -2N..2N)."""
    n = f.shape[-3]
    out = np.zeros((2 * n - 1,) + f.shape[-2:], dtype=complex)
    for i in range(n):
        out[i:i + n] += f[i] * g
    return out


def holder_ratio(f, g, grid, p=4.0, q=4.0, r=2.0, m=0.0):
    """``||fg||_{B_zL^r} / (||f||_{B_zL^p} ||g||_{B_zL^q})`` for full-ladder fields."""
    num = float(np.sum(_slice_norms(convolve_z(f, g), grid, r, m)))
    den = bz_norm(f, grid, p, m) * bz_norm(g, grid, q, m)
    return num / den


def biot_savart_ratios(w, grid, tau):
    """``||v||_{B_zL^4} / ||w||_{B_zL^{4/3}}`` and ``||grad_bar v||_{B_zL^p} / ||w||_{B_zL^p}``
    for ``p = 2, 4``; ``w`` is a mean-free (3, 2N_z+1, N, N) array."""
    kappa = grid.kappa
    a = fft_xi(w)
    vh = velocity_hat(a, grid, tau, kappa)
    v = ifft_xi(vh)
    gv = np.stack([ifft_xi(d) for d in _grad_bar_hat(vh, grid, tau, kappa)])
    out = {"v_L4_w_L43": bz_norm(v, grid, 4.0) / bz_norm(w, grid, 4.0 / 3.0)}
    for p in (2.0, 4.0):
        out[f"gradv_L{int(p)}"] = bz_norm(gv, grid, p) / bz_norm(w, grid, p)
    return out


def difference_closed_form_error(grid, tau, kappa_index=1):
    """Largest deviation of the discrete 2D-minus-3D inverse multiplier from the closed form."""
    kap = grid.kappa[grid.N_z + kappa_index]
    ksq = grid.ksq
    inv2 = np.divide(1.0, ksq, out=np.zeros_like(ksq), where=ksq > 0)
    inv3 = inverse_multiplier(grid, tau, np.array([kap]))[0]
    kk = np.sqrt(ksq)
    ref = np.zeros_like(ksq)
    nz = ksq > 0
    ref[nz] = difference_multiplier(kk[nz], kap, tau)
    scale = np.max(np.abs(ref))
    # k = 0 has no 2D inverse and is excluded
    return float(np.max(np.abs((inv2 - inv3) - ref)[nz]) / scale)


def audit_biot_savart_difference(f, taus, delta=0.25, anchor=-1, slack=SLACK):
    """Anchored audit of ``sum_zeta sup|2D - 3D velocity|`` against the ``delta`` envelope.

    The constant is fitted at ``taus[anchor]``, by default the last (least
    negative) time, where the lowest box wavenumbers matter least.
    """
    lhs, rhs = [], []
    for t in taus:
        rep = biot_savart_difference(f, t, (delta,))
        lhs.append(sum(r["diff_sup"] for r in rep["modes"]))
        rhs.append(sum(r["envelopes"][float(delta)] for r in rep["modes"]))
    res = anchored_check(lhs, rhs, anchor, slack)
    res.update({"tau": [float(t) for t in taus], "lhs": lhs, "rhs": rhs, "delta": delta})
    return res


# ---------------------------------------------------------------------------
# reports


def write_report(path, payload):
    with open(path, "w") as fh:
        json.dump(_jsonable(payload), fh, indent=2, sort_keys=True)


def write_csv(path, text):
    with open(path, "w", newline="") as fh:
        fh.write(text)


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, (np.floating, np.integer)):
        return x.item()
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    if isinstance(x, complex):
        return [x.real, x.imag]
    if hasattr(x, "to_dict"):
        return _jsonable(x.to_dict())
    return x


__all__ = [
    "GaugeError", "error_terms_R", "error_terms_Rprime", "AssumptionMonitor", "monitor",
    "FitResult", "fit_decay_rate", "anchored_check", "decreasing_after",
    "audit_gradient_bound", "holder_ratio", "biot_savart_ratios", "convolve_z",
    "difference_closed_form_error", "audit_biot_savart_difference", "chordal_weight",
    "z_weighted_norm", "write_report", "write_csv",
]
