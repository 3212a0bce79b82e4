"""Elliptic inversions and velocity reconstruction.

In the rescaled frame ``-Lap_bar = |k|^2 + e^tau kappa^2`` per (zeta, k) mode and

    v^xi = d_z_bar (-Lap_bar)^{-1} (w^xi)^perp - grad^perp (-Lap_bar)^{-1} w^z
    v^z  = grad^perp . (-Lap_bar)^{-1} w^xi

with ``d_z_bar = e^{tau/2} d_z``, ``a^perp = (-a_2, a_1)`` and
``grad^perp = (-d_2, d_1)``.  The ``(zeta=0, k=0)`` mode has no inverse on the
periodic box; mass sitting in the zeta=0 slice of ``w^z`` is carried by the
analytic Oseen pair ``(G, v^G)`` instead.
"""

import warnings
from dataclasses import dataclass

import numpy as np

from .grid import SpectralField, fft_xi, ifft_xi, slice_mass, weighted_lp_norm

ZERO_MODE_TOL = 1e-12


class ZeroModeError(ValueError):
    """Raised when a mean that cannot be inverted on the box is present."""


class ZeroModeWarning(UserWarning):
    """The excluded (zeta=0, k=0) mode carried mass that was dropped."""


@dataclass
class VelocityState:
    vxi1: SpectralField
    vxi2: SpectralField
    vz: SpectralField
    tau: float

    @property
    def grid(self):
        return self.vz.grid

    @property
    def array(self):
        return np.stack([self.vxi1.modes, self.vxi2.modes, self.vz.modes])

    @classmethod
    def from_array(cls, grid, arr, tau, real=True):
        return cls(*(SpectralField(grid, arr[i], real) for i in range(3)), tau=float(tau))


def inverse_multiplier(grid, tau, kappa):
    """``1 / (|k|^2 + e^tau kappa^2)`` with the zero denominator mapped to 0."""
    den = grid.ksq[None] + np.exp(tau) * (kappa ** 2)[:, None, None]
    return np.divide(1.0, den, out=np.zeros_like(den), where=den > 0)


def inv_laplacian_scaled(f, tau):
    """Apply ``(-Lap_bar)^{-1}`` to a SpectralField; the zero mode is dropped."""
    g = f.grid
    a = fft_xi(f.modes)
    excluded = abs(a[g.N_z, 0, 0]) * g.cell_area
    if excluded > ZERO_MODE_TOL:
        warnings.warn(f"zero-mode dropped (mass {excluded:.3e})", ZeroModeWarning, stacklevel=2)
    out = ifft_xi(a * inverse_multiplier(g, tau, g.kappa))
    return SpectralField(g, out, f.real)


def velocity_hat(w_hat, grid, tau, kappa):
    """Velocity transform from vorticity transform (both xi-spectral), zero mode dropped."""
    psi = w_hat * inverse_multiplier(grid, tau, kappa)[None]
    sk = 1j * np.exp(0.5 * tau) * kappa[:, None, None]
    ik1 = 1j * grid.K[0]
    ik2 = 1j * grid.K[1]
    v1 = -sk * psi[1] + ik2 * psi[2]
    v2 = sk * psi[0] - ik1 * psi[2]
    v3 = -ik2 * psi[0] + ik1 * psi[1]
    return np.stack([v1, v2, v3])


def zeta0_index(grid, n):
    """Index of the zeta=0 slice on a zeta axis of length ``n``."""
    return grid.N_z if n == grid.n_modes else 0


def split_mass(w_hat, grid):
    """Remove the zeta=0 mass of ``w^z`` as ``beta G``; returns ``(w_hat', beta)``."""
    j0 = zeta0_index(grid, w_hat.shape[-3])
    beta = w_hat[2, j0, 0, 0] * grid.cell_area
    if beta == 0:
        return w_hat, 0.0
    out = w_hat.copy()
    out[2, j0] -= beta * grid.G_hat
    return out, beta


def total_velocity_array(arr, grid, tau):
    """Velocity samples of a full-gauge vorticity array; any zeta=0 mass of
    ``w^z`` contributes ``beta v^G`` analytically.  Works on full or half arrays.
    """
    kappa = grid.kappa_for(arr.shape[-3])
    w_hat, beta = split_mass(fft_xi(arr), grid)
    v = ifft_xi(velocity_hat(w_hat, grid, tau, kappa))
    if beta != 0:
        j0 = zeta0_index(grid, arr.shape[-3])
        v[0, j0] += beta * grid.vG[0]
        v[1, j0] += beta * grid.vG[1]
    return v


def velocity_from_vorticity(w):
    """Velocity of a full-gauge state without zeta=0 mass in ``w^z``."""
    g = w.grid
    arr = w.array
    if w.gauge == "core":
        raise ZeroModeError("core-gauge state: use velocity_core and add alpha v^G")
    mass = abs(slice_mass(arr[2, g.N_z], g))
    if mass > ZERO_MODE_TOL:
        raise ZeroModeError(
            f"w^z carries mass {mass:.3e} in the zeta=0 slice; move it into the analytic "
            "Oseen part and use velocity_core")
    v = ifft_xi(velocity_hat(fft_xi(arr), g, w.tau, g.kappa))
    return VelocityState.from_array(g, v, w.tau, w.real)


def velocity_core(wc):
    """Velocity ``v_c`` of a core-gauge state; total velocity is ``v_c + (alpha v^G, 0)``."""
    g = wc.grid
    if wc.gauge != "core":
        raise ZeroModeError("velocity_core expects a core-gauge state")
    arr = wc.array
    mass = abs(slice_mass(arr[2, g.N_z], g))
    if mass > 1e-10:
        raise ZeroModeError(f"core-gauge invariant violated: zeta=0 mass of w_c^z is {mass:.3e}")
    v = ifft_xi(velocity_hat(fft_xi(arr), g, wc.tau, g.kappa))
    return VelocityState.from_array(g, v, wc.tau, wc.real)


def total_velocity(w):
    """Full velocity of a state in either gauge (Oseen part included)."""
    full = w.full()
    v = total_velocity_array(full.array, w.grid, w.tau)
    return VelocityState.from_array(w.grid, v, w.tau, w.real)


def biot_savart_2d(f, grid):
    """``grad^perp Lap^{-1} f`` for xi-grid slices ``f`` of shape (..., N, N).

    The mass of each slice is carried by ``mass * v^G``; the remainder is
    inverted spectrally.
    """
    f = np.asarray(f)
    a = fft_xi(f)
    beta = a[..., 0, 0] * grid.cell_area
    a = a - beta[..., None, None] * grid.G_hat
    inv = np.divide(1.0, grid.ksq, out=np.zeros_like(grid.ksq), where=grid.ksq > 0)
    psi = -a * inv  # Lap^{-1}
    u1 = ifft_xi(-1j * grid.K[1] * psi)
    u2 = ifft_xi(1j * grid.K[0] * psi)
    b = beta[..., None, None]
    return np.stack([u1 + b * grid.vG[0], u2 + b * grid.vG[1]])


def velocity_gradient_array(arr, grid, tau):
    """``grad_bar v`` as a (3, 3, nzeta, N, N) array, ``[i, j] = d_bar_j v_i``.

    The Oseen part of the zeta=0 mass is differentiated analytically.
    """
    kappa = grid.kappa_for(arr.shape[-3])
    w_hat, beta = split_mass(fft_xi(arr), grid)
    v_hat = velocity_hat(w_hat, grid, tau, kappa)
    D = [1j * grid.K[0][None], 1j * grid.K[1][None],
         1j * np.exp(0.5 * tau) * kappa[:, None, None]]
    out = np.empty((3, 3) + arr.shape[1:], dtype=complex)
    for i in range(3):
        for j in range(3):
            out[i, j] = ifft_xi(D[j] * v_hat[i])
    if beta != 0:
        j0 = zeta0_index(grid, arr.shape[-3])
        for i in range(2):
            for j in range(2):
                out[i, j, j0] += beta * grid.grad_vG[i, j]
    return out


def biot_savart_difference(f, tau, deltas=(0.25,), m=None):
    """Per-mode audit of the 2D vs rescaled 3D Biot-Savart difference.

    For every ``zeta != 0`` returns the grid sup of
    ``grad^perp (-Lap)^{-1} f - grad^perp (-Lap_bar)^{-1} f``, together with
    ``sup |d_z_bar Lap_bar^{-1} f|`` and ``|| d_z_bar grad Lap_bar^{-1} f ||_{L^2}``,
    and for each ``delta`` the envelope
    ``e^{(tau/2)(1-2 delta)} |kappa|^{1-2 delta} || f_hat(zeta) ||_{L^2(m)}``.

    Parameters
    ----------
    f : SpectralField
        Scalar field, mean-free in every zeta slice used.
    tau : float
    deltas : sequence of float in (0, 1/2)
    m : float, optional
        Weight exponent; defaults to the grid's.

    Returns
    -------
    dict
        ``{"tau", "modes": [ {zeta, diff_sup, dz_sup, dz_grad_l2, envelopes{delta: value}} ]}``
    """
    g = f.grid
    m = g.weight_m if m is None else m
    a = fft_xi(f.modes)
    if abs(a[g.N_z, 0, 0]) * g.cell_area > 1e-10:
        raise ZeroModeError("biot_savart_difference expects a mean-free zeta=0 slice")
    inv2 = np.divide(1.0, g.ksq, out=np.zeros_like(g.ksq), where=g.ksq > 0)
    inv3 = inverse_multiplier(g, tau, g.kappa)
    s = np.exp(0.5 * tau)
    rows = []
    for j, zeta in enumerate(g.zeta):
        if zeta == 0:
            continue
        kap = g.kappa[j]
        d = (inv2 - inv3[j]) * a[j]
        diff = np.stack([ifft_xi(-1j * g.K[1] * d), ifft_xi(1j * g.K[0] * d)])
        dz = ifft_xi(1j * s * kap * inv3[j] * a[j])
        dzg = np.stack([ifft_xi(1j * g.K[i] * 1j * s * kap * inv3[j] * a[j]) for i in range(2)])
        fn = _l2m(f.modes[j], g, m)
        env = {float(dl): float(np.exp(0.5 * tau * (1 - 2 * dl)) * abs(kap) ** (1 - 2 * dl) * fn)
               for dl in deltas}
        rows.append({
            "zeta": int(zeta),
            "diff_sup": float(np.max(np.sqrt(np.sum(np.abs(diff) ** 2, axis=0)))),
            "dz_sup": float(np.max(np.abs(dz))),
            "dz_grad_l2": _l2m(dzg, g, 0.0),
            "f_l2m": fn,
            "envelopes": env,
        })
    return {"tau": float(tau), "m": float(m), "modes": rows}


def difference_multiplier(k_abs, kappa, tau):
    """Closed form ``1/|k|^2 - 1/(|k|^2 + e^tau kappa^2)``."""
    e = np.exp(tau) * kappa ** 2
    return e / (k_abs ** 2 * (k_abs ** 2 + e))


def _l2m(a, grid, m):
    return weighted_lp_norm(a, grid, 2.0, m)


__all__ = [
    "VelocityState", "ZeroModeError", "ZeroModeWarning", "inv_laplacian_scaled",
    "velocity_from_vorticity", "velocity_core", "total_velocity", "biot_savart_2d",
    "biot_savart_difference", "difference_multiplier", "velocity_gradient_array",
    "total_velocity_array", "velocity_hat", "split_mass",
]
