"""Closed-form Oseen objects and the physical <-> self-similar change of variables.

The self-similar variables are ``tau = log t`` and ``xi = x / sqrt(t)``; the
rescaled vorticity is ``w(tau, xi, z) = t * omega(t, sqrt(t) xi, z)`` and the
rescaled velocity ``v = sqrt(t) * u``.
"""

import math
from dataclasses import dataclass

import numpy as np

# below this radius v^G is evaluated from its Taylor series
SERIES_RADIUS = 1e-3


def gaussian(xi1, xi2):
    """Unit-mass Gaussian ``G = exp(-|xi|^2/4) / (4 pi)``."""
    r2 = np.asarray(xi1) ** 2 + np.asarray(xi2) ** 2
    return np.exp(-0.25 * r2) / (4.0 * np.pi)


def _profile(s):
    # (1 - exp(-s/4)) / s, with its Taylor series near s = 0
    s = np.asarray(s, dtype=float)
    out = np.empty_like(s)
    small = s < SERIES_RADIUS ** 2
    sl = s[small]
    out[small] = 0.25 - sl / 32.0 + sl ** 2 / 384.0 - sl ** 3 / 6144.0
    sb = s[~small]
    out[~small] = -np.expm1(-0.25 * sb) / sb
    return out


def _profile_prime(s):
    # derivative of _profile; cancellation is severe near 0 so the series is used longer
    s = np.asarray(s, dtype=float)
    out = np.empty_like(s)
    small = s < 0.5
    sl = s[small]
    acc = np.zeros_like(sl)
    for n in range(1, 12):
        acc += n * (-1) ** n * 0.25 ** (n + 1) * sl ** (n - 1) / math.factorial(n + 1)
    out[small] = acc
    sb = s[~small]
    e = np.exp(-0.25 * sb)
    out[~small] = (0.25 * e * sb - (1.0 - e)) / sb ** 2
    return out


def oseen_vorticity(alpha, xi):
    """Return ``alpha * G(xi)``; ``xi`` has shape ``(2, ...)`` or ``(2,)``."""
    xi = np.asarray(xi, dtype=float)
    return alpha * gaussian(xi[0], xi[1])


def oseen_velocity(alpha, xi):
    """Return ``alpha * v^G(xi)`` with ``v^G = xi_perp / (2 pi |xi|^2) (1 - exp(-|xi|^2/4))``.

    ``xi_perp = (-xi2, xi1)``. The removable singularity at the origin is
    handled by a four-term series for ``|xi| < 1e-3``.
    """
    xi = np.asarray(xi, dtype=float)
    x1, x2 = xi[0], xi[1]
    phi = _profile(x1 ** 2 + x2 ** 2) / (2.0 * np.pi)
    return alpha * np.stack([-x2 * phi, x1 * phi])


def oseen_velocity_gradient(alpha, xi):
    """Jacobian ``J[i, j] = d_j (alpha v^G)_i`` evaluated analytically."""
    xi = np.asarray(xi, dtype=float)
    x1, x2 = xi[0], xi[1]
    s = x1 ** 2 + x2 ** 2
    psi = _profile(s) / (2.0 * np.pi)
    dpsi = 2.0 * _profile_prime(s) / (2.0 * np.pi)
    perp = (-x2, x1)
    # d_j perp_i: perp_1 = -x2, perp_2 = x1
    dperp = ((0.0, -1.0), (1.0, 0.0))
    x = (x1, x2)
    J = np.empty((2, 2) + np.shape(s))
    for i in range(2):
        for j in range(2):
            J[i, j] = dperp[i][j] * psi + perp[i] * dpsi * x[j]
    return alpha * J


def gaussian_gradient(xi1, xi2):
    """``grad G = -(xi/2) G``."""
    g = gaussian(xi1, xi2)
    return np.stack([-0.5 * xi1 * g, -0.5 * xi2 * g])


def a_of_tau(tau):
    """``a(tau) = 1 / (1 - exp(-tau))`` for ``tau > 0``."""
    tau = np.asarray(tau, dtype=float)
    if np.any(tau <= 0):
        raise ValueError("a(tau) is defined for tau > 0 only")
    out = -1.0 / np.expm1(-tau)
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class OseenProfile:
    """The Oseen column ``w^g = (0, 0, alpha G)`` with velocity ``(alpha v^G, 0)``."""

    alpha: float = 1.0

    def vorticity(self, xi):
        return oseen_vorticity(self.alpha, xi)

    def velocity(self, xi):
        return oseen_velocity(self.alpha, xi)


@dataclass(frozen=True)
class CoordinateMap:
    """Pair ``(tau, t)`` with ``t = exp(tau)``."""

    tau: float

    @property
    def t(self):
        return math.exp(self.tau)

    @classmethod
    def from_time(cls, t):
        if t <= 0:
            raise ValueError("physical time must be positive")
        return cls(math.log(t))


def to_selfsim(omega, t, grid, alpha=0.0, physical_grid=None, gauge="full"):
    """Rescale a physical vorticity snapshot into self-similar variables.

    Parameters
    ----------
    omega : sequence of three arrays
        Components ``(omega_x1, omega_x2, omega_z)`` as z-mode arrays of shape
        ``(2 N_z + 1, N, N)`` sampled on ``physical_grid``.
    t : float
        Physical time, ``t > 0``.
    grid : Grid
        Target self-similar grid.
    alpha : float
        Circulation carried as metadata.
    physical_grid : Grid, optional
        Grid of the physical samples; defaults to ``grid`` rescaled by ``sqrt(t)``,
        in which case the map is an exact relabelling of samples.

    Returns
    -------
    VorticityState
        ``w(tau, xi, z) = t omega(t, sqrt(t) xi, z)`` with ``tau = log t``.
    """
    from .grid import VorticityState, dilate

    if t <= 0:
        raise ValueError("physical time must be positive")
    if physical_grid is None:
        physical_grid = grid.rescaled(math.sqrt(t))
    comps = [t * dilate(np.asarray(c), physical_grid, grid, math.sqrt(t)) for c in omega]
    return VorticityState.from_array(grid, np.stack(comps), math.log(t), alpha, gauge)


def from_selfsim(state, physical_grid=None):
    """Inverse of :func:`to_selfsim`; returns ``(components, t)``."""
    from .grid import dilate

    t = math.exp(state.tau)
    if physical_grid is None:
        physical_grid = state.grid.rescaled(math.sqrt(t))
    arr = state.full().array
    comps = np.stack([dilate(c, state.grid, physical_grid, 1.0 / math.sqrt(t)) / t for c in arr])
    return comps, t
