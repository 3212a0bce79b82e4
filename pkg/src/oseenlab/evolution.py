"""Nonlinear self-similar vorticity solvers.

The 3D equation is advanced as ``w' = (L + e^tau d_zz) w + N(w)`` with

    N(w) = -(v.grad_bar) w + (w.grad_bar) v = curl_bar(v x w),

the two forms agreeing for divergence-free ``w`` and ``v``.  The curl form
is used: the product ``v x w`` is formed on a padded z-grid (alias-free in
z), transformed back, masked by the 2/3 rule in xi and differentiated
spectrally, so the result is exactly divergence-free.  The linear part is
the exact flow ``S_0``; time stepping is integrating-factor Heun (RK2).

Real fields are stepped on the half ladder ``zeta = 0..N_z``.
"""

import math
from dataclasses import dataclass, asdict, field as dc_field

import numpy as np

from .grid import (VorticityState, fft_xi, ifft_xi, full_from_half, half_from_full,
                   z_half_to_phys, z_half_from_phys, project_array, bz_norm)
from .biot_savart import biot_savart_2d, total_velocity_array
from .propagators import s0_array, fp_array, s_coupling, ifrk2
from . import io as _io

MAX_DT = 0.05


class BlowupError(RuntimeError):
    """The evolved norm exceeded ``max_norm`` or became NaN."""


@dataclass
class EvolutionControls:
    """Stepping and snapshot controls.

    ``snapshot_dtau`` (optional) replaces ``snapshot_stride``: snapshots are
    taken every ``snapshot_dtau`` in tau, each interval being split into
    ``ceil(snapshot_dtau / dt)`` equal steps.
    """

    dt: float = 0.01
    dealias: bool = True
    projection_each_step: bool = True
    snapshot_stride: int = 10
    max_norm: float = 1e3
    snapshot_dtau: float = None

    def __post_init__(self):
        if not (0 < self.dt <= MAX_DT):
            raise ValueError(f"dt must lie in (0, {MAX_DT}]")
        if not self.max_norm > 0:
            raise ValueError("max_norm must be positive")
        if int(self.snapshot_stride) < 1:
            raise ValueError("snapshot_stride must be >= 1")
        if self.snapshot_dtau is not None and not self.snapshot_dtau > 0:
            raise ValueError("snapshot_dtau must be positive")

    def to_dict(self):
        return asdict(self)


@dataclass
class Trajectory:
    """Ordered snapshots of one run."""

    states: list
    controls: EvolutionControls
    provenance: dict = dc_field(default_factory=dict)

    def __post_init__(self):
        taus = [s.tau for s in self.states]
        if any(b <= a for a, b in zip(taus, taus[1:])):
            raise ValueError("snapshot times must be strictly increasing")
        if len({s.gauge for s in self.states}) > 1:
            raise ValueError("mixed gauges in one trajectory")

    @property
    def taus(self):
        return np.array([s.tau for s in self.states])

    @property
    def gauge(self):
        return self.states[0].gauge if self.states else None

    @property
    def grid(self):
        return self.states[0].grid

    def items(self):
        return [(s.tau, s) for s in self.states]

    def __len__(self):
        return len(self.states)

    def save(self, directory):
        return _io.save_trajectory(directory, self.states, self.controls.to_dict(),
                                   self.provenance)

    @classmethod
    def load(cls, directory):
        states, controls, prov = _io.load_trajectory(directory)
        return cls(states, EvolutionControls(**controls), prov)


@dataclass
class Trajectory2D:
    """Snapshots ``(tau, omega)`` of the 2D self-similar flow."""

    taus: np.ndarray
    fields: list
    controls: EvolutionControls
    provenance: dict = dc_field(default_factory=dict)


# ---------------------------------------------------------------------------
# nonlinear terms


def _curl_hat(c, grid, tau, kappa):
    sk = 1j * math.exp(0.5 * tau) * kappa[:, None, None]
    ik1, ik2 = 1j * grid.K[0], 1j * grid.K[1]
    return np.stack([ik2 * c[2] - sk * c[1], sk * c[0] - ik1 * c[2], ik1 * c[1] - ik2 * c[0]])


def _quadratic(u, v, grid, tau, dealias):
    # curl_bar(v x w) for half-ladder arrays u (vorticity) and v (velocity)
    wp = z_half_to_phys(u, grid.Mz)
    vp = z_half_to_phys(v, grid.Mz)
    c = np.empty_like(wp)
    c[0] = vp[1] * wp[2] - vp[2] * wp[1]
    c[1] = vp[2] * wp[0] - vp[0] * wp[2]
    c[2] = vp[0] * wp[1] - vp[1] * wp[0]
    ch = fft_xi(z_half_from_phys(c, grid.N_z))
    if dealias:
        ch *= grid.dealias_mask
    return ifft_xi(_curl_hat(ch, grid, tau, grid.kappa_for(ch.shape[-3])))


def _mask(a, grid):
    return ifft_xi(fft_xi(a) * grid.dealias_mask)


def nonlinear_term(u, grid, tau, alpha=0.0, gauge="full", dealias=True):
    """Right-hand side nonlinearity on a half-ladder array ``u`` (3, N_z+1, N, N).

    ``gauge="full"``: ``curl_bar(v x w)`` of the whole field, the zeta=0 mass
    of ``w^z`` entering the velocity analytically.
    ``gauge="core"``: ``u`` is ``w_c`` and the result is the quadratic term in
    ``w_c`` plus all couplings with the Oseen column of circulation ``alpha``.
    """
    v = total_velocity_array(u, grid, tau)
    out = _quadratic(u, v, grid, tau, dealias)
    if gauge == "core" and alpha != 0:
        lin = s_coupling(u, grid, tau, alpha, v=v)
        out += _mask(lin, grid) if dealias else lin
    return out


def nonlinear_2d(omega, grid, dealias=True):
    """``-u.grad omega`` with ``u = grad^perp Lap^{-1} omega`` in flux-curl form."""
    u = biot_savart_2d(omega, grid).real
    c1 = fft_xi(u[1] * omega)
    c2 = fft_xi(-u[0] * omega)
    if dealias:
        c1 *= grid.dealias_mask
        c2 *= grid.dealias_mask
    return ifft_xi(1j * grid.K[0] * c2 - 1j * grid.K[1] * c1).real


# ---------------------------------------------------------------------------
# stepping


def _check_real(w):
    if not w.real:
        raise ValueError("nonlinear evolution requires real-valued fields")


def _stepper(grid, gauge, alpha, controls):
    m = grid.weight_m

    def prop(a, ta, tb):
        return s0_array(a, grid, tb, ta)

    def rhs(a, t):
        return nonlinear_term(a, grid, t, alpha, gauge, controls.dealias)

    def post(a, t):
        if controls.projection_each_step:
            a = project_array(a, grid, t)
        a[:, 0] = a[:, 0].real
        n = bz_norm(a, grid, 2.0, m, half=True)
        if not np.isfinite(n):
            raise BlowupError(f"NaN encountered at tau={t:.4f}")
        if n > controls.max_norm:
            raise BlowupError(f"norm {n:.3e} exceeded max_norm={controls.max_norm:g} "
                              f"at tau={t:.4f}")
        return a

    def step(a, ta, tb):
        return post(ifrk2(a, ta, tb, 1, prop, rhs), tb)

    return step


def step_nonlinear(w, dt, controls=None):
    """One integrating-factor RK2 step of size ``dt`` from ``w.tau``.

    Full-gauge states carry the Oseen mass inside ``w^z``; core-gauge states
    are advanced with the coupled core formulation.
    """
    _check_real(w)
    controls = controls or EvolutionControls(dt=min(dt, MAX_DT))
    g = w.grid
    step = _stepper(g, w.gauge, w.alpha, controls)
    u = step(half_from_full(w.array, g.N_z).copy(), w.tau, w.tau + dt)
    return w.with_array(full_from_half(u), w.tau + dt)


def _schedule(tau0, tau_end, controls):
    """Step boundaries and snapshot flags."""
    T = tau_end - tau0
    if T <= 0:
        raise ValueError("tau_end must exceed the initial time")
    times, snap = [tau0], [True]
    if controls.snapshot_dtau:
        D = controls.snapshot_dtau
        nseg = max(1, int(math.ceil(T / D - 1e-9)))
        for j in range(nseg):
            a = tau0 + j * D
            b = tau_end if j == nseg - 1 else tau0 + (j + 1) * D
            n = max(1, int(math.ceil((b - a) / controls.dt - 1e-9)))
            for i in range(1, n + 1):
                times.append(b if i == n else a + i * (b - a) / n)
                snap.append(i == n)
    else:
        n = max(1, int(math.ceil(T / controls.dt - 1e-9)))
        s = int(controls.snapshot_stride)
        for i in range(1, n + 1):
            times.append(tau_end if i == n else tau0 + i * T / n)
            snap.append(i % s == 0 or i == n)
    return times, snap


def _run(w0, tau_end, controls, gauge, hook, provenance):
    g = w0.grid
    step = _stepper(g, gauge, w0.alpha, controls)
    times, snap = _schedule(w0.tau, tau_end, controls)
    u = half_from_full(w0.array, g.N_z).copy()
    if controls.projection_each_step:
        u = project_array(u, g, w0.tau)
        u[:, 0] = u[:, 0].real

    def make(a, t):
        return VorticityState.from_array(g, full_from_half(a), t, w0.alpha, gauge, True,
                                         w0.meta)

    states = [make(u, times[0])]
    if hook is not None:
        hook(states[-1])
    for ta, tb, flag in zip(times[:-1], times[1:], snap[1:]):
        u = step(u, ta, tb)
        if flag:
            states.append(make(u, tb))
            if hook is not None:
                hook(states[-1])
    prov = {"alpha": w0.alpha, "gauge": gauge, "tau0": w0.tau, "tau_end": tau_end}
    prov.update(provenance or {})
    return Trajectory(states, controls, prov)


def evolve(w0, tau_end, controls=None, hook=None, provenance=None):
    """Advance the full vorticity (Oseen mass inside ``w^z``) to ``tau_end``.

    Core-gauge input is converted to the full gauge first.  ``hook(state)``
    runs at every snapshot.
    """
    _check_real(w0)
    controls = controls or EvolutionControls()
    return _run(w0.full(), tau_end, controls, "full", hook, provenance)


def evolve_core(wc0, tau_end, controls=None, hook=None, provenance=None):
    """Advance the core correction ``w_c = w - alpha G e_z`` to ``tau_end``."""
    _check_real(wc0)
    if wc0.gauge != "core":
        raise ValueError("evolve_core expects a core-gauge state")
    mass = abs(np.sum(wc0.array[2, wc0.grid.N_z])) * wc0.grid.cell_area
    if mass > 1e-10:
        raise ValueError(f"core-gauge invariant violated: zeta=0 mass of w_c^z is {mass:.3e}")
    controls = controls or EvolutionControls()
    return _run(wc0, tau_end, controls, "core", hook, provenance)


def evolve_2d(omega0, grid, tau_end, controls=None, tau0=0.0, hook=None, provenance=None):
    """2D self-similar flow ``omega' = L omega - u.grad omega``.

    Uses the same stepper arithmetic as the zeta=0 slice of the 3D solver;
    any mass of ``omega0`` is carried by ``v^G`` in the velocity.
    """
    controls = controls or EvolutionControls()
    om = np.asarray(omega0, dtype=float).copy()
    times, snap = _schedule(tau0, tau_end, controls)

    def prop(a, ta, tb):
        return fp_array(a, grid, tb - ta)

    def rhs(a, t):
        return nonlinear_2d(a, grid, controls.dealias)

    taus, fields = [times[0]], [om.copy()]
    if hook is not None:
        hook(times[0], om)
    for ta, tb, flag in zip(times[:-1], times[1:], snap[1:]):
        om = ifrk2(om, ta, tb, 1, prop, rhs)
        n = float(np.sqrt(grid.cell_area * np.sum(om ** 2)))
        if not np.isfinite(n) or n > controls.max_norm:
            raise BlowupError(f"2D norm {n:.3e} out of range at tau={tb:.4f}")
        if flag:
            taus.append(tb)
            fields.append(om.copy())
            if hook is not None:
                hook(tb, om)
    prov = {"tau0": tau0, "tau_end": tau_end}
    prov.update(provenance or {})
    return Trajectory2D(np.array(taus), fields, controls, prov)


# ---------------------------------------------------------------------------
# mild-solution certification


def _quadrature_weights(J):
    """Composite Simpson weights on J uniform intervals (unit spacing);
    a 3/8 panel closes odd counts, the trapezoid covers J = 1."""
    w = np.zeros(J + 1)
    if J == 1:
        w[:] = 0.5
        return w
    ns = J if J % 2 == 0 else J - 3
    for i in range(0, ns, 2):
        w[i:i + 3] += (1 / 3, 4 / 3, 1 / 3)
    if J % 2:
        w[ns:ns + 4] += (3 / 8, 9 / 8, 9 / 8, 3 / 8)
    return w


def mild_residual_series(traj, i0=0, i1=None, m=None):
    """Mild-identity residual at each snapshot ``tau_J`` with ``i0 + 2 <= J <= i1``.

    ``|| w(tau_J) - S_0(tau_J, tau_0) w(tau_0) - int S_0(tau_J, s) N(w(s)) ds ||``
    in ``B_zL^2(m)``, the integral by Simpson quadrature over the snapshots.
    """
    i1 = len(traj) - 1 if i1 is None else i1
    if i1 - i0 + 1 < 8:
        raise ValueError("mild_residual needs at least 8 snapshots between the indices")
    states = [s.full() for s in traj.states[i0:i1 + 1]]
    g = states[0].grid
    m = g.weight_m if m is None else m
    taus = np.array([s.tau for s in states])
    h = np.diff(taus)
    if np.max(np.abs(h - h[0])) > 1e-9 * max(1.0, abs(h[0])):
        raise ValueError("mild_residual needs uniformly spaced snapshots")
    us = [half_from_full(s.array, g.N_z) for s in states]
    Ns = [nonlinear_term(u, g, t, 0.0, "full", traj.controls.dealias) for u, t in zip(us, taus)]
    out = []
    for J in range(2, len(states)):
        q = _quadrature_weights(J) * h[0]
        acc = us[J] - s0_array(us[0], g, taus[J], taus[0])
        for i in range(J + 1):
            acc = acc - q[i] * s0_array(Ns[i], g, taus[J], taus[i])
        out.append((float(taus[J]), bz_norm(acc, g, 2.0, m, half=True)))
    return out


def mild_residual(traj, i0=0, i1=None, m=None):
    """Largest mild-identity residual over the snapshots in ``[i0, i1]``."""
    return max(r for _, r in mild_residual_series(traj, i0, i1, m))


__all__ = [
    "EvolutionControls", "Trajectory", "Trajectory2D", "BlowupError", "nonlinear_term",
    "nonlinear_2d", "step_nonlinear", "evolve", "evolve_core", "evolve_2d",
    "mild_residual", "mild_residual_series",
]
