"""Linear propagators: e^{tau L}, S_0, Gamma_alpha, T_alpha and S_alpha.

``L = Lap + (1/2) xi.grad + 1`` is the Fokker-Planck operator.  Its flow is
applied exactly through the conjugation

    (e^{tau L} f)^(k) = exp(-(1 - e^{-tau}) |k|^2) f^(e^{-tau/2} k),

which is separable in the two xi-directions and therefore a pair of small
dense matrix products per slice.  ``S_0(tau1, tau0)`` multiplies each z-mode
by ``exp(-(e^{tau1} - e^{tau0}) kappa^2)`` on top of that.  The alpha-coupled
propagators are advanced by integrating-factor RK2 with the exact flows as
integrating factors.
"""

import math
import warnings
from dataclasses import dataclass, asdict, field as dc_field
import json

import numpy as np

from .grid import (SpectralField, VorticityState, resample_matrix, apply_separable,
                   fft_xi, ifft_xi, d_xi, bz_norm, boundary_tail)
from .biot_savart import biot_savart_2d, total_velocity_array
from .selfsim import a_of_tau

DEFAULT_SUBSTEP = 0.01
KINDS = ("FokkerPlanck", "S0", "GammaAlpha", "TauAlpha", "SAlpha")


class BoundaryTailWarning(UserWarning):
    """Significant mass near the box boundary; periodization may pollute results."""


class StabilityError(RuntimeError):
    """A time-stepped propagator grew beyond its growth heuristic."""


def fokker_planck_matrix(grid, tau):
    """1D factor ``P`` with ``e^{tau L} f = P f P^T`` on the grid."""
    c = math.exp(0.5 * tau)
    a = -math.expm1(-tau)
    return c * resample_matrix(grid.N_xi, grid.L_xi, grid.N_xi, grid.L_xi, c, a)


def fp_array(a, grid, tau):
    if tau == 0:
        return np.array(a, dtype=complex if np.iscomplexobj(a) else float)
    return apply_separable(fokker_planck_matrix(grid, tau), a)


def s0_array(a, grid, tau1, tau0):
    """S_0 on an array whose axis -3 is a zeta axis (full or half)."""
    kap = grid.kappa_for(a.shape[-3])
    damp = np.exp(-(math.exp(tau1) - math.exp(tau0)) * kap ** 2)[:, None, None]
    return damp * fp_array(a, grid, tau1 - tau0)


def _unwrap(f, grid):
    if isinstance(f, SpectralField):
        return f.grid, f.modes, lambda out: SpectralField(f.grid, out, f.real)
    if isinstance(f, VorticityState):
        return f.grid, f.array, None
    if grid is None:
        raise ValueError("a grid is required for bare arrays")
    return grid, np.asarray(f), lambda out: out


def apply_fokker_planck(f, tau, grid=None):
    """``e^{tau L} f`` for a SpectralField or an array of xi-slices."""
    if not tau > 0:
        raise ValueError("tau must be positive")
    g, a, wrap = _unwrap(f, grid)
    if boundary_tail(a, g) > 1e-10:
        warnings.warn("input has significant mass near the box boundary", BoundaryTailWarning,
                      stacklevel=2)
    return wrap(fp_array(a, g, tau))


def apply_S0(f, tau1, tau0, grid=None):
    """``S_0(tau1, tau0) f``; the constant of the Fourier representation is 1."""
    if not tau1 > tau0:
        raise ValueError("tau1 must exceed tau0")
    if isinstance(f, VorticityState):
        out = s0_array(f.array, f.grid, tau1, tau0)
        return VorticityState.from_array(f.grid, out, tau1, f.alpha, f.gauge, f.real, f.meta)
    g, a, wrap = _unwrap(f, grid)
    if boundary_tail(a, g) > 1e-10:
        warnings.warn("input has significant mass near the box boundary", BoundaryTailWarning,
                      stacklevel=2)
    return wrap(s0_array(a, g, tau1, tau0))


# ---------------------------------------------------------------------------
# coupling terms


def grad_xi(a, grid):
    """Spectral xi-gradient, stacked on a new leading axis."""
    ah = fft_xi(a)
    return np.stack([ifft_xi(1j * grid.K[0] * ah), ifft_xi(1j * grid.K[1] * ah)])


def gamma_coupling(f, grid, alpha):
    """``-alpha (v^G.grad) f + alpha (f.grad) v^G`` for a 2-vector ``f``."""
    vG, J = grid.vG, grid.grad_vG
    out = np.empty_like(f, dtype=complex)
    for i in range(2):
        gi = grad_xi(f[i], grid)
        out[i] = -(vG[0] * gi[0] + vG[1] * gi[1]) + J[i, 0] * f[0] + J[i, 1] * f[1]
    return alpha * out


def tau_coupling(f, grid, alpha):
    """``-alpha v^G.grad f - alpha (grad^perp Lap^{-1} f).grad G``."""
    g = grad_xi(f, grid)
    u = biot_savart_2d(f, grid)
    adv = grid.vG[0] * g[0] + grid.vG[1] * g[1]
    return -alpha * (adv + u[0] * grid.gradG[0] + u[1] * grid.gradG[1])


def s_coupling(f, grid, tau, alpha, v=None):
    """All alpha-terms of the coupled 3-component linearization.

    ``v`` may carry the velocity of ``f`` when the caller already has it.
    """
    kap = grid.kappa_for(f.shape[-3])[:, None, None]
    sk = 1j * math.exp(0.5 * tau) * kap
    if v is None:
        v = total_velocity_array(f, grid, tau)
    out = np.empty(f.shape, dtype=complex)
    out[:2] = gamma_coupling(f[:2], grid, alpha)
    G = grid.G
    out[0] += alpha * G * sk * v[0]
    out[1] += alpha * G * sk * v[1]
    gz = grad_xi(f[2], grid)
    out[2] = -alpha * (grid.vG[0] * gz[0] + grid.vG[1] * gz[1]
                       + grid.gradG[0] * v[0] + grid.gradG[1] * v[1]) + alpha * G * sk * v[2]
    return out


# ---------------------------------------------------------------------------
# integrating-factor RK2


def ifrk2(u, t0, t1, nsteps, prop, rhs, guard=None):
    """Heun integrating-factor scheme for ``u' = A(t) u + N(u, t)``.

    ``prop(u, ta, tb)`` is the exact flow of ``A`` and ``rhs(u, t)`` is ``N``.
    """
    h = (t1 - t0) / nsteps
    for n in range(nsteps):
        ta = t0 + n * h
        tb = t0 + (n + 1) * h if n + 1 < nsteps else t1
        hh = tb - ta
        k1 = rhs(u, ta)
        Eu = prop(u, ta, tb)
        Ek1 = prop(k1, ta, tb)
        k2 = rhs(Eu + hh * Ek1, tb)
        u = Eu + 0.5 * hh * (Ek1 + k2)
        if guard is not None:
            guard(u, tb)
    return u


def default_substeps(duration):
    return max(1, math.ceil(duration / DEFAULT_SUBSTEP - 1e-9))


def _growth_guard(f, t0):
    n0 = float(np.sqrt(np.sum(np.abs(f) ** 2)))

    def guard(u, t):
        n = float(np.sqrt(np.sum(np.abs(u) ** 2)))
        if not np.isfinite(n) or n > math.exp(2.0 * (t - t0)) * n0 * (1 + 1e-12) + 1e-300:
            raise StabilityError(f"norm grew from {n0:.3e} to {n:.3e} by tau={t:.3f}; "
                                 "increase the substep count")
    return guard


def gamma_alpha(f, grid, tau, alpha, substeps=None):
    """``Gamma_alpha(tau) f`` for ``f`` of shape (2, ..., N, N)."""
    f = np.asarray(f, dtype=complex)
    if alpha == 0:
        return fp_array(f, grid, tau)
    n = substeps or default_substeps(tau)
    return ifrk2(f, 0.0, tau, n,
                 lambda u, ta, tb: fp_array(u, grid, tb - ta),
                 lambda u, t: gamma_coupling(u, grid, alpha),
                 _growth_guard(f, 0.0))


def tau_alpha(f, grid, tau, alpha, substeps=None):
    """``T_alpha(tau) f`` for scalar slices ``f`` of shape (..., N, N)."""
    f = np.asarray(f, dtype=complex)
    if alpha == 0:
        return fp_array(f, grid, tau)
    n = substeps or default_substeps(tau)
    return ifrk2(f, 0.0, tau, n,
                 lambda u, ta, tb: fp_array(u, grid, tb - ta),
                 lambda u, t: tau_coupling(u, grid, alpha),
                 _growth_guard(f, 0.0))


def s_alpha(f, grid, tau1, tau0, alpha, substeps=None):
    """``S_alpha(tau1, tau0) f`` for ``f`` of shape (3, nzeta, N, N)."""
    f = np.asarray(f, dtype=complex)
    if alpha == 0:
        return s0_array(f, grid, tau1, tau0)
    n = substeps or default_substeps(tau1 - tau0)
    return ifrk2(f, tau0, tau1, n,
                 lambda u, ta, tb: s0_array(u, grid, tb, ta),
                 lambda u, t: s_coupling(u, grid, t, alpha),
                 _growth_guard(f, tau0))


def apply_linearized(kind, f, tau, alpha, substeps=None, grid=None, tau0=0.0):
    """Dispatch to ``Gamma_alpha``, ``T_alpha`` or ``S_alpha``.

    ``f`` is a (2, ..., N, N) array for GammaAlpha, an array of slices for
    TauAlpha, and a VorticityState or (3, nzeta, N, N) array for SAlpha, where
    the propagation runs from ``tau0`` to ``tau0 + tau``.
    """
    if not tau > 0:
        raise ValueError("tau must be positive")
    if kind == "SAlpha" and isinstance(f, VorticityState):
        out = s_alpha(f.array, f.grid, f.tau + tau, f.tau, alpha, substeps)
        return VorticityState.from_array(f.grid, out, f.tau + tau, f.alpha, f.gauge, f.real, f.meta)
    if grid is None:
        raise ValueError("a grid is required for bare arrays")
    if kind == "GammaAlpha":
        return gamma_alpha(f, grid, tau, alpha, substeps)
    if kind == "TauAlpha":
        return tau_alpha(f, grid, tau, alpha, substeps)
    if kind == "SAlpha":
        return s_alpha(f, grid, tau0 + tau, tau0, alpha, substeps)
    raise ValueError(f"unknown propagator kind {kind!r}")


@dataclass
class PropagatorRequest:
    """A propagation over ``[tau0, tau1]``; ``stepping`` is the substep count."""

    kind: str
    tau0: float
    tau1: float
    alpha: float = 0.0
    stepping: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"kind must be one of {KINDS}")
        if not self.tau1 > self.tau0:
            raise ValueError("tau1 must exceed tau0")
        if not self.stepping:
            self.stepping = default_substeps(self.tau1 - self.tau0)

    def run(self, f, grid):
        d = self.tau1 - self.tau0
        if self.kind == "FokkerPlanck":
            return apply_fokker_planck(f, d, grid)
        if self.kind == "S0":
            return apply_S0(f, self.tau1, self.tau0, grid)
        return apply_linearized(self.kind, f, d, self.alpha, self.stepping, grid, self.tau0)


# ---------------------------------------------------------------------------
# convergence audits


@dataclass
class ConvergenceReport:
    kind: str
    tau: float
    alpha: float
    anchors: list
    norms: list
    exponent: float = float("nan")
    intercept: float = float("nan")
    residual_rms: float = float("nan")
    meta: dict = dc_field(default_factory=dict)

    def to_json(self):
        return json.dumps(asdict(self), sort_keys=True, indent=2)


def loglinear_fit(x, y):
    """Least-squares slope of ``log y`` against ``x``; returns (slope, intercept, rms)."""
    x = np.asarray(x, float)
    ly = np.log(np.asarray(y, float))
    A = np.vstack([x, np.ones_like(x)]).T
    coef, *_ = np.linalg.lstsq(A, ly, rcond=None)
    res = ly - A @ coef
    return float(coef[0]), float(coef[1]), float(np.sqrt(np.mean(res ** 2)))


def audit_semigroup_convergence(kind, f, grid, tau=1.0, tau0_sweep=(-2, -4, -6, -8, -10, -12),
                                alpha=1.0, m=None, substeps=None):
    """Distance between the z-coupled propagator and its 2D limit as ``tau0 -> -inf``.

    ``kind`` is ``"S0"`` (compares with ``e^{tau L}``, ``f`` scalar modes of shape
    (nzeta, N, N)) or ``"SAlpha"`` (compares with ``(Gamma_alpha f^xi, T_alpha f^z)``,
    ``f`` of shape (3, nzeta, N, N)).  The exponent is the slope of
    ``log D(tau0)`` against ``tau0``.
    """
    if len(tau0_sweep) < 3:
        raise ValueError("need at least 3 anchors to fit a rate")
    m = grid.weight_m if m is None else m
    f = np.asarray(f, dtype=complex)
    norms = []
    if kind == "S0":
        ref = fp_array(f, grid, tau)
        for t0 in tau0_sweep:
            norms.append(bz_norm(s0_array(f, grid, t0 + tau, t0) - ref, grid, 2, m))
    elif kind == "SAlpha":
        n = substeps or default_substeps(tau)
        ref = np.concatenate([gamma_alpha(f[:2], grid, tau, alpha, n),
                              tau_alpha(f[2], grid, tau, alpha, n)[None]])
        for t0 in tau0_sweep:
            out = s_alpha(f, grid, t0 + tau, t0, alpha, n)
            norms.append(bz_norm(out - ref, grid, 2, m))
    else:
        raise ValueError("kind must be 'S0' or 'SAlpha'")
    rep = ConvergenceReport(kind, float(tau), float(alpha), [float(t) for t in tau0_sweep],
                            [float(v) for v in norms])
    if all(v > 0 for v in norms):
        rep.exponent, rep.intercept, rep.residual_rms = loglinear_fit(tau0_sweep, norms)
    return rep


# ---------------------------------------------------------------------------
# regularization audits

# estimate name -> (family, envelope exponent as a function of (p, q))
ESTIMATES = {
    "fp": ("prop1", lambda p, q: 1 / q - 1 / p),
    "gamma": ("prop1", lambda p, q: 1 / q - 1 / p),
    "tau": ("prop1", lambda p, q: 1 / q - 1 / p),
    "fp-grad": ("prop1", lambda p, q: 1 / q - 1 / p + 0.5),
    "tau-grad": ("prop1", lambda p, q: 1 / q - 1 / p + 0.5),
    "gamma-grad": ("prop1", lambda p, q: 1 / q - 1 / p + 0.5),
    "s0": ("prop2", lambda p, q: 1 / q - 1 / p),
    "salpha": ("prop2", lambda p, q: 1 / q - 1 / p),
    "s0-grad": ("prop2", lambda p, q: 1 / q - 1 / p + 0.5),
    "s0-div": ("prop2", lambda p, q: 1 / q - 1 / p + 0.5),
    "salpha-grad": ("prop2", lambda p, q: 1 / q - 1 / p + 0.5),
    "salpha-div": ("prop2", lambda p, q: 1 / q),
    "salpha-grad-div": ("prop2", lambda p, q: 1 / q + 0.5),
}


def smoothing_envelope(tau, exponent, gamma):
    """``e^{gamma tau} (1 - e^{-tau})^{-exponent}``, i.e. ``e^{gamma tau} a(tau)^exponent``."""
    return math.exp(gamma * tau) * a_of_tau(tau) ** exponent


@dataclass
class RegularizationAudit:
    estimate: str
    p: float
    q: float
    gamma: float
    taus: list
    lhs: list
    envelope: list
    anchor: float
    constant: float
    slack: float
    worst_ratio: float
    passed: bool

    def to_dict(self):
        return asdict(self)


def _grad_bar(a, grid, tau):
    # a: (..., nzeta, N, N) -> (3, ...) with the scaled z-derivative last
    kap = grid.kappa_for(a.shape[-3])[:, None, None]
    ah = fft_xi(a)
    return np.stack([ifft_xi(1j * grid.K[0] * ah), ifft_xi(1j * grid.K[1] * ah),
                     1j * math.exp(0.5 * tau) * kap * a])


def div_bar(F, grid, tau):
    """Row divergence ``(div_bar F)_i = sum_j d_bar_j F_ij`` of a (3, 3, nzeta, N, N) matrix."""
    kap = grid.kappa_for(F.shape[-3])[:, None, None]
    s = 1j * math.exp(0.5 * tau) * kap
    return np.stack([d_xi(F[i, 0], grid, 0) + d_xi(F[i, 1], grid, 1) + s * F[i, 2]
                     for i in range(3)])


def _trajectory(step, u, taus, t0=0.0):
    # advance u through the sorted sample times with step(u, ta, tb)
    out, t = [], t0
    for tb in taus:
        u = step(u, t, tb)
        t = tb
        out.append(u)
    return out


def _regularization_series(estimate, data, grid, ps, qs, alpha, taus, m, tau0):
    # lhs(tau) for every p in ps and the data norm for every q in qs
    family = ESTIMATES[estimate][0]
    n_per = lambda d: max(1, math.ceil(d / DEFAULT_SUBSTEP - 1e-9))  # noqa: E731

    def nrm(a, r):
        if family == "prop1":
            a = a[..., None, :, :]
        return bz_norm(a, grid, r, m)

    f = np.asarray(data["f"], dtype=complex)
    F = data.get("F")
    F = None if F is None else np.asarray(F, dtype=complex)
    # per sample: a function of the lebesgue exponent p
    terms = []
    if estimate in ("fp", "tau", "fp-grad", "tau-grad"):
        if estimate.startswith("fp"):
            step = lambda u, a, b: fp_array(u, grid, b - a)  # noqa: E731
        else:
            step = lambda u, a, b: tau_alpha(u, grid, b - a, alpha, n_per(b - a))  # noqa: E731
        grad = estimate.endswith("grad")
        u0 = np.concatenate([f[None], grad_xi(f, grid)]) if grad else f
        for t, u in zip(taus, _trajectory(step, u0, taus)):
            if grad:
                gu, rest, s = grad_xi(u[0], grid), u[1:], math.exp(t / 2)
                terms.append(lambda r, gu=gu, rest=rest, s=s: nrm(gu, r) + s * nrm(rest, r))
            else:
                terms.append(lambda r, u=u: nrm(u, r))
        rhs = {q: nrm(f, q) for q in qs}
    elif estimate in ("gamma", "gamma-grad"):
        step = lambda u, a, b: gamma_alpha(u, grid, b - a, alpha, n_per(b - a))  # noqa: E731
        if estimate == "gamma":
            terms = [lambda r, u=u: nrm(u, r) for u in _trajectory(step, f, taus)]
            rhs = {q: nrm(f, q) for q in qs}
        else:
            divF = np.stack([d_xi(F[i, 0], grid, 0) + d_xi(F[i, 1], grid, 1) for i in range(2)])
            # component axis first, the two data sets on the batch axis
            traj = _trajectory(step, np.stack([f, divF], axis=1), taus)
            for t, u in zip(taus, traj):
                gu, dv, s = grad_xi(u[:, 0], grid), u[:, 1], math.exp(t / 2)
                terms.append(lambda r, gu=gu, dv=dv, s=s: nrm(gu, r) + s * nrm(dv, r))
            rhs = {q: nrm(f, q) + nrm(F, q) for q in qs}
    elif estimate in ("s0", "s0-grad", "s0-div"):
        step = lambda u, a, b: s0_array(u, grid, tau0 + b, tau0 + a)  # noqa: E731
        u0 = d_xi(f[0], grid, 0) + d_xi(f[1], grid, 1) if estimate == "s0-div" else f
        for t, u in zip(taus, _trajectory(step, u0, taus)):
            if estimate == "s0":
                terms.append(lambda r, u=u: nrm(u, r))
            elif estimate == "s0-grad":
                gu = _grad_bar(u, grid, tau0 + t)
                terms.append(lambda r, gu=gu: nrm(gu, r))
            else:
                s = math.exp(t / 2)
                terms.append(lambda r, u=u, s=s: s * nrm(u, r))
        rhs = {q: nrm(f, q) for q in qs}
    elif estimate in ("salpha", "salpha-grad", "salpha-div", "salpha-grad-div"):
        step = lambda u, a, b: s_alpha(u, grid, tau0 + b, tau0 + a, alpha, n_per(b - a))  # noqa: E731
        if estimate in ("salpha-div", "salpha-grad-div"):
            u0 = div_bar(F, grid, tau0)
            rhs = {q: nrm(F, q) for q in qs}
        else:
            u0 = f
            rhs = {q: nrm(f, q) for q in qs}
        for t, u in zip(taus, _trajectory(step, u0, taus)):
            s = math.exp(t / 2)
            if estimate == "salpha":
                terms.append(lambda r, u=u: nrm(u, r))
            elif estimate == "salpha-grad":
                gu = _grad_bar(u, grid, tau0 + t)
                terms.append(lambda r, gu=gu: nrm(gu, r))
            elif estimate == "salpha-div":
                # the divergence-form estimates measure the output in L^2
                val = s * nrm(u, 2)
                terms.append(lambda r, val=val: val)
            else:
                val = s * nrm(_grad_bar(u, grid, tau0 + t), 2)
                terms.append(lambda r, val=val: val)
    else:
        raise ValueError(f"unknown estimate {estimate!r}")
    lhs = {p: np.array([term(p) for term in terms]) for p in ps}
    return lhs, rhs


def audit_regularization_pairs(estimate, data, grid, pqs, alpha=1.0, gamma=0.1, taus=None,
                               anchor=None, slack=1.25, m=None, tau0=0.0):
    """Run :func:`audit_regularization` for several ``(p, q)`` on one trajectory."""
    if estimate not in ESTIMATES:
        raise ValueError(f"unknown estimate {estimate!r}")
    m = grid.weight_m if m is None else m
    taus = np.asarray(taus if taus is not None else np.linspace(0.05, 3.0, 60), float)
    pqs = [(float(p), float(q)) for p, q in pqs]
    lhs, rhs = _regularization_series(estimate, data, grid, sorted({p for p, _ in pqs}),
                                      sorted({q for _, q in pqs}), alpha, taus, m, tau0)
    anchor = float(taus[0]) if anchor is None else anchor
    ia = int(np.argmin(np.abs(taus - anchor)))
    out = []
    for p, q in pqs:
        e = ESTIMATES[estimate][1](p, q)
        env = np.array([smoothing_envelope(t, e, gamma) * rhs[q] for t in taus])
        C = lhs[p][ia] / env[ia]
        ratio = lhs[p] / (C * env)
        out.append(RegularizationAudit(estimate, p, q, float(gamma), taus.tolist(),
                                       lhs[p].tolist(), env.tolist(), float(taus[ia]), float(C),
                                       float(slack), float(np.max(ratio)),
                                       bool(np.all(ratio <= slack))))
    return out


def audit_regularization(estimate, data, grid, p=2.0, q=2.0, alpha=1.0, gamma=0.1, taus=None,
                         anchor=None, slack=1.25, m=None, tau0=0.0):
    """Fit-then-slack audit of a smoothing estimate for one data set.

    Parameters
    ----------
    estimate : str
        One of ``ESTIMATES``.
    data : dict
        ``{"f": ...}`` plus ``{"F": ...}`` for the divergence-form estimates.
        Prop-1 families use 2D slices ``(N, N)`` (vectors ``(2, N, N)``);
        Prop-2 families use z-mode arrays ``(nzeta, N, N)`` or ``(3, nzeta, N, N)``.
        For ``salpha-div`` and ``salpha-grad-div`` the matrix ``F`` should have
        ``div_bar div_bar F = 0`` (an antisymmetric ``F`` does).
    anchor : float, optional
        Time at which the constant is fitted; defaults to the first sample,
        where the singular factor of the envelope is active.

    The estimate holds if ``lhs(tau) <= slack * C * envelope(tau)`` on every
    sample, with ``C = lhs(anchor) / envelope(anchor)``.
    """
    return audit_regularization_pairs(estimate, data, grid, [(p, q)], alpha, gamma, taus,
                                      anchor, slack, m, tau0)[0]
