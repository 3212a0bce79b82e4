import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from oseenlab.grid import (Grid, VorticityState, half_from_full, full_from_half, z_to_phys,
                           z_from_phys, d_xi, weighted_lp_norm, bz_norm)
from oseenlab.biot_savart import total_velocity_array
from oseenlab.evolution import EvolutionControls, evolve, evolve_core, nonlinear_term
from oseenlab.diagnostics import (error_terms_R, error_terms_Rprime, GaugeError, monitor,
                                  fit_decay_rate, anchored_check, decreasing_after,
                                  audit_gradient_bound, chordal_weight, z_weighted_norm,
                                  convolve_z, holder_ratio, difference_closed_form_error,
                                  audit_biot_savart_difference, transient_index)
from oseenlab.fields import perturbation, perturbed_oseen, z_independent_field, state_from_2d
from oseenlab.grid import SpectralField


@pytest.fixture(scope="module")
def fine():
    return Grid(12, 128, 3)


def _state(grid, arr, tau=0.0, alpha=0.0, gauge="full"):
    return VorticityState.from_array(grid, arr, tau, alpha, gauge)


class TestR:
    def test_oseen(self, small):
        f, n = error_terms_R(VorticityState.oseen(small, 2.0))
        assert n == 0 or n < 1e-15
        assert np.max(np.abs(f)) < 1e-15

    def test_z_independent_wz(self, small):
        om = z_independent_field(small, 4) + small.G
        _, n = error_terms_R(state_from_2d(small, om))
        assert n < 1e-15

    def test_matches_nonlinearity(self, fine):
        # R = -(z-part of the full nonlinearity) - (2D-type transport of w^z)
        g, tau = fine, 0.2
        w = 0.2 * perturbation(g, 11, tau)
        w[2, g.N_z] += g.G
        u = half_from_full(w, g.N_z)
        N = full_from_half(nonlinear_term(u, g, tau, dealias=False))[2]
        only_z = np.zeros_like(u)
        only_z[2] = u[2]
        v2 = full_from_half(total_velocity_array(only_z, g, tau))
        Mz = 4 * g.N_z + 1
        P = lambda a: z_to_phys(a, Mz, real=False)  # noqa: E731
        adv = P(v2[0]) * P(d_xi(w[2], g, 0)) + P(v2[1]) * P(d_xi(w[2], g, 1))
        oracle = -(N + z_from_phys(adv, g.N_z, real=False))
        R, _ = error_terms_R(_state(g, w, tau))
        got = full_from_half(R[:g.N_z + 1])
        assert np.max(np.abs(got - oracle)) < 1e-10 * np.max(np.abs(oracle))

    def test_core_gauge_equivalent(self, small):
        wc = perturbed_oseen(small, 1.0, 0.05, seed=3, gauge="core")
        a = error_terms_R(wc)[1]
        b = error_terms_R(wc.full())[1]
        assert a == pytest.approx(b, rel=1e-13)

    def test_terms(self, small):
        w = perturbed_oseen(small, 1.0, 0.05, seed=3, gauge="full")
        f, n, parts = error_terms_R(w, terms=True)
        assert len(parts) == 3 and n <= sum(parts) * (1 + 1e-12)

    def test_gauge_violation(self, small):
        arr = np.zeros((3, small.n_modes, 64, 64), complex)
        arr[2, small.N_z] = small.G
        with pytest.raises(GaugeError):
            error_terms_R(_state(small, arr, alpha=1.0, gauge="core"))


class TestRprime:
    def test_zero(self, small):
        _, n = error_terms_Rprime(VorticityState.zeros(small, alpha=1.0, gauge="core"))
        assert n == 0

    def test_z_independent(self, small):
        arr = np.zeros((3, small.n_modes, 64, 64), complex)
        arr[2, small.N_z] = z_independent_field(small, 2)
        _, n = error_terms_Rprime(_state(small, arr, alpha=1.0, gauge="core"))
        assert n < 1e-15

    def test_requires_core(self, small):
        with pytest.raises(GaugeError):
            error_terms_Rprime(VorticityState.oseen(small, 1.0))

    def test_quadratic_scaling(self, small):
        wc = perturbed_oseen(small, 1.0, 0.05, seed=1, gauge="core")
        n1 = error_terms_Rprime(wc)[1]
        n2 = error_terms_Rprime(wc.with_array(2 * wc.array))[1]
        assert n2 == pytest.approx(4 * n1, rel=1e-12)


class TestMonitor:
    def test_oseen(self, small):
        t = evolve(VorticityState.oseen(small, 1.0), 0.3, EvolutionControls(snapshot_stride=10))
        mon = monitor(t, error_terms=True)
        for k in ("wc", "wc_xi", "dz_wcz", "z_wcz", "tail"):
            assert max(getattr(mon, k)) < 1e-10
        assert max(mon.extra["R"]) < 1e-12

    def test_tail_band_limited(self, small):
        w = perturbed_oseen(small, 1.0, 0.1, seed=0, gauge="core")
        mon = monitor([w], R_cut=small.N_z)
        assert mon.tail == [0.0]
        assert monitor([w], R_cut=0).tail[0] > 0

    def test_csv(self, small):
        mon = monitor([VorticityState.zeros(small, alpha=1.0, gauge="core")])
        lines = mon.to_csv().strip().splitlines()
        assert lines[0].startswith("tau,wc,") and len(lines) == 2

    def test_rejects_negative(self):
        from oseenlab.diagnostics import AssumptionMonitor
        with pytest.raises(ValueError):
            AssumptionMonitor([0], [-1], [0], [0], [0], [0], [0], 3, 2, 0.0)

    def test_gradient_bound_oseen(self, small):
        t = evolve(VorticityState.oseen(small, 1.5), 1.0, EvolutionControls(snapshot_stride=10))
        rep = audit_gradient_bound(t, tau_transient=0.2)
        ref = 1.5 * bz_norm(np.stack([small.gradG[0], small.gradG[1]])[:, None], small, 2, 3)
        assert np.allclose(rep["grad_w"], ref, rtol=1e-9)
        assert max(rep["grad_wxi"]) < 1e-12 and max(rep["dzbar_wz"]) < 1e-12


class TestZWeight:
    @given(st.floats(-20, 20), st.floats(0, 10))
    def test_chordal(self, z, zc):
        P = 2 * math.pi
        c = chordal_weight(z, zc, P)
        d = abs((z - zc + P / 2) % P - P / 2)
        assert c <= d + 1e-12
        assert c >= 2 / math.pi * d - 1e-12
        assert chordal_weight(z + P, zc, P) == pytest.approx(c, abs=1e-9)

    def test_single_mode(self, small):
        # |sin z| cos z -> mode content computed by direct quadrature
        u = np.zeros((small.N_z + 1, 64, 64), complex)
        u[1] = 0.5 * small.G
        n = z_weighted_norm(u, small, 0.0, 3)
        M = 4096
        z = 2 * np.pi * np.arange(M) / M
        prof = 2 * np.abs(np.sin(z / 2)) * np.cos(z)
        coeff = np.fft.fft(prof) / M
        ref = np.sum(np.abs(coeff)) * weighted_lp_norm(small.G, small, 2, 3)
        assert n == pytest.approx(ref, rel=1e-3)


class TestFits:
    def test_exact(self):
        t = np.linspace(0, 8, 30)
        r = fit_decay_rate(zip(t, np.exp(-0.5 * t)))
        assert abs(r.exponent + 0.5) < 1e-12 and r.n_points == 30

    def test_wiggle(self):
        t = np.linspace(0, 8, 30)
        r = fit_decay_rate(zip(t, np.exp(-0.5 * t) * (1 + 0.01 * np.sin(t))))
        assert abs(r.exponent + 0.5) < 0.02

    def test_window(self):
        t = np.linspace(0, 8, 30)
        v = np.where(t < 2, 1.0, np.exp(-(t - 2)))
        assert fit_decay_rate(zip(t, v), window=(2, 8)).exponent == pytest.approx(-1.0)

    @pytest.mark.parametrize("series", [[(0, 1), (1, 1), (2, 1)], [(0, 1), (1, 0), (2, 1), (3, 1)]])
    def test_rejects(self, series):
        with pytest.raises(ValueError):
            fit_decay_rate(series)


class TestAnchored:
    def test_holds(self):
        r = anchored_check([2, 1.5, 1.2], [1, 1, 1])
        assert r["holds"] and r["constant"] == 2

    def test_fails(self):
        r = anchored_check([1, 1.3, 1], [1, 1, 1])
        assert not r["holds"] and r["violations"] == [1]

    @given(st.lists(st.floats(0.1, 10), min_size=2, max_size=20), st.floats(0.1, 10))
    def test_scale_invariant(self, rhs, c):
        rhs = np.array(rhs)
        r = anchored_check(c * rhs, rhs)
        assert r["holds"] and r["max_ratio"] == pytest.approx(1.0)

    def test_decreasing(self):
        assert decreasing_after([3, 2, 1])
        assert not decreasing_after([3, 2, 2.5])
        assert decreasing_after([5, 6, 4, 3], start=1)
        assert decreasing_after([1, 1e-12, 2e-12])  # round-off floor
        assert transient_index([0, 0.5, 1.0, 1.5], 1.0) == 2


class TestInequalities:
    def test_convolution(self, rng):
        f = rng.normal(size=(5, 4, 4)) + 0j
        g = rng.normal(size=(5, 4, 4)) + 0j
        c = convolve_z(f, g)
        for k in range(9):
            ref = sum(f[i] * g[k - i] for i in range(5) if 0 <= k - i < 5)
            assert np.allclose(c[k], ref)

    def test_holder(self, small, rng):
        f = perturbation(small, 1, 0.0)[2]
        g = perturbation(small, 2, 0.0)[0]
        assert holder_ratio(f, g, small) <= 1.0

    @pytest.mark.parametrize("tau", [-5.0, 0.0])
    def test_difference_closed_form(self, small, tau):
        assert difference_closed_form_error(small, tau) < 1e-13

    def test_difference_audit(self, small):
        f = SpectralField(small, perturbation(small, 0, 0.0)[0])
        r = audit_biot_savart_difference(f, np.linspace(-8, -2, 7))
        assert r["holds"] and r["tau"][-1] == -2.0
