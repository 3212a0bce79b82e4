import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st, HealthCheck

from oseenlab.grid import (Grid, SpectralField, VorticityState, weighted_lp_norm, bz_norm,
                           scaled_divergence, project_div_free, divergence_array, project_array,
                           fft_xi, ifft_xi, d_xi, z_to_phys, z_from_phys, z_half_to_phys,
                           z_half_from_phys, full_from_half, half_from_full, circulation_profile,
                           dilate, boundary_tail)
from oseenlab.fields import random_band_limited, perturbation

G_L2 = 1 / math.sqrt(8 * math.pi)  # ||G||_{L^2} = (1/(8 pi))^{1/2}


class TestGrid:
    @pytest.mark.parametrize("kw", [{"N_xi": 8}, {"N_xi": 63}, {"L_xi": 0.0},
                                    {"weight_m": 2.0}, {"weight_m": 6.5}, {"N_z": -1},
                                    {"z_period": 0.0}])
    def test_rejects(self, kw):
        with pytest.raises(ValueError):
            Grid(**kw)

    def test_quadrature_total(self, small):
        assert small.cell_area * small.N_xi ** 2 == pytest.approx((2 * small.L_xi) ** 2)

    def test_dealias_mask(self, small):
        n = np.abs(small.wavenumber_index)
        mask = small.dealias_mask
        bad = (n[:, None] > small.N_xi // 3) | (n[None, :] > small.N_xi // 3)
        assert not np.any(mask & bad)
        assert np.all(mask | bad)

    def test_kappa_default_period(self, small):
        assert np.array_equal(small.kappa, small.zeta.astype(float))

    def test_kappa_for_half_and_full(self, small):
        assert np.array_equal(small.kappa_for(small.N_z + 1), small.kappa[small.N_z:])
        with pytest.raises(ValueError):
            small.kappa_for(2)


class TestNorms:
    def test_gaussian_l2(self, default_grid):
        assert weighted_lp_norm(default_grid.G, default_grid, 2, 0) == pytest.approx(G_L2, rel=1e-12)
        assert G_L2 == pytest.approx(0.199471, abs=5e-7)

    @pytest.mark.parametrize("p", [4 / 3, 2, 4, np.inf])
    @pytest.mark.parametrize("m", [0, 3])
    def test_zero(self, small, p, m):
        assert weighted_lp_norm(np.zeros((small.N_xi,) * 2), small, p, m) == 0.0

    def test_refinement(self):
        a, b = Grid(L_xi=12, N_xi=128), Grid(L_xi=16, N_xi=256)
        na = weighted_lp_norm(a.G, a, 2, 3)
        nb = weighted_lp_norm(b.G, b, 2, 3)
        assert abs(na - nb) / nb < 1e-8

    def test_weighted_gaussian_closed_form(self, default_grid):
        # m = 1: int (1 + r^2) exp(-r^2/2) dxi / (16 pi^2) = 2 pi (1 + 2) / (16 pi^2)
        n = weighted_lp_norm(default_grid.G, default_grid, 2, 1.0)
        assert n ** 2 == pytest.approx(3 / (8 * math.pi), rel=1e-10)

    def test_unsupported_p(self, small):
        with pytest.raises(ValueError):
            weighted_lp_norm(small.G, small, 3.0, 0)

    def test_sup(self, small):
        assert weighted_lp_norm(small.G, small, np.inf, 0) == pytest.approx(1 / (4 * math.pi))


class TestBz:
    def test_z_independent(self, default_grid):
        f = SpectralField.from_slice(default_grid, default_grid.G)
        assert bz_norm(f, p=2, m=0) == pytest.approx(G_L2, rel=1e-12)
        assert np.all(f.modes[np.arange(default_grid.n_modes) != default_grid.N_z] == 0)

    def test_cosine(self, default_grid):
        f = SpectralField.from_function(default_grid, lambda x, y, z: np.exp(-(x * x + y * y) / 4)
                                        / (4 * np.pi) * np.cos(z))
        assert abs(f.mode(1)[0, 0]) > 0
        assert bz_norm(f, p=2, m=0) == pytest.approx(G_L2, rel=1e-12)

    def test_half_ladder(self, small, rng):
        f = random_band_limited(small, rng)
        assert bz_norm(f, small, 2, 3) == pytest.approx(
            bz_norm(half_from_full(f, small.N_z), small, 2, 3, half=True), rel=1e-13)

    @settings(max_examples=20, deadline=None, suppress_health_check=[HealthCheck.function_scoped_fixture])
    @given(st.integers(0, 2 ** 31))
    def test_holder(self, small, seed):
        rng = np.random.default_rng(seed)
        f = random_band_limited(small, rng, zeta_max=2)
        g = random_band_limited(small, rng, zeta_max=2)
        # product modes by direct convolution over zeta
        N = small.N_z
        fg = np.zeros((4 * N + 1,) + f.shape[1:], complex)
        for i in range(2 * N + 1):
            for j in range(2 * N + 1):
                fg[i + j] += f[i] * g[j]
        big = Grid(small.L_xi, small.N_xi, 2 * N)
        lhs = bz_norm(fg, big, 2, 0)
        assert lhs <= bz_norm(f, small, 4, 0) * bz_norm(g, small, 4, 0) + 1e-8

    @settings(max_examples=20, deadline=None, suppress_health_check=[HealthCheck.function_scoped_fixture])
    @given(st.integers(0, 2 ** 31))
    def test_embedding(self, small, seed):
        rng = np.random.default_rng(seed)
        f = random_band_limited(small, rng)
        phys = z_to_phys(f, 4 * small.n_modes)
        sup = max(weighted_lp_norm(phys[k].real, small, 2, 3) for k in range(phys.shape[0]))
        assert sup <= bz_norm(f, small, 2, 3) * (1 + 1e-12)


class TestSpectral:
    def test_parseval(self, small, rng):
        f = rng.normal(size=(small.N_xi, small.N_xi))
        grid_side = small.cell_area * np.sum(f ** 2)
        spec_side = small.cell_area * np.sum(np.abs(fft_xi(f)) ** 2) / small.N_xi ** 2
        assert grid_side == pytest.approx(spec_side, rel=1e-12)

    @pytest.mark.parametrize("n", [1, 3, 10])
    def test_derivative_exact(self, small, n):
        k = n * math.pi / small.L_xi
        x1, x2 = small.XI
        f = np.sin(k * x1) * np.cos(2 * k * x2)
        assert np.max(np.abs(d_xi(f, small, 0) - k * np.cos(k * x1) * np.cos(2 * k * x2))) < 1e-12
        assert np.max(np.abs(d_xi(f, small, 1) + 2 * k * np.sin(k * x1) * np.sin(2 * k * x2))) < 1e-12

    def test_z_round_trip(self, small, rng):
        f = random_band_limited(small, rng)
        assert np.max(np.abs(z_from_phys(z_to_phys(f, small.Mz), small.N_z) - f)) < 1e-13
        h = half_from_full(f, small.N_z)
        assert np.max(np.abs(z_half_from_phys(z_half_to_phys(h, small.Mz), small.N_z) - h)) < 1e-13
        assert np.array_equal(full_from_half(h), f)

    def test_z_synthesis_matches_fft(self, small, rng):
        f = random_band_limited(small, rng)
        h = half_from_full(f, small.N_z)
        ref = np.fft.irfft(h, n=small.Mz, axis=-3) * small.Mz
        assert np.max(np.abs(z_half_to_phys(h, small.Mz) - ref)) < 1e-13

    def test_complex_z_transform(self, small, rng):
        f = rng.normal(size=(small.n_modes, 4, 4)) + 1j * rng.normal(size=(small.n_modes, 4, 4))
        back = z_from_phys(z_to_phys(f, small.Mz, real=False), small.N_z, real=False)
        assert np.max(np.abs(back - f)) < 1e-13

    def test_conjugate_symmetry(self, small, rng):
        f = SpectralField(small, random_band_limited(small, rng))
        assert f.is_conjugate_symmetric()
        assert np.max(np.abs(f.to_physical().imag)) == 0

    def test_field_shape_checked(self, small):
        with pytest.raises(ValueError):
            SpectralField(small, np.zeros((3, 4, 4)))

    def test_dilate_gaussian(self):
        a, b = Grid(L_xi=12, N_xi=64), Grid(L_xi=8, N_xi=96)
        x = b.XI
        out = dilate(a.G, a, b, 1.5)
        ref = np.exp(-(2.25 * (x[0] ** 2 + x[1] ** 2)) / 4) / (4 * np.pi)
        assert np.max(np.abs(out - ref)) < 1e-12

    def test_boundary_tail(self, small):
        assert boundary_tail(small.G, small) < 1e-10
        assert boundary_tail(np.ones((small.N_xi,) * 2), small) > 0.1
        assert boundary_tail(np.zeros((small.N_xi,) * 2), small) == 0.0


def _state(grid, arr, tau=0.0):
    return VorticityState.from_array(grid, arr, tau, 0.0, "full")


class TestDivergence:
    @pytest.mark.parametrize("tau", [-3.0, 0.0, 2.0])
    def test_oseen(self, small, tau):
        w = VorticityState.oseen(small, 2.0, tau)
        assert np.max(np.abs(scaled_divergence(w).modes)) < 1e-15

    def test_curl_of_stream(self, small, rng):
        psi = random_band_limited(small, rng)
        arr = np.stack([d_xi(psi, small, 1), -d_xi(psi, small, 0), np.zeros_like(psi)])
        assert np.max(np.abs(scaled_divergence(_state(small, arr, 0.7)).modes)) < 1e-12

    @pytest.mark.parametrize("tau", [-2.0, 0.0, 1.5])
    def test_project_then_divergence(self, small, rng, tau):
        arr = np.stack([random_band_limited(small, rng) for _ in range(3)])
        p = project_div_free(_state(small, arr, tau))
        assert np.max(np.abs(scaled_divergence(p).modes)) < 1e-10
        assert p.wz.is_conjugate_symmetric()

    def test_idempotent_on_div_free(self, small):
        w = _state(small, perturbation(small, 3, 0.5), 0.5)
        p = project_div_free(w)
        assert np.max(np.abs(p.array - w.array)) < 1e-14

    def test_gradient_removed(self, small, rng):
        phi = random_band_limited(small, rng, mean_free=True)
        tau = 0.3
        kap = small.kappa[:, None, None]
        arr = np.stack([d_xi(phi, small, 0), d_xi(phi, small, 1),
                        ifft_xi(1j * math.exp(tau / 2) * kap * fft_xi(phi))])
        p = project_div_free(_state(small, arr, tau))
        assert np.max(np.abs(p.array)) < 1e-12 * np.max(np.abs(arr))

    def test_contraction_against_dense_projection(self, small, rng):
        tau = 0.4
        arr = np.stack([random_band_limited(small, rng, zeta_max=2) for _ in range(3)])
        p = project_div_free(_state(small, arr, tau)).array
        assert bz_norm(p, small, 2, 0) <= bz_norm(arr, small, 2, 0) * (1 + 1e-12)
        # dense oracle: I - n n^T / |n|^2 on a handful of (zeta, k) modes
        A, P = fft_xi(arr), fft_xi(p)
        s = math.exp(tau / 2)
        for (iz, i, j) in [(small.N_z, 1, 0), (small.N_z + 1, 2, 3), (small.N_z - 2, 5, 1),
                           (small.N_z + 1, 0, 0)]:
            n = np.array([small.K[0][i, j], small.K[1][i, j], s * small.kappa[iz]])
            M = np.eye(3) - np.outer(n, n) / (n @ n) if n @ n > 0 else np.eye(3)
            assert np.allclose(P[:, iz, i, j], M @ A[:, iz, i, j], atol=1e-10)

    def test_divergence_array_half(self, small, rng):
        arr = np.stack([random_band_limited(small, rng) for _ in range(3)])
        full = divergence_array(arr, small, 0.2)
        half = divergence_array(half_from_full(arr, small.N_z), small, 0.2)
        assert np.allclose(half, full[small.N_z:], atol=1e-14)
        ph = project_array(half_from_full(arr, small.N_z), small, 0.2)
        assert np.allclose(ph, project_array(arr, small, 0.2)[:, small.N_z:], atol=1e-14)


def test_circulation_profile_oseen(small):
    w = VorticityState.oseen(small, 1.7)
    prof = circulation_profile(w)
    assert np.allclose(prof, 1.7, atol=1e-12)


def test_gauge_round_trip(small):
    w = VorticityState.oseen(small, 1.3)
    c = w.core()
    assert c.gauge == "core" and np.max(np.abs(c.array)) < 1e-16
    assert np.array_equal(c.full().array, w.array)
    with pytest.raises(ValueError):
        VorticityState.from_array(small, w.array, gauge="weird")
