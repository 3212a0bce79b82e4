"""Initial data and random test fields.

Perturbations are built as ``curl_bar A`` of localized, z-band-limited
vector potentials, so they are divergence-free to machine precision and
carry no zeta=0 mass in ``w^z``.
"""

import math

import numpy as np

from .grid import VorticityState, fft_xi, ifft_xi, bz_norm


def gaussian_bump(grid, center, sigma):
    x1, x2 = grid.XI
    return np.exp(-((x1 - center[0]) ** 2 + (x2 - center[1]) ** 2) / (2 * sigma ** 2))


def random_potential(grid, rng, zeta_max=2, n_bumps=3, sigma=1.0, spread=1.0,
                     axial_zeta0=False):
    """Random real vector potential as a (3, 2N_z+1, N, N) mode array.

    Each component is a sum of Gaussian bumps (centers within ``spread`` of
    the origin) times random z-modes with ``|zeta| <= zeta_max``.  Unless
    ``axial_zeta0`` is set the axial component has no zeta=0 part, so the
    resulting ``w^xi`` has no z-independent part either.
    """
    g = grid
    zm = min(zeta_max, g.N_z)
    A = np.zeros((3, g.n_modes, g.N_xi, g.N_xi), complex)
    for comp in range(3):
        for zeta in range(0, zm + 1):
            if comp == 2 and zeta == 0 and not axial_zeta0:
                continue
            prof = np.zeros((g.N_xi, g.N_xi))
            for _ in range(n_bumps):
                c = rng.uniform(-spread, spread, size=2)
                prof += rng.standard_normal() * gaussian_bump(g, c, sigma)
            if zeta == 0:
                A[comp, g.N_z] += prof
            else:
                ph = np.exp(1j * rng.uniform(0, 2 * np.pi))
                A[comp, g.N_z + zeta] += 0.5 * ph * prof
                A[comp, g.N_z - zeta] += 0.5 * np.conj(ph) * prof
    return A


def curl_bar(A, grid, tau):
    """Scaled curl ``(d_2 A_3 - s d_z A_2, s d_z A_1 - d_1 A_3, d_1 A_2 - d_2 A_1)``."""
    s = math.exp(0.5 * tau)
    kap = grid.kappa_for(A.shape[-3])[:, None, None]
    a = fft_xi(A)
    ik1, ik2, sk = 1j * grid.K[0], 1j * grid.K[1], 1j * s * kap
    return ifft_xi(np.stack([ik2 * a[2] - sk * a[1], sk * a[0] - ik1 * a[2],
                             ik1 * a[1] - ik2 * a[0]]))


def perturbation(grid, seed=0, tau=0.0, zeta_max=2, sigma=1.0, spread=1.0, m=None,
                 axial_zeta0=False):
    """Divergence-free perturbation with unit ``B_zL^2(m)`` norm."""
    rng = np.random.default_rng(seed)
    A = random_potential(grid, rng, zeta_max, sigma=sigma, spread=spread,
                         axial_zeta0=axial_zeta0)
    w = curl_bar(A, grid, tau)
    w = _real_symmetric(w, grid)
    m = grid.weight_m if m is None else m
    return w / bz_norm(w, grid, 2.0, m)


def perturbed_oseen(grid, alpha=1.0, eps=0.01, seed=0, tau=0.0, gauge="core", **kw):
    """``alpha G e_z + eps * perturbation`` as a state in the requested gauge."""
    w = eps * perturbation(grid, seed, tau, **kw)
    st = VorticityState.from_array(grid, w, tau, alpha, "core",
                                   meta={"eps": eps, "seed": seed, "alpha": alpha})
    return st if gauge == "core" else st.full()


def z_independent_field(grid, seed=0, n_bumps=4, sigma=1.0, spread=1.5, mean_free=True):
    """Random 2D vorticity (N, N); mean-free by subtracting a matched Gaussian."""
    rng = np.random.default_rng(seed)
    om = np.zeros((grid.N_xi, grid.N_xi))
    for _ in range(n_bumps):
        c = rng.uniform(-spread, spread, size=2)
        om += rng.standard_normal() * gaussian_bump(grid, c, sigma)
    if mean_free:
        mass = grid.cell_area * np.sum(om)
        om -= mass * grid.G
    return om


def dipole(grid, sep=1.0, sigma=0.8, strength=1.0):
    """Mean-free dipole pair of opposite Gaussian vortices."""
    return strength * (gaussian_bump(grid, (0.5 * sep, 0.0), sigma)
                       - gaussian_bump(grid, (-0.5 * sep, 0.0), sigma))


def state_from_2d(grid, omega, tau=0.0, alpha=0.0):
    """Embed a 2D vorticity as the z-independent 3D field ``(0, 0, omega)``."""
    arr = np.zeros((3, grid.n_modes, grid.N_xi, grid.N_xi), complex)
    arr[2, grid.N_z] = omega
    return VorticityState.from_array(grid, arr, tau, alpha, "full")


def random_band_limited(grid, rng, kmax=6, zeta_max=3, decay=1.0, mean_free=False):
    """Real random field (2N_z+1, N, N) with xi-wavenumber index ``<= kmax``.

    The coefficients are drawn per wavenumber index, so the same generator
    state yields the same continuous field on any grid with the same box.
    """
    g = grid
    zm = min(zeta_max, g.N_z)
    n = 2 * kmax + 1
    if g.N_xi // 2 <= kmax:
        raise ValueError("grid too coarse for the requested band")
    out = np.zeros((g.n_modes, g.N_xi, g.N_xi), complex)
    idx = np.r_[0:kmax + 1, -kmax:0] % g.N_xi
    for zeta in range(0, zm + 1):
        c = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
        spec = np.zeros((g.N_xi, g.N_xi), complex)
        spec[np.ix_(idx, idx)] = c
        if mean_free:
            spec[0, 0] = 0.0
        f = ifft_xi(spec) * (g.N_xi / 64.0) ** 2 * np.exp(-decay * zeta)
        if zeta == 0:
            out[g.N_z] = f.real
        else:
            out[g.N_z + zeta] = f
            out[g.N_z - zeta] = np.conj(f)
    return out


def localized_random(grid, rng, zeta_max=3, n_bumps=3, sigma=1.0, spread=2.0):
    """Real random localized scalar field (2N_z+1, N, N)."""
    A = random_potential(grid, rng, zeta_max, n_bumps, sigma, spread, axial_zeta0=True)
    return A[2]


def _real_symmetric(arr, grid):
    N = grid.N_z
    half = arr[..., N:, :, :].copy()
    half[:, 0] = half[:, 0].real
    neg = np.conj(half[..., :0:-1, :, :])
    return np.concatenate([neg, half], axis=-3)


def broadband_localized(grid, rng, zeta_max=2, width=2.0, decay=1.0, n_modes=None):
    """Real localized noise filtered to the 2/3 band, as a (n_modes, N, N) mode array.

    White noise under a Gaussian window of the given width, so every resolved
    xi-scale is present.  z-modes up to ``zeta_max`` carry weight
    ``exp(-decay * zeta)``; ``n_modes=1`` gives a single z-independent slice.
    """
    g = grid
    n = g.n_modes if n_modes is None else n_modes
    c = n // 2
    win = gaussian_bump(g, (0.0, 0.0), width)
    kmax = np.abs(g.K[0]).max()
    band = (np.abs(g.K[0]) < 2 / 3 * kmax) & (np.abs(g.K[1]) < 2 / 3 * kmax)
    out = np.zeros((n, g.N_xi, g.N_xi), complex)
    for zeta in range(0, min(zeta_max, c) + 1):
        f = ifft_xi(fft_xi(rng.standard_normal((g.N_xi, g.N_xi)) * win) * band).real
        f *= np.exp(-decay * zeta)
        if zeta == 0:
            out[c] = f
        else:
            ph = np.exp(1j * rng.uniform(0, 2 * np.pi))
            out[c + zeta] = ph * f
            out[c - zeta] = np.conj(ph) * f
    return out


def remove_xi_mean(w, grid):
    """Zero the xi-mean of ``w^xi`` on every z-mode except zeta=0.

    In a periodic box the zero xi-wavenumber stands in for the whole
    low-frequency region, and on z-modes its induced velocity does not shrink
    as the axial scale ``e^{tau/2}`` goes to zero.  The divergence is unchanged
    since the zero xi-wavenumber only sees ``w^z``.
    """
    h = fft_xi(np.asarray(w, dtype=complex))
    keep = h[:2, grid.N_z, 0, 0].copy()
    h[:2, :, 0, 0] = 0.0
    h[:2, grid.N_z, 0, 0] = keep
    return ifft_xi(h)
