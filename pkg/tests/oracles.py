"""Independent reference implementations used only by the test suite.

Every function here re-derives a quantity through a different numerical
route than the library under test: real-space finite differences instead
of plane waves, quadrature instead of closed forms, generic ODE/matrix-
exponential integration instead of the production propagators, and a
direct chain model for transport.  Nothing in this module imports the
package.
"""

from __future__ import annotations

import math

import numpy as np
from scipy import integrate, linalg, sparse
from scipy.constants import atomic_mass, hbar, h as h_planck
from scipy.sparse.linalg import eigsh
from scipy.special import eval_hermite, gammaln

CS_MASS_ORACLE = 132.905451931 * atomic_mass   # Cs-133, CODATA mass in kg


# ---------------------------------------------------------------------------
# band structure: 4th-order finite differences with Bloch boundary conditions


def _fd_bloch_matrix(v_grid: np.ndarray, mass: float, a: float,
                     q_over_k: float) -> np.ndarray:
    """Dense FD Hamiltonian on one period with psi(z+a) = e^{iqa} psi(z).

    4th-order central stencil for the kinetic term; q_over_k is the
    quasimomentum in units of k = pi/a (so the Bloch phase over one
    period is exp(i * pi * q_over_k)).
    """
    n = v_grid.size
    dz = a / n
    phase = np.exp(1j * math.pi * q_over_k)
    t = hbar ** 2 / (2.0 * mass * dz ** 2)

    m = np.zeros((n, n), dtype=complex)
    # -psi'' ~ (psi[j-2] - 16 psi[j-1] + 30 psi[j] - 16 psi[j+1] + psi[j+2])/12
    coeff = {-2: 1.0 / 12.0, -1: -16.0 / 12.0, 0: 30.0 / 12.0,
             1: -16.0 / 12.0, 2: 1.0 / 12.0}
    for off, c in coeff.items():
        for j in range(n):
            i = j + off
            wrap = i // n          # -1, 0 or 1 here
            m[j, i % n] += t * c * phase ** wrap
    m[np.arange(n), np.arange(n)] += v_grid
    return m


def fd_band_energies(v_callable, mass: float, a: float, q_over_k: float,
                     n_bands: int, n_grid: int = 512) -> np.ndarray:
    """Lowest band energies at one quasimomentum, Richardson-extrapolated.

    Solves the FD problem at n_grid and 2*n_grid points; the 4th-order
    truncation error cancels to leading order in the combination
    (16 E_fine - E_coarse) / 15.
    """
    def solve(n):
        z = np.arange(n) * (a / n)
        m = _fd_bloch_matrix(np.asarray(v_callable(z), dtype=float),
                             mass, a, q_over_k)
        vals = np.linalg.eigvalsh(m)
        return np.sort(vals)[:n_bands]

    coarse = solve(n_grid)
    fine = solve(2 * n_grid)
    return (16.0 * fine - coarse) / 15.0


def fd_box_bound_count(v_callable, mass: float, a: float,
                       n_sites: int = 8, points_per_site: int = 512
                       ) -> int:
    """Number of eigenstates below the potential maximum, Dirichlet box."""
    n = n_sites * points_per_site
    dz = a / points_per_site
    z = (np.arange(n) - n / 2) * dz
    v = np.asarray(v_callable(z), dtype=float)
    t = hbar ** 2 / (2.0 * mass * dz ** 2)
    diags = [np.full(n - 2, t / 12.0), np.full(n - 1, -16.0 * t / 12.0),
             v + 30.0 * t / 12.0,
             np.full(n - 1, -16.0 * t / 12.0), np.full(n - 2, t / 12.0)]
    ham = sparse.diags(diags, offsets=[-2, -1, 0, 1, 2], format="csc")
    v_max = float(v.max())
    # levels per well ~ depth / (hbar omega) with omega = 2 sqrt(U E_R)/hbar
    e_r = hbar ** 2 * (math.pi / a) ** 2 / (2.0 * mass)
    est = 0.5 * math.sqrt((v_max - float(v.min())) / e_r) + 8.0
    k = min(n_sites * int(est + 1), n - 2)
    vals = eigsh(ham, k=k, sigma=float(v.min()) - 1e-30,
                 return_eigenvectors=False)
    vals = np.sort(vals)
    if vals[-1] < v_max:       # need more states than requested
        raise RuntimeError("increase k: all computed states are bound")
    per_site = int(np.count_nonzero(vals < v_max))
    if per_site % n_sites:
        # near-rim states of the n_sites copies split across the barrier
        # top; round to the nearest complete multiplet
        per_site = int(round(per_site / n_sites) * n_sites)
    return per_site // n_sites


# ---------------------------------------------------------------------------
# displaced harmonic oscillator overlap by quadrature


def quad_ho_overlap(n: int, nprime: int, alpha: float) -> float:
    """<n'(x - d) | n(x)> via adaptive quadrature, with alpha = d/(2 x0).

    Uses x0 = 1 units, i.e. the harmonic length sqrt(hbar/(2 m Omega))
    equals one and d = 2 alpha.
    """
    d = 2.0 * alpha

    def psi(k, x):
        # stationary state of the oscillator with <x^2>_0 = 1
        log_norm = -0.25 * math.log(2.0 * math.pi) \
            - 0.5 * (k * math.log(2.0) + gammaln(k + 1))
        return np.exp(log_norm - x ** 2 / 4.0) * eval_hermite(
            k, x / math.sqrt(2.0))

    lo = min(-d, 0.0) - 14.0 - 3.0 * max(n, nprime)
    hi = max(-d, 0.0) + 14.0 + 3.0 * max(n, nprime)
    val, err = integrate.quad(
        lambda x: psi(nprime, x + d) * psi(n, x), lo, hi, limit=400)
    if err > 1e-7:
        raise RuntimeError(f"quadrature error {err:.1e} too large")
    return float(val)


# ---------------------------------------------------------------------------
# pulse dynamics: generic matrix-exponential / ODE propagation


def expm_rectangular(diag_hz: np.ndarray, coupling: np.ndarray,
                     bare_rabi_hz: float, duration_s: float,
                     psi0: np.ndarray) -> np.ndarray:
    """Final state under a constant Hamiltonian, one matrix exponential.

    H/h = diag(diag_hz) + (bare_rabi_hz / 2) * coupling, frequencies in
    Hz (the propagation phase carries the 2 pi).
    """
    h_hz = np.diag(diag_hz.astype(complex)) + bare_rabi_hz / 2.0 * coupling
    u = linalg.expm(-1j * 2.0 * math.pi * h_hz * duration_s)
    return u @ psi0


def ivp_pulse(diag_hz: np.ndarray, coupling: np.ndarray,
              bare_rabi_hz: float, envelope, duration_s: float,
              psi0: np.ndarray, rtol: float = 1e-11) -> np.ndarray:
    """Final state under a shaped pulse via a generic stiff-safe solver."""
    d = np.asarray(diag_hz, dtype=complex)
    c = np.asarray(coupling, dtype=complex)

    def rhs(t, y):
        h = np.diag(d) + bare_rabi_hz * float(envelope(t)) / 2.0 * c
        return -1j * 2.0 * math.pi * (h @ y)

    sol = integrate.solve_ivp(rhs, (0.0, duration_s),
                              psi0.astype(complex), method="DOP853",
                              rtol=rtol, atol=1e-13)
    if not sol.success:
        raise RuntimeError(sol.message)
    return sol.y[:, -1]


# ---------------------------------------------------------------------------
# tight-binding chain transport


def chain_walk_sigma(j_right_hz: float, j_left_hz: float, n_cells: int,
                     spacing_right: float, spacing_left: float,
                     times: np.ndarray) -> np.ndarray:
    """Position spread of a walker on an alternating chain.

    Nodes alternate A, B, A, B, ...; the A->B bond to the right of an A
    node has strength j_right_hz and length spacing_right, the next B->A
    bond j_left_hz and length spacing_left.  The walker starts on the
    middle A node.  Returns sigma_x(t) in the same length unit as the
    spacings; energies in Hz (phases carry 2 pi).
    """
    j_right = abs(j_right_hz)                 # sign is gauge for sigma_x
    j_left = abs(j_left_hz)
    n = 2 * n_cells
    x = np.zeros(n)
    for i in range(1, n):
        x[i] = x[i - 1] + (spacing_right if i % 2 else spacing_left)
    ham = np.zeros((n, n))
    for i in range(n - 1):
        j = j_right if i % 2 == 0 else j_left
        ham[i, i + 1] = ham[i + 1, i] = j
    vals, vecs = np.linalg.eigh(ham)
    start = 2 * (n_cells // 2)
    proj = vecs[start, :]                     # <E|start>
    phases = np.exp(-1j * 2.0 * math.pi * np.outer(times, vals))
    amps = phases * proj[None, :]
    prob = np.abs(amps @ vecs.T) ** 2          # (nt, n)
    mean = prob @ x
    mean2 = prob @ x ** 2
    return np.sqrt(np.maximum(mean2 - mean ** 2, 0.0))


# ---------------------------------------------------------------------------
# cooling: brute-force Lindblad integration and the ideal-removal chain


def lindblad_steady_nbar(h_hz: np.ndarray, jumps: list,
                         rho0: np.ndarray, t_final: float,
                         n_of_index: np.ndarray,
                         rtol: float = 1e-8) -> float:
    """Mean occupation after integrating a master equation generically.

    d rho/dt = -2 pi i [H, rho] + sum_k D[L_k] rho, H in Hz, jump rates
    inside the operators in 1/s.  Integration uses a generic ODE solver
    on the vectorized density matrix (column stacking via np.kron with
    the transpose convention), which shares nothing with the package's
    stepping code.
    """
    d = h_hz.shape[0]
    eye = np.eye(d)
    lv = -1j * 2.0 * math.pi * (np.kron(eye, h_hz) - np.kron(h_hz.T, eye))
    for l_op in jumps:
        ll = l_op.conj().T @ l_op
        lv += np.kron(l_op.conj(), l_op)
        lv -= 0.5 * (np.kron(eye, ll) + np.kron(ll.T, eye))

    def rhs(t, y):
        return lv @ y

    sol = integrate.solve_ivp(rhs, (0.0, t_final),
                              rho0.reshape(-1, order="F").astype(complex),
                              method="DOP853", rtol=rtol, atol=1e-12)
    if not sol.success:
        raise RuntimeError(sol.message)
    rho = sol.y[:, -1].reshape((d, d), order="F")
    tr = float(np.real(np.trace(rho)))
    if abs(tr - 1.0) > 1e-6:
        raise RuntimeError(f"trace drifted to {tr}")
    pops = np.real(np.diag(rho)) / tr
    return float(n_of_index @ pops)


def ideal_removal_jumps(q: np.ndarray, removal_rate: float,
                        repump_rate: float) -> tuple:
    """Jumps for the idealized cooling cycle on two n-level manifolds.

    Removal: |1,n> -> |0,n-1> for n >= 1 and |1,0> -> |0,0> (the drive
    keeps cycling the ground level through the repump), all at
    removal_rate.  Repump: |0,n> -> |1,n'> at repump_rate * q[n', n].
    Basis ordering [S0 0..n-1 | S1 0..n-1]; returns (jumps, n_of_index).
    """
    n = q.shape[1]
    dim = 2 * n
    jumps = []
    for src in range(n):                      # removal from |1, src>
        dst = max(src - 1, 0)
        l_op = np.zeros((dim, dim))
        l_op[dst, n + src] = math.sqrt(removal_rate)
        jumps.append(l_op)
    for src in range(n):                      # repump from |0, src>
        for dst in range(min(q.shape[0], n)):
            rate = repump_rate * q[dst, src]
            if rate > 0:
                l_op = np.zeros((dim, dim))
                l_op[n + dst, src] = math.sqrt(rate)
                jumps.append(l_op)
    n_of_index = np.concatenate([np.arange(n), np.arange(n)])
    return jumps, n_of_index


def cycle_chain_steady_nbar(q: np.ndarray) -> float:
    """Steady occupation of the discrete cooling cycle n -> q[:, max(n-1,0)].

    One cycle lowers by one quantum (or cycles the ground state) and
    then redistributes by q; the stationary distribution is the
    Perron eigenvector of the cycle map.
    """
    n = q.shape[1]
    t = np.zeros((n, n))
    for src in range(n):
        t[:, src] = q[:n, max(src - 1, 0)]
    t /= t.sum(axis=0, keepdims=True)
    vals, vecs = np.linalg.eig(t)
    i = int(np.argmin(np.abs(vals - 1.0)))
    pi = np.real(vecs[:, i])
    pi = np.abs(pi) / np.abs(pi).sum()
    return float(np.arange(n) @ pi)
