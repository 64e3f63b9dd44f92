"""
From-scratch MRT, zero-forcing and power-optimal beamforming designs.

Conventions: ``H`` is ``nt x K`` with user channels as columns, ``gamma``
holds linear SINR targets and ``sigma2`` per-user noise powers (watts).
Directions are unit-norm columns of ``U`` with ``h_k^H u_k`` real positive.
Power loads ``beta`` solve ``A beta = sigma2`` so every SINR constraint is
met with equality.
"""
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import linalg
from ._ops import tally
from .errors import ConvergenceFailure, DegenerateChannel, Infeasible, SingularUpdate

__all__ = [
    "Design",
    "DualState",
    "mrt_directions",
    "zf_directions",
    "solve_dual_fixed_point",
    "dual_residual",
    "make_dual_state",
    "optimal_directions",
    "build_coupling_matrix",
    "power_load",
    "zf_power_load",
    "assemble",
    "total_power",
    "compute_sinr",
    "constraint_margin",
    "mrt_design",
    "zf_design",
    "optimal_design",
]

FP_TOL = 1e-10
FP_MAX_ITER = 500
PI_TOL = 1e-10
PI_MAX_ITER = 500


@dataclass(frozen=True)
class Design:
    """Directions, power loads and the resulting beamformers ``W``."""

    U: np.ndarray
    beta: np.ndarray
    W: np.ndarray
    total_power: float
    achieved_sinr: Optional[np.ndarray] = None

    @property
    def k(self):
        return self.U.shape[1]


@dataclass(frozen=True)
class DualState:
    """Dual variables and the cached ``(I + sum_j nu_j h_j h_j^H)^{-1}``."""

    nu: np.ndarray
    m_inv: np.ndarray
    converged: bool
    iterations: int = 0


def _col_norms2(h):
    return np.einsum("ij,ij->j", h.conj(), h).real


def _phase_fix(h, u):
    """Rotate each column of ``u`` so that ``h_k^H u_k`` is real positive."""
    inner = np.einsum("ij,ij->j", h.conj(), u)
    mag = np.abs(inner)
    rot = np.where(mag > 0, mag / np.where(mag > 0, inner, 1.0), 1.0)
    return u * rot


def mrt_directions(H):
    """Unit-norm matched-filter directions ``u_k = h_k / ||h_k||``."""
    H = np.asarray(H)
    norms = np.sqrt(_col_norms2(H))
    if np.any(norms == 0):
        raise DegenerateChannel("zero channel vector")
    tally(H.size)
    return H / norms


def zf_directions(H):
    """
    Zero-forcing directions and the pseudoinverse they come from.

    Returns
    -------
    U : ndarray
        Normalized columns of ``G``.
    G : ndarray
        ``H (H^H H)^{-1}``.
    """
    G = linalg.refresh_from_scratch(H)
    return normalize_columns(G), G


def normalize_columns(G):
    norms = np.sqrt(_col_norms2(G))
    if np.any(norms == 0):
        raise DegenerateChannel("zero direction")
    return G / norms


def _m_matrix(H, nu):
    nt = H.shape[0]
    return np.eye(nt) + (H * nu) @ H.conj().T


def dual_residual(H, nu, gamma, m_inv):
    """Per-user fixed-point residual ``nu_k h_k^H M^{-1} h_k (1 + 1/gamma_k) - 1``."""
    quad = np.einsum("ij,ij->j", H.conj(), m_inv @ H).real
    return nu * quad * (1.0 + 1.0 / np.asarray(gamma, dtype=float)) - 1.0


def make_dual_state(H, nu, converged=False, iterations=0):
    """Pair ``nu`` with a freshly inverted ``M``."""
    nu = np.asarray(nu, dtype=float)
    m_inv = np.linalg.inv(_m_matrix(H, nu))
    return DualState(nu=nu, m_inv=m_inv, converged=converged, iterations=iterations)


def solve_dual_fixed_point(H, gamma, tol=FP_TOL, max_iter=FP_MAX_ITER, nu0=None,
                           update="leave_one_out"):
    """
    Dual variables of the SINR-constrained power minimization.

    Gauss-Seidel sweeps over users ``k = 1..K``. Each sweep starts from a
    freshly factorized ``M(nu)``; inside the sweep ``S = H^H M^{-1} H`` is
    kept current with rank-one updates as individual ``nu_k`` change.

    Parameters
    ----------
    H : ndarray, shape (nt, K)
    gamma : array_like, shape (K,)
    tol : float
        Stop when the largest relative change of ``nu`` over a sweep is at
        most ``tol``.
    max_iter : int
        Maximum number of sweeps.
    nu0 : array_like, optional
        Warm start. Defaults to ``gamma_k / ||h_k||^2``, a lower bound on the
        solution that is exact for orthogonal channels.
    update : {"leave_one_out", "direct"}
        ``"direct"`` applies ``nu_k <- 1 / (h_k^H M^{-1} h_k (1 + 1/gamma_k))``.
        ``"leave_one_out"`` solves that equation for ``nu_k`` with the other
        users held fixed, ``nu_k <- gamma_k / (h_k^H M_{-k}^{-1} h_k)``. Both
        share the same fixed point; the latter needs far fewer sweeps at high
        SINR.

    Raises
    ------
    ConvergenceFailure
        After ``max_iter`` sweeps without meeting ``tol``.
    """
    if not tol > 0:
        raise ValueError("tol must be positive")
    if update not in ("leave_one_out", "direct"):
        raise ValueError("unknown update rule %r" % update)
    H = np.asarray(H)
    gamma = np.asarray(gamma, dtype=float)
    nt, K = H.shape
    if K == 0:
        return DualState(nu=np.zeros(0), m_inv=np.eye(nt, dtype=complex), converged=True)
    norms2 = _col_norms2(H)
    if np.any(norms2 == 0):
        raise DegenerateChannel("zero channel vector")
    nu = gamma / norms2 if nu0 is None else np.array(nu0, dtype=float)
    change = np.inf

    for it in range(1, max_iter + 1):
        S = H.conj().T @ np.linalg.solve(_m_matrix(H, nu), H)
        tally(nt ** 3 + 2 * nt * nt * K)
        nu_prev = nu.copy()
        for k in range(K):
            skk = S[k, k].real
            if update == "leave_one_out":
                new = gamma[k] * (1.0 - nu[k] * skk) / skk
            else:
                new = 1.0 / ((1.0 + 1.0 / gamma[k]) * skk)
            delta = new - nu[k]
            if delta != 0:
                S -= (delta / (1.0 + delta * skk)) * (S[:, k, None] * S[None, k, :])
            nu[k] = new
        tally(K ** 3)
        change = float(np.max(np.abs(nu - nu_prev) / nu))
        if not np.all(np.isfinite(nu)) or np.any(nu <= 0):
            raise ConvergenceFailure("fixed point left the positive orthant", change, it)
        if change <= tol:
            return make_dual_state(H, nu, converged=True, iterations=it)
    raise ConvergenceFailure(
        "dual fixed point did not converge in %d sweeps (last change %.3e)" % (max_iter, change),
        change, max_iter)


def optimal_directions(H, dual, gamma, mode="closed_form", tol=PI_TOL, max_iter=PI_MAX_ITER):
    """
    Optimal beamforming directions for a given set of dual variables.

    ``closed_form`` normalizes ``M^{-1} h_k``. ``power_iteration`` finds the
    eigenvector of ``nu_k/gamma_k h_k h_k^H - sum_{j != k} nu_j h_j h_j^H``
    with the largest (algebraic) eigenvalue, shifting the spectrum by
    ``sum_{j != k} nu_j ||h_j||^2`` so that eigenvalue also dominates in
    magnitude. The shifted iteration slows down as ``K gamma`` grows; it is
    intended as a cross-check for small systems.
    """
    H = np.asarray(H)
    nt, K = H.shape
    if K == 0:
        return np.zeros((nt, 0), dtype=complex)
    if mode == "closed_form":
        tally(nt * nt * K)
        return _phase_fix(H, normalize_columns(dual.m_inv @ H))
    if mode != "power_iteration":
        raise ValueError("unknown direction mode %r" % mode)

    gamma = np.asarray(gamma, dtype=float)
    nu = dual.nu
    weighted = nu * _col_norms2(H)
    U = np.empty((nt, K), dtype=complex)
    for k in range(K):
        hk = H[:, k]
        others = np.delete(np.arange(K), k)
        Ho = H[:, others]
        nuo = nu[others]
        shift = weighted[others].sum()
        u = hk / np.linalg.norm(hk)
        for it in range(max_iter):
            v = (nu[k] / gamma[k]) * hk * (hk.conj() @ u) - Ho @ (nuo * (Ho.conj().T @ u)) + shift * u
            v /= np.linalg.norm(v)
            ph = hk.conj() @ v
            v *= abs(ph) / ph
            step = np.linalg.norm(v - u)
            u = v
            if step <= tol:
                break
        else:
            raise ConvergenceFailure(
                "power iteration for user %d did not converge in %d steps" % (k, max_iter),
                step, max_iter)
        tally((it + 1) * 2 * nt * K)
        U[:, k] = u
    return U


def build_coupling_matrix(H, U, gamma):
    """``A[i, i] = |h_i^H u_i|^2 / gamma_i`` and ``A[i, j] = -|h_i^H u_j|^2``."""
    H = np.asarray(H)
    gains = np.abs(H.conj().T @ U) ** 2
    tally(H.shape[0] * H.shape[1] * U.shape[1])
    A = -gains
    idx = np.arange(A.shape[0])
    A[idx, idx] = gains[idx, idx] / np.asarray(gamma, dtype=float)
    return A


def check_loads(beta):
    """Reject negative loads and clip round-off; returns the cleaned vector."""
    beta = np.asarray(beta, dtype=float)
    if beta.size == 0:
        return beta
    if not np.all(np.isfinite(beta)):
        raise SingularUpdate("power loads are not finite")
    top = max(float(np.max(beta)), 0.0)
    if np.any(beta < -1e-12 * top) or (top == 0 and np.any(beta < 0)):
        raise Infeasible("SINR targets unreachable with these directions", beta=beta)
    return np.maximum(beta, 0.0)


def power_load(A, sigma2):
    """
    Solve ``A beta = sigma2``.

    Raises
    ------
    SingularUpdate
        ``A`` is numerically singular.
    Infeasible
        The solution has a genuinely negative entry.
    """
    A = np.asarray(A, dtype=float)
    sigma2 = np.asarray(sigma2, dtype=float)
    if A.size == 0:
        return np.zeros(0)
    if np.linalg.cond(A) > 1.0 / linalg.SINGULAR_RTOL:
        raise SingularUpdate("coupling matrix is numerically singular")
    tally(A.shape[0] ** 3)
    return check_loads(np.linalg.solve(A, sigma2))


def zf_power_load(H, U, gamma, sigma2):
    """Decoupled ZF loads ``beta_k = gamma_k sigma_k^2 / |h_k^H u_k|^2``."""
    gain = np.abs(np.einsum("ij,ij->j", np.asarray(H).conj(), U)) ** 2
    tally(H.size)
    return np.asarray(gamma, dtype=float) * np.asarray(sigma2, dtype=float) / gain


def assemble(U, beta, H=None, sigma2=None):
    """Scale directions into beamformers; SINRs are filled when ``H`` is given."""
    beta = np.asarray(beta, dtype=float)
    W = U * np.sqrt(beta)
    sinr = None if H is None else compute_sinr(H, W, sigma2)
    return Design(U=U, beta=beta, W=W, total_power=float(beta.sum()), achieved_sinr=sinr)


def total_power(design):
    return design.total_power


def compute_sinr(H, W, sigma2):
    """Analytic SINR of every user; a zero beamformer gives SINR 0."""
    P = np.abs(np.asarray(H).conj().T @ W) ** 2
    signal = np.diag(P).copy()
    interference = P.sum(axis=1) - signal
    return signal / (interference + np.asarray(sigma2, dtype=float))


def constraint_margin(H, W, gamma, sigma2):
    """``h_k^H Q_k h_k - sigma_k^2``, nonnegative exactly when SINR_k >= gamma_k."""
    P = np.abs(np.asarray(H).conj().T @ W) ** 2
    signal = np.diag(P).copy()
    interference = P.sum(axis=1) - signal
    return signal / np.asarray(gamma, dtype=float) - interference - np.asarray(sigma2, dtype=float)


def mrt_design(H, gamma, sigma2):
    """MRT directions with coupled power loading; returns ``(design, A^{-1})``."""
    U = mrt_directions(H)
    A = build_coupling_matrix(H, U, gamma)
    beta = power_load(A, sigma2)
    return assemble(U, beta, H, sigma2), np.linalg.inv(A)


def zf_design(H, gamma, sigma2):
    """ZF directions with decoupled loads; returns ``(design, G)``."""
    U, G = zf_directions(H)
    beta = zf_power_load(H, U, gamma, sigma2)
    return assemble(U, beta, H, sigma2), G


def optimal_design(H, gamma, sigma2, mode="closed_form", **fp_kwargs):
    """Power-optimal design; returns ``(design, dual_state)``."""
    dual = solve_dual_fixed_point(H, gamma, **fp_kwargs)
    U = optimal_directions(H, dual, gamma, mode=mode)
    beta = power_load(build_coupling_matrix(H, U, gamma), sigma2)
    return assemble(U, beta, H, sigma2), dual
