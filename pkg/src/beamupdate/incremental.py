"""
Incremental design updates for user arrivals, departures and SINR changes.

A :class:`LiveSystem` bundles the current channels, targets and design with
whatever cached state its scheme needs:

========  ===========================  =============================
scheme    directions change on         cached state
========  ===========================  =============================
MRT       never                        ``A^{-1}`` (coupling inverse)
ZF        user in / user out           ``G = H^+``, optional Gram inverse
OPT       every event                  dual ``nu`` and ``M^{-1}``
========  ===========================  =============================

:func:`apply` is a pure transition ``(system, event) -> system``. ZF and MRT
updates are exact; the OPT approximations keep the incumbents' dual
variables and only estimate the changed user's one.
"""
from dataclasses import dataclass, replace
from enum import Enum
from typing import Optional, Tuple, Union

import numpy as np

from . import core, linalg
from ._ops import tally
from .errors import EmptyResult, RankDeficient

__all__ = [
    "Scheme",
    "UserIn",
    "UserOut",
    "GammaChange",
    "UpdatePolicy",
    "LiveSystem",
    "initialize",
    "apply",
    "audit",
    "zf_user_in",
    "zf_user_out",
    "zf_power_load",
    "opt_user_in",
    "opt_user_out",
    "opt_gamma_change",
    "opt_power_load",
    "mrt_pl_gamma_change",
    "mrt_pl_user_in",
    "mrt_pl_user_out",
]

ZF_METHODS = ("direct", "block")
NU_MODES = ("exact_refit", "inverse_approx", "orthogonal_approx")


class Scheme(str, Enum):
    MRT = "MRT"
    ZF = "ZF"
    OPT = "OPT"


@dataclass(frozen=True)
class UserIn:
    h_new: np.ndarray
    gamma_new: float
    sigma2_new: float

    def __post_init__(self):
        if not self.gamma_new > 0:
            raise ValueError("gamma_new must be positive")
        if not self.sigma2_new > 0:
            raise ValueError("sigma2_new must be positive")


@dataclass(frozen=True)
class UserOut:
    user: int


@dataclass(frozen=True)
class GammaChange:
    user: int
    gamma_new: float

    def __post_init__(self):
        if not self.gamma_new > 0:
            raise ValueError("gamma_new must be positive")


ChangeEvent = Union[UserIn, UserOut, GammaChange]


@dataclass(frozen=True)
class UpdatePolicy:
    """How ZF pseudoinverses and OPT dual variables are updated."""

    zf_method: str = "direct"
    opt_nu_mode: str = "inverse_approx"
    direction_mode: str = "closed_form"

    def __post_init__(self):
        if self.zf_method not in ZF_METHODS:
            raise ValueError("zf_method must be one of %s" % (ZF_METHODS,))
        if self.opt_nu_mode not in NU_MODES:
            raise ValueError("opt_nu_mode must be one of %s" % (NU_MODES,))


@dataclass(frozen=True)
class LiveSystem:
    """
    A served user set with its design and scheme-specific caches.

    ``ids`` holds stable user identifiers in column order; events refer to
    users by identifier, so removals (which compact columns) do not shift
    the meaning of later events.
    """

    scheme: Scheme
    H: np.ndarray
    gamma: np.ndarray
    sigma2: np.ndarray
    design: core.Design
    ids: Tuple[int, ...]
    next_id: int
    zf_g: Optional[np.ndarray] = None
    zf_gram_inv: Optional[np.ndarray] = None
    dual: Optional[core.DualState] = None
    a_inv: Optional[np.ndarray] = None

    @property
    def k(self):
        return self.H.shape[1]

    @property
    def nt(self):
        return self.H.shape[0]

    def index_of(self, user):
        try:
            return self.ids.index(user)
        except ValueError:
            raise KeyError("user %r is not in the system" % (user,)) from None


def _empty_design(nt):
    return core.assemble(np.zeros((nt, 0), dtype=complex), np.zeros(0),
                         np.zeros((nt, 0), dtype=complex), np.zeros(0))


def initialize(scheme, H, gamma, sigma2, keep_gram=True, **fp_kwargs):
    """
    Design a system from scratch and attach the caches its scheme needs.

    ``keep_gram`` stores ``(H^H H)^{-1}`` for ZF so the block update route
    is available without recomputation.
    """
    scheme = Scheme(scheme)
    H = np.asarray(H, dtype=complex)
    gamma = np.asarray(gamma, dtype=float).copy()
    sigma2 = np.asarray(sigma2, dtype=float).copy()
    nt, K = H.shape
    ids = tuple(range(K))
    if K == 0:
        base = dict(scheme=scheme, H=H, gamma=gamma, sigma2=sigma2,
                    design=_empty_design(nt), ids=ids, next_id=0)
        if scheme is Scheme.MRT:
            return LiveSystem(a_inv=np.zeros((0, 0)), **base)
        if scheme is Scheme.ZF:
            return LiveSystem(zf_g=np.zeros((nt, 0), dtype=complex),
                              zf_gram_inv=np.zeros((0, 0), dtype=complex) if keep_gram else None,
                              **base)
        return LiveSystem(dual=core.make_dual_state(H, np.zeros(0), converged=True), **base)

    common = dict(scheme=scheme, H=H, gamma=gamma, sigma2=sigma2, ids=ids, next_id=K)
    if scheme is Scheme.MRT:
        design, a_inv = core.mrt_design(H, gamma, sigma2)
        return LiveSystem(design=design, a_inv=a_inv, **common)
    if scheme is Scheme.ZF:
        design, G = core.zf_design(H, gamma, sigma2)
        gram_inv = G.conj().T @ G if keep_gram else None
        return LiveSystem(design=design, zf_g=G, zf_gram_inv=gram_inv, **common)
    design, dual = core.optimal_design(H, gamma, sigma2, **fp_kwargs)
    return LiveSystem(design=design, dual=dual, **common)


# -- zero-forcing -----------------------------------------------------------

def _gram_inv_of(G, gram_inv):
    # G^H G equals (H^H H)^{-1} whenever G is the pseudoinverse of H
    if gram_inv is not None:
        return gram_inv
    tally(G.shape[0] * G.shape[1] ** 2)
    return G.conj().T @ G


def zf_user_in(G, gram_inv, H, h_new, method="direct"):
    """
    Extend the ZF pseudoinverse by one user.

    ``direct`` corrects the columns of ``G`` in place of any inversion and
    costs ``O(nt K)``; ``block`` extends ``(H^H H)^{-1}`` by block inversion
    and multiplies it back, ``O(nt K^2)``.

    Returns
    -------
    (G_new, gram_inv_new, U_new)
        ``gram_inv_new`` is ``None`` for the direct route.
    """
    h_new = np.asarray(h_new).reshape(-1)
    if method == "direct":
        G_new = linalg.pinv_add_column(G, H, h_new)
        return G_new, None, core.normalize_columns(G_new)
    if method != "block":
        raise ValueError("unknown zf method %r" % method)
    nt, K = H.shape
    if K >= nt:
        raise RankDeficient("cannot add a user to a square system")
    b = H.conj().T @ h_new
    d = np.vdot(h_new, h_new)
    tally(nt * K + nt)
    gram_inv_new = linalg.block_augment_inverse(_gram_inv_of(G, gram_inv), b, b.conj(), d)
    H_new = np.column_stack([H, h_new])
    G_new = H_new @ gram_inv_new
    tally(nt * (K + 1) ** 2)
    return G_new, gram_inv_new, core.normalize_columns(G_new)


def zf_user_out(G, gram_inv, H, index, method="direct"):
    """
    Drop user ``index`` from the ZF pseudoinverse; see :func:`zf_user_in`.

    Raises
    ------
    EmptyResult
        When the last user leaves.
    """
    nt, K = H.shape
    if K == 1:
        raise EmptyResult("last user left the system")
    if method == "direct":
        G_new = linalg.pinv_remove_column(G, index)
        return G_new, None, core.normalize_columns(G_new)
    if method != "block":
        raise ValueError("unknown zf method %r" % method)
    gi = linalg.permute_to_last(_gram_inv_of(G, gram_inv), index)
    gram_inv_new = linalg.block_reduce_inverse(gi, K - 1)
    H_red = np.delete(H, index, axis=1)
    G_new = H_red @ gram_inv_new
    tally(nt * (K - 1) ** 2)
    return G_new, gram_inv_new, core.normalize_columns(G_new)


zf_power_load = core.zf_power_load


# -- optimal ----------------------------------------------------------------

def opt_user_in(dual, H, gamma, h_new, gamma_new, mode="inverse_approx", **fp_kwargs):
    """
    Dual state after a user arrives.

    ``inverse_approx`` gives the newcomer ``gamma / h^H M^{-1} h`` using the
    cached inverse (which does not yet contain the newcomer), ``O(nt^2)``;
    ``orthogonal_approx`` uses ``gamma / ||h||^2``, ``O(nt)``. In both cases
    the incumbents keep their values and ``M^{-1}`` absorbs the newcomer by
    a rank-one update. ``exact_refit`` re-solves the fixed point warm-started
    from the current values.
    """
    h_new = np.asarray(h_new).reshape(-1)
    if mode == "exact_refit":
        H_new = np.column_stack([H, h_new])
        nu0 = np.append(dual.nu, gamma_new / np.vdot(h_new, h_new).real)
        return core.solve_dual_fixed_point(H_new, np.append(gamma, gamma_new), nu0=nu0, **fp_kwargs)
    nu_new = estimate_nu(dual.m_inv, h_new, gamma_new, mode)
    m_inv = linalg.rank_one_update_inverse(dual.m_inv, h_new, nu_new)
    return core.DualState(nu=np.append(dual.nu, nu_new), m_inv=m_inv, converged=False)


def estimate_nu(m_inv, h, gamma, mode):
    """Dual variable estimate for a user absent from ``m_inv``."""
    if mode == "inverse_approx":
        tally(h.size ** 2 + h.size)
        return gamma / np.vdot(h, m_inv @ h).real
    if mode == "orthogonal_approx":
        tally(h.size)
        return gamma / np.vdot(h, h).real
    raise ValueError("unknown nu mode %r" % mode)


def opt_user_out(dual, H, index, gamma=None, mode="inverse_approx", **fp_kwargs):
    """
    Dual state after user ``index`` leaves: its ``nu`` is zeroed (removed) and
    ``M^{-1}`` downdated; nothing else moves. ``exact_refit`` (which needs
    ``gamma`` of the full system) re-solves warm-started.
    """
    if mode == "exact_refit":
        H_red = np.delete(H, index, axis=1)
        return core.solve_dual_fixed_point(H_red, np.delete(gamma, index),
                                           nu0=np.delete(dual.nu, index), **fp_kwargs)
    m_inv = linalg.rank_one_update_inverse(dual.m_inv, H[:, index], -dual.nu[index])
    return core.DualState(nu=np.delete(dual.nu, index), m_inv=m_inv, converged=False)


def opt_gamma_change(dual, H, index, gamma_new, gamma=None, mode="inverse_approx", **fp_kwargs):
    """
    Dual state after user ``index`` gets target ``gamma_new``.

    ``inverse_approx`` evaluates ``gamma_new / h^H M_{-k}^{-1} h`` with the
    leave-one-out inverse obtained by downdating the cached ``M^{-1}``; when
    the old values were exact this equals ``nu_k gamma_new / gamma_k``.
    """
    h = H[:, index]
    nu = dual.nu.copy()
    if mode == "exact_refit":
        g = np.asarray(gamma, dtype=float).copy()
        g[index] = gamma_new
        return core.solve_dual_fixed_point(H, g, nu0=nu, **fp_kwargs)
    loo_inv = linalg.rank_one_update_inverse(dual.m_inv, h, -nu[index])
    nu[index] = estimate_nu(loo_inv, h, gamma_new, mode)
    m_inv = linalg.rank_one_update_inverse(loo_inv, h, nu[index])
    return core.DualState(nu=nu, m_inv=m_inv, converged=False)


def opt_power_load(H, U, gamma, sigma2):
    """Full rebuild of the coupling matrix and solve."""
    return core.power_load(core.build_coupling_matrix(H, U, gamma), sigma2)


# -- MRT power loading ------------------------------------------------------

def _loads(a_inv, sigma2):
    tally(a_inv.shape[0] ** 2)
    return core.check_loads((a_inv @ sigma2).real)


def mrt_pl_gamma_change(a_inv, index, gamma_old, gamma_new, h_index, u_index, sigma2):
    """Only ``A[k, k]`` moves: one rank-one update of ``A^{-1}``."""
    delta = abs(np.vdot(h_index, u_index)) ** 2 * (1.0 / gamma_new - 1.0 / gamma_old)
    e = np.zeros(a_inv.shape[0])
    e[index] = 1.0
    a_inv_new = linalg.rank_one_update_inverse(a_inv, e, delta).real
    return _loads(a_inv_new, sigma2), a_inv_new


def mrt_pl_user_in(a_inv, H, U, h_new, gamma_new, sigma2):
    """
    Border ``A`` with the newcomer's row and column and extend ``A^{-1}``.

    ``H``/``U`` are the incumbents' channels and directions; ``sigma2``
    covers all users including the newcomer.
    """
    u_new = core.mrt_directions(np.asarray(h_new).reshape(-1, 1))[:, 0]
    col = -np.abs(H.conj().T @ u_new) ** 2
    row = -np.abs(U.conj().T @ h_new) ** 2
    d = abs(np.vdot(h_new, u_new)) ** 2 / gamma_new
    tally(2 * H.size)
    a_inv_new = linalg.block_augment_inverse(a_inv, col, row, d).real
    return _loads(a_inv_new, sigma2), a_inv_new


def mrt_pl_user_out(a_inv, index, sigma2):
    """Strip user ``index`` from ``A^{-1}``; ``sigma2`` covers the survivors."""
    a_inv_new = linalg.block_reduce_inverse(linalg.permute_to_last(a_inv, index),
                                            a_inv.shape[0] - 1).real
    return _loads(a_inv_new, sigma2), a_inv_new


# -- dispatch ---------------------------------------------------------------

def apply(system, event, policy=UpdatePolicy(), **fp_kwargs):
    """
    Apply one change event and return the updated system.

    Raises whatever the underlying update raises (``Infeasible``,
    ``RankDeficient``, ``SingularUpdate``, ``ConvergenceFailure``); the input
    system is never modified.
    """
    if isinstance(event, UserIn):
        return _user_in(system, event, policy, fp_kwargs)
    if isinstance(event, UserOut):
        return _user_out(system, system.index_of(event.user), policy, fp_kwargs)
    if isinstance(event, GammaChange):
        return _gamma_change(system, system.index_of(event.user), event.gamma_new,
                             policy, fp_kwargs)
    raise TypeError("unknown event %r" % (event,))


def _user_in(s, ev, policy, fp_kwargs):
    h_new = np.asarray(ev.h_new, dtype=complex).reshape(-1)
    if h_new.size != s.nt:
        raise ValueError("new channel has %d entries, expected %d" % (h_new.size, s.nt))
    H = np.column_stack([s.H, h_new])
    gamma = np.append(s.gamma, ev.gamma_new)
    sigma2 = np.append(s.sigma2, ev.sigma2_new)
    upd = dict(H=H, gamma=gamma, sigma2=sigma2, ids=s.ids + (s.next_id,), next_id=s.next_id + 1)

    if s.scheme is Scheme.MRT:
        U = np.column_stack([s.design.U, core.mrt_directions(h_new.reshape(-1, 1))])
        beta, a_inv = mrt_pl_user_in(s.a_inv, s.H, s.design.U, h_new, ev.gamma_new, sigma2)
        return replace(s, design=core.assemble(U, beta, H, sigma2), a_inv=a_inv, **upd)
    if s.scheme is Scheme.ZF:
        gram_inv = s.zf_gram_inv if policy.zf_method == "block" else None
        G, gram_inv, U = zf_user_in(s.zf_g, gram_inv, s.H, h_new, policy.zf_method)
        beta = zf_power_load(H, U, gamma, sigma2)
        return replace(s, design=core.assemble(U, beta, H, sigma2), zf_g=G,
                       zf_gram_inv=gram_inv, **upd)
    dual = opt_user_in(s.dual, s.H, s.gamma, h_new, ev.gamma_new, policy.opt_nu_mode, **fp_kwargs)
    return _opt_finish(s, dual, H, gamma, sigma2, policy, upd)


def _user_out(s, idx, policy, fp_kwargs):
    H = np.delete(s.H, idx, axis=1)
    gamma = np.delete(s.gamma, idx)
    sigma2 = np.delete(s.sigma2, idx)
    ids = s.ids[:idx] + s.ids[idx + 1:]
    upd = dict(H=H, gamma=gamma, sigma2=sigma2, ids=ids)

    if s.scheme is Scheme.MRT:
        U = np.delete(s.design.U, idx, axis=1)
        beta, a_inv = mrt_pl_user_out(s.a_inv, idx, sigma2)
        return replace(s, design=core.assemble(U, beta, H, sigma2), a_inv=a_inv, **upd)
    if s.scheme is Scheme.ZF:
        gram_inv = s.zf_gram_inv if policy.zf_method == "block" else None
        try:
            G, gram_inv, U = zf_user_out(s.zf_g, gram_inv, s.H, idx, policy.zf_method)
        except EmptyResult:
            G = np.zeros((s.nt, 0), dtype=complex)
            gram_inv = np.zeros((0, 0), dtype=complex)
            U = G
        beta = zf_power_load(H, U, gamma, sigma2)
        return replace(s, design=core.assemble(U, beta, H, sigma2), zf_g=G,
                       zf_gram_inv=gram_inv, **upd)
    dual = opt_user_out(s.dual, s.H, idx, s.gamma, policy.opt_nu_mode, **fp_kwargs)
    return _opt_finish(s, dual, H, gamma, sigma2, policy, upd)


def _gamma_change(s, idx, gamma_new, policy, fp_kwargs):
    gamma = s.gamma.copy()
    gamma[idx] = gamma_new
    H, sigma2 = s.H, s.sigma2

    if s.scheme is Scheme.MRT:
        U = s.design.U
        beta, a_inv = mrt_pl_gamma_change(s.a_inv, idx, s.gamma[idx], gamma_new,
                                          H[:, idx], U[:, idx], sigma2)
        return replace(s, gamma=gamma, design=core.assemble(U, beta, H, sigma2), a_inv=a_inv)
    if s.scheme is Scheme.ZF:
        U = s.design.U
        beta = s.design.beta.copy()
        beta[idx] = zf_power_load(H[:, idx:idx + 1], U[:, idx:idx + 1],
                                  gamma[idx:idx + 1], sigma2[idx:idx + 1])[0]
        return replace(s, gamma=gamma, design=core.assemble(U, beta, H, sigma2))
    dual = opt_gamma_change(s.dual, H, idx, gamma_new, s.gamma, policy.opt_nu_mode, **fp_kwargs)
    return _opt_finish(s, dual, H, gamma, sigma2, policy, dict(gamma=gamma))


def _opt_finish(s, dual, H, gamma, sigma2, policy, upd):
    U = core.optimal_directions(H, dual, gamma, mode=policy.direction_mode)
    beta = opt_power_load(H, U, gamma, sigma2)
    return replace(s, design=core.assemble(U, beta, H, sigma2), dual=dual, **upd)


def audit(system, tol=1e-8, sinr_rtol=1e-6):
    """
    Check a live system's caches against its channels; returns a list of
    human-readable violations (empty when consistent).
    """
    problems = []
    H, d = system.H, system.design
    K = system.k
    eye = np.eye(K)

    def _dev(name, mat, ref):
        err = float(np.max(np.abs(mat - ref))) if mat.size else 0.0
        if not err <= tol:
            problems.append("%s deviates by %.3e" % (name, err))

    if system.zf_g is not None:
        _dev("G^H H", system.zf_g.conj().T @ H, eye)
        if system.zf_gram_inv is not None:
            _dev("gram_inv H^H H", system.zf_gram_inv @ (H.conj().T @ H), eye)
    if system.dual is not None:
        M = np.eye(system.nt) + (H * system.dual.nu) @ H.conj().T
        _dev("M^{-1} M", system.dual.m_inv @ M, np.eye(system.nt))
    if system.a_inv is not None:
        A = core.build_coupling_matrix(H, d.U, system.gamma)
        _dev("A^{-1} A", system.a_inv @ A, eye)
    if K:
        unit = np.abs(np.linalg.norm(d.U, axis=0) - 1.0)
        if np.max(unit) > 1e-10:
            problems.append("directions are not unit norm")
        sinr = core.compute_sinr(H, d.W, system.sigma2)
        rel = np.max(np.abs(sinr / system.gamma - 1.0))
        if not rel <= sinr_rtol:
            problems.append("achieved SINR off target by %.3e relative" % rel)
    if len(system.ids) != K:
        problems.append("id map has %d entries for %d users" % (len(system.ids), K))
    return problems
