"""
Incremental inverse and pseudoinverse maintenance.

Every routine here is a pure function of ndarray inputs. Inverses are plain
square ``complex128`` (or ``float64``) arrays; a pseudoinverse is the
``nt x k`` matrix ``G = H (H^H H)^{-1}`` whose columns satisfy
``G^H H = I``.

Singularity thresholds are relative to the magnitude of the quantities
involved, since channel gains span many orders of magnitude.
"""
import numpy as np

from ._ops import tally
from .errors import EmptyResult, RankDeficient, SingularUpdate

__all__ = [
    "block_augment_inverse",
    "block_reduce_inverse",
    "rank_one_update_inverse",
    "pinv_add_column",
    "pinv_remove_column",
    "refresh_from_scratch",
    "permute_to_last",
]

SINGULAR_RTOL = 1e-12
PINV_REMOVE_RTOL = 1e-14
PINV_ADD_RTOL = 1e-10


def _maxabs(x):
    x = np.asarray(x)
    return float(np.max(np.abs(x))) if x.size else 0.0


def _as_block(x, rows, cols):
    return np.asarray(x).reshape(rows, cols)


def block_augment_inverse(a_inv, b, c, d):
    """
    Inverse of ``[[A, B], [C, D]]`` given ``A^{-1}``.

    Parameters
    ----------
    a_inv : ndarray, shape (n, n)
        Inverse of the top-left block. ``n`` may be zero.
    b : array_like, shape (n, m) or (n,)
        Top-right block.
    c : array_like, shape (m, n) or (n,)
        Bottom-left block.
    d : array_like, shape (m, m) or scalar
        Bottom-right block.

    Returns
    -------
    ndarray, shape (n + m, n + m)

    Raises
    ------
    SingularUpdate
        If the Schur complement ``D - C A^{-1} B`` is numerically singular.

    Notes
    -----
    With ``E = (D - C A^{-1} B)^{-1}`` the result is::

        [[A^{-1} + A^{-1} B E C A^{-1},  -A^{-1} B E],
         [-E C A^{-1},                    E        ]]

    For ``m == 1`` only a scalar reciprocal is taken.
    """
    a_inv = np.asarray(a_inv)
    n = a_inv.shape[0]
    d = np.atleast_2d(np.asarray(d))
    m = d.shape[0]
    b = _as_block(b, n, m)
    c = _as_block(c, m, n)

    ainv_b = a_inv @ b
    c_ainv = c @ a_inv
    correction = c @ ainv_b
    schur = d - correction
    scale = max(_maxabs(d), _maxabs(correction))
    tally(2 * n * n * m + n * m * m)

    if m == 1:
        s = schur[0, 0]
        if abs(s) <= SINGULAR_RTOL * scale or s == 0:
            raise SingularUpdate("Schur complement %.3e is numerically zero" % abs(s))
        e = np.array([[1.0 / s]])
    else:
        e = _inverse_checked(schur, scale)
        tally(m ** 3)

    ainv_b_e = ainv_b @ e
    e_c_ainv = e @ c_ainv
    tally(2 * n * m * m + n * n * m)

    out = np.empty((n + m, n + m), dtype=np.result_type(a_inv, b, c, d, e))
    out[:n, :n] = a_inv + ainv_b_e @ c_ainv
    out[:n, n:] = -ainv_b_e
    out[n:, :n] = -e_c_ainv
    out[n:, n:] = e
    return out


def _inverse_checked(mat, scale):
    s = np.linalg.svd(mat, compute_uv=False)
    if s[-1] <= SINGULAR_RTOL * max(scale, s[0]) or s[-1] == 0:
        raise SingularUpdate("block is numerically singular (smallest singular value %.3e)" % s[-1])
    return np.linalg.inv(mat)


def block_reduce_inverse(full_inv, split):
    """
    Recover ``A^{-1}`` from the inverse of an augmented matrix.

    ``full_inv`` is partitioned as ``[[P, Q], [R, E]]`` with ``P`` of size
    ``split``; the result is ``P - Q E^{-1} R``.
    """
    full_inv = np.asarray(full_inv)
    n = int(split)
    total = full_inv.shape[0]
    if not 0 <= n <= total:
        raise ValueError("split %d outside [0, %d]" % (n, total))
    m = total - n
    p = full_inv[:n, :n]
    if m == 0:
        return p.copy()
    q = full_inv[:n, n:]
    r = full_inv[n:, :n]
    e = full_inv[n:, n:]
    scale = _maxabs(full_inv)
    if m == 1:
        s = e[0, 0]
        if abs(s) <= SINGULAR_RTOL * scale or s == 0:
            raise SingularUpdate("trailing block %.3e is numerically zero" % abs(s))
        tally(n * n)
        return p - np.outer(q[:, 0] / s, r[0, :])
    e_inv = _inverse_checked(e, scale)
    tally(m ** 3 + n * m * m + n * n * m)
    return p - q @ e_inv @ r


def rank_one_update_inverse(a_inv, v, coeff=1.0):
    """
    Sherman-Morrison update: ``(A + coeff * v v^H)^{-1}`` from ``A^{-1}``.

    A negative ``coeff`` removes a rank-one term (downdate). Cost is
    ``O(n^2)``.
    """
    a_inv = np.asarray(a_inv)
    v = np.asarray(v).reshape(-1)
    if coeff == 0 or not np.any(v):
        return a_inv.copy()
    ainv_v = a_inv @ v
    vh_ainv = v.conj() @ a_inv
    quad = vh_ainv @ v
    denom = 1.0 + coeff * quad
    tally(3 * a_inv.shape[0] ** 2)
    if abs(denom) <= SINGULAR_RTOL * max(1.0, abs(coeff * quad)):
        raise SingularUpdate("rank-one update denominator %.3e is numerically zero" % abs(denom))
    return a_inv - (coeff / denom) * np.outer(ainv_v, vh_ainv)


def permute_to_last(mat, idx):
    """Symmetrically move row/column ``idx`` of a square matrix to the end."""
    n = mat.shape[0]
    order = [i for i in range(n) if i != idx] + [idx]
    return mat[np.ix_(order, order)]


def refresh_from_scratch(h):
    """
    Pseudoinverse ``G = H (H^H H)^{-1}`` computed directly.

    Raises
    ------
    RankDeficient
        If ``H`` has more columns than rows or is not of full column rank.
    """
    h = np.asarray(h)
    nt, k = h.shape
    if k == 0:
        return np.zeros((nt, 0), dtype=complex)
    if k > nt:
        raise RankDeficient("%d users exceed %d antennas" % (k, nt))
    s = np.linalg.svd(h, compute_uv=False)
    if s[-1] <= PINV_ADD_RTOL * s[0]:
        raise RankDeficient("channel matrix is rank deficient (condition %.3e)" % (s[0] / s[-1]))
    gram = h.conj().T @ h
    return np.linalg.solve(gram, h.conj().T).conj().T


def pinv_remove_column(g, idx):
    """
    Pseudoinverse of ``H`` with column ``idx`` deleted, from ``G = H^+``.

    Each surviving column becomes ``g_j - (g_i^H g_j / g_i^H g_i) g_i`` where
    ``i = idx``. Cost ``O(nt k)``.
    """
    g = np.asarray(g)
    nt, k = g.shape
    if not 0 <= idx < k:
        raise IndexError("column %d out of range for %d columns" % (idx, k))
    if k == 1:
        raise EmptyResult("removing the only column leaves an empty pseudoinverse")
    g_out = g[:, idx]
    norms2 = np.einsum("ij,ij->j", g.conj(), g).real
    nn = norms2[idx]
    if nn <= PINV_REMOVE_RTOL * norms2.max():
        raise SingularUpdate("removed column has vanishing norm")
    coef = (g_out.conj() @ g) / nn
    tally(2 * nt * k)
    out = g - np.outer(g_out, coef)
    return np.delete(out, idx, axis=1)


def pinv_add_column(g, h_matrix, h_new):
    """
    Pseudoinverse of ``[H, h_new]`` from ``G = H^+``.

    The new column is the component of ``h_new`` orthogonal to the span of
    ``H``, scaled to unit inner product with ``h_new``; old columns are then
    projected so they become orthogonal to ``h_new``. Cost ``O(nt k)``.

    Raises
    ------
    RankDeficient
        If the system is already square or ``h_new`` lies (numerically) in
        the column space of ``H``.
    """
    g = np.asarray(g)
    h_matrix = np.asarray(h_matrix)
    h_new = np.asarray(h_new).reshape(-1)
    nt, k = h_matrix.shape
    if k >= nt:
        raise RankDeficient("cannot add a column to a square system (%d antennas)" % nt)
    resid = h_new - g @ (h_matrix.conj().T @ h_new)
    rn2 = float(np.vdot(resid, resid).real)
    hn2 = float(np.vdot(h_new, h_new).real)
    if hn2 == 0 or rn2 <= (PINV_ADD_RTOL ** 2) * hn2:
        raise RankDeficient("new channel lies in the span of the existing channels")
    # resid^H h_new == ||resid||^2 since resid is orthogonal to span(H)
    g_new = resid / rn2
    coef = (h_new.conj() @ g) / (h_new.conj() @ g_new)
    tally(4 * nt * k + 2 * nt)
    out = np.empty((nt, k + 1), dtype=np.result_type(g, h_new, complex))
    out[:, :k] = g - np.outer(g_new, coef)
    out[:, k] = g_new
    return out
