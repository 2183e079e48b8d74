"""Dense linear algebra kernels shared by every quantizer.

Matrices are plain ``float64`` numpy arrays, row-major, one vector per row.
"""

import numpy as np

__all__ = [
    "as_matrix",
    "pairwise_sq_dist",
    "svd",
    "jacobi_svd",
    "procrustes_rotation",
    "orthogonality_error",
    "random_orthogonal",
]

JACOBI_TOL = 1e-12
JACOBI_MAX_SWEEPS = 100


def as_matrix(x, name="matrix", ndim=2):
    """Convert ``x`` to a finite float64 array with ``ndim`` dimensions."""
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != ndim:
        raise ValueError(f"{name} must be {ndim}-D, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains NaN or Inf")
    return arr


def pairwise_sq_dist(a, b):
    """Squared Euclidean distances between the rows of ``a`` and ``b``.

    Parameters
    ----------
    a : (n, D) array_like
    b : (k, D) array_like

    Returns
    -------
    (n, k) ndarray with entry ``(i, j) = sum_d (a[i, d] - b[j, d])**2``.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[1]:
        raise ValueError(
            f"dimension mismatch: a has shape {a.shape}, b has shape {b.shape}"
        )
    a2 = np.einsum("ij,ij->i", a, a)
    b2 = np.einsum("ij,ij->i", b, b)
    d = a @ b.T
    d *= -2.0
    d += a2[:, None]
    d += b2[None, :]
    np.maximum(d, 0.0, out=d)
    return d


def _complete_basis(u, rank):
    # Fill columns rank.. of u with an orthonormal complement (deterministic).
    p, q = u.shape
    basis = u[:, :rank]
    filled = [basis[:, c] for c in range(rank)]
    for e in np.eye(p):
        if len(filled) == q:
            break
        v = e.copy()
        for f in filled:
            v -= (f @ v) * f
        for f in filled:  # second pass for stability
            v -= (f @ v) * f
        nv = np.linalg.norm(v)
        if nv > 1e-8:
            filled.append(v / nv)
    return np.column_stack(filled)


def jacobi_svd(m, tol=JACOBI_TOL, max_sweeps=JACOBI_MAX_SWEEPS):
    """One-sided (Hestenes) Jacobi SVD.

    Returns ``(U, S, Vt)`` in the thin form, with ``S`` sorted in
    non-increasing order. Sweeps run in cyclic row order until every
    pairwise rotation has ``|cos angle| < tol``.
    """
    m = as_matrix(m, "m")
    p, q = m.shape
    if p < q:
        u, s, vt = jacobi_svd(m.T, tol=tol, max_sweeps=max_sweeps)
        return vt.T, s, u.T

    a = m.copy()
    v = np.eye(q)
    for _ in range(max_sweeps):
        rotated = False
        for i in range(q - 1):
            for j in range(i + 1, q):
                ai = a[:, i]
                aj = a[:, j]
                alpha = ai @ ai
                beta = aj @ aj
                gamma = ai @ aj
                if gamma == 0.0 or abs(gamma) <= tol * np.sqrt(alpha * beta):
                    continue
                rotated = True
                zeta = (beta - alpha) / (2.0 * gamma)
                t = np.copysign(1.0, zeta) / (abs(zeta) + np.sqrt(1.0 + zeta * zeta))
                c = 1.0 / np.sqrt(1.0 + t * t)
                s = c * t
                new_i = c * ai - s * aj
                new_j = s * ai + c * aj
                a[:, i] = new_i
                a[:, j] = new_j
                vi = v[:, i].copy()
                v[:, i] = c * vi - s * v[:, j]
                v[:, j] = s * vi + c * v[:, j]
        if not rotated:
            break

    sigma = np.linalg.norm(a, axis=0)
    order = np.argsort(-sigma, kind="stable")
    sigma = sigma[order]
    a = a[:, order]
    v = v[:, order]
    scale = sigma[0] if q and sigma[0] > 0 else 1.0
    rank = int(np.sum(sigma > scale * 1e-14)) if q else 0
    u = np.zeros((p, q))
    u[:, :rank] = a[:, :rank] / sigma[:rank]
    if rank < q:
        u = _complete_basis(u, rank)
        sigma[rank:] = 0.0
    return u, sigma, v.T


def svd(m, method="lapack"):
    """Thin singular value decomposition ``m = U @ diag(S) @ Vt``.

    ``method="lapack"`` uses numpy's LAPACK driver; ``method="jacobi"``
    uses :func:`jacobi_svd`. Both reject non-finite input.
    """
    m = as_matrix(m, "m")
    if method == "jacobi":
        return jacobi_svd(m)
    if method != "lapack":
        raise ValueError(f"unknown svd method {method!r}")
    return np.linalg.svd(m, full_matrices=False)


def procrustes_rotation(source, target, method="lapack"):
    """Orthogonal matrix ``W`` minimizing ``||W @ source.T - target.T||_F``.

    ``source`` and ``target`` are ``(n, D)`` point sets matched row by row.
    With ``M = source.T @ target = U S Vt`` the minimizer is ``(U @ Vt).T``.
    Reflections (det = -1) are allowed. An empty point set yields identity.
    """
    source = np.asarray(source, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if source.ndim != 2 or source.shape != target.shape:
        raise ValueError(
            f"dimension mismatch: source {source.shape} vs target {target.shape}"
        )
    n, dim = source.shape
    if n == 0:
        return np.eye(dim)
    u, _, vt = svd(source.T @ target, method=method)
    return (u @ vt).T


def orthogonality_error(t):
    """Frobenius norm of ``t.T @ t - I``."""
    t = np.asarray(t, dtype=np.float64)
    return float(np.linalg.norm(t.T @ t - np.eye(t.shape[1])))


def random_orthogonal(dim, rng):
    """Haar-distributed random orthogonal matrix."""
    rng = np.random.default_rng(rng)
    q, r = np.linalg.qr(rng.standard_normal((dim, dim)))
    return q * np.sign(np.diag(r))
