"""Dense real-matrix kernel.

Matrices are plain 2-D ``float64`` numpy arrays.  The functions here add the
shape checks, purity and determinism guarantees the simulator relies on, and a
cyclic Jacobi eigensolver for the symmetric matrices used in spectral
analysis of mixing matrices.
"""
from __future__ import annotations

import numpy as np

SYMMETRY_TOL = 1e-10
JACOBI_TOL = 1e-12
JACOBI_MAX_SWEEPS = 100


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible."""


class NotSymmetricError(ValueError):
    pass


class ConvergenceError(RuntimeError):
    pass


def as_matrix(a, name: str = "matrix") -> np.ndarray:
    """Copy ``a`` into a finite 2-D float64 array."""
    m = np.array(a, dtype=np.float64, copy=True)
    if m.ndim != 2 or m.shape[0] < 1 or m.shape[1] < 1:
        raise ShapeError(f"{name} must be a non-empty 2-D matrix, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise ValueError(f"{name} has non-finite entries")
    return m


def _check_finite(m: np.ndarray, op: str) -> np.ndarray:
    if not np.all(np.isfinite(m)):
        raise FloatingPointError(f"{op} produced non-finite entries")
    return m


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"cannot multiply {a.shape} by {b.shape}: inner dimensions differ")
    return _check_finite(a @ b, "matmul")


def frobenius_norm_sq(a: np.ndarray) -> float:
    """Sum of squared entries."""
    a = np.asarray(a, dtype=np.float64)
    return float(np.sum(a * a))


def scale_add(a: np.ndarray, alpha: float, b: np.ndarray, beta: float) -> np.ndarray:
    """Return ``alpha * a + beta * b`` for equally shaped ``a`` and ``b``."""
    if a.shape != b.shape:
        raise ShapeError(f"shape mismatch in scale_add: {a.shape} vs {b.shape}")
    return _check_finite(alpha * a + beta * b, "scale_add")


def gaussian_matrix(rows: int, cols: int, sigma: float, rng: np.random.Generator) -> np.ndarray:
    """I.i.d. N(0, sigma^2) entries drawn from ``rng``."""
    if not sigma > 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    if rows < 1 or cols < 1:
        raise ShapeError(f"invalid shape ({rows}, {cols})")
    return sigma * rng.standard_normal((rows, cols))


def _round_robin(n: int) -> list[tuple[np.ndarray, np.ndarray]]:
    # circle-method tournament: every pair (p, q) appears exactly once per sweep,
    # pairs within a round are disjoint so their rotations commute
    players = list(range(n)) + ([-1] if n % 2 else [])
    m = len(players)
    rounds = []
    for _ in range(m - 1):
        ps, qs = [], []
        for i in range(m // 2):
            p, q = players[i], players[m - 1 - i]
            if p >= 0 and q >= 0:
                ps.append(min(p, q))
                qs.append(max(p, q))
        rounds.append((np.array(ps, dtype=np.intp), np.array(qs, dtype=np.intp)))
        players = [players[0], players[-1]] + players[1:-1]
    return rounds


def _off_norm(a: np.ndarray) -> float:
    off = a[~np.eye(a.shape[0], dtype=bool)]
    return float(np.sqrt(np.sum(off * off)))


def symmetric_eigh(a: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Eigen-decomposition of a symmetric matrix by cyclic Jacobi rotations.

    Returns ``(eigenvalues, eigenvectors)`` with eigenvalues in descending
    order and eigenvectors as the matching columns.  Rotations inside one
    round of the round-robin ordering act on disjoint index pairs, so they are
    applied together.
    """
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ShapeError(f"eigensolver needs a square matrix, got shape {a.shape}")
    asym = float(np.max(np.abs(a - a.T))) if a.size else 0.0
    if asym > SYMMETRY_TOL:
        raise NotSymmetricError(f"matrix is not symmetric (max |a_ij - a_ji| = {asym:.3e})")
    n = a.shape[0]
    work = 0.5 * (a + a.T)
    v = np.eye(n)
    scale = np.sqrt(frobenius_norm_sq(work))
    if n == 1 or scale == 0.0:
        return _sorted(np.diag(work).copy(), v)

    rounds = _round_robin(n)
    for _ in range(JACOBI_MAX_SWEEPS):
        if _off_norm(work) <= JACOBI_TOL * scale:
            break
        for p, q in rounds:
            apq = work[p, q]
            active = apq != 0.0
            if not np.any(active):
                continue
            p, q, apq = p[active], q[active], apq[active]
            with np.errstate(over="ignore", divide="ignore"):
                tau = (work[q, q] - work[p, p]) / (2.0 * apq)
                t = np.where(tau >= 0, 1.0, -1.0) / (np.abs(tau) + np.hypot(1.0, tau))
            c = 1.0 / np.sqrt(1.0 + t * t)
            s = t * c
            cols_p, cols_q = work[:, p].copy(), work[:, q]
            work[:, p] = c * cols_p - s * cols_q
            work[:, q] = s * cols_p + c * cols_q
            rows_p, rows_q = work[p, :].copy(), work[q, :]
            work[p, :] = c[:, None] * rows_p - s[:, None] * rows_q
            work[q, :] = s[:, None] * rows_p + c[:, None] * rows_q
            work[p, q] = 0.0
            work[q, p] = 0.0
            vp, vq = v[:, p].copy(), v[:, q]
            v[:, p] = c * vp - s * vq
            v[:, q] = s * vp + c * vq
    else:
        if _off_norm(work) > JACOBI_TOL * scale:
            raise ConvergenceError(f"Jacobi did not converge in {JACOBI_MAX_SWEEPS} sweeps")
    return _sorted(np.diag(work).copy(), v)


def _sorted(w: np.ndarray, v: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    order = np.argsort(-w, kind="stable")
    return w[order], v[:, order]


def symmetric_eigenvalues(a: np.ndarray) -> np.ndarray:
    """All eigenvalues of symmetric ``a``, descending."""
    return symmetric_eigh(a)[0]


def symmetric_spectral_norm(a: np.ndarray) -> float:
    """Spectral norm of a symmetric matrix, i.e. its largest |eigenvalue|."""
    return float(np.max(np.abs(symmetric_eigenvalues(a))))
