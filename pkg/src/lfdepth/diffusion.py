"""Edge-aware quadratic diffusion of sparse depth labels.

Minimises, over a 4-connected grid,

    sum_p  w_d(p) (D(p) - D_o(p))^2  +  sum_(p,q) w_s(p,q) (D(p) - D(q))^2

with ``w_s(p, q) = c / (|I(p) - I(q)| + eps)``. Each undirected neighbour
pair is counted once. The normal equations are SPD whenever at least one
data weight is positive; they are solved with conjugate gradients
preconditioned by an incomplete Cholesky factor.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .core import DepthMap, Epi, LightFieldError, Orientation
from .edges import SparseLabel

SMOOTHNESS_C = 0.1
SMOOTHNESS_EPS = 1e-4
CENTER_WEIGHT = 15.0
SOLVER_TOL = 1e-6


class SingularSystemError(LightFieldError, ValueError):
    pass


class ConvergenceError(LightFieldError, RuntimeError):
    def __init__(self, message: str, residual: float, iterations: int):
        super().__init__(f"{message} (relative residual {residual:.3e} after {iterations} iterations)")
        self.residual = residual
        self.iterations = iterations


@dataclass(frozen=True, eq=False)
class WeightMaps:
    """Data weight/target per pixel and smoothness weight per neighbour pair.

    ``smooth_h[y, x]`` couples ``(y, x)``-``(y, x+1)``; ``smooth_v[y, x]``
    couples ``(y, x)``-``(y+1, x)``.
    """

    data_weight: np.ndarray
    target: np.ndarray
    smooth_h: np.ndarray
    smooth_v: np.ndarray

    @property
    def shape(self) -> tuple[int, int]:
        return self.data_weight.shape


@dataclass(frozen=True, eq=False)
class SparseSystem:
    matrix: sp.csr_matrix
    rhs: np.ndarray
    shape: tuple[int, int]

    @property
    def n(self) -> int:
        return self.rhs.shape[0]

    def index(self, y: int, x: int) -> int:
        return y * self.shape[1] + x

    def pixel(self, i: int) -> tuple[int, int]:
        return divmod(i, self.shape[1])


@dataclass(frozen=True)
class SolveInfo:
    iterations: int
    residual: float
    preconditioner: str


def smoothness_weights(
    intensity: np.ndarray, c: float = SMOOTHNESS_C, eps: float = SMOOTHNESS_EPS
) -> tuple[np.ndarray, np.ndarray]:
    """Per-pair weights ``c / (|I(p) - I(q)| + eps)`` (horizontal, vertical).

    Multi-channel intensities use the Euclidean norm of the difference.
    """
    I = np.asarray(intensity, dtype=np.float64)
    dh = I[:, 1:] - I[:, :-1]
    dv = I[1:, :] - I[:-1, :]
    if I.ndim == 3:
        gh = np.sqrt((dh**2).sum(axis=-1))
        gv = np.sqrt((dv**2).sum(axis=-1))
    else:
        gh, gv = np.abs(dh), np.abs(dv)
    return c / (gh + eps), c / (gv + eps)


def accumulate_labels(
    shape: tuple[int, int],
    rows: np.ndarray,
    cols: np.ndarray,
    values: np.ndarray,
    weights: np.ndarray,
    data_weight: np.ndarray | None = None,
    target: np.ndarray | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Merge labels into per-pixel data weight and target.

    Several labels on one pixel combine exactly as their energy terms do:
    the weights add and the target is their weighted mean.
    """
    w = np.zeros(shape) if data_weight is None else np.array(data_weight, dtype=np.float64)
    wt = np.zeros(shape) if target is None else np.where(w > 0, np.nan_to_num(target) * w, 0.0)
    rows = np.asarray(rows, dtype=np.int64)
    cols = np.asarray(cols, dtype=np.int64)
    weights = np.asarray(weights, dtype=np.float64)
    np.add.at(w, (rows, cols), weights)
    np.add.at(wt, (rows, cols), weights * np.asarray(values, dtype=np.float64))
    with np.errstate(invalid="ignore", divide="ignore"):
        tgt = np.where(w > 0, wt / w, np.nan)
    return w, tgt


def build_system(intensity: np.ndarray | None, weights: WeightMaps) -> SparseSystem:
    """Normal equations ``(diag(w_d) + L_s) D = w_d * D_o`` in CSR form."""
    wd = np.asarray(weights.data_weight, dtype=np.float64)
    H, W = wd.shape
    if weights.smooth_h.shape != (H, W - 1) or weights.smooth_v.shape != (H - 1, W):
        raise ValueError("smoothness weight grids do not match the data grid")
    if intensity is not None and np.shape(intensity)[:2] != (H, W):
        raise ValueError("intensity grid does not match the weight grid")
    if not (wd > 0).any():
        raise SingularSystemError("all data weights are zero; solution is defined only up to a constant")
    if (wd < 0).any() or (weights.smooth_h <= 0).any() or (weights.smooth_v <= 0).any():
        raise ValueError("data weights must be >= 0 and smoothness weights > 0")
    n = H * W
    idx = np.arange(n).reshape(H, W)
    p = np.concatenate([idx[:, :-1].ravel(), idx[:-1, :].ravel()])
    q = np.concatenate([idx[:, 1:].ravel(), idx[1:, :].ravel()])
    ws = np.concatenate([weights.smooth_h.ravel(), weights.smooth_v.ravel()])
    diag = wd.ravel().copy()
    np.add.at(diag, p, ws)
    np.add.at(diag, q, ws)
    rows = np.concatenate([np.arange(n), p, q])
    cols = np.concatenate([np.arange(n), q, p])
    vals = np.concatenate([diag, -ws, -ws])
    A = sp.csr_matrix((vals, (rows, cols)), shape=(n, n))
    A.sort_indices()
    b = (wd * np.nan_to_num(weights.target)).ravel()
    return SparseSystem(A, b, (H, W))


def ichol0(A: sp.csr_matrix) -> sp.csc_matrix:
    """Zero-fill incomplete Cholesky factor ``L`` (lower, CSC) with ``A ~ L L^T``.

    Raises ``ValueError`` on a non-positive pivot.
    """
    L = sp.tril(A, format="csr")
    L.sort_indices()
    indptr, indices, data = L.indptr, L.indices, L.data.astype(np.float64).copy()
    n = A.shape[0]
    rows = []  # per row: dict col -> value of the factor
    for i in range(n):
        start, stop = indptr[i], indptr[i + 1]
        row: dict[int, float] = {}
        for pos in range(start, stop):
            j = indices[pos]
            a_ij = data[pos]
            if j < i:
                rj = rows[j]
                acc = a_ij
                for k, lik in row.items():
                    ljk = rj.get(k)
                    if ljk is not None:
                        acc -= lik * ljk
                row[j] = acc / rj[j]
            else:
                pivot = a_ij - sum(v * v for v in row.values())
                if pivot <= 0.0:
                    raise ValueError(f"non-positive pivot at row {i}")
                row[i] = math.sqrt(pivot)
            data[pos] = row[j] if j < i else row[i]
        rows.append(row)
    return sp.csr_matrix((data, indices, indptr), shape=A.shape).tocsc()


class _Preconditioner:
    def __init__(self, A: sp.csr_matrix, kind: str = "ic0"):
        self.kind = kind
        if kind == "ic0":
            try:
                L = ichol0(A)
                self._lu = splu(
                    L, permc_spec="NATURAL", diag_pivot_thresh=0.0, options={"SymmetricMode": True}
                )
            except (ValueError, RuntimeError):
                self.kind = "jacobi"
        if self.kind == "jacobi":
            self._inv_diag = 1.0 / A.diagonal()
        elif self.kind not in ("ic0", "none"):
            raise ValueError(f"unknown preconditioner {kind!r}")

    def __call__(self, r: np.ndarray) -> np.ndarray:
        if self.kind == "ic0":
            return self._lu.solve(self._lu.solve(r), trans="T")
        if self.kind == "jacobi":
            return self._inv_diag * r
        return r.copy()


def default_max_iter(n: int) -> int:
    return int(10 * math.sqrt(n) + 200)


def _min_ritz(alphas: list[float], betas: list[float]) -> float:
    """Smallest eigenvalue of the CG Lanczos tridiagonal for ``M^-1 A``."""
    a = np.asarray(alphas)
    bt = np.asarray(betas[: len(a) - 1])
    diag = 1.0 / a
    diag[1:] += bt / a[:-1]
    off = np.sqrt(bt) / a[:-1]
    T = np.diag(diag) + np.diag(off, 1) + np.diag(off, -1)
    return float(np.linalg.eigvalsh(T)[0])


def pcg(
    A: sp.csr_matrix,
    b: np.ndarray,
    tol: float = SOLVER_TOL,
    max_iter: int | None = None,
    x0: np.ndarray | None = None,
    preconditioner: str = "ic0",
) -> tuple[np.ndarray, SolveInfo]:
    """Preconditioned CG until ``|b - A x| <= tol * |b|`` and the estimated
    relative solution error is at most ``tol``.

    The error ``A^-1 r`` is estimated as ``|M^-1 r| / theta_min`` with
    ``theta_min`` the smallest Ritz value of the preconditioned operator, since
    a small residual alone does not bound the error on ill-conditioned grids.
    """
    n = b.shape[0]
    if max_iter is None:
        max_iter = default_max_iter(n)
    M = _Preconditioner(A, preconditioner)
    bnorm = float(np.linalg.norm(b))
    x = np.zeros(n) if x0 is None else np.array(x0, dtype=np.float64)
    if bnorm == 0.0:
        return np.zeros(n), SolveInfo(0, 0.0, M.kind)
    r = b - A @ x
    it = 0
    while True:
        res = float(np.linalg.norm(r)) / bnorm
        if res == 0.0:
            return x, SolveInfo(it, res, M.kind)
        if it >= max_iter:
            raise ConvergenceError("conjugate gradient did not converge", res, it)
        z = M(r)
        p = z
        rz = float(r @ z)
        alphas: list[float] = []
        betas: list[float] = []
        while it < max_iter:
            Ap = A @ p
            pAp = float(p @ Ap)
            if pAp <= 0.0:
                raise ConvergenceError("matrix is not positive definite", res, it)
            alpha = rz / pAp
            alphas.append(alpha)
            x += alpha * p
            r -= alpha * Ap
            it += 1
            res = float(np.linalg.norm(r)) / bnorm
            z = M(r)
            if res <= tol:
                xnorm = float(np.linalg.norm(x))
                if np.linalg.norm(z) <= tol * _min_ritz(alphas, betas) * xnorm:
                    # guard against recurrence drift before declaring convergence
                    r = b - A @ x
                    res = float(np.linalg.norm(r)) / bnorm
                    if res <= tol:
                        return x, SolveInfo(it, res, M.kind)
                    break
            rz_new = float(r @ z)
            betas.append(rz_new / rz)
            p = z + (rz_new / rz) * p
            rz = rz_new


def solve(
    system: SparseSystem,
    tol: float = SOLVER_TOL,
    max_iter: int | None = None,
    preconditioner: str = "ic0",
    x0: np.ndarray | None = None,
) -> np.ndarray:
    """Solve ``system``; values come back in pixel (row-major) order."""
    x, _ = pcg(system.matrix, system.rhs, tol, max_iter, x0, preconditioner)
    return x


def diffuse(
    intensity: np.ndarray,
    data_weight: np.ndarray,
    target: np.ndarray,
    c: float = SMOOTHNESS_C,
    eps: float = SMOOTHNESS_EPS,
    tol: float = SOLVER_TOL,
    max_iter: int | None = None,
) -> np.ndarray:
    """Dense solution on the grid of ``intensity`` for given data terms."""
    sh, sv = smoothness_weights(intensity, c, eps)
    weights = WeightMaps(np.asarray(data_weight, dtype=np.float64), target, sh, sv)
    system = build_system(intensity, weights)
    wd = weights.data_weight
    # start from the label mean: cheap and deterministic
    x0 = np.full(system.n, float((wd * np.nan_to_num(target)).sum() / wd.sum()))
    x = solve(system, tol, max_iter, x0=x0)
    return x.reshape(system.shape)


def diffuse_grid(
    intensity: np.ndarray,
    labels: Iterable[SparseLabel],
    shape: tuple[int, int] | None = None,
    c: float = SMOOTHNESS_C,
    eps: float = SMOOTHNESS_EPS,
    tol: float = SOLVER_TOL,
    max_iter: int | None = None,
) -> DepthMap:
    """Diffuse sparse labels (pixel ``(x, y)``) over a whole view."""
    labels = list(labels)
    shape = tuple(shape) if shape is not None else np.shape(intensity)[:2]
    if not labels:
        raise SingularSystemError("no labels to diffuse")
    xs = np.array([lb.pixel[0] for lb in labels])
    ys = np.array([lb.pixel[1] for lb in labels])
    ds = np.array([lb.d for lb in labels])
    ws = np.array([lb.weight for lb in labels])
    wd, tgt = accumulate_labels(shape, ys, xs, ds, ws)
    return DepthMap(diffuse(intensity, wd, tgt, c, eps, tol, max_iter))


def diffuse_epi(
    depth_epi: np.ndarray,
    intensity_epi: Epi | np.ndarray,
    guides: Iterable[SparseLabel] = (),
    orientation: Orientation | str | None = None,
    center_weight: float = CENTER_WEIGHT,
    c: float = SMOOTHNESS_C,
    eps: float = SMOOTHNESS_EPS,
    tol: float = SOLVER_TOL,
    max_iter: int | None = None,
) -> np.ndarray:
    """Angular inpainting of a depth EPI with holes (NaN).

    Reprojected values get ``center_weight``; line guides (in view/pixel
    coordinates of this EPI) add their own weight. Row ``a`` of the result
    is the depth of view ``a`` along this EPI's spatial line.
    """
    D_o = np.asarray(depth_epi, dtype=np.float64)
    if isinstance(intensity_epi, Epi):
        orientation = intensity_epi.orientation
        I = intensity_epi.data
    else:
        I = np.asarray(intensity_epi, dtype=np.float64)
    orientation = Orientation(orientation or Orientation.HORIZONTAL)
    known = np.isfinite(D_o)
    wd = np.where(known, center_weight, 0.0)
    tgt = np.where(known, D_o, np.nan)
    guides = list(guides)
    if guides:
        if orientation is Orientation.HORIZONTAL:
            rows = [g.view[1] for g in guides]
            cols = [g.pixel[0] for g in guides]
        else:
            rows = [g.view[0] for g in guides]
            cols = [g.pixel[1] for g in guides]
        wd, tgt = accumulate_labels(
            D_o.shape, rows, cols, [g.d for g in guides], [g.weight for g in guides], wd, tgt
        )
    return diffuse(I, wd, tgt, c, eps, tol, max_iter)
