"""Primal-dual interior-point solver for convex QPs.

    minimize    1/2 x'Qx + c'x
    subject to  A x  = b      (multipliers y, free)
                G x <= h      (multipliers z >= 0)

Lagrangian convention: ``L = f + y'(Ax - b) + z'(Gx - h)``, so the sensitivity of
the optimal value to ``b`` is ``-y`` and to ``h`` is ``-z``.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.optimize import linprog

log = logging.getLogger(__name__)

DENSE_LIMIT = 600


class QPError(RuntimeError):
    pass


@dataclass
class QPResult:
    status: str  # "optimal" | "infeasible" | "failed"
    x: np.ndarray
    y: np.ndarray
    z: np.ndarray
    s: np.ndarray
    obj: float
    iterations: int
    residuals: dict

    @property
    def ok(self) -> bool:
        return self.status == "optimal"


def _as_csr(M, shape) -> sp.csr_matrix:
    if M is None:
        return sp.csr_matrix(shape)
    return sp.csr_matrix(M)


class _KKT:
    """Factorization of the reduced system [[Q + G'WG + dI, A'], [A, -dI]].

    Small systems are assembled and factored densely; the sparse path is used above
    ``DENSE_LIMIT`` unknowns.
    """

    def __init__(self, Q, A, G, w, reg):
        n = Q.shape[0]
        p = A.shape[0]
        self.n, self.p = n, p
        self.dense = n + p <= DENSE_LIMIT
        if self.dense:
            H = Q + (G.T * w) @ G
            K = np.zeros((n + p, n + p))
            K[:n, :n] = H
            K[:n, n:] = A.T
            K[n:, :n] = A
            self.K = K
            Kreg = K.copy()
            Kreg[np.arange(n), np.arange(n)] += reg
            Kreg[np.arange(n, n + p), np.arange(n, n + p)] -= reg
            self.lu = sla.lu_factor(Kreg, check_finite=False)
            return
        H = Q + G.T @ sp.diags(w) @ G
        if p:
            self.K = sp.bmat([[H, A.T], [A, None]], format="csc")
            Kreg = sp.bmat([[H + reg * sp.identity(n), A.T], [A, -reg * sp.identity(p)]], format="csc")
        else:
            self.K = H.tocsc()
            Kreg = (H + reg * sp.identity(n)).tocsc()
        self.lu = spla.splu(Kreg, permc_spec="COLAMD")

    def _raw(self, rhs):
        if self.dense:
            return sla.lu_solve(self.lu, rhs, check_finite=False)
        return self.lu.solve(rhs)

    def solve(self, rhs, refine=3):
        sol = self._raw(rhs)
        for _ in range(refine):
            res = rhs - self.K @ sol
            if np.max(np.abs(res), initial=0.0) <= 1e-14 * (1 + np.max(np.abs(rhs), initial=0.0)):
                break
            sol = sol + self._raw(res)
        return sol


def solve_qp(Q, c, A=None, b=None, G=None, h=None, tol: float = 1e-9, max_iter: int = 80) -> QPResult:
    c = np.asarray(c, dtype=float)
    n = c.size
    Q = _as_csr(Q, (n, n))
    A = _as_csr(A, (0, n))
    G = _as_csr(G, (0, n))
    b = np.zeros(0) if b is None else np.asarray(b, dtype=float)
    h = np.zeros(0) if h is None else np.asarray(h, dtype=float)
    p, m = A.shape[0], G.shape[0]
    if n + p <= DENSE_LIMIT:
        Q, A, G = Q.toarray(), A.toarray(), G.toarray()

    if sp.issparse(Q):
        qmax = float(abs(Q).max()) if Q.nnz else 0.0
    else:
        qmax = float(np.max(np.abs(Q), initial=0.0))
    scale_c = 1.0 + np.max(np.abs(c), initial=0.0) + qmax
    scale_b = 1.0 + np.max(np.abs(b), initial=0.0)
    scale_h = 1.0 + np.max(np.abs(h), initial=0.0)
    reg = 1e-9

    # Starting point from the equality-constrained least-squares problem.
    kkt = _KKT(Q, A, G, np.ones(m), reg)
    sol = kkt.solve(np.concatenate([-c + G.T @ h, b]))
    x = sol[:n]
    y = sol[n:]
    s = h - G @ x
    z = np.ones(m)
    if m:
        shift = max(0.0, -s.min()) + 1.0
        s = s + shift
        z = np.full(m, max(1.0, np.sqrt(scale_c)))

    residual_history = []
    it = 0
    status = "failed"
    for it in range(1, max_iter + 1):
        rd = Q @ x + c + A.T @ y + G.T @ z
        rp = A @ x - b
        ri = G @ x + s - h
        gap = float(s @ z)
        mu = gap / m if m else 0.0
        obj = 0.5 * x @ (Q @ x) + c @ x
        nrd = np.max(np.abs(rd), initial=0.0) / scale_c
        nrp = max(np.max(np.abs(rp), initial=0.0) / scale_b, np.max(np.abs(ri), initial=0.0) / scale_h)
        residual_history.append(nrp)
        if nrd <= tol and nrp <= tol and gap <= tol * max(1.0, abs(obj)):
            status = "optimal"
            break
        if _looks_infeasible(residual_history, x, y, z, scale_c):
            break

        w = z / s
        kkt = _KKT(Q, A, G, w, reg)

        def direction(rc):
            rhs1 = -rd - G.T @ ((z * ri - rc) / s)
            d = kkt.solve(np.concatenate([rhs1, -rp]))
            dx, dy = d[:n], d[n:]
            dz = (z * ri - rc) / s + w * (G @ dx)
            ds = -ri - G @ dx
            return dx, dy, dz, ds

        rc = s * z
        dx, dy, dz, ds = direction(rc)
        alpha = _max_step(s, ds, z, dz)
        if m:
            mu_aff = float((s + alpha * ds) @ (z + alpha * dz)) / m
            sigma = (mu_aff / mu) ** 3 if mu > 0 else 0.0
            rc = s * z + ds * dz - sigma * mu
            dx, dy, dz, ds = direction(rc)
            alpha = min(1.0, 0.99 * _max_step(s, ds, z, dz, frac=1.0))
        x = x + alpha * dx
        y = y + alpha * dy
        z = z + alpha * dz
        s = s + alpha * ds
        if m:
            # keep strictly interior
            z = np.maximum(z, 1e-200)
            s = np.maximum(s, 1e-200)

    if status != "optimal":
        status = "failed" if _lp_feasible(A, b, G, h) else "infeasible"
        if status == "failed":
            log.warning("interior point stopped after %d iterations without converging", it)

    obj = float(0.5 * x @ (Q @ x) + c @ x)
    residuals = {
        "dual": float(np.max(np.abs(Q @ x + c + A.T @ y + G.T @ z), initial=0.0)),
        "primal_eq": float(np.max(np.abs(A @ x - b), initial=0.0)),
        "primal_ineq": float(np.max(G @ x - h, initial=0.0)) if m else 0.0,
        "complementarity": float(np.max(np.abs(s * z), initial=0.0)) if m else 0.0,
    }
    return QPResult(status=status, x=x, y=y, z=z, s=s, obj=obj, iterations=it, residuals=residuals)


def _max_step(s, ds, z, dz, frac: float = 1.0) -> float:
    alpha = 1.0
    for v, dv in ((s, ds), (z, dz)):
        neg = dv < 0
        if np.any(neg):
            alpha = min(alpha, float(np.min(-v[neg] / dv[neg])))
    return alpha * frac


def _looks_infeasible(history, x, y, z, scale_c) -> bool:
    """Iterates are no longer finite, or the primal residual stalled while multipliers blow up."""
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y)) and np.all(np.isfinite(z))):
        return True
    big = max(np.max(np.abs(y), initial=0.0), np.max(np.abs(z), initial=0.0)) > 1e10 * scale_c
    if big and history[-1] > 1e-7:
        return True
    if len(history) < 30:
        return False
    return min(history[-10:]) > 0.5 * history[-20] and history[-1] > 1e-6


def _lp_feasible(A, b, G, h) -> bool:
    """Phase-one check with HiGHS, used only to classify a non-converged solve."""
    n = A.shape[1]
    res = linprog(
        np.zeros(n),
        A_ub=G if G.shape[0] else None, b_ub=h if G.shape[0] else None,
        A_eq=A if A.shape[0] else None, b_eq=b if A.shape[0] else None,
        bounds=(None, None), method="highs",
    )
    return res.status == 0
