"""ADMM over a smooth objective and a list of constraint blocks.

Each iteration runs

* q-update: ``argmin_q Phi(q) + rho/2 ||D(q) - z + u||^2`` by L-BFGS,
* z-update: ``z = Pi_Z(D(q) + u)`` block by block,
* u-update: ``u += D(q) - z``,

and stops once the primal residual ``D(q) - z`` and the dual residual
``-rho (z - z_prev)`` are both below ``eps * sqrt(len(z))``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import scipy.sparse as sp

from .constraints import BlockLayout, ConstraintBlock

Objective = Callable[[np.ndarray], tuple[float, np.ndarray]]


class Diverged(RuntimeError):
    """Residuals still above tolerance after ``max_iter`` iterations."""

    def __init__(self, message: str, result: "AdmmResult"):
        super().__init__(message)
        self.result = result


class LineSearchStall(RuntimeError):
    pass


@dataclass
class AdmmParams:
    rho: float = 1.0
    eps_pri: float = 1e-3
    eps_dual: float = 1e-3
    max_iter: int = 500
    inner_budget: int = 50
    polish: bool = True
    polish_budget: int = 2000
    polish_tol: float = 1e-10


@dataclass
class AdmmState:
    q: np.ndarray
    z: np.ndarray
    u: np.ndarray
    rho: float
    iteration: int = 0
    primal_residual: float = 0.0
    dual_residual: float = 0.0


@dataclass
class AdmmResult:
    q: np.ndarray
    converged: bool
    iterations: int
    history: list = field(default_factory=list)
    block_report: list = field(default_factory=list)
    diagnostics: list = field(default_factory=list)
    primal_residual: float = float("nan")
    dual_residual: float = float("nan")
    max_violation: float = float("nan")

    def worst_blocks(self, n: int = 5) -> list:
        rows = sorted(self.block_report, key=lambda r: -r["violation"])
        return [r for r in rows[:n] if r["violation"] > 0]


class BlockStack:
    """Stacked ``D(q)`` and ``J(q)^T w`` for a block list over a fixed q shape.

    Linear blocks are assembled once into a sparse matrix; the rest are
    evaluated individually and scattered into place.
    """

    def __init__(self, blocks: Sequence[ConstraintBlock], shape: tuple[int, int, int]):
        self.shape = tuple(shape)
        self.layout = BlockLayout(blocks)
        n, steps, m = self.shape
        rows, cols, vals = [], [], []
        self.nonlinear = []
        for block, sl in zip(self.layout.blocks, self.layout.slices()):
            for r, t in block.selector:
                if not (0 <= r < n and 0 <= t < steps):
                    raise IndexError(f"{block.describe()} reads outside the trajectory array")
            idx = self._columns(block)
            if block.linear:
                mat = np.asarray(block.matrix, dtype=float)
                ii, jj = np.nonzero(mat)
                rows.append(ii + sl.start)
                cols.append(idx[jj])
                vals.append(mat[ii, jj])
            else:
                self.nonlinear.append((block, sl, idx))
        size = self.layout.size
        if rows:
            self.A = sp.csr_matrix(
                (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                shape=(size, n * steps * m),
            )
        else:
            self.A = sp.csr_matrix((size, n * steps * m))
        self.AT = self.A.T.tocsr()

    def _columns(self, block: ConstraintBlock) -> np.ndarray:
        _, steps, m = self.shape
        return np.concatenate([(r * steps + t) * m + np.arange(m) for r, t in block.selector])

    @property
    def size(self) -> int:
        return self.layout.size

    def value(self, q: np.ndarray) -> np.ndarray:
        d = self.A @ q.ravel()
        for block, sl, _ in self.nonlinear:
            d[sl] = block.value(q)
        return d

    def value_and_vjp(self, q: np.ndarray):
        """``D(q)`` plus a function ``w -> J(q)^T w`` (flat)."""
        d = self.A @ q.ravel()
        jacs = []
        for block, sl, idx in self.nonlinear:
            d[sl], J = block.value_and_jacobian(q)
            if np.any(J):
                jacs.append((sl, idx, J))

        def vjp(w):
            g = self.AT @ w
            for sl, idx, J in jacs:
                np.add.at(g, idx, J.T @ w[sl])
            return g

        return d, vjp

    def project(self, z: np.ndarray) -> np.ndarray:
        return self.layout.project(z)


def lbfgs(fun, x0: np.ndarray, budget: int, memory: int = 10, gtol: float = 1e-10,
          max_backtracks: int = 20, min_step: float = 1e-4):
    """Monotone L-BFGS with Armijo backtracking.

    ``fun(x) -> (f, g)``. Returns ``(x, f, stalled)``; the returned point never
    has a larger value than ``x0``. Some constraint maps switch branches
    discontinuously, so a step shorter than ``min_step`` ends the run early
    instead of creeping toward a jump.
    """
    x = x0.copy()
    f, g = fun(x)
    S, Y = [], []
    stalled = False
    for _ in range(budget):
        if not np.all(np.isfinite(g)) or np.linalg.norm(g, np.inf) <= gtol:
            break
        d = -g.copy()
        alphas = []
        for s, y in zip(reversed(S), reversed(Y)):
            a = (s @ d) / (y @ s)
            alphas.append(a)
            d -= a * y
        if S:
            d *= (S[-1] @ Y[-1]) / (Y[-1] @ Y[-1])
        for (s, y), a in zip(zip(S, Y), reversed(alphas)):
            d += (a - (y @ d) / (y @ s)) * s
        slope = g @ d
        if slope >= 0:
            S.clear()
            Y.clear()
            d = -g
            slope = -(g @ g)
        step = 1.0
        for _ in range(max_backtracks):
            x_new = x + step * d
            f_new, g_new = fun(x_new)
            if np.isfinite(f_new) and f_new <= f + 1e-4 * step * slope:
                break
            step *= 0.5
        else:
            stalled = True
            break
        s_vec = x_new - x
        y_vec = g_new - g
        if s_vec @ y_vec > 1e-12 * max(1.0, np.linalg.norm(s_vec) * np.linalg.norm(y_vec)):
            S.append(s_vec)
            Y.append(y_vec)
            if len(S) > memory:
                S.pop(0)
                Y.pop(0)
        decrease = f - f_new
        x, f, g = x_new, f_new, g_new
        if decrease <= 1e-15 * max(1.0, abs(f)) or step < min_step:
            break
    return x, f, stalled


def _free_mask(shape, fixed) -> np.ndarray:
    n, steps, m = shape
    if fixed is None:
        return np.ones(n * steps * m, dtype=bool)
    fixed = np.asarray(fixed, dtype=bool)
    return ~np.repeat(fixed.reshape(n * steps), m)


def augmented_value(state: AdmmState, objective: Objective | None, stack: BlockStack) -> float:
    phi = objective(state.q)[0] if objective is not None else 0.0
    res = stack.value(state.q) - state.z + state.u
    return float(phi + 0.5 * state.rho * res @ res)


def q_update(state: AdmmState, objective: Objective | None, stack: BlockStack, budget: int, fixed=None):
    """Inner minimization of the augmented Lagrangian in q (free entries only).

    Returns ``(q, stalled)``.
    """
    shape = state.q.shape
    free = _free_mask(shape, fixed)
    base = state.q.ravel().copy()
    target = state.z - state.u
    rho = state.rho

    def fun(x):
        full = base.copy()
        full[free] = x
        q = full.reshape(shape)
        d, vjp = stack.value_and_vjp(q)
        res = d - target
        f = 0.5 * rho * res @ res
        g = rho * vjp(res)
        if objective is not None:
            phi, gphi = objective(q)
            f += phi
            g = g + gphi.ravel()
        return f, g[free]

    x, _, stalled = lbfgs(fun, base[free], budget)
    out = base.copy()
    out[free] = x
    return out.reshape(shape), stalled


def residuals(d: np.ndarray, z: np.ndarray, z_prev: np.ndarray, rho: float) -> tuple[float, float]:
    """Primal ``||D(q) - z||`` and dual ``||-rho (z - z_prev)||``."""
    return float(np.linalg.norm(d - z)), float(np.linalg.norm(-rho * (z - z_prev)))


def block_report(blocks: Sequence[ConstraintBlock], q: np.ndarray) -> list[dict]:
    rows = []
    for b in blocks:
        rows.append({"block": b.describe(), "kind": b.kind, "violation": b.violation(q)})
    return rows


def polish(q: np.ndarray, stack: BlockStack, budget: int, tol: float, fixed=None):
    """Minimize ``1/2 sum ||D_i - Pi_i(D_i)||^2`` from ``q`` (feasibility restoration)."""
    shape = q.shape
    free = _free_mask(shape, fixed)
    base = q.ravel().copy()

    def fun(x):
        full = base.copy()
        full[free] = x
        d, vjp = stack.value_and_vjp(full.reshape(shape))
        res = d - stack.project(d)
        return 0.5 * res @ res, vjp(res)[free]

    x, _, _ = lbfgs(fun, base[free], budget, gtol=tol * 1e-3)
    out = base.copy()
    out[free] = x
    return out.reshape(shape)


def solve(
    initial_q,
    objective: Objective | None,
    blocks: Sequence[ConstraintBlock],
    params: AdmmParams | None = None,
    fixed=None,
    raise_on_divergence: bool = True,
) -> AdmmResult:
    """Run ADMM from ``initial_q``.

    ``fixed`` is an optional ``(robots, T + 1)`` boolean mask of waypoints that
    stay at their initial values (e.g. starts and goals).
    """
    params = params or AdmmParams()
    if params.rho <= 0:
        raise ValueError("rho must be positive")
    q = np.array(initial_q, dtype=float)
    stack = BlockStack(blocks, q.shape)
    history = []
    diagnostics = []

    if stack.size == 0:
        q, stalled = q_update(AdmmState(q, np.zeros(0), np.zeros(0), params.rho), objective, stack,
                              params.inner_budget, fixed)
        if stalled:
            diagnostics.append("LineSearchStall in q-update")
        return AdmmResult(q, True, 1, history, [], diagnostics, 0.0, 0.0, 0.0)

    z = stack.value(q)
    state = AdmmState(q, z.copy(), np.zeros_like(z), params.rho)
    thr_p = params.eps_pri * np.sqrt(stack.size)
    thr_d = params.eps_dual * np.sqrt(stack.size)
    converged = False
    stalls = 0
    for k in range(1, params.max_iter + 1):
        state.q, stalled = q_update(state, objective, stack, params.inner_budget, fixed)
        stalls += stalled
        d = stack.value(state.q)
        z_prev = state.z
        state.z = stack.project(d + state.u)
        state.u = state.u + d - state.z
        state.iteration = k
        state.primal_residual, state.dual_residual = residuals(d, state.z, z_prev, state.rho)
        history.append((state.primal_residual, state.dual_residual))
        if state.primal_residual <= thr_p and state.dual_residual <= thr_d:
            converged = True
            break
    if stalls:
        diagnostics.append(f"LineSearchStall in {stalls} q-update(s)")

    q = state.q
    if params.polish and converged:
        q = polish(q, stack, params.polish_budget, params.polish_tol, fixed)
    for b in blocks:
        msg = b.diagnostic(q)
        if msg:
            diagnostics.append(f"{b.describe()}: {msg}")
    report = block_report(blocks, q)
    result = AdmmResult(
        q, converged, state.iteration, history, report, diagnostics,
        state.primal_residual, state.dual_residual,
        max((r["violation"] for r in report), default=0.0),
    )
    if not converged and raise_on_divergence:
        worst = ", ".join(f"{r['block']}={r['violation']:.3g}" for r in result.worst_blocks(3))
        raise Diverged(
            f"ADMM did not converge in {params.max_iter} iterations "
            f"(primal {state.primal_residual:.3g}, dual {state.dual_residual:.3g}); worst: {worst}",
            result,
        )
    return result
