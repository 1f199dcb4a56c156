"""Self-contained LP and MILP solving with dual values.

LPs are solved by a bounded-variable revised simplex over sparse data:
two-phase primal (artificial columns repair an infeasible slack basis) for
cold starts, and a dual simplex with a bound-flipping ratio test for warm
starts after right-hand-side or bound changes.  The basis inverse is kept
as a sparse LU factorization plus a product-form eta file, refactorized
periodically.  MILPs are solved by LP-based branch and bound with
best-bound node selection.

Pricing is Dantzig (most negative reduced cost) with Bland's rule engaged
after a stall of degenerate pivots.  Every optimal LP result is audited
for primal/dual feasibility, complementary slackness and strong duality
before being returned.
"""
from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

FEAS_TOL = 1e-7
DUAL_TOL = 1e-7
PIVOT_TOL = 1e-9
RATIO_TOL = 1e-7         # admissibility of a pivot element in ratio tests
INT_TOL = 1e-6
CS_TOL = 1e-6
GAP_TOL = 1e-6
DEGEN_TOL = 1e-11
STALL_LIMIT = 1000
REFACTOR_EVERY = 64

NB_LOWER, NB_UPPER, BASIC, NB_FREE = 0, 1, 2, 3


class SolverError(Exception):
    pass


class NumericalFailure(SolverError):
    """Tolerances could not be met after the anti-cycling fallback."""


@dataclass
class LpProblem:
    """min/max objective @ x  s.t.  A x (senses) rhs,  lower <= x <= upper.

    senses is a character per row: '<', '=' or '>'.
    """
    a: sp.spmatrix
    senses: np.ndarray
    rhs: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    objective: np.ndarray
    sense: str = "min"
    names: list[str] | None = None

    def __post_init__(self):
        self.a = sp.csr_matrix(self.a)
        self.senses = np.asarray(self.senses, dtype="<U1")
        self.rhs = np.asarray(self.rhs, dtype=float)
        self.lower = np.asarray(self.lower, dtype=float)
        self.upper = np.asarray(self.upper, dtype=float)
        self.objective = np.asarray(self.objective, dtype=float)
        m, n = self.a.shape
        if not (len(self.senses) == len(self.rhs) == m):
            raise ValueError("row dimension mismatch")
        if not (len(self.lower) == len(self.upper) == len(self.objective) == n):
            raise ValueError("column dimension mismatch")
        if self.sense not in ("min", "max"):
            raise ValueError("sense must be 'min' or 'max'")
        if not np.all(np.isfinite(self.a.data)):
            raise ValueError("nonfinite constraint coefficients")
        if not np.all(np.isfinite(self.rhs)):
            raise ValueError("nonfinite right-hand side")


@dataclass
class LpSolution:
    status: str                    # optimal | infeasible | unbounded
    x: np.ndarray | None = None
    duals: np.ndarray | None = None
    objective: float | None = None
    reduced_costs: np.ndarray | None = None
    iterations: int = 0
    basis: tuple[np.ndarray, np.ndarray] | None = None   # warm-start token


@dataclass
class MilpProblem:
    lp: LpProblem
    binaries: np.ndarray

    def __post_init__(self):
        self.binaries = np.asarray(self.binaries, dtype=int)


@dataclass
class MilpSolution:
    status: str                    # optimal | infeasible | node_limit | unbounded
    x: np.ndarray | None = None
    objective: float | None = None
    bound: float | None = None
    gap: float | None = None
    nodes: int = 0


# ---------------------------------------------------------------------------
# simplex core


class _Core:
    """Immutable min-form problem data shared by all engine instances."""

    def __init__(self, prob: LpProblem):
        m, n = prob.a.shape
        self.m, self.n = m, n
        self.max_problem = prob.sense == "max"
        slack_lo = np.where(prob.senses == "<", 0.0, -np.inf)
        slack_lo[prob.senses == "="] = 0.0
        slack_up = np.where(prob.senses == ">", 0.0, np.inf)
        slack_up[prob.senses == "="] = 0.0
        self.a_full = sp.hstack([sp.csc_matrix(prob.a), sp.identity(m, format="csc")], format="csc")
        self.at_full = sp.csr_matrix(self.a_full.T)
        c = prob.objective.astype(float)
        if self.max_problem:
            c = -c
        self.c = np.concatenate([c, np.zeros(m)])
        self.lo = np.concatenate([prob.lower, slack_lo])
        self.up = np.concatenate([prob.upper, slack_up])
        self.b = prob.rhs.astype(float)
        self.n_tot = n + m


class _Engine:
    """One simplex run: basis state, factorization, pivot loops."""

    def __init__(self, core: _Core, lo: np.ndarray | None = None, up: np.ndarray | None = None):
        self.core = core
        self.lo = core.lo.copy() if lo is None else lo
        self.up = core.up.copy() if up is None else up
        self.a = core.a_full
        self.at = core.at_full
        self._ccol = (core.a_full.indptr, core.a_full.indices, core.a_full.data)
        self.m = core.m
        self.n_tot = core.n_tot
        self.c = core.c
        self.basis = np.arange(core.n, core.n + core.m)
        self.vstat = np.empty(self.n_tot, dtype=np.int8)
        self._set_default_nonbasic(np.arange(self.n_tot))
        self.vstat[self.basis] = BASIC
        self.lu = None
        self.etas: list[tuple[int, np.ndarray]] = []
        self.x_b = np.zeros(core.m)
        self.devex = np.ones(self.n_tot)
        self.iterations = 0
        self.stall = 0
        self.bland = False
        self.art_cols: np.ndarray | None = None

    # -- factorization ------------------------------------------------------

    def _set_default_nonbasic(self, cols):
        # prefer the finite bound closest to zero: slack bases stay feasible
        # for the many systems whose origin is feasible
        for j in np.atleast_1d(cols):
            lo_f, up_f = np.isfinite(self.lo[j]), np.isfinite(self.up[j])
            if lo_f and up_f:
                self.vstat[j] = NB_LOWER if abs(self.lo[j]) <= abs(self.up[j]) else NB_UPPER
            elif lo_f:
                self.vstat[j] = NB_LOWER
            elif up_f:
                self.vstat[j] = NB_UPPER
            else:
                self.vstat[j] = NB_FREE

    def nonbasic_value(self, j: int) -> float:
        s = self.vstat[j]
        if s == NB_LOWER:
            return self.lo[j]
        if s == NB_UPPER:
            return self.up[j]
        return 0.0

    def full_x(self) -> np.ndarray:
        x = np.zeros(self.n_tot)
        mask = self.vstat == NB_LOWER
        x[mask] = self.lo[mask]
        mask = self.vstat == NB_UPPER
        x[mask] = self.up[mask]
        x[self.basis] = self.x_b
        return x

    def factorize(self) -> None:
        bmat = self.a[:, self.basis]
        try:
            self.lu = splu(sp.csc_matrix(bmat), permc_spec="COLAMD")
        except RuntimeError as exc:
            raise NumericalFailure(f"singular basis: {exc}") from exc
        self.etas = []

    def ftran(self, v: np.ndarray) -> np.ndarray:
        x = self.lu.solve(v)
        for p, w in self.etas:
            zp = x[p] / w[p]
            if zp != 0.0:
                x -= zp * w
            x[p] = zp
        return x

    def btran(self, v: np.ndarray) -> np.ndarray:
        y = v.copy()
        for p, w in reversed(self.etas):
            y[p] = (y[p] - (w @ y - w[p] * y[p])) / w[p]
        return self.lu.solve(y, trans="T")

    def col(self, j: int) -> np.ndarray:
        indptr, indices, data = self._ccol
        out = np.zeros(self.m)
        s, e = indptr[j], indptr[j + 1]
        out[indices[s:e]] = data[s:e]
        return out

    def recompute_x_b(self) -> None:
        z = np.zeros(self.n_tot)
        mask = self.vstat == NB_LOWER
        z[mask] = self.lo[mask]
        mask = self.vstat == NB_UPPER
        z[mask] = self.up[mask]
        r = self.core.b - self.a @ z
        self.x_b = self.ftran(r)

    def refresh(self) -> None:
        self.factorize()
        self.recompute_x_b()

    def _push_eta(self, p: int, w: np.ndarray) -> None:
        self.etas.append((p, w))
        if len(self.etas) >= REFACTOR_EVERY:
            self.refresh()

    def duals(self) -> np.ndarray:
        return self.btran(self.c[self.basis])

    def reduced_costs(self, y: np.ndarray | None = None) -> np.ndarray:
        if y is None:
            y = self.duals()
        return self.c - self.at @ y

    # -- primal simplex -----------------------------------------------------

    def _price_primal(self, d: np.ndarray) -> tuple[int, int] | None:
        fixed = self.lo == self.up
        lower_ok = (self.vstat == NB_LOWER) & ~fixed & (d < -DUAL_TOL)
        upper_ok = (self.vstat == NB_UPPER) & ~fixed & (d > DUAL_TOL)
        free_ok = (self.vstat == NB_FREE) & (np.abs(d) > DUAL_TOL)
        eligible = lower_ok | upper_ok | free_ok
        if not eligible.any():
            return None
        idx = np.flatnonzero(eligible)
        if self.bland:
            q = int(idx[0])
        else:
            # devex-weighted Dantzig
            score = d[idx] ** 2 / self.devex[idx]
            q = int(idx[np.argmax(score)])
        if self.vstat[q] == NB_UPPER or (self.vstat[q] == NB_FREE and d[q] > 0):
            return q, -1
        return q, 1

    def _devex_update(self, q: int, p_best: int, w: np.ndarray) -> None:
        """Forrest-Goldfarb reference weight update after a basis change."""
        alpha_q = w[p_best]
        if abs(alpha_q) < PIVOT_TOL:
            return
        ep = np.zeros(self.m)
        ep[p_best] = 1.0
        rho = self.btran(ep)
        alpha = self.at @ rho
        gq = max(self.devex[q], 1.0)
        cand = np.abs(alpha) > PIVOT_TOL
        self.devex[cand] = np.maximum(self.devex[cand], (alpha[cand] / alpha_q) ** 2 * gq)
        self.devex[self.basis[p_best]] = max(gq / alpha_q**2, 1.0)
        if self.devex.max() > 1e8:
            self.devex[:] = 1.0

    def primal(self, costs: np.ndarray | None = None, max_iter: int = 500_000) -> str:
        """Run primal iterations to optimality; basis must be primal feasible."""
        c = self.c if costs is None else costs
        while self.iterations < max_iter:
            self.iterations += 1
            y = self.btran(c[self.basis])
            d = c - self.at @ y
            pick = self._price_primal(d)
            if pick is None:
                return "optimal"
            q, sigma = pick
            w = self.ftran(self.col(q))
            # blocking step among basic variables, plus the entering bound flip
            t_best = np.inf
            p_best = -1
            rate = sigma * w
            lo_b, up_b = self.lo[self.basis], self.up[self.basis]
            dec = rate > PIVOT_TOL
            inc = rate < -PIVOT_TOL
            with np.errstate(invalid="ignore", divide="ignore"):
                t_dec = np.where(dec & np.isfinite(lo_b), (self.x_b - lo_b) / np.where(dec, rate, 1.0), np.inf)
                t_inc = np.where(inc & np.isfinite(up_b), (up_b - self.x_b) / np.where(inc, -rate, 1.0), np.inf)
            t_rows = np.minimum(t_dec, t_inc)
            t_rows = np.maximum(t_rows, 0.0)
            tmin = t_rows.min() if len(t_rows) else np.inf
            t_flip = self.up[q] - self.lo[q]
            if tmin <= t_flip:
                cand = np.flatnonzero(t_rows <= tmin + 1e-10)
                if len(cand):
                    if self.bland:
                        p_best = int(cand[np.argmin(self.basis[cand])])
                    else:
                        p_best = int(cand[np.argmax(np.abs(rate[cand]))])
                    t_best = float(t_rows[p_best])
            if p_best < 0:
                if not np.isfinite(t_flip):
                    return "unbounded"
                # bound flip: entering jumps to its other bound, no basis change
                self.x_b -= t_flip * rate
                self.vstat[q] = NB_UPPER if self.vstat[q] == NB_LOWER else NB_LOWER
                continue
            if not np.isfinite(t_best):
                return "unbounded"
            self._track_stall(t_best)
            if not self.bland:
                self._devex_update(q, p_best, w)
            leaving = self.basis[p_best]
            enter_val = self.nonbasic_value(q) + sigma * t_best
            self.x_b -= t_best * rate
            hit_lower = rate[p_best] > 0
            self.vstat[leaving] = NB_LOWER if hit_lower else NB_UPPER
            self.basis[p_best] = q
            self.vstat[q] = BASIC
            self.x_b[p_best] = enter_val
            self._push_eta(p_best, w)
        raise NumericalFailure("primal iteration limit exceeded")

    def _track_stall(self, step: float) -> None:
        if step <= DEGEN_TOL:
            self.stall += 1
            if self.stall > STALL_LIMIT:
                self.bland = True
        else:
            self.stall = 0
            if self.bland and self.stall == 0:
                self.bland = False

    # -- dual simplex -------------------------------------------------------

    def dual(self, max_iter: int = 500_000) -> str:
        """Repair primal feasibility from a dual-feasible basis."""
        d = self.reduced_costs()
        fixed = self.lo == self.up
        while self.iterations < max_iter:
            self.iterations += 1
            lo_b, up_b = self.lo[self.basis], self.up[self.basis]
            below = lo_b - self.x_b
            above = self.x_b - up_b
            viol = np.maximum(below, above)
            p = int(np.argmax(viol))
            if viol[p] <= FEAS_TOL * max(1.0, abs(self.x_b[p])):
                return "optimal"
            if self.bland:
                bad = np.flatnonzero(viol > FEAS_TOL)
                p = int(bad[np.argmin(self.basis[bad])])
            going_low = below[p] >= above[p]
            target = lo_b[p] if going_low else up_b[p]
            ep = np.zeros(self.m)
            ep[p] = 1.0
            rho = self.btran(ep)
            alpha = self.at @ rho
            # admissible entering columns keep dual feasibility while moving
            # x_b[p] toward its violated bound
            sgn = 1.0 if going_low else -1.0     # required sign of -alpha_j * delta_j
            nb_low = (self.vstat == NB_LOWER) & ~fixed
            nb_up = (self.vstat == NB_UPPER) & ~fixed
            nb_free = self.vstat == NB_FREE
            adm = ((nb_low & (sgn * alpha < -PIVOT_TOL))
                   | (nb_up & (sgn * alpha > PIVOT_TOL))
                   | (nb_free & (np.abs(alpha) > PIVOT_TOL)))
            idx = np.flatnonzero(adm)
            if len(idx) == 0:
                return "infeasible"
            with np.errstate(invalid="ignore", divide="ignore"):
                ratios = np.abs(d[idx]) / np.abs(alpha[idx])
            order = np.argsort(ratios, kind="stable")
            # bound-flipping ratio test: cheap flips of finite-range columns
            # absorb violation before the true pivot
            need = abs(target - self.x_b[p])
            flips: list[int] = []
            q = -1
            for oi in order:
                j = int(idx[oi])
                gain = abs(alpha[j])
                rng = self.up[j] - self.lo[j]
                if np.isfinite(rng) and gain * rng < need - 1e-12 and self.vstat[j] != NB_FREE:
                    flips.append(j)
                    need -= gain * rng
                    continue
                q = j
                break
            if q < 0:
                return "infeasible"
            if flips:
                zshift = np.zeros(self.m)
                for j in flips:
                    direction = 1.0 if self.vstat[j] == NB_LOWER else -1.0
                    rng = self.up[j] - self.lo[j]
                    zshift += direction * rng * self.col(j)
                    self.vstat[j] = NB_UPPER if self.vstat[j] == NB_LOWER else NB_LOWER
                self.x_b -= self.ftran(zshift)
            if abs(alpha[q]) <= PIVOT_TOL:
                return "infeasible"
            w = self.ftran(self.col(q))
            delta = (target - self.x_b[p]) / (-alpha[q])
            gamma = d[q] / alpha[q]
            d = d - gamma * alpha
            d[q] = 0.0
            leaving = self.basis[p]
            d[leaving] = -gamma
            self._track_stall(abs(delta))
            enter_val = self.nonbasic_value(q) + delta
            self.x_b -= delta * w
            self.vstat[leaving] = NB_LOWER if going_low else NB_UPPER
            self.basis[p] = q
            self.vstat[q] = BASIC
            self.x_b[p] = enter_val
            etas_before = len(self.etas)
            self._push_eta(p, w)
            if len(self.etas) < etas_before:      # refactorized: refresh duals too
                d = self.reduced_costs()
        raise NumericalFailure("dual iteration limit exceeded")

    # -- phase 1 ------------------------------------------------------------

    def phase1(self) -> str:
        """Repair slack-basis infeasibility via artificial columns."""
        self.factorize()
        self.recompute_x_b()
        lo_b, up_b = self.lo[self.basis], self.up[self.basis]
        bad = np.flatnonzero((self.x_b < lo_b - FEAS_TOL) | (self.x_b > up_b + FEAS_TOL))
        if len(bad) == 0:
            return "feasible"
        cols = []
        signs = []
        for p in bad:
            slack = self.basis[p]
            v = self.x_b[p]
            beta = self.up[slack] if v > self.up[slack] else self.lo[slack]
            signs.append(math.copysign(1.0, v - beta))
            cols.append(p)
        art = sp.csc_matrix((np.array(signs), (np.array(cols), np.arange(len(bad)))),
                            shape=(self.m, len(bad)))
        self.a = sp.hstack([self.core.a_full, art], format="csc")
        self.at = sp.csr_matrix(self.a.T)
        self._ccol = (self.a.indptr, self.a.indices, self.a.data)
        n_old = self.n_tot
        self.n_tot = n_old + len(bad)
        self.lo = np.concatenate([self.lo, np.zeros(len(bad))])
        self.up = np.concatenate([self.up, np.full(len(bad), np.inf)])
        self.c = np.concatenate([self.c, np.zeros(len(bad))])
        self.devex = np.concatenate([self.devex, np.ones(len(bad))])
        self.vstat = np.concatenate([self.vstat, np.full(len(bad), NB_LOWER, dtype=np.int8)])
        self.art_cols = np.arange(n_old, self.n_tot)
        for t, p in enumerate(bad):
            slack = self.basis[p]
            v = self.x_b[p]
            beta = self.up[slack] if v > self.up[slack] else self.lo[slack]
            self.vstat[slack] = NB_UPPER if v > self.up[slack] else NB_LOWER
            self.basis[p] = n_old + t
            self.vstat[n_old + t] = BASIC
            self.x_b[p] = abs(v - beta)
        self.factorize()
        c1 = np.zeros(self.n_tot)
        c1[self.art_cols] = 1.0
        status = self.primal(costs=c1)
        if status != "optimal":
            raise NumericalFailure(f"phase 1 ended with status {status}")
        infeas = float(np.sum(np.abs(self.x_b[np.isin(self.basis, self.art_cols)])))
        nb_art = self.art_cols[self.vstat[self.art_cols] != BASIC]
        infeas += float(np.sum([self.nonbasic_value(j) for j in nb_art]))
        if infeas > FEAS_TOL * max(1.0, np.abs(self.core.b).max()):
            return "infeasible"
        # freeze artificials at zero for phase 2
        self.lo[self.art_cols] = 0.0
        self.up[self.art_cols] = 0.0
        self.vstat[self.art_cols[self.vstat[self.art_cols] == NB_UPPER]] = NB_LOWER
        return "feasible"


def _solution_from_engine(eng: _Engine, prob: LpProblem, status: str) -> LpSolution:
    core = eng.core
    if status != "optimal":
        return LpSolution(status=status, iterations=eng.iterations)
    x_full = eng.full_x()
    x = x_full[:core.n]
    y = eng.btran(eng.c[eng.basis])
    rc = (eng.c - eng.at @ y)[:core.n]
    obj = float(prob.objective @ x)
    if core.max_problem:
        y = -y
        rc = -rc
    basis = (eng.basis.copy(), eng.vstat[:core.n + core.m].copy())
    return LpSolution(status="optimal", x=x, duals=y[:core.m], objective=obj,
                      reduced_costs=rc, iterations=eng.iterations, basis=basis)


def audit_solution(prob: LpProblem, sol: LpSolution,
                   lower: np.ndarray | None = None,
                   upper: np.ndarray | None = None) -> dict[str, float]:
    """Feasibility, complementary slackness and duality-gap residuals."""
    a = prob.a
    lo = prob.lower if lower is None else lower
    up = prob.upper if upper is None else upper
    x, y, rc = sol.x, sol.duals, sol.reduced_costs
    ax = a @ x
    res = np.zeros(len(prob.rhs))
    le = prob.senses == "<"
    ge = prob.senses == ">"
    eq = prob.senses == "="
    res[le] = np.maximum(ax[le] - prob.rhs[le], 0.0)
    res[ge] = np.maximum(prob.rhs[ge] - ax[ge], 0.0)
    res[eq] = np.abs(ax[eq] - prob.rhs[eq])
    scale_r = np.maximum(1.0, np.abs(prob.rhs))
    primal_res = float(np.max(res / scale_r, initial=0.0))
    lo_viol = np.where(np.isfinite(lo), np.maximum(lo - x, 0.0), 0.0)
    up_viol = np.where(np.isfinite(up), np.maximum(x - up, 0.0), 0.0)
    primal_res = max(primal_res, float(np.max(lo_viol, initial=0.0)), float(np.max(up_viol, initial=0.0)))

    # dual feasibility: row dual signs per sense, column rc signs per bound side
    sgn = 1.0 if prob.sense == "min" else -1.0
    xscale = _bound_scale(lo, up)
    dual_res = 0.0
    dual_res = max(dual_res, float(np.max(np.maximum(sgn * y[le], 0.0), initial=0.0)))
    dual_res = max(dual_res, float(np.max(np.maximum(-sgn * y[ge], 0.0), initial=0.0)))
    at_lo = np.isfinite(lo) & (np.abs(x - lo) <= 1e-6 * xscale)
    at_up = np.isfinite(up) & (np.abs(x - up) <= 1e-6 * xscale)
    interior = ~(at_lo | at_up)
    dual_res = max(dual_res, float(np.max(np.abs(rc[interior]), initial=0.0)))
    fixed = at_lo & at_up
    dual_res = max(dual_res, float(np.max(np.maximum(-sgn * rc[at_lo & ~fixed], 0.0), initial=0.0)))
    dual_res = max(dual_res, float(np.max(np.maximum(sgn * rc[at_up & ~fixed], 0.0), initial=0.0)))

    slack = prob.rhs - ax
    cs = float(np.max(np.abs(y[~eq] * slack[~eq]) / scale_r[~eq], initial=0.0))

    bound_side = np.where(at_lo & ~(at_up & (sgn * rc > 0)), lo, np.where(at_up, up, 0.0))
    bound_term = np.where(at_lo | at_up, rc * np.where(np.isfinite(bound_side), bound_side, 0.0), 0.0)
    dual_obj = float(y @ prob.rhs + np.sum(bound_term))
    gap = abs(sol.objective - dual_obj) / (1.0 + abs(sol.objective))
    return {"primal": primal_res, "dual": dual_res, "cs": cs, "gap": gap}


def _bound_scale(lo: np.ndarray, up: np.ndarray) -> float:
    mags = [1.0]
    for v in (lo, up):
        fin = v[np.isfinite(v)]
        if len(fin):
            mags.append(float(np.abs(fin).max()))
    return max(mags)


def solve_lp(prob: LpProblem, warm: tuple[np.ndarray, np.ndarray] | None = None,
             lower: np.ndarray | None = None, upper: np.ndarray | None = None,
             check: bool = True) -> LpSolution:
    """Solve an LP; optionally warm-start a dual-feasible basis from `warm`.

    `lower`/`upper` override column bounds without rebuilding the problem
    (row structure and objective must match the original).
    """
    core = _Core(prob)
    lo = core.lo.copy()
    up = core.up.copy()
    if lower is not None:
        lo[:core.n] = lower
    if upper is not None:
        up[:core.n] = upper
    eng = _Engine(core, lo, up)
    status = None
    if warm is not None:
        basis, vstat = warm
        if len(basis) == core.m and len(vstat) == core.n + core.m:
            eng.basis = basis.copy()
            eng.vstat = vstat.copy()
            # nonbasic statuses may disagree with changed bounds
            for j in np.flatnonzero((eng.vstat == NB_LOWER) & ~np.isfinite(eng.lo)):
                eng.vstat[j] = NB_FREE if not np.isfinite(eng.up[j]) else NB_UPPER
            for j in np.flatnonzero((eng.vstat == NB_UPPER) & ~np.isfinite(eng.up)):
                eng.vstat[j] = NB_FREE if not np.isfinite(eng.lo[j]) else NB_LOWER
            try:
                eng.refresh()
                d = eng.reduced_costs()
                nb_low = (eng.vstat == NB_LOWER) & (eng.lo != eng.up)
                nb_up = (eng.vstat == NB_UPPER) & (eng.lo != eng.up)
                dual_ok = (d[nb_low] > -1e-7).all() and (d[nb_up] < 1e-7).all()
                if dual_ok:
                    status = eng.dual()
                else:
                    status = None
            except NumericalFailure:
                status = None
            if status is None:
                eng = _Engine(core, lo, up)
    if status is None:
        feas = eng.phase1()
        if feas == "infeasible":
            return LpSolution(status="infeasible", iterations=eng.iterations)
        status = eng.primal()
    sol = _solution_from_engine(eng, prob, status)
    lo_x, up_x = lo[:core.n], up[:core.n]
    if sol.status == "optimal" and check:
        aud = audit_solution(prob, sol, lower=lo_x, upper=up_x)
        if _audit_bad(aud):
            # one repair attempt from scratch with Bland's rule active
            eng2 = _Engine(core, lo.copy(), up.copy())
            eng2.bland = True
            feas = eng2.phase1()
            if feas == "infeasible":
                return LpSolution(status="infeasible", iterations=eng2.iterations)
            status2 = eng2.primal()
            sol2 = _solution_from_engine(eng2, prob, status2)
            if sol2.status == "optimal":
                aud2 = audit_solution(prob, sol2, lower=lo_x, upper=up_x)
                if _audit_bad(aud2):
                    raise NumericalFailure(f"audit residuals out of tolerance: {aud2}")
            return sol2
    return sol


def _audit_bad(aud: dict[str, float]) -> bool:
    return (aud["primal"] > 10 * FEAS_TOL or aud["dual"] > 100 * DUAL_TOL
            or aud["cs"] > CS_TOL or aud["gap"] > GAP_TOL)


# ---------------------------------------------------------------------------
# branch and bound


def _is_integral(x: np.ndarray, binaries: np.ndarray, tol: float = INT_TOL) -> bool:
    v = x[binaries]
    return bool(np.all(np.abs(v - np.round(v)) <= tol))


def solve_milp(prob: MilpProblem, abs_gap: float = 1e-9,
               node_limit: int = 200_000) -> MilpSolution:
    """Branch and bound with LP-relaxation bounding and best-bound node order."""
    if abs_gap < 0:
        raise ValueError("abs_gap must be >= 0")
    lp = prob.lp
    binaries = prob.binaries
    sign = 1.0 if lp.sense == "min" else -1.0    # min-form objective = sign * user objective

    lo0 = lp.lower.copy()
    up0 = lp.upper.copy()
    lo0[binaries] = np.maximum(lo0[binaries], 0.0)
    up0[binaries] = np.minimum(up0[binaries], 1.0)

    nodes = 0
    incumbent: np.ndarray | None = None
    inc_obj = np.inf                              # min-form incumbent value
    counter = 0
    heap: list[tuple[float, int, dict[int, float], tuple]] = []

    def node_solve(fixings: dict[int, float], warm):
        nonlocal nodes
        nodes += 1
        lo = lo0.copy()
        up = up0.copy()
        for j, v in fixings.items():
            lo[j] = v
            up[j] = v
        return solve_lp(lp, warm=warm, lower=lo, upper=up, check=False), lo, up

    def try_incumbent(sol: LpSolution):
        nonlocal incumbent, inc_obj
        val = sign * sol.objective
        if val < inc_obj - 1e-12:
            inc_obj = val
            incumbent = sol.x.copy()

    root, _, _ = node_solve({}, None)
    if root.status == "infeasible":
        return MilpSolution(status="infeasible", nodes=nodes)
    if root.status == "unbounded":
        return MilpSolution(status="unbounded", nodes=nodes)
    if _is_integral(root.x, binaries):
        try_incumbent(root)
        return MilpSolution(status="optimal", x=incumbent, objective=sign * inc_obj,
                            bound=sign * inc_obj, gap=0.0, nodes=nodes)
    heapq.heappush(heap, (sign * root.objective, counter, {}, root.basis, root.x[binaries].copy()))
    counter += 1

    def rounding_heuristic(frac: np.ndarray, warm):
        fix = {int(j): float(np.round(v)) for j, v in zip(binaries, frac)}
        sol, _, _ = node_solve(fix, warm)
        if sol.status == "optimal":
            try_incumbent(sol)

    rounding_heuristic(root.x[binaries], root.basis)

    while heap:
        bound, _, fixings, basis, frac = heapq.heappop(heap)
        if bound >= inc_obj - abs_gap:
            break
        if nodes >= node_limit:
            gap = max(0.0, inc_obj - bound)
            return MilpSolution(status="node_limit", x=incumbent,
                                objective=None if incumbent is None else sign * inc_obj,
                                bound=sign * bound, gap=gap, nodes=nodes)
        dist = np.abs(frac - np.round(frac))
        j = int(binaries[int(np.argmax(dist))])
        base = float(frac[int(np.argmax(dist))])
        first = float(np.round(base))
        for v in (first, 1.0 - first):
            child_fix = dict(fixings)
            child_fix[j] = v
            try:
                sol, _, _ = node_solve(child_fix, basis)
            except NumericalFailure:
                sol, _, _ = node_solve(child_fix, None)
            if sol.status != "optimal":
                continue
            child_bound = sign * sol.objective
            if child_bound >= inc_obj - abs_gap:
                continue
            if _is_integral(sol.x, binaries):
                try_incumbent(sol)
                continue
            heapq.heappush(heap, (child_bound, counter, child_fix, sol.basis,
                                  sol.x[binaries].copy()))
            counter += 1
            if counter % 50 == 0:
                rounding_heuristic(sol.x[binaries], sol.basis)

    if incumbent is None:
        return MilpSolution(status="infeasible", nodes=nodes)
    lb = min((h[0] for h in heap), default=inc_obj)
    lb = min(lb, inc_obj)
    gap = max(0.0, inc_obj - lb)
    return MilpSolution(status="optimal", x=incumbent, objective=sign * inc_obj,
                        bound=sign * lb, gap=gap, nodes=nodes)


# ---------------------------------------------------------------------------
# problem dump (LP text format) for external cross-checking


def write_lp_text(prob: LpProblem, path: str) -> None:
    names = prob.names or [f"x{j}" for j in range(prob.a.shape[1])]

    def term(coef: float, name: str) -> str:
        return f"{'+' if coef >= 0 else '-'} {abs(coef):.17g} {name} "

    lines = ["Maximize" if prob.sense == "max" else "Minimize"]
    obj = " obj: " + "".join(term(c, names[j]) for j, c in enumerate(prob.objective) if c != 0.0)
    lines.append(obj if obj.strip() != "obj:" else " obj: 0 " + names[0])
    lines.append("Subject To")
    acsr = sp.csr_matrix(prob.a)
    rel = {"<": "<=", "=": "=", ">": ">="}
    for i in range(acsr.shape[0]):
        row = acsr.getrow(i)
        body = "".join(term(v, names[j]) for j, v in zip(row.indices, row.data))
        if not body:
            body = f"+ 0 {names[0]} "
        lines.append(f" c{i}: {body}{rel[prob.senses[i]]} {prob.rhs[i]:.17g}")
    lines.append("Bounds")
    for j, nm in enumerate(names):
        lo, up = prob.lower[j], prob.upper[j]
        if lo == up:
            lines.append(f" {nm} = {lo:.17g}")
        else:
            lo_s = f"{lo:.17g}" if np.isfinite(lo) else "-inf"
            up_s = f"{up:.17g}" if np.isfinite(up) else "+inf"
            lines.append(f" {lo_s} <= {nm} <= {up_s}")
    lines.append("End")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")
