"""Finite-partition conditional expectations along curve filtrations.

Every level of a :class:`unrect.curves.Filtration` is a finite interval
partition, so conditional expectations are weighted atom averages.  Two
reference measures are supported: Lebesgue measure on the parameter interval
and ``mu^v(A) = int_A <gamma', v> / K(gamma)`` with ``K(gamma) = int_I <gamma', v>``.
Atom masses of both are computed from the elementary increments of the
filtration, so they are exact up to quadrature of ``gamma'`` and rounding.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence, Union

import numpy as np
from numpy.polynomial.legendre import leggauss

from .curves import (ConePreconditionError, CheckRow, Filtration, atom_increments,
                     build_filtration, tangent_samples)

logger = logging.getLogger(__name__)

MARTINGALE_TOL = 1e-8
_GL_X, _GL_W = leggauss(16)


def _perp(v):
    v = np.asarray(v, float)
    return np.array([-v[1], v[0]])


def normalization(filt: Filtration, v) -> float:
    """``K(gamma) = int_I <gamma', v> dL``."""
    return float(np.sum(filt.dgam @ np.asarray(v, float)))


def check_positivity(filt: Filtration, v, c=None) -> float:
    """Smallest sampled ``<gamma', v>``; raises when it drops below ``c`` (or to zero)."""
    key = tuple(np.asarray(v, float).tolist())
    cache = filt.__dict__.setdefault("_positivity", {})
    if key not in cache:
        tan, u = tangent_samples(filt.curve)
        d = tan @ np.asarray(v, float)
        i = int(np.argmin(d))
        cache[key] = (float(d[i]), float(u[i]))
    dmin, umin = cache[key]
    lim = 0.0 if c is None else float(c)
    if dmin < lim or dmin <= 0:
        raise ConePreconditionError(float(filt.curve.t_of_u([umin])[0]),
                                    f"<gamma', v> = {dmin:.6g} below c = {lim:.6g}")
    return dmin


def atom_masses(filt: Filtration, p: int, measure: str = "lebesgue", v=None) -> np.ndarray:
    """Mass of every atom of level ``p`` under ``measure`` (``"lebesgue"`` or ``"mu_v"``)."""
    if measure == "lebesgue":
        return filt.levels[p].lebesgue.copy()
    if measure == "mu_v":
        if v is None:
            raise ValueError("mu_v needs a direction v")
        return atom_increments(filt, p) @ np.asarray(v, float) / normalization(filt, v)
    raise ValueError(f"unknown measure {measure!r}")


def mu_v(filt: Filtration, v, atoms: Optional[Sequence[int]] = None, p: Optional[int] = None) -> float:
    """``mu^v`` of a union of atoms of level ``p`` (all of ``I`` when ``atoms`` is None)."""
    check_positivity(filt, v)
    if atoms is None:
        return 1.0
    p = filt.p_max if p is None else p
    m = atom_masses(filt, p, "mu_v", v)
    return float(np.sum(m[list(atoms)]))


def parent_map(filt: Filtration, p: int) -> np.ndarray:
    """Index of the level-``p`` atom containing each level-``p+1`` atom."""
    coarse = filt.levels[p].index
    fine = filt.levels[p + 1].index
    return np.searchsorted(coarse, fine[:-1], side="right") - 1


@dataclass
class ProcessSample:
    """Per-atom values ``X_p`` for levels ``p = 0..P`` (scalars or 2-vectors)."""

    values: List[np.ndarray]
    name: str = ""

    @property
    def levels(self) -> int:
        return len(self.values)

    def copy(self) -> "ProcessSample":
        return ProcessSample([np.array(v, copy=True) for v in self.values], self.name)

    def on_elementary(self, filt: Filtration, p: int) -> np.ndarray:
        """Values of ``X_p`` on the elementary intervals (measurability made explicit)."""
        idx = filt.levels[p].index
        out = np.repeat(self.values[p], np.diff(idx), axis=0)
        return out


def conditional_expectation(filt: Filtration, X: Union[Callable, ProcessSample, np.ndarray],
                            p: int, measure: str = "lebesgue", v=None, source_level=None):
    """``E[X | Sigma_p]`` as per-atom values.

    Parameters
    ----------
    X : callable, ProcessSample or array
        A callable of the curve parameter ``t`` (vectorized, scalar or 2-vector
        valued) integrated by Gauss-Legendre quadrature on each elementary
        interval; or per-atom values of a finer level ``source_level``.
    measure : ``"lebesgue"`` or ``"mu_v"``.

    Returns
    -------
    Array of per-atom values.  Atoms of zero mass are given NaN and logged.
    """
    idx = filt.levels[p].index
    if callable(X):
        a, b = filt.cuts[:-1], filt.cuts[1:]
        mid, half = (a + b) / 2, (b - a) / 2
        ints = None
        for x, w in zip(_GL_X, _GL_W):
            t = mid + half * x
            val = np.asarray(X(t), float)
            if measure == "mu_v":
                wt = filt.curve.tangent(t) @ np.asarray(v, float) / normalization(filt, v)
                val = val * (wt if val.ndim == 1 else wt[:, None])
            term = w * (val * (half if val.ndim == 1 else half[:, None]))
            ints = term if ints is None else ints + term
        num = np.add.reduceat(ints, idx[:-1], axis=0)
        den = atom_masses(filt, p, measure, v)
    else:
        vals = X.values[source_level] if isinstance(X, ProcessSample) else np.asarray(X, float)
        q = filt.p_max if source_level is None else source_level
        if q < p:
            raise ValueError("source level must refine the target level")
        m = atom_masses(filt, q, measure, v)
        par = np.arange(len(m))
        for r in range(q - 1, p - 1, -1):
            par = parent_map(filt, r)[par]
        n = len(idx) - 1
        wv = vals * (m if vals.ndim == 1 else m[:, None])
        num = np.zeros((n,) + vals.shape[1:])
        np.add.at(num, par, wv)
        den = np.zeros(n)
        np.add.at(den, par, m)
    zero = den <= 0
    if zero.any():
        logger.warning("dropping %d atoms of zero mass at level %d", int(zero.sum()), p)
    den = np.where(zero, np.nan, den)
    return num / (den if num.ndim == 1 else den[:, None])


def beta_process(filt: Filtration) -> ProcessSample:
    """``beta_p = E[gamma' | Sigma_p]`` (Lebesgue) for every level."""
    vals = [atom_increments(filt, p) / filt.levels[p].lebesgue[:, None] for p in range(filt.p_max + 1)]
    return ProcessSample(vals, "beta")


def ratio_process(filt: Filtration, v) -> ProcessSample:
    """``<beta_p, v^perp> / <beta_p, v>`` for every level."""
    v = np.asarray(v, float)
    vp = _perp(v)
    vals = []
    for p in range(filt.p_max + 1):
        d = atom_increments(filt, p)
        vals.append((d @ vp) / (d @ v))
    return ProcessSample(vals, "ratio")


def ratio_error_bars(filt: Filtration, v) -> List[np.ndarray]:
    """Rounding-error bound for the ratio martingale identity per atom.

    The identity is exact algebra on the elementary increments; what is left
    is rounding in the atom sums, bounded by a few ulps of the summed terms
    relative to the atom's ``mu^v`` mass.
    """
    v = np.asarray(v, float)
    vp = _perp(v)
    out = []
    eps = np.finfo(float).eps
    for p in range(filt.p_max + 1):
        idx = filt.levels[p].index
        absum = np.add.reduceat(np.abs(filt.dgam @ vp) + np.abs(filt.dgam @ v), idx[:-1])
        d = atom_increments(filt, p)
        out.append(16 * eps * (len(filt.dlen) + 1) * absum / np.abs(d @ v) * (1 + np.abs(d @ vp / (d @ v))))
    return out


def martingale_residual(X: ProcessSample, filt: Filtration, measure: str = "lebesgue", v=None,
                        per_level: bool = False):
    """``max_p max_atoms |E[X_{p+1} | Sigma_p] - X_p|``."""
    res = []
    for p in range(min(X.levels, filt.p_max + 1) - 1):
        ce = conditional_expectation(filt, X, p, measure, v, source_level=p + 1)
        d = np.abs(ce - X.values[p])
        if d.ndim > 1:
            d = d.max(axis=1)
        res.append(float(np.nanmax(d)) if d.size else 0.0)
    if per_level:
        return res
    return max(res) if res else 0.0


def l2_norm(vals: np.ndarray, masses: np.ndarray) -> float:
    vals = np.asarray(vals, float)
    sq = vals ** 2 if vals.ndim == 1 else np.sum(vals ** 2, axis=1)
    return float(np.sqrt(np.sum(sq * masses)))


def _on_finest(X: ProcessSample, filt: Filtration, upto: int) -> np.ndarray:
    """Matrix of ``X_n`` (``n <= upto``) on the atoms of level ``upto``."""
    rows = []
    for n in range(upto + 1):
        par = np.arange(filt.levels[upto].n_atoms)
        for r in range(upto - 1, n - 1, -1):
            par = parent_map(filt, r)[par]
        rows.append(np.asarray(X.values[n])[par])
    return np.array(rows)


def alternating_sums(X: ProcessSample, filt: Filtration, upto: int) -> List[np.ndarray]:
    """``A_N = sum_{n=0}^{2N-1} (-1)^n X_n`` on the atoms of level ``upto`` for ``2N - 1 <= upto``."""
    M = _on_finest(X, filt, upto)
    sg = (-1.0) ** np.arange(M.shape[0])
    cs = np.cumsum(sg[:, None] * M, axis=0)
    return [cs[2 * N - 1] for N in range(1, (upto + 1) // 2 + 1)]


def alternating_sum_check(X: ProcessSample, filt: Filtration, measure: str = "lebesgue", v=None,
                          tol: float = MARTINGALE_TOL) -> dict:
    """Martingale property and L^2 bound of the alternating sums of ``X``.

    Reports, for each ``N``: the martingale residual of ``A_N`` against
    ``A_{N+1}`` over ``Sigma_{2N-1}``, ``||A_N||_2`` against ``2 sup_n ||X_n||_2``,
    the exact identity ``||A_N||^2 = sum_m (-1)^{m+1} ||X_m||^2`` and the
    submartingale step ``||X_{2n-1}||^2 <= ||X_{2n}||^2``.
    """
    P = min(X.levels, filt.p_max + 1) - 1
    mP = atom_masses(filt, P, measure, v)
    norms2 = [l2_norm(X.values[n], atom_masses(filt, n, measure, v)) ** 2 for n in range(P + 1)]
    sup = float(np.sqrt(max(norms2))) if norms2 else 0.0
    rows, ok = [], True
    A = alternating_sums(X, filt, P)
    for N in range(1, len(A) + 1):
        lvl = 2 * N - 1
        nA = l2_norm(A[N - 1], mP)
        ident = sum((-1) ** (m + 1) * norms2[m] for m in range(lvl + 1))
        row = {"N": N, "norm": nA, "bound": 2 * sup, "l2_pass": nA <= 2 * sup + tol,
               "identity_gap": abs(nA ** 2 - ident)}
        if N < len(A):
            # A_{N+1} lives on level 2N+1; conditioning on Sigma_{2N-1}
            fine = ProcessSample([None] * P + [A[N]])
            ce = conditional_expectation(filt, fine, lvl, measure, v, source_level=P)
            here = conditional_expectation(filt, ProcessSample([None] * P + [A[N - 1]]), lvl, measure,
                                           v, source_level=P)
            row["residual"] = float(np.nanmax(np.abs(ce - here))) if ce.size else 0.0
        else:
            row["residual"] = 0.0
        ok &= row["l2_pass"]
        rows.append(row)
    sub = []
    for n in range(1, (P + 1) // 2 + 1):
        if 2 * n <= P:
            good = norms2[2 * n - 1] <= norms2[2 * n] + tol
            sub.append({"n": n, "lhs": norms2[2 * n - 1], "rhs": norms2[2 * n], "pass": good})
            ok &= good
    return {"rows": rows, "submartingale": sub, "sup_norm": sup, "ok": bool(ok)}


def doob_tail_check(filt: Filtration, v, lam: float, c=None) -> dict:
    """Exceedance of ``sup_p |alpha_p^v|`` against ``16 K(gamma) / (lambda^2 c^3)``.

    ``c`` defaults to the smallest sampled ``<gamma', v>``.  Also reported is
    the intermediate step ``lambda^2 mu^v(exceedance) <= 16 / c^2``.
    """
    cmin = check_positivity(filt, v, c)
    c = cmin if c is None else float(c)
    X = ratio_process(filt, v)
    P = filt.p_max
    A = alternating_sums(X, filt, P)
    if A:
        sup = np.max(np.abs(np.array(A)), axis=0)
    else:
        sup = np.zeros(filt.levels[P].n_atoms)
    exceed = sup > lam
    leb = filt.levels[P].lebesgue
    mv = atom_masses(filt, P, "mu_v", v)
    K = normalization(filt, v)
    measured = float(np.sum(leb[exceed]))
    bound = 16 * K / (lam ** 2 * c ** 3)
    step_lhs = lam ** 2 * float(np.sum(mv[exceed]))
    step_rhs = 16 / c ** 2
    return {"lambda": lam, "measured": measured, "bound": bound, "K": K, "c": c,
            "pass": measured <= bound + filt.error_bar,
            "step_lhs": step_lhs, "step_rhs": step_rhs, "step_pass": step_lhs <= step_rhs + 1e-12}


def l2_chain_check(filt: Filtration, v, c=None) -> dict:
    """``||ratio_p||_inf <= 1/c`` and ``||ratio_p||_{L^2(mu^v)} <= K(gamma)/c`` per level."""
    cmin = check_positivity(filt, v, c)
    c = cmin if c is None else float(c)
    X = ratio_process(filt, v)
    K = normalization(filt, v)
    rows = []
    for p in range(filt.p_max + 1):
        linf = float(np.max(np.abs(X.values[p])))
        l2 = l2_norm(X.values[p], atom_masses(filt, p, "mu_v", v))
        rows.append({"p": p, "linf": linf, "linf_bound": 1 / c, "l2": l2, "l2_bound": K / c,
                     "pass": linf <= 1 / c + 1e-12 and l2 <= K / c + 1e-12})
    return {"rows": rows, "ok": all(r["pass"] for r in rows)}


# ---------------------------------------------------------------------------
# Derivative-growth trace
# ---------------------------------------------------------------------------

def der_grow_diagnostic(s, z, depth: Optional[int] = None) -> List[dict]:
    """Blockwise alternating sums between consecutive ``m`` increments at ``z``.

    For each increment block ``r_n < q <= r_{n+1}`` emits
    ``|sum (-1)^q <w, e_{k_q}^perp> / <w, e_{k_q}>|`` over the strips hit in the
    block, the lower bound ``2^n eps(n) - 2`` and whether the recorded gradient
    jump ``||Dh_{r_{n+1}} - Dh_{r_n}||`` certifies the increment.
    """
    from .construction import construction_for

    c = construction_for(s, depth)
    sc = c.s
    prof = c.profile(z, depth)
    K = c.K if depth is None else depth
    inc = [k for k in range(1, K + 1) if prof.m[k] > prof.m[k - 1]]
    if not inc:
        return []
    w = sc.w
    hits = prof.k_list
    out = []
    bounds = [0] + inc
    for n in range(1, len(bounds)):
        lo, hi = bounds[n - 1], bounds[n]
        total = 0.0
        for q, k in enumerate(hits, start=1):
            if lo < k <= hi:
                e = sc.stage(k).e
                ep = (-float(e[1]), float(e[0]))
                r = (float(w[0]) * ep[0] + float(w[1]) * ep[1]) / (float(w[0]) * float(e[0]) + float(w[1]) * float(e[1]))
                total += (-1) ** q * r
        m_before = prof.m[lo]
        eps_n = float(sc.eps(m_before))
        bound = 2 ** m_before * eps_n - 2
        ga, gb = prof.grad[lo], prof.grad[hi]
        jump = None
        if ga is not None and gb is not None:
            jump = float(np.hypot(float(gb[0] - ga[0]), float(gb[1] - ga[1])))
        out.append({"block": n, "from_stage": lo, "to_stage": hi, "m": prof.m[hi],
                    "alt_sum": abs(total), "bound": bound, "holds": abs(total) >= bound,
                    "gradient_jump": jump, "certified": jump is not None and jump > eps_n})
    return out


def bound_sequence(n_max: int) -> List[float]:
    """``2^n / n^2 - 2`` for ``n = 1..n_max``."""
    return [2.0 ** n / n ** 2 - 2 for n in range(1, n_max + 1)]


def martingale_report(s, curve, v=None, lams=(0.5, 1.0, 2.0, 4.0), delta=None) -> List[CheckRow]:
    """All martingale checks for one curve as report rows."""
    filt = build_filtration(s, curve, delta=delta)
    v = filt.family.w if v is None else np.asarray(v, float)
    X = ratio_process(filt, v)
    bars = ratio_error_bars(filt, v)
    res = martingale_residual(X, filt, "mu_v", v, per_level=True)
    rows = []
    for p, r in enumerate(res):
        bar = float(np.max(bars[p])) if len(bars[p]) else 0.0
        rows.append(CheckRow(f"ratio_martingale[p={p}]", r, MARTINGALE_TOL + bar,
                             r <= MARTINGALE_TOL + bar, bar))
    alt = alternating_sum_check(X, filt, "mu_v", v)
    for row in alt["rows"]:
        rows.append(CheckRow(f"alt_sum_l2[N={row['N']}]", row["norm"], row["bound"], row["l2_pass"], 0.0))
    for row in alt["submartingale"]:
        rows.append(CheckRow(f"submartingale[n={row['n']}]", row["lhs"], row["rhs"], row["pass"], 0.0))
    for lam in lams:
        d = doob_tail_check(filt, v, lam)
        rows.append(CheckRow(f"doob[lambda={lam}]", d["measured"], d["bound"], d["pass"], filt.error_bar))
        rows.append(CheckRow(f"doob_step[lambda={lam}]", d["step_lhs"], d["step_rhs"], d["step_pass"], 0.0))
    return rows
