"""Dense solvers for small convex QPs.

    minimize    1/2 x'Px + q'x
    subject to  l <= Ax <= u

Two methods share this interface:

``ipm``
    Mehrotra predictor-corrector interior point. The default: the MPC
    relaxation is a heavily degenerate LP-like problem and this converges
    in a few dozen Newton steps regardless.
``admm``
    Operator splitting in the form popularised by OSQP, with Ruiz
    equilibration, per-row step sizes, adaptive rho and an active-set
    polish. Cheap per iteration but slow to tight tolerance on
    degenerate instances.

Sized for a few hundred variables, so everything stays dense.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_factor, cho_solve, lu_factor, lu_solve

INF = np.inf


class QPSolverError(RuntimeError):
    """Raised when a method does not reach tolerance within its iteration cap."""

    def __init__(self, message: str, diagnostics: dict):
        super().__init__(message)
        self.diagnostics = diagnostics


@dataclass
class QPResult:
    x: np.ndarray
    y: np.ndarray
    objective: float
    iterations: int
    prim_res: float
    dual_res: float
    polished: bool
    status: str = "solved"


def _ruiz(P, A, iters=15):
    n = P.shape[0]
    m = A.shape[0]
    D = np.ones(n)
    E = np.ones(m)
    Ps, As = P.copy(), A.copy()
    for _ in range(iters):
        col = np.maximum(np.abs(Ps).max(axis=0), np.abs(As).max(axis=0) if m else 0.0)
        col[col < 1e-4] = 1.0
        d = 1.0 / np.sqrt(col)
        row = np.abs(As).max(axis=1) if m else np.zeros(0)
        row[row < 1e-4] = 1.0
        e = 1.0 / np.sqrt(row)
        Ps = d[:, None] * Ps * d[None, :]
        As = e[:, None] * As * d[None, :]
        D *= d
        E *= e
    return Ps, As, D, E


@dataclass
class _Settings:
    eps_abs: float = 1e-6
    eps_rel: float = 1e-6
    max_iter: int = 10_000
    rho: float = 0.1
    sigma: float = 1e-6
    alpha: float = 1.6
    adapt_every: int = 25
    polish_every: int = 25


def _polish(P, q, A, l, u, x, z, y, eps, active=None):
    """Solve the equality-constrained QP on the guessed active set.

    ``active`` optionally gives the ``(lower, upper)`` masks directly;
    otherwise they are read off the ADMM iterate.
    """
    n = P.shape[0]
    eq = np.isclose(l, u)
    if active is None:
        lower = eq | (z - l < -y)
        upper = ~eq & (u - z < y)
    else:
        lower = eq | active[0]
        upper = ~eq & active[1]
    act = lower | upper
    Aa = A[act]
    ba = np.where(lower[act], l[act], u[act])
    k = Aa.shape[0]
    delta = 1e-10
    K = np.zeros((n + k, n + k))
    K[:n, :n] = P
    K[:n, n:] = Aa.T
    K[n:, :n] = Aa
    rhs = np.concatenate([-q, ba])
    Kreg = K.copy()
    Kreg[:n, :n] += delta * np.eye(n)
    Kreg[n:, n:] -= delta * np.eye(k)
    try:
        sol = np.linalg.solve(Kreg, rhs)
    except np.linalg.LinAlgError:
        return None
    for _ in range(5):
        sol = sol + np.linalg.solve(Kreg, rhs - K @ sol)
    xp = sol[:n]
    ya = sol[n:]
    yp = np.zeros_like(y)
    yp[act] = ya
    Ax = A @ xp
    viol = max(np.max(l - Ax, initial=0.0), np.max(Ax - u, initial=0.0))
    dual = np.max(np.abs(P @ xp + q + A.T @ yp), initial=0.0)
    sign_bad = max(
        np.max(yp[lower & ~eq], initial=0.0),
        np.max(-yp[upper], initial=0.0),
    )
    if viol <= eps and dual <= eps and sign_bad <= eps:
        return xp, yp, viol, dual
    return None


def solve_admm(P, q, A, l, u, *, eps: float = 1e-6, max_iter: int = 10_000, warm_start=None) -> QPResult:
    P = np.asarray(P, dtype=float)
    q = np.asarray(q, dtype=float)
    A = np.asarray(A, dtype=float)
    l = np.asarray(l, dtype=float)
    u = np.asarray(u, dtype=float)
    st = _Settings(eps_abs=eps, eps_rel=0.0, max_iter=max_iter)
    n, m = P.shape[0], A.shape[0]

    Ps, As, D, E = _ruiz(P, A)
    qs = D * q
    cscale = 1.0 / max(1.0, np.abs(qs).max(initial=0.0), np.abs(Ps).max(initial=0.0))
    Ps *= cscale
    qs *= cscale
    ls = np.where(np.isfinite(l), E * l, l)
    us = np.where(np.isfinite(u), E * u, u)

    eq = np.isclose(ls, us)
    free = ~np.isfinite(ls) & ~np.isfinite(us)

    def rho_vec(rho):
        r = np.full(m, rho)
        r[eq] = 1e3 * rho
        r[free] = 1e-6
        return r

    rho = st.rho
    R = rho_vec(rho)

    def factor(R):
        K = Ps + st.sigma * np.eye(n) + As.T @ (R[:, None] * As)
        return cho_factor(K)

    F = factor(R)
    x = np.zeros(n)
    z = np.zeros(m)
    y = np.zeros(m)
    if warm_start is not None:
        x0, y0 = warm_start
        x = np.asarray(x0, dtype=float) / D
        z = np.clip(As @ x, ls, us)
        y = np.asarray(y0, dtype=float) / E * cscale

    def residuals(x, z, y):
        xu = D * x
        yu = y * E / cscale
        zu = z / E
        Ax = A @ xu
        Px = P @ xu
        ATy = A.T @ yu
        rp = np.max(np.abs(Ax - zu), initial=0.0)
        rd = np.max(np.abs(Px + q + ATy), initial=0.0)
        ep = st.eps_abs + st.eps_rel * max(np.max(np.abs(Ax), initial=0.0), np.max(np.abs(zu), initial=0.0))
        ed = st.eps_abs + st.eps_rel * max(
            np.max(np.abs(Px), initial=0.0), np.max(np.abs(ATy), initial=0.0), np.max(np.abs(q), initial=0.0)
        )
        return rp, rd, ep, ed, Ax, Px, ATy, zu

    def try_polish(x, z, y):
        out = _polish(P, q, A, l, u, D * x, z / E, y * E / cscale, eps)
        return out

    rp = rd = np.inf
    for it in range(1, st.max_iter + 1):
        rhs = st.sigma * x - qs + As.T @ (R * z - y)
        xt = cho_solve(F, rhs)
        zt = As @ xt
        x = st.alpha * xt + (1 - st.alpha) * x
        zr = st.alpha * zt + (1 - st.alpha) * z
        znew = np.clip(zr + y / R, ls, us)
        y = y + R * (zr - znew)
        z = znew

        if it % st.adapt_every == 0 or it == st.max_iter:
            rp, rd, ep, ed, Ax, Px, ATy, zu = residuals(x, z, y)
            if it % st.polish_every == 0:
                out = try_polish(x, z, y)
                if out is not None:
                    xp, yp, vp, vd = out
                    return QPResult(xp, yp, float(0.5 * xp @ P @ xp + q @ xp), it, vp, vd, True)
            if rp <= ep and rd <= ed:
                xu = D * x
                yu = y * E / cscale
                return QPResult(xu, yu, float(0.5 * xu @ P @ xu + q @ xu), it, rp, rd, False)
            # adapt rho on scaled residual ratio
            sp = rp / max(np.max(np.abs(Ax), initial=0.0), np.max(np.abs(zu), initial=0.0), 1e-12)
            sd = rd / max(np.max(np.abs(Px), initial=0.0), np.max(np.abs(ATy), initial=0.0), np.max(np.abs(q), initial=0.0), 1e-12)
            ratio = np.sqrt(sp / max(sd, 1e-16))
            if ratio > 5 or ratio < 0.2:
                rho_new = float(np.clip(rho * ratio, 1e-6, 1e6))
                Rn = rho_vec(rho_new)
                # y is kept; z stays consistent because the projection uses y/R
                rho, R = rho_new, Rn
                F = factor(R)

    raise QPSolverError(
        f"ADMM did not converge in {st.max_iter} iterations (prim {rp:.3g}, dual {rd:.3g})",
        {"iterations": st.max_iter, "prim_res": float(rp), "dual_res": float(rd), "x": D * x},
    )


def solve_ipm(P, q, A, l, u, *, eps: float = 1e-6, max_iter: int = 100, polish: bool = True) -> QPResult:
    """Primal-dual interior point on the split form
    ``Ex = b, Gx + s = h, s >= 0`` built from the two-sided rows.
    """
    P = np.asarray(P, dtype=float)
    q = np.asarray(q, dtype=float)
    A = np.asarray(A, dtype=float)
    l = np.asarray(l, dtype=float)
    u = np.asarray(u, dtype=float)
    n, m = P.shape[0], A.shape[0]
    eq = np.isfinite(l) & np.isfinite(u) & (np.abs(u - l) <= 1e-12 * np.maximum(1.0, np.abs(l)))
    lo = np.isfinite(l) & ~eq
    hi = np.isfinite(u) & ~eq
    E, b = A[eq], l[eq]
    G = np.vstack([-A[lo], A[hi]])
    h = np.concatenate([-l[lo], u[hi]])
    ne, ni = E.shape[0], G.shape[0]

    # row-normalise for conditioning; multipliers are mapped back at the end
    ge = np.maximum(np.abs(G).max(axis=1, initial=0.0), 1e-12) if ni else np.ones(0)
    G, h = G / ge[:, None], h / ge
    ee = np.maximum(np.abs(E).max(axis=1, initial=0.0), 1e-12) if ne else np.ones(0)
    E, b = E / ee[:, None], b / ee

    reg = 1e-10

    def kkt_factor(W):
        K = np.zeros((n + ne, n + ne))
        H = P + G.T @ (W[:, None] * G)
        K[:n, :n] = H
        K[:n, n:] = E.T
        K[n:, :n] = E
        Kr = K.copy()
        Kr[:n, :n] += reg * np.eye(n)
        Kr[n:, n:] -= reg * np.eye(ne)
        try:
            return K, lu_factor(Kr, check_finite=False)
        except (np.linalg.LinAlgError, ValueError):
            return None

    def kkt_solve(fac, r1, r2):
        K, lu = fac
        rhs = np.concatenate([r1, r2])
        sol = lu_solve(lu, rhs, check_finite=False)
        for _ in range(2):
            sol = sol + lu_solve(lu, rhs - K @ sol, check_finite=False)
        if not np.all(np.isfinite(sol)):
            return None
        return sol[:n], sol[n:]

    # initial point: least-squares fit with unit weights, then shift slacks
    fac = kkt_factor(np.ones(ni))
    init = None if fac is None else kkt_solve(fac, -q + G.T @ h, b)
    if init is None:
        raise QPSolverError("interior point: singular initial KKT system", {"iterations": 0})
    x, y = init
    s = h - G @ x
    z = np.ones(ni)
    shift = max(0.0, -s.min(initial=0.0)) + 1.0
    s = s + shift

    nq = max(1.0, np.abs(q).max(initial=0.0))
    nb = max(1.0, np.abs(b).max(initial=0.0), np.abs(h).max(initial=0.0))
    rp = rd = gap = np.inf
    for it in range(1, max_iter + 1):
        rd_v = P @ x + q + E.T @ y + G.T @ z
        re_v = E @ x - b
        ri_v = G @ x + s - h
        mu = float(s @ z) / ni if ni else 0.0
        rd = np.abs(rd_v).max(initial=0.0)
        rp = max(np.abs(re_v).max(initial=0.0), np.abs(ri_v).max(initial=0.0))
        gap = mu
        # run past the requested tolerance so the active set is unambiguous
        if rd <= eps * nq * 1e-3 and rp <= eps * nb * 1e-3 and gap <= eps * 1e-6:
            break
        fac = kkt_factor(z / s)
        if fac is None:
            break

        def direction(rc):
            r1 = -rd_v - G.T @ ((z * ri_v - rc) / s)
            out = kkt_solve(fac, r1, -re_v)
            if out is None:
                return None
            dx, dy = out
            ds = -ri_v - G @ dx
            dz = (-rc - z * ds) / s
            return dx, dy, ds, dz

        def max_step(v, dv):
            neg = dv < 0
            return min(1.0, float(np.min(-v[neg] / dv[neg]))) if np.any(neg) else 1.0

        aff = direction(s * z)
        if aff is None:
            break
        dx, dy, ds, dz = aff
        a_aff = min(max_step(s, ds), max_step(z, dz))
        mu_aff = float((s + a_aff * ds) @ (z + a_aff * dz)) / ni if ni else 0.0
        sigma = (mu_aff / mu) ** 3 if mu > 0 else 0.0
        cor = direction(s * z + ds * dz - sigma * mu)
        if cor is None:
            break
        dx, dy, ds, dz = cor
        a = min(1.0, 0.99 * min(max_step(s, ds), max_step(z, dz)))
        x = x + a * dx
        y = y + a * dy
        s = s + a * ds
        z = z + a * dz
    else:
        raise QPSolverError(
            f"interior point did not converge in {max_iter} iterations "
            f"(prim {rp:.3g}, dual {rd:.3g}, gap {gap:.3g})",
            {"iterations": max_iter, "prim_res": float(rp), "dual_res": float(rd), "gap": float(gap), "x": x},
        )
    if not (rd <= eps * nq and rp <= eps * nb and gap <= eps):
        raise QPSolverError(
            f"interior point stalled at iteration {it} (prim {rp:.3g}, dual {rd:.3g}, gap {gap:.3g})",
            {"iterations": it, "prim_res": float(rp), "dual_res": float(rd), "gap": float(gap), "x": x},
        )
    # multipliers in the l <= Ax <= u convention: positive on active upper rows
    yfull = np.zeros(m)
    yfull[eq] = y / ee
    nlo = int(lo.sum())
    zl, zu = z[:nlo] / ge[:nlo], z[nlo:] / ge[nlo:]
    yfull[lo] -= zl
    yfull[hi] += zu
    # snap to the face picked out by the multipliers when that is consistent
    if polish:
        nlo = int(lo.sum())
        act_i = z > s
        act_lo = np.zeros(m, dtype=bool)
        act_hi = np.zeros(m, dtype=bool)
        act_lo[lo] = act_i[:nlo]
        act_hi[hi] = act_i[nlo:]
        out = _polish(P, q, A, l, u, x, A @ x, yfull, eps, active=(act_lo, act_hi))
        if out is not None:
            xp, yp, vp, vd = out
            return QPResult(xp, yp, float(0.5 * xp @ P @ xp + q @ xp), it, vp, vd, True)
    return QPResult(x, yfull, float(0.5 * x @ P @ x + q @ x), it, float(rp), float(rd), False)


def solve_qp(
    P, q, A, l, u, *, eps: float = 1e-6, max_iter: int | None = None, method: str = "ipm", polish: bool = True, warm_start=None
) -> QPResult:
    """Solve ``min 1/2 x'Px + q'x  s.t.  l <= Ax <= u``.

    ``max_iter`` defaults to 100 Newton steps for ``ipm`` and 10 000 for
    ``admm``. Raises :class:`QPSolverError` when tolerance is not reached.
    """
    if method == "ipm":
        return solve_ipm(P, q, A, l, u, eps=eps, max_iter=max_iter or 100, polish=polish)
    if method == "admm":
        return solve_admm(P, q, A, l, u, eps=eps, max_iter=max_iter or 10_000, warm_start=warm_start)
    raise ValueError(f"unknown QP method {method!r}")
