"""Dense primal-dual interior-point solver for block semidefinite programs.

Primal (standard form)::

    minimize    sum_j <C_j, X_j> + c_f . x
    subject to  sum_j <A_ij, X_j> + F_i . x = b_i      (i = 1..m)
                X_j PSD,  x free

Search direction is HKM with a Mehrotra predictor-corrector.  Free variables
are kept in the Newton system and eliminated through a second Schur complement
``F^T M^-1 F`` instead of being split into nonnegative pairs.
"""
from __future__ import annotations

import enum
import logging
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
import scipy.linalg as la
import scipy.sparse as sp

log = logging.getLogger(__name__)


class Status(str, enum.Enum):
    OPTIMAL = "Optimal"
    FEASIBLE = "Feasible"
    INFEASIBLE = "Infeasible"
    MAX_ITER = "MaxIter"
    NUM_ERR = "NumErr"


@dataclass
class SolverOptions:
    tol_gap: float = 1e-9
    tol_feas: float = 1e-9
    max_iter: int = 100
    step_fraction: float = 0.98
    t_max: float = 1.0           # phase-I slack cap
    feasible_slack: float = 1e-9  # phase-I: Feasible iff t* > feasible_slack
    stall_iters: int = 5          # give up after this many iterations far from the best
    verbose: bool = False


@dataclass
class SdpProblem:
    """Block SDP in standard form.

    Block coefficients are symmetric and given by their upper triangle:
    ``block_coo[j] = (con, row, col, val)`` with ``row <= col`` states that
    ``A[con][j][row, col] = A[con][j][col, row] = val``.
    """

    block_dims: list[int]
    free_count: int
    rhs: np.ndarray
    block_coo: list[tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]]
    free_coeffs: sp.spmatrix | np.ndarray | None = None
    obj_blocks: list[np.ndarray | None] | None = None
    obj_free: np.ndarray | None = None

    def __post_init__(self):
        self.rhs = np.asarray(self.rhs, dtype=float).reshape(-1)
        m = self.rhs.size
        if any(int(n) < 1 for n in self.block_dims):
            raise ValueError("all block dimensions must be >= 1")
        if len(self.block_coo) != len(self.block_dims):
            raise ValueError("one coefficient set per block is required")
        coo = []
        for n, (con, r, c, v) in zip(self.block_dims, self.block_coo):
            con = np.asarray(con, dtype=np.int64)
            r = np.asarray(r, dtype=np.int64)
            c = np.asarray(c, dtype=np.int64)
            v = np.asarray(v, dtype=float)
            if not (con.shape == r.shape == c.shape == v.shape):
                raise ValueError("coefficient arrays must have equal length")
            if con.size and (con.min() < 0 or con.max() >= m):
                raise ValueError("constraint index out of range")
            if r.size and (min(r.min(), c.min()) < 0 or max(r.max(), c.max()) >= n):
                raise ValueError("block entry index out of range")
            lo, hi = np.minimum(r, c), np.maximum(r, c)
            coo.append((con, lo, hi, v))
        self.block_coo = coo
        if self.free_coeffs is None:
            self.free_coeffs = sp.csr_matrix((m, self.free_count))
        if self.free_coeffs.shape != (m, self.free_count):
            raise ValueError("free coefficient matrix has wrong shape")
        if self.obj_blocks is None:
            self.obj_blocks = [None] * len(self.block_dims)
        if self.obj_free is None:
            self.obj_free = np.zeros(self.free_count)
        self.obj_free = np.asarray(self.obj_free, dtype=float).reshape(-1)

    @property
    def num_constraints(self) -> int:
        return self.rhs.size

    @classmethod
    def from_dense(cls, block_dims: Sequence[int], A: Sequence[Sequence[np.ndarray | None]],
                   b: Sequence[float], C: Sequence[np.ndarray | None] | None = None,
                   free: np.ndarray | None = None, c_free: Sequence[float] | None = None
                   ) -> "SdpProblem":
        """Build from dense per-constraint, per-block matrices ``A[i][j]``."""
        coo = []
        for j, n in enumerate(block_dims):
            cons, rows, cols, vals = [], [], [], []
            for i, Ai in enumerate(A):
                mat = Ai[j] if j < len(Ai) else None
                if mat is None:
                    continue
                mat = np.asarray(mat, dtype=float)
                r, c = np.triu_indices(n)
                v = 0.5 * (mat[r, c] + mat[c, r])
                nz = v != 0
                cons.extend([i] * int(nz.sum()))
                rows.extend(r[nz])
                cols.extend(c[nz])
                vals.extend(v[nz])
            coo.append((np.array(cons), np.array(rows), np.array(cols), np.array(vals)))
        m = len(b)
        nf = 0 if free is None else np.asarray(free).shape[1]
        F = sp.csr_matrix(np.asarray(free, dtype=float)) if nf else sp.csr_matrix((m, 0))
        objs = None if C is None else [None if c is None else np.asarray(c, float) for c in C]
        return cls(list(block_dims), nf, np.asarray(b, float), coo, F, objs,
                   None if c_free is None else np.asarray(c_free, float))

    def dump(self) -> str:
        """Sparse text dump: ``con block row col value`` lines, then the objective."""
        lines = [f"# blocks {' '.join(map(str, self.block_dims))} free {self.free_count}"]
        for j, (con, r, c, v) in enumerate(self.block_coo):
            order = np.lexsort((c, r, con))
            for k in order:
                lines.append(f"{con[k]} {j} {r[k]} {c[k]} {float(v[k])!r}")
        F = sp.coo_matrix(self.free_coeffs)
        for i, k, v in sorted(zip(F.row, F.col, F.data)):
            lines.append(f"{i} free {k} - {float(v)!r}")
        lines.append("rhs " + " ".join(repr(float(x)) for x in self.rhs))
        obj = []
        for j, Cj in enumerate(self.obj_blocks):
            if Cj is not None:
                r, c = np.nonzero(np.triu(Cj))
                obj.extend(f"{j}:{a}:{bb}:{float(Cj[a, bb])!r}" for a, bb in zip(r, c))
        obj.extend(f"free:{k}:{float(v)!r}" for k, v in enumerate(self.obj_free) if v)
        lines.append("objective " + " ".join(obj))
        return "\n".join(lines) + "\n"


@dataclass
class SdpSolution:
    status: Status
    X: list[np.ndarray]
    x_free: np.ndarray
    y: np.ndarray
    Z: list[np.ndarray]
    primal_obj: float
    dual_obj: float
    gap: float
    iterations: int
    primal_infeas: float = np.nan
    dual_infeas: float = np.nan
    slack: float | None = None  # phase-I optimum t*
    history: list[dict] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return self.status in (Status.OPTIMAL, Status.FEASIBLE)


def _sym(a: np.ndarray) -> np.ndarray:
    return 0.5 * (a + a.T)


class _Block:
    """Full (both triangles) COO expansion of one block's constraint data."""

    def __init__(self, n: int, m: int, con, r, c, v):
        off = r != c
        self.n = n
        con = np.concatenate([con, con[off]])
        order = np.argsort(con, kind="stable")
        self.con = con[order]
        self.a = np.concatenate([r, c[off]])[order]
        self.b = np.concatenate([c, r[off]])[order]
        self.v = np.concatenate([v, v[off]])[order]
        self.lin = self.a * n + self.b
        # Entries are grouped by constraint: group g spans starts[g]:starts[g+1].
        self.starts = np.flatnonzero(np.r_[True, self.con[1:] != self.con[:-1]]) \
            if self.con.size else np.zeros(0, dtype=int)
        self.groups = self.con[self.starts]
        # Padded entry table: row g lists the entries of group g (pad -> weight 0).
        sizes = np.diff(np.r_[self.starts, self.con.size]).astype(int)
        L = int(sizes.max()) if sizes.size else 0
        self.pad_idx = np.zeros((len(sizes), L), dtype=int)
        self.pad_mask = np.zeros((len(sizes), L), dtype=bool)
        for g, (st, sz) in enumerate(zip(self.starts, sizes)):
            self.pad_idx[g, :sz] = np.arange(st, st + sz)
            self.pad_mask[g, :sz] = True
        self.lin_t = self.b * n + self.a
        self.m = m
        self._build()

    def rescale(self, d: np.ndarray) -> None:
        self.v = self.v * d[self.con]
        self._build()

    def _build(self) -> None:
        P = self.con.size
        self.S = sp.csr_matrix((self.v, (self.con, np.arange(P))), shape=(self.m, P))
        self.pad_w = np.where(self.pad_mask, self.v[self.pad_idx] if P else 0.0, 0.0)

    def apply(self, Y: np.ndarray) -> np.ndarray:
        """Vector of <A_i, Y> over constraints (Y need not be symmetric)."""
        return self.S @ Y.reshape(-1)[self.lin]

    def adjoint(self, y: np.ndarray) -> np.ndarray:
        """sum_i y_i A_i as a dense symmetric matrix."""
        w = self.v * y[self.con]
        out = np.bincount(self.lin, weights=w, minlength=self.n * self.n)
        return out.reshape(self.n, self.n)

    def schur(self, X: np.ndarray, Zinv: np.ndarray, M: np.ndarray,
              chunk_elems: int = 4_000_000) -> None:
        """Accumulate M_ik += tr(A_i X A_k Z^-1) into M.

        U_k = X A_k Z^-1 is formed for a batch of constraints k with one batched
        matmul; M_ik then gathers the entries of U_k that A_i touches.
        """
        P = self.con.size
        if P == 0:
            return
        n = self.n
        G = len(self.groups)
        out = np.empty((G, G))
        step = max(1, chunk_elems // (n * n))
        vrow = self.v
        for g0 in range(0, G, step):
            g1 = min(G, g0 + step)
            idx = self.pad_idx[g0:g1]
            w = self.pad_w[g0:g1]
            XA = X[:, self.a[idx]].transpose(1, 0, 2) * w[:, None, :]   # (B, n, L)
            ZB = Zinv[self.b[idx], :]                                    # (B, L, n)
            U = np.matmul(XA, ZB).reshape(g1 - g0, n * n)
            T = U[:, self.lin_t] * vrow
            out[g0:g1] = np.add.reduceat(T, self.starts, axis=1)
        M[np.ix_(self.groups, self.groups)] += out


def _max_step(X: np.ndarray, dX: np.ndarray) -> float:
    """Largest alpha with X + alpha dX PSD (inf when dX keeps PSD)."""
    try:
        L = la.cholesky(X, lower=True)
    except la.LinAlgError:
        return 0.0
    Li = la.solve_triangular(L, dX, lower=True)
    Li = la.solve_triangular(L, Li.T, lower=True)
    lam = la.eigvalsh(_sym(Li))[0]
    if lam >= 0:
        return np.inf
    return -1.0 / lam


class _Workspace:
    def __init__(self, prob: SdpProblem):
        m = prob.num_constraints
        self.m = m
        self.dims = [int(n) for n in prob.block_dims]
        self.blocks = [_Block(n, m, *coo) for n, coo in zip(self.dims, prob.block_coo)]
        self.F = np.asarray(sp.csr_matrix(prob.free_coeffs).toarray(), dtype=float)
        self.b = prob.rhs.copy()
        self.C = [np.zeros((n, n)) if c is None else _sym(np.asarray(c, float))
                  for n, c in zip(self.dims, prob.obj_blocks)]
        self.cf = prob.obj_free.copy()
        # Row scaling for conditioning.
        sq = np.zeros(m)
        for blk in self.blocks:
            np.add.at(sq, blk.con, blk.v ** 2)
        sq += (self.F ** 2).sum(axis=1)
        norms = np.sqrt(sq)
        norms[norms == 0] = 1.0
        self.row_scale = 1.0 / norms
        for blk in self.blocks:
            blk.rescale(self.row_scale)
        self.F = self.F * self.row_scale[:, None]
        self.b = self.b * self.row_scale

    def A(self, Ys: Sequence[np.ndarray]) -> np.ndarray:
        out = np.zeros(self.m)
        for blk, Y in zip(self.blocks, Ys):
            out += blk.apply(Y)
        return out

    def At(self, y: np.ndarray) -> list[np.ndarray]:
        return [blk.adjoint(y) for blk in self.blocks]


def _initial_point(ws: _Workspace):
    X, Z = [], []
    bmax = np.abs(ws.b).max(initial=0.0)
    for blk, n, C in zip(ws.blocks, ws.dims, ws.C):
        anorm = 0.0
        if blk.con.size:
            sq = np.bincount(blk.con, weights=blk.v ** 2, minlength=ws.m)
            anorm = np.sqrt(sq.max())
        xi = max(10.0, np.sqrt(n), np.sqrt(n) * (1.0 + bmax) / (1.0 + anorm))
        eta = max(10.0, np.sqrt(n), la.norm(C), anorm)
        X.append(xi * np.eye(n))
        Z.append(eta * np.eye(n))
    return X, Z


def _cholesky_or_none(M: np.ndarray):
    try:
        return la.cho_factor(M, lower=True, check_finite=False)
    except la.LinAlgError:
        return None


def solve(prob: SdpProblem, opts: SolverOptions | None = None) -> SdpSolution:
    """Solve ``prob`` to the tolerances in ``opts``; deterministic."""
    opts = opts or SolverOptions()
    ws = _Workspace(prob)
    return _ipm(ws, opts)


def _ipm(ws: _Workspace, opts: SolverOptions) -> SdpSolution:
    m, nf = ws.m, ws.F.shape[1]
    X, Z = _initial_point(ws)
    y = np.zeros(m)
    x = np.zeros(nf)
    N = sum(ws.dims)
    history: list[dict] = []
    status = Status.MAX_ITER
    bnorm = 1.0 + la.norm(ws.b)
    cnorm = 1.0 + np.sqrt(sum(la.norm(C) ** 2 for C in ws.C) + la.norm(ws.cf) ** 2)
    it = 0
    pinf = dinf = gap = np.inf
    pobj = dobj = np.nan
    best = None
    best_merit = np.inf
    since_best = 0

    for it in range(1, opts.max_iter + 1):
        Aty = ws.At(y)
        rp = ws.b - ws.A(X) - ws.F @ x
        Rd = [C - A - Zj for C, A, Zj in zip(ws.C, Aty, Z)]
        rf = ws.cf - ws.F.T @ y
        mu = sum(np.vdot(Xj, Zj) for Xj, Zj in zip(X, Z)) / N
        pobj = sum(np.vdot(C, Xj) for C, Xj in zip(ws.C, X)) + ws.cf @ x
        dobj = ws.b @ y
        pinf = la.norm(rp) / bnorm
        dinf = np.sqrt(sum(la.norm(R) ** 2 for R in Rd) + la.norm(rf) ** 2) / cnorm
        gap = abs(pobj - dobj) / (1.0 + abs(pobj) + abs(dobj))
        history.append(dict(it=it, pobj=pobj, dobj=dobj, pinf=pinf, dinf=dinf, mu=mu))
        if opts.verbose:
            log.info("it %3d pobj % .8e dobj % .8e pinf %.2e dinf %.2e mu %.2e",
                     it, pobj, dobj, pinf, dinf, mu)
        if pinf < opts.tol_feas and dinf < opts.tol_feas and gap < opts.tol_gap:
            status = Status.OPTIMAL
            break
        # Keep the best iterate: weakly feasible problems lose accuracy near the end.
        merit = max(pinf, dinf, gap)
        if merit < best_merit:
            best_merit, since_best = merit, 0
            best = (X, x, y, Z, pobj, dobj, gap, pinf, dinf)
        else:
            since_best += 1
            if since_best >= opts.stall_iters and merit > 1e3 * best_merit:
                status = Status.NUM_ERR
                break
        if not np.isfinite(mu) or mu > 1e30:
            status = Status.NUM_ERR
            break

        Zinv = []
        try:
            for Zj in Z:
                Lz = la.cho_factor(Zj, lower=True)
                Zinv.append(_sym(la.cho_solve(Lz, np.eye(Zj.shape[0]))))
        except la.LinAlgError:
            status = Status.NUM_ERR
            break
        M = np.zeros((m, m))
        for blk, Xj, Zi in zip(ws.blocks, X, Zinv):
            blk.schur(Xj, Zi, M)
        M = _sym(M)
        fac = _cholesky_or_none(M)
        if fac is None:
            diag = np.abs(np.diag(M)).max(initial=1.0)
            M[np.diag_indices(m)] += 1e-12 * diag
            fac = _cholesky_or_none(M)
        if fac is None:
            status = Status.NUM_ERR
            break
        if nf:
            MiF = la.cho_solve(fac, ws.F)
            G = _sym(ws.F.T @ MiF)
            gfac = _cholesky_or_none(G)
            if gfac is None:
                G[np.diag_indices(nf)] += 1e-12 * max(1.0, np.abs(np.diag(G)).max())
                gfac = _cholesky_or_none(G)
            if gfac is None:
                status = Status.NUM_ERR
                break
        XRdZ = ws.A([Xj @ R @ Zi for Xj, R, Zi in zip(X, Rd, Zinv)])

        def direction(Rc):
            h = rp - ws.A([R @ Zi for R, Zi in zip(Rc, Zinv)]) + XRdZ
            if nf:
                rhs = ws.F.T @ la.cho_solve(fac, h) - rf
                dx = la.cho_solve(gfac, rhs)
                dy = la.cho_solve(fac, h - ws.F @ dx)
            else:
                dx = np.zeros(0)
                dy = la.cho_solve(fac, h)
            Atdy = ws.At(dy)
            dZ = [R - A for R, A in zip(Rd, Atdy)]
            dX = [_sym((R - Xj @ dZj) @ Zi) for R, Xj, dZj, Zi in zip(Rc, X, dZ, Zinv)]
            return dX, dx, dy, dZ

        def steps(dX, dZ):
            ap = min([1.0] + [opts.step_fraction * _max_step(Xj, d) for Xj, d in zip(X, dX)])
            ad = min([1.0] + [opts.step_fraction * _max_step(Zj, d) for Zj, d in zip(Z, dZ)])
            return ap, ad

        XZ = [Xj @ Zj for Xj, Zj in zip(X, Z)]
        dXa, dxa, dya, dZa = direction([-P for P in XZ])
        ap, ad = steps(dXa, dZa)
        mu_aff = sum(np.vdot(Xj + ap * dx_, Zj + ad * dz_)
                     for Xj, dx_, Zj, dz_ in zip(X, dXa, Z, dZa)) / N
        sigma = min(1.0, max(0.0, (mu_aff / mu) ** 3)) if mu > 0 else 0.0
        Rc = [sigma * mu * np.eye(n) - P - dx_ @ dz_
              for n, P, dx_, dz_ in zip(ws.dims, XZ, dXa, dZa)]
        dX, dx, dy, dZ = direction(Rc)
        ap, ad = steps(dX, dZ)
        if ap < 1e-12 and ad < 1e-12:
            status = Status.NUM_ERR
            break
        X = [_sym(Xj + ap * d) for Xj, d in zip(X, dX)]
        x = x + ap * dx
        y = y + ad * dy
        Z = [_sym(Zj + ad * d) for Zj, d in zip(Z, dZ)]
    else:
        status = Status.MAX_ITER

    if status != Status.OPTIMAL and best is not None:
        X, x, y, Z, pobj, dobj, gap, pinf, dinf = best
    y_orig = y * ws.row_scale
    return SdpSolution(status, X, x, y_orig, Z, float(pobj), float(dobj), float(gap), it,
                       float(pinf), float(dinf), None, history)


def phase1_feasibility(prob: SdpProblem, opts: SolverOptions | None = None) -> SdpSolution:
    """Maximize a uniform slack ``t`` with ``X_j - t I`` PSD for every block.

    The returned blocks are the original variables ``X_j = X'_j + t I``.
    Status is Feasible iff ``t* > opts.feasible_slack``; ``slack`` holds t*.
    """
    opts = opts or SolverOptions()
    m = prob.num_constraints
    nb = len(prob.block_dims)
    # Column of t: sum of block traces of each constraint row.
    tcol = np.zeros(m + 1)
    for con, r, c, v in prob.block_coo:
        diag = r == c
        np.add.at(tcol, con[diag], v[diag])
    tcol[m] = 1.0
    F = sp.vstack([sp.csr_matrix(prob.free_coeffs), sp.csr_matrix((1, prob.free_count))])
    F = sp.hstack([F, sp.csr_matrix(tcol.reshape(-1, 1))]).tocsr()
    coo = list(prob.block_coo) + [(np.array([m]), np.array([0]), np.array([0]), np.array([1.0]))]
    rhs = np.concatenate([prob.rhs, [opts.t_max]])
    c_free = np.zeros(prob.free_count + 1)
    c_free[-1] = -1.0
    aug = SdpProblem(list(prob.block_dims) + [1], prob.free_count + 1, rhs, coo, F,
                     [None] * (nb + 1), c_free)
    ws = _Workspace(aug)
    sol = _ipm(ws, opts)
    t = float(sol.x_free[-1])
    X = [Xj + t * np.eye(Xj.shape[0]) for Xj in sol.X[:nb]]
    if sol.status == Status.OPTIMAL:
        status = Status.FEASIBLE if t > opts.feasible_slack else Status.INFEASIBLE
    else:
        status = sol.status
    return SdpSolution(status, X, sol.x_free[:-1], sol.y[:m], sol.Z[:nb], t, t, sol.gap,
                       sol.iterations, sol.primal_infeas, sol.dual_infeas, t, sol.history)


def solve_or_classify(prob: SdpProblem, opts: SolverOptions | None = None) -> SdpSolution:
    """``solve``; when it does not converge, use phase I to tell infeasibility apart."""
    sol = solve(prob, opts)
    if sol.status == Status.OPTIMAL:
        return sol
    p1 = phase1_feasibility(prob, opts)
    if p1.slack is not None and p1.status != Status.NUM_ERR and p1.slack < -1e-8:
        sol.status = Status.INFEASIBLE
        sol.slack = p1.slack
    return sol


def min_eigs(blocks: Iterable[np.ndarray]) -> list[float]:
    return [float(la.eigvalsh(B)[0]) for B in blocks]
