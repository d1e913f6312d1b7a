"""Second-order-cone subproblems and the embedded primal-dual solver.

The two convex restrictions solved repeatedly by the outer algorithm are
expressed over stacked real variables in a structured :class:`ConeProgram`
(linear cost, sum-of-norm groups, squared-norm epigraphs, affine rows, disk
constraints, equalities). :func:`solve` lowers the structure to a standard
conic form ``min c^T x  s.t.  E x = f,  A x + s = b,  s in K`` and runs a
homogeneous self-dual Mehrotra predictor-corrector with Nesterov-Todd scaling
and dense linear algebra. Problem sizes here are a few hundred to a few
thousand variables, solved hundreds of times per run, so an embedded
deterministic solver with contractual tolerances is preferred over an
external dependency.
"""

from __future__ import annotations

import enum
import io
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from .linearize import LinearizedVoltage
from .power import chain_norm_scales
from .scenario import ScenarioConfig, SolverSettings
from .transmitter import (LORENTZIAN_CENTER, LORENTZIAN_RADIUS, DmaState,
                          Waveform)


class SolveStatus(enum.Enum):
    OPTIMAL = "optimal"
    INFEASIBLE = "infeasible"
    ITER_LIMIT = "iter_limit"


@dataclass(frozen=True)
class NormGroup:
    indices: np.ndarray   # variable indices entering the two-norm
    scale: float          # objective weight of the norm


@dataclass(frozen=True)
class QuadGroup:
    indices: np.ndarray   # ||x[idx] - offset||^2 enters the objective
    offset: np.ndarray


@dataclass(frozen=True)
class Disk:
    ix_re: int
    ix_im: int
    center: complex
    radius: float


@dataclass
class ConeProgram:
    """Structured convex program over ``n_vars`` stacked real variables."""

    n_vars: int
    linear_cost: np.ndarray = None
    norm_groups: list[NormGroup] = field(default_factory=list)
    quad_groups: list[QuadGroup] = field(default_factory=list)
    ineq_lhs: np.ndarray = None   # rows C with C x <= d
    ineq_rhs: np.ndarray = None
    disks: list[Disk] = field(default_factory=list)
    eq_lhs: np.ndarray = None
    eq_rhs: np.ndarray = None

    def __post_init__(self):
        if self.linear_cost is None:
            self.linear_cost = np.zeros(self.n_vars)
        if self.ineq_lhs is None:
            self.ineq_lhs = np.zeros((0, self.n_vars))
            self.ineq_rhs = np.zeros(0)
        if self.eq_lhs is None:
            self.eq_lhs = np.zeros((0, self.n_vars))
            self.eq_rhs = np.zeros(0)
        self.validate()

    def validate(self):
        n = self.n_vars
        if len(self.linear_cost) != n:
            raise ValueError("linear cost length mismatch")
        for g in self.norm_groups:
            if g.scale < 0:
                raise ValueError("norm group scale must be >= 0")
            if np.any(g.indices < 0) or np.any(g.indices >= n):
                raise ValueError("norm group index out of range")
        for g in self.quad_groups:
            if np.any(g.indices < 0) or np.any(g.indices >= n):
                raise ValueError("quad group index out of range")
            if len(g.offset) != len(g.indices):
                raise ValueError("quad group offset length mismatch")
        for dsk in self.disks:
            if not (0 <= dsk.ix_re < n and 0 <= dsk.ix_im < n):
                raise ValueError("disk index out of range")
            if dsk.radius <= 0:
                raise ValueError("disk radius must be positive")
        if self.ineq_lhs.shape != (len(self.ineq_rhs), n):
            raise ValueError("inequality block shape mismatch")
        if self.eq_lhs.shape != (len(self.eq_rhs), n):
            raise ValueError("equality block shape mismatch")

    # -- direct evaluation against the original structure -------------------
    def objective_value(self, x: np.ndarray) -> float:
        val = float(self.linear_cost @ x)
        for g in self.norm_groups:
            val += g.scale * float(np.linalg.norm(x[g.indices]))
        for g in self.quad_groups:
            val += float(np.sum((x[g.indices] - g.offset) ** 2))
        return val

    def constraint_violations(self, x: np.ndarray) -> dict:
        out = {}
        if len(self.ineq_rhs):
            out["ineq"] = float(np.max(self.ineq_lhs @ x - self.ineq_rhs, initial=0.0))
        if self.disks:
            worst = 0.0
            for dsk in self.disks:
                dist = np.hypot(x[dsk.ix_re] - dsk.center.real,
                                x[dsk.ix_im] - dsk.center.imag)
                worst = max(worst, dist - dsk.radius)
            out["disk"] = worst
        if len(self.eq_rhs):
            out["eq"] = float(np.max(np.abs(self.eq_lhs @ x - self.eq_rhs), initial=0.0))
        return out

    def max_violation(self, x: np.ndarray) -> float:
        return max(self.constraint_violations(x).values(), default=0.0)

    def dumps(self) -> str:
        """Plain-text rendering of the program for external cross-checking."""
        buf = io.StringIO()
        buf.write(f"vars {self.n_vars}\n")
        nz = np.nonzero(self.linear_cost)[0]
        buf.write("min-linear " + " ".join(f"{i}:{self.linear_cost[i]:.17g}" for i in nz) + "\n")
        for g in self.norm_groups:
            idx = " ".join(map(str, g.indices))
            buf.write(f"min-norm scale={g.scale:.17g} idx=[{idx}]\n")
        for g in self.quad_groups:
            idx = " ".join(map(str, g.indices))
            off = " ".join(f"{v:.17g}" for v in g.offset)
            buf.write(f"min-quad idx=[{idx}] offset=[{off}]\n")
        for row, rhs in zip(self.ineq_lhs, self.ineq_rhs):
            nz = np.nonzero(row)[0]
            terms = " ".join(f"{row[i]:.17g}*x{i}" for i in nz)
            buf.write(f"ineq {terms} <= {rhs:.17g}\n")
        for dsk in self.disks:
            buf.write(f"disk re=x{dsk.ix_re} im=x{dsk.ix_im} "
                      f"center={dsk.center.real:.17g}{dsk.center.imag:+.17g}j "
                      f"radius={dsk.radius:.17g}\n")
        for row, rhs in zip(self.eq_lhs, self.eq_rhs):
            nz = np.nonzero(row)[0]
            terms = " ".join(f"{row[i]:.17g}*x{i}" for i in nz)
            buf.write(f"eq {terms} == {rhs:.17g}\n")
        return buf.getvalue()

    def dump(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(self.dumps())


@dataclass(frozen=True)
class ConeSolution:
    x: np.ndarray
    objective: float
    kkt_residual: float
    duality_gap: float
    status: SolveStatus
    iterations: int
    violation_report: str = ""


# ---------------------------------------------------------------------------
# subproblem assembly
# ---------------------------------------------------------------------------

def complex_index_pairs(n_complex: int, offset: int = 0) -> np.ndarray:
    """Interleaved (re, im) index layout for a stacked complex vector."""
    return offset + np.arange(2 * n_complex).reshape(n_complex, 2)


def stack_complex(values: np.ndarray) -> np.ndarray:
    v = np.asarray(values, dtype=complex).reshape(-1)
    out = np.empty(2 * len(v))
    out[0::2] = v.real
    out[1::2] = v.imag
    return out


def unstack_complex(x: np.ndarray) -> np.ndarray:
    return x[0::2] + 1j * x[1::2]


def _gradient_row(coeffs: np.ndarray, n_vars: int) -> np.ndarray:
    """Row of the real-linear action ``2*Re{c^H w}`` over stacked variables."""
    c = np.asarray(coeffs, dtype=complex).reshape(-1)
    row = np.zeros(n_vars)
    row[0:2 * len(c):2] = 2.0 * c.real
    row[1:2 * len(c):2] = 2.0 * c.imag
    return row


def assemble_w_subproblem(scenario: ScenarioConfig, dma: DmaState | None,
                          linearizations: list[LinearizedVoltage],
                          w0: Waveform) -> ConeProgram:
    """Minimum-consumption restriction at the expansion point ``w0``.

    Variables are the stacked real/imaginary parts of the per-chain tone
    weights (DMA replication is eliminated by working in the reduced chain
    variables). The objective is the per-chain sum of norms plus the squared
    norm (input power); each receiver contributes one affine row: the
    linearized output voltage must reach ``sqrt(R_L * Pbar_m)``. Targets carry
    a 1e-7 relative margin so solver-tolerance slack can never leave the
    exact non-linear constraint violated.
    """
    dev = scenario.device
    n_rf, n_f = w0.omega.shape
    nw = 2 * n_rf * n_f
    n_vars = nw
    scales = chain_norm_scales(dma, n_rf, dev.hpa_gain,
                               dev.hpa_saturation_power, dev.hpa_max_efficiency)
    groups = [NormGroup(np.arange(2 * i * n_f, 2 * (i + 1) * n_f), float(scales[i]))
              for i in range(n_rf)]
    quad = [QuadGroup(np.arange(nw), np.zeros(nw))]
    targets = scenario.voltage_targets() * (1.0 + 1e-7)
    w0_flat = stack_complex(w0.omega)
    rows = np.zeros((len(linearizations), n_vars))
    rhs = np.zeros(len(linearizations))
    for m, lin in enumerate(linearizations):
        if lin.coeffs.size != n_rf * n_f:
            raise ValueError("linearization size does not match the waveform")
        c_mat = np.asarray(lin.coeffs).reshape(n_f, n_rf).T  # chain-major layout
        grow = _gradient_row(c_mat, n_vars)
        # target <= base + grad.(w - w0)   ->   -grad.w <= base - grad.w0 - target
        rows[m] = -grow
        rhs[m] = lin.base_value - grow @ w0_flat - targets[m]
    return ConeProgram(n_vars=n_vars, norm_groups=groups, quad_groups=quad,
                       ineq_lhs=rows, ineq_rhs=rhs)


def assemble_q_subproblem(scenario: ScenarioConfig, waveform: Waveform,
                          linearizations: list[LinearizedVoltage],
                          q0: np.ndarray) -> ConeProgram:
    """Max-min-voltage restriction over the element weights at ``q0``.

    Maximizes the worst-case linearized output voltage subject to each weight
    staying inside its Lorentzian disk.
    """
    nq = len(np.asarray(q0).reshape(-1))
    n_vars = 2 * nq + 1
    r_ix = 2 * nq
    cost = np.zeros(n_vars)
    cost[r_ix] = -1.0  # maximize R
    q0_flat = stack_complex(q0)
    rows = np.zeros((len(linearizations), n_vars))
    rhs = np.zeros(len(linearizations))
    for m, lin in enumerate(linearizations):
        if lin.coeffs.size != nq:
            raise ValueError("linearization size does not match q")
        grow = _gradient_row(lin.coeffs, n_vars)
        # R <= base + grad.(q - q0)   ->   R - grad.q <= base - grad.q0
        rows[m] = -grow
        rows[m, r_ix] = 1.0
        rhs[m] = lin.base_value - grow[:2 * nq] @ q0_flat
    disks = [Disk(2 * k, 2 * k + 1, LORENTZIAN_CENTER, LORENTZIAN_RADIUS)
             for k in range(nq)]
    return ConeProgram(n_vars=n_vars, linear_cost=cost, ineq_lhs=rows,
                       ineq_rhs=rhs, disks=disks)


# ---------------------------------------------------------------------------
# standard-form lowering
# ---------------------------------------------------------------------------

def _lower(prog: ConeProgram):
    """Lower the structure to ``min c.x; E x = f; A x + s = b, s in K``.

    Epigraph variables are appended after the originals: one per norm group
    (``||x_g|| <= t``) and one per quad group (``||x_g - o||^2 <= t`` via the
    rotated-cone identity ``||(2(x-o), t-1)|| <= t+1``).
    """
    n0 = prog.n_vars
    n = n0 + len(prog.norm_groups) + len(prog.quad_groups)
    c = np.zeros(n)
    c[:n0] = prog.linear_cost
    rows, rhs, soc_dims = [], [], []
    m_lin = len(prog.ineq_rhs)
    if m_lin:
        pad = np.zeros((m_lin, n - n0))
        rows.append(np.hstack([prog.ineq_lhs, pad]))
        rhs.append(prog.ineq_rhs)
    next_aux = n0
    for g in prog.norm_groups:
        t = next_aux; next_aux += 1
        c[t] = g.scale
        dim = 1 + len(g.indices)
        blk = np.zeros((dim, n)); vec = np.zeros(dim)
        blk[0, t] = -1.0
        for j, ix in enumerate(g.indices):
            blk[1 + j, ix] = -1.0
        rows.append(blk); rhs.append(vec); soc_dims.append(dim)
    for g in prog.quad_groups:
        t = next_aux; next_aux += 1
        c[t] = 1.0
        dim = 2 + len(g.indices)
        blk = np.zeros((dim, n)); vec = np.zeros(dim)
        blk[0, t] = -1.0; vec[0] = 1.0      # s0 = t + 1
        blk[1, t] = -1.0; vec[1] = -1.0     # s1 = t - 1
        for j, ix in enumerate(g.indices):
            blk[2 + j, ix] = -2.0
            vec[2 + j] = -2.0 * g.offset[j]  # s = 2(x - o)
        rows.append(blk); rhs.append(vec); soc_dims.append(dim)
    for dsk in prog.disks:
        blk = np.zeros((3, n)); vec = np.zeros(3)
        vec[0] = dsk.radius
        blk[1, dsk.ix_re] = -1.0; vec[1] = -dsk.center.real
        blk[2, dsk.ix_im] = -1.0; vec[2] = -dsk.center.imag
        rows.append(blk); rhs.append(vec); soc_dims.append(3)
    a_mat = np.vstack(rows) if rows else np.zeros((0, n))
    b_vec = np.concatenate(rhs) if rhs else np.zeros(0)
    e_mat = np.hstack([prog.eq_lhs, np.zeros((len(prog.eq_rhs), n - n0))])
    return c, a_mat, b_vec, _ConeLayout(m_lin, soc_dims), e_mat, prog.eq_rhs, n0


# ---------------------------------------------------------------------------
# cone arithmetic
# ---------------------------------------------------------------------------

class _ConeLayout:
    """Orthant rows followed by second-order cone blocks.

    SOC blocks of equal dimension are grouped so every Jordan-algebra
    operation runs batched over [n_blocks, dim] arrays instead of looping.
    """

    def __init__(self, n_nonneg: int, soc_dims: list[int]):
        self.p = n_nonneg
        self.soc = list(soc_dims)
        self.m = n_nonneg + sum(soc_dims)
        self.degree = n_nonneg + len(soc_dims)
        offsets = np.cumsum([n_nonneg] + soc_dims[:-1]) if soc_dims else []
        groups: dict[int, list[int]] = {}
        for off, d in zip(offsets, soc_dims):
            groups.setdefault(d, []).append(int(off))
        # dim -> row index array [n_blocks, dim]
        self.groups = {d: np.array(offs)[:, None] + np.arange(d)[None, :]
                       for d, offs in groups.items()}
        self.head_rows = np.concatenate([rows[:, 0] for rows in self.groups.values()]) \
            if self.groups else np.array([], dtype=int)

    def identity(self) -> np.ndarray:
        e = np.zeros(self.m)
        e[:self.p] = 1.0
        e[self.head_rows] = 1.0
        return e

    def interior(self, u: np.ndarray) -> bool:
        if self.p and np.min(u[:self.p]) <= 0.0:
            return False
        for rows in self.groups.values():
            blk = u[rows]
            if np.any(blk[:, 0] <= np.linalg.norm(blk[:, 1:], axis=1)):
                return False
        return True

    def max_step(self, u: np.ndarray, du: np.ndarray) -> float:
        """Largest step keeping ``u + alpha*du`` inside the closed cone."""
        alpha = np.inf
        if self.p:
            neg = du[:self.p] < 0
            if np.any(neg):
                alpha = min(alpha, float(np.min(-u[:self.p][neg] / du[:self.p][neg])))
        for rows in self.groups.values():
            ub, db = u[rows], du[rows]
            a = db[:, 0] ** 2 - np.sum(db[:, 1:] ** 2, axis=1)
            b = 2.0 * (ub[:, 0] * db[:, 0] - np.sum(ub[:, 1:] * db[:, 1:], axis=1))
            cc = ub[:, 0] ** 2 - np.sum(ub[:, 1:] ** 2, axis=1)
            # smallest positive root of a t^2 + b t + c = 0 per block (c > 0)
            disc = b * b - 4.0 * a * cc
            with np.errstate(divide="ignore", invalid="ignore"):
                sq = np.sqrt(np.maximum(disc, 0.0))
                qq = -0.5 * (b + np.where(b >= 0, sq, -sq))
                t1 = np.where(a != 0, qq / np.where(a != 0, a, 1.0), np.inf)
                t2 = np.where(qq != 0, cc / np.where(qq != 0, qq, 1.0), np.inf)
                lin = np.where(b < 0, -cc / np.where(b < 0, b, -1.0), np.inf)
            cand = np.full(len(a), np.inf)
            for t in (t1, t2):
                valid = (disc >= 0) & (np.abs(a) >= 1e-300) & (t > 0)
                cand = np.where(valid & (t < cand), t, cand)
            small_a = np.abs(a) < 1e-300
            cand = np.where(small_a & (lin > 0) & (lin < cand), lin, cand)
            if len(cand):
                alpha = min(alpha, float(np.min(cand)))
        return alpha

    def prod(self, u: np.ndarray, v: np.ndarray) -> np.ndarray:
        w = np.empty(self.m)
        w[:self.p] = u[:self.p] * v[:self.p]
        for rows in self.groups.values():
            ub, vb = u[rows], v[rows]
            w[rows[:, 0]] = np.sum(ub * vb, axis=1)
            w[rows[:, 1:]] = ub[:, :1] * vb[:, 1:] + vb[:, :1] * ub[:, 1:]
        return w

    def solve_prod(self, lam: np.ndarray, v: np.ndarray) -> np.ndarray:
        """x with ``lam o x = v`` (Jordan product inverse)."""
        x = np.empty(self.m)
        x[:self.p] = v[:self.p] / lam[:self.p]
        for rows in self.groups.values():
            lb, vb = lam[rows], v[rows]
            det = lb[:, 0] ** 2 - np.sum(lb[:, 1:] ** 2, axis=1)
            x0 = (lb[:, 0] * vb[:, 0] - np.sum(lb[:, 1:] * vb[:, 1:], axis=1)) / det
            x[rows[:, 0]] = x0
            x[rows[:, 1:]] = (vb[:, 1:] - x0[:, None] * lb[:, 1:]) / lb[:, :1]
        return x


class _NTScaling:
    """Nesterov-Todd scaling point W with ``W z = W^{-1} s``."""

    def __init__(self, cones: _ConeLayout, s: np.ndarray, z: np.ndarray):
        self.cones = cones
        p = cones.p
        self.diag = np.sqrt(s[:p] / z[:p])
        self.eta: dict[int, np.ndarray] = {}
        self.wbar: dict[int, np.ndarray] = {}
        for d, rows in cones.groups.items():
            sb, zb = s[rows], z[rows]
            rs = np.sqrt(sb[:, 0] ** 2 - np.sum(sb[:, 1:] ** 2, axis=1))
            rz = np.sqrt(zb[:, 0] ** 2 - np.sum(zb[:, 1:] ** 2, axis=1))
            sn, zn = sb / rs[:, None], zb / rz[:, None]
            gamma = np.sqrt((1.0 + np.sum(sn * zn, axis=1)) / 2.0)
            wb = np.empty_like(sn)
            wb[:, 0] = sn[:, 0] + zn[:, 0]
            wb[:, 1:] = sn[:, 1:] - zn[:, 1:]
            wb /= (2.0 * gamma)[:, None]
            self.eta[d] = np.sqrt(rs / rz)
            self.wbar[d] = wb

    def apply(self, x: np.ndarray, inv: bool = False) -> np.ndarray:
        """W x (or W^{-1} x); accepts a vector or a matrix of columns."""
        c = self.cones
        y = np.array(x, dtype=float, copy=True)
        vec = y.ndim == 1
        if vec:
            y = y[:, None]
        y[:c.p] *= (1.0 / self.diag if inv else self.diag)[:, None]
        sgn = -1.0 if inv else 1.0
        for d, rows in c.groups.items():
            wb = self.wbar[d]
            eta = self.eta[d]
            blk = y[rows]                      # [B, d, ncols]
            x0, x1 = blk[:, 0], blk[:, 1:]     # [B, ncols], [B, d-1, ncols]
            w0, w1 = wb[:, 0], wb[:, 1:]
            dot = np.einsum("bi,bic->bc", w1, x1)
            y0 = w0[:, None] * x0 + sgn * dot
            y1 = (sgn * w1[:, :, None] * x0[:, None, :] + x1
                  + w1[:, :, None] * (dot / (1.0 + w0)[:, None])[:, None, :])
            fac = 1.0 / eta if inv else eta
            y[rows[:, 0]] = fac[:, None] * y0
            y[rows[:, 1:]] = fac[:, None, None] * y1
        return y[:, 0] if vec else y


# ---------------------------------------------------------------------------
# homogeneous self-dual predictor-corrector
# ---------------------------------------------------------------------------

def _solve_standard(c, a_mat, b_vec, cones: _ConeLayout, e_mat, f_vec,
                    tol: float, max_iter: int):
    n = len(c)
    meq = e_mat.shape[0]
    x = np.zeros(n); y = np.zeros(meq)
    s = cones.identity(); z = cones.identity()
    tau, kappa = 1.0, 1.0
    e = cones.identity()
    nu = cones.degree + 1.0
    bnorm = 1.0 + np.linalg.norm(np.concatenate([f_vec, b_vec]))
    cnorm = 1.0 + np.linalg.norm(c)
    best = None

    def scaled_metrics():
        xh, yh, zh, sh = x / tau, y / tau, z / tau, s / tau
        pres = np.linalg.norm(np.concatenate([e_mat @ xh - f_vec,
                                              a_mat @ xh + sh - b_vec])) / bnorm
        dres = np.linalg.norm(e_mat.T @ yh + a_mat.T @ zh + c) / cnorm
        pobj = c @ xh
        dobj = -f_vec @ yh - b_vec @ zh
        gap = abs(pobj - dobj)
        relgap = gap / (1.0 + abs(pobj))
        return xh, pobj, gap, pres, dres, relgap

    it = 0
    while it < max_iter:
        r1 = e_mat.T @ y + a_mat.T @ z + c * tau
        r2 = -e_mat @ x + f_vec * tau
        r3 = -a_mat @ x + b_vec * tau - s
        r4 = -c @ x - f_vec @ y - b_vec @ z - kappa
        mu = (s @ z + tau * kappa) / nu

        xh, pobj, gap, pres, dres, relgap = scaled_metrics()
        merit = max(pres, dres, relgap)
        if best is None or merit < best[0]:
            best = (merit, xh, pobj, gap, max(pres, dres), it)
        if merit <= tol:
            break
        # certificates: tau -> 0 with a strictly improving ray
        ct = -(b_vec @ z + f_vec @ y)
        if ct > 0 and tau <= 1e-9 * max(1.0, kappa):
            if np.linalg.norm(e_mat.T @ y + a_mat.T @ z) / ct <= 1e-6:
                return None, "infeasible", it
        if c @ x < 0 and tau <= 1e-9 * max(1.0, kappa):
            ray = np.linalg.norm(np.concatenate([e_mat @ x, a_mat @ x + s]))
            if ray / (-(c @ x)) <= 1e-6:
                return None, "unbounded", it
        if not (cones.interior(s) and cones.interior(z)):
            break

        W = _NTScaling(cones, s, z)
        lam = W.apply(z)
        wia = W.apply(a_mat, inv=True)
        kdim = n + meq
        kkt = np.zeros((kdim, kdim))
        h_blk = wia.T @ wia
        reg = 1e-13 * (1.0 + np.trace(h_blk) / n)
        kkt[:n, :n] = h_blk + reg * np.eye(n)
        if meq:
            kkt[:n, n:] = e_mat.T
            kkt[n:, :n] = e_mat
            kkt[n:, n:] = -1e-13 * np.eye(meq)
        try:
            lu = sla.lu_factor(kkt)
        except (ValueError, np.linalg.LinAlgError):
            break

        def kkt_apply(dx, dy, dz):
            return (e_mat.T @ dy + a_mat.T @ dz,
                    e_mat @ dx,
                    a_mat @ dx - W.apply(W.apply(dz)))

        def kkt_solve(rx, ry, rz):
            # [0 E^T A^T; E 0 0; A 0 -W^2] with iterative refinement
            dx = np.zeros(n); dy = np.zeros(meq); dz = np.zeros(cones.m)
            scale = 1.0 + np.linalg.norm(np.concatenate([rx, ry, rz]))
            for _ in range(3):
                a1, a2, a3 = kkt_apply(dx, dy, dz)
                q1, q2, q3 = rx - a1, ry - a2, rz - a3
                if np.linalg.norm(np.concatenate([q1, q2, q3])) <= 1e-14 * scale:
                    break
                rhs = np.concatenate([q1 + wia.T @ W.apply(q3, inv=True), q2])
                sol = sla.lu_solve(lu, rhs)
                ex, ey = sol[:n], sol[n:]
                ez = W.apply(W.apply(a_mat @ ex - q3, inv=True), inv=True)
                dx = dx + ex; dy = dy + ey; dz = dz + ez
            return dx, dy, dz

        def direction(eta_r, vc, dtk_rhs):
            dx0, dy0, dz0 = kkt_solve(-eta_r * r1, eta_r * r2, eta_r * r3 - W.apply(vc))
            dx1, dy1, dz1 = kkt_solve(-c, f_vec, b_vec)
            num = -eta_r * r4 + c @ dx0 + f_vec @ dy0 + b_vec @ dz0 + dtk_rhs / tau
            den = kappa / tau - (c @ dx1 + f_vec @ dy1 + b_vec @ dz1)
            if den == 0.0 or not np.isfinite(den):
                raise FloatingPointError("singular tau step")
            dtau = num / den
            dx = dx0 + dtau * dx1; dy = dy0 + dtau * dy1; dz = dz0 + dtau * dz1
            ds = W.apply(vc) - W.apply(W.apply(dz))
            dkappa = (dtk_rhs - kappa * dtau) / tau
            return dx, dy, dz, ds, dtau, dkappa

        def boundary_step(ds, dz, dtau, dkappa):
            a = min(cones.max_step(s, ds), cones.max_step(z, dz))
            if dtau < 0:
                a = min(a, -tau / dtau)
            if dkappa < 0:
                a = min(a, -kappa / dkappa)
            return a

        try:
            with np.errstate(over="raise", divide="raise", invalid="raise"):
                vc_aff = cones.solve_prod(lam, -cones.prod(lam, lam))
                aff = direction(1.0, vc_aff, -tau * kappa)
                dsa, dza, dta, dka = aff[3], aff[2], aff[4], aff[5]
                astep = min(1.0, boundary_step(dsa, dza, dta, dka))
                mu_aff = ((s + astep * dsa) @ (z + astep * dza)
                          + (tau + astep * dta) * (kappa + astep * dka)) / nu
                sigma = np.clip(mu_aff / mu, 0.0, 1.0) ** 3
                corr = cones.prod(W.apply(dsa, inv=True), W.apply(dza))
                vc = cones.solve_prod(lam, sigma * mu * e - cones.prod(lam, lam) - corr)
                corr_t = sigma * mu - tau * kappa - dta * dka
                dx, dy, dz, ds, dtau, dkappa = direction(1.0 - sigma, vc, corr_t)
                step = min(1.0, 0.99 * boundary_step(ds, dz, dtau, dkappa))
        except FloatingPointError:
            break
        if not np.isfinite(step) or step <= 1e-11:
            break
        x = x + step * dx; y = y + step * dy
        z = z + step * dz; s = s + step * ds
        tau += step * dtau; kappa += step * dkappa
        it += 1

    if best is None:
        return None, "iterlimit", it
    merit, xh, pobj, gap, kkt_res, bit = best
    return (xh, pobj, gap, kkt_res, merit), ("optimal" if merit <= tol else "iterlimit"), it


def solve(prog: ConeProgram, settings: SolverSettings | None = None,
          tol: float | None = None, max_iter: int = 200) -> ConeSolution:
    """Solve a structured cone program to the configured KKT tolerance.

    An ``OPTIMAL`` status certifies primal and dual residuals and the duality
    gap at or below the tolerance; ``INFEASIBLE`` carries a separating
    certificate found by the homogeneous embedding.
    """
    if settings is not None and tol is None:
        tol = settings.cone_solver_kkt_tol
    if tol is None:
        tol = 1e-9
    c, a_mat, b_vec, cones, e_mat, f_vec, n0 = _lower(prog)
    result, status, iters = _solve_standard(c, a_mat, b_vec, cones, e_mat,
                                            f_vec, tol, max_iter)
    if status == "infeasible":
        return ConeSolution(x=np.full(prog.n_vars, np.nan), objective=np.nan,
                            kkt_residual=np.inf, duality_gap=np.inf,
                            status=SolveStatus.INFEASIBLE, iterations=iters,
                            violation_report="no point satisfies the affine/cone rows")
    if status == "unbounded":
        raise FloatingPointError("cone program is unbounded below")
    xh, pobj, gap, kkt_res, merit = result
    x = xh[:n0]
    status_enum = SolveStatus.OPTIMAL if status == "optimal" else SolveStatus.ITER_LIMIT
    report = ""
    if status_enum is not SolveStatus.OPTIMAL:
        report = f"stalled at KKT merit {merit:.3e} (tol {tol:.1e})"
    return ConeSolution(x=x, objective=prog.objective_value(x),
                        kkt_residual=float(merit), duality_gap=float(gap),
                        status=status_enum, iterations=iters,
                        violation_report=report)
