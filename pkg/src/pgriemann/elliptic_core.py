"""Cut-off regularized elliptic operator: coefficients, assembly, solve.

Inside the sonic circle the self-similar pressure equation degenerates where
p approaches r^2 = xi^2 + eta^2.  The solver works with the regularized,
Picard-linearized operator in polar coordinates

    L[omega] p = (zeta(omega - r^2) + eps) p_rr
               + ((omega + eps)/r^2) p_thth
               + ((omega + eps)/r) p_r
               + (r^2 omega_r / omega) p_r
               - 2 r p_r

where omega is the frozen field of the previous Picard sweep and zeta is a
C^1 cut-off: zeta(s) = s for s >= 0, -eps/2 for s <= -eps, joined by the
quadratic s + s^2/(2 eps) on (-eps, 0).  Then zeta(s) + eps >= eps/2 > 0 and
0 <= zeta' <= 1, so L is uniformly elliptic for every frozen omega > 0.

Discretization lives on the body-fitted grid of geometry_grid: with
r = s R_b(theta) the polar derivatives transform as

    p_r    = P_s / R
    p_rr   = P_ss / R^2
    p_thth = P_tt - 2 (s R'/R) P_st + (s R'/R)^2 P_ss
             - s (R''/R - 2 (R'/R)^2) P_s

(P derivatives in the mapped (s, theta) rectangle).  The radial fraction s
is itself a smooth stretching s = G(sigma) of a uniform computational
coordinate (geometry_grid.radial_stretch), so every s-derivative carries a
further chain-rule factor: P_s = P_sigma / G', P_ss = P_sigmasigma / G'^2
- P_sigma G'' / G'^3.  Interior nodes use the centered 9-point
second-order stencil in (sigma, theta); the pole is a single unknown
closed with an unequal-arm cardinal Laplacian (exact for radial
quadratics); outer boundary rows are Dirichlet or the oblique shock
condition whose coefficients arrive prepackaged from shock_front.  Every
assembled row is scaled by its maximum absolute entry, so residual
tolerances are relative to a row-equilibrated system.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.sparse import coo_matrix, csr_matrix
from scipy.sparse.linalg import LinearOperator, bicgstab, spilu, splu

from .geometry_grid import (
    COL_P2,
    COL_SHOCK,
    COL_SONIC,
    DomainGrid,
    PressureField,
)
from .shock_front import ShockBC


class CoefficientError(ValueError):
    """Operator coefficients lost ellipticity or positivity."""


class LinearSolveError(RuntimeError):
    """The sparse linear solve did not reach the requested residual."""


# ---------------------------------------------------------------------------
# cut-off
# ---------------------------------------------------------------------------


def zeta(s, eps: float):
    """C^1 cut-off: identity for s >= 0, floor -eps/2 for s <= -eps."""
    if not eps > 0.0:
        raise ValueError(f"eps must be positive, got {eps!r}")
    s = np.asarray(s, dtype=float)
    blend = s + s * s / (2.0 * eps)
    out = np.where(s >= 0.0, s, np.where(s <= -eps, -0.5 * eps, blend))
    return out if out.shape else float(out)


def zeta_prime(s, eps: float):
    """Derivative of the cut-off; lies in [0, 1]."""
    if not eps > 0.0:
        raise ValueError(f"eps must be positive, got {eps!r}")
    s = np.asarray(s, dtype=float)
    out = np.where(s >= 0.0, 1.0, np.where(s <= -eps, 0.0, 1.0 + s / eps))
    return out if out.shape else float(out)


# ---------------------------------------------------------------------------
# operator specification
# ---------------------------------------------------------------------------


@dataclass
class OperatorSpec:
    """Everything assemble_linear needs beyond the grid itself.

    dirichlet_values, when given, overrides every outer boundary row with an
    identity row (used by the manufactured-solution tests); otherwise sonic
    columns are pinned to sonic_value, the bottom column to p2_value, and
    shock columns carry the oblique condition from shock_bc (except plateau
    columns, pinned to shock_bc.dirichlet_value).
    rhs is a full (ns+1, ncol) array; interior rows read rhs[i, j] and the
    pole row reads rhs[0, 0].
    """

    epsilon: float
    cutoff_eps: float
    omega: PressureField
    shock_bc: Optional[ShockBC] = None
    sonic_value: Optional[float] = None
    p2_value: Optional[float] = None
    dirichlet_values: Optional[np.ndarray] = None
    rhs: Optional[np.ndarray] = None


@dataclass
class LinearSystem:
    """Row-equilibrated sparse system plus the grid for reassembling fields."""

    matrix: csr_matrix
    rhs: np.ndarray
    grid: DomainGrid
    row_scale: np.ndarray
    meta: dict = field(default_factory=dict)


# ---------------------------------------------------------------------------
# coefficients
# ---------------------------------------------------------------------------


def radial_derivative(grid: DomainGrid, values: np.ndarray) -> np.ndarray:
    """d(values)/dr at every node: centered in sigma inside, one-sided at ends."""
    ds = grid.ds
    dv = np.empty_like(values)
    dv[1:-1, :] = (values[2:, :] - values[:-2, :]) / (2.0 * ds)
    dv[0, :] = (values[1, :] - values[0, :]) / ds
    dv[-1, :] = (3.0 * values[-1, :] - 4.0 * values[-2, :]
                 + values[-3, :]) / (2.0 * ds)
    return dv / (grid.gp[:, None] * grid.rb[None, :])


def operator_coefficients(grid: DomainGrid, omega: np.ndarray, epsilon: float,
                          cutoff_eps: float, omega_r: np.ndarray = None):
    """Node arrays (A, B, C) of the operator A p_rr + B p_thth + C p_r.

    The pole row (r = 0) is returned as NaN in B and C; callers never use
    interior coefficients there (the pole has its own closure).
    """
    r = grid.radii()
    if np.any(omega <= 0.0):
        raise CoefficientError("frozen field omega must be positive")
    if omega_r is None:
        omega_r = radial_derivative(grid, omega)
    a_coef = zeta(omega - r * r, cutoff_eps) + epsilon
    with np.errstate(divide="ignore", invalid="ignore"):
        b_coef = (omega + epsilon) / (r * r)
        c_coef = (omega + epsilon) / r + r * r * omega_r / omega - 2.0 * r
    b_coef[0, :] = np.nan
    c_coef[0, :] = np.nan
    if np.any(a_coef <= 0.0):
        raise CoefficientError("regularized radial coefficient lost positivity")
    return a_coef, b_coef, c_coef


def mapped_second_derivatives(grid: DomainGrid, values: np.ndarray):
    """(P_s, P_ss, P_tt, P_st) on interior rows 1..ns-1, mapped rectangle.

    Returns full-shape arrays with NaN outside the interior rows.  Column
    neighbors honor the grid's reflection or periodic maps.
    """
    ds, dth = grid.ds, grid.dtheta
    jm, jp = grid.neighbor_columns()
    shape = values.shape
    p_s = np.full(shape, np.nan)
    p_ss = np.full(shape, np.nan)
    p_tt = np.full(shape, np.nan)
    p_st = np.full(shape, np.nan)
    c = values[1:-1, :]
    up = values[2:, :]
    dn = values[:-2, :]
    p_sig = (up - dn) / (2.0 * ds)
    p_sigsig = (up - 2.0 * c + dn) / (ds * ds)
    p_sigth = (
        values[2:, jp] - values[2:, jm] - values[:-2, jp] + values[:-2, jm]
    ) / (4.0 * ds * dth)
    gp = grid.gp[1:-1, None]
    gpp = grid.gpp[1:-1, None]
    p_s[1:-1, :] = p_sig / gp
    p_ss[1:-1, :] = p_sigsig / (gp * gp) - p_sig * gpp / (gp * gp * gp)
    p_st[1:-1, :] = p_sigth / gp
    p_tt[1:-1, :] = (values[1:-1, jp] - 2.0 * c + values[1:-1, jm]) / (dth * dth)
    return p_s, p_ss, p_tt, p_st


def mapped_stencil_coefficients(grid: DomainGrid, a_coef, b_coef, c_coef):
    """Coefficients of (P_??, P_tt, P_?t, P_?) in the computational frame.

    First the s-frame coefficients of (P_ss, P_tt, P_st, P_s) from the
    body-fitted map r = s R_b(theta), then the chain rule through the
    radial stretching s = G(sigma), so the returned arrays multiply plain
    centered differences in the uniform (sigma, theta) rectangle.
    """
    s = grid.s[:, None]
    rb = grid.rb[None, :]
    rbp = grid.rbp[None, :]
    rbpp = grid.rbpp[None, :]
    q = s * rbp / rb
    c_ss = a_coef / (rb * rb) + b_coef * q * q
    c_tt = b_coef
    c_st = -2.0 * b_coef * q
    c_s = c_coef / rb - b_coef * s * (rbpp / rb - 2.0 * (rbp / rb) ** 2)
    gp = grid.gp[:, None]
    gpp = grid.gpp[:, None]
    c_sigsig = c_ss / (gp * gp)
    c_sigth = c_st / gp
    c_sig = c_s / gp - c_ss * gpp / (gp * gp * gp)
    return c_sigsig, c_tt, c_sigth, c_sig


# ---------------------------------------------------------------------------
# assembly
# ---------------------------------------------------------------------------


def assemble_linear(grid: DomainGrid, spec: OperatorSpec) -> LinearSystem:
    """Assemble the row-equilibrated sparse system for one Picard sweep."""
    omega = spec.omega.values
    ns, ncol = grid.ns, grid.ncol
    ds, dth = grid.ds, grid.dtheta
    jm, jp = grid.neighbor_columns()

    a_coef, b_coef, c_coef = operator_coefficients(
        grid, omega, spec.epsilon, spec.cutoff_eps
    )
    c_ss, c_tt, c_st, c_s = mapped_stencil_coefficients(
        grid, a_coef, b_coef, c_coef
    )

    rhs_full = spec.rhs if spec.rhs is not None else np.zeros((ns + 1, ncol))
    n = grid.n_unknowns
    b = np.zeros(n)

    rows, cols, vals = [], [], []

    def add(r_idx, c_idx, v):
        rows.append(np.asarray(r_idx).ravel())
        cols.append(np.asarray(c_idx).ravel())
        vals.append(np.asarray(v).ravel())

    # ---- interior rows i = 1..ns-1 (vectorized) ---------------------------
    ii, jj = np.meshgrid(np.arange(1, ns), np.arange(ncol), indexing="ij")
    ridx = grid.flat_index(ii, jj)
    css = c_ss[1:-1, :]
    ctt = c_tt[1:-1, :]
    cst = c_st[1:-1, :]
    cs = c_s[1:-1, :]

    w_ctr = -2.0 * css / ds ** 2 - 2.0 * ctt / dth ** 2
    w_up = css / ds ** 2 + cs / (2.0 * ds)
    w_dn = css / ds ** 2 - cs / (2.0 * ds)
    w_sd = ctt / dth ** 2
    w_x = cst / (4.0 * ds * dth)

    jp_ij = np.broadcast_to(jp[None, :], ii.shape)
    jm_ij = np.broadcast_to(jm[None, :], ii.shape)
    add(ridx, ridx, w_ctr)
    add(ridx, grid.flat_index(ii + 1, jj), w_up)
    add(ridx, grid.flat_index(ii - 1, jj), w_dn)
    add(ridx, grid.flat_index(ii, jp_ij), w_sd)
    add(ridx, grid.flat_index(ii, jm_ij), w_sd)
    add(ridx, grid.flat_index(ii + 1, jp_ij), w_x)
    add(ridx, grid.flat_index(ii + 1, jm_ij), -w_x)
    add(ridx, grid.flat_index(ii - 1, jp_ij), -w_x)
    add(ridx, grid.flat_index(ii - 1, jm_ij), w_x)
    b[np.asarray(ridx).ravel()] = rhs_full[1:-1, :].ravel()

    # ---- corner kink correction ------------------------------------------
    # The mapped unknown P(s, theta) = p(s rb(theta), theta) has a slope
    # kink in theta wherever rb does: at the span corners [d_theta P] =
    # s [rb'] p_r.  A centered second difference across the kink leaves
    # an O([d_theta P]/dtheta) excess that does not shrink under
    # refinement and digs a spurious pressure pocket along the corner
    # columns.  Remove the crossing arm's excess, reading p_r off the
    # row's own radial stencil (linear in the unknown, so it assembles
    # like any other frozen-coefficient term).
    if (grid.shock is not None and np.any(grid.col_role == COL_SHOCK)
            and np.any(grid.col_role == COL_SONIC)):
        sc = grid.shock
        two_pi = 2.0 * math.pi
        # (corner angle, jump of rb' = shock-side slope minus sonic 0)
        kinks = ((sc.thetas[0], float(sc.rprime[0])),
                 (sc.thetas[-1], -float(sc.rprime[-1])))
        s_mid = grid.s[1:-1]
        span_c = grid.s[2:] - grid.s[:-2]
        i_rows = np.arange(1, ns)
        for theta_c, jump in kinks:
            if jump == 0.0:
                continue
            dpos = np.mod(grid.thetas - theta_c + math.pi, two_pi) - math.pi
            # For a ramp of slope `jump` starting at theta_c, the centered
            # second difference at a column whose stencil crosses the kink
            # gains +jump * ell / dth^2, where ell = dth - (distance from
            # that column to the kink); the excess has the same sign on
            # both sides of the kink and for either ramp direction.
            cors = []                       # (column, arm overshoot ell)
            j_on = np.where(np.abs(dpos) < 1e-9)[0]
            if j_on.size:
                jc = int(j_on[0])
                near_shock = (
                    (jc + 1 < ncol and grid.col_role[jc + 1] != COL_SONIC)
                    or (jc - 1 >= 0 and grid.col_role[jc - 1] != COL_SONIC)
                )
                if grid.col_role[jc] == COL_SONIC and near_shock:
                    cors.append((jc, dth))
            else:
                left = np.where((dpos < 0.0) & (dpos > -2.0 * dth))[0]
                right = np.where((dpos > 0.0) & (dpos < 2.0 * dth))[0]
                if left.size and right.size:
                    jl = int(left[np.argmax(dpos[left])])
                    jr = int(right[np.argmin(dpos[right])])
                    if jr == jl + 1:
                        cors.append((jl, float(dpos[jr])))
                        cors.append((jr, float(-dpos[jl])))
            for j0, ell in cors:
                coef = (-ell / dth ** 2) * c_tt[1:-1, j0] \
                    * s_mid * jump / (span_c * grid.rb[j0])
                ridx_c = grid.flat_index(i_rows, j0)
                add(ridx_c, grid.flat_index(i_rows + 1, j0), coef)
                add(ridx_c, grid.flat_index(i_rows - 1, j0), -coef)

    # ---- pole row ---------------------------------------------------------
    omega0 = omega[0, 0]
    pole_coef = omega0 + spec.epsilon
    arms = _pole_arms(grid)
    w_pole_ctr = 0.0
    for (col_a, col_b, h_a, h_b) in arms:
        denom = h_a * h_b * (h_a + h_b)
        add(0, grid.flat_index(1, col_a), pole_coef * 2.0 * h_b / denom)
        add(0, grid.flat_index(1, col_b), pole_coef * 2.0 * h_a / denom)
        w_pole_ctr -= pole_coef * 2.0 * (h_a + h_b) / denom
    add(0, 0, w_pole_ctr)
    b[0] = rhs_full[0, 0]

    # ---- boundary rows i = ns --------------------------------------------
    i_b = ns
    for j in range(ncol):
        r_idx = int(grid.flat_index(i_b, j))
        if spec.dirichlet_values is not None:
            add(r_idx, r_idx, 1.0)
            b[r_idx] = spec.dirichlet_values[j]
            continue
        role = grid.col_role[j]
        if role == COL_SONIC:
            if spec.sonic_value is None:
                raise CoefficientError("sonic boundary value missing")
            add(r_idx, r_idx, 1.0)
            b[r_idx] = spec.sonic_value
        elif role == COL_P2:
            if spec.p2_value is None:
                raise CoefficientError("bottom-point boundary value missing")
            add(r_idx, r_idx, 1.0)
            b[r_idx] = spec.p2_value
        else:
            bc = spec.shock_bc
            if bc is None:
                raise CoefficientError("shock boundary coefficients missing")
            k = bc.col_to_entry(j)
            if bc.dirichlet_mask[k]:
                add(r_idx, r_idx, 1.0)
                b[r_idx] = bc.dirichlet_value[k]
                continue
            mu_j = bc.mu[k]
            beta2_j = bc.beta2[k]
            # Row encodes mu * p_r + beta2 * (trace derivative), scaled to
            # keep the diagonal positive.  The transversal weight is
            # floored at |beta2|: where the curve update clamped a node
            # the slope (hence mu) vanishes identically, and an unfloored
            # row would tie the trace to the bottom-point value alone,
            # validating any flat stretch at its critical radius.  The
            # floor is O(step) in the underlying coefficient and only
            # engages when |mu| falls below that scale.
            h_wall = (grid.s[-1] - grid.s[-2]) * grid.rb[j]
            a_r = max(abs(mu_j) / h_wall, abs(beta2_j))
            add(r_idx, r_idx, a_r)
            add(r_idx, grid.flat_index(i_b - 1, j), -a_r)
            # One-sided tangential difference: pull from the corner side
            # where beta2 > 0 and from the bottom-point side where
            # beta2 < 0, matching the direction the boundary relation
            # transports information (a centered difference splits the
            # boundary trace into decoupled parities and lets a
            # column-to-column zigzag grow through the curve update).
            t_w = abs(beta2_j) / dth
            if t_w > 0.0:
                toward_p2 = grid.thetas[j] < 1.5 * math.pi
                if beta2_j > 0.0:
                    nb = jm[j] if toward_p2 else jp[j]
                else:
                    nb = jp[j] if toward_p2 else jm[j]
                add(r_idx, r_idx, t_w)
                add(r_idx, grid.flat_index(i_b, nb), -t_w)
            b[r_idx] = 0.0

    rows = np.concatenate(rows)
    cols = np.concatenate(cols)
    vals = np.concatenate(vals)
    mat = coo_matrix((vals, (rows, cols)), shape=(n, n)).tocsr()
    mat.sum_duplicates()

    # Row equilibration: scale each row by its maximum absolute entry.
    row_counts = np.diff(mat.indptr)
    if np.any(row_counts == 0):
        raise CoefficientError("assembly produced an empty matrix row")
    row_max = np.maximum.reduceat(np.abs(mat.data), mat.indptr[:-1])
    row_scale = 1.0 / row_max
    mat = csr_matrix(
        (mat.data * np.repeat(row_scale, row_counts), mat.indices, mat.indptr),
        shape=mat.shape,
    )
    b = b * row_scale

    return LinearSystem(matrix=mat, rhs=b, grid=grid, row_scale=row_scale,
                        meta={"epsilon": spec.epsilon})


def _pole_arms(grid: DomainGrid):
    """Cardinal arm pairs [(col_a, col_b, h_a, h_b)] for the pole closure.

    Two pairs: the horizontal axis (theta = 0 / pi) and the vertical axis
    (theta = pi/2 / 3*pi/2).  In half mode the missing theta = 0 column is
    replaced by its reflection (theta = pi).  Arm lengths are the physical
    radii of the first ring, which the radial stretching leaves near the
    uniform value (the clustering lives at the outer boundary).
    """

    def col_at(angle):
        d = np.abs(np.mod(grid.thetas - angle + math.pi, 2 * math.pi) - math.pi)
        j = int(np.argmin(d))
        if d[j] > 1e-9:
            return None
        return j

    j_e, j_n = col_at(0.0), col_at(0.5 * math.pi)
    j_w, j_s = col_at(math.pi), col_at(1.5 * math.pi)
    if j_n is None or j_s is None or j_w is None:
        raise CoefficientError("pole closure needs columns at pi/2, pi, 3*pi/2")
    if j_e is None:
        j_e = j_w  # half mode: even reflection across the eta axis
    h = lambda j: grid.s[1] * grid.rb[j]
    return [
        (j_e, j_w, h(j_e), h(j_w)),
        (j_n, j_s, h(j_n), h(j_s)),
    ]


# ---------------------------------------------------------------------------
# nonlinear residual
# ---------------------------------------------------------------------------


def nonlinear_residual(grid: DomainGrid, p_field: PressureField, epsilon: float,
                       cutoff_eps: float = None, rhs: np.ndarray = None):
    """Residual of the regularized quasilinear equation at interior nodes.

    Returns a full-shape array, zero outside interior rows.  Uses the same
    finite differences as the assembled operator so that a Picard fixed
    point (omega = p) has matching linear and nonlinear residuals.
    """
    if cutoff_eps is None:
        cutoff_eps = epsilon
    values = p_field.values
    if np.any(values <= 0.0):
        raise CoefficientError("pressure must stay positive")
    r = grid.radii()
    p_s, p_ss, p_tt, p_st = mapped_second_derivatives(grid, values)
    rb = grid.rb[None, :]
    rbp = grid.rbp[None, :]
    rbpp = grid.rbpp[None, :]
    s = grid.s[:, None]
    q = s * rbp / rb
    p_r = p_s / rb
    p_rr = p_ss / (rb * rb)
    p_tt_lab = (p_tt - 2.0 * q * p_st + q * q * p_ss
                - s * (rbpp / rb - 2.0 * (rbp / rb) ** 2) * p_s)
    with np.errstate(divide="ignore", invalid="ignore"):
        res = (
            (zeta(values - r * r, cutoff_eps) + epsilon) * p_rr
            + (values + epsilon) / (r * r) * p_tt_lab
            + (values + epsilon) / r * p_r
            + (r * p_r) ** 2 / values
            - 2.0 * r * p_r
        )
    if rhs is not None:
        res = res - rhs
    out = np.zeros_like(values)
    out[1:-1, :] = res[1:-1, :]
    return out


# ---------------------------------------------------------------------------
# linear solve
# ---------------------------------------------------------------------------


def make_preconditioner(system: LinearSystem) -> LinearOperator:
    """Incomplete-LU preconditioner for the assembled matrix."""
    ilu = spilu(system.matrix.tocsc(), drop_tol=1e-6, fill_factor=30.0)
    return LinearOperator(system.matrix.shape, ilu.solve)


def solve_linear(system: LinearSystem, tol: float = 1e-11,
                 max_iter: int = 600, x0: np.ndarray = None,
                 info: dict = None,
                 precond: LinearOperator = None) -> PressureField:
    """Solve the assembled system to a relative residual of tol.

    Primary path: ILU-preconditioned BiCGStab started from x0; a caller may
    pass a previously built (possibly stale) preconditioner to skip the
    factorization.  Whenever the iteration stalls or the factorization
    fails, falls back to a fresh factorization and finally to a sparse
    direct LU solve.  The achieved residual (2-norm, relative to |rhs|) is
    checked after either path; failure raises LinearSolveError.
    """
    mat = system.matrix
    b = system.rhs
    bnorm = float(np.linalg.norm(b))
    scale = bnorm if bnorm > 0.0 else 1.0
    used = "bicgstab+ilu"
    x = None

    def _try_krylov(op):
        x_try, code = bicgstab(
            mat, b, x0=x0, rtol=tol, atol=0.0, maxiter=max_iter, M=op
        )
        if code != 0:
            return None
        resid = float(np.linalg.norm(mat @ x_try - b)) / scale
        return x_try if resid <= tol else None

    fresh = precond is None
    if precond is None:
        try:
            precond = make_preconditioner(system)
        except RuntimeError:
            precond = None
    if precond is not None:
        x = _try_krylov(precond)
        if x is None and not fresh:
            # Stale preconditioner could not pull the iteration in; refactor.
            try:
                precond = make_preconditioner(system)
                fresh = True
                x = _try_krylov(precond)
            except RuntimeError:
                precond = None
    if x is not None:
        resid = float(np.linalg.norm(mat @ x - b)) / scale
    else:
        used = "splu"
        precond = None
        lu = splu(mat.tocsc())
        x = lu.solve(b)
        resid = float(np.linalg.norm(mat @ x - b)) / scale
        if resid > max(tol, 1e-10):
            raise LinearSolveError(
                f"direct solve residual {resid:.3e} above tolerance {tol:.3e}"
            )
    if info is not None:
        info["residual"] = resid
        info["method"] = used
        info["precond"] = precond
        info["precond_fresh"] = fresh
    return PressureField.from_flat(system.grid, x)
