"""Curved shock: ODE right-hand side, oblique condition, update map.

Across the curved shock the outer pressure is p2, so the jump conditions
reduce, for a shock r = r(theta) with trace pressure p(theta) on the inner
side and pbar = (p + p2)/2, to the slope law

    dr/dtheta = +- r sqrt( (r^2 - pbar) / pbar )

(plus sign on the right branch theta in [3*pi/2, theta1], minus on the left
branch [theta3, 3*pi/2]; the radicand is clamped to zero where r^2 <= pbar,
the curve then rides its stationary level) and, after eliminating the
velocity jumps, a directional derivative condition on the pressure:

    beta1 p_r + beta2 (1/r) p_theta = 0   on the shock,

    beta1 = 2 r' ( (r^2 - pbar)/r^2 - [p]/(4 pbar)
                   + pbar (r^2 - p)/(r^2 p) )
    beta2 = 4 (r^2 - pbar)/r^2 - [p]/(2 pbar),         [p] = p - p2.

The combination mu = beta1 - r' beta2 = -2 r' (1 - pbar/p) multiplies the
radial derivative when the condition is rewritten along the boundary curve:
with the boundary trace T(theta) = p(r(theta), theta) one has
T' = p_r r' + p_theta, hence

    mu p_r + beta2 T'(theta) = 0.

This is the form discretized on the boundary row (one-sided first order in
r, centered in theta).  Where r' = 0 (the symmetric bottom point and any
frozen plateau) mu vanishes and the condition degenerates; those columns
are pinned to the one-point value p_hat = 2 r^2 - p2 instead, which is the
pressure making the local shock stationary (r^2 = pbar).

`map_J` advances the free boundary one outer step: integrate the slope law
through the current pressure trace from both corners toward the bottom
(fourth-order Runge-Kutta, one step per grid interval), then re-symmetrize.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np
from scipy.interpolate import PchipInterpolator

from .geometry_grid import (
    COL_P2,
    COL_SHOCK,
    DomainGrid,
    PressureField,
    ShockCurve,
    shock_node_angles,
)
from .riemann_setup import TWO_PI, WaveFan


class BoundaryConditionError(ValueError):
    """Shock boundary data is unusable (wrong sign of the jump, etc.)."""


class Branch(Enum):
    RIGHT = "right"   # theta in [3*pi/2, theta1]: dr/dtheta >= 0
    LEFT = "left"     # theta in [theta3, 3*pi/2]: dr/dtheta <= 0


# ---------------------------------------------------------------------------
# pointwise relations
# ---------------------------------------------------------------------------


def shock_rhs_g(p_on_shock, r, branch: Branch, p2: float):
    """Slope dr/dtheta of the shock; radicand clamped at zero."""
    p = np.asarray(p_on_shock, dtype=float)
    r = np.asarray(r, dtype=float)
    pbar = 0.5 * (p + p2)
    if np.any(pbar <= 0.0):
        raise BoundaryConditionError("mean pressure on the shock must be positive")
    rad = np.maximum(r * r - pbar, 0.0)
    g = r * np.sqrt(rad / pbar)
    if branch == Branch.LEFT:
        g = -g
    return g if g.shape else float(g)


def oblique_coeffs(p, r, rprime, p2: float):
    """(beta1, beta2, mu) of the oblique derivative condition."""
    p = np.asarray(p, dtype=float)
    r = np.asarray(r, dtype=float)
    rprime = np.asarray(rprime, dtype=float)
    if np.any(p <= 0.0) or np.any(r <= 0.0):
        raise BoundaryConditionError("shock trace needs p > 0 and r > 0")
    jump = p - p2
    pbar = 0.5 * (p + p2)
    r2 = r * r
    beta1 = 2.0 * rprime * (
        (r2 - pbar) / r2 - jump / (4.0 * pbar) + pbar * (r2 - p) / (r2 * p)
    )
    beta2 = 4.0 * (r2 - pbar) / r2 - jump / (2.0 * pbar)
    mu = beta1 - rprime * beta2
    if beta1.shape:
        return beta1, beta2, mu
    return float(beta1), float(beta2), float(mu)


def p_hat_at_P2(r_at_P2: float, p2: float) -> float:
    """One-point value at the bottom: the pressure with r^2 = pbar there."""
    p_hat = 2.0 * r_at_P2 * r_at_P2 - p2
    if p_hat <= p2:
        raise BoundaryConditionError(
            f"bottom radius {r_at_P2!r} at or below the low sonic circle: "
            f"one-point value {p_hat!r} <= p2"
        )
    return p_hat


# ---------------------------------------------------------------------------
# packaged boundary coefficients
# ---------------------------------------------------------------------------


@dataclass
class ShockBC:
    """Oblique-condition coefficients for the grid's shock columns."""

    cols: np.ndarray             # grid column indices, ascending
    theta: np.ndarray
    r: np.ndarray
    rprime: np.ndarray
    pbar: np.ndarray
    jump: np.ndarray
    beta1: np.ndarray
    beta2: np.ndarray
    mu: np.ndarray
    dirichlet_mask: np.ndarray   # plateau columns pinned to a value
    dirichlet_value: np.ndarray

    def col_to_entry(self, j: int) -> int:
        k = int(np.searchsorted(self.cols, j))
        if k >= self.cols.size or self.cols[k] != j:
            raise KeyError(f"column {j} carries no shock condition")
        return k


def build_shock_bc(grid: DomainGrid, trace: np.ndarray) -> ShockBC:
    """Coefficients from the frozen boundary trace on the current grid.

    trace is the full boundary row of the frozen field (length ncol); only
    the shock-role columns are read.  Flat columns (rprime = 0) keep their
    oblique row: it degenerates to a pure tangential relation, which still
    transports the trace along the curve.  Pinning such columns to the
    degenerate value 2 r^2 - p2 instead would freeze the curve wherever it
    flattens, at whatever radius it happened to hold (the pinned trace makes
    the update's radicand vanish identically), so only the bottom point
    carries a Dirichlet value and that pin lives with the grid roles, not
    here.
    """
    p2 = grid.fan.p2
    cols = np.nonzero(grid.col_role == COL_SHOCK)[0]
    theta = grid.thetas[cols]
    r = grid.rb[cols]
    rprime = grid.rbp[cols]
    p = np.asarray(trace, dtype=float)[cols]
    if np.any(p <= p2):
        raise BoundaryConditionError(
            "frozen trace at or below p2 on a shock column"
        )
    beta1, beta2, mu = oblique_coeffs(p, r, rprime, p2)
    no_pin = np.zeros(cols.shape, dtype=bool)
    return ShockBC(
        cols=cols,
        theta=theta,
        r=r,
        rprime=rprime,
        pbar=0.5 * (p + p2),
        jump=p - p2,
        beta1=beta1,
        beta2=beta2,
        mu=mu,
        dirichlet_mask=no_pin,
        dirichlet_value=2.0 * r * r - p2,
    )


# ---------------------------------------------------------------------------
# pressure trace along the shock
# ---------------------------------------------------------------------------


def trace_interpolator(p_field: PressureField, fan: WaveFan):
    """Monotone-cubic interpolant of the boundary pressure over the span.

    Sample points are the shock-role columns of the field's grid (mirrored
    to the right half when the grid covers only the left half), pinned to
    p1 at both corners where the shock meets the sonic circle.
    """
    grid = p_field.grid
    trace = p_field.values[-1, :]
    on_shock = (grid.col_role == COL_SHOCK) | (grid.col_role == COL_P2)
    cols = np.nonzero(on_shock)[0]
    th = grid.thetas[cols]
    vals = trace[cols]
    lo = fan.theta3
    hi = fan.theta1
    if grid.mode == "half":
        mid = 1.5 * math.pi
        keep = th <= mid + 1e-12
        th, vals = th[keep], vals[keep]
        mirror = 3.0 * math.pi - th
        sel = mirror > mid + 1e-9
        th = np.concatenate([th, mirror[sel]])
        vals = np.concatenate([vals, vals[sel]])
    else:
        th = np.where(th < lo - 1e-12, th + TWO_PI, th)
    order = np.argsort(th)
    th, vals = th[order], vals[order]
    inside = (th > lo + 1e-12) & (th < hi - 1e-12)
    th = np.concatenate([[lo], th[inside], [hi]])
    vals = np.concatenate([[fan.p1], vals[inside], [fan.p1]])
    return PchipInterpolator(th, vals)


# ---------------------------------------------------------------------------
# the update map
# ---------------------------------------------------------------------------


def map_J(shock: ShockCurve, p_field: PressureField, fan: WaveFan,
          substeps: int = 0, report: dict = None,
          trace_fn=None) -> ShockCurve:
    """One free-boundary update: integrate the slope law through the trace.

    Starts on the sonic circle at each corner and marches node to node
    toward the bottom with classical RK4.  substeps sets the number of
    RK4 steps per node interval; 0 picks enough substeps for about 4096
    steps per branch.  Node spacing alone is far too coarse here: the
    descent approaches its landing radius tangentially (the slope law
    degenerates as the radicand closes), and an under-resolved march
    overshoots into the clamped region mid-curve, which then reads back
    as a flat stretch of the updated curve.  When the field covers only
    the left half plane, only the left branch is integrated and the
    right branch is its mirror; otherwise both branches are integrated
    and the output is re-symmetrized, recording the branch mismatch at
    3*pi/2.

    When a dict is passed as `report`, it receives the landing
    diagnostics of the descent: "landing_lead" is the angular distance
    by which the march reaches its stationary radius (radicand zero)
    ahead of the bottom angle.  Positive lead means the descent goes
    stationary early and is carried to the bottom along the critical
    level of the trace; negative lead means it is still falling at the
    bottom angle, measured by continuing the march past it (the trace
    interpolant covers both halves) until the radicand closes, and is
    capped at half the branch span.  A lead of zero characterizes the
    curve whose descent lands exactly at the bottom.

    trace_fn, when given, replaces the field's own boundary-trace
    interpolant (the outer loop passes an under-relaxed trace: the slope
    law switches branches abruptly where the descent goes stationary, and
    updating the curve through the raw trace lets that switch flip the
    landing from one iteration to the next instead of settling).
    """
    tr = trace_fn if trace_fn is not None else trace_interpolator(p_field, fan)
    p2 = fan.p2
    nodes = shock.thetas
    mid = 1.5 * math.pi
    i_mid = int(np.argmin(np.abs(nodes - mid)))
    if abs(nodes[i_mid] - mid) > 1e-9:
        raise BoundaryConditionError("curve node set must contain 3*pi/2")

    def integrate(branch: Branch):
        if branch == Branch.LEFT:
            path = nodes[: i_mid + 1]
        else:
            path = nodes[i_mid:][::-1]
        nseg = path.size - 1
        sub = substeps if substeps > 0 else max(1, -(-4096 // max(nseg, 1)))
        # Trace values at every RK4 stage angle, evaluated in one call:
        # each segment contributes 2*sub half-steps; the closing angle of
        # a segment coincides with the opening angle of the next.
        stages = [
            path[m] + 0.5 * ((path[m + 1] - path[m]) / sub) * np.arange(2 * sub)
            for m in range(nseg)
        ]
        stages.append(path[-1:])
        p_stage = np.asarray(tr(np.concatenate(stages)), dtype=float)
        sign = -1.0 if branch == Branch.LEFT else 1.0

        def g(p, rr):
            pbar = 0.5 * (p + p2)
            rad = rr * rr - pbar
            if rad <= 0.0:
                return 0.0
            return sign * rr * math.sqrt(rad / pbar)

        touch = None
        rad_prev = None
        th_prev = None
        r_path = np.empty(path.size)
        r_path[0] = fan.r1
        r_cur = fan.r1
        for m in range(nseg):
            h = (path[m + 1] - path[m]) / sub
            for k in range(sub):
                base = (m * sub + k) * 2
                p_a = p_stage[base]
                p_m = p_stage[base + 1]
                p_b = p_stage[base + 2]
                if touch is None:
                    th_a = path[m] + k * h
                    rad_a = r_cur * r_cur - 0.5 * (p_a + p2)
                    if rad_a <= 0.0:
                        # Locate the radicand's zero crossing inside the
                        # previous substep; the landing is tangential, so
                        # step-boundary sampling alone quantizes the lead.
                        if rad_prev is not None and rad_prev > rad_a:
                            frac = rad_prev / (rad_prev - rad_a)
                            touch = th_prev + frac * (th_a - th_prev)
                        else:
                            touch = th_a
                    else:
                        rad_prev, th_prev = rad_a, th_a
                k1 = g(p_a, r_cur)
                k2 = g(p_m, r_cur + 0.5 * h * k1)
                k3 = g(p_m, r_cur + 0.5 * h * k2)
                k4 = g(p_b, r_cur + h * k3)
                r_cur += (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
            if r_cur > fan.r1 + 1e-9:
                raise BoundaryConditionError(
                    f"updated shock radius {r_cur!r} exceeds r1 at "
                    f"theta={path[m + 1]!r}"
                )
            r_cur = min(r_cur, fan.r1)
            r_cur = max(r_cur, fan.r2)
            r_path[m + 1] = r_cur
        if touch is not None:
            lead = abs(mid - touch)
        else:
            # Still falling at the bottom angle: march on through the
            # mirrored half until the radicand closes.
            h = sign * abs((path[-1] - path[0]) / (nseg * sub))
            s_max = 0.5 * abs(path[-1] - path[0])
            s = 0.0
            r_ext = r_cur
            lead = -s_max
            while s < s_max:
                th = mid + sign * s
                p_a = float(tr(th))
                rad_a = r_ext * r_ext - 0.5 * (p_a + p2)
                if rad_a <= 0.0:
                    if rad_prev is not None and rad_prev > rad_a:
                        frac = rad_prev / (rad_prev - rad_a)
                        lead = -(s - abs(h) * (1.0 - frac))
                    else:
                        lead = -s
                    break
                rad_prev = rad_a
                p_m = float(tr(th + 0.5 * h))
                p_b = float(tr(th + h))
                k1 = g(p_a, r_ext)
                k2 = g(p_m, r_ext + 0.5 * h * k1)
                k3 = g(p_m, r_ext + 0.5 * h * k2)
                k4 = g(p_b, r_ext + h * k3)
                r_ext += (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
                r_ext = max(r_ext, fan.r2)
                s += abs(h)
        return path, r_path, lead

    r_new = np.empty(nodes.size)
    if p_field.grid.mode == "half":
        _, r_left, lead = integrate(Branch.LEFT)
        r_new[: i_mid + 1] = r_left
        # Mirror across theta = 3*pi/2 (node set is symmetric).
        r_new[i_mid:] = r_left[::-1]
        mismatch = 0.0
    else:
        _, r_left, lead_l = integrate(Branch.LEFT)
        _, r_right, lead_r = integrate(Branch.RIGHT)
        mismatch = abs(r_left[-1] - r_right[-1])
        lead = 0.5 * (lead_l + lead_r)
        r_new[: i_mid + 1] = r_left
        r_new[i_mid:] = r_right[::-1]
        r_new[i_mid] = 0.5 * (r_left[-1] + r_right[-1])
        r_new = 0.5 * (r_new + r_new[::-1])

    if report is not None:
        report["landing_lead"] = float(lead)
        report["bottom_radius"] = float(r_new[i_mid])

    return finalize_curve(fan, nodes, r_new, tr(nodes),
                          branch_mismatch=mismatch)


def _rk4_step(tr, r, th, h, branch, p2):
    def f(theta, radius):
        return shock_rhs_g(float(tr(theta)), radius, branch, p2)

    k1 = f(th, r)
    k2 = f(th + 0.5 * h, r + 0.5 * h * k1)
    k3 = f(th + 0.5 * h, r + 0.5 * h * k2)
    k4 = f(th + h, r + h * k3)
    return r + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def finalize_curve(fan: WaveFan, nodes, r, p_at_nodes,
                   branch_mismatch: float = 0.0) -> ShockCurve:
    """Package node radii into a ShockCurve with ODE-consistent slopes."""
    nodes = np.asarray(nodes, dtype=float)
    r = np.asarray(r, dtype=float)
    p = np.asarray(p_at_nodes, dtype=float)
    mid = 1.5 * math.pi
    pbar = 0.5 * (p + fan.p2)
    frozen = (r * r <= pbar) | (r <= fan.r2 + 1e-14)
    mag = np.asarray(shock_rhs_g(p, r, Branch.RIGHT, fan.p2))
    sign = np.where(nodes > mid, 1.0, -1.0)
    sign[np.abs(nodes - mid) <= 1e-12] = 0.0
    rprime = sign * mag
    return ShockCurve(nodes, r, rprime, fan.r1, fan.r2,
                      frozen_mask=frozen, branch_mismatch=branch_mismatch)


# ---------------------------------------------------------------------------
# initial curve
# ---------------------------------------------------------------------------


def initial_shock(fan: WaveFan, ntheta: int, sag: float = 0.1) -> ShockCurve:
    """Frozen-pressure starting curve: spliced straight shocks, sagged inward.

    With the trace frozen at p1 the slope law integrates in closed form from
    each corner: the curve follows the straight far-field shock line down to
    the line's tangency point with the circle r = sqrt(pbar0), then rides
    the plateau r = sqrt(pbar0).  That spliced curve, however, is a locked
    starting point: on the plateau the slope law's radicand is exactly zero,
    so the curve update would never move it.  A smooth inward sag of depth
    sag*(sqrt(pbar0) - r2), shaped as cos^2 over the span so that corner
    values and corner slopes are untouched and monotonicity is preserved,
    starts the curve strictly inside the degenerate radius everywhere except
    the two corners.  With sag = 0 (and alpha1 = 0) the curve is exactly the
    horizontal line eta = -sqrt(pbar0), the critical datum's shock.
    """
    a1 = fan.config.alpha1
    rmid = math.sqrt(fan.pbar0)
    nodes = shock_node_angles(fan, ntheta)
    # Tangency angles of the two lines (unwrapped into the span).
    th_tr = a1 - 0.5 * math.pi + TWO_PI       # right line, e.g. 315 degrees
    th_tl = 3.0 * math.pi - th_tr             # left line, e.g. 225 degrees

    r = np.full(nodes.shape, rmid)
    rprime = np.zeros(nodes.shape)
    left = nodes <= th_tl
    right = nodes >= th_tr
    with np.errstate(divide="ignore"):
        r[left] = -rmid / np.sin(nodes[left] + a1)
        rprime[left] = rmid * np.cos(nodes[left] + a1) / np.sin(nodes[left] + a1) ** 2
        r[right] = rmid / np.sin(a1 - nodes[right])
        rprime[right] = rmid * np.cos(a1 - nodes[right]) / np.sin(a1 - nodes[right]) ** 2

    depth = sag * (rmid - fan.r2)
    if depth > 0.0:
        half_span = fan.theta1 - 1.5 * math.pi
        tau = (nodes - 1.5 * math.pi) / half_span
        r = r - depth * np.cos(0.5 * math.pi * tau) ** 2
        rprime = rprime + depth * 0.5 * math.pi * np.sin(math.pi * tau) / half_span

    r = np.clip(r, fan.r2, fan.r1)
    frozen = r * r <= fan.pbar0
    return ShockCurve(nodes, r, rprime, fan.r1, fan.r2, frozen_mask=frozen)
