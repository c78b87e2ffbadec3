"""Velocity recovery and composite point sampling.

The transport velocities follow from the pressure by radial integration:
in similarity polar coordinates du/dr = p_xi / r and dv/dr = p_eta / r
along each grid ray.  Integration starts on the outer boundary, where the
velocity is known:

* on the sonic arc the flow is still state 1;
* on the curved shock the inner velocity follows from the outer sector
  state and the jump relations, which invert to

      (u, v)_in = (u, v)_out - (p - p2) * G(theta),
      G = ( cos t + (r'/r) sin t,  sin t - (r'/r) cos t ) / r,

  where p is the inner pressure trace and r' the shock slope; the outer
  sector is 2, 3 or 4 by the vortex-ray rule (ties toward lower angle).

A disk s < s_min around the origin is excluded: the integrand p_xi / r is
not integrable at the pole in general, and the velocity there is marked
undefined.

`ExportView` is the canonical full-circle array form of a computed
solution: the half-plane solve is materialized by mirror symmetry
(p even, v even, u odd about u1, sectors 2 and 4 swapped).  All consumers
(point sampling, the verification checks, the CSV artifacts) read this one
view, so a solution reloaded from its artifacts reproduces results bit for
bit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field as dc_field
from typing import NamedTuple, Optional

import numpy as np
from scipy.interpolate import PchipInterpolator

from .geometry_grid import (
    COL_P2,
    COL_SHOCK,
    COL_SONIC,
    DomainGrid,
    PressureField,
    ShockCurve,
    sample_pressure_arrays,
)
from .riemann_setup import TWO_PI, WaveFan, wrap_angle

S_MIN_DEFAULT = 1e-2


@dataclass
class VelocityField:
    """Node velocities on the solve grid; NaN inside the exclusion disk."""

    grid: DomainGrid
    u: np.ndarray
    v: np.ndarray
    sector: np.ndarray       # per-column outer sector (1 on sonic columns)
    s_min: float


def shock_inner_velocity(fan: WaveFan, theta, r, rprime, p_trace):
    """Inner-side velocity on the shock from the outer state and the jumps."""
    theta = np.asarray(theta, dtype=float)
    r = np.asarray(r, dtype=float)
    rprime = np.asarray(rprime, dtype=float)
    p_trace = np.asarray(p_trace, dtype=float)
    sector = np.atleast_1d(fan.outer_sector_on_shock(theta))
    u_out = np.array([fan.state(s).u for s in sector])
    v_out = np.array([fan.state(s).v for s in sector])
    rho = rprime / r
    g_u = (np.cos(theta) + rho * np.sin(theta)) / r
    g_v = (np.sin(theta) - rho * np.cos(theta)) / r
    du = (p_trace - fan.p2)
    return u_out - du * g_u, v_out - du * g_v, sector


def pressure_gradient(grid: DomainGrid, values: np.ndarray):
    """(p_r, p_theta) at the nodes; second order, NaN on the pole row."""
    ds, dth = grid.ds, grid.dtheta
    jm, jp = grid.neighbor_columns()
    rb = grid.rb[None, :]
    p_s = np.empty_like(values)
    p_s[1:-1, :] = (values[2:, :] - values[:-2, :]) / (2.0 * ds)
    p_s[-1, :] = (3.0 * values[-1, :] - 4.0 * values[-2, :]
                  + values[-3, :]) / (2.0 * ds)
    p_s[0, :] = np.nan
    p_s /= grid.gp[:, None]
    p_r = p_s / rb
    p_t = (values[:, jp] - values[:, jm]) / (2.0 * dth)
    p_t[0, :] = np.nan
    return p_r, p_t


def recover_velocity(p_field: PressureField, fan: WaveFan,
                     shock: ShockCurve, s_min: float = S_MIN_DEFAULT
                     ) -> VelocityField:
    """Integrate the velocity inward from the boundary along grid rays."""
    grid = p_field.grid
    values = p_field.values
    r = grid.radii()
    th = grid.thetas[None, :]

    p_r, p_t = pressure_gradient(grid, values)
    with np.errstate(divide="ignore", invalid="ignore"):
        p_xi = np.cos(th) * p_r - np.sin(th) * p_t / r
        p_eta = np.sin(th) * p_r + np.cos(th) * p_t / r
        f_u = p_xi / r
        f_v = p_eta / r

    # Boundary values.
    on_shock = (grid.col_role == COL_SHOCK) | (grid.col_role == COL_P2)
    sector = np.ones(grid.ncol, dtype=int)
    u_b = np.full(grid.ncol, fan.state(1).u)
    v_b = np.full(grid.ncol, fan.state(1).v)
    if np.any(on_shock):
        cols = np.nonzero(on_shock)[0]
        u_s, v_s, sec = shock_inner_velocity(
            fan, grid.thetas[cols], grid.rb[cols], grid.rbp[cols],
            values[-1, cols],
        )
        u_b[cols] = u_s
        v_b[cols] = v_s
        sector[cols] = sec

    # March inward: u_i = u_{i+1} - trapezoid(f_u, r_i .. r_{i+1}).
    dr = np.diff(grid.s)[:, None] * grid.rb[None, :]
    seg_u = 0.5 * (f_u[:-1, :] + f_u[1:, :]) * dr
    seg_v = 0.5 * (f_v[:-1, :] + f_v[1:, :]) * dr
    u = np.empty_like(values)
    v = np.empty_like(values)
    u[-1, :] = u_b
    v[-1, :] = v_b
    # Suffix sums of the segments give the integral from r_i to the boundary.
    tail_u = np.cumsum(seg_u[::-1, :], axis=0)[::-1, :]
    tail_v = np.cumsum(seg_v[::-1, :], axis=0)[::-1, :]
    u[:-1, :] = u_b[None, :] - tail_u
    v[:-1, :] = v_b[None, :] - tail_v

    mask = grid.s < s_min
    u[mask, :] = np.nan
    v[mask, :] = np.nan
    return VelocityField(grid=grid, u=u, v=v, sector=sector, s_min=s_min)


# ---------------------------------------------------------------------------
# the canonical exported view
# ---------------------------------------------------------------------------


class SampleResult(NamedTuple):
    p: np.ndarray
    u: np.ndarray
    v: np.ndarray
    region: np.ndarray           # "interior" or "far:<sector>"
    velocity_defined: np.ndarray


@dataclass
class ExportView:
    """Full-circle arrays of a computed solution (the artifact layout)."""

    fan: WaveFan
    s: np.ndarray                # (ns+1,)
    thetas: np.ndarray           # (ncolf,) ascending multiples of dtheta
    rb: np.ndarray
    rbp: np.ndarray
    col_role: np.ndarray
    p: np.ndarray                # (ns+1, ncolf)
    u: np.ndarray
    v: np.ndarray
    sector_cols: np.ndarray
    shock_thetas: np.ndarray     # unwrapped span [theta3, theta1 + 2*pi]
    shock_r: np.ndarray
    shock_rprime: np.ndarray
    shock_frozen: np.ndarray
    s_min: float
    eps_final: float
    p_hat: float
    meta: dict = dc_field(default_factory=dict)

    @property
    def shock_interp(self) -> PchipInterpolator:
        if not hasattr(self, "_shock_interp"):
            self._shock_interp = PchipInterpolator(self.shock_thetas, self.shock_r)
        return self._shock_interp

    def boundary_radius(self, theta):
        """R_b at arbitrary wrapped angles (r1 off the shock span)."""
        th = np.atleast_1d(wrap_angle(theta))
        lo, hi = self.shock_thetas[0], self.shock_thetas[-1]
        thu = np.where(th < lo, th + TWO_PI, th)
        in_band = thu <= hi
        out = np.full(th.shape, self.fan.r1)
        if np.any(in_band):
            out[in_band] = self.shock_interp(thu[in_band])
        return out


@dataclass
class CompositeSolution:
    """Everything the run produced, with point evaluation."""

    fan: WaveFan
    shock: ShockCurve
    pressure: PressureField
    velocity: VelocityField
    eps_final: float
    p_hat: float

    def __post_init__(self):
        self._view = None

    @property
    def view(self) -> ExportView:
        if self._view is None:
            self._view = build_export_view(self)
        return self._view

    def sample(self, xi, eta) -> SampleResult:
        return sample_view(self.view, xi, eta)


def build_export_view(sol: CompositeSolution) -> ExportView:
    """Materialize the full circle from the solve grid (mirroring if half)."""
    grid = sol.pressure.grid
    fan = sol.fan
    ntheta = grid.ntheta
    dth = grid.dtheta
    ncolf = ntheta
    thetas_f = dth * np.arange(ncolf)

    def col_of(angle):
        return int(round(wrap_angle(angle) / dth)) % ntheta

    ns = grid.ns
    p_f = np.full((ns + 1, ncolf), np.nan)
    u_f = np.full((ns + 1, ncolf), np.nan)
    v_f = np.full((ns + 1, ncolf), np.nan)
    rb_f = np.full(ncolf, np.nan)
    rbp_f = np.full(ncolf, np.nan)
    role_f = np.full(ncolf, COL_SONIC)
    sec_f = np.ones(ncolf, dtype=int)

    for j in range(grid.ncol):
        jf = col_of(grid.thetas[j])
        p_f[:, jf] = sol.pressure.values[:, j]
        u_f[:, jf] = sol.velocity.u[:, j]
        v_f[:, jf] = sol.velocity.v[:, j]
        rb_f[jf] = grid.rb[j]
        rbp_f[jf] = grid.rbp[j]
        role_f[jf] = grid.col_role[j]
        sec_f[jf] = sol.velocity.sector[j]

    if grid.mode == "half":
        u1 = fan.state(1).u
        for j in range(grid.ncol):
            th_m = 3.0 * math.pi - grid.thetas[j]
            jf = col_of(th_m)
            if not np.isnan(rb_f[jf]):
                continue  # the two axis columns map onto themselves
            p_f[:, jf] = sol.pressure.values[:, j]
            u_f[:, jf] = 2.0 * u1 - sol.velocity.u[:, j]
            v_f[:, jf] = sol.velocity.v[:, j]
            rb_f[jf] = grid.rb[j]
            rbp_f[jf] = -grid.rbp[j]
            role_f[jf] = COL_SHOCK if grid.col_role[j] == COL_SHOCK else grid.col_role[j]
            sec_f[jf] = int(WaveFan.mirror_sector(sol.velocity.sector[j]))

    if np.any(np.isnan(rb_f)):
        raise ValueError("export view has unfilled columns")

    return ExportView(
        fan=fan,
        s=grid.s.copy(),
        thetas=thetas_f,
        rb=rb_f,
        rbp=rbp_f,
        col_role=role_f,
        p=p_f,
        u=u_f,
        v=v_f,
        sector_cols=sec_f,
        shock_thetas=sol.shock.thetas.copy(),
        shock_r=sol.shock.r.copy(),
        shock_rprime=sol.shock.rprime.copy(),
        shock_frozen=sol.shock.frozen_mask.copy(),
        s_min=sol.velocity.s_min,
        eps_final=sol.eps_final,
        p_hat=sol.p_hat,
    )


def sample_view(view: ExportView, xi, eta) -> SampleResult:
    """Evaluate (p, u, v) at arbitrary points of the similarity plane.

    Inside the subsonic region: bilinear interpolation on the mapped grid
    (velocity undefined inside the pole exclusion disk).  Outside: the
    far-field sector state, bit for bit.
    """
    xi_a = np.atleast_1d(np.asarray(xi, dtype=float))
    eta_a = np.atleast_1d(np.asarray(eta, dtype=float))
    scalar = np.isscalar(xi) or (np.ndim(xi) == 0)
    fan = view.fan
    th = wrap_angle(np.arctan2(eta_a, xi_a))
    r = np.hypot(xi_a, eta_a)
    r_b = view.boundary_radius(th)
    inside = r <= r_b * (1.0 + 1e-12) + 1e-12

    p = np.empty(xi_a.shape)
    u = np.empty(xi_a.shape)
    v = np.empty(xi_a.shape)
    region = np.empty(xi_a.shape, dtype=object)
    vel_ok = np.zeros(xi_a.shape, dtype=bool)

    if np.any(inside):
        ti, ri = th[inside], r[inside]
        p[inside] = sample_pressure_arrays(
            view.thetas, view.s, view.rb, view.p, ti, ri, mode="full"
        )
        ui = sample_pressure_arrays(
            view.thetas, view.s, view.rb, view.u, ti, ri, mode="full"
        )
        vi = sample_pressure_arrays(
            view.thetas, view.s, view.rb, view.v, ti, ri, mode="full"
        )
        ok = np.isfinite(ui) & np.isfinite(vi)
        u[inside] = np.where(ok, ui, np.nan)
        v[inside] = np.where(ok, vi, np.nan)
        vel_ok[inside] = ok
        region[inside] = "interior"

    outside = ~inside
    if np.any(outside):
        sec = np.atleast_1d(fan.far_sector(xi_a[outside], eta_a[outside]))
        ps = np.array([fan.state(s).p for s in sec])
        us = np.array([fan.state(s).u for s in sec])
        vs = np.array([fan.state(s).v for s in sec])
        p[outside] = ps
        u[outside] = us
        v[outside] = vs
        vel_ok[outside] = True
        region[outside] = [f"far:{s}" for s in sec]

    if scalar:
        return SampleResult(
            p=float(p[0]), u=float(u[0]), v=float(v[0]),
            region=str(region[0]), velocity_defined=bool(vel_ok[0]),
        )
    return SampleResult(p=p, u=u, v=v, region=region, velocity_defined=vel_ok)


def sample_solution(sol: CompositeSolution, xi, eta) -> SampleResult:
    """Point evaluation of a composite solution (see sample_view)."""
    return sol.sample(xi, eta)
