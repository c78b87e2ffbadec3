"""Sector data, far-field wave pattern, and midfield anchors.

The problem datum consists of four constant states separated, in the
similarity plane (xi, eta) = (x/t, y/t), by two straight shocks and two
vortex sheets:

* state 1 (pressure p1, velocity (u1, v1)) occupies the wedge around the
  positive eta axis between two shock lines tilted by +-alpha1 from the
  vertical; both lines are tangent to the circle r = sqrt(pbar0) with
  pbar0 = (p1 + p2)/2;
* states 2, 3, 4 (all at pressure p2 < p1) fill the left, bottom and right
  sectors; they are separated from each other by two vortex sheets along
  the rays of slope +-1/sin(alpha2) through the origin in the lower half
  plane.

Velocities follow from the jump relations on the straight waves:

    k = (p1 - p2) / sqrt(pbar0)
    (u2, v2) = (u1, v1) - k (sin a1,  cos a1)
    (u4, v4) = (u1, v1) + k (sin a1, -cos a1)
    (u3, v3) = (u1, v1) + k (0, sin a1 / sin a2 - cos a1)

The two shock lines intersect the sonic circle r1 = sqrt(p1) of state 1 at
the corner points P1 (right) and P3 (left); the polar angle of P1 has the
closed form

    theta1 = alpha1 - arctan( sqrt( 2 pbar0 / (p1 - p2) ) )   (mod 2 pi)

and theta3 = 3 pi - theta1 by mirror symmetry about the eta axis.  The
subsonic region sits between the sonic arc theta in (theta1, theta3 + 2 pi)
and a curved shock joining P1 to P3 through the bottom of the disk.

`classify_discontinuity` labels a planar jump as a shock of plus or minus
family, a vortex sheet of plus or minus family, or no wave, from the two
states and an oriented direction along the discontinuity.  Orientation
conventions (load bearing, see the function docstring): the left state is
the one on the side the 90-degree counterclockwise rotation of `direction`
points into, and for shocks `direction` points along the physical straight
branch away from the tangency point with the midfield circle.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum, IntEnum
from typing import NamedTuple

import numpy as np

TWO_PI = 2.0 * math.pi

# Tolerances for classifying jumps; scaled by problem magnitudes inside
# classify_discontinuity.
_JUMP_TOL = 1e-10
_RH_TOL = 1e-9


class ConfigError(ValueError):
    """A problem datum violates the admissibility constraints."""


def wrap_angle(theta):
    """Map angles to the fundamental interval [0, 2*pi)."""
    return np.mod(theta, TWO_PI)


def rotate90(vec):
    """Rotate a 2-vector by +90 degrees (counterclockwise)."""
    return np.array([-vec[1], vec[0]], dtype=float)


# ---------------------------------------------------------------------------
# configuration and states
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RiemannConfig:
    """Four-sector datum: two pressures and the two tilt angles.

    alpha1 is the half-angle of the upper wedge (state 1) measured from the
    vertical; alpha1 = 0 collapses both straight shocks onto the single
    horizontal line eta = -sqrt(pbar0) (the critical datum, solvable in
    closed form and flagged by `is_critical`).  alpha2 fixes the slope
    +-1/sin(alpha2) of the vortex rays.
    """

    p1: float = 2.0
    p2: float = 1.0
    alpha1: float = math.pi / 4.0
    alpha2: float = math.pi / 4.0
    u1: float = 0.0
    v1: float = 0.0

    @property
    def pbar0(self) -> float:
        return 0.5 * (self.p1 + self.p2)

    @property
    def pressure_jump(self) -> float:
        return self.p1 - self.p2

    @property
    def is_critical(self) -> bool:
        """True for the degenerate alpha1 = 0 datum (single planar shock)."""
        return self.alpha1 == 0.0

    @property
    def max_alpha1(self) -> float:
        """Largest admissible tilt: keeps the corner P1 in (3*pi/2, 2*pi)."""
        return math.atan(math.sqrt(2.0 * self.pbar0 / self.pressure_jump))

    def validate(self) -> "RiemannConfig":
        """Check admissibility; raise ConfigError with a specific message."""
        for name in ("p1", "p2", "alpha1", "alpha2", "u1", "v1"):
            value = getattr(self, name)
            if not math.isfinite(value):
                raise ConfigError(f"{name} must be finite, got {value!r}")
        if self.p2 <= 0.0:
            raise ConfigError(f"p2 must be positive, got {self.p2!r}")
        if self.p1 <= self.p2:
            raise ConfigError(
                f"p1 > p2 required, got p1={self.p1!r}, p2={self.p2!r}"
            )
        if not 0.0 < self.alpha2 < 0.5 * math.pi:
            raise ConfigError(
                f"alpha2 must lie in (0, pi/2), got {self.alpha2!r}"
            )
        if self.alpha1 < 0.0 or self.alpha1 >= 0.5 * math.pi:
            raise ConfigError(
                f"alpha1 must lie in [0, pi/2), got {self.alpha1!r}"
            )
        if self.alpha1 > 0.0:
            if self.alpha1 >= self.max_alpha1:
                raise ConfigError(
                    "alpha1 too large: the shock/sonic corner leaves the "
                    f"fourth quadrant (alpha1={self.alpha1!r} >= "
                    f"{self.max_alpha1!r})"
                )
            # When alpha1 is small the vortex rays can pass outside the
            # shock corners; the whole lower shock then reads sector 3's
            # state.  All low sectors share one pressure, so this only
            # relabels the tangential velocity there and stays admissible.
        return self


@dataclass(frozen=True)
class State:
    """A constant state (p, u, v) of the pressure gradient system."""

    p: float
    u: float
    v: float

    @property
    def energy(self) -> float:
        return 0.5 * (self.u * self.u + self.v * self.v) + self.p

    @property
    def sonic_radius(self) -> float:
        return math.sqrt(self.p)

    def velocity(self) -> np.ndarray:
        return np.array([self.u, self.v], dtype=float)


# ---------------------------------------------------------------------------
# wave geometry
# ---------------------------------------------------------------------------


class WaveKind(Enum):
    SHOCK_PLUS = "ShockPlus"
    SHOCK_MINUS = "ShockMinus"
    VORTEX_PLUS = "VortexPlus"
    VORTEX_MINUS = "VortexMinus"
    NONE = "None"


class Sector(IntEnum):
    TOP = 1
    LEFT = 2
    BOTTOM = 3
    RIGHT = 4


@dataclass(frozen=True)
class PlanarLine:
    """An oriented straight line {x : normal . x = offset}, |normal| = 1."""

    normal: tuple
    offset: float

    def signed_distance(self, xi, eta):
        return self.normal[0] * np.asarray(xi) + self.normal[1] * np.asarray(eta) - self.offset

    @property
    def tangency_point(self) -> np.ndarray:
        """Foot of the perpendicular from the origin."""
        return self.offset * np.array(self.normal, dtype=float)

    @property
    def tangent(self) -> np.ndarray:
        """Unit tangent, +90 degrees from the normal."""
        return rotate90(np.array(self.normal, dtype=float))


@dataclass(frozen=True)
class Ray:
    """A ray from the origin with unit direction."""

    direction: tuple

    @property
    def angle(self) -> float:
        return float(wrap_angle(math.atan2(self.direction[1], self.direction[0])))


@dataclass(frozen=True)
class Wave:
    """A far-field wave with its orientation convention baked in.

    `direction` follows the conventions of classify_discontinuity: the state
    named `left` lies on the side that the +90-degree rotation of
    `direction` points into.
    """

    kind: WaveKind
    left: Sector
    right: Sector
    direction: tuple
    degenerate: bool = False


class SonicAnchors(NamedTuple):
    theta1: float
    theta3: float
    P1: tuple
    P3: tuple


@dataclass(frozen=True)
class WaveFan:
    """The complete far-field pattern plus derived midfield geometry."""

    config: RiemannConfig
    states: tuple            # (state1, state2, state3, state4)
    shock_S12m: PlanarLine   # between sectors 1 and 2 (minus family)
    shock_S41p: PlanarLine   # between sectors 4 and 1 (plus family)
    vortex_J23p: Ray         # between sectors 2 and 3 (plus family)
    vortex_J34m: Ray         # between sectors 3 and 4 (minus family)
    r1: float                # sonic radius of state 1
    r2: float                # sonic radius of the low state
    theta1: float            # polar angle of corner P1 (right)
    theta3: float            # polar angle of corner P3 (left)
    pbar0: float
    waves: tuple = field(default=())

    # -- basic accessors ----------------------------------------------------

    def state(self, sector: int) -> State:
        return self.states[int(sector) - 1]

    @property
    def p1(self) -> float:
        return self.states[0].p

    @property
    def p2(self) -> float:
        return self.states[1].p

    @property
    def jump_scale(self) -> float:
        """k = (p1 - p2)/sqrt(pbar0), the velocity jump across each shock."""
        return (self.p1 - self.p2) / math.sqrt(self.pbar0)

    @property
    def corner1(self) -> np.ndarray:
        return self.r1 * np.array(
            [math.cos(self.theta1), math.sin(self.theta1)]
        )

    @property
    def corner3(self) -> np.ndarray:
        return self.r1 * np.array(
            [math.cos(self.theta3), math.sin(self.theta3)]
        )

    @property
    def theta_j23(self) -> float:
        """Polar angle of the left vortex ray."""
        return math.pi + math.atan(1.0 / math.sin(self.config.alpha2))

    @property
    def theta_j34(self) -> float:
        """Polar angle of the right vortex ray."""
        return 3.0 * math.pi - self.theta_j23

    @property
    def corner_shock_slope(self) -> float:
        """dr/dtheta of the curved shock at P1 (positive branch)."""
        return self.r1 * math.sqrt(
            (self.p1 - self.p2) / (2.0 * self.pbar0)
        )

    # -- sector queries -----------------------------------------------------

    def outer_sector_on_shock(self, theta):
        """Sector supplying the outer state on the curved shock at angle theta.

        Vectorized over theta in [theta3, theta1 (+2 pi)].  Ties at the
        vortex ray angles go to the lower-theta sector.
        """
        th = wrap_angle(np.asarray(theta, dtype=float))
        # Bring angles near theta1 (which is > 3*pi/2) into the band.
        sec = np.full(th.shape, Sector.RIGHT, dtype=int)
        sec = np.where(th <= self.theta_j34, Sector.BOTTOM, sec)
        sec = np.where(th <= self.theta_j23, Sector.LEFT, sec)
        return sec if sec.shape else int(sec)

    def far_sector(self, xi, eta):
        """Sector label of a far-field point (outside the interaction zone).

        Vectorized.  Inside the band of the curved shock the label follows
        the ray rule used on the shock; elsewhere the straight waves decide.
        """
        xi = np.asarray(xi, dtype=float)
        eta = np.asarray(eta, dtype=float)
        th = wrap_angle(np.arctan2(eta, xi))
        q4 = self.shock_S41p.signed_distance(xi, eta)
        q2 = self.shock_S12m.signed_distance(xi, eta)

        in_band = (th >= self.theta3) & (th <= wrap_angle(self.theta1))
        # Outside the band: the two straight shocks tile the plane.
        sec = np.where(q4 > 0.0, Sector.RIGHT, np.where(q2 > 0.0, Sector.LEFT, Sector.TOP))
        # Inside the band the vortex rays split the low-pressure region.
        ray_sec = np.where(
            th <= self.theta_j34, Sector.BOTTOM, Sector.RIGHT
        )
        ray_sec = np.where(th <= self.theta_j23, Sector.LEFT, ray_sec)
        sec = np.where(in_band, ray_sec, sec)
        out = np.asarray(sec, dtype=int)
        return out if out.shape else int(out)

    @staticmethod
    def mirror_sector(sector):
        """Sector relabelling under reflection xi -> -xi."""
        table = np.array([0, 1, 4, 3, 2])
        return table[np.asarray(sector, dtype=int)]


# ---------------------------------------------------------------------------
# construction
# ---------------------------------------------------------------------------


def build_wave_fan(cfg: RiemannConfig, validate: bool = True) -> WaveFan:
    """Construct states, straight waves and anchors from the datum.

    With validate=False degenerate data (for instance p1 == p2) are accepted
    verbatim; this path exists for tests only.
    """
    if validate:
        cfg.validate()

    p1, p2 = cfg.p1, cfg.p2
    a1, a2 = cfg.alpha1, cfg.alpha2
    pbar0 = cfg.pbar0
    dp = p1 - p2
    rmid = math.sqrt(pbar0)
    k = dp / rmid

    s1, c1 = math.sin(a1), math.cos(a1)
    s2 = math.sin(a2)

    state1 = State(p1, cfg.u1, cfg.v1)
    state2 = State(p2, cfg.u1 - k * s1, cfg.v1 - k * c1)
    state3 = State(p2, cfg.u1, cfg.v1 + k * (s1 / s2 - c1))
    state4 = State(p2, cfg.u1 + k * s1, cfg.v1 - k * c1)

    # Straight shocks: normals point away from sector 1 (the origin side).
    line41 = PlanarLine(normal=(s1, -c1), offset=rmid)
    line12 = PlanarLine(normal=(-s1, -c1), offset=rmid)

    # Vortex rays (unit directions, pointing away from the origin).
    nray = math.hypot(1.0, s2)
    ray23 = Ray(direction=(-s2 / nray, -1.0 / nray))
    ray34 = Ray(direction=(s2 / nray, -1.0 / nray))

    # Corner P1: tangency point of the 4/1 line plus half the jump's length
    # along the line tangent; lands exactly on the circle r1.
    r1 = math.sqrt(p1)
    r2 = math.sqrt(p2)
    if dp > 0.0:
        theta1 = float(wrap_angle(a1 - math.atan(math.sqrt(2.0 * pbar0 / dp))))
    else:
        theta1 = float(wrap_angle(a1 - 0.5 * math.pi))
    theta3 = 3.0 * math.pi - theta1

    degenerate_shock = dp <= 0.0
    degenerate_vortex = k * s1 == 0.0
    waves = (
        Wave(WaveKind.SHOCK_MINUS, Sector.LEFT, Sector.TOP,
             (-c1, s1), degenerate_shock),
        Wave(WaveKind.VORTEX_PLUS, Sector.BOTTOM, Sector.LEFT,
             ray23.direction, degenerate_vortex),
        Wave(WaveKind.VORTEX_MINUS, Sector.RIGHT, Sector.BOTTOM,
             ray34.direction, degenerate_vortex),
        Wave(WaveKind.SHOCK_PLUS, Sector.TOP, Sector.RIGHT,
             (c1, s1), degenerate_shock),
    )

    fan = WaveFan(
        config=cfg,
        states=(state1, state2, state3, state4),
        shock_S12m=line12,
        shock_S41p=line41,
        vortex_J23p=ray23,
        vortex_J34m=ray34,
        r1=r1,
        r2=r2,
        theta1=theta1,
        theta3=theta3,
        pbar0=pbar0,
        waves=waves,
    )

    if validate and not cfg.is_critical:
        if not (1.5 * math.pi < fan.theta1 < TWO_PI):
            raise ConfigError(
                f"corner angle theta1={fan.theta1!r} outside (3*pi/2, 2*pi)"
            )
    return fan


def sonic_anchors(fan: WaveFan) -> SonicAnchors:
    """Corner angles and corner points on the sonic circle of state 1."""
    return SonicAnchors(
        theta1=fan.theta1,
        theta3=fan.theta3,
        P1=tuple(fan.corner1),
        P3=tuple(fan.corner3),
    )


# ---------------------------------------------------------------------------
# classification of planar jumps
# ---------------------------------------------------------------------------


def classify_discontinuity(left: State, right: State, direction) -> WaveKind:
    """Label a planar jump: shock (+/-), vortex sheet (+/-), or no wave.

    Parameters follow two orientation conventions that callers must honor:

    * `left` is the state on the side that the +90-degree (counterclockwise)
      rotation of `direction` points into; `right` is the other side.
    * For shocks, `direction` points along the physical straight branch away
      from its tangency point with the circle r = sqrt((p_left + p_right)/2).
      For vortex sheets, `direction` points along the ray away from the
      origin.

    Rules: equal pressures and a velocity jump parallel to `direction`
    give a vortex sheet, plus family when the jump points along `direction`
    from left state to right state; a pressure jump whose velocity jump
    satisfies the shock relation [p]^2 = pbar(|[u]|^2 + |[v]|^2) gives a
    shock, plus family when the high pressure side is on the left, provided
    the pseudo-flow crosses from the low to the high pressure side at a
    representative point of the physical branch.  Anything else is NONE.
    """
    d = np.array(direction, dtype=float)
    norm = math.hypot(d[0], d[1])
    if not norm > 0.0:
        raise ValueError("direction must be a nonzero 2-vector")
    d = d / norm

    p_l, p_r = left.p, right.p
    du = right.u - left.u
    dv = right.v - left.v
    jump = np.array([du, dv])
    jump_norm = math.hypot(du, dv)
    pbar = 0.5 * (p_l + p_r)
    pscale = max(1.0, abs(p_l), abs(p_r))
    uscale = 1.0 + max(
        abs(left.u), abs(left.v), abs(right.u), abs(right.v)
    )

    if abs(p_l - p_r) <= _JUMP_TOL * pscale:
        # Contact candidate.
        if jump_norm <= _JUMP_TOL * uscale:
            return WaveKind.NONE
        cross = d[0] * jump[1] - d[1] * jump[0]
        if abs(cross) > _RH_TOL * jump_norm:
            return WaveKind.NONE
        along = float(d @ jump)
        return WaveKind.VORTEX_PLUS if along > 0.0 else WaveKind.VORTEX_MINUS

    # Shock candidate: check the jump relation.
    lhs = (p_l - p_r) ** 2
    rhs = pbar * jump_norm ** 2
    scale = max(lhs, rhs, 1e-300)
    if abs(lhs - rhs) > _RH_TOL * scale:
        return WaveKind.NONE
    if pbar <= 0.0:
        return WaveKind.NONE

    high_left = p_l > p_r
    n_left = rotate90(d)                      # unit normal into the left side
    n_low_to_high = n_left if high_left else -n_left
    # Reconstruct a representative point X on the physical branch: start at
    # the tangency point of the line with the midfield circle and march far
    # enough along `direction` that the branch choice is unambiguous.
    ubar = 0.5 * (left.velocity() + right.velocity())
    tangency = (-math.sqrt(pbar) if high_left else math.sqrt(pbar)) * n_left
    t_rep = 2.0 * (1.0 + float(np.hypot(*ubar)) + math.sqrt(pbar))
    x_rep = tangency + t_rep * d
    pseudo_flow = ubar - x_rep
    if float(pseudo_flow @ n_low_to_high) <= 0.0:
        return WaveKind.NONE
    return WaveKind.SHOCK_PLUS if high_left else WaveKind.SHOCK_MINUS


def discontinuity_residuals(left: State, right: State, direction) -> dict:
    """Diagnostic residuals behind classify_discontinuity (for testing).

    Returns the shock jump-relation residual (normalized), the vortex
    parallelism residual, the pressure jump, and the entropy margin
    (pseudo-flow flux through the low-to-high normal at the representative
    point; positive means admissible).
    """
    d = np.array(direction, dtype=float)
    d = d / math.hypot(d[0], d[1])
    du = right.u - left.u
    dv = right.v - left.v
    jump_norm = math.hypot(du, dv)
    pbar = 0.5 * (left.p + right.p)
    lhs = (left.p - right.p) ** 2
    rhs = pbar * jump_norm ** 2
    rh = abs(lhs - rhs) / max(lhs, rhs, 1e-300)
    cross = d[0] * dv - d[1] * du
    parallel = abs(cross) / jump_norm if jump_norm > 0 else 0.0

    high_left = left.p > right.p
    n_left = rotate90(d)
    n_low_to_high = n_left if high_left else -n_left
    ubar = 0.5 * (left.velocity() + right.velocity())
    tangency = (-math.sqrt(pbar) if high_left else math.sqrt(pbar)) * n_left
    t_rep = 2.0 * (1.0 + float(np.hypot(*ubar)) + math.sqrt(pbar))
    x_rep = tangency + t_rep * d
    entropy = float((ubar - x_rep) @ n_low_to_high)
    return {
        "rh_residual": rh,
        "vortex_parallel": parallel,
        "pressure_jump": left.p - right.p,
        "entropy_margin": entropy,
    }
