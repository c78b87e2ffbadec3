"""Free-boundary curve, body-fitted polar grid, and field containers.

The subsonic region Omega is star-shaped about the origin: its boundary is
the sonic arc r = r1 on theta in (theta1, theta3 + 2*pi) and the curved
shock r = r_s(theta) on theta in [theta3, theta1].  The grid maps the unit
s-interval onto each radius: node (i, j) sits at

    r = s_i * R_b(theta_j),   s_i = G(i / Ns),   theta_j uniform,

where R_b is r1 on sonic columns and the interpolated shock radius on shock
columns.  G is a fixed smooth stretching of the radial fraction (see
radial_stretch) that clusters nodes toward the outer boundary, where the
equation degenerates and the pressure develops a square-root-type profile;
all finite differences act on the uniform computational coordinate
sigma = i / Ns and carry the chain-rule factors G', G''.  Two layouts
exist:

* mode "full": theta_j = j * dtheta, j = 0..Ntheta-1, periodic;
* mode "half" (default): theta_j = pi/2 + j * dtheta, j = 0..Ntheta/2,
  covering the left half plane; the solution is even in xi, so the two
  boundary columns are reflection (symmetry) columns.

The origin is a single logical unknown (the pole); flat index 0.  Interior
node (i, j) with i >= 1 has flat index 1 + (i-1)*ncol + j.

`ShockCurve` stores the free boundary as samples (theta, r, dr/dtheta) on
a node set spanning [theta3, theta1] with the grid's angular spacing plus
the two exact corner endpoints; monotone cubic (PCHIP) interpolation
preserves the bracketing bounds.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import IntEnum

import numpy as np
from scipy.interpolate import PchipInterpolator

from .riemann_setup import TWO_PI, WaveFan, wrap_angle


class GeometryError(ValueError):
    """A curve or grid violates its structural invariants."""


class NodeTag(IntEnum):
    INTERIOR = 0
    SONIC = 1
    SHOCK = 2
    SYMMETRY_AXIS = 3
    POLE = 4


# Column roles along the outer boundary row.
COL_SONIC = 0
COL_SHOCK = 1
COL_P2 = 2          # the bottom column theta = 3*pi/2 (one-point condition)


# Default strength of the outer-boundary clustering.  At beta = 3 the
# boundary-adjacent spacing is about 3% of the uniform spacing, which puts
# grid nodes inside the thin layer where the degenerate-boundary slope
# turns over; beta = 0 recovers the uniform grid.
DEFAULT_STRETCH = 3.0


def radial_stretch(sigma, beta: float):
    """Stretching s = G(sigma) with its first two derivatives.

    G(sigma) = tanh(beta * sigma) / tanh(beta): a smooth, strictly
    increasing map of [0, 1] onto itself whose derivative shrinks toward
    sigma = 1, concentrating radial resolution at the outer boundary.
    The derivative stays positive everywhere, so the grid map keeps a
    positive Jacobian on (0, 1].  beta = 0 means the identity map.
    """
    sigma = np.asarray(sigma, dtype=float)
    if beta < 0.0:
        raise GeometryError(f"stretch must be nonnegative, got {beta}")
    if beta == 0.0:
        return sigma.copy(), np.ones_like(sigma), np.zeros_like(sigma)
    t = np.tanh(beta)
    u = np.tanh(beta * sigma)
    s = u / t
    gp = beta * (1.0 - u * u) / t
    gpp = -2.0 * beta * beta * u * (1.0 - u * u) / t
    # Pin the endpoints exactly: roundoff must not leave s[-1] below 1.
    s[sigma == 0.0] = 0.0
    s[sigma == 1.0] = 1.0
    return s, gp, gpp


# ---------------------------------------------------------------------------
# the free boundary
# ---------------------------------------------------------------------------


@dataclass
class ShockCurve:
    """Samples of the curved shock r(theta) on [theta3, theta1].

    thetas are strictly increasing: theta3 first, theta1 last (for the
    default datum roughly 3.403 .. 6.021; no wrapping is needed since
    theta3 < 3*pi/2 < theta1 < 2*pi).
    frozen_mask marks samples where the ODE right-hand side was clamped
    (r^2 <= pbar there, the curve rides its stationary level) or where the
    lower bound r2 was enforced.
    branch_mismatch records |r_right - r_left| at 3*pi/2 before
    re-symmetrization when both branches were integrated independently.
    """

    thetas: np.ndarray
    r: np.ndarray
    rprime: np.ndarray
    r1: float
    r2: float
    frozen_mask: np.ndarray = field(default=None)
    branch_mismatch: float = 0.0

    def __post_init__(self):
        self.thetas = np.asarray(self.thetas, dtype=float)
        self.r = np.asarray(self.r, dtype=float)
        self.rprime = np.asarray(self.rprime, dtype=float)
        if self.frozen_mask is None:
            self.frozen_mask = np.zeros(self.thetas.shape, dtype=bool)
        self._interp_r = PchipInterpolator(self.thetas, self.r)
        self._interp_rp = PchipInterpolator(self.thetas, self.rprime)

    # -- invariants ---------------------------------------------------------

    def validate(self, end_tol: float = 1e-9, sign_tol: float = 1e-9,
                 mirror_tol: float = 1e-8) -> "ShockCurve":
        th, r = self.thetas, self.r
        if th.ndim != 1 or th.size < 5:
            raise GeometryError("curve needs at least 5 samples")
        if not np.all(np.diff(th) > 0.0):
            raise GeometryError("curve angles must increase strictly")
        if abs(r[0] - self.r1) > end_tol or abs(r[-1] - self.r1) > end_tol:
            raise GeometryError(
                f"curve must start and end on the sonic circle: "
                f"r[0]={r[0]!r}, r[-1]={r[-1]!r}, r1={self.r1!r}"
            )
        if np.any(r > self.r1 + end_tol):
            raise GeometryError("curve exceeds the sonic radius")
        if np.any(r < self.r2 - end_tol):
            raise GeometryError("curve dips below the inner sonic radius")
        mid = 1.5 * math.pi
        left = th <= mid
        right = th >= mid
        if np.any(self.rprime[left] > sign_tol) or np.any(
            self.rprime[right] < -sign_tol
        ):
            raise GeometryError("curve slope has the wrong sign pattern")
        # Mirror symmetry about theta = 3*pi/2.
        r_mirror = self(3.0 * math.pi - th)
        if float(np.max(np.abs(r_mirror - r))) > mirror_tol:
            raise GeometryError("curve is not mirror symmetric")
        return self

    # -- evaluation ---------------------------------------------------------

    def _unwrap(self, theta):
        """Bring query angles into the curve's unwrapped span."""
        th = np.asarray(theta, dtype=float)
        lo, hi = self.thetas[0], self.thetas[-1]
        th = np.where(th < lo - 1e-12, th + TWO_PI, th)
        if np.any(th < lo - 1e-9) or np.any(th > hi + 1e-9):
            raise GeometryError("shock query angle outside [theta3, theta1]")
        return np.clip(th, lo, hi)

    def __call__(self, theta):
        return self._interp_r(self._unwrap(theta))

    def slope(self, theta):
        return self._interp_rp(self._unwrap(theta))

    def contains_angle(self, theta):
        """Vectorized: does the (wrapped) angle lie in the curve's span?"""
        th = np.asarray(theta, dtype=float)
        lo, hi = self.thetas[0], self.thetas[-1]
        th = np.where(th < lo, th + TWO_PI, th)
        return (th >= lo) & (th <= hi)

    @property
    def bottom_radius(self) -> float:
        return float(self(1.5 * math.pi))


def interp_shock(shock: ShockCurve, theta):
    """Radius and slope of the shock at the given angle(s)."""
    return shock(theta), shock.slope(theta)


def constant_curve(fan: WaveFan, ntheta: int) -> ShockCurve:
    """Degenerate curve r = r1 (full sonic disk); used by manufactured tests."""
    nodes = shock_node_angles(fan, ntheta)
    r = np.full(nodes.shape, fan.r1)
    return ShockCurve(nodes, r, np.zeros_like(r), fan.r1, fan.r2)


def shock_node_angles(fan: WaveFan, ntheta: int) -> np.ndarray:
    """Node set: theta3, grid columns strictly inside, theta1.

    theta1 lies in (3*pi/2, 2*pi) and theta3 in (pi, 3*pi/2), so the span
    [theta3, theta1] needs no unwrapping.  The interior nodes are the
    full-circle grid columns j*dtheta falling strictly inside; because
    ntheta is divisible by 4 the set is mirror symmetric about 3*pi/2 and
    contains it.
    """
    if ntheta % 4 != 0:
        raise GeometryError(f"ntheta must be divisible by 4, got {ntheta}")
    dtheta = TWO_PI / ntheta
    lo = fan.theta3
    hi = fan.theta1
    j_lo = int(math.floor(lo / dtheta)) + 1
    j_hi = int(math.ceil(hi / dtheta)) - 1
    inner = dtheta * np.arange(j_lo, j_hi + 1)
    inner = inner[(inner > lo + 1e-12) & (inner < hi - 1e-12)]
    return np.concatenate(([lo], inner, [hi]))


# ---------------------------------------------------------------------------
# the grid
# ---------------------------------------------------------------------------


@dataclass
class DomainGrid:
    """Body-fitted polar grid on the subsonic region (or the full disk)."""

    fan: WaveFan
    shock: ShockCurve        # may be a constant_curve for disk problems
    ns: int
    ntheta: int              # full-circle angular resolution
    mode: str                # "half" or "full"
    thetas: np.ndarray       # column angles, shape (ncol,)
    s: np.ndarray            # radial fractions, shape (ns+1,), s[0]=0, s[-1]=1
    rb: np.ndarray           # boundary radius per column, shape (ncol,)
    rbp: np.ndarray          # d(rb)/dtheta per column
    rbpp: np.ndarray         # second derivative of rb per column
    col_role: np.ndarray     # COL_SONIC / COL_SHOCK / COL_P2 per column
    stretch: float = 0.0     # clustering strength beta of radial_stretch
    gp: np.ndarray = None    # G'(sigma) at the nodes; ones when uniform
    gpp: np.ndarray = None   # G''(sigma) at the nodes; zeros when uniform

    def __post_init__(self):
        if self.gp is None:
            self.gp = np.ones_like(self.s)
        if self.gpp is None:
            self.gpp = np.zeros_like(self.s)

    # -- layout -------------------------------------------------------------

    @property
    def ncol(self) -> int:
        return self.thetas.size

    @property
    def dtheta(self) -> float:
        return TWO_PI / self.ntheta

    @property
    def ds(self) -> float:
        """Uniform spacing of the computational coordinate sigma.

        Finite differences act in sigma; converting a sigma-derivative to
        an s- (or r-) derivative divides by gp (and rb).
        """
        return 1.0 / self.ns

    @property
    def n_unknowns(self) -> int:
        return 1 + (self.ns) * self.ncol  # pole + rings i=1..ns

    def flat_index(self, i, j):
        """Flat unknown index of node (i, j); the pole (i=0) is index 0."""
        i = np.asarray(i)
        j = np.asarray(j)
        return np.where(i == 0, 0, 1 + (i - 1) * self.ncol + j)

    def neighbor_columns(self):
        """Index maps j -> j-1 and j -> j+1 with reflection or periodicity."""
        n = self.ncol
        jm = np.arange(-1, n - 1)
        jp = np.arange(1, n + 1)
        if self.mode == "half":
            jm[0] = 1
            jp[-1] = n - 2
        else:
            jm[0] = n - 1
            jp[-1] = 0
        return jm, jp

    def radii(self) -> np.ndarray:
        """Node radii, shape (ns+1, ncol)."""
        return self.s[:, None] * self.rb[None, :]

    def xy(self):
        """Cartesian node coordinates (xi, eta), each (ns+1, ncol)."""
        r = self.radii()
        return r * np.cos(self.thetas)[None, :], r * np.sin(self.thetas)[None, :]

    # -- tags ---------------------------------------------------------------

    def node_tags(self) -> np.ndarray:
        """Tag every node: pole, boundary kind, symmetry axis, or interior."""
        tags = np.full((self.ns + 1, self.ncol), NodeTag.INTERIOR, dtype=int)
        tags[0, :] = NodeTag.POLE
        tags[-1, :] = np.where(
            self.col_role == COL_SONIC, NodeTag.SONIC, NodeTag.SHOCK
        )
        if self.mode == "half":
            tags[1:-1, 0] = NodeTag.SYMMETRY_AXIS
            tags[1:-1, -1] = NodeTag.SYMMETRY_AXIS
        return tags

    # -- integration --------------------------------------------------------

    def area_weights(self) -> np.ndarray:
        """Weights w_ij with sum(w * f) ~ integral of f over the gridded set.

        Trapezoid in both directions on the mapped rectangle; the Jacobian
        of (s, theta) -> (xi, eta) is s * R_b(theta)^2.  The s-direction
        weights come from the actual (possibly stretched) node spacing.
        In half mode the integral covers the left half domain only.
        """
        jac = self.s[:, None] * (self.rb ** 2)[None, :]
        ws = np.empty(self.ns + 1)
        gaps = np.diff(self.s)
        ws[0] = 0.5 * gaps[0]
        ws[-1] = 0.5 * gaps[-1]
        ws[1:-1] = 0.5 * (gaps[:-1] + gaps[1:])
        wt = np.full(self.ncol, self.dtheta)
        if self.mode == "half":
            wt[0] = wt[-1] = 0.5 * self.dtheta
        return jac * ws[:, None] * wt[None, :]

    # -- corner frames ------------------------------------------------------

    def corner_frame(self, which: int):
        """Local coordinates (x, y) = (r1 - r, +-(theta_c - theta)) per node.

        x grows radially inward from the sonic circle; y is the signed
        angular offset from the corner, positive on the shock side (theta
        below theta1 for which=1, above theta3 for which=3).
        """
        r = self.radii()
        x = self.fan.r1 - r
        th = np.broadcast_to(self.thetas[None, :], x.shape)
        if which == 1:
            raw = self.fan.theta1 - th
        elif which == 3:
            raw = th - self.fan.theta3
        else:
            raise ValueError("which must be 1 or 3")
        # Signed angular offset in (-pi, pi]: positive toward the shock side.
        y = np.mod(raw + math.pi, TWO_PI) - math.pi
        return x, y


def build_grid(fan: WaveFan, shock: ShockCurve, ns: int, ntheta: int,
               mode: str = "half",
               stretch: float = DEFAULT_STRETCH) -> DomainGrid:
    """Build the body-fitted grid for the given free boundary.

    shock=None builds the plain polar disk r <= r1 (every column sonic);
    this layout backs the manufactured solution tests.  stretch sets the
    outer-boundary clustering of the radial nodes (0 = uniform).
    """
    if ns < 4:
        raise GeometryError(f"ns must be at least 4, got {ns}")
    if ntheta % 4 != 0:
        raise GeometryError(f"ntheta must be divisible by 4, got {ntheta}")
    if mode not in ("half", "full"):
        raise GeometryError(f"mode must be 'half' or 'full', got {mode!r}")

    dtheta = TWO_PI / ntheta
    if mode == "half":
        ncol = ntheta // 2 + 1
        thetas = 0.5 * math.pi + dtheta * np.arange(ncol)
    else:
        ncol = ntheta
        thetas = dtheta * np.arange(ncol)

    sigma = np.linspace(0.0, 1.0, ns + 1)
    s, gp, gpp = radial_stretch(sigma, stretch)

    if shock is None:
        shock = constant_curve(fan, ntheta)
        rb = np.full(ncol, fan.r1)
        rbp = np.zeros(ncol)
        rbpp = np.zeros(ncol)
        col_role = np.full(ncol, COL_SONIC)
        return DomainGrid(fan, shock, ns, ntheta, mode, thetas, s,
                          rb, rbp, rbpp, col_role,
                          stretch=stretch, gp=gp, gpp=gpp)

    # Classify columns: a column is a shock column when its angle falls in
    # the curve's span [theta3, theta1] modulo 2*pi.
    on_shock = shock.contains_angle(thetas)
    # A column landing exactly on a corner of the span belongs to the
    # sonic closure: the curve pins r = r1 there and the boundary value
    # is the sonic pressure, so an oblique row at that column would let
    # the corner pressure float below it.
    for corner in (shock.thetas[0], shock.thetas[-1]):
        d = np.abs(np.mod(thetas - corner + math.pi, TWO_PI) - math.pi)
        on_shock &= d > 1e-9
    col_role = np.where(on_shock, COL_SHOCK, COL_SONIC)
    j_bottom = int(np.argmin(np.abs(wrap_angle(thetas) - 1.5 * math.pi)))
    if abs(wrap_angle(thetas[j_bottom]) - 1.5 * math.pi) > 1e-9:
        raise GeometryError("grid has no column at theta = 3*pi/2")
    col_role[j_bottom] = COL_P2

    rb = np.full(ncol, fan.r1)
    rbp = np.zeros(ncol)
    idx = np.nonzero(on_shock)[0]
    rb[idx] = shock(thetas[idx])
    rbp[idx] = shock.slope(thetas[idx])

    rbpp = _boundary_second_derivative(thetas, rbp, on_shock, mode)

    return DomainGrid(fan, shock, ns, ntheta, mode, thetas, s,
                      rb, rbp, rbpp, col_role,
                      stretch=stretch, gp=gp, gpp=gpp)


def _boundary_second_derivative(thetas, rbp, on_shock, mode):
    """d2(rb)/dtheta2 per column by differencing the slope column-wise.

    The boundary radius is only C0 at the corners (the shock meets the arc
    at an angle), so the difference never straddles a corner: at the first
    and last shock columns, and at the sonic columns adjacent to them, a
    one-sided difference on the matching side is used.  Sonic columns far
    from the corners have rbpp = 0 exactly.
    """
    n = thetas.size
    rbpp = np.zeros(n)
    idx = np.nonzero(on_shock)[0]
    if idx.size == 0:
        return rbpp
    # Shock columns are contiguous in the unwrapped angle but may wrap in
    # full mode; handle by sorting columns by unwrapped distance.
    for col in idx:
        jm, jp = col - 1, col + 1
        if mode == "full":
            jm %= n
            jp %= n
        else:
            jm = max(jm, 0)
            jp = min(jp, n - 1)
        left_ok = on_shock[jm] and jm != col
        right_ok = on_shock[jp] and jp != col
        dth = thetas[1] - thetas[0]
        if left_ok and right_ok:
            rbpp[col] = (rbp[jp] - rbp[jm]) / (2.0 * dth)
        elif right_ok:
            rbpp[col] = (rbp[jp] - rbp[col]) / dth
        elif left_ok:
            rbpp[col] = (rbp[col] - rbp[jm]) / dth
        else:
            rbpp[col] = 0.0
    return rbpp


# ---------------------------------------------------------------------------
# fields on the grid
# ---------------------------------------------------------------------------


@dataclass
class PressureField:
    """Node values of the pressure, shape (ns+1, ncol); pole row uniform."""

    grid: DomainGrid
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        expected = (self.grid.ns + 1, self.grid.ncol)
        if self.values.shape != expected:
            raise GeometryError(
                f"field shape {self.values.shape} != grid shape {expected}"
            )
        # The pole is one logical node; keep its row uniform.
        self.values[0, :] = self.values[0, 0]

    @classmethod
    def constant(cls, grid: DomainGrid, value: float) -> "PressureField":
        return cls(grid, np.full((grid.ns + 1, grid.ncol), float(value)))

    @classmethod
    def from_flat(cls, grid: DomainGrid, flat: np.ndarray) -> "PressureField":
        values = np.empty((grid.ns + 1, grid.ncol))
        values[0, :] = flat[0]
        values[1:, :] = flat[1:].reshape(grid.ns, grid.ncol)
        return cls(grid, values)

    def to_flat(self) -> np.ndarray:
        flat = np.empty(self.grid.n_unknowns)
        flat[0] = self.values[0, 0]
        flat[1:] = self.values[1:, :].ravel()
        return flat

    def boundary_trace(self) -> np.ndarray:
        return self.values[-1, :].copy()

    @property
    def min(self) -> float:
        return float(np.min(self.values))

    @property
    def max(self) -> float:
        return float(np.max(self.values))


def distance_to_sonic_arc(theta, r, theta1, theta3, r1):
    """Distance from polar points to the sonic arc (corner points included).

    The arc is {r = r1, theta in [theta1, theta3 + 2*pi]} (wrapping through
    the upper half plane).  For points whose angle falls inside the arc's
    span the distance is r1 - r; otherwise it is the distance to the nearer
    corner point.  Vectorized.
    """
    th = wrap_angle(np.asarray(theta, dtype=float))
    r = np.asarray(r, dtype=float)
    in_span = (th >= theta1) | (th <= theta3)
    xi = r * np.cos(th)
    eta = r * np.sin(th)
    c1x, c1y = r1 * math.cos(theta1), r1 * math.sin(theta1)
    c3x, c3y = r1 * math.cos(theta3), r1 * math.sin(theta3)
    d1 = np.hypot(xi - c1x, eta - c1y)
    d3 = np.hypot(xi - c3x, eta - c3y)
    return np.where(in_span, r1 - r, np.minimum(d1, d3))


def sample_pressure_arrays(thetas, s, rb, values, theta_q, r_q,
                           mode="full", theta0=None):
    """Bilinear sample of node values at polar points (theta_q, r_q).

    thetas must be uniformly spaced columns; the query is clamped into the
    gridded set (callers decide beforehand whether a point is inside).
    Returns the sampled values (NaN where a participating node is NaN).
    """
    thetas = np.asarray(thetas)
    rb = np.asarray(rb)
    values = np.asarray(values)
    theta_q = np.atleast_1d(np.asarray(theta_q, dtype=float))
    r_q = np.atleast_1d(np.asarray(r_q, dtype=float))
    dth = thetas[1] - thetas[0]
    base = thetas[0] if theta0 is None else theta0
    tq = theta_q.copy()
    if mode == "full":
        # Periodic: close the seam with a copy of the first column.
        tq = np.mod(tq - base, TWO_PI) + base
        thetas = np.append(thetas, thetas[0] + TWO_PI)
        rb = np.append(rb, rb[0])
        values = np.concatenate([values, values[:, :1]], axis=1)
    ncol = thetas.size
    fj = (tq - base) / dth
    j0 = np.clip(np.floor(fj).astype(int), 0, ncol - 2)
    wj = np.clip(fj - j0, 0.0, 1.0)

    rb0 = rb[j0]
    rb1 = rb[j0 + 1]
    rb_q = (1 - wj) * rb0 + wj * rb1
    s_q = np.clip(r_q / np.maximum(rb_q, 1e-300), 0.0, 1.0)
    s = np.asarray(s)
    ns = s.size - 1
    i0 = np.clip(np.searchsorted(s, s_q, side="right") - 1, 0, ns - 1)
    wi = np.clip((s_q - s[i0]) / (s[i0 + 1] - s[i0]), 0.0, 1.0)

    v00 = values[i0, j0]
    v01 = values[i0, j0 + 1]
    v10 = values[i0 + 1, j0]
    v11 = values[i0 + 1, j0 + 1]
    out = ((1 - wi) * ((1 - wj) * v00 + wj * v01)
           + wi * ((1 - wj) * v10 + wj * v11))
    return out
