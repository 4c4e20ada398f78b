# capillary_bernoulli/varstab.py
"""
Inner variations of J along flows of compactly supported vector fields.

A FlowSpec is a closed-form vector field eta = bump * g with g a low-degree
polynomial field, tangent to the wall. Everything downstream (the flow, the
pulled-back coefficients B_t, m_t, Q_t and the pointwise shape derivatives)
uses the exact first and second derivatives of eta.

The discrete variations live on a fixed-domain problem: the positivity set of
a base field is frozen, the state equation is pulled back with B_t and m_t,
and the expansion u_t o Phi_t = u + t du + t^2 d2u is checked against full
solves. Jacobians follow the convention jac[..., i, j] = d_j eta_i.
"""

import logging
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import scipy.sparse as sp
from scipy.ndimage import distance_transform_edt
from scipy.sparse.linalg import spsolve

from .assembly import (
    gauss_coordinates,
    require_planar,
    stiffness_matrix,
    triangle_centroids,
    triangle_fractions,
    triangle_gradients,
    wall_lumped,
    wall_positive_integrals,
)
from .config import THETA_BAND
from .energy import JParams, energy_J
from .exact import (
    wedge_competitor,
    wedge_curvature_fit,
    wedge_rectangle_grid,
    wedge_second_variation,
)
from .exceptions import ConfigurationError, DomainError
from .fbdiag import AuditCheck, AuditReport, FreeBoundary, Verdict, extract_fb
from .fields import ScalarField, signed_extension
from .grid import Grid
from .solver import dirichlet_mask, fit_rate

# Setup logging
logger = logging.getLogger(__name__)

FLOW_STEPS = 32
MAX_FLOW_NORM = 0.5
TAYLOR_TS = (1e-1, 3e-2, 1e-2, 3e-3, 1e-3)
WALL_TOL = 1e-12
BOUND_SAMPLES = 41

# ==============================================================================
# Vector fields
# ==============================================================================

Jet = Tuple[np.ndarray, np.ndarray, np.ndarray]
PolynomialField = Callable[[np.ndarray, "FlowSpec"], Jet]
ETA_FAMILIES: Dict[str, PolynomialField] = {}


def register_eta(name: str) -> Callable[[PolynomialField], PolynomialField]:
    """Register the polynomial factor g of a bump family eta = bump * g."""

    def decorator(fn: PolynomialField) -> PolynomialField:
        ETA_FAMILIES[name] = fn
        return fn

    return decorator


def bump_profile(s: np.ndarray) -> Jet:
    """b(s) = (1 - s^2)^4 on |s| < 1 and its first two derivatives."""
    s = np.asarray(s, dtype=float)
    inside = np.abs(s) < 1.0
    w = np.where(inside, 1.0 - s * s, 0.0)
    b = w**4
    db = -8.0 * s * w**3
    d2b = -8.0 * w**3 + 48.0 * s * s * w**2
    return b, np.where(inside, db, 0.0), np.where(inside, d2b, 0.0)


def _product(factors: np.ndarray, skip: Sequence[int]) -> np.ndarray:
    out = np.ones(factors.shape[:-1])
    for k in range(factors.shape[-1]):
        if k not in skip:
            out = out * factors[..., k]
    return out


def _zeros_jet(x: np.ndarray) -> Jet:
    d = x.shape[-1]
    lead = x.shape[:-1]
    return np.zeros(lead + (d,)), np.zeros(lead + (d, d)), np.zeros(lead + (d, d, d))


@register_eta("tangential")
def _tangential(x: np.ndarray, spec: "FlowSpec") -> Jet:
    g, Dg, D2g = _zeros_jet(x)
    g[...] = spec.amplitude * spec.unit_direction
    return g, Dg, D2g


@register_eta("radial")
def _radial(x: np.ndarray, spec: "FlowSpec") -> Jet:
    # dilation about the wall point below the center
    g, Dg, D2g = _zeros_jet(x)
    anchor = spec.anchor.copy()
    anchor[-1] = 0.0
    g[...] = spec.amplitude * (x - anchor)
    Dg[...] = spec.amplitude * np.eye(x.shape[-1])
    return g, Dg, D2g


@register_eta("shear")
def _shear(x: np.ndarray, spec: "FlowSpec") -> Jet:
    g, Dg, D2g = _zeros_jet(x)
    scale = spec.amplitude / spec.radius
    g[..., 0] = scale * x[..., -1]
    Dg[..., 0, -1] = scale
    return g, Dg, D2g


@register_eta("normal")
def _normal(x: np.ndarray, spec: "FlowSpec") -> Jet:
    g, Dg, D2g = _zeros_jet(x)
    scale = spec.amplitude / spec.radius
    g[..., -1] = scale * x[..., -1]
    Dg[..., -1, -1] = scale
    return g, Dg, D2g


@register_eta("swirl")
def _swirl(x: np.ndarray, spec: "FlowSpec") -> Jet:
    """Rotation in the (x_1, x_d) plane damped by x_d."""
    g, Dg, D2g = _zeros_jet(x)
    scale = spec.amplitude / spec.radius**2
    c = spec.anchor
    xd = x[..., -1]
    g[..., 0] = -scale * xd * (xd - c[-1])
    g[..., -1] = scale * xd * (x[..., 0] - c[0])
    Dg[..., 0, -1] = -scale * (2.0 * xd - c[-1])
    Dg[..., -1, 0] = scale * xd
    Dg[..., -1, -1] = scale * (x[..., 0] - c[0])
    D2g[..., 0, -1, -1] = -2.0 * scale
    D2g[..., -1, 0, -1] = scale
    D2g[..., -1, -1, 0] = scale
    return g, Dg, D2g


@register_eta("constant")
def _constant(x: np.ndarray, spec: "FlowSpec") -> Jet:
    return _tangential(x, spec)


@dataclass(frozen=True)
class FlowSpec:
    """
    Vector field eta = amplitude * bump((x - center)/radius) * g(x).

    The constant family has no bump and is global. The tangential and constant
    families point along `direction`, which must be parallel to the wall.
    """

    family: str
    center: Tuple[float, ...]
    radius: float = 0.25
    amplitude: float = 0.1
    direction: Optional[Tuple[float, ...]] = None

    def __post_init__(self) -> None:
        if self.family not in ETA_FAMILIES:
            raise ConfigurationError(
                f"Unknown vector field family '{self.family}' "
                f"(known: {sorted(ETA_FAMILIES)})",
                key="eta.family",
            )
        if self.radius <= 0.0:
            raise ConfigurationError(
                f"Support radius must be positive, got {self.radius}",
                key="eta.radius",
            )
        if len(self.center) < 2:
            raise ConfigurationError("Vector fields need d >= 2", key="eta.center")
        if abs(float(self.unit_direction[-1])) > WALL_TOL:
            raise ConfigurationError(
                "Translation direction must be parallel to the wall",
                key="eta.direction",
            )
        residual = self.wall_residual()
        if residual > WALL_TOL:
            raise ConfigurationError(
                f"Vector field is not tangent to the wall (residual {residual:.3e})",
                key="eta",
            )

    @property
    def dim(self) -> int:
        return len(self.center)

    @property
    def anchor(self) -> np.ndarray:
        return np.asarray(self.center, dtype=float)

    @property
    def unit_direction(self) -> np.ndarray:
        if self.direction is None:
            e = np.zeros(self.dim)
            e[0] = 1.0
            return e
        v = np.asarray(self.direction, dtype=float)
        norm = float(np.linalg.norm(v))
        if v.shape != (self.dim,) or norm == 0.0:
            raise ConfigurationError(
                f"Direction {list(v)} is not a nonzero {self.dim}-vector",
                key="eta.direction",
            )
        return v / norm

    @property
    def is_global(self) -> bool:
        return self.family == "constant"

    def support_box(self) -> Tuple[np.ndarray, np.ndarray]:
        c = self.anchor
        return c - self.radius, c + self.radius

    def jet(self, points: np.ndarray) -> Jet:
        """(eta, D eta, D^2 eta) with shapes (..., d), (..., d, d), (..., d, d, d)."""
        x = np.asarray(points, dtype=float)
        g, Dg, D2g = ETA_FAMILIES[self.family](x, self)
        if self.is_global:
            return g, Dg, D2g
        d = self.dim
        y = (x - self.anchor) / self.radius
        b, db, d2b = bump_profile(y)
        phi = _product(b, ())
        dphi = np.stack(
            [db[..., j] / self.radius * _product(b, (j,)) for j in range(d)], axis=-1
        )
        d2phi = np.zeros(x.shape[:-1] + (d, d))
        for j in range(d):
            for k in range(d):
                if j == k:
                    d2phi[..., j, j] = d2b[..., j] * _product(b, (j,))
                else:
                    d2phi[..., j, k] = db[..., j] * db[..., k] * _product(b, (j, k))
        d2phi /= self.radius**2

        eta = phi[..., None] * g
        jac = dphi[..., None, :] * g[..., :, None] + phi[..., None, None] * Dg
        hess = (
            d2phi[..., None, :, :] * g[..., :, None, None]
            + dphi[..., None, :, None] * Dg[..., :, None, :]
            + dphi[..., None, None, :] * Dg[..., :, :, None]
            + phi[..., None, None, None] * D2g
        )
        return eta, jac, hess

    def __call__(self, points: np.ndarray) -> np.ndarray:
        return self.jet(points)[0]

    def wall_residual(self) -> float:
        """max |eta_d| over wall samples spanning the support."""
        lo, hi = self.support_box()
        axes = [np.linspace(lo[k], hi[k], 9) for k in range(self.dim - 1)]
        mesh = np.meshgrid(*axes, indexing="ij")
        wall = np.stack([m.ravel() for m in mesh] + [np.zeros(mesh[0].size)], axis=-1)
        return float(np.abs(self(wall)[..., -1]).max(initial=0.0))

    @cached_property
    def jacobian_bound(self) -> float:
        """Sampled sup of the spectral norm of D eta over the support."""
        lo, hi = self.support_box()
        axes = [np.linspace(lo[k], hi[k], BOUND_SAMPLES) for k in range(self.dim)]
        mesh = np.meshgrid(*axes, indexing="ij")
        points = np.stack([m.ravel() for m in mesh], axis=-1)
        jac = self.jet(points)[1]
        return float(np.linalg.norm(jac, ord=2, axis=(-2, -1)).max(initial=0.0))

    @property
    def t_max(self) -> float:
        """Largest |t| with |t| sup|D eta| below one half."""
        bound = self.jacobian_bound
        return math.inf if bound == 0.0 else MAX_FLOW_NORM / bound


def make_flow(
    family: str,
    center: Sequence[float],
    radius: float = 0.25,
    amplitude: float = 0.1,
    direction: Optional[Sequence[float]] = None,
) -> FlowSpec:
    return FlowSpec(
        family=family,
        center=tuple(float(c) for c in center),
        radius=float(radius),
        amplitude=float(amplitude),
        direction=None if direction is None else tuple(float(v) for v in direction),
    )


# ==============================================================================
# Flow
# ==============================================================================


@dataclass(frozen=True)
class FlowImage:
    points: np.ndarray
    jacobian: np.ndarray
    det: np.ndarray


def flow_map(eta: FlowSpec, t: float, points: np.ndarray) -> FlowImage:
    """
    Phi_t(x) and D Phi_t(x) by classical RK4 with FLOW_STEPS steps.

    D Phi solves d/dt D Phi = D eta(Phi) D Phi alongside the trajectory.

    Raises:
        DomainError: |t| sup|D eta| >= 1/2, or det D Phi_t <= 0 somewhere
    """
    x = np.array(points, dtype=float, copy=True)
    if x.shape[-1] != eta.dim:
        raise DomainError(f"Points have dimension {x.shape[-1]}, field {eta.dim}")
    if abs(t) * eta.jacobian_bound >= MAX_FLOW_NORM:
        raise DomainError(
            f"Flow time t={t} exceeds t_max={eta.t_max:.4g} for family "
            f"'{eta.family}'"
        )
    d = eta.dim
    P = np.broadcast_to(np.eye(d), x.shape[:-1] + (d, d)).copy()
    if t != 0.0:
        dt = t / FLOW_STEPS

        def rhs(y: np.ndarray, M: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
            e, J, _ = eta.jet(y)
            return e, J @ M

        for _ in range(FLOW_STEPS):
            k1x, k1P = rhs(x, P)
            k2x, k2P = rhs(x + 0.5 * dt * k1x, P + 0.5 * dt * k1P)
            k3x, k3P = rhs(x + 0.5 * dt * k2x, P + 0.5 * dt * k2P)
            k4x, k4P = rhs(x + dt * k3x, P + dt * k3P)
            x = x + dt / 6.0 * (k1x + 2.0 * k2x + 2.0 * k3x + k4x)
            P = P + dt / 6.0 * (k1P + 2.0 * k2P + 2.0 * k3P + k4P)

    det = np.linalg.det(P)
    bad = np.argwhere(~(det > 0.0))
    if bad.size:
        first = tuple(int(i) for i in bad[0])
        raise DomainError(
            f"Flow Jacobian degenerates at {np.asarray(points)[first].tolist()} "
            f"(det={det[first]:.3e}, t={t})"
        )
    return FlowImage(points=x, jacobian=P, det=det)


@dataclass(frozen=True)
class Transported:
    """Pulled-back coefficients B_t, m_t, Q_t at a set of points."""

    B: np.ndarray
    m: np.ndarray
    Q: np.ndarray


def transported(
    eta: FlowSpec, t: float, points: np.ndarray, m: float, q: float
) -> Transported:
    """B_t = (D Phi)^-1 (D Phi)^-T |det D Phi|, m_t = m |det|, Q_t = q^2 |det|."""
    image = flow_map(eta, t, points)
    inv = np.linalg.inv(image.jacobian)
    jac = np.abs(image.det)
    B = inv @ np.swapaxes(inv, -1, -2) * jac[..., None, None]
    return Transported(B=B, m=m * jac, Q=q * q * jac)


# ==============================================================================
# Shape derivatives
# ==============================================================================


@dataclass(frozen=True)
class ShapeDerivatives:
    """Pointwise samplers of dB, d2B, dm, d2m and d2Q for a vector field."""

    eta: FlowSpec
    m: float
    q: float

    def _parts(self, points: np.ndarray) -> Dict[str, np.ndarray]:
        e, J, H = self.eta.jet(points)
        div = np.trace(J, axis1=-2, axis2=-1)
        grad_div = np.einsum("...iik->...k", H)
        return {
            "eta": e,
            "J": J,
            "JT": np.swapaxes(J, -1, -2),
            "div": div,
            "eta_grad_J": np.einsum("...ijk,...k->...ij", H, e),
            "second_volume": 0.5
            * (div * div + np.einsum("...k,...k->...", e, grad_div)),
        }

    def deltaB(self, points: np.ndarray) -> np.ndarray:
        p = self._parts(points)
        eye = np.eye(self.eta.dim)
        return -p["J"] - p["JT"] + p["div"][..., None, None] * eye

    def delta2B(self, points: np.ndarray) -> np.ndarray:
        p = self._parts(points)
        J, JT = p["J"], p["JT"]
        sym = J + JT
        eye = np.eye(self.eta.dim)
        egJ = p["eta_grad_J"]
        return (
            J @ JT
            + 0.5 * (JT @ JT)
            + 0.5 * (J @ J)
            - 0.5 * (egJ + np.swapaxes(egJ, -1, -2))
            - sym * p["div"][..., None, None]
            + eye * p["second_volume"][..., None, None]
        )

    def deltam(self, points: np.ndarray) -> np.ndarray:
        return self.m * self._parts(points)["div"]

    def delta2m(self, points: np.ndarray) -> np.ndarray:
        return self.m * self._parts(points)["second_volume"]

    def _wall_parts(self, points: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """
        First and second coefficients of the tangential Jacobian of Phi_t on
        the wall, which drops the d_d eta_d factor of det D Phi_t.
        """
        e, J, H = self.eta.jet(points)
        d = self.eta.dim - 1
        div = np.trace(J, axis1=-2, axis2=-1) - J[..., d, d]
        grad_div = np.einsum("...iik->...k", H) - H[..., d, d, :]
        second = 0.5 * (div * div + np.einsum("...k,...k->...", e, grad_div))
        return div, second

    def deltam_tangential(self, points: np.ndarray) -> np.ndarray:
        """First coefficient of m times the wall's own Jacobian (wall points)."""
        return self.m * self._wall_parts(points)[0]

    def delta2m_tangential(self, points: np.ndarray) -> np.ndarray:
        return self.m * self._wall_parts(points)[1]

    def delta2Q(self, points: np.ndarray) -> np.ndarray:
        """0.5 q^2 div(eta div eta)."""
        return self.q * self.q * self._parts(points)["second_volume"]


def shape_derivatives(eta: FlowSpec, m: float, q: float) -> ShapeDerivatives:
    return ShapeDerivatives(eta=eta, m=float(m), q=float(q))


@dataclass(frozen=True)
class ExpansionReport:
    """Finite-difference residuals of B_t and m_t against the shape derivatives."""

    family: str
    ts: List[float]
    first: List[float]
    second: List[float]
    mass: List[float]

    def slopes(self) -> Dict[str, Optional[float]]:
        return {
            "first": fit_rate(self.ts, self.first),
            "second": fit_rate(self.ts, self.second),
            "mass": fit_rate(self.ts, self.mass),
        }

    def passed(self, threshold: float = 0.9) -> bool:
        """Residual slopes at least `threshold`; exactly vanishing residuals pass."""
        for name, slope in self.slopes().items():
            residuals = getattr(self, name)
            if max(residuals, default=0.0) <= 1e-13:
                continue
            if slope is None or slope < threshold:
                return False
        return True

    def rows(self) -> List[List[float]]:
        return [list(r) for r in zip(self.ts, self.first, self.second, self.mass)]

    def as_dict(self) -> Dict[str, Any]:
        return {
            "family": self.family,
            "ts": self.ts,
            "first": self.first,
            "second": self.second,
            "mass": self.mass,
            "slopes": self.slopes(),
            "passed": self.passed(),
        }


def _support_samples(eta: FlowSpec, count: int = 17) -> np.ndarray:
    lo, hi = eta.support_box()
    lo = lo.copy()
    lo[-1] = max(lo[-1], 0.0)
    axes = [np.linspace(lo[k], hi[k], count) for k in range(eta.dim)]
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=-1)


def expansion_check(
    eta: FlowSpec,
    ts: Sequence[float] = TAYLOR_TS,
    points: Optional[np.ndarray] = None,
    m: float = 1.0,
) -> ExpansionReport:
    """
    Sup residuals of (B_t - Id)/t - dB, (B_t - Id - t dB)/t^2 - d2B and
    (m_t - m)/t - dm; each should decay like t.
    """
    x = _support_samples(eta) if points is None else np.asarray(points, dtype=float)
    sd = shape_derivatives(eta, m, 1.0)
    dB, d2B, dm = sd.deltaB(x), sd.delta2B(x), sd.deltam(x)
    eye = np.eye(eta.dim)
    first, second, mass = [], [], []
    for t in ts:
        tr = transported(eta, t, x, m, 1.0)
        first.append(float(np.abs((tr.B - eye) / t - dB).max(initial=0.0)))
        second.append(
            float(np.abs((tr.B - eye - t * dB) / t**2 - d2B).max(initial=0.0))
        )
        mass.append(float(np.abs((tr.m - m) / t - dm).max(initial=0.0)))
    report = ExpansionReport(eta.family, [float(t) for t in ts], first, second, mass)
    logger.info(f"Expansion check '{eta.family}': slopes {report.slopes()}")
    return report


# ==============================================================================
# Fixed-domain state problem
# ==============================================================================


def _identity_at(points: np.ndarray) -> np.ndarray:
    d = points.shape[-1]
    return np.broadcast_to(np.eye(d), points.shape[:-1] + (d, d))


@dataclass
class FixedDomainProblem:
    """
    Pulled-back state problem on the frozen positivity set of a base field.

    Free nodes are the positive nodes off the outer Dirichlet boundary; the
    other nodes keep the base values (zero outside the positivity set). The
    base state solves the t = 0 problem, so u_0 o Phi_0 equals it exactly.
    """

    grid: Grid
    p: JParams
    signed: np.ndarray = field(repr=False)
    positive: np.ndarray = field(repr=False)
    free: np.ndarray = field(repr=False)
    boundary: np.ndarray = field(repr=False)
    wall_weights: np.ndarray = field(repr=False)
    fractions: np.ndarray = field(repr=False)
    gauss: np.ndarray = field(repr=False)
    centroids: np.ndarray = field(repr=False)
    base: np.ndarray = field(default=None, repr=False)  # type: ignore[assignment]

    @classmethod
    def from_field(cls, u: ScalarField, p: JParams) -> "FixedDomainProblem":
        grid = u.grid
        require_planar(grid)
        phi = np.asarray(signed_extension(u).values)
        positive = np.asarray(u.values) > u.tau()
        outer = dirichlet_mask(grid)
        free = (positive & ~outer).ravel()
        if not np.any(free):
            raise DomainError("Empty positivity set: no free nodes to vary")
        boundary = np.where(positive & outer, np.asarray(u.values), 0.0).ravel()
        problem = cls(
            grid=grid,
            p=p,
            signed=phi,
            positive=positive,
            free=free,
            boundary=boundary,
            wall_weights=wall_lumped(grid).ravel(),
            fractions=triangle_fractions(grid, phi),
            gauss=gauss_coordinates(grid),
            centroids=triangle_centroids(grid),
        )
        problem.base = problem.state(
            _identity_at(problem.gauss), np.full(grid.num_nodes, p.m)
        )
        return problem

    @property
    def triangle_area(self) -> float:
        return 0.5 * self.grid.h**2

    def node_points(self) -> np.ndarray:
        return self.grid.coords().reshape(-1, self.grid.dim)

    def stiffness(self, B_gauss: np.ndarray) -> sp.csr_matrix:
        return stiffness_matrix(self.grid, B_gauss)

    def solve(
        self, K: sp.csr_matrix, load: np.ndarray, fixed_values: np.ndarray
    ) -> np.ndarray:
        """K v = load at the free nodes, v = fixed_values elsewhere (direct)."""
        v = np.where(self.free, 0.0, fixed_values)
        idx = np.flatnonzero(self.free)
        K_ff = K[idx][:, idx].tocsc()
        rhs = load[idx] - (K @ v)[idx]
        v[idx] = spsolve(K_ff, rhs)
        return v

    def state(self, B_gauss: np.ndarray, m_nodes: np.ndarray) -> np.ndarray:
        """Minimizer of v.K(B)v + 2 sum l_i m_i v_i with the boundary values."""
        load = -self.wall_weights * m_nodes
        return self.solve(self.stiffness(B_gauss), load, self.boundary)

    def volume(self, density: np.ndarray) -> float:
        """Integral over the frozen positivity set of a centroid sampled density."""
        return float(np.sum(self.triangle_area * self.fractions * density))

    def energy(
        self,
        values: np.ndarray,
        B_gauss: np.ndarray,
        m_nodes: np.ndarray,
        Q_centroids: np.ndarray,
    ) -> float:
        K = self.stiffness(B_gauss)
        dirichlet = float(values @ (K @ values))
        wall = 2.0 * float(np.sum(self.wall_weights * m_nodes * values))
        return dirichlet + self.volume(Q_centroids) + wall

    def energy_at(self, eta: FlowSpec, t: float, resolve: bool = True) -> float:
        """Energy of the pulled-back problem at time t (re-solved state)."""
        q, m = self.p.q, self.p.m
        B = transported(eta, t, self.gauss, m, q).B
        m_nodes = transported(eta, t, self.node_points(), m, q).m
        Q = transported(eta, t, self.centroids, m, q).Q
        values = self.state(B, m_nodes) if resolve else self.base
        return self.energy(values, B, m_nodes, Q)

    def positive_gradients(self) -> np.ndarray:
        """
        Nodal gradients of the base field seen from inside its positivity set.

        A node takes the mean gradient of its incident cells whose corners are
        all positive; other nodes copy the nearest such node. Exact for clipped
        affine fields. Shape (num_nodes, 2).
        """
        grid = self.grid
        cells = np.ones(grid.cell_shape, dtype=bool)
        corners = [
            tuple(slice(b, b + n) for b, n in zip(bits, grid.cell_shape))
            for bits in np.ndindex(*([2] * grid.dim))
        ]
        for index in corners:
            cells &= self.positive[index]
        if not np.any(cells):
            raise DomainError("No grid cell lies inside the positivity set")
        cell_grads = triangle_gradients(grid, self.signed).mean(axis=1)
        cell_grads = cell_grads.reshape(grid.cell_shape + (grid.dim,))
        cell_grads[~cells] = 0.0

        total = np.zeros(grid.shape + (grid.dim,))
        count = np.zeros(grid.shape)
        for index in corners:
            total[index] += cell_grads
            count[index] += cells
        known = count > 0
        grads = np.zeros_like(total)
        grads[known] = total[known] / count[known][:, None]
        _, nearest = distance_transform_edt(~known, return_indices=True)
        return grads[tuple(nearest)].reshape(-1, grid.dim)


@dataclass(frozen=True)
class LinearizedState:
    """
    First and second variations of the state and the normal-velocity field.

    delta_u and delta2_u follow the pulled-back problem with m_t = m |det D Phi|;
    material_u is the first variation when the wall coefficient follows the
    wall's own Jacobian, the one that satisfies u' = material_u - eta . grad u.
    The two coincide when m = 0.
    """

    problem: FixedDomainProblem = field(repr=False)
    delta_u: ScalarField = field(repr=False)
    delta2_u: ScalarField = field(repr=False)
    material_u: ScalarField = field(repr=False)
    uprime: ScalarField = field(repr=False)
    uprime_boundary_error: float = 0.0
    identity_residual: float = 0.0


def linearized_state(
    u: ScalarField,
    eta: FlowSpec,
    p: JParams,
    problem: Optional[FixedDomainProblem] = None,
) -> LinearizedState:
    """
    du, d2u from the linearized state equations and u' with u' = q(eta.nu)
    on the frozen interface nodes, zero conormal derivative on the wall.
    Normals and the transport term use positive-side gradients of u.
    """
    prob = problem or FixedDomainProblem.from_field(u, p)
    grid = prob.grid
    sd = shape_derivatives(eta, p.m, p.q)
    nodes = prob.node_points()
    ww = prob.wall_weights
    zeros = np.zeros(grid.num_nodes)

    K0 = prob.stiffness(_identity_at(prob.gauss))
    KdB = prob.stiffness(sd.deltaB(prob.gauss))
    Kd2B = prob.stiffness(sd.delta2B(prob.gauss))
    ub = prob.base

    du = prob.solve(K0, -(KdB @ ub) - ww * sd.deltam(nodes), zeros)
    d2u = prob.solve(
        K0, -(KdB @ du) - (Kd2B @ ub) - ww * sd.delta2m(nodes), zeros
    )
    material = du
    if p.m != 0.0:
        material = prob.solve(
            K0, -(KdB @ ub) - ww * sd.deltam_tangential(nodes), zeros
        )

    grads = prob.positive_gradients()
    normals, _ = _outer_normals(grads)
    eta_nodes = eta(nodes)
    target = p.q * np.einsum("nk,nk->n", eta_nodes, normals)
    up = prob.solve(K0, zeros, target)
    fixed = ~prob.free
    boundary_error = float(np.abs(up[fixed] - target[fixed]).max(initial=0.0))

    transport = np.einsum("nk,nk->n", eta_nodes, grads)
    identity = float(
        np.abs(up - (material - transport))[prob.free].max(initial=0.0)
    )
    return LinearizedState(
        problem=prob,
        delta_u=ScalarField(grid, du.reshape(grid.shape), nonneg=False),
        delta2_u=ScalarField(grid, d2u.reshape(grid.shape), nonneg=False),
        material_u=ScalarField(grid, material.reshape(grid.shape), nonneg=False),
        uprime=ScalarField(grid, up.reshape(grid.shape), nonneg=False),
        uprime_boundary_error=boundary_error,
        identity_residual=identity,
    )


# ==============================================================================
# Taylor expansion of the transported state
# ==============================================================================


@dataclass(frozen=True)
class TaylorReport:
    ts: List[float]
    remainder1: List[float]
    remainder2: List[float]

    @property
    def slope1(self) -> Optional[float]:
        return fit_rate(self.ts, self.remainder1)

    @property
    def slope2(self) -> Optional[float]:
        return fit_rate(self.ts, self.remainder2)

    def passed(self, first: float = 1.9, second: float = 2.5) -> bool:
        s1, s2 = self.slope1, self.slope2
        exact = max(self.remainder1 + self.remainder2, default=0.0) <= 1e-13
        if exact:
            return True
        return s1 is not None and s2 is not None and s1 >= first and s2 >= second

    def rows(self) -> List[List[float]]:
        return [list(r) for r in zip(self.ts, self.remainder1, self.remainder2)]

    def as_dict(self) -> Dict[str, Any]:
        return {
            "ts": self.ts,
            "remainder1": self.remainder1,
            "remainder2": self.remainder2,
            "slope1": self.slope1,
            "slope2": self.slope2,
            "passed": self.passed(),
        }


def _require_interior_support(prob: FixedDomainProblem, eta: FlowSpec) -> None:
    outer = dirichlet_mask(prob.grid).ravel()
    values = eta(prob.node_points()[outer])
    if np.abs(values).max(initial=0.0) > 1e-14:
        raise DomainError(
            f"Vector field '{eta.family}' does not vanish on the outer boundary"
        )


def taylor_flow_check(
    u0: ScalarField,
    eta: FlowSpec,
    ts: Sequence[float] = TAYLOR_TS,
    p: Optional[JParams] = None,
) -> TaylorReport:
    """
    Sup remainders of u_t o Phi_t - u - t du and of the same minus t^2 d2u.

    The transported state is a full solve of the pulled-back problem with B_t
    and m_t for each t; the remainders should decay like t^2 and t^3.

    Raises:
        DomainError: eta does not vanish on the outer Dirichlet boundary
    """
    p = p or JParams(1.0, 0.0)
    prob = FixedDomainProblem.from_field(u0, p)
    _require_interior_support(prob, eta)
    lin = linearized_state(u0, eta, p, prob)
    du = np.asarray(lin.delta_u.values).ravel()
    d2u = np.asarray(lin.delta2_u.values).ravel()
    nodes = prob.node_points()

    r1, r2 = [], []
    for t in ts:
        B = transported(eta, t, prob.gauss, p.m, p.q).B
        m_nodes = transported(eta, t, nodes, p.m, p.q).m
        ut = prob.state(B, m_nodes)
        first = ut - prob.base - t * du
        r1.append(float(np.abs(first).max(initial=0.0)))
        r2.append(float(np.abs(first - t * t * d2u).max(initial=0.0)))
        logger.debug(f"Taylor t={t:.1e}: remainders {r1[-1]:.3e}, {r2[-1]:.3e}")
    report = TaylorReport([float(t) for t in ts], r1, r2)
    logger.info(
        f"Taylor check '{eta.family}': slopes {report.slope1}, {report.slope2}"
    )
    return report


# ==============================================================================
# First and second variation of J
# ==============================================================================


def _q1_gradient(phi: np.ndarray, grid: Grid, points: np.ndarray) -> np.ndarray:
    """Gradient of the bilinear interpolant of phi at points (d = 2)."""
    pts = np.asarray(points, dtype=float)
    lower = np.asarray(grid.lower)
    rel = (pts - lower) / grid.h
    cells = np.clip(np.floor(rel).astype(int), 0, np.asarray(grid.cell_shape) - 1)
    xi = rel - cells
    i, j = cells[..., 0], cells[..., 1]
    u00, u10 = phi[i, j], phi[i + 1, j]
    u01, u11 = phi[i, j + 1], phi[i + 1, j + 1]
    gx = ((1.0 - xi[..., 1]) * (u10 - u00) + xi[..., 1] * (u11 - u01)) / grid.h
    gy = ((1.0 - xi[..., 0]) * (u01 - u00) + xi[..., 0] * (u11 - u10)) / grid.h
    return np.stack([gx, gy], axis=-1)


def _outer_normals(grads: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    norm = np.linalg.norm(grads, axis=-1)
    ok = norm > 1e-12
    normals = np.zeros_like(grads)
    normals[ok] = -grads[ok] / norm[ok, None]
    return normals, ok


@dataclass(frozen=True)
class FirstVariation:
    """
    Both routes of the first variation of J.

    The volume route differentiates the pulled-back energy whose wall weight is
    m |det D Phi_t|. The surface route differentiates J of u o Phi_t^-1, whose
    wall weight is the wall's own Jacobian. The two differ by wall_correction
    = 2 m int_wall u d_d eta_d at every h, so routes are compared after
    subtracting it. magnitude is the integral of the absolute integrands.
    """

    volume: float
    surface: float
    wall_term: float
    wall_correction: float = 0.0
    magnitude: float = 0.0

    @property
    def difference(self) -> float:
        return abs(self.volume - self.wall_correction - self.surface)

    @property
    def relative_difference(self) -> float:
        return self.difference / max(self.magnitude, 1e-300)

    def as_dict(self) -> Dict[str, float]:
        return {
            "volume": self.volume,
            "surface": self.surface,
            "wall_term": self.wall_term,
            "wall_correction": self.wall_correction,
            "magnitude": self.magnitude,
            "difference": self.difference,
        }


def transported_energy(u: ScalarField, eta: FlowSpec, t: float, p: JParams) -> float:
    """
    Pulled-back J of u o Phi_t^-1 by change of variables, with wall weight
    m |det D Phi_t| and the same cut quadrature as the volume route; d/dt at 0
    equals that route.
    """
    grid = u.grid
    require_planar(grid)
    phi = np.asarray(signed_extension(u).values)
    frac = triangle_fractions(grid, phi)
    grads = triangle_gradients(grid, phi)
    centroids = triangle_centroids(grid)
    tri = transported(eta, t, centroids, p.m, p.q)
    area = 0.5 * grid.h**2
    dirichlet = np.einsum("ctk,ctkl,ctl->ct", grads, tri.B, grads)
    bulk = float(np.sum(area * frac * (dirichlet + tri.Q)))
    faces = grid.wall_face_centers()
    wall = transported(eta, t, faces, p.m, p.q).m
    return bulk + 2.0 * float(np.sum(wall * wall_positive_integrals(grid, phi)))


def first_variation_J(
    u: ScalarField,
    eta: FlowSpec,
    p: JParams,
    fb: Optional[FreeBoundary] = None,
) -> FirstVariation:
    """
    Volume route: int div eta (|grad u|^2 + q^2) - 2 grad u . D eta grad u
    plus 2 m int_wall u div eta. Surface route: int (nu . eta)(q^2 - |grad u|^2)
    over the extracted interface with nu the outer normal. The wall correction
    is 2 m int_wall u d_d eta_d.
    """
    grid = u.grid
    require_planar(grid)
    phi = np.asarray(signed_extension(u).values)
    q2 = p.q**2

    frac = triangle_fractions(grid, phi)
    grads = triangle_gradients(grid, phi)
    centroids = triangle_centroids(grid)
    _, J, _ = eta.jet(centroids)
    div = np.trace(J, axis1=-2, axis2=-1)
    sq = np.einsum("ctk,ctk->ct", grads, grads)
    stretch = np.einsum("ctk,ctkl,ctl->ct", grads, J, grads)
    area = 0.5 * grid.h**2
    integrand = area * frac * (div * (sq + q2) - 2.0 * stretch)
    interior = float(np.sum(integrand))

    faces = grid.wall_face_centers()
    _, Jw, _ = eta.jet(faces)
    div_wall = np.trace(Jw, axis1=-2, axis2=-1)
    positive_wall = wall_positive_integrals(grid, phi)
    wall = 2.0 * p.m * float(np.sum(div_wall * positive_wall))
    normal_stretch = Jw[..., grid.dim - 1, grid.dim - 1]
    correction = 2.0 * p.m * float(np.sum(normal_stretch * positive_wall))

    fb = fb or extract_fb(u)
    surface = 0.0
    surface_abs = 0.0
    for line in fb.polylines:
        if len(line) < 2:
            continue
        mids = 0.5 * (line[1:] + line[:-1])
        lengths = np.linalg.norm(line[1:] - line[:-1], axis=-1)
        g = _q1_gradient(phi, grid, mids)
        normals, ok = _outer_normals(g)
        flux = np.einsum("nk,nk->n", normals, eta(mids))
        jump = q2 - np.einsum("nk,nk->n", g, g)
        terms = (lengths * flux * jump)[ok]
        surface += float(np.sum(terms))
        surface_abs += float(np.sum(np.abs(terms)))

    result = FirstVariation(
        volume=interior + wall,
        surface=surface,
        wall_term=wall,
        wall_correction=correction,
        magnitude=float(np.sum(np.abs(integrand)))
        + abs(wall)
        + abs(correction)
        + surface_abs,
    )
    logger.info(
        f"First variation '{eta.family}': volume {result.volume:.6g}, "
        f"surface {result.surface:.6g}, wall correction {correction:.6g}"
    )
    return result


def _vertex_weights(line: np.ndarray) -> np.ndarray:
    lengths = np.linalg.norm(np.diff(line, axis=0), axis=-1)
    weights = np.zeros(len(line))
    weights[:-1] += 0.5 * lengths
    weights[1:] += 0.5 * lengths
    return weights


def _vertex_curvature(line: np.ndarray, samples: np.ndarray) -> np.ndarray:
    """Curvature at every vertex, window samples padded with the nearest value."""
    if len(samples) == 0:
        return np.zeros(len(line))
    half = (len(line) - len(samples)) // 2
    H = np.empty(len(line))
    H[half : half + len(samples)] = samples[:, 2]
    H[:half] = samples[0, 2]
    H[half + len(samples) :] = samples[-1, 2]
    return H


@dataclass(frozen=True)
class SecondVariation:
    """
    Both routes of half the second variation of J.

    As for the first variation, the volume route carries the m |det D Phi_t|
    wall weight and wall_correction is its excess over the same route taken
    with the wall's own Jacobian; routes are compared after subtracting it.
    """

    volume: float
    surface: float
    finite_difference: float
    dirichlet_uprime: float
    curvature_term: float
    identity_residual: float
    wall_correction: float = 0.0

    @property
    def difference(self) -> float:
        return abs(self.volume - self.wall_correction - self.surface)

    def as_dict(self) -> Dict[str, float]:
        return {
            "volume": self.volume,
            "surface": self.surface,
            "finite_difference": self.finite_difference,
            "dirichlet_uprime": self.dirichlet_uprime,
            "curvature_term": self.curvature_term,
            "identity_residual": self.identity_residual,
            "wall_correction": self.wall_correction,
            "difference": self.difference,
        }


def second_variation_J(
    u: ScalarField,
    eta: FlowSpec,
    p: JParams,
    fb: Optional[FreeBoundary] = None,
    t_fd: float = 1e-2,
) -> SecondVariation:
    """
    Half the second derivative of t -> J(u_t) by two routes.

    Volume route: int grad u . d2B grad u - |grad du|^2 + d2Q + 2 int_wall u d2m
    on the fixed-domain problem. Surface route: int |grad u'|^2 minus
    int q^2 (eta . nu)^2 H over the interface. The central second difference
    of the re-solved energy is reported alongside.
    """
    prob = FixedDomainProblem.from_field(u, p)
    grid = prob.grid
    lin = linearized_state(u, eta, p, prob)
    sd = shape_derivatives(eta, p.m, p.q)
    ub = prob.base
    nodes = prob.node_points()

    K0 = prob.stiffness(_identity_at(prob.gauss))
    Kd2B = prob.stiffness(sd.delta2B(prob.gauss))
    common = float(ub @ (Kd2B @ ub)) + prob.volume(sd.delta2Q(prob.centroids))

    def volume_route(du: np.ndarray, d2m: np.ndarray) -> float:
        wall = 2.0 * float(np.sum(prob.wall_weights * d2m * ub))
        return common - float(du @ (K0 @ du)) + wall

    volume = volume_route(np.asarray(lin.delta_u.values).ravel(), sd.delta2m(nodes))
    correction = 0.0
    if p.m != 0.0:
        correction = volume - volume_route(
            np.asarray(lin.material_u.values).ravel(), sd.delta2m_tangential(nodes)
        )

    up = np.asarray(lin.uprime.values)
    grads = triangle_gradients(grid, up)
    dirichlet = prob.volume(np.einsum("ctk,ctk->ct", grads, grads))

    fb = fb or extract_fb(u)
    curvature = 0.0
    for line, samples in zip(fb.polylines, fb.curvature):
        if len(line) < 2:
            continue
        g = _q1_gradient(prob.signed, grid, line)
        normals, ok = _outer_normals(g)
        flux = np.einsum("nk,nk->n", eta(line), normals)
        H = _vertex_curvature(line, samples)
        curvature += float(np.sum((_vertex_weights(line) * p.q**2 * flux**2 * H)[ok]))

    if eta.t_max <= t_fd:
        t_fd = 0.5 * eta.t_max
    e_plus = prob.energy_at(eta, t_fd)
    e_zero = prob.energy_at(eta, 0.0)
    e_minus = prob.energy_at(eta, -t_fd)
    fd = 0.5 * (e_plus - 2.0 * e_zero + e_minus) / t_fd**2

    result = SecondVariation(
        volume=volume,
        surface=dirichlet - curvature,
        finite_difference=fd,
        dirichlet_uprime=dirichlet,
        curvature_term=curvature,
        identity_residual=lin.identity_residual,
        wall_correction=correction,
    )
    logger.info(
        f"Second variation '{eta.family}': volume {volume:.6g}, "
        f"surface {result.surface:.6g}, finite difference {fd:.6g}"
    )
    return result


# ==============================================================================
# Curvature audit and wedge variation
# ==============================================================================


def curvature_audit(
    u: ScalarField,
    p: JParams,
    fb: Optional[FreeBoundary] = None,
    curvature_tol: float = 0.1,
    gradient_tol: Optional[float] = None,
) -> AuditReport:
    """
    H >= -curvature_tol along the interface away from the contact band and
    the box sides; |grad u| <= q (1 + gradient_tol) on cells inside {u > 0}.
    gradient_tol defaults to 10 h.
    """
    grid = u.grid
    require_planar(grid)
    h = grid.h
    grad_tol = 10.0 * h if gradient_tol is None else gradient_tol
    fb = fb or extract_fb(u)
    report = AuditReport()

    lo, hi = np.asarray(grid.lower), np.asarray(grid.upper)
    H: List[float] = []
    for samples in fb.curvature:
        if len(samples) == 0:
            continue
        keep = samples[:, 1] >= THETA_BAND[1] * h
        keep &= (samples[:, 0] >= lo[0] + 2.0 * h) & (samples[:, 0] <= hi[0] - 2.0 * h)
        keep &= samples[:, 1] <= hi[1] - 2.0 * h
        H.extend(samples[keep, 2].tolist())
    if H:
        worst = -min(H)
        verdict = Verdict.PASS if worst <= curvature_tol else Verdict.FAIL
        report.add(
            AuditCheck(
                "curvature", verdict, worst, curvature_tol, len(H), {"min_H": min(H)}
            )
        )
    else:
        report.add(
            AuditCheck("curvature", Verdict.INCONCLUSIVE, math.nan, curvature_tol)
        )

    values = np.asarray(u.values)
    inside = np.ones(grid.cell_shape, dtype=bool)
    for bits in np.ndindex(2, 2):
        index = tuple(slice(b, b + n) for b, n in zip(bits, grid.cell_shape))
        inside &= values[index] > u.tau()
    if np.any(inside):
        g = triangle_gradients(grid, values).reshape(grid.cell_shape + (2, 2))[inside]
        ratio = float(np.linalg.norm(g, axis=-1).max()) / p.q - 1.0
        verdict = Verdict.PASS if ratio <= grad_tol else Verdict.FAIL
        report.add(
            AuditCheck("gradient_bound", verdict, ratio, grad_tol, int(inside.sum()))
        )
    else:
        report.add(
            AuditCheck("gradient_bound", Verdict.INCONCLUSIVE, math.nan, grad_tol)
        )
    logger.info(f"Curvature audit: {report.verdict.value}")
    return report


@dataclass(frozen=True)
class WedgeVariation:
    q: float
    m: float
    h: float
    ts: List[float]
    energies: List[float]
    fitted: float
    predicted: float

    @property
    def relative_error(self) -> float:
        return abs(self.fitted - self.predicted) / abs(self.predicted)

    def as_dict(self) -> Dict[str, Any]:
        return {
            "q": self.q,
            "m": self.m,
            "h": self.h,
            "ts": self.ts,
            "energies": self.energies,
            "fitted": self.fitted,
            "predicted": self.predicted,
            "relative_error": self.relative_error,
        }


def wedge_variation_check(
    q: float,
    m: float,
    h: float = 1 / 512,
    ts: Optional[Sequence[float]] = None,
) -> WedgeVariation:
    """Fitted curvature of t -> J(v_t) on the wedge rectangle against f''(0)."""
    ts = list(np.linspace(0.0, 0.05, 11)) if ts is None else list(ts)
    grid = wedge_rectangle_grid(q, m, h)
    p = JParams(q, m)
    energies = []
    for t in ts:
        v = wedge_competitor(q, m, t, grid=grid)
        signed = wedge_competitor(q, m, t, grid=grid, signed=True)
        energies.append(energy_J(v, p, quadrature="cut", signed=signed).total)
    fitted = wedge_curvature_fit(ts, energies)
    _, predicted = wedge_second_variation(q, m)
    result = WedgeVariation(
        q, m, h, [float(t) for t in ts], energies, fitted, predicted
    )
    logger.info(
        f"Wedge variation q={q}, m={m}: fitted {fitted:.6g}, "
        f"predicted {predicted:.6g}"
    )
    return result


__all__ = [
    "ETA_FAMILIES",
    "register_eta",
    "bump_profile",
    "FlowSpec",
    "make_flow",
    "FlowImage",
    "flow_map",
    "Transported",
    "transported",
    "ShapeDerivatives",
    "shape_derivatives",
    "ExpansionReport",
    "expansion_check",
    "FixedDomainProblem",
    "LinearizedState",
    "linearized_state",
    "TaylorReport",
    "taylor_flow_check",
    "FirstVariation",
    "transported_energy",
    "first_variation_J",
    "SecondVariation",
    "second_variation_J",
    "curvature_audit",
    "WedgeVariation",
    "wedge_variation_check",
]
