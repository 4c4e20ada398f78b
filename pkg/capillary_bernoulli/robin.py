# capillary_bernoulli/robin.py
"""
Spherical Robin problems, the Hardy radial profile and Hessian subsolutions.

On an arc [theta1, theta2] the first Robin eigenvalue is computed by shooting
on the Pruefer angle of -v'' = mu v with the natural endpoint conditions
v'(theta1) = -H1 v(theta1) and v'(theta2) = H2 v(theta2); Lambda = -mu is
minus the minimum of the quotient (int v'^2 - H v^2 at the ends) / int v^2.
In d = 3 only the quotient is evaluated, on a P1 triangulation of a
latitude-longitude patch of the unit sphere.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Optional, Tuple, Union

import numpy as np
import scipy.sparse as sp
from scipy.integrate import quad, simpson, solve_ivp
from scipy.ndimage import minimum_filter
from scipy.optimize import brentq

from .exceptions import ConfigurationError, DomainError
from .fields import ScalarField, _shifted, sorted_eigh

# Setup logging
logger = logging.getLogger(__name__)

EIGEN_SAMPLES = 4097
ODE_RTOL = 1e-12
ODE_ATOL = 1e-13
BRACKET_STEPS = 60

# ==============================================================================
# Arc problems (d = 2)
# ==============================================================================


@dataclass(frozen=True)
class RobinProblem:
    """Arc [theta1, theta2] of the upper half circle; H = 0 means Neumann."""

    theta1: float
    theta2: float
    H1: float = 0.0
    H2: float = 0.0

    def __post_init__(self) -> None:
        length = self.theta2 - self.theta1
        if not (length > 0.0 and length <= math.pi + 1e-12):
            raise DomainError(
                f"Degenerate arc [{self.theta1}, {self.theta2}]: "
                "length must lie in (0, pi]"
            )
        if not (math.isfinite(self.H1) and math.isfinite(self.H2)):
            raise DomainError("Robin weights must be finite")

    @property
    def length(self) -> float:
        return self.theta2 - self.theta1

    @property
    def start_angle(self) -> float:
        return 0.5 * math.pi + math.atan(self.H1)

    @property
    def target_angle(self) -> float:
        return 0.5 * math.pi - math.atan(self.H2)


TestFunction = Callable[[np.ndarray], np.ndarray]


def _central_derivative(v: TestFunction, step: float = 1e-4) -> TestFunction:
    def dv(theta: np.ndarray) -> np.ndarray:
        t = np.asarray(theta, dtype=float)
        return (
            -v(t + 2 * step) + 8.0 * v(t + step) - 8.0 * v(t - step) + v(t - 2 * step)
        ) / (12.0 * step)

    return dv


def robin_quotient(
    dom: RobinProblem, v: TestFunction, dv: Optional[TestFunction] = None
) -> float:
    """(int v'^2 - H1 v(theta1)^2 - H2 v(theta2)^2) / int v^2 by adaptive quadrature."""
    dv = dv or _central_derivative(v)
    a, b = dom.theta1, dom.theta2
    kinetic, _ = quad(lambda t: float(dv(np.asarray(t))) ** 2, a, b, limit=200)
    mass, _ = quad(lambda t: float(v(np.asarray(t))) ** 2, a, b, limit=200)
    if mass <= 0.0:
        raise DomainError("Test function vanishes identically on the arc")
    ends = dom.H1 * float(v(np.asarray(a))) ** 2 + dom.H2 * float(v(np.asarray(b))) ** 2
    return (kinetic - ends) / mass


def _pruefer_mismatch(dom: RobinProblem, mu: float) -> float:
    sol = solve_ivp(
        lambda t, y: [math.cos(y[0]) ** 2 + mu * math.sin(y[0]) ** 2],
        (dom.theta1, dom.theta2),
        [dom.start_angle],
        method="DOP853",
        rtol=ODE_RTOL,
        atol=ODE_ATOL,
    )
    return float(sol.y[0, -1]) - dom.target_angle


def _bracket(dom: RobinProblem) -> Tuple[float, float]:
    lo, hi = -1.0, max(1.0, (math.pi / dom.length) ** 2)
    for _ in range(BRACKET_STEPS):
        if _pruefer_mismatch(dom, lo) < 0.0:
            break
        lo *= 2.0
    else:
        raise DomainError(f"No lower bracket for the Robin eigenvalue of {dom}")
    for _ in range(BRACKET_STEPS):
        if _pruefer_mismatch(dom, hi) > 0.0:
            break
        hi *= 2.0
    else:
        raise DomainError(f"No upper bracket for the Robin eigenvalue of {dom}")
    return lo, hi


@dataclass(frozen=True)
class RobinSolution:
    problem: RobinProblem
    mu: float
    theta: np.ndarray = field(repr=False)
    v: np.ndarray = field(repr=False)
    dv: np.ndarray = field(repr=False)

    @property
    def Lambda(self) -> float:
        return -self.mu

    @property
    def quotient(self) -> float:
        """Quotient of the sampled eigenfunction (Simpson)."""
        dom = self.problem
        kinetic = simpson(self.dv**2, x=self.theta)
        mass = simpson(self.v**2, x=self.theta)
        ends = dom.H1 * self.v[0] ** 2 + dom.H2 * self.v[-1] ** 2
        return float((kinetic - ends) / mass)

    def rows(self) -> List[List[float]]:
        return [[float(t), float(v)] for t, v in zip(self.theta, self.v)]

    def as_dict(self) -> Dict[str, Any]:
        dom = self.problem
        return {
            "theta1": dom.theta1,
            "theta2": dom.theta2,
            "H1": dom.H1,
            "H2": dom.H2,
            "Lambda": self.Lambda,
            "quotient": self.quotient,
        }


def robin_min_d2(dom: RobinProblem) -> RobinSolution:
    """First Robin eigenpair of the arc by Pruefer shooting and Brent's method."""
    lo, hi = _bracket(dom)
    mu = brentq(lambda s: _pruefer_mismatch(dom, s), lo, hi, xtol=1e-14, rtol=1e-14)

    theta = np.linspace(dom.theta1, dom.theta2, EIGEN_SAMPLES)
    phi0 = dom.start_angle
    sol = solve_ivp(
        lambda t, y: [y[1], -mu * y[0]],
        (dom.theta1, dom.theta2),
        [math.sin(phi0), math.cos(phi0)],
        method="DOP853",
        t_eval=theta,
        rtol=ODE_RTOL,
        atol=ODE_ATOL,
    )
    v, dv = sol.y
    scale = float(np.max(np.abs(v)))
    sign = 1.0 if v[np.argmax(np.abs(v))] > 0 else -1.0
    result = RobinSolution(dom, float(mu), theta, sign * v / scale, sign * dv / scale)
    logger.info(f"Robin arc {dom}: Lambda = {result.Lambda:.10g}")
    return result


# ==============================================================================
# Hardy profile
# ==============================================================================


def hardy_threshold(d: int) -> float:
    return (d - 2) ** 2 / 4.0


def lambda_exceeds_hardy_threshold(Lambda: float, d: int) -> bool:
    """Lambda > (d-2)^2/4, the regime where the radial Hardy profile exists."""
    return Lambda > hardy_threshold(d)


@dataclass(frozen=True)
class HardyProfile:
    """f(r) = r^sigma cos(zeta ln r) between its zeros r0 < 1 < r1."""

    beta: float
    d: int

    def __post_init__(self) -> None:
        if not self.beta > hardy_threshold(self.d):
            raise DomainError(
                f"Hardy profile needs beta > (d-2)^2/4 = {hardy_threshold(self.d)}, "
                f"got {self.beta}"
            )

    @property
    def sigma(self) -> float:
        return -(self.d - 2) / 2.0

    @property
    def zeta(self) -> float:
        return math.sqrt(self.beta - hardy_threshold(self.d))

    @property
    def r0(self) -> float:
        return math.exp(-math.pi / (2.0 * self.zeta))

    @property
    def r1(self) -> float:
        return math.exp(math.pi / (2.0 * self.zeta))

    def __call__(self, r: np.ndarray) -> np.ndarray:
        r = np.asarray(r, dtype=float)
        return r**self.sigma * np.cos(self.zeta * np.log(r))

    def derivative(self, r: np.ndarray) -> np.ndarray:
        r = np.asarray(r, dtype=float)
        z = self.zeta * np.log(r)
        return r ** (self.sigma - 1.0) * (
            self.sigma * np.cos(z) - self.zeta * np.sin(z)
        )

    def cutoff(self, r: np.ndarray) -> np.ndarray:
        """|f| on [r0, r1], zero elsewhere."""
        r = np.asarray(r, dtype=float)
        inside = (r >= self.r0) & (r <= self.r1)
        safe = np.where(inside, r, 1.0)
        return np.where(inside, np.abs(self(safe)), 0.0)

    def rayleigh_ratio(self) -> float:
        """int f'^2 r^(d-1) / int f^2 r^(d-3) over [r0, r1]; equals beta."""
        top, _ = quad(
            lambda r: self.derivative(r) ** 2 * r ** (self.d - 1), self.r0, self.r1
        )
        bottom, _ = quad(lambda r: self(r) ** 2 * r ** (self.d - 3), self.r0, self.r1)
        return top / bottom


def hardy_profile(beta: float, d: int) -> HardyProfile:
    return HardyProfile(float(beta), int(d))


# ==============================================================================
# Geodesic patches (d = 3)
# ==============================================================================


@dataclass(frozen=True)
class GeodesicPatch:
    """
    P1 triangulation of {lon in range, 0 <= lat <= lat_max} on the unit sphere.

    The wall is the equator lat = 0 (Neumann); every other boundary edge
    carries the Robin weight.
    """

    vertices: np.ndarray = field(repr=False)
    triangles: np.ndarray = field(repr=False)
    robin_edges: np.ndarray = field(repr=False)
    lon: np.ndarray = field(repr=False)
    lat: np.ndarray = field(repr=False)
    periodic: bool = False

    @property
    def area(self) -> float:
        return float(self._triangle_areas().sum())

    @property
    def robin_length(self) -> float:
        p = self.vertices[self.robin_edges]
        return float(np.linalg.norm(p[:, 1] - p[:, 0], axis=-1).sum())

    def _triangle_areas(self) -> np.ndarray:
        p = self.vertices[self.triangles]
        cross = np.cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0])
        return 0.5 * np.linalg.norm(cross, axis=-1)

    def stiffness(self) -> sp.csr_matrix:
        p = self.vertices[self.triangles]
        area = self._triangle_areas()
        # edge opposite vertex i
        edges = np.stack(
            [p[:, 2] - p[:, 1], p[:, 0] - p[:, 2], p[:, 1] - p[:, 0]], axis=1
        )
        local = np.einsum("tik,tjk->tij", edges, edges) / (4.0 * area[:, None, None])
        return self._assemble(self.triangles, local)

    def mass(self) -> sp.csr_matrix:
        area = self._triangle_areas()
        ref = (np.ones((3, 3)) + np.eye(3)) / 12.0
        return self._assemble(self.triangles, area[:, None, None] * ref)

    def robin_mass(self) -> sp.csr_matrix:
        p = self.vertices[self.robin_edges]
        length = np.linalg.norm(p[:, 1] - p[:, 0], axis=-1)
        ref = (np.ones((2, 2)) + np.eye(2)) / 6.0
        return self._assemble(self.robin_edges, length[:, None, None] * ref)

    def _assemble(self, cells: np.ndarray, local: np.ndarray) -> sp.csr_matrix:
        k = cells.shape[1]
        n = len(self.vertices)
        rows = np.repeat(cells, k, axis=1).ravel()
        cols = np.tile(cells, (1, k)).ravel()
        return sp.coo_matrix((local.ravel(), (rows, cols)), shape=(n, n)).tocsr()


def geodesic_patch(
    lon_range: Tuple[float, float] = (0.0, 2.0 * math.pi),
    lat_max: float = math.pi / 4.0,
    n_lon: int = 128,
    n_lat: int = 32,
) -> GeodesicPatch:
    """Latitude-longitude patch; a longitude span of 2 pi wraps around."""
    lo, hi = lon_range
    if not (0.0 < lat_max < 0.5 * math.pi) or not hi > lo or hi - lo > 2 * math.pi:
        raise DomainError(
            f"Invalid patch lon {lon_range}, lat_max {lat_max}: need a nonempty "
            "longitude span of at most 2 pi and 0 < lat_max < pi/2"
        )
    if n_lon < 3 or n_lat < 1:
        raise ConfigurationError("Patch needs n_lon >= 3 and n_lat >= 1", key="patch")
    periodic = math.isclose(hi - lo, 2.0 * math.pi)
    columns = n_lon if periodic else n_lon + 1
    lon = lo + (hi - lo) * np.arange(columns) / n_lon
    lat = lat_max * np.arange(n_lat + 1) / n_lat
    L, P = np.meshgrid(lon, lat, indexing="ij")
    vertices = np.stack(
        [np.cos(P) * np.cos(L), np.cos(P) * np.sin(L), np.sin(P)], axis=-1
    ).reshape(-1, 3)

    def index(i: int, j: int) -> int:
        return (i % columns) * (n_lat + 1) + j

    triangles = []
    for i in range(n_lon):
        for j in range(n_lat):
            a, b = index(i, j), index(i + 1, j)
            c, e = index(i + 1, j + 1), index(i, j + 1)
            triangles.extend([(a, b, c), (a, c, e)])

    robin = [(index(i, n_lat), index(i + 1, n_lat)) for i in range(n_lon)]
    if not periodic:
        robin += [(index(0, j), index(0, j + 1)) for j in range(n_lat)]
        robin += [(index(n_lon, j), index(n_lon, j + 1)) for j in range(n_lat)]
    return GeodesicPatch(
        vertices=vertices,
        triangles=np.asarray(triangles, dtype=int),
        robin_edges=np.asarray(robin, dtype=int),
        lon=lon,
        lat=lat,
        periodic=periodic,
    )


def patch_quotient(
    patch: GeodesicPatch, values: np.ndarray, H: Union[float, np.ndarray] = 0.0
) -> float:
    """(int |grad_S v|^2 - int_Robin H v^2) / int v^2 for nodal P1 values."""
    v = np.asarray(values, dtype=float).ravel()
    if v.shape != (len(patch.vertices),):
        raise DomainError(
            f"Expected {len(patch.vertices)} nodal values, got {v.shape}"
        )
    mass = float(v @ (patch.mass() @ v))
    if mass <= 0.0:
        raise DomainError("Test function vanishes identically on the patch")
    weights = np.broadcast_to(np.asarray(H, dtype=float), v.shape)
    robin = float(v @ (patch.robin_mass() @ (weights * v)))
    return (float(v @ (patch.stiffness() @ v)) - robin) / mass


# ==============================================================================
# Hessian subsolutions
# ==============================================================================


@dataclass(frozen=True)
class SubsolutionField:
    """Hessian eigenvalues of u and the subsolution factors phi, phi^alpha."""

    d: int
    alpha: float
    gamma: float
    eigenvalues: np.ndarray = field(repr=False)
    phi: np.ndarray = field(repr=False)
    varphi: np.ndarray = field(repr=False)
    valid: np.ndarray = field(repr=False)
    wall_derivatives: List[float] = field(default_factory=list)
    degenerate: bool = False

    @property
    def gamma_margin(self) -> float:
        """gamma - (d/2 - 1 - alpha)^2, nonnegative for admissible alpha."""
        return self.gamma - (self.d / 2.0 - 1.0 - self.alpha) ** 2

    def summary(self) -> Dict[str, Any]:
        phi = self.phi[self.valid]
        return {
            "d": self.d,
            "alpha": self.alpha,
            "gamma": self.gamma,
            "gamma_margin": self.gamma_margin,
            "valid_nodes": int(self.valid.sum()),
            "phi_min": float(phi.min()) if phi.size else math.nan,
            "phi_max": float(phi.max()) if phi.size else math.nan,
            "wall_derivatives": self.wall_derivatives,
            "degenerate": self.degenerate,
        }


def _subsolution_constants(d: int, alpha: Optional[float]) -> Tuple[float, float]:
    if d == 3:
        a = 0.25 if alpha is None else float(alpha)
        if not 0.125 < a < 0.5:
            raise ConfigurationError(
                f"d = 3 needs alpha in (1/8, 1/2), got {a}", key="alpha"
            )
        return a, a * (a + 1.0)
    if d == 4:
        a = 1.0 / 3.0 if alpha is None else float(alpha)
        if not math.isclose(a, 1.0 / 3.0, abs_tol=1e-12):
            raise ConfigurationError(f"d = 4 needs alpha = 1/3, got {a}", key="alpha")
        return a, 4.0 / 9.0
    raise ConfigurationError(f"Subsolutions are defined for d in (3, 4), got {d}")


def finite_difference_hessian(u: ScalarField) -> np.ndarray:
    """Fourth-order central Hessian, NaN where the stencil leaves the grid."""
    vals = np.asarray(u.values, dtype=float)
    n = u.grid.dim
    h = u.grid.h

    def unit(axis: int, k: int) -> List[int]:
        e = [0] * n
        e[axis] = k
        return e

    def first(values: np.ndarray, axis: int) -> np.ndarray:
        return (
            -_shifted(values, unit(axis, 2))
            + 8.0 * _shifted(values, unit(axis, 1))
            - 8.0 * _shifted(values, unit(axis, -1))
            + _shifted(values, unit(axis, -2))
        ) / (12.0 * h)

    hess = np.full(vals.shape + (n, n), np.nan)
    with np.errstate(invalid="ignore"):
        for i in range(n):
            hess[..., i, i] = (
                -_shifted(vals, unit(i, 2))
                + 16.0 * _shifted(vals, unit(i, 1))
                - 30.0 * vals
                + 16.0 * _shifted(vals, unit(i, -1))
                - _shifted(vals, unit(i, -2))
            ) / (12.0 * h * h)
            for j in range(i + 1, n):
                mixed = first(first(vals, j), i)
                hess[..., i, j] = mixed
                hess[..., j, i] = mixed
    return hess


def _wall_derivatives(
    eigenvalues: np.ndarray, valid: np.ndarray, h: float
) -> List[float]:
    """Max |d_d lambda_k| at the lowest valid layer by a one-sided difference."""
    layers = np.flatnonzero(valid.reshape(-1, valid.shape[-1]).any(axis=0))
    if layers.size == 0:
        return [math.nan] * eigenvalues.shape[-1]
    j0 = int(layers[0])
    if j0 + 2 >= valid.shape[-1]:
        return [math.nan] * eigenvalues.shape[-1]
    ok = valid[..., j0] & valid[..., j0 + 1] & valid[..., j0 + 2]
    out = []
    for k in range(eigenvalues.shape[-1]):
        lam = eigenvalues[..., k]
        slope = (-3.0 * lam[..., j0] + 4.0 * lam[..., j0 + 1] - lam[..., j0 + 2]) / (
            2.0 * h
        )
        out.append(float(np.abs(slope[ok]).max()) if np.any(ok) else math.nan)
    return out


def subsolution_eval(
    u: ScalarField, d: int, alpha: Optional[float] = None
) -> SubsolutionField:
    """
    Hessian eigenvalues of u (ascending, padded with zeros up to d) and
    phi^2 = sum lambda^2 (d = 3) or sum_{lambda>0} lambda^2 + 4 sum_{lambda<0}
    lambda^2 (d = 4). Nodes whose 5-point stencil box leaves {u > tau} are masked.
    """
    n = u.grid.dim
    if n > d:
        raise ConfigurationError(f"Field dimension {n} exceeds formula dimension {d}")
    alpha, gamma = _subsolution_constants(d, alpha)

    positive = np.asarray(u.values) > u.tau()
    valid = minimum_filter(positive.astype(np.uint8), size=5, mode="constant", cval=0)
    valid = valid.astype(bool)

    hess = finite_difference_hessian(u)
    hess = np.where(valid[..., None, None], hess, 0.0)
    eigenvalues, _ = sorted_eigh(hess)
    if d > n:
        pad = np.zeros(eigenvalues.shape[:-1] + (d - n,))
        eigenvalues = np.sort(np.concatenate([eigenvalues, pad], axis=-1), axis=-1)

    if d == 3:
        phi2 = np.sum(eigenvalues**2, axis=-1)
    else:
        pos = np.where(eigenvalues > 0.0, eigenvalues, 0.0)
        neg = np.where(eigenvalues < 0.0, eigenvalues, 0.0)
        phi2 = np.sum(pos**2, axis=-1) + 4.0 * np.sum(neg**2, axis=-1)
    phi = np.where(valid, np.sqrt(phi2), 0.0)
    varphi = phi**alpha

    scale = max(1.0, u.sup_norm() / u.grid.diameter**2)
    degenerate = bool(phi[valid].max(initial=0.0) <= 1e-6 * scale)
    if degenerate:
        logger.warning("Hessian vanishes on the valid set: u looks like a half-plane")

    result = SubsolutionField(
        d=d,
        alpha=alpha,
        gamma=gamma,
        eigenvalues=eigenvalues,
        phi=phi,
        varphi=varphi,
        valid=valid,
        wall_derivatives=_wall_derivatives(eigenvalues, valid, u.grid.h),
        degenerate=degenerate,
    )
    if result.gamma_margin < -1e-12:
        raise DomainError(f"gamma margin {result.gamma_margin:.3e} is negative")
    return result


__all__ = [
    "RobinProblem",
    "robin_quotient",
    "RobinSolution",
    "robin_min_d2",
    "hardy_threshold",
    "lambda_exceeds_hardy_threshold",
    "HardyProfile",
    "hardy_profile",
    "GeodesicPatch",
    "geodesic_patch",
    "patch_quotient",
    "SubsolutionField",
    "finite_difference_hessian",
    "subsolution_eval",
]
