# capillary_bernoulli/solver.py
"""
Discrete minimizers of F and the auxiliary A-harmonic solves.

minimize_F anneals the relaxed energy

    F_eps(u) = u^T K u + sum_i m_i Q_i psi_eps(u_i) + sum_i 2 l_i beta_i u_i,
    psi_eps(s) = min(1, s^+ / eps),

with projected, preconditioned gradient steps (Barzilai-Borwein lengths,
backtracking so that F_eps never increases within a stage). K is the Q1
stiffness matrix, m the lumped mass and l the wall trapezoid weights.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import (
    Any,
    Callable,
    Dict,
    List,
    Mapping,
    Optional,
    Sequence,
    Tuple,
    Union,
)

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import LinearOperator, cg, factorized, spsolve

from .assembly import (
    gauss_coordinates,
    lumped_mass,
    stiffness_matrix,
    wall_lumped,
)
from .coefficients import CoeffField
from .config import (
    CG_RTOL,
    DEFAULT_SEED,
    EPS0,
    EPS_FACTOR,
    INNER_TOL,
    MAX_INNER,
    PATIENCE,
    RESTARTS,
)
from .energy import energy_F, is_free_boundary_point
from .exceptions import ConfigurationError, DomainError, ResolutionError
from .exact import HalfPlaneParams, half_plane_eval
from .fields import FrameTransform, ScalarField
from .grid import Grid, NodeTag, Region, build_grid

# Setup logging
logger = logging.getLogger(__name__)

MAX_BACKTRACK = 40
STEP_BOUNDS = (1e-8, 1e8)
INITIALIZATIONS = ("harmonic", "zero", "wall_linear")

Sampler = Callable[[np.ndarray], np.ndarray]


# ==============================================================================
# Dirichlet data
# ==============================================================================

DirichletBuilder = Callable[[int, Mapping[str, Any]], Sampler]
DIRICHLET_SAMPLERS: Dict[str, DirichletBuilder] = {}


def register_dirichlet(name: str) -> Callable[[DirichletBuilder], DirichletBuilder]:
    """Register a closed-form Dirichlet sampler under `name`."""

    def decorator(builder: DirichletBuilder) -> DirichletBuilder:
        DIRICHLET_SAMPLERS[name] = builder
        return builder

    return decorator


@register_dirichlet("half_plane")
def half_plane_dirichlet(dim: int, params: Mapping[str, Any]) -> Sampler:
    """Trace of h_{q,m,nu}(x + shift nu)."""
    nu = params.get("nu", [1.0] + [0.0] * (dim - 1))
    p = HalfPlaneParams(float(params.get("q", 1.0)), float(params.get("m", 0.0)), nu)
    shift = float(params.get("shift", 0.0))
    return lambda x: half_plane_eval(p, x, shift)


@register_dirichlet("constant")
def constant_dirichlet(dim: int, params: Mapping[str, Any]) -> Sampler:
    value = float(params.get("value", 1.0))
    return lambda x: np.full(np.asarray(x).shape[:-1], value)


@register_dirichlet("zero")
def zero_dirichlet(dim: int, params: Mapping[str, Any]) -> Sampler:
    return lambda x: np.zeros(np.asarray(x).shape[:-1])


@register_dirichlet("linear")
def linear_dirichlet(dim: int, params: Mapping[str, Any]) -> Sampler:
    """(offset + slope . x)^+."""
    slope = np.asarray(params.get("slope", [0.0] * dim), dtype=float)
    if slope.shape != (dim,):
        raise ConfigurationError(
            f"Linear Dirichlet slope must have {dim} entries",
            key="dirichlet.params.slope",
        )
    offset = float(params.get("offset", 0.0))
    return lambda x: np.maximum(offset + np.asarray(x) @ slope, 0.0)


def make_dirichlet(
    dim: int, sampler: str, params: Optional[Mapping[str, Any]] = None
) -> Sampler:
    if sampler not in DIRICHLET_SAMPLERS:
        raise ConfigurationError(
            f"Unknown Dirichlet sampler '{sampler}' "
            f"(known: {sorted(DIRICHLET_SAMPLERS)})",
            key="dirichlet.sampler",
        )
    return DIRICHLET_SAMPLERS[sampler](dim, dict(params or {}))


def dirichlet_mask(grid: Grid) -> np.ndarray:
    """OUTER nodes plus the wall-row nodes on the tangential box faces."""
    mask = grid.tags() == NodeTag.OUTER
    for k in range(grid.dim - 1):
        index = [slice(None)] * grid.dim
        index[-1] = 0
        index[k] = 0
        mask[tuple(index)] = True
        index[k] = -1
        mask[tuple(index)] = True
    return mask


# ==============================================================================
# Linear solves
# ==============================================================================


def _coefficient_gauss(grid: Grid, c: CoeffField) -> np.ndarray:
    return c.A(gauss_coordinates(grid))


def dirichlet_solve(
    grid: Grid,
    K: sp.csr_matrix,
    fixed: np.ndarray,
    values: np.ndarray,
    load: Optional[np.ndarray] = None,
    rtol: float = CG_RTOL,
) -> np.ndarray:
    """
    Solve K v = load at the free nodes with v = values at the fixed nodes.

    Conjugate gradients with a Jacobi preconditioner; falls back to a sparse
    direct solve if CG does not reach rtol.

    Raises:
        DomainError: nonpositive diagonal (singular assembly)
    """
    fixed = np.asarray(fixed, dtype=bool).ravel()
    v = np.where(fixed, np.asarray(values, dtype=float).ravel(), 0.0)
    free = np.flatnonzero(~fixed)
    if free.size == 0:
        return v.reshape(grid.shape)

    K_ff = K[free][:, free].tocsc()
    rhs = -(K @ v)[free]
    if load is not None:
        rhs = rhs + np.asarray(load, dtype=float).ravel()[free]
    diag = K_ff.diagonal()
    if np.any(diag <= 0.0):
        raise DomainError(
            f"Singular assembly: {int(np.sum(diag <= 0.0))} free nodes "
            "have a nonpositive diagonal"
        )
    jacobi = LinearOperator(K_ff.shape, matvec=lambda x: x / diag, dtype=float)
    scale = float(np.linalg.norm(rhs))
    if scale == 0.0:
        return v.reshape(grid.shape)
    solution, info = cg(
        K_ff, rhs, rtol=rtol, atol=0.0, M=jacobi, maxiter=10 * free.size
    )
    if info != 0:
        logger.warning(f"CG stopped with info={info}; using a direct solve")
        solution = spsolve(K_ff, rhs)
    v[free] = solution
    return v.reshape(grid.shape)


def _interior_of(region: Region) -> np.ndarray:
    """Nodes whose incident cells are all fully inside the region."""
    grid = region.grid
    full = np.pad(
        region.cells >= 1.0 - 1e-12, 1, mode="constant", constant_values=False
    )
    inside = np.ones(grid.shape, dtype=bool)
    for bits in np.ndindex(*([2] * grid.dim)):
        index = []
        for k, b in enumerate(bits):
            index.append(slice(b, b + grid.shape[k]))
        inside &= full[tuple(index)]
    # wall nodes only see the cell layer above them
    wall = [slice(None)] * grid.dim
    wall[-1] = 0
    above = np.ones(grid.shape[:-1], dtype=bool)
    padded = full[..., 1]
    for bits in np.ndindex(*([2] * (grid.dim - 1))):
        index = tuple(slice(b, b + n) for b, n in zip(bits, grid.shape[:-1]))
        above &= padded[index]
    inside[tuple(wall)] = above
    return inside & ~dirichlet_mask(grid)


def harmonic_replacement(
    u: ScalarField, c: CoeffField, region: Region, rtol: float = CG_RTOL
) -> ScalarField:
    """
    Replace u inside `region` by the A-harmonic function with the same trace.

    Nodes whose incident cells lie fully in the region are free, all other
    nodes keep u. Free wall nodes carry the homogeneous conormal condition.

    Raises:
        DomainError: ellipticity violated on the grid
    """
    grid = u.grid
    c.validate(grid)
    K = stiffness_matrix(grid, _coefficient_gauss(grid, c))
    free = _interior_of(region)
    values = dirichlet_solve(grid, K, ~free, np.asarray(u.values), rtol=rtol)
    if u.nonneg:
        values = np.maximum(values, 0.0)
    logger.debug(f"Harmonic replacement on {int(free.sum())} nodes")
    return ScalarField(grid, values, nonneg=u.nonneg)


def frame_replacement(
    u: ScalarField, c: CoeffField, x0: Sequence[float], r: float
) -> ScalarField:
    """Harmonic replacement inside the frame ellipsoid E_r(x0)."""
    T = FrameTransform.from_coefficients(c, x0)
    return harmonic_replacement(u, c, Region.ellipsoid(u.grid, T.x0, T.M, r))


# ==============================================================================
# Capacitary profiles and the comparison experiment
# ==============================================================================


def capacitary_levels(dim: int, r: float) -> Tuple[float, float]:
    """Values on the inner and outer spheres: log(1/r), log(1/2r) in d = 2."""
    if dim == 2:
        return math.log(1.0 / r), math.log(1.0 / (2.0 * r))
    return r ** (2 - dim), (2.0 * r) ** (2 - dim)


def radial_capacitary(dim: int, rho: np.ndarray) -> np.ndarray:
    """Exact harmonic capacitary function for A = Id as a function of |x|."""
    rho = np.asarray(rho, dtype=float)
    if dim == 2:
        return np.log(1.0 / rho)
    return rho ** (2 - dim)


def annulus_grid(dim: int, r: float, h: float, half: bool) -> Tuple[Grid, np.ndarray]:
    """Grid holding the (half-)annulus r < |x - center| < 2r and its center."""
    R = 2.0 * r
    center = np.zeros(dim)
    if half:
        return build_grid(dim, (R, R), h), center
    center[-1] = R
    return build_grid(dim, (R, 2.0 * R), h), center


@dataclass(frozen=True)
class CapacitaryProfile:
    """A-capacitary function on a (half-)annulus."""

    u: ScalarField
    center: Tuple[float, ...]
    r: float
    half: bool
    free: np.ndarray = field(repr=False)

    def radius(self) -> np.ndarray:
        coords = self.u.grid.coords()
        return np.linalg.norm(coords - np.asarray(self.center), axis=-1)


def capacitary_profile(
    c: CoeffField,
    r: float,
    h: float,
    half: bool = False,
    source: float = 0.0,
    rtol: float = CG_RTOL,
) -> CapacitaryProfile:
    """
    Discrete A-capacitary function of the annulus r < |x| < 2r.

    Nodes with |x| <= r take the inner level, nodes with |x| >= 2r the outer
    level (see capacitary_levels). In the half variant the annulus sits on the
    wall and the wall nodes carry e_d . A grad h = 0. With source f != 0 the
    equation is -div(A grad h) = f.

    Raises:
        ResolutionError: r < 4h
    """
    if r < 4.0 * h * (1.0 - 1e-12):
        raise ResolutionError(f"Annulus r={r} is thinner than the floor 4h={4 * h}")
    dim = c.dim
    grid, center = annulus_grid(dim, r, h, half)
    c.validate(grid)
    rho = np.linalg.norm(grid.coords() - center, axis=-1)
    inner, outer = capacitary_levels(dim, r)
    fixed = (rho <= r) | (rho >= 2.0 * r)
    fixed |= dirichlet_mask(grid)
    values = np.where(rho <= r, inner, outer)

    K = stiffness_matrix(grid, _coefficient_gauss(grid, c))
    load = source * lumped_mass(grid) if source else None
    solved = dirichlet_solve(grid, K, fixed, values, load=load, rtol=rtol)
    logger.debug(
        f"Capacitary profile r={r:.4g}, half={half}, {int((~fixed).sum())} free nodes"
    )
    return CapacitaryProfile(
        ScalarField(grid, solved, nonneg=False),
        tuple(float(v) for v in center),
        r,
        half,
        ~fixed,
    )


def nodal_gradient(u: ScalarField) -> np.ndarray:
    """Centered finite-difference gradient at the nodes, shape (*shape, d)."""
    grads = np.gradient(np.asarray(u.values), u.grid.h)
    if u.grid.dim == 1:
        grads = [grads]
    return np.stack(grads, axis=-1)


def check_relative_bounds(
    A: CoeffField, B: CoeffField, eps: float, points: np.ndarray
) -> None:
    """
    (1+eps)^-1 B <= A <= (1+eps) B at the sample points.

    Raises:
        DomainError: first sample violating the bound
    """
    A_pts = A.A(points)
    B_pts = B.A(points)
    L = np.linalg.cholesky(B_pts)
    Linv = np.linalg.inv(L)
    C = Linv @ A_pts @ np.swapaxes(Linv, -1, -2)
    eig = np.linalg.eigvalsh(0.5 * (C + np.swapaxes(C, -1, -2)))
    lo, hi = (1.0 + eps) ** -1 * (1.0 - 1e-12), (1.0 + eps) * (1.0 + 1e-12)
    bad = np.flatnonzero((eig[..., 0] < lo).ravel() | (eig[..., -1] > hi).ravel())
    if bad.size:
        n = bad[0]
        point = points.reshape(-1, points.shape[-1])[n]
        raise DomainError(
            f"Coefficients differ by more than 1+eps={1 + eps:.6g} "
            f"at x={point.tolist()}"
        )


@dataclass
class SchauderReport:
    """Distances between the A- and B-profiles per eps, with the fitted rate."""

    epsilons: List[float]
    value_distances: List[float] = field(default_factory=list)
    gradient_distances: List[float] = field(default_factory=list)
    sigma: Optional[float] = None

    @property
    def distances(self) -> List[float]:
        return [v + g for v, g in zip(self.value_distances, self.gradient_distances)]

    def rows(self) -> List[List[float]]:
        return [
            [e, v, g, v + g]
            for e, v, g in zip(
                self.epsilons, self.value_distances, self.gradient_distances
            )
        ]

    def as_dict(self) -> Dict[str, Any]:
        return {
            "epsilons": self.epsilons,
            "value_distances": self.value_distances,
            "gradient_distances": self.gradient_distances,
            "distances": self.distances,
            "sigma": self.sigma,
        }


def fit_rate(xs: Sequence[float], ys: Sequence[float]) -> Optional[float]:
    """Slope of log y against log x over positive pairs (None if fewer than 2)."""
    pairs = [(x, y) for x, y in zip(xs, ys) if x > 0.0 and y > 0.0]
    if len(pairs) < 2:
        return None
    logs = np.log(np.array(pairs))
    return float(np.polyfit(logs[:, 0], logs[:, 1], 1)[0])


def schauder_compare(
    A: Union[CoeffField, Callable[[float], CoeffField]],
    B: CoeffField,
    r: float,
    epsilons: Sequence[float],
    h: float,
    half: bool = False,
    source: float = 0.0,
    rho: float = 1.0,
) -> SchauderReport:
    """
    Compare the capacitary profiles of A(eps) and B over an eps sweep.

    Distances are sup norms over the annulus nodes at distance >= rho r from
    the center (rho = 1 keeps the whole annulus). The rate sigma is the
    log-log slope of the total distance against eps.

    Args:
        A: coefficient field, or a map eps -> coefficient field
        B: reference coefficient field
        r: inner radius of the annulus
        epsilons: sweep values
        h: grid spacing
        half: half-annulus on the wall
        source: constant source term f
        rho: inner cut-off factor for the distance

    Raises:
        DomainError: A(eps) and B violate the (1+eps) relative bounds
    """
    profile_B = capacitary_profile(B, r, h, half=half, source=source)
    grid = profile_B.u.grid
    radius = profile_B.radius()
    band = profile_B.free & (radius >= rho * r)
    grad_B = nodal_gradient(profile_B.u)

    report = SchauderReport(epsilons=[float(e) for e in epsilons])
    for eps in report.epsilons:
        coeffs = A(eps) if callable(A) and not isinstance(A, CoeffField) else A
        check_relative_bounds(coeffs, B, eps, grid.coords())
        profile_A = capacitary_profile(coeffs, r, h, half=half, source=source)
        diff = np.abs(np.asarray(profile_A.u.values) - profile_B.u.values)
        grad_diff = np.linalg.norm(nodal_gradient(profile_A.u) - grad_B, axis=-1)
        report.value_distances.append(float(diff[band].max(initial=0.0)))
        report.gradient_distances.append(float(grad_diff[band].max(initial=0.0)))
        logger.debug(f"Schauder eps={eps:.3g}: distance={report.distances[-1]:.3e}")

    report.sigma = fit_rate(report.epsilons, report.distances)
    logger.info(f"Schauder comparison over {len(epsilons)} eps: sigma={report.sigma}")
    return report


# ==============================================================================
# Minimization
# ==============================================================================


@dataclass(frozen=True)
class SolveConfig:
    """Everything a single minimization needs."""

    grid: Grid
    coeffs: CoeffField
    dirichlet: Sampler
    eps0: float = EPS0
    eps_factor: float = EPS_FACTOR
    eps_min: Optional[float] = None
    inner_tol: float = INNER_TOL
    patience: int = PATIENCE
    max_inner: int = MAX_INNER
    restarts: int = RESTARTS
    seed: int = DEFAULT_SEED

    def __post_init__(self) -> None:
        if self.eps_min is None:
            object.__setattr__(self, "eps_min", 2.0 * self.grid.h)
        if self.eps_min < 2.0 * self.grid.h * (1.0 - 1e-12):
            raise ConfigurationError(
                f"eps_min={self.eps_min} is below 2h={2 * self.grid.h}",
                key="schedule.eps_min",
            )
        if self.restarts < 1:
            raise ConfigurationError("restarts must be >= 1", key="schedule.restarts")
        if not 0.0 < self.eps_factor < 1.0:
            raise ConfigurationError(
                "eps factor must lie in (0, 1)", key="schedule.factor"
            )
        if self.patience < 1 or self.max_inner < 1:
            raise ConfigurationError(
                "patience and max_inner must be positive", key="schedule"
            )

    def schedule(self) -> List[float]:
        """eps0, eps0 f, eps0 f^2, ... down to eps_min (inclusive)."""
        eps_min = float(self.eps_min)
        values = []
        eps = self.eps0
        while eps > eps_min * (1.0 + 1e-12):
            values.append(eps)
            eps *= self.eps_factor
        values.append(eps_min)
        return values


@dataclass(frozen=True)
class TraceRow:
    restart: int
    stage: int
    eps: float
    iteration: int
    energy: float


@dataclass
class SolveResult:
    """Best-of-restarts minimizer with its per-stage energy trace."""

    u: ScalarField
    trace: List[TraceRow]
    converged: bool
    best_restart: int
    energies: List[float]
    initializations: List[str]
    stages: List[float]

    def stage_trace(self, restart: int, stage: int) -> List[float]:
        return [
            row.energy
            for row in self.trace
            if row.restart == restart and row.stage == stage
        ]

    def summary(self) -> Dict[str, Any]:
        return {
            "converged": self.converged,
            "best_restart": self.best_restart,
            "initialization": self.initializations[self.best_restart],
            "energies": self.energies,
            "energy": self.energies[self.best_restart],
            "stages": self.stages,
            "iterations": len(self.trace),
        }


class RelaxedEnergy:
    """F_eps and its gradient on the nodal vector."""

    def __init__(self, grid: Grid, coeffs: CoeffField) -> None:
        self.grid = grid
        self.K = stiffness_matrix(grid, _coefficient_gauss(grid, coeffs))
        coords = grid.coords()
        self.bulk = (lumped_mass(grid) * coeffs.Q(coords)).ravel()
        wall = np.zeros(grid.shape)
        wall[..., 0] = coeffs.beta(coords[..., 0, :])
        self.wall = (2.0 * wall_lumped(grid) * wall).ravel()

    def value(self, u: np.ndarray, eps: float) -> float:
        psi = np.minimum(1.0, np.maximum(u, 0.0) / eps)
        return float(u @ (self.K @ u) + self.bulk @ psi + self.wall @ u)

    def gradient(self, u: np.ndarray, eps: float) -> np.ndarray:
        # one-sided derivative of psi at 0 so that zero nodes feel the bulk cost
        dpsi = np.where((u >= 0.0) & (u < eps), 1.0 / eps, 0.0)
        return 2.0 * (self.K @ u) + self.bulk * dpsi + self.wall


def _initial_guesses(
    cfg: SolveConfig, energy: RelaxedEnergy, fixed: np.ndarray, data: np.ndarray
) -> List[Tuple[str, np.ndarray]]:
    grid = cfg.grid
    harmonic = np.maximum(dirichlet_solve(grid, energy.K, fixed, data).ravel(), 0.0)
    zero = np.where(fixed.ravel(), data.ravel(), 0.0)

    coords = grid.coords()
    foot = coords.copy()
    foot[..., -1] = 0.0
    m = cfg.coeffs.beta(foot) / cfg.coeffs.a(foot)
    wall_linear = np.maximum(m * coords[..., -1], 0.0).ravel()
    wall_linear = np.where(fixed.ravel(), data.ravel(), wall_linear)

    bases = {"harmonic": harmonic, "zero": zero, "wall_linear": wall_linear}
    guesses = []
    for k in range(cfg.restarts):
        name = INITIALIZATIONS[k % len(INITIALIZATIONS)]
        u0 = bases[name].copy()
        if k >= len(INITIALIZATIONS):
            rng = np.random.default_rng(cfg.seed + k)
            scale = float(np.abs(data).max(initial=1.0))
            noise = rng.uniform(0.0, 0.1 * scale, size=u0.shape)
            u0 = np.where(fixed.ravel(), u0, u0 + noise)
            name = f"{name}+noise{k}"
        guesses.append((name, u0))
    return guesses


def _descend_stage(
    energy: RelaxedEnergy,
    u: np.ndarray,
    eps: float,
    free: np.ndarray,
    K_ff: sp.csc_matrix,
    precondition: Callable[[np.ndarray], np.ndarray],
    cfg: SolveConfig,
) -> Tuple[np.ndarray, List[float], bool]:
    """Projected preconditioned descent at fixed eps; energies are nonincreasing."""
    E = energy.value(u, eps)
    energies = [E]
    g = energy.gradient(u, eps)[free]
    alpha = 1.0
    quiet = 0
    for _ in range(cfg.max_inner):
        direction = precondition(g)
        trial = u.copy()
        step = alpha
        accepted = False
        for _ in range(MAX_BACKTRACK):
            trial[free] = np.maximum(u[free] - step * direction, 0.0)
            E_trial = energy.value(trial, eps)
            if E_trial <= E:
                accepted = True
                break
            step *= 0.5
        if not accepted:
            energies.append(E)
            return u, energies, True

        s = trial[free] - u[free]
        g_new = energy.gradient(trial, eps)[free]
        y = g_new - g
        sy = float(s @ y)
        if sy > 0.0:
            Ps = 2.0 * (K_ff @ s)
            alpha = float(np.clip((s @ Ps) / sy, *STEP_BOUNDS))
        else:
            alpha = min(2.0 * step, STEP_BOUNDS[1])

        decrease = (E - E_trial) / max(abs(E), 1e-300)
        quiet = quiet + 1 if decrease < cfg.inner_tol else 0
        u, g, E = trial, g_new, E_trial
        energies.append(E)
        if quiet >= cfg.patience:
            return u, energies, True
    return u, energies, False


def minimize_F(cfg: SolveConfig) -> SolveResult:
    """
    Best-of-restarts annealed minimizer of F.

    Each restart runs the eps schedule from its own initialization, warm
    starting every stage from the previous one. Restarts are ranked by the
    sharp nodal F (indicator at tau).

    Raises:
        DomainError: negative Dirichlet data or invalid coefficients
    """
    grid = cfg.grid
    cfg.coeffs.validate(grid)
    fixed = dirichlet_mask(grid)
    data = np.asarray(cfg.dirichlet(grid.coords()), dtype=float)
    if data[fixed].min(initial=0.0) < 0.0:
        raise DomainError("Dirichlet data must be nonnegative on the outer boundary")
    data = np.where(fixed, data, 0.0)

    energy = RelaxedEnergy(grid, cfg.coeffs)
    free = np.flatnonzero(~fixed.ravel())
    K_ff = energy.K[free][:, free].tocsc()
    solve_P = factorized((2.0 * K_ff).tocsc())
    stages = cfg.schedule()
    logger.info(
        f"Minimizing F on grid {grid.shape}: {len(stages)} stages, "
        f"{cfg.restarts} restarts"
    )

    trace: List[TraceRow] = []
    finals: List[Tuple[np.ndarray, bool]] = []
    energies: List[float] = []
    names: List[str] = []
    for k, (name, u) in enumerate(_initial_guesses(cfg, energy, fixed, data)):
        converged = True
        for j, eps in enumerate(stages):
            u, stage_energies, ok = _descend_stage(
                energy, u, eps, free, K_ff, solve_P, cfg
            )
            converged &= ok
            trace.extend(
                TraceRow(k, j, eps, i, e) for i, e in enumerate(stage_energies)
            )
            logger.debug(
                f"Restart {k} stage {j} eps={eps:.4g}: {len(stage_energies) - 1} "
                f"iterations, F_eps={stage_energies[-1]:.10g}"
            )
        field_k = ScalarField(grid, u.reshape(grid.shape))
        sharp = energy_F(field_k, cfg.coeffs).total
        finals.append((u, converged))
        energies.append(sharp)
        names.append(name)
        logger.info(f"Restart {k} ({name}): F={sharp:.10g}, converged={converged}")

    best = int(np.argmin(energies))
    if not finals[best][1]:
        logger.warning(f"Best restart {best} hit max_inner={cfg.max_inner}")
    return SolveResult(
        u=ScalarField(grid, finals[best][0].reshape(grid.shape)),
        trace=trace,
        converged=finals[best][1],
        best_restart=best,
        energies=energies,
        initializations=names,
        stages=stages,
    )


# ==============================================================================
# Diagnostics
# ==============================================================================


@dataclass
class RadialFit:
    """Per-radius quantity and the constants it implies."""

    name: str
    x0: List[float]
    radii: List[float]
    values: List[float]
    constants: List[float]

    @property
    def constant(self) -> float:
        return max(self.constants) if self.constants else 0.0

    @property
    def spread(self) -> float:
        """max/min ratio of the fitted constants (1 when perfectly stable)."""
        positive = [v for v in self.constants if v > 0.0]
        if not positive:
            return math.inf
        return max(positive) / min(positive)

    def rows(self) -> List[List[float]]:
        return [[r, v, k] for r, v, k in zip(self.radii, self.values, self.constants)]

    def as_dict(self) -> Dict[str, Any]:
        return {
            "name": self.name,
            "x0": self.x0,
            "radii": self.radii,
            "values": self.values,
            "constants": self.constants,
            "constant": self.constant,
            "spread": self.spread,
        }


def _check_radii(grid: Grid, radii: Sequence[float], floor: float) -> List[float]:
    ordered = sorted(float(r) for r in radii)
    if not ordered:
        raise ConfigurationError("At least one radius is required")
    if ordered[0] < floor * grid.h * (1.0 - 1e-12):
        raise ResolutionError(
            f"Radius {ordered[0]} below the floor {floor:g}h={floor * grid.h}"
        )
    return ordered


def laplacian_measure(
    u: ScalarField, c: CoeffField, x0: Sequence[float], radii: Sequence[float]
) -> RadialFit:
    """
    Total variation of the discrete div(A grad u) on B_r^+(x0), over r^(d-1).

    The nodal measure is (K u)_i at non-Dirichlet nodes; at wall nodes it
    includes the conormal flux through the wall.
    """
    grid = u.grid
    ordered = _check_radii(grid, radii, 8.0)
    K = stiffness_matrix(grid, _coefficient_gauss(grid, c))
    mu = np.abs(K @ np.asarray(u.values).ravel()).reshape(grid.shape)
    mu[dirichlet_mask(grid)] = 0.0
    dist = np.linalg.norm(grid.coords() - np.asarray(x0, dtype=float), axis=-1)
    d = grid.dim
    values, constants = [], []
    for r in ordered:
        total = float(mu[dist < r].sum())
        values.append(total)
        constants.append(total / r ** (d - 1))
    point = [float(v) for v in x0]
    fit = RadialFit("laplacian_measure", point, ordered, values, constants)
    logger.info(
        f"Laplacian measure at {point}: C={fit.constant:.4g}, "
        f"spread={fit.spread:.3g}"
    )
    return fit


def mean_growth(
    u: ScalarField, x0: Sequence[float], radii: Sequence[float]
) -> RadialFit:
    """
    r^-d int_{B_r^+(x0)} u against r at a free-boundary point.

    Raises:
        DomainError: x0 is not a free-boundary point
    """
    grid = u.grid
    point = [float(v) for v in x0]
    if not is_free_boundary_point(u, point):
        raise DomainError(f"x0={point} is not a free-boundary point of u")
    ordered = _check_radii(grid, radii, 2.0)
    values, constants = [], []
    for r in ordered:
        region = Region.half_ball(grid, point, r)
        integral = float(np.sum(lumped_mass(grid, region.cells) * u.values))
        mean = integral / r**grid.dim
        values.append(mean)
        constants.append(mean / r)
    fit = RadialFit("mean_growth", point, ordered, values, constants)
    logger.info(
        f"Mean growth at {point}: L={fit.constant:.4g}, spread={fit.spread:.3g}"
    )
    return fit


__all__ = [
    "DIRICHLET_SAMPLERS",
    "register_dirichlet",
    "make_dirichlet",
    "dirichlet_mask",
    "dirichlet_solve",
    "harmonic_replacement",
    "frame_replacement",
    "capacitary_levels",
    "radial_capacitary",
    "annulus_grid",
    "CapacitaryProfile",
    "capacitary_profile",
    "nodal_gradient",
    "check_relative_bounds",
    "SchauderReport",
    "fit_rate",
    "schauder_compare",
    "SolveConfig",
    "TraceRow",
    "SolveResult",
    "RelaxedEnergy",
    "minimize_F",
    "RadialFit",
    "laplacian_measure",
    "mean_growth",
]
