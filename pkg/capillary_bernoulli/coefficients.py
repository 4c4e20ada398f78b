# capillary_bernoulli/coefficients.py
"""
Coefficient fields A(x), Q(x), beta(x) of the capillary energy.

Fields are closed-form samplers registered by family name. A family builder
receives the parameter mapping from the experiment config and returns a
CoeffField carrying the samplers plus the ellipticity and Hölder metadata
(Lambda_A, lambda_Q, delta_A, delta_Q, delta_beta).
"""

import logging
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, Mapping, Optional, Sequence, Tuple

import numpy as np

from .exceptions import ConfigurationError, DomainError
from .grid import Grid

# Setup logging
logger = logging.getLogger(__name__)

MatrixSampler = Callable[[np.ndarray], np.ndarray]
ScalarSampler = Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True)
class CoeffField:
    """
    Samplers for A, Q, beta on the closed half-domain.

    All samplers take points of shape (..., d). `A` returns (..., d, d),
    `Q` and `beta` return (...). `beta` is only meaningful on the wall.
    """

    dim: int
    A: MatrixSampler
    Q: ScalarSampler
    beta: ScalarSampler
    LambdaA: float
    lambdaQ: float
    delta_A: float = 1.0
    delta_Q: float = 1.0
    delta_beta: float = 1.0
    moduli: Dict[str, float] = field(default_factory=dict)
    constant: bool = False
    family: str = "custom"
    params: Dict[str, Any] = field(default_factory=dict)

    def a(self, points: np.ndarray) -> np.ndarray:
        """a(x) = sqrt(e_d . A(x) e_d)."""
        return np.sqrt(self.A(points)[..., -1, -1])

    def frozen_q_m(self, x0: Sequence[float]) -> Tuple[float, float]:
        """(q, m) = (sqrt(Q(x0)), beta(x0)/a(x0)) of the model functional at x0."""
        point = np.asarray(x0, dtype=float)
        q = float(np.sqrt(self.Q(point)))
        m = float(self.beta(point) / self.a(point))
        return q, m

    def validate(self, grid: Grid) -> None:
        """
        Check symmetry, ellipticity and the lower bound of Q at every node.

        Raises:
            DomainError: first violated bound, with the offending point
        """
        points = grid.coords().reshape(-1, grid.dim)
        A = self.A(points)
        asym = np.abs(A - np.swapaxes(A, -1, -2)).max(initial=0.0)
        if asym > 1e-12 * max(1.0, np.abs(A).max(initial=0.0)):
            raise DomainError(f"A is not symmetric (asymmetry {asym:.3e})")

        eig = np.linalg.eigvalsh(A)
        lo_bound = self.LambdaA**-2 * (1.0 - 1e-12)
        hi_bound = self.LambdaA**2 * (1.0 + 1e-12)
        bad = np.flatnonzero((eig[:, 0] < lo_bound) | (eig[:, -1] > hi_bound))
        if bad.size:
            n = bad[0]
            raise DomainError(
                f"Ellipticity violated at x={points[n].tolist()}: eigenvalues "
                f"{eig[n].tolist()} outside [{lo_bound:.6g}, {hi_bound:.6g}]"
            )

        Q = self.Q(points)
        bad = np.flatnonzero(~(Q >= self.lambdaQ * (1.0 - 1e-12)))
        if bad.size:
            n = bad[0]
            raise DomainError(
                f"Q(x)={Q[n]:.6g} below lambda_Q={self.lambdaQ:.6g} "
                f"at x={points[n].tolist()}"
            )
        logger.debug(f"Coefficients '{self.family}' valid on grid {grid.shape}")

    def beta_gap(self, grid: Grid) -> np.ndarray:
        """beta + a*sqrt(Q) on the wall row (positive where non-degeneracy holds)."""
        wall = grid.coords()[..., 0, :]
        return self.beta(wall) + self.a(wall) * np.sqrt(self.Q(wall))

    def beta_admissible(self, grid: Grid) -> bool:
        """|beta| < a*sqrt(Q) on every wall node."""
        wall = grid.coords()[..., 0, :]
        bound = self.a(wall) * np.sqrt(self.Q(wall))
        return bool(np.all(np.abs(self.beta(wall)) < bound))


# ==============================================================================
# Family registry
# ==============================================================================

FamilyBuilder = Callable[[int, Mapping[str, Any]], CoeffField]
FAMILIES: Dict[str, FamilyBuilder] = {}


def register_family(name: str) -> Callable[[FamilyBuilder], FamilyBuilder]:
    """Register a closed-form coefficient family under `name`."""

    def decorator(builder: FamilyBuilder) -> FamilyBuilder:
        FAMILIES[name] = builder
        return builder

    return decorator


def _matrix_param(dim: int, value: Any, key: str) -> np.ndarray:
    if value is None:
        return np.eye(dim)
    arr = np.asarray(value, dtype=float)
    if arr.ndim == 0:
        return float(arr) * np.eye(dim)
    if arr.ndim == 1 and arr.shape == (dim,):
        return np.diag(arr)
    if arr.shape != (dim, dim):
        raise ConfigurationError(
            f"Expected a {dim}x{dim} matrix, scalar or diagonal", key=key
        )
    return arr


def _vector_param(dim: int, value: Any, key: str) -> np.ndarray:
    if value is None:
        return np.zeros(dim)
    arr = np.asarray(value, dtype=float)
    if arr.shape != (dim,):
        raise ConfigurationError(f"Expected a vector of length {dim}", key=key)
    return arr


def _ellipticity_of(matrices: Sequence[np.ndarray]) -> float:
    """Smallest Lambda with Lambda^-2 <= eig <= Lambda^2 for all matrices."""
    worst = 1.0
    for M in matrices:
        eig = np.linalg.eigvalsh(M)
        if eig[0] <= 0:
            raise DomainError("Coefficient matrix is not positive definite")
        worst = max(worst, np.sqrt(eig[-1]), 1.0 / np.sqrt(eig[0]))
    return float(worst)


def _broadcast_matrix(A0: np.ndarray, points: np.ndarray) -> np.ndarray:
    d = A0.shape[0]
    return np.broadcast_to(A0, points.shape[:-1] + (d, d)).copy()


def _constant_scalar(value: float) -> ScalarSampler:
    def sampler(points: np.ndarray) -> np.ndarray:
        return np.full(np.asarray(points).shape[:-1], value, dtype=float)

    return sampler


@register_family("constant")
def constant_family(dim: int, params: Mapping[str, Any]) -> CoeffField:
    """A, Q, beta constant. Params: A (scalar, diagonal or matrix), Q, beta."""
    A0 = _matrix_param(dim, params.get("A"), "coefficients.params.A")
    Q0 = float(params.get("Q", 1.0))
    beta0 = float(params.get("beta", 0.0))
    if Q0 <= 0:
        raise ConfigurationError("Q must be positive", key="coefficients.params.Q")

    return CoeffField(
        dim=dim,
        A=lambda x: _broadcast_matrix(A0, np.asarray(x)),
        Q=_constant_scalar(Q0),
        beta=_constant_scalar(beta0),
        LambdaA=_ellipticity_of([A0]),
        lambdaQ=Q0,
        constant=True,
        family="constant",
        params={"A": A0.tolist(), "Q": Q0, "beta": beta0},
    )


@register_family("affine")
def affine_family(dim: int, params: Mapping[str, Any]) -> CoeffField:
    """
    Affine perturbations on a box of radius `radius` (default 1).

    A(x) = A0 + (gA.x) Id, Q(x) = Q0 + gQ.x, beta(x) = beta0 + gbeta.x
    """
    A0 = _matrix_param(dim, params.get("A"), "coefficients.params.A")
    gA = _vector_param(dim, params.get("grad_A"), "coefficients.params.grad_A")
    Q0 = float(params.get("Q", 1.0))
    gQ = _vector_param(dim, params.get("grad_Q"), "coefficients.params.grad_Q")
    beta0 = float(params.get("beta", 0.0))
    gb = _vector_param(dim, params.get("grad_beta"), "coefficients.params.grad_beta")
    radius = float(params.get("radius", 1.0)) * np.sqrt(dim)

    spread_A = np.abs(gA).sum() * radius
    lambdaQ = Q0 - np.abs(gQ).sum() * radius
    if lambdaQ <= 0:
        raise ConfigurationError(
            "Affine Q is not bounded below by a positive constant",
            key="coefficients.params.grad_Q",
        )
    eye = np.eye(dim)

    def A(x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return A0 + (x @ gA)[..., None, None] * eye

    return CoeffField(
        dim=dim,
        A=A,
        Q=lambda x: Q0 + np.asarray(x, dtype=float) @ gQ,
        beta=lambda x: beta0 + np.asarray(x, dtype=float) @ gb,
        LambdaA=_ellipticity_of([A0 - spread_A * eye, A0 + spread_A * eye]),
        lambdaQ=float(lambdaQ),
        moduli={"A": float(np.linalg.norm(gA)), "Q": float(np.linalg.norm(gQ)),
                "beta": float(np.linalg.norm(gb))},
        family="affine",
        params=dict(params),
    )


@register_family("sinusoidal")
def sinusoidal_family(dim: int, params: Mapping[str, Any]) -> CoeffField:
    """
    Smooth periodic perturbation of a constant background.

    A(x) = A0 + ampA sin(k.x) Id, Q(x) = Q0 (1 + ampQ sin(k.x)),
    beta(x) = beta0 + ampB sin(k.x)
    """
    A0 = _matrix_param(dim, params.get("A"), "coefficients.params.A")
    Q0 = float(params.get("Q", 1.0))
    beta0 = float(params.get("beta", 0.0))
    amp_A = float(params.get("amp_A", 0.0))
    amp_Q = float(params.get("amp_Q", 0.0))
    amp_b = float(params.get("amp_beta", 0.0))
    k = _vector_param(dim, params.get("wavevector", [np.pi] * dim),
                      "coefficients.params.wavevector")
    if not 0 <= amp_Q < 1:
        raise ConfigurationError(
            "amp_Q must lie in [0, 1)", key="coefficients.params.amp_Q"
        )
    eye = np.eye(dim)

    def A(x: np.ndarray) -> np.ndarray:
        s = np.sin(np.asarray(x, dtype=float) @ k)
        return A0 + (amp_A * s)[..., None, None] * eye

    knorm = float(np.linalg.norm(k))
    return CoeffField(
        dim=dim,
        A=A,
        Q=lambda x: Q0 * (1.0 + amp_Q * np.sin(np.asarray(x, dtype=float) @ k)),
        beta=lambda x: beta0 + amp_b * np.sin(np.asarray(x, dtype=float) @ k),
        LambdaA=_ellipticity_of([A0 - abs(amp_A) * eye, A0 + abs(amp_A) * eye]),
        lambdaQ=Q0 * (1.0 - amp_Q),
        moduli={
            "A": abs(amp_A) * knorm,
            "Q": Q0 * amp_Q * knorm,
            "beta": abs(amp_b) * knorm,
        },
        family="sinusoidal",
        params=dict(params),
    )


def holder_direction(dim: int, angle: float) -> np.ndarray:
    """Symmetric trace-free unit-spectrum matrix acting on the first two axes."""
    P = np.zeros((dim, dim))
    P[0, 0], P[1, 1] = np.cos(angle), -np.cos(angle)
    P[0, 1] = P[1, 0] = np.sin(angle)
    return P


@register_family("holder")
def holder_family(dim: int, params: Mapping[str, Any]) -> CoeffField:
    """
    A(x) = A0 + amp min(1, |x - center|^alpha) P with P a reflection-type matrix.

    Only delta_A-Hölder at `center`; Q and beta are constant.
    """
    A0 = _matrix_param(dim, params.get("A"), "coefficients.params.A")
    amp = float(params.get("amp", 0.1))
    alpha = float(params.get("alpha", 0.5))
    angle = float(params.get("angle", 0.0))
    center = _vector_param(dim, params.get("center"), "coefficients.params.center")
    Q0 = float(params.get("Q", 1.0))
    beta0 = float(params.get("beta", 0.0))
    if not 0 < alpha <= 1:
        raise ConfigurationError(
            "alpha must lie in (0, 1]", key="coefficients.params.alpha"
        )
    if Q0 <= 0:
        raise ConfigurationError("Q must be positive", key="coefficients.params.Q")
    P = holder_direction(dim, angle)
    eye = np.eye(dim)

    def A(x: np.ndarray) -> np.ndarray:
        rho = np.linalg.norm(np.asarray(x, dtype=float) - center, axis=-1)
        weight = np.minimum(1.0, rho**alpha)
        return A0 + (amp * weight)[..., None, None] * P

    return CoeffField(
        dim=dim,
        A=A,
        Q=_constant_scalar(Q0),
        beta=_constant_scalar(beta0),
        LambdaA=_ellipticity_of([A0 - abs(amp) * eye, A0 + abs(amp) * eye]),
        lambdaQ=Q0,
        delta_A=alpha,
        moduli={"A": abs(amp), "Q": 0.0, "beta": 0.0},
        family="holder",
        params=dict(params),
    )


def make_coefficients(
    dim: int, family: str, params: Optional[Mapping[str, Any]] = None
) -> CoeffField:
    """
    Build a coefficient field from a registered family.

    Raises:
        ConfigurationError: unknown family or invalid parameters
    """
    if family not in FAMILIES:
        raise ConfigurationError(
            f"Unknown coefficient family '{family}' (known: {sorted(FAMILIES)})",
            key="coefficients.family",
        )
    coeffs = FAMILIES[family](dim, dict(params or {}))
    logger.debug(f"Built coefficients '{family}' with Lambda_A={coeffs.LambdaA:.4g}")
    return coeffs


def constant_coefficients(
    dim: int = 2, A: Any = None, Q: float = 1.0, beta: float = 0.0
) -> CoeffField:
    """Shortcut for the constant family."""
    return constant_family(dim, {"A": A, "Q": Q, "beta": beta})


__all__ = [
    "CoeffField",
    "FAMILIES",
    "register_family",
    "make_coefficients",
    "constant_coefficients",
    "holder_direction",
]
