"""
Disturbance distributions.

Two closed families: a uniform distribution on an axis-aligned box and a
product of symmetric triangular densities, one per axis, each supported on
[lo_i, hi_i]. Both expose an inverse-CDF transform for sampling and a
tensor-product quadrature rule for expectations.
"""
from dataclasses import dataclass
from functools import lru_cache
from typing import Any, Dict, Tuple

import numpy as np
from scipy.special import roots_jacobi

from app.core.errors import ValidationError

UNIFORM_BOX = 'uniform_box'
TRIANGULAR_PRODUCT = 'triangular_product'

_KIND_ALIASES = {
    'uniform_box': UNIFORM_BOX, 'uniformbox': UNIFORM_BOX, 'uniform': UNIFORM_BOX,
    'triangular_product': TRIANGULAR_PRODUCT, 'triangularproduct': TRIANGULAR_PRODUCT,
    'triangular': TRIANGULAR_PRODUCT,
}


@lru_cache(maxsize=64)
def _axis_rule(kind: str, order: int) -> Tuple[np.ndarray, np.ndarray]:
    """Nodes on the reference axis [-1, 1] and probability weights summing to 1"""
    if kind == UNIFORM_BOX:
        nodes, weights = np.polynomial.legendre.leggauss(order)
        return nodes, weights / 2.0
    # density 1 - |t| is linear on each half; Gauss-Jacobi with weight (1 - ξ)
    # integrates g(t)(1 - t) on [0, 1] exactly for g of degree <= 2*order - 1
    xi, w = roots_jacobi(order, 1.0, 0.0)
    right = (1.0 + xi) / 2.0
    weights = w / 4.0
    nodes = np.concatenate([-right[::-1], right])
    return nodes, np.concatenate([weights[::-1], weights])


@dataclass(frozen=True, eq=False)
class DisturbanceDistribution:
    kind: str
    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lower = np.atleast_1d(np.asarray(self.lower, dtype=float))
        upper = np.atleast_1d(np.asarray(self.upper, dtype=float))
        if lower.shape != upper.shape or lower.ndim != 1:
            raise ValidationError("support bounds must be equal-length vectors", field='disturbance.support')
        if np.any(~np.isfinite(lower)) or np.any(~np.isfinite(upper)) or np.any(lower >= upper):
            raise ValidationError("support must be a bounded box with lower < upper", field='disturbance.support')
        if self.kind not in (UNIFORM_BOX, TRIANGULAR_PRODUCT):
            raise ValidationError(f"unknown disturbance kind {self.kind!r}", field='disturbance.kind')
        object.__setattr__(self, 'lower', lower)
        object.__setattr__(self, 'upper', upper)

    def __eq__(self, other):
        return (isinstance(other, DisturbanceDistribution) and self.kind == other.kind
                and np.array_equal(self.lower, other.lower) and np.array_equal(self.upper, other.upper))

    __hash__ = None

    @property
    def dim(self) -> int:
        return self.lower.shape[0]

    @property
    def center(self) -> np.ndarray:
        return 0.5 * (self.lower + self.upper)

    @property
    def half_width(self) -> np.ndarray:
        return 0.5 * (self.upper - self.lower)

    def density(self, theta: np.ndarray) -> np.ndarray:
        theta = np.asarray(theta, dtype=float)
        t = (theta - self.center) / self.half_width
        inside = np.all(np.abs(t) <= 1.0, axis=-1)
        if self.kind == UNIFORM_BOX:
            value = np.full(inside.shape, 1.0 / np.prod(self.upper - self.lower))
        else:
            value = np.prod(np.clip(1.0 - np.abs(t), 0.0, None) / self.half_width, axis=-1)
        return np.where(inside, value, 0.0)

    def from_uniform(self, u: np.ndarray) -> np.ndarray:
        """Inverse-CDF transform of uniforms in [0, 1)^m to disturbance samples"""
        u = np.asarray(u, dtype=float)
        if self.kind == UNIFORM_BOX:
            return self.lower + u * (self.upper - self.lower)
        t = np.where(u < 0.5, np.sqrt(2.0 * u) - 1.0, 1.0 - np.sqrt(2.0 * (1.0 - u)))
        return np.clip(self.center + self.half_width * t, self.lower, self.upper)

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        return self.from_uniform(rng.random((size, self.dim)))

    def quadrature(self, order: int) -> Tuple[np.ndarray, np.ndarray]:
        """Tensor-product rule: nodes (Q, m) inside the support and weights (Q,) summing to 1"""
        if order < 2:
            raise ValueError(f"quadrature order must be >= 2, got {order}")
        ref_nodes, ref_weights = _axis_rule(self.kind, int(order))
        grids = np.meshgrid(*([ref_nodes] * self.dim), indexing='ij')
        wgrids = np.meshgrid(*([ref_weights] * self.dim), indexing='ij')
        nodes = np.stack([g.ravel() for g in grids], axis=-1)
        weights = np.prod(np.stack([w.ravel() for w in wgrids], axis=-1), axis=-1)
        return self.center + self.half_width * nodes, weights

    def axis_masses(self, order: int = 8) -> np.ndarray:
        """Integral of each axis' marginal density over its support (exact for both families)"""
        nodes, weights = np.polynomial.legendre.leggauss(order)
        masses = []
        for i in range(self.dim):
            c, s = self.center[i], self.half_width[i]
            total = 0.0
            # split at the center so the triangular kink is a panel boundary
            for a, b in ((c - s, c), (c, c + s)):
                theta = 0.5 * (a + b) + 0.5 * (b - a) * nodes
                if self.kind == UNIFORM_BOX:
                    dens = np.full_like(theta, 1.0 / (2.0 * s))
                else:
                    dens = (1.0 - np.abs(theta - c) / s) / s
                total += 0.5 * (b - a) * np.dot(weights, dens)
            masses.append(total)
        return np.array(masses)

    def to_dict(self) -> Dict[str, Any]:
        return {
            'kind': self.kind,
            'support': [[float(a), float(b)] for a, b in zip(self.lower, self.upper)],
            'params': {},
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'DisturbanceDistribution':
        kind = _KIND_ALIASES.get(str(data.get('kind', '')).lower())
        if kind is None:
            raise ValidationError(f"unknown disturbance kind {data.get('kind')!r}", field='disturbance.kind')
        support = data.get('support')
        if isinstance(support, dict):
            lower, upper = support.get('lower'), support.get('upper')
        elif isinstance(support, list) and support and all(isinstance(p, (list, tuple)) and len(p) == 2 for p in support):
            lower, upper = [p[0] for p in support], [p[1] for p in support]
        else:
            raise ValidationError("expected a list of [lower, upper] pairs", field='disturbance.support')
        return cls(kind, lower, upper)


def uniform_box(lower, upper) -> DisturbanceDistribution:
    return DisturbanceDistribution(UNIFORM_BOX, lower, upper)


def triangular_product(lower, upper) -> DisturbanceDistribution:
    return DisturbanceDistribution(TRIANGULAR_PRODUCT, lower, upper)
