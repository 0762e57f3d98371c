"""
Certificate templates: scalar fields over the state space.

Polynomial  fixed monomial basis with trainable coefficients in [-100, 100]
Network     fully connected [n, w1, ..., 1] with softplus hidden activations
Affine      a * inner + b over a frozen inner certificate

Every template evaluates on arrays shaped (..., n) and gives a Lipschitz
bound with respect to the infinity norm on the state, per axis-aligned cell.
"""
import itertools
import logging
from dataclasses import dataclass
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.special import expit

from app.core.errors import NoTrainableParametersError, ValidationError
from app.core.interval import Interval

logger = logging.getLogger(__name__)

COEFFICIENT_BOUND = 100.0


def softplus(z: np.ndarray) -> np.ndarray:
    return np.logaddexp(0.0, z)


class Certificate:
    kind = 'certificate'
    trainable = True

    @property
    def dim(self) -> int:
        raise NotImplementedError

    def evaluate(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def __call__(self, x):
        return self.evaluate(x)

    @property
    def parameters(self) -> np.ndarray:
        raise NotImplementedError

    @property
    def parameter_count(self) -> int:
        return int(self.parameters.size)

    def with_parameters(self, params: np.ndarray) -> 'Certificate':
        raise NotImplementedError

    def parameter_gradient(self, x: np.ndarray) -> np.ndarray:
        """d c(x) / d params, shaped (..., parameter_count)"""
        raise NotImplementedError

    def lipschitz_bound(self, lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
        """L with |c(x) - c(y)| <= L ||x - y||_inf on each cell [lo, hi]"""
        raise NotImplementedError

    def to_dict(self) -> Dict[str, Any]:
        raise NotImplementedError


def monomial_exponents(dim: int, degree: int) -> np.ndarray:
    """All exponent vectors of total degree <= degree, graded then lexicographic"""
    rows = []
    for total in range(degree + 1):
        for combo in itertools.product(range(total + 1), repeat=dim):
            if sum(combo) == total:
                rows.append(combo[::-1])
    return np.array(sorted(set(rows), key=lambda e: (sum(e), tuple(-v for v in e))), dtype=np.int64)


@dataclass(frozen=True, eq=False)
class Polynomial(Certificate):
    exponents: np.ndarray
    coefficients: np.ndarray

    kind = 'polynomial'

    def __post_init__(self):
        exponents = np.atleast_2d(np.asarray(self.exponents, dtype=np.int64))
        coefficients = np.atleast_1d(np.asarray(self.coefficients, dtype=float))
        if exponents.shape[0] != coefficients.shape[0]:
            raise ValidationError("one coefficient per monomial expected", field='certificate.parameters')
        if np.any(exponents < 0):
            raise ValidationError("exponents must be non-negative", field='certificate.exponents')
        if np.any(np.abs(coefficients) > COEFFICIENT_BOUND):
            raise ValidationError(f"coefficients must lie in [-{COEFFICIENT_BOUND:g}, {COEFFICIENT_BOUND:g}]",
                                  field='certificate.parameters')
        object.__setattr__(self, 'exponents', exponents)
        object.__setattr__(self, 'coefficients', coefficients)

    @classmethod
    def full(cls, dim: int, degree: int, coefficients=None) -> 'Polynomial':
        exps = monomial_exponents(dim, degree)
        coeffs = np.zeros(len(exps)) if coefficients is None else coefficients
        return cls(exps, coeffs)

    @classmethod
    def constant(cls, dim: int, value: float = 0.0) -> 'Polynomial':
        return cls(np.zeros((1, dim), dtype=np.int64), [value])

    @property
    def dim(self):
        return self.exponents.shape[1]

    @property
    def degree(self) -> int:
        return int(self.exponents.sum(axis=1).max())

    def monomials(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return np.prod(x[..., None, :] ** self.exponents, axis=-1)

    def evaluate(self, x):
        return self.monomials(x) @ self.coefficients

    @property
    def parameters(self):
        return self.coefficients

    def with_parameters(self, params):
        return Polynomial(self.exponents, np.clip(params, -COEFFICIENT_BOUND, COEFFICIENT_BOUND))

    def parameter_gradient(self, x):
        return self.monomials(x)

    def lipschitz_bound(self, lo, hi):
        lo = np.asarray(lo, dtype=float)
        hi = np.asarray(hi, dtype=float)
        shape = lo.shape[:-1]
        top = int(self.exponents.max()) if self.exponents.size else 0
        powers = [[Interval(lo[..., i], hi[..., i]) ** e for e in range(top + 1)] for i in range(self.dim)]
        total = np.zeros(shape)
        for i in range(self.dim):
            acc = Interval(np.zeros(shape))
            for exps, coef in zip(self.exponents, self.coefficients):
                if exps[i] == 0 or coef == 0.0:
                    continue
                term = Interval.point(coef * exps[i])
                for j in range(self.dim):
                    e = exps[j] - 1 if j == i else exps[j]
                    if e:
                        term = term * powers[j][e]
                acc = acc + term
            total = total + acc.mag()
        return total

    def to_dict(self):
        return {
            'kind': self.kind,
            'dim': self.dim,
            'degree': self.degree,
            'basis': self.exponents.tolist(),
            'parameters': self.coefficients.tolist(),
        }


@dataclass(frozen=True, eq=False)
class Network(Certificate):
    layers: Tuple[int, ...]
    weights: Tuple[np.ndarray, ...]
    biases: Tuple[np.ndarray, ...]
    activation: str = 'softplus'

    kind = 'network'

    def __post_init__(self):
        layers = tuple(int(w) for w in self.layers)
        if len(layers) < 2 or layers[-1] != 1 or min(layers) < 1:
            raise ValidationError("layer sizes must be [n, w1, ..., 1]", field='certificate.layers')
        if self.activation != 'softplus':
            raise ValidationError(f"unsupported activation {self.activation!r}", field='certificate.activation')
        weights = tuple(np.asarray(w, dtype=float) for w in self.weights)
        biases = tuple(np.asarray(b, dtype=float) for b in self.biases)
        for k, (w, b) in enumerate(zip(weights, biases)):
            if w.shape != (layers[k + 1], layers[k]) or b.shape != (layers[k + 1],):
                raise ValidationError(f"layer {k} has shape {w.shape}/{b.shape}", field='certificate.parameters')
        if len(weights) != len(layers) - 1 or len(biases) != len(layers) - 1:
            raise ValidationError("one weight matrix and bias per layer expected", field='certificate.parameters')
        object.__setattr__(self, 'layers', layers)
        object.__setattr__(self, 'weights', weights)
        object.__setattr__(self, 'biases', biases)

    @classmethod
    def random(cls, layers: Sequence[int], rng: np.random.Generator, scale: float = 1.0) -> 'Network':
        weights, biases = [], []
        for fan_in, fan_out in zip(layers[:-1], layers[1:]):
            weights.append(scale * rng.normal(0.0, 1.0 / np.sqrt(fan_in), size=(fan_out, fan_in)))
            biases.append(np.zeros(fan_out))
        return cls(tuple(layers), tuple(weights), tuple(biases))

    @classmethod
    def from_flat(cls, layers: Sequence[int], params: np.ndarray, activation: str = 'softplus') -> 'Network':
        params = np.asarray(params, dtype=float)
        expected = sum(o * i + o for i, o in zip(layers[:-1], layers[1:]))
        if params.shape != (expected,):
            raise ValidationError(f"expected {expected} parameters, got {params.size}", field='certificate.parameters')
        weights, biases, pos = [], [], 0
        for fan_in, fan_out in zip(layers[:-1], layers[1:]):
            weights.append(params[pos:pos + fan_in * fan_out].reshape(fan_out, fan_in))
            pos += fan_in * fan_out
            biases.append(params[pos:pos + fan_out])
            pos += fan_out
        return cls(tuple(layers), tuple(weights), tuple(biases), activation)

    @property
    def dim(self):
        return self.layers[0]

    def _forward(self, x):
        pre, post = [], [np.asarray(x, dtype=float)]
        last = len(self.weights) - 1
        for k, (w, b) in enumerate(zip(self.weights, self.biases)):
            z = post[-1] @ w.T + b
            pre.append(z)
            post.append(z if k == last else softplus(z))
        return pre, post

    def evaluate(self, x):
        return self._forward(x)[1][-1][..., 0]

    @property
    def parameters(self):
        return np.concatenate([np.concatenate([w.ravel(), b]) for w, b in zip(self.weights, self.biases)])

    def with_parameters(self, params):
        return Network.from_flat(self.layers, params, self.activation)

    def parameter_gradient(self, x):
        pre, post = self._forward(x)
        grads: List[np.ndarray] = []
        # delta: d out / d z_k, starting at the linear output layer
        delta = np.ones(pre[-1].shape)
        for k in range(len(self.weights) - 1, -1, -1):
            a = post[k]
            grad_w = delta[..., :, None] * a[..., None, :]
            grads.append(np.concatenate([grad_w.reshape(*grad_w.shape[:-2], -1), delta], axis=-1))
            if k:
                delta = (delta @ self.weights[k]) * expit(pre[k - 1])
        return np.concatenate(grads[::-1], axis=-1)

    def global_lipschitz(self) -> float:
        """Product of induced infinity norms; softplus is 1-Lipschitz"""
        return float(np.prod([np.abs(w).sum(axis=1).max() for w in self.weights]))

    def lipschitz_bound(self, lo, hi):
        lo = np.asarray(lo, dtype=float)
        hi = np.asarray(hi, dtype=float)
        z_lo, z_hi = lo, hi
        slopes = []
        last = len(self.weights) - 1
        for k, (w, b) in enumerate(zip(self.weights, self.biases)):
            wp, wn = np.clip(w, 0, None), np.clip(w, None, 0)
            nlo = z_lo @ wp.T + z_hi @ wn.T + b
            nhi = z_hi @ wp.T + z_lo @ wn.T + b
            if k == last:
                break
            # sigmoid is increasing, so the derivative peaks at the upper end
            slopes.append(expit(nhi))
            z_lo, z_hi = softplus(nlo), softplus(nhi)
        v = np.broadcast_to(np.abs(self.weights[-1]), lo.shape[:-1] + self.weights[-1].shape)
        for k in range(last - 1, -1, -1):
            v = (v * slopes[k][..., None, :]) @ np.abs(self.weights[k])
        local = v[..., 0, :].sum(axis=-1)
        return np.minimum(local, self.global_lipschitz())

    def to_dict(self):
        return {
            'kind': self.kind,
            'layers': list(self.layers),
            'activation': self.activation,
            'parameters': self.parameters.tolist(),
        }


@dataclass(frozen=True, eq=False)
class Affine(Certificate):
    a: float
    b: float
    inner: Certificate

    kind = 'affine'
    trainable = False

    @property
    def dim(self):
        return self.inner.dim

    def evaluate(self, x):
        return self.a * self.inner.evaluate(x) + self.b

    @property
    def parameters(self):
        return np.empty(0)

    def with_parameters(self, params):
        raise NoTrainableParametersError("an affine image of a certificate has no trainable parameters")

    def parameter_gradient(self, x):
        raise NoTrainableParametersError("an affine image of a certificate has no trainable parameters")

    def lipschitz_bound(self, lo, hi):
        return abs(self.a) * self.inner.lipschitz_bound(lo, hi)

    def to_dict(self):
        return {'kind': self.kind, 'a': self.a, 'b': self.b, 'inner': self.inner.to_dict()}


def evaluate(c: Certificate, x) -> float:
    value = c.evaluate(np.asarray(x, dtype=float))
    return float(value) if np.ndim(value) == 0 else value


def parameter_gradient(c: Certificate, x) -> np.ndarray:
    return c.parameter_gradient(np.asarray(x, dtype=float))


def lipschitz_bound(c: Certificate, box) -> float:
    return float(c.lipschitz_bound(box.lo, box.hi))


def certificate_from_dict(data: Dict[str, Any], field: str = 'certificate') -> Certificate:
    if not isinstance(data, dict):
        raise ValidationError("expected an object", field=field)
    kind = str(data.get('kind', '')).lower()
    try:
        if kind == 'polynomial':
            return Polynomial(np.array(data['basis'], dtype=np.int64).reshape(-1, int(data['dim'])),
                              np.array(data['parameters'], dtype=float))
        if kind == 'network':
            return Network.from_flat(data['layers'], np.array(data['parameters'], dtype=float),
                                     data.get('activation', 'softplus'))
        if kind == 'affine':
            return Affine(float(data['a']), float(data['b']), certificate_from_dict(data['inner'], f"{field}.inner"))
    except KeyError as e:
        raise ValidationError(f"missing key {e.args[0]!r}", field=field)
    except (TypeError, ValueError) as e:
        if isinstance(e, ValidationError):
            raise
        raise ValidationError(f"malformed {kind} certificate: {e}", field=field)
    raise ValidationError(f"unknown certificate kind {data.get('kind')!r}", field=f"{field}.kind")


def build_template(spec: str, dim: int, rng: Optional[np.random.Generator] = None, scale: float = 1.0) -> Certificate:
    """
    Build an initial certificate from a template string.

    'net:8x8' or '8x8'  network [dim, 8, 8, 1] with random weights
    'poly:4'            full polynomial of total degree 4, zero coefficients
    'const:0.5'         constant polynomial
    """
    rng = rng if rng is not None else np.random.default_rng(0)
    text = spec.strip().lower()
    family, _, arg = text.partition(':')
    if not arg:
        family, arg = ('net', family) if 'x' in family else (family, '')
    try:
        if family in ('net', 'network'):
            hidden = [int(w) for w in arg.split('x')]
            return Network.random([dim, *hidden, 1], rng, scale)
        if family in ('poly', 'polynomial'):
            return Polynomial.full(dim, int(arg))
        if family in ('const', 'constant'):
            return Polynomial.constant(dim, float(arg or 0.0))
    except ValueError:
        pass
    raise ValidationError(f"unrecognized template {spec!r}", field='template')
