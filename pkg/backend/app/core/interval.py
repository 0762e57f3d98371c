"""
Interval arithmetic over numpy arrays.

An Interval holds elementwise lower and upper bounds `lo <= hi` of equal
shape, so one object encloses a whole batch of quantities (one per grid
cell, typically). Operations return enclosures: every value a real
operation can produce from members of the operands lies in the result.
Rounding is not directed; the enclosures are tight up to floating-point
rounding of the endpoints.
"""
from typing import Union

import numpy as np

Number = Union[float, int, np.ndarray]

TWO_PI = 2.0 * np.pi


class Interval:
    __slots__ = ('lo', 'hi')

    def __init__(self, lo: Number, hi: Number = None):
        lo = np.asarray(lo, dtype=float)
        hi = lo if hi is None else np.asarray(hi, dtype=float)
        lo, hi = np.broadcast_arrays(lo, hi)
        if np.any(lo > hi):
            raise ValueError("Interval lower bound exceeds upper bound")
        self.lo = lo
        self.hi = hi

    @classmethod
    def point(cls, value: Number) -> 'Interval':
        return cls(value, value)

    @classmethod
    def around(cls, center: Number, radius: Number) -> 'Interval':
        center = np.asarray(center, dtype=float)
        return cls(center - radius, center + radius)

    def __repr__(self):
        return f"Interval(lo={self.lo!r}, hi={self.hi!r})"

    @property
    def shape(self):
        return self.lo.shape

    def width(self) -> np.ndarray:
        return self.hi - self.lo

    def mid(self) -> np.ndarray:
        return 0.5 * (self.lo + self.hi)

    def mag(self) -> np.ndarray:
        """Largest absolute value of any member"""
        return np.maximum(np.abs(self.lo), np.abs(self.hi))

    def contains(self, value: Number) -> np.ndarray:
        return (self.lo <= value) & (value <= self.hi)

    def hull(self, other: 'Interval') -> 'Interval':
        return Interval(np.minimum(self.lo, other.lo), np.maximum(self.hi, other.hi))

    def __neg__(self):
        return Interval(-self.hi, -self.lo)

    def __add__(self, other):
        if isinstance(other, Interval):
            return Interval(self.lo + other.lo, self.hi + other.hi)
        return Interval(self.lo + other, self.hi + other)

    def __radd__(self, other):
        return self + other

    def __sub__(self, other):
        if isinstance(other, Interval):
            return Interval(self.lo - other.hi, self.hi - other.lo)
        return Interval(self.lo - other, self.hi - other)

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        if isinstance(other, Interval):
            products = np.stack([self.lo * other.lo, self.lo * other.hi,
                                 self.hi * other.lo, self.hi * other.hi])
            return Interval(products.min(axis=0), products.max(axis=0))
        other = np.asarray(other, dtype=float)
        a, b = self.lo * other, self.hi * other
        return Interval(np.minimum(a, b), np.maximum(a, b))

    def __rmul__(self, other):
        return self * other

    def __pow__(self, exponent: int):
        if int(exponent) != exponent or exponent < 0:
            raise ValueError(f"Only non-negative integer powers are supported, got {exponent}")
        exponent = int(exponent)
        if exponent == 0:
            return Interval(np.ones_like(self.lo), np.ones_like(self.hi))
        a, b = self.lo ** exponent, self.hi ** exponent
        if exponent % 2 == 1:
            return Interval(a, b)
        straddles = (self.lo <= 0) & (self.hi >= 0)
        lo = np.where(straddles, 0.0, np.minimum(a, b))
        return Interval(lo, np.maximum(a, b))

    def sin(self) -> 'Interval':
        return self._periodic_extrema(np.sin, peak_offset=np.pi / 2, trough_offset=-np.pi / 2)

    def cos(self) -> 'Interval':
        return self._periodic_extrema(np.cos, peak_offset=0.0, trough_offset=np.pi)

    def _periodic_extrema(self, fn, peak_offset: float, trough_offset: float) -> 'Interval':
        a, b = fn(self.lo), fn(self.hi)
        lo, hi = np.minimum(a, b), np.maximum(a, b)
        has_peak = _contains_lattice_point(self.lo, self.hi, peak_offset)
        has_trough = _contains_lattice_point(self.lo, self.hi, trough_offset)
        full = self.width() >= TWO_PI
        hi = np.where(has_peak | full, 1.0, hi)
        lo = np.where(has_trough | full, -1.0, lo)
        return Interval(lo, hi)


def _contains_lattice_point(lo: np.ndarray, hi: np.ndarray, offset: float) -> np.ndarray:
    """Whether [lo, hi] contains offset + 2πk for some integer k (errs towards True)"""
    tol = 1e-12 * (1.0 + np.maximum(np.abs(lo), np.abs(hi)))
    k = np.ceil((lo - offset) / TWO_PI)
    below = offset + (k - 1) * TWO_PI
    at = offset + k * TWO_PI
    return (at <= hi + tol) | ((below >= lo - tol) & (below <= hi + tol))


def as_interval(value) -> Interval:
    if isinstance(value, Interval):
        return value
    return Interval.point(value)
