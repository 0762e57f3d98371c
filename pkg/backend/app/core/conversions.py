"""
Constructive conversions between conditions.

ARAS certificates (BC2) and MRAS certificates (BC3) convert into one another
and into BC4_RESTRICTED certificates without retraining; BC5 certificates
map to the dual form and BC1 certificates to AS certificates by affine
images.
"""
import logging
from typing import Tuple

import numpy as np
from scipy.optimize import minimize_scalar

from app.core.certificates import Affine, Certificate
from app.core.errors import ParameterDomainError

logger = logging.getLogger(__name__)

# dense grid used before the bounded local refinement
LAMBDA_GRID_POINTS = 10_001


def aras_to_mras(eps: float, lam: float) -> Tuple[float, float, float]:
    """(eps, lambda)-ARAS is a ((lambda - eps)/lambda, min(eps, lambda), lambda)-MRAS"""
    if not eps > 0:
        raise ParameterDomainError(f"eps = {eps} is not positive", bound='eps > 0')
    if not lam > 1:
        raise ParameterDomainError(f"lambda = {lam} is not above 1", bound='lambda > 1')
    gamma = (lam - eps) / lam
    if gamma <= 0:
        raise ParameterDomainError(f"eps = {eps} >= lambda = {lam} gives gamma = {gamma:g}", bound='eps < lambda')
    return gamma, min(eps, lam), lam


def mras_to_aras(gamma: float, delta: float, lam: float) -> Tuple[float, float]:
    """(gamma, delta, lambda)-MRAS is a ((1 - gamma) * delta, lambda)-ARAS"""
    if not 0 < gamma < 1:
        raise ParameterDomainError(f"gamma = {gamma} outside (0, 1)", bound='0 < gamma < 1')
    if not delta > 0:
        raise ParameterDomainError(f"delta = {delta} is not positive", bound='delta > 0')
    if not lam > 1:
        raise ParameterDomainError(f"lambda = {lam} is not above 1", bound='lambda > 1')
    return (1.0 - gamma) * delta, lam


def aras_to_bc4restricted(V: Certificate, eps: float, p: float) -> Tuple[Certificate, float]:
    """h = 1 - (1-p) V satisfies BC4_RESTRICTED for every lambda >= 1 / (1 + (1-p) eps)"""
    if not eps > 0:
        raise ParameterDomainError(f"eps = {eps} is not positive", bound='eps > 0')
    if not 0 <= p < 1:
        raise ParameterDomainError(f"p = {p} outside [0, 1)", bound='0 <= p < 1')
    h = Affine(-(1.0 - p), 1.0, V)
    return h, 1.0 / (1.0 + (1.0 - p) * eps)


def _mras_ratio(v, gamma: float, lam: float):
    return (1.0 - v / lam) / (1.0 - gamma * v / lam)


def mras_lambda_min(gamma: float, delta: float, lam: float) -> float:
    """max over V in [delta, lambda'] of (1 - V/lambda') / (1 - gamma V/lambda')"""
    grid = np.linspace(delta, lam, LAMBDA_GRID_POINTS)
    values = _mras_ratio(grid, gamma, lam)
    best = int(np.argmax(values))
    value = float(values[best])
    step = grid[1] - grid[0] if len(grid) > 1 else 0.0
    a, b = max(delta, grid[best] - step), min(lam, grid[best] + step)
    if b > a:
        res = minimize_scalar(lambda v: -_mras_ratio(v, gamma, lam), bounds=(a, b), method='bounded',
                              options={'xatol': 1e-12})
        if res.success:
            value = max(value, float(-res.fun))
    # endpoints are checked explicitly; the ratio is monotone for valid parameters
    return max(value, float(_mras_ratio(delta, gamma, lam)), float(_mras_ratio(lam, gamma, lam)))


def mras_to_bc4restricted(V: Certificate, gamma: float, delta: float,
                          lam: float) -> Tuple[Certificate, float, float]:
    if not 0 < gamma < 1:
        raise ParameterDomainError(f"gamma = {gamma} outside (0, 1)", bound='0 < gamma < 1')
    if not delta > 0:
        raise ParameterDomainError(f"delta = {delta} is not positive", bound='delta > 0')
    if not lam > 1:
        raise ParameterDomainError(f"lambda' = {lam} is not above 1", bound="lambda' > 1")
    if delta > lam:
        raise ParameterDomainError(f"delta = {delta} exceeds lambda' = {lam}", bound="delta <= lambda'")
    p = 1.0 - 1.0 / lam
    lambda_min = mras_lambda_min(gamma, delta, lam)
    if lambda_min >= 1.0:
        raise ParameterDomainError(f"lambda_min = {lambda_min} is not below 1", bound='lambda_min < 1')
    logger.debug(f"MRAS({gamma}, {delta}, {lam}) -> p={p}, lambda_min={lambda_min}")
    return Affine(-(1.0 - p), 1.0, V), lambda_min, p


def bc5_transform(h1: Certificate, h2: Certificate) -> Tuple[Certificate, Certificate]:
    """h' = 1 - h for both certificates; applying it twice returns the originals"""
    return _one_minus(h1), _one_minus(h2)


def bc1_to_as(h1: Certificate) -> Certificate:
    """v = 1 - h1 satisfies AS whenever (h1, h2, eps) satisfies BC1"""
    return _one_minus(h1)


def _one_minus(c: Certificate) -> Certificate:
    if isinstance(c, Affine) and c.a == -1.0 and c.b == 1.0:
        return c.inner
    return Affine(-1.0, 1.0, c)
