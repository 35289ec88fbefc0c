"""Shared random problem generators for the test suite."""

import math

import numpy as np

from gradgp.kernels import make_kernel

#: (family, metric, params) for every kernel that supports gradient observations
KERNELS = [
    ("polynomial", "dot", {"p": 2}),
    ("polynomial", "dot", {"p": 3}),
    ("exponential", "dot", {}),
    ("squared_exponential", "stationary", {}),
    ("matern", "stationary", {"nu": 1.5}),
    ("matern", "stationary", {"nu": 2.5}),
    ("rational_quadratic", "stationary", {"alpha": 1.5}),
]

KERNEL_IDS = [f"{f}-{'-'.join(map(str, p.values())) or 'x'}" for f, _, p in KERNELS]


def random_kernel(rng, D, family, metric, params):
    """Diagonal lengthscale; dot-product kernels get a random offset and a
    lengthscale scaled by 1/D so that r stays O(1)."""
    if metric == "dot":
        lam = rng.uniform(0.2, 1.0, D) / D
        return make_kernel(family, metric, lam, rng.normal(scale=0.3, size=D), **params)
    return make_kernel(family, metric, rng.uniform(0.2, 1.0, D), **params)


def is_polynomial(spec):
    return spec.family.name == "polynomial"


def consistent_gradients(rng, spec, X):
    """Observed gradients. Polynomial Gram matrices are singular, so their
    right-hand sides are gradients of a random function in the kernel's span."""
    D, N = X.shape
    if not is_polynomial(spec):
        return rng.normal(size=(D, N))
    Xt = spec.metric.centre(X)
    if spec.family.p == 2:
        A = rng.normal(size=(D, D))
        return (A + A.T) @ Xt
    # sum_j w_j (y_j' x)^p / p! has gradient sum_j w_j (y_j' x)^(p-1) y_j / (p-1)!
    p = spec.family.p
    Y = rng.normal(size=(D, D + 2))
    w = rng.normal(size=D + 2)
    return Y @ (w[:, None] * (Y.T @ Xt) ** (p - 1)) / math.factorial(p - 1)
