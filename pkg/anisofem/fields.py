# Copyright (c) anisofem contributors under Apache License 2.0 (see LICENSE.txt).
# Anisotropic interpolation error estimates on simplices
#
# Built-in fields addressed by id on the command line.

import math

import numpy as np

from .errors import ParameterError
from .polynomials_quadrature import MultiPoly, SmoothField


def trig_product(freqs, phases=None, name="trig"):
    """prod_i sin(freqs[i] * x_i + phases[i]); d^n/dx^n sin(w x + p) = w^n sin(w x + p + n pi / 2)."""
    freqs = np.asarray(freqs, dtype=float)
    phases = np.zeros_like(freqs) if phases is None else np.asarray(phases, dtype=float)

    def partial(beta, x):
        values = np.ones(x.shape[0])
        for i, b in enumerate(beta):
            values = values * freqs[i] ** b * np.sin(freqs[i] * x[:, i] + phases[i] + b * math.pi / 2)
        return values

    return SmoothField(len(freqs), partial, None, name)


def exponential(coeffs, name="exp"):
    """exp(c . x)"""
    coeffs = np.asarray(coeffs, dtype=float)

    def partial(beta, x):
        return np.prod(coeffs ** np.asarray(beta)) * np.exp(x @ coeffs)

    return SmoothField(len(coeffs), partial, None, name)


def remark_phi():
    """x^2 + y^2 / 4 + z^2"""
    phi = MultiPoly(3, {(2, 0, 0): 1.0, (0, 2, 0): 0.25, (0, 0, 2): 1.0})
    return SmoothField.from_poly(phi, name="remark-phi")


_EXP_ROWS = np.array([[1.0, 0.5, 0.25], [0.5, -1.0, 1 / 3], [-1 / 3, 0.25, 0.5]])


def _sin_product(dim):
    return trig_product([math.pi] * dim, name="sin-product")


def _exp_plane(dim):
    return exponential(_EXP_ROWS[0, :dim], name="exp-plane")


def _vec_x2(dim):
    components = [MultiPoly.monomial((2,) + (0,) * (dim - 1))] + [MultiPoly(dim)] * (dim - 1)
    return SmoothField.vector(components, name="vec-x2")


def _vec_exp(dim):
    return SmoothField.vector([exponential(row[:dim]) for row in _EXP_ROWS[:dim]], name="vec-exp")


def _vec_sin_cos(dim):
    # (sin x, cos y, sin z)
    components = []
    for i in range(dim):
        freqs = np.zeros(dim)
        freqs[i] = 1.0
        phases = np.zeros(dim)
        phases[i] = math.pi / 2 if i % 2 else 0.0
        # sin(0 * x_j) would vanish; shift the idle factors to sin(pi / 2) = 1
        phases[freqs == 0.0] = math.pi / 2
        components.append(trig_product(freqs, phases))
    return SmoothField.vector(components, name="vec-sin-cos")


def _vec_trig(dim):
    components = []
    for i in range(dim):
        phases = np.array([math.pi / 2 if j == i else 0.0 for j in range(dim)])
        components.append(trig_product([math.pi] * dim, phases))
    return SmoothField.vector(components, name="vec-trig")


FIELD_REGISTRY = {
    # id: (builder, kind, supported dims)
    "remark-phi": (lambda dim: remark_phi(), "scalar", (3,)),
    "sin-product": (_sin_product, "scalar", (2, 3)),
    "exp-plane": (_exp_plane, "scalar", (2, 3)),
    "vec-x2": (_vec_x2, "vector", (2, 3)),
    "vec-exp": (_vec_exp, "vector", (2, 3)),
    "vec-sin-cos": (_vec_sin_cos, "vector", (2, 3)),
    "vec-trig": (_vec_trig, "vector", (2, 3)),
}


def _monomial_field(spec, dim):
    try:
        exponents = tuple(int(e) for e in spec.split(","))
    except ValueError:
        raise ParameterError(f"Invalid monomial field: {spec!r}")
    if len(exponents) != dim or min(exponents) < 0:
        raise ParameterError(f"Monomial field {spec!r} needs {dim} nonnegative exponents")
    return SmoothField.from_poly(MultiPoly.monomial(exponents), name=f"monomial:{spec}")


def field_kind(field_id):
    if field_id.startswith("monomial:"):
        return "scalar"
    if field_id not in FIELD_REGISTRY:
        raise ParameterError(f"Unknown field id: {field_id!r}")
    return FIELD_REGISTRY[field_id][1]


def get_field(field_id, dim):
    """Field registered under field_id, in dim variables."""
    if field_id.startswith("monomial:"):
        return _monomial_field(field_id.split(":", 1)[1], dim)
    if field_id not in FIELD_REGISTRY:
        raise ParameterError(f"Unknown field id: {field_id!r}; choose from {sorted(FIELD_REGISTRY)} or monomial:<exponents>")
    builder, _, dims = FIELD_REGISTRY[field_id]
    if dim not in dims:
        raise ParameterError(f"Field {field_id!r} is not defined in dimension {dim}")
    return builder(dim)
