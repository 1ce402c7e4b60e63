"""Edge weight interpolations ("theta weights").

A theta weight turns two node masses into a single mass for the edge that
joins them. Three interpolations are supported:

* average      0.5 * (rho_i + rho_j)
* logmean      (rho_i - rho_j) / (log rho_i - log rho_j), the logarithmic mean
* upwind       the mass of the node the flow leaves, picked by the sign of a
               direction value dir_ij (positive means flow arrives at i, so
               the donor is j)

All evaluators are vectorized over numpy arrays. The logarithmic mean is
evaluated by a short series in eta = (a - b)/(a + b) near the diagonal where
the quotient formula loses digits.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import BoundaryDensity

# below this relative gap the closed form for the log mean is replaced by
# its series expansion
_SERIES_CUTOFF = 1e-6


@dataclass(frozen=True)
class ThetaKind:
    """Tagged choice of edge interpolation.

    kind is one of "average", "logmean", "upwind". For the upwind kind an
    optional direction source can be attached: a node potential (direction
    on edge (i, j) is S_i - S_j) or a full antisymmetric matrix. When no
    source is attached the operation using the weight supplies directions,
    typically the velocity field it is contracting against.
    """

    kind: str
    direction: object | None = None

    def __post_init__(self):
        if self.kind not in ("average", "logmean", "upwind"):
            raise ValueError("unknown theta kind %r" % (self.kind,))
        if self.kind != "upwind" and self.direction is not None:
            raise ValueError("only the upwind kind carries a direction source")

    @property
    def needs_direction(self) -> bool:
        return self.kind == "upwind"


AVERAGE = ThetaKind("average")
LOGMEAN = ThetaKind("logmean")


def upwind(direction=None) -> ThetaKind:
    return ThetaKind("upwind", direction)


def from_name(name: str) -> ThetaKind:
    """Deserialize a theta kind from its config name."""
    if name == "upwind":
        return upwind()
    return ThetaKind(name)


def _check_positive(kind, a, b):
    if kind == "logmean" and (np.any(np.asarray(a) <= 0) or np.any(np.asarray(b) <= 0)):
        raise BoundaryDensity("logarithmic mean requires strictly positive masses")


def _logmean(a, b):
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    s = 0.5 * (a + b)
    with np.errstate(divide="ignore", invalid="ignore"):
        eta = np.where(s > 0, (a - b) / (2.0 * np.where(s > 0, s, 1.0)), 0.0)
        near = np.abs(eta) < _SERIES_CUTOFF
        # series: L = s (1 - eta^2/3 - 4 eta^4/45 + ...)
        series = s * (1.0 - eta * eta / 3.0 - 4.0 * eta ** 4 / 45.0)
        delta = np.log(np.where(near, 1.0, a)) - np.log(np.where(near, 1.0, b))
        quotient = np.where(near, series, (a - b) / np.where(near, 1.0, delta))
    return np.where(near, series, quotient)


def _logmean_partials(a, b):
    """(dL/da, dL/db) with the same series switch as the value."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    s = 0.5 * (a + b)
    eta = (a - b) / (2.0 * s)
    near = np.abs(eta) < _SERIES_CUTOFF
    # dL/da = (1/Delta)(1 - L/a), dL/db = (1/Delta)(L/b - 1) off the diagonal
    with np.errstate(divide="ignore", invalid="ignore"):
        delta = np.log(np.where(near, 1.0, a)) - np.log(np.where(near, 1.0, b))
        lm = _logmean(a, b)
        da_far = (1.0 - lm / a) / np.where(near, 1.0, delta)
        db_far = (lm / b - 1.0) / np.where(near, 1.0, delta)
    # series about the diagonal, error O(eta^3)
    da_near = 0.5 * (1.0 - 2.0 * eta / 3.0 + eta * eta / 3.0)
    db_near = 0.5 * (1.0 + 2.0 * eta / 3.0 + eta * eta / 3.0)
    return np.where(near, da_near, da_far), np.where(near, db_near, db_far)


def theta(kind: ThetaKind, rho_i, rho_j, dir_ij=0.0):
    """Edge mass for ordered pair (i, j).

    dir_ij only matters for the upwind kind: positive direction means the
    donor node is j (theta = rho_j), negative means the donor is i, and
    exact ties fall to rho_i (the flow factor vanishes there anyway).
    """
    _check_positive(kind.kind, rho_i, rho_j)
    if kind.kind == "average":
        return 0.5 * (np.asarray(rho_i, dtype=float) + np.asarray(rho_j, dtype=float))
    if kind.kind == "logmean":
        return _logmean(rho_i, rho_j)
    rho_i = np.asarray(rho_i, dtype=float)
    rho_j = np.asarray(rho_j, dtype=float)
    return np.where(np.asarray(dir_ij) > 0, rho_j, rho_i)


def theta_partial(kind: ThetaKind, rho_i, rho_j, dir_ij=0.0, which: str = "first"):
    """Partial derivative of theta w.r.t. rho_i ("first") or rho_j ("second")."""
    if which not in ("first", "second"):
        raise ValueError("which must be 'first' or 'second'")
    _check_positive(kind.kind, rho_i, rho_j)
    shape = np.broadcast(np.asarray(rho_i), np.asarray(rho_j), np.asarray(dir_ij)).shape
    if kind.kind == "average":
        return np.full(shape, 0.5) if shape else 0.5
    if kind.kind == "logmean":
        da, db = _logmean_partials(rho_i, rho_j)
        return da if which == "first" else db
    on_i = np.asarray(dir_ij) <= 0  # donor is i at ties and negative direction
    picked = on_i if which == "first" else ~on_i
    return np.where(picked, 1.0, 0.0)


def resolve_direction(kind: ThetaKind, fallback=None):
    """Direction matrix for an upwind kind: attached source, else fallback.

    The source may be a node potential S (direction S_i - S_j) or an
    antisymmetric matrix. Non-upwind kinds need no direction; returns None.
    """
    if kind.kind != "upwind":
        return None
    src = kind.direction if kind.direction is not None else fallback
    if src is None:
        raise ValueError("upwind theta needs a direction source")
    src = np.asarray(getattr(src, "values", src), dtype=float)
    if src.ndim == 1:
        return src[:, None] - src[None, :]
    return src
