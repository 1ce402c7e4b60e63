"""Time integration, coordinate transforms and monodromy analysis.

Integrators:

* rk4               classical fourth order explicit
* implicit_midpoint fixed-point iterated midpoint rule, symplectic, order 2

Both land exactly on the final time by rounding the step count. Each step is
guarded: potentials beyond 1e6 in magnitude or node masses below -1e-9 abort
with BlowUp, non-finite values abort with NonfiniteValue (raised by the
Hamiltonian layer).

Transforms between the three charts:

* hopf_cole         (rho, S) -> (rho, psi),  psi = S + 1/2 log rho
* madelung          (rho, S) -> (f, g); the "sbp" convention
                    f = sqrt(rho) e^{-S}, g = sqrt(rho) e^{S} preserves the
                    canonical two-form, the "fisher" convention swaps the
                    exponents and reverses its sign
* symplectic_check  finite-difference Jacobian test of D^T J D = J

No transform renormalizes the potential; gauge fixing is the caller's
business, because trajectories must stay in the gauge the flow picked.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import (
    BlowUp,
    BoundaryDensity,
    NonconvergentImplicitStep,
    NonfiniteValue,
    NonpositiveFG,
)
from .graph import _arr
from .hamiltonians import HamiltonianSpec, PhasePoint, ReferenceRates, eval_H, vector_field

_POT_CAP = 1e6
_RHO_FLOOR = -1e-9
_FP_TOL = 1e-12
_FP_MAXITER = 50


# -- trajectories ------------------------------------------------------------------


@dataclass
class Trajectory:
    """Recorded flow of a phase point: states plus conserved-quantity audit."""

    times: np.ndarray
    rho: np.ndarray          # (K, n) density-like coordinate
    pot: np.ndarray          # (K, n) potential-like coordinate
    chart: str
    H: np.ndarray            # Hamiltonian along the flow
    mass_defect: np.ndarray  # total mass minus its initial value
    min_rho: np.ndarray

    def __len__(self) -> int:
        return len(self.times)

    def state(self, k: int) -> PhasePoint:
        return PhasePoint(self.rho[k], self.pot[k], self.chart)

    @property
    def final(self) -> PhasePoint:
        return self.state(len(self) - 1)


def _mass(rho: np.ndarray, pot: np.ndarray, chart: str) -> float:
    if chart == "fg":
        return float(np.dot(rho, pot))
    return float(rho.sum())


def _guard(rho: np.ndarray, pot: np.ndarray, chart: str, t: float):
    if not (np.all(np.isfinite(rho)) and np.all(np.isfinite(pot))):
        raise BlowUp("non-finite state at t = %g" % t)
    if chart == "fg":
        if max(np.max(np.abs(rho)), np.max(np.abs(pot))) > _POT_CAP:
            raise BlowUp("factor magnitude beyond 1e6 at t = %g" % t)
        return
    if np.max(np.abs(pot)) > _POT_CAP:
        raise BlowUp("potential beyond 1e6 at t = %g" % t)
    if np.min(rho) < _RHO_FLOOR:
        raise BlowUp("node mass below -1e-9 at t = %g" % t)


def _rk4_step(field, r, p, t, dt):
    k1r, k1p = field(r, p, t)
    k2r, k2p = field(r + 0.5 * dt * k1r, p + 0.5 * dt * k1p, t + 0.5 * dt)
    k3r, k3p = field(r + 0.5 * dt * k2r, p + 0.5 * dt * k2p, t + 0.5 * dt)
    k4r, k4p = field(r + dt * k3r, p + dt * k3p, t + dt)
    return (r + dt * (k1r + 2 * k2r + 2 * k3r + k4r) / 6.0,
            p + dt * (k1p + 2 * k2p + 2 * k3p + k4p) / 6.0)


def _midpoint_step(field, r, p, t, dt):
    fr, fp = field(r, p, t)
    mr, mp = r + 0.5 * dt * fr, p + 0.5 * dt * fp
    tm = t + 0.5 * dt
    for _ in range(_FP_MAXITER):
        try:
            fr, fp = field(mr, mp, tm)
        except (BoundaryDensity, NonfiniteValue) as exc:
            # a diverging iterate left the Hamiltonian's domain
            raise NonconvergentImplicitStep(
                "midpoint iterate escaped at t = %g (dt = %g)" % (t, dt)) from exc
        nr, np_ = r + 0.5 * dt * fr, p + 0.5 * dt * fp
        err = max(np.max(np.abs(nr - mr)), np.max(np.abs(np_ - mp)))
        mr, mp = nr, np_
        if err < _FP_TOL * max(1.0, np.max(np.abs(nr)), np.max(np.abs(np_))):
            return 2 * mr - r, 2 * mp - p
    raise NonconvergentImplicitStep(
        "midpoint fixed point stalled at t = %g (dt = %g)" % (t, dt))


def integrate(spec: HamiltonianSpec, state: PhasePoint, t0: float, t1: float,
              dt: float, method: str = "rk4", record_every: int = 1) -> Trajectory:
    """Flow a phase point from t0 to t1 and record the trajectory."""
    if method not in ("rk4", "implicit_midpoint"):
        raise ValueError("unknown method %r" % method)
    if state.chart != spec.chart:
        raise ValueError("state chart %r does not match spec chart %r"
                         % (state.chart, spec.chart))
    steps = max(1, int(round((t1 - t0) / dt)))
    dt = (t1 - t0) / steps
    stepper = _rk4_step if method == "rk4" else _midpoint_step

    def field(r, p, t):
        return vector_field(spec, PhasePoint(r, p, spec.chart), t)

    r, p = state.rho.copy(), state.pot.copy()
    _guard(r, p, spec.chart, t0)
    mass0 = _mass(r, p, spec.chart)

    times, rhos, pots, hs, defects, mins = [t0], [r.copy()], [p.copy()], \
        [eval_H(spec, state, t0)], [0.0], [_min_mass(r, p, spec.chart)]
    for k in range(steps):
        t = t0 + k * dt
        r, p = stepper(field, r, p, t, dt)
        _guard(r, p, spec.chart, t + dt)
        if (k + 1) % record_every == 0 or k == steps - 1:
            tk = t0 + (k + 1) * dt
            times.append(tk)
            rhos.append(r.copy())
            pots.append(p.copy())
            hs.append(eval_H(spec, PhasePoint(r, p, spec.chart), tk))
            defects.append(_mass(r, p, spec.chart) - mass0)
            mins.append(_min_mass(r, p, spec.chart))
    return Trajectory(np.array(times), np.array(rhos), np.array(pots),
                      spec.chart, np.array(hs), np.array(defects), np.array(mins))


def _min_mass(rho, pot, chart):
    if chart == "fg":
        return float(np.min(rho * pot))
    return float(np.min(rho))


# -- chart transforms ---------------------------------------------------------------


def hopf_cole(state: PhasePoint) -> PhasePoint:
    """(rho, S) -> (rho, psi) with psi = S + 1/2 log rho."""
    if state.chart != "S":
        raise ValueError("hopf_cole starts from the S chart")
    if np.min(state.rho) <= 0:
        raise BoundaryDensity("log of a nonpositive mass")
    return PhasePoint(state.rho, state.pot + 0.5 * np.log(state.rho), chart="psi")


def hopf_cole_inverse(state: PhasePoint) -> PhasePoint:
    if state.chart != "psi":
        raise ValueError("inverse starts from the psi chart")
    if np.min(state.rho) <= 0:
        raise BoundaryDensity("log of a nonpositive mass")
    return PhasePoint(state.rho, state.pot - 0.5 * np.log(state.rho), chart="S")


def madelung(state: PhasePoint, convention: str = "sbp") -> PhasePoint:
    """(rho, S) -> (f, g).

    "sbp": f = sqrt(rho) e^{-S}, g = sqrt(rho) e^{S}; df ^ dg = drho ^ dS.
    "fisher": exponents swapped; reverses the canonical form's sign.
    """
    if state.chart != "S":
        raise ValueError("madelung starts from the S chart")
    if np.min(state.rho) <= 0:
        raise BoundaryDensity("sqrt of a nonpositive mass")
    root = np.sqrt(state.rho)
    if convention == "sbp":
        return PhasePoint(root * np.exp(-state.pot), root * np.exp(state.pot), chart="fg")
    if convention == "fisher":
        return PhasePoint(root * np.exp(state.pot), root * np.exp(-state.pot), chart="fg")
    raise ValueError("unknown convention %r" % convention)


def madelung_inverse(state: PhasePoint, convention: str = "sbp") -> PhasePoint:
    if state.chart != "fg":
        raise ValueError("inverse starts from the fg chart")
    f, g = state.rho, state.pot
    if np.min(f) <= 0 or np.min(g) <= 0:
        raise NonpositiveFG("factorization requires strictly positive f and g")
    rho = f * g
    if convention == "sbp":
        return PhasePoint(rho, 0.5 * np.log(g / f), chart="S")
    if convention == "fisher":
        return PhasePoint(rho, 0.5 * np.log(f / g), chart="S")
    raise ValueError("unknown convention %r" % convention)


def symplectic_check(transform, state: PhasePoint, h: float = 1e-6) -> float:
    """max |D^T J D - J| for the finite-difference Jacobian D of a transform.

    Zero (to truncation error) certifies the transform preserves the
    canonical two-form, so Hamiltonian flows stay Hamiltonian through it.
    """
    n = len(state.rho)
    J = np.block([[np.zeros((n, n)), np.eye(n)], [-np.eye(n), np.zeros((n, n))]])

    def stacked(z):
        out = transform(PhasePoint(z[:n], z[n:], state.chart))
        return np.concatenate([out.rho, out.pot])

    z0 = np.concatenate([state.rho, state.pot])
    D = np.empty((2 * n, 2 * n))
    for col in range(2 * n):
        e = np.zeros(2 * n)
        e[col] = h
        D[:, col] = (stacked(z0 + e) - stacked(z0 - e)) / (2 * h)
    return float(np.max(np.abs(D.T @ J @ D - J)))


# -- linear factor flow ----------------------------------------------------------------


@dataclass
class FGFlow:
    """Forward factor f and backward factor g of the reference flow on a grid."""

    times: np.ndarray
    f: np.ndarray | None     # (K, n); d f/dt = f m(t), marched forward
    g: np.ndarray | None     # (K, n); d g/dt = -m(t) g, marched backward

    @property
    def rho(self) -> np.ndarray:
        if self.f is None or self.g is None:
            raise ValueError("need both factors for a density")
        return self.f * self.g


def _linear_rk4(mats, y, dt, right: bool):
    """One rk4 step of dy = y m (right=True) or dy = -m y (right=False).

    mats = (m(t), m(t + dt/2), m(t + dt)); dt may be negative.
    """
    m0, mh, m1 = mats
    if right:
        k1 = y @ m0
        k2 = (y + 0.5 * dt * k1) @ mh
        k3 = (y + 0.5 * dt * k2) @ mh
        k4 = (y + dt * k3) @ m1
    else:
        k1 = -(m0 @ y)
        k2 = -(mh @ (y + 0.5 * dt * k1))
        k3 = -(mh @ (y + 0.5 * dt * k2))
        k4 = -(m1 @ (y + dt * k3))
    return y + dt * (k1 + 2 * k2 + 2 * k3 + k4) / 6.0


def schrodinger_evolve(rates: ReferenceRates, f0=None, g1=None,
                       t0: float = 0.0, t1: float = 1.0, dt: float = 1e-3) -> FGFlow:
    """March the linear factor equations across [t0, t1].

    f0 seeds the forward equation at t0, g1 seeds the backward equation at
    t1; either or both. Both factors are reported on the same ascending grid.
    """
    if f0 is None and g1 is None:
        raise ValueError("give at least one of f0, g1")
    steps = max(1, int(round((t1 - t0) / dt)))
    dt = (t1 - t0) / steps
    times = t0 + dt * np.arange(steps + 1)
    half = rates.at_many(times[:-1] + 0.5 * dt)
    full = rates.at_many(times)

    f = None
    if f0 is not None:
        f = np.empty((steps + 1, rates.n))
        f[0] = _arr(f0)
        for k in range(steps):
            f[k + 1] = _linear_rk4((full[k], half[k], full[k + 1]), f[k], dt, right=True)
    g = None
    if g1 is not None:
        g = np.empty((steps + 1, rates.n))
        g[steps] = _arr(g1)
        for k in range(steps, 0, -1):
            g[k - 1] = _linear_rk4((full[k], half[k - 1], full[k - 1]), g[k], -dt, right=False)
    return FGFlow(times, f, g)


# -- monodromy of the density equation ---------------------------------------------------


@dataclass
class Monodromy:
    """Fundamental matrix of d rho = rho m(t) over one period, with spectrum."""

    matrix: np.ndarray
    multipliers: np.ndarray
    exponents: np.ndarray
    period: float
    unit_flags: np.ndarray   # |multiplier| within tol of the unit circle

    @property
    def has_unit_multiplier(self) -> bool:
        return bool(self.unit_flags.any())


def fundamental_matrix(rates: ReferenceRates, t0: float, t1: float, dt: float = 1e-4) -> np.ndarray:
    """U with rho(t1) = rho(t0) U, from rk4 on dU = U m(t), U(t0) = I."""
    steps = max(1, int(round((t1 - t0) / dt)))
    dt = (t1 - t0) / steps
    times = t0 + dt * np.arange(steps + 1)
    half = rates.at_many(times[:-1] + 0.5 * dt)
    full = rates.at_many(times)
    u = np.eye(rates.n)
    for k in range(steps):
        u = _linear_rk4((full[k], half[k], full[k + 1]), u, dt, right=True)
    return u


def monodromy(rates: ReferenceRates, period: float | None = None,
              dt: float = 1e-4, tol: float = 1e-6) -> Monodromy:
    """Spectrum of the one-period fundamental matrix of the density equation.

    Row sums of the fundamental matrix are conserved, so the multiplier 1 is
    structural whenever the rates stay a generator.
    """
    T = period if period is not None else rates.period
    if T is None:
        raise ValueError("no period given and the rates declare none")
    u = fundamental_matrix(rates, 0.0, T, dt)
    mult = np.linalg.eigvals(u)
    expo = np.log(mult.astype(complex)) / T
    flags = np.abs(np.abs(mult) - 1.0) <= tol
    return Monodromy(u, mult, expo, T, flags)
