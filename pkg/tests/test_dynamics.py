"""Integrators, chart transforms and monodromy.

Core claims checked here:
  * rk4 reproduces the closed-form two-node linear factor flow
  * energy drift: tiny for rk4 at dt = 1e-3 and contracts at fourth order;
    implicit midpoint contracts at second order
  * mass defect stays at rounding level along Hamiltonian flows
  * transforms round-trip exactly; the standard factorization convention
    preserves the canonical two-form, the swapped one reverses its sign
  * the same initial condition integrated in the three charts lands on the
    same final state after mapping back
  * the one-period fundamental matrix of the density equation keeps row sums
    at one and carries a structural unit multiplier

Entropic flows reach the simplex boundary in finite time for generic starts
(the backward factor grows at the reference spectral gap), so conservation
windows below use starts whose interior margin was verified against the
closed-form factor solution; each flow test also asserts the margin it
relies on.
"""

import math

import numpy as np
import pytest
import scipy.linalg

from graphham.errors import (
    BlowUp,
    NonconvergentImplicitStep,
    NonpositiveFG,
)
from graphham.graph import complete_graph, validate_graph
from graphham.hamiltonians import (
    PhasePoint,
    ReferenceRates,
    constant_rates,
    eval_H,
    ot_kinetic,
    sbp_entropic,
    sbp_psi,
    schrodinger_fg,
    symmetric_rates,
)
from graphham.dynamics import (
    FGFlow,
    fundamental_matrix,
    hopf_cole,
    hopf_cole_inverse,
    integrate,
    madelung,
    madelung_inverse,
    monodromy,
    schrodinger_evolve,
    symplectic_check,
)
from graphham.theta import AVERAGE


def two_node():
    return validate_graph(2, [(0, 1, 1.0)])


def flip_rates():
    return constant_rates([[-1.0, 1.0], [1.0, -1.0]])


def flip_propagator(t):
    e = math.exp(-2.0 * t)
    return 0.5 * np.array([[1 + e, 1 - e], [1 - e, 1 + e]])


def random_generator(rng, n):
    m = rng.uniform(0.2, 2.0, size=(n, n))
    np.fill_diagonal(m, 0.0)
    return constant_rates(m - np.diag(m.sum(axis=1)))


class TestIntegrators:
    def test_linear_flow_closed_form(self):
        # d f = f m from (1, 0): f(t) = (1 + e^{-2t}, 1 - e^{-2t}) / 2
        spec = schrodinger_fg(two_node(), flip_rates())
        traj = integrate(spec, PhasePoint([1.0, 0.0], [1.0, 1.0], chart="fg"),
                         0.0, 1.0, 1e-3)
        want = np.array([1.0, 0.0]) @ flip_propagator(1.0)
        assert np.max(np.abs(traj.rho[-1] - want)) < 1e-12

    # start with verified interior margin 0.12 on [0, 0.4] under unit rates
    SAFE_RHO = [0.5, 0.3, 0.2]
    SAFE_S = [0.2, -0.05, 0.15]

    def test_rk4_energy_drift_and_order(self):
        g = complete_graph(3)
        spec = sbp_entropic(g, symmetric_rates(g))
        state = PhasePoint(self.SAFE_RHO, self.SAFE_S)
        drifts = {}
        for dt in (2e-3, 1e-3):
            traj = integrate(spec, state, 0.0, 0.4, dt)
            assert traj.min_rho.min() > 0.05
            drifts[dt] = np.max(np.abs(traj.H - traj.H[0]))
        assert drifts[1e-3] <= 1e-8
        assert drifts[2e-3] / drifts[1e-3] >= 10.0

    def test_rk4_state_error_order(self):
        g = complete_graph(3)
        spec = sbp_entropic(g, symmetric_rates(g))
        state = PhasePoint(self.SAFE_RHO, self.SAFE_S)
        ref = integrate(spec, state, 0.0, 0.4, 1e-4).final
        errs = [np.max(np.abs(integrate(spec, state, 0.0, 0.4, dt).final.rho - ref.rho))
                for dt in (2e-2, 1e-2)]
        assert 10.0 <= errs[0] / errs[1] <= 24.0

    def test_midpoint_state_error_order(self):
        g = complete_graph(3)
        spec = sbp_entropic(g, symmetric_rates(g))
        state = PhasePoint(self.SAFE_RHO, self.SAFE_S)
        ref = integrate(spec, state, 0.0, 0.4, 1e-4).final
        errs = [np.max(np.abs(
            integrate(spec, state, 0.0, 0.4, dt, method="implicit_midpoint").final.rho
            - ref.rho)) for dt in (2e-2, 1e-2)]
        assert 3.0 <= errs[0] / errs[1] <= 5.5

    def test_midpoint_energy_stays_put(self):
        g = complete_graph(3)
        spec = sbp_entropic(g, symmetric_rates(g))
        state = PhasePoint(self.SAFE_RHO, self.SAFE_S)
        traj = integrate(spec, state, 0.0, 0.4, 1e-3, method="implicit_midpoint")
        assert np.max(np.abs(traj.H - traj.H[0])) < 1e-6

    def test_mass_defect_rounding_level(self):
        g = complete_graph(3)
        spec = ot_kinetic(g, AVERAGE)
        traj = integrate(spec, PhasePoint([0.5, 0.3, 0.2], [0.4, -0.1, 0.3]),
                         0.0, 1.0, 1e-3)
        assert np.max(np.abs(traj.mass_defect)) < 1e-13

    def test_blowup_on_negative_mass(self):
        spec = ot_kinetic(two_node(), AVERAGE)
        with pytest.raises(BlowUp):
            integrate(spec, PhasePoint([0.01, 0.99], [0.0, 10.0]), 0.0, 1.0, 1e-2)

    def test_midpoint_nonconvergence(self):
        g = complete_graph(3)
        spec = sbp_entropic(g, symmetric_rates(g, 40.0))
        state = PhasePoint([0.5, 0.3, 0.2], [0.4, -0.1, 0.3])
        with pytest.raises(NonconvergentImplicitStep):
            integrate(spec, state, 0.0, 1.0, 0.5, method="implicit_midpoint")

    def test_recording_and_landing(self):
        spec = ot_kinetic(two_node(), AVERAGE)
        traj = integrate(spec, PhasePoint([0.6, 0.4], [0.1, 0.0]),
                         0.0, 0.3, 1e-2, record_every=5)
        assert traj.times[-1] == pytest.approx(0.3, abs=1e-15)
        assert len(traj) == 1 + 30 // 5
        assert traj.rho.shape == (len(traj), 2)


class TestTransforms:
    def test_hopf_cole_pinned(self):
        st = PhasePoint([0.25, 0.75], [1.0, 0.0])
        out = hopf_cole(st)
        assert out.chart == "psi"
        assert np.allclose(out.pot, [1.0 + 0.5 * math.log(0.25), 0.5 * math.log(0.75)])
        back = hopf_cole_inverse(out)
        assert np.allclose(back.pot, st.pot) and np.allclose(back.rho, st.rho)

    def test_madelung_pinned(self):
        st = PhasePoint([0.25, 0.75], [math.log(2.0), 0.0])
        out = madelung(st)
        assert out.chart == "fg"
        assert out.f[0] == pytest.approx(0.25)      # sqrt(1/4) / 2
        assert out.g[0] == pytest.approx(1.0)       # sqrt(1/4) * 2
        swapped = madelung(st, convention="fisher")
        assert swapped.f[0] == pytest.approx(1.0)
        assert swapped.g[0] == pytest.approx(0.25)

    def test_madelung_roundtrip_both_conventions(self):
        rng = np.random.default_rng(9)
        for conv in ("sbp", "fisher"):
            rho = rng.uniform(0.1, 1.0, 4)
            rho /= rho.sum()
            st = PhasePoint(rho, rng.normal(size=4))
            back = madelung_inverse(madelung(st, conv), conv)
            assert np.max(np.abs(back.rho - st.rho)) < 1e-14
            assert np.max(np.abs(back.pot - st.pot)) < 1e-14

    def test_nonpositive_factor_rejected(self):
        with pytest.raises(NonpositiveFG):
            madelung_inverse(PhasePoint([1.0, -0.5], [1.0, 1.0], chart="fg"))

    def test_chart_guards(self):
        with pytest.raises(ValueError):
            hopf_cole(PhasePoint([0.5, 0.5], [0.0, 0.0], chart="psi"))
        with pytest.raises(ValueError):
            madelung(PhasePoint([0.5, 0.5], [0.0, 0.0], chart="fg"))


class TestSymplectic:
    def rand_states(self, rng, count=20, n=3):
        out = []
        for _ in range(count):
            rho = rng.uniform(0.1, 1.0, n)
            rho /= rho.sum()
            out.append(PhasePoint(rho, rng.normal(scale=0.8, size=n)))
        return out

    def test_hopf_cole_preserves_form(self):
        rng = np.random.default_rng(17)
        for st in self.rand_states(rng):
            assert symplectic_check(hopf_cole, st) < 1e-6

    def test_madelung_preserves_form(self):
        rng = np.random.default_rng(18)
        for st in self.rand_states(rng):
            assert symplectic_check(madelung, st) < 1e-6

    def test_swapped_convention_reverses_sign(self):
        # D^T J D = -J for the fisher convention: far from J, exactly -J
        rng = np.random.default_rng(19)
        st = self.rand_states(rng, count=1)[0]
        n = 3
        J = np.block([[np.zeros((n, n)), np.eye(n)], [-np.eye(n), np.zeros((n, n))]])

        def stacked(z):
            out = madelung(PhasePoint(z[:n], z[n:]), convention="fisher")
            return np.concatenate([out.rho, out.pot])

        z0 = np.concatenate([st.rho, st.pot])
        D = np.empty((6, 6))
        for col in range(6):
            e = np.zeros(6)
            e[col] = 1e-6
            D[:, col] = (stacked(z0 + e) - stacked(z0 - e)) / 2e-6
        assert np.max(np.abs(D.T @ J @ D + J)) < 1e-6
        assert symplectic_check(lambda s: madelung(s, "fisher"), st) > 1.0


class TestChartCommutation:
    def test_three_charts_land_together(self):
        rng = np.random.default_rng(23)
        g = complete_graph(3)
        # weak rates keep the flow interior across the whole unit window
        weak = 0.25 * random_generator(rng, 3).matrix
        rates = constant_rates(weak)
        rho0 = np.array([0.5, 0.2, 0.3])
        s0 = np.array([0.1, -0.05, 0.1])
        start = PhasePoint(rho0, s0)

        a_traj = integrate(sbp_entropic(g, rates), start, 0.0, 1.0, 1e-3)
        assert a_traj.min_rho.min() > 0.05
        a = a_traj.final

        b_traj = integrate(sbp_psi(g, rates), hopf_cole(start), 0.0, 1.0, 1e-3)
        b = hopf_cole_inverse(b_traj.final)

        c_traj = integrate(schrodinger_fg(g, rates), madelung(start), 0.0, 1.0, 1e-3)
        c = madelung_inverse(c_traj.final)

        for other in (b, c):
            assert np.max(np.abs(other.rho - a.rho)) < 1e-7
            assert np.max(np.abs(other.pot - a.pot)) < 1e-7

    def test_bilinear_energy_constant_in_fg(self):
        g = complete_graph(3)
        rng = np.random.default_rng(29)
        rates = random_generator(rng, 3)
        spec = schrodinger_fg(g, rates)
        st = PhasePoint(rng.uniform(0.5, 1.5, 3), rng.uniform(0.5, 1.5, 3), chart="fg")
        traj = integrate(spec, st, 0.0, 1.0, 1e-3)
        assert np.max(np.abs(traj.H - traj.H[0])) < 1e-10
        assert np.max(np.abs(traj.mass_defect)) < 1e-10


class TestFGFlow:
    def test_forward_factor_closed_form(self):
        flow = schrodinger_evolve(flip_rates(), f0=[1.0, 0.0], dt=1e-3)
        want = np.array([1.0, 0.0]) @ flip_propagator(1.0)
        assert np.max(np.abs(flow.f[-1] - want)) < 1e-12
        assert flow.g is None

    def test_backward_factor_closed_form(self):
        flow = schrodinger_evolve(flip_rates(), g1=[1.0, 0.0], dt=1e-3)
        want = flip_propagator(1.0) @ np.array([1.0, 0.0])
        assert np.max(np.abs(flow.g[0] - want)) < 1e-12

    def test_product_pairing_is_invariant(self):
        rng = np.random.default_rng(31)
        rates = random_generator(rng, 3)
        flow = schrodinger_evolve(rates, f0=[0.4, 0.3, 0.3], g1=[1.0, 2.0, 0.5], dt=1e-3)
        mass = flow.rho.sum(axis=1)
        assert np.max(np.abs(mass - mass[0])) < 1e-10
        assert flow.times[0] == 0.0 and flow.times[-1] == 1.0

    def test_needs_some_seed(self):
        with pytest.raises(ValueError):
            schrodinger_evolve(flip_rates())


class TestMonodromy:
    def test_constant_rates_closed_form(self):
        mono = monodromy(flip_rates(), period=1.0, dt=1e-4)
        assert np.max(np.abs(mono.matrix - flip_propagator(1.0))) < 1e-12
        mults = np.sort_complex(mono.multipliers)
        assert abs(mults[0] - math.exp(-2.0)) < 1e-10
        assert abs(mults[1] - 1.0) < 1e-10
        assert mono.has_unit_multiplier
        assert np.allclose(mono.matrix.sum(axis=1), 1.0, atol=1e-12)

    def test_commuting_time_dependent_family(self):
        base = np.array([[-1.0, 1.0], [1.0, -1.0]])

        def fn(t):
            return (1.0 + math.sin(t) ** 2) * base

        rates = ReferenceRates(2, fn=fn, period=2 * math.pi)
        mono = monodromy(rates, dt=1e-4)
        # integral of 1 + sin^2 over a period is 3 pi
        want = scipy.linalg.expm(3 * math.pi * base)
        assert np.max(np.abs(mono.matrix - want)) < 1e-9
        assert mono.has_unit_multiplier

    def test_period_required(self):
        with pytest.raises(ValueError):
            monodromy(flip_rates())

    def test_fundamental_matrix_rows_sum_to_one(self):
        rng = np.random.default_rng(37)
        rates = random_generator(rng, 4)
        u = fundamental_matrix(rates, 0.0, 2.0, dt=1e-3)
        assert np.allclose(u.sum(axis=1), 1.0, atol=1e-12)
        assert u.min() >= -1e-12
