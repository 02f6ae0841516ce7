from __future__ import annotations

import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bilocnet.quantum_core import (
    DIAG_MINUS,
    DIAG_PLUS,
    SIGMA_X,
    SIGMA_X_OBS,
    SIGMA_Y,
    SIGMA_Z,
    SIGMA_Z_OBS,
    Behavior,
    DichotomicObservable,
    IncompleteBehaviorError,
    MeasurementPlan,
    TwoQubitState,
    ab_marginal,
    bipartite_behavior,
    biloc_functional,
    born_arm_behavior,
    born_behavior,
    chsh,
    correlator,
    correlators,
    fidelity,
    hwp_to_observable,
    link_chsh,
    maximally_mixed,
    singlet_state,
    singlet_vector,
    visibility_for_chsh,
    werner_state,
)

from oracles import OPTIMAL_VECTORS, singlet_matrix, trace_correlators, werner_matrix

# E[xA, xB, xC] for two singlets under the optimal plan, from the operator-trace oracle
IDEAL_CORRELATORS = np.array([[[0.5, 0.5], [0.5, -0.5]],
                              [[0.5, 0.5], [-0.5, 0.5]]])
# Born-rule values for the Werner-calibrated pair (v1, v2) = (0.8783, 0.9543), oracle-frozen
WERNER_I = 0.419080845
WERNER_B = 1.294729075907388
WERNER_S_AB = 2.484207543664578
WERNER_S_BC = 2.699168005145288


def unit_vectors():
    return st.tuples(*(st.floats(-1, 1, allow_nan=False) for _ in range(3))).filter(
        lambda v: np.linalg.norm(v) > 0.1).map(lambda v: tuple(np.array(v) / np.linalg.norm(v)))


def density_matrices():
    def build(seed):
        rng = np.random.default_rng(seed)
        g = rng.normal(size=(4, 4)) + 1j * rng.normal(size=(4, 4))
        m = g @ g.conj().T
        m = (m + m.conj().T) / 2
        return m / np.trace(m).real
    return st.integers(0, 2**32 - 1).map(build)


def plans():
    pair = st.tuples(unit_vectors(), unit_vectors())
    return st.tuples(pair, pair, pair, pair)


def plan_from_vectors(vecs) -> MeasurementPlan:
    return MeasurementPlan(*(tuple(DichotomicObservable(v) for v in pair) for pair in vecs))


class TestStates:
    def test_singlet_is_pure_and_isotropic(self):
        rho = singlet_state()
        assert rho.purity() == pytest.approx(1.0, abs=1e-12)
        assert fidelity(rho, singlet_vector()) == pytest.approx(1.0, abs=1e-12)
        for s in (SIGMA_X, SIGMA_Y, SIGMA_Z):
            assert rho.expectation(np.kron(s, s)) == pytest.approx(-1.0, abs=1e-12)

    def test_singlet_vector_amplitudes(self):
        np.testing.assert_allclose(singlet_vector(), np.array([0, 1, -1, 0]) / np.sqrt(2))

    def test_werner_endpoints(self):
        np.testing.assert_allclose(werner_state(1.0).matrix, singlet_state().matrix, atol=1e-15)
        np.testing.assert_allclose(werner_state(0.0).matrix, maximally_mixed().matrix)

    @pytest.mark.parametrize("v", [-0.01, 1.01, np.nan])
    def test_werner_rejects_bad_visibility(self, v):
        with pytest.raises(ValueError):
            werner_state(v)

    def test_werner_fidelity_example(self):
        assert fidelity(werner_state(0.94), singlet_vector()) == pytest.approx(0.955, abs=1e-12)

    def test_mixed_state_fidelity(self):
        assert fidelity(maximally_mixed(), singlet_vector()) == pytest.approx(0.25)

    @given(st.floats(0, 1))
    def test_werner_fidelity_formula(self, v):
        assert fidelity(werner_state(v), singlet_vector()) == pytest.approx((1 + 3 * v) / 4,
                                                                           abs=1e-12)

    def test_rejects_non_hermitian(self):
        m = np.eye(4, dtype=complex) / 4
        m[0, 1] = 0.1j
        with pytest.raises(ValueError, match="Hermitian"):
            TwoQubitState(m)

    def test_rejects_wrong_trace(self):
        with pytest.raises(ValueError, match="trace"):
            TwoQubitState(np.eye(4) / 3)

    def test_rejects_negative_eigenvalue(self):
        with pytest.raises(ValueError, match="semidefinite"):
            TwoQubitState(np.diag([0.6, 0.6, 0.1, -0.3]))

    def test_rejects_wrong_shape(self):
        with pytest.raises(ValueError):
            TwoQubitState(np.eye(2) / 2)

    def test_psd_tolerance_admits_rounding(self):
        m = np.diag([0.5, 0.5 + 5e-11, 0.0, -5e-11]).astype(complex)
        TwoQubitState(m)

    def test_visibility_for_chsh_inverts_tsirelson_scaling(self):
        assert visibility_for_chsh(2 * np.sqrt(2)) == pytest.approx(1.0)
        assert visibility_for_chsh(2.484) == pytest.approx(2.484 / (2 * np.sqrt(2)))


class TestObservables:
    @pytest.mark.parametrize("theta, bloch", [
        (0.0, (0, 0, 1)),
        (22.5, (1, 0, 0)),
        (11.25, (1 / np.sqrt(2), 0, 1 / np.sqrt(2))),
        (33.75, (1 / np.sqrt(2), 0, -1 / np.sqrt(2))),
    ])
    def test_hwp_mapping(self, theta, bloch):
        np.testing.assert_allclose(hwp_to_observable(theta).bloch, bloch, atol=1e-15)

    def test_named_constants(self):
        np.testing.assert_allclose(SIGMA_Z_OBS.operator, SIGMA_Z)
        np.testing.assert_allclose(SIGMA_X_OBS.operator, SIGMA_X)
        np.testing.assert_allclose(DIAG_PLUS.operator, (SIGMA_Z + SIGMA_X) / np.sqrt(2))
        np.testing.assert_allclose(DIAG_MINUS.operator, (SIGMA_Z - SIGMA_X) / np.sqrt(2))

    def test_zero_vector_rejected(self):
        with pytest.raises(ValueError, match="non-zero"):
            DichotomicObservable((0, 0, 0))

    def test_non_unit_vector_rejected(self):
        with pytest.raises(ValueError, match="unit"):
            DichotomicObservable((0, 0, 2))

    @given(unit_vectors())
    def test_eigenvalues_are_plus_minus_one(self, n):
        obs = DichotomicObservable(n)
        np.testing.assert_allclose(np.linalg.eigvalsh(obs.operator), [-1, 1], atol=1e-12)
        plus, minus = obs.projectors()
        np.testing.assert_allclose(plus + minus, np.eye(2), atol=1e-15)
        np.testing.assert_allclose(plus @ plus, plus, atol=1e-12)
        np.testing.assert_allclose(plus - minus, obs.operator, atol=1e-15)

    def test_plan_requires_two_settings(self):
        with pytest.raises(ValueError, match="exactly two"):
            MeasurementPlan((SIGMA_Z_OBS,), (SIGMA_Z_OBS, SIGMA_X_OBS),
                            (SIGMA_Z_OBS, SIGMA_X_OBS), (SIGMA_Z_OBS, SIGMA_X_OBS))


class TestBehavior:
    def test_maximally_mixed_gives_uniform(self):
        beh = born_behavior(maximally_mixed(), maximally_mixed(), MeasurementPlan.optimal())
        np.testing.assert_allclose(beh.table, 1 / 8, atol=1e-15)

    def test_ideal_correlators_match_trace_oracle(self):
        beh = born_behavior(singlet_state(), singlet_state(), MeasurementPlan.optimal())
        np.testing.assert_allclose(correlators(beh), IDEAL_CORRELATORS, atol=1e-12)
        oracle = trace_correlators(singlet_matrix(), singlet_matrix(), OPTIMAL_VECTORS)
        np.testing.assert_allclose(correlators(beh), oracle, atol=1e-12)

    def test_all_zero_setting_correlator(self):
        beh = born_behavior(singlet_state(), singlet_state(), MeasurementPlan.optimal())
        assert correlator(beh, 0, 0, 0) == pytest.approx(0.5, abs=1e-12)

    def test_all_one_setting_correlator_sign(self):
        # the oracle gives +1/2 here; the -1/2 entries sit at (0,1,1) and (1,1,0)
        beh = born_behavior(singlet_state(), singlet_state(), MeasurementPlan.optimal())
        assert correlator(beh, 1, 1, 1) == pytest.approx(0.5, abs=1e-12)
        assert correlator(beh, 0, 1, 1) == pytest.approx(-0.5, abs=1e-12)
        assert correlator(beh, 1, 1, 0) == pytest.approx(-0.5, abs=1e-12)

    def test_uncorrelated_second_source_kills_c_correlators(self):
        beh = born_behavior(singlet_state(), maximally_mixed(), MeasurementPlan.optimal())
        np.testing.assert_allclose(correlators(beh), 0.0, atol=1e-12)

    def test_uniform_and_deterministic_correlators(self):
        np.testing.assert_allclose(correlators(Behavior.uniform()), 0.0)
        np.testing.assert_allclose(correlators(Behavior.deterministic()), 1.0)
        np.testing.assert_allclose(correlators(Behavior.deterministic(1, 0, 0)), -1.0)

    def test_missing_cell_is_refused(self):
        t = np.full((2,) * 6, 1 / 8)
        t[1, 0, 1] = np.nan
        beh = Behavior(t)
        assert beh.missing_settings == [(1, 0, 1)]
        with pytest.raises(IncompleteBehaviorError):
            correlators(beh)
        with pytest.raises(IncompleteBehaviorError):
            correlator(beh, 1, 0, 1)
        assert correlator(beh, 0, 0, 0) == 0.0

    def test_rejects_unnormalized(self):
        with pytest.raises(ValueError, match="sums"):
            Behavior(np.full((2,) * 6, 1 / 7))

    def test_rejects_out_of_range(self):
        t = np.full((2,) * 6, 1 / 8)
        t[0, 0, 0] = 0.0
        t[0, 0, 0, 0, 0, 0], t[0, 0, 0, 0, 0, 1] = 1.2, -0.2
        with pytest.raises(ValueError, match="outside"):
            Behavior(t)

    @settings(max_examples=40, deadline=None)
    @given(density_matrices(), density_matrices(), plans())
    def test_born_behavior_normalized(self, m1, m2, vecs):
        beh = born_behavior(TwoQubitState(m1), TwoQubitState(m2), plan_from_vectors(vecs))
        sums = beh.table.reshape(8, 8).sum(axis=1)
        np.testing.assert_allclose(sums, 1.0, atol=1e-12)
        assert beh.table.min() >= -1e-12

    @settings(max_examples=40, deadline=None)
    @given(density_matrices(), density_matrices(), plans())
    def test_born_matches_operator_trace(self, m1, m2, vecs):
        beh = born_behavior(TwoQubitState(m1), TwoQubitState(m2), plan_from_vectors(vecs))
        np.testing.assert_allclose(correlators(beh), trace_correlators(m1, m2, vecs), atol=1e-10)

    def test_product_formula_on_100_random_plans(self):
        rng = np.random.default_rng(2024)
        for _ in range(100):
            v = rng.normal(size=(8, 3))
            v /= np.linalg.norm(v, axis=1, keepdims=True)
            vecs = ((v[0], v[1]), (v[2], v[3]), (v[4], v[5]), (v[6], v[7]))
            beh = born_behavior(singlet_state(), singlet_state(), plan_from_vectors(vecs))
            E = correlators(beh)
            for xa, xb, xc in itertools.product((0, 1), repeat=3):
                expected = (v[xa] @ v[2 + xb]) * (v[4 + xb] @ v[6 + xc])
                assert E[xa, xb, xc] == pytest.approx(expected, abs=1e-10)

    def test_arm_behavior_keeps_both_bits(self):
        arm = born_arm_behavior(singlet_state(), singlet_state(), MeasurementPlan.optimal())
        assert arm.table.shape == (2,) * 7
        np.testing.assert_allclose(arm.parity().table,
                                   born_behavior(singlet_state(), singlet_state(),
                                                 MeasurementPlan.optimal()).table)


class TestFunctionals:
    def test_quantum_maximum(self):
        r = biloc_functional(born_behavior(singlet_state(), singlet_state(),
                                           MeasurementPlan.optimal()))
        assert (r.I1, r.I2) == (pytest.approx(0.5, abs=1e-12), pytest.approx(0.5, abs=1e-12))
        assert r.B == pytest.approx(np.sqrt(2), abs=1e-12)

    def test_literal_convention_on_ideal_plan(self):
        r = biloc_functional(born_behavior(singlet_state(), singlet_state(),
                                           MeasurementPlan.optimal()), "literal")
        assert r.I1 == pytest.approx(0.25, abs=1e-12)
        assert r.B == pytest.approx(1.0, abs=1e-12)

    def test_werner_calibrated_value(self):
        r = biloc_functional(born_behavior(werner_state(0.8783), werner_state(0.9543),
                                           MeasurementPlan.optimal()))
        assert r.I1 == pytest.approx(WERNER_I, abs=1e-9)
        assert r.I2 == pytest.approx(WERNER_I, abs=1e-9)
        assert r.B == pytest.approx(WERNER_B, abs=1e-12)

    def test_uniform_gives_zero(self):
        r = biloc_functional(Behavior.uniform())
        assert (r.I1, r.I2, r.B) == (0.0, 0.0, 0.0)

    def test_unknown_convention(self):
        with pytest.raises(ValueError):
            biloc_functional(Behavior.uniform(), "other")

    def test_visibility_grid_closed_form(self):
        plan = MeasurementPlan.optimal()
        for v1 in np.linspace(0.05, 1, 10):
            for v2 in np.linspace(0.05, 1, 10):
                r = biloc_functional(born_behavior(werner_state(v1), werner_state(v2), plan))
                assert r.B == pytest.approx(np.sqrt(2) * np.sqrt(v1 * v2), abs=1e-10)

    def test_werner_matches_trace_oracle(self):
        oracle = trace_correlators(werner_matrix(0.8783), werner_matrix(0.9543), OPTIMAL_VECTORS)
        beh = born_behavior(werner_state(0.8783), werner_state(0.9543), MeasurementPlan.optimal())
        np.testing.assert_allclose(correlators(beh), oracle, atol=1e-12)

    @settings(max_examples=40, deadline=None)
    @given(density_matrices(), density_matrices(), plans())
    def test_b_is_sum_of_roots(self, m1, m2, vecs):
        for conv in ("peripheral-sum", "literal"):
            r = biloc_functional(born_behavior(TwoQubitState(m1), TwoQubitState(m2),
                                               plan_from_vectors(vecs)), conv)
            assert -1 <= r.I1 <= 1 and -1 <= r.I2 <= 1
            assert r.B == pytest.approx(np.sqrt(abs(r.I1)) + np.sqrt(abs(r.I2)), abs=1e-12)

    @settings(max_examples=40, deadline=None)
    @given(density_matrices(), density_matrices(), plans())
    def test_joint_peripheral_relabeling_invariance(self, m1, m2, vecs):
        beh = born_behavior(TwoQubitState(m1), TwoQubitState(m2), plan_from_vectors(vecs))
        flipped = Behavior(beh.table[:, :, :, ::-1, :, ::-1])
        a, b = biloc_functional(beh), biloc_functional(flipped)
        assert (a.I1, a.I2) == (pytest.approx(b.I1, abs=1e-12), pytest.approx(b.I2, abs=1e-12))


class TestChsh:
    def test_tsirelson_point(self):
        plan = MeasurementPlan.optimal()
        assert link_chsh(singlet_state(), plan, "AB") == pytest.approx(2 * np.sqrt(2), abs=1e-12)
        assert link_chsh(singlet_state(), plan, "BC") == pytest.approx(2 * np.sqrt(2), abs=1e-12)

    def test_werner_links(self):
        plan = MeasurementPlan.optimal()
        assert link_chsh(werner_state(0.8783), plan, "AB") == pytest.approx(WERNER_S_AB, abs=1e-12)
        assert link_chsh(werner_state(0.9543), plan, "BC") == pytest.approx(WERNER_S_BC, abs=1e-12)

    @given(st.floats(0, 1))
    def test_werner_scaling(self, v):
        s = link_chsh(werner_state(v), MeasurementPlan.optimal(), "AB")
        assert s == pytest.approx(2 * np.sqrt(2) * v, abs=1e-12)

    def test_local_deterministic_bound_is_attained(self):
        best = 0.0
        for a0, a1, b0, b1 in itertools.product((0, 1), repeat=4):
            p = np.zeros((2, 2, 2, 2))
            for x, y in itertools.product((0, 1), repeat=2):
                p[x, y, (a0, a1)[x], (b0, b1)[y]] = 1
            s = chsh(p)
            assert s <= 2 + 1e-12
            best = max(best, s)
        assert best == 2.0

    @settings(max_examples=40, deadline=None)
    @given(density_matrices(), st.tuples(unit_vectors(), unit_vectors()),
           st.tuples(unit_vectors(), unit_vectors()), st.sampled_from([0, 1]))
    def test_single_party_relabeling_invariance(self, m, left, right, party):
        p = bipartite_behavior(TwoQubitState(m), tuple(DichotomicObservable(v) for v in left),
                               tuple(DichotomicObservable(v) for v in right))
        q = p[:, :, ::-1, :] if party == 0 else p[:, :, :, ::-1]
        assert chsh(q) == pytest.approx(chsh(p), abs=1e-12)

    def test_parity_marginal_carries_no_ab_violation(self):
        beh = born_behavior(singlet_state(), singlet_state(), MeasurementPlan.optimal())
        for xc in (0, 1):
            assert chsh(ab_marginal(beh, xc)) == pytest.approx(0.0, abs=1e-12)

    def test_rejects_wrong_shape(self):
        with pytest.raises(ValueError):
            chsh(np.zeros((2, 2, 2)))
