import math

import numpy as np
import pytest

from meetsep import (
    CACGMM,
    MixtureState,
    SingularParameterError,
    cacg_log_pdf,
    e_step,
    load_state,
    log_likelihood,
    m_step_parameters,
    m_step_priors,
    save_state,
)
from meetsep.cacgmm import _regularize

from reference import (
    random_observations,
    random_psd,
    ref_cacg_log_pdf,
    ref_e_step,
    ref_log_likelihood,
    ref_m_step_parameters,
    ref_m_step_priors,
)


class TestLogPdf:
    def test_single_channel_is_uniform_on_circle(self):
        for b in (0.1, 1.0, 7.5):
            value = cacg_log_pdf(np.array([1.0 + 0j]), np.array([[b]]))
            assert value == pytest.approx(math.log(1 / (2 * math.pi)), abs=1e-12)

    def test_identity_two_channels(self, rng):
        z = random_observations(rng, 1, 1, 2)[0, 0]
        value = cacg_log_pdf(z, np.eye(2))
        assert value == pytest.approx(math.log(1 / (2 * math.pi**2)), abs=1e-12)

    def test_scale_invariance(self, rng):
        for _ in range(10):
            M = rng.integers(2, 5)
            z = random_observations(rng, 1, 1, M)[0, 0]
            B = random_psd(rng, M)
            c = rng.uniform(0.1, 10.0)
            assert cacg_log_pdf(z, c * B) == pytest.approx(
                cacg_log_pdf(z, B), abs=1e-9
            )

    def test_matches_reference(self, rng):
        for _ in range(20):
            M = rng.integers(1, 5)
            z = random_observations(rng, 1, 1, M)[0, 0]
            B = random_psd(rng, M)
            assert cacg_log_pdf(z, B) == pytest.approx(
                ref_cacg_log_pdf(z, B), abs=1e-9
            )

    def test_rejects_non_unit_vector(self):
        with pytest.raises(ValueError, match="unit norm"):
            cacg_log_pdf(np.array([2.0, 0.0]), np.eye(2))

    def test_singular_matrix_reports_index(self, rng):
        z = random_observations(rng, 4, 3, 2)
        B = np.broadcast_to(np.eye(2, dtype=complex), (3, 2, 2, 2)).copy()
        B[1, 1] = 0.0
        priors = np.full((4, 2), 0.5)
        with pytest.raises(SingularParameterError) as info:
            e_step(z, priors, B)
        assert (info.value.frequency, info.value.klass) == (1, 1)

    def test_density_normalizes_on_sphere(self, rng):
        # Monte Carlo over uniform unit vectors in C^2; the sphere S^3 has
        # surface area 2 pi^2.
        samples = rng.standard_normal((200_000, 2)) + 1j * rng.standard_normal(
            (200_000, 2)
        )
        samples /= np.linalg.norm(samples, axis=1, keepdims=True)
        B = random_psd(rng, 2)
        B_inv = np.linalg.inv(B)
        quad = np.einsum("nm,mk,nk->n", samples.conj(), B_inv, samples).real
        density = 1.0 / (2 * np.pi**2 * np.linalg.det(B).real) * quad**-2
        integral = density.mean() * 2 * np.pi**2
        assert integral == pytest.approx(1.0, rel=0.02)


class TestESteps:
    def test_uniform_for_identity_parameters(self, rng):
        T, F, M, K = 5, 4, 3, 4
        z = random_observations(rng, T, F, M)
        B = np.broadcast_to(np.eye(M, dtype=complex), (F, K, M, M)).copy()
        priors = np.full((T, K), 1 / K)
        gamma = e_step(z, priors, B)
        np.testing.assert_allclose(gamma, 1 / K, atol=1e-12)

    def test_single_class_gives_ones(self, rng):
        z = random_observations(rng, 4, 3, 2)
        B = np.broadcast_to(np.eye(2, dtype=complex), (3, 1, 2, 2)).copy()
        gamma = e_step(z, np.ones((4, 1)), B)
        np.testing.assert_allclose(gamma, 1.0)

    def test_two_class_example_against_direct_evaluation(self):
        z = np.array([[[1.0 + 0j, 0.0]]])
        B = np.stack(
            [np.diag([1.9, 0.1]).astype(complex), np.eye(2, dtype=complex)]
        )[None]
        priors = np.array([[0.5, 0.5]])
        gamma = e_step(z, priors, B)
        # Direct evaluation: class 1 density det^-1 (z^H B^-1 z)^-2.
        d1 = (1 / 0.19) * (1 / 1.9) ** -2
        d2 = 1.0
        expected = d1 / (d1 + d2)
        assert gamma[0, 0, 0] == pytest.approx(expected, abs=1e-12)

    def test_matches_reference(self, rng):
        T, F, M, K = 6, 3, 2, 3
        z = random_observations(rng, T, F, M)
        B = np.stack(
            [[random_psd(rng, M) for _ in range(K)] for _ in range(F)]
        )
        priors = rng.dirichlet(np.ones(K), size=T)
        gamma = e_step(z, priors, B)
        np.testing.assert_allclose(gamma, ref_e_step(z, priors, B), atol=1e-9)

    def test_rows_normalized(self, rng):
        z = random_observations(rng, 10, 5, 3)
        B = np.stack(
            [[random_psd(rng, 3) for _ in range(2)] for _ in range(5)]
        )
        priors = rng.dirichlet(np.ones(2), size=10)
        gamma = e_step(z, priors, B)
        np.testing.assert_allclose(gamma.sum(-1), 1.0, atol=1e-9)

    def test_masked_bins_uniform(self, rng):
        z = random_observations(rng, 4, 3, 2)
        mask = np.zeros((4, 3), dtype=bool)
        mask[2, 1] = True
        B = np.stack([[random_psd(rng, 2) for _ in range(3)] for _ in range(3)])
        priors = rng.dirichlet(np.ones(3), size=4)
        gamma = e_step(z, priors, B, zero_mask=mask)
        np.testing.assert_allclose(gamma[2, 1], 1 / 3)

    def test_scale_invariance_of_posteriors(self, rng):
        z = random_observations(rng, 5, 4, 2)
        B = np.stack([[random_psd(rng, 2) for _ in range(2)] for _ in range(4)])
        priors = rng.dirichlet(np.ones(2), size=5)
        gamma = e_step(z, priors, B)
        scaled = B.copy()
        scaled[1, 0] *= 37.5
        gamma2 = e_step(z, priors, scaled)
        np.testing.assert_allclose(gamma, gamma2, atol=1e-12)


class TestMSteps:
    def test_uniform_gamma_gives_uniform_priors(self):
        gamma = np.full((4, 6, 3), 1 / 3)
        np.testing.assert_allclose(m_step_priors(gamma), 1 / 3)

    def test_one_hot_gamma(self):
        gamma = np.zeros((2, 5, 3))
        gamma[..., 2] = 1.0
        priors = m_step_priors(gamma)
        np.testing.assert_allclose(priors[:, 2], 1.0)

    def test_arithmetic_mean(self):
        gamma = np.zeros((1, 2, 2))
        gamma[0, :, 0] = [0.2, 0.6]
        gamma[0, :, 1] = [0.8, 0.4]
        np.testing.assert_allclose(m_step_priors(gamma)[0, 0], 0.4)

    def test_matches_reference_priors(self, rng):
        gamma = rng.dirichlet(np.ones(4), size=(7, 5))
        np.testing.assert_allclose(
            m_step_priors(gamma), ref_m_step_priors(gamma), atol=1e-12
        )

    def test_single_class_unit_gamma_gives_scatter(self, rng):
        T, F, M = 12, 2, 2
        z = random_observations(rng, T, F, M)
        gamma = np.ones((T, F, 1))
        B_prev = np.broadcast_to(np.eye(M, dtype=complex), (F, 1, M, M)).copy()
        B = m_step_parameters(z, gamma, B_prev)
        for f in range(F):
            scatter = np.einsum("tm,tn->mn", z[:, f], z[:, f].conj()) * M / T
            expected = _regularize(scatter[None], 1e-10)[0]
            np.testing.assert_allclose(B[f, 0], expected, atol=1e-10)

    def test_basis_vectors_give_identity(self):
        M = 3
        z = np.tile(np.eye(M, dtype=complex), (4, 1))[:, None, :]  # [12, 1, 3]
        gamma = np.ones((12, 1, 1))
        B_prev = np.broadcast_to(np.eye(M, dtype=complex), (1, 1, M, M)).copy()
        B = m_step_parameters(z, gamma, B_prev)
        np.testing.assert_allclose(B[0, 0], np.eye(M), atol=1e-10)

    def test_matches_reference(self, rng):
        T, F, M, K = 8, 2, 2, 3
        z = random_observations(rng, T, F, M)
        gamma = rng.dirichlet(np.ones(K), size=(T, F))
        B_prev = np.stack(
            [[random_psd(rng, M) for _ in range(K)] for _ in range(F)]
        )
        B_prev = _regularize(B_prev, 1e-10)
        B = m_step_parameters(z, gamma, B_prev)
        np.testing.assert_allclose(
            B, ref_m_step_parameters(z, gamma, B_prev), atol=1e-9
        )

    def test_zero_mass_freezes_parameter(self, rng):
        z = random_observations(rng, 5, 2, 2)
        gamma = rng.dirichlet(np.ones(2), size=(5, 2))
        gamma[:, 1, 0] = 0.0
        B_prev = _regularize(
            np.stack([[random_psd(rng, 2) for _ in range(2)] for _ in range(2)]),
            1e-10,
        )
        with pytest.warns(RuntimeWarning, match="zero responsibility"):
            B = m_step_parameters(z, gamma, B_prev)
        np.testing.assert_allclose(B[1, 0], B_prev[1, 0])

    def test_result_hermitian_unit_trace(self, rng):
        z = random_observations(rng, 9, 3, 3)
        gamma = rng.dirichlet(np.ones(2), size=(9, 3))
        B_prev = np.broadcast_to(np.eye(3, dtype=complex), (3, 2, 3, 3)).copy()
        B = m_step_parameters(z, gamma, B_prev)
        np.testing.assert_allclose(B, np.conj(B.swapaxes(-2, -1)), atol=1e-10)
        np.testing.assert_allclose(
            np.trace(B, axis1=-2, axis2=-1).real, 3.0, atol=1e-9
        )


class TestLogLikelihood:
    def test_single_identity_class(self, rng):
        T, F, M = 6, 5, 2
        z = random_observations(rng, T, F, M)
        B = np.broadcast_to(np.eye(M, dtype=complex), (F, 1, M, M)).copy()
        value = log_likelihood(z, np.ones((T, 1)), B)
        assert value == pytest.approx(T * F * math.log(1 / (2 * math.pi**2)), abs=1e-9)

    def test_invariant_under_relabeling(self, rng):
        T, F, M, K = 5, 3, 2, 3
        z = random_observations(rng, T, F, M)
        B = np.stack([[random_psd(rng, M) for _ in range(K)] for _ in range(F)])
        priors = rng.dirichlet(np.ones(K), size=T)
        perm = [2, 0, 1]
        assert log_likelihood(z, priors, B) == pytest.approx(
            log_likelihood(z, priors[:, perm], B[:, perm]), abs=1e-9
        )

    def test_matches_reference(self, rng):
        T, F, M, K = 7, 3, 2, 2
        z = random_observations(rng, T, F, M)
        B = np.stack([[random_psd(rng, M) for _ in range(K)] for _ in range(F)])
        priors = rng.dirichlet(np.ones(K), size=T)
        assert log_likelihood(z, priors, B) == pytest.approx(
            ref_log_likelihood(z, priors, B), abs=1e-9
        )


class TestFit:
    def test_full_em_matches_scalar_reference(self, rng):
        T, F, M, K = 12, 3, 2, 3
        z = random_observations(rng, T, F, M)
        gamma0 = rng.dirichlet(np.ones(K), size=(T, F))

        model = CACGMM(n_classes=K, n_iterations=4, permutation_solver=False)
        model.fit(z, initialization=gamma0)

        gamma = gamma0.copy()
        B = np.broadcast_to(np.eye(M, dtype=complex), (F, K, M, M)).copy()
        trace = []
        for _ in range(4):
            priors = ref_m_step_priors(gamma)
            B = ref_m_step_parameters(z, gamma, B)
            gamma = ref_e_step(z, priors, B)
            trace.append(ref_log_likelihood(z, priors, B))
        np.testing.assert_allclose(model.priors_, priors, atol=1e-9)
        np.testing.assert_allclose(model.parameters_, B, atol=1e-9)
        np.testing.assert_allclose(model.posteriors_, gamma, atol=1e-9)
        np.testing.assert_allclose(model.log_likelihood_trace_, trace, atol=1e-9)

    def test_recovers_disjoint_sources(self, rng):
        # Two sources with distinct steering vectors alternate over time
        # (overlapping in the middle); oracle init from the true activity
        # should recover the per-bin dominance map.
        from meetsep import init_oracle

        T, F, M = 80, 16, 3
        steering = rng.standard_normal((2, M)) + 1j * rng.standard_normal((2, M))
        activity = np.zeros((T, 2), dtype=bool)
        activity[:50, 0] = True
        activity[40:, 1] = True
        dominant = np.where(
            activity[:, 0][:, None] & activity[:, 1][:, None],
            rng.integers(0, 2, size=(T, F)),
            activity[:, 1][:, None].astype(int),
        )
        amp = rng.standard_normal((T, F)) + 1j * rng.standard_normal((T, F))
        z = steering[dominant] * amp[..., None]
        z += 0.02 * (rng.standard_normal(z.shape) + 1j * rng.standard_normal(z.shape))
        z /= np.linalg.norm(z, axis=-1, keepdims=True)

        model = CACGMM(n_classes=3, n_iterations=20).fit(
            z, initialization=init_oracle(activity)
        )
        hard = np.argmax(model.posteriors_, axis=-1)
        agreement = max(
            np.mean((hard == a) == (dominant == 0)) for a in range(3)
        )
        assert agreement > 0.9

    def test_log_likelihood_nondecreasing(self, rng):
        z = random_observations(rng, 30, 8, 2)
        model = CACGMM(n_classes=2, n_iterations=25, random_state=3).fit(z)
        trace = np.asarray(model.log_likelihood_trace_)
        drops = trace[:-1] - trace[1:]
        assert np.all(drops <= 1e-6 * np.abs(trace[:-1]))

    def test_default_iteration_count_is_100(self):
        assert CACGMM().n_iterations == 100

    def test_prior_initialization_matches_broadcast_posterior(self, rng):
        T, F, M, K = 10, 4, 2, 2
        z = random_observations(rng, T, F, M)
        priors = rng.dirichlet(np.ones(K), size=T)
        a = CACGMM(n_classes=K, n_iterations=3, permutation_solver=False).fit(
            z, initialization=priors
        )
        b = CACGMM(n_classes=K, n_iterations=3, permutation_solver=False).fit(
            z, initialization=np.broadcast_to(priors[:, None], (T, F, K))
        )
        np.testing.assert_allclose(a.posteriors_, b.posteriors_)

    def test_fusion_hook_reduces_classes(self, rng):
        z = random_observations(rng, 40, 6, 2)

        def fuse(state):
            merged_priors = np.stack(
                [state.priors[:, 0] + state.priors[:, 1], state.priors[:, 2]], 1
            )
            merged_post = np.stack(
                [
                    state.posteriors[..., 0] + state.posteriors[..., 1],
                    state.posteriors[..., 2],
                ],
                -1,
            )
            return MixtureState(
                priors=merged_priors,
                parameters=state.parameters[:, [0, 2]],
                posteriors=merged_post,
                log_likelihood_trace=state.log_likelihood_trace,
            )

        model = CACGMM(n_classes=3, n_iterations=6, random_state=0).fit(
            z, hooks={3: fuse}
        )
        assert model.n_classes_ == 2
        assert model.priors_.shape[1] == 2
        np.testing.assert_allclose(model.priors_.sum(1), 1.0, atol=1e-9)

    def test_predict_proba_and_score(self, rng):
        z = random_observations(rng, 15, 4, 2)
        model = CACGMM(n_classes=2, n_iterations=5, random_state=0).fit(z)
        proba = model.predict_proba(z)
        np.testing.assert_allclose(proba.sum(-1), 1.0, atol=1e-9)
        assert model.predict(z).shape == (15, 4)
        assert math.isfinite(model.score(z))

    def test_get_params_roundtrip(self):
        model = CACGMM(n_classes=4, n_iterations=7)
        params = model.get_params()
        clone = CACGMM(**params)
        assert clone.n_classes == 4 and clone.n_iterations == 7


class TestSerialization:
    def test_save_load_roundtrip(self, tmp_path, rng):
        state = MixtureState(
            priors=rng.dirichlet(np.ones(3), size=5),
            parameters=np.stack(
                [[random_psd(rng, 2) for _ in range(3)] for _ in range(4)]
            ),
            posteriors=rng.dirichlet(np.ones(3), size=(5, 4)),
            log_likelihood_trace=(1.0, 2.0, 3.0),
        )
        path = tmp_path / "state.npz"
        save_state(path, state, noise_class=2)
        loaded, meta = load_state(path)
        np.testing.assert_array_equal(loaded.priors, state.priors)
        np.testing.assert_array_equal(loaded.parameters, state.parameters)
        np.testing.assert_array_equal(loaded.posteriors, state.posteriors)
        assert loaded.log_likelihood_trace == (1.0, 2.0, 3.0)
        assert meta["noise_class"] == 2
