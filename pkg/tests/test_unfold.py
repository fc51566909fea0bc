import time

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra import numpy as hnp

from sensemat.unfold import (
    UnfoldModel,
    Variant,
    cat_output,
    decoder_init,
    encode,
    forward,
    gae_layer,
    sae_layer,
    split_nonneg,
)

finite_vectors = hnp.arrays(
    np.float64, st.integers(1, 12),
    elements=st.floats(-10, 10, allow_nan=False),
)


def make_model(variant=Variant.SAE, phi=None, alpha=1.0, depth=3, **kw):
    if phi is None:
        phi = np.array([[1.0, 0.0, 1.0]])
    return UnfoldModel(variant=variant, phi=phi, alpha=alpha, depth=depth, **kw)


class TestModelValidation:
    def test_rejects_bad_alpha(self):
        with pytest.raises(ValueError):
            make_model(alpha=0.0)

    def test_rejects_bad_depth(self):
        with pytest.raises(ValueError):
            make_model(depth=0)

    def test_rejects_nonfinite_phi(self):
        with pytest.raises(ValueError):
            make_model(phi=np.array([[np.inf, 0.0]]))

    def test_cat_needs_even_columns(self):
        with pytest.raises(ValueError):
            make_model(variant=Variant.SAECAT, phi=np.ones((1, 3)))


class TestEncode:
    def test_identity_matrix(self):
        model = make_model(phi=np.eye(4))
        x = np.array([1.0, -2.0, 0.5, 0.0])
        np.testing.assert_array_equal(encode(model, x), x)

    def test_dot_product(self):
        model = make_model()
        np.testing.assert_array_equal(encode(model, [2.0, 5.0, 3.0]), [5.0])

    def test_cat_split_then_product(self):
        # phi~ = [I, -I], x = [2, -3] -> x~ = [2 0 0 3], y = [2, -3]
        phi = np.hstack([np.eye(2), -np.eye(2)])
        model = make_model(variant=Variant.SAECAT, phi=phi)
        np.testing.assert_array_equal(encode(model, [2.0, -3.0]), [2.0, -3.0])

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            encode(make_model(), [1.0, 2.0])


class TestDecoderInit:
    def test_identity(self):
        model = make_model(phi=np.eye(3))
        y = np.array([1.0, 2.0, 3.0])
        np.testing.assert_array_equal(decoder_init(model, y), y)

    def test_single_row(self):
        model = make_model()
        np.testing.assert_array_equal(decoder_init(model, [5.0]), [5.0, 0.0, 5.0])

    def test_orthonormal_rows_give_projection(self):
        rng = np.random.default_rng(0)
        a = rng.standard_normal((2, 6))
        q, _ = np.linalg.qr(a.T)
        phi = q.T  # orthonormal rows
        model = make_model(phi=phi)
        x = rng.standard_normal(6)
        np.testing.assert_allclose(
            decoder_init(model, encode(model, x)), phi.T @ (phi @ x), atol=1e-12
        )


class TestSaeLayer:
    def test_zero_is_fixed_point(self):
        model = make_model()
        x = np.zeros(3)
        np.testing.assert_array_equal(sae_layer(model, x, 1), x)

    def test_orthonormal_columns_are_identity(self):
        q, _ = np.linalg.qr(np.random.default_rng(1).standard_normal((5, 3)))
        model = make_model(phi=q)  # q.T q = I
        x = np.array([0.4, -0.2, 0.9])
        np.testing.assert_allclose(sae_layer(model, x, 2), x, atol=1e-14)

    def test_hand_case(self):
        # phi = [[1, 0]]: (I - phi.T phi) = diag(0, 1); sign(x) = [1, 1]
        # x - 1 * [0, 1] = [0.5, -0.5]
        model = make_model(phi=np.array([[1.0, 0.0]]), alpha=1.0)
        out = sae_layer(model, np.array([0.5, 0.5]), 1)
        np.testing.assert_allclose(out, [0.5, -0.5], atol=1e-15)

    def test_rejects_t_zero(self):
        with pytest.raises(ValueError):
            sae_layer(make_model(), np.zeros(3), 0)


class TestGaeLayer:
    def test_hand_case(self):
        # same setting as the sae hand case plus x_prev = [1, 0]:
        # x + phi.T phi (x_prev - x) - (I - phi.T phi) sign(x)
        # = [0.5,0.5] + [0.5,0] - [0,1] = [1.0, -0.5]
        model = make_model(phi=np.array([[1.0, 0.0]]), alpha=1.0)
        out = gae_layer(model, np.array([0.5, 0.5]), np.array([1.0, 0.0]), 1)
        np.testing.assert_allclose(out, [1.0, -0.5], atol=1e-15)

    def test_gram_identity_returns_previous(self):
        q, _ = np.linalg.qr(np.random.default_rng(2).standard_normal((5, 3)))
        model = make_model(phi=q)
        x_t = np.array([0.3, 0.1, -0.2])
        x_prev = np.array([1.0, 2.0, 3.0])
        np.testing.assert_allclose(gae_layer(model, x_t, x_prev, 1), x_prev,
                                   atol=1e-14)

    @given(finite_vectors, st.integers(1, 9), st.integers(0, 2**31 - 1))
    @settings(max_examples=100, deadline=None)
    def test_degenerates_to_sae(self, x, t, seed):
        rng = np.random.default_rng(seed)
        phi = rng.standard_normal((2, x.shape[0]))
        model = make_model(phi=phi, alpha=0.7)
        sae = sae_layer(model, x, t)
        gae = gae_layer(model, x, x.copy(), t)
        np.testing.assert_allclose(gae, sae, atol=1e-14)


class TestSplitAndCatOutput:
    def test_zero(self):
        np.testing.assert_array_equal(split_nonneg(np.zeros(2)), np.zeros(4))

    def test_example(self):
        np.testing.assert_array_equal(split_nonneg(np.array([2.0, -3.0])),
                                      [2.0, 0.0, 0.0, 3.0])

    @given(finite_vectors)
    def test_split_reconstructs(self, x):
        s = split_nonneg(x)
        n = x.shape[0]
        np.testing.assert_array_equal(s[:n] - s[n:], x)
        assert np.all(s >= 0)
        assert np.all(s[:n] * s[n:] == 0)  # disjoint supports

    def test_cat_output_examples(self):
        np.testing.assert_array_equal(cat_output(np.array([2.0, 0, 0, 3.0])),
                                      [2.0, -3.0])
        np.testing.assert_array_equal(cat_output(-np.ones(4)), [0.0, 0.0])
        np.testing.assert_array_equal(cat_output(np.array([1.0, 2.0, 0.5, 0.0])),
                                      [0.5, 2.0])

    def test_cat_output_rejects_odd(self):
        with pytest.raises(ValueError):
            cat_output(np.ones(3))

    @given(finite_vectors)
    def test_cat_inverts_split(self, x):
        np.testing.assert_array_equal(cat_output(split_nonneg(x)), x)


class TestForward:
    def test_orthonormal_columns_fixed_point(self):
        # phi.T phi = I: every layer is the identity, so x_hat = x exactly
        q, _ = np.linalg.qr(np.random.default_rng(3).standard_normal((6, 4)))
        for depth in (1, 5):
            model = make_model(phi=q, depth=depth)
            x = np.random.default_rng(4).standard_normal(4)
            x_hat, trace = forward(model, x)
            np.testing.assert_allclose(x_hat, x, atol=1e-12)
            assert len(trace.states) == depth + 1

    @pytest.mark.parametrize("variant", list(Variant))
    def test_zero_maps_to_zero(self, variant):
        cols = 6 if variant.is_cat else 3
        model = make_model(variant=variant,
                           phi=np.random.default_rng(5).standard_normal((2, cols)))
        x_hat, _ = forward(model, np.zeros(3))
        np.testing.assert_array_equal(x_hat, np.zeros(3))

    @pytest.mark.parametrize("variant", list(Variant))
    def test_composition_oracle(self, variant):
        # forward() must equal manually composing the individual ops
        rng = np.random.default_rng(6)
        n, m, depth = 5, 3, 4
        cols = 2 * n if variant.is_cat else n
        model = make_model(variant=variant, phi=rng.standard_normal((m, cols)),
                           alpha=0.8, depth=depth)
        x = rng.standard_normal(n)
        y = encode(model, x)
        s = decoder_init(model, y)
        states = [s]
        for t in range(1, depth + 1):
            if variant.is_residual:
                prev = states[t - 2] if t >= 2 else states[0]
                states.append(gae_layer(model, states[-1], prev, t))
            else:
                states.append(sae_layer(model, states[-1], t))
        expected = cat_output(states[-1]) if variant.is_cat else states[-1]
        x_hat, trace = forward(model, x)
        np.testing.assert_array_equal(x_hat, expected)
        for got, want in zip(trace.states, states):
            np.testing.assert_array_equal(got, want)

    def test_batched_matches_loop(self):
        rng = np.random.default_rng(7)
        model = make_model(variant=Variant.GAE, phi=rng.standard_normal((2, 4)),
                           depth=3)
        xs = rng.standard_normal((5, 4))
        batch_hat, _ = forward(model, xs)
        for i in range(5):
            single_hat, _ = forward(model, xs[i])
            np.testing.assert_allclose(batch_hat[i], single_hat, atol=1e-14)

    def test_bn_requires_batch(self):
        model = make_model(batch_norm="per_layer")
        with pytest.raises(ValueError):
            forward(model, np.ones(3), training=True)

    def test_bn_off_at_inference(self):
        rng = np.random.default_rng(8)
        phi = rng.standard_normal((2, 4))
        plain = make_model(phi=phi, depth=3)
        bn = make_model(phi=phi, depth=3, batch_norm="per_layer")
        xs = rng.standard_normal((6, 4))
        np.testing.assert_array_equal(forward(plain, xs)[0], forward(bn, xs)[0])


class TestComplexityContract:
    def test_timing_slope(self):
        # forward cost is O(depth * M * N) with the Gram never materialized;
        # the contract bounds growth well below cubic in N.
        depth, m = 8, 16
        times = {}
        rng = np.random.default_rng(9)
        for n in (64, 128, 256):
            model = make_model(phi=rng.standard_normal((m, n)) / np.sqrt(n),
                               depth=depth)
            x = rng.standard_normal(n)
            forward(model, x)  # warm up
            reps = 30
            best = np.inf
            for _ in range(5):
                t0 = time.perf_counter()
                for _ in range(reps):
                    forward(model, x)
                best = min(best, (time.perf_counter() - t0) / reps)
            times[n] = best
        slope = np.polyfit(np.log([64, 128, 256]),
                           np.log([times[64], times[128], times[256]]), 1)[0]
        assert slope < 2.5, f"forward cost grows too fast: slope {slope:.2f}"
