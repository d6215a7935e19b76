import itertools

import numpy as np
import pytest
import scipy.sparse as sp

from hetinject.numerics import (
    Adam,
    ContractError,
    Layer,
    MlpParams,
    binary_symmetric,
    finite_diff_grad,
    mlp_backward,
    mlp_forward,
    softmax,
    softmax_ce_grad,
    sparse_from_entries,
    spmm,
    sym_normalize,
)


class TestSpmm:
    def test_identity(self):
        h = np.array([[1.5, -2.0], [0.25, 3.0], [7.0, 0.0]])
        np.testing.assert_array_equal(spmm(sp.identity(3, format="csr"), h), h)

    def test_zero(self):
        out = spmm(sp.csr_matrix((2, 2)), np.array([[1.0, 2.0], [3.0, 4.0]]))
        np.testing.assert_array_equal(out, np.zeros((2, 2)))

    def test_random_matches_dense(self):
        rng = np.random.default_rng(0)
        dense = rng.standard_normal((5, 5)) * (rng.random((5, 5)) < 0.4)
        h = rng.standard_normal((5, 3))
        np.testing.assert_allclose(spmm(sp.csr_matrix(dense), h), dense @ h, rtol=0, atol=1e-14)

    def test_dimension_mismatch(self):
        with pytest.raises(ContractError):
            spmm(sp.identity(3, format="csr"), np.ones((4, 2)))

    @pytest.mark.parametrize("n", [1, 2, 3, 4, 5])
    def test_exhaustive_small_graphs(self, n):
        # every symmetric 0/1 pattern on n nodes; integer-valued h keeps sums exact
        pairs = list(itertools.combinations(range(n), 2))
        h = np.arange(n * 3, dtype=np.float64).reshape(n, 3) - 4.0
        for mask in range(2 ** len(pairs)):
            chosen = [p for i, p in enumerate(pairs) if mask >> i & 1]
            a = binary_symmetric([p[0] for p in chosen], [p[1] for p in chosen], n)
            assert np.array_equal(spmm(a, h), a.toarray() @ h)

    def test_deterministic_repeat(self):
        rng = np.random.default_rng(3)
        a = sp.random(40, 40, density=0.2, random_state=3, format="csr")
        h = rng.standard_normal((40, 6))
        assert spmm(a, h).tobytes() == spmm(a.copy(), h.copy()).tobytes()


class TestSparseEntries:
    def test_duplicates_rejected(self):
        with pytest.raises(ContractError):
            sparse_from_entries([0, 0], [1, 1], [1.0, 2.0], (2, 2))

    def test_out_of_range(self):
        with pytest.raises(ContractError):
            sparse_from_entries([2], [0], [1.0], (2, 2))

    def test_non_finite(self):
        with pytest.raises(ContractError):
            sparse_from_entries([0], [0], [np.nan], (2, 2))

    def test_sorted_canonical(self):
        m = sparse_from_entries([1, 0, 1], [1, 1, 0], [3.0, 1.0, 2.0], (2, 2))
        assert m.has_canonical_format
        np.testing.assert_array_equal(m.toarray(), [[0, 1], [2, 3]])


def dense_sym_normalize(a: np.ndarray) -> np.ndarray:
    n = a.shape[0]
    at = a + np.eye(n)
    d = a.sum(axis=1) + 1.0
    return np.diag(d ** -0.5) @ at @ np.diag(d ** -0.5)


class TestSymNormalize:
    def test_edgeless(self):
        np.testing.assert_array_equal(sym_normalize(sp.csr_matrix((2, 2))).toarray(), np.eye(2))

    def test_single_edge(self):
        out = sym_normalize(sp.csr_matrix(np.array([[0.0, 1.0], [1.0, 0.0]]))).toarray()
        np.testing.assert_allclose(out, [[0.5, 0.5], [0.5, 0.5]], rtol=0, atol=1e-15)

    def test_path_graph(self):
        a = np.zeros((4, 4))
        for i in range(3):
            a[i, i + 1] = a[i + 1, i] = 1.0
        np.testing.assert_allclose(sym_normalize(sp.csr_matrix(a)).toarray(), dense_sym_normalize(a), atol=1e-15)
        # hand values: degrees 1,2,2,1 -> D~ = 2,3,3,2
        out = sym_normalize(sp.csr_matrix(a)).toarray()
        assert out[0, 1] == pytest.approx(1 / np.sqrt(6))
        assert out[1, 2] == pytest.approx(1 / 3)

    def test_non_square(self):
        with pytest.raises(ContractError):
            sym_normalize(sp.csr_matrix((2, 3)))

    def test_negative(self):
        with pytest.raises(ContractError):
            sym_normalize(sp.csr_matrix(np.array([[0.0, -1.0], [-1.0, 0.0]])))

    def test_spectral_radius_by_power_iteration(self):
        rng = np.random.default_rng(1)
        for _ in range(20):
            n = int(rng.integers(2, 9))
            upper = np.triu(rng.random((n, n)) < 0.5, 1)
            a = (upper | upper.T).astype(float)
            m = sym_normalize(sp.csr_matrix(a)).toarray()
            assert np.allclose(m, m.T)
            v = rng.standard_normal(n)
            for _ in range(200):
                v = m @ v
                v /= np.linalg.norm(v)
            assert abs(v @ m @ v) <= 1.0 + 1e-9


class TestMlp:
    def test_identity_layer(self):
        p = MlpParams([Layer(np.eye(3), np.zeros(3), "identity")])
        x = np.arange(6.0).reshape(2, 3)
        np.testing.assert_array_equal(mlp_forward(p, x)[0], x)

    def test_zero_weights_broadcast_bias(self):
        p = MlpParams([Layer(np.zeros((3, 2)), np.array([-1.0, 2.0]), "relu")])
        out, _ = mlp_forward(p, np.ones((4, 3)))
        np.testing.assert_array_equal(out, np.tile([0.0, 2.0], (4, 1)))

    def test_two_layer_matches_straight_line(self):
        rng = np.random.default_rng(2)
        p = MlpParams.init([4, 6, 3], rng)
        x = rng.standard_normal((5, 4))
        l0, l1 = p.layers
        expected = np.maximum(x @ l0.weight + l0.bias, 0) @ l1.weight + l1.bias
        np.testing.assert_allclose(mlp_forward(p, x)[0], expected, atol=1e-14)

    def test_chain_mismatch(self):
        with pytest.raises(ContractError):
            MlpParams([Layer(np.zeros((3, 2)), np.zeros(2)), Layer(np.zeros((3, 2)), np.zeros(2))])

    def test_input_mismatch(self):
        p = MlpParams([Layer(np.eye(3), np.zeros(3), "identity")])
        with pytest.raises(ContractError):
            mlp_forward(p, np.ones((2, 4)))

    def test_identity_backward(self):
        p = MlpParams([Layer(np.eye(3), np.zeros(3), "identity")])
        x = np.ones((2, 3))
        g = np.array([[1.0, -2.0, 3.0], [0.5, 0.0, -1.0]])
        _, cache = mlp_forward(p, x)
        _, dx = mlp_backward(p, cache, g)
        np.testing.assert_array_equal(dx, g)

    def test_dead_units(self):
        p = MlpParams([Layer(-np.ones((2, 3)), -np.ones(3), "relu"), Layer(np.ones((3, 2)), np.zeros(2), "identity")])
        x = np.abs(np.random.default_rng(0).standard_normal((4, 2)))
        _, cache = mlp_forward(p, x)
        grads, dx = mlp_backward(p, cache, np.ones((4, 2)))
        assert not grads["W0"].any() and not grads["b0"].any() and not dx.any()
        assert not grads["W1"].any()  # hidden activations are all zero

    def test_stale_cache(self):
        rng = np.random.default_rng(0)
        p = MlpParams.init([2, 3], rng)
        _, cache = mlp_forward(p, np.ones((1, 2)))
        q = p.with_flat({k: v + 1 for k, v in p.flat().items()})
        with pytest.raises(ContractError):
            mlp_backward(q, cache, np.ones((1, 3)))

    @pytest.mark.parametrize("seed", range(5))
    def test_random_two_layer_fd(self, seed):
        rng = np.random.default_rng(seed)
        p = MlpParams.init([3, 5, 2], rng)
        p = p.with_flat({k: v + 0.1 * rng.standard_normal(v.shape) for k, v in p.flat().items()})
        x = rng.standard_normal((4, 3))
        up = rng.standard_normal((4, 2))
        _, cache = mlp_forward(p, x)
        grads, dx = mlp_backward(p, cache, up)
        for key, value in p.flat().items():
            def f(v, key=key):
                flat = dict(p.flat())
                flat[key] = v
                return float(np.sum(mlp_forward(p.with_flat(flat), x)[0] * up))
            np.testing.assert_allclose(grads[key], finite_diff_grad(f, value), rtol=1e-5, atol=1e-8)
        fd_x = finite_diff_grad(lambda z: float(np.sum(mlp_forward(p, z)[0] * up)), x)
        np.testing.assert_allclose(dx, fd_x, rtol=1e-5, atol=1e-8)

    def test_linear_map(self):
        rng = np.random.default_rng(4)
        p = MlpParams.init([3, 4, 2], rng)
        np.testing.assert_allclose(p.linear_map(), p.layers[0].weight @ p.layers[1].weight)


class TestSoftmaxCe:
    def test_uniform_is_log_c(self):
        loss, _ = softmax_ce_grad(np.zeros((3, 5)), [0, 1, 4])
        assert loss == pytest.approx(np.log(5), abs=1e-15)

    def test_saturation(self):
        loss, grad = softmax_ce_grad(np.array([[1000.0, 0.0, 0.0]]), [0])
        assert loss == pytest.approx(0.0, abs=1e-300)
        assert np.allclose(grad, 0.0)

    def test_bad_temperature(self):
        with pytest.raises(ContractError):
            softmax_ce_grad(np.zeros((1, 2)), [0], temperature=0.0)

    def test_bad_labels(self):
        with pytest.raises(ContractError):
            softmax_ce_grad(np.zeros((1, 2)), [2])

    @pytest.mark.parametrize("temperature", [0.5, 1.0, 2.0])
    def test_fd(self, temperature):
        rng = np.random.default_rng(5)
        z = rng.standard_normal((6, 4))
        y = rng.integers(0, 4, size=6)
        _, grad = softmax_ce_grad(z, y, temperature)
        fd = finite_diff_grad(lambda v: softmax_ce_grad(v, y, temperature)[0], z)
        np.testing.assert_allclose(grad, fd, rtol=1e-5, atol=1e-10)

    def test_shift_invariance(self):
        rng = np.random.default_rng(6)
        z = rng.standard_normal((4, 3))
        y = [0, 2, 1, 1]
        shifted = z + rng.standard_normal((4, 1)) * 10
        assert softmax_ce_grad(z, y)[0] == pytest.approx(softmax_ce_grad(shifted, y)[0], abs=1e-12)

    def test_softmax_rows(self):
        p = softmax(np.random.default_rng(0).standard_normal((5, 4)) * 50, temperature=0.5)
        np.testing.assert_allclose(p.sum(axis=1), 1.0, atol=1e-12)


class TestFiniteDiff:
    def test_sum(self):
        x = np.random.default_rng(0).standard_normal((3, 2))
        np.testing.assert_allclose(finite_diff_grad(lambda v: float(v.sum()), x), np.ones((3, 2)), atol=1e-9)

    def test_half_square_norm(self):
        x = np.random.default_rng(1).standard_normal((2, 4))
        np.testing.assert_allclose(finite_diff_grad(lambda v: 0.5 * float(np.sum(v * v)), x), x, atol=1e-9)

    def test_bad_eps(self):
        with pytest.raises(ContractError):
            finite_diff_grad(lambda v: 0.0, np.zeros(2), eps=0.0)

    def test_non_finite(self):
        with pytest.raises(FloatingPointError):
            finite_diff_grad(lambda v: float("nan"), np.zeros(2))

    def test_input_untouched(self):
        x = np.array([1.0, 2.0])
        finite_diff_grad(lambda v: float(v @ v), x)
        np.testing.assert_array_equal(x, [1.0, 2.0])


def test_adam_first_step_moves_by_lr():
    opt = Adam(lr=0.1)
    out = opt.step({"w": np.array([1.0, -1.0])}, {"w": np.array([3.0, -0.5])})
    # bias-corrected first step is lr * sign(g) up to eps
    np.testing.assert_allclose(out["w"], [0.9, -0.9], atol=1e-7)
