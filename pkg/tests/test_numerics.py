import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from xggm import numerics as nx
from xggm.errors import ContractError, DimensionError, NumericError, ParameterError
from xggm.gradsuite import CORE_TOL, core_cases


def sym_unit_diag(rng, n):
    a = rng.standard_normal((n, n))
    r = (a + a.T) / 2
    np.fill_diagonal(r, 1.0)
    return r


class TestPackUnpack:
    def test_order_three(self):
        a, b, c = 0.1, 0.2, 0.3
        r = np.array([[1, a, b], [a, 1, c], [b, c, 1]])
        np.testing.assert_array_equal(nx.pack_upper(r), [a, b, c])
        np.testing.assert_array_equal(nx.unpack_upper(np.array([a, b, c]), 3), r)

    def test_two_nodes(self):
        np.testing.assert_array_equal(nx.pack_upper(np.array([[1, 0.7], [0.7, 1]])), [0.7])

    def test_zeros_give_identity(self):
        np.testing.assert_array_equal(nx.unpack_upper(np.zeros(6), 4), np.eye(4))

    @given(st.integers(2, 9), st.integers(0, 2**31 - 1))
    def test_roundtrips_exact(self, n, seed):
        rng = np.random.default_rng(seed)
        r = sym_unit_diag(rng, n)
        assert np.array_equal(nx.unpack_upper(nx.pack_upper(r), n), r)
        v = rng.standard_normal(n * (n - 1) // 2)
        assert np.array_equal(nx.pack_upper(nx.unpack_upper(v, n)), v)

    def test_batched(self):
        rng = np.random.default_rng(0)
        rs = np.stack([sym_unit_diag(rng, 5) for _ in range(3)])
        assert np.array_equal(nx.unpack_upper(nx.pack_upper(rs), 5), rs)

    def test_errors(self):
        with pytest.raises(DimensionError):
            nx.pack_upper(np.zeros((2, 3)))
        with pytest.raises(DimensionError):
            nx.unpack_upper(np.zeros(4), 3)


class TestRng:
    def test_sigma_zero_is_mean(self):
        m = nx.gaussian_matrix(nx.RngState(1, 2), 4, 5, mean=0.25, sigma=0.0)
        assert np.all(m == 0.25)

    def test_same_state_same_bytes(self):
        a = nx.gaussian_matrix(nx.RngState(7, 3), 6, 6)
        b = nx.gaussian_matrix(nx.RngState(7, 3), 6, 6)
        assert a.tobytes() == b.tobytes()

    def test_streams_differ(self):
        a = nx.gaussian_matrix(nx.RngState(7, 3), 4, 4)
        b = nx.gaussian_matrix(nx.RngState(7, 4), 4, 4)
        assert not np.array_equal(a, b)

    def test_moments(self):
        z = nx.gaussian_matrix(nx.RngState(0, 0), 1, 100_000)
        assert -0.02 <= z.mean() <= 0.02
        assert 0.99 <= z.std() <= 1.01

    def test_negative_sigma(self):
        with pytest.raises(ParameterError):
            nx.gaussian_matrix(nx.RngState(0), 2, 2, sigma=-1.0)


class TestBackward:
    def test_sigmoid_matmul_against_finite_differences(self):
        rng = np.random.default_rng(3)
        theta = {"W": rng.standard_normal((2, 2)), "x": rng.standard_normal((2, 1))}
        err = nx.grad_check(lambda p: nx.sum_(nx.sigmoid(p["W"] @ p["x"])), theta, h=1e-5)
        assert err <= 1e-4

    def test_unused_parameter_has_zero_gradient(self):
        tape = nx.Tape()
        a = tape.param("a", np.ones((2, 2)))
        tape.param("unused", np.ones((3,)))
        grads = nx.backward(tape, nx.sum_(a))
        assert np.array_equal(grads["unused"], np.zeros(3))
        _, reached = tape.gradients(nx.sum_(a))
        assert reached == {"a"}

    def test_mean_gradient(self):
        tape = nx.Tape()
        t = tape.param("t", np.arange(12.0).reshape(3, 4))
        grads = nx.backward(tape, nx.mean(t))
        np.testing.assert_array_equal(grads["t"], np.full((3, 4), 1 / 12))

    def test_non_scalar_loss_rejected(self):
        tape = nx.Tape()
        t = tape.param("t", np.ones(3))
        with pytest.raises(ContractError):
            nx.backward(tape, nx.sigmoid(t))

    def test_reused_node_accumulates(self):
        tape = nx.Tape()
        t = tape.param("t", np.array([2.0]))
        grads = nx.backward(tape, nx.sum_(t * t + t))
        np.testing.assert_allclose(grads["t"], [5.0])

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_non_finite_value_raises(self):
        tape = nx.Tape()
        t = tape.param("t", np.array([0.0]))
        with pytest.raises(NumericError):
            nx.log(t)

    def test_untaped_inputs_stay_numpy(self):
        out = nx.sigmoid(np.zeros((2, 2)) @ np.ones((2, 3)))
        assert isinstance(out, np.ndarray)
        np.testing.assert_array_equal(out, np.full((2, 3), 0.5))


class TestGradCheck:
    def test_square(self):
        assert nx.grad_check(nx.square, 3.0, h=1e-5) <= 1e-9

    def test_constant(self):
        assert nx.grad_check(lambda t: nx.sum_(t) * 0.0 + 2.0, np.array([1.0, 2.0])) == 0.0

    def test_sigmoid_at_zero(self):
        assert nx.grad_check(nx.sigmoid, 0.0) <= 1e-9
        grads = nx.gradcheck.analytic_gradients(nx.sigmoid, 0.0)
        assert grads["theta"] == pytest.approx(0.25, abs=1e-15)

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_non_finite_function(self):
        with pytest.raises(NumericError):
            nx.grad_check(lambda t: nx.sum_(t) / 0.0 if not isinstance(t, nx.Var) else nx.sum_(t),
                          np.ones(2))

    def test_bad_step(self):
        with pytest.raises(ParameterError):
            nx.grad_check(nx.square, 1.0, h=0.0)

    def test_corrupted_gradient_is_detected(self):
        def corrupt(grads):
            return {k: v + 1.0 for k, v in grads.items()}

        report = nx.grad_check_report(nx.square, 3.0, analytic_hook=corrupt)
        assert report["theta"] > 0.1


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_every_primitive_matches_finite_differences(seed):
    for case in core_cases(seed):
        err = nx.grad_check(case.f, case.theta, h=1e-5)
        assert err <= CORE_TOL, case.name


@settings(max_examples=25, deadline=None)
@given(st.lists(st.floats(-50, 50), min_size=1, max_size=8))
def test_activation_ranges(xs):
    x = np.array(xs)
    s = nx.sigmoid(x)
    assert np.all((s > 0) | (x < -36)) and np.all(s <= 1)
    assert np.all(s[np.abs(x) < 30] < 1) and np.all(s[np.abs(x) < 30] > 0)
    assert np.all(nx.relu(x) >= 0)
