import math

import numpy as np
import pytest

from hvt import autodiff as ad
from hvt import manifold as mf
from hvt.autodiff import Tensor
from hvt.errors import ConfigError, NumericError, ShapeError
from hvt.gradcheck import ball_points
from hvt.manifold import ManifoldParams

C1 = ManifoldParams()


def velocity_add(a, b):
    """1-D Mobius addition at c = 1 is relativistic velocity addition."""
    return (a + b) / (1 + a * b)


class TestManifoldParams:
    def test_defaults(self):
        assert (C1.c, C1.eps, C1.delta, C1.max_norm_factor) == (1.0, 1e-15, 1e-7, 1 - 1e-5)

    @pytest.mark.parametrize("kw", [{"c": 0.0}, {"c": -1.0}, {"max_norm_factor": 1.0}, {"max_norm_factor": 0.0}])
    def test_invalid(self, kw):
        with pytest.raises(ConfigError):
            ManifoldParams(**kw)

    def test_radius(self):
        assert ManifoldParams(c=4.0).radius == pytest.approx((1 - 1e-5) / 2)


class TestProject:
    def test_interior_unchanged(self):
        np.testing.assert_array_equal(mf.project([0.1, 0.2]).data, [0.1, 0.2])

    def test_rescale_to_radius(self):
        np.testing.assert_allclose(mf.project([3.0, 4.0]).data, np.array([0.6, 0.8]) * (1 - 1e-5), rtol=1e-15)

    def test_origin(self):
        np.testing.assert_array_equal(mf.project(np.zeros(3)).data, np.zeros(3))

    def test_nan(self):
        with pytest.raises(NumericError):
            mf.project([np.nan, 0.0])

    def test_curvature_radius(self):
        m = ManifoldParams(c=4.0)
        out = mf.project([10.0, 0.0], m).data
        assert out[0] == pytest.approx(0.5 * (1 - 1e-5))


class TestMobiusAdd:
    def test_right_identity(self, rng):
        x = ball_points(rng, (20, 4))
        np.testing.assert_allclose(mf.mobius_add(x, np.zeros(4)).data, x, atol=1e-15)

    def test_left_inverse(self, rng):
        x = ball_points(rng, (20, 4), 0.9)
        assert np.max(np.abs(mf.mobius_add(-x, x).data)) < 1e-12

    def test_scalar_example(self):
        np.testing.assert_allclose(mf.mobius_add([0.5, 0.0], [0.5, 0.0]).data, [0.8, 0.0], atol=1e-15)

    def test_velocity_addition_oracle(self, rng):
        a, b = rng.uniform(-0.95, 0.95, size=(2, 50))
        got = mf.mobius_add(a[:, None], b[:, None]).data[:, 0]
        np.testing.assert_allclose(got, velocity_add(a, b), atol=1e-14)

    def test_left_cancellation(self, rng):
        # gyrogroup law: (-x) (+) (x (+) y) = y
        x, y = ball_points(rng, (2, 50, 3), 0.8)
        np.testing.assert_allclose(mf.mobius_add(-x, mf.mobius_add(x, y)).data, y, atol=1e-10)

    def test_non_commutative(self):
        x, y = np.array([0.5, 0.0]), np.array([0.0, 0.5])
        assert not np.allclose(mf.mobius_add(x, y).data, mf.mobius_add(y, x).data)

    def test_curvature_scaling(self, rng):
        # sqrt(c) * (x (+)_c y) == (sqrt(c) x) (+)_1 (sqrt(c) y)
        m = ManifoldParams(c=2.5)
        x, y = ball_points(rng, (2, 30, 3), 0.9, m)
        s = math.sqrt(2.5)
        np.testing.assert_allclose(s * mf.mobius_add(x, y, m).data, mf.mobius_add(s * x, s * y).data, atol=1e-13)


class TestMobiusScalar:
    def test_one(self, rng):
        x = ball_points(rng, (20, 4))
        np.testing.assert_allclose(mf.mobius_scalar(1.0, x).data, x, atol=1e-14)

    def test_zero(self, rng):
        assert not mf.mobius_scalar(0.0, ball_points(rng, (5, 3))).data.any()

    def test_two_times_half(self):
        np.testing.assert_allclose(mf.mobius_scalar(2.0, [0.5, 0.0]).data, [0.8, 0.0], atol=1e-15)

    def test_origin(self):
        np.testing.assert_array_equal(mf.mobius_scalar(3.0, np.zeros(2)).data, np.zeros(2))

    def test_integer_multiple_is_repeated_addition(self, rng):
        x = ball_points(rng, (10, 3), 0.5)
        np.testing.assert_allclose(mf.mobius_scalar(3.0, x).data, mf.mobius_fold([x, x, x]).data, atol=1e-12)


class TestMobiusMatvec:
    def test_identity(self, rng):
        x = ball_points(rng, (10, 4))
        np.testing.assert_allclose(mf.mobius_matvec(np.eye(4), x).data, x, atol=1e-14)

    def test_origin(self, rng):
        assert not mf.mobius_matvec(rng.normal(size=(3, 4)), np.zeros(4)).data.any()

    def test_zero_matrix(self, rng):
        assert not mf.mobius_matvec(np.zeros((3, 4)), ball_points(rng, (5, 4))).data.any()

    def test_scalar_reduction(self):
        np.testing.assert_allclose(mf.mobius_matvec(2 * np.eye(2), [0.5, 0.0]).data, [0.8, 0.0], atol=1e-15)

    def test_unbatched_and_shape(self, rng):
        W = rng.normal(size=(3, 4))
        x = ball_points(rng, (4,))
        assert mf.mobius_matvec(W, x).shape == (3,)
        with pytest.raises(ShapeError):
            mf.mobius_matvec(W, ball_points(rng, (5,)))


class TestFold:
    def test_single(self, rng):
        x = ball_points(rng, (3,))
        np.testing.assert_array_equal(mf.mobius_fold([x]).data, x)

    def test_identity_absorption(self, rng):
        x = ball_points(rng, (3,))
        np.testing.assert_allclose(mf.mobius_fold([x, np.zeros(3), np.zeros(3)]).data, x, atol=1e-15)

    def test_three_equal_points(self):
        want = velocity_add(velocity_add(0.3, 0.3), 0.3)
        assert mf.mobius_fold([[0.3, 0.0]] * 3).data[0] == pytest.approx(want, abs=1e-15)

    def test_empty(self):
        np.testing.assert_array_equal(mf.mobius_fold([], dim=3).data, np.zeros(3))

    def test_order_matters(self):
        a, b, c = np.array([0.5, 0.0]), np.array([0.0, 0.5]), np.array([0.3, 0.3])
        assert not np.allclose(mf.mobius_fold([a, b, c]).data, mf.mobius_fold([c, b, a]).data)


class TestMaps:
    def test_log0_origin(self):
        np.testing.assert_array_equal(mf.log0(np.zeros(3)).data, np.zeros(3))

    def test_log0_half(self):
        np.testing.assert_allclose(mf.log0([0.5, 0.0]).data, [math.log(3), 0.0], atol=1e-15)

    def test_exp0_origin(self):
        np.testing.assert_array_equal(mf.exp0(np.zeros(3)).data, np.zeros(3))

    def test_exp0_log3(self):
        np.testing.assert_allclose(mf.exp0([math.log(3), 0.0]).data, [0.5, 0.0], atol=1e-15)

    def test_exp0_range(self, rng):
        v = rng.normal(size=(100, 4)) * 50
        assert np.all(np.linalg.norm(mf.exp0(v).data, axis=-1) < 1)

    def test_inverse_pair(self, rng):
        x = ball_points(rng, (1000, 5), 0.9)
        assert np.max(np.abs(mf.exp0(mf.log0(x)).data - x)) < 1e-10

    @pytest.mark.parametrize("c", [0.5, 1.0, 3.0])
    def test_inverse_pair_curvature(self, c, rng):
        m = ManifoldParams(c=c)
        x = ball_points(rng, (200, 3), 0.9, m)
        assert np.max(np.abs(mf.exp0(mf.log0(x, m), m).data - x)) < 1e-10

    def test_log0_is_distance_from_origin(self, rng):
        # |log0(x)| equals d(0, x) for c = 1
        x = ball_points(rng, (50, 3), 0.9)
        np.testing.assert_allclose(np.linalg.norm(mf.log0(x).data, axis=-1),
                                   mf.distance(np.zeros(3), x).data, rtol=1e-9)


class TestExpAt:
    def test_zero_vector(self, rng):
        x = ball_points(rng, (10, 3))
        np.testing.assert_allclose(mf.exp_at(x, np.zeros(3)).data, x, atol=1e-15)

    def test_at_origin_is_exp0_of_doubled_vector(self, rng):
        # lambda_0 = 2 and exp0 halves its argument inside tanh
        v = rng.normal(size=(10, 3))
        np.testing.assert_allclose(mf.exp_at(np.zeros(3), v).data, mf.exp0(2 * v).data, atol=1e-15)

    def test_distance_first_order(self, rng):
        # the distance is acosh(1 + 2c|x (-) y|^2 / conf); for y = x + t v with
        # small t it grows like lambda_x^2 / 2 * t|v|, which equals lambda_0 t|v|
        # at the origin
        x = ball_points(rng, (20, 3), 0.7)
        x[0] = 0.0
        v = rng.normal(size=(20, 3))
        v /= np.linalg.norm(v, axis=-1, keepdims=True)
        t = 1e-3
        d = mf.distance(x, mf.exp_at(x, t * v)).data
        lam = mf.conformal_factor(x).data[:, 0]
        np.testing.assert_allclose(d, lam ** 2 / 2 * t, rtol=1e-2)
        assert d[0] == pytest.approx(2 * t, rel=1e-3)

    def test_closure(self, rng):
        x = ball_points(rng, (100, 3), 0.99)
        out = mf.exp_at(x, rng.normal(size=(100, 3)) * 30).data
        assert np.all(np.linalg.norm(out, axis=-1) < C1.radius)


class TestDistance:
    def test_self_distance_floor(self, rng):
        x = ball_points(rng, (10, 3))
        floor = mf.distance_floor()
        np.testing.assert_allclose(mf.distance(x, x).data, floor, rtol=1e-6)
        assert floor == pytest.approx(math.sqrt(2e-7), rel=1e-6)

    def test_origin_to_half(self):
        assert mf.distance(np.zeros(2), [0.5, 0.0]).item() == pytest.approx(math.log(3), abs=1e-12)

    def test_symmetry(self, rng):
        x, y = ball_points(rng, (2, 100, 4), 0.95)
        np.testing.assert_array_equal(mf.distance(x, y).data, mf.distance(y, x).data)

    def test_one_dimensional_closed_form(self, rng):
        # 1-D: x (-) y = (a - b) / (1 - ab)
        a, b = rng.uniform(-0.9, 0.9, size=(2, 100))
        arg = 1 + 2 * ((a - b) / (1 - a * b)) ** 2 / ((1 - a * a) * (1 - b * b))
        keep = arg > 1 + 1e-6
        got = mf.distance(a[:, None], b[:, None]).data
        np.testing.assert_allclose(got[keep], np.arccosh(arg[keep]), rtol=1e-10)

    def test_matches_explicit_mobius_difference(self, rng):
        # independent route: form x (+) (-y) with mobius_add, then the acosh formula
        m = ManifoldParams(c=1.3)
        x, y = ball_points(rng, (2, 200, 4), 0.95, m)
        diff = mf._mobius_add(Tensor(x), Tensor(-y), m).data
        num = 2 * 1.3 * np.sum(diff ** 2, axis=-1)
        den = (1 - 1.3 * np.sum(x ** 2, -1)) * (1 - 1.3 * np.sum(y ** 2, -1)) + 1e-15
        want = np.arccosh(np.maximum(1 + num / den, 1 + 1e-7))
        np.testing.assert_allclose(mf.distance(x, y, m).data, want, rtol=1e-10)

    def test_differs_from_textbook_distance_off_origin(self):
        x, y = np.array([0.5, 0.0]), np.array([0.0, 0.5])
        textbook = np.arccosh(1 + 2 * 0.5 / (0.75 * 0.75))
        assert abs(mf.distance(x, y).item() - textbook) > 1e-2

    def test_curvature_scaling(self, rng):
        m = ManifoldParams(c=2.0)
        x, y = ball_points(rng, (2, 40, 3), 0.9, m)
        s = math.sqrt(2.0)
        np.testing.assert_allclose(mf.distance(x, y, m).data, mf.distance(s * x, s * y).data, rtol=1e-12)

    def test_pairwise_matches_broadcast(self, rng):
        m = ManifoldParams(c=0.8)
        x = ball_points(rng, (2, 5, 3), 0.95, m)
        y = ball_points(rng, (2, 7, 3), 0.95, m)
        want = mf.distance(x[:, :, None, :], y[:, None, :, :], m).data
        np.testing.assert_allclose(mf.pairwise_distance(x, y, m).data, want, rtol=1e-9, atol=1e-12)

    def test_origin_closed_form_with_curvature(self, rng):
        # at c = 1: d(0, x) = 2 artanh |x|
        x = ball_points(rng, (100, 3), 0.99)
        n = np.linalg.norm(x, axis=-1)
        keep = n > 1e-3
        np.testing.assert_allclose(mf.distance(np.zeros(3), x).data[keep], 2 * np.arctanh(n[keep]), rtol=1e-9)

    def test_triangle_inequality(self, rng):
        x, y, z = ball_points(rng, (3, 2000, 3), 0.95)
        dxz = mf.distance(x, z).data
        bound = mf.distance(x, y).data + mf.distance(y, z).data + 2 * mf.distance_floor()
        assert np.all(dxz <= bound)


class TestRiemannianGradient:
    def test_origin_quarter(self, rng):
        g = rng.normal(size=3)
        np.testing.assert_allclose(mf.egrad_to_rgrad(np.zeros(3), g), g / 4)

    def test_boundary_vanishes(self):
        x = np.array([1 - 1e-9, 0.0])
        assert np.max(np.abs(mf.egrad_to_rgrad(x, np.ones(2)))) < 1e-16

    def test_inverse_of_metric(self, rng):
        x = ball_points(rng, (20, 3), 0.9)
        g = rng.normal(size=(20, 3))
        lam = mf.conformal_factor(x).data
        np.testing.assert_allclose(mf.egrad_to_rgrad(x, g) * lam ** 2, g, rtol=1e-12)


def test_learnable_curvature_gradient_flows():
    craw = Tensor(np.array(ad.inverse_softplus(1.0)), requires_grad=True)
    m = ManifoldParams(c=ad.softplus(craw))
    d = mf.distance([0.3, 0.1], [-0.2, 0.4], m)
    ad.backward(d)
    assert craw.grad is not None and np.isfinite(craw.grad) and craw.grad != 0
