import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from distsgd.optimizer import HyperParams, OptimizerState, learning_rate, sgd_update

HP = HyperParams()


class TestLearningRate:
    def test_base_batch_256(self):
        assert learning_rate(HP, 4, 64, 10.0) == pytest.approx(0.1, abs=1e-12)

    def test_global_batch_16384(self):
        assert learning_rate(HP, 256, 64, 10.0) == pytest.approx(6.4, abs=1e-12)

    def test_warmup_midpoint(self):
        assert learning_rate(HP, 256, 64, 2.5) == pytest.approx(3.25, abs=1e-12)

    def test_warmup_starts_at_base(self):
        assert learning_rate(HP, 256, 64, 0.0) == pytest.approx(0.1, abs=1e-12)

    @pytest.mark.parametrize("epoch,expected", [(29.999, 0.1), (30.0, 0.01), (59.0, 0.01),
                                                (60.0, 0.001), (90.0, 0.0001)])
    def test_step_decay(self, epoch, expected):
        assert learning_rate(HP, 4, 64, epoch) == pytest.approx(expected, abs=1e-12)

    def test_no_warmup(self):
        hp = HyperParams(warmup_epochs=0.0)
        assert learning_rate(hp, 256, 64, 0.0) == pytest.approx(6.4, abs=1e-12)

    def test_small_global_batch_warms_down_to_target(self):
        # Target below base_lr: the interpolation runs downward.
        assert learning_rate(HP, 1, 64, 0.0) == pytest.approx(0.1)
        assert learning_rate(HP, 1, 64, 5.0) == pytest.approx(0.025)
        assert learning_rate(HP, 1, 64, 2.5) == pytest.approx(0.0625)

    def test_errors(self):
        with pytest.raises(ValueError):
            learning_rate(HP, 0, 64, 0.0)
        with pytest.raises(ValueError):
            learning_rate(HP, 4, 64, -1.0)

    @settings(max_examples=100, deadline=None)
    @given(n=st.integers(1, 512), b=st.integers(1, 256))
    def test_continuous_at_warmup_boundary(self, n, b):
        target = 0.1 * n * b / 256
        below = learning_rate(HP, n, b, np.nextafter(5.0, 0.0))
        assert below == pytest.approx(target, rel=1e-12, abs=1e-15)
        assert learning_rate(HP, n, b, 5.0) == pytest.approx(target, rel=1e-12)

    @settings(max_examples=200, deadline=None)
    @given(n=st.integers(1, 512), e1=st.floats(5.0, 200.0), e2=st.floats(5.0, 200.0))
    def test_decay_monotone(self, n, e1, e2):
        assume(e1 != e2)
        lo, hi = sorted((e1, e2))
        assert learning_rate(HP, n, 64, hi) <= learning_rate(HP, n, 64, lo)


class TestHyperParams:
    @pytest.mark.parametrize("kwargs", [dict(base_lr=0.0), dict(momentum=1.0), dict(momentum=-0.1),
                                        dict(weight_decay=-1e-4), dict(decay_factor=0.0),
                                        dict(decay_factor=1.5), dict(mode="adam")])
    def test_invalid(self, kwargs):
        with pytest.raises(ValueError):
            HyperParams(**kwargs)


class TestUpdate:
    def test_plain(self):
        w, state = sgd_update(np.array([1.0]), np.array([0.5]), None, HP, 0.1)
        assert w.tolist() == [0.95]
        assert state.iteration == 1

    def test_momentum(self):
        hp = HyperParams(mode="momentum", momentum=0.9, weight_decay=0.0001)
        w, state = sgd_update(np.array([1.0]), np.array([0.5]), OptimizerState.zeros(1), hp, 0.1)
        assert state.velocity[0] == pytest.approx(0.5001, abs=1e-12)
        assert w[0] == pytest.approx(0.94999, abs=1e-12)

    def test_momentum_second_step(self):
        hp = HyperParams(mode="momentum", momentum=0.9, weight_decay=0.0)
        w, s = sgd_update(np.array([1.0]), np.array([1.0]), None, hp, 0.1)
        w, s = sgd_update(w, np.array([1.0]), s, hp, 0.1)
        assert s.velocity[0] == pytest.approx(1.9, abs=1e-15)
        assert w[0] == pytest.approx(1.0 - 0.1 - 0.19, abs=1e-15)
        assert s.iteration == 2

    def test_zero_delta_fixed_point(self):
        w0 = np.array([1.5, -2.0, 0.25])
        w, _ = sgd_update(w0, np.zeros(3), None, HP, 0.3)
        assert w.tobytes() == w0.tobytes()

    def test_inputs_untouched(self):
        w0, d = np.ones(3), np.full(3, 0.5)
        hp = HyperParams(mode="momentum")
        state = OptimizerState.zeros(3)
        sgd_update(w0, d, state, hp, 0.1)
        assert w0.tolist() == [1.0] * 3 and not state.velocity.any() and state.iteration == 0

    def test_errors(self):
        with pytest.raises(ValueError):
            sgd_update(np.ones(3), np.ones(2), None, HP, 0.1)
        with pytest.raises(ValueError):
            sgd_update(np.ones(3), np.ones(3), None, HP, 0.0)

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.floats(-10, 10), min_size=1, max_size=8), st.floats(1e-4, 1.0),
           st.sampled_from(["plain", "momentum"]))
    def test_deterministic(self, values, lr, mode):
        hp = HyperParams(mode=mode)
        w = np.array(values)
        d = np.array(values[::-1])
        a, sa = sgd_update(w, d, OptimizerState.zeros(w.size), hp, lr)
        b, sb = sgd_update(w.copy(), d.copy(), OptimizerState.zeros(w.size), hp, lr)
        assert a.tobytes() == b.tobytes() and sa.velocity.tobytes() == sb.velocity.tobytes()
