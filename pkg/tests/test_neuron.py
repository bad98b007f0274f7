"""Neuron dynamics: polynomial evaluation, surrogate windows, and the
membrane step against hand-computed trajectories."""

import math

import pytest

from lnmnet.errors import ConfigError, NumericalError
from lnmnet.neuron import (
    DIVERGENCE_LIMIT,
    LayerNeuronConfig,
    LnmParams,
    NeuronState,
    SurrogateConfig,
    eval_poly_derivative,
    eval_poly_horner,
    eval_poly_horner_counted,
    lif_init,
    relaxed_spike,
    step,
    surrogate_grad,
)
from lnmnet.tensor import Rng, Tensor


# ---------------------------------------------------------------------------
# parameters
# ---------------------------------------------------------------------------

def test_constant_coefficient_is_pinned():
    p = LnmParams([3.0, 1.0, 2.0])
    assert p.tolist() == [0.0, 1.0, 2.0]
    assert p.degree == 2


def test_lif_init_is_linear_decay():
    p = lif_init(3)
    assert p.tolist() == [0.0, -0.5, 0.0, 0.0]
    assert lif_init(1, decay=-0.25).tolist() == [0.0, -0.25]


def test_params_require_degree_one():
    with pytest.raises(ConfigError):
        LnmParams([0.0])


def test_surrogate_config_validation():
    with pytest.raises(ConfigError):
        SurrogateConfig(kind="gaussian", width=1.0)
    with pytest.raises(ConfigError):
        SurrogateConfig(kind="rectangle", width=0.0)


# ---------------------------------------------------------------------------
# polynomial evaluation
# ---------------------------------------------------------------------------

def _naive_poly(coeffs, u):
    cu = max(-1.0, min(1.0, u))
    return sum(c * cu**k for k, c in enumerate(coeffs))


def test_horner_matches_naive_power_sum():
    rng = Rng(100)
    for _ in range(200):
        degree = 1 + rng.randint_below(5)
        coeffs = [0.0] + [rng.normal() for _ in range(degree)]
        p = LnmParams(coeffs)
        us = Tensor.from_flat([rng.normal() for _ in range(8)], (8,))
        got = eval_poly_horner(p, us)
        for i in range(8):
            want = _naive_poly(coeffs, us.data[i])
            assert abs(got.data[i] - want) <= 1e-14 * max(1.0, abs(want))


def test_horner_clips_input():
    p = LnmParams([0.0, 1.0, 0.0, 1.0])  # u + u^3 on the clipped value
    us = Tensor.from_flat([-5.0, 5.0], (2,))
    out = eval_poly_horner(p, us)
    assert out.data[0] == -2.0
    assert out.data[1] == 2.0


def test_resting_point_maps_to_zero():
    rng = Rng(101)
    for _ in range(20):
        p = LnmParams([0.0] + [rng.normal() for _ in range(4)])
        out = eval_poly_horner(p, Tensor.zeros((3,)))
        assert all(v == 0.0 for v in out.data)


def test_counted_horner_counts_exactly_degree_madds():
    rng = Rng(102)
    for degree in (1, 2, 3, 5):
        p = LnmParams([0.0] + [rng.normal() for _ in range(degree)])
        us = rng.normal_tensor((11,))
        got, madds = eval_poly_horner_counted(p, us)
        assert madds == degree * 11
        kernel = eval_poly_horner(p, us)
        assert got.exact_eq(kernel)


def test_poly_derivative_matches_finite_differences():
    rng = Rng(103)
    h = 1e-6
    for _ in range(50):
        degree = 1 + rng.randint_below(4)
        p = LnmParams([0.0] + [rng.normal() for _ in range(degree)])
        u = rng.uniform() * 1.8 - 0.9  # keep away from the clip boundary
        got = eval_poly_derivative(p, Tensor.from_flat([u], (1,))).data[0]
        up = _naive_poly(p.tolist(), u + h)
        down = _naive_poly(p.tolist(), u - h)
        fd = (up - down) / (2 * h)
        assert abs(got - fd) < 1e-6 * max(1.0, abs(fd))


def test_poly_derivative_zero_outside_clip():
    p = LnmParams([0.0, -0.5, 0.3])
    out = eval_poly_derivative(p, Tensor.from_flat([-1.5, 1.5], (2,)))
    assert out.data[0] == 0.0 and out.data[1] == 0.0
    # boundary counts as inside
    edge = eval_poly_derivative(p, Tensor.from_flat([1.0], (1,))).data[0]
    assert edge == -0.5 + 0.6


# ---------------------------------------------------------------------------
# surrogate windows
# ---------------------------------------------------------------------------

def test_rectangle_window_is_strict():
    cfg = SurrogateConfig(kind="rectangle", width=1.0)
    th = 0.5
    us = Tensor.from_flat([0.0, 1.0, 0.5, 0.0001, 0.9999], (5,))
    out = surrogate_grad(us, th, cfg)
    assert out.data[0] == 0.0  # |u-th| == alpha/2 exactly: outside
    assert out.data[1] == 0.0
    assert out.data[2] == 1.0
    assert out.data[3] == 1.0
    assert out.data[4] == 1.0


def test_rectangle_window_scales_with_width():
    cfg = SurrogateConfig(kind="rectangle", width=0.5)
    out = surrogate_grad(Tensor.from_flat([0.5], (1,)), 0.5, cfg)
    assert out.data[0] == 2.0


def test_triangle_window_shape():
    cfg = SurrogateConfig(kind="triangle", width=1.0)
    th = 0.5
    us = Tensor.from_flat([0.5, 0.0, 1.0, -0.5, 1.5, 0.75], (6,))
    out = surrogate_grad(us, th, cfg)
    assert out.data[0] == 1.0  # apex 1/alpha
    assert out.data[1] == pytest.approx(0.5, abs=1e-15)
    assert out.data[2] == pytest.approx(0.5, abs=1e-15)
    assert out.data[3] == 0.0  # |u-th| >= alpha: zero
    assert out.data[4] == 0.0
    assert out.data[5] == pytest.approx(0.75, abs=1e-15)


def test_relaxed_spike_is_antiderivative_of_surrogate():
    h = 1e-6
    for kind in ("rectangle", "triangle"):
        cfg = SurrogateConfig(kind=kind, width=1.0)
        rng = Rng(104)
        for _ in range(40):
            u = rng.uniform() * 2.4 - 0.7
            if abs(abs(u - 0.5) - 0.5) < 1e-3 or abs(abs(u - 0.5) - 1.0) < 1e-3:
                continue  # skip the window kinks themselves
            up = relaxed_spike(Tensor.from_flat([u + h], (1,)), 0.5, cfg).data[0]
            dn = relaxed_spike(Tensor.from_flat([u - h], (1,)), 0.5, cfg).data[0]
            fd = (up - dn) / (2 * h)
            want = surrogate_grad(Tensor.from_flat([u], (1,)), 0.5, cfg).data[0]
            assert abs(fd - want) < 1e-6


def test_relaxed_spike_saturates_and_centers():
    for kind in ("rectangle", "triangle"):
        cfg = SurrogateConfig(kind=kind, width=1.0)
        vals = relaxed_spike(
            Tensor.from_flat([-2.0, 0.5, 3.0], (3,)), 0.5, cfg
        )
        assert vals.data[0] == 0.0
        assert vals.data[1] == pytest.approx(0.5, abs=1e-15)
        assert vals.data[2] == 1.0


# ---------------------------------------------------------------------------
# membrane step
# ---------------------------------------------------------------------------

def _lif_cfg(degree=1):
    return LayerNeuronConfig(params=lif_init(degree))


def test_step_matches_hand_lif_trajectory():
    """Four neurons driven by constant currents [0.3, 0.6, 0.9, 0.0].

    By hand with u' = (u - 0.5 clip(u))(1 - o) + I, threshold 0.5:
      t=1: u = I -> [0.3, 0.6, 0.9, 0.0], spikes [0, 1, 1, 0]
      t=2: neuron 0 integrates 0.15+0.3, spiking ones reset to I
           -> [0.45, 0.6, 0.9, 0.0], spikes [0, 1, 1, 0]
    """
    cfg = _lif_cfg()
    current = Tensor.from_flat([0.3, 0.6, 0.9, 0.0], (1, 4))
    state = NeuronState.resting((1, 4))

    state, rec = step(state, current, cfg)
    assert state.membrane.tolist() == [[0.3, 0.6, 0.9, 0.0]]
    assert state.hard_spikes.tolist() == [[0.0, 1.0, 1.0, 0.0]]
    assert rec.u_prev.tolist() == [[0.0, 0.0, 0.0, 0.0]]

    state, rec = step(state, current, cfg)
    assert state.membrane.tolist() == [[0.44999999999999996, 0.6, 0.9, 0.0]]
    assert state.hard_spikes.tolist() == [[0.0, 1.0, 1.0, 0.0]]
    assert rec.o_prev.tolist() == [[0.0, 1.0, 1.0, 0.0]]


def test_step_threshold_boundary_spikes():
    cfg = _lif_cfg()
    state = NeuronState.resting((1, 1))
    current = Tensor.from_flat([0.5], (1, 1))
    state, _ = step(state, current, cfg)
    assert state.hard_spikes.data[0] == 1.0  # heaviside(0) = 1


def test_step_hard_reset_zeroes_integration():
    cfg = _lif_cfg()
    state = NeuronState.resting((1, 1))
    big = Tensor.from_flat([2.0], (1, 1))
    state, _ = step(state, big, cfg)
    assert state.hard_spikes.data[0] == 1.0
    zero = Tensor.zeros((1, 1))
    state, _ = step(state, zero, cfg)
    # reset discards u=2.0 entirely: (u + f)(1-1) + 0 = 0
    assert state.membrane.data[0] == 0.0


def test_step_relaxed_keeps_hard_reset():
    cfg = _lif_cfg()
    state = NeuronState.resting((1, 1))
    current = Tensor.from_flat([0.7], (1, 1))
    state, _ = step(state, current, cfg, relaxed=True)
    assert state.hard_spikes.data[0] == 1.0
    assert 0.0 < state.spikes.data[0] < 1.0 or state.spikes.data[0] == 1.0
    # the next membrane must evolve from the HARD spike
    state2, _ = step(state, Tensor.zeros((1, 1)), cfg, relaxed=True)
    assert state2.membrane.data[0] == 0.0


def test_step_divergence_raises_with_context():
    # strongly self-exciting below threshold: negative drive compounds
    # without ever spiking, so the reset cannot rescue it
    p = LnmParams([0.0, 5.0])
    cfg = LayerNeuronConfig(params=p)
    state = NeuronState.resting((1, 1))
    current = Tensor.from_flat([-1.0], (1, 1))
    with pytest.raises(NumericalError) as exc:
        for _ in range(10):
            state, _ = step(state, current, cfg, max_abs=3.0, layer=4, timestep=2)
    msg = str(exc.value)
    assert "layer 4" in msg and "timestep 2" in msg


def test_step_nan_input_raises():
    cfg = _lif_cfg()
    state = NeuronState.resting((1, 1))
    bad = Tensor.from_flat([math.nan], (1, 1))
    with pytest.raises(NumericalError):
        step(state, bad, cfg)


def test_step_shape_mismatch_raises():
    cfg = _lif_cfg()
    state = NeuronState.resting((1, 2))
    with pytest.raises(ConfigError):
        step(state, Tensor.zeros((1, 3)), cfg)


def test_divergence_limit_is_generous():
    assert DIVERGENCE_LIMIT >= 1e6
