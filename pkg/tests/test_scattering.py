import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from hazeforge.core import ShapeMismatchError
from hazeforge.scattering import EPS_T, compute_transmission, invert_transmission, render_haze

from oracles import central_difference, random_instance, relative_error, render_loop, transmission_loop


def test_zero_density_is_clear():
    t = compute_transmission(np.zeros((3, 3, 3)), np.random.default_rng(0).uniform(0, 1, (3, 3, 1)))
    np.testing.assert_array_equal(t, 1.0)


def test_ln2_halves():
    t = compute_transmission(np.full((2, 2, 3), math.log(2)), np.ones((2, 2, 1)))
    np.testing.assert_allclose(t, 0.5, rtol=0, atol=1e-15)


def test_transmission_matches_scalar_loop():
    rng = np.random.default_rng(42)
    beta, depth = rng.uniform(0, 3, (8, 8, 3)), rng.uniform(0, 1, (8, 8, 1))
    assert np.max(np.abs(compute_transmission(beta, depth) - transmission_loop(beta, depth))) <= 1e-12


def test_render_matches_scalar_loop():
    inst = random_instance(np.random.default_rng(43), 7, 9)
    t = transmission_loop(inst["beta"], inst["depth"])
    assert np.max(np.abs(render_haze(inst["clean"], t, inst["A"]) - render_loop(inst["clean"], t, inst["A"]))) <= 1e-12


def test_shape_mismatch():
    with pytest.raises(ShapeMismatchError):
        compute_transmission(np.zeros((4, 4, 3)), np.zeros((4, 5, 1)))
    with pytest.raises(ShapeMismatchError):
        compute_transmission(np.zeros((4, 4, 3)), np.zeros((4, 4, 3)))
    with pytest.raises(ShapeMismatchError):
        render_haze(np.zeros((4, 4, 3)), np.ones((4, 4, 3)), np.zeros((5, 4, 1)))


def test_render_limits():
    rng = np.random.default_rng(1)
    clean, A = rng.uniform(0, 1, (5, 5, 3)), rng.uniform(0, 1, (5, 5, 1))
    np.testing.assert_array_equal(render_haze(clean, np.ones((5, 5, 3)), A), clean)
    np.testing.assert_array_equal(render_haze(clean, np.zeros((5, 5, 3)), A), np.broadcast_to(A, (5, 5, 3)))


def test_render_midpoint():
    out = render_haze(np.full((1, 1, 3), 0.8), np.full((1, 1, 3), 0.5), np.full((1, 1, 1), 0.2))
    np.testing.assert_allclose(out, 0.5, atol=1e-15)


def test_invert_identity_and_opaque():
    rng = np.random.default_rng(2)
    clean = rng.uniform(0.5, 1, (4, 4, 3))
    A = np.full((4, 4, 1), 0.1)
    t, valid = invert_transmission(clean, clean, A)
    assert valid.all()
    np.testing.assert_allclose(t, 1.0, atol=1e-15)
    t, _ = invert_transmission(np.broadcast_to(A, (4, 4, 3)), clean, A)
    np.testing.assert_array_equal(t, EPS_T)


def test_invert_flags_degenerate_pixels():
    clean = np.full((2, 2, 3), 0.4)
    A = np.full((2, 2, 1), 0.4)
    A[0, 0, 0] = 0.9
    _, valid = invert_transmission(clean, clean, A)
    assert valid[0, 0].all() and not valid[1, 1].any()


def test_invert_round_trip():
    inst = random_instance(np.random.default_rng(7), 16, 16)
    t = compute_transmission(inst["beta"], inst["depth"])
    hazy = render_haze(inst["clean"], t, inst["A"])
    t_back, valid = invert_transmission(hazy, inst["clean"], inst["A"])
    well = valid & (np.abs(inst["clean"] - inst["A"]) > 0.1) & (t > EPS_T)
    assert well.sum() > 300
    assert np.max(np.abs(t_back - t)[well]) <= 1e-6


@settings(max_examples=200, deadline=None)
@given(st.floats(0, 5), st.floats(1e-3, 5), st.floats(0.01, 1))
def test_transmission_strictly_decreasing_in_density(b, db, d):
    t1 = compute_transmission(np.full((1, 1, 3), b), np.full((1, 1, 1), d))
    t2 = compute_transmission(np.full((1, 1, 3), b + db), np.full((1, 1, 1), d))
    assert (t2 < t1).all()


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_render_bounded_between_clean_and_airlight(seed):
    inst = random_instance(np.random.default_rng(seed), 4, 4)
    out = render_haze(inst["clean"], compute_transmission(inst["beta"], inst["depth"]), inst["A"])
    lo = np.minimum(inst["clean"], inst["A"]) - 1e-15
    hi = np.maximum(inst["clean"], inst["A"]) + 1e-15
    assert (out >= lo).all() and (out <= hi).all()
    assert (out >= 0).all() and (out <= 1).all()


def test_identity_chain_float32():
    rng = np.random.default_rng(3)
    clean = rng.uniform(0, 1, (6, 6, 3)).astype(np.float32)
    depth = rng.uniform(0, 1, (6, 6, 1)).astype(np.float32)
    A = rng.uniform(0, 1, (6, 6, 1)).astype(np.float32)
    out = render_haze(clean, compute_transmission(np.zeros((6, 6, 3), np.float32), depth), A)
    assert np.max(np.abs(out - clean)) <= 1e-7


def test_torch_tensors_pass_through():
    beta = torch.rand(4, 4, 3, dtype=torch.float64)
    depth = torch.rand(4, 4, 1, dtype=torch.float64)
    t = compute_transmission(beta, depth)
    assert isinstance(t, torch.Tensor)
    np.testing.assert_allclose(t.numpy(), compute_transmission(beta.numpy(), depth.numpy()), atol=1e-15)


def test_render_transmission_gradient_small():
    rng = np.random.default_rng(11)
    inst = random_instance(rng, 4, 4)
    w = rng.normal(size=(4, 4, 3))

    def f(beta=inst["beta"], A=inst["A"], depth=inst["depth"]):
        return float(np.sum(w * render_haze(inst["clean"], compute_transmission(beta, depth), A)))

    tb = torch.tensor(inst["beta"], requires_grad=True)
    tA = torch.tensor(inst["A"], requires_grad=True)
    td = torch.tensor(inst["depth"], requires_grad=True)
    (torch.tensor(w) * render_haze(torch.tensor(inst["clean"]), compute_transmission(tb, td), tA)).sum().backward()
    for idx in [(0, 0, 0), (3, 2, 1), (1, 3, 2)]:
        assert relative_error(tb.grad[idx].item(), central_difference(lambda b: f(beta=b), inst["beta"], idx)) < 1e-3
    for idx in [(0, 0, 0), (2, 1, 0)]:
        assert relative_error(tA.grad[idx].item(), central_difference(lambda a: f(A=a), inst["A"], idx)) < 1e-3
        assert relative_error(td.grad[idx].item(), central_difference(lambda d: f(depth=d), inst["depth"], idx)) < 1e-3
