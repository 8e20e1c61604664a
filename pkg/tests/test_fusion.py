import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from v2xbench.fusion import (
    CameraModel,
    GateParams,
    GradientCheckError,
    ToyTaskSpec,
    TrainingDivergedError,
    build_toy_dataset,
    finite_diff_check,
    gate_backward,
    gate_by_confidence_decile,
    gate_forward,
    gate_forward_cached,
    gradient_check_report,
    load_params,
    mse_loss,
    save_params,
    sum_loss,
    train_toy,
    weighted_sum_loss,
)


def rand_inputs(seed, c_f=2, c_v=2, h=4, w=4):
    rng = np.random.default_rng(seed)
    return rng.normal(size=(c_f, h, w)), rng.normal(size=(c_v, h, w))


def rand_params(seed, c_f=2, c_v=2, k=3, proj=False):
    rng = np.random.default_rng(seed + 1000)
    p = rng.normal(size=(c_f, c_v)) if proj else None
    return GateParams(rng.normal(0, 0.5, size=(1, c_f + c_v, k, k)), rng.normal(), rng.normal(size=c_v), p)


def inversions(deciles):
    g = [d["mean_gate"] for d in deciles]
    return sum(1 for a, b in zip(g, g[1:]) if b < a)


# -- forward -----------------------------------------------------------------


def test_zero_kernel_gives_half_gate():
    ff, fv = rand_inputs(0)
    p = GateParams(np.zeros((1, 4, 3, 3)), 0.0, np.ones(2))
    _, gate = gate_forward(ff, fv, p)
    assert np.all(gate == 0.5)


def test_alpha_zero_is_identity():
    ff, fv = rand_inputs(1)
    p = rand_params(1)
    p.alpha[:] = 0.0
    out, _ = gate_forward(ff, fv, p)
    assert np.array_equal(out, ff)
    pp = rand_params(2, c_f=3, c_v=2, proj=True)
    pp.alpha[:] = 0.0
    ff3, fv2 = rand_inputs(2, c_f=3)
    assert np.array_equal(gate_forward(ff3, fv2, pp)[0], ff3)


def test_saturated_gate_adds_v2x():
    ff, fv = rand_inputs(3)
    p = GateParams(np.zeros((1, 4, 3, 3)), 20.0, np.ones(2))
    out, _ = gate_forward(ff, fv, p)
    assert np.max(np.abs(out - (ff + fv))) <= 1e-8


def test_dimension_mismatch():
    ff, fv = rand_inputs(4)
    with pytest.raises(ValueError):
        gate_forward(ff, fv[:, :3], rand_params(4))
    with pytest.raises(ValueError):
        gate_forward(ff, fv[:1], rand_params(4))
    with pytest.raises(ValueError):
        GateParams(np.zeros((1, 4, 2, 2)), 0.0, np.ones(2))
    with pytest.raises(ValueError):
        GateParams(np.zeros((1, 4, 3, 3)), math.nan, np.ones(2))


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10_000), st.floats(0.1, 30))
def test_gate_strictly_inside_unit_interval(seed, scale):
    ff, fv = rand_inputs(seed)
    p = rand_params(seed)
    p.w *= scale
    _, gate = gate_forward(ff, fv, p)
    assert np.all(gate > 0) and np.all(gate < 1)


def test_batched_matches_unbatched():
    ff, fv = rand_inputs(5)
    ff2, fv2 = rand_inputs(6)
    p = rand_params(5)
    out, gate = gate_forward(np.stack([ff, ff2]), np.stack([fv, fv2]), p)
    assert np.allclose(out[1], gate_forward(ff2, fv2, p)[0], rtol=0, atol=1e-14)


# -- backward ----------------------------------------------------------------


def test_alpha_zero_upstream_passes_through():
    ff, fv = rand_inputs(7)
    p = rand_params(7)
    p.alpha[:] = 0.0
    out, _, cache = gate_forward_cached(ff, fv, p)
    up = np.random.default_rng(0).normal(size=out.shape)
    g = gate_backward(up, cache, p)
    assert np.array_equal(g.f_fused, up)


def test_zero_upstream_zero_grads():
    ff, fv = rand_inputs(8, c_f=3)
    p = rand_params(8, c_f=3, proj=True)
    out, _, cache = gate_forward_cached(ff, fv, p)
    g = gate_backward(np.zeros_like(out), cache, p)
    for arr in (g.w, g.alpha, g.proj, g.f_fused, g.f_v2x):
        assert not np.any(arr)
    assert g.b == 0.0


def test_missing_cache():
    with pytest.raises(ValueError):
        gate_backward(np.zeros((2, 4, 4)), None, rand_params(0))


@pytest.mark.parametrize("seed", range(20))
def test_gradient_check_random_seeds(seed):
    proj = seed % 2 == 1
    c_f = 3 if proj else 2
    k = 1 if seed % 5 == 0 else 3
    ff, fv = rand_inputs(seed, c_f=c_f)
    p = rand_params(seed, c_f=c_f, k=k, proj=proj)
    rng = np.random.default_rng(seed + 7)
    losses = [sum_loss, weighted_sum_loss(rng.normal(size=(c_f, 4, 4))), mse_loss(rng.normal(size=(c_f, 4, 4)))]
    report = gradient_check_report(p, ff, fv, losses[seed % 3])
    assert set(report) >= {"f_fused", "f_v2x", "w", "b", "alpha"}
    assert max(report.values()) < 1e-6, report


def test_gradient_check_detects_corruption():
    ff, fv = rand_inputs(11)
    p = rand_params(11)

    def corrupt(g):
        g.w[0, 1, 1, 1] *= 2.0

    assert finite_diff_check(p, ff, fv, sum_loss, grad_hook=corrupt) > 0.1


def test_gradient_check_constant_loss():
    ff, fv = rand_inputs(12)

    def const(f_out):
        return np.sum(f_out * 0)[()], np.zeros_like(f_out, dtype=np.float64)

    assert finite_diff_check(rand_params(12), ff, fv, const) == 0.0


def test_gradient_check_rejects_bad_input():
    ff, fv = rand_inputs(13)
    with pytest.raises(ValueError):
        finite_diff_check(rand_params(13), ff, fv, step=0.0)

    def nan_loss(f_out):
        return np.sum(f_out)[()] * math.nan, np.ones_like(f_out)

    with pytest.raises(GradientCheckError):
        finite_diff_check(rand_params(13), ff, fv, nan_loss)


# -- training ------------------------------------------------------------------

SMALL_TASK = dict(grid_size=16, n_frames=6, objects_per_frame=4, epochs=40)


def test_zero_noise_training_converges():
    _, report = train_toy(ToyTaskSpec.zero_noise(seed=7, epochs=200))
    assert report["final_loss"] < 0.25 * report["initial_loss"]


def test_decile_partition_complete():
    _, report = train_toy(ToyTaskSpec(**SMALL_TASK))
    counts = [d["count"] for d in report["gate_by_confidence_decile"]]
    assert sum(counts) == report["n_samples"] > 0
    assert len(counts) == 10


def test_empty_probes_deciles():
    out = gate_by_confidence_decile(np.zeros((1, 2, 2)), np.zeros((0, 4)))
    assert [d["count"] for d in out] == [0] * 10


def test_training_is_deterministic():
    task = ToyTaskSpec(**SMALL_TASK)
    p1, r1 = train_toy(task)
    p2, r2 = train_toy(task)
    assert r1["losses"] == r2["losses"]
    assert np.array_equal(p1.w, p2.w) and np.array_equal(p1.proj, p2.proj)


def test_dataset_shapes():
    d = build_toy_dataset(ToyTaskSpec(**SMALL_TASK))
    assert d.f_fused.shape == (6, 10, 16, 16)
    assert d.f_v2x.shape == (6, 12, 16, 16)
    assert d.target.shape == (6, 10, 16, 16)
    assert np.all(d.f_v2x[:, -1] == 1.0)
    assert np.all((d.probes[:, 3] > 0) & (d.probes[:, 3] <= 1))


def test_divergence_raises():
    # a saturated gate leaves alpha and P as a linear least-squares problem,
    # which plain gradient descent overshoots at this step size
    init = GateParams.init(10, 12, 3, seed=0)
    init.b = 50.0
    with pytest.raises(TrainingDivergedError):
        train_toy(ToyTaskSpec(**dict(SMALL_TASK, learning_rate=1e3)), init=init)
    assert init.b == 50.0


@pytest.mark.parametrize("level", ["low", "medium", "high"])
def test_top_decile_gate_above_bottom(level):
    _, report = train_toy(ToyTaskSpec.for_level(level))
    dec = report["gate_by_confidence_decile"]
    assert dec[9]["mean_gate"] > dec[0]["mean_gate"]


def test_gate_monotone_in_confidence_large_sample():
    _, report = train_toy(ToyTaskSpec.for_level("low", n_frames=96, objects_per_frame=8))
    assert report["n_samples"] >= 500
    assert inversions(report["gate_by_confidence_decile"]) <= 1


# -- serialization -------------------------------------------------------------


def test_params_round_trip(tmp_path):
    p = rand_params(3, c_f=3, proj=True)
    save_params(p, tmp_path / "g.bin", {"seed": 3})
    back, meta = load_params(tmp_path / "g.bin")
    assert meta["seed"] == 3
    assert np.array_equal(back.w, p.w) and back.b == p.b
    assert np.array_equal(back.alpha, p.alpha) and np.array_equal(back.proj, p.proj)
    p2 = rand_params(4)
    save_params(p2, tmp_path / "h.bin")
    assert load_params(tmp_path / "h.bin")[0].proj is None


def test_params_bad_magic(tmp_path):
    (tmp_path / "x.bin").write_bytes(b"NOTGATES" + bytes(16))
    with pytest.raises(ValueError):
        load_params(tmp_path / "x.bin")


def test_task_spec_validation_and_dict():
    with pytest.raises(ValueError):
        ToyTaskSpec(grid_size=128)
    with pytest.raises(ValueError):
        ToyTaskSpec(kernel_size=5)
    t = ToyTaskSpec.for_level("medium", camera=CameraModel(gain=0.7), excluded_classes=("cone",))
    assert ToyTaskSpec.from_dict(t.to_dict()) == t
    assert ToyTaskSpec.from_dict({"level": "medium"}).obj_trans_range == (0.02, 2.0)
