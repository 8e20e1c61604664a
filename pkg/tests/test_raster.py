import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from v2xbench.emulator import V2xFrame, V2xObject
from v2xbench.raster import (
    TRUNCATION_BOUND,
    BevTensor,
    ChannelLayout,
    GridSpec,
    NormalizationSpec,
    decode_frame,
    find_peaks,
    footprint,
    local_offset,
    merge_ridge_peaks,
    rasterize_frame,
    rasterize_frame_bruteforce,
)
from v2xbench.scene import CLASS_NAMES, CLASS_SIZE_RANGES, ObjectClass, ObjectState

SMALL = GridSpec(-12.8, 12.8, -12.8, 12.8, 0.4)  # 64 x 64
EXACT = GridSpec(-16.0, 16.0, -16.0, 16.0, 0.5)  # binary-exact pitch
LAYOUT = ChannelLayout()
NORM = NormalizationSpec()
CAR = LAYOUT.channel_of("car")


def v2x(*objs):
    return V2xFrame("t", tuple(objs))


def vobj(oid="a", cls="car", center=(0.2, 0.2, 0.0), size=(4.0, 2.0, 1.5), yaw=0.0, velocity=(0.0, 0.0), conf=1.0):
    return V2xObject(ObjectState(oid, cls, center, size, yaw, velocity), 0.0, 0.0, conf)


def random_frame(rng, n, grid=SMALL, conf_range=(0.2, 1.0), margin=0.0):
    objs = []
    for k in range(n):
        cls = CLASS_NAMES[int(rng.integers(10))]
        cx = rng.uniform(grid.x_min - margin, grid.x_max + margin)
        cy = rng.uniform(grid.y_min - margin, grid.y_max + margin)
        size = (rng.uniform(0.3, 8.0), rng.uniform(0.3, 3.0), rng.uniform(0.5, 3.0))
        vel = tuple(rng.uniform(-30, 30, 2))
        st_ = ObjectState(f"o{k}", cls, (cx, cy, rng.uniform(-12, 12)), size, rng.uniform(-4, 4), vel)
        objs.append(V2xObject(st_, 0.0, 0.0, rng.uniform(*conf_range)))
    return V2xFrame("r", tuple(objs))


# -- geometry --------------------------------------------------------------


def test_grid_defaults():
    g = GridSpec()
    assert (g.width, g.height) == (256, 256)
    assert g.cell_center(0, 0) == pytest.approx((-51.0, -51.0))
    with pytest.raises(ValueError):
        GridSpec(0.0, 1.0, 0.0, 1.0, 0.3)


def test_layout_and_normalization():
    assert LAYOUT.n_channels == 15
    assert (LAYOUT.sin_channel, LAYOUT.cos_channel, LAYOUT.z_channel, LAYOUT.vx_channel, LAYOUT.vy_channel) == (
        10, 11, 12, 13, 14,
    )
    assert NORM.encode_z(0.0) == 0.5
    assert NORM.encode_z(50.0) == 1.0
    assert NORM.encode_v(-25.0) == 0.0
    assert NORM.decode_v(NORM.encode_v(7.5)) == pytest.approx(7.5)
    with pytest.raises(ValueError):
        NormalizationSpec(v_max=0.0)


def test_local_offset_examples():
    assert local_offset((3.0, 4.0), 0.0) == (3.0, 4.0)
    u, v = local_offset((3.0, 4.0), math.pi / 2)
    assert u == pytest.approx(4.0) and v == pytest.approx(-3.0)


def test_footprint_examples():
    assert footprint(0.0, 0.0, 4.0, 2.0) == 1.0
    assert abs(footprint(2.0, 0.0, 4.0, 2.0) - math.exp(-0.5)) <= 1e-12
    assert footprint(6.0, 0.0, 4.0, 2.0) == pytest.approx(0.011109, abs=1e-6)
    with pytest.raises(ValueError):
        footprint(0.0, 0.0, 0.0, 1.0)


@given(st.floats(-1e3, 1e3), st.floats(-1e3, 1e3), st.floats(-10, 10))
def test_local_offset_preserves_norm(dx, dy, yaw):
    u, v = local_offset((dx, dy), yaw)
    assert math.hypot(u, v) == pytest.approx(math.hypot(dx, dy), rel=1e-12, abs=1e-9)


# -- rasterize -------------------------------------------------------------


def test_empty_frame_is_neutral():
    t = rasterize_frame(v2x(), SMALL)
    assert t.data.dtype == np.float32
    assert t.data.shape == (15, 64, 64)
    assert np.all(t.occupancy == 0)
    for p, val in enumerate(NORM.neutral()):
        assert np.all(t.properties[p] == np.float32(val))
    assert np.array_equal(t.data, rasterize_frame_bruteforce(v2x(), SMALL).data)


def test_single_car_on_cell_center():
    grid = SMALL
    cx, cy = grid.cell_center(32, 40)
    t = rasterize_frame(v2x(vobj(center=(cx, cy, 0.0))), grid)
    assert t.data[CAR, 40, 32] == 1.0
    assert t.data[LAYOUT.cos_channel, 40, 32] == 1.0
    assert t.data[LAYOUT.sin_channel, 40, 32] == 0.5


def test_overlap_high_confidence_owns():
    a = vobj("hi", yaw=0.3, velocity=(5.0, 0.0), conf=1.0)
    b = vobj("lo", yaw=0.3, velocity=(-5.0, 2.0), conf=0.5)
    t = rasterize_frame(v2x(a, b), SMALL)
    only_a = rasterize_frame(v2x(a), SMALL)
    assert np.array_equal(t.data, only_a.data)
    # same with the order swapped
    assert np.array_equal(rasterize_frame(v2x(b, a), SMALL).data, only_a.data)


def test_owner_is_argmax_across_classes():
    car = vobj("car", cls="car", center=(0.2, 0.2, 0.0), velocity=(10.0, 0.0), conf=1.0)
    ped = vobj("ped", cls="pedestrian", center=(1.0, 0.2, 0.0), size=(0.8, 0.8, 1.7), velocity=(-2.0, 0.0), conf=1.0)
    t = rasterize_frame(v2x(car, ped), SMALL)
    occ = t.occupancy.astype(np.float64)
    owner_is_car = occ[CAR] >= occ[LAYOUT.channel_of("pedestrian")]
    vx = NORM.decode_v(0.5 + (t.data[LAYOUT.vx_channel] - 0.5) / np.maximum(occ.max(0), 1e-12))
    touched = occ.max(0) > 0.05
    assert np.all(vx[touched & owner_is_car] > 0)
    assert np.all(vx[touched & ~owner_is_car] < 0)


def test_truncation_vs_bruteforce_and_exactness():
    rng = np.random.default_rng(0)
    for _ in range(10):
        f = random_frame(rng, 30, margin=3.0)
        fast = rasterize_frame(f, SMALL)
        slow = rasterize_frame_bruteforce(f, SMALL)
        assert np.max(np.abs(fast.data.astype(np.float64) - slow.data)) <= TRUNCATION_BOUND
        assert np.array_equal(rasterize_frame(f, SMALL, truncate=False).data, slow.data)


def test_out_of_grid_objects_skipped():
    far = vobj(center=(500.0, 0.0, 0.0))
    t = rasterize_frame(v2x(far), SMALL)
    assert t.n_skipped == 1
    assert np.all(t.occupancy == 0)


def test_values_in_unit_range_random():
    rng = np.random.default_rng(1)
    for _ in range(1000):
        t = rasterize_frame(random_frame(rng, int(rng.integers(0, 6)), margin=4.0), SMALL)
        assert t.data.min() >= 0.0 and t.data.max() <= 1.0


@settings(max_examples=60, deadline=None)
@given(
    st.floats(-0.2, 0.2), st.floats(-0.2, 0.2), st.floats(0.5, 6), st.floats(0.5, 3), st.floats(-3.1, 3.1),
    st.floats(0.05, 1.0), st.floats(0.05, 0.99),
)
def test_confidence_scaling_never_increases(x, y, dx, dy, yaw, conf, alpha):
    base = rasterize_frame(v2x(vobj(center=(x, y, 0.0), size=(dx, dy, 1.0), yaw=yaw, conf=conf)), SMALL)
    low = rasterize_frame(v2x(vobj(center=(x, y, 0.0), size=(dx, dy, 1.0), yaw=yaw, conf=conf * alpha)), SMALL)
    assert np.all(low.data[CAR] <= base.data[CAR])


@pytest.mark.parametrize("theta", [0.0, 0.3, -1.1, 2.5])
def test_rotation_consistency(theta):
    # (0, 0) is a grid corner, a symmetry point of the cell lattice under 90 degree turns
    a = rasterize_frame(v2x(vobj(center=(0.0, 0.0, 0.0), size=(4.0, 2.0, 1.5), yaw=theta)), SMALL)
    b = rasterize_frame(v2x(vobj(center=(0.0, 0.0, 0.0), size=(2.0, 4.0, 1.5), yaw=theta + math.pi / 2)), SMALL)
    assert np.max(np.abs(a.data[CAR] - b.data[CAR])) <= 1e-6


def test_translation_equivariance():
    rng = np.random.default_rng(5)
    base = random_frame(rng, 6, grid=GridSpec(-8.0, 8.0, -8.0, 8.0, 0.5))
    shifted = V2xFrame(
        "s",
        tuple(
            V2xObject(
                ObjectState(o.state.id, o.state.cls, (o.state.center[0] + 0.5, o.state.center[1], o.state.center[2]),
                            o.state.size, o.state.yaw, o.state.velocity),
                0.0, 0.0, o.confidence,
            )
            for o in base.objects
        ),
    )
    a = rasterize_frame(base, EXACT, truncate=False).data
    b = rasterize_frame(shifted, EXACT, truncate=False).data
    assert np.max(np.abs(a[:, 4:-4, 4:-5] - b[:, 4:-4, 5:-4])) <= 1e-6


# -- decode ----------------------------------------------------------------


def test_decode_empty():
    assert decode_frame(rasterize_frame(v2x(), SMALL)) == []
    with pytest.raises(ValueError):
        decode_frame(rasterize_frame(v2x(), SMALL), peak_threshold=0.0)


def test_decode_single_car_round_trip():
    src = vobj(center=(1.13, -2.71, 0.4), yaw=0.77, velocity=(3.0, -1.5))
    dets = decode_frame(rasterize_frame(v2x(src), SMALL))
    assert len(dets) == 1
    d = dets[0]
    assert d.cls.label == "car"
    assert math.hypot(d.center[0] - 1.13, d.center[1] + 2.71) <= 0.3
    assert abs(d.yaw - 0.77) <= 0.02
    assert d.velocity == pytest.approx((3.0, -1.5), abs=0.05)
    assert d.z == pytest.approx(0.4, abs=0.05)
    assert d.score == pytest.approx(1.0, abs=0.05)


def test_decode_two_cars():
    a = vobj("a", center=(-5.0, 0.3, 0.0), yaw=0.2)
    b = vobj("b", center=(5.0, 0.3, 0.0), yaw=-0.4)
    assert len(decode_frame(rasterize_frame(v2x(a, b), SMALL))) == 2


def test_plateau_gives_one_peak():
    ch = np.zeros((5, 5))
    ch[2, 2] = ch[2, 3] = 0.8
    assert find_peaks(ch, 0.1) == [(2, 2)]


def test_round_trip_isolated_objects():
    rng = np.random.default_rng(7)
    hits = 0
    for _ in range(200):
        cls = ObjectClass(int(rng.integers(10)))
        size = tuple(rng.uniform(lo, hi) for lo, hi in CLASS_SIZE_RANGES[cls])
        x, y = rng.uniform(-6, 6, 2)
        src = vobj(cls=cls, center=(x, y, 0.0), size=size, yaw=rng.uniform(-math.pi, math.pi),
                   conf=rng.uniform(0.5, 1.0))
        dets = decode_frame(rasterize_frame(v2x(src), SMALL))
        assert len(dets) == 1, (cls, size)
        hits += math.hypot(dets[0].center[0] - x, dets[0].center[1] - y) <= 0.75 * SMALL.resolution
    assert hits >= 0.95 * 200


def test_thin_diagonal_ridge_decodes_once():
    src = vobj(cls="barrier", center=(2.0015, 6.3554, 0.0), size=(2.6, 0.45, 1.0), yaw=-1.2556, conf=0.94)
    t = rasterize_frame(v2x(src), SMALL)
    ch = t.data[LAYOUT.channel_of("barrier")]
    assert len(find_peaks(ch, 0.05)) >= 1
    assert len(decode_frame(t)) == 1


def test_ridge_merge_keeps_separated_footprints():
    # end to end at the isolation distance: max(dx, dy) + 2 cells
    gap = 4.0 + 2 * SMALL.resolution
    a = vobj("a", center=(-gap / 2, 0.1, 0.0), size=(4.0, 1.8, 1.5))
    b = vobj("b", center=(gap / 2, 0.1, 0.0), size=(4.0, 1.8, 1.5), conf=0.6)
    assert len(decode_frame(rasterize_frame(v2x(a, b), SMALL))) == 2


def test_merge_ridge_peaks_direct():
    ch = np.zeros((9, 9))
    ch[4, 2] = ch[4, 6] = 1.0
    ch[4, 3:6] = 0.9
    assert merge_ridge_peaks(ch, [(4, 2), (4, 6)], 10.0) == [(4, 2)]
    ch[4, 4] = 0.1
    assert merge_ridge_peaks(ch, [(4, 2), (4, 6)], 10.0) == [(4, 2), (4, 6)]
    assert merge_ridge_peaks(ch, [(4, 2), (4, 6)], 3.0) == [(4, 2), (4, 6)]


def test_bev_tensor_views():
    t = rasterize_frame(v2x(vobj()), SMALL)
    assert isinstance(t, BevTensor)
    assert t.occupancy.shape == (10, 64, 64)
    assert t.properties.shape == (5, 64, 64)
