import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from carsplat.kinematics import KinematicParams
from carsplat.kinnet.infer import (MissingWeightsError, infer_kinematics, infer_labels, load_kin, load_seg,
                                   network_input)
from carsplat.kinnet.model import KinNet, NetConfig, SegNet, canonical_order, micro_config
from carsplat.kinnet.train import (AugmentConfig, AugTransform, TrainConfig, TrainingError, cross_entropy, prepare,
                                   sample_transform, train_kin, train_seg)
from carsplat.synth import CarSpec, TrainSample, generate

N_CLASSES = 7


def cloud(seed, n=64):
    rng = np.random.default_rng(seed)
    return rng.uniform(-1, 1, (n, 3)), rng.uniform(0, 1, (n, 3)), rng.integers(0, N_CLASSES, n)


def seg_loss(net, pos, col, lab):
    s = net.forward(pos, col)
    return cross_entropy(s, lab)


@pytest.mark.parametrize("kind", ["seg", "kin"])
def test_gradient_check_16_weights(kind):
    pos, col, lab = cloud(1)
    rng = np.random.default_rng(5)
    target = rng.normal(size=16)
    net = (SegNet if kind == "seg" else KinNet)(micro_config(), seed=3, dtype=np.float64)

    def loss():
        if kind == "seg":
            return seg_loss(net, pos, col, lab)
        out, _ = net.forward_normalized(pos, col)
        return 0.5 * float(((out - target) ** 2).sum()), out - target

    net.params.zero_grad()
    _, g = loss()
    net.backward(g)
    names = list(net.params)
    worst = 0.0
    for _ in range(16):
        name = names[rng.integers(len(names))]
        arr = net.params.values[name]
        i = tuple(int(rng.integers(s)) for s in arr.shape)
        analytic = net.params.grads[name][i]
        h = 1e-6 * max(1.0, abs(arr[i]))
        arr[i] += h
        lp, _ = loss()
        arr[i] -= 2 * h
        lm, _ = loss()
        arr[i] += h
        numeric = (lp - lm) / (2 * h)
        worst = max(worst, abs(analytic - numeric) / max(abs(numeric), abs(analytic), 1e-6))
    assert worst < 1e-3


def test_cross_entropy_gradient():
    rng = np.random.default_rng(0)
    s = rng.normal(size=(5, N_CLASSES))
    lab = rng.integers(0, N_CLASSES, 5)
    loss, g = cross_entropy(s, lab)
    ref = -np.mean([s[i, lab[i]] - math.log(np.exp(s[i]).sum()) for i in range(5)])
    assert loss == pytest.approx(ref, rel=1e-12)
    h = 1e-6
    for idx in [(0, 0), (3, 4), (4, 6)]:
        sp = s.copy()
        sp[idx] += h
        sm = s.copy()
        sm[idx] -= h
        assert g[idx] == pytest.approx((cross_entropy(sp, lab)[0] - cross_entropy(sm, lab)[0]) / (2 * h), rel=1e-6)


def test_shapes_and_finiteness_untrained():
    pos, col, _ = cloud(2, 200)
    cfg = micro_config(n_points=200)
    s = SegNet(cfg).forward(pos, col)
    assert s.shape == (200, N_CLASSES) and np.isfinite(s).all()
    k = KinNet(cfg).forward(pos, col)
    assert k.shape == (16,) and np.isfinite(k).all()
    with pytest.raises(ValueError):
        SegNet(cfg).forward(np.zeros((0, 3)), np.zeros((0, 3)))
    with pytest.raises(ValueError):
        KinNet(cfg).forward(np.zeros((0, 3)), np.zeros((0, 3)))


@settings(max_examples=10, deadline=None)
@given(seed=st.integers(0, 10_000))
def test_permutation_equivariance_and_invariance(seed):
    pos, col, _ = cloud(seed, 128)
    perm = np.random.default_rng(seed + 1).permutation(128)
    cfg = micro_config(n_points=128)
    seg = SegNet(cfg, seed=seed % 7)
    np.testing.assert_allclose(seg.forward(pos[perm], col[perm]), seg.forward(pos, col)[perm], atol=1e-5)
    kin = KinNet(cfg, seed=seed % 7)
    np.testing.assert_allclose(kin.forward(pos[perm], col[perm]), kin.forward(pos, col), atol=1e-5)


def test_duplicates_get_equal_scores():
    pos, col, _ = cloud(9, 40)
    seg = SegNet(micro_config(n_points=80))
    s = seg.forward(np.concatenate([pos, pos]), np.concatenate([col, col]))
    np.testing.assert_allclose(s[:40], s[40:], atol=1e-5)


def test_canonical_order_value_based():
    pos, col, _ = cloud(4, 30)
    perm = np.random.default_rng(0).permutation(30)
    a = canonical_order(pos, col)
    b = canonical_order(pos[perm], col[perm])
    np.testing.assert_array_equal(pos[a], pos[perm][b])


def test_augmentation_targets_bit_exact():
    sample, _ = generate(CarSpec(seed=2, n_points=3000))
    rng = np.random.default_rng(0)
    kin = sample.kin.to_vector()
    for _ in range(20):
        tf = sample_transform(rng, sample.positions, AugmentConfig(), 2.5)
        aug = tf.apply_kin(kin)
        # raw targets through the same transform, one joint at a time
        for j in range(4):
            np.testing.assert_array_equal(aug[4 + 3 * j:7 + 3 * j], tf.apply_xyz(kin[4 + 3 * j:7 + 3 * j][None])[0])
        assert 0.8 <= tf.scale <= 1.25 and 0 <= tf.yaw < 2 * math.pi
        assert np.all(np.abs(tf.shift) <= 0.1 * 2.5)
        assert np.all(np.abs(tf.jitter) <= 0.05 * 2.5)


def test_yaw_rotates_joints_exactly():
    pivot = np.array([0.3, -0.2, 0.5])
    theta = 0.7
    tf = AugTransform(pivot, yaw=theta)
    joints = np.array([[1.5, 0.8, 0.34], [-1.2, -0.8, 0.34]])
    got = tf.apply_xyz(joints)
    c, s = math.cos(theta), math.sin(theta)
    r = np.array([[c, -s, 0], [s, c, 0], [0, 0, 1]])
    np.testing.assert_array_equal(got, (joints - pivot) @ r.T + pivot)
    # hinges are ground-plane points and follow the same yaw
    hinge = np.array([[0.9, 0.85]])
    np.testing.assert_allclose(tf.apply_hinges(hinge), got[:1, :2] * 0 + ((np.c_[hinge, [0.5]] - pivot) @ r.T + pivot)[:, :2])


def test_disabled_augmentation_is_identity():
    pts = np.random.default_rng(3).normal(size=(50, 3))
    tf = sample_transform(np.random.default_rng(0), pts, AugmentConfig(enabled=False), 2.5)
    assert np.array_equal(tf.apply_points(pts), pts)


def tiny_sample(seed=0):
    sample, _ = generate(CarSpec(seed=seed, n_points=1500))
    return sample


def test_reproducible_loss_curve():
    data = [tiny_sample()]
    cfg = TrainConfig(epochs=3, augment=AugmentConfig(enabled=False))
    a = train_seg(data, cfg, micro_config(n_points=256))
    b = train_seg(data, cfg, micro_config(n_points=256))
    assert [h.loss for h in a.history] == [h.loss for h in b.history]
    k1 = train_kin(data, TrainConfig(epochs=2), micro_config(n_points=256))
    k2 = train_kin(data, TrainConfig(epochs=2), micro_config(n_points=256))
    assert [h.loss for h in k1.history] == [h.loss for h in k2.history]


def test_training_loss_decreases():
    data = [tiny_sample()]
    cfg = TrainConfig(epochs=30, lr=5e-3, augment=AugmentConfig(enabled=False))
    r = train_seg(data, cfg, micro_config(n_points=256))
    assert r.history[-1].loss < 0.7 * r.history[0].loss


def test_non_finite_loss_reports_epoch_and_sample():
    s = tiny_sample()
    bad = TrainSample(s.positions, s.colors, s.labels, s.kin, name="broken")
    net = SegNet(micro_config(n_points=256))
    net.params.values[list(net.params)[-1]][:] = np.nan
    with pytest.raises(TrainingError, match="epoch 0.*broken"):
        train_seg([bad], TrainConfig(epochs=1), net=net)
    with pytest.raises(ValueError):
        train_seg([], TrainConfig(epochs=1))


def test_prepare_pads_by_repetition():
    s = tiny_sample()
    p = prepare(s, len(s.positions) + 10)
    np.testing.assert_array_equal(p.positions[-10:], s.positions[:10])
    assert len(prepare(s, 100).positions) == 100


def test_weights_round_trip(tmp_path):
    for cls in (SegNet, KinNet):
        net = cls(micro_config(), seed=4)
        net.save(tmp_path / cls.kind)
        back = cls.load(tmp_path / cls.kind)
        for name in net.params:
            np.testing.assert_array_equal(back.params.values[name], net.params.values[name])
        assert (tmp_path / cls.kind / "weights.bin").stat().st_size == sum(
            v.size * 4 for v in net.params.values.values())
    with pytest.raises(ValueError):
        KinNet.load(tmp_path / "seg")


def test_infer_on_small_asset_pads():
    _, asset = generate(CarSpec(seed=1, n_points=800))
    cfg = micro_config(n_points=len(asset) + 37)
    idx, xyz, _ = network_input(asset, cfg.n_points)
    assert len(idx) == cfg.n_points
    labels = infer_labels(asset, SegNet(cfg))
    assert labels.shape == (len(asset),) and labels.dtype == np.uint8
    again = infer_labels(asset, SegNet(cfg))
    np.testing.assert_array_equal(labels, again)
    kin = infer_kinematics(asset, KinNet(cfg))
    assert isinstance(kin, KinematicParams) and kin.is_finite()


def test_missing_weights(tmp_path):
    with pytest.raises(MissingWeightsError):
        load_seg(tmp_path / "nothing")
    with pytest.raises(MissingWeightsError):
        load_kin(tmp_path / "nothing")
    _, asset = generate(CarSpec(seed=1, n_points=800))
    with pytest.raises(MissingWeightsError):
        infer_labels(asset, None)


def test_default_config_sizes():
    cfg = NetConfig()
    assert cfg.n_points == 8192
    assert cfg.sa1_centers == 512 and cfg.sa2_centers == 128
    assert len(cfg.sa1_scales) == 2 and len(cfg.sa2_scales) == 2


def test_stop_accuracy_ends_early():
    data = [tiny_sample()]
    cfg = TrainConfig(epochs=50, lr=5e-3, augment=AugmentConfig(enabled=False), stop_accuracy=0.0)
    r = train_seg(data, cfg, micro_config(n_points=256))
    assert len(r.history) == 1

