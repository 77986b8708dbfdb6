import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from carsplat.asset import (SH_C0, AssetError, EmptySubsetError, GaussianAsset, PartLabel, PlyFormatError,
                            concatenate, load_asset, load_clusters, record_dtype, save_asset, save_clusters,
                            select_labels, subset, to_point_cloud)

from conftest import random_asset


def write_raw_ply(path, rows, names=None, fmt="binary_little_endian"):
    names = names or ["x", "y", "z", "f_dc_0", "f_dc_1", "f_dc_2", "opacity",
                      "scale_0", "scale_1", "scale_2", "rot_0", "rot_1", "rot_2", "rot_3"]
    head = ["ply", f"format {fmt} 1.0", f"element vertex {len(rows)}"]
    head += [f"property float {n}" for n in names] + ["end_header"]
    data = np.asarray(rows, dtype="<f4").tobytes()
    path.write_bytes(("\n".join(head) + "\n").encode() + data)


IDENTITY_ROW = [0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 1, 0, 0, 0]


def test_one_vertex_identity(tmp_path):
    write_raw_ply(tmp_path / "a.ply", [IDENTITY_ROW])
    a = load_asset(tmp_path / "a.ply")
    assert len(a) == 1
    np.testing.assert_array_equal(a.scales[0], [1, 1, 1])
    np.testing.assert_array_equal(a.rotations[0], [1, 0, 0, 0])
    assert a.opacities[0] == 0.5
    np.testing.assert_array_equal(a.colors[0], [0.5, 0.5, 0.5])


def test_dc_to_rgb_constant(tmp_path):
    # independent: the zeroth real spherical harmonic is 1 / (2 sqrt(pi))
    assert SH_C0 == pytest.approx(1.0 / (2.0 * np.sqrt(np.pi)), abs=1e-16)
    row = list(IDENTITY_ROW)
    row[3:6] = [1.0, -1.0, 10.0]
    write_raw_ply(tmp_path / "a.ply", [row])
    c = load_asset(tmp_path / "a.ply").colors[0]
    np.testing.assert_allclose(c, [0.5 + SH_C0, 0.5 - SH_C0, 1.0], atol=1e-7)


def test_rotation_renormalized(tmp_path):
    row = list(IDENTITY_ROW)
    row[10:14] = [2, 0, 0, 0]
    write_raw_ply(tmp_path / "a.ply", [row])
    np.testing.assert_array_equal(load_asset(tmp_path / "a.ply").rotations[0], [1, 0, 0, 0])


@settings(max_examples=25, deadline=None)
@given(n=st.integers(1, 40), seed=st.integers(0, 2**31 - 1), labels=st.booleans(), clusters=st.booleans())
def test_round_trip(tmp_path_factory, n, seed, labels, clusters):
    a = random_asset(np.random.default_rng(seed), n, labels, clusters)
    path = tmp_path_factory.mktemp("rt") / "a.ply"
    save_asset(a, path)
    b = load_asset(path)
    for name in ("means", "scales", "rotations", "opacities", "colors"):
        assert np.max(np.abs(getattr(a, name) - getattr(b, name))) < 1e-6, name
    if labels:
        np.testing.assert_array_equal(a.part_labels, b.part_labels)
    else:
        assert b.part_labels is None
    if clusters:
        np.testing.assert_array_equal(a.cluster_ids, b.cluster_ids)


def test_label_column_present(tmp_path, rng):
    save_asset(random_asset(rng, 3, labels=True), tmp_path / "a.ply")
    header = (tmp_path / "a.ply").read_bytes().split(b"end_header")[0]
    assert b"property uchar part_label" in header


def test_file_size(tmp_path, rng):
    a = random_asset(rng, 10_000)
    save_asset(a, tmp_path / "a.ply")
    raw = (tmp_path / "a.ply").read_bytes()
    header_len = raw.index(b"end_header\n") + len(b"end_header\n")
    # 14 float32 attributes, nothing else
    assert record_dtype(False, False).itemsize == 14 * 4
    assert len(raw) == header_len + 10_000 * 56


def test_malformed_inputs(tmp_path):
    (tmp_path / "bad.ply").write_bytes(b"not a ply\n")
    with pytest.raises(PlyFormatError):
        load_asset(tmp_path / "bad.ply")
    write_raw_ply(tmp_path / "ascii.ply", [IDENTITY_ROW], fmt="ascii")
    with pytest.raises(PlyFormatError, match="binary_little_endian"):
        load_asset(tmp_path / "ascii.ply")
    write_raw_ply(tmp_path / "short.ply", [IDENTITY_ROW[:-1]], names=["x", "y", "z", "f_dc_0", "f_dc_1", "f_dc_2",
                                                                     "opacity", "scale_0", "scale_1", "scale_2",
                                                                     "rot_0", "rot_1", "rot_2"])
    with pytest.raises(PlyFormatError, match="rot_3"):
        load_asset(tmp_path / "short.ply")
    write_raw_ply(tmp_path / "trunc.ply", [IDENTITY_ROW, IDENTITY_ROW])
    raw = (tmp_path / "trunc.ply").read_bytes()
    (tmp_path / "trunc.ply").write_bytes(raw[:-4])
    with pytest.raises(PlyFormatError, match="bytes"):
        load_asset(tmp_path / "trunc.ply")


def test_non_finite_names_vertex(tmp_path):
    bad = list(IDENTITY_ROW)
    bad[1] = np.nan
    write_raw_ply(tmp_path / "a.ply", [IDENTITY_ROW, IDENTITY_ROW, bad])
    with pytest.raises(PlyFormatError, match="vertex 2"):
        load_asset(tmp_path / "a.ply")


def test_invariants_enforced(rng):
    a = random_asset(rng, 4)
    with pytest.raises(AssetError):
        a.replace(scales=-a.scales)
    with pytest.raises(AssetError):
        a.replace(rotations=2 * a.rotations)
    with pytest.raises(AssetError):
        a.replace(opacities=a.opacities + 1)
    with pytest.raises(AssetError):
        a.replace(part_labels=[0, 1])
    with pytest.raises(AssetError):
        a.replace(cluster_ids=[0, 1, -1, 2])
    assert not a.means.flags.writeable


def test_to_point_cloud():
    one = GaussianAsset([[0, 0, 0]], [[1, 1, 1]], [[1, 0, 0, 0]], [1.0], [[1, 0, 0]])
    pos, col = to_point_cloud(one)
    np.testing.assert_array_equal(pos, [[0, 0, 0]])
    np.testing.assert_array_equal(col, [[1, 0, 0]])


def test_to_point_cloud_order(rng):
    a = random_asset(rng, 5)
    pos, col = to_point_cloud(a)
    assert len(pos) == 5
    np.testing.assert_array_equal(pos, a.means)
    np.testing.assert_array_equal(col, a.colors)


def test_subset_examples(rng):
    a = random_asset(rng, 2).replace(part_labels=[PartLabel.Body, PartLabel.WheelFL])
    w = select_labels(a, PartLabel.WheelFL)
    assert len(w) == 1
    np.testing.assert_array_equal(w.means[0], a.means[1])

    body = random_asset(rng, 6).replace(part_labels=np.zeros(6))
    same = select_labels(body, PartLabel.Body)
    for name in ("means", "scales", "rotations", "opacities", "colors", "part_labels"):
        np.testing.assert_array_equal(getattr(same, name), getattr(body, name))

    with pytest.raises(EmptySubsetError):
        select_labels(body, PartLabel.WheelRR)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**31 - 1), n=st.integers(1, 60), cut=st.integers(0, 19))
def test_subset_partition(seed, n, cut):
    a = random_asset(np.random.default_rng(seed), n, clusters=True)
    inside = a.cluster_ids < cut
    parts = []
    for pred in (lambda c: c < cut, lambda c: c >= cut):
        try:
            parts.append(subset(a, pred, by="cluster"))
        except EmptySubsetError:
            pass
    assert sum(len(p) for p in parts) == n
    # order preserved inside each side
    np.testing.assert_array_equal(concatenate(parts).means,
                                  np.concatenate([a.means[inside], a.means[~inside]]))


def test_cluster_sidecar(tmp_path):
    save_clusters([3, 0, 7], tmp_path / "c.u32")
    assert (tmp_path / "c.u32").stat().st_size == 12
    np.testing.assert_array_equal(load_clusters(tmp_path / "c.u32", 3), [3, 0, 7])
    with pytest.raises(AssetError):
        load_clusters(tmp_path / "c.u32", 4)
