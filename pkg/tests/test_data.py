import gzip
import struct

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from cafedsim import data as dt
from cafedsim.errors import IdxFormatError, ParameterError, ShapeError


def test_synthetic_shapes_and_alpha():
    fed = dt.generate_synthetic(6, d=10, seed=0)
    assert fed.n_clients == 6 and fed.n_classes == 2 and fed.n_features == 10
    for c in fed.clients:
        assert len(c.train) == 120 and len(c.test) == 30
    assert fed.alpha.sum() == pytest.approx(1.0)
    assert np.allclose(fed.alpha, 1 / 6)


def test_synthetic_default_sample_count_is_150():
    fed = dt.generate_synthetic(2, seed=1)
    assert all(len(c.train) + len(c.test) == 150 for c in fed.clients)


def test_synthetic_reproducible():
    a = dt.generate_synthetic(5, d=4, seed=3).to_dict()
    b = dt.generate_synthetic(5, d=4, seed=3).to_dict()
    assert a == b
    assert a != dt.generate_synthetic(5, d=4, seed=4).to_dict()


def test_synthetic_zero_w_star_gives_fair_coin_labels():
    fed = dt.generate_synthetic(1, d=1, samples_per_client=20_000, seed=0, groups=[1], w_star=np.zeros(1))
    y = np.concatenate([fed.clients[0].train.labels, fed.clients[0].test.labels])
    assert y.mean() == pytest.approx(0.5, abs=0.015)


def test_synthetic_group_noise_matches_label_law():
    # Monte Carlo of the label law: with a shared w* and inputs, group-2 labels
    # agree with the Bayes label of group 1 less often, by 0.2 * E|2s - 1|.
    d, n = 3, 40_000
    fed = dt.generate_synthetic(2, d=d, samples_per_client=n, seed=5, n_train=n, groups=[1, 2])
    w = np.asarray(fed.meta["w_star"])
    rates = []
    expected = []
    for c in fed.clients:
        x, y = c.train.features, c.train.labels
        s = 1 / (1 + np.exp(-(x @ w)))
        bayes = (s > 0.5).astype(int)
        rates.append(np.mean(y != bayes))
        p1 = s if c.group_id == 1 else 0.8 * s + 0.2 * (1 - s)
        expected.append(np.mean(np.where(bayes == 1, 1 - p1, p1)))
    assert rates[0] == pytest.approx(expected[0], abs=0.01)
    assert rates[1] == pytest.approx(expected[1], abs=0.01)
    assert rates[1] > rates[0]


def test_synthetic_groups_argument():
    fed = dt.generate_synthetic(4, d=2, seed=0, groups=[2, 1, 2, 1])
    assert [c.group_id for c in fed.clients] == [2, 1, 2, 1]
    with pytest.raises(ParameterError):
        dt.generate_synthetic(2, d=2, groups=[0, 1])


def test_synthetic_rejects_bad_sizes():
    with pytest.raises(ParameterError):
        dt.generate_synthetic(2, d=0)
    with pytest.raises(ParameterError):
        dt.generate_synthetic(2, samples_per_client=10, n_train=11)


def test_federation_json_roundtrip():
    fed = dt.generate_synthetic(3, d=2, samples_per_client=5, seed=0, n_train=4)
    back = dt.FederationData.from_dict(fed.to_dict())
    assert back.to_dict() == fed.to_dict()


def test_client_dataset_validates():
    with pytest.raises(ShapeError):
        dt.ClientDataset(np.zeros((3, 2)), np.zeros(2, dtype=int))
    with pytest.raises(ShapeError):
        dt.ClientDataset(np.zeros(3), np.zeros(3, dtype=int))


def test_target_weights_must_be_probability():
    c = dt.ClientPartition(dt.ClientDataset(np.zeros((1, 1)), [0]), dt.ClientDataset(np.zeros((1, 1)), [0]))
    with pytest.raises(ParameterError):
        dt.FederationData((c, c), np.array([0.6, 0.6]), 2)


@given(st.lists(st.integers(1, 1000), min_size=1, max_size=20))
def test_size_proportional_weights(sizes):
    a = dt.size_proportional_weights(sizes)
    assert a.sum() == pytest.approx(1.0)
    assert np.allclose(a * sum(sizes), sizes)


# -- IDX / MNIST -------------------------------------------------------------


def write_idx(path, arr, magic, compress=False):
    header = struct.pack(">I", magic) + struct.pack(">" + "I" * arr.ndim, *arr.shape)
    blob = header + arr.astype(np.uint8).tobytes()
    if compress:
        blob = gzip.compress(blob)
    path.write_bytes(blob)


def fake_mnist(root, n_train=60, n_test=20, seed=0, compress=False):
    rng = np.random.default_rng(seed)
    suffix = ".gz" if compress else ""
    write_idx(root / f"train-images-idx3-ubyte{suffix}", rng.integers(0, 256, (n_train, 28, 28)), 0x803, compress)
    write_idx(root / f"train-labels-idx1-ubyte{suffix}", np.arange(n_train) % 10, 0x801, compress)
    write_idx(root / f"t10k-images-idx3-ubyte{suffix}", rng.integers(0, 256, (n_test, 28, 28)), 0x803, compress)
    write_idx(root / f"t10k-labels-idx1-ubyte{suffix}", np.arange(n_test) % 10, 0x801, compress)


def test_read_idx_header(tmp_path):
    write_idx(tmp_path / "img", np.zeros((7, 28, 28)), 0x803)
    arr = dt.read_idx(tmp_path / "img", dt.IDX_IMAGES_MAGIC)
    assert arr.shape == (7, 28, 28) and arr.dtype == np.uint8


def test_read_idx_bad_magic(tmp_path):
    write_idx(tmp_path / "lab", np.zeros(3), 0x801)
    with pytest.raises(IdxFormatError) as exc:
        dt.read_idx(tmp_path / "lab", dt.IDX_IMAGES_MAGIC)
    assert "0x00000803" in str(exc.value) and "0x00000801" in str(exc.value)
    assert exc.value.offset == 0


def test_read_idx_truncated(tmp_path):
    write_idx(tmp_path / "img", np.zeros((2, 28, 28)), 0x803)
    raw = (tmp_path / "img").read_bytes()
    (tmp_path / "img").write_bytes(raw[:-5])
    with pytest.raises(IdxFormatError) as exc:
        dt.read_idx(tmp_path / "img", dt.IDX_IMAGES_MAGIC)
    assert exc.value.offset == len(raw) - 5


@pytest.mark.parametrize("compress", [False, True])
def test_load_mnist(tmp_path, compress):
    fake_mnist(tmp_path, compress=compress)
    ds = dt.load_mnist(tmp_path)
    assert ds.train_images.shape == (60, 784) and ds.test_images.shape == (20, 784)
    assert ds.train_labels.shape[0] == ds.train_images.shape[0]
    assert 0.0 <= ds.train_images.min() and ds.train_images.max() <= 1.0


def test_swap_is_involution():
    y = np.arange(10).repeat(3)
    pairs = ((1, 7), (3, 8))
    once = dt.swap_labels(y, pairs)
    assert np.all(once[y == 1] == 7) and np.all(once[y == 7] == 1)
    assert np.all(once[y == 3] == 8) and np.all(once[y == 0] == 0)
    assert np.array_equal(dt.swap_labels(once, pairs), y)


def test_mnist_federation(tmp_path):
    fake_mnist(tmp_path, n_train=100)
    ds = dt.load_mnist(tmp_path)
    fed = dt.make_mnist_federation(ds, 8, seed=0, groups=[1, 2] * 4)
    pairs = [tuple(p) for p in fed.meta["swap_pairs"]]
    sizes = [len(c.train) + len(c.val) for c in fed.clients]
    assert max(sizes) - min(sizes) <= 1 and sum(sizes) == 100
    for c in fed.clients:
        n = len(c.train) + len(c.val)
        assert len(c.val) == int(np.floor(0.2 * n))
        assert len(c.test) == 20
    g1 = fed.clients[0]
    # group-1 shards keep the source labels: every (image, label) pair exists in the source
    for x, y in zip(g1.train.features, g1.train.labels):
        idx = np.flatnonzero(np.all(ds.train_images == x, axis=1))
        assert ds.train_labels[idx[0]] == y
    g2 = fed.clients[1]
    assert np.array_equal(g2.test.labels, dt.swap_labels(ds.test_labels, pairs))
    assert fed.alpha.sum() == pytest.approx(1.0)


def test_mnist_federation_shards_are_disjoint(tmp_path):
    fake_mnist(tmp_path, n_train=50)
    ds = dt.load_mnist(tmp_path)
    fed = dt.make_mnist_federation(ds, 5, seed=1)
    rows = np.vstack([np.vstack([c.train.features, c.val.features]) for c in fed.clients])
    assert np.unique(rows, axis=0).shape[0] == 50


def test_mnist_federation_rejects_too_many_clients(tmp_path):
    fake_mnist(tmp_path, n_train=10)
    with pytest.raises(ParameterError):
        dt.make_mnist_federation(dt.load_mnist(tmp_path), 11)
