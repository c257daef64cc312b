"""Federated datasets: the synthetic logistic benchmark and label-swapped MNIST."""

from __future__ import annotations

import gzip
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import DataError, IdxFormatError, ParameterError, ShapeError

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


@dataclass(frozen=True, eq=False)
class ClientDataset:
    features: np.ndarray
    labels: np.ndarray
    group_id: int = 1

    def __post_init__(self):
        x = np.asarray(self.features, dtype=float)
        y = np.asarray(self.labels, dtype=np.int64)
        if x.ndim != 2:
            raise ShapeError("features must be a 2-D array")
        if y.shape != (x.shape[0],):
            raise ShapeError(f"{y.shape[0] if y.ndim else 0} labels for {x.shape[0]} samples")
        if y.size and y.min() < 0:
            raise ShapeError("labels must be non-negative")
        object.__setattr__(self, "features", x)
        object.__setattr__(self, "labels", y)

    def __len__(self) -> int:
        return self.labels.shape[0]

    @property
    def n_features(self) -> int:
        return self.features.shape[1]

    def subset(self, idx) -> "ClientDataset":
        return ClientDataset(self.features[idx], self.labels[idx], self.group_id)

    def to_dict(self) -> dict:
        return {
            "features": self.features.tolist(),
            "labels": self.labels.tolist(),
            "group_id": self.group_id,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ClientDataset":
        x = np.asarray(d["features"], dtype=float)
        if x.size == 0:
            x = x.reshape(0, 0)
        return cls(x, np.asarray(d["labels"], dtype=np.int64), int(d["group_id"]))


@dataclass(frozen=True, eq=False)
class ClientPartition:
    """Train / test (and optional validation) data of one client."""

    train: ClientDataset
    test: ClientDataset
    val: ClientDataset | None = None

    @property
    def group_id(self) -> int:
        return self.train.group_id

    def to_dict(self) -> dict:
        d = {"train": self.train.to_dict(), "test": self.test.to_dict()}
        if self.val is not None:
            d["val"] = self.val.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ClientPartition":
        val = ClientDataset.from_dict(d["val"]) if "val" in d else None
        return cls(ClientDataset.from_dict(d["train"]), ClientDataset.from_dict(d["test"]), val)


@dataclass(frozen=True, eq=False)
class FederationData:
    clients: tuple[ClientPartition, ...]
    target_weights: np.ndarray
    n_classes: int
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        a = np.asarray(self.target_weights, dtype=float)
        if a.shape != (len(self.clients),):
            raise ShapeError("one target weight per client required")
        if np.any(a < 0) or not np.isclose(a.sum(), 1.0, rtol=0, atol=1e-12):
            raise ParameterError("target weights must be non-negative and sum to 1")
        object.__setattr__(self, "target_weights", a)
        object.__setattr__(self, "clients", tuple(self.clients))

    @property
    def n_clients(self) -> int:
        return len(self.clients)

    @property
    def alpha(self) -> np.ndarray:
        return self.target_weights

    @property
    def n_features(self) -> int:
        return self.clients[0].train.n_features

    def train_sets(self) -> list[ClientDataset]:
        return [c.train for c in self.clients]

    def test_sets(self) -> list[ClientDataset]:
        return [c.test for c in self.clients]

    def to_dict(self) -> dict:
        return {
            "n_classes": self.n_classes,
            "target_weights": self.target_weights.tolist(),
            "meta": dict(self.meta),
            "clients": [c.to_dict() for c in self.clients],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "FederationData":
        return cls(
            tuple(ClientPartition.from_dict(c) for c in d["clients"]),
            np.asarray(d["target_weights"], dtype=float),
            int(d["n_classes"]),
            dict(d.get("meta", {})),
        )


def size_proportional_weights(sizes: Sequence[int]) -> np.ndarray:
    sizes = np.asarray(sizes, dtype=float)
    if sizes.sum() <= 0:
        raise DataError("all clients are empty")
    return sizes / sizes.sum()


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def generate_synthetic(
    n_clients: int,
    d: int = 10,
    samples_per_client: int = 150,
    seed: int = 0,
    *,
    n_train: int | None = None,
    groups: Sequence[int] | None = None,
    w_star: np.ndarray | None = None,
) -> FederationData:
    """Binary logistic federation with label noise on half of the clients.

    Group membership is Bernoulli(1/2) per client unless ``groups`` (values in
    {1, 2}) is given.  Group-1 labels follow Bernoulli(sigmoid(<w*, x>));
    group-2 labels follow Bernoulli(0.8 s + 0.2 (1 - s)).  ``n_train`` samples
    per client go to training (default 80%), the rest to testing.  ``w_star``
    overrides the sampled ground-truth parameter.
    """
    if d < 1 or samples_per_client < 1 or n_clients < 1:
        raise ParameterError("n_clients, d and samples_per_client must be positive")
    if n_train is None:
        n_train = int(round(0.8 * samples_per_client))
    if not 0 < n_train <= samples_per_client:
        raise ParameterError("n_train must lie in (0, samples_per_client]")
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x5D17]))

    group_draw = rng.random(n_clients) < 0.5
    if groups is None:
        group_ids = np.where(group_draw, 2, 1)
    else:
        group_ids = np.asarray(groups, dtype=np.int64)
        if group_ids.shape != (n_clients,) or not np.isin(group_ids, (1, 2)).all():
            raise ParameterError("groups must hold one value in {1, 2} per client")
    drawn_w = rng.standard_normal(d)
    w = drawn_w if w_star is None else np.asarray(w_star, dtype=float).reshape(d)

    clients = []
    for k in range(n_clients):
        x = rng.standard_normal((samples_per_client, d))
        s = _sigmoid(x @ w)
        prob = s if group_ids[k] == 1 else 0.8 * s + 0.2 * (1.0 - s)
        y = (rng.random(samples_per_client) < prob).astype(np.int64)
        full = ClientDataset(x, y, int(group_ids[k]))
        clients.append(
            ClientPartition(
                train=full.subset(slice(0, n_train)),
                test=full.subset(slice(n_train, samples_per_client)),
            )
        )
    alpha = size_proportional_weights([len(c.train) for c in clients])
    meta = {"source": "synthetic", "d": d, "seed": seed, "w_star": w.tolist()}
    return FederationData(tuple(clients), alpha, 2, meta)


# ---------------------------------------------------------------------------
# MNIST / IDX


def _open(path: Path):
    with open(path, "rb") as fh:
        head = fh.read(2)
    return gzip.open(path, "rb") if head == b"\x1f\x8b" else open(path, "rb")


def read_idx(path, expected_magic: int) -> np.ndarray:
    """Parse an IDX ubyte file (optionally gzipped) into a uint8 array."""
    path = Path(path)
    with _open(path) as fh:
        raw = fh.read()
    if len(raw) < 4:
        raise IdxFormatError("file shorter than the 4-byte magic number", len(raw))
    (magic,) = struct.unpack(">I", raw[:4])
    if magic != expected_magic:
        raise IdxFormatError(
            f"{path.name}: bad magic number, expected 0x{expected_magic:08X}, found 0x{magic:08X}", 0
        )
    ndim = magic & 0xFF
    header = 4 + 4 * ndim
    if len(raw) < header:
        raise IdxFormatError(f"{path.name}: truncated dimension header", len(raw))
    dims = struct.unpack(">" + "I" * ndim, raw[4:header])
    count = int(np.prod(dims, dtype=np.int64))
    if len(raw) < header + count:
        raise IdxFormatError(
            f"{path.name}: truncated payload, expected {count} bytes, found {len(raw) - header}",
            len(raw),
        )
    return np.frombuffer(raw, dtype=np.uint8, count=count, offset=header).reshape(dims)


@dataclass(frozen=True, eq=False)
class MnistData:
    train_images: np.ndarray  # (n, 784) float in [0, 1]
    train_labels: np.ndarray
    test_images: np.ndarray
    test_labels: np.ndarray


_MNIST_FILES = {
    "train_images": "train-images-idx3-ubyte",
    "train_labels": "train-labels-idx1-ubyte",
    "test_images": "t10k-images-idx3-ubyte",
    "test_labels": "t10k-labels-idx1-ubyte",
}


def _find(root: Path, stem: str) -> Path:
    for name in (stem, stem + ".gz", stem.replace("-idx", ".idx")):
        if (root / name).exists():
            return root / name
    raise FileNotFoundError(f"{stem}[.gz] not found in {root}")


def load_mnist(path) -> MnistData:
    """Load the four canonical MNIST IDX files from a directory."""
    root = Path(path)
    arrays = {}
    for key, stem in _MNIST_FILES.items():
        magic = IDX_IMAGES_MAGIC if key.endswith("images") else IDX_LABELS_MAGIC
        arrays[key] = read_idx(_find(root, stem), magic)
    out = {}
    for split in ("train", "test"):
        img, lab = arrays[f"{split}_images"], arrays[f"{split}_labels"]
        if img.shape[0] != lab.shape[0]:
            raise IdxFormatError(f"{split}: {img.shape[0]} images but {lab.shape[0]} labels", 4)
        out[f"{split}_images"] = img.reshape(img.shape[0], -1).astype(float) / 255.0
        out[f"{split}_labels"] = lab.astype(np.int64)
    return MnistData(**out)


def swap_labels(labels: np.ndarray, pairs) -> np.ndarray:
    """Exchange each pair (a, b) of class labels; an involution."""
    out = labels.copy()
    for a, b in pairs:
        out[labels == a] = b
        out[labels == b] = a
    return out


def make_mnist_federation(
    dataset: MnistData,
    n_clients: int,
    seed: int = 0,
    *,
    groups: Sequence[int] | None = None,
    val_fraction: float = 0.2,
) -> FederationData:
    """Disjoint random shards; group-2 clients see two swapped label pairs.

    Every client evaluates on the shared test images; group-2 clients use the
    swapped test labels so each client is scored on its own distribution.
    """
    n = dataset.train_labels.shape[0]
    if n_clients < 2:
        raise ParameterError("need at least two clients")
    if n_clients > n:
        raise ParameterError(f"{n_clients} clients exceed {n} training samples")
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x3157]))
    if groups is None:
        group_ids = np.array([1 + (k >= (n_clients + 1) // 2) for k in range(n_clients)])
        group_ids = rng.permutation(group_ids)
    else:
        group_ids = np.asarray(groups, dtype=np.int64)
        if group_ids.shape != (n_clients,):
            raise ParameterError("one group id per client required")
    classes = rng.choice(10, size=4, replace=False)
    pairs = ((int(classes[0]), int(classes[1])), (int(classes[2]), int(classes[3])))

    shards = np.array_split(rng.permutation(n), n_clients)
    test_swapped = swap_labels(dataset.test_labels, pairs)
    clients = []
    for k, idx in enumerate(shards):
        gid = int(group_ids[k])
        y = dataset.train_labels[idx]
        if gid == 2:
            y = swap_labels(y, pairs)
        n_val = int(np.floor(val_fraction * idx.size))
        x = dataset.train_images[idx]
        test_y = test_swapped if gid == 2 else dataset.test_labels
        clients.append(
            ClientPartition(
                train=ClientDataset(x[n_val:], y[n_val:], gid),
                test=ClientDataset(dataset.test_images, test_y, gid),
                val=ClientDataset(x[:n_val], y[:n_val], gid),
            )
        )
    alpha = size_proportional_weights([len(c.train) for c in clients])
    meta = {"source": "mnist", "seed": seed, "swap_pairs": [list(p) for p in pairs]}
    return FederationData(tuple(clients), alpha, 10, meta)
