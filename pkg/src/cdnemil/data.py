"""Bags, datasets, the synthetic bag-prior generator, disk I/O and k-fold splits.

On-disk layout (all little-endian):

``manifest.json``
    ``{"feature_dim": D, "num_classes": C, "negative_class": c0,
    "bags": [{"id": str, "label": int, "features": relpath,
    "coords": relpath (optional)}]}``
feature file
    two uint32 ``(K, D)`` followed by ``K*D`` float32 values, row-major.
    Values are widened to float64 on load.
coords file
    ``K`` rows of two int32 ``(x, y)``, no header.
"""
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DatasetIOError, SchemaError, ValidationError

_FEATURE_HEADER = np.dtype("<u4")
_FEATURE_VALUE = np.dtype("<f4")
_COORD_VALUE = np.dtype("<i4")


@dataclass(eq=False)
class Bag:
    """One slide: a K x D instance matrix with a single bag label.

    Instance labels are implicit. Every instance of a negative-class bag is
    negative; instances of other bags are unlabeled.
    """

    id: str
    label: int
    instances: np.ndarray
    coords: np.ndarray | None = None

    def __post_init__(self):
        self.instances = np.asarray(self.instances, dtype=np.float64)
        if self.instances.ndim != 2 or self.instances.shape[0] < 1:
            raise ValidationError(f"bag {self.id!r}: instances must be K x D with K >= 1")
        if self.coords is not None:
            self.coords = np.asarray(self.coords, dtype=np.int64)
            if self.coords.shape != (self.instances.shape[0], 2):
                raise ValidationError(
                    f"bag {self.id!r}: coords shape {self.coords.shape}, "
                    f"expected ({self.instances.shape[0]}, 2)")
        self.label = int(self.label)

    @property
    def num_instances(self):
        return self.instances.shape[0]

    @property
    def feature_dim(self):
        return self.instances.shape[1]


@dataclass(eq=False)
class Dataset:
    bags: list
    feature_dim: int
    num_classes: int
    negative_class: int = 0

    def __post_init__(self):
        if self.num_classes < 2:
            raise ValidationError("num_classes must be >= 2")
        if not 0 <= self.negative_class < self.num_classes:
            raise ValidationError("negative_class outside [0, num_classes)")
        for bag in self.bags:
            if bag.feature_dim != self.feature_dim:
                raise SchemaError(
                    f"bag {bag.id!r}: feature dim {bag.feature_dim} != {self.feature_dim}")
            if not 0 <= bag.label < self.num_classes:
                raise SchemaError(f"bag {bag.id!r}: label {bag.label} outside [0, {self.num_classes})")

    def __len__(self):
        return len(self.bags)

    def __iter__(self):
        return iter(self.bags)

    def __getitem__(self, i):
        return self.bags[i]

    @property
    def labels(self):
        return np.array([b.label for b in self.bags], dtype=np.int64)

    def subset(self, indices):
        return Dataset([self.bags[i] for i in indices], self.feature_dim,
                       self.num_classes, self.negative_class)

    def class_counts(self):
        return np.bincount(self.labels, minlength=self.num_classes)


# ---------------------------------------------------------------------------
# synthetic benchmark

@dataclass
class SyntheticSpec:
    """Parameters of the synthetic bag-prior benchmark.

    ``bag_prior_sigma`` is the std of a Gaussian offset shared by every
    instance of a bag and independent of the label. Positive bags replace a
    ``positive_instance_ratio`` share of their instances (at least one) with
    instances shifted by ``class_separation`` along a fixed unit direction.
    The direction depends only on ``direction_seed``, so train and test sets
    drawn with different ``seed`` values share it.
    """

    num_bags_per_class: int = 20
    k_min: int = 8
    k_max: int = 32
    feature_dim: int = 16
    positive_instance_ratio: float = 0.2
    class_separation: float = 3.0
    bag_prior_sigma: float = 1.0
    noise_sigma: float = 1.0
    num_classes: int = 2
    negative_class: int = 0
    seed: int = 0
    direction_seed: int = 0
    with_coords: bool = True

    def validate(self):
        if not 0.0 < self.positive_instance_ratio <= 1.0:
            raise ValidationError("positive_instance_ratio must lie in (0, 1]")
        if self.bag_prior_sigma < 0 or self.noise_sigma < 0:
            raise ValidationError("sigmas must be >= 0")
        if self.k_min < 2:
            raise ValidationError("k_min must be >= 2")
        if self.k_max < self.k_min:
            raise ValidationError("k_max must be >= k_min")
        if self.num_bags_per_class < 1:
            raise ValidationError("num_bags_per_class must be >= 1")
        if self.feature_dim < 1:
            raise ValidationError("feature_dim must be >= 1")
        if self.num_classes < 2:
            raise ValidationError("num_classes must be >= 2")
        if not 0 <= self.negative_class < self.num_classes:
            raise ValidationError("negative_class outside [0, num_classes)")

    @classmethod
    def from_dict(cls, d):
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ValidationError(f"unknown synthetic spec keys: {sorted(unknown)}")
        return cls(**d)


def _f32(a):
    # store exactly what the float32 file format can hold
    return np.asarray(a, dtype=np.float32).astype(np.float64)


def generate_synthetic(spec, return_instance_labels=False):
    """Draw a dataset from ``spec``; identical seeds give identical datasets.

    Feature values are rounded to float32 so that writing and reloading is
    exact. With ``return_instance_labels`` also returns a list of 0/1 arrays
    marking the shifted instances of each bag.
    """
    spec.validate()
    d = spec.feature_dim
    dir_rng = np.random.default_rng(spec.direction_seed)
    directions = {}
    for c in range(spec.num_classes):
        if c == spec.negative_class:
            continue
        u = dir_rng.standard_normal(d)
        directions[c] = u / np.linalg.norm(u)
    rng = np.random.default_rng(spec.seed)

    bags, inst_labels = [], []
    for c in range(spec.num_classes):
        for b in range(spec.num_bags_per_class):
            k = int(rng.integers(spec.k_min, spec.k_max + 1))
            offset = rng.standard_normal(d) * spec.bag_prior_sigma
            x = rng.standard_normal((k, d)) * spec.noise_sigma + offset
            lab = np.zeros(k, dtype=np.int64)
            if c != spec.negative_class:
                n_pos = max(1, int(math.ceil(spec.positive_instance_ratio * k - 1e-9)))
                n_pos = min(n_pos, k)
                start = int(rng.integers(0, k - n_pos + 1))
                idx = np.arange(start, start + n_pos)
                x[idx] += spec.class_separation * directions[c]
                lab[idx] = 1
            coords = None
            if spec.with_coords:
                width = int(math.ceil(math.sqrt(k)))
                kk = np.arange(k)
                coords = np.stack([kk % width, kk // width], axis=1)
            bags.append(Bag(f"bag{len(bags):04d}", c, _f32(x), coords))
            inst_labels.append(lab)
    ds = Dataset(bags, d, spec.num_classes, spec.negative_class)
    if return_instance_labels:
        return ds, inst_labels
    return ds


# ---------------------------------------------------------------------------
# disk format

def write_features(path, instances):
    instances = np.asarray(instances)
    k, d = instances.shape
    with open(path, "wb") as fh:
        fh.write(np.array([k, d], dtype=_FEATURE_HEADER).tobytes())
        fh.write(np.ascontiguousarray(instances, dtype=_FEATURE_VALUE).tobytes())


def read_features(path, bag_id="?"):
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise DatasetIOError(bag_id, f"cannot read feature file {path}: {exc.strerror}") from exc
    if len(raw) < 8:
        raise DatasetIOError(bag_id, f"feature file {path} truncated (no header)")
    k, d = (int(v) for v in np.frombuffer(raw[:8], dtype=_FEATURE_HEADER))
    expected = 8 + k * d * 4
    if len(raw) != expected:
        raise DatasetIOError(bag_id, f"feature file {path} has {len(raw)} bytes, expected {expected}")
    values = np.frombuffer(raw[8:], dtype=_FEATURE_VALUE).astype(np.float64)
    return values.reshape(k, d)


def write_coords(path, coords):
    with open(path, "wb") as fh:
        fh.write(np.ascontiguousarray(coords, dtype=_COORD_VALUE).tobytes())


def read_coords(path, k, bag_id="?"):
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise DatasetIOError(bag_id, f"cannot read coords file {path}: {exc.strerror}") from exc
    if len(raw) != k * 8:
        raise DatasetIOError(bag_id, f"coords file {path} has {len(raw)} bytes, expected {k * 8}")
    return np.frombuffer(raw, dtype=_COORD_VALUE).astype(np.int64).reshape(k, 2)


def write_dataset(dataset, out_dir):
    """Write ``dataset`` as a manifest plus one binary file per bag."""
    out = Path(out_dir)
    (out / "features").mkdir(parents=True, exist_ok=True)
    entries = []
    for bag in dataset.bags:
        rel = f"features/{bag.id}.bin"
        write_features(out / rel, bag.instances)
        entry = {"id": bag.id, "label": bag.label, "features": rel}
        if bag.coords is not None:
            crel = f"features/{bag.id}.coords.bin"
            write_coords(out / crel, bag.coords)
            entry["coords"] = crel
        entries.append(entry)
    manifest = {
        "feature_dim": dataset.feature_dim,
        "num_classes": dataset.num_classes,
        "negative_class": dataset.negative_class,
        "bags": entries,
    }
    path = out / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2) + "\n", encoding="utf-8")
    return path


_BAG_KEYS = {"id", "label", "features", "coords"}


def load_dataset(manifest_path):
    manifest_path = Path(manifest_path)
    try:
        manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise SchemaError(f"{manifest_path}: invalid JSON ({exc})") from exc
    for key in ("feature_dim", "num_classes", "bags"):
        if key not in manifest:
            raise SchemaError(f"{manifest_path}: missing key {key!r}")
    dim = int(manifest["feature_dim"])
    num_classes = int(manifest["num_classes"])
    negative = int(manifest.get("negative_class", 0))
    root = manifest_path.parent

    bags = []
    for entry in manifest["bags"]:
        missing = {"id", "label", "features"} - set(entry)
        if missing:
            raise SchemaError(f"bag entry missing {sorted(missing)}")
        extra = set(entry) - _BAG_KEYS
        if extra:
            raise SchemaError(f"bag {entry['id']!r}: unknown keys {sorted(extra)}")
        bag_id = str(entry["id"])
        label = int(entry["label"])
        if not 0 <= label < num_classes:
            raise SchemaError(f"bag {bag_id!r}: label {label} outside [0, {num_classes})")
        x = read_features(root / entry["features"], bag_id)
        if x.shape[1] != dim:
            raise SchemaError(f"bag {bag_id!r}: feature dim {x.shape[1]} != {dim}")
        coords = None
        if entry.get("coords"):
            coords = read_coords(root / entry["coords"], x.shape[0], bag_id)
        bags.append(Bag(bag_id, label, x, coords))
    return Dataset(bags, dim, num_classes, negative)


def datasets_equal(a, b):
    """Exact equality of two datasets, including coordinates."""
    if (a.feature_dim, a.num_classes, a.negative_class, len(a)) != \
            (b.feature_dim, b.num_classes, b.negative_class, len(b)):
        return False
    for x, y in zip(a.bags, b.bags):
        if x.id != y.id or x.label != y.label:
            return False
        if not np.array_equal(x.instances, y.instances):
            return False
        if (x.coords is None) != (y.coords is None):
            return False
        if x.coords is not None and not np.array_equal(x.coords, y.coords):
            return False
    return True


# ---------------------------------------------------------------------------
# splits

def kfold_split(dataset, folds, seed):
    """Stratified k-fold split.

    Within each class, bags are ordered by id, shuffled with ``seed`` and
    dealt round-robin into folds, so the result depends on ids rather than on
    the order of ``dataset.bags``. Returns ``[(train_idx, val_idx), ...]``
    with sorted index arrays.
    """
    if folds < 2:
        raise ValidationError("folds must be >= 2")
    labels = dataset.labels
    ids = [b.id for b in dataset.bags]
    rng = np.random.default_rng(seed)
    assignment = np.empty(len(dataset), dtype=np.int64)
    for c in range(dataset.num_classes):
        members = [i for i in range(len(dataset)) if labels[i] == c]
        if len(members) < folds:
            raise ValidationError(f"class {c} has {len(members)} bags, fewer than {folds} folds")
        members.sort(key=lambda i: ids[i])
        perm = rng.permutation(len(members))
        for pos, j in enumerate(perm):
            assignment[members[j]] = pos % folds
    splits = []
    for f in range(folds):
        val = np.flatnonzero(assignment == f)
        train = np.flatnonzero(assignment != f)
        splits.append((train, val))
    return splits
