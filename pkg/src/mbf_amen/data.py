"""Datasets: synthetic generation, manifest loading, resizing and splitting"""
import multiprocessing
from pathlib import Path

import numpy as np
import pandas as pd

from .exceptions import ArgumentError, ShapeError
from .images import bilinear_resize, read_image, write_image
from .layers import one_hot
from .util import worker_count

MANIFEST_NAME = "manifest.csv"
SPLIT_TAGS = (None, "train", "eval")


class Dataset:
    """Images ``[N, C, H, W]`` in [0, 1] with integer labels and unique ids.

    ``split`` is None for a full dataset, 'train' or 'eval' after :func:`split`.
    """

    def __init__(self, images, labels, ids, num_classes=None, split=None):
        images = np.asarray(images)
        if not np.issubdtype(images.dtype, np.floating):
            images = images.astype(np.float64)
        self.images = images
        self.labels = np.asarray(labels, dtype=np.int64).reshape(-1)
        self.ids = [str(x) for x in ids]
        if num_classes is None:
            num_classes = max(2, int(self.labels.max()) + 1 if len(self.labels) else 2)
        self.num_classes = int(num_classes)
        self.split = split

    def __len__(self):
        return len(self.labels)

    def __repr__(self):
        return "Dataset(n=%i, image_shape=%s, classes=%i, split=%s)" % (
            len(self),
            self.image_shape,
            self.num_classes,
            self.split,
        )

    @property
    def image_shape(self):
        return tuple(self.images.shape[1:])

    @property
    def onehot(self):
        """Labels as ``[N, M]`` one-hot rows"""
        return one_hot(self.labels, self.num_classes)

    def class_counts(self):
        return np.bincount(self.labels, minlength=self.num_classes)

    def subset(self, indices, split=None):
        indices = np.asarray(indices, dtype=np.int64)
        return Dataset(
            self.images[indices],
            self.labels[indices],
            [self.ids[i] for i in indices],
            self.num_classes,
            split if split is not None else self.split,
        )

    def with_images(self, images):
        """Same labels and ids, new pixel data (e.g. enhanced images)"""
        images = np.asarray(images)
        if images.shape[0] != len(self):
            raise ShapeError("image count changed", images.shape, self.images.shape)
        return Dataset(images, self.labels, self.ids, self.num_classes, self.split)


def validate_dataset(dataset, check_range=True):
    """Raise if a Dataset breaks one of its invariants; returns it otherwise"""
    n = len(dataset.labels)
    if dataset.images.ndim != 4:
        raise ShapeError("dataset images must be [N, C, H, W]", dataset.images.shape)
    if dataset.images.shape[0] != n or len(dataset.ids) != n:
        raise ShapeError(
            "image, label and id counts differ",
            (dataset.images.shape[0],),
            (n,),
            (len(dataset.ids),),
        )
    if len(set(dataset.ids)) != n:
        raise ArgumentError("image ids are not unique")
    if n and (dataset.labels.min() < 0 or dataset.labels.max() >= dataset.num_classes):
        raise ArgumentError(f"labels outside [0, {dataset.num_classes})")
    if check_range and dataset.images.size:
        if dataset.images.min() < 0 or dataset.images.max() > 1:
            raise ArgumentError("pixel values outside [0, 1]")
    if not np.all(np.isfinite(dataset.images)):
        raise ArgumentError("non-finite pixel values")
    if dataset.split not in SPLIT_TAGS:
        raise ArgumentError(f"unknown split tag '{dataset.split}'")
    return dataset


def _detail_patterns(detail_size):
    diagonal = np.eye(detail_size, dtype=bool)
    return {0: diagonal, 1: diagonal[:, ::-1]}


def gen_synthetic(n, image_size=32, detail_size=5, noise=0.05, seed=0):
    """Two-class grayscale images told apart only by a small local pattern.

    Background is 0.25 plus uniform noise in [-noise, noise]. Class 0 carries
    a diagonal stripe of 0.75 valued pixels, class 1 the anti-diagonal, each
    ``detail_size`` wide at a random position. Labels are balanced.
    """
    if n < 0:
        raise ArgumentError(f"n must be >= 0, got {n}")
    if detail_size < 2 or not detail_size < image_size / 4:
        raise ArgumentError(
            f"detail_size must be in [2, image_size / 4), got {detail_size} for {image_size}"
        )
    if noise < 0:
        raise ArgumentError(f"noise must be >= 0, got {noise}")
    rng = np.random.default_rng(seed)
    labels = rng.permutation(np.arange(n) % 2)
    patterns = _detail_patterns(detail_size)
    images = np.full((n, 1, image_size, image_size), 0.25)
    for i in range(n):
        top, left = rng.integers(0, image_size - detail_size + 1, size=2)
        patch = images[i, 0, top : top + detail_size, left : left + detail_size]
        patch[patterns[labels[i]]] = 0.75
        if noise > 0:
            images[i, 0] += rng.uniform(-noise, noise, size=(image_size, image_size))
    np.clip(images, 0, 1, out=images)
    ids = ["syn_%05i" % i for i in range(n)]
    return Dataset(images, labels, ids, num_classes=2)


def _parse_label(value, row):
    try:
        label = int(str(value).strip())
    except ValueError:
        raise ArgumentError(f"manifest row {row}: label '{value}' is not a class index")
    if label < 0:
        raise ArgumentError(f"manifest row {row}: negative label {label}")
    return label


def _image_ids(relative_paths):
    """File-name-safe ids in manifest order.

    The id is the path without suffix, ``/`` replaced by ``_``. Later rows
    whose id is already taken get ``_2``, ``_3``, ... appended.
    """
    bases = [Path(p).with_suffix("").as_posix().replace("/", "_") for p in relative_paths]
    taken = set(bases)
    seen = set()
    ids = []
    for base in bases:
        image_id = base
        if image_id in seen:
            k = 2
            while f"{base}_{k}" in taken:
                k += 1
            image_id = f"{base}_{k}"
            taken.add(image_id)
        seen.add(image_id)
        ids.append(image_id)
    return ids


def load_image_dir(root, manifest=None, image_size=None, num_classes=None):
    """Read ``manifest.csv`` (header ``path,label``) below ``root``.

    Paths are relative to ``root``; the Dataset keeps manifest order. With
    ``image_size`` every image is resized to ``image_size x image_size``.
    """
    root = Path(root)
    manifest = Path(manifest) if manifest is not None else root / MANIFEST_NAME
    if not manifest.exists():
        raise FileNotFoundError(f"manifest not found: {manifest}")
    df = pd.read_csv(manifest, dtype=str, keep_default_na=False)
    missing = {"path", "label"} - set(df.columns)
    if missing:
        raise ArgumentError(f"{manifest} lacks column(s) {sorted(missing)}")
    labels = [_parse_label(v, ii + 1) for ii, v in enumerate(df["label"])]
    if num_classes is not None and labels and max(labels) >= num_classes:
        raise ArgumentError(f"label {max(labels)} outside [0, {num_classes})")
    paths = [root / p for p in df["path"]]
    for p in paths:
        if not p.exists():
            raise FileNotFoundError(f"image not found: {p}")
    if not paths:
        side = image_size or 1
        return Dataset(np.zeros((0, 1, side, side)), [], [], num_classes or 2)
    workers = min(worker_count(), len(paths))
    if workers > 1:
        with multiprocessing.Pool(workers) as pool:
            decoded = pool.map(read_image, paths)
    else:
        decoded = [read_image(p) for p in paths]
    if image_size is not None:
        decoded = [resize(x, image_size) for x in decoded]
    shapes = sorted({x.shape for x in decoded})
    if len(shapes) > 1:
        raise ShapeError("images in the manifest differ in shape; pass an image size", *shapes)
    ids = _image_ids(df["path"])
    dataset = Dataset(np.stack(decoded), labels, ids, num_classes)
    return validate_dataset(dataset)


def save_dataset(dataset, root):
    """Write one image per sample (``<id>.pgm`` or ``<id>.png``) plus manifest.csv"""
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    suffix = ".pgm" if dataset.image_shape[0] == 1 else ".png"
    rows = []
    for image, label, image_id in zip(dataset.images, dataset.labels, dataset.ids):
        name = image_id + suffix
        write_image(root / name, image)
        rows.append({"path": name, "label": int(label)})
    pd.DataFrame(rows, columns=["path", "label"]).to_csv(root / MANIFEST_NAME, index=False)
    return root / MANIFEST_NAME


def resize(image, target):
    """Bilinear resampling of ``[C, H, W]`` (or a batch) to ``target x target``"""
    if target < 1:
        raise ArgumentError(f"target extent must be >= 1, got {target}")
    return bilinear_resize(image, target, target)


def resize_dataset(dataset, target):
    if dataset.image_shape[-2:] == (target, target):
        return dataset
    return dataset.with_images(resize(dataset.images, target))


def split(dataset, eval_fraction, seed):
    """Stratified split into (train, eval); per class round(n * fraction) go to eval.

    Every class keeps at least one sample on each side.
    """
    if not 0 < eval_fraction < 1:
        raise ArgumentError(f"eval_fraction must be in (0, 1), got {eval_fraction}")
    rng = np.random.default_rng(seed)
    eval_idx = []
    for cls in range(dataset.num_classes):
        members = np.flatnonzero(dataset.labels == cls)
        if len(members) == 0:
            continue
        if len(members) < 2:
            raise ArgumentError(f"class {cls} has fewer than 2 samples, cannot split")
        n_eval = int(np.floor(len(members) * eval_fraction + 0.5))
        n_eval = min(max(n_eval, 1), len(members) - 1)
        eval_idx.extend(rng.permutation(members)[:n_eval])
    eval_idx = np.sort(np.asarray(eval_idx, dtype=np.int64))
    train_idx = np.setdiff1d(np.arange(len(dataset)), eval_idx)
    return dataset.subset(train_idx, "train"), dataset.subset(eval_idx, "eval")
