"""Datasets: IDX (MNIST-format) ingestion, synthetic generators and CSV storage."""

from __future__ import annotations

import csv
import io
import struct
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .distributions import StaircaseDistribution
from .errors import DataError, FormatError
from .fsutil import atomic_write_bytes

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801
SYNTHETIC_KINDS = ("blobs", "staircase_sample", "rings")


@dataclass
class Dataset:
    features: np.ndarray
    labels: np.ndarray
    declared_bounds: Optional[tuple] = None
    name: str = ""

    def __post_init__(self):
        X = np.asarray(self.features, dtype=np.float64)
        if X.ndim == 1:
            X = X.reshape(-1, 1)
        y = np.asarray(self.labels)
        if y.size and not np.all(np.equal(np.mod(y, 1), 0)):
            raise DataError("labels must be integers")
        y = y.astype(np.int64).ravel()
        if X.ndim != 2 or len(X) == 0:
            raise DataError("a dataset needs at least one example")
        if len(X) != len(y):
            raise DataError(f"{len(X)} feature rows but {len(y)} labels")
        if self.declared_bounds is not None:
            lo, hi = (np.broadcast_to(np.asarray(b, dtype=np.float64), (X.shape[1],)).copy()
                      for b in self.declared_bounds)
            if np.any(lo > hi):
                raise DataError("declared bounds have lo > hi")
            if np.any(X < lo) or np.any(X > hi):
                raise DataError("features fall outside the declared bounds")
            self.declared_bounds = (lo, hi)
        self.features, self.labels = X, y

    def __len__(self):
        return len(self.labels)

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def subset(self, idx, name=None) -> "Dataset":
        return Dataset(self.features[idx], self.labels[idx], self.declared_bounds, name or self.name)


# ----------------------------------------------------------------------------
# IDX


def _read_header(buf, magic, n_dims, what):
    need = 4 + 4 * n_dims
    if len(buf) < 4:
        raise FormatError(f"{what} file too short for its magic number", offset=len(buf))
    found = struct.unpack(">I", buf[:4])[0]
    if found != magic:
        raise FormatError(f"{what} magic 0x{found:08x} != expected 0x{magic:08x}", offset=0)
    if len(buf) < need:
        raise FormatError(f"{what} header truncated", offset=len(buf))
    return struct.unpack(">" + "I" * n_dims, buf[4:need]), need


def parse_idx(image_bytes: bytes, label_bytes: bytes, limit=None, class_filter=None, name="idx") -> Dataset:
    (n_img, rows, cols), img_off = _read_header(image_bytes, IDX_IMAGES_MAGIC, 3, "images")
    (n_lab,), lab_off = _read_header(label_bytes, IDX_LABELS_MAGIC, 1, "labels")
    if n_lab != n_img:
        raise FormatError(f"labels file declares {n_lab} items, images file {n_img}", offset=4)
    if rows == 0 or cols == 0:
        raise FormatError("images have a zero dimension", offset=8 if rows == 0 else 12)
    pix = rows * cols
    img_end = img_off + n_img * pix
    lab_end = lab_off + n_lab
    if len(image_bytes) < img_end:
        raise FormatError("images payload truncated", offset=len(image_bytes))
    if len(image_bytes) > img_end:
        raise FormatError("unexpected bytes after the images payload", offset=img_end)
    if len(label_bytes) < lab_end:
        raise FormatError("labels payload truncated", offset=len(label_bytes))
    if len(label_bytes) > lab_end:
        raise FormatError("unexpected bytes after the labels payload", offset=lab_end)
    n = n_img if limit is None else int(limit)
    if n <= 0:
        raise DataError("limit must be positive: the dataset would be empty")
    n = min(n, n_img)
    images = np.frombuffer(image_bytes, dtype=np.uint8, count=n * pix, offset=img_off).reshape(n, pix)
    labels = np.frombuffer(label_bytes, dtype=np.uint8, count=n, offset=lab_off).astype(np.int64)
    X = images.astype(np.float64) / 255.0
    if class_filter is not None:
        neg, pos = (int(c) for c in class_filter)
        keep = (labels == neg) | (labels == pos)
        X, labels = X[keep], np.where(labels[keep] == pos, 1, -1)
        if len(labels) == 0:
            raise DataError(f"no examples of classes {neg} or {pos}")
    return Dataset(X, labels, (np.zeros(pix), np.ones(pix)), name)


def load_idx(images_path, labels_path, limit=None, class_filter=None) -> Dataset:
    """Load an IDX image/label pair with pixels scaled to [0, 1].

    ``class_filter=(neg, pos)`` keeps two digits, labeled -1 and +1.
    """
    with open(images_path, "rb") as fh:
        image_bytes = fh.read()
    with open(labels_path, "rb") as fh:
        label_bytes = fh.read()
    return parse_idx(image_bytes, label_bytes, limit, class_filter, name=str(images_path))


def idx_bytes(images, labels):
    images = np.asarray(images, dtype=np.uint8)
    labels = np.asarray(labels, dtype=np.uint8)
    n, rows, cols = images.shape
    img = struct.pack(">IIII", IDX_IMAGES_MAGIC, n, rows, cols) + images.tobytes()
    lab = struct.pack(">II", IDX_LABELS_MAGIC, len(labels)) + labels.tobytes()
    return img, lab


def write_idx(images, labels, images_path, labels_path):
    img, lab = idx_bytes(images, labels)
    atomic_write_bytes(images_path, img)
    atomic_write_bytes(labels_path, lab)


# ----------------------------------------------------------------------------
# synthetic


def gen_synthetic(kind, n, seed, **params) -> Dataset:
    """Seeded 2-D/1-D toy data with labels in {-1, +1}.

    ``blobs``: two isotropic Gaussians, ``separation`` (in units of ``sigma``) apart.
    ``rings``: labels by radius (inner -1, outer +1) with Gaussian radial ``noise``.
    ``staircase_sample``: ``x ~ U[0, 1]`` labeled by the staircase rule of width ``eps``.
    """
    if kind not in SYNTHETIC_KINDS:
        raise DataError(f"unknown synthetic kind {kind!r}; expected one of {SYNTHETIC_KINDS}")
    n = int(n)
    if n < 1:
        raise DataError("n must be at least 1")
    rng = np.random.default_rng(seed)
    if kind == "staircase_sample":
        eps = float(params.get("eps", 0.1))
        X, y = StaircaseDistribution(eps).sample(n, rng)
        return Dataset(X, y, (np.zeros(1), np.ones(1)), f"staircase_sample(eps={eps})")
    y = np.where(rng.permutation(n) % 2 == 0, -1, 1)
    if kind == "blobs":
        sigma = float(params.get("sigma", 1.0))
        sep = float(params.get("separation", 4.0))
        centers = np.where(y[:, None] > 0, 1.0, -1.0) * np.array([sep * sigma / 2.0, 0.0])
        X = centers + sigma * rng.standard_normal((n, 2))
        return Dataset(X, y, None, f"blobs(separation={sep}, sigma={sigma})")
    noise = float(params.get("noise", 0.1))
    r_in, r_out = float(params.get("r_inner", 1.0)), float(params.get("r_outer", 2.0))
    radius = np.where(y > 0, r_out, r_in) + noise * rng.standard_normal(n)
    angle = rng.uniform(0.0, 2 * np.pi, n)
    X = np.column_stack([radius * np.cos(angle), radius * np.sin(angle)])
    return Dataset(X, y, None, f"rings(noise={noise})")


# ----------------------------------------------------------------------------
# CSV


def dataset_to_csv(ds: Dataset) -> str:
    from .csvio import format_value

    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow([f"x{j}" for j in range(ds.dim)] + ["label"])
    for row, label in zip(ds.features, ds.labels):
        w.writerow([format_value(v) for v in row] + [str(int(label))])
    return buf.getvalue()


def save_dataset_csv(ds: Dataset, path):
    atomic_write_bytes(path, dataset_to_csv(ds).encode("utf-8"))


def load_dataset_csv(path, bounds=None) -> Dataset:
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            rows = list(csv.reader(fh))
    except UnicodeDecodeError as exc:
        raise DataError(f"{path}: not UTF-8 text") from exc
    if not rows:
        raise DataError(f"{path}: empty file")
    header, body = rows[0], rows[1:]
    if not header or header[-1] != "label":
        raise DataError(f"{path}: last column must be 'label'")
    try:
        arr = np.array([[float(v) for v in r] for r in body], dtype=np.float64)
    except ValueError as exc:
        raise DataError(f"{path}: {exc}") from exc
    if arr.size == 0:
        raise DataError(f"{path}: no data rows")
    if arr.ndim != 2 or arr.shape[1] != len(header):
        raise DataError(f"{path}: ragged rows")
    return Dataset(arr[:, :-1], arr[:, -1], bounds, str(path))
