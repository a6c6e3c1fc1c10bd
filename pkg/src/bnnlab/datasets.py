"""Dataset ingestion and generation.

CSV regression files (last column is the target), the big-endian IDX image
format, three toy regression generators with a deliberate gap in the input
range, and a small synthetic digit corpus that stands in for real scans when
none are on disk.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError

__all__ = [
    "Dataset",
    "load_csv_regression",
    "save_csv_regression",
    "load_mnist_idx",
    "save_idx_images",
    "save_idx_labels",
    "find_mnist",
    "make_toy_datasets",
    "TOY_NAMES",
    "synthetic_digit_corpus",
]

TOY_NAMES = ("sinusoid_gap", "curve", "cluster_gap")

IMAGES_MAGIC = 0x00000803
LABELS_MAGIC = 0x00000801


@dataclass
class Dataset:
    name: str
    task: str                    # "regression" | "classification"
    X: np.ndarray
    y: np.ndarray
    train_idx: np.ndarray
    test_idx: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.X.shape[0] != self.y.shape[0]:
            raise DataError(f"{self.X.shape[0]} inputs but {self.y.shape[0]} targets")
        combined = np.sort(np.concatenate([self.train_idx, self.test_idx]))
        if combined.size != self.X.shape[0] or not np.array_equal(
                combined, np.arange(self.X.shape[0])):
            raise DataError("train/test indices must be disjoint and cover every row")

    @property
    def n(self) -> int:
        return self.X.shape[0]

    def train(self):
        return self.X[self.train_idx], self.y[self.train_idx]

    def test(self):
        return self.X[self.test_idx], self.y[self.test_idx]


def _split_indices(n: int, test_frac: float, seed: int):
    if not 0.0 <= test_frac < 1.0:
        raise ConfigError(f"test fraction must be in [0, 1), got {test_frac}")
    perm = np.random.default_rng(seed).permutation(n)
    n_test = int(round(n * test_frac))
    return np.sort(perm[n_test:]), np.sort(perm[:n_test])


# ---------------------------------------------------------------------------
# CSV

def load_csv_regression(path, seed: int = 0, test_frac: float = 0.1) -> Dataset:
    """Numeric CSV, last column the target, optional single header line.

    The split is a seeded shuffle (default 90/10).  A row that fails to parse
    or has the wrong width raises with its 1-based line number.
    """
    p = Path(path)
    if not p.exists():
        raise DataError(f"no such file: {p}")
    rows = []
    width = None
    with open(p, "r") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line:
                continue
            parts = line.split(",")
            try:
                values = [float(v) for v in parts]
            except ValueError:
                if lineno == 1 and not rows:
                    continue   # header
                raise DataError(f"{p} line {lineno}: cannot parse {line!r} as numbers")
            if width is None:
                width = len(values)
                if width < 2:
                    raise DataError(f"{p} line {lineno}: need at least 2 columns, found {width}")
            elif len(values) != width:
                raise DataError(
                    f"{p} line {lineno}: expected {width} columns, found {len(values)}")
            rows.append(values)
    if not rows:
        raise DataError(f"{p}: no data rows")
    arr = np.asarray(rows, dtype=np.float64)
    X, y = arr[:, :-1], arr[:, -1]
    train_idx, test_idx = _split_indices(arr.shape[0], test_frac, seed)
    return Dataset(name=p.stem, task="regression", X=X, y=y,
                   train_idx=train_idx, test_idx=test_idx)


def save_csv_regression(path, X: np.ndarray, y: np.ndarray, header: str | None = None):
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    if X.shape[0] == 1 and np.asarray(y).size > 1:
        X = X.T
    y = np.asarray(y, dtype=np.float64).ravel()
    with open(path, "w") as fh:
        if header:
            fh.write(header + "\n")
        for i in range(X.shape[0]):
            fh.write(",".join(repr(float(v)) for v in X[i]) + "," + repr(float(y[i])) + "\n")


# ---------------------------------------------------------------------------
# IDX image format

def _read_exact(fh, count: int, path, what: str) -> bytes:
    buf = fh.read(count)
    if len(buf) != count:
        raise DataError(f"{path}: truncated {what}: expected {count} bytes, found {len(buf)}")
    return buf


def load_mnist_idx(images_path, labels_path, test_frac: float = 0.0,
                   seed: int = 0) -> Dataset:
    """Parse a big-endian IDX image/label file pair.

    Images: magic 0x00000803, dims [N, 28, 28], unsigned bytes scaled to
    [0, 1], returned as (N, 1, 28, 28).  Labels: magic 0x00000801, N bytes in
    0-9.  The two N values must agree.
    """
    with open(images_path, "rb") as fh:
        magic, n, rows, cols = struct.unpack(">IIII", _read_exact(fh, 16, images_path, "header"))
        if magic != IMAGES_MAGIC:
            raise DataError(
                f"{images_path}: expected magic 0x{IMAGES_MAGIC:08x}, found 0x{magic:08x}")
        if (rows, cols) != (28, 28):
            raise DataError(f"{images_path}: expected 28x28 images, found {rows}x{cols}")
        raw = _read_exact(fh, n * rows * cols, images_path, "pixel data")
    images = np.frombuffer(raw, dtype=np.uint8).reshape(n, 1, rows, cols)

    with open(labels_path, "rb") as fh:
        magic, n_labels = struct.unpack(">II", _read_exact(fh, 8, labels_path, "header"))
        if magic != LABELS_MAGIC:
            raise DataError(
                f"{labels_path}: expected magic 0x{LABELS_MAGIC:08x}, found 0x{magic:08x}")
        raw = _read_exact(fh, n_labels, labels_path, "label data")
    labels = np.frombuffer(raw, dtype=np.uint8).astype(np.int64)
    if n_labels != n:
        raise DataError(f"{images_path} has {n} images but {labels_path} has {n_labels} labels")
    if labels.size and labels.max() > 9:
        raise DataError(f"{labels_path}: label {labels.max()} outside 0-9")

    train_idx, test_idx = _split_indices(n, test_frac, seed)
    return Dataset(name="mnist", task="classification",
                   X=images.astype(np.float64) / 255.0, y=labels,
                   train_idx=train_idx, test_idx=test_idx)


def save_idx_images(path, images: np.ndarray):
    """images: (N, 28, 28) or (N, 1, 28, 28) uint8."""
    arr = np.asarray(images)
    if arr.ndim == 4:
        arr = arr[:, 0]
    if arr.ndim != 3 or arr.shape[1:] != (28, 28):
        raise DataError(f"expected (N, 28, 28) images, got {arr.shape}")
    with open(path, "wb") as fh:
        fh.write(struct.pack(">IIII", IMAGES_MAGIC, arr.shape[0], 28, 28))
        fh.write(arr.astype(np.uint8).tobytes())


def save_idx_labels(path, labels: np.ndarray):
    labels = np.asarray(labels)
    with open(path, "wb") as fh:
        fh.write(struct.pack(">II", LABELS_MAGIC, labels.shape[0]))
        fh.write(labels.astype(np.uint8).tobytes())


def find_mnist(root) -> dict | None:
    """Standard filenames under root; None when any is missing."""
    root = Path(root)
    names = {
        "train_images": "train-images-idx3-ubyte",
        "train_labels": "train-labels-idx1-ubyte",
        "test_images": "t10k-images-idx3-ubyte",
        "test_labels": "t10k-labels-idx1-ubyte",
    }
    paths = {k: root / v for k, v in names.items()}
    return {k: str(p) for k, p in paths.items()} if all(p.exists() for p in paths.values()) else None


# ---------------------------------------------------------------------------
# toy regression generators

def _sinusoid_gap(rng, n):
    # equal-length segments either side of the (0.6, 0.8) gap
    seg = rng.random(n) < 0.5
    x = np.where(seg, rng.uniform(0.0, 0.6, n), rng.uniform(0.8, 1.4, n))
    eps = rng.normal(0.0, 0.02, n)
    y = x + 0.3 * np.sin(2 * np.pi * (x + eps)) + 0.3 * np.sin(4 * np.pi * (x + eps)) + eps
    return x, y, {"gap": (0.6, 0.8), "noise_sd": 0.02}


def _curve(rng, n):
    x = rng.uniform(-3.0, 3.0, n)
    x = np.where(np.abs(x) < 0.5, np.sign(x) * (0.5 + rng.random(n) * 2.5), x)
    y = np.sin(3.0 * x) * np.exp(-0.5 * x**2) + rng.normal(0.0, 0.1, n)
    return x, y, {"gap": (-0.5, 0.5), "noise_sd": 0.1}


def _cluster_gap(rng, n):
    side = rng.random(n) < 0.5
    x = np.where(side, rng.normal(-1.0, 0.2, n), rng.normal(1.5, 0.2, n))
    y = 0.8 * x + 0.2 + rng.normal(0.0, 0.1, n)
    return x, y, {"gap": (-0.4, 0.9), "noise_sd": 0.1}


_TOYS = {"sinusoid_gap": _sinusoid_gap, "curve": _curve, "cluster_gap": _cluster_gap}


def make_toy_datasets(name: str, seed: int = 0, n: int = 200,
                      test_frac: float = 0.1) -> Dataset:
    """Seeded toy regression set with a deliberate hole in the input range.

    The generating formulas are fixed here (documented in each generator);
    meta carries the gap interval and the noise scale.
    """
    if name not in _TOYS:
        raise ConfigError(f"unknown toy dataset {name!r}; choose from {TOY_NAMES}")
    rng = np.random.default_rng(seed)
    x, y, meta = _TOYS[name](rng, n)
    train_idx, test_idx = _split_indices(n, test_frac, seed)
    return Dataset(name=name, task="regression", X=x[:, None], y=y,
                   train_idx=train_idx, test_idx=test_idx, meta=meta)


# ---------------------------------------------------------------------------
# synthetic digits (stand-in scans when no real corpus is on disk)

_GLYPHS = {
    0: (" ### ", "#   #", "#  ##", "# # #", "##  #", "#   #", " ### "),
    1: ("  #  ", " ##  ", "  #  ", "  #  ", "  #  ", "  #  ", " ### "),
    2: (" ### ", "#   #", "    #", "   # ", "  #  ", " #   ", "#####"),
    3: (" ### ", "#   #", "    #", "  ## ", "    #", "#   #", " ### "),
    4: ("   # ", "  ## ", " # # ", "#  # ", "#####", "   # ", "   # "),
    5: ("#####", "#    ", "#### ", "    #", "    #", "#   #", " ### "),
    6: (" ### ", "#    ", "#### ", "#   #", "#   #", "#   #", " ### "),
    7: ("#####", "    #", "   # ", "  #  ", "  #  ", " #   ", " #   "),
    8: (" ### ", "#   #", "#   #", " ### ", "#   #", "#   #", " ### "),
    9: (" ### ", "#   #", "#   #", " ####", "    #", "   # ", " ##  "),
}


def _glyph_canvas(digit: int) -> np.ndarray:
    bitmap = np.array([[c == "#" for c in row] for row in _GLYPHS[digit]], dtype=np.float64)
    big = np.kron(bitmap, np.ones((3, 3)))          # 21 x 15
    canvas = np.zeros((28, 28))
    canvas[3:24, 6:21] = big
    return canvas


def synthetic_digit_corpus(n: int, seed: int = 0):
    """(images uint8 (n, 28, 28), labels int (n,)): jittered glyph renders.

    Each sample takes a digit glyph and applies a random small rotation,
    scale, shift, and brightness, so the classes overlap enough to make the
    task non-trivial while staying desk-scale learnable.
    """
    from scipy import ndimage

    rng = np.random.default_rng(seed)
    labels = rng.integers(0, 10, size=n)
    images = np.empty((n, 28, 28), dtype=np.uint8)
    base = {d: _glyph_canvas(d) for d in range(10)}
    for i, d in enumerate(labels):
        angle = rng.uniform(-12.0, 12.0) * np.pi / 180.0
        scale = rng.uniform(0.85, 1.15)
        c, s = np.cos(angle), np.sin(angle)
        mat = np.array([[c, -s], [s, c]]) / scale
        center = np.array([13.5, 13.5])
        offset = center - mat @ center + rng.uniform(-2.0, 2.0, size=2)
        img = ndimage.affine_transform(base[int(d)], mat, offset=offset, order=1,
                                       mode="constant", cval=0.0)
        img = img * rng.uniform(0.7, 1.0) + rng.normal(0.0, 0.02, img.shape)
        images[i] = np.clip(img * 255.0, 0, 255).astype(np.uint8)
    return images, labels
