"""Record IO, preprocessing, dataset shards, and batch iteration.

Records come as two text files: a signal file whose first line is
``# rate_hz=<value>`` followed by one amplitude per line, and an
annotation file of ``<sample_index>,<label>`` lines marking events.

Prepared datasets live in a directory holding a ``manifest.json`` plus raw
little-endian float32 shard files. Each shard covers one contiguous run of
equal labels, so loading shards in manifest order reproduces the original
segment order exactly, whatever that order was.
"""

import hashlib
import json
import os
import warnings
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DataError, ShapeError


def sha256_file(path):
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


# -- record files -------------------------------------------------------------


def read_signal(path):
    """Read a signal file -> (samples float64, rate_hz)."""
    with open(path) as f:
        head = f.readline().strip()
        if not head.startswith("#") or "rate_hz=" not in head:
            raise DataError(f"{path}: first line must be '# rate_hz=<value>'")
        try:
            rate = float(head.split("rate_hz=", 1)[1])
        except ValueError as e:
            raise DataError(f"{path}: bad rate_hz: {e}") from e
        if rate <= 0:
            raise DataError(f"{path}: rate_hz must be positive, got {rate}")
        try:
            x = np.loadtxt(f, dtype=np.float64, ndmin=1)
        except ValueError as e:
            raise DataError(f"{path}: bad sample line: {e}") from e
    if x.size == 0:
        raise DataError(f"{path}: signal has no samples")
    return x, rate


def write_signal(path, x, rate_hz):
    x = np.asarray(x, dtype=np.float64).ravel()
    with open(path, "w") as f:
        f.write(f"# rate_hz={rate_hz:g}\n")
        np.savetxt(f, x, fmt="%.9g")


def read_annotations(path):
    """Read an annotation file -> list of (sample_index, label)."""
    events = []
    with open(path) as f:
        for lineno, line in enumerate(f, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split(",")
            if len(parts) != 2:
                raise DataError(f"{path}:{lineno}: expected '<sample>,<label>'")
            idx_s, label = parts[0].strip(), parts[1].strip()
            try:
                idx = int(idx_s)
            except ValueError as e:
                raise DataError(f"{path}:{lineno}: bad sample index {idx_s!r}") from e
            if idx < 0:
                raise DataError(f"{path}:{lineno}: negative sample index {idx}")
            if not label:
                raise DataError(f"{path}:{lineno}: empty label")
            events.append((idx, label))
    return events


def write_annotations(path, events):
    with open(path, "w") as f:
        for idx, label in events:
            f.write(f"{idx},{label}\n")


# -- preprocessing ------------------------------------------------------------


def resample(x, src_hz, dst_hz):
    """Linear-interpolation resampling; output length rounds n*dst/src."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise ShapeError(f"resample expects a 1D signal, got {x.shape}")
    if src_hz <= 0 or dst_hz <= 0:
        raise ConfigError("sample rates must be positive")
    if not np.isfinite(x).all():
        raise DataError("signal contains non-finite samples")
    n1 = x.shape[0]
    n2 = int(round(n1 * dst_hz / src_hz))
    if n2 < 1:
        raise DataError(f"resampling {n1} samples {src_hz}->{dst_hz} Hz leaves nothing")
    if n2 == n1:
        return x.copy()
    return np.interp(np.linspace(0.0, n1 - 1.0, n2), np.arange(n1), x)


def segment_record(x, events, window):
    """Cut a window centred on each event: [e - window//2, e + window//2).

    Events whose window crosses a record boundary are skipped and reported.
    Returns (segments (N, window) float32, labels, skipped) where skipped
    is a list of {"sample", "label", "reason"} dicts.
    """
    if window <= 0 or window % 2 != 0:
        raise ConfigError(f"window must be a positive even length, got {window}")
    x = np.asarray(x)
    half = window // 2
    segs, labels, skipped = [], [], []
    for sample, label in events:
        start = sample - half
        stop = start + window
        if start < 0 or stop > x.shape[0]:
            skipped.append({"sample": int(sample), "label": label,
                            "reason": f"window [{start}, {stop}) outside record of {x.shape[0]}"})
            continue
        segs.append(x[start:stop])
        labels.append(label)
    if segs:
        return np.asarray(segs, dtype=np.float32), labels, skipped
    return np.empty((0, window), dtype=np.float32), labels, skipped


def znorm(segs):
    """Per-row z-score; rows with std below 1e-8 are only mean-centred."""
    segs = np.asarray(segs)
    mu = segs.mean(axis=-1, keepdims=True)
    sd = segs.std(axis=-1, keepdims=True)
    return ((segs - mu) / np.where(sd < 1e-8, 1.0, sd)).astype(segs.dtype)


def train_test_split(n, ratio, seed):
    """Shuffled index split; the first round(ratio*n) go to train."""
    if not 0.0 < ratio < 1.0:
        raise ConfigError(f"split ratio must be in (0, 1), got {ratio}")
    if n == 0:
        warnings.warn("splitting an empty set; both partitions are empty")
    perm = np.random.default_rng(seed).permutation(n)
    k = int(round(ratio * n))
    return perm[:k], perm[k:]


# -- prepared datasets --------------------------------------------------------


@dataclass
class Dataset:
    name: str
    rate_hz: float
    segment_len: int
    classes: list
    x: np.ndarray  # (N, L) float32
    y: np.ndarray  # (N,) int64 indices into classes

    def counts(self):
        c = np.bincount(self.y, minlength=len(self.classes))
        return {name: int(c[i]) for i, name in enumerate(self.classes)}


def save_dataset(out_dir, ds, extra=None):
    """Write manifest.json plus one shard per contiguous label run.

    `extra` adds informational keys (e.g. a synthetic-data flag) to the
    manifest; readers ignore keys they do not know.
    """
    if ds.x.ndim != 2 or ds.x.shape[0] != ds.y.shape[0]:
        raise ShapeError(f"dataset arrays disagree: x {ds.x.shape}, y {ds.y.shape}")
    os.makedirs(out_dir, exist_ok=True)
    x = np.ascontiguousarray(ds.x, dtype="<f4")
    shards = []
    start = 0
    n = ds.y.shape[0]
    while start < n:
        stop = start
        while stop < n and ds.y[stop] == ds.y[start]:
            stop += 1
        fname = f"shard_{len(shards):05d}.f32"
        x[start:stop].tofile(os.path.join(out_dir, fname))
        shards.append({"class": ds.classes[int(ds.y[start])], "path": fname,
                       "count": stop - start})
        start = stop
    manifest = {
        "name": ds.name,
        "rate_hz": ds.rate_hz,
        "segment_len": int(ds.x.shape[1]),
        "classes": list(ds.classes),
        "shards": shards,
    }
    if extra:
        manifest.update(extra)
    with open(os.path.join(out_dir, "manifest.json"), "w") as f:
        json.dump(manifest, f, indent=2)
        f.write("\n")
    return manifest


def load_dataset(path):
    """Load a dataset directory (or manifest path) written by save_dataset."""
    if os.path.isdir(path):
        path = os.path.join(path, "manifest.json")
    base = os.path.dirname(path)
    try:
        with open(path) as f:
            man = json.load(f)
    except FileNotFoundError:
        raise DataError(f"no manifest at {path}")
    except json.JSONDecodeError as e:
        raise DataError(f"{path}: bad manifest: {e}") from e
    for key in ("name", "rate_hz", "segment_len", "classes", "shards"):
        if key not in man:
            raise DataError(f"{path}: manifest missing {key!r}")
    classes = list(man["classes"])
    index = {c: i for i, c in enumerate(classes)}
    seg_len = int(man["segment_len"])
    xs, ys = [], []
    for sh in man["shards"]:
        if sh["class"] not in index:
            raise DataError(f"{path}: shard class {sh['class']!r} not in class list")
        arr = np.fromfile(os.path.join(base, sh["path"]), dtype="<f4")
        if arr.size != sh["count"] * seg_len:
            raise DataError(f"{path}: shard {sh['path']} has {arr.size} values, "
                            f"expected {sh['count'] * seg_len}")
        xs.append(arr.reshape(sh["count"], seg_len))
        ys.append(np.full(sh["count"], index[sh["class"]], dtype=np.int64))
    if xs:
        x = np.concatenate(xs, axis=0)
        y = np.concatenate(ys, axis=0)
    else:
        x = np.empty((0, seg_len), dtype=np.float32)
        y = np.empty((0,), dtype=np.int64)
    return Dataset(man["name"], float(man["rate_hz"]), seg_len, classes, x, y)


# -- batching -----------------------------------------------------------------


def batch_iter(n, batch, seed, epoch, drop_last=True):
    """Yield index arrays of a shuffled pass, keyed on (seed, epoch)."""
    if batch < 1:
        raise ConfigError(f"batch size must be >= 1, got {batch}")
    perm = np.random.default_rng([seed, epoch]).permutation(n)
    stop = n - (n % batch) if drop_last else n
    for i in range(0, stop, batch):
        yield perm[i : i + batch]


def _cycling_indices(n, seed, epoch, stream):
    pass_no = 0
    while True:
        rng = np.random.default_rng([seed, epoch, stream, pass_no])
        yield from rng.permutation(n)
        pass_no += 1


def augment_merge(train, synthetic, class_name, count=900):
    """Append `count` synthetic segments of one class to a dataset.

    The synthetic set must be homogeneous in `class_name` and hold at least
    `count` rows; the class table of the result is unchanged.
    """
    if class_name not in train.classes:
        raise DataError(f"class {class_name!r} not in dataset classes {train.classes}")
    used = {synthetic.classes[int(i)] for i in np.unique(synthetic.y)}
    if synthetic.x.shape[0] and used != {class_name}:
        raise DataError(f"synthetic set must contain only {class_name!r} segments, found {sorted(used)}")
    if count < 0:
        raise ConfigError(f"count must be >= 0, got {count}")
    if count > synthetic.x.shape[0]:
        raise DataError(f"asked for {count} synthetic segments, only {synthetic.x.shape[0]} available")
    if count and synthetic.x.shape[1] != train.segment_len:
        raise ShapeError(f"synthetic segment length {synthetic.x.shape[1]} != {train.segment_len}")
    if count == 0:
        return Dataset(train.name, train.rate_hz, train.segment_len,
                       list(train.classes), train.x.copy(), train.y.copy())
    idx = train.classes.index(class_name)
    x = np.concatenate([train.x, synthetic.x[:count].astype(train.x.dtype)], axis=0)
    y = np.concatenate([train.y, np.full(count, idx, dtype=train.y.dtype)])
    return Dataset(train.name, train.rate_hz, train.segment_len, list(train.classes), x, y)


def dual_batch_iter(n_a, n_b, batch, seed, epoch):
    """Paired batches over two datasets of different sizes.

    Yields max(ceil(n_a/batch), ceil(n_b/batch)) pairs of index arrays,
    every batch exactly `batch` long; the shorter stream wraps around with
    a fresh shuffle per pass, so both streams keep constant batch shapes.
    """
    if min(n_a, n_b) < 1:
        raise DataError("dual_batch_iter needs non-empty datasets")
    if batch < 1:
        raise ConfigError(f"batch size must be >= 1, got {batch}")
    if batch > min(n_a, n_b):
        warnings.warn(f"batch {batch} exceeds a dataset of {min(n_a, n_b)}; rows will repeat within a batch")
    steps = max(-(-n_a // batch), -(-n_b // batch))
    it_a = _cycling_indices(n_a, seed, epoch, 0)
    it_b = _cycling_indices(n_b, seed, epoch, 1)
    for _ in range(steps):
        ia = np.fromiter(it_a, dtype=np.int64, count=batch)
        ib = np.fromiter(it_b, dtype=np.int64, count=batch)
        yield ia, ib
