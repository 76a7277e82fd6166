"""Evaluation metrics: classification tables, label regrouping, and
generation quality (PCA-projected Fréchet distance, DTW statistics,
spectral KL divergence).

The Fréchet features come from a PCA fitted on the real segments only, so
the generated set is judged in the real data's principal subspace. DTW
runs over a random sample of real/generated pairs; with the compiled
kernel the per-pair DP releases the GIL, so the thread pool gives real
parallelism.
"""

import json
import os
import warnings
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from .errors import ConfigError, DataError, ShapeError
from .kernels import dtw_distance

# -- classification -----------------------------------------------------------


def confusion_matrix(y_true, y_pred, n_classes):
    y_true = np.asarray(y_true)
    y_pred = np.asarray(y_pred)
    if y_true.shape != y_pred.shape:
        raise ShapeError(f"label arrays disagree: {y_true.shape} vs {y_pred.shape}")
    cm = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(cm, (y_true, y_pred), 1)
    return cm


def _safe_div(num, den):
    return float(num / den) if den else 0.0


def classification_metrics(y_true, y_pred, class_names):
    """Per-class one-vs-rest table plus unweighted macro and overall accuracy."""
    n = len(class_names)
    cm = confusion_matrix(y_true, y_pred, n)
    total = int(cm.sum())
    per_class = {}
    for i, name in enumerate(class_names):
        tp = int(cm[i, i])
        fp = int(cm[:, i].sum() - tp)
        fn = int(cm[i, :].sum() - tp)
        tn = total - tp - fp - fn
        if tp + fp + fn == 0:
            warnings.warn(f"class {name!r} absent from both labels and predictions; "
                          "its precision/recall/F1 are reported as 0")
        precision = _safe_div(tp, tp + fp)
        recall = _safe_div(tp, tp + fn)
        f1 = _safe_div(2 * precision * recall, precision + recall)
        per_class[name] = {
            "tp": tp, "fp": fp, "fn": fn, "tn": tn,
            "accuracy": _safe_div(tp + tn, total),
            "precision": precision,
            "recall": recall,
            "f1": f1,
        }
    macro = {
        key: float(np.mean([per_class[c][key] for c in class_names]))
        for key in ("accuracy", "precision", "recall", "f1")
    }
    return {
        "per_class": per_class,
        "macro": macro,
        "overall_accuracy": _safe_div(int(np.trace(cm)), total),
        "confusion": cm.tolist(),
        "n": total,
    }


# -- label regrouping ----------------------------------------------------------

# default regrouping of the 12 beat labels into the six standard categories
AAMI_GROUPS = {
    "N": ["NOR", "LBB", "RBB"],
    "S": ["APB", "AAP"],
    "V": ["PVC", "VEB", "VFW"],
    "F": ["FVN"],
    "Q": ["PB", "FPN"],
    "E": ["JEB"],
}


def load_group_map(path):
    """Read a {group: [labels]} JSON map."""
    with open(path) as f:
        try:
            groups = json.load(f)
        except json.JSONDecodeError as e:
            raise DataError(f"{path}: bad group map: {e}") from e
    if not isinstance(groups, dict) or not all(
        isinstance(v, list) and all(isinstance(s, str) for s in v) for v in groups.values()
    ):
        raise DataError(f"{path}: group map must be {{group: [label, ...]}}")
    return groups


def regroup_labels(y, class_names, groups=None):
    """Map integer labels onto group indices; returns (y_grouped, group_names).

    Every class name must appear in exactly one group.
    """
    groups = AAMI_GROUPS if groups is None else groups
    owner = {}
    for gname, members in groups.items():
        for m in members:
            if m in owner:
                raise DataError(f"label {m!r} appears in groups {owner[m]!r} and {gname!r}")
            owner[m] = gname
    missing = [c for c in class_names if c not in owner]
    if missing:
        raise DataError(f"labels not covered by the group map: {missing}")
    group_names = list(groups.keys())
    gidx = {g: i for i, g in enumerate(group_names)}
    lut = np.array([gidx[owner[c]] for c in class_names], dtype=np.int64)
    return lut[np.asarray(y)], group_names


# -- Fréchet distance -----------------------------------------------------------


def _sqrtm_psd(mat):
    w, v = np.linalg.eigh((mat + mat.T) / 2.0)
    w = np.where(w < 1e-10, 0.0, w)  # clamp eigenvalue dust from round-off
    return (v * np.sqrt(w)) @ v.T


def frechet_distance(feats_real, feats_gen):
    """Fréchet distance between Gaussians fitted to two feature sets (N, K)."""
    fr = np.atleast_2d(np.asarray(feats_real, dtype=np.float64))
    fg = np.atleast_2d(np.asarray(feats_gen, dtype=np.float64))
    if fr.shape[1] != fg.shape[1]:
        raise ShapeError(f"feature dims disagree: {fr.shape[1]} vs {fg.shape[1]}")
    if fr.shape[0] < 2 or fg.shape[0] < 2:
        raise DataError("need at least 2 samples per side for a covariance")
    mu_r, mu_g = fr.mean(axis=0), fg.mean(axis=0)
    cov_r = np.atleast_2d(np.cov(fr, rowvar=False, ddof=1))
    cov_g = np.atleast_2d(np.cov(fg, rowvar=False, ddof=1))
    a = _sqrtm_psd(cov_r)
    cross = _sqrtm_psd(a @ cov_g @ a)
    diff = mu_r - mu_g
    val = diff @ diff + np.trace(cov_r) + np.trace(cov_g) - 2.0 * np.trace(cross)
    return float(max(val, 0.0))


def pca_fid(real, gen, k=32):
    """Fréchet distance in the top-k principal subspace of the real set."""
    real = np.asarray(real, dtype=np.float64)
    gen = np.asarray(gen, dtype=np.float64)
    if real.ndim != 2 or gen.ndim != 2 or real.shape[1] != gen.shape[1]:
        raise ShapeError(f"expected (N, L) segment arrays with equal L, "
                         f"got {real.shape} and {gen.shape}")
    if k < 1:
        raise ConfigError(f"need at least one component, got k={k}")
    if real.shape[0] < k + 1 or gen.shape[0] < k + 1:
        raise DataError(f"need at least k+1={k + 1} samples per set for k={k} components, "
                        f"got {real.shape[0]} real / {gen.shape[0]} generated")
    mu = real.mean(axis=0)
    _, s, vt = np.linalg.svd(real - mu, full_matrices=False)
    rank = int((s > s[0] * 1e-10).sum()) if s.size and s[0] > 0 else 0
    if rank < k:
        raise DataError(f"real set spans only {rank} directions; use a smaller k than {k}")
    comps = vt[:k]
    return frechet_distance((real - mu) @ comps.T, (gen - mu) @ comps.T)


# -- DTW -------------------------------------------------------------------------


def default_workers(jobs=None):
    cap = os.cpu_count() or 1
    env = os.environ.get("ECGLAB_THREADS")
    if env:
        try:
            cap = min(cap, max(1, int(env)))
        except ValueError:
            raise ConfigError(f"ECGLAB_THREADS must be an integer, got {env!r}")
    if jobs:
        cap = min(cap, max(1, jobs))
    return cap


def dtw_stats(real, gen, max_pairs=500, seed=0, jobs=None):
    """DTW distance statistics over sampled real/generated pairs.

    Samples min(max_pairs, N*M) distinct pairs; std is the population
    standard deviation of the sampled distances.
    """
    real = np.asarray(real)
    gen = np.asarray(gen)
    n, m = real.shape[0], gen.shape[0]
    if n == 0 or m == 0:
        raise DataError("dtw_stats needs non-empty segment sets")
    k = min(max_pairs, n * m)
    flat = np.random.default_rng(seed).choice(n * m, size=k, replace=False)
    pairs = [(int(f) // m, int(f) % m) for f in flat]
    with ThreadPoolExecutor(max_workers=default_workers(jobs)) as pool:
        dists = list(pool.map(lambda ij: dtw_distance(real[ij[0]], gen[ij[1]]), pairs))
    dists = np.asarray(dists)
    return {
        "mean": float(dists.mean()),
        "std": float(dists.std()),
        "min": float(dists.min()),
        "max": float(dists.max()),
        "pairs": k,
    }


# -- spectra ----------------------------------------------------------------------


def welch_psd(x, fs, nperseg=256, noverlap=None):
    """Average one-sided power spectral density, Hann window, no detrend.

    x may be one segment (L,) or a batch (N, L); the PSD averages over all
    windows of all rows. Density scaling: divide by fs * sum(window^2),
    double everything except DC and (for even nperseg) Nyquist.
    """
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    n_len = x.shape[1]
    if nperseg < 2:
        raise ConfigError(f"nperseg must be >= 2, got {nperseg}")
    if n_len < nperseg:
        raise DataError(f"signal length {n_len} is shorter than the {nperseg}-sample window")
    if noverlap is None:
        noverlap = nperseg // 2
    if noverlap >= nperseg:
        raise ConfigError(f"noverlap {noverlap} must be < nperseg {nperseg}")
    if nperseg & (nperseg - 1):
        warnings.warn(f"nperseg {nperseg} is not a power of two; FFTs will be slower")
    w = 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(nperseg) / nperseg)
    step = nperseg - noverlap
    starts = range(0, n_len - nperseg + 1, step)
    acc = np.zeros(nperseg // 2 + 1)
    count = 0
    for s in starts:
        spec = np.fft.rfft(x[:, s : s + nperseg] * w, axis=1)
        acc += (spec.real ** 2 + spec.imag ** 2).sum(axis=0)
        count += x.shape[0]
    psd = acc / (count * fs * (w ** 2).sum())
    psd[1:] *= 2.0
    if nperseg % 2 == 0:
        psd[-1] /= 2.0
    return np.fft.rfftfreq(nperseg, 1.0 / fs), psd


def kl_divergence(p, q):
    """KL(p || q) of two non-negative vectors, floored then normalized to sum 1."""
    p = np.asarray(p, dtype=np.float64) + 1e-12
    q = np.asarray(q, dtype=np.float64) + 1e-12
    if p.shape != q.shape:
        raise ShapeError(f"distributions disagree in shape: {p.shape} vs {q.shape}")
    p = p / p.sum()
    q = q / q.sum()
    return float(np.sum(p * np.log(p / q)))


def psd_kl(real, gen, fs, nperseg=256, noverlap=None):
    """KL(real || generated) between normalized average spectra."""
    _, p = welch_psd(real, fs, nperseg, noverlap)
    _, q = welch_psd(gen, fs, nperseg, noverlap)
    return kl_divergence(p, q)


def generation_report(real, gen, fs, fid_components=32, dtw_pairs=500,
                      nperseg=256, noverlap=None, seed=0, jobs=None):
    """Generation-quality numbers for one class, with provenance fields."""
    real = np.asarray(real)
    gen = np.asarray(gen)
    if real.shape[0] == 0 or gen.shape[0] == 0:
        raise DataError("generation report needs non-empty real and generated sets")
    stats = dtw_stats(real, gen, max_pairs=dtw_pairs, seed=seed, jobs=jobs)
    return {
        "fid": pca_fid(real, gen, k=fid_components),
        "mu_dtw": stats["mean"],
        "sigma_dtw": stats["std"],
        "kl": psd_kl(real, gen, fs, nperseg, noverlap),
        "kl_direction": "real||gen",
        "pair_count": stats["pairs"],
        "pca_dims": int(fid_components),
        "welch": {"nperseg": int(nperseg),
                  "noverlap": int(nperseg // 2 if noverlap is None else noverlap),
                  "fs": float(fs)},
        "seed": int(seed),
        "n_real": int(real.shape[0]),
        "n_gen": int(gen.shape[0]),
    }


def report_to_csv(report, class_order=None):
    """Classification report -> CSV text with class, Acc, Prec, Rec, F1 rows."""
    names = class_order or list(report["per_class"].keys())
    lines = ["class,accuracy,precision,recall,f1"]
    for name in names:
        row = report["per_class"][name]
        lines.append(f"{name},{row['accuracy']:.6f},{row['precision']:.6f},"
                     f"{row['recall']:.6f},{row['f1']:.6f}")
    m = report["macro"]
    lines.append(f"Avg,{m['accuracy']:.6f},{m['precision']:.6f},{m['recall']:.6f},{m['f1']:.6f}")
    return "\n".join(lines) + "\n"
