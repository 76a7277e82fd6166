"""Training loops for the classifiers and the diffusion generator.

All stochastic draws are keyed on (seed, epoch), never on ambient RNG
state, so resuming from an epoch-boundary checkpoint reproduces the
uninterrupted run bit for bit. Checkpoints bundle model tensors, Adam
moments, scheduler state and the epoch index.
"""

import json
import os

import numpy as np

from .data import (
    Dataset,
    augment_merge,
    batch_iter,
    dual_batch_iter,
    save_dataset,
    znorm,
)
from .diffusion import DiffusionSchedule, GRUUNet, diffusion_loss, sample
from .errors import DataError, NumericError
from .metrics import generation_report
from .multitask import joint_loss
from .nn_core import tensor as T
from .nn_core.checkpoint import (
    load_checkpoint,
    load_module_state,
    module_state,
    save_checkpoint,
)
from .nn_core.optim import Adam, PlateauScheduler, l2_penalty
from .nn_core.tensor import Tensor


def save_state(path, model, opt=None, sched=None, meta=None):
    tensors = module_state(model)
    meta = dict(meta or {})
    if opt is not None:
        tensors.update(opt.state_tensors())
        meta["opt_t"] = opt.t
    if sched is not None:
        meta["sched"] = sched.state()
    save_checkpoint(path, tensors, meta)


def load_state(path, model, opt=None, sched=None):
    tensors, meta = load_checkpoint(path)
    load_module_state(model, {k: v for k, v in tensors.items() if not k.startswith("opt.")})
    if opt is not None:
        if "opt_t" not in meta:
            raise DataError(f"{path}: checkpoint has no optimizer state")
        opt.load_state_tensors(tensors)
        opt.t = int(meta["opt_t"])
    if sched is not None and "sched" in meta:
        sched.load_state(meta["sched"])
    return meta


def predict_logits(model, x, batch=256):
    """Eval-mode logits for (N, L) or (N, 1, L) segments."""
    x = np.asarray(x, dtype=np.float32)
    if x.ndim == 2:
        x = x[:, None, :]
    was_training = model.training
    model.eval()
    outs = []
    with T.no_grad():
        for i in range(0, x.shape[0], batch):
            res = model(Tensor(x[i : i + batch]))
            outs.append(res[0].data if isinstance(res, tuple) else res.data)
    model.train(was_training)
    return np.concatenate(outs, axis=0)


def _ce_and_acc(logits, y):
    z = logits - logits.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    ce = float(-logp[np.arange(len(y)), y].mean())
    acc = float((logits.argmax(axis=1) == y).mean())
    return ce, acc


def evaluate_classifier(model, x, y, batch=256, head=0):
    """(mean CE, accuracy, predictions) on a labelled set."""
    x = np.asarray(x, dtype=np.float32)
    if x.ndim == 2:
        x = x[:, None, :]
    y = np.asarray(y)
    was_training = model.training
    model.eval()
    outs = []
    with T.no_grad():
        for i in range(0, x.shape[0], batch):
            res = model(Tensor(x[i : i + batch]))
            outs.append(res[head].data if isinstance(res, tuple) else res.data)
    model.train(was_training)
    logits = np.concatenate(outs, axis=0)
    ce, acc = _ce_and_acc(logits, y)
    return ce, acc, logits.argmax(axis=1)


def _check_labels(y, n_classes, what):
    y = np.asarray(y)
    if y.size and (y.min() < 0 or y.max() >= n_classes):
        raise DataError(f"{what}: label outside 0..{n_classes - 1}")
    return y.astype(np.int64)


def _finite_or_raise(loss, where):
    val = loss.item()
    if not np.isfinite(val):
        raise NumericError(f"loss became non-finite during {where}")
    return val


def _write_history(out_dir, history):
    """history.json (arrays) plus history.jsonl (one object per epoch)."""
    if not out_dir:
        return
    with open(os.path.join(out_dir, "history.json"), "w") as f:
        json.dump(history, f, indent=2)
    keys = [k for k, v in history.items() if isinstance(v, list)]
    with open(os.path.join(out_dir, "history.jsonl"), "w") as f:
        for i in range(len(history.get("epoch", []))):
            f.write(json.dumps({k: history[k][i] for k in keys}) + "\n")


class _Saver:
    """last.ckpt every epoch, best.ckpt whenever the watched value improves."""

    def __init__(self, out_dir, model, opt, sched, meta_extra):
        self.out_dir = out_dir
        self.model = model
        self.opt = opt
        self.sched = sched
        self.meta_extra = dict(meta_extra or {})
        self.best = np.inf

    def epoch_done(self, epoch, watched):
        if self.out_dir is None:
            return
        meta = dict(self.meta_extra, epoch=epoch)
        save_state(os.path.join(self.out_dir, "last.ckpt"),
                   self.model, self.opt, self.sched, meta)
        if watched < self.best:
            self.best = watched
            save_state(os.path.join(self.out_dir, "best.ckpt"),
                       self.model, self.opt, self.sched, meta)


def train_classifier(model, x_train, y_train, x_val, y_val, *, epochs, batch,
                     lr=1e-3, weight_decay=1e-5, plateau_factor=0.5,
                     plateau_patience=25, seed=0, out_dir=None, resume=None,
                     meta_extra=None, callback=None, log=None):
    """Single-task loop: CE + explicit L2, Adam, plateau schedule on val CE."""
    x_train = np.asarray(x_train, dtype=np.float32)
    if x_train.shape[0] < 2:
        raise DataError("training needs at least 2 segments")
    batch = min(batch, x_train.shape[0])
    n_classes = model.n_classes
    y_train = _check_labels(y_train, n_classes, "train labels")
    y_val = _check_labels(y_val, n_classes, "val labels")

    opt = Adam(model.parameters(), lr=lr)
    sched = PlateauScheduler(opt, factor=plateau_factor, patience=plateau_patience)
    start = 0
    if resume:
        meta = load_state(resume, model, opt, sched)
        start = int(meta["epoch"]) + 1
    saver = _Saver(out_dir, model, opt, sched, meta_extra)
    saver.best = sched.best

    params = model.parameters()
    history = {"epoch": [], "train_loss": [], "val_loss": [], "val_acc": [],
               "lr": [], "steps": []}
    model.train()
    for epoch in range(start, epochs):
        losses = []
        for idx in batch_iter(x_train.shape[0], batch, seed, epoch):
            xb = Tensor(x_train[idx][:, None, :])
            loss = T.cross_entropy(model(xb), y_train[idx])
            if weight_decay:
                loss = loss + l2_penalty(params) * (weight_decay / 2.0)
            losses.append(_finite_or_raise(loss, f"epoch {epoch}"))
            opt.zero_grad()
            loss.backward()
            opt.step()
        val_ce, val_acc, _ = evaluate_classifier(model, x_val, y_val, batch=batch)
        sched.step(val_ce)
        history["epoch"].append(epoch)
        history["train_loss"].append(float(np.mean(losses)))
        history["val_loss"].append(val_ce)
        history["val_acc"].append(val_acc)
        history["lr"].append(opt.lr)
        history["steps"].append(len(losses))
        saver.epoch_done(epoch, val_ce)
        if log:
            log(f"epoch {epoch}: train {history['train_loss'][-1]:.4f} "
                f"val {val_ce:.4f} acc {val_acc:.4f} lr {opt.lr:g}")
        if callback and callback(history):
            break
    _write_history(out_dir, history)
    return history


def train_multitask(model, x_a, y_a, x_b, y_b, val_a, val_b, *, epochs, batch,
                    lr=1e-3, weight_decay=1e-5, alpha=1.0, beta=1.0,
                    plateau_factor=0.5, plateau_patience=25, seed=0,
                    out_dir=None, resume=None, meta_extra=None, callback=None,
                    step_hook=None, log=None):
    """Joint loop over two datasets.

    Each step concatenates one batch from each set, runs the shared
    forward once, and supervises each head only on its own rows. An epoch
    is max(ceil(Na/batch), ceil(Nb/batch)) steps; the smaller set wraps
    with fresh shuffles. The plateau schedule watches the combined
    weighted validation CE.
    """
    x_a = np.asarray(x_a, dtype=np.float32)
    x_b = np.asarray(x_b, dtype=np.float32)
    n_a, n_b = model.n_classes
    y_a = _check_labels(y_a, n_a, "task-a labels")
    y_b = _check_labels(y_b, n_b, "task-b labels")
    if x_a.shape[1] != x_b.shape[1]:
        raise DataError(f"segment lengths disagree: {x_a.shape[1]} vs {x_b.shape[1]}")

    opt = Adam(model.parameters(), lr=lr)
    sched = PlateauScheduler(opt, factor=plateau_factor, patience=plateau_patience)
    start = 0
    if resume:
        meta = load_state(resume, model, opt, sched)
        start = int(meta["epoch"]) + 1
    saver = _Saver(out_dir, model, opt, sched, meta_extra)
    saver.best = sched.best

    history = {"epoch": [], "train_loss": [], "val_loss": [], "ce_a": [], "ce_b": [],
               "acc_a": [], "acc_b": [], "lr": [], "steps": []}
    model.train()
    for epoch in range(start, epochs):
        losses = []
        for ia, ib in dual_batch_iter(x_a.shape[0], x_b.shape[0], batch, seed, epoch):
            xb = np.concatenate([x_a[ia], x_b[ib]], axis=0)[:, None, :]
            logits_a, logits_b = model.forward_concat(Tensor(xb))
            loss = joint_loss(model,
                              logits_a[:batch], y_a[ia],
                              logits_b[batch:], y_b[ib],
                              alpha=alpha, beta=beta, lam=weight_decay)
            losses.append(_finite_or_raise(loss, f"epoch {epoch}"))
            opt.zero_grad()
            loss.backward()
            opt.step()
            if step_hook:
                step_hook(model, epoch, len(losses) - 1, losses[-1])
        ce_a, acc_a, _ = evaluate_classifier(model, val_a[0], val_a[1], batch=batch, head=0)
        ce_b, acc_b, _ = evaluate_classifier(model, val_b[0], val_b[1], batch=batch, head=1)
        val_combined = alpha * ce_a + beta * ce_b
        sched.step(val_combined)
        history["epoch"].append(epoch)
        history["train_loss"].append(float(np.mean(losses)))
        history["val_loss"].append(val_combined)
        history["ce_a"].append(ce_a)
        history["ce_b"].append(ce_b)
        history["acc_a"].append(acc_a)
        history["acc_b"].append(acc_b)
        history["lr"].append(opt.lr)
        history["steps"].append(len(losses))
        saver.epoch_done(epoch, val_combined)
        if log:
            log(f"epoch {epoch}: train {history['train_loss'][-1]:.4f} "
                f"val {val_combined:.4f} acc_a {acc_a:.4f} acc_b {acc_b:.4f} lr {opt.lr:g}")
        if callback and callback(history):
            break
    _write_history(out_dir, history)
    return history


def augment_class_workflow(train_set, class_name, cfg, count=None, out_dir=None,
                           jobs=None, log=None):
    """Grow one class of a dataset with freshly generated segments.

    Trains an unconditional generator on that class's segments only, samples,
    scores the samples against the real ones, and merges exactly `count` of
    them (default cfg.augment_count). Returns (augmented Dataset, report).
    With count=0 the model is still trained and scored but the returned set
    is an unchanged copy.
    """
    if class_name not in train_set.classes:
        raise DataError(f"class {class_name!r} not in dataset "
                        f"(has {train_set.classes})")
    count = cfg.augment_count if count is None else int(count)
    if count < 0:
        raise DataError(f"augment count must be >= 0, got {count}")
    ci = train_set.classes.index(class_name)
    x = train_set.x[train_set.y == ci]
    if x.shape[0] < 8:
        raise DataError(f"class {class_name!r} has {x.shape[0]} segments; "
                        "need >= 8 to fit a generator")
    if getattr(cfg, "normalize", True):
        x = znorm(x)
    # per-class streams so adding a class never perturbs the others
    seed_c = int(np.random.SeedSequence([cfg.seed, ci]).generate_state(1)[0])
    model = GRUUNet(base=cfg.diff_channels, gru_layers=cfg.gru_layers,
                    time_dim=cfg.time_dim, heads=cfg.heads, seed=seed_c)
    schedule = DiffusionSchedule(cfg.diffusion_steps, cfg.beta_start, cfg.beta_end)
    meta_extra = {"arch": {"kind": "diffusion", "base": cfg.diff_channels,
                           "gru_layers": cfg.gru_layers, "time_dim": cfg.time_dim,
                           "heads": cfg.heads},
                  "schedule": {"steps": cfg.diffusion_steps,
                               "beta_start": cfg.beta_start, "beta_end": cfg.beta_end},
                  "class_name": class_name, "rate_hz": train_set.rate_hz,
                  "segment_len": train_set.segment_len}
    if log:
        log(f"[{class_name}] training generator on {x.shape[0]} segments")
    train_diffusion(
        model, schedule, x, epochs=cfg.epochs, batch=cfg.batch, lr=cfg.lr,
        weight_decay=cfg.weight_decay, plateau_factor=cfg.plateau_factor,
        plateau_patience=cfg.plateau_patience, seed=seed_c, out_dir=out_dir,
        meta_extra=meta_extra, log=log)

    # sample enough for the merge and for a meaningful quality report
    k_used = max(1, min(cfg.fid_components, x.shape[0] - 1))
    n_gen = max(count, k_used + 1)
    if log:
        log(f"[{class_name}] sampling {n_gen} segments")
    rng = np.random.default_rng([seed_c, 1])
    segs = sample(model, schedule, n_gen, train_set.segment_len, rng,
                  batch=cfg.sample_batch)[:, 0, :].astype(np.float32)
    synth = Dataset(f"generated-{class_name}", train_set.rate_hz,
                    train_set.segment_len, [class_name], segs,
                    np.zeros(n_gen, dtype=np.int64))
    if out_dir:
        save_dataset(out_dir, synth, extra={"synthetic": True})
    report = generation_report(
        x, segs, train_set.rate_hz, fid_components=min(k_used, n_gen - 1),
        dtw_pairs=cfg.dtw_pairs, nperseg=min(cfg.welch_nperseg, train_set.segment_len),
        noverlap=cfg.noverlap, seed=cfg.seed, jobs=jobs)
    trimmed = Dataset(synth.name, synth.rate_hz, synth.segment_len,
                      synth.classes, synth.x[:count], synth.y[:count])
    return augment_merge(train_set, trimmed, class_name, count=count), report


def train_diffusion(model, schedule, x, *, epochs, batch, lr=1e-3,
                    weight_decay=0.0, plateau_factor=0.5, plateau_patience=25,
                    seed=0, out_dir=None, resume=None, meta_extra=None,
                    callback=None, log=None):
    """Noise-prediction training on one class's segments (N, L)."""
    x = np.asarray(x, dtype=np.float32)
    if x.shape[0] < 2:
        raise DataError("diffusion training needs at least 2 segments")

    opt = Adam(model.parameters(), lr=lr)
    sched = PlateauScheduler(opt, factor=plateau_factor, patience=plateau_patience)
    start = 0
    if resume:
        meta = load_state(resume, model, opt, sched)
        start = int(meta["epoch"]) + 1
    saver = _Saver(out_dir, model, opt, sched, meta_extra)
    saver.best = sched.best

    params = model.parameters()
    history = {"epoch": [], "train_loss": [], "lr": [], "steps": []}
    model.train()
    for epoch in range(start, epochs):
        noise_rng = np.random.default_rng([seed, epoch, 1])
        losses = []
        for idx in batch_iter(x.shape[0], batch, seed, epoch, drop_last=False):
            if idx.shape[0] < 2:
                continue  # batch norm needs company
            loss = diffusion_loss(model, schedule, x[idx][:, None, :], noise_rng)
            if weight_decay:
                loss = loss + l2_penalty(params) * (weight_decay / 2.0)
            losses.append(_finite_or_raise(loss, f"epoch {epoch}"))
            opt.zero_grad()
            loss.backward()
            opt.step()
        if not losses:
            raise DataError("every batch had a single segment; raise the batch size")
        mean_loss = float(np.mean(losses))
        sched.step(mean_loss)
        history["epoch"].append(epoch)
        history["train_loss"].append(mean_loss)
        history["lr"].append(opt.lr)
        history["steps"].append(len(losses))
        saver.epoch_done(epoch, mean_loss)
        if log:
            log(f"epoch {epoch}: loss {mean_loss:.5f} lr {opt.lr:g}")
        if callback and callback(history):
            break
    _write_history(out_dir, history)
    return history
