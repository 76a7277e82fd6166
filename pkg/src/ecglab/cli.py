"""Command line interface.

Subcommands cover the whole pipeline: prepare raw records into dataset
shards, train the single- and dual-dataset classifiers, train per-class
diffusion generators, sample from them, fold generated segments back into
a dataset, and score classifiers and generators.

Exit codes: 0 success, 2 bad input or configuration, 3 numeric failure.
"""

import argparse
import json
import os
import sys

import numpy as np

from . import data as D
from . import metrics as M
from .config import RunConfig, config_hash, write_run_manifest
from .dfnet import DFNet
from .diffusion import DiffusionSchedule, GRUUNet, sample
from .errors import ConfigError, DataError, NumericError, ShapeError
from .multitask import MultiTaskDFNet
from .nn_core import tensor as T
from .nn_core.checkpoint import load_checkpoint, load_module_state
from .nn_core.tensor import Tensor
from .training import (
    augment_class_workflow,
    evaluate_classifier,
    train_classifier,
    train_diffusion,
    train_multitask,
)


def _load_cfg(args):
    cfg = RunConfig.from_file(args.config) if args.config else RunConfig()
    if args.seed is not None:
        cfg.seed = args.seed
    return cfg


def _out_dir(args):
    os.makedirs(args.out, exist_ok=True)
    return args.out


def _dump_json(path, obj):
    with open(path, "w") as f:
        json.dump(obj, f, indent=2)
        f.write("\n")


# -- model (re)construction ----------------------------------------------------


def _build_from_meta(meta):
    try:
        arch = meta["arch"]
        kind = arch["kind"]
    except (KeyError, TypeError):
        raise DataError("checkpoint metadata does not describe a model")
    if kind == "dfnet":
        return DFNet(arch["n_classes"], base=arch["base"],
                     se_reduction=arch.get("se_reduction", 8)), kind
    if kind == "multitask":
        return MultiTaskDFNet(arch["n_classes_a"], arch["n_classes_b"],
                              base=arch["base"],
                              se_reduction=arch.get("se_reduction", 8)), kind
    if kind == "diffusion":
        return GRUUNet(base=arch["base"], gru_layers=arch["gru_layers"],
                       time_dim=arch["time_dim"], heads=arch.get("heads", 4)), kind
    raise DataError(f"unknown model kind {kind!r} in checkpoint")


def load_model(path):
    """Rebuild a model from a checkpoint; returns (model, meta)."""
    tensors, meta = load_checkpoint(path)
    model, _ = _build_from_meta(meta)
    load_module_state(model, {k: v for k, v in tensors.items() if not k.startswith("opt.")})
    model.eval()
    return model, meta


def model_cost(model, length, kind):
    """Parameter count and 2*MAC forward flops at batch 1."""
    was_training = model.training
    model.eval()
    x = Tensor(np.zeros((1, 1, length), dtype=np.float32))
    with T.no_grad(), T.count_flops() as fc:
        if kind == "diffusion":
            model(x, np.array([1]))
        else:
            model(x)
    model.train(was_training)
    return {"params": int(model.num_params()), "flops": int(fc.flops)}


# -- prepare --------------------------------------------------------------------


def cmd_prepare(args):
    cfg = _load_cfg(args)
    if not cfg.records:
        raise ConfigError("prepare needs a config with a non-empty 'records' list")
    out = _out_dir(args)
    all_segs, all_labels, skipped, inputs = [], [], [], []
    for rec in cfg.records:
        if not isinstance(rec, dict) or "signal" not in rec or "annotations" not in rec:
            raise ConfigError(f"each record needs signal and annotations paths, got {rec!r}")
        sig, src_rate = D.read_signal(rec["signal"])
        events = D.read_annotations(rec["annotations"])
        inputs += [rec["signal"], rec["annotations"]]
        sig = D.resample(sig, src_rate, cfg.rate_hz)
        scale = cfg.rate_hz / src_rate
        events = [(int(round(i * scale)), lab) for i, lab in events]
        segs, labels, skips = D.segment_record(sig, events, cfg.window)
        for s in skips:
            s["record"] = rec["signal"]
        skipped += skips
        if segs.shape[0]:
            all_segs.append(segs)
            all_labels += labels
    if not all_labels:
        raise DataError("no usable segments in any record")
    x = np.concatenate(all_segs, axis=0)
    if cfg.classes:
        classes = list(cfg.classes)
        unknown = sorted(set(all_labels) - set(classes))
        if unknown:
            raise DataError(f"labels not in configured class list: {unknown}")
    else:
        classes = sorted(set(all_labels))
    index = {c: i for i, c in enumerate(classes)}
    y = np.array([index[lab] for lab in all_labels], dtype=np.int64)
    ds = D.Dataset(cfg.dataset_name, cfg.rate_hz, cfg.window, classes, x, y)
    D.save_dataset(out, ds)
    _dump_json(os.path.join(out, "skipped.json"), skipped)
    write_run_manifest(os.path.join(out, "run.json"), "prepare", cfg, inputs,
                       {"segments": int(x.shape[0]), "skipped": len(skipped),
                        "counts": ds.counts()})
    print(f"prepared {x.shape[0]} segments ({len(skipped)} skipped) -> {out}")
    print(json.dumps(ds.counts()))
    return 0


# -- training commands ------------------------------------------------------------


def _model_x(ds, cfg):
    """Shards hold raw amplitudes; models consume z-scored segments."""
    return D.znorm(ds.x) if cfg.normalize else ds.x


def _split_set(ds, cfg):
    x = _model_x(ds, cfg)
    tr, va = D.train_test_split(ds.x.shape[0], cfg.split, cfg.seed)
    return (x[tr], ds.y[tr]), (x[va], ds.y[va])


def cmd_train_single(args):
    cfg = _load_cfg(args)
    out = _out_dir(args)
    ds = D.load_dataset(args.data)
    (xt, yt), (xv, yv) = _split_set(ds, cfg)
    model = DFNet(len(ds.classes), base=cfg.base_channels, seed=cfg.seed,
                  se_reduction=cfg.se_reduction)
    meta_extra = {"arch": {"kind": "dfnet", "n_classes": len(ds.classes),
                           "base": cfg.base_channels,
                           "se_reduction": cfg.se_reduction},
                  "classes": ds.classes, "rate_hz": ds.rate_hz,
                  "segment_len": ds.segment_len}
    hist = train_classifier(
        model, xt, yt, xv, yv, epochs=cfg.epochs, batch=cfg.batch, lr=cfg.lr,
        weight_decay=cfg.weight_decay, plateau_factor=cfg.plateau_factor,
        plateau_patience=cfg.plateau_patience, seed=cfg.seed, out_dir=out,
        resume=args.resume, meta_extra=meta_extra, log=print)
    write_run_manifest(os.path.join(out, "run.json"), "train-single", cfg,
                       [os.path.join(args.data, "manifest.json")],
                       {"final_val_acc": hist["val_acc"][-1] if hist["val_acc"] else None})
    return 0


def cmd_train_multi(args):
    cfg = _load_cfg(args)
    out = _out_dir(args)
    ds_a = D.load_dataset(args.data_a)
    ds_b = D.load_dataset(args.data_b)
    (xta, yta), (xva, yva) = _split_set(ds_a, cfg)
    (xtb, ytb), (xvb, yvb) = _split_set(ds_b, cfg)
    model = MultiTaskDFNet(len(ds_a.classes), len(ds_b.classes),
                           base=cfg.base_channels, seed=cfg.seed,
                           se_reduction=cfg.se_reduction)
    meta_extra = {"arch": {"kind": "multitask", "n_classes_a": len(ds_a.classes),
                           "n_classes_b": len(ds_b.classes), "base": cfg.base_channels,
                           "se_reduction": cfg.se_reduction},
                  "classes_a": ds_a.classes, "classes_b": ds_b.classes,
                  "segment_len": ds_a.segment_len}
    hist = train_multitask(
        model, xta, yta, xtb, ytb, (xva, yva), (xvb, yvb),
        epochs=cfg.epochs, batch=cfg.batch, lr=cfg.lr,
        weight_decay=cfg.weight_decay, alpha=cfg.alpha, beta=cfg.beta,
        plateau_factor=cfg.plateau_factor, plateau_patience=cfg.plateau_patience,
        seed=cfg.seed, out_dir=out, resume=args.resume, meta_extra=meta_extra,
        log=print)
    write_run_manifest(os.path.join(out, "run.json"), "train-multi", cfg,
                       [os.path.join(args.data_a, "manifest.json"),
                        os.path.join(args.data_b, "manifest.json")],
                       {"final_val_acc_a": hist["acc_a"][-1] if hist["acc_a"] else None,
                        "final_val_acc_b": hist["acc_b"][-1] if hist["acc_b"] else None})
    return 0


def _write_gen_sidecars(out, cfg, class_name, segment_len):
    """Plain-JSON summary next to each generator checkpoint, for consumers
    that do not want to parse the checkpoint container."""
    desc = {
        "steps": cfg.diffusion_steps,
        "beta_start": cfg.beta_start,
        "beta_end": cfg.beta_end,
        "channels": cfg.diff_channels,
        "segment_len": int(segment_len),
        "gru_layers": cfg.gru_layers,
        "class_name": class_name,
        "seed": cfg.seed,
    }
    for name in ("last.ckpt", "best.ckpt"):
        path = os.path.join(out, name)
        if os.path.exists(path):
            _dump_json(path + ".json", desc)


def cmd_train_diffusion(args):
    cfg = _load_cfg(args)
    out = _out_dir(args)
    ds = D.load_dataset(args.data)
    if args.class_name not in ds.classes:
        raise DataError(f"class {args.class_name!r} not in dataset "
                        f"(has {ds.classes})")
    x = _model_x(ds, cfg)[ds.y == ds.classes.index(args.class_name)]
    if x.shape[0] < 2:
        raise DataError(f"class {args.class_name!r} has {x.shape[0]} segments; need >= 2")
    model = GRUUNet(base=cfg.diff_channels, gru_layers=cfg.gru_layers,
                    time_dim=cfg.time_dim, heads=cfg.heads, seed=cfg.seed)
    schedule = DiffusionSchedule(cfg.diffusion_steps, cfg.beta_start, cfg.beta_end)
    meta_extra = {"arch": {"kind": "diffusion", "base": cfg.diff_channels,
                           "gru_layers": cfg.gru_layers, "time_dim": cfg.time_dim,
                           "heads": cfg.heads},
                  "schedule": {"steps": cfg.diffusion_steps,
                               "beta_start": cfg.beta_start, "beta_end": cfg.beta_end},
                  "class_name": args.class_name, "rate_hz": ds.rate_hz,
                  "segment_len": ds.segment_len}
    train_diffusion(
        model, schedule, x, epochs=cfg.epochs, batch=cfg.batch, lr=cfg.lr,
        weight_decay=cfg.weight_decay, plateau_factor=cfg.plateau_factor,
        plateau_patience=cfg.plateau_patience, seed=cfg.seed, out_dir=out,
        resume=args.resume, meta_extra=meta_extra, log=print)
    _write_gen_sidecars(out, cfg, args.class_name, ds.segment_len)
    write_run_manifest(os.path.join(out, "run.json"), "train-diffusion", cfg,
                       [os.path.join(args.data, "manifest.json")], {})
    return 0


# -- generation ---------------------------------------------------------------------


def cmd_generate(args):
    cfg = _load_cfg(args)
    out = _out_dir(args)
    model, meta = load_model(args.model)
    if meta.get("arch", {}).get("kind") != "diffusion":
        raise DataError(f"{args.model} is not a generator checkpoint")
    sched_meta = meta["schedule"]
    schedule = DiffusionSchedule(int(sched_meta["steps"]),
                                 float(sched_meta["beta_start"]),
                                 float(sched_meta["beta_end"]))
    rng = np.random.default_rng(cfg.seed)
    segs = sample(model, schedule, args.count, int(meta["segment_len"]), rng,
                  batch=cfg.sample_batch)[:, 0, :]
    cname = meta["class_name"]
    ds = D.Dataset(f"generated-{cname}", float(meta["rate_hz"]),
                   int(meta["segment_len"]), [cname], segs.astype(np.float32),
                   np.zeros(args.count, dtype=np.int64))
    D.save_dataset(out, ds, extra={"synthetic": True})
    write_run_manifest(os.path.join(out, "run.json"), "generate", cfg,
                       [args.model], {"count": args.count, "class_name": cname})
    print(f"generated {args.count} x {meta['segment_len']} segments of {cname!r} -> {out}")
    return 0


def cmd_augment(args):
    cfg = _load_cfg(args)
    out = _out_dir(args)
    base = D.load_dataset(args.data)
    class_names = list(dict.fromkeys(args.class_name or cfg.augment_classes))
    if not class_names:
        raise ConfigError("augment needs target classes; pass --class-name or "
                          "set augment_classes in the config")
    count = cfg.augment_count if args.count is None else args.count
    for cname in class_names:
        if cname not in base.classes:
            raise DataError(f"class {cname!r} not in dataset (has {base.classes})")
    ds = base
    summary = {}
    for cname in class_names:
        gen_dir = os.path.join(out, f"gen-{cname}")
        os.makedirs(gen_dir, exist_ok=True)
        ds, report = augment_class_workflow(ds, cname, cfg, count=count,
                                            out_dir=gen_dir, jobs=args.jobs,
                                            log=print)
        _write_gen_sidecars(gen_dir, cfg, cname, base.segment_len)
        _dump_json(os.path.join(out, f"report-{cname}.json"), report)
        summary[cname] = {"added": count, "fid": report["fid"],
                          "mu_dtw": report["mu_dtw"], "kl": report["kl"]}
    ds = D.Dataset(f"{base.name}-augmented", ds.rate_hz, ds.segment_len,
                   ds.classes, ds.x, ds.y)
    D.save_dataset(out, ds)
    report = {"classes": summary, "counts": ds.counts()}
    _dump_json(os.path.join(out, "augment.json"), report)
    write_run_manifest(os.path.join(out, "run.json"), "augment", cfg,
                       [os.path.join(args.data, "manifest.json")], report)
    print(json.dumps(report))
    return 0


# -- evaluation ----------------------------------------------------------------------


def cmd_eval(args):
    cfg = _load_cfg(args)
    model, meta = load_model(args.model)
    kind = meta["arch"]["kind"]
    if kind == "diffusion":
        raise DataError("eval scores classifiers; use report for generators")
    ds = D.load_dataset(args.data)
    if args.subset == "all":
        x, y = _model_x(ds, cfg), ds.y
    else:
        (xt, yt), (xv, yv) = _split_set(ds, cfg)
        x, y = ((xt, yt) if args.subset == "train" else (xv, yv))
    head = 0 if args.task == "a" else 1
    key = "classes" if kind == "dfnet" else ("classes_a" if head == 0 else "classes_b")
    classes = meta.get(key, ds.classes)
    if list(classes) != list(ds.classes):
        raise DataError(f"dataset classes {ds.classes} do not match checkpoint {classes}")
    ce, acc, pred = evaluate_classifier(model, x, y, batch=cfg.batch, head=head)
    out = {
        "loss": ce,
        "metrics": M.classification_metrics(y, pred, list(classes)),
        "cost": model_cost(model, ds.segment_len, kind),
        "seed": cfg.seed,
        "config_hash": config_hash(cfg),
    }
    if args.aami:
        groups = M.load_group_map(cfg.group_map) if cfg.group_map else None
        yg, gnames = M.regroup_labels(y, list(classes), groups)
        pg, _ = M.regroup_labels(pred, list(classes), groups)
        out["aami"] = M.classification_metrics(yg, pg, gnames)
    if args.csv:
        with open(args.csv, "w") as f:
            f.write(M.report_to_csv(out["metrics"], class_order=list(classes)))
    text = json.dumps(out, indent=2)
    if args.out:
        with open(args.out, "w") as f:
            f.write(text + "\n")
    print(text)
    return 0


def cmd_report(args):
    cfg = _load_cfg(args)
    real = D.load_dataset(args.real)
    gen = D.load_dataset(args.gen)
    # the real side is z-scored to match the space the generator trained in;
    # generated segments are compared as emitted
    x_real = _model_x(real, cfg)
    if args.class_name:
        if args.class_name not in real.classes:
            raise DataError(f"class {args.class_name!r} not in {args.real}")
        x_real = x_real[real.y == real.classes.index(args.class_name)]
    rep = M.generation_report(
        x_real, gen.x, real.rate_hz, fid_components=cfg.fid_components,
        dtw_pairs=cfg.dtw_pairs, nperseg=cfg.welch_nperseg,
        noverlap=cfg.noverlap, seed=cfg.seed, jobs=args.jobs)
    text = json.dumps(rep, indent=2)
    if args.out:
        with open(args.out, "w") as f:
            f.write(text + "\n")
    print(text)
    return 0


# -- argument plumbing -----------------------------------------------------------------


def _add_common(sp):
    sp.add_argument("--config", help="JSON config file")
    sp.add_argument("--seed", type=int, default=None, help="override config seed")
    sp.add_argument("--jobs", type=int, default=None, help="worker thread cap")


def build_parser():
    p = argparse.ArgumentParser(prog="ecglab",
                                description="ECG classification and augmentation pipeline")
    sub = p.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("prepare", help="turn raw records into dataset shards")
    _add_common(sp)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_prepare)

    sp = sub.add_parser("train-single", help="train the single-dataset classifier")
    _add_common(sp)
    sp.add_argument("--data", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--resume", help="checkpoint to continue from")
    sp.set_defaults(func=cmd_train_single)

    sp = sub.add_parser("train-multi", help="train the dual-dataset classifier")
    _add_common(sp)
    sp.add_argument("--data-a", required=True)
    sp.add_argument("--data-b", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--resume")
    sp.set_defaults(func=cmd_train_multi)

    sp = sub.add_parser("train-diffusion", help="train a per-class generator")
    _add_common(sp)
    sp.add_argument("--data", required=True)
    sp.add_argument("--class-name", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--resume")
    sp.set_defaults(func=cmd_train_diffusion)

    sp = sub.add_parser("generate", help="sample segments from a generator checkpoint")
    _add_common(sp)
    sp.add_argument("--model", required=True)
    sp.add_argument("--count", type=int, required=True)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_generate)

    sp = sub.add_parser("augment",
                        help="train per-class generators and top up minority classes")
    _add_common(sp)
    sp.add_argument("--data", required=True)
    sp.add_argument("--class-name", action="append",
                    help="class to augment (repeatable; default: config augment_classes)")
    sp.add_argument("--count", type=int, default=None,
                    help="segments to add per class (default: config augment_count)")
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_augment)

    sp = sub.add_parser("eval", help="score a classifier checkpoint on a dataset")
    _add_common(sp)
    sp.add_argument("--model", required=True)
    sp.add_argument("--data", required=True)
    sp.add_argument("--subset", choices=("train", "val", "all"), default="val")
    sp.add_argument("--task", choices=("a", "b"), default="a")
    sp.add_argument("--aami", action="store_true",
                    help="also score after regrouping labels into AAMI categories")
    sp.add_argument("--csv", help="write the per-class table as CSV here")
    sp.add_argument("--out", help="write the JSON report here too")
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("report", help="generation-quality metrics real vs generated")
    _add_common(sp)
    sp.add_argument("--real", required=True)
    sp.add_argument("--gen", required=True)
    sp.add_argument("--class-name", help="restrict the real set to one class")
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_report)

    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args) or 0
    except (DataError, ConfigError, ShapeError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except NumericError as e:
        print(f"numeric error: {e}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
