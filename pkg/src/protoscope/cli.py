"""Command-line entry points.

    protoscope synth      generate a synthetic corpus
    protoscope train      fit a model, writing best/last checkpoints
    protoscope eval       metric tables and the per-image evaluation dump
    protoscope dor        diagnostic odds ratios from an evaluation dump
    protoscope interpret  explanation records for chosen cases
    protoscope adjust     DOR-guided weight adjustment -> new checkpoint
    protoscope serve      run the HTTP service

Configuration can come from a TOML or JSON file (--config) with
sections [synth], [model], [train], [eval], [serve]; command-line flags
override file values. Unknown sections or keys are rejected with exit
code 2, as are malformed flags; runtime failures exit 1. Every training
run writes its exact effective configuration into the run directory so
the run can be reproduced from that file alone.
"""

import argparse
import csv
import datetime
import json
import os
import sys

import numpy as np

from .backbone import AugmentConfig, BackboneConfig
from .checkpoint import load_checkpoint, save_checkpoint
from .errors import ConfigError
from .interpret import (compute_representatives, explain, localization_rate,
                        retrieval_accuracy, save_explanation)
from .intervene import adjustment_summary, global_adjust
from .metrics import DorReport, dor_reports
from .model import ModelConfig
from .synthetic import SynthSpec, generate_corpus, load_corpus
from .train import TrainConfig, evaluate, paper_hparams, restore_model, train

_SECTION_KEYS = {
    "synth": {"out_dir", "seed", "image_size", "train_per_class", "val_per_class",
              "test_per_class", "ood_count", "motif_delta", "noise_level",
              "confounder_prob"},
    "model": {"input_size", "in_channels", "channels", "kernel_size",
              "protos_per_class", "sim_eps", "alpha_cap", "proto_init",
              "cluster_mode"},
    "train": {"epochs", "freeze_epochs", "batch_size", "lr_backbone", "lr_head",
              "lr_protos", "lr_weights", "betas", "weight_decay",
              "lambda_cluster", "lambda_separation", "kl_ramp_epochs",
              "val_fraction", "seed", "eval_scores", "augment"},
    "eval": {"split", "scores", "batch_size"},
    "serve": {"host", "port", "state_dir", "top_n", "repr_count"},
}
_AUGMENT_KEYS = {"flip", "max_rotate_deg", "max_brightness"}


def load_config_file(path):
    """Parse TOML or JSON into a dict and validate every key."""
    if not os.path.exists(path):
        raise ConfigError(f"config file not found: {path}")
    if path.endswith(".json"):
        with open(path) as f:
            data = json.load(f)
    else:
        try:
            import tomllib as toml
        except ImportError:
            import tomli as toml
        with open(path, "rb") as f:
            try:
                data = toml.load(f)
            except toml.TOMLDecodeError as e:
                raise ConfigError(f"{path}: {e}")
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be a table")
    for section, values in data.items():
        if section not in _SECTION_KEYS:
            raise ConfigError(
                f"{path}: unknown section [{section}] "
                f"(known: {', '.join(sorted(_SECTION_KEYS))})")
        if not isinstance(values, dict):
            raise ConfigError(f"{path}: section [{section}] must be a table")
        for key in values:
            if key not in _SECTION_KEYS[section]:
                raise ConfigError(
                    f"{path}: unknown key '{key}' in [{section}] "
                    f"(known: {', '.join(sorted(_SECTION_KEYS[section]))})")
        if section == "train" and "augment" in values:
            for key in values["augment"]:
                if key not in _AUGMENT_KEYS:
                    raise ConfigError(
                        f"{path}: unknown key '{key}' in [train.augment]")
    return data


def apply_thread_limit(flag_value):
    """--threads beats PROTOSCOPE_THREADS; returns the applied limit."""
    n = flag_value
    if n is None:
        env = os.environ.get("PROTOSCOPE_THREADS")
        if env:
            try:
                n = int(env)
            except ValueError:
                raise ConfigError(f"PROTOSCOPE_THREADS={env!r} is not an integer")
    if n is None:
        return None
    if n < 1:
        raise ConfigError("thread limit must be >= 1")
    try:
        import threadpoolctl
        limiter = threadpoolctl.threadpool_limits(limits=n)
        apply_thread_limit._keep = limiter
    except ImportError:
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
            os.environ[var] = str(n)
    return n


def _json_default(obj):
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"not JSON serializable: {type(obj)}")


def write_json(path, payload):
    with open(path, "w") as f:
        json.dump(payload, f, indent=2, sort_keys=True, default=_json_default)
        f.write("\n")


# Fallbacks come from the dataclass defaults so the CLI can never
# drift from the library's calibrated values.

def build_model_config(section, class_names):
    bb_default = BackboneConfig()
    bb = BackboneConfig(
        input_size=int(section.get("input_size", bb_default.input_size)),
        in_channels=int(section.get("in_channels", bb_default.in_channels)),
        channels=tuple(section.get("channels", bb_default.channels)),
        kernel_size=int(section.get("kernel_size", bb_default.kernel_size)))
    default = ModelConfig(class_names=tuple(class_names), backbone=bb)
    return ModelConfig(
        class_names=tuple(class_names),
        backbone=bb,
        protos_per_class=int(section.get("protos_per_class",
                                         default.protos_per_class)),
        sim_eps=float(section.get("sim_eps", default.sim_eps)),
        alpha_cap=float(section.get("alpha_cap", default.alpha_cap)),
        proto_init=str(section.get("proto_init", default.proto_init)),
        cluster_mode=str(section.get("cluster_mode",
                                     default.cluster_mode))).validate()


def build_train_config(section, seed_override=None):
    default = TrainConfig()
    aug = section.get("augment", {})
    cfg = TrainConfig(
        epochs=int(section.get("epochs", default.epochs)),
        freeze_epochs=int(section.get("freeze_epochs", default.freeze_epochs)),
        batch_size=int(section.get("batch_size", default.batch_size)),
        lr_backbone=float(section.get("lr_backbone", default.lr_backbone)),
        lr_head=float(section.get("lr_head", default.lr_head)),
        lr_protos=float(section.get("lr_protos", default.lr_protos)),
        lr_weights=float(section.get("lr_weights", default.lr_weights)),
        betas=tuple(section.get("betas", default.betas)),
        weight_decay=float(section.get("weight_decay", default.weight_decay)),
        lambda_cluster=float(section.get("lambda_cluster",
                                         default.lambda_cluster)),
        lambda_separation=float(section.get("lambda_separation",
                                            default.lambda_separation)),
        kl_ramp_epochs=int(section.get("kl_ramp_epochs",
                                       default.kl_ramp_epochs)),
        val_fraction=float(section.get("val_fraction", default.val_fraction)),
        seed=int(section.get("seed", default.seed)
                 if seed_override is None else seed_override),
        augment=AugmentConfig(
            flip=bool(aug.get("flip", default.augment.flip)),
            max_rotate_deg=float(aug.get("max_rotate_deg",
                                         default.augment.max_rotate_deg)),
            max_brightness=float(aug.get("max_brightness",
                                         default.augment.max_brightness))),
        eval_scores=str(section.get("eval_scores", default.eval_scores)))
    return cfg.validate()


# -- subcommands -----------------------------------------------------------------

def cmd_synth(args, config):
    section = dict(config.get("synth", {}))
    if args.out:
        section["out_dir"] = args.out
    if args.seed is not None:
        section["seed"] = args.seed
    if "out_dir" not in section:
        raise ConfigError("synth needs --out or [synth].out_dir")
    spec = SynthSpec(**section)
    corpus = generate_corpus(spec)
    counts = {}
    for r in corpus.records:
        counts[r.split] = counts.get(r.split, 0) + 1
    print(f"corpus written to {spec.out_dir}")
    for split in ("train", "val", "test", "ood"):
        print(f"  {split:5s} {counts.get(split, 0):5d} images")
    return 0


def cmd_train(args, config):
    corpus = load_corpus(args.corpus)
    t_section = dict(config.get("train", {}))
    train_config = build_train_config(t_section, seed_override=args.seed)
    if args.paper_hparams:
        train_config = paper_hparams(train_config)
    model_config = build_model_config(config.get("model", {}), corpus.class_names)

    stamp = datetime.datetime.now(datetime.timezone.utc).strftime("%Y%m%dT%H%M%SZ")
    run_dir = os.path.join(args.out, f"{stamp}-seed{train_config.seed}")
    os.makedirs(run_dir, exist_ok=True)
    effective = {"model": model_config.to_dict(), "train": train_config.to_dict()}
    write_json(os.path.join(run_dir, "effective_config.json"), effective)
    print(f"run directory: {run_dir}")
    print(json.dumps(effective, sort_keys=True))

    result = train(corpus, train_config, model_config, out_dir=run_dir,
                   resume_from=args.resume, log=print)
    write_json(os.path.join(run_dir, "history.json"), result.history)
    best_epoch = result.best.extra["best_epoch"]
    print(f"best epoch {best_epoch}: "
          f"val auroc {result.history[best_epoch]['val_auroc']:.4f}")
    print(f"checkpoints: {result.best_path} {result.last_path}")
    return 0


def _rates_row(name, auroc_val, rates_entry):
    def fmt(v):
        return "-" if v is None else f"{v:.4f}"
    return (name, fmt(auroc_val), fmt(rates_entry["sensitivity"]),
            fmt(rates_entry["specificity"]), fmt(rates_entry["ppv"]))


def cmd_eval(args, config):
    section = dict(config.get("eval", {}))
    split = args.split or section.get("split", "test")
    scores = section.get("scores", "expected_p")
    batch_size = int(section.get("batch_size", 64))
    corpus = load_corpus(args.corpus)
    ckpt = load_checkpoint(args.checkpoint)
    model = restore_model(ckpt)
    result = evaluate(model, corpus.images(split), corpus.labels(split),
                      ids=corpus.ids(split), batch_size=batch_size,
                      eval_scores=scores)
    os.makedirs(args.out, exist_ok=True)

    meta = {"checkpoint": args.checkpoint,
            "bank_version": model.bank.version(),
            "class_names": list(model.bank.class_names),
            "per_class": model.bank.per_class,
            "split": split,
            "eval_scores": scores}
    write_json(os.path.join(args.out, "eval_meta.json"), meta)
    write_json(os.path.join(args.out, "metrics.json"),
               {"meta": meta, "metrics": result.metrics})

    with open(os.path.join(args.out, "eval_dump.jsonl"), "w") as f:
        for row in result.records():
            f.write(json.dumps(row, sort_keys=True) + "\n")

    header = ("class", "auroc", "sensitivity", "specificity", "ppv")
    rows = [header]
    for ci, name in enumerate(model.bank.class_names):
        rows.append(_rates_row(name, result.metrics["per_class_auroc"][ci],
                               result.metrics["per_class"][ci]))
    rows.append(_rates_row("macro", result.metrics["macro_auroc"],
                           result.metrics["macro_rates"]))
    with open(os.path.join(args.out, "metrics.csv"), "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerows(rows)
        writer.writerow([])
        writer.writerow(["kappa", f"{result.metrics['kappa']:.6f}"])
        writer.writerow(["accuracy", f"{result.metrics['accuracy']:.6f}"])

    widths = [max(len(str(r[i])) for r in rows) for i in range(len(header))]
    lines = ["  ".join(str(cell).ljust(widths[i]) for i, cell in enumerate(row))
             for row in rows]
    lines.append("")
    lines.append(f"kappa    {result.metrics['kappa']:.4f}")
    lines.append(f"accuracy {result.metrics['accuracy']:.4f}")
    table = "\n".join(lines) + "\n"
    with open(os.path.join(args.out, "table.txt"), "w") as f:
        f.write(table)
    print(table, end="")
    return 0


def _load_dump(dump_path):
    rows = []
    with open(dump_path) as f:
        for line in f:
            line = line.strip()
            if line:
                rows.append(json.loads(line))
    if not rows:
        raise ConfigError(f"{dump_path} is empty")
    return rows


def cmd_dor(args, config):
    rows = _load_dump(args.dump)
    meta_path = os.path.join(os.path.dirname(args.dump) or ".", "eval_meta.json")
    if not os.path.exists(meta_path):
        raise ConfigError(f"expected {meta_path} next to the dump")
    with open(meta_path) as f:
        meta = json.load(f)
    labels = np.array([r["label"] for r in rows])
    max_sims = np.array([r["max_sims"] for r in rows])
    k = len(meta["class_names"])
    reports, summary = dor_reports(max_sims, labels, k, meta["per_class"],
                                   zero_nonsignificant=args.zero_nonsignificant)
    os.makedirs(args.out, exist_ok=True)
    payload = {
        "bank_version": meta["bank_version"],
        "class_names": meta["class_names"],
        "per_class": meta["per_class"],
        "split": meta["split"],
        "zero_nonsignificant": bool(args.zero_nonsignificant),
        "summary": summary,
        "reports": [reports[key].to_dict() for key in sorted(reports)],
    }
    write_json(os.path.join(args.out, "dor.json"), payload)

    with open(os.path.join(args.out, "dor.csv"), "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["prototype", "target_class", "dor", "ci_low", "ci_high",
                         "significant", "corrected"])
        for key in sorted(reports):
            r = reports[key]
            writer.writerow([r.prototype, r.target_class, f"{r.dor:.6g}",
                             f"{r.ci_low:.6g}", f"{r.ci_high:.6g}",
                             int(r.significant), int(r.corrected)])
    own = [reports[(f"P{i}", i // meta["per_class"])]
           for i in range(k * meta["per_class"])]
    n_sig = sum(r.significant for r in own)
    print(f"{n_sig}/{len(own)} prototypes significant for their own class")
    print(f"wrote {os.path.join(args.out, 'dor.json')}")
    return 0


def cmd_interpret(args, config):
    corpus = load_corpus(args.corpus)
    model = restore_model(load_checkpoint(args.checkpoint))
    os.makedirs(args.out, exist_ok=True)
    case_ids = args.case or corpus.ids("test")[:3]
    for cid in case_ids:
        image = corpus.image_by_id(cid)
        expl = explain(model, image, case_id=cid, top_n=args.top)
        path = save_explanation(expl, args.out)
        print(f"{cid}: predicted {expl.class_names[expl.predicted_class()]}, "
              f"entropy {expl.entropy:.3f} -> {path}")

    reps = compute_representatives(model, corpus, per_proto=5)
    acc = retrieval_accuracy(reps, model.bank)
    write_json(os.path.join(args.out, "retrieval.json"), {
        "accuracy": acc,
        "representatives": {pid: [r.to_dict() for r in rs]
                            for pid, rs in reps.items()}})
    loc_rate, hits, total = localization_rate(model, corpus)
    write_json(os.path.join(args.out, "localization.json"),
               {"rate": loc_rate, "hits": hits, "total": total})
    print(f"retrieval acc@1 macro {acc['acc@1']['macro']:.3f}, "
          f"localization {loc_rate:.3f} ({hits}/{total})")
    return 0


def cmd_adjust(args, config):
    ckpt = load_checkpoint(args.checkpoint)
    model = restore_model(ckpt)
    with open(args.dor) as f:
        payload = json.load(f)
    if payload["bank_version"] != model.bank.version():
        print("error: DOR report was computed against a different bank version",
              file=sys.stderr)
        return 1
    reports = {}
    for d in payload["reports"]:
        reports[(d["prototype"], d["target_class"])] = DorReport(
            prototype=d["prototype"], target_class=d["target_class"],
            cells=tuple(d["cells"]), corrected=d["corrected"], dor=d["dor"],
            ci_low=d["ci_low"], ci_high=d["ci_high"],
            significant=d["significant"])
    new_bank = global_adjust(model.bank, reports)
    deltas = adjustment_summary(model.bank, new_bank, reports)

    ckpt.tensors["protos.w"] = new_bank.w.values.copy()
    ckpt.extra = dict(ckpt.extra)
    ckpt.extra["bank_version"] = new_bank.version()
    ckpt.extra["adjusted_from"] = model.bank.version()
    save_checkpoint(ckpt, args.out)
    report_path = args.out + ".adjustment.json"
    write_json(report_path, {
        "bank_before": model.bank.version(),
        "bank_after": new_bank.version(),
        "deltas": [d.to_dict() for d in deltas]})
    changed = sum(1 for d in deltas if d.before != d.after)
    print(f"adjusted {changed}/{len(deltas)} weights; "
          f"bank {model.bank.version()} -> {new_bank.version()}")
    print(f"wrote {args.out} and {report_path}")
    return 0


def cmd_serve(args, config):
    import uvicorn

    from .service import create_app
    section = dict(config.get("serve", {}))
    host = args.host or section.get("host", "127.0.0.1")
    port = args.port or int(section.get("port", 8000))
    state_dir = args.state or section.get("state_dir", "service_state")
    app = create_app(checkpoint_path=args.checkpoint, corpus_dir=args.corpus,
                     state_dir=state_dir, dor_path=args.dor,
                     top_n=int(section.get("top_n", 3)),
                     repr_count=int(section.get("repr_count", 5)),
                     frontend_dir=args.frontend)
    uvicorn.run(app, host=host, port=port)
    return 0


def build_parser():
    parser = argparse.ArgumentParser(prog="protoscope")
    parser.add_argument("--config", help="TOML or JSON configuration file")
    parser.add_argument("--threads", type=int, default=None,
                        help="BLAS thread limit (or PROTOSCOPE_THREADS)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic corpus")
    p.add_argument("--out", help="corpus directory")
    p.add_argument("--seed", type=int, default=None)

    p = sub.add_parser("train", help="train a model")
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True, help="parent of the run directory")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--resume", default=None, help="checkpoint to resume from")
    p.add_argument("--paper-hparams", action="store_true",
                   help="use the published training schedule")

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--split", default=None)

    p = sub.add_parser("dor", help="diagnostic odds ratios from an eval dump")
    p.add_argument("--dump", required=True, help="eval_dump.jsonl from eval")
    p.add_argument("--out", required=True)
    p.add_argument("--zero-nonsignificant", action="store_true",
                   help="zero non-significant own-class DORs in the summary")

    p = sub.add_parser("interpret", help="write explanation records")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--case", action="append", default=None,
                   help="corpus id to explain (repeatable)")
    p.add_argument("--top", type=int, default=3)

    p = sub.add_parser("adjust", help="apply DOR-guided weight adjustment")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--dor", required=True, help="dor.json from the dor command")
    p.add_argument("--out", required=True, help="adjusted checkpoint path")

    p = sub.add_parser("serve", help="run the HTTP service")
    p.add_argument("--checkpoint", default=None)
    p.add_argument("--corpus", default=None)
    p.add_argument("--state", default=None)
    p.add_argument("--host", default=None)
    p.add_argument("--port", type=int, default=None)
    p.add_argument("--dor", default=None)
    p.add_argument("--frontend", default=None, help="built workbench directory")

    return parser


_COMMANDS = {
    "synth": cmd_synth,
    "train": cmd_train,
    "eval": cmd_eval,
    "dor": cmd_dor,
    "interpret": cmd_interpret,
    "adjust": cmd_adjust,
    "serve": cmd_serve,
}


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        apply_thread_limit(args.threads)
        config = load_config_file(args.config) if args.config else {}
        return _COMMANDS[args.command](args, config)
    except ConfigError as e:
        print(f"configuration error: {e}", file=sys.stderr)
        return 2
    except Exception as e:  # runtime failures exit 1 with a diagnostic
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
