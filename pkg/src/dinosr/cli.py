"""Command line: gen-data, pretrain, extract, metrics, abx, inspect.

Exit codes: 0 success, 2 usage error, 3 invalid input or config,
4 runtime failure (for example a diverged run).
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import abx as abx_mod
from .codebook import CodebookError
from .config import ConfigError, RunConfig
from .formats import FormatError, read_checkpoint_file
from .inference import student_posteriors, student_states, teacher_codes
from .metrics import DegenerateError, cluster_quality, codebook_perplexity, export_analysis, joint_counts
from .synthdata import gen_corpus, read_corpus, write_corpus
from .trainer import DivergenceError, init_train_state, load_checkpoint, pretrain, save_checkpoint

log = logging.getLogger("dinosr")

EXIT_OK, EXIT_USAGE, EXIT_INVALID, EXIT_RUNTIME = 0, 2, 3, 4


class UsageError(Exception):
    pass


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _load_config(args) -> RunConfig:
    cfg = RunConfig.load(args.config) if args.config else RunConfig()
    if getattr(args, "seed", None) is not None:
        cfg.with_seed(args.seed)
    return cfg


def _phone_names(data_dir: Path) -> list[str] | None:
    path = data_dir / "phones.json"
    if not path.exists():
        return None
    mapping = json.loads(path.read_text(encoding="utf-8"))
    return [mapping[str(i)] for i in range(len(mapping))]


def _corpus(cfg: RunConfig, data_dir):
    """Feature files from ``data_dir`` (or the config's corpus_dir), else a
    freshly generated synthetic corpus."""
    src = data_dir or cfg.data.corpus_dir
    if src:
        return read_corpus(src), _phone_names(Path(src))
    inv = cfg.data.inventory(cfg.model.feature_dim)
    corpus = gen_corpus(inv, cfg.data.utterance_count, cfg.data.T, seed=cfg.seed, zipf_exponent=cfg.data.zipf_exponent)
    return corpus, inv.names


# subcommands -----------------------------------------------------------------

def cmd_gen_data(args) -> int:
    cfg = _load_config(args)
    inv = cfg.data.inventory(cfg.model.feature_dim)
    corpus = gen_corpus(inv, cfg.data.utterance_count, cfg.data.T, seed=cfg.seed, zipf_exponent=cfg.data.zipf_exponent)
    write_corpus(corpus, args.out, inv.names)
    frames = sum(u.T for u in corpus)
    print(f"wrote {len(corpus)} utterances ({frames} frames) to {args.out}")
    return EXIT_OK


def cmd_pretrain(args) -> int:
    cfg = _load_config(args)
    corpus, _ = _corpus(cfg, args.data)
    out = Path(args.out or cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    if args.resume:
        state = load_checkpoint(args.resume)
    else:
        state = init_train_state(cfg.model, cfg.train)
    steps = args.steps if args.steps is not None else cfg.train.lr_schedule.total - state.step
    if steps < 0:
        raise UsageError("--steps must be >= 0")
    (out / "config.json").write_text(cfg.to_json(), encoding="utf-8")

    rows = []

    def on_step(m):
        rows.append(m)
        if args.log_every and m["step"] % args.log_every == 0:
            log.info("step %d loss %.4f lr %.3g lambda %.6f", m["step"], m["loss"], m["lr"], m["lambda"])

    try:
        state = pretrain(state, corpus, steps, checkpoint_dir=out, on_step=on_step)
    finally:
        if rows:
            _write_step_csv(out / "metrics.csv", rows, append=bool(args.resume))
    save_checkpoint(state, out / "final.dsrc")
    print(f"trained to step {state.step}; checkpoint {out / 'final.dsrc'}")
    return EXIT_OK


def _write_step_csv(path: Path, rows: list[dict], append: bool) -> None:
    keys = list(rows[0])
    mode = "a" if append and path.exists() else "w"
    with open(path, mode, newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        if mode == "w":
            w.writerow(keys)
        for r in rows:
            w.writerow([f"{r[k]:.8g}" if isinstance(r[k], float) else r[k] for k in keys])


def cmd_extract(args) -> int:
    state = load_checkpoint(args.checkpoint)
    corpus = read_corpus(args.data)
    layers = _parse_layers(args.layers, state.model_config.target_layers)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    codes = teacher_codes(state, corpus, layers)
    post = student_posteriors(state, corpus, layers)
    for k in layers:
        np.save(out / f"codes_L{k}.npy", np.concatenate(codes[k]).astype(np.int64))
        np.save(out / f"posteriors_L{k}.npy", np.concatenate(post[k]).astype(np.float32))
    has_labels = all(u.labels is not None for u in corpus)
    if has_labels:
        np.save(out / "labels.npy", np.concatenate([u.labels for u in corpus]).astype(np.int64))
    names = _phone_names(Path(args.data))
    index = {
        "checkpoint_step": state.step,
        "layers": layers,
        "V": state.model_config.V,
        "labels": has_labels,
        "phones": names,
        "utterances": [{"id": u.id, "T": u.T} for u in corpus],
    }
    _write_json(out / "index.json", index)
    print(f"extracted layers {layers} for {len(corpus)} utterances to {out}")
    return EXIT_OK


def _parse_layers(spec, valid):
    if not spec:
        return list(valid)
    try:
        layers = [int(v) for v in spec.split(",")]
    except ValueError:
        raise UsageError(f"--layers expects comma-separated integers, got {spec!r}") from None
    bad = [k for k in layers if k not in valid]
    if bad:
        raise ConfigError(f"layers {bad} are not clustered layers {list(valid)}")
    return layers


def cmd_metrics(args) -> int:
    src = Path(args.extracted)
    index = json.loads((src / "index.json").read_text(encoding="utf-8"))
    if not index.get("labels"):
        raise ConfigError("extracted corpus has no phone labels")
    labels = np.load(src / "labels.npy")
    names = index.get("phones")
    P = len(names) if names else int(labels.max()) + 1
    out = Path(args.out or src)
    out.mkdir(parents=True, exist_ok=True)
    report = {"layers": {}}
    table = []
    for k in index["layers"]:
        codes = np.load(src / f"codes_L{k}.npy")
        C = joint_counts(codes, labels, index["V"], P)
        q = cluster_quality(C)
        q["perplexity"] = codebook_perplexity(C.code_usage)
        report["layers"][str(k)] = q
        table.append([k, q["phn_purity"], q["cls_purity"], q["pnmi"], q["active_clusters"], q["perplexity"]])
        export_analysis(C, out / f"L{k}", names)
    best = max(index["layers"], key=lambda k: report["layers"][str(k)]["pnmi"])
    report["best_layer"] = best
    report["frames"] = int(labels.size)
    _write_json(out / "report.json", report)
    with open(out / "layers.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["layer", "phn_purity", "cls_purity", "pnmi", "active_clusters", "perplexity"])
        for row in table:
            w.writerow([row[0]] + [f"{v:.6f}" if isinstance(v, float) else v for v in row[1:]])
    print("layer  phn_purity  cls_purity  pnmi    active  perplexity")
    for row in table:
        print(f"{row[0]:>5}  {row[1]:10.4f}  {row[2]:10.4f}  {row[3]:.4f}  {row[4]:6d}  {row[5]:10.2f}")
    return EXIT_OK


def cmd_abx(args) -> int:
    corpus = read_corpus(args.data)
    names = _phone_names(Path(args.data))
    cfg = _load_config(args)
    n_triples = args.triples or cfg.eval.abx_triples
    if args.manifest:
        triples = abx_mod.read_manifest(args.manifest, names)
    else:
        triples = abx_mod.sample_triples(abx_mod.triphone_items(corpus), n_triples, seed=cfg.seed)
    ids = [u.id for u in corpus]

    if args.representation == "frames":
        reps = [u.frames for u in corpus]
        layer = None
        kind = args.kind or "cosine"
    else:
        if not args.checkpoint:
            raise UsageError("--checkpoint is required unless --representation frames")
        state = load_checkpoint(args.checkpoint)
        K, N = state.model_config.K, state.model_config.N
        layer = args.layer or cfg.eval.abx_layer or abx_mod.default_layer(K, N)
        if args.representation == "posteriors":
            if layer not in state.model_config.target_layers:
                raise ConfigError(f"layer {layer} has no prediction head")
            reps = student_posteriors(state, corpus, [layer])[layer]
            kind = args.kind or "js"
        else:
            reps = student_states(state, corpus, layer)
            kind = args.kind or "cosine"
    by_id = dict(zip(ids, reps))
    missing = {r.utt for tri in triples for r in tri} - set(by_id)
    if missing:
        raise ConfigError(f"manifest refers to unknown utterances: {sorted(missing)[:3]}")
    rate = abx_mod.abx_error_rate(abx_mod.materialize(triples, by_id), kind)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    abx_mod.write_manifest(triples, out / "abx_manifest.csv", names)
    report = {"error_rate": rate, "triples": len(triples), "kind": kind,
              "representation": args.representation, "layer": layer}
    _write_json(out / "abx_report.json", report)
    print(f"ABX error rate {rate:.4f} over {len(triples)} triples ({args.representation}, {kind})")
    return EXIT_OK


def cmd_inspect(args) -> int:
    tensors, meta = read_checkpoint_file(args.checkpoint)
    if args.tensors:
        meta = dict(meta)
        meta["tensors"] = {name: list(t.shape) for name, t in tensors.items()}
    print(json.dumps(meta, indent=2, sort_keys=True))
    return EXIT_OK


# parser ------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="dinosr", description="Masked self-distillation with online clustering.")
    p.add_argument("--log-level", default="INFO", choices=["DEBUG", "INFO", "WARNING", "ERROR"],
                   help="verbosity of progress messages on stderr")
    sub = p.add_subparsers(dest="command", metavar="COMMAND")
    sub.required = True

    def config_flags(sp, seed=True):
        sp.add_argument("--config", help="JSON run config; base profile when omitted")
        if seed:
            sp.add_argument("--seed", type=int, help="override the config seed")

    g = sub.add_parser("gen-data", help="write a synthetic phone-labelled corpus")
    config_flags(g)
    g.add_argument("--out", required=True, help="output directory for .dsrf files and phones.json")
    g.set_defaults(func=cmd_gen_data)

    t = sub.add_parser("pretrain", help="train a model and write checkpoints")
    config_flags(t)
    t.add_argument("--data", help="directory of .dsrf files (default: config data section)")
    t.add_argument("--out", help="run directory (default: config output_dir)")
    t.add_argument("--steps", type=int, help="number of steps (default: to the end of the lr schedule)")
    t.add_argument("--resume", help="continue from this checkpoint")
    t.add_argument("--log-every", type=int, default=100, help="log a progress line every N steps (0: never)")
    t.set_defaults(func=cmd_pretrain)

    e = sub.add_parser("extract", help="teacher codes and student posteriors for a corpus")
    e.add_argument("--checkpoint", required=True, help="checkpoint file (.dsrc)")
    e.add_argument("--data", required=True, help="directory of .dsrf files")
    e.add_argument("--out", required=True, help="output directory")
    e.add_argument("--layers", help="comma-separated clustered layers (default: all)")
    e.set_defaults(func=cmd_extract)

    m = sub.add_parser("metrics", help="purity, PNMI and perplexity per layer")
    m.add_argument("--extracted", required=True, help="directory written by extract")
    m.add_argument("--out", help="report directory (default: the extracted directory)")
    m.set_defaults(func=cmd_metrics)

    a = sub.add_parser("abx", help="ABX error rate on triphone triples")
    config_flags(a)
    a.add_argument("--data", required=True, help="directory of labelled .dsrf files")
    a.add_argument("--checkpoint", help="checkpoint file (.dsrc)")
    a.add_argument("--out", required=True, help="output directory")
    a.add_argument("--representation", choices=["posteriors", "states", "frames"], default="posteriors",
                   help="student head posteriors, student block states, or raw input frames")
    a.add_argument("--kind", choices=["js", "cosine"], help="framewise distance (default depends on representation)")
    a.add_argument("--layer", type=int, help="layer to read (default: 5 if clustered, else lowest clustered)")
    a.add_argument("--triples", type=int, help="number of triples to sample (default: config eval.abx_triples)")
    a.add_argument("--manifest", help="score the triples of this manifest instead of sampling")
    a.set_defaults(func=cmd_abx)

    i = sub.add_parser("inspect", help="print checkpoint metadata")
    i.add_argument("checkpoint", help="checkpoint file (.dsrc)")
    i.add_argument("--tensors", action="store_true", help="also list tensor names and shapes")
    i.set_defaults(func=cmd_inspect)
    return p


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else EXIT_OK
    logging.basicConfig(level=args.log_level, format="%(levelname)s %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ConfigError, FormatError, DegenerateError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (DivergenceError, CodebookError) as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (OSError, RuntimeError) as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


def main() -> None:
    sys.exit(run())
