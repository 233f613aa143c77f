"""``hierverb synth|sample|train|eval|gradcheck``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import pipeline
from .config import PRESETS, RunConfig, resolve
from .hierarchy import load_hierarchy, save_hierarchy
from .metrics import evaluate, write_predictions
from .sampler import SupportSet, load_dataset, write_dataset, write_support_set
from .synth import SyntheticSpec, synth_corpus


def _out(cfg: RunConfig, name: str) -> Path:
    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    return cfg.out_dir / name


def cmd_synth(cfg: RunConfig) -> int:
    spec = SyntheticSpec(
        branching=tuple(cfg["synth.branching"]),
        docs_per_path=cfg["synth.docs_per_path"],
        tokens_per_doc=cfg["synth.tokens_per_doc"],
        signal=cfg["synth.signal"],
        noise_vocab=cfg["synth.noise_vocab"],
        seed=cfg["seed"],
    )
    h, docs = synth_corpus(spec)
    for key in ("hierarchy", "dataset"):
        Path(cfg[key]).parent.mkdir(parents=True, exist_ok=True)
    save_hierarchy(h, cfg["hierarchy"])
    write_dataset(cfg["dataset"], docs, h)
    print(f"wrote {len(h)} labels ({len(h.leaf_paths)} paths) to {cfg['hierarchy']}")
    print(f"wrote {len(docs)} documents to {cfg['dataset']}")
    return 0


def _support(cfg: RunConfig, h, docs, write: bool = True) -> SupportSet:
    support = pipeline.sample(cfg, docs)
    if write:
        write_support_set(_out(cfg, "support.jsonl"), support, h)
    return support


def cmd_sample(cfg: RunConfig) -> int:
    h, docs = pipeline.load_inputs(cfg)
    support = _support(cfg, h, docs)
    print(f"K={cfg['k']} seed={cfg['seed']}: {len(support.documents)} documents, {len(support.counts)} paths")
    for path_id, count in sorted(support.counts.items()):
        names = "/".join(h.nodes[n].name for n in h.leaf_paths[path_id].nodes)
        print(f"  path {path_id:>4} {count:>4}  {names}")
    return 0


def _load_support(cfg: RunConfig, h, docs):
    path = cfg.out_dir / "support.jsonl"
    if path.exists():
        manifest = json.loads(path.with_suffix(".manifest.json").read_text(encoding="utf-8"))
        support_docs = load_dataset(path, h)
        counts = {int(k): v for k, v in manifest["path_counts"].items()}
        return SupportSet(support_docs, counts, manifest["K"], manifest["seed"], manifest["order"])
    return _support(cfg, h, docs)


def cmd_train(cfg: RunConfig) -> int:
    h, docs = pipeline.load_inputs(cfg)
    support = _load_support(cfg, h, docs)
    dev = pipeline.make_dev_set(cfg, docs, support)
    write_dataset(_out(cfg, "dev.jsonl"), dev, h)
    model, history = pipeline.train(cfg, h, support.documents, dev)
    pipeline.save_checkpoint(model, _out(cfg, "checkpoint.json"))
    _out(cfg, "train_log.json").write_text(json.dumps(history, indent=2) + "\n", encoding="utf-8")
    best = max((e for e in history if e["best"]), key=lambda e: e["epoch"])
    print(f"trained {len(history)} epochs; best epoch {best['epoch']}; checkpoint in {cfg.out_dir}")
    return 0


def cmd_eval(cfg: RunConfig) -> int:
    h = load_hierarchy(cfg["hierarchy"])
    model = pipeline.load_checkpoint(_out(cfg, "checkpoint.json"), h)
    if cfg["test"]:
        test = load_dataset(cfg["test"], h)
    else:
        docs = load_dataset(cfg["dataset"], h)
        support = load_dataset(cfg.out_dir / "support.jsonl", h)
        test = pipeline.held_out(docs, support)
    records = model.predict(test)
    report = evaluate(records, h)
    write_predictions(_out(cfg, "predictions.jsonl"), records, h)
    _out(cfg, "report.json").write_text(report.to_json(), encoding="utf-8")
    print(report.to_json(), end="")
    return 0


def cmd_gradcheck(cfg: RunConfig) -> int:
    rows, ok = pipeline.gradcheck(cfg)
    print(pipeline.format_gradcheck(rows))
    worst = max(r["max_rel_error"] for r in rows)
    print(f"max relative error {worst:.3e} (tolerance {cfg['gradcheck.tol']:g}): {'PASS' if ok else 'FAIL'}")
    return 0 if ok else 1


COMMANDS = {
    "synth": cmd_synth,
    "sample": cmd_sample,
    "train": cmd_train,
    "eval": cmd_eval,
    "gradcheck": cmd_gradcheck,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hierverb", description=__doc__)
    parser.add_argument("command", choices=sorted(COMMANDS))
    parser.add_argument("--config", help="flat JSON config file")
    parser.add_argument("--preset", choices=sorted(PRESETS))
    parser.add_argument("--seed", type=int)
    parser.add_argument("--k", type=int)
    parser.add_argument("--out-dir")
    parser.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    cfg = resolve(args.config, args.preset, {"seed": args.seed, "k": args.k, "out_dir": args.out_dir})
    try:
        return COMMANDS[args.command](cfg)
    except (ValueError, RuntimeError, FloatingPointError, OSError) as err:
        print(f"hierverb {args.command}: error: {err}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
