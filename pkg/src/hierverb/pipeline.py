"""End-to-end orchestration: sampling, training, evaluation, gradient checks."""
from __future__ import annotations

import copy
import json
import logging
import math
from dataclasses import dataclass
from itertools import product
from pathlib import Path
from typing import Sequence

import numpy as np

from .config import RunConfig
from .encoding import ToyEncoderParams, Vocab, encode_text, init_encoder
from .hierarchy import Hierarchy, build_hierarchy, load_hierarchy
from .losses import (
    FHC_VARIANTS,
    HCC_SOURCES,
    Example,
    LossConfig,
    backward,
    batch_loss,
    child_matrices,
    forward_probs,
    gold_columns,
)
from .metrics import EvalReport, PredictionRecord, evaluate
from .optim import Adam
from .sampler import (
    Document,
    SamplingError,
    SupportSet,
    filter_rare_paths,
    greedy_sample,
    load_dataset,
)
from .synth import synth_hierarchy
from .verbalizer import MODES, VerbalizerHead, decode, head_from_json, head_to_json, init_head

log = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "hierverb-checkpoint/1"


@dataclass
class Model:
    hierarchy: Hierarchy
    vocab: Vocab
    encoder: ToyEncoderParams
    head: VerbalizerHead
    truncate_length: int = 512
    threshold: float = 0.5

    def example(self, doc: Document) -> Example:
        inp = encode_text(self.vocab, doc.text, self.hierarchy.depth, self.truncate_length)
        return Example(inp, tuple(gold_columns(self.hierarchy, doc.labels)))

    def params(self) -> dict:
        return {"E": self.encoder.E, "A": self.encoder.A, "u": self.encoder.u, "W": self.head.W, "b": self.head.b}

    def predict(self, docs: Sequence[Document]) -> list[PredictionRecord]:
        out = []
        for doc in docs:
            probs = forward_probs(self.encoder, self.head, [self.example(doc).inp])
            pred = decode([p[0] for p in probs], self.head.mode, self.hierarchy, self.threshold)
            out.append(PredictionRecord(doc.id, doc.labels, frozenset(pred)))
        return out

    def evaluate(self, docs: Sequence[Document]) -> EvalReport:
        return evaluate(self.predict(docs), self.hierarchy)


def new_model(cfg: RunConfig, h: Hierarchy, train_docs: Sequence[Document]) -> Model:
    vocab = Vocab.build((d.text for d in train_docs), h.depth, extra=(n.name for n in h.nodes))
    rng = np.random.default_rng([cfg["seed"], 0])
    enc = init_encoder(len(vocab), h.depth, cfg["encoder.r"], cfg["encoder.dropout"], rng)
    head = init_head(h, enc.E, vocab, cfg["mode"])
    return Model(h, vocab, enc, head, cfg["truncate_length"], cfg["decode.threshold"])


# --------------------------------------------------------------------------
# checkpoints


def _matrix(a: np.ndarray) -> list:
    if not np.all(np.isfinite(a)):
        raise ValueError("refusing to checkpoint non-finite weights")
    return a.tolist()


def checkpoint_dict(model: Model) -> dict:
    enc = model.encoder
    return {
        "format": CHECKPOINT_FORMAT,
        "hierarchy": model.hierarchy.to_edges(),
        "vocab": model.vocab.to_json(),
        "truncate_length": model.truncate_length,
        "threshold": model.threshold,
        "encoder": {
            "vocab_size": enc.E.shape[0],
            "D": enc.depth,
            "r": enc.r,
            "dropout": enc.dropout,
            "E": _matrix(enc.E),
            "A": _matrix(enc.A),
            "u": _matrix(enc.u),
        },
        "head": head_to_json(model.head),
    }


def save_checkpoint(model: Model, path: str | Path) -> None:
    Path(path).write_text(json.dumps(checkpoint_dict(model)) + "\n", encoding="utf-8")


def load_checkpoint(path: str | Path, h: Hierarchy | None = None) -> Model:
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    if data.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"{path} is not a {CHECKPOINT_FORMAT} file")
    saved_h = build_hierarchy([tuple(e) for e in data["hierarchy"]])
    if h is not None and (h.to_edges() != saved_h.to_edges()):
        raise ValueError("checkpoint shape does not match the hierarchy")
    e = data["encoder"]
    V, D, r = e["vocab_size"], e["D"], e["r"]
    enc = ToyEncoderParams(
        E=np.asarray(e["E"], dtype=np.float64).reshape(V, r),
        A=np.asarray(e["A"], dtype=np.float64).reshape(D, r, r),
        u=np.asarray(e["u"], dtype=np.float64).reshape(D, r),
        dropout=e["dropout"],
    )
    head = head_from_json(data["head"])
    if head.layer_sizes != saved_h.layer_sizes or head.r != r or head.depth != D:
        raise ValueError("checkpoint head shape does not match its hierarchy")
    return Model(saved_h, Vocab.from_json(data["vocab"]), enc, head, data["truncate_length"], data["threshold"])


# --------------------------------------------------------------------------
# sampling


def sample(cfg: RunConfig, dataset: Sequence[Document]) -> SupportSet:
    filtered, paths = filter_rare_paths(dataset, cfg["k"])
    return greedy_sample(filtered, paths, cfg["k"], cfg["seed"], cfg["sample.order"])


def make_dev_set(cfg: RunConfig, dataset: Sequence[Document], support: SupportSet) -> list[Document]:
    """A second, disjoint K-shot sample drawn with ``seed + 1``.

    When the leftover documents cannot cover every support path K times the
    whole leftover pool (restricted to support paths) is used instead.
    """
    taken = {d.id for d in support.documents}
    paths = set(support.counts)
    rest = [d for d in dataset if d.id not in taken and d.paths <= paths]
    try:
        filtered, kept = filter_rare_paths(rest, cfg["k"])
        if set(kept) == paths:
            return greedy_sample(filtered, kept, cfg["k"], cfg["seed"] + 1, cfg["sample.order"]).documents
    except SamplingError:
        pass
    return rest


def held_out(dataset: Sequence[Document], used: Sequence[Document]) -> list[Document]:
    ids = {d.id for d in used}
    return [d for d in dataset if d.id not in ids]


# --------------------------------------------------------------------------
# training


def train(
    cfg: RunConfig,
    h: Hierarchy,
    support: Sequence[Document],
    dev: Sequence[Document] = (),
) -> tuple[Model, list[dict]]:
    """Mini-batch Adam with linear decay; returns the best-on-dev model and a per-epoch log."""
    model = new_model(cfg, h, support)
    loss_cfg = cfg.loss
    examples = [model.example(d) for d in support]
    children = child_matrices(h)
    shuffle_rng = np.random.default_rng([cfg["seed"], 1])
    dropout_rng = np.random.default_rng([cfg["seed"], 2])

    bs = cfg["batch_size"]
    steps_per_epoch = math.ceil(len(examples) / bs)
    lr, vlr = cfg["lr"], cfg["verbalizer_lr"]
    opt = Adam(
        model.params(),
        {"E": lr, "A": lr, "u": lr, "W": vlr, "b": vlr},
        total_steps=cfg["epochs"] * steps_per_epoch,
        warmup_steps=cfg["warmup_steps"],
    )

    metric = cfg["early_stop_metric"]
    best_score = -math.inf
    best = copy.deepcopy((model.encoder, model.head))
    stale = 0
    history: list[dict] = []
    for epoch in range(1, cfg["epochs"] + 1):
        order = shuffle_rng.permutation(len(examples))
        sums = np.zeros(4)
        for b in range(steps_per_epoch):
            batch = [examples[i] for i in order[b * bs : (b + 1) * bs]]
            try:
                terms, grads = backward(model.encoder, model.head, batch, loss_cfg, dropout_rng, children)
            except FloatingPointError as err:
                raise FloatingPointError(f"epoch {epoch}, batch {b}: {err}") from None
            opt.step(grads)
            sums += [terms.classification, terms.hcc, terms.fhc, terms.total]
        means = sums / steps_per_epoch
        entry = {
            "epoch": epoch,
            "classification": means[0],
            "hcc": means[1],
            "fhc": means[2],
            "total": means[3],
        }
        if dev:
            report = model.evaluate(dev)
            score = getattr(report, metric)
            entry["dev"] = {k: v for k, v in report.__dict__.items() if k != "per_layer"}
        else:
            score = float(epoch)
        improved = score > best_score
        if improved:
            best_score = score
            best = copy.deepcopy((model.encoder, model.head))
            stale = 0
        else:
            stale += 1
        entry["best"] = improved
        history.append(entry)
        log.info("epoch %d loss %.4f dev %s %.4f", epoch, means[3], metric, score)
        if dev and stale >= cfg["patience"]:
            break
    model.encoder, model.head = best
    return model, history


# --------------------------------------------------------------------------
# gradient check


def _relative_error(a: np.ndarray, n: np.ndarray, floor: float) -> float:
    diff = np.abs(a - n)
    scale = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
    return float((diff / scale).max()) if diff.size else 0.0


def numeric_grad(f, arr: np.ndarray, step: float) -> np.ndarray:
    out = np.zeros_like(arr)
    flat = arr.reshape(-1)
    g = out.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        up = f()
        flat[i] = orig - step
        down = f()
        flat[i] = orig
        g[i] = (up - down) / (2 * step)
    return out


def gradcheck_problem(cfg: RunConfig, mode: str, rng: np.random.Generator):
    """A small random model and batch for finite-difference checks (dropout off)."""
    D = cfg["gradcheck.depth"]
    h = synth_hierarchy([2] * D)
    words = [f"t{i}" for i in range(6)]
    names = [n.name for n in h.nodes]
    docs = []
    for i in range(cfg["gradcheck.batch"]):
        k = 1 if mode == "single_path" else int(rng.integers(1, 3))
        leaves = rng.choice(len(h.leaf_paths), size=k, replace=False)
        labels = frozenset().union(*(h.leaf_paths[j].nodes for j in leaves))
        text = " ".join(rng.choice(words + names, size=int(rng.integers(3, 7))))
        docs.append(Document(f"g{i}", text, labels, frozenset(int(j) for j in leaves)))
    vocab = Vocab.build([d.text for d in docs], D, extra=names[:2])
    r = cfg["gradcheck.r"]
    enc = init_encoder(len(vocab), D, r, 0.0, rng)
    enc.E = rng.normal(0.0, 0.5, size=enc.E.shape)
    head = init_head(h, enc.E, vocab, mode)
    head.W = [rng.normal(0.0, 0.5, size=w.shape) for w in head.W]
    head.b = [rng.normal(0.0, 0.5, size=x.shape) for x in head.b]
    model = Model(h, vocab, enc, head)
    return model, [model.example(d) for d in docs]


def gradcheck(cfg: RunConfig) -> tuple[list[dict], bool]:
    """Analytic vs. central-difference gradients for every parameter group
    under every (mode, contrastive variant, constraint source) combination."""
    step, tol = cfg["gradcheck.step"], cfg["gradcheck.tol"]
    base = cfg.loss
    rows = []
    ok = True
    for mode, variant, source in product(MODES, FHC_VARIANTS, HCC_SOURCES):
        rng = np.random.default_rng([cfg["seed"], MODES.index(mode)])
        model, batch = gradcheck_problem(cfg, mode, rng)
        lc = LossConfig(
            lambda1=base.lambda1, lambda2=base.lambda2, alpha=base.alpha, beta=base.beta,
            mode=mode, fhc_variant=variant, hcc_source=source,
            fhc_include_self=base.fhc_include_self, tau=base.tau,
        )
        children = child_matrices(model.hierarchy)
        _, grads = backward(model.encoder, model.head, batch, lc, None, children, train_mode=False)
        _, fhc_only = backward(
            model.encoder, model.head, batch, lc, None, children, train_mode=False,
            weights=(0.0, 0.0, lc.lambda2),
        )

        def f():
            return batch_loss(model.encoder, model.head, batch, lc, None, children, train_mode=False)

        params = model.params()
        for group in ("E", "A", "u", "W", "b"):
            arrays = params[group] if isinstance(params[group], list) else [params[group]]
            analytic = grads[group] if isinstance(grads[group], list) else [grads[group]]
            fhc = fhc_only[group] if isinstance(fhc_only[group], list) else [fhc_only[group]]
            err = max(
                _relative_error(a, numeric_grad(f, p, step), 1e-6) for p, a in zip(arrays, analytic)
            )
            passed = err <= tol
            ok &= passed
            rows.append({
                "mode": mode,
                "fhc_variant": variant,
                "hcc_source": source,
                "group": group,
                "max_rel_error": err,
                "fhc_max_abs": max(float(np.abs(g).max()) for g in fhc),
                "pass": passed,
            })
    return rows, ok


def format_gradcheck(rows: list[dict]) -> str:
    lines = [f"{'mode':<12} {'fhc':<10} {'hcc':<9} {'group':<5} {'rel_err':>10} {'fhc|g|':>10}  result"]
    for r in rows:
        lines.append(
            f"{r['mode']:<12} {r['fhc_variant']:<10} {r['hcc_source']:<9} {r['group']:<5} "
            f"{r['max_rel_error']:>10.2e} {r['fhc_max_abs']:>10.2e}  {'PASS' if r['pass'] else 'FAIL'}"
        )
    return "\n".join(lines)


def load_inputs(cfg: RunConfig) -> tuple[Hierarchy, list[Document]]:
    h = load_hierarchy(cfg["hierarchy"])
    return h, load_dataset(cfg["dataset"], h)
