"""Command-line interface: train, decode, evaluate, analyze-bow, ablate.

Configuration is a flat key = value namespace. Values come from built-in
defaults, then an optional config file (``--config``), then command-line
flags, later sources winning. Every key has a mirrored flag (``k_len`` is
``--k-len``); boolean flags take an optional explicit value so a file
setting can be overridden either way (``--eos-gate`` or ``--eos-gate
false``). The effective configuration is frozen into the run directory as
``config.txt``.

A run directory defaults to ``$FPB_OUT_ROOT/<command>-<task>-seed<seed>``
(FPB_OUT_ROOT itself defaults to ``runs``). One seed pins everything:
data generation, parameter init, batch order, and dropout all derive their
streams from it.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
from dataclasses import dataclass
from pathlib import Path

from .data import (
    DataBundle,
    ParallelCorpus,
    Vocab,
    build_task,
    read_corpus,
    tokenize,
)
from .decoding import (
    ablation_run,
    bow_accuracy_curve,
    corpus_bleu,
    decode_corpus,
    length_accuracy,
)
from .errors import CheckpointError, ConfigError, ContractError, FpbError
from .model import FpbConfig, FpbModel
from .training import TrainConfig, train


@dataclass
class RunConfig:
    """The full flat configuration namespace."""

    # data
    task: str = "copy"
    train_file: str = ""
    dev_file: str = ""
    test_file: str = ""
    n_train: int = 2000
    n_dev: int = 200
    n_test: int = 200
    gen_vocab: int = 20
    len_min: int = 3
    len_max: int = 10
    vocab_max: int = 50000
    # model
    d_emb: int = 512
    d_hidden: int = 512
    k_heads: int = 4
    k_len: int = 50
    lambda1: float = 1.0
    lambda2: float = 1.0
    lambda3: float = 0.1
    dropout: float = 0.2
    use_bow: str = "auto"
    use_len: str = "auto"
    feedback_backprop: bool = False
    # optimization
    alpha: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    clip_norm: float = 10.0
    epochs: int = 15
    batch_size: int = 64
    seed: int = 1
    log_interval: int = 50
    patience: int = 3
    # decoding
    width: int = 10
    max_len: int = 50
    length_norm: bool = False
    eos_gate: bool = False
    eos_threshold: int = 1
    out_dir: str = ""


_FIELDS = {f.name: f for f in dataclasses.fields(RunConfig)}
_TRISTATE = ("use_bow", "use_len")
_TRUE = ("true", "1", "yes", "on")
_FALSE = ("false", "0", "no", "off")


def _coerce(name: str, raw: str):
    f = _FIELDS[name]
    kind = type(f.default)
    raw = raw.strip()
    if name in _TRISTATE:
        v = raw.lower()
        if v not in ("auto",) + _TRUE + _FALSE:
            raise ConfigError(f"config field {name}: expected auto/true/false, got {raw!r}")
        return "auto" if v == "auto" else ("true" if v in _TRUE else "false")
    if kind is bool:
        v = raw.lower()
        if v in _TRUE:
            return True
        if v in _FALSE:
            return False
        raise ConfigError(f"config field {name}: expected true/false, got {raw!r}")
    if kind is int:
        try:
            return int(raw)
        except ValueError:
            raise ConfigError(f"config field {name}: expected an integer, got {raw!r}") from None
    if kind is float:
        try:
            return float(raw)
        except ValueError:
            raise ConfigError(f"config field {name}: expected a number, got {raw!r}") from None
    return raw


def load_config_file(path) -> dict[str, str]:
    """Parse ``key = value`` lines; blank lines and # comments are ignored."""
    values: dict[str, str] = {}
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ConfigError(f"{path}: line {lineno} is not 'key = value'")
            key, _, value = line.partition("=")
            key = key.strip()
            if key not in _FIELDS:
                raise ConfigError(f"{path}: unknown config key {key!r} on line {lineno}")
            values[key] = value.strip()
    return values


def make_config(file_values: dict[str, str], overrides: dict[str, str]) -> RunConfig:
    """Defaults, then file values, then overrides; all raw strings coerced
    with per-field error messages. Unknown keys are rejected."""
    rc = RunConfig()
    for source in (file_values, overrides):
        for key, raw in source.items():
            if key not in _FIELDS:
                raise ConfigError(f"unknown config key {key!r}")
            setattr(rc, key, _coerce(key, raw))
    _validate(rc)
    return rc


def _validate(rc: RunConfig) -> None:
    if rc.len_min > rc.len_max:
        raise ConfigError(f"config field len_min: {rc.len_min} exceeds len_max {rc.len_max}")
    if rc.width < 1:
        raise ConfigError(f"config field width: must be >= 1, got {rc.width}")
    if rc.max_len < 1:
        raise ConfigError(f"config field max_len: must be >= 1, got {rc.max_len}")
    if rc.eos_threshold < 0:
        raise ConfigError(f"config field eos_threshold: must be >= 0, got {rc.eos_threshold}")


def write_config(path, rc: RunConfig) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for name in _FIELDS:
            v = getattr(rc, name)
            if isinstance(v, bool):
                v = "true" if v else "false"
            f.write(f"{name} = {v}\n")


def resolved_use_flags(rc: RunConfig) -> tuple[bool, bool]:
    use_bow = rc.lambda2 > 0 if rc.use_bow == "auto" else rc.use_bow == "true"
    use_len = rc.lambda3 > 0 if rc.use_len == "auto" else rc.use_len == "true"
    return use_bow, use_len


def model_config(rc: RunConfig, vocab_src: int, vocab_tgt: int) -> FpbConfig:
    # turning a head off (explicitly or via a zero weight) also zeroes its
    # loss weight, matching the ablation harness
    use_bow, use_len = resolved_use_flags(rc)
    return FpbConfig(
        vocab_src=vocab_src,
        vocab_tgt=vocab_tgt,
        d_emb=rc.d_emb,
        d_hidden=rc.d_hidden,
        k_heads=rc.k_heads,
        k_len=rc.k_len,
        lambda1=rc.lambda1,
        lambda2=rc.lambda2 if use_bow else 0.0,
        lambda3=rc.lambda3 if use_len else 0.0,
        dropout_rate=rc.dropout,
        use_bow=use_bow,
        use_len=use_len,
        feedback_backprop=rc.feedback_backprop,
    )


def train_config(rc: RunConfig) -> TrainConfig:
    return TrainConfig(
        alpha=rc.alpha,
        beta1=rc.beta1,
        beta2=rc.beta2,
        eps=rc.eps,
        clip_norm=rc.clip_norm,
        epochs=rc.epochs,
        batch_size=rc.batch_size,
        seed=rc.seed,
        log_interval=rc.log_interval,
        patience=rc.patience,
        max_decode_len=rc.max_len,
    )


def data_bundle(rc: RunConfig) -> DataBundle:
    if rc.task == "files":
        for field in ("train_file", "dev_file", "test_file"):
            if not getattr(rc, field):
                raise ConfigError(f"config field {field}: required when task = files")
        from .data import build_vocab

        train_c = read_corpus(rc.train_file)
        dev_c = read_corpus(rc.dev_file)
        test_c = read_corpus(rc.test_file)
        return DataBundle(
            train=train_c,
            dev=dev_c,
            test=test_c,
            vocab_src=build_vocab(train_c.sources(), rc.vocab_max),
            vocab_tgt=build_vocab(train_c.targets(), rc.vocab_max),
        )
    return build_task(
        rc.task,
        rc.n_train,
        rc.n_dev,
        rc.n_test,
        rc.gen_vocab,
        (rc.len_min, rc.len_max),
        rc.seed,
        vocab_max=rc.vocab_max,
    )


def resolve_out_dir(rc: RunConfig, command: str) -> Path:
    if rc.out_dir:
        return Path(rc.out_dir)
    root = os.environ.get("FPB_OUT_ROOT", "runs")
    return Path(root) / f"{command}-{rc.task}-seed{rc.seed}"


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def _collect_overrides(args) -> dict[str, str]:
    out = {}
    for name in _FIELDS:
        v = getattr(args, f"cfg_{name}", None)
        if v is not None:
            out[name] = v
    return out


def _run_config(args) -> RunConfig:
    file_values = load_config_file(args.config) if args.config else {}
    return make_config(file_values, _collect_overrides(args))


def cmd_train(args) -> int:
    rc = _run_config(args)
    bundle = data_bundle(rc)
    out = resolve_out_dir(rc, "train")
    out.mkdir(parents=True, exist_ok=True)
    rc.out_dir = str(out)
    write_config(out / "config.txt", rc)
    bundle.vocab_src.save(out / "src.vocab")
    bundle.vocab_tgt.save(out / "tgt.vocab")

    cfg = model_config(rc, len(bundle.vocab_src), len(bundle.vocab_tgt))
    model = FpbModel(cfg, seed=rc.seed)
    n_params = sum(p.data.size for p in model.parameters().values())
    print(f"training {rc.task}: {len(bundle.train)} pairs, {n_params} parameters -> {out}")
    result = train(model, bundle, train_config(rc), out_dir=out)
    print(
        f"done: best dev BLEU {result.best_bleu:.4f} at epoch {result.best_epoch} "
        f"({result.epochs_run} epochs run)"
    )
    print(f"checkpoint: {out / 'checkpoint.fpb'}")
    return 0


def _load_model_and_vocabs(args) -> tuple[FpbModel, Vocab, Vocab]:
    ckpt = Path(args.checkpoint)
    model = FpbModel.from_checkpoint(ckpt)
    src_path = Path(args.src_vocab) if args.src_vocab else ckpt.parent / "src.vocab"
    tgt_path = Path(args.tgt_vocab) if args.tgt_vocab else ckpt.parent / "tgt.vocab"
    vocab_src = Vocab.load(src_path)
    vocab_tgt = Vocab.load(tgt_path)
    if len(vocab_src) != model.config.vocab_src or len(vocab_tgt) != model.config.vocab_tgt:
        raise CheckpointError(
            f"vocab sizes ({len(vocab_src)}, {len(vocab_tgt)}) do not match the "
            f"checkpoint ({model.config.vocab_src}, {model.config.vocab_tgt})"
        )
    return model, vocab_src, vocab_tgt


def cmd_decode(args) -> int:
    rc = _run_config(args)
    model, vocab_src, vocab_tgt = _load_model_and_vocabs(args)
    width = 1 if args.greedy else rc.width
    with open(args.input, encoding="utf-8") as f:
        lines = [line.rstrip("\n") for line in f]
    while lines and lines[-1] == "":
        lines.pop()
    sources = []
    for i, line in enumerate(lines, start=1):
        toks = tokenize(line)
        if not toks:
            raise ContractError(f"{args.input}: line {i} is empty")
        sources.append(vocab_src.encode(toks))
    hyps = decode_corpus(
        model,
        sources,
        width=width,
        max_len=rc.max_len,
        length_norm=rc.length_norm,
        eos_gate=rc.eos_gate,
        eos_threshold=rc.eos_threshold,
    )
    with open(args.output, "w", encoding="utf-8") as f:
        for h in hyps:
            f.write(" ".join(vocab_tgt.decode(h)) + "\n")
    print(f"decoded {len(sources)} sentences -> {args.output}")
    return 0


def cmd_evaluate(args) -> int:
    with open(args.hypotheses, encoding="utf-8") as f:
        hyp_lines = f.read().splitlines()
    with open(args.references, encoding="utf-8") as f:
        ref_lines = f.read().splitlines()
    if len(hyp_lines) != len(ref_lines):
        raise ContractError(
            f"evaluate: {len(hyp_lines)} hypothesis lines vs {len(ref_lines)} reference lines"
        )
    score = corpus_bleu(
        [tokenize(l) for l in hyp_lines],
        [tokenize(l) for l in ref_lines],
        smooth=args.smooth,
    )
    print(f"BLEU = {score:.6f}")
    return 0


def cmd_analyze_bow(args) -> int:
    rc = _run_config(args)
    model, vocab_src, vocab_tgt = _load_model_and_vocabs(args)
    corpus = read_corpus(args.corpus)
    curve = bow_accuracy_curve(model, vocab_src, vocab_tgt, corpus, seed=rc.seed)
    print(f"{'remaining':>9}  {'accuracy':>8}  {'count':>6}")
    for r, acc, cnt in curve.rows():
        print(f"{r:>9}  {acc:8.4f}  {cnt:>6}")
    if args.out_csv:
        curve.to_csv(args.out_csv)
        print(f"wrote {args.out_csv}")
    if model.config.use_len:
        acc = length_accuracy(model, vocab_src, vocab_tgt, corpus, seed=rc.seed)
        print(f"length bucket accuracy: {acc:.4f}")
    return 0


def cmd_ablate(args) -> int:
    rc = _run_config(args)
    try:
        seeds = [int(s) for s in args.seeds.split(",") if s.strip()]
    except ValueError:
        raise ConfigError(f"ablate: --seeds must be comma-separated integers, got {args.seeds!r}")
    if not seeds:
        raise ConfigError("ablate: --seeds is empty")
    bundle = data_bundle(rc)
    out = resolve_out_dir(rc, "ablate")
    out.mkdir(parents=True, exist_ok=True)
    rc.out_dir = str(out)
    write_config(out / "config.txt", rc)
    cfg = model_config(rc, len(bundle.vocab_src), len(bundle.vocab_tgt))
    result = ablation_run(
        cfg, bundle, train_config(rc), seeds, beam_width=rc.width, max_len=rc.max_len
    )
    result.to_csv(out / "ablation.csv")
    with open(out / "ablation.json", "w", encoding="utf-8") as f:
        json.dump(result.to_json_dict(), f, indent=2)
        f.write("\n")
    print(result.format_table())
    print(f"wrote {out / 'ablation.csv'} and {out / 'ablation.json'}")
    return 0


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="config file of key = value lines")
    grp = p.add_argument_group("config overrides")
    for name, f in _FIELDS.items():
        flag = "--" + name.replace("-", "-").replace("_", "-")
        if type(f.default) is bool:
            grp.add_argument(
                flag, dest=f"cfg_{name}", nargs="?", const="true", default=None,
                metavar="BOOL", help=f"{name} (default {str(f.default).lower()})",
            )
        else:
            grp.add_argument(
                flag, dest=f"cfg_{name}", default=None, metavar=name.upper(),
                help=f"{name} (default {f.default!r})",
            )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fpb",
        description="Attention seq2seq translation with future-prediction decoding heads",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a model on a synthetic task or corpus files")
    _add_config_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("decode", help="translate a file of source sentences")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--src-vocab", help="default: src.vocab next to the checkpoint")
    p.add_argument("--tgt-vocab", help="default: tgt.vocab next to the checkpoint")
    p.add_argument("--greedy", action="store_true", help="force width 1")
    _add_config_flags(p)
    p.set_defaults(func=cmd_decode)

    p = sub.add_parser("evaluate", help="corpus BLEU of a hypothesis file against references")
    p.add_argument("hypotheses")
    p.add_argument("references")
    p.add_argument("--smooth", action="store_true", help="add-one smoothing for zero counts")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("analyze-bow", help="bag-of-words accuracy vs remaining length")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--corpus", required=True, help="tab-separated parallel corpus to analyze")
    p.add_argument("--src-vocab", help="default: src.vocab next to the checkpoint")
    p.add_argument("--tgt-vocab", help="default: tgt.vocab next to the checkpoint")
    p.add_argument("--out-csv", help="also write the curve as CSV")
    _add_config_flags(p)
    p.set_defaults(func=cmd_analyze_bow)

    p = sub.add_parser("ablate", help="train all four head configurations and compare")
    p.add_argument("--seeds", default="1,2,3", help="comma-separated training seeds")
    _add_config_flags(p)
    p.set_defaults(func=cmd_ablate)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except FpbError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
