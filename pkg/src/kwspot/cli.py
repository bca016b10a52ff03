"""Command-line entry point: gen / train / eval / spot / sweep / dump-config.

Configuration is a flat key=value namespace: defaults come from the
dataclasses, a ``--config FILE`` replaces them, and repeatable
``--set key=value`` flags override individual entries. Unknown keys are
rejected. Exit codes: 0 success, 2 input or parse error, 3 missing
artifact, 4 numeric divergence.
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_MISSING = 3
EXIT_NUMERIC = 4


def _config_schema() -> dict[str, object]:
    """Flat default configuration; values carry their types."""
    from .encoders import ModelConfig
    from .synthcorpus import CorpusParams

    schema: dict[str, object] = {"seed": 0, "threads": 1}
    for k, v in vars(CorpusParams()).items():
        schema[f"corpus.{k}"] = v
    schema["corpus.lexicon_words"] = 700
    for k, v in ModelConfig().to_dict().items():
        schema[f"model.{k}"] = v
    schema.update({
        "train.stage": "both",
        "train.pretrain_epochs": 8,
        "train.finetune_epochs": 20,
        "train.batch_clips": 40,
        "train.use_boundaries": True,
        "train.noise_snr": None,
        "train.noise_prob": 0.5,
        "train.noise_in_pretrain": True,
        "train.base_lr_pretrain": None,
        "train.base_lr_finetune": None,
        "train.patience": 5,
        "train.val_fraction": 0.1,
        "eval.localization": True,
        "eval.min_np": 6,
        "eval.fusion_w": 0.7,
        "eval.snr": None,
        "eval.threshold": 0.5,
        "eval.noise_seed": 1234,
    })
    return schema


_NONE_KEYS = {"train.noise_snr", "train.base_lr_pretrain",
              "train.base_lr_finetune", "eval.snr"}


def _parse_value(key: str, raw: str, schema: dict):
    if key not in schema:
        raise ValueError(f"unknown config key {key!r}")
    if raw.lower() in ("none", "null", ""):
        if key in _NONE_KEYS:
            return None
        raise ValueError(f"config key {key!r} cannot be none")
    default = schema[key]
    if isinstance(default, bool):
        if raw.lower() in ("true", "1", "yes"):
            return True
        if raw.lower() in ("false", "0", "no"):
            return False
        raise ValueError(f"config key {key!r} expects a boolean, got {raw!r}")
    if isinstance(default, int) and not isinstance(default, bool):
        return int(raw)
    if isinstance(default, float):
        return float(raw)
    if default is None:  # typed by use; numeric where it matters
        try:
            return float(raw)
        except ValueError:
            return raw
    return raw


def load_config(config_path: str | None, overrides: list[str]) -> dict:
    schema = _config_schema()
    cfg = dict(schema)
    if config_path:
        with open(config_path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, 1):
                line = line.strip()
                if not line or line.startswith("#"):
                    continue
                if "=" not in line:
                    raise ValueError(
                        f"{config_path}:{lineno}: expected key=value")
                key, raw = line.split("=", 1)
                cfg[key.strip()] = _parse_value(key.strip(), raw.strip(), schema)
    for item in overrides or []:
        if "=" not in item:
            raise ValueError(f"--set expects key=value, got {item!r}")
        key, raw = item.split("=", 1)
        cfg[key.strip()] = _parse_value(key.strip(), raw.strip(), schema)
    return cfg


def dump_config(cfg: dict) -> str:
    lines = []
    for key in sorted(cfg):
        v = cfg[key]
        if v is None:
            v = "none"
        elif isinstance(v, bool):
            v = "true" if v else "false"
        lines.append(f"{key}={v}")
    return "\n".join(lines) + "\n"


def _model_config(cfg: dict, modality: str):
    from .encoders import ModelConfig
    frontend = cfg["model.frontend"]
    if modality == "a" and frontend == "conv":
        frontend = "mel"
    return ModelConfig(
        channel_scale=cfg["model.channel_scale"], frontend=frontend,
        d_syn=cfg["model.d_syn"], shortcut=cfg["model.shortcut"],
        max_np=cfg["model.max_np"], sample_rate=cfg["model.sample_rate"],
        win_samples=cfg["model.win_samples"],
        hop_samples=cfg["model.hop_samples"], n_mels=cfg["model.n_mels"],
        frame_rate=cfg["model.frame_rate"])


def _corpus_params(cfg: dict):
    from .synthcorpus import CorpusParams
    kwargs = {k.split(".", 1)[1]: v for k, v in cfg.items()
              if k.startswith("corpus.") and k != "corpus.lexicon_words"}
    return CorpusParams(**kwargs)


def _noise_spec(cfg: dict, prefix: str = "train"):
    from .synthcorpus import NoiseSpec
    snr = cfg[f"{prefix}.noise_snr"]
    if snr is None:
        return None
    return NoiseSpec(snr_db=float(snr), apply_prob=cfg[f"{prefix}.noise_prob"])


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_gen(args) -> int:
    from .errors import GenerationError, LexiconError
    from .pronlex import parse_lexicon
    from .synthcorpus import build_corpus, generate_lexicon

    cfg = load_config(args.config, args.set)
    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    params = _corpus_params(cfg)
    seed = cfg["seed"]

    probe_pairs = []
    try:
        if args.lexicon:
            with open(args.lexicon, encoding="utf-8") as fh:
                lexicon = parse_lexicon(fh)
        else:
            text, probe_pairs = generate_lexicon(
                cfg["corpus.lexicon_words"], seed,
                n_minimal_pairs=params.n_minimal_pairs)
            lexicon = parse_lexicon(iter(text.splitlines(keepends=True)))
        if params.n_train < 1 and params.n_pretrain < 1:
            raise GenerationError("requested an empty corpus")
        corpus = build_corpus(lexicon, outdir, params, seed,
                              probe_pairs=probe_pairs)
    except (LexiconError, GenerationError, FileNotFoundError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INPUT

    fps = cfg["model.frame_rate"]
    print(f"{'split':<10}{'#utt':>8}{'#words':>9}{'hours':>8}{'vocab':>7}")
    for split, records in sorted(corpus.manifests.items()):
        words = sum(len(r.transcript) for r in records)
        frames = sum(r.bounds[-1][2] for r in records) if records else 0
        vocab = len({w for r in records for w in r.transcript})
        print(f"{split:<10}{len(records):>8}{words:>9}"
              f"{frames / fps / 3600.0:>8.3f}{vocab:>7}")
    print(f"train vocabulary {len(corpus.train_vocab)}, "
          f"test vocabulary {len(corpus.test_vocab)}, "
          f"train keywords {len(corpus.train_keywords)}")
    return EXIT_OK


def _load_corpus_or_exit(path: str):
    from .synthcorpus import load_corpus
    root = Path(path)
    if not (root / "meta.json").exists():
        print(f"error: {root} is not a corpus directory", file=sys.stderr)
        return None
    return load_corpus(root)


def cmd_train(args) -> int:
    from .kwsnet import KwsModel
    from .trainer import TrainConfig, train

    cfg = load_config(args.config, args.set)
    if args.no_loc:
        cfg["train.use_boundaries"] = False
    if args.no_shortcut:
        cfg["model.shortcut"] = False
    if args.noise_snr is not None:
        cfg["train.noise_snr"] = args.noise_snr
    corpus = _load_corpus_or_exit(args.corpus)
    if corpus is None:
        return EXIT_MISSING
    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    with open(outdir / "run_config.txt", "w", encoding="utf-8") as fh:
        fh.write(dump_config(cfg))

    model_cfg = _model_config(cfg, args.modality)
    model = KwsModel(model_cfg, args.modality, corpus.lexicon.vocab.symbols,
                     cfg["seed"])
    noise = _noise_spec(cfg)
    stage = cfg["train.stage"]
    stages = ["pretrain", "finetune"] if stage == "both" else [stage]
    if args.resume and len(stages) > 1:
        print("error: --resume needs a single stage", file=sys.stderr)
        return EXIT_INPUT

    for i, st in enumerate(stages):
        tc = TrainConfig(
            stage=st, batch_clips=cfg["train.batch_clips"],
            epochs=cfg[f"train.{st}_epochs"],
            base_lr=cfg[f"train.base_lr_{st}"],
            use_boundaries=cfg["train.use_boundaries"], noise=noise,
            noise_in_pretrain=cfg["train.noise_in_pretrain"],
            keyword_min_np=cfg["corpus.keyword_min_np"],
            val_fraction=cfg["train.val_fraction"],
            patience=cfg["train.patience"], seed=cfg["seed"])
        if i > 0:
            model.store.reset_adam()
        result = train(model, corpus, tc, outdir / st,
                       resume_from=args.resume if args.resume else None)
        last = result.loss_rows[-1] if result.loss_rows else None
        status = "diverged" if result.diverged else (
            "converged" if result.converged else "epoch-capped")
        print(f"{st}: {len(result.checkpoints)} checkpoints, {status}"
              + (f", final val loss {last[2]:.4f}" if last else ""))
        if result.diverged:
            print("error: training diverged (non-finite loss)", file=sys.stderr)
            return EXIT_NUMERIC
    return EXIT_OK


def _checkpoint_files(directory: str):
    return sorted(Path(directory).glob("ckpt_*.kwt"))


def _build_phrases(corpus, keywords, max_np: int):
    """3-word phrase per keyword occurrence: preceding + keyword + following."""
    from .pronlex import pronounce
    phrases: dict[str, tuple[str, ...]] = {}
    centers: dict[str, str] = {}
    kwset = set(keywords)
    for rec in corpus.manifests["test"]:
        for i in range(1, len(rec.transcript) - 1):
            w = rec.transcript[i]
            if w in kwset:
                tri = (rec.transcript[i - 1], w, rec.transcript[i + 1])
                query = " ".join(tri)
                if query in phrases:
                    continue
                if all(len(v) <= max_np
                       for v in pronounce(query, corpus.lexicon)):
                    phrases[query] = tri
                    centers[query] = w
    return phrases, centers


def cmd_eval(args) -> int:
    from .evalharness import EvalSettings, PairScorer, report
    from .kwsnet import load_checkpoint

    cfg = load_config(args.config, args.set)
    if args.no_localization:
        cfg["eval.localization"] = False
    if args.snr is not None:
        cfg["eval.snr"] = args.snr
    corpus = _load_corpus_or_exit(args.corpus)
    if corpus is None:
        return EXIT_MISSING

    need_a = args.modality in ("a", "av")
    need_v = args.modality in ("v", "av")
    ckpts_a = _checkpoint_files(args.ckpt_dir_a) if args.ckpt_dir_a else []
    ckpts_v = _checkpoint_files(args.ckpt_dir_v) if args.ckpt_dir_v else []
    if need_a and not ckpts_a or need_v and not ckpts_v:
        print("error: missing checkpoints for requested modality",
              file=sys.stderr)
        return EXIT_MISSING

    settings = EvalSettings(
        localization=cfg["eval.localization"], threshold=cfg["eval.threshold"],
        noise_snr=cfg["eval.snr"], noise_seed=cfg["eval.noise_seed"],
        fusion_w=cfg["eval.fusion_w"])
    records = corpus.manifests["test"]
    keywords = [w for w in corpus.test_vocab
                if corpus.lexicon[w].min_np >= cfg["eval.min_np"]]
    phrase_map = None
    if args.phrases:
        phrase_map, _ = _build_phrases(corpus, keywords, cfg["model.max_np"])
        keywords = sorted(phrase_map)

    # the series being reported over is the primary modality's last 5
    series = ckpts_a if args.modality == "a" or args.modality == "av" else ckpts_v
    fixed_v = load_checkpoint(ckpts_v[-1])[0] if args.modality == "av" else None

    def make_scorer(ckpt):
        models = {}
        if args.modality == "av":
            models["a"] = load_checkpoint(ckpt)[0]
            models["v"] = fixed_v
        else:
            models[args.modality] = load_checkpoint(ckpt)[0]
        return PairScorer(models, records, corpus.root, corpus.lexicon,
                          settings)

    if phrase_map is not None:
        from .evalharness import compute_metrics, retrieve
        scorer = make_scorer(series[-1])
        retrievals = retrieve(scorer, keywords, phrase_map=phrase_map)
        metrics = compute_metrics(retrievals, settings.localization)
        import csv as _csv
        with open(args.out, "w", newline="") as fh:
            w = _csv.writer(fh)
            w.writerow(["metric", "keyword", "checkpoint", "value"])
            for metric, value in sorted(metrics.items()):
                w.writerow([metric, "__ALL__", Path(series[-1]).stem,
                            repr(value)])
        for metric, value in sorted(metrics.items()):
            print(f"{metric}: {value:.2f}")
        return EXIT_OK

    rep = report(series, make_scorer, keywords,
                 use_localization=settings.localization,
                 score_dump=Path(args.score_dump) if args.score_dump else None)
    rep.to_csv(args.out)
    for wmsg in rep.warnings:
        print(f"warning: {wmsg}", file=sys.stderr)
    for metric, (mean, std) in sorted(rep.summary.items()):
        print(f"{metric}: {mean:.2f} +- {std:.2f}")
    return EXIT_OK


def cmd_spot(args) -> int:
    import numpy as np
    from .errors import VocabularyError
    from .evalharness import EvalSettings, PairScorer
    from .gradcore.ops import _sigmoid
    from .kwsnet import TEST_CENTER_OFFSET, load_checkpoint

    cfg = load_config(args.config, args.set)
    corpus = _load_corpus_or_exit(args.corpus)
    if corpus is None:
        return EXIT_MISSING
    if not Path(args.ckpt).exists():
        print(f"error: checkpoint {args.ckpt} not found", file=sys.stderr)
        return EXIT_MISSING
    model, _ = load_checkpoint(args.ckpt)

    record = None
    for records in corpus.manifests.values():
        for r in records:
            if r.clip_id == args.clip:
                record = r
    if record is None:
        print(f"error: clip {args.clip!r} not in corpus manifests",
              file=sys.stderr)
        return EXIT_MISSING

    settings = EvalSettings(threshold=args.threshold)
    scorer = PairScorer({model.modality: model}, [record], corpus.root,
                        corpus.lexicon, settings)
    try:
        result = scorer.spot(record.clip_id, args.keyword)
    except VocabularyError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INPUT
    verdict = "present" if result.present else "absent"
    print(f"{verdict} {result.score:.6f} {result.frame}")

    if args.dump_trace:
        traces = scorer.variant_traces(record.clip_id, args.keyword)
        probs = _sigmoid(traces[result.variant])
        with open(args.dump_trace, "w", encoding="utf-8") as fh:
            fh.write("frame,prob\n")
            for j, p in enumerate(probs):
                fh.write(f"{j + TEST_CENTER_OFFSET},{p!r}\n")
    if args.dump_map:
        from .pronlex import pronounce
        v = scorer.encoded[model.modality][record.clip_id]
        ids = pronounce(args.keyword, corpus.lexicon)[result.variant]
        p = model.encode_keyword(ids)
        grid = _sigmoid(v.frames.data[:v.valid_len] @ p.rows.data.T)
        with open(args.dump_map, "w", encoding="utf-8") as fh:
            for row in grid:
                fh.write(",".join(repr(x) for x in row) + "\n")
    return EXIT_OK


def _parse_grid(spec: str) -> list[float]:
    lo, hi, step = (float(x) for x in spec.split(":"))
    if step <= 0 or hi < lo:
        raise ValueError(f"bad grid {spec!r}")
    n = int(round((hi - lo) / step))
    return [lo + i * step for i in range(n + 1)]


def cmd_sweep(args) -> int:
    import csv as _csv
    from .evalharness import (EvalSettings, PairScorer, compute_metrics,
                              fusion_sweep, retrieve)
    from .kwsnet import load_checkpoint

    cfg = load_config(args.config, args.set)
    corpus = _load_corpus_or_exit(args.corpus)
    if corpus is None:
        return EXIT_MISSING
    if not (args.snr or args.fusion):
        print("error: choose --snr or --fusion grid", file=sys.stderr)
        return EXIT_INPUT
    try:
        grid = _parse_grid(args.snr or args.fusion)
    except ValueError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INPUT
    if not grid:
        print("error: empty sweep grid", file=sys.stderr)
        return EXIT_INPUT

    records = corpus.manifests["test"]
    keywords = [w for w in corpus.test_vocab
                if corpus.lexicon[w].min_np >= cfg["eval.min_np"]]
    ckpts_a = _checkpoint_files(args.ckpt_dir_a) if args.ckpt_dir_a else []
    ckpts_v = _checkpoint_files(args.ckpt_dir_v) if args.ckpt_dir_v else []

    rows = []
    if args.snr:
        if not ckpts_a:
            print("error: SNR sweep needs audio checkpoints", file=sys.stderr)
            return EXIT_MISSING
        model_a = load_checkpoint(ckpts_a[-1])[0]
        model_v = load_checkpoint(ckpts_v[-1])[0] if ckpts_v else None
        for snr in grid:
            settings = EvalSettings(localization=cfg["eval.localization"],
                                    noise_snr=snr,
                                    noise_seed=cfg["eval.noise_seed"],
                                    fusion_w=cfg["eval.fusion_w"])
            models = {"a": model_a}
            if model_v is not None:
                models["v"] = model_v
            scorer = PairScorer(models, records, corpus.root, corpus.lexicon,
                                settings)
            metrics = compute_metrics(retrieve(scorer, keywords),
                                      settings.localization)
            for metric, value in sorted(metrics.items()):
                rows.append((snr, metric, value))
        setting_name = "snr_db"
    else:
        if not (ckpts_a and ckpts_v):
            print("error: fusion sweep needs audio and visual checkpoints",
                  file=sys.stderr)
            return EXIT_MISSING
        settings = EvalSettings(localization=cfg["eval.localization"],
                                noise_snr=cfg["eval.snr"],
                                noise_seed=cfg["eval.noise_seed"])
        scorer_a = PairScorer({"a": load_checkpoint(ckpts_a[-1])[0]}, records,
                              corpus.root, corpus.lexicon, settings)
        scorer_v = PairScorer({"v": load_checkpoint(ckpts_v[-1])[0]}, records,
                              corpus.root, corpus.lexicon,
                              EvalSettings(localization=cfg["eval.localization"]))
        for w, metrics in fusion_sweep(scorer_a, scorer_v, keywords, grid,
                                       cfg["eval.localization"]).items():
            for metric, value in sorted(metrics.items()):
                rows.append((w, metric, value))
        setting_name = "w_audio"

    with open(args.out, "w", newline="") as fh:
        writer = _csv.writer(fh)
        writer.writerow([setting_name, "metric", "value"])
        for setting, metric, value in rows:
            writer.writerow([repr(setting), metric, repr(value)])
    print(f"wrote {len(rows)} rows to {args.out}")
    return EXIT_OK


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="kwspot",
        description="similarity-map keyword spotting: corpus, training, "
                    "retrieval evaluation")
    parser.add_argument("--threads", type=int, default=1,
                        help="BLAS thread cap (default 1, determinism first)")
    sub = parser.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="flat key=value config file")
    common.add_argument("--set", action="append", default=[],
                        metavar="KEY=VALUE", help="override one config key")

    p = sub.add_parser("gen", parents=[common], help="generate a corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--lexicon", help="CMUdict-format lexicon path "
                                     "(default: generate one)")
    p.set_defaults(fn=cmd_gen)

    p = sub.add_parser("train", parents=[common], help="train one modality")
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--modality", choices=["v", "a"], default="v")
    p.add_argument("--no-loc", action="store_true",
                   help="drop word-boundary supervision")
    p.add_argument("--no-shortcut", action="store_true",
                   help="drop the keyword-embedding shortcut channels")
    p.add_argument("--noise-snr", type=float, default=None,
                   help="train-time babble SNR in dB")
    p.add_argument("--resume", help="checkpoint to resume from")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("eval", parents=[common], help="retrieval metrics")
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True, help="metrics CSV path")
    p.add_argument("--modality", choices=["v", "a", "av"], default="v")
    p.add_argument("--ckpt-dir-v", help="visual checkpoint directory")
    p.add_argument("--ckpt-dir-a", help="audio checkpoint directory")
    p.add_argument("--no-localization", action="store_true")
    p.add_argument("--snr", type=float, default=None,
                   help="eval-time babble SNR in dB")
    p.add_argument("--phrases", action="store_true",
                   help="query 3-word phrases around each keyword")
    p.add_argument("--score-dump", help="per-pair score TSV path")
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("spot", parents=[common],
                       help="spot one keyword in one clip")
    p.add_argument("--corpus", required=True)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--keyword", required=True)
    p.add_argument("--clip", required=True)
    p.add_argument("--threshold", type=float, default=0.5)
    p.add_argument("--dump-trace", help="per-frame probability CSV")
    p.add_argument("--dump-map", help="sigmoid similarity-map CSV")
    p.set_defaults(fn=cmd_spot)

    p = sub.add_parser("sweep", parents=[common],
                       help="SNR or fusion-weight grids")
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--snr", metavar="LO:HI:STEP")
    p.add_argument("--fusion", metavar="LO:HI:STEP")
    p.add_argument("--ckpt-dir-v")
    p.add_argument("--ckpt-dir-a")
    p.set_defaults(fn=cmd_sweep)

    p = sub.add_parser("dump-config", parents=[common],
                       help="print the effective configuration")
    p.set_defaults(fn=lambda a: (print(dump_config(load_config(a.config,
                                                               a.set)), end="")
                                 or EXIT_OK))
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.threads:
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS",
                    "MKL_NUM_THREADS"):
            os.environ.setdefault(var, str(args.threads))
    try:
        return args.fn(args)
    except ValueError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
