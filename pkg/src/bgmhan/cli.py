"""Command-line front end for the whole pipeline.

Subcommands: tokenizer, synth, train, gridsearch, eval, sar, correlate.
Configuration comes from an optional JSON file merged over defaults, with
``--set dotted.path=value`` overrides on top and dedicated flags on top of
that.  Logs go to stderr, data to files or stdout.  Every output file
embeds a manifest with the tool version, config hash, and seed.  Exit
codes: 0 success, 1 runtime failure, 2 usage error.
"""

import argparse
import copy
import json
import os
import sys
from dataclasses import asdict

from . import __version__, bpe
from .analysis import GenerationParams, analyze, make_client
from .evaluate import correlation_matrix, metrics, write_correlation_csv
from .model import (
    BgmHanModel, CheckpointError, ModelConfig, load_checkpoint, save_checkpoint,
)
from .profiles import (
    ProfileError, impute_missing, load_profiles,
    read_decision_csv, save_profiles, stratified_split, write_decision_csv,
)
from .sar import (
    SarModels, WorkflowConfig, outcomes_to_decisions, run_batch, write_outcomes,
)
from .synthetic import SignalSpec, generate_synthetic
from .training import (
    GRID_SPACE, TrainConfig, TrainingDiverged, accuracy_at_half, grid_search,
    train, write_leaderboard,
)
from .util import config_hash, manifest_line

EXIT_OK, EXIT_RUNTIME, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


def _log(msg):
    print(msg, file=sys.stderr)


def _require_file(path, flag):
    if not path:
        raise UsageError(f"{flag} is required")
    if not os.path.isfile(path):
        raise UsageError(f"{flag}: file not found: {path}")
    return path


def _check_out(path, flag):
    if not path:
        raise UsageError(f"{flag} is required")
    parent = os.path.dirname(os.path.abspath(path))
    if not os.path.isdir(parent):
        raise UsageError(f"{flag}: directory does not exist: {parent}")
    return path


DEFAULT_CONFIG = {
    "model": {k: v for k, v in asdict(ModelConfig.desk()).items()},
    "train": asdict(TrainConfig()),
    "workflow": {"tau": 0.5, "delta": 0.5, "client": "mock",
                 "generation": asdict(GenerationParams())},
    "split": [0.90, 0.05, 0.05],
    "seed": 0,
    "threads": 1,
}


def _deep_merge(base, overlay):
    out = copy.deepcopy(base)
    for k, v in overlay.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _deep_merge(out[k], v)
        else:
            out[k] = v
    return out


def _apply_set(cfg, assignment):
    if "=" not in assignment:
        raise UsageError(f"--set expects dotted.path=value, got {assignment!r}")
    path, raw = assignment.split("=", 1)
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    node = cfg
    keys = path.split(".")
    for key in keys[:-1]:
        if not isinstance(node.get(key), dict):
            node[key] = {}
        node = node[key]
    node[keys[-1]] = value


def load_run_config(args):
    cfg = copy.deepcopy(DEFAULT_CONFIG)
    if getattr(args, "config", None):
        path = _require_file(args.config, "--config")
        try:
            with open(path, encoding="utf-8") as fh:
                cfg = _deep_merge(cfg, json.load(fh))
        except json.JSONDecodeError as e:
            raise UsageError(f"--config: invalid JSON: {e}")
    for assignment in getattr(args, "set", None) or []:
        _apply_set(cfg, assignment)
    if getattr(args, "seed", None) is not None:
        cfg["seed"] = args.seed
    if getattr(args, "threads", None) is not None:
        cfg["threads"] = args.threads
    if getattr(args, "tau", None) is not None:
        cfg["workflow"]["tau"] = args.tau
    if getattr(args, "delta", None) is not None:
        cfg["workflow"]["delta"] = args.delta
    if getattr(args, "client", None) is not None:
        cfg["workflow"]["client"] = args.client
    return cfg


def _limit_threads(n):
    try:
        from threadpoolctl import threadpool_limits
        threadpool_limits(limits=n)
    except Exception as e:  # pragma: no cover - informational only
        _log(f"warning: could not limit BLAS threads ({e})")


def _manifest(cfg):
    return manifest_line(config_hash(cfg), cfg["seed"])


def _load_labeled_profiles(path, flag):
    try:
        profiles = load_profiles(path)
    except (ProfileError, json.JSONDecodeError, ValueError) as e:
        raise UsageError(f"{flag}: {e}")
    if not profiles:
        raise UsageError(f"{flag}: no profiles in {path}")
    return impute_missing(profiles)


def _model_cfg(cfg, fields=None):
    raw = dict(cfg["model"])
    raw.pop("vocab_size", None)
    if fields is not None:
        raw["fields"] = fields
    try:
        return ModelConfig(vocab_size=0, **raw)
    except (TypeError, ValueError) as e:
        raise UsageError(f"model config: {e}")


def _train_cfg(cfg):
    try:
        return TrainConfig(**{**cfg["train"], "seed": cfg["seed"]})
    except (TypeError, ValueError) as e:
        raise UsageError(f"train config: {e}")


# ---------------------------------------------------------------------------
# subcommands

def cmd_tokenizer(args):
    cfg = load_run_config(args)
    data = _require_file(args.data, "--data")
    out = _check_out(args.out, "--out")
    if data.endswith(".jsonl"):
        profiles = _load_labeled_profiles(data, "--data")
        corpus = []
        for p in profiles:
            corpus.extend(p.field_texts())
            if p.analysis:
                corpus.append(p.analysis)
    else:
        with open(data, encoding="utf-8") as fh:
            corpus = [line.rstrip("\n") for line in fh if line.strip()]
    if not corpus:
        raise UsageError(f"--data: no usable documents in {data}")
    vocab = bpe.train_bpe(corpus, args.vocab_size)
    vocab.save(out, header_comment=_manifest(cfg))
    _log(f"tokenizer: {len(corpus)} documents -> {vocab.size} symbols "
         f"({len(vocab.merges)} merges) -> {out}")
    return EXIT_OK


def cmd_synth(args):
    cfg = load_run_config(args)
    out = _check_out(args.out, "--out")
    spec = SignalSpec(balance=args.balance, noise=args.noise)
    profiles = generate_synthetic(args.n, seed=cfg["seed"], spec=spec,
                                  missing_rate=args.missing_rate)
    save_profiles(out, profiles, manifest=_manifest(cfg))
    positives = sum(p.offer for p in profiles)
    _log(f"synth: {args.n} profiles ({positives} positive) -> {out}")
    return EXIT_OK


def _split(profiles, cfg):
    ratios = tuple(cfg["split"])
    return stratified_split(profiles, ratios=ratios, seed=cfg["seed"])


def cmd_train(args):
    cfg = load_run_config(args)
    data = _require_file(args.data, "--data")
    vocab_path = _require_file(args.vocab, "--vocab")
    out = _check_out(args.out, "--out")
    history_path = args.history or out + ".history.csv"
    _check_out(history_path, "--history")

    profiles = _load_labeled_profiles(data, "--data")
    if any(p.offer is None for p in profiles):
        raise UsageError("--data: training needs labeled profiles")
    vocab = bpe.Vocabulary.load(vocab_path)

    fields = None
    if args.recommender:
        fields = 5
        if args.shortlist_checkpoint:
            s_path = _require_file(args.shortlist_checkpoint, "--shortlist-checkpoint")
            try:
                model_s, _ = load_checkpoint(s_path)
            except CheckpointError as e:
                _log(f"train: {e}")
                return EXIT_RUNTIME
            tau = cfg["workflow"]["tau"]
            probs = model_s.predict_proba(profiles)
            profiles = [p for p, ps in zip(profiles, probs) if ps > tau]
            _log(f"train: {len(probs)} profiles -> {len(profiles)} past the "
                 f"shortlist gate at tau={tau}")
            if not profiles:
                raise UsageError("--shortlist-checkpoint: no profiles pass the gate")
        client = make_client("mock")
        for p in profiles:
            if p.analysis is None:
                p.analysis = analyze(p, client)

    splits = _split(profiles, cfg)
    model = BgmHanModel(_model_cfg(cfg, fields=fields), vocab, seed=cfg["seed"])
    tcfg = _train_cfg(cfg)
    _log(f"train: {len(splits.train)}/{len(splits.val)}/{len(splits.test)} split, "
         f"dim={model.cfg.dim} hidden={model.cfg.hidden} heads={model.cfg.heads}")
    try:
        state = train(model, splits, tcfg, log=_log)
    except TrainingDiverged as e:
        _log(f"train: diverged: {e}")
        return EXIT_RUNTIME

    test_probs = model.predict_proba(splits.test)
    test_acc = accuracy_at_half(test_probs, [p.offer for p in splits.test])
    save_checkpoint(out, model, vocab_path=vocab_path, extra={
        "manifest": _manifest(cfg), "config_hash": config_hash(cfg),
        "seed": cfg["seed"], "best_val_acc": state.best_val_acc,
        "test_acc": test_acc, "epochs": state.epoch,
    })
    with open(history_path, "w", encoding="utf-8") as fh:
        fh.write(f"# {_manifest(cfg)}\n")
        fh.write("epoch,train_loss,val_acc,lr\n")
        for h in state.history:
            fh.write(f"{h['epoch']},{h['train_loss']!r},{h['val_acc']!r},{h['lr']!r}\n")
    _log(f"train: best val_acc {state.best_val_acc:.4f}, test_acc {test_acc:.4f}, "
         f"{state.epoch} epochs -> {out}")
    return EXIT_OK


def cmd_gridsearch(args):
    cfg = load_run_config(args)
    data = _require_file(args.data, "--data")
    vocab_path = _require_file(args.vocab, "--vocab")
    space_path = _require_file(args.space, "--space")
    out = _check_out(args.out, "--out")
    with open(space_path, encoding="utf-8") as fh:
        try:
            space_raw = json.load(fh)
        except json.JSONDecodeError as e:
            raise UsageError(f"--space: invalid JSON: {e}")
    space = {**{k: list(v) for k, v in GRID_SPACE.items()},
             **{k: list(v) for k, v in space_raw.items()}}
    profiles = _load_labeled_profiles(data, "--data")
    vocab = bpe.Vocabulary.load(vocab_path)
    splits = _split(profiles, cfg)
    best, board = grid_search(space, splits, _model_cfg(cfg), vocab,
                              _train_cfg(cfg), log=_log)
    write_leaderboard(out, board, manifest=_manifest(cfg))
    _log(f"gridsearch: best {best} -> {out}")
    print(json.dumps(best, sort_keys=True))
    return EXIT_OK


def cmd_eval(args):
    cfg = load_run_config(args)
    ckpt = _require_file(args.checkpoint, "--checkpoint")
    data = _require_file(args.data, "--data")
    try:
        model, _ = load_checkpoint(ckpt)
    except CheckpointError as e:
        _log(f"eval: {e}")
        return EXIT_RUNTIME
    profiles = _load_labeled_profiles(data, "--data")
    if any(p.offer is None for p in profiles):
        raise UsageError("--data: evaluation needs labeled profiles")
    probs = model.predict_proba(profiles)
    report = metrics((probs > 0.5).astype(int), [p.offer for p in profiles])
    payload = {"_manifest": _manifest(cfg), "report": report.to_json()}
    if args.out:
        _check_out(args.out, "--out")
        with open(args.out, "w", encoding="utf-8") as fh:
            json.dump(payload, fh, sort_keys=True, indent=2)
            fh.write("\n")
    print(report.format_table())
    return EXIT_OK


def cmd_sar(args):
    cfg = load_run_config(args)
    s_ckpt = _require_file(args.shortlist_checkpoint, "--shortlist-checkpoint")
    r_ckpt = _require_file(args.recommend_checkpoint, "--recommend-checkpoint")
    data = _require_file(args.data, "--data")
    out = _check_out(args.out, "--out")
    wf = cfg["workflow"]
    try:
        wcfg = WorkflowConfig(tau=wf["tau"], delta=wf["delta"], client=wf["client"],
                              generation=GenerationParams(**wf["generation"]))
    except (TypeError, ValueError) as e:
        raise UsageError(f"workflow config: {e}")
    try:
        model_s, _ = load_checkpoint(s_ckpt)
        model_r, _ = load_checkpoint(r_ckpt)
    except CheckpointError as e:
        _log(f"sar: {e}")
        return EXIT_RUNTIME
    if model_s.cfg.fields != 4 or model_r.cfg.fields != 5:
        _log(f"sar: expected a 4-field shortlister and 5-field recommender, got "
             f"{model_s.cfg.fields} and {model_r.cfg.fields}")
        return EXIT_RUNTIME
    profiles = _load_labeled_profiles(data, "--data")
    client = make_client(wcfg.client)
    models = SarModels(shortlister=model_s, recommender=model_r)
    # constant clock: trace ms fields become 0.0 so reruns are byte-identical
    outcomes, summary = run_batch(profiles, models, wcfg, client,
                                  workers=args.workers, clock=lambda: 0.0)
    violations = sum(
        1 for o in outcomes
        if (o.analysis is not None) != (o.shortlisted and o.error is None)
        or (o.error is None and o.decision !=
            int(o.shortlisted and o.p_r is not None and o.p_r > wcfg.delta))
    )
    write_outcomes(out, outcomes, manifest=_manifest(cfg))
    if args.decisions:
        _check_out(args.decisions, "--decisions")
        labels = {p.id: p.offer for p in profiles}
        write_decision_csv(args.decisions,
                           outcomes_to_decisions(outcomes, labels, wcfg),
                           manifest=_manifest(cfg))
    _log(f"sar: {summary['n']} profiles, shortlist rate "
         f"{summary['shortlist_rate']:.3f}, offer rate {summary['offer_rate']:.3f}, "
         f"{summary['errors']} errors, {violations} gating violations -> {out}")
    print(json.dumps({"_manifest": _manifest(cfg), **summary}, sort_keys=True))
    return EXIT_OK if violations == 0 else EXIT_RUNTIME


def cmd_correlate(args):
    cfg = load_run_config(args)
    records_path = _require_file(args.records, "--records")
    try:
        records = read_decision_csv(records_path)
    except ValueError as e:
        raise UsageError(f"--records: {e}")
    if len(records) < 2:
        raise UsageError("--records: need at least 2 records")
    labels, matrix = correlation_matrix(records)
    if args.out:
        _check_out(args.out, "--out")
        write_correlation_csv(args.out, labels, matrix, manifest=_manifest(cfg))
    width = max(len(x) for x in labels)
    print(" " * (width + 1) + " ".join(f"{x:>7s}" for x in labels))
    for name, row in zip(labels, matrix):
        print(f"{name:>{width}s} " + " ".join(f"{v:7.3f}" for v in row))
    return EXIT_OK


# ---------------------------------------------------------------------------

def build_parser():
    ap = argparse.ArgumentParser(
        prog="bgmhan",
        description="Hierarchical profile classifier with a shortlist-analyze-"
                    "recommend workflow.")
    ap.add_argument("--version", action="version", version=f"bgmhan {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--set", action="append", metavar="PATH=VALUE",
                       help="override a config field by dotted path")
        p.add_argument("--seed", type=int, help="run seed (recorded in outputs)")
        p.add_argument("--threads", type=int, help="BLAS thread cap (default 1)")

    p = sub.add_parser("tokenizer", help="train a BPE vocabulary")
    common(p)
    p.add_argument("--data", help="corpus: .jsonl profiles or plain text, one document per line")
    p.add_argument("--vocab-size", type=int, default=5000)
    p.add_argument("--out", help="vocabulary file to write")
    p.set_defaults(fn=cmd_tokenizer)

    p = sub.add_parser("synth", help="generate planted-rule synthetic profiles")
    common(p)
    p.add_argument("--n", type=int, default=1000)
    p.add_argument("--balance", type=float, default=0.35, help="positive fraction")
    p.add_argument("--noise", type=float, default=0.0, help="label flip rate")
    p.add_argument("--missing-rate", type=float, default=0.0)
    p.add_argument("--out", help="profiles JSONL to write")
    p.set_defaults(fn=cmd_synth)

    p = sub.add_parser("train", help="train the classifier")
    common(p)
    p.add_argument("--data", help="labeled profiles JSONL")
    p.add_argument("--vocab", help="BPE vocabulary file")
    p.add_argument("--out", help="checkpoint file to write")
    p.add_argument("--history", help="history CSV (default: <out>.history.csv)")
    p.add_argument("--recommender", action="store_true",
                   help="train the 5-field recommender; mock analyses are "
                        "attached to profiles that lack one")
    p.add_argument("--shortlist-checkpoint",
                   help="with --recommender: keep only profiles this "
                        "shortlister passes at workflow.tau")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("gridsearch", help="hyperparameter grid search")
    common(p)
    p.add_argument("--data", help="labeled profiles JSONL")
    p.add_argument("--vocab", help="BPE vocabulary file")
    p.add_argument("--space", help="JSON file of axis lists (missing axes: full space)")
    p.add_argument("--out", help="leaderboard CSV to write")
    p.set_defaults(fn=cmd_gridsearch)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    common(p)
    p.add_argument("--checkpoint", help="model checkpoint")
    p.add_argument("--data", help="labeled profiles JSONL")
    p.add_argument("--out", help="JSON report path (table always on stdout)")
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("sar", help="run the shortlist-analyze-recommend workflow")
    common(p)
    p.add_argument("--shortlist-checkpoint", help="4-field classifier checkpoint")
    p.add_argument("--recommend-checkpoint", help="5-field classifier checkpoint")
    p.add_argument("--data", help="profiles JSONL")
    p.add_argument("--tau", type=float, help="shortlist threshold")
    p.add_argument("--delta", type=float, help="recommend threshold")
    p.add_argument("--client", choices=["mock", "remote"], help="analysis client")
    p.add_argument("--workers", type=int, default=0, help="parallel profiles")
    p.add_argument("--out", help="outcomes JSONL to write")
    p.add_argument("--decisions", help="optional decision-points CSV to write")
    p.set_defaults(fn=cmd_sar)

    p = sub.add_parser("correlate", help="decision-point correlation matrix")
    common(p)
    p.add_argument("--records", help="decision CSV (id + six score columns)")
    p.add_argument("--out", help="matrix CSV to write")
    p.set_defaults(fn=cmd_correlate)
    return ap


def main(argv=None):
    ap = build_parser()
    args = ap.parse_args(argv)
    try:
        cfg_threads = load_run_config(args)["threads"]
    except UsageError as e:
        _log(f"error: {e}")
        return EXIT_USAGE
    _limit_threads(cfg_threads)
    try:
        return args.fn(args)
    except UsageError as e:
        _log(f"error: {e}")
        return EXIT_USAGE
    except Exception as e:  # noqa: BLE001 - uniform runtime-failure exit
        _log(f"error: {type(e).__name__}: {e}")
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
