"""Command-line entry point: ``dsduda {gen-data,train,eval,export-embeddings}``.

Exit codes: 0 success, 1 invalid configuration or arguments, 2 failure while
running.
"""

import argparse
import json
import logging
import sys
import time
from dataclasses import replace
from importlib import metadata
from pathlib import Path

from . import config as config_mod
from . import corpus as corpus_mod
from . import evaluation
from .config import ConfigError
from .model import load_checkpoint, save_checkpoint
from .train import train

log = logging.getLogger("dsduda")

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME = 0, 1, 2
MANIFEST_NAME = "run_manifest.json"
CORPUS_MANIFEST = "manifest.jsonl"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def code_version():
    try:
        return metadata.version("artifact")
    except metadata.PackageNotFoundError:
        return "unknown"


def _atomic_write(path, text):
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(text)
    tmp.replace(path)


def write_run_manifest(out_dir, command, cfg, fingerprint, seed, started, extra=None):
    """Record what produced the files in ``out_dir``; one per directory."""
    doc = {
        "command": command,
        "config": cfg.to_dict(),
        "corpus_fingerprint": fingerprint,
        "code_version": code_version(),
        "seed": seed,
        "started": started,
        "finished": time.strftime("%Y-%m-%dT%H:%M:%S%z"),
    }
    doc.update(extra or {})
    _atomic_write(Path(out_dir) / MANIFEST_NAME, json.dumps(doc, indent=2, sort_keys=True) + "\n")
    return doc


def _now():
    return time.strftime("%Y-%m-%dT%H:%M:%S%z")


def _load_config(args, seed_keys):
    overrides = {}
    if getattr(args, "seed", None) is not None:
        for key in seed_keys:
            overrides[key] = str(args.seed)
    if getattr(args, "rounds", None) is not None:
        overrides["eval.rounds"] = str(args.rounds)
    if getattr(args, "mode", None) is not None:
        overrides["eval.mode"] = args.mode
    if getattr(args, "ablation", None) is not None:
        if args.command == "eval":
            overrides["eval.ablations"] = args.ablation
        else:
            overrides["train.ablation"] = args.ablation
    return config_mod.load(args.config, overrides)


def _read_corpus(corpus_dir):
    path = Path(corpus_dir)
    if path.is_dir():
        path = path / CORPUS_MANIFEST
    return corpus_mod.load_manifest(path)


def _out_dir(path):
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out


# commands ------------------------------------------------------------------

def cmd_gen_data(args):
    cfg = _load_config(args, ["data.seed"])
    started = _now()
    out = _out_dir(args.out)
    corpus = corpus_mod.generate_synthetic(cfg.data)
    corpus_mod.write_manifest(corpus, out, CORPUS_MANIFEST)
    _atomic_write(out / "synth_config.json", json.dumps(cfg.data.to_dict(), indent=2, sort_keys=True) + "\n")
    reloaded = corpus_mod.load_manifest(out / CORPUS_MANIFEST)
    write_run_manifest(out, "gen-data", cfg, corpus_mod.fingerprint(reloaded), cfg.data.seed, started,
                       {"utterances": len(corpus)})
    print(f"wrote {len(corpus)} utterances to {out}")


def cmd_train(args):
    cfg = _load_config(args, ["train.seed"])
    started = _now()
    corpus = _read_corpus(args.corpus)
    out = _out_dir(args.out)
    result = train(corpus, cfg.train, cfg.model, log_path=out / "train_log.jsonl")
    save_checkpoint(out / "model.ckpt", result.bundle, cfg.train.to_dict())
    last = result.log.records[-1] if result.log.records else {}
    write_run_manifest(out, "train", cfg, corpus_mod.fingerprint(corpus), cfg.train.seed, started,
                       {"iterations": len(result.log.records)})
    print(f"trained {cfg.train.ablation} for {len(result.log.records)} iterations; final L_bio {last.get('L_bio')}")


def _stimulus_table(reports):
    stimuli = sorted({s for r in reports.values() for s in r.per_stimulus})
    rows = ["ablation," + ",".join(stimuli)]
    for name, rep in reports.items():
        summ = rep.summary()["per_stimulus_war"]
        cells = [f"{summ[s]['mean']:.4f}+-{summ[s]['std']:.4f}" if s in summ else "" for s in stimuli]
        rows.append(name + "," + ",".join(cells))
    return "\n".join(rows) + "\n"


def cmd_eval(args):
    cfg = _load_config(args, ["train.seed"])
    started = _now()
    corpus = _read_corpus(args.corpus)
    out = _out_dir(args.out)
    reports = {}
    for ablation in cfg.eval.ablations:
        tcfg = replace(cfg.train, ablation=ablation)
        report = evaluation.run_loso(corpus, tcfg, cfg.eval.rounds, cfg.eval.mode, cfg.model, cfg.eval.domain)
        report.meta["domain"] = cfg.eval.domain if cfg.eval.mode == "within" else "target"
        report.write(out / f"report_{cfg.eval.mode}_{ablation}.json")
        reports[ablation] = report
        s = report.summary()
        print(f"{cfg.eval.mode:6s} {ablation:12s} WAR {s['war']['mean']:.4f}+-{s['war']['std']:.4f} "
              f"UAR {s['uar']['mean']:.4f}+-{s['uar']['std']:.4f} "
              f"SpkACC {s['speaker_acc']['mean']:.4f}+-{s['speaker_acc']['std']:.4f}")
    _atomic_write(out / f"per_stimulus_{cfg.eval.mode}.csv", _stimulus_table(reports))
    write_run_manifest(out, "eval", cfg, corpus_mod.fingerprint(corpus), cfg.train.seed, started,
                       {"reports": sorted(f"report_{cfg.eval.mode}_{a}.json" for a in reports)})


def cmd_export_embeddings(args):
    started = _now()
    bundle, header = load_checkpoint(args.checkpoint)
    corpus = _read_corpus(args.corpus)
    emb = bundle.embed([u.features for u in corpus])
    proj, explained = evaluation.pca_project(emb)
    # analysis-only export: target rows carry their held-out evaluation labels
    labels = [u.eval_label() if u.domain == "target" else u.label for u in corpus]
    out_csv = Path(args.out)
    out_csv.parent.mkdir(parents=True, exist_ok=True)
    evaluation.write_embedding_csv(out_csv, proj, [u.domain for u in corpus], labels)
    cfg = config_mod.Config(model=bundle.cfg)
    write_run_manifest(out_csv.parent, "export-embeddings", cfg, corpus_mod.fingerprint(corpus), None, started,
                       {"checkpoint": str(args.checkpoint), "explained_variance": list(explained),
                        "csv": out_csv.name})
    print(f"wrote {len(corpus)} rows to {out_csv} (explained variance {explained[0]:.3f}, {explained[1]:.3f})")


# entry point ---------------------------------------------------------------

def build_parser():
    p = _Parser(prog="dsduda", description="Domain-adapted dysarthric speech detection")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("gen-data", help="synthesize a two-domain corpus")
    g.add_argument("--config")
    g.add_argument("--out", required=True)
    g.add_argument("--seed", type=int)
    g.set_defaults(func=cmd_gen_data)

    t = sub.add_parser("train", help="train one model")
    t.add_argument("corpus", help="corpus directory or manifest file")
    t.add_argument("--config")
    t.add_argument("--out", required=True)
    t.add_argument("--seed", type=int)
    t.add_argument("--ablation")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="leave-one-speaker-out evaluation over an ablation grid")
    e.add_argument("corpus", help="corpus directory or manifest file")
    e.add_argument("--config")
    e.add_argument("--out", required=True)
    e.add_argument("--seed", type=int)
    e.add_argument("--rounds", type=int)
    e.add_argument("--ablation", help="comma-separated ablations (default: the configured grid)")
    e.add_argument("--mode", choices=config_mod.MODES)
    e.set_defaults(func=cmd_eval)

    x = sub.add_parser("export-embeddings", help="PCA of biomarker embeddings as CSV")
    x.add_argument("checkpoint")
    x.add_argument("corpus", help="corpus directory or manifest file")
    x.add_argument("--out", required=True, help="output CSV path")
    x.set_defaults(func=cmd_export_embeddings)
    return p


def main(argv=None):
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_INVALID
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except ConfigError as exc:
        print(exc, file=sys.stderr)
        return EXIT_INVALID
    except Exception as exc:  # noqa: BLE001 - report any runtime failure with a clean exit code
        log.debug("command failed", exc_info=True)
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
