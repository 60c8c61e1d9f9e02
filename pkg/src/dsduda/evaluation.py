"""Metrics, leave-one-speaker-out runs, round aggregation and PCA projection."""

import csv
import json
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from . import losses
from .autodiff import ContractError
from .corpus import loso_split, speakers
from .model import CbrnnConfig, Discriminator
from .train import TrainConfig, train

log = logging.getLogger(__name__)

THRESHOLD = 0.5


@dataclass(frozen=True)
class PredictionRecord:
    speaker: str
    stimulus: str
    domain: str
    label: int
    prob: float

    @property
    def pred(self):
        return int(self.prob > THRESHOLD)

    @property
    def correct(self):
        return self.pred == self.label


def _need(records, what):
    if not records:
        raise ContractError(f"{what} needs at least one prediction record")


def war(records):
    """Fraction of utterances classified correctly."""
    _need(records, "war")
    return sum(r.correct for r in records) / len(records)


def uar(records):
    """Mean of the per-class recalls; both classes must be present."""
    _need(records, "uar")
    recalls = []
    for label in (0, 1):
        rows = [r for r in records if r.label == label]
        if not rows:
            raise ContractError(f"uar is undefined: no records with label {label}")
        recalls.append(sum(r.correct for r in rows) / len(rows))
    return sum(recalls) / 2.0


def speaker_acc(records):
    """Fraction of speakers with strictly more than half their utterances correct."""
    _need(records, "speaker_acc")
    tally = {}
    for r in records:
        ok, n = tally.get(r.speaker, (0, 0))
        tally[r.speaker] = (ok + r.correct, n + 1)
    return sum(2 * ok > n for ok, n in tally.values()) / len(tally)


def war_by_stimulus(records):
    """WAR per stimulus type present in ``records``."""
    groups = {}
    for r in records:
        groups.setdefault(r.stimulus, []).append(r)
    return {s: war(rows) for s, rows in sorted(groups.items())}


# reports -------------------------------------------------------------------

@dataclass
class MetricsReport:
    rounds: int
    per_round: dict                  # metric -> list of per-round values
    per_stimulus: dict               # stimulus -> list of per-round values
    meta: dict = field(default_factory=dict)

    @classmethod
    def from_rounds(cls, round_records, meta=None):
        if not round_records:
            raise ContractError("a report needs at least one round")
        per_round = {"war": [], "uar": [], "speaker_acc": []}
        per_stimulus = {}
        for records in round_records:
            per_round["war"].append(war(records))
            per_round["uar"].append(uar(records))
            per_round["speaker_acc"].append(speaker_acc(records))
            for stim, value in war_by_stimulus(records).items():
                per_stimulus.setdefault(stim, []).append(value)
        return cls(len(round_records), per_round, per_stimulus, dict(meta or {}))

    def mean(self, metric):
        return float(np.mean(self.per_round[metric]))

    def std(self, metric):
        # population standard deviation over rounds
        return float(np.std(self.per_round[metric]))

    def summary(self):
        out = {m: {"mean": self.mean(m), "std": self.std(m)} for m in self.per_round}
        out["per_stimulus_war"] = {
            s: {"mean": float(np.mean(v)), "std": float(np.std(v))} for s, v in self.per_stimulus.items()
        }
        return out

    def to_dict(self):
        return {
            "rounds": self.rounds,
            "summary": self.summary(),
            "per_round": self.per_round,
            "per_stimulus": self.per_stimulus,
            "meta": self.meta,
        }

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def write(self, path):
        path = Path(path)
        tmp = path.with_suffix(path.suffix + ".tmp")
        tmp.write_text(self.to_json() + "\n")
        tmp.replace(path)

    @classmethod
    def from_dict(cls, d):
        return cls(d["rounds"], d["per_round"], d["per_stimulus"], d.get("meta", {}))

    @classmethod
    def read(cls, path):
        return cls.from_dict(json.loads(Path(path).read_text()))


# leave-one-speaker-out -----------------------------------------------------

MODES = ("within", "cross")


def run_seed(base_seed, round_idx, fold):
    return base_seed * 1000 + round_idx * 100 + fold


def fold_plan(corpus, mode, domain="target"):
    """The held-out speakers, in corpus order.

    Cross-domain folds hold out target speakers. Within-domain folds hold out
    speakers of ``domain``, whose labels become training labels.
    """
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}, got {mode!r}")
    held = speakers(corpus, "target" if mode == "cross" else domain)
    if not held:
        raise ContractError(f"no {'target' if mode == 'cross' else domain}-domain speakers to hold out")
    return held


def _fold_data(corpus, mode, domain, speaker):
    if mode == "cross":
        train_set, test = loso_split(corpus, speaker)
        return train_set, test
    pool = [u for u in corpus if u.domain == domain]
    train_set, test = loso_split(pool, speaker)
    if domain == "target":
        # within-domain protocol: the target labels are the training labels
        train_set = [u.as_labelled_source() for u in train_set]
    return train_set, test


def _label_of(u):
    return u.eval_label() if u.domain == "target" else u.label


def run_fold(corpus, cfg, mode, speaker, seed, model_cfg=None, domain="target"):
    """Train on every speaker but ``speaker`` and predict that speaker's utterances."""
    train_set, test = _fold_data(corpus, mode, domain, speaker)
    result = train(train_set, _with_seed(cfg, seed), model_cfg)
    probs = result.bundle.predict_proba([u.features for u in test])
    # labels are read only after prediction, through the evaluation accessor
    return [
        PredictionRecord(u.speaker, u.stimulus, u.domain, int(_label_of(u)), float(p))
        for u, p in zip(test, probs)
    ]


def _with_seed(cfg, seed):
    d = cfg.to_dict()
    d["seed"] = seed
    d["weights"] = cfg.weights
    return TrainConfig(**d)


def _run_task(args):
    return run_fold(*args)


def worker_count(limit=None):
    """Parallel workers: ``limit`` if given, else DSD_THREADS, else 1."""
    if limit is None:
        limit = os.environ.get("DSD_THREADS", "1")
    try:
        n = int(limit)
    except ValueError:
        raise ValueError(f"DSD_THREADS must be a positive integer, got {limit!r}") from None
    if n < 1:
        raise ValueError(f"DSD_THREADS must be a positive integer, got {limit!r}")
    return n


def run_loso(corpus, cfg, rounds, mode="cross", model_cfg=None, domain="target", workers=None):
    """Leave-one-speaker-out over ``rounds`` seeds; records are pooled across folds per round."""
    if rounds < 1:
        raise ValueError(f"rounds must be >= 1, got {rounds}")
    if mode == "within" and cfg.uda:
        raise ContractError(f"within-domain runs use labelled data only; ablation {cfg.ablation!r} needs a target stream")
    model_cfg = model_cfg or CbrnnConfig()
    held = fold_plan(corpus, mode, domain)
    tasks = [
        (corpus, cfg, mode, spk, run_seed(cfg.seed, r, f), model_cfg, domain)
        for r in range(rounds) for f, spk in enumerate(held)
    ]
    n_workers = min(worker_count(workers), len(tasks))
    if n_workers > 1:
        with ProcessPoolExecutor(n_workers) as pool:
            results = list(pool.map(_run_task, tasks))
    else:
        results = [_run_task(t) for t in tasks]
    round_records = []
    for r in range(rounds):
        chunk = results[r * len(held):(r + 1) * len(held)]
        round_records.append([rec for fold in chunk for rec in fold])
        log.info("round %d: WAR %.3f", r, war(round_records[-1]))
    meta = {"mode": mode, "ablation": cfg.ablation, "folds": held, "base_seed": cfg.seed}
    return MetricsReport.from_rounds(round_records, meta)


# domain probe --------------------------------------------------------------

def _fit_probe(src_tr, tgt_tr, src_te, tgt_te, rng, steps, lr):
    probe = Discriminator(src_tr.shape[1], rng)
    params = probe.parameters()
    x_src, x_tgt = ad.Tensor(src_tr), ad.Tensor(tgt_tr)
    for _ in range(steps):
        loss = losses.discrimination_loss(probe(x_src), probe(x_tgt))
        ad.backward(loss)
        ad.adam_step(params, lr)
    probe.freeze()
    acc_src = float(np.mean(probe(ad.Tensor(src_te)).data > THRESHOLD))
    acc_tgt = float(np.mean(probe(ad.Tensor(tgt_te)).data <= THRESHOLD))
    return 0.5 * (acc_src + acc_tgt)


def probe_domain_accuracy(emb_source, emb_target, seed=0, steps=300, lr=1e-3, test_fraction=0.5):
    """Balanced held-out accuracy of a fresh discriminator trained on frozen embeddings.

    Each domain is split into train and test parts at random; the score
    averages the two per-domain accuracies on the test parts, so chance is
    0.5 whatever the domain sizes. Utterances of one speaker can land on
    both sides, see :func:`speaker_probe_accuracy` for the stricter split.
    """
    emb_source, emb_target = np.asarray(emb_source, float), np.asarray(emb_target, float)
    if min(len(emb_source), len(emb_target)) < 2:
        raise ContractError("the probe needs at least two embeddings per domain")
    rng = np.random.default_rng(seed)
    parts = []
    for emb in (emb_source, emb_target):
        order = rng.permutation(len(emb))
        n_test = min(max(1, int(round(len(emb) * test_fraction))), len(emb) - 1)
        parts.append((emb[order[n_test:]], emb[order[:n_test]]))
    (src_tr, src_te), (tgt_tr, tgt_te) = parts
    return _fit_probe(src_tr, tgt_tr, src_te, tgt_te, rng, steps, lr)


def _held_out_speakers(speakers_, labels, rng):
    # half of each class's speakers, at least one, never all
    held = set()
    for cls in sorted(set(labels)):
        spk = sorted({s for s, y in zip(speakers_, labels) if y == cls})
        if len(spk) < 2:
            raise ContractError(f"the speaker probe needs two speakers of class {cls} per domain, got {len(spk)}")
        held.update(rng.permutation(spk)[: len(spk) // 2].tolist())
    return np.array([s in held for s in speakers_])


def speaker_probe_accuracy(emb_source, emb_target, spk_source, spk_target, lab_source, lab_target,
                           seed=0, repeats=4, steps=300, lr=1e-3):
    """Domain probe tested on speakers it never saw, averaged over ``repeats`` splits.

    Held-out speakers are drawn per class, so the probe cannot score by
    remembering speakers or by reading the class off a one-class test set.
    Target labels here are evaluation labels; this is analysis only.
    """
    emb_source, emb_target = np.asarray(emb_source, float), np.asarray(emb_target, float)
    rng = np.random.default_rng(seed)
    scores = []
    for _ in range(repeats):
        ms = _held_out_speakers(spk_source, lab_source, rng)
        mt = _held_out_speakers(spk_target, lab_target, rng)
        scores.append(_fit_probe(emb_source[~ms], emb_target[~mt], emb_source[ms], emb_target[mt], rng, steps, lr))
    return float(np.mean(scores))


def domain_probe(bundle, corpus, seed=0, repeats=4):
    """Speaker-held-out domain probe on ``bundle``'s frozen biomarker embeddings of ``corpus``."""
    src = [u for u in corpus if u.domain == "source"]
    tgt = [u for u in corpus if u.domain == "target"]
    emb_s = bundle.embed([u.features for u in src])
    emb_t = bundle.embed([u.features for u in tgt])
    return speaker_probe_accuracy(emb_s, emb_t, [u.speaker for u in src], [u.speaker for u in tgt],
                                  [u.label for u in src], [u.eval_label() for u in tgt], seed, repeats)


# PCA -----------------------------------------------------------------------

def _top_eigenpair(cov, tol, max_iter):
    n = cov.shape[0]
    v = np.ones(n) / np.sqrt(n) + np.linspace(0.0, 1e-3, n)
    v /= np.linalg.norm(v)
    lam = float(v @ cov @ v)
    for _ in range(max_iter):
        w = cov @ v
        norm = np.linalg.norm(w)
        if norm == 0.0:
            return 0.0, v
        v = w / norm
        lam = float(v @ cov @ v)
        if np.linalg.norm(cov @ v - lam * v) <= tol * max(1.0, abs(lam)):
            break
    return lam, v


def principal_components(data, k=2, tol=1e-10, max_iter=100000):
    """Top-``k`` covariance eigenpairs by power iteration with deflation.

    Returns (components [k, D], eigenvalues [k], total variance). Each
    component's largest-magnitude coordinate is made positive.
    """
    x = np.asarray(data, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 3:
        raise ContractError(f"PCA needs at least 3 points in a 2-D array, got shape {list(x.shape)}")
    centred = x - x.mean(axis=0)
    cov = centred.T @ centred / x.shape[0]
    total = float(np.trace(cov))
    work = cov.copy()
    comps, vals = [], []
    for _ in range(k):
        lam, v = _top_eigenpair(work, tol, max_iter)
        # re-orthogonalise against earlier components to keep round-off out
        for c in comps:
            v = v - (c @ v) * c
        v /= np.linalg.norm(v)
        if v[np.argmax(np.abs(v))] < 0:
            v = -v
        comps.append(v)
        vals.append(lam)
        work = work - lam * np.outer(v, v)
    return np.array(comps), np.array(vals), total


def pca_project(embeddings, tol=1e-10):
    """Project onto the first two principal components.

    Returns ([N, 2] projection, (explained variance ratio of PC1, of PC2)).
    """
    comps, vals, total = principal_components(embeddings, 2, tol)
    x = np.asarray(embeddings, dtype=np.float64)
    proj = (x - x.mean(axis=0)) @ comps.T
    ratios = (vals / total) if total > 0 else np.zeros(2)
    return proj, (float(ratios[0]), float(ratios[1]))


def write_embedding_csv(path, projection, domains, labels):
    """CSV with header pc1,pc2,domain,label."""
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["pc1", "pc2", "domain", "label"])
        for (a, b), d, y in zip(projection, domains, labels):
            w.writerow([repr(float(a)), repr(float(b)), d, "" if y is None else int(y)])
    tmp.replace(path)


def read_embedding_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def report_dict(report):
    return asdict(report)
