"""The alternating three-phase training loop.

Per batch: (a) update the domain discriminator, (b) fit the variational
posterior by gradient ascent on its log-likelihood, (c) update encoders and
classifiers on the combined loss with the discriminator and posterior held
fixed. Ablations skip the phases and loss terms they switch off.
"""

import json
import logging
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from . import losses
from .corpus import make_batches, split_domains
from .autodiff import ContractError
from .losses import LossWeights
from .model import CbrnnConfig, ModelBundle, save_checkpoint

log = logging.getLogger(__name__)

ABLATIONS = ("baseline", "dat_only", "mim_only", "dat_and_mim")


@dataclass(frozen=True)
class TrainConfig:
    alpha: float = 1e-4   # discriminator
    beta: float = 1e-4    # variational net
    gamma: float = 1e-3   # encoders and classifiers
    epochs: int = 8
    batch_size: int = 16
    weights: LossWeights = field(default_factory=LossWeights)
    ablation: str = "dat_and_mim"
    seed: int = 0

    def __post_init__(self):
        errs = []
        for name in ("alpha", "beta", "gamma"):
            if not getattr(self, name) > 0:
                errs.append(f"{name} must be > 0")
        if self.epochs < 1:
            errs.append("epochs must be >= 1")
        if self.batch_size < 1:
            errs.append("batch_size must be >= 1")
        if self.ablation not in ABLATIONS:
            errs.append(f"ablation must be one of {ABLATIONS}")
        if errs:
            raise ValueError("; ".join(errs))

    @property
    def uses_dat(self):
        return self.ablation in ("dat_only", "dat_and_mim") and self.weights.adv > 0

    @property
    def uses_mim(self):
        return self.ablation in ("mim_only", "dat_and_mim")

    @property
    def uda(self):
        return self.uses_dat or self.uses_mim

    def to_dict(self):
        return asdict(self)


@dataclass
class TrainLog:
    records: list = field(default_factory=list)
    epoch_ends: list = field(default_factory=list)

    def write_jsonl(self, path):
        path = Path(path)
        tmp = path.with_suffix(path.suffix + ".tmp")
        tmp.write_text("".join(json.dumps(r, sort_keys=True) + "\n" for r in self.records))
        tmp.replace(path)

    def series(self, key):
        return [r[key] for r in self.records]


@dataclass
class TrainResult:
    bundle: ModelBundle
    log: TrainLog

    @property
    def bio_encoder(self):
        return self.bundle.bio_encoder

    @property
    def bio_classifier(self):
        return self.bundle.bio_classifier


def _only(bundle, *names):
    """Freeze every group except ``names``; return their parameters."""
    params = []
    for gname, group in bundle.groups().items():
        if gname in names:
            group.unfreeze()
            params.extend(group.parameters())
        else:
            group.freeze()
    return params


def _value(t):
    return None if t is None else t.item()


def train_iteration(bundle, batch, cfg):
    """Run phases (a), (b), (c) on one batch; returns the loss record."""
    src_feats, tgt_feats = batch.source_features, batch.target_features
    if not src_feats:
        raise ContractError("batch has no source-domain utterances")
    if cfg.uda and not tgt_feats:
        raise ContractError(f"ablation {cfg.ablation!r} needs target-domain utterances in every batch")
    n_src = len(src_feats)
    feats = src_feats + tgt_feats if cfg.uda else src_feats
    src_idx = np.arange(n_src)
    tgt_idx = np.arange(n_src, len(feats))
    rec = {"L_dis": None, "L_lld": None, "L_bio": None, "L_dom": None, "L_mi": None, "L_dsd": None}

    trainable = ["bio_encoder", "bio_classifier"]
    if cfg.uses_mim:
        trainable += ["dom_encoder", "dom_classifier"]
    params = _only(bundle, *trainable)
    # Encoders only change at the end of phase (c), so the embeddings phases
    # (a) and (b) need are exactly the values of this forward pass; they read
    # detached copies and the graph is kept for (c).
    x = bundle.bio_encoder(feats)
    z = bundle.dom_encoder(feats) if cfg.uses_mim else None

    if cfg.uses_dat:
        _only(bundle, "discriminator")
        p = bundle.discriminator(x.detach())
        l_dis = losses.discrimination_loss(ad.take_rows(p, src_idx), ad.take_rows(p, tgt_idx))
        ad.backward(l_dis)
        ad.adam_step(bundle.discriminator.parameters(), cfg.alpha)
        rec["L_dis"] = l_dis.item()

    if cfg.uses_mim:
        _only(bundle, "variational")
        l_lld = losses.variational_lld(bundle.variational, x, z)
        ad.backward(ad.neg(l_lld))
        ad.adam_step(bundle.variational.parameters(), cfg.beta)
        rec["L_lld"] = l_lld.item()

    _only(bundle, *trainable)
    l_bio = losses.dpc_loss(bundle.bio_classifier(ad.take_rows(x, src_idx)), batch.source_labels)
    l_adv = l_dom = l_mi = None
    if cfg.uses_dat:
        p = bundle.discriminator(ad.grad_reverse(x, cfg.weights.adv))
        l_adv = losses.discrimination_loss(ad.take_rows(p, src_idx), ad.take_rows(p, tgt_idx))
    if cfg.uses_mim:
        q = bundle.dom_classifier(z)
        l_dom = losses.domain_loss(ad.take_rows(q, src_idx), ad.take_rows(q, tgt_idx))
        l_mi = losses.vclub_mi(bundle.variational, x, z)
    l_dsd = losses.total_dsd_loss(cfg.weights, l_bio, l_adv, l_dom, l_mi)
    ad.backward(l_dsd)
    ad.adam_step(params, cfg.gamma)
    _only(bundle)
    rec.update(L_bio=l_bio.item(), L_dom=_value(l_dom), L_mi=_value(l_mi), L_dsd=l_dsd.item())
    if l_adv is not None:
        rec["L_adv"] = l_adv.item()
    return rec


def train(corpus, cfg, model_cfg=None, bundle=None, log_path=None, checkpoint_dir=None):
    """Train a bundle on ``corpus``; the deployable detector is ``result.bio_encoder`` + ``result.bio_classifier``."""
    model_cfg = model_cfg or CbrnnConfig()
    src, tgt = split_domains(corpus)
    if not src:
        raise ContractError("training corpus has no labelled source-domain utterances")
    if cfg.uda and not tgt:
        raise ContractError(f"ablation {cfg.ablation!r} needs target-domain utterances; the corpus has none")
    bundle = bundle or ModelBundle.create(model_cfg, cfg.seed)
    tlog = TrainLog()
    it = 0
    t0 = time.perf_counter()
    for epoch in range(cfg.epochs):
        for batch in make_batches(corpus, cfg.batch_size, cfg.seed, epoch, uda=cfg.uda):
            rec = train_iteration(bundle, batch, cfg)
            rec.update(iteration=it, epoch=epoch, wall=round(time.perf_counter() - t0, 4))
            tlog.records.append(rec)
            for key in ("L_dis", "L_lld", "L_bio", "L_dom", "L_mi", "L_dsd"):
                v = rec.get(key)
                if v is not None and not np.isfinite(v):
                    raise FloatingPointError(f"{key} became {v} at iteration {it}")
            it += 1
        tlog.epoch_ends.append(it)
        log.debug("epoch %d done: L_bio=%.4f", epoch, rec["L_bio"])
        if checkpoint_dir is not None:
            save_checkpoint(Path(checkpoint_dir) / f"epoch{epoch:02d}.ckpt", bundle, cfg.to_dict())
    if log_path is not None:
        tlog.write_jsonl(log_path)
    return TrainResult(bundle, tlog)

