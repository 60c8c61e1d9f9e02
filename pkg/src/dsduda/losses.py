"""Training objectives: dysarthria cross-entropy, domain cross-entropy, vCLUB and the combined loss.

Domain label convention: source = 1, target = 0.
"""

from contextlib import contextmanager
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import ContractError, DimensionError


@dataclass(frozen=True)
class LossWeights:
    bio: float = 1.0      # lambda_1
    adv: float = 0.1      # lambda_2, also the gradient-reversal scale
    dom: float = 1.0      # lambda_3
    mi: float = 1e-4      # lambda_4

    def __post_init__(self):
        for name in ("bio", "adv", "dom", "mi"):
            if getattr(self, name) < 0:
                raise ValueError(f"loss weight {name} must be >= 0, got {getattr(self, name)}")


@contextmanager
def frozen(group):
    """Temporarily exclude a parameter group from the graph."""
    saved = [(p, p.requires_grad) for p in group.parameters()]
    for p, _ in saved:
        p.requires_grad = False
    try:
        yield group
    finally:
        for p, flag in saved:
            p.requires_grad = flag


def _bce_terms(probs, labels):
    labels = np.asarray(labels, dtype=np.float64)
    y = ad.Tensor(labels)
    pos = ad.mul(y, ad.log(probs))
    neg = ad.mul(ad.Tensor(1.0 - labels), ad.log(ad.shift(ad.neg(probs), 1.0)))
    return ad.add(pos, neg)


def dpc_loss(probs, labels):
    """Mean binary cross-entropy of dysarthria posteriors against 0/1 labels."""
    probs = ad._wrap(probs)
    labels = np.asarray(labels, dtype=np.float64).reshape(-1)
    if probs.data.ndim != 1 or probs.data.shape[0] != labels.shape[0]:
        raise DimensionError(f"dpc_loss: {probs.shape} predictions vs {labels.shape[0]} labels")
    if labels.shape[0] == 0:
        raise ContractError("dpc_loss needs at least one utterance")
    return ad.neg(ad.reduce_mean(_bce_terms(probs, labels)))


def binary_domain_ce(probs_src, probs_tgt):
    """-(mean log f(source) + mean log(1 - f(target))) / 2.

    The cross-entropy of a batch holding both domains in equal weight, so it
    is ln 2 at chance whatever the domain sizes. Fed discriminator outputs
    this is the discrimination loss; fed domain classifier outputs it is the
    domain classification loss.
    """
    probs_src, probs_tgt = ad._wrap(probs_src), ad._wrap(probs_tgt)
    if probs_src.data.size == 0 or probs_tgt.data.size == 0:
        raise ContractError(
            f"domain loss needs both domains; got {probs_src.data.size} source, {probs_tgt.data.size} target"
        )
    src = ad.reduce_mean(ad.log(probs_src))
    tgt = ad.reduce_mean(ad.log(ad.shift(ad.neg(probs_tgt), 1.0)))
    return ad.scale(ad.add(src, tgt), -0.5)


discrimination_loss = binary_domain_ce
domain_loss = binary_domain_ce


def _check_pairs(x, z):
    if x.data.ndim != 2 or z.data.ndim != 2 or x.data.shape[0] != z.data.shape[0]:
        raise DimensionError(f"paired batches required, got x {x.shape} and z {z.shape}")


def log_density(phi, x, z):
    """log q_phi(x_b | z_b) for each row: [B]."""
    mu, lv = phi(z)
    return ad.gaussian_log_density(x, mu, lv)


def variational_lld(phi, x, z):
    """Mean log-likelihood of x under q_phi(.|z); the inputs are treated as constants."""
    x, z = ad._wrap(x).detach(), ad._wrap(z).detach()
    _check_pairs(x, z)
    if x.data.shape[0] < 1:
        raise ContractError("variational_lld needs at least one pair")
    return ad.reduce_mean(log_density(phi, x, z))


def vclub_mi(phi, x, z, pairing="all", rng=None):
    """vCLUB estimate: matched-pair log-likelihood minus the mean over mismatched pairings.

    ``pairing="all"`` averages over the full B x B grid; ``"shuffle"`` uses one
    random permutation (needs ``rng``). phi is held fixed; gradients reach x
    and z only.
    """
    x, z = ad._wrap(x), ad._wrap(z)
    _check_pairs(x, z)
    B = x.data.shape[0]
    if B < 2:
        raise ContractError(f"vclub_mi needs a batch of at least 2, got {B}")
    with frozen(phi):
        mu, lv = phi(z)
    if pairing == "all":
        grid = ad.pairwise_gaussian_log_density(x, mu, lv)
        matched = ad.transpose(ad.expand_rows(ad.diagonal(grid), B))
        return ad.reduce_mean(ad.sub(matched, grid))
    if pairing == "shuffle":
        if rng is None:
            raise ValueError("shuffle pairing needs an rng")
        perm = rng.permutation(B)
        pos = ad.gaussian_log_density(x, mu, lv)
        neg = ad.gaussian_log_density(x, ad.take_rows(mu, perm), ad.take_rows(lv, perm))
        return ad.reduce_mean(ad.sub(pos, neg))
    raise ValueError(f"unknown pairing {pairing!r}")


def total_dsd_loss(weights, l_bio, l_adv=None, l_dom=None, l_mi=None):
    """lambda1*L_bio + L_adv + lambda3*L_dom + lambda4*L_mi.

    ``l_adv`` must already be the discriminator cross-entropy evaluated on
    ``grad_reverse(x, weights.adv)``: the reversal layer carries both the sign
    flip and the lambda2 scale, so it enters unweighted. Pass None for any
    term an ablation switches off.
    """
    total = ad.scale(l_bio, weights.bio)
    if l_adv is not None and weights.adv > 0:
        total = ad.add(total, l_adv)
    if l_dom is not None:
        total = ad.add(total, ad.scale(l_dom, weights.dom))
    if l_mi is not None:
        total = ad.add(total, ad.scale(l_mi, weights.mi))
    return total
