import json

import numpy as np
import pytest

from dsduda import autodiff as ad
from dsduda import corpus as C
from dsduda import losses
from dsduda import train as T
from dsduda.autodiff import ContractError
from dsduda.losses import LossWeights
from dsduda.model import GROUPS, ModelBundle, load_checkpoint
from dsduda.train import TrainConfig

# groups each phase may step, per ablation
PHASES = {
    "baseline": [{"bio_encoder", "bio_classifier"}],
    "dat_only": [{"discriminator"}, {"bio_encoder", "bio_classifier"}],
    "mim_only": [{"variational"}, {"bio_encoder", "bio_classifier", "dom_encoder", "dom_classifier"}],
    "dat_and_mim": [{"discriminator"}, {"variational"},
                    {"bio_encoder", "bio_classifier", "dom_encoder", "dom_classifier"}],
}


def changed_groups(before, after):
    return {g for g in GROUPS if any(not np.array_equal(before[g][k], after[g][k]) for k in before[g])}


def first_batch(corpus, cfg):
    return C.make_batches(corpus, cfg.batch_size, cfg.seed, 0, uda=cfg.uda)[0]


@pytest.mark.parametrize("ablation", sorted(PHASES))
def test_each_phase_steps_only_its_groups(ablation, tiny_corpus, tiny_model, monkeypatch):
    bundle = ModelBundle.create(tiny_model, 0)
    cfg = TrainConfig(batch_size=4, ablation=ablation, alpha=1e-2, beta=1e-2, gamma=1e-2)
    snaps = []
    real_step = ad.adam_step

    def spy(params, lr):
        before = bundle.snapshot()
        real_step(params, lr)
        snaps.append((before, bundle.snapshot()))

    monkeypatch.setattr(ad, "adam_step", spy)
    start = bundle.snapshot()
    T.train_iteration(bundle, first_batch(tiny_corpus, cfg), cfg)
    assert [changed_groups(b, a) for b, a in snaps] == PHASES[ablation]
    # nothing moves between the optimiser calls
    assert changed_groups(start, snaps[0][0]) == set()
    for (_, after), (before, _) in zip(snaps, snaps[1:]):
        assert changed_groups(after, before) == set()


def naive_iteration(bundle, batch, cfg):
    """Algorithm reference: every phase recomputes the embeddings it needs."""
    feats = batch.source_features + batch.target_features
    src = np.arange(len(batch.source))
    tgt = np.arange(len(batch.source), len(feats))
    T._only(bundle, "discriminator")
    x = bundle.bio_encoder(feats)
    p = bundle.discriminator(x)
    ad.backward(losses.discrimination_loss(ad.take_rows(p, src), ad.take_rows(p, tgt)))
    ad.adam_step(bundle.discriminator.parameters(), cfg.alpha)

    T._only(bundle, "variational")
    x, z = bundle.bio_encoder(feats), bundle.dom_encoder(feats)
    ad.backward(ad.neg(losses.variational_lld(bundle.variational, x, z)))
    ad.adam_step(bundle.variational.parameters(), cfg.beta)

    params = T._only(bundle, "bio_encoder", "bio_classifier", "dom_encoder", "dom_classifier")
    x, z = bundle.bio_encoder(feats), bundle.dom_encoder(feats)
    l_bio = losses.dpc_loss(bundle.bio_classifier(ad.take_rows(x, src)), batch.source_labels)
    p = bundle.discriminator(ad.grad_reverse(x, cfg.weights.adv))
    l_adv = losses.discrimination_loss(ad.take_rows(p, src), ad.take_rows(p, tgt))
    q = bundle.dom_classifier(z)
    l_dom = losses.domain_loss(ad.take_rows(q, src), ad.take_rows(q, tgt))
    l_mi = losses.vclub_mi(bundle.variational, x, z)
    ad.backward(losses.total_dsd_loss(cfg.weights, l_bio, l_adv, l_dom, l_mi))
    ad.adam_step(params, cfg.gamma)
    T._only(bundle)


def test_shared_forward_matches_naive_recompute(tiny_corpus, tiny_model):
    cfg = TrainConfig(batch_size=4, alpha=1e-2, beta=1e-2, gamma=1e-2,
                      weights=LossWeights(adv=0.5, mi=0.1))
    shared, naive = ModelBundle.create(tiny_model, 1), ModelBundle.create(tiny_model, 1)
    for batch in C.make_batches(tiny_corpus, cfg.batch_size, cfg.seed)[:2]:
        T.train_iteration(shared, batch, cfg)
        naive_iteration(naive, batch, cfg)
    a, b = shared.snapshot(), naive.snapshot()
    for g in GROUPS:
        for k in a[g]:
            assert np.array_equal(a[g][k], b[g][k]), f"{g}/{k}"


def test_training_is_deterministic(tiny_corpus, tiny_model, quick_train):
    runs = [T.train(tiny_corpus, quick_train, tiny_model) for _ in range(2)]
    strip = [[{k: v for k, v in r.items() if k != "wall"} for r in run.log.records] for run in runs]
    assert strip[0] == strip[1]
    for p, q in zip(runs[0].bundle.parameters(), runs[1].bundle.parameters()):
        assert np.array_equal(p.data, q.data)


def test_log_records(tiny_corpus, tiny_model, quick_train, tmp_path):
    result = T.train(tiny_corpus, quick_train, tiny_model, log_path=tmp_path / "log.jsonl",
                     checkpoint_dir=tmp_path)
    lines = [json.loads(s) for s in (tmp_path / "log.jsonl").read_text().splitlines()]
    assert len(lines) == len(result.log.records) == result.log.epoch_ends[-1]
    for rec in lines:
        assert all(np.isfinite(rec[k]) for k in ("L_dis", "L_lld", "L_bio", "L_dom", "L_mi", "L_dsd", "L_adv"))
    assert [r["iteration"] for r in lines] == list(range(len(lines)))
    back, _ = load_checkpoint(tmp_path / "epoch00.ckpt")
    assert np.array_equal(back.bio_encoder["lstm.w_hh"].data, result.bio_encoder["lstm.w_hh"].data)


def test_baseline_logs_no_adaptation_terms(tiny_corpus, tiny_model):
    cfg = TrainConfig(epochs=1, batch_size=4, ablation="baseline")
    rec = T.train(tiny_corpus, cfg, tiny_model).log.records[0]
    assert rec["L_dis"] is None and rec["L_lld"] is None and rec["L_mi"] is None
    assert rec["L_dsd"] == rec["L_bio"]


def test_zero_adv_weight_disables_dat():
    cfg = TrainConfig(ablation="dat_only", weights=LossWeights(adv=0.0))
    assert not cfg.uses_dat and not cfg.uda


def test_uda_needs_target(source_only, tiny_model):
    for ablation in ("dat_only", "mim_only", "dat_and_mim"):
        with pytest.raises(ContractError, match="target"):
            T.train(source_only, TrainConfig(epochs=1, ablation=ablation), tiny_model)
    with pytest.raises(ContractError):
        T.train([], TrainConfig(epochs=1, ablation="baseline"), tiny_model)


def test_iteration_checks_batch(tiny_corpus, tiny_model):
    bundle = ModelBundle.create(tiny_model, 0)
    src = [u for u in tiny_corpus if u.domain == "source"][:3]
    with pytest.raises(ContractError):
        T.train_iteration(bundle, C.Batch(src, []), TrainConfig(ablation="dat_and_mim"))
    with pytest.raises(ContractError):
        T.train_iteration(bundle, C.Batch([], src), TrainConfig(ablation="baseline"))


def test_training_never_reads_target_labels(tiny_corpus, tiny_model, quick_train):
    before = C.Utterance.eval_label_reads
    T.train(tiny_corpus, quick_train, tiny_model)
    assert C.Utterance.eval_label_reads == before


def test_bad_train_config():
    with pytest.raises(ValueError) as exc:
        TrainConfig(alpha=0, epochs=0, ablation="all")
    for word in ("alpha", "epochs", "ablation"):
        assert word in str(exc.value)


def separable_corpus(rng, n=16, frames=12):
    corpus = []
    for i in range(n):
        label = i % 2
        f = rng.normal(size=(frames, 80)) + (1.5 if label else -1.5)
        corpus.append(C.Utterance(f, f"s{i % 4}", label, "source", "word", uid=f"u{i}"))
    return corpus


def test_baseline_fits_separable_toy():
    # default encoder and learning rates
    corpus = separable_corpus(np.random.default_rng(0))
    cfg = TrainConfig(epochs=8, batch_size=4, ablation="baseline")
    log = T.train(corpus, cfg).log
    last_epoch = log.records[log.epoch_ends[-2]:]
    assert np.mean([r["L_bio"] for r in last_epoch]) < 0.1
