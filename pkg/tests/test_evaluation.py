import json

import numpy as np
import pytest

from dsduda import evaluation as E
from dsduda.autodiff import ContractError
from dsduda.evaluation import PredictionRecord
from dsduda.train import TrainConfig


def random_records(rng, n=None, n_speakers=None):
    n = n or int(rng.integers(1, 60))
    n_speakers = n_speakers or int(rng.integers(1, 8))
    probs = rng.random(n)
    # exact 0.5 probabilities exercise the strict threshold
    probs[rng.random(n) < 0.1] = 0.5
    return [
        PredictionRecord(f"s{rng.integers(n_speakers)}", str(rng.choice(["word", "sentence"])), "target",
                         int(rng.integers(2)), float(p))
        for p in probs
    ]


def recount(records):
    preds = [1 if r.prob > 0.5 else 0 for r in records]
    ok = [p == r.label for p, r in zip(preds, records)]
    war = sum(ok) / len(ok)
    rec = []
    for y in (0, 1):
        idx = [i for i, r in enumerate(records) if r.label == y]
        rec.append(sum(ok[i] for i in idx) / len(idx) if idx else None)
    spk = {}
    for o, r in zip(ok, records):
        spk.setdefault(r.speaker, []).append(o)
    acc = sum(1 for v in spk.values() if sum(v) > len(v) / 2) / len(spk)
    return war, rec, acc


def test_metrics_match_recount_on_1000_random_sets():
    rng = np.random.default_rng(7)
    for _ in range(1000):
        records = random_records(rng)
        war, rec, acc = recount(records)
        assert E.war(records) == war
        assert E.speaker_acc(records) == acc
        if None in rec:
            with pytest.raises(ContractError):
                E.uar(records)
        else:
            assert E.uar(records) == (rec[0] + rec[1]) / 2


def test_threshold_is_strict():
    assert PredictionRecord("a", "word", "target", 0, 0.5).pred == 0
    assert PredictionRecord("a", "word", "target", 1, 0.5000001).pred == 1


def test_speaker_acc_strict_majority_boundary():
    # two of four correct is exactly half, so the speaker does not count
    half = [PredictionRecord("a", "word", "target", y, p) for y, p in ((1, .9), (1, .8), (1, .1), (1, .2))]
    assert E.speaker_acc(half) == 0.0
    three = half + [PredictionRecord("a", "word", "target", 1, .7)]
    assert E.speaker_acc(three) == 1.0


def test_speaker_acc_spot_value():
    records = []
    for s in range(14):
        good = s < 9
        records += [PredictionRecord(f"s{s}", "word", "target", 1, 0.9 if good else 0.1)] * 3
    assert E.speaker_acc(records) == pytest.approx(9 / 14)


def test_uar_spot_value():
    recs = [PredictionRecord("a", "word", "target", 1, 0.9 if i < 9 else 0.1) for i in range(10)]
    recs += [PredictionRecord("b", "word", "target", 0, 0.1 if i < 5 else 0.9) for i in range(10)]
    assert E.uar(recs) == pytest.approx(0.7)


def test_metrics_need_records():
    for fn in (E.war, E.uar, E.speaker_acc):
        with pytest.raises(ContractError):
            fn([])


def test_war_by_stimulus(rng):
    records = random_records(rng, n=200)
    by = E.war_by_stimulus(records)
    for stim, value in by.items():
        assert value == E.war([r for r in records if r.stimulus == stim])


def test_report_population_std_and_round_trip(tmp_path):
    rng = np.random.default_rng(3)
    rounds = []
    while len(rounds) < 4:
        recs = random_records(rng, n=40)
        if {r.label for r in recs} == {0, 1}:
            rounds.append(recs)
    rep = E.MetricsReport.from_rounds(rounds, {"ablation": "baseline"})
    wars = [E.war(r) for r in rounds]
    assert rep.mean("war") == pytest.approx(np.mean(wars))
    assert rep.std("war") == pytest.approx(np.sqrt(np.mean((np.array(wars) - np.mean(wars)) ** 2)))
    path = tmp_path / "r.json"
    rep.write(path)
    back = E.MetricsReport.read(path)
    assert back.to_json() == rep.to_json()
    assert set(json.loads(path.read_text())["summary"]) >= {"war", "uar", "speaker_acc", "per_stimulus_war"}


def test_run_seed_layout():
    assert E.run_seed(3, 2, 5) == 3205
    seeds = {E.run_seed(0, r, f) for r in range(5) for f in range(20)}
    assert len(seeds) == 100


def test_fold_plan(tiny_corpus):
    assert E.fold_plan(tiny_corpus, "cross") == ["tH00", "tH01", "tD00", "tD01"]
    assert E.fold_plan(tiny_corpus, "within", "source") == ["sH00", "sH01", "sD00", "sD01"]
    with pytest.raises(ValueError):
        E.fold_plan(tiny_corpus, "sideways")
    with pytest.raises(ContractError):
        E.fold_plan([u for u in tiny_corpus if u.domain == "source"], "cross")


def test_within_mode_rejects_uda(tiny_corpus, tiny_model):
    with pytest.raises(ContractError):
        E.run_loso(tiny_corpus, TrainConfig(ablation="dat_only", epochs=1), 1, "within", tiny_model)


def test_run_loso_shape_and_determinism(tiny_corpus, tiny_model):
    cfg = TrainConfig(epochs=1, batch_size=4, seed=2)
    a = E.run_loso(tiny_corpus, cfg, 2, "cross", tiny_model)
    b = E.run_loso(tiny_corpus, cfg, 2, "cross", tiny_model)
    assert a.rounds == 2 and len(a.per_round["war"]) == 2
    assert a.to_json() == b.to_json()
    assert a.meta["folds"] == E.fold_plan(tiny_corpus, "cross")


def test_worker_count(monkeypatch):
    monkeypatch.delenv("DSD_THREADS", raising=False)
    assert E.worker_count() == 1
    monkeypatch.setenv("DSD_THREADS", "3")
    assert E.worker_count() == 3
    monkeypatch.setenv("DSD_THREADS", "zero")
    with pytest.raises(ValueError):
        E.worker_count()


# PCA -----------------------------------------------------------------------

@pytest.mark.parametrize("seed", range(5))
def test_pca_matches_dense_eigensolver(seed):
    rng = np.random.default_rng(seed)
    data = rng.normal(size=(40, 5)) @ rng.normal(size=(5, 5))
    comps, vals, total = E.principal_components(data, 2)
    centred = data - data.mean(axis=0)
    ref_vals, ref_vecs = np.linalg.eigh(centred.T @ centred / len(data))
    assert np.abs(vals - ref_vals[::-1][:2]).max() < 1e-8
    assert total == pytest.approx(ref_vals.sum())
    for c, r in zip(comps, ref_vecs[:, ::-1].T):
        assert min(np.abs(c - r).max(), np.abs(c + r).max()) < 1e-6
    assert np.abs(comps @ comps.T - np.eye(2)).max() < 1e-8


def test_pca_rank_one():
    rng = np.random.default_rng(0)
    direction = rng.normal(size=6)
    data = np.outer(rng.normal(size=50), direction) + 3.0
    _, (r1, r2) = E.pca_project(data)
    assert r1 > 0.999
    assert r2 < 1e-6


def test_pca_needs_points():
    with pytest.raises(ContractError):
        E.principal_components(np.zeros((2, 4)))


def test_embedding_csv_round_trip(tmp_path, rng):
    proj, _ = E.pca_project(rng.normal(size=(12, 4)))
    domains = ["source"] * 6 + ["target"] * 6
    labels = [0, 1] * 3 + [None] * 6
    path = tmp_path / "e.csv"
    E.write_embedding_csv(path, proj, domains, labels)
    rows = E.read_embedding_csv(path)
    assert len(path.read_text().splitlines()) == 13
    back = np.array([[float(r["pc1"]), float(r["pc2"])] for r in rows])
    assert np.array_equal(back, proj)
    assert [r["label"] for r in rows[6:]] == [""] * 6


# probes --------------------------------------------------------------------

def test_probe_separates_shifted_clouds():
    rng = np.random.default_rng(0)
    src = rng.normal(size=(60, 4))
    tgt = rng.normal(size=(60, 4)) + 4.0
    assert E.probe_domain_accuracy(src, tgt, seed=1, steps=200, lr=1e-2) > 0.95


def test_probe_near_chance_on_identical_distributions():
    rng = np.random.default_rng(0)
    src, tgt = rng.normal(size=(200, 4)), rng.normal(size=(200, 4))
    assert abs(E.probe_domain_accuracy(src, tgt, seed=1, steps=200, lr=1e-2) - 0.5) < 0.12


def test_speaker_probe_needs_two_speakers_per_class():
    rng = np.random.default_rng(0)
    emb = rng.normal(size=(4, 3))
    with pytest.raises(ContractError):
        E.speaker_probe_accuracy(emb, emb, ["a", "a", "b", "c"], ["x", "y", "z", "w"],
                                 [0, 0, 1, 1], [0, 0, 1, 1])


def test_speaker_probe_ignores_speaker_identity():
    # each speaker sits at its own random offset, the domains share one distribution
    rng = np.random.default_rng(4)
    spk, lab, emb = [], [], []
    for dom in range(2):
        rows = []
        for s in range(8):
            centre = rng.normal(size=3) * 3.0
            rows.append(centre + 0.1 * rng.normal(size=(10, 3)))
            spk.append([f"{dom}{s}"] * 10)
            lab.append([s % 2] * 10)
        emb.append(np.vstack(rows))
    acc = E.speaker_probe_accuracy(emb[0], emb[1], sum(spk[:8], []), sum(spk[8:], []),
                                   sum(lab[:8], []), sum(lab[8:], []), seed=0, repeats=3, steps=200, lr=1e-2)
    assert acc < 0.75
