"""Synthetic two-domain dysarthric speech corpus, JSON-lines manifests, batching and LOSO splits.

Target-domain labels are stored but never returned by ``Utterance.label``;
only :meth:`Utterance.eval_label` reveals them, and every such read is
counted so tests can prove training code never touches them.
"""

import json
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from . import dsp
from .autodiff import ContractError

DOMAINS = ("source", "target")
STIMULI = ("word", "nonword", "sentence")
HEALTHY, DYSARTHRIC = 0, 1

# (min, max) seconds per stimulus type before tempo scaling
DURATIONS = {"word": (0.5, 0.8), "nonword": (0.55, 0.85), "sentence": (0.8, 1.2)}


class ManifestError(ValueError):
    """A manifest line is missing, malformed or violates the labelling rules."""


class Utterance:
    __slots__ = ("features", "speaker", "domain", "stimulus", "uid", "_label")
    eval_label_reads = 0

    def __init__(self, features, speaker, label, domain, stimulus, uid=""):
        if domain not in DOMAINS:
            raise ValueError(f"domain must be one of {DOMAINS}, got {domain!r}")
        if stimulus not in STIMULI:
            raise ValueError(f"stimulus must be one of {STIMULI}, got {stimulus!r}")
        if domain == "source" and label is None:
            raise ValueError(f"source-domain utterance {uid or speaker!r} has no label")
        if label is not None and label not in (0, 1):
            raise ValueError(f"label must be 0, 1 or None, got {label!r}")
        self.features = np.asarray(features, dtype=np.float64)
        self.speaker = speaker
        self.domain = domain
        self.stimulus = stimulus
        self.uid = uid
        self._label = label

    @property
    def label(self):
        """The training label: always present for source, always None for target."""
        return self._label if self.domain == "source" else None

    def eval_label(self):
        """Ground truth for evaluation and analysis; never call from training code."""
        if self.domain == "target":
            Utterance.eval_label_reads += 1
        return self._label

    def has_eval_label(self):
        return self._label is not None

    def as_labelled_source(self):
        """A copy whose label is visible to training (within-domain experiments)."""
        return Utterance(self.features, self.speaker, self._label, "source", self.stimulus, self.uid)

    def __repr__(self):
        return (f"Utterance({self.uid!r}, speaker={self.speaker!r}, domain={self.domain}, "
                f"stimulus={self.stimulus}, frames={self.features.shape[0]})")


# synthetic generation ------------------------------------------------------

@dataclass(frozen=True)
class DomainSpec:
    speakers_per_class: int = 4
    utterances_per_speaker: int = 12
    healthy_ratio: float = 1.0          # healthy:dysarthric utterance ratio
    stimulus_mix: tuple = (1.0, 0.0, 0.0)  # word, nonword, sentence
    tilt_db_per_octave: float = 0.0
    noise_floor: float = 0.0            # noise RMS relative to signal RMS
    tempo_range: tuple = (0.9, 1.1)     # syllable-rate divisor

    def validate(self, name):
        errs = []
        if self.speakers_per_class < 1:
            errs.append(f"{name}.speakers_per_class must be >= 1")
        if self.utterances_per_speaker < 1:
            errs.append(f"{name}.utterances_per_speaker must be >= 1")
        if not self.healthy_ratio > 0:
            errs.append(f"{name}.healthy_ratio must be > 0")
        if len(self.stimulus_mix) != 3 or min(self.stimulus_mix) < 0 or abs(sum(self.stimulus_mix) - 1) > 1e-9:
            errs.append(f"{name}.stimulus_mix must be three non-negative probabilities summing to 1")
        if self.noise_floor < 0:
            errs.append(f"{name}.noise_floor must be >= 0")
        lo, hi = self.tempo_range
        if not 0 < lo <= hi:
            errs.append(f"{name}.tempo_range must satisfy 0 < min <= max")
        return errs

    @property
    def n_utterances(self):
        return 2 * self.speakers_per_class * self.utterances_per_speaker


@dataclass(frozen=True)
class SynthConfig:
    source: DomainSpec = field(default_factory=lambda: DomainSpec(
        speakers_per_class=8, utterances_per_speaker=9, healthy_ratio=1.0,
        stimulus_mix=(1.0, 0.0, 0.0), tilt_db_per_octave=0.0, noise_floor=0.0,
        tempo_range=(0.9, 1.1),
    ))
    target: DomainSpec = field(default_factory=lambda: DomainSpec(
        speakers_per_class=2, utterances_per_speaker=12, healthy_ratio=2.0,
        stimulus_mix=(0.4, 0.2, 0.4), tilt_db_per_octave=-10.0, noise_floor=0.1,
        tempo_range=(1.0, 1.3),
    ))
    jitter: float = 0.04                 # relative per-period pitch perturbation
    modulation_slowdown: float = 2.0     # syllable-rate divisor for dysarthric speech
    harmonic_instability: float = 0.6    # relative harmonic amplitude fluctuation
    seed: int = 0

    def validate(self):
        errs = self.source.validate("source") + self.target.validate("target")
        if self.jitter < 0:
            errs.append("jitter must be >= 0")
        if self.modulation_slowdown < 1:
            errs.append("modulation_slowdown must be >= 1 (1 disables it)")
        if self.harmonic_instability < 0:
            errs.append("harmonic_instability must be >= 0")
        if errs:
            raise ValueError("; ".join(errs))

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        for dom in DOMAINS:
            if dom in d and isinstance(d[dom], dict):
                spec = dict(d[dom])
                for key in ("stimulus_mix", "tempo_range"):
                    if key in spec:
                        spec[key] = tuple(spec[key])
                d[dom] = DomainSpec(**spec)
        return cls(**d)


def class_counts(spec):
    """(healthy, dysarthric) utterance totals for a domain."""
    total = spec.n_utterances
    healthy = int(round(total * spec.healthy_ratio / (1.0 + spec.healthy_ratio)))
    healthy = min(max(healthy, 1), total - 1)
    return healthy, total - healthy


def _split_even(total, parts):
    base, extra = divmod(total, parts)
    return [base + (1 if i < extra else 0) for i in range(parts)]


def _held_noise(rng, n_samples, rate_hz, sr, width=None):
    """Piecewise-linear random curve(s) with knots every 1/rate_hz seconds."""
    n_knots = int(math.ceil(n_samples / sr * rate_hz)) + 2
    pos = np.arange(n_samples) / sr * rate_hz
    if width is None:
        return np.interp(pos, np.arange(n_knots), rng.standard_normal(n_knots))
    knots = rng.standard_normal((n_knots, width))
    lo = np.minimum(pos.astype(int), n_knots - 2)
    frac = (pos - lo)[:, None]
    return knots[lo] * (1.0 - frac) + knots[lo + 1] * frac


VOWELS = np.array([[730, 1090, 2440], [270, 2290, 3010], [300, 870, 2240],
                   [530, 1840, 2480], [660, 1720, 2410], [570, 840, 2410]], dtype=float)
BANDWIDTHS = np.array([90.0, 120.0, 180.0])
CTRL_HOP = 80  # samples between articulation control points (5 ms)


def synthesize(rng, f0, dysarthric, duration, cfg, tempo=1.0):
    """One harmonic-series utterance; dysarthria enters only through cfg's three cue strengths.

    ``tempo`` > 1 slows the syllable rate by that factor.
    """
    sr = dsp.SAMPLE_RATE
    n = int(duration * sr)
    t = np.arange(n) / sr
    f_inst = f0 * (1.0 + 0.03 * _held_noise(rng, n, 3.0, sr))
    if dysarthric and cfg.jitter > 0:
        f_inst = f_inst * (1.0 + cfg.jitter * _held_noise(rng, n, f0, sr))
    phase = 2.0 * np.pi * np.cumsum(f_inst) / sr
    rate = rng.uniform(4.0, 5.0) / tempo
    if dysarthric:
        rate /= cfg.modulation_slowdown
    n_syll = int(math.ceil(duration * rate)) + 1
    vowel_idx = rng.integers(0, len(VOWELS), size=n_syll)
    n_ctrl = n // CTRL_HOP + 2
    ctrl_t = np.arange(n_ctrl) * CTRL_HOP / sr
    formants = VOWELS[vowel_idx[np.minimum((ctrl_t * rate).astype(int), n_syll - 1)]]
    k = np.arange(1, int(7600.0 / f0) + 1)
    # [n_ctrl, K] harmonic amplitudes from the formant envelope
    rel = (k[None, :, None] * f0 - formants[:, None, :]) / BANDWIDTHS
    amp_ctrl = ((1.0 / (1.0 + rel ** 2)).sum(axis=2) + 0.02) / np.sqrt(k)[None, :]
    if dysarthric and cfg.harmonic_instability > 0:
        wobble = _held_noise(rng, n_ctrl, 20.0, sr / CTRL_HOP, width=k.size)
        amp_ctrl = amp_ctrl * np.exp(cfg.harmonic_instability * wobble)
    sig = np.zeros(n)
    sample_idx = np.arange(n)
    for j in range(k.size):
        amp = np.interp(sample_idx, np.arange(n_ctrl) * CTRL_HOP, amp_ctrl[:, j])
        sig += amp * np.sin(k[j] * phase + rng.uniform(0.0, 2.0 * np.pi))
    env = 0.5 * (1.0 - np.cos(2.0 * np.pi * rate * t + rng.uniform(0.0, 2.0 * np.pi)))
    sig *= 0.05 + env
    return sig / (np.sqrt(np.mean(sig ** 2)) + 1e-12) * 0.1


def apply_channel(rng, sig, spec):
    """Domain channel: spectral tilt around 1 kHz and additive white noise."""
    if spec.tilt_db_per_octave:
        spectrum = np.fft.rfft(sig)
        freqs = np.fft.rfftfreq(sig.size, 1.0 / dsp.SAMPLE_RATE)
        octaves = np.log2(np.maximum(freqs, 50.0) / 1000.0)
        spectrum *= 10.0 ** (spec.tilt_db_per_octave * octaves / 20.0)
        sig = np.fft.irfft(spectrum, n=sig.size)
    if spec.noise_floor > 0:
        rms = np.sqrt(np.mean(sig ** 2))
        sig = sig + spec.noise_floor * rms * rng.standard_normal(sig.size)
    return sig


def _speaker_plan(cfg):
    plan = []
    for d_idx, dom in enumerate(DOMAINS):
        spec = getattr(cfg, dom)
        healthy, dys = class_counts(spec)
        for label, total in ((HEALTHY, healthy), (DYSARTHRIC, dys)):
            per_spk = _split_even(total, spec.speakers_per_class)
            for s in range(spec.speakers_per_class):
                tag = "H" if label == HEALTHY else "D"
                plan.append((d_idx, dom, spec, label, f"{dom[0]}{tag}{s:02d}", per_spk[s]))
    return plan


def generate_synthetic(cfg=None):
    """Generate the full corpus; deterministic in ``cfg.seed`` and independent of call order."""
    cfg = cfg or SynthConfig()
    cfg.validate()
    corpus = []
    for sp_idx, (d_idx, dom, spec, label, speaker, count) in enumerate(_speaker_plan(cfg)):
        spk_rng = np.random.default_rng([cfg.seed, d_idx, sp_idx])
        f0 = spk_rng.uniform(100.0, 220.0)
        for u in range(count):
            rng = np.random.default_rng([cfg.seed, d_idx, sp_idx, u, 1])
            stimulus = STIMULI[rng.choice(3, p=np.asarray(spec.stimulus_mix))]
            lo, hi = DURATIONS[stimulus]
            tempo = rng.uniform(*spec.tempo_range)
            duration = rng.uniform(lo, hi)
            sig = synthesize(rng, f0 * rng.uniform(0.97, 1.03), label == DYSARTHRIC, duration, cfg, tempo)
            sig = apply_channel(rng, sig, spec)
            feats = dsp.features(dsp.Waveform(sig))
            corpus.append(Utterance(feats, speaker, label, dom, stimulus, uid=f"{speaker}_{u:03d}"))
    return corpus


# manifests -----------------------------------------------------------------

def write_manifest(corpus, out_dir, name="manifest.jsonl"):
    """Write MELF feature files plus a JSON-lines manifest; returns the manifest path."""
    out_dir = Path(out_dir)
    feat_dir = out_dir / "features"
    feat_dir.mkdir(parents=True, exist_ok=True)
    lines = []
    for utt in corpus:
        rel = Path("features") / f"{utt.uid}.melf"
        dsp.write_melf(out_dir / rel, utt.features)
        lines.append(json.dumps({
            "audio": None,
            "features": rel.as_posix(),
            "speaker": utt.speaker,
            "label": utt._label,
            "domain": utt.domain,
            "stimulus": utt.stimulus,
        }, sort_keys=True))
    path = out_dir / name
    tmp = path.with_suffix(".tmp")
    tmp.write_text("".join(line + "\n" for line in lines))
    tmp.replace(path)
    return path


def load_manifest(path):
    path = Path(path)
    if not path.exists():
        raise ManifestError(f"manifest {path} does not exist")
    base = path.parent
    corpus = []
    for lineno, line in enumerate(path.read_text().splitlines(), start=1):
        if not line.strip():
            continue
        try:
            entry = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ManifestError(f"{path}:{lineno}: malformed JSON ({exc.msg})") from exc
        if not isinstance(entry, dict):
            raise ManifestError(f"{path}:{lineno}: expected a JSON object")
        missing = [k for k in ("speaker", "domain", "stimulus") if k not in entry]
        if missing:
            raise ManifestError(f"{path}:{lineno}: missing field(s) {missing}")
        audio, feats = entry.get("audio"), entry.get("features")
        if (audio is None) == (feats is None):
            raise ManifestError(f"{path}:{lineno}: exactly one of 'audio' and 'features' must be set")
        label = entry.get("label")
        if entry["domain"] == "source" and label is None:
            raise ManifestError(f"{path}:{lineno}: source-domain entry has no label")
        try:
            if feats is not None:
                m = dsp.read_melf(base / feats)
            else:
                m = dsp.features(dsp.read_wav(base / audio))
            utt = Utterance(m, str(entry["speaker"]), label, entry["domain"], entry["stimulus"],
                            uid=Path(feats or audio).stem)
        except (OSError, ValueError) as exc:
            raise ManifestError(f"{path}:{lineno}: {exc}") from exc
        corpus.append(utt)
    return corpus


def fingerprint(corpus):
    """Content hash over features and metadata."""
    import hashlib

    h = hashlib.sha256()
    for u in corpus:
        h.update(f"{u.uid}|{u.speaker}|{u._label}|{u.domain}|{u.stimulus}|".encode())
        h.update(np.ascontiguousarray(u.features, dtype="<f8").tobytes())
    return h.hexdigest()


# batching and splits -------------------------------------------------------

@dataclass
class Batch:
    source: list
    target: list

    @property
    def source_features(self):
        return [u.features for u in self.source]

    @property
    def source_labels(self):
        return np.array([u.label for u in self.source], dtype=np.float64)

    @property
    def target_features(self):
        return [u.features for u in self.target]

    @property
    def speakers(self):
        return [u.speaker for u in self.source + self.target]


def split_domains(corpus):
    src = [u for u in corpus if u.domain == "source"]
    tgt = [u for u in corpus if u.domain == "target"]
    return src, tgt


def make_batches(corpus, batch_size, seed, epoch=0, uda=True):
    """One epoch of paired batches.

    Each domain is shuffled independently. The longer domain is consumed
    exactly once; the shorter one recycles through fresh permutations.
    With ``uda=False`` only source utterances are batched.
    """
    if batch_size < 1:
        raise ValueError(f"batch_size must be >= 1, got {batch_size}")
    src, tgt = split_domains(corpus)
    if not src:
        raise ContractError("no source-domain utterances to train on")
    rng = np.random.default_rng([seed, epoch])
    if not uda:
        order = rng.permutation(len(src))
        return [Batch([src[i] for i in order[s:s + batch_size]], [])
                for s in range(0, len(src), batch_size)]
    if not tgt:
        raise ContractError("UDA training needs target-domain utterances, found none")
    src_order = rng.permutation(len(src))
    tgt_order = rng.permutation(len(tgt))
    long_is_src = len(src) >= len(tgt)
    long_items, short_items = (src, tgt) if long_is_src else (tgt, src)
    long_order, short_order = (src_order, tgt_order) if long_is_src else (tgt_order, src_order)
    stream = list(short_order)
    pos = 0
    batches = []
    for s in range(0, len(long_items), batch_size):
        chunk = [long_items[i] for i in long_order[s:s + batch_size]]
        need = min(len(chunk), len(short_items))
        while len(stream) - pos < need:
            stream.extend(rng.permutation(len(short_items)))
        other = [short_items[i] for i in stream[pos:pos + need]]
        pos += need
        batches.append(Batch(chunk, other) if long_is_src else Batch(other, chunk))
    return batches


def speakers(corpus, domain=None):
    seen = []
    for u in corpus:
        if (domain is None or u.domain == domain) and u.speaker not in seen:
            seen.append(u.speaker)
    return seen


def loso_split(corpus, held_out_speaker):
    if held_out_speaker not in {u.speaker for u in corpus}:
        raise KeyError(f"unknown speaker {held_out_speaker!r}")
    train = [u for u in corpus if u.speaker != held_out_speaker]
    test = [u for u in corpus if u.speaker == held_out_speaker]
    return train, test


def relabel_domain(corpus, domain):
    """Copies of ``corpus`` moved to ``domain`` (labels kept private)."""
    return [Utterance(u.features, u.speaker, u._label, domain, u.stimulus, u.uid) for u in corpus]


def with_config(cfg, **changes):
    return replace(cfg, **changes)
