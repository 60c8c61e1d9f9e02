"""CBRNN-A encoders, sigmoid heads, domain discriminator and the Gaussian variational net."""

import hashlib
import json
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import DimensionError, Parameter

N_MELS = 80
LOGVAR_MIN, LOGVAR_MAX = -10.0, 10.0
CHECKPOINT_MAGIC = b"DSDC"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class CbrnnConfig:
    n_banks: int = 8
    bank_channels: int = 16
    hidden: int = 128
    attention_hidden: int = 100
    n_mels: int = N_MELS

    def __post_init__(self):
        if self.n_banks < 0:
            raise ValueError(f"n_banks must be >= 0, got {self.n_banks}")
        for name in ("bank_channels", "hidden", "attention_hidden", "n_mels"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1, got {getattr(self, name)}")

    @property
    def kernel_sizes(self):
        return list(range(1, self.n_banks + 1))

    @property
    def embedding_dim(self):
        return self.hidden

    @property
    def lstm_input(self):
        return self.n_banks * self.bank_channels if self.n_banks else self.n_mels


class ParamGroup:
    """An ordered, named set of parameters that is frozen and stepped as one unit."""

    def __init__(self):
        self.params = {}

    def add(self, name, param):
        param.name = name
        self.params[name] = param
        return param

    def parameters(self):
        return list(self.params.values())

    def __getitem__(self, name):
        return self.params[name]

    def freeze(self):
        for p in self.params.values():
            p.requires_grad = False

    def unfreeze(self):
        for p in self.params.values():
            p.requires_grad = True

    def snapshot(self):
        return {k: p.data.copy() for k, p in self.params.items()}

    def load(self, arrays):
        for k, p in self.params.items():
            if k not in arrays:
                raise KeyError(f"missing parameter {k!r}")
            if arrays[k].shape != p.data.shape:
                raise DimensionError(f"{k}: checkpoint shape {list(arrays[k].shape)} != {p.shape}")
            p.data = np.array(arrays[k], dtype=np.float64)


def pad_batch(feats):
    """Stack variable-length [T_i, D] matrices into [B, T_max, D] plus a validity mask."""
    if not feats:
        raise ValueError("cannot encode an empty batch")
    lengths = [f.shape[0] for f in feats]
    if min(lengths) < 1:
        raise ValueError("every utterance needs at least one frame")
    D = feats[0].shape[1]
    out = np.zeros((len(feats), max(lengths), D))
    mask = np.zeros((len(feats), max(lengths)), dtype=bool)
    for i, f in enumerate(feats):
        out[i, : f.shape[0]] = f
        mask[i, : f.shape[0]] = True
    return out, mask


class Encoder(ParamGroup):
    """Convolution banks, a single LSTM layer and additive attention pooling."""

    def __init__(self, cfg, rng):
        super().__init__()
        self.cfg = cfg
        C, H, A = cfg.bank_channels, cfg.hidden, cfg.attention_hidden
        for k in cfg.kernel_sizes:
            self.add(f"bank{k}.w", ad.glorot(rng, k * cfg.n_mels, k * C, shape=(k, cfg.n_mels, C)))
            self.add(f"bank{k}.b", ad.zeros(C))
        self.add("lstm.w_ih", ad.glorot(rng, cfg.lstm_input, 4 * H))
        self.add("lstm.w_hh", ad.glorot(rng, H, 4 * H))
        self.add("lstm.b", ad.zeros(4 * H))
        self.add("att.w1", ad.glorot(rng, H, A))
        self.add("att.b1", ad.zeros(A))
        self.add("att.w2", ad.glorot(rng, A, 1))
        self.add("att.b2", ad.zeros(1))

    def __call__(self, feats, return_attention=False):
        """Embed a list of [T_i, n_mels] feature matrices -> Tensor [B, hidden]."""
        for f in feats:
            if f.ndim != 2 or f.shape[1] != self.cfg.n_mels:
                raise DimensionError(f"encoder expects [T, {self.cfg.n_mels}] input, got {list(f.shape)}")
        # longest first so the recurrence can drop finished rows
        order = sorted(range(len(feats)), key=lambda i: -feats[i].shape[0])
        x, mask = pad_batch([feats[i] for i in order])
        lengths = mask.sum(axis=1)
        B, T, _ = x.shape
        h = ad.Tensor(x)
        if self.cfg.n_banks:
            ks = self.cfg.kernel_sizes
            h = ad.tanh(ad.conv1d_banks(h, [self[f"bank{k}.w"] for k in ks], [self[f"bank{k}.b"] for k in ks], lengths))
        states = ad.lstm(h, self["lstm.w_ih"], self["lstm.w_hh"], self["lstm.b"], lengths)
        flat = ad.reshape(states, (B * T, self.cfg.hidden))
        hid = ad.tanh(flat @ self["att.w1"] + ad.expand_rows(self["att.b1"], B * T))
        scores = ad.reshape(hid @ self["att.w2"] + ad.expand_rows(self["att.b2"], B * T), (B, T))
        weights = ad.softmax(scores, axis=1, mask=mask)
        emb = ad.attention_pool(weights, states)
        inverse = np.argsort(order)
        emb = ad.take_rows(emb, inverse)
        if return_attention:
            return emb, ad.take_rows(weights, inverse)
        return emb


def _dense(group, prefix, x, n_rows):
    return x @ group[f"{prefix}.w"] + ad.expand_rows(group[f"{prefix}.b"], n_rows)


class SigmoidClassifier(ParamGroup):
    """Single linear unit with a sigmoid: embedding [B, d] -> probability [B]."""

    def __init__(self, dim, rng):
        super().__init__()
        self.add("out.w", ad.glorot(rng, dim, 1))
        self.add("out.b", ad.zeros(1))

    def __call__(self, x):
        B = x.shape[0]
        return ad.reshape(ad.sigmoid(_dense(self, "out", x, B)), (B,))


class Discriminator(ParamGroup):
    """linear(d -> hidden), tanh, linear(hidden -> 1), sigmoid."""

    def __init__(self, dim, rng, hidden=128):
        super().__init__()
        self.add("hid.w", ad.glorot(rng, dim, hidden))
        self.add("hid.b", ad.zeros(hidden))
        self.add("out.w", ad.glorot(rng, hidden, 1))
        self.add("out.b", ad.zeros(1))

    def __call__(self, x):
        B = x.shape[0]
        h = ad.tanh(_dense(self, "hid", x, B))
        return ad.reshape(ad.sigmoid(_dense(self, "out", h, B)), (B,))


class VariationalNet(ParamGroup):
    """Gaussian q(x|z): two heads, each linear -> tanh -> linear, giving mean and log-variance."""

    def __init__(self, z_dim, x_dim, rng, hidden=256):
        super().__init__()
        for head in ("mu", "lv"):
            self.add(f"{head}1.w", ad.glorot(rng, z_dim, hidden))
            self.add(f"{head}1.b", ad.zeros(hidden))
            self.add(f"{head}2.w", ad.glorot(rng, hidden, x_dim))
            self.add(f"{head}2.b", ad.zeros(x_dim))

    def __call__(self, z):
        B = z.shape[0]
        mu = _dense(self, "mu2", ad.tanh(_dense(self, "mu1", z, B)), B)
        lv = _dense(self, "lv2", ad.tanh(_dense(self, "lv1", z, B)), B)
        return mu, ad.clamp(lv, LOGVAR_MIN, LOGVAR_MAX)


GROUPS = ("bio_encoder", "bio_classifier", "dom_encoder", "dom_classifier", "discriminator", "variational")


@dataclass
class ModelBundle:
    cfg: CbrnnConfig
    bio_encoder: Encoder
    bio_classifier: SigmoidClassifier
    dom_encoder: Encoder
    dom_classifier: SigmoidClassifier
    discriminator: Discriminator
    variational: VariationalNet
    meta: dict = field(default_factory=dict)

    @classmethod
    def create(cls, cfg, seed, twin_init=False):
        """Initialise all six groups from ``seed``.

        Each group draws from its own stream. With ``twin_init`` the domain
        encoder reuses the biomarker encoder's stream, so the two start equal.
        """
        streams = [np.random.default_rng([seed, i]) for i in range(len(GROUPS))]
        dom_stream = np.random.default_rng([seed, 0]) if twin_init else streams[2]
        d = cfg.embedding_dim
        return cls(
            cfg=cfg,
            bio_encoder=Encoder(cfg, streams[0]),
            bio_classifier=SigmoidClassifier(d, streams[1]),
            dom_encoder=Encoder(cfg, dom_stream),
            dom_classifier=SigmoidClassifier(d, streams[3]),
            discriminator=Discriminator(d, streams[4]),
            variational=VariationalNet(d, d, streams[5]),
        )

    def groups(self):
        return {name: getattr(self, name) for name in GROUPS}

    def parameters(self):
        return [p for g in self.groups().values() for p in g.parameters()]

    def freeze_all(self):
        for g in self.groups().values():
            g.freeze()

    def snapshot(self):
        return {name: g.snapshot() for name, g in self.groups().items()}

    def predict_proba(self, feats, batch_size=64):
        """Dysarthria probabilities for a list of feature matrices (no gradient)."""
        frozen = [(p, p.requires_grad) for p in self.parameters()]
        self.freeze_all()
        try:
            out = []
            for i in range(0, len(feats), batch_size):
                x = self.bio_encoder(feats[i:i + batch_size])
                out.append(self.bio_classifier(x).data)
            return np.concatenate(out) if out else np.zeros(0)
        finally:
            for p, flag in frozen:
                p.requires_grad = flag

    def embed(self, feats, which="bio", batch_size=64):
        enc = self.bio_encoder if which == "bio" else self.dom_encoder
        frozen = [(p, p.requires_grad) for p in enc.parameters()]
        enc.freeze()
        try:
            chunks = [enc(feats[i:i + batch_size]).data for i in range(0, len(feats), batch_size)]
        finally:
            for p, flag in frozen:
                p.requires_grad = flag
        return np.concatenate(chunks) if chunks else np.zeros((0, self.cfg.embedding_dim))


# checkpoint ----------------------------------------------------------------

def config_hash(obj):
    blob = json.dumps(obj, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def save_checkpoint(path, bundle, train_config=None):
    """Write a checkpoint: magic, version, JSON header, then named float64 arrays.

    Each array record is: u32 name length, UTF-8 name, u32 rank, rank x u32
    dims, little-endian float64 payload.
    """
    header = {
        "cbrnn": asdict(bundle.cfg),
        "train_config_hash": config_hash(train_config) if train_config is not None else None,
        "meta": bundle.meta,
    }
    hbytes = json.dumps(header, sort_keys=True).encode()
    records = []
    for gname, group in bundle.groups().items():
        for pname, p in group.params.items():
            name = f"{gname}/{pname}".encode()
            arr = np.ascontiguousarray(p.data, dtype="<f8")
            records.append(
                struct.pack("<I", len(name)) + name
                + struct.pack("<I", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape)
                + arr.tobytes()
            )
    blob = (
        CHECKPOINT_MAGIC + struct.pack("<II", CHECKPOINT_VERSION, len(hbytes)) + hbytes
        + struct.pack("<I", len(records)) + b"".join(records)
    )
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(blob)
    tmp.replace(path)


def read_checkpoint(path):
    """Return (header dict, {group/param name: array})."""
    raw = Path(path).read_bytes()
    if raw[:4] != CHECKPOINT_MAGIC:
        raise ValueError(f"{path}: not a checkpoint (magic {raw[:4]!r})")
    version, hlen = struct.unpack_from("<II", raw, 4)
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    off = 12
    header = json.loads(raw[off:off + hlen])
    off += hlen
    (count,) = struct.unpack_from("<I", raw, off)
    off += 4
    arrays = {}
    for _ in range(count):
        (nlen,) = struct.unpack_from("<I", raw, off)
        off += 4
        name = raw[off:off + nlen].decode()
        off += nlen
        (rank,) = struct.unpack_from("<I", raw, off)
        off += 4
        dims = struct.unpack_from(f"<{rank}I", raw, off)
        off += 4 * rank
        n = int(np.prod(dims)) if rank else 1
        arrays[name] = np.frombuffer(raw, dtype="<f8", count=n, offset=off).reshape(dims).copy()
        off += 8 * n
    return header, arrays


def load_checkpoint(path):
    header, arrays = read_checkpoint(path)
    cfg = CbrnnConfig(**header["cbrnn"])
    bundle = ModelBundle.create(cfg, seed=0)
    for gname, group in bundle.groups().items():
        prefix = gname + "/"
        group.load({k[len(prefix):]: v for k, v in arrays.items() if k.startswith(prefix)})
    bundle.meta = header.get("meta") or {}
    return bundle, header
