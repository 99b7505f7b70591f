"""Token datasets: schema, synthetic generator, JSON-lines I/O, masked adjacency.

A sample is ``K`` token vectors of width ``d_in``, a 0/1 mask over the tokens
(1 = protected/private) and an integer label.

File format (UTF-8, one JSON object per line, ``\\n`` terminated):

* line 1, the header::

    {"format": "maskdp-dataset", "version": 1, "n": N, "k": K, "d_in": D,
     "k_classes": C, "generator": {...} | null}

* lines 2..N+1, one record each::

    {"tokens": [[float, ...], ...], "mask": [0|1, ...], "label": int}

  ``tokens`` holds K arrays of D numbers, ``mask`` K entries. Floats are written
  in Python's shortest round-trip form, so write -> read is lossless and
  byte-stable.

An empty file reads as an empty dataset (with a warning).
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import NamedTuple

import numpy as np

FORMAT_NAME = "maskdp-dataset"
FORMAT_VERSION = 1


class DatasetFormatError(ValueError):
    """A dataset file line is malformed or violates the schema."""


class TokenizedSample(NamedTuple):
    tokens: np.ndarray  # (K, d_in)
    mask: np.ndarray  # (K,) of 0/1
    label: int


@dataclass(frozen=True)
class GeneratorConfig:
    """Parameters of the synthetic surrogate for partially anonymized videos.

    Public tokens (the synthetic avatar) carry the class signal; private tokens
    (the real background) carry a weaker class signal plus a per-sample nuisance
    direction that identifies the record.
    """

    n: int = 4000
    k: int = 8
    d_in: int = 16
    k_classes: int = 10
    private_fraction: float = 0.5
    public_signal: float = 1.5
    private_signal: float = 1.25
    nuisance: float = 1.0
    class_seed: int = 0

    def __post_init__(self):
        for name in ("n", "k", "d_in", "k_classes"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if not 0.0 <= self.private_fraction <= 1.0:
            raise ValueError("private_fraction must lie in [0, 1]")
        for name in ("public_signal", "private_signal", "nuisance"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")


@dataclass
class Dataset:
    tokens: np.ndarray  # (N, K, d_in) float64
    masks: np.ndarray  # (N, K) int8
    labels: np.ndarray  # (N,) int64
    k_classes: int
    generator: dict | None = field(default=None)

    def __post_init__(self):
        self.tokens = np.asarray(self.tokens, dtype=float)
        self.masks = np.asarray(self.masks, dtype=np.int8)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.tokens.ndim != 3:
            raise ValueError(f"tokens must be (N, K, d_in), got shape {self.tokens.shape}")
        n, k, _ = self.tokens.shape
        if self.masks.shape != (n, k):
            raise ValueError(f"masks must be {(n, k)}, got {self.masks.shape}")
        if self.labels.shape != (n,):
            raise ValueError(f"labels must be ({n},), got {self.labels.shape}")
        if not np.isin(self.masks, (0, 1)).all():
            raise ValueError("mask entries must be 0 or 1")
        if n and (self.labels.min() < 0 or self.labels.max() >= self.k_classes):
            raise ValueError(f"labels must lie in [0, {self.k_classes})")

    def __len__(self):
        return self.tokens.shape[0]

    def __getitem__(self, i) -> TokenizedSample:
        return TokenizedSample(self.tokens[i], self.masks[i], int(self.labels[i]))

    @property
    def n(self) -> int:
        return len(self)

    @property
    def k(self) -> int:
        return self.tokens.shape[1]

    @property
    def d_in(self) -> int:
        return self.tokens.shape[2]

    def with_masks(self, masks) -> "Dataset":
        return Dataset(self.tokens, np.broadcast_to(masks, self.masks.shape).copy(),
                       self.labels, self.k_classes, self.generator)

    def metadata(self) -> dict:
        return {"n": self.n, "k": self.k, "d_in": self.d_in, "k_classes": self.k_classes,
                "generator": self.generator}


def tokenize(sample: TokenizedSample):
    """Split a sample into (private, public) token arrays, keeping token order."""
    mask = np.asarray(sample.mask).astype(bool)
    return sample.tokens[mask], sample.tokens[~mask]


def masked_adjacent(d1: Dataset, d2: Dataset) -> bool:
    """Whether the datasets differ in protected tokens of exactly one record.

    Both datasets must share shape and masks. Identical datasets are not
    adjacent.
    """
    if d1.tokens.shape != d2.tokens.shape:
        raise ValueError(f"shape mismatch: {d1.tokens.shape} vs {d2.tokens.shape}")
    if not np.array_equal(d1.masks, d2.masks):
        raise ValueError("datasets must share the same per-record masks")
    if not np.array_equal(d1.labels, d2.labels):
        # the label is an unprotected part of the record
        return False
    token_diff = np.any(d1.tokens != d2.tokens, axis=2)  # (N, K)
    records = np.flatnonzero(token_diff.any(axis=1))
    if len(records) != 1:
        return False
    i = records[0]
    return bool(np.all(d1.masks[i][token_diff[i]] == 1))


def _class_directions(config: GeneratorConfig) -> np.ndarray:
    rng = np.random.default_rng(config.class_seed)
    mu = rng.standard_normal((config.k_classes, config.d_in))
    return mu / np.linalg.norm(mu, axis=1, keepdims=True)


def generate_synthetic(config: GeneratorConfig, seed: int) -> Dataset:
    """Draw ``config.n`` samples; fully determined by ``(config, seed)``.

    Class directions depend only on ``config.class_seed``, so train and test
    sets drawn with different ``seed`` share the same classes. The first
    ``ceil(private_fraction * K)`` positions of a random permutation are
    marked private.
    """
    mu = _class_directions(config)
    rng = np.random.default_rng(seed)
    n, k, d = config.n, config.k, config.d_in
    labels = rng.integers(0, config.k_classes, size=n)

    n_private = math.ceil(config.private_fraction * k)
    order = np.argsort(rng.random((n, k)), axis=1)
    masks = np.zeros((n, k), dtype=np.int8)
    np.put_along_axis(masks, order[:, :n_private], 1, axis=1)

    nu = rng.standard_normal((n, d))
    nu /= np.linalg.norm(nu, axis=1, keepdims=True)
    noise = rng.standard_normal((n, k, d))

    class_mean = mu[labels][:, None, :]
    public = config.public_signal * class_mean
    private = config.private_signal * class_mean + config.nuisance * nu[:, None, :]
    tokens = np.where(masks[:, :, None] == 1, private, public) + noise

    meta = asdict(config)
    meta["seed"] = int(seed)
    return Dataset(tokens, masks, labels, config.k_classes, meta)


def generate_split(config: GeneratorConfig, seed: int, n_test: int) -> tuple[Dataset, Dataset]:
    """Train set of ``config.n`` samples and an independent test set of ``n_test``."""
    train_seed, test_seed = (int(s.generate_state(1)[0]) for s in np.random.SeedSequence(seed).spawn(2))
    train = generate_synthetic(config, train_seed)
    test = generate_synthetic(GeneratorConfig(**{**asdict(config), "n": n_test}), test_seed)
    return train, test


def write_dataset(data: Dataset, path) -> None:
    header = {"format": FORMAT_NAME, "version": FORMAT_VERSION, **data.metadata()}
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(json.dumps(header, sort_keys=True) + "\n")
        for i in range(len(data)):
            record = {
                "tokens": data.tokens[i].tolist(),
                "mask": data.masks[i].tolist(),
                "label": int(data.labels[i]),
            }
            fh.write(json.dumps(record, separators=(",", ":")) + "\n")


def _fail(path, lineno, msg):
    raise DatasetFormatError(f"{path}:{lineno}: {msg}")


def read_dataset(path) -> Dataset:
    """Parse and validate a dataset file, naming the offending line on error."""
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if not lines:
        warnings.warn(f"{path}: empty dataset file", stacklevel=2)
        return Dataset(np.zeros((0, 0, 0)), np.zeros((0, 0)), np.zeros(0), k_classes=0)

    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError as exc:
        _fail(path, 1, f"header is not valid JSON ({exc.msg})")
    if not isinstance(header, dict) or header.get("format") != FORMAT_NAME:
        _fail(path, 1, f"missing {FORMAT_NAME!r} header")
    if header.get("version") != FORMAT_VERSION:
        _fail(path, 1, f"unsupported version {header.get('version')!r}")
    try:
        n, k, d_in, k_classes = (int(header[key]) for key in ("n", "k", "d_in", "k_classes"))
    except (KeyError, TypeError, ValueError):
        _fail(path, 1, "header must carry integer n, k, d_in, k_classes")

    body = lines[1:]
    if len(body) != n:
        _fail(path, len(lines), f"header declares {n} records, file has {len(body)}")

    tokens = np.empty((n, k, d_in))
    masks = np.empty((n, k), dtype=np.int8)
    labels = np.empty(n, dtype=np.int64)
    for i, line in enumerate(body):
        lineno = i + 2
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as exc:
            _fail(path, lineno, f"invalid JSON ({exc.msg})")
        if not isinstance(rec, dict) or set(rec) != {"tokens", "mask", "label"}:
            _fail(path, lineno, "record must have exactly the fields tokens, mask, label")
        tok, mask, label = rec["tokens"], rec["mask"], rec["label"]
        if not isinstance(tok, list) or not isinstance(mask, list):
            _fail(path, lineno, "tokens and mask must be arrays")
        if len(mask) != len(tok):
            _fail(path, lineno, f"mask length {len(mask)} != token count {len(tok)}")
        if len(tok) != k:
            _fail(path, lineno, f"expected {k} tokens, got {len(tok)}")
        if any(not isinstance(t, list) or len(t) != d_in for t in tok):
            _fail(path, lineno, f"every token must be an array of {d_in} numbers")
        if any(b not in (0, 1) or isinstance(b, bool) for b in mask):
            _fail(path, lineno, "mask entries must be 0 or 1")
        if not isinstance(label, int) or isinstance(label, bool) or not 0 <= label < k_classes:
            _fail(path, lineno, f"label {label!r} outside [0, {k_classes})")
        try:
            tokens[i] = np.array(tok, dtype=float)
        except (TypeError, ValueError):
            _fail(path, lineno, "token values must be numbers")
        masks[i] = mask
        labels[i] = label
    return Dataset(tokens, masks, labels, k_classes, header.get("generator"))
