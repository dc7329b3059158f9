"""Deterministic synthetic corpus, masking, and truncation.

Sequences come from a seeded order-1 Markov chain whose transition matrix
is itself seeded and sparse (each token has at most 8 likely successors
carrying 98% of the mass, with 2% smoothing), so masked-token prediction is
learnable well above chance.  Token id ``mask_token_id`` is reserved and
never emitted by the generator.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, replace

import numpy as np

from .errors import InputError, IntegrityError, ValidationError
from .rng import Rng

_CORPUS_MAGIC = b"GTCORP1\n"

MASK_RATE = 0.148  # masks_per_seq ~= round(0.148 * train_len), mirroring 76/512


@dataclass(frozen=True)
class DataConfig:
    V: int
    corpus_size: int
    seq_len_full: int
    train_len: int
    masks_per_seq: int
    mask_token_id: int = 0
    markov_order: int = 1
    seed: int = 0

    def validate(self) -> None:
        if self.train_len > self.seq_len_full:
            raise ValidationError(
                f"train_len {self.train_len} exceeds seq_len_full {self.seq_len_full}")
        if not 0 < self.masks_per_seq < self.train_len:
            raise ValidationError(
                f"masks_per_seq {self.masks_per_seq} must be in (0, train_len)")
        if not 0 <= self.mask_token_id < self.V:
            raise ValidationError(f"mask_token_id {self.mask_token_id} out of vocab")
        if self.markov_order not in (0, 1):
            raise ValidationError(f"markov_order must be 0 or 1, got {self.markov_order}")

    def to_dict(self) -> dict:
        return {
            "V": self.V, "corpus_size": self.corpus_size,
            "seq_len_full": self.seq_len_full, "train_len": self.train_len,
            "masks_per_seq": self.masks_per_seq, "mask_token_id": self.mask_token_id,
            "markov_order": self.markov_order, "seed": self.seed,
        }

    @staticmethod
    def from_dict(d: dict) -> "DataConfig":
        dc = DataConfig(**d)
        dc.validate()
        return dc


def masks_for_length(train_len: int) -> int:
    """Default masks-per-sequence holding the masking rate near 15%."""
    return max(1, round(MASK_RATE * train_len))


def valid_tokens(dc: DataConfig) -> np.ndarray:
    return np.array([t for t in range(dc.V) if t != dc.mask_token_id], dtype=np.int64)


def transition_matrix(dc: DataConfig, rng: Rng) -> np.ndarray:
    """Row-stochastic (V, V) matrix over non-mask tokens; mask row/col zero.

    Tokens are grouped round-robin into clusters of about nine, and each
    token's likely successors are drawn from its own cluster, so sequences
    dwell inside one cluster for many steps.  Sequence-level context then
    carries most of the predictive signal, which keeps masked-token
    prediction learnable at very small model scale.
    """
    tokens = valid_tokens(dc)
    n = tokens.size
    T = np.zeros((dc.V, dc.V))
    n_clusters = max(1, n // 9)
    clusters = [tokens[i % n_clusters == np.arange(n) % n_clusters]
                for i in range(n_clusters)]
    for i, tok in enumerate(tokens):
        r = rng.fork(f"row{tok}")
        group = clusters[i % n_clusters]
        n_succ = min(8, group.size)
        succ = group[r.choice(group.size, size=n_succ, replace=False)]
        weights = r.dirichlet(np.ones(n_succ))
        row = np.full(dc.V, 0.02 / n)
        row[dc.mask_token_id] = 0.0
        row[succ] += 0.98 * weights
        T[tok] = row / row.sum()
    return T


def gen_corpus(dc: DataConfig, rng: Rng, stream: str = "train") -> np.ndarray:
    """(corpus_size, seq_len_full) int64 token array, deterministic per seed.

    The transition matrix depends only on the rng's "transitions" fork, so
    train and held-out streams share one chain.
    """
    dc.validate()
    T = transition_matrix(dc, rng.fork("transitions"))
    tokens = valid_tokens(dc)
    marginal = np.full(dc.V, 0.0)
    marginal[tokens] = 1.0 / tokens.size
    r = rng.fork(f"sequences.{stream}")
    corpus = np.zeros((dc.corpus_size, dc.seq_len_full), dtype=np.int64)
    for s in range(dc.corpus_size):
        corpus[s, 0] = r.choice(dc.V, p=marginal)
        for i in range(1, dc.seq_len_full):
            if dc.markov_order == 0:
                corpus[s, i] = r.choice(dc.V, p=marginal)
            else:
                corpus[s, i] = r.choice(dc.V, p=T[corpus[s, i - 1]])
    return corpus


def truncate(sequence: np.ndarray, train_len: int) -> np.ndarray:
    """Keep the first train_len tokens."""
    return sequence[:train_len]


def mask_tokens(sequence: np.ndarray, masks_per_seq: int, rng: Rng,
                mask_token_id: int, V: int,
                replace_probs: tuple[float, float, float] = (0.8, 0.1, 0.1)):
    """BERT-style masking: distinct uniform positions; 80% become the mask
    token, 10% a random non-mask token, 10% stay unchanged.

    Returns (input_ids, sorted positions, target ids).
    """
    n = sequence.shape[0]
    if masks_per_seq > n:
        raise InputError(f"masks_per_seq {masks_per_seq} exceeds length {n}")
    positions = np.sort(rng.choice(n, size=masks_per_seq, replace=False))
    targets = sequence[positions].copy()
    inputs = sequence.copy()
    p_mask, p_rand, _ = replace_probs
    for idx, pos in enumerate(positions):
        u = rng.uniform()
        if u < p_mask:
            inputs[pos] = mask_token_id
        elif u < p_mask + p_rand:
            tok = int(rng.integers(0, V - 1))
            inputs[pos] = tok if tok < mask_token_id else tok + 1
    return inputs, positions.astype(np.int64), targets


def make_batch(corpus: np.ndarray, batch_size: int, dc: DataConfig, rng: Rng):
    """First batch of a fresh epoch: permute the corpus, truncate, mask."""
    if batch_size < 1:
        raise InputError(f"batch_size must be >= 1, got {batch_size}")
    order = rng.fork("epoch0").permutation(corpus.shape[0])[:batch_size]
    return _assemble(corpus, order, dc, rng.fork("epoch0.mask"))


def _assemble(corpus: np.ndarray, indices, dc: DataConfig, rng: Rng):
    ids, positions, targets = [], [], []
    for j, idx in enumerate(indices):
        seq = truncate(corpus[idx], dc.train_len)
        inp, pos, tgt = mask_tokens(seq, dc.masks_per_seq, rng.fork(f"seq{idx}"),
                                    dc.mask_token_id, dc.V)
        ids.append(inp)
        positions.append(pos)
        targets.append(tgt)
    return np.stack(ids), np.stack(positions), np.stack(targets)


def iter_batches(corpus: np.ndarray, batch_size: int, dc: DataConfig, rng: Rng):
    """Endless batch stream: each epoch is a fresh permutation covering the
    corpus exactly once (final batch may be short)."""
    epoch = 0
    size = corpus.shape[0]
    while True:
        er = rng.fork(f"epoch{epoch}")
        order = er.permutation(size)
        mask_rng = rng.fork(f"epoch{epoch}.mask")
        for start in range(0, size, batch_size):
            yield _assemble(corpus, order[start:start + batch_size], dc, mask_rng)
        epoch += 1


# ---------------------------------------------------------------------------
# Flat binary persistence
# ---------------------------------------------------------------------------

def save_corpus(path, corpus: np.ndarray, dc: DataConfig) -> None:
    """Header (version, V, corpus_size, seq_len_full, seed) + int32 LE tokens."""
    header = struct.pack("<8sQQQQq", _CORPUS_MAGIC, 1, dc.V, dc.corpus_size,
                         dc.seq_len_full, dc.seed)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(corpus.astype("<i4").tobytes())


def load_corpus(path, dc: DataConfig) -> np.ndarray:
    with open(path, "rb") as fh:
        header = fh.read(struct.calcsize("<8sQQQQq"))
        magic, version, v, size, seq_len, seed = struct.unpack("<8sQQQQq", header)
        if magic != _CORPUS_MAGIC or version != 1:
            raise IntegrityError(f"{path}: not a corpus file")
        if (v, size, seq_len, seed) != (dc.V, dc.corpus_size, dc.seq_len_full, dc.seed):
            raise IntegrityError(f"{path}: header does not match data config")
        blob = fh.read()
    expected = size * seq_len * 4
    if len(blob) != expected:
        raise IntegrityError(f"{path}: expected {expected} token bytes, got {len(blob)}")
    return np.frombuffer(blob, dtype="<i4").astype(np.int64).reshape(size, seq_len)


def desk_scale_data(seed: int = 0, corpus_size: int = 256) -> DataConfig:
    """Desk-scale preset: full length 128 with 19 masks (~15%), V=64."""
    return DataConfig(V=64, corpus_size=corpus_size, seq_len_full=128,
                      train_len=128, masks_per_seq=19, seed=seed)
