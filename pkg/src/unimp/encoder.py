"""Prompt serialization, tokenization and the frozen embedding backbone.

Cells and hyperedges are rendered to short prompt strings, tokenized by a
whitespace+punctuation tokenizer over a corpus-built vocabulary, and embedded
by a frozen backbone: a seeded embedding table plus sinusoidal positions and
one causal self-attention layer with seeded projections.  The backbone never
receives gradient updates; the last token's vector is the initial feature of
the node or edge the prompt describes.

Numerical and categorical cells skip the backbone entirely: their initial
feature is the scaled value in slot 0 of an otherwise-zero vector.  Missing
cells get the zero vector.
"""

from __future__ import annotations

import string
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .errors import ContractError, ParameterError
from .hypergraph import Hypergraph
from .tabular import ColumnKind, Table

PAD_ID = 0
EOS_ID = 1
UNK_ID = 2
PAD_TOKEN = "<pad>"
EOS_TOKEN = "eos"
UNK_TOKEN = "<unk>"

DEFAULT_EMBED_DIM = 64

_PUNCT = set(string.punctuation)


# ---------------------------------------------------------------------------
# Serialization templates
# ---------------------------------------------------------------------------

def render_value(kind: ColumnKind, value) -> str:
    """Render a cell value for a prompt; missing renders empty.

    Scaled numerics print with two decimals so value tokens recur across
    rows: the embedding table is frozen and random, so only tokens shared by
    many cells give the attention stages a learnable code for the value.
    """
    if value is None:
        return ""
    if kind is ColumnKind.TEXT:
        return str(value)
    v = float(value)
    if np.isnan(v):
        return ""
    return format(v, ".2f")


def serialize_cell(table: Table, i: int, j: int, with_context: bool = False,
                   mask: np.ndarray | None = None, row_offset: int = 0) -> str:
    """``Row {i}, {name}=>{value} EOS`` with optional observed-row context.

    ``mask`` overrides the table's own missingness: cells with mask 0 render
    as unknown even when the table still holds their value (progressive
    masking hides observed cells).  ``row_offset`` shifts the printed row
    index, so chunked tables keep their global row ids.
    """
    hidden = table.is_missing(i, j) or (mask is not None and not mask[i, j])
    value = "" if hidden else render_value(table.kinds[j], table.cell(i, j))
    parts = [f"Row {i + row_offset}, {table.names[j]}=>{value}"]
    if with_context:
        for k in range(table.d):
            if k == j:
                continue
            if mask is not None and not mask[i, k]:
                continue
            if table.is_missing(i, k):
                continue
            parts.append(f" | {table.names[k]}=>{render_value(table.kinds[k], table.cell(i, k))}")
    parts.append(" EOS")
    return "".join(parts)


def serialize_hyperedge(hg: Hypergraph, edge: int, names: list[str],
                        row_offset: int = 0) -> str:
    if hg.is_column_edge(edge):
        return f"This is col: {names[edge]} EOS"
    return f"This is row: {edge - hg.d + row_offset} EOS"


# ---------------------------------------------------------------------------
# Tokenizer and vocabulary
# ---------------------------------------------------------------------------

def split_tokens(text: str) -> list[str]:
    """Lowercase and split on whitespace and punctuation.

    Each punctuation mark is its own token; tokenizing "" yields [].
    """
    out: list[str] = []
    word: list[str] = []
    for ch in text.lower():
        if ch.isspace() or ch in _PUNCT:
            if word:
                out.append("".join(word))
                word = []
            if ch in _PUNCT:
                out.append(ch)
        else:
            word.append(ch)
    if word:
        out.append("".join(word))
    return out


@dataclass
class Vocab:
    """Token-string <-> dense id bijection with reserved PAD/EOS/UNK ids."""

    tokens: list[str] = field(default_factory=lambda: [PAD_TOKEN, EOS_TOKEN, UNK_TOKEN])

    def __post_init__(self):
        if self.tokens[:3] != [PAD_TOKEN, EOS_TOKEN, UNK_TOKEN]:
            raise ParameterError("vocab must start with the reserved tokens")
        self._ids = {t: i for i, t in enumerate(self.tokens)}
        if len(self._ids) != len(self.tokens):
            raise ParameterError("vocab contains duplicate tokens")

    def __len__(self) -> int:
        return len(self.tokens)

    def id_of(self, token: str) -> int:
        return self._ids.get(token, UNK_ID)

    def token_of(self, idx: int) -> str:
        return self.tokens[idx]

    def encode(self, text: str) -> list[int]:
        return [self.id_of(t) for t in split_tokens(text)]

    def decode(self, ids: list[int]) -> str:
        return " ".join(self.tokens[i] for i in ids
                        if i not in (PAD_ID, EOS_ID))

    def save(self, path: str) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for t in self.tokens:
                fh.write(t + "\n")

    @classmethod
    def load(cls, path: str) -> "Vocab":
        with open(path, "r", encoding="utf-8") as fh:
            tokens = [ln.rstrip("\n") for ln in fh]
        return cls([t for t in tokens if t])


def build_vocab(corpus: list[str]) -> Vocab:
    """Vocabulary over a prompt corpus, ids in first-appearance order."""
    tokens = [PAD_TOKEN, EOS_TOKEN, UNK_TOKEN]
    seen = set(tokens)
    for text in corpus:
        for tok in split_tokens(text):
            if tok not in seen:
                seen.add(tok)
                tokens.append(tok)
    return Vocab(tokens)


def table_corpus(table: Table, row_offset: int = 0) -> list[str]:
    """Every cell and hyperedge prompt of a table (covers query prompts too)."""
    hg = Hypergraph(table.n, table.d)
    out = []
    for i in range(table.n):
        for j in range(table.d):
            out.append(serialize_cell(table, i, j, with_context=True,
                                      row_offset=row_offset))
    for e in range(hg.num_edges):
        out.append(serialize_hyperedge(hg, e, table.names, row_offset=row_offset))
    return out


# ---------------------------------------------------------------------------
# Frozen backbone
# ---------------------------------------------------------------------------

# Positional amplitude matches the embedding range: the embeddings are the
# information carriers, positions only disambiguate order.
POSITION_SCALE = 0.1

# Bound of the backbone's value projection, relative to 1/sqrt(dim).  Kept
# small so the contextual mix does not bury token identities: prompt features
# stay close to embedding + position, and hyperedge features differ across
# rows/columns only mildly, which keeps the graph features dominated by cell
# values rather than row identities.
VALUE_MIX_SCALE = 0.03


def sinusoidal_positions(length: int, dim: int) -> np.ndarray:
    pos = np.arange(length, dtype=np.float64)[:, None]
    idx = np.arange(dim, dtype=np.float64)[None, :]
    angle = pos / np.power(10000.0, 2.0 * np.floor(idx / 2.0) / dim)
    out = np.empty((length, dim), dtype=np.float64)
    out[:, 0::2] = np.sin(angle[:, 0::2])
    out[:, 1::2] = np.cos(angle[:, 1::2])
    return out * POSITION_SCALE


class FrozenBackbone:
    """Deterministic, never-trained prompt encoder.

    Token embeddings are seeded uniform[-0.1, 0.1]; one causal self-attention
    layer with seeded uniform projections provides last-token context.  An
    external |Vocab| x D float32 dump can replace the embedding table.
    """

    _CACHE_LIMIT = 1 << 16

    def __init__(self, vocab_size: int, dim: int = DEFAULT_EMBED_DIM,
                 seed: int = 0, embedding: np.ndarray | None = None):
        if dim < 1:
            raise ParameterError(f"embed dim must be >= 1, got {dim}")
        self.vocab_size = vocab_size
        self.dim = dim
        self.seed = seed
        rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, 0xB0])))
        if embedding is None:
            self.embedding = rng.uniform(-0.1, 0.1, size=(vocab_size, dim))
        else:
            if embedding.shape != (vocab_size, dim):
                raise ParameterError(
                    f"embedding shape {embedding.shape} != ({vocab_size},{dim})")
            self.embedding = embedding.astype(np.float64)
            rng.uniform(-0.1, 0.1, size=(vocab_size, dim))  # keep stream aligned
        bound = 1.0 / np.sqrt(dim)
        self.wq = rng.uniform(-bound, bound, size=(dim, dim))
        self.wk = rng.uniform(-bound, bound, size=(dim, dim))
        self.wv = rng.uniform(-bound * VALUE_MIX_SCALE, bound * VALUE_MIX_SCALE,
                              size=(dim, dim))
        self._positions = sinusoidal_positions(64, dim)
        self._cache: dict[tuple[int, ...], np.ndarray] = {}

    @classmethod
    def with_embedding_file(cls, path: str, vocab_size: int, dim: int,
                            seed: int = 0) -> "FrozenBackbone":
        raw = np.fromfile(path, dtype="<f4")
        if raw.size != vocab_size * dim:
            raise ParameterError(
                f"embedding file holds {raw.size} floats, need {vocab_size * dim}")
        return cls(vocab_size, dim, seed, embedding=raw.reshape(vocab_size, dim))

    def positions(self, length: int) -> np.ndarray:
        while self._positions.shape[0] < length:
            self._positions = sinusoidal_positions(self._positions.shape[0] * 2,
                                                   self.dim)
        return self._positions[:length]

    def encode(self, ids: list[int]) -> np.ndarray:
        """(s, D) contextual embeddings for a token-id sequence."""
        if not ids:
            return np.zeros((0, self.dim), dtype=np.float64)
        key = tuple(ids)
        hit = self._cache.get(key)
        if hit is not None:
            return hit
        idx = np.asarray(ids, dtype=np.int64)
        x = self.embedding[idx] + self.positions(len(ids))
        out = kernels.causal_attention(np.ascontiguousarray(x),
                                       self.wq, self.wk, self.wv)
        if len(self._cache) >= self._CACHE_LIMIT:
            self._cache.clear()
        self._cache[key] = out
        return out

    def last_token_feature(self, ids: list[int]) -> np.ndarray:
        if not ids:
            raise ContractError("cannot take last-token feature of empty sequence")
        return self.encode(ids)[-1]

    def checksum(self) -> float:
        """Stable digest of every frozen parameter (frozen-contract checks)."""
        return float(self.embedding.sum() + self.wq.sum() + self.wk.sum()
                     + self.wv.sum())

    def state_arrays(self) -> dict[str, np.ndarray]:
        return {"backbone/embedding": self.embedding, "backbone/wq": self.wq,
                "backbone/wk": self.wk, "backbone/wv": self.wv}


def last_token_feature(embeddings: np.ndarray) -> np.ndarray:
    """Final row of a prompt embedding matrix."""
    if embeddings.shape[0] == 0:
        raise ContractError("empty prompt embedding")
    return embeddings[-1]


# ---------------------------------------------------------------------------
# Initial node features
# ---------------------------------------------------------------------------

def init_node_feature(table: Table, mask: np.ndarray, i: int, j: int,
                      backbone: FrozenBackbone, vocab: Vocab,
                      row_offset: int = 0) -> np.ndarray:
    """Initial feature of one cell node (table must be scaled already).

    Slot 0 is the scalar-value channel: numerical and categorical cells put
    their scaled value there and nothing else.  Text features keep that slot
    clear so the value channel stays unambiguous downstream.
    """
    dim = backbone.dim
    if not mask[i, j]:
        return np.zeros(dim, dtype=np.float64)
    kind = table.kinds[j]
    if kind is ColumnKind.TEXT:
        ids = vocab.encode(serialize_cell(table, i, j, row_offset=row_offset))
        out = backbone.last_token_feature(ids).copy()
        out[0] = 0.0
        return out
    out = np.zeros(dim, dtype=np.float64)
    out[0] = float(table.columns[j][i])
    return out


def build_node_features(table: Table, mask: np.ndarray,
                        backbone: FrozenBackbone, vocab: Vocab,
                        row_offset: int = 0) -> np.ndarray:
    """(n*d, D) initial node feature matrix, node idx = i*d + j."""
    n, d, dim = table.n, table.d, backbone.dim
    out = np.zeros((n * d, dim), dtype=np.float64)
    for j, kind in enumerate(table.kinds):
        col_obs = mask[:, j].astype(bool)
        if kind is ColumnKind.TEXT:
            for i in np.nonzero(col_obs)[0]:
                ids = vocab.encode(serialize_cell(table, int(i), j,
                                                  row_offset=row_offset))
                out[int(i) * d + j] = backbone.last_token_feature(ids)
                out[int(i) * d + j, 0] = 0.0
        else:
            vals = table.columns[j].astype(np.float64)
            rows = np.nonzero(col_obs & ~np.isnan(vals))[0]
            out[rows * d + j, 0] = vals[rows]
    return out


def build_edge_features(hg: Hypergraph, names: list[str],
                        backbone: FrozenBackbone, vocab: Vocab,
                        row_offset: int = 0) -> np.ndarray:
    """(n+d, D) initial hyperedge feature matrix."""
    out = np.zeros((hg.num_edges, backbone.dim), dtype=np.float64)
    for e in range(hg.num_edges):
        ids = vocab.encode(serialize_hyperedge(hg, e, names, row_offset=row_offset))
        out[e] = backbone.last_token_feature(ids)
    return out
