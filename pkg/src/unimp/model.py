"""Model state and the shared forward passes over a table chunk.

A :class:`ModelState` bundles the trainable parameters (message-passing
layers, the fusion block, the two projection heads) with the frozen backbone
and vocabulary.  Checkpoints persist every array bit-exactly; the vocabulary
travels in a ``<ckpt>.vocab`` sidecar (one token per line).

Forward passes work on one chunk at a time: the chunk's hypergraph is built,
node/edge features encoded, message passing produces per-node graph features,
and masked cells are then fused and projected.  Cells sharing a prompt shape
are batched into rank-3 tensors, which keeps the tape small.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

from . import diffcore as dc
from . import encoder as enc
from .bihmp import BiHMPLayer, GraphState, run_bihmp
from .diffcore import Param, Tensor
from .errors import ContractError, ParameterError, StructureError
from .fusion import ProjectionHead, XFusionBlock, project, split_graph_feature, take_last, xfusion
from .hypergraph import Hypergraph
from .tabular import ColumnKind, Table

DEFAULT_MAX_DECODE_LEN = 32

_META_KEY = "meta/config"


@dataclass
class ModelState:
    """Trainable parameters plus the frozen backbone and vocabulary."""

    vocab: enc.Vocab
    backbone: enc.FrozenBackbone
    layers: list[BiHMPLayer]
    fusion: XFusionBlock
    head_scalar: ProjectionHead
    head_text: ProjectionHead
    embed_dim: int
    num_layers: int
    max_decode_len: int = DEFAULT_MAX_DECODE_LEN
    init_seed: int = 0

    @classmethod
    def create(cls, vocab: enc.Vocab, embed_dim: int = enc.DEFAULT_EMBED_DIM,
               num_layers: int = 3, seed: int = 0,
               max_decode_len: int = DEFAULT_MAX_DECODE_LEN,
               embedding: np.ndarray | None = None) -> "ModelState":
        if num_layers < 1:
            raise ParameterError(f"num_layers must be >= 1, got {num_layers}")
        backbone = enc.FrozenBackbone(len(vocab), embed_dim, seed=seed,
                                      embedding=embedding)
        rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, 0x11])))
        layers = [BiHMPLayer.create(embed_dim, rng) for _ in range(num_layers)]
        fusion = XFusionBlock.create(embed_dim, rng)
        head_scalar = ProjectionHead.create(embed_dim, 1, rng)
        head_text = ProjectionHead.create(embed_dim, len(vocab), rng)
        return cls(vocab, backbone, layers, fusion, head_scalar, head_text,
                   embed_dim, num_layers, max_decode_len, seed)

    # -- parameters ---------------------------------------------------------

    def named_params(self) -> list[tuple[str, Param]]:
        out: list[tuple[str, Param]] = []
        for l, layer in enumerate(self.layers):
            for field_name, p in zip(("w1", "b1", "w2", "b2", "w3", "b3"),
                                     layer.params()):
                out.append((f"layers/{l}/{field_name}", p))
        for field_name, p in zip(("w_q", "w_k", "w_v", "w1", "w2"),
                                 self.fusion.params()):
            out.append((f"fusion/{field_name}", p))
        out.append(("head_scalar/w", self.head_scalar.w))
        out.append(("head_scalar/b", self.head_scalar.b))
        out.append(("head_text/w", self.head_text.w))
        out.append(("head_text/b", self.head_text.b))
        return out

    def trainable_params(self) -> list[Param]:
        return [p for _, p in self.named_params() if p.trainable]

    # -- persistence --------------------------------------------------------

    def save(self, path: str) -> None:
        arrays: dict[str, np.ndarray] = {
            _META_KEY: np.array([self.embed_dim, self.num_layers,
                                 self.max_decode_len, self.init_seed,
                                 len(self.vocab)], dtype=np.float64),
        }
        for name, p in self.named_params():
            arrays[name] = p.data
        arrays.update(self.backbone.state_arrays())
        dc.save_checkpoint(path, arrays)
        self.vocab.save(path + ".vocab")

    @classmethod
    def load(cls, path: str) -> "ModelState":
        arrays = dc.load_checkpoint(path)
        if _META_KEY not in arrays:
            raise StructureError(f"{path}: missing {_META_KEY}")
        vocab_path = path + ".vocab"
        if not os.path.exists(vocab_path):
            raise StructureError(f"missing vocab sidecar {vocab_path}")
        vocab = enc.Vocab.load(vocab_path)
        meta = arrays[_META_KEY]
        embed_dim, num_layers, max_decode_len, init_seed, vocab_size = (
            int(meta[0]), int(meta[1]), int(meta[2]), int(meta[3]), int(meta[4]))
        if vocab_size != len(vocab):
            raise StructureError(
                f"vocab sidecar has {len(vocab)} tokens, checkpoint expects {vocab_size}")
        model = cls.create(vocab, embed_dim, num_layers, seed=init_seed,
                           max_decode_len=max_decode_len)
        for name, p in model.named_params():
            if name not in arrays:
                raise StructureError(f"{path}: missing array {name}")
            if arrays[name].shape != p.data.shape:
                raise StructureError(
                    f"{path}: {name} shape {arrays[name].shape} != {p.data.shape}")
            p.data = arrays[name]
        bb = model.backbone
        bb.embedding = arrays["backbone/embedding"]
        bb.wq = arrays["backbone/wq"]
        bb.wk = arrays["backbone/wk"]
        bb.wv = arrays["backbone/wv"]
        bb._cache.clear()
        return model


# ---------------------------------------------------------------------------
# Chunk-level forward
# ---------------------------------------------------------------------------

@dataclass
class ChunkForward:
    """Message-passing output for one chunk under one mask."""

    hg: Hypergraph
    z_g: Tensor                 # (n*d, 2D), on the tape
    table: Table                # scaled chunk slice
    mask: np.ndarray
    row_offset: int = 0


def forward_graph(model: ModelState, table: Table, mask: np.ndarray,
                  row_offset: int = 0,
                  edge_features: np.ndarray | None = None) -> ChunkForward:
    """Encode a chunk and run message passing; masked cells start at zero."""
    hg = Hypergraph(table.n, table.d)
    z_v0 = dc.constant(enc.build_node_features(table, mask, model.backbone,
                                               model.vocab, row_offset))
    if edge_features is None:
        edge_features = enc.build_edge_features(hg, table.names, model.backbone,
                                                model.vocab, row_offset)
    z_e0 = dc.constant(edge_features)
    _, z_g = run_bihmp(GraphState(z_v0, z_e0), model.layers, hg,
                       model.num_layers)
    return ChunkForward(hg, z_g, table, mask, row_offset)


def query_prompt_ids(model: ModelState, fwd: ChunkForward, i: int, j: int) -> list[int]:
    """Token ids of the masked cell's context prompt."""
    text = enc.serialize_cell(fwd.table, i, j, with_context=True,
                              mask=fwd.mask, row_offset=fwd.row_offset)
    return model.vocab.encode(text)


def _grouped(indexable, key):
    groups: dict = {}
    for item in indexable:
        groups.setdefault(key(item), []).append(item)
    return groups


def forward_scalar_cells(model: ModelState, fwd: ChunkForward,
                         cells: list[tuple[int, int]]) -> tuple[Tensor, np.ndarray] | None:
    """Batched predictions for numerical/categorical cells.

    Returns (predictions, cell order as node indices); prediction order
    follows the returned node-index array.  None when cells is empty.
    """
    if not cells:
        return None
    items = [(i, j, tuple(query_prompt_ids(model, fwd, i, j))) for i, j in cells]
    groups = _grouped(items, key=lambda it: len(it[2]))
    z_g2 = split_graph_feature(fwd.z_g)  # (N, 2, D)
    preds: list[Tensor] = []
    order: list[int] = []
    for _, group in sorted(groups.items()):
        node_idx = np.array([i * fwd.hg.d + j for i, j, _ in group], dtype=np.int64)
        z_p = dc.constant(np.stack([model.backbone.encode(list(ids))
                                    for _, _, ids in group]))
        z_g_batch = dc.gather_rows(z_g2, node_idx)            # (B, 2, D)
        z_out = xfusion(model.fusion, z_p, z_g_batch)         # (B, s, D)
        out = take_last(project(z_out, model.head_scalar))    # (B, 1)
        preds.append(dc.reshape(out, (len(group),)))
        order.extend(node_idx.tolist())
    merged = preds[0] if len(preds) == 1 else dc.concat(preds, axis=0)
    return merged, np.array(order, dtype=np.int64)


def forward_text_cells(model: ModelState, fwd: ChunkForward,
                       items: list[tuple[int, int, list[int]]]) -> tuple[Tensor, int] | None:
    """Teacher-forced text loss over (i, j, target-token-ids) triples.

    Target ids must end with EOS.  Returns (sum of per-cell mean-token NLL,
    cell count); None when items is empty.
    """
    if not items:
        return None
    prepared = []
    for i, j, target_ids in items:
        if not target_ids or target_ids[-1] != enc.EOS_ID:
            raise ContractError("text targets must end with EOS")
        q = query_prompt_ids(model, fwd, i, j)
        prepared.append((i, j, tuple(q), tuple(target_ids)))
    groups = _grouped(prepared, key=lambda it: (len(it[2]), len(it[3])))
    z_g2 = split_graph_feature(fwd.z_g)
    total: Tensor | None = None
    for (qlen, tlen), group in sorted(groups.items()):
        node_idx = np.array([i * fwd.hg.d + j for i, j, _, _ in group],
                            dtype=np.int64)
        seqs = [list(q) + list(t)[:-1] for _, _, q, t in group]
        z_p = dc.constant(np.stack([model.backbone.encode(s) for s in seqs]))
        z_g_batch = dc.gather_rows(z_g2, node_idx)
        z_out = xfusion(model.fusion, z_p, z_g_batch)
        logits = project(z_out, model.head_text)              # (B, s, V)
        picked = dc.slice_axis1(logits, qlen - 1, qlen - 1 + tlen)
        flat = dc.reshape(picked, (len(group) * tlen, len(model.vocab)))
        targets = np.array([t for _, _, _, tt in group for t in tt],
                           dtype=np.int64)
        group_loss = dc.cross_entropy(flat, targets) * float(len(group))
        total = group_loss if total is None else total + group_loss
    return total, len(prepared)


# ---------------------------------------------------------------------------
# Greedy decoding (inference)
# ---------------------------------------------------------------------------

def decode_step(model: ModelState, prompt_ids: list[int], z_g_rows: Tensor) -> int:
    """Next token id for a prompt given a node's (2, D) graph feature.

    PAD is excluded from the argmax; ties break toward the lowest id.
    """
    if not prompt_ids:
        raise ContractError("decode_step needs a non-empty prompt")
    z_p = dc.constant(model.backbone.encode(list(prompt_ids)))
    z_out = xfusion(model.fusion, z_p, z_g_rows)
    logits = take_last(project(z_out, model.head_text)).data.copy()
    logits[enc.PAD_ID] = -np.inf
    return int(np.argmax(logits))


def decode_text(model: ModelState, fwd: ChunkForward, i: int, j: int,
                z_g_value: np.ndarray) -> str:
    """Greedy autoregressive decode for one masked text cell."""
    dim = model.embed_dim
    z_g_rows = dc.constant(z_g_value.reshape(2, dim))
    ids = query_prompt_ids(model, fwd, i, j)
    out_tokens: list[int] = []
    for _ in range(model.max_decode_len):
        tok = decode_step(model, ids, z_g_rows)
        if tok == enc.EOS_ID:
            break
        out_tokens.append(tok)
        ids.append(tok)
    return model.vocab.decode(out_tokens)
