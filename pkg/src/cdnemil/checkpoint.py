"""Binary model checkpoints.

Layout, little-endian:

* 7 x uint32: variant (0 = attention, 1 = gated_attention), D, H, E, A, C,
  cdne flag (0/1)
* if the flag is set: 2 x uint32 (number of heads, M) and 3 x float64
  (thr, lambda_neg, lambda_pos)
* MIL tensors as float64 in ``MilModel.param_shapes`` order:
  g_w1, g_b1, g_w2, g_b2, attn_v, attn_bv, [attn_u, attn_bu], attn_w,
  clf_w, clf_b
* if the flag is set, per head: projection weight (E x M), projection bias
  (M), center (M)
"""
import struct
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .cdne import CdneHead
from .errors import SchemaError
from .model import VARIANTS, MilModel


def save_checkpoint(path, model, head=None):
    chunks = [struct.pack("<7I", VARIANTS.index(model.variant), model.input_dim,
                          model.hidden_dim, model.embed_dim, model.attn_dim,
                          model.num_classes, int(head is not None))]
    if head is not None:
        chunks.append(struct.pack("<2I3d", head.num_heads, head.proj_dim,
                                  head.thr, head.lambda_neg, head.lambda_pos))
    for p in model.parameters():
        chunks.append(np.ascontiguousarray(p.values, dtype="<f8").tobytes())
    if head is not None:
        for p in head.parameters():
            chunks.append(np.ascontiguousarray(p.values, dtype="<f8").tobytes())
    Path(path).write_bytes(b"".join(chunks))


def load_checkpoint(path):
    """Return ``(model, head)``; ``head`` is None when no CDNE head was saved."""
    raw = Path(path).read_bytes()
    off = 0

    def take(n):
        nonlocal off
        if off + n > len(raw):
            raise SchemaError(f"{path}: checkpoint truncated")
        out = raw[off:off + n]
        off += n
        return out

    tag, D, H, E, A, C, flag = struct.unpack("<7I", take(28))
    if tag >= len(VARIANTS):
        raise SchemaError(f"{path}: unknown variant tag {tag}")
    variant = VARIANTS[tag]
    if flag:
        heads, M, thr, lneg, lpos = struct.unpack("<2I3d", take(32))

    def tensor(shape, name):
        n = int(np.prod(shape))
        vals = np.frombuffer(take(8 * n), dtype="<f8").astype(np.float64).reshape(shape)
        return ad.parameter(vals, name=name)

    params = {name: tensor(shape, name)
              for name, shape in MilModel.param_shapes(variant, D, H, E, A, C).items()}
    model = MilModel(variant, D, H, E, A, C, params)
    head = None
    if flag:
        projections, centers = [], []
        for i in range(heads):
            w = tensor((E, M), f"proj{i}_w")
            b = tensor((M,), f"proj{i}_b")
            projections.append((w, b))
            centers.append(tensor((M,), f"center{i}"))
        head = CdneHead(projections, centers, thr, lneg, lpos)
    if off != len(raw):
        raise SchemaError(f"{path}: {len(raw) - off} trailing bytes")
    return model, head
