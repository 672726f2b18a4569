"""Attention-based MIL: instance mapping, attention pooling, bag classifier."""
import numpy as np

from . import autodiff as ad
from .errors import DimensionError, ValidationError

VARIANTS = ("attention", "gated_attention")


def _uniform(rng, fan_in, shape):
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


class MilModel:
    """Parameters of the mapping g (D -> H -> E), the attention scorer and
    the linear classifier (E -> C).

    Attention logits are ``w . tanh(V e + b_V)``; the gated variant
    multiplies the tanh branch by ``sigmoid(U e + b_U)`` before ``w``.
    Weight matrices are stored input-major, so layers compute ``x @ W + b``.
    """

    def __init__(self, variant, input_dim, hidden_dim, embed_dim, attn_dim, num_classes, params):
        if variant not in VARIANTS:
            raise ValidationError(f"unknown variant {variant!r}")
        self.variant = variant
        self.input_dim = input_dim
        self.hidden_dim = hidden_dim
        self.embed_dim = embed_dim
        self.attn_dim = attn_dim
        self.num_classes = num_classes
        self.params = params
        self._check()

    @classmethod
    def init(cls, rng, input_dim, hidden_dim=256, embed_dim=128, attn_dim=64,
             num_classes=2, variant="attention"):
        D, H, E, A, C = input_dim, hidden_dim, embed_dim, attn_dim, num_classes
        shapes = cls.param_shapes(variant, D, H, E, A, C)
        fan_in = {"g_w1": D, "g_b1": D, "g_w2": H, "g_b2": H, "attn_v": E, "attn_bv": E,
                  "attn_u": E, "attn_bu": E, "attn_w": A, "clf_w": E, "clf_b": E}
        params = {name: ad.parameter(_uniform(rng, fan_in[name], shape), name=name)
                  for name, shape in shapes.items()}
        return cls(variant, D, H, E, A, C, params)

    @staticmethod
    def param_shapes(variant, D, H, E, A, C):
        """Parameter names and shapes in checkpoint order."""
        shapes = {
            "g_w1": (D, H), "g_b1": (H,),
            "g_w2": (H, E), "g_b2": (E,),
            "attn_v": (E, A), "attn_bv": (A,),
        }
        if variant == "gated_attention":
            shapes["attn_u"] = (E, A)
            shapes["attn_bu"] = (A,)
        shapes["attn_w"] = (A, 1)
        shapes["clf_w"] = (E, C)
        shapes["clf_b"] = (C,)
        return shapes

    def _check(self):
        expected = self.param_shapes(self.variant, self.input_dim, self.hidden_dim,
                                     self.embed_dim, self.attn_dim, self.num_classes)
        if list(expected) != list(self.params):
            raise ValidationError("parameter set does not match the variant")
        for name, shape in expected.items():
            if self.params[name].shape != shape:
                raise DimensionError(f"{name}: shape {self.params[name].shape} != {shape}")
            if not np.all(np.isfinite(self.params[name].values)):
                raise ValidationError(f"{name}: non-finite parameter")

    def parameters(self):
        return list(self.params.values())

    def __getitem__(self, name):
        return self.params[name]


def _affine(x, w, b):
    out = ad.matmul(x, w)
    return ad.add(out, ad.broadcast_row(b, out.shape[0]))


def map_instances(model, instances):
    """Instance embeddings g(x), a K x E tensor."""
    x = instances if isinstance(instances, ad.Tensor) else ad.constant(instances)
    if x.values.ndim != 2 or x.shape[1] != model.input_dim:
        raise DimensionError(f"instances shape {x.shape}, expected (K, {model.input_dim})")
    p = model.params
    h = ad.relu(_affine(x, p["g_w1"], p["g_b1"]))
    return _affine(h, p["g_w2"], p["g_b2"])


def attention_pool(model, embeddings):
    """Softmax attention over instances.

    Returns ``(bag_embedding, weights)`` with shapes 1 x E and 1 x K.
    """
    if embeddings.values.ndim != 2 or embeddings.shape[1] != model.embed_dim:
        raise DimensionError(f"embeddings shape {embeddings.shape}, expected (K, {model.embed_dim})")
    if embeddings.shape[0] < 1:
        raise DimensionError("attention_pool needs K >= 1")
    p = model.params
    hidden = ad.tanh(_affine(embeddings, p["attn_v"], p["attn_bv"]))
    if model.variant == "gated_attention":
        gate = ad.sigmoid(_affine(embeddings, p["attn_u"], p["attn_bu"]))
        hidden = ad.elementwise_mul(hidden, gate)
    logits = ad.matmul(hidden, p["attn_w"])          # K x 1
    weights = ad.softmax_rows(ad.transpose(logits))  # 1 x K
    return ad.matmul(weights, embeddings), weights


def classify(model, bag_embedding):
    """Class logits (1 x C) for a 1 x E bag embedding."""
    if bag_embedding.shape != (1, model.embed_dim):
        raise DimensionError(f"bag embedding shape {bag_embedding.shape}, expected (1, {model.embed_dim})")
    p = model.params
    return _affine(bag_embedding, p["clf_w"], p["clf_b"])


def mil_loss(logits, label):
    """Softmax cross-entropy of 1 x C logits against a class index."""
    c = logits.shape[1]
    if not 0 <= label < c:
        raise ValidationError(f"label {label} outside [0, {c})")
    onehot = np.zeros((1, c))
    onehot[0, label] = 1.0
    picked = ad.sum_all(ad.elementwise_mul(ad.log_softmax_rows(logits), ad.constant(onehot)))
    return ad.scalar_mul(picked, -1.0)


def forward(model, bag):
    """Full forward pass for one bag: embeddings, bag embedding, weights, logits."""
    emb = map_instances(model, bag.instances)
    pooled, weights = attention_pool(model, emb)
    return emb, pooled, weights, classify(model, pooled)


def predict_proba(model, bag):
    """Class probabilities and attention weights for one bag, without recording."""
    with ad.no_grad():
        _, _, weights, logits = forward(model, bag)
    z = logits.values[0] - logits.values[0].max()
    p = np.exp(z)
    return p / p.sum(), weights.values[0]
