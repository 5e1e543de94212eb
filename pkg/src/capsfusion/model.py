"""The full capsule-fusion classifier: text branch + metadata branch + head."""

from __future__ import annotations

from typing import Optional

import numpy as np

from . import capsnet, encoder, fusion
from .config import TrainConfig
from .ndtensor import Record, Tensor, mul, sigmoid

FEATURE_PARAMS = ("feat_W", "feat_b", "head_feat")


class CapsFusion:
    """Parameter container plus forward pass.

    ``arrays`` maps parameter names to float64 arrays; the forward pass wraps
    them as tensors, either recorded leaves (training, gradient checks) or
    plain values (inference).
    """

    def __init__(self, config: TrainConfig, vocab_size: int, arrays: Optional[dict[str, np.ndarray]] = None):
        self.config = config
        self.vocab_size = vocab_size
        self.arrays = arrays if arrays is not None else {}

    @classmethod
    def initialize(cls, config: TrainConfig, vocab_size: int, rng: np.random.Generator) -> "CapsFusion":
        c = config
        arrays = encoder.init_encoder(rng, vocab_size, c.embed_dim, c.hidden)
        arrays["caps_W"] = capsnet.init_capsules(rng, c.n_in, c.caps_out, c.caps_dim, c.d_in)
        arrays.update(fusion.init_fusion(rng, c.caps_out * c.caps_dim, c.feat_hidden))
        model = cls(config, vocab_size, arrays)
        if not c.use_features:
            for name in FEATURE_PARAMS:
                arrays[name][...] = 0.0
        return model

    @property
    def frozen(self) -> frozenset[str]:
        """Parameters the optimizer must not touch."""
        return frozenset() if self.config.use_features else frozenset(FEATURE_PARAMS)

    def tensors(self, record: Optional[Record] = None) -> dict[str, Tensor]:
        if record is None:
            return {k: Tensor(v) for k, v in self.arrays.items()}
        return {k: record.leaf(v) for k, v in self.arrays.items()}

    def logits(
        self,
        t: dict[str, Tensor],
        token_ids,
        features,
        dropout: float = 0.0,
        rng: Optional[np.random.Generator] = None,
    ) -> Tensor:
        """Logits of shape (batch,) for ids (batch, n) and features (batch, 7)."""
        ids = np.asarray(token_ids, dtype=np.int64)
        feats = np.asarray(features, dtype=np.float64)
        enc = encoder.encoder_params(t)
        h = encoder.bi_indrnn(encoder.embed(ids, enc.embedding), enc)
        caps = capsnet.CapsuleLayerParams(t["caps_W"], self.config.routing_iters)
        v = capsnet.capsule_layer_forward(h, caps)
        text_latent = v.reshape((ids.shape[0], -1))
        head = fusion.fusion_params(t)
        feat_latent = fusion.encode_features(feats, head)
        if dropout > 0.0:
            text_latent = _dropout(text_latent, dropout, rng)
            feat_latent = _dropout(feat_latent, dropout, rng)
        return fusion.fuse_logit(text_latent, feat_latent, head)

    def loss(self, t, token_ids, features, labels, dropout=0.0, rng=None) -> Tensor:
        return fusion.bce_from_logits(self.logits(t, token_ids, features, dropout, rng), labels)

    def predict_proba(self, token_ids, features, batch_size: int = 256) -> np.ndarray:
        ids = np.asarray(token_ids, dtype=np.int64)
        feats = np.asarray(features, dtype=np.float64)
        t = self.tensors()
        out = [
            sigmoid(self.logits(t, ids[i : i + batch_size], feats[i : i + batch_size])).data
            for i in range(0, len(ids), batch_size)
        ]
        return np.concatenate(out) if out else np.zeros(0)

    def predict(self, token_ids, features) -> np.ndarray:
        return fusion.labels_from_probs(self.predict_proba(token_ids, features))

    def after_step(self) -> None:
        """Keep the PAD embedding at zero and clamp recurrent weights to |u| <= u_max."""
        self.arrays["embedding"][encoder.PAD] = 0.0
        for side in ("fwd", "bwd"):
            u = self.arrays[f"enc_{side}_u"]
            np.clip(u, -self.config.u_max, self.config.u_max, out=u)


def _dropout(x: Tensor, rate: float, rng: Optional[np.random.Generator]) -> Tensor:
    if rng is None:
        raise ValueError("dropout needs a random generator")
    keep = (rng.random(x.shape) >= rate) / (1.0 - rate)
    return mul(x, keep)
