"""Frozen crop encoders.

`toy:<dim>` is a deterministic random-projection encoder for fixtures and
smoke tests; `hf:<model>` loads a pretrained vision tower through
transformers when it is installed and its weights are available locally.
Encoders consume uint8 RGB batches of shape (n, size, size, 3) and return
L2-normalized float32 rows.
"""

from __future__ import annotations

import numpy as np

_TOY_PROJECTION_SEED = 1337


class EncoderError(RuntimeError):
    """The requested encoder could not be constructed."""


class ToyEncoder:
    """Fixed seeded linear projection of the resized crop pixels."""

    input_size = 32

    def __init__(self, dim: int):
        if dim < 2:
            raise EncoderError(f"toy encoder dim must be >= 2, got {dim}")
        self.dim = dim
        rng = np.random.default_rng(_TOY_PROJECTION_SEED)
        n_in = self.input_size * self.input_size * 3
        self._projection = rng.standard_normal((n_in, dim)) / np.sqrt(n_in)

    def encode(self, batch: np.ndarray) -> np.ndarray:
        flat = batch.reshape(batch.shape[0], -1).astype(np.float64) / 255.0
        out = flat @ self._projection
        norms = np.linalg.norm(out, axis=1, keepdims=True)
        norms[norms == 0.0] = 1.0
        return (out / norms).astype(np.float32)


class HfEncoder:
    """Pretrained vision encoder behind the transformers API (eval mode)."""

    input_size = 224

    def __init__(self, model_id: str):
        try:
            import torch
            from transformers import AutoImageProcessor, AutoModel
        except ImportError as exc:
            raise EncoderError(f"transformers/torch not installed for encoder 'hf:{model_id}'") from exc
        try:
            self._processor = AutoImageProcessor.from_pretrained(model_id)
            self._model = AutoModel.from_pretrained(model_id).eval()
        except Exception as exc:
            raise EncoderError(f"failed to load encoder 'hf:{model_id}': {exc}") from exc
        self._torch = torch
        with torch.no_grad():
            probe = self._forward(np.zeros((1, self.input_size, self.input_size, 3), dtype=np.uint8))
        self.dim = int(probe.shape[1])

    def _forward(self, batch: np.ndarray):
        torch = self._torch
        inputs = self._processor(images=list(batch), return_tensors="pt")
        with torch.no_grad():
            if hasattr(self._model, "get_image_features"):
                feats = self._model.get_image_features(**inputs)
            else:
                out = self._model(**inputs)
                feats = getattr(out, "pooler_output", None)
                if feats is None:
                    feats = out.last_hidden_state.mean(dim=1)
        return feats.cpu().numpy()

    def encode(self, batch: np.ndarray) -> np.ndarray:
        feats = self._forward(batch).astype(np.float64)
        norms = np.linalg.norm(feats, axis=1, keepdims=True)
        norms[norms == 0.0] = 1.0
        return (feats / norms).astype(np.float32)


def build_encoder(identifier: str):
    """Construct an encoder from its identifier ('toy:<dim>' or 'hf:<model>')."""
    kind, _, arg = identifier.partition(":")
    if kind == "toy":
        try:
            dim = int(arg or "64")
        except ValueError:
            raise EncoderError(f"bad toy encoder dim in {identifier!r}") from None
        return ToyEncoder(dim)
    if kind == "hf":
        if not arg:
            raise EncoderError("hf encoder needs a model id, e.g. 'hf:google/siglip-base-patch16-224'")
        return HfEncoder(arg)
    raise EncoderError(f"unknown encoder identifier {identifier!r}")
