"""A small attention-based encoder-decoder, trainable on CPU in minutes.

Pure numpy (float64) with hand-written gradients so the training loss can be
checked against central finite differences. The encoder is a one-layer tanh
map over the fused (image + text) embedding sequence with bigram mixing (each
state also sees its left neighbor, so local structure like adjacent word
pairs survives into the states). The decoder is an Elman recurrence with
dot-product cross-attention plus a pointer term that adds attention mass on a
source row directly to that row's token logit, which makes copying context
tokens a structurally cheap circuit instead of a memorized one:

    S       = tanh(X W_enc + shift(X) W_prev + b_enc)   encoder states
    h_t     = tanh(E[y_{t-1}] W_xh + h_{t-1} W_hh + b_h)
    a_t     = softmax(S h_t / sqrt(d))                  attention over states
    c_t     = a_t^T S
    logits  = [h_t; c_t] W_out + b_out + w_copy * scatter(a_t -> source ids)

Token embeddings E are shared between the encoder input and the decoder input.
"""

from __future__ import annotations

import base64
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from ..core import WhitespaceTokenizer
from ..errors import DimensionMismatch, ModelFailure

PAD, BOS, EOS, UNK = 0, 1, 2, 3
_SPECIALS = ("<pad>", "<bos>", "<eos>", "<unk>")

CHECKPOINT_FORMAT_VERSION = 1


class ToyVocab:
    def __init__(self, tokens: Sequence[str]):
        if tuple(tokens[:4]) != _SPECIALS:
            raise ValueError("vocab must start with the special tokens")
        self.tokens = list(tokens)
        self.index = {t: i for i, t in enumerate(self.tokens)}

    @classmethod
    def build(cls, texts, extra_tokens: Sequence[str] = ()) -> "ToyVocab":
        seen = set()
        for text in texts:
            seen.update(text.split())
        seen.update(extra_tokens)
        seen -= set(_SPECIALS)
        return cls(list(_SPECIALS) + sorted(seen))

    def __len__(self) -> int:
        return len(self.tokens)

    def id_of(self, token: str) -> int:
        return self.index.get(token, UNK)


class ToyTokenizer:
    """Whitespace tokenizer bound to a vocabulary."""

    def __init__(self, vocab: ToyVocab):
        self.vocab = vocab
        self._spans = WhitespaceTokenizer()

    def spans(self, text: str) -> list[tuple[int, int]]:
        return self._spans.spans(text)

    def encode(self, text: str) -> list[int]:
        return [self.vocab.id_of(w) for w in text.split()]

    def decode(self, ids: Sequence[int]) -> str:
        return " ".join(self.vocab.tokens[i] for i in ids if i not in (PAD, BOS, EOS))

    def count(self, text: str) -> int:
        return len(text.split())


def fuse_image_token(image_vector, text_embeddings: np.ndarray,
                     projection: np.ndarray | None = None) -> np.ndarray:
    """Prepend the (projected) image feature as row 0 of the embedding sequence."""
    vec = np.asarray(image_vector, dtype=np.float64)
    emb = np.asarray(text_embeddings, dtype=np.float64)
    if emb.ndim != 2:
        raise DimensionMismatch(f"text embeddings must be 2-d, got shape {emb.shape}")
    d = emb.shape[1]
    if projection is not None:
        if projection.shape[0] != vec.shape[0] or projection.shape[1] != d:
            raise DimensionMismatch(
                f"projection {projection.shape} incompatible with d_img={vec.shape[0]}, d={d}"
            )
        row = vec @ projection
    elif vec.shape[0] == d:
        row = vec
    else:
        raise DimensionMismatch(f"d_img={vec.shape[0]} != d={d} and no projection configured")
    return np.concatenate([row[None, :], emb], axis=0)


def _softmax(x: np.ndarray, axis: int = -1) -> np.ndarray:
    shifted = x - x.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=axis, keepdims=True)


@dataclass
class TrainBatch:
    """Padded training arrays. ``weights`` scale the text embeddings row-wise
    (all ones in the prompting regime) and are zero at padded positions."""

    ctx_ids: np.ndarray    # (B, N) int
    ctx_mask: np.ndarray   # (B, N) bool
    weights: np.ndarray    # (B, N) float
    images: np.ndarray     # (B, d_img) float
    y_in: np.ndarray       # (B, T) int, starts with BOS
    y_tgt: np.ndarray      # (B, T) int, ends with EOS
    dec_mask: np.ndarray   # (B, T) bool


class ToyEncoderDecoder:
    def __init__(self, vocab: ToyVocab, dim: int = 48, seed: int = 0, d_img: int | None = None):
        self.vocab = vocab
        self.dim = dim
        self.d_img = d_img if d_img is not None else dim
        self.tokenizer = ToyTokenizer(vocab)
        rng = np.random.default_rng(seed)
        V, d = len(vocab), dim
        self.params: dict[str, np.ndarray] = {
            "E": rng.normal(0.0, 0.5, size=(V, d)),
            "W_enc": rng.normal(0.0, 1.0 / np.sqrt(d), size=(d, d)),
            "W_prev": rng.normal(0.0, 0.5 / np.sqrt(d), size=(d, d)),
            "b_enc": np.zeros(d),
            "W_xh": rng.normal(0.0, 1.0 / np.sqrt(d), size=(d, d)),
            "W_hh": rng.normal(0.0, 1.0 / np.sqrt(d), size=(d, d)),
            "b_h": np.zeros(d),
            "W_out": rng.normal(0.0, 1.0 / np.sqrt(2 * d), size=(2 * d, V)),
            "b_out": np.zeros(V),
            "w_copy": np.array([1.0]),
        }
        if self.d_img != dim:
            self.params["W_img"] = rng.normal(0.0, 1.0 / np.sqrt(self.d_img),
                                              size=(self.d_img, dim))

    # --- handle contract -----------------------------------------------

    @property
    def model_dim(self) -> int:
        return self.dim

    @property
    def image_projection(self) -> np.ndarray | None:
        return self.params.get("W_img")

    def embed(self, token_ids: Sequence[int]) -> np.ndarray:
        return self.params["E"][np.asarray(token_ids, dtype=int)]

    def encode(self, embeddings: np.ndarray) -> np.ndarray:
        emb = np.asarray(embeddings, dtype=np.float64)
        if emb.ndim != 2 or emb.shape[1] != self.dim:
            raise DimensionMismatch(f"expected (N, {self.dim}) embeddings, got {emb.shape}")
        shifted = np.concatenate([np.zeros((1, self.dim)), emb[:-1]], axis=0)
        return np.tanh(emb @ self.params["W_enc"] + shifted @ self.params["W_prev"]
                       + self.params["b_enc"])

    def generate(
        self,
        states: np.ndarray,
        forced_decoder_prefix: Sequence[int] = (),
        max_len: int = 128,
        source_token_ids: Sequence[int] | None = None,
    ) -> list[int]:
        """Greedy decoding over encoder states; the first ``len(prefix)``
        output tokens are forced verbatim. ``source_token_ids`` aligns with the
        state rows and feeds the pointer term (entries < 0, e.g. the image row,
        contribute nothing). Returns ids without BOS/EOS."""
        S = np.asarray(states, dtype=np.float64)
        if S.ndim != 2 or S.shape[1] != self.dim:
            raise ModelFailure(f"bad encoder states shape {S.shape}")
        src = np.full(S.shape[0], -1, dtype=int) if source_token_ids is None \
            else np.asarray(source_token_ids, dtype=int)
        if src.shape[0] != S.shape[0]:
            raise ModelFailure("source_token_ids length must match state rows")
        valid = src >= 0
        p = self.params
        d = self.dim
        h = np.zeros(d)
        prev = BOS
        out: list[int] = []
        forced = list(forced_decoder_prefix)
        for t in range(max_len):
            u = p["E"][prev]
            h = np.tanh(u @ p["W_xh"] + h @ p["W_hh"] + p["b_h"])
            scores = S @ h / np.sqrt(d)
            attn = _softmax(scores)
            ctx = attn @ S
            logits = np.concatenate([h, ctx]) @ p["W_out"] + p["b_out"]
            if valid.any():
                np.add.at(logits, src[valid], p["w_copy"][0] * attn[valid])
            if t < len(forced):
                token = int(forced[t])
            else:
                token = int(np.argmax(logits))
            if token == EOS:
                break
            out.append(token)
            prev = token
        return out

    # --- training forward/backward ---------------------------------------

    def training_loss(self, batch: TrainBatch) -> tuple[float, dict]:
        """Mean token cross-entropy under teacher forcing, plus the cache
        needed by :meth:`training_grads`."""
        p = self.params
        d = self.dim
        B, N = batch.ctx_ids.shape
        T = batch.y_in.shape[1]

        X_text = p["E"][batch.ctx_ids] * batch.weights[:, :, None]
        if "W_img" in p:
            img_rows = batch.images @ p["W_img"]
        else:
            if batch.images.shape[1] != d:
                raise DimensionMismatch("image dim != model dim and no projection configured")
            img_rows = batch.images
        X = np.concatenate([img_rows[:, None, :], X_text], axis=1)           # (B, N+1, d)
        enc_mask = np.concatenate(
            [np.ones((B, 1), dtype=bool), batch.ctx_mask], axis=1)           # (B, N+1)
        # source ids for the pointer term: image row and pads excluded
        src_ids = np.concatenate(
            [np.full((B, 1), -1, dtype=int), np.where(batch.ctx_mask, batch.ctx_ids, -1)],
            axis=1)
        src_b, src_n = np.nonzero(src_ids >= 0)
        src_v = src_ids[src_b, src_n]

        X_shift = np.concatenate([np.zeros((B, 1, d)), X[:, :-1, :]], axis=1)
        A_enc = X @ p["W_enc"] + X_shift @ p["W_prev"] + p["b_enc"]
        tanh_A = np.tanh(A_enc)
        S = tanh_A * enc_mask[:, :, None]

        H = np.zeros((B, T, d))
        attn = np.zeros((B, T, N + 1))
        ctxv = np.zeros((B, T, d))
        logits = np.zeros((B, T, len(self.vocab)))
        h_prev = np.zeros((B, d))
        neg = np.where(enc_mask, 0.0, -1e30)
        for t in range(T):
            u = p["E"][batch.y_in[:, t]]
            h = np.tanh(u @ p["W_xh"] + h_prev @ p["W_hh"] + p["b_h"])
            scores = np.einsum("bnd,bd->bn", S, h) / np.sqrt(d) + neg
            a = _softmax(scores, axis=1)
            c = np.einsum("bn,bnd->bd", a, S)
            z = np.concatenate([h, c], axis=1)
            step_logits = z @ p["W_out"] + p["b_out"]
            np.add.at(step_logits, (src_b, src_v), p["w_copy"][0] * a[src_b, src_n])
            logits[:, t] = step_logits
            H[:, t], attn[:, t], ctxv[:, t] = h, a, c
            h_prev = h

        shifted = logits - logits.max(axis=2, keepdims=True)
        logZ = np.log(np.exp(shifted).sum(axis=2)) + logits.max(axis=2)
        tgt_logits = np.take_along_axis(logits, batch.y_tgt[:, :, None], axis=2)[:, :, 0]
        token_nll = (logZ - tgt_logits) * batch.dec_mask
        count = batch.dec_mask.sum()
        loss = float(token_nll.sum() / count)

        cache = {
            "batch": batch, "X": X, "X_shift": X_shift, "tanh_A": tanh_A,
            "enc_mask": enc_mask, "S": S, "H": H, "attn": attn, "ctx": ctxv,
            "logits": logits, "count": count,
            "src": (src_b, src_n, src_v),
        }
        return loss, cache

    def training_grads(self, cache: dict) -> dict[str, np.ndarray]:
        p = self.params
        d = self.dim
        batch: TrainBatch = cache["batch"]
        X, S, H = cache["X"], cache["S"], cache["H"]
        attn, ctxv, logits = cache["attn"], cache["ctx"], cache["logits"]
        enc_mask, count = cache["enc_mask"], cache["count"]
        B, T = batch.y_in.shape
        V = len(self.vocab)

        grads = {k: np.zeros_like(v) for k, v in p.items()}

        probs = _softmax(logits, axis=2)
        dlogits = probs.copy()
        np.put_along_axis(
            dlogits, batch.y_tgt[:, :, None],
            np.take_along_axis(dlogits, batch.y_tgt[:, :, None], axis=2) - 1.0, axis=2)
        dlogits *= batch.dec_mask[:, :, None] / count

        src_b, src_n, src_v = cache["src"]
        dS = np.zeros_like(S)
        dh_next = np.zeros((B, d))
        for t in range(T - 1, -1, -1):
            dl = dlogits[:, t]                                   # (B, V)
            z = np.concatenate([H[:, t], ctxv[:, t]], axis=1)
            grads["W_out"] += z.T @ dl
            grads["b_out"] += dl.sum(axis=0)
            dz = dl @ p["W_out"].T
            dh = dz[:, :d] + dh_next
            dc = dz[:, d:]

            a = attn[:, t]                                       # (B, N+1)
            da = np.einsum("bd,bnd->bn", dc, S)
            # pointer term: logit of src token v gains w_copy * a_n
            dl_at_src = dl[src_b, src_v]
            grads["w_copy"][0] += float(np.dot(dl_at_src, a[src_b, src_n]))
            da_ptr = np.zeros_like(a)
            da_ptr[src_b, src_n] = p["w_copy"][0] * dl_at_src
            da = da + da_ptr
            dscores = a * (da - np.einsum("bn,bn->b", a, da)[:, None])
            dh = dh + np.einsum("bn,bnd->bd", dscores, S) / np.sqrt(d)
            dS += (np.einsum("bn,bd->bnd", dscores, H[:, t]) / np.sqrt(d)
                   + np.einsum("bn,bd->bnd", a, dc))

            da_pre = dh * (1.0 - H[:, t] ** 2)
            u = p["E"][batch.y_in[:, t]]
            h_prev = H[:, t - 1] if t > 0 else np.zeros((B, d))
            grads["W_xh"] += u.T @ da_pre
            grads["W_hh"] += h_prev.T @ da_pre
            grads["b_h"] += da_pre.sum(axis=0)
            np.add.at(grads["E"], batch.y_in[:, t], da_pre @ p["W_xh"].T)
            dh_next = da_pre @ p["W_hh"].T

        X_shift = cache["X_shift"]
        tanh_A = cache["tanh_A"]
        dA_enc = dS * (1.0 - tanh_A ** 2) * enc_mask[:, :, None]
        grads["W_enc"] += np.einsum("bnd,bne->de", X, dA_enc)
        grads["W_prev"] += np.einsum("bnd,bne->de", X_shift, dA_enc)
        grads["b_enc"] += dA_enc.sum(axis=(0, 1))
        dX = dA_enc @ p["W_enc"].T
        dX_from_prev = dA_enc @ p["W_prev"].T
        dX[:, :-1, :] += dX_from_prev[:, 1:, :]  # X[i] also feeds A_enc[i+1]

        dX_text = dX[:, 1:, :] * batch.weights[:, :, None]
        np.add.at(grads["E"], batch.ctx_ids, dX_text)
        if "W_img" in p:
            grads["W_img"] += batch.images.T @ dX[:, 0, :]
        return grads

    def clone_params(self) -> dict[str, np.ndarray]:
        return {k: v.copy() for k, v in self.params.items()}


class WeightPredictor:
    """Per-token relevance-weight regressor: embedding, one tanh layer, then a
    linear head squashed through a sigmoid so outputs stay strictly in (0, 1)."""

    def __init__(self, vocab: ToyVocab, dim: int = 32, seed: int = 0):
        self.vocab = vocab
        self.dim = dim
        self.tokenizer = ToyTokenizer(vocab)
        rng = np.random.default_rng(seed)
        V, d = len(vocab), dim
        self.params: dict[str, np.ndarray] = {
            "E": rng.normal(0.0, 0.5, size=(V, d)),
            "W1": rng.normal(0.0, 1.0 / np.sqrt(d), size=(d, d)),
            "b1": np.zeros(d),
            "w2": rng.normal(0.0, 1.0 / np.sqrt(d), size=(d,)),
            "b2": np.zeros(1),
        }

    def predict(self, token_ids: Sequence[int]) -> np.ndarray:
        ids = np.asarray(token_ids, dtype=int)
        p = self.params
        hidden = np.tanh(p["E"][ids] @ p["W1"] + p["b1"])
        logit = hidden @ p["w2"] + p["b2"][0]
        return 1.0 / (1.0 + np.exp(-logit))

    def bce_loss(self, ids: np.ndarray, mask: np.ndarray, targets: np.ndarray
                 ) -> tuple[float, dict]:
        """Binary cross-entropy against soft targets in [0, 1]."""
        p = self.params
        hidden_pre = p["E"][ids] @ p["W1"] + p["b1"]
        hidden = np.tanh(hidden_pre)
        logit = hidden @ p["w2"] + p["b2"][0]
        pred = 1.0 / (1.0 + np.exp(-logit))
        eps = 1e-12
        nll = -(targets * np.log(pred + eps) + (1.0 - targets) * np.log(1.0 - pred + eps))
        count = mask.sum()
        loss = float((nll * mask).sum() / count)
        cache = {"ids": ids, "mask": mask, "targets": targets,
                 "hidden": hidden, "pred": pred, "count": count}
        return loss, cache

    def bce_grads(self, cache: dict) -> dict[str, np.ndarray]:
        p = self.params
        grads = {k: np.zeros_like(v) for k, v in p.items()}
        dlogit = (cache["pred"] - cache["targets"]) * cache["mask"] / cache["count"]
        hidden = cache["hidden"]
        grads["w2"] += np.einsum("bn,bnd->d", dlogit, hidden)
        grads["b2"] += dlogit.sum(keepdims=False).reshape(1)
        dhidden = dlogit[:, :, None] * p["w2"][None, None, :]
        dpre = dhidden * (1.0 - hidden ** 2)
        emb = p["E"][cache["ids"]]
        grads["W1"] += np.einsum("bnd,bne->de", emb, dpre)
        grads["b1"] += dpre.sum(axis=(0, 1))
        np.add.at(grads["E"], cache["ids"], dpre @ p["W1"].T)
        return grads

    def clone_params(self) -> dict[str, np.ndarray]:
        return {k: v.copy() for k, v in self.params.items()}


# --- checkpoint container -------------------------------------------------
#
# Deterministic single-file format (A stable byte layout matters: the same
# training run must produce the same checkpoint bytes). Arrays are serialized
# as base64 little-endian float64 with explicit shapes inside one JSON doc.


def _encode_array(arr: np.ndarray) -> dict:
    data = np.ascontiguousarray(arr, dtype="<f8").tobytes()
    return {"shape": list(arr.shape), "data": base64.b64encode(data).decode("ascii")}


def _decode_array(obj: dict) -> np.ndarray:
    raw = base64.b64decode(obj["data"])
    return np.frombuffer(raw, dtype="<f8").reshape(obj["shape"]).copy()


def save_checkpoint(path: str | Path, payload: dict) -> None:
    """Serialize a checkpoint dict. Array leaves under any ``*_params`` key are
    encoded; everything else must be JSON-ready."""
    doc = {"format_version": CHECKPOINT_FORMAT_VERSION}
    for key, value in payload.items():
        if key.endswith("_params"):
            doc[key] = {name: _encode_array(arr) for name, arr in value.items()}
        else:
            doc[key] = value
    Path(path).write_text(json.dumps(doc, sort_keys=True, separators=(",", ":")) + "\n",
                          encoding="utf-8")


def load_checkpoint(path: str | Path) -> dict:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    version = doc.get("format_version")
    if version != CHECKPOINT_FORMAT_VERSION:
        raise ModelFailure(f"unsupported checkpoint format version: {version}")
    out = {}
    for key, value in doc.items():
        if key.endswith("_params"):
            out[key] = {name: _decode_array(obj) for name, obj in value.items()}
        else:
            out[key] = value
    return out
