"""Training loops for the caption controllers and the weight predictor.

Both loops run AdamW with a linearly decaying learning rate. The full-scale
defaults live in TrainingConfig; desk-scale runs pass small ``total_steps``
and a larger learning rate so a 20-sample corpus memorizes in seconds.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from ..core import CtrlCICSample, TrainingConfig
from ..errors import DataFormatError, DivergenceDetected
from .toy import (
    BOS,
    EOS,
    PAD,
    ToyEncoderDecoder,
    ToyVocab,
    TrainBatch,
    WeightPredictor,
    load_checkpoint,
    save_checkpoint,
)


class AdamW:
    def __init__(self, params: dict[str, np.ndarray], lr: float,
                 betas: tuple[float, float] = (0.9, 0.999),
                 eps: float = 1e-8, weight_decay: float = 0.0):
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.t = 0
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray],
             lr_scale: float = 1.0) -> None:
        self.t += 1
        lr = self.lr * lr_scale
        for k, g in grads.items():
            self.m[k] = self.b1 * self.m[k] + (1 - self.b1) * g
            self.v[k] = self.b2 * self.v[k] + (1 - self.b2) * g * g
            m_hat = self.m[k] / (1 - self.b1 ** self.t)
            v_hat = self.v[k] / (1 - self.b2 ** self.t)
            if self.weight_decay:
                params[k] *= 1.0 - lr * self.weight_decay
            params[k] -= lr * m_hat / (np.sqrt(v_hat) + self.eps)


@dataclass
class Checkpoint:
    """Model state plus everything needed to reproduce its generations."""

    kind: str  # "prompting" | "recalibration" | "weight_predictor"
    config: TrainingConfig
    model: ToyEncoderDecoder | None = None
    predictor: WeightPredictor | None = None
    provider_id: str = ""
    loss_trace: list[float] = field(default_factory=list)

    @property
    def separator(self) -> str:
        return self.config.separator

    def save(self, path: str | Path) -> None:
        payload: dict = {
            "kind": self.kind,
            "config": self.config.to_dict(),
            "provider_id": self.provider_id,
            "loss_trace": self.loss_trace,
        }
        if self.model is not None:
            payload["vocab"] = self.model.vocab.tokens
            payload["dim"] = self.model.dim
            payload["d_img"] = self.model.d_img
            payload["model_params"] = self.model.params
        if self.predictor is not None:
            payload["predictor_vocab"] = self.predictor.vocab.tokens
            payload["predictor_dim"] = self.predictor.dim
            payload["predictor_params"] = self.predictor.params
        save_checkpoint(path, payload)

    @classmethod
    def load(cls, path: str | Path) -> "Checkpoint":
        doc = load_checkpoint(path)
        config = TrainingConfig.from_dict(doc["config"])
        ckpt = cls(kind=doc["kind"], config=config,
                   provider_id=doc.get("provider_id", ""),
                   loss_trace=list(doc.get("loss_trace", [])))
        if "model_params" in doc:
            model = ToyEncoderDecoder(ToyVocab(doc["vocab"]), dim=doc["dim"],
                                      seed=0, d_img=doc["d_img"])
            model.params = doc["model_params"]
            ckpt.model = model
        if "predictor_params" in doc:
            predictor = WeightPredictor(ToyVocab(doc["predictor_vocab"]),
                                        dim=doc["predictor_dim"], seed=0)
            predictor.params = doc["predictor_params"]
            ckpt.predictor = predictor
        return ckpt


def build_vocab(samples: Sequence[CtrlCICSample], separator: str) -> ToyVocab:
    texts = []
    for s in samples:
        texts.append(s.context.assembled_text)
        texts.append(s.target_caption.text)
    return ToyVocab.build(texts, extra_tokens=[separator])


def _weights_for_model_tokens(sample: CtrlCICSample, token_spans: list[tuple[int, int]]
                              ) -> np.ndarray:
    """Re-sample per-context-token weights onto the model tokenizer's spans by
    character-span intersection (mean over intersecting context tokens)."""
    if sample.token_weights is None:
        raise DataFormatError("recalibration training requires token_weights on every sample")
    ctx_tokens = sample.context.tokens
    weights = sample.token_weights
    out = np.full(len(token_spans), 0.5)
    j = 0
    for i, (a, b) in enumerate(token_spans):
        hits = []
        while j < len(ctx_tokens) and ctx_tokens[j].char_end <= a:
            j += 1
        k = j
        while k < len(ctx_tokens) and ctx_tokens[k].char_start < b:
            hits.append(weights[k])
            k += 1
        if hits:
            out[i] = float(np.mean(hits))
    return out


@dataclass
class _Encoded:
    ctx_ids: list[int]
    weights: np.ndarray
    image: np.ndarray
    target_ids: list[int]


def _encode_samples(samples: Sequence[CtrlCICSample], model: ToyEncoderDecoder,
                    kind: str, config: TrainingConfig) -> list[_Encoded]:
    # imported here: controllers depends on modeling for image fusion
    from ..controllers import assemble_prompt_prefix, build_pctrl_training_target

    tok = model.tokenizer
    budget_in = config.input_token_budget
    budget_out = config.output_token_budget
    out = []
    for s in samples:
        spans = tok.spans(s.context.assembled_text)[:budget_in]
        ctx_ids = tok.encode(s.context.assembled_text)[:budget_in]
        if kind == "recalibration":
            weights = _weights_for_model_tokens(s, spans)
            target_text = s.target_caption.text
        else:
            weights = np.ones(len(ctx_ids))
            prefix = assemble_prompt_prefix(s.highlights, max_words=config.max_prompt_words,
                                            separator=config.separator)
            target_text = build_pctrl_training_target(prefix, s.target_caption.text,
                                                      tokenizer=tok, budget=budget_out)
        target_ids = tok.encode(target_text)[: budget_out - 1]
        out.append(_Encoded(ctx_ids=ctx_ids, weights=weights,
                            image=np.asarray(s.image.vector, dtype=np.float64),
                            target_ids=target_ids))
    return out


def _collate(encoded: list[_Encoded], d_img: int) -> TrainBatch:
    B = len(encoded)
    N = max(len(e.ctx_ids) for e in encoded)
    T = max(len(e.target_ids) for e in encoded) + 1  # room for EOS
    ctx_ids = np.full((B, N), PAD, dtype=int)
    ctx_mask = np.zeros((B, N), dtype=bool)
    weights = np.zeros((B, N))
    images = np.zeros((B, d_img))
    y_in = np.full((B, T), PAD, dtype=int)
    y_tgt = np.full((B, T), PAD, dtype=int)
    dec_mask = np.zeros((B, T), dtype=bool)
    for i, e in enumerate(encoded):
        n = len(e.ctx_ids)
        ctx_ids[i, :n] = e.ctx_ids
        ctx_mask[i, :n] = True
        weights[i, :n] = e.weights
        images[i] = e.image
        seq = [BOS] + e.target_ids + [EOS]
        t = len(seq) - 1
        y_in[i, :t] = seq[:-1]
        y_tgt[i, :t] = seq[1:]
        dec_mask[i, :t] = True
    return TrainBatch(ctx_ids=ctx_ids, ctx_mask=ctx_mask, weights=weights,
                      images=images, y_in=y_in, y_tgt=y_tgt, dec_mask=dec_mask)


def train_controller(dataset: Sequence[CtrlCICSample], kind: str,
                     config: TrainingConfig, provider_id: str = "") -> Checkpoint:
    """Fit the toy encoder-decoder under the prompting or recalibration regime."""
    if kind not in ("prompting", "recalibration"):
        raise DataFormatError(f"unknown controller kind: {kind}")
    samples = list(dataset)
    if not samples:
        raise DataFormatError("training dataset is empty")

    vocab = build_vocab(samples, config.separator)
    d_img = samples[0].image.dim
    model = ToyEncoderDecoder(vocab, dim=config.model_dim, seed=config.rng_seed, d_img=d_img)
    encoded = _encode_samples(samples, model, kind, config)

    rng = np.random.default_rng(config.rng_seed)
    opt = AdamW(model.params, lr=config.learning_rate, betas=config.adam_betas,
                weight_decay=config.weight_decay)
    trace: list[float] = []
    order = np.array([], dtype=int)
    for step in range(config.total_steps):
        while len(order) < config.batch_size:
            order = np.concatenate([order, rng.permutation(len(samples))])
        idx, order = order[: config.batch_size], order[config.batch_size:]
        batch = _collate([encoded[i] for i in idx], d_img)
        loss, cache = model.training_loss(batch)
        if not np.isfinite(loss):
            raise DivergenceDetected(f"loss is {loss} at step {step}")
        grads = model.training_grads(cache)
        opt.step(model.params, grads, lr_scale=1.0 - step / config.total_steps)
        trace.append(loss)

    return Checkpoint(kind=kind, config=config, model=model,
                      provider_id=provider_id, loss_trace=trace)


def train_weight_predictor(dataset: Sequence[CtrlCICSample], config: TrainingConfig,
                           provider_id: str = "", dim: int | None = None) -> Checkpoint:
    """Fit the per-token weight predictor with BCE against soft weight targets."""
    samples = list(dataset)
    if not samples:
        raise DataFormatError("training dataset is empty")
    vocab = build_vocab(samples, config.separator)
    predictor = WeightPredictor(vocab, dim=dim or config.model_dim, seed=config.rng_seed)
    tok = predictor.tokenizer
    budget = config.input_token_budget

    encoded = []
    for s in samples:
        spans = tok.spans(s.context.assembled_text)[:budget]
        ids = tok.encode(s.context.assembled_text)[:budget]
        targets = _weights_for_model_tokens(s, spans)
        encoded.append((ids, targets))

    rng = np.random.default_rng(config.rng_seed)
    opt = AdamW(predictor.params, lr=config.learning_rate, betas=config.adam_betas,
                weight_decay=config.weight_decay)
    trace: list[float] = []
    order = np.array([], dtype=int)
    for step in range(config.total_steps):
        while len(order) < config.batch_size:
            order = np.concatenate([order, rng.permutation(len(samples))])
        idx, order = order[: config.batch_size], order[config.batch_size:]
        chosen = [encoded[i] for i in idx]
        N = max(len(ids) for ids, _ in chosen)
        ids_arr = np.full((len(chosen), N), PAD, dtype=int)
        mask = np.zeros((len(chosen), N))
        tgt = np.zeros((len(chosen), N))
        for i, (ids, targets) in enumerate(chosen):
            ids_arr[i, : len(ids)] = ids
            mask[i, : len(ids)] = 1.0
            tgt[i, : len(ids)] = targets
        loss, cache = predictor.bce_loss(ids_arr, mask, tgt)
        if not np.isfinite(loss):
            raise DivergenceDetected(f"loss is {loss} at step {step}")
        grads = predictor.bce_grads(cache)
        opt.step(predictor.params, grads, lr_scale=1.0 - step / config.total_steps)
        trace.append(loss)

    return Checkpoint(kind="weight_predictor", config=config, predictor=predictor,
                      provider_id=provider_id, loss_trace=trace)
