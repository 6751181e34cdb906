"""Attentional sequence decoder, teacher-forced training, decoding and
sentence scoring.

The decoder is a single-layer LSTM with additive attention over the encoder
rows and input feeding: each step consumes the previous target embedding
concatenated with the previous attention context. Batching is gradient
accumulation over examples, which keeps runs bit-reproducible for a fixed
seed.
"""
from __future__ import annotations

import json
import time
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .encoders import EncoderConfig, LstmCell, StackEncoder
from .tensor import Tensor
from .transforms import ExampleRepr, deanonymize
from .vocab import BOS, EOS, UNK, Vocab


class NumericError(RuntimeError):
    """Divergent (non-finite) loss during training."""

    def __init__(self, message, batch_id=None):
        super().__init__(message)
        self.batch_id = batch_id


@dataclass(frozen=True)
class TrainSettings:
    lr: float = 1.0
    lr_decay: float = 0.8
    batch_size: int = 100
    max_epochs: int = 30
    patience: int = 5
    clip_norm: float = 5.0
    unk_threshold: int = 2
    eval_every: int = 1


@dataclass
class TrainExample:
    id: str
    repr: ExampleRepr
    target: tuple  # tokenized, lowercased, anonymized reference
    reference: tuple  # raw tokenized reference (for BLEU after deanonymization)
    anon_map: tuple = field(default_factory=tuple)


class Seq2SeqModel:
    def __init__(self, config: EncoderConfig, src_vocab: Vocab, tgt_vocab: Vocab, seed: int = 0):
        self.config = config
        self.src_vocab = src_vocab
        self.tgt_vocab = tgt_vocab
        self.seed = seed
        rng = np.random.default_rng(seed)
        d, h = config.embedding_dim, config.hidden_dim
        self.encoder = StackEncoder(config, src_vocab, rng)
        self.tgt_embedding = T.uniform_param((len(tgt_vocab), d), rng)
        self.cell = LstmCell(d + h, h, rng, "decoder")
        self.W_a = T.uniform_param((h, h), rng)
        self.U_a = T.uniform_param((h, h), rng)
        self.b_a = T.zeros_param((1, h))
        self.v_a = T.uniform_param((h, 1), rng)
        self.W_init = T.uniform_param((h, h), rng)
        self.b_init = T.zeros_param((1, h))
        self.W_o = T.uniform_param((2 * h, h), rng)
        self.b_o = T.zeros_param((1, h))
        self.W_v = T.uniform_param((h, len(tgt_vocab)), rng)
        self.b_v = T.zeros_param((1, len(tgt_vocab)))

    def params(self) -> dict:
        p = dict(self.encoder.params())
        p["tgt_embedding"] = self.tgt_embedding
        p.update(self.cell.params())
        for name in ("W_a", "U_a", "b_a", "v_a", "W_init", "b_init", "W_o", "b_o", "W_v", "b_v"):
            p[name] = getattr(self, name)
        return p

    # -- decoding machinery -------------------------------------------------

    def _init_state(self, enc: Tensor):
        n = enc.shape[0]
        mean = T.scale(T.sum_rows(enc), 1.0 / n)
        s = T.tanh(T.add(T.matmul(mean, self.W_init), self.b_init))
        c = Tensor(np.zeros((1, self.config.hidden_dim)))
        ctx = Tensor(np.zeros((1, self.config.hidden_dim)))
        return s, c, ctx

    def _step(self, token_id: int, ctx, s, c, enc, enc_proj):
        emb = T.embedding_lookup(self.tgt_embedding, [token_id])
        x = T.concat([emb, ctx], axis=1)
        s, c = self.cell.step(x, s, c)
        scores = T.matmul(T.tanh(T.add(T.add(enc_proj, T.matmul(s, self.U_a)), self.b_a)), self.v_a)
        alpha = T.softmax(T.transpose(scores))  # (1, N)
        ctx = T.matmul(alpha, enc)
        o = T.tanh(T.add(T.matmul(T.concat([s, ctx], axis=1), self.W_o), self.b_o))
        logits = T.add(T.matmul(o, self.W_v), self.b_v)
        return logits, ctx, s, c

    def _encode(self, ex: TrainExample, training: bool, rng=None):
        enc = self.encoder.encode(ex.repr, training=training, rng=rng)
        enc_proj = T.matmul(enc, self.W_a)
        return enc, enc_proj

    def sequence_loss(self, ex: TrainExample, training: bool = False, rng=None) -> Tensor:
        """Mean token negative log-likelihood of the target, teacher-forced."""
        enc, enc_proj = self._encode(ex, training, rng)
        s, c, ctx = self._init_state(enc)
        targets = self.tgt_vocab.indices(ex.target) + [self.tgt_vocab.index(EOS)]
        prev = self.tgt_vocab.index(BOS)
        losses = []
        for tgt in targets:
            logits, ctx, s, c = self._step(prev, ctx, s, c, enc, enc_proj)
            log_probs = T.log_softmax(logits)
            losses.append(T.scale(T.pick(log_probs, 0, tgt), -1.0))
            prev = tgt
        total = losses[0]
        for piece in losses[1:]:
            total = T.add(total, piece)
        return T.scale(total, 1.0 / len(targets))

    def score_sentence(self, ex: TrainExample, tokens) -> float:
        """Total log-probability of the token sequence (EOS included)."""
        enc, enc_proj = self._encode(ex, training=False)
        s, c, ctx = self._init_state(enc)
        targets = self.tgt_vocab.indices(tokens) + [self.tgt_vocab.index(EOS)]
        prev = self.tgt_vocab.index(BOS)
        total = 0.0
        for tgt in targets:
            logits, ctx, s, c = self._step(prev, ctx, s, c, enc, enc_proj)
            log_probs = T.log_softmax(logits)
            total += float(log_probs.data[0, tgt])
            prev = tgt
        return total

    def greedy_decode(self, ex: TrainExample, max_len: int = None):
        if max_len is None:
            max_len = 2 * len(ex.repr.sequence) + 10
        enc, enc_proj = self._encode(ex, training=False)
        s, c, ctx = self._init_state(enc)
        eos = self.tgt_vocab.index(EOS)
        prev = self.tgt_vocab.index(BOS)
        out = []
        score = 0.0
        truncated = True
        for _ in range(max_len):
            logits, ctx, s, c = self._step(prev, ctx, s, c, enc, enc_proj)
            log_probs = T.log_softmax(logits).data[0]
            prev = int(np.argmax(log_probs))
            score += float(log_probs[prev])
            if prev == eos:
                truncated = False
                break
            out.append(self.tgt_vocab.token(prev))
        return out, score, truncated

    def beam_decode(self, ex: TrainExample, beam: int = 5, max_len: int = None):
        """Length-normalized beam search; never returns a hypothesis worse
        than the greedy one under the normalized score."""
        if beam <= 1:
            return self.greedy_decode(ex)
        if max_len is None:
            max_len = 2 * len(ex.repr.sequence) + 10
        enc, enc_proj = self._encode(ex, training=False)
        eos = self.tgt_vocab.index(EOS)
        s0, c0, ctx0 = self._init_state(enc)
        # hypothesis: (tokens, logp, ctx, s, c, prev)
        hyps = [([], 0.0, ctx0, s0, c0, self.tgt_vocab.index(BOS))]
        done = []
        for _ in range(max_len):
            candidates = []
            for tokens, logp, ctx, s, c, prev in hyps:
                logits, ctx2, s2, c2 = self._step(prev, ctx, s, c, enc, enc_proj)
                log_probs = T.log_softmax(logits).data[0]
                top = np.argsort(log_probs)[::-1][:beam]
                for idx in top:
                    idx = int(idx)
                    entry = (tokens + [idx], logp + float(log_probs[idx]), ctx2, s2, c2, idx)
                    candidates.append(entry)
            candidates.sort(key=lambda h: h[1], reverse=True)
            hyps = []
            for entry in candidates:
                if entry[5] == eos:
                    done.append((entry[0][:-1], entry[1], len(entry[0])))
                else:
                    hyps.append(entry)
                if len(hyps) >= beam:
                    break
            if not hyps:
                break
        for tokens, logp, *_ in hyps:  # truncated leftovers
            done.append((tokens, logp, len(tokens) + 1))
        best = max(done, key=lambda h: h[1] / max(h[2], 1))
        greedy_tokens, greedy_score, truncated = self.greedy_decode(ex, max_len=max_len)
        greedy_norm = greedy_score / max(len(greedy_tokens) + 1, 1)
        if greedy_norm >= best[1] / max(best[2], 1):
            return greedy_tokens, greedy_score, truncated
        ids = best[0]
        return [self.tgt_vocab.token(i) for i in ids], best[1], False


def generate(model: Seq2SeqModel, ex: TrainExample, beam: int = 1, max_len: int = None):
    """Decode and de-anonymize one example; returns (tokens, truncated)."""
    if beam <= 1:
        tokens, _, truncated = model.greedy_decode(ex, max_len=max_len)
    else:
        tokens, _, truncated = model.beam_decode(ex, beam=beam, max_len=max_len)
    return deanonymize(tokens, ex.anon_map), truncated


# --------------------------------------------------------------------------
# Vocabulary and example assembly


def build_vocabs(examples, unk_threshold: int = 2):
    src = Vocab.build(
        (ex.repr.sequence.tokens for ex in examples), min_freq=1, specials=(UNK,)
    )
    tgt = Vocab.build(
        (ex.target for ex in examples), min_freq=unk_threshold, specials=(UNK, BOS, EOS)
    )
    return src, tgt


# --------------------------------------------------------------------------
# Training


@dataclass
class Checkpoint:
    config: EncoderConfig
    src_vocab: Vocab
    tgt_vocab: Vocab
    arrays: dict  # name -> ndarray
    meta: dict

    def save(self, path):
        manifest = {
            "config": self.config.to_dict(),
            "src_vocab": list(self.src_vocab.itos),
            "tgt_vocab": list(self.tgt_vocab.itos),
            "meta": self.meta,
        }
        T.save_arrays(path, manifest, self.arrays)

    @classmethod
    def load(cls, path) -> "Checkpoint":
        manifest, arrays = T.load_arrays(path)
        return cls(
            config=EncoderConfig.from_dict(manifest["config"]),
            src_vocab=Vocab(itos=tuple(manifest["src_vocab"])),
            tgt_vocab=Vocab(itos=tuple(manifest["tgt_vocab"])),
            arrays=arrays,
            meta=manifest["meta"],
        )

    def build_model(self) -> Seq2SeqModel:
        model = Seq2SeqModel(
            self.config, self.src_vocab, self.tgt_vocab, seed=self.meta.get("seed", 0)
        )
        params = model.params()
        if set(params) != set(self.arrays):
            raise ValueError("checkpoint parameter names do not match the configuration")
        for name, p in params.items():
            stored = self.arrays[name]
            if tuple(p.data.shape) != tuple(stored.shape):
                raise ValueError(f"shape mismatch for parameter {name!r}")
            p.data = stored.copy()
        return model


def _snapshot(params: dict) -> dict:
    return {name: p.data.copy() for name, p in params.items()}


def train(
    train_examples,
    dev_examples,
    config: EncoderConfig,
    seed: int = 0,
    settings: TrainSettings = TrainSettings(),
    log_sink=None,
):
    """Teacher-forced SGD training with dev-BLEU-driven lr decay.

    Returns (checkpoint, log) where log is a list of per-epoch dicts.
    Timing is reported through log_sink only, keeping the structured log
    reproducible for a fixed seed.
    """
    from .evaluation import corpus_bleu

    if not train_examples:
        raise ValueError("empty training corpus")
    if not dev_examples:
        dev_examples = train_examples
    src_vocab, tgt_vocab = build_vocabs(train_examples, settings.unk_threshold)
    model = Seq2SeqModel(config, src_vocab, tgt_vocab, seed=seed)
    params = model.params()
    schedule = T.LrSchedule(settings.lr, settings.lr_decay)
    shuffle_rng = np.random.default_rng(seed + 1)
    dropout_rng = np.random.default_rng(seed + 2)

    best_bleu = -1.0
    best_arrays = _snapshot(params)
    best_epoch = 0
    stale = 0
    log = []

    def dev_bleu() -> float:
        hyps, refs = [], []
        for ex in dev_examples:
            tokens, _ = generate(model, ex, beam=1)
            hyps.append(tokens)
            refs.append(list(ex.reference))
        return corpus_bleu(hyps, refs)

    order = list(range(len(train_examples)))
    for epoch in range(1, settings.max_epochs + 1):
        started = time.monotonic()
        shuffle_rng.shuffle(order)
        epoch_losses = []
        for start in range(0, len(order), settings.batch_size):
            batch = order[start : start + settings.batch_size]
            batch_loss = 0.0
            for idx in batch:  # gradient accumulation; grads sum across the batch
                ex = train_examples[idx]
                with T.Tape() as tape:
                    loss = model.sequence_loss(ex, training=True, rng=dropout_rng)
                    batch_loss += loss.item()
                    T.backward(tape, loss)
            batch_loss /= len(batch)
            if not np.isfinite(batch_loss):
                raise NumericError(
                    f"non-finite loss in epoch {epoch}, batch starting at {start}",
                    batch_id=start // settings.batch_size,
                )
            for p in params.values():
                if p.grad is not None:
                    p.grad /= len(batch)
            T.clip_grad_norm(params.values(), settings.clip_norm)
            T.sgd_step(params.values(), schedule.lr)
            epoch_losses.append(batch_loss)

        train_loss = float(np.mean(epoch_losses))
        fresh = epoch % settings.eval_every == 0
        if fresh:
            bleu = dev_bleu()
        else:
            bleu = log[-1]["dev_bleu"] if log else 0.0
        entry = {
            "epoch": epoch,
            "train_loss": round(train_loss, 10),
            "dev_bleu": round(bleu, 6),
            "lr": round(schedule.lr, 12),
        }
        log.append(entry)
        if log_sink is not None:
            elapsed = time.monotonic() - started
            log_sink(f"epoch {epoch}: loss={train_loss:.4f} bleu={bleu:.2f} "
                     f"lr={schedule.lr:.4f} ({elapsed:.1f}s)")
        if not fresh:
            continue
        # schedule, patience and early stopping react only to fresh dev scores
        if bleu > best_bleu:
            best_bleu = bleu
            best_arrays = _snapshot(params)
            best_epoch = epoch
            stale = 0
        else:
            stale += 1
        schedule.update(bleu)
        if stale >= settings.patience:
            break
        if best_bleu >= 99.999:
            break

    checkpoint = Checkpoint(
        config=config,
        src_vocab=src_vocab,
        tgt_vocab=tgt_vocab,
        arrays=best_arrays,
        meta={
            "seed": seed,
            "epoch": best_epoch,
            "dev_bleu": best_bleu,
            "epochs_run": len(log),
        },
    )
    return checkpoint, log


def write_log(path, log) -> None:
    with open(path, "w", encoding="utf-8") as handle:
        for entry in log:
            handle.write(json.dumps(entry, sort_keys=True) + "\n")
