"""Character-level encoder-decoder transformer shared by all three stages."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .charlex import EOS, PAD, SOS


class SequenceTooLongError(ValueError):
    pass


@dataclass
class TransformerConfig:
    num_layers: int = 5
    num_heads: int = 8
    hidden_dim: int = 128
    pf_dim: int = 256
    dropout: float = 0.10
    max_seq_len: int = 96
    vocab_size: int = 0
    learning_rate: float = 5e-4
    grad_clip: float = 1.0
    epochs: int = 100

    def __post_init__(self):
        if self.hidden_dim % self.num_heads:
            raise ValueError(f"hidden_dim {self.hidden_dim} is not divisible by num_heads {self.num_heads}")

    @property
    def head_dim(self):
        return self.hidden_dim // self.num_heads

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        known = {f.name: f.type for f in fields(cls)}
        kwargs = {}
        for k, v in d.items():
            if k not in known:
                raise KeyError(f"unknown transformer config key {k!r}")
            kwargs[k] = float(v) if k in ("dropout", "learning_rate", "grad_clip") else int(v)
        return cls(**kwargs)


def reduced_config(**overrides):
    """The small desk-scale configuration: 2 layers, hidden 64, 4 heads."""
    base = dict(num_layers=2, num_heads=4, hidden_dim=64, pf_dim=128)
    base.update(overrides)
    return TransformerConfig(**base)


def multi_head_attention(q_in, kv_in, weights, num_heads, mask=None, train=False, rng=None,
                         dropout=0.0):
    """Scaled dot-product attention over ``num_heads`` heads.

    ``q_in`` is (B, Tq, H) and ``kv_in`` is (B, Tk, H); ``weights`` holds
    wq/bq/wk/bk/wv/bv/wo/bo.  ``mask`` broadcasts to (B, heads, Tq, Tk) with
    True meaning "may attend".  Returns the projected output and the
    attention weights.
    """
    if q_in.shape[-1] != kv_in.shape[-1]:
        raise ad.ShapeError(f"attention: query {q_in.shape} and key/value {kv_in.shape} widths differ")
    B, Tq, H = q_in.shape
    Tk = kv_in.shape[1]
    if H % num_heads:
        raise ad.ShapeError(f"attention: width {H} not divisible by {num_heads} heads")
    d = H // num_heads
    q = ad.permute(ad.reshape(ad.linear(q_in, weights["wq"], weights["bq"]), (B, Tq, num_heads, d)), (0, 2, 1, 3))
    k = ad.permute(ad.reshape(ad.linear(kv_in, weights["wk"], weights["bk"]), (B, Tk, num_heads, d)), (0, 2, 3, 1))
    v = ad.permute(ad.reshape(ad.linear(kv_in, weights["wv"], weights["bv"]), (B, Tk, num_heads, d)), (0, 2, 1, 3))
    scores = ad.scale(ad.matmul(q, k), 1.0 / math.sqrt(d))
    attn = ad.softmax(scores, mask)
    ctx = ad.matmul(ad.dropout(attn, dropout, rng, train), v)
    ctx = ad.reshape(ad.permute(ctx, (0, 2, 1, 3)), (B, Tq, H))
    return ad.linear(ctx, weights["wo"], weights["bo"]), attn


class Seq2SeqModel:
    """Post-norm encoder-decoder with learned position embeddings."""

    def __init__(self, config, seed=0, dtype=np.float32):
        if config.vocab_size <= 0:
            raise ValueError("config.vocab_size must be set")
        self.config = config
        self.dtype = np.dtype(dtype)
        self.params = {}
        # stage metadata, filled in by the pipeline and stored in checkpoints
        self.vocab = None
        self.role = None
        self.variant = None
        rng = np.random.default_rng(seed)
        c = config
        H, P, V, L = c.hidden_dim, c.pf_dim, c.vocab_size, c.max_seq_len

        def xavier(name, shape):
            bound = math.sqrt(6.0 / (shape[0] + shape[1]))
            self._add(name, rng.uniform(-bound, bound, size=shape))

        def zeros(name, n):
            self._add(name, np.zeros(n))

        def ones(name, n):
            self._add(name, np.ones(n))

        def attn(prefix):
            for w in ("q", "k", "v", "o"):
                xavier(f"{prefix}.w{w}", (H, H))
                zeros(f"{prefix}.b{w}", H)

        def block(prefix, sublayers):
            for s in sublayers:
                attn(f"{prefix}.{s}")
            xavier(f"{prefix}.ff.w1", (H, P))
            zeros(f"{prefix}.ff.b1", P)
            xavier(f"{prefix}.ff.w2", (P, H))
            zeros(f"{prefix}.ff.b2", H)
            for n in range(len(sublayers) + 1):
                ones(f"{prefix}.ln{n + 1}.g", H)
                zeros(f"{prefix}.ln{n + 1}.b", H)

        for side in ("enc", "dec"):
            xavier(f"{side}.tok_emb", (V, H))
            xavier(f"{side}.pos_emb", (L, H))
        for i in range(c.num_layers):
            block(f"enc.{i}", ("self",))
        for i in range(c.num_layers):
            block(f"dec.{i}", ("self", "cross"))
        xavier("out.w", (H, V))
        zeros("out.b", V)

    def _add(self, name, arr):
        self.params[name] = Tensor(np.asarray(arr, dtype=self.dtype), requires_grad=True, name=name)

    def parameters(self):
        return list(self.params.values())

    def num_parameters(self):
        return sum(p.data.size for p in self.params.values())

    def _group(self, prefix):
        cache = self.__dict__.setdefault("_groups", {})
        if prefix not in cache:
            n = len(prefix) + 1
            cache[prefix] = {k[n:]: v for k, v in self.params.items() if k.startswith(prefix + ".")}
        return cache[prefix]

    # --- forward -----------------------------------------------------------

    def embed_with_position(self, ids, side="enc", train=False, rng=None):
        ids = np.asarray(ids, dtype=np.int64)
        if ids.ndim == 1:
            ids = ids[None, :]
        T = ids.shape[1]
        if T > self.config.max_seq_len:
            raise SequenceTooLongError(f"sequence of {T} tokens exceeds max_seq_len {self.config.max_seq_len}")
        tok = ad.embedding_lookup(self.params[f"{side}.tok_emb"], ids)
        pos = ad.embedding_lookup(self.params[f"{side}.pos_emb"], np.arange(T))
        return ad.dropout(ad.add(tok, pos), self.config.dropout, rng, train)

    def _sublayer(self, x, y, ln, train, rng):
        y = ad.dropout(y, self.config.dropout, rng, train)
        return ad.layer_norm(ad.add(x, y), ln["g"], ln["b"])

    def _ff(self, x, w, train, rng):
        h = ad.relu(ad.linear(x, w["w1"], w["b1"]))
        h = ad.dropout(h, self.config.dropout, rng, train)
        return ad.linear(h, w["w2"], w["b2"])

    def encode(self, src, train=False, rng=None, return_attention=False):
        """Return ``(Z, src_mask)``; ``src_mask`` is (B, 1, 1, S) with True on real tokens."""
        src = np.atleast_2d(np.asarray(src, dtype=np.int64))
        src_mask = (src != PAD)[:, None, None, :]
        x = self.embed_with_position(src, "enc", train, rng)
        attns = []
        c = self.config
        for i in range(c.num_layers):
            a, w = multi_head_attention(x, x, self._group(f"enc.{i}.self"), c.num_heads, src_mask,
                                        train, rng, c.dropout)
            attns.append(w)
            x = self._sublayer(x, a, self._group(f"enc.{i}.ln1"), train, rng)
            x = self._sublayer(x, self._ff(x, self._group(f"enc.{i}.ff"), train, rng),
                               self._group(f"enc.{i}.ln2"), train, rng)
        if return_attention:
            return x, src_mask, attns
        return x, src_mask

    def decode(self, tgt, Z, src_mask, train=False, rng=None, return_attention=False):
        """Logits (B, T, vocab) for teacher-forced target prefix ``tgt``."""
        tgt = np.atleast_2d(np.asarray(tgt, dtype=np.int64))
        T = tgt.shape[1]
        causal = np.tril(np.ones((T, T), dtype=bool))
        tgt_mask = causal[None, None, :, :] & (tgt != PAD)[:, None, None, :]
        x = self.embed_with_position(tgt, "dec", train, rng)
        attns = []
        c = self.config
        for i in range(c.num_layers):
            a, w1 = multi_head_attention(x, x, self._group(f"dec.{i}.self"), c.num_heads, tgt_mask,
                                         train, rng, c.dropout)
            x = self._sublayer(x, a, self._group(f"dec.{i}.ln1"), train, rng)
            a, w2 = multi_head_attention(x, Z, self._group(f"dec.{i}.cross"), c.num_heads, src_mask,
                                         train, rng, c.dropout)
            x = self._sublayer(x, a, self._group(f"dec.{i}.ln2"), train, rng)
            x = self._sublayer(x, self._ff(x, self._group(f"dec.{i}.ff"), train, rng),
                               self._group(f"dec.{i}.ln3"), train, rng)
            attns.extend([w1, w2])
        logits = ad.linear(x, self.params["out.w"], self.params["out.b"])
        if return_attention:
            return logits, attns
        return logits

    def forward(self, src, tgt_in, train=False, rng=None):
        Z, src_mask = self.encode(src, train, rng)
        return self.decode(tgt_in, Z, src_mask, train, rng)

    def loss(self, src, tgt, train=True, rng=None):
        """Teacher-forced cross-entropy; ``tgt`` holds SOS ... EOS with PAD fill."""
        tgt = np.asarray(tgt, dtype=np.int64)
        logits = self.forward(src, tgt[:, :-1], train, rng)
        return ad.cross_entropy(logits, tgt[:, 1:], ignore_id=PAD)


# --- decoding --------------------------------------------------------------

def _next_logp(model, Z, src_mask, prefix):
    logits = model.decode(prefix, Z, src_mask)
    return ad.log_softmax_np(logits.data[:, -1, :].astype(np.float64))


def _cap(model, max_len):
    return max(0, min(max_len, model.config.max_seq_len - 1))


def greedy_decode(model, src_ids, max_len):
    """Argmax decoding from SOS until EOS or ``max_len`` generated tokens (EOS excluded)."""
    max_len = _cap(model, max_len)
    if max_len == 0:
        return []
    with ad.no_grad():
        Z, src_mask = model.encode(np.asarray(src_ids, dtype=np.int64)[None, :])
        out = [SOS]
        for _ in range(max_len):
            tok = int(np.argmax(_next_logp(model, Z, src_mask, np.asarray([out]))[0]))
            if tok == EOS:
                break
            out.append(tok)
    return out[1:]


def greedy_decode_batch(model, batch, max_len):
    """Greedy decoding of many sources at once (PAD-padded)."""
    if not batch:
        return []
    max_len = _cap(model, max_len)
    if max_len == 0:
        return [[] for _ in batch]
    width = max(len(s) for s in batch)
    src = np.full((len(batch), width), PAD, dtype=np.int64)
    for i, s in enumerate(batch):
        src[i, : len(s)] = s
    with ad.no_grad():
        Z, src_mask = model.encode(src)
        out = np.full((len(batch), 1), SOS, dtype=np.int64)
        done = np.zeros(len(batch), dtype=bool)
        for _ in range(max_len):
            tok = np.argmax(_next_logp(model, Z, src_mask, out), axis=-1)
            tok = np.where(done, PAD, tok)
            done |= tok == EOS
            out = np.concatenate([out, tok[:, None]], axis=1)
            if done.all():
                break
    results = []
    for row in out[:, 1:]:
        seq = []
        for t in row:
            if t == EOS or t == PAD:
                break
            seq.append(int(t))
        results.append(seq)
    return results


def beam_decode(model, src_ids, beam_width, max_len):
    """Length-normalised beam search; returns up to ``beam_width`` ``(ids, score)`` best first.

    A hypothesis' score is its total log-probability divided by the number
    of generated tokens (EOS included).  Expansion keeps the
    ``beam_width`` best raw cumulative log-probabilities.
    """
    if beam_width < 1:
        raise ValueError("beam_width must be >= 1")
    max_len = _cap(model, max_len)
    if max_len == 0:
        return [([], 0.0)]
    finished = []
    with ad.no_grad():
        Z1, mask1 = model.encode(np.asarray(src_ids, dtype=np.int64)[None, :])
        alive = [([SOS], 0.0)]
        for step in range(max_len):
            n = len(alive)
            Z = Z1 if n == 1 else Tensor(np.repeat(Z1.data, n, axis=0))
            mask = mask1 if n == 1 else np.repeat(mask1, n, axis=0)
            logp = _next_logp(model, Z, mask, np.asarray([h for h, _ in alive]))
            cands = []
            alive_prev = alive
            for b, (hyp, score) in enumerate(alive):
                for tok in np.argsort(-logp[b], kind="stable")[:beam_width]:
                    cands.append((score + float(logp[b, tok]), b, int(tok)))
            cands.sort(key=lambda c: -c[0])
            alive = []
            for total, b, tok in cands[:beam_width]:
                hyp = alive_prev[b][0]
                if tok == EOS:
                    finished.append((hyp[1:], total / len(hyp)))
                else:
                    alive.append((hyp + [tok], total))
            if len(finished) >= beam_width:
                alive = []
            if not alive:
                break
        for hyp, total in alive:
            finished.append((hyp[1:], total / max(1, len(hyp) - 1)))
    finished.sort(key=lambda f: -f[1])
    return finished[:beam_width]
