"""Shared agent network: encoders, entity attention, multi-hop agent
communication, and policy/value heads.

All parameter shapes are independent of the number of agents and
landmarks, so one parameter set serves any team size.

Shapes used below: B batch (environments x timesteps), M agents,
L landmarks, H hidden width, D attention width.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import gradtape as gt
from .gradtape import Parameter, ParamSet, Tensor

NUM_ACTIONS = 5
OBS_DIM = 4
ENTITY_DIM = 2

VARIANTS = ("mha", "exp", "uniform")


@dataclass(frozen=True)
class CommVariant:
    kind: str = "mha"
    heads: int = 4

    def __post_init__(self):
        if self.kind not in VARIANTS:
            raise ValueError(f"unknown communication variant {self.kind!r}; expected one of {VARIANTS}")
        if self.heads < 1:
            raise ValueError("heads must be >= 1")


@dataclass(frozen=True)
class NetConfig:
    hidden: int = 128
    key_dim: int = 128
    hops: int = 3
    variant: CommVariant = field(default_factory=CommVariant)
    tie_hops: bool = False

    def __post_init__(self):
        if self.variant.kind == "mha" and self.key_dim % self.variant.heads:
            raise ValueError(f"heads ({self.variant.heads}) must divide key_dim ({self.key_dim})")
        if self.hops < 0:
            raise ValueError("hops must be >= 0")


def param_shapes(cfg: NetConfig) -> dict[str, tuple[int, ...]]:
    """Name -> shape of every parameter; part of the checkpoint contract."""
    H, D = cfg.hidden, cfg.key_dim
    shapes: dict[str, tuple[int, ...]] = {
        "agent_enc.w": (OBS_DIM, H),
        "agent_enc.b": (H,),
        "entity_enc.w": (ENTITY_DIM, H),
        "entity_enc.b": (H,),
        "entity_attn.w_q": (H, D),
        "entity_attn.w_k": (H, D),
        "entity_attn.w_v": (H, D),
        "joint.w": (H + D, H),
        "joint.b": (H,),
    }
    for c in range(1 if cfg.tie_hops else cfg.hops):
        p = f"comm.hop{c}."
        if cfg.variant.kind == "mha":
            shapes[p + "w_q"] = (H, D)
            shapes[p + "w_k"] = (H, D)
        elif cfg.variant.kind == "exp":
            shapes[p + "w_k"] = (H, 1)
        shapes[p + "w_v"] = (H, D)
        shapes[p + "w_out"] = (D, H)
        shapes[p + "update.w"] = (2 * H, H)
        shapes[p + "update.b"] = (H,)
    shapes.update(
        {
            "value.fc1.w": (H, H),
            "value.fc1.b": (H,),
            "value.fc2.w": (H, 1),
            "value.fc2.b": (1,),
            "policy.fc1.w": (H, H),
            "policy.fc1.b": (H,),
            "policy.fc2.w": (H, NUM_ACTIONS),
            "policy.fc2.b": (NUM_ACTIONS,),
        }
    )
    return shapes


def init_params(cfg: NetConfig, rng: np.random.Generator) -> ParamSet:
    """Orthogonal weights (gain 1), zero biases, in the current gradtape precision."""
    params = ParamSet()
    for name, shape in param_shapes(cfg).items():
        if len(shape) == 1:
            value = np.zeros(shape)
        else:
            value = gt.orthogonal_init(shape[0], shape[1], rng)
        params.add(Parameter(name, value))
    return params


@dataclass
class ForwardOutput:
    logits: Tensor  # (B, M, 5)
    values: Tensor  # (B, M)
    attention: list[np.ndarray]  # per hop, (B, M, M) or (B, heads, M, M)


def _batched(own, rel, mask):
    own = np.asarray(own)
    squeeze = own.ndim == 2
    if squeeze:
        own, rel, mask = own[None], np.asarray(rel)[None], np.asarray(mask)[None]
    return own, np.asarray(rel), np.asarray(mask, dtype=bool), squeeze


class PolicyNet:
    def __init__(self, cfg: NetConfig | None = None, params: ParamSet | None = None, rng: np.random.Generator | None = None):
        self.cfg = cfg or NetConfig()
        if params is None:
            params = init_params(self.cfg, rng if rng is not None else np.random.default_rng(0))
        diff = gt.shape_diff(param_shapes(self.cfg), params.shapes())
        if diff:
            raise ValueError("parameters do not fit this architecture:\n  " + "\n  ".join(diff))
        self.params = params
        self.dtype = next(iter(params)).data.dtype

    def t(self, x) -> Tensor:
        return gt.tensor(x, dtype=self.dtype)

    def p(self, name: str) -> Parameter:
        return self.params[name]

    def hop_prefix(self, c: int) -> str:
        return "comm.hop0." if self.cfg.tie_hops else f"comm.hop{c}."

    # -- encoders -----------------------------------------------------------

    def encode_agents(self, own) -> Tensor:
        """(..., 4) -> (..., H), rowwise."""
        return gt.relu(gt.affine(self.t(own), self.p("agent_enc.w"), self.p("agent_enc.b")))

    def entity_embedding(self, U: Tensor, rel) -> Tensor:
        """Attention pooling of landmark embeddings with the agent as query: (B, M, H), (B, M, L, 2) -> (B, M, D)."""
        B, M = U.shape[0], U.shape[1]
        L = rel.shape[-2]
        D = self.cfg.key_dim
        if L == 0:
            return self.t(np.zeros((B, M, D)))
        e = gt.relu(gt.affine(self.t(rel), self.p("entity_enc.w"), self.p("entity_enc.b")))
        q = gt.reshape(gt.linear(U, self.p("entity_attn.w_q")), (B, M, 1, D))
        k = gt.linear(e, self.p("entity_attn.w_k"))
        v = gt.linear(e, self.p("entity_attn.w_v"))
        logits = gt.matmul(q, gt.transpose(k, (0, 1, 3, 2))) * (1.0 / math.sqrt(D))
        w = gt.masked_softmax(logits, np.ones((1, 1, 1, L), dtype=bool))
        return gt.reshape(gt.matmul(w, v), (B, M, D))

    def joint_encoding(self, U: Tensor, E: Tensor) -> Tensor:
        return gt.relu(gt.affine(gt.concat([U, E]), self.p("joint.w"), self.p("joint.b")))

    def encode(self, own, rel) -> Tensor:
        U = self.encode_agents(own)
        return self.joint_encoding(U, self.entity_embedding(U, rel))

    # -- communication ------------------------------------------------------

    def hop_messages(self, h: Tensor, c: int) -> dict[str, Tensor]:
        """What each agent computes from its own state for hop ``c``: query, key, value."""
        pre = self.hop_prefix(c)
        kind = self.cfg.variant.kind
        out = {"v": gt.linear(h, self.p(pre + "w_v"))}
        if kind == "mha":
            out["q"] = gt.linear(h, self.p(pre + "w_q"))
            out["k"] = gt.linear(h, self.p(pre + "w_k"))
        elif kind == "exp":
            out["k"] = gt.linear(h, self.p(pre + "w_k"))
        return out

    def attention_weights(self, recv: dict[str, Tensor], send: dict[str, Tensor], mask) -> Tensor:
        """Receivers (B, Mq) attend over senders (B, Mk); returns (B, Mq, Mk), or (B, heads, Mq, Mk) for MHA."""
        kind = self.cfg.variant.kind
        mask = np.asarray(mask, dtype=bool)
        B, Mq = recv["v"].shape[0], recv["v"].shape[1]
        Mk = send["v"].shape[1]
        if kind == "mha":
            nh = self.cfg.variant.heads
            dh = self.cfg.key_dim // nh
            q = gt.transpose(gt.reshape(recv["q"], (B, Mq, nh, dh)), (0, 2, 1, 3))
            k = gt.transpose(gt.reshape(send["k"], (B, Mk, nh, dh)), (0, 2, 3, 1))
            logits = gt.matmul(q, k) * (1.0 / math.sqrt(dh))
            return gt.masked_softmax(logits, mask[:, None, :, :])
        if kind == "exp":
            diff = gt.sub(recv["k"], gt.reshape(send["k"], (B, 1, Mk)))
            return gt.masked_softmax(-gt.square(diff), mask)
        return gt.masked_softmax(self.t(np.ones((B, Mq, Mk))), mask)

    def aggregate(self, w: Tensor, send: dict[str, Tensor]) -> Tensor:
        v = send["v"]
        B, Mk, D = v.shape
        if w.ndim == 4:
            nh = w.shape[1]
            vh = gt.transpose(gt.reshape(v, (B, Mk, nh, D // nh)), (0, 2, 1, 3))
            msg = gt.matmul(w, vh)  # (B, nh, Mq, dh)
            Mq = w.shape[2]
            return gt.reshape(gt.transpose(msg, (0, 2, 1, 3)), (B, Mq, D))
        return gt.matmul(w, v)

    def update(self, h: Tensor, msg: Tensor, c: int) -> Tensor:
        pre = self.hop_prefix(c)
        m = gt.linear(msg, self.p(pre + "w_out"))
        return gt.relu(gt.affine(gt.concat([h, m]), self.p(pre + "update.w"), self.p(pre + "update.b")))

    def comm_hop(self, h: Tensor, mask, c: int) -> tuple[Tensor, Tensor]:
        msgs = self.hop_messages(h, c)
        w = self.attention_weights(msgs, msgs, mask)
        return self.update(h, self.aggregate(w, msgs), c), w

    # -- heads --------------------------------------------------------------

    def heads(self, h: Tensor) -> tuple[Tensor, Tensor]:
        hv = gt.relu(gt.affine(h, self.p("value.fc1.w"), self.p("value.fc1.b")))
        val = gt.affine(hv, self.p("value.fc2.w"), self.p("value.fc2.b"))
        hp = gt.relu(gt.affine(h, self.p("policy.fc1.w"), self.p("policy.fc1.b")))
        logits = gt.affine(hp, self.p("policy.fc2.w"), self.p("policy.fc2.b"))
        return logits, gt.reshape(val, val.shape[:-1])

    # -- full passes --------------------------------------------------------

    def forward(self, own, rel, mask) -> ForwardOutput:
        """Batched pass. Inputs (B, M, 4), (B, M, L, 2), (B, M, M); a missing batch axis is added."""
        own, rel, mask, _ = _batched(own, rel, mask)
        if not (own.shape[:2] == rel.shape[:2] and mask.shape == (own.shape[0], own.shape[1], own.shape[1])):
            raise gt.DimensionError(f"inconsistent team sizes: own {own.shape}, rel {rel.shape}, mask {mask.shape}")
        if own.shape[-1] != OBS_DIM or rel.shape[-1] != ENTITY_DIM:
            raise gt.DimensionError(f"expected own (..., {OBS_DIM}) and rel (..., {ENTITY_DIM})")
        h = self.encode(own, rel)
        attn = []
        for c in range(self.cfg.hops):
            h, w = self.comm_hop(h, mask, c)
            attn.append(w.data)
        logits, values = self.heads(h)
        if not (np.all(np.isfinite(logits.data)) and np.all(np.isfinite(values.data))):
            raise FloatingPointError("non-finite network output")
        return ForwardOutput(logits, values, attn)

    def forward_decentralized(self, own, rel, mask) -> tuple[np.ndarray, np.ndarray]:
        """Per-agent evaluation for one team: (M, 4), (M, L, 2), (M, M) -> logits (M, 5), values (M,).

        Each agent only touches its own observation and the messages its mask
        neighbours send it. Messages land in a fixed inbox indexed by sender;
        slots of non-neighbours stay zero and are masked out.
        """
        own, rel, mask = np.asarray(own), np.asarray(rel), np.asarray(mask, dtype=bool)
        M = own.shape[0]
        h = [self.encode(own[i][None, None], rel[i][None, None]) for i in range(M)]
        for c in range(self.cfg.hops):
            sent = [self.hop_messages(h[i], c) for i in range(M)]
            new_h = []
            for i in range(M):
                inbox = {}
                for key in sent[i]:
                    width = sent[i][key].shape[-1]
                    box = np.zeros((1, M, width), dtype=sent[i][key].data.dtype)
                    for n in np.nonzero(mask[i])[0]:
                        box[0, n] = sent[n][key].data[0, 0]
                    inbox[key] = self.t(box)
                w = self.attention_weights(sent[i], inbox, mask[i][None, None, :])
                new_h.append(self.update(h[i], self.aggregate(w, inbox), c))
            h = new_h
        outs = [self.heads(hi) for hi in h]
        logits = np.concatenate([o[0].data[0] for o in outs], axis=0)
        values = np.concatenate([o[1].data[0] for o in outs], axis=0)
        return logits, values

    def evaluate_actions(self, own, rel, mask, actions) -> tuple[Tensor, Tensor, Tensor]:
        """Differentiable log-probabilities, entropies and values, each (B, M)."""
        out = self.forward(own, rel, mask)
        logp_all = gt.log_softmax(out.logits)
        actions = np.asarray(actions)
        if actions.ndim == 1:
            actions = actions[None]
        logp = gt.take(logp_all, actions)
        entropy = -gt.sum(gt.mul(gt.exp(logp_all), logp_all), axis=-1)
        return logp, entropy, out.values


def softmax_np(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def log_softmax_np(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def sample_actions(logits: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """One categorical draw per row via inverse CDF."""
    probs = softmax_np(np.asarray(logits, dtype=np.float64))
    cdf = np.cumsum(probs, axis=-1)
    u = rng.random(probs.shape[:-1])[..., None] * cdf[..., -1:]
    return np.minimum((cdf <= u).sum(axis=-1), probs.shape[-1] - 1)


def greedy_actions(logits: np.ndarray) -> np.ndarray:
    """Row-wise argmax; ties go to the lowest index."""
    return np.argmax(np.asarray(logits), axis=-1)
