"""Recurrent spiking transformer for saliency prediction on spike streams.

Pipeline, all-binary between modules:

* encoder: the input representation is repeated for every step and pushed
  through four conv-BN-spike blocks with persistent membranes, halving
  resolution each block; channels grow to the model dim D.
* aggregation: the deepest feature map, flattened to tokens, passes a
  stack of recurrent spiking attention blocks. Queries come from the
  current step; keys and values from an adjacent step selected by the
  recurrent mode (reverse: next step, forward: previous, vanilla: same).
  The final step has no neighbour and attends to itself. All steps share
  one set of block weights, so parameter count is step-count free.
* refinement: aggregated tokens, reshaped to a map, are upsampled twice
  and fused with the two mid-resolution pyramid features, then projected
  back to D channels at quarter resolution.
* head: 1x1 conv + sigmoid + nearest x4 upsample to a per-pixel map.

Residual fusion is element-OR by default, keeping every inter-module
tensor in {0,1}; 'add' reproduces integer-residual variants and 'concat'
concatenates then projects back through a spiking layer.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from . import grad as G
from .grad import Tensor
from .neuro import LIFParams, CBSBlock, lif_step

RECURRENT_MODES = ("vanilla", "forward", "reverse")
RESIDUAL_OPS = ("or", "add", "concat")

# config JSON keys, fixed interface
_JSON_KEYS = ("D", "heads", "T", "rfa_blocks", "recurrent_mode",
              "residual_op", "tau", "v_th", "v_reset", "surrogate_alpha")


@dataclass
class RSTConfig:
    dim: int = 128
    heads: int = 8
    steps: int = 5
    rfa_blocks: int = 6
    recurrent_mode: str = "reverse"
    residual_op: str = "or"
    tau: float = 2.0
    v_th: float = 1.0
    v_reset: float = 0.0
    surrogate_alpha: float = 2.0

    def __post_init__(self):
        if self.dim % 8:
            raise ValueError("dim must be divisible by 8 (four halving stages)")
        if self.dim % self.heads:
            raise ValueError("dim must be divisible by heads")
        if self.steps < 1:
            raise ValueError("steps must be >= 1")
        if self.rfa_blocks < 0:
            raise ValueError("rfa_blocks must be >= 0")
        if self.recurrent_mode not in RECURRENT_MODES:
            raise ValueError(f"recurrent_mode must be one of {RECURRENT_MODES}")
        if self.residual_op not in RESIDUAL_OPS:
            raise ValueError(f"residual_op must be one of {RESIDUAL_OPS}")

    @property
    def scale(self) -> float:
        """Attention damping sqrt(heads / dim)."""
        return float(np.sqrt(self.heads / self.dim))

    def lif(self) -> LIFParams:
        return LIFParams(self.tau, self.v_th, self.v_reset, self.surrogate_alpha)

    def to_json_dict(self) -> dict:
        return {"D": self.dim, "heads": self.heads, "T": self.steps,
                "rfa_blocks": self.rfa_blocks,
                "recurrent_mode": self.recurrent_mode,
                "residual_op": self.residual_op,
                "tau": self.tau, "v_th": self.v_th, "v_reset": self.v_reset,
                "surrogate_alpha": self.surrogate_alpha}

    @classmethod
    def from_json_dict(cls, doc: dict) -> "RSTConfig":
        extra = set(doc) - set(_JSON_KEYS)
        if extra:
            raise ValueError(f"unknown model config keys: {sorted(extra)}")
        rename = {"D": "dim", "T": "steps"}
        merged = dict(cls().__dict__)
        for k, v in doc.items():
            merged[rename.get(k, k)] = v
        return cls(**merged)

    def save(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_json_dict(), fh, indent=1, sort_keys=True)
            fh.write("\n")

    @classmethod
    def load(cls, path) -> "RSTConfig":
        with open(path, encoding="utf-8") as fh:
            return cls.from_json_dict(json.load(fh))


# -- activity tracing ----------------------------------------------------------

_ACTIVE_TRACE = None


class trace_activity:
    """Collects per-layer synaptic activity and module-boundary tensors
    during forwards run inside the context. Used by the energy estimator
    and the binarity checks."""

    def __init__(self):
        self.layers = []       # dicts: name, spikes_in, numel_in, fanout, analog
        self.tensors = []      # (name, ndarray)

    def __enter__(self):
        global _ACTIVE_TRACE
        self._prev = _ACTIVE_TRACE
        _ACTIVE_TRACE = self
        return self

    def __exit__(self, *exc):
        global _ACTIVE_TRACE
        _ACTIVE_TRACE = self._prev
        return False


def _emit_layer(name: str, x: np.ndarray, fanout: int):
    tr = _ACTIVE_TRACE
    if tr is None:
        return
    binary = np.isin(x, (0.0, 1.0)).all()
    integral = binary or (x.min() >= 0 and np.array_equal(x, np.round(x)))
    if binary:
        spikes = float(np.count_nonzero(x))
        analog = False
    elif integral:
        # aggregated spike counts: every accumulated unit is one synaptic op
        spikes = float(x.sum())
        analog = False
    else:
        spikes = float(np.count_nonzero(x))
        analog = True
    tr.layers.append({"name": name, "spikes_in": spikes,
                      "numel_in": int(x.size), "fanout": int(fanout),
                      "analog": analog})


def _emit_tensor(name: str, x: np.ndarray):
    if _ACTIVE_TRACE is not None:
        _ACTIVE_TRACE.tensors.append((name, np.array(x, copy=True)))


# -- attention core --------------------------------------------------------------


def spiking_attention(q: Tensor, k: Tensor, v: Tensor, scale: float,
                      lif: LIFParams | None = None, soft: bool = False,
                      trace_name: str = "") -> Tensor:
    """SN(Q K^T V * scale) over head-split binary tokens (B, n, N, d).

    The two products of binary matrices produce non-negative integer
    counts; the scaled result passes one fresh-membrane firing step and
    comes out binary again.
    """
    lif = lif or LIFParams()
    _emit_layer(trace_name + "qk", q.data, k.shape[-2])
    att = G.matmul(q, G.swapaxes(k, -1, -2))
    _emit_layer(trace_name + "av", att.data, v.shape[-1])
    att = G.matmul(att, v)
    att = G.mul(att, scale)
    _, s = lif_step(None, att, lif, soft=soft)
    return s


class _TokenNorm(G.Module):
    """Batchnorm over the feature axis of (B, N, D) token tensors."""

    def __init__(self, dim: int):
        super().__init__()
        self.gamma = Tensor(np.ones(dim), requires_grad=True)
        self.beta = Tensor(np.zeros(dim), requires_grad=True)
        self.register_array("running_mean", np.zeros(dim))
        self.register_array("running_var", np.ones(dim))

    def forward(self, x: Tensor) -> Tensor:
        y = G.transpose(x, (0, 2, 1))
        y = G.batchnorm(y, self.gamma, self.beta, self.running_mean,
                        self.running_var, training=self.training)
        return G.transpose(y, (0, 2, 1))


class _SpikeProjection(G.Module):
    """Linear -> BN -> fresh-membrane spike over tokens."""

    def __init__(self, rng, d_in: int, d_out: int, lif: LIFParams, soft: bool):
        super().__init__()
        self.weight = G.kaiming_uniform(rng, (d_out, d_in), fan_in=d_in)
        self.norm = _TokenNorm(d_out)
        self.lif = lif
        self.soft = soft

    def forward(self, x: Tensor, trace_name: str = "") -> Tensor:
        _emit_layer(trace_name, x.data, self.weight.shape[0])
        y = G.linear(x, self.weight)
        y = self.norm.forward(y)
        _, s = lif_step(None, y, self.lif, soft=self.soft)
        return s


class TokenFuse(G.Module):
    """Residual combiner for token features; 'concat' restores width
    through a spiking projection so downstream shapes stay fixed."""

    def __init__(self, rng, dim: int, op: str, lif: LIFParams, soft: bool):
        super().__init__()
        self.op = op
        self.soft = soft
        if op == "concat":
            self.proj = _SpikeProjection(rng, 2 * dim, dim, lif, soft)

    def forward(self, a: Tensor, b: Tensor, trace_name: str = "") -> Tensor:
        if self.op == "or":
            return G.elementwise_or(a, b, soft=self.soft)
        if self.op == "add":
            return G.add(a, b)
        cat = G.concat([a, b], axis=-1)
        return self.proj.forward(cat, trace_name=trace_name + ".proj")


class RFABlock(G.Module):
    """One recurrent aggregation block, shared across all steps."""

    def __init__(self, rng, cfg: RSTConfig, soft: bool = False):
        super().__init__()
        d, lif = cfg.dim, cfg.lif()
        self.cfg = cfg
        self.soft = soft
        self.q_proj = _SpikeProjection(rng, d, d, lif, soft)
        self.k_proj = _SpikeProjection(rng, d, d, lif, soft)
        self.v_proj = _SpikeProjection(rng, d, d, lif, soft)
        self.out_proj = _SpikeProjection(rng, d, d, lif, soft)
        self.fuse_att = TokenFuse(rng, d, cfg.residual_op, lif, soft)
        self.fuse_mlp = TokenFuse(rng, d, cfg.residual_op, lif, soft)
        self.mlp1 = CBSBlock(rng, d, d, lif, pool=False, soft=soft)
        self.mlp2 = CBSBlock(rng, d, d, lif, pool=False, soft=soft)

    def _shift_steps(self, e: Tensor, steps: int, batch: int) -> Tensor:
        if steps == 1 or self.cfg.recurrent_mode == "vanilla":
            return e
        n, d = e.shape[1], e.shape[2]
        e4 = G.reshape(e, (steps, batch, n, d))
        if self.cfg.recurrent_mode == "reverse":
            kv = G.concat([e4[1:], e4[steps - 1:steps]], axis=0)
        else:  # forward
            kv = G.concat([e4[0:1], e4[:steps - 1]], axis=0)
        return G.reshape(kv, (steps * batch, n, d))

    def forward(self, e: Tensor, steps: int, batch: int, hw, name="rfa") -> Tensor:
        cfg = self.cfg
        n_tok, d = e.shape[1], e.shape[2]
        heads, dh = cfg.heads, d // cfg.heads
        kv_src = self._shift_steps(e, steps, batch)
        q = self.q_proj.forward(e, trace_name=name + ".q")
        k = self.k_proj.forward(kv_src, trace_name=name + ".k")
        v = self.v_proj.forward(kv_src, trace_name=name + ".v")

        def split(x):
            return G.transpose(G.reshape(x, (x.shape[0], n_tok, heads, dh)),
                               (0, 2, 1, 3))

        att = spiking_attention(split(q), split(k), split(v), cfg.scale,
                                cfg.lif(), soft=self.soft,
                                trace_name=name + ".att.")
        att = G.reshape(G.transpose(att, (0, 2, 1, 3)), (e.shape[0], n_tok, d))
        aq = self.out_proj.forward(att, trace_name=name + ".proj")
        z = self.fuse_att.forward(e, aq, trace_name=name + ".fuse_att")

        h, w = hw
        zmap = G.reshape(G.transpose(z, (0, 2, 1)), (z.shape[0], d, h, w))
        _emit_layer(name + ".mlp1", zmap.data, 9 * d)
        m = self.mlp1.forward(zmap)
        _emit_layer(name + ".mlp2", m.data, 9 * d)
        m = self.mlp2.forward(m)
        m = G.transpose(G.reshape(m, (m.shape[0], d, n_tok)), (0, 2, 1))
        return self.fuse_mlp.forward(e, m, trace_name=name + ".fuse_mlp")


class Encoder(G.Module):
    """Four stateful conv-BN-spike stages; channels 1 -> D/8 ... -> D."""

    def __init__(self, rng, cfg: RSTConfig, soft: bool = False):
        super().__init__()
        d, lif = cfg.dim, cfg.lif()
        chans = [1, d // 8, d // 4, d // 2, d]
        self.blocks = G.ModuleList([
            CBSBlock(rng, chans[i], chans[i + 1], lif, pool=True,
                     stateful=True, soft=soft)
            for i in range(4)])

    def reset_state(self):
        for b in self.blocks:
            b.reset_state()

    def detach_state(self):
        for b in self.blocks:
            b.detach_state()

    def forward(self, x: Tensor, steps: int):
        feats = []
        for i, blk in enumerate(self.blocks):
            _emit_layer(f"encoder.conv{i + 1}", x.data,
                        9 * blk.weight.shape[0])
            x = blk.forward(x, steps=steps)
            _emit_tensor(f"encoder.f{i + 1}", x.data)
            feats.append(x)
        return feats


class SpatialFuse(G.Module):
    """Residual combiner for (B, C, H, W) features."""

    def __init__(self, rng, ch: int, op: str, lif: LIFParams, soft: bool):
        super().__init__()
        self.op = op
        self.soft = soft
        if op == "concat":
            self.proj = CBSBlock(rng, 2 * ch, ch, lif, pool=False,
                                 kernel=1, soft=soft)

    def forward(self, a: Tensor, b: Tensor, trace_name: str = "") -> Tensor:
        if self.op == "or":
            return G.elementwise_or(a, b, soft=self.soft)
        if self.op == "add":
            return G.add(a, b)
        cat = G.concat([a, b], axis=1)
        _emit_layer(trace_name + ".proj", cat.data, self.proj.weight.shape[0])
        return self.proj.forward(cat)


class Refine(G.Module):
    """Two upsample-project-fuse stages against the pyramid, then a
    projection back to D channels at quarter resolution."""

    def __init__(self, rng, cfg: RSTConfig, soft: bool = False):
        super().__init__()
        d, lif = cfg.dim, cfg.lif()
        self.up1 = CBSBlock(rng, d, d // 2, lif, pool=False, soft=soft)
        self.fuse1 = SpatialFuse(rng, d // 2, cfg.residual_op, lif, soft)
        self.up2 = CBSBlock(rng, d // 2, d // 4, lif, pool=False, soft=soft)
        self.fuse2 = SpatialFuse(rng, d // 4, cfg.residual_op, lif, soft)
        self.out = CBSBlock(rng, d // 4, d, lif, pool=False, soft=soft)

    def forward(self, f_agg: Tensor, f3: Tensor, f2: Tensor) -> Tensor:
        x = G.nearest_upsample2d(f_agg, 2)
        _emit_layer("refine.up1", x.data, 9 * self.up1.weight.shape[0])
        x = self.up1.forward(x)
        x = self.fuse1.forward(x, f3, trace_name="refine.fuse1")
        _emit_tensor("refine.s1", x.data)
        x = G.nearest_upsample2d(x, 2)
        _emit_layer("refine.up2", x.data, 9 * self.up2.weight.shape[0])
        x = self.up2.forward(x)
        x = self.fuse2.forward(x, f2, trace_name="refine.fuse2")
        _emit_tensor("refine.s2", x.data)
        _emit_layer("refine.out", x.data, 9 * self.out.weight.shape[0])
        x = self.out.forward(x)
        _emit_tensor("refine.out", x.data)
        return x


class Head(G.Module):
    """1x1 conv + sigmoid + nearest x4 back to input resolution."""

    def __init__(self, rng, cfg: RSTConfig):
        super().__init__()
        self.weight = G.kaiming_uniform(rng, (1, cfg.dim, 1, 1), fan_in=cfg.dim)
        self.bias = Tensor(np.zeros(1), requires_grad=True)

    def forward(self, x: Tensor) -> Tensor:
        _emit_layer("head.conv", x.data, 1)
        y = G.conv2d(x, self.weight, self.bias, padding=0)
        y = G.sigmoid(y)
        return G.nearest_upsample2d(y, 4)


class RSTModel(G.Module):
    """Full network. ``soft=True`` builds the smooth-relaxation twin
    (continuous gates, differentiable OR, undetached resets) whose
    analytic gradient is finite-difference checkable end to end."""

    def __init__(self, cfg: RSTConfig, rng: np.random.Generator,
                 soft: bool = False):
        super().__init__()
        self.cfg = cfg
        self.soft = soft
        self.encoder = Encoder(rng, cfg, soft)
        self.rfa = G.ModuleList([RFABlock(rng, cfg, soft)
                                 for _ in range(cfg.rfa_blocks)])
        self.refine = Refine(rng, cfg, soft)
        self.head = Head(rng, cfg)

    def reset_state(self):
        self.encoder.reset_state()

    def detach_state(self):
        self.encoder.detach_state()

    def forward_steps(self, x: np.ndarray, steps: int):
        """Run ``steps`` copies of (B,1,H,W) input through the stack;
        returns a list of per-step saliency maps, each (B,1,H,W)."""
        b, _, hh, ww = x.shape
        if hh % 16 or ww % 16:
            raise ValueError("input spatial dims must be divisible by 16")
        xt = Tensor(np.tile(np.asarray(x, dtype=np.float64), (steps, 1, 1, 1)))
        f1, f2, f3, f4 = self.encoder.forward(xt, steps)
        h, w = f4.shape[2], f4.shape[3]
        n_tok = h * w
        e = G.transpose(G.reshape(f4, (f4.shape[0], self.cfg.dim, n_tok)),
                        (0, 2, 1))
        _emit_tensor("tokens.in", e.data)
        for i, blk in enumerate(self.rfa):
            e = blk.forward(e, steps, b, (h, w), name=f"rfa{i}")
            _emit_tensor(f"tokens.out{i}", e.data)
        f_agg = G.reshape(G.transpose(e, (0, 2, 1)),
                          (e.shape[0], self.cfg.dim, h, w))
        s_feat = self.refine.forward(f_agg, f3, f2)
        maps = self.head.forward(s_feat)
        return [maps[t * b:(t + 1) * b] for t in range(steps)]

    def forward_full(self, x: np.ndarray, mode: str = "multi"):
        """multi: fresh state, the configured step count, T maps out.
        single: one step per call, membrane state carried across calls."""
        if mode == "multi":
            self.reset_state()
            return self.forward_steps(x, self.cfg.steps)
        if mode == "single":
            return self.forward_steps(x, 1)
        raise ValueError(f"unknown mode {mode!r}")
