"""Leaky integrate-and-fire neurons and the conv-BN-spike building block.

One LIF step, elementwise over the input tensor:

    charge  H = V + (X - (V - v_reset)) / tau
    fire    S = 1 where H >= v_th else 0     (arctan surrogate backward)
    reset   V' = H * (1 - S) + v_reset * S   (hard reset to v_reset)

The spike factor in the reset is detached, so gradient reaches earlier
steps only through the membrane carry H, never through the reset switch.
After any step every membrane element sits strictly below v_th whenever
v_reset < v_th: fired elements rest at v_reset, silent ones kept H < v_th.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import grad as G
from .grad import Tensor


@dataclass
class LIFParams:
    tau: float = 2.0
    v_th: float = 1.0
    v_reset: float = 0.0
    alpha: float = 2.0          # surrogate sharpness

    def __post_init__(self):
        if self.tau <= 0:
            raise ValueError("tau must be positive")


def lif_step(v, x, p: LIFParams, soft: bool = False):
    """One membrane update. ``v`` may be None for a fresh (v_reset) state.

    Returns (v_next, spikes). With ``soft=True`` the firing gate is the
    smooth surrogate and the reset keeps its gradient path, which makes
    the whole step differentiable for finite-difference checks.
    """
    x = G.as_tensor(x)
    if v is None:
        h = G.add(G.div(x, p.tau), p.v_reset)
    else:
        h = G.add(v, G.div(G.sub(x, G.sub(v, p.v_reset)), p.tau))
    s = G.spike_gate(h, v_th=p.v_th, alpha=p.alpha, soft=soft)
    gate = s if soft else s.detach()
    v_next = G.add(G.mul(h, G.sub(1.0, gate)), G.mul(gate, p.v_reset))
    return v_next, s


class LIFNeuron(G.Module):
    """Stateful wrapper: carries the membrane across consecutive step calls.

    The carried membrane is transient runtime state, not a parameter or
    buffer, so assignments bypass Module registration and it never shows
    up in state_dict.
    """

    def __init__(self, params: LIFParams | None = None, soft: bool = False):
        super().__init__()
        self.params = params or LIFParams()
        self.soft = soft
        object.__setattr__(self, "state", None)

    def reset_state(self):
        object.__setattr__(self, "state", None)

    def detach_state(self):
        if self.state is not None:
            object.__setattr__(self, "state", self.state.detach())

    def step(self, x) -> Tensor:
        v, s = lif_step(self.state, x, self.params, soft=self.soft)
        object.__setattr__(self, "state", v)
        return s


class CBSBlock(G.Module):
    """conv 3x3 stride 1 (no bias) -> batchnorm -> spike -> optional 2x2 maxpool.

    Input is (steps*batch, C, H, W) with the step axis folded into the
    batch, so batchnorm statistics cover steps x batch x spatial. The
    firing stage runs in one of two regimes:

    * stateful: a membrane scan over the step slices, state persisting
      across steps (and across calls until reset); used in the encoder.
    * stateless: every step fires from a fresh v_reset membrane, so all
      steps are independent and stay batched; used wherever steps are
      processed in parallel.
    """

    def __init__(self, rng, in_ch: int, out_ch: int, lif: LIFParams,
                 pool: bool = True, stateful: bool = False,
                 kernel: int = 3, soft: bool = False):
        super().__init__()
        self.weight = G.kaiming_uniform(rng, (out_ch, in_ch, kernel, kernel),
                                        fan_in=in_ch * kernel * kernel)
        self.gamma = Tensor(np.ones(out_ch), requires_grad=True)
        self.beta = Tensor(np.zeros(out_ch), requires_grad=True)
        self.register_array("running_mean", np.zeros(out_ch))
        self.register_array("running_var", np.ones(out_ch))
        self.pool = pool
        self.stateful = stateful
        self.kernel = kernel
        self.padding = (kernel - 1) // 2
        self.lif = LIFNeuron(lif, soft=soft)
        self.soft = soft

    def reset_state(self):
        self.lif.reset_state()

    def detach_state(self):
        self.lif.detach_state()

    def forward(self, x, steps: int = 1) -> Tensor:
        y = G.conv2d(x, self.weight, padding=self.padding)
        y = G.batchnorm(y, self.gamma, self.beta,
                        self.running_mean, self.running_var,
                        training=self.training)
        if self.stateful and steps > 1:
            n = y.shape[0]
            if n % steps:
                raise ValueError("folded batch not divisible by steps")
            b = n // steps
            spikes = [self.lif.step(y[t * b:(t + 1) * b]) for t in range(steps)]
            s = G.concat(spikes, axis=0)
        elif self.stateful:
            s = self.lif.step(y)
        else:
            _, s = lif_step(None, y, self.lif.params, soft=self.soft)
        return G.maxpool2d(s) if self.pool else s
