"""LSTM encoder-decoder for 2-D agent trajectories."""

from __future__ import annotations

from .. import tensor as T
from ..errors import ContractError, UnsupportedVariantError
from ..nn import Linear, LSTMCell
from ..tensor import Tensor
from .common import Backbone


class LSTMTrajectoryBackbone(Backbone):
    """Encodes per-step displacements, then rolls the decoder out autoregressively.

    Input ``(B, L_h, A, 2)`` positions for A agents; every agent is an
    independent sequence. Output ``(B, L_f, A, 2)`` absolute positions.
    ``step_scale`` converts displacements to the network's unit range.
    """

    step_scale = 1.0

    def __init__(self, spec, cond, city_shapes, L_h, d_x, seed):
        if cond.variant == "citymem":
            raise UnsupportedVariantError("the trajectory encoder-decoder supports base and cityid only")
        if d_x != 2:
            raise ContractError("trajectory positions must be 2-D")
        super().__init__(spec, cond, city_shapes, L_h, d_x, seed)

    def _build(self, rng):
        d = self.spec.d_h
        d_c = self.citycond.d_c
        self.shared_io = len({s[1] for s in self.city_shapes}) == 1
        self.encoder = LSTMCell(2, d, rng, d_c)
        self.decoder = LSTMCell(2, d, rng, d_c)
        self.output = Linear(d, 2, rng)

    def _check_input(self, x, c):
        if x.ndim != 4 or x.shape[3] != 2:
            raise ContractError(f"expected (B, L_h, A, 2) positions, got shape {x.shape}")
        if x.shape[1] != self.L_h:
            raise ContractError(f"window length {x.shape[1]} != L_h={self.L_h}")
        self._io_slot(c)

    def forward(self, x, c, adjacency=None):
        self._check_input(x, c)
        B, L, A, _ = x.shape
        p = x.transpose(0, 2, 1, 3).reshape(B * A, L, 2)
        disp = (p[:, 1:] - p[:, :-1]) * (1.0 / self.step_scale)
        e = self.citycond.embed(c)
        d = self.spec.d_h
        state = (T.zeros(B * A, d), T.zeros(B * A, d))
        for t in range(L - 1):
            state = self.encoder(disp[:, t], state, e)
        L_f = self.city_shapes[c][1]
        step = disp[:, -1]
        pos = p[:, -1]
        outs = []
        for _ in range(L_f):
            state = self.decoder(step, state, e)
            step = self.output(state[0])
            pos = pos + step * self.step_scale
            outs.append(pos)
        out: Tensor = T.stack(outs, axis=1)
        return out.reshape(B, A, L_f, 2).transpose(0, 2, 1, 3)
