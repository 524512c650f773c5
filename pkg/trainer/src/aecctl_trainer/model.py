"""Controller network in torch, matching the aecctl weight-bundle semantics.

Same cell convention as the inference side (see the primary package's
``docs/weight-format.md``): single bias per gate, gates packed in the
order (update, reset, candidate), the reset gate scaling the hidden state
before the recurrent candidate projection, and the update gate carrying
the previous state.
"""

from __future__ import annotations

import math

import torch
from torch import nn

LEAKY_RELU_SLOPE = 0.01


class GruLayer(nn.Module):
    def __init__(self, input_size: int, hidden_size: int):
        super().__init__()
        self.input_size = input_size
        self.hidden_size = hidden_size
        self.weight_input = nn.Parameter(torch.empty(3 * hidden_size, input_size))
        self.weight_hidden = nn.Parameter(torch.empty(3 * hidden_size, hidden_size))
        self.bias = nn.Parameter(torch.zeros(3 * hidden_size))
        bound_in = 1.0 / math.sqrt(input_size)
        bound_h = 1.0 / math.sqrt(hidden_size)
        nn.init.uniform_(self.weight_input, -bound_in, bound_in)
        nn.init.uniform_(self.weight_hidden, -bound_h, bound_h)

    def forward(self, x: torch.Tensor, h: torch.Tensor) -> torch.Tensor:
        hs = self.hidden_size
        gx = x @ self.weight_input.T + self.bias
        update = torch.sigmoid(gx[..., :hs] + h @ self.weight_hidden[:hs].T)
        reset = torch.sigmoid(gx[..., hs:2 * hs]
                              + h @ self.weight_hidden[hs:2 * hs].T)
        candidate = torch.tanh(gx[..., 2 * hs:]
                               + (reset * h) @ self.weight_hidden[2 * hs:].T)
        return update * h + (1.0 - update) * candidate


class Dense(nn.Module):
    def __init__(self, input_size: int, output_size: int):
        super().__init__()
        self.weight = nn.Parameter(torch.empty(output_size, input_size))
        self.bias = nn.Parameter(torch.zeros(output_size))
        bound = 1.0 / math.sqrt(input_size)
        nn.init.uniform_(self.weight, -bound, bound)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return x @ self.weight.T + self.bias


class MaskNet(nn.Module):
    """Dense input layer, stacked GRU layers, two sigmoid mask heads.

    Feature normalization statistics are buffers so they export with the
    weights and keep inference self-contained.
    """

    def __init__(self, input_dim: int, hidden_size: int, head_dim: int = 1,
                 num_gru_layers: int = 2):
        super().__init__()
        self.input_dim = input_dim
        self.hidden_size = hidden_size
        self.head_dim = head_dim
        self.input_dense = Dense(input_dim, hidden_size)
        self.gru_layers = nn.ModuleList(
            [GruLayer(hidden_size, hidden_size) for _ in range(num_gru_layers)])
        self.head_step_mask = Dense(hidden_size, head_dim)
        self.head_error_mask = Dense(hidden_size, head_dim)
        self.register_buffer("norm_mean", torch.zeros(input_dim))
        self.register_buffer("norm_variance", torch.ones(input_dim))

    def init_state(self, units: int, **factory) -> list[torch.Tensor]:
        return [torch.zeros(units, self.hidden_size, **factory)
                for _ in self.gru_layers]

    def forward(self, x: torch.Tensor, state: list[torch.Tensor]):
        """One frame for a batch of inference units.

        Returns ``(step_mask, error_mask, new_state)`` with masks shaped
        ``(units, head_dim)``.
        """
        x = (x - self.norm_mean) / torch.sqrt(self.norm_variance)
        a = torch.nn.functional.leaky_relu(self.input_dense(x),
                                           LEAKY_RELU_SLOPE)
        new_state = []
        for layer, h in zip(self.gru_layers, state):
            a = layer(a, h)
            new_state.append(a)
        return (torch.sigmoid(self.head_step_mask(a)),
                torch.sigmoid(self.head_error_mask(a)),
                new_state)
