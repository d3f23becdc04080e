import logging
from itertools import pairwise
from typing import Optional

import torch
import torch.nn as nn
import torch.nn.functional as F

logger = logging.getLogger(__name__)

HIDDEN = (32, 64, 32)
HEADS = ("linear", "softmax")

torch.set_default_dtype(torch.float64)


class Mlp(nn.Module):
    """
    [n_in, 32, 64, 32, n_out] network with ReLU hidden layers.
    Dropout follows every hidden layer while training; its masks come from the
    network's own seeded generator so training runs replay exactly.
    """

    def __init__(self, n_in: int, n_out: int, head: str = "linear", dropout_rate: float = 0.3, seed: int = 0):
        super().__init__()
        if head not in HEADS:
            raise ValueError(f"unknown head {head}")
        if not 0.0 <= dropout_rate < 1.0:
            raise ValueError("dropout rate must lie in [0, 1)")
        self.dims = (n_in, *HIDDEN, n_out)
        self.head = head
        self.dropout_rate = dropout_rate
        self.layers = nn.ModuleList(nn.Linear(a, b, dtype=torch.float64) for a, b in pairwise(self.dims))
        self.generator = torch.Generator().manual_seed(seed)
        init = torch.Generator().manual_seed(seed)
        with torch.no_grad():
            for layer in self.layers:
                bound = 1.0 / layer.in_features**0.5
                layer.weight.copy_((torch.rand(layer.weight.shape, generator=init) * 2 - 1) * bound)
                layer.bias.copy_((torch.rand(layer.bias.shape, generator=init) * 2 - 1) * bound)

    @property
    def n_in(self) -> int:
        return self.dims[0]

    @property
    def n_out(self) -> int:
        return self.dims[-1]

    def architecture(self) -> tuple:
        return self.dims, self.head, self.dropout_rate

    def forward(self, x: torch.Tensor, logits: bool = False) -> torch.Tensor:
        if x.shape[-1] != self.n_in:
            raise ValueError(f"expected {self.n_in} inputs, got {x.shape[-1]}")
        for layer in self.layers[:-1]:
            x = F.relu(layer(x))
            if self.training and self.dropout_rate > 0:
                keep = 1.0 - self.dropout_rate
                mask = torch.bernoulli(torch.full(x.shape, keep), generator=self.generator)
                x = x * mask / keep
        x = self.layers[-1](x)
        if self.head == "softmax" and not logits:
            x = F.softmax(x, dim=-1)
        return x

    def copy_from(self, other: "Mlp") -> "Mlp":
        if other.architecture()[:2] != self.architecture()[:2]:
            raise ValueError(f"architecture mismatch: {other.dims} vs {self.dims}")
        self.load_state_dict(other.state_dict())
        return self


def mlp_forward(model: Mlp, inputs, training: bool = False) -> torch.Tensor:
    """Forward pass in the requested mode; the model's previous mode is restored."""
    was_training = model.training
    model.train(training)
    try:
        x = torch.as_tensor(inputs, dtype=torch.float64)
        if training:
            return model(x)
        with torch.no_grad():
            return model(x)
    finally:
        model.train(was_training)


def soft_update(target: nn.Module, online: nn.Module, tau: float) -> None:
    """target <- tau * online + (1 - tau) * target"""
    with torch.no_grad():
        for t, o in zip(target.parameters(), online.parameters()):
            t.mul_(1.0 - tau).add_(o, alpha=tau)


def flat_parameters(model: nn.Module) -> torch.Tensor:
    return torch.cat([p.detach().reshape(-1) for p in model.parameters()])


def clone_mlp(model: Mlp, seed: Optional[int] = None) -> Mlp:
    copy = Mlp(model.n_in, model.n_out, model.head, model.dropout_rate, seed=0 if seed is None else seed)
    return copy.copy_from(model)
