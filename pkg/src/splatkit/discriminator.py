"""Small fully connected patch discriminator with hand-written backpropagation."""
from __future__ import annotations

from dataclasses import dataclass
from typing import TYPE_CHECKING, NamedTuple

import numpy as np

from .exceptions import DimensionMismatchError, NonFiniteError
from .losses import hinge_d_gradient, hinge_d_loss
from .optim import AdamState, Schedule, adam_step

if TYPE_CHECKING:
    from collections.abc import Sequence

    from numpy.typing import ArrayLike, NDArray

    FloatArray = NDArray[np.float64]

LEAK = 0.2


class _Cache(NamedTuple):
    inputs: FloatArray
    pre: list[FloatArray]
    post: list[FloatArray]


@dataclass
class Discriminator:
    """MLP ``patch -> hidden... -> score`` with leaky-ReLU hidden layers.

    All weights and biases live in one flat vector so they can be optimised with
    :func:`splatkit.optim.adam_step`.
    """

    params: FloatArray
    sizes: tuple[int, ...]
    patch: int = 16

    @classmethod
    def create(cls, rng: np.random.Generator, patch: int = 16, hidden: Sequence[int] = (128, 64)) -> Discriminator:
        """He-initialised network for ``patch × patch × 3`` inputs."""
        sizes = (patch * patch * 3, *hidden, 1)
        chunks = []
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:], strict=True):
            chunks.append(rng.standard_normal((fan_in, fan_out)).reshape(-1) * np.sqrt(2.0 / fan_in))
            chunks.append(np.zeros(fan_out))
        return cls(np.concatenate(chunks), sizes, patch)

    def layers(self, params: FloatArray | None = None) -> list[tuple[FloatArray, FloatArray]]:
        """``(weight, bias)`` views into the flat parameters."""
        flat = self.params if params is None else params
        out, offset = [], 0
        for fan_in, fan_out in zip(self.sizes[:-1], self.sizes[1:], strict=True):
            weight = flat[offset : offset + fan_in * fan_out].reshape(fan_in, fan_out)
            offset += fan_in * fan_out
            bias = flat[offset : offset + fan_out]
            offset += fan_out
            out.append((weight, bias))
        return out

    def _flatten(self, patches: ArrayLike) -> FloatArray:
        x = np.asarray(patches, dtype=np.float64)
        x = x.reshape(x.shape[0], -1)
        if x.shape[1] != self.sizes[0]:
            msg = f"Discriminator expects {self.sizes[0]} inputs per patch, got {x.shape[1]}."
            raise DimensionMismatchError(msg)
        return x

    def _forward(self, patches: ArrayLike, params: FloatArray | None = None) -> tuple[FloatArray, _Cache]:
        x = self._flatten(patches)
        pre, post = [], [x]
        layers = self.layers(params)
        h = x
        for i, (weight, bias) in enumerate(layers):
            z = h @ weight + bias
            pre.append(z)
            h = z if i == len(layers) - 1 else np.where(z > 0, z, LEAK * z)
            post.append(h)
        return h[:, 0], _Cache(x, pre, post)

    def __call__(self, patches: ArrayLike, params: FloatArray | None = None) -> FloatArray:
        """Scores of a batch of patches, shape ``(B,)``."""
        return self._forward(patches, params)[0]

    def backward(self, patches: ArrayLike, grad_scores: ArrayLike) -> tuple[FloatArray, FloatArray]:
        """Gradients with respect to the flat parameters and to the input patches."""
        _, cache = self._forward(patches)
        layers = self.layers()
        grad = np.asarray(grad_scores, dtype=np.float64).reshape(-1, 1)
        chunks: list[FloatArray] = []
        for i in range(len(layers) - 1, -1, -1):
            weight, _ = layers[i]
            if i < len(layers) - 1:
                grad = grad * np.where(cache.pre[i] > 0, 1.0, LEAK)
            chunks.append(grad.sum(axis=0))
            chunks.append((cache.post[i].T @ grad).reshape(-1))
            grad = grad @ weight.T
        params_grad = np.concatenate(chunks[::-1])
        return params_grad, grad.reshape(np.shape(patches))


@dataclass
class DiscriminatorTrainer:
    """Discriminator and its own Adam state."""

    network: Discriminator
    state: AdamState

    @classmethod
    def create(cls, rng: np.random.Generator, patch: int = 16, lr: float = 1e-3) -> DiscriminatorTrainer:  # noqa: D102
        network = Discriminator.create(rng, patch)
        return cls(network, AdamState.zeros(network.params.size, Schedule(lr, lr, 1)))

    def step(self, real: ArrayLike, fake: ArrayLike) -> float:
        """One hinge-loss update; returns the loss before the update."""
        real_scores, fake_scores = self.network(real), self.network(fake)
        loss = hinge_d_loss(real_scores, fake_scores)
        g_real, g_fake = hinge_d_gradient(real_scores, fake_scores)
        grad = self.network.backward(real, g_real)[0] + self.network.backward(fake, g_fake)[0]
        if not np.all(np.isfinite(grad)):
            msg = "Discriminator gradient is not finite."
            raise NonFiniteError(msg)
        self.network.params, self.state = adam_step(self.network.params, grad, self.state)
        return loss

    def accuracy(self, real: ArrayLike, fake: ArrayLike) -> float:
        """Fraction of patches on the correct side of zero."""
        real_scores, fake_scores = self.network(real), self.network(fake)
        hits = np.count_nonzero(real_scores > 0) + np.count_nonzero(fake_scores < 0)
        return hits / (real_scores.size + fake_scores.size)


__all__ = ["Discriminator", "DiscriminatorTrainer"]
