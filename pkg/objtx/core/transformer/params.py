from typing import List, Optional

import numpy as np

from objtx.core.models.models import ModelConfig
from objtx.core.numerics.registry import ParamRegistry
from objtx.core.numerics.tensor import PRECISIONS, Tensor
from objtx.utils.errors import UsageError

INIT_STD = 0.02


def truncated_normal(rng: np.random.Generator, shape, std: float = INIT_STD, bound: float = 2.0) -> np.ndarray:
    """Normal(0, std) samples, redrawn until they fall within `bound` standard deviations."""
    out = rng.standard_normal(shape)
    outside = np.abs(out) > bound
    while outside.any():
        out[outside] = rng.standard_normal(int(outside.sum()))
        outside = np.abs(out) > bound
    return out * std


class ModelParams:
    """
    Every learnable tensor of the object transformer, held in one ordered registry.

    Names are stable and double as checkpoint keys:
    embed.* (input projections and tables), encoder.layer{i}.*, head.task.*,
    head.mask.*, head.compat.* and, once added, head.fusion.*.
    """

    def __init__(self, config: ModelConfig, registry: ParamRegistry):
        self.config = config
        self.registry = registry

    @property
    def dtype(self) -> type:
        return PRECISIONS[self.config.precision]

    def __getitem__(self, name: str) -> Tensor:
        return self.registry[name]

    def __contains__(self, name: str) -> bool:
        return name in self.registry

    def names(self, prefix: str = "") -> List[str]:
        return [n for n in self.registry.names() if n.startswith(prefix)]

    @classmethod
    def initialize(
        cls,
        config: ModelConfig,
        rng: np.random.Generator,
        task_outputs: int = 1,
        compat_dim: Optional[int] = None,
    ) -> "ModelParams":
        """Truncated-normal(0.02) weights and tables, zero biases, unit layer-norm gain."""
        dtype = PRECISIONS[config.precision]
        reg = ParamRegistry()
        h = config.hidden

        def weight(name, shape, decay=True):
            reg.register(name, truncated_normal(rng, shape).astype(dtype), decay=decay)

        def zeros(name, shape):
            reg.register(name, np.zeros(shape, dtype=dtype), decay=False)

        def ones(name, shape):
            reg.register(name, np.ones(shape, dtype=dtype), decay=False)

        weight("embed.W_feat", (config.D_z, h))
        weight("embed.W_spatial", (4, h))
        zeros("embed.b", (h,))
        weight("embed.W_pos", (3, h))
        weight("embed.E_instance", (config.n_instance_slots, h), decay=False)
        weight("embed.E_shot", (config.n_shot_slots, h), decay=False)
        weight("embed.E_cls", (h,), decay=False)
        weight("embed.z_mask", (config.D_z,), decay=False)
        for i in range(config.layers):
            p = f"encoder.layer{i}"
            for proj in ("q", "k", "v", "o"):
                weight(f"{p}.attn.W_{proj}", (h, h))
                zeros(f"{p}.attn.b_{proj}", (h,))
            ones(f"{p}.ln1.gamma", (h,))
            zeros(f"{p}.ln1.beta", (h,))
            weight(f"{p}.ffn.W_1", (h, config.ffn_dim))
            zeros(f"{p}.ffn.b_1", (config.ffn_dim,))
            weight(f"{p}.ffn.W_2", (config.ffn_dim, h))
            zeros(f"{p}.ffn.b_2", (h,))
            ones(f"{p}.ln2.gamma", (h,))
            zeros(f"{p}.ln2.beta", (h,))
        weight("head.task.W", (h, task_outputs))
        zeros("head.task.b", (task_outputs,))
        weight("head.mask.W_1", (h, h))
        zeros("head.mask.b_1", (h,))
        weight("head.mask.W_2", (h, config.d_label))
        zeros("head.mask.b_2", (config.d_label,))
        weight("head.compat.W", (h, compat_dim or h))
        zeros("head.compat.b", (compat_dim or h,))
        return cls(config, reg)

    def reset_task_head(self, n_outputs: int, rng: np.random.Generator) -> None:
        """Fresh task head with `n_outputs` outputs (classes, or 1 for regression)."""
        h = self.config.hidden
        self.registry.remove("head.task.W")
        self.registry.remove("head.task.b")
        self.registry.register("head.task.W", truncated_normal(rng, (h, n_outputs)).astype(self.dtype), decay=True)
        self.registry.register("head.task.b", np.zeros((n_outputs,), dtype=self.dtype), decay=False)

    def add_fusion_head(self, n_classes: int, rng: np.random.Generator) -> None:
        """
        Late-fusion layer over [head_mask hidden ; short-term logits].

        The short-term rows start as the identity, so the untrained layer reproduces
        the short-term prediction.
        """
        if "head.fusion.W" in self.registry:
            raise UsageError("fusion head already present")
        W = np.concatenate([truncated_normal(rng, (self.config.hidden, n_classes)), np.eye(n_classes)], axis=0)
        self.registry.register("head.fusion.W", W.astype(self.dtype), decay=True)
        self.registry.register("head.fusion.b", np.zeros((n_classes,), dtype=self.dtype), decay=False)

    def copy(self) -> "ModelParams":
        return ModelParams(self.config.model_copy(), self.registry.copy())
