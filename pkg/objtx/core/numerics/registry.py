from collections import OrderedDict
from typing import Dict, Iterator, List, Mapping, Optional, Tuple

import numpy as np

from objtx.core.numerics.tensor import Tensor
from objtx.utils.errors import DimensionError, UsageError


class ParamRegistry:
    """
    Flat, ordered registry of learnable tensors.

    Insertion order is the checkpoint order. Each entry also records whether
    decoupled weight decay applies to it (weight matrices yes; biases,
    layer-norm affine terms and embedding tables no).
    """

    def __init__(self) -> None:
        self._tensors: "OrderedDict[str, Tensor]" = OrderedDict()
        self._decay: Dict[str, bool] = {}

    def register(self, name: str, data: np.ndarray, decay: bool = False) -> Tensor:
        if name in self._tensors:
            raise UsageError(f"Parameter {name} is already registered")
        tensor = Tensor(data, requires_grad=True, name=name)
        self._tensors[name] = tensor
        self._decay[name] = decay
        return tensor

    def replace(self, name: str, data: np.ndarray) -> Tensor:
        """Swap in new values for `name`; tensors are immutable so a fresh leaf is created."""
        old = self._tensors[name]
        if tuple(data.shape) != old.shape:
            raise DimensionError(f"{name}: shape {data.shape} does not match {old.shape}")
        tensor = Tensor(np.asarray(data, dtype=old.dtype), requires_grad=True, name=name)
        self._tensors[name] = tensor
        return tensor

    def remove(self, name: str) -> None:
        del self._tensors[name]
        del self._decay[name]

    def __getitem__(self, name: str) -> Tensor:
        return self._tensors[name]

    def __contains__(self, name: str) -> bool:
        return name in self._tensors

    def __iter__(self) -> Iterator[str]:
        return iter(self._tensors)

    def __len__(self) -> int:
        return len(self._tensors)

    def names(self) -> List[str]:
        return list(self._tensors)

    def items(self) -> List[Tuple[str, Tensor]]:
        return list(self._tensors.items())

    def decays(self, name: str) -> bool:
        return self._decay[name]

    def n_scalars(self) -> int:
        return sum(t.size for t in self._tensors.values())

    def collect_grads(self, grads: Mapping[Tensor, np.ndarray], names: Optional[List[str]] = None) -> Dict[str, np.ndarray]:
        """Map leaf gradients back to parameter names; parameters outside the graph get zeros."""
        out = {}
        for name in names or self.names():
            tensor = self._tensors[name]
            g = grads.get(tensor)
            out[name] = np.zeros_like(tensor.data) if g is None else g
        return out

    def state_arrays(self) -> "OrderedDict[str, np.ndarray]":
        return OrderedDict((name, t.data) for name, t in self._tensors.items())

    def copy(self) -> "ParamRegistry":
        clone = ParamRegistry()
        for name, tensor in self._tensors.items():
            clone.register(name, tensor.data, decay=self._decay[name])
        return clone
