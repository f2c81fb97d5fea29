"""Six-block fully convolutional feature extractor."""

from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional

import numpy as np
import torch
import torch.nn as nn

from core.config import ConvSpec
from core.exceptions import WeightMismatch


class ConvBlock(nn.Module):
    """3x3 convolution -> ReLU -> batch normalization.

    Stride-2 blocks replace pooling; padding 1 keeps stride-1 maps the same
    size and makes stride-2 maps ceil(H/2) x ceil(W/2).
    """

    def __init__(self, in_channels: int, filters: int, stride: int, momentum: float, eps: float):
        super().__init__()
        self.conv = nn.Conv2d(in_channels, filters, kernel_size=3, stride=stride, padding=1)
        self.relu = nn.ReLU()
        self.bn = nn.BatchNorm2d(filters, eps=eps, momentum=momentum)
        nn.init.kaiming_uniform_(self.conv.weight, mode="fan_in", nonlinearity="relu")
        nn.init.zeros_(self.conv.bias)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.bn(self.relu(self.conv(x)))


class WriterIndependentNet(nn.Module):
    """Convolution blocks plus a global-average-pool classification head used only in training."""

    def __init__(self, spec: Optional[ConvSpec] = None):
        super().__init__()
        self.spec = spec or ConvSpec()
        blocks = []
        in_channels = self.spec.in_channels
        for block in self.spec.blocks:
            blocks.append(ConvBlock(in_channels, block.filters, block.stride,
                                    self.spec.bn_momentum, self.spec.bn_eps))
            in_channels = block.filters
        self.blocks = nn.ModuleList(blocks)
        self.pool = nn.AdaptiveAvgPool2d(1)
        self.head = nn.Linear(in_channels, self.spec.num_classes)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        for block in self.blocks:
            x = block(x)
        return self.head(torch.flatten(self.pool(x), 1))

    def feature_maps(self, x: torch.Tensor, layers: Iterable[int]) -> Dict[int, torch.Tensor]:
        """Outputs of the requested blocks (1-based), stopping at the deepest one."""
        wanted = sorted(set(layers))
        if not wanted or wanted[0] < 1 or wanted[-1] > len(self.blocks):
            raise ValueError(f"layers must lie in 1..{len(self.blocks)}, got {wanted}")
        outputs: Dict[int, torch.Tensor] = {}
        for index, block in enumerate(self.blocks[:wanted[-1]], start=1):
            x = block(x)
            if index in wanted:
                outputs[index] = x
        return outputs


def spatial_sizes(spec: ConvSpec, side: int) -> List[int]:
    """Map side after each block for a square input of ``side`` pixels."""
    return [spec.output_size(side, layer) for layer in range(1, len(spec.blocks) + 1)]


def build_network(spec: ConvSpec) -> WriterIndependentNet:
    """Construct a network without advancing the global torch RNG."""
    with torch.random.fork_rng(devices=[]):
        return WriterIndependentNet(spec)


def tensor_shapes(spec: ConvSpec) -> "OrderedDict[str, tuple]":
    """Persisted tensor names and shapes for a spec."""
    state = build_network(spec).state_dict()
    return OrderedDict(
        (name, tuple(t.shape)) for name, t in state.items() if not name.endswith("num_batches_tracked")
    )


@dataclass
class NetWeights:
    """Trained network tensors plus training provenance."""
    spec: ConvSpec
    tensors: "OrderedDict[str, np.ndarray]"
    seed: int = 0
    epoch: int = 0
    dataset_digest: str = ""
    config_digest: str = ""
    val_accuracy: Optional[float] = None
    invert_ink: bool = True
    extra: Dict[str, object] = field(default_factory=dict)

    def validate(self) -> "NetWeights":
        """Check tensor names and shapes against the network layout and that running variances are positive."""
        expected = tensor_shapes(self.spec)
        if list(expected) != list(self.tensors):
            missing = sorted(set(expected) - set(self.tensors))
            unexpected = sorted(set(self.tensors) - set(expected))
            raise WeightMismatch(
                "Stored tensors do not match the network spec",
                {"missing": missing, "unexpected": unexpected},
            )
        for name, shape in expected.items():
            if tuple(self.tensors[name].shape) != shape:
                raise WeightMismatch(
                    f"Tensor {name} has shape {tuple(self.tensors[name].shape)}, expected {shape}",
                    {"tensor": name},
                )
            if name.endswith("running_var") and np.any(self.tensors[name] <= 0):
                raise WeightMismatch(f"Non-positive running variance in {name}", {"tensor": name})
        return self

    @classmethod
    def from_network(cls, net: WriterIndependentNet, **metadata) -> "NetWeights":
        tensors = OrderedDict(
            (name, t.detach().cpu().to(torch.float32).numpy().copy())
            for name, t in net.state_dict().items()
            if not name.endswith("num_batches_tracked")
        )
        return cls(spec=net.spec, tensors=tensors, **metadata)

    def to_network(self) -> WriterIndependentNet:
        """Build an inference-mode network holding these tensors."""
        self.validate()
        net = build_network(self.spec)
        state = net.state_dict()
        for name, value in self.tensors.items():
            state[name] = torch.from_numpy(np.array(value, dtype=np.float32))
        net.load_state_dict(state)
        net.eval()
        return net


def initial_weights(spec: Optional[ConvSpec] = None, seed: int = 0) -> NetWeights:
    """Freshly initialized, untrained weights."""
    torch.manual_seed(seed)
    return NetWeights.from_network(WriterIndependentNet(spec or ConvSpec()), seed=seed)
