"""Finite-difference gradient checks for the network."""

import copy
from dataclasses import dataclass, field
from typing import Dict, List, Tuple

import numpy as np
import torch
import torch.nn as nn

from core.logger import setup_logger
from convnet.network import WriterIndependentNet

logger = setup_logger("convnet")


@dataclass
class GradientCheckReport:
    """Worst relative error per parameter group."""
    max_relative_error: float = 0.0
    per_group: Dict[str, float] = field(default_factory=dict)
    checked: int = 0
    skipped_kinks: int = 0


def gradient_check(
    net: WriterIndependentNet,
    inputs: np.ndarray,
    targets: np.ndarray,
    eps: float = 1e-4,
    samples_per_group: int = 3,
    seed: int = 0,
    floor: float = 1e-5,
) -> GradientCheckReport:
    """Compare backprop gradients with central differences in float64.

    The network runs in training mode on the given batch, so batch
    normalization uses batch statistics. An entry is skipped as a kink when
    either perturbed pass switches any ReLU unit on or off relative to the
    unperturbed pass.
    """
    model = copy.deepcopy(net).double().train()
    x = torch.as_tensor(np.asarray(inputs, dtype=np.float64))
    if x.ndim == 3:
        x = x[:, None]
    y = torch.as_tensor(np.asarray(targets, dtype=np.int64))
    criterion = nn.CrossEntropyLoss()

    masks: List[torch.Tensor] = []

    def record(module, args, output):
        masks.append(args[0].detach() > 0)

    hooks = [m.register_forward_hook(record) for m in model.modules() if isinstance(m, nn.ReLU)]

    def loss_and_pattern() -> Tuple[float, List[torch.Tensor]]:
        masks.clear()
        with torch.no_grad():
            value = float(criterion(model(x), y))
        return value, list(masks)

    def same_pattern(a: List[torch.Tensor], b: List[torch.Tensor]) -> bool:
        return all(torch.equal(p, q) for p, q in zip(a, b))

    try:
        model.zero_grad()
        masks.clear()
        criterion(model(x), y).backward()
        baseline = list(masks)
        analytic = {name: p.grad.detach().clone() for name, p in model.named_parameters()}

        rng = np.random.default_rng(seed)
        report = GradientCheckReport()
        for name, param in model.named_parameters():
            flat = param.data.view(-1)
            picks = rng.choice(flat.numel(), size=min(samples_per_group, flat.numel()), replace=False)
            worst = 0.0
            for index in picks:
                index = int(index)
                original = float(flat[index])
                flat[index] = original + eps
                plus, plus_pattern = loss_and_pattern()
                flat[index] = original - eps
                minus, minus_pattern = loss_and_pattern()
                flat[index] = original
                if not (same_pattern(baseline, plus_pattern) and same_pattern(baseline, minus_pattern)):
                    report.skipped_kinks += 1
                    continue
                numeric = (plus - minus) / (2 * eps)
                grad = float(analytic[name].view(-1)[index])
                error = abs(grad - numeric) / max(abs(grad), abs(numeric), floor)
                worst = max(worst, error)
                report.checked += 1
            report.per_group[name] = worst
            report.max_relative_error = max(report.max_relative_error, worst)
    finally:
        for hook in hooks:
            hook.remove()

    logger.info(
        f"Gradient check: max relative error {report.max_relative_error:.2e} over "
        f"{report.checked} entries ({report.skipped_kinks} kinks skipped)"
    )
    return report
