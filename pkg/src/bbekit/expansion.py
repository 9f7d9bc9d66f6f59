"""Depth expansion: duplicate encoder blocks behind zero-initialized gates.

Each original block gets ``multiplier - 1`` copies inserted directly after
it.  A copy computes ``y = x + ZLL(block(x))`` where ZLL is a linear layer
whose weight and bias start at zero, so the expanded model reproduces the
source model's outputs exactly until training moves the ZLL away from zero.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, StateError
from .model import BLOCK_PARAM_SHAPES, EncoderModel

FREEZE_POLICIES = ("freeze-original", "non-frozen", "head-only")


@dataclass(frozen=True)
class ExpansionSpec:
    multiplier: int = 2
    freeze_policy: str = "freeze-original"
    zll_init: str = "zeros"

    def __post_init__(self):
        if self.multiplier not in (2, 3):
            raise ConfigError(f"multiplier must be 2 or 3, got {self.multiplier}")
        if self.freeze_policy not in FREEZE_POLICIES:
            raise ConfigError(f"unknown freeze policy {self.freeze_policy!r}")
        if self.zll_init != "zeros":
            raise ConfigError(f"unsupported zll init {self.zll_init!r}")

    def to_dict(self) -> dict:
        return {"multiplier": self.multiplier, "freeze_policy": self.freeze_policy,
                "zll_init": self.zll_init}

    @classmethod
    def from_dict(cls, d: dict) -> "ExpansionSpec":
        return cls(multiplier=int(d.get("multiplier", 2)),
                   freeze_policy=d.get("freeze_policy", "freeze-original"),
                   zll_init=d.get("zll_init", "zeros"))


def expand(model: EncoderModel, spec: ExpansionSpec) -> EncoderModel:
    """Return an expanded deep copy; the input model is left untouched."""
    if model.expansion is not None:
        raise StateError("model is already expanded; expansion is single-shot")
    if any(b.origin != "original" for b in model.block_index):
        raise StateError("block index contains non-original blocks")

    out = model.clone()
    d = out.config.d_model
    new_index = []
    for info in out.block_index:
        new_index.append(info)
        src_prefix = f"block.{info.block_id}."
        for k in range(1, spec.multiplier):
            copy_id = f"{info.block_id}x{k}"
            copy_prefix = f"block.{copy_id}."
            for suffix, _ in BLOCK_PARAM_SHAPES:
                out.store.add(copy_prefix + suffix,
                              out.store.value(src_prefix + suffix).copy())
            out.store.add(copy_prefix + "zll.weight", np.zeros((d, d)))
            out.store.add(copy_prefix + "zll.bias", np.zeros(d))
            new_index.append(type(info)(copy_id, "expanded", trainable=True,
                                        source=info.block_id))
    out.block_index = new_index
    out.config.n_blocks = len(new_index)
    out.expansion = {
        "multiplier": spec.multiplier,
        "freeze_policy": spec.freeze_policy,
        "source_blocks": [b.block_id for b in model.block_index],
    }
    apply_freeze_policy(out, spec.freeze_policy)
    return out


def apply_freeze_policy(model: EncoderModel, policy: str) -> None:
    """Set frozen flags on the store and trainable flags on the block index."""
    if policy not in FREEZE_POLICIES:
        raise ConfigError(f"unknown freeze policy {policy!r}")

    def frozen(name: str) -> bool:
        if name.startswith("frontend."):
            return True  # the frontend stays fixed under every policy
        if policy == "head-only":
            return not name.startswith("head.")
        if policy == "non-frozen":
            return False
        if name.startswith("head."):
            return False
        block_id = name.split(".")[1]
        return model.block_info(block_id).origin == "original"

    model.store.freeze_where(frozen)
    for info in model.block_index:
        info.trainable = not frozen(f"block.{info.block_id}.ln1.gain")
    if model.expansion is not None:
        model.expansion["freeze_policy"] = policy


def verify_preservation(base: EncoderModel, expanded: EncoderModel,
                        probes: list) -> float:
    """Max absolute logit difference between the two models over the probes.

    With zero-initialized ZLL gates this must be exactly 0.0: every copy
    contributes ``x + 0`` and the surviving compute path is the same float64
    operation sequence as in the source model.
    """
    if not probes:
        raise ConfigError("preservation check needs at least one probe")
    if expanded.expansion is None:
        raise StateError("second model carries no expansion record")
    if expanded.expansion["source_blocks"] != [b.block_id for b in base.block_index]:
        raise StateError("models are structurally unrelated")
    worst = 0.0
    for probe in probes:
        if isinstance(probe, tuple):
            frames, pad_mask = probe
        else:
            frames, pad_mask = probe, None
        diff = np.abs(base.logits(frames, pad_mask) - expanded.logits(frames, pad_mask))
        worst = max(worst, float(diff.max()))
    return worst


def remove_expanded_blocks(model: EncoderModel) -> EncoderModel:
    """Inverse of expand while the ZLL gates are still zero-equivalent in
    spirit: drop every copied block, keeping original order."""
    if model.expansion is None:
        raise StateError("model is not expanded")
    out = model.clone()
    keep = [b for b in out.block_index if b.origin == "original"]
    dropped = [b.block_id for b in out.block_index if b.origin == "expanded"]
    for block_id in dropped:
        prefix = f"block.{block_id}."
        for name in [n for n in out.store.names() if n.startswith(prefix)]:
            out.store.remove(name)
    out.block_index = keep
    out.config.n_blocks = len(keep)
    out.expansion = None
    for info in out.block_index:
        info.trainable = True
    return out
