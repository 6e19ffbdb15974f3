"""Weight-distribution regularization and group progressive guidance."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .. import diffcore as dc
from ..diffcore import Tensor, as_tensor
from ..errors import ContractError, DegenerateInputWarning

DEFAULT_KURTOSIS_TARGET = 1.8


def _standardized_moment(w, k: int) -> Tensor:
    w = as_tensor(w)
    m2 = dc.central_moment(w, 2)
    if not m2.data > 0:
        warnings.warn("zero-variance tensor: moment defined as 0", DegenerateInputWarning, stacklevel=3)
        return Tensor(0.0)
    return dc.central_moment(w, k) / m2 ** (k / 2)


def skewness(w) -> Tensor:
    """Population skewness E[((w - mu) / sigma)^3]."""
    return _standardized_moment(w, 3)


def kurtosis(w) -> Tensor:
    """Population (non-excess) kurtosis E[((w - mu) / sigma)^4]."""
    return _standardized_moment(w, 4)


def wdr_loss(weights, kurtosis_target: float = DEFAULT_KURTOSIS_TARGET) -> Tensor:
    """Mean over layers of skew^2 + (kurt - target)^2."""
    weights = list(weights)
    if not weights:
        raise ContractError("wdr_loss needs at least one layer")
    total = Tensor(0.0)
    for w in weights:
        total = total + skewness(w) ** 2 + (kurtosis(w) - kurtosis_target) ** 2
    return total * (1.0 / len(weights))


@dataclass
class GroupLogits:
    high: Tensor
    rand: Tensor
    low: Tensor
    labels: np.ndarray


def gpg_losses(g: GroupLogits, lam: float):
    """Return ``(loss_high, loss_rand, loss_low, total)``.

    The random group distills from the highest group and the lowest group
    from the random group; teachers are detached.
    """
    if not 0.0 <= lam <= 1.0:
        raise ContractError(f"lambda must lie in [0, 1], got {lam}")
    y = g.labels
    loss_h = dc.cross_entropy(g.high, y)
    loss_r = lam * dc.kl_divergence(g.rand, g.high.detach()) + (1 - lam) * dc.cross_entropy(g.rand, y)
    loss_l = lam * dc.kl_divergence(g.low, g.rand.detach()) + (1 - lam) * dc.cross_entropy(g.low, y)
    return loss_h, loss_r, loss_l, loss_h + loss_r + loss_l
