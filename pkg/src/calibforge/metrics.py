"""Regression metrics for label quality and model evaluation: MAE, relative
MAE, and the averaged per-dimension correlation coefficient.

Conventions are pinned so reports stay comparable: MAE is the per-electrode
Euclidean point distance in label units (a per-coordinate variant exists
behind a flag), rMAE and aCC are computed per output dimension and then
averaged, and stds are population stds throughout.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# Dimensions whose target spread is below this are excluded from rMAE and
# contribute the degenerate value 0 to aCC.
ZERO_VARIANCE_TOL = 1e-12


@dataclass(frozen=True)
class RegressionReport:
    mae_mean: float
    mae_std: float
    rmae: float
    acc: float
    n_samples: int
    n_outputs: int
    mae_convention: str = "euclidean"

    def to_json(self) -> dict:
        return {
            "mae_mean": self.mae_mean,
            "mae_std": self.mae_std,
            "rmae": self.rmae,
            "acc": self.acc,
            "n_samples": self.n_samples,
            "n_outputs": self.n_outputs,
            "mae_convention": self.mae_convention,
        }


def _check_shapes(pred, target) -> tuple[np.ndarray, np.ndarray]:
    pred = np.asarray(pred, dtype=float)
    target = np.asarray(target, dtype=float)
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch: pred {pred.shape} vs target {target.shape}")
    if pred.ndim != 2 or pred.shape[0] < 1:
        raise ValueError(f"expected (S, D) arrays with S >= 1, got {pred.shape}")
    return pred, target


def mae(
    pred, target, point_dim: int = 3, per_coordinate: bool = False
) -> tuple[float, float]:
    """Mean absolute error and its population std.

    By default each row is split into points of ``point_dim`` coordinates
    and the error is the Euclidean distance per point (meters for 3D labels,
    pixels for 2D). With ``per_coordinate`` the error is the plain absolute
    difference pooled over every coordinate.
    """
    pred, target = _check_shapes(pred, target)
    if per_coordinate:
        errors = np.abs(pred - target).reshape(-1)
    else:
        if point_dim < 1 or pred.shape[1] % point_dim != 0:
            raise ValueError(
                f"output width {pred.shape[1]} is not divisible by "
                f"point_dim {point_dim}"
            )
        diff = (pred - target).reshape(pred.shape[0], -1, point_dim)
        errors = np.sqrt(np.einsum("spc,spc->sp", diff, diff)).reshape(-1)
    return float(errors.mean()), float(errors.std())


def rmae(pred, target) -> float:
    """Mean absolute error per dimension over the target's std, averaged.

    Dimensions whose target variance is (numerically) zero are excluded;
    if every dimension is degenerate there is nothing to normalize by and a
    ValueError is raised.
    """
    pred, target = _check_shapes(pred, target)
    target_std = target.std(axis=0)
    usable = target_std > ZERO_VARIANCE_TOL
    if not usable.any():
        raise ValueError("targets have zero variance in every dimension")
    abs_err = np.abs(pred - target).mean(axis=0)
    return float((abs_err[usable] / target_std[usable]).mean())


def acc(pred, target) -> float:
    """Average per-dimension Pearson correlation between pred and target.

    A dimension where either series has zero variance contributes the
    defined degenerate value 0. Requires at least two samples.
    """
    pred, target = _check_shapes(pred, target)
    if pred.shape[0] < 2:
        raise ValueError("correlation needs at least 2 samples")
    pc = pred - pred.mean(axis=0)
    tc = target - target.mean(axis=0)
    pred_std = pred.std(axis=0)
    target_std = target.std(axis=0)
    corr = np.zeros(pred.shape[1])
    ok = (pred_std > ZERO_VARIANCE_TOL) & (target_std > ZERO_VARIANCE_TOL)
    if ok.any():
        cov = (pc[:, ok] * tc[:, ok]).mean(axis=0)
        corr[ok] = cov / (pred_std[ok] * target_std[ok])
    return float(corr.mean())


def report(pred, target, point_dim: int = 3) -> RegressionReport:
    """All three metrics in one record."""
    pred, target = _check_shapes(pred, target)
    mae_mean, mae_std = mae(pred, target, point_dim=point_dim)
    return RegressionReport(
        mae_mean=mae_mean,
        mae_std=mae_std,
        rmae=rmae(pred, target),
        acc=acc(pred, target),
        n_samples=pred.shape[0],
        n_outputs=pred.shape[1],
    )
