"""Local surrogate explanations for a single arm's prediction."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..exceptions import UsageError


@dataclass(frozen=True)
class Explanation:
    arm: int
    contributions: np.ndarray
    intercept: float
    fidelity: float
    regularized: bool = False


def _arm_predictor(model, arm):
    if hasattr(model, "predict_proba"):
        return lambda Z: np.asarray(model.predict_proba(Z), dtype=np.float64)[:, arm]
    if callable(model):
        return lambda Z: np.asarray(model(Z), dtype=np.float64)
    raise UsageError("model must expose predict_proba or be callable")


def explain(model, traits, arm: int, n_samples: int = 500, kernel_width: float | None = None,
            seed: int = 0, scale: float = 1.0) -> Explanation:
    """Fit a kernel-weighted linear surrogate of one arm around ``traits``.

    Perturbations add ``N(0, scale**2)`` noise to every trait; sample weights
    are ``exp(-d**2 / kernel_width**2)`` for distance ``d`` to the explained
    point. The surrogate is fitted on offsets from ``traits``, so ``intercept``
    approximates the arm's probability at the point itself. ``fidelity`` is the
    weighted R^2 of the surrogate, clipped to [0, 1].
    """
    x = np.asarray(traits, dtype=np.float64).ravel()
    m = x.size
    if n_samples < m + 2:
        raise UsageError(f"need at least {m + 2} perturbation samples, got {n_samples}")
    if kernel_width is None:
        kernel_width = 0.75 * np.sqrt(m) * scale
    if not kernel_width > 0:
        raise UsageError("kernel_width must be > 0")
    rng = np.random.default_rng(seed)
    offsets = rng.normal(0.0, scale, size=(n_samples, m))
    target = _arm_predictor(model, arm)(x + offsets)
    weights = np.exp(-np.sum(offsets**2, axis=1) / kernel_width**2)

    design = np.hstack([np.ones((n_samples, 1)), offsets])
    gram = design.T @ (weights[:, None] * design)
    rhs = design.T @ (weights * target)
    regularized = np.linalg.matrix_rank(gram) < gram.shape[0]
    if regularized:
        gram = gram + 1e-8 * np.trace(gram) / gram.shape[0] * np.eye(gram.shape[0])
    beta = np.linalg.solve(gram, rhs)

    resid = target - design @ beta
    sw = weights.sum()
    mean = (weights @ target) / sw
    ss_tot = weights @ (target - mean) ** 2
    ss_res = weights @ resid**2
    scale_ref = max(1.0, float(weights @ target**2))
    if ss_tot <= 1e-24 * scale_ref:
        fidelity = 1.0 if ss_res <= 1e-24 * scale_ref else 0.0
    else:
        fidelity = float(np.clip(1.0 - ss_res / ss_tot, 0.0, 1.0))
    return Explanation(int(arm), beta[1:], float(beta[0]), fidelity, bool(regularized))
