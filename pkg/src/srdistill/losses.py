"""Distillation losses for teacher/student super-resolution training.

Conventions shared by every loss here:

* per-sample distances are L1 sums over all elements of that sample;
* a batch-level indicator ``alpha`` (one value in {0,1} per sample) gates
  how much each sample trusts the teacher: alpha_i = 1 means the teacher
  beat the student on sample i, so teacher-supervised terms are active;
* features are normalized per sample to unit global L2 norm before any
  feature-space distance is taken;
* contrastive terms draw their negatives from the rest of the batch:
  for sample i the bank holds the other samples' teacher features and
  the detached projections of the other samples' student features, so
  K = 2*(N-1) negatives per anchor. Detaching the student-derived bank
  keeps sample k's loss from back-propagating into sample i, which is
  what makes alpha_i = 0 silence sample i's gradient exactly.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import torch

from .errors import ConfigError, ShapeError

SIMILARITIES = ("euclidean", "dot_product")

# Tap weight presets: heaviest weight on the shallowest tap is the default.
TAP_WEIGHTS_SHALLOW = (0.5, 0.3, 0.2)
TAP_WEIGHTS_EQUAL = (1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0)
TAP_WEIGHTS_DEEP = (0.2, 0.3, 0.5)


@dataclass(frozen=True)
class LossConfig:
    lambda_facd: float = 4.0
    w: tuple = TAP_WEIGHTS_SHALLOW
    similarity: str = "euclidean"
    adaptive: bool = False
    infonce_temperature: float = 0.07
    eps_norm: float = 1e-8
    eps_denom: float = 1e-8

    def validate(self):
        if self.lambda_facd < 0:
            raise ConfigError(f"lambda_facd must be >= 0, got {self.lambda_facd}")
        if len(self.w) < 1 or any(x < 0 for x in self.w):
            raise ConfigError(f"tap weights must be non-negative, got {self.w}")
        if abs(sum(self.w) - 1.0) > 1e-9:
            raise ConfigError(f"tap weights must sum to 1, got {self.w}")
        if self.similarity not in SIMILARITIES:
            raise ConfigError(
                f"similarity must be one of {SIMILARITIES}, got {self.similarity!r}")
        if self.infonce_temperature <= 0:
            raise ConfigError(
                f"infonce_temperature must be > 0, got {self.infonce_temperature}")
        if self.eps_norm <= 0 or self.eps_denom <= 0:
            raise ConfigError("eps_norm and eps_denom must be > 0")


@dataclass
class LossBreakdown:
    """Scalar view of one training step's objective.

    ``total = l_gt + l_teacher + lambda_facd * l_facd`` (l_facd is stored
    unscaled). ``alpha_mean`` is the fraction of samples that trusted the
    teacher this step.
    """

    l_gt: float = 0.0
    l_teacher: float = 0.0
    l_facd: float = 0.0
    total: float = 0.0
    alpha_mean: float = 0.0

    def as_dict(self) -> dict:
        return {"l_gt": self.l_gt, "l_teacher": self.l_teacher,
                "l_facd": self.l_facd, "total": self.total,
                "alpha_mean": self.alpha_mean}


def _check_4d(name: str, x):
    if not torch.is_tensor(x):
        raise ShapeError(f"{name} must be a tensor, got {type(x).__name__}")
    if x.ndim != 4:
        raise ShapeError(f"{name} must be [N,C,H,W], got shape {tuple(x.shape)}")


def _check_same_shape(name_a: str, a, name_b: str, b):
    if tuple(a.shape) != tuple(b.shape):
        raise ShapeError(f"{name_a} shape {tuple(a.shape)} != {name_b} shape "
                         f"{tuple(b.shape)}")


def _check_alpha(alpha, n: int):
    if not torch.is_tensor(alpha) or alpha.ndim != 1 or alpha.shape[0] != n:
        got = tuple(alpha.shape) if torch.is_tensor(alpha) else type(alpha).__name__
        raise ShapeError(f"alpha must be a [{n}] vector, got {got}")


def _l1_per_sample(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    return (a - b).abs().reshape(a.shape[0], -1).sum(dim=1)


def adaptive_indicator(sr_s: torch.Tensor, sr_t: torch.Tensor,
                       gt: torch.Tensor) -> torch.Tensor:
    """Per-sample gate: 0 where the student's L1 error is strictly below the
    teacher's, 1 otherwise (ties trust the teacher). No gradient flows
    through the comparison."""
    _check_4d("sr_s", sr_s)
    _check_4d("sr_t", sr_t)
    _check_4d("gt", gt)
    _check_same_shape("sr_s", sr_s, "gt", gt)
    _check_same_shape("sr_t", sr_t, "gt", gt)
    with torch.no_grad():
        d_s = _l1_per_sample(sr_s, gt)
        d_t = _l1_per_sample(sr_t, gt)
        alpha = (d_s >= d_t).to(sr_s.dtype)
    return alpha


def image_loss_terms(sr_s, sr_t, gt, alpha):
    """The two image-space terms, separately: reconstruction vs imitation.

    reconstruction = (1/2N) * sum_i (2 - alpha_i) * |sr_s_i - gt_i|_1
    imitation      = (1/2N) * sum_i alpha_i * |sr_s_i - sr_t_i|_1

    ``sr_t=None`` is allowed when alpha is all zeros (no teacher in play).
    """
    _check_4d("sr_s", sr_s)
    _check_4d("gt", gt)
    _check_same_shape("sr_s", sr_s, "gt", gt)
    n = sr_s.shape[0]
    _check_alpha(alpha, n)
    alpha = alpha.to(sr_s.dtype)
    d_gt = _l1_per_sample(sr_s, gt)
    l_gt = ((2.0 - alpha) * d_gt).sum() / (2.0 * n)
    if sr_t is None:
        if bool((alpha != 0).any()):
            raise ShapeError("sr_t=None requires alpha to be all zeros")
        l_teacher = torch.zeros((), dtype=sr_s.dtype, device=sr_s.device)
    else:
        _check_4d("sr_t", sr_t)
        _check_same_shape("sr_t", sr_t, "sr_s", sr_s)
        l_teacher = (alpha * _l1_per_sample(sr_s, sr_t)).sum() / (2.0 * n)
    return l_gt, l_teacher


def image_loss(sr_s, sr_t, gt, alpha) -> torch.Tensor:
    """Gated image-space loss: reconstruction plus teacher imitation."""
    l_gt, l_teacher = image_loss_terms(sr_s, sr_t, gt, alpha)
    return l_gt + l_teacher


def normalize_features(f: torch.Tensor, eps: float = 1e-8) -> torch.Tensor:
    """Scale each sample to (approximately) unit global L2 norm:
    f_i / (|f_i|_2 + eps), the norm taken over all C*h*w elements."""
    _check_4d("features", f)
    if eps <= 0:
        raise ConfigError(f"eps must be > 0, got {eps}")
    norm = f.reshape(f.shape[0], -1).norm(p=2, dim=1).reshape(-1, 1, 1, 1)
    return f / (norm + eps)


def _contrastive_sum(anchor, pos, alpha, cfg: LossConfig) -> torch.Tensor:
    """sum_i alpha_i * contrast(anchor_i, pos_i, bank_i) for one tap level.

    bank_i = other samples' positives + other samples' detached anchors.
    euclidean: ratio of the positive L1 distance to the summed negative
    L1 distances. dot_product: cross-entropy of scaled similarities with
    the positive in slot 0.
    """
    n = anchor.shape[0]
    if n < 2:
        raise ShapeError(f"contrastive losses need batch >= 2, got {n}")
    a_flat = anchor.reshape(n, -1)
    p_flat = pos.reshape(n, -1)
    bank_detached = a_flat.detach()
    total = anchor.new_zeros(())
    idx = torch.arange(n, device=anchor.device)
    for i in range(n):
        others = idx != i
        neg = torch.cat([p_flat[others], bank_detached[others]], dim=0)
        if cfg.similarity == "euclidean":
            num = (a_flat[i] - p_flat[i]).abs().sum()
            den = (a_flat[i].unsqueeze(0) - neg).abs().sum(dim=1).sum()
            total = total + alpha[i] * num / (den + cfg.eps_denom)
        else:
            tau = cfg.infonce_temperature
            logit_pos = (a_flat[i] * p_flat[i]).sum() / tau
            logit_neg = (a_flat[i].unsqueeze(0) * neg).sum(dim=1) / tau
            logits = torch.cat([logit_pos.reshape(1), logit_neg])
            total = total + alpha[i] * (torch.logsumexp(logits, 0) - logit_pos)
    return total


def _check_tap_lists(taps_s, taps_t, regressors, cfg):
    if len(taps_s) != len(taps_t):
        raise ShapeError(f"tap count mismatch: student {len(taps_s)}, "
                         f"teacher {len(taps_t)}")
    if len(cfg.w) != len(taps_s):
        raise ConfigError(f"{len(taps_s)} taps but {len(cfg.w)} tap weights")
    if regressors is not None and len(regressors) != len(taps_s):
        raise ShapeError(f"{len(taps_s)} taps but {len(regressors)} regressors")
    n = None
    for j, (fs, ft) in enumerate(zip(taps_s, taps_t), start=1):
        _check_4d(f"taps_s[{j}]", fs)
        _check_4d(f"taps_t[{j}]", ft)
        if n is None:
            n = fs.shape[0]
        if fs.shape[0] != n or ft.shape[0] != n:
            raise ShapeError("all taps must share the batch dimension")
        if fs.shape[2:] != ft.shape[2:]:
            raise ShapeError(
                f"tap {j}: spatial {tuple(fs.shape[2:])} != {tuple(ft.shape[2:])}")
    return n


def facd_loss(taps_s, taps_t, regressors, alpha, cfg: LossConfig) -> torch.Tensor:
    """Feature-space adaptive contrastive loss over three tap levels.

    Each student tap is unit-normalized, projected by its regressor into
    the teacher's channel width, and contrasted against the teacher's
    normalized tap, with in-batch negatives. Terms are gated per sample
    by ``alpha`` and summed (not averaged) over samples, weighted per tap
    by ``cfg.w``.
    """
    cfg.validate()
    n = _check_tap_lists(taps_s, taps_t, regressors, cfg)
    _check_alpha(alpha, n)
    alpha = alpha.to(taps_s[0].dtype)
    total = taps_s[0].new_zeros(())
    for j, (fs, ft, reg) in enumerate(zip(taps_s, taps_t, regressors)):
        a = reg(normalize_features(fs, cfg.eps_norm))
        p = normalize_features(ft, cfg.eps_norm)
        _check_same_shape(f"regressed taps_s[{j + 1}]", a, f"taps_t[{j + 1}]", p)
        total = total + cfg.w[j] * _contrastive_sum(a, p, alpha, cfg)
    return total


def icd_loss(sr_s, sr_t, alpha, cfg: LossConfig) -> torch.Tensor:
    """Image-domain variant: the same contrastive form applied to the
    normalized output images directly (no regressor, single level)."""
    cfg.validate()
    _check_4d("sr_s", sr_s)
    _check_4d("sr_t", sr_t)
    _check_same_shape("sr_s", sr_s, "sr_t", sr_t)
    _check_alpha(alpha, sr_s.shape[0])
    alpha = alpha.to(sr_s.dtype)
    a = normalize_features(sr_s, cfg.eps_norm)
    p = normalize_features(sr_t, cfg.eps_norm)
    return _contrastive_sum(a, p, alpha, cfg)


def plain_fd_loss(taps_s, taps_t, regressors, cfg: LossConfig) -> torch.Tensor:
    """Non-contrastive feature matching: batch-mean of the tap-weighted L1
    distances between projected student taps and teacher taps."""
    cfg.validate()
    n = _check_tap_lists(taps_s, taps_t, regressors, cfg)
    total = taps_s[0].new_zeros(())
    for j, (fs, ft, reg) in enumerate(zip(taps_s, taps_t, regressors)):
        a = reg(normalize_features(fs, cfg.eps_norm))
        p = normalize_features(ft, cfg.eps_norm)
        _check_same_shape(f"regressed taps_s[{j + 1}]", a, f"taps_t[{j + 1}]", p)
        total = total + cfg.w[j] * _l1_per_sample(a, p).sum()
    return total / n


def total_loss(l_gt, l_teacher, l_feature, cfg: LossConfig,
               alpha) -> LossBreakdown:
    """Assemble the scalar breakdown: total = image terms + lambda * feature."""
    to_f = lambda v: float(v.detach()) if torch.is_tensor(v) else float(v)
    b = LossBreakdown(
        l_gt=to_f(l_gt),
        l_teacher=to_f(l_teacher),
        l_facd=to_f(l_feature),
        alpha_mean=float(alpha.detach().mean()) if torch.is_tensor(alpha)
        else float(alpha),
    )
    b.total = b.l_gt + b.l_teacher + cfg.lambda_facd * b.l_facd
    return b
