"""Training loop: distillation modes, schedule, checkpoints, ablations.

Reproducibility model: everything random is a pure function of
(cfg.seed, step). Weight init uses seeds derived from cfg.seed with
fixed tags; the batch for step t uses a seed derived from (cfg.seed, t).
Resuming from a step checkpoint therefore consumes exactly the batches
the uninterrupted run would have seen, and two runs with the same config
and seed produce byte-identical checkpoints.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import torch

from . import checkpoint as ckpt
from . import models as M
from .data import ImageSet, sample_batch
from .errors import CheckpointMismatch, ConfigError, NonFiniteLoss, ShapeError
from .evaluation import EvalReport, evaluate
from .losses import (LossBreakdown, LossConfig, TAP_WEIGHTS_DEEP,
                     TAP_WEIGHTS_EQUAL, TAP_WEIGHTS_SHALLOW,
                     adaptive_indicator, facd_loss, icd_loss, image_loss_terms,
                     plain_fd_loss, total_loss)

MODES = ("baseline", "image_kd", "plain_fd", "icd", "fcd", "facd",
         "infonce_fcd")

# Seed-derivation tags (arbitrary fixed ints; changing them changes runs).
_TAG_STUDENT, _TAG_REG, _TAG_TEACHER, _TAG_DATA = 101, 202, 303, 404

_COMPONENT_TOKENS = ("l1_gt", "l1_t", "fcd", "facd", "icd", "plain_fd",
                     "infonce_fcd")


def derive_seed(*parts) -> int:
    """Stable 32-bit seed from integer parts (pure, order-sensitive)."""
    return int(np.random.SeedSequence([int(p) for p in parts]).generate_state(1)[0])


def lr_at_epoch(cfg, epoch: int) -> float:
    """Step schedule: lr0 until lr_half_epoch, half of lr0 afterwards."""
    return cfg.lr0 if epoch < cfg.lr_half_epoch else cfg.lr0 * 0.5


@dataclass(frozen=True)
class Components:
    """What a training mode actually optimizes."""

    use_gt: bool
    use_teacher_image: bool
    feature: str | None      # None | "contrastive" | "image_contrastive" | "plain"
    adaptive: bool           # alpha from the per-sample indicator?
    similarity: str = "euclidean"

    @property
    def needs_teacher(self) -> bool:
        return self.use_teacher_image or self.feature is not None or self.adaptive

    @property
    def needs_taps(self) -> bool:
        return self.feature in ("contrastive", "plain")

    @property
    def needs_regressors(self) -> bool:
        return self.needs_taps


def _components_from_tokens(tokens, loss_cfg: LossConfig) -> Components:
    feature, similarity, adaptive = None, loss_cfg.similarity, False
    feature_tokens = {"fcd": ("contrastive", "euclidean", False),
                      "facd": ("contrastive", "euclidean", True),
                      "infonce_fcd": ("contrastive", "dot_product", False),
                      "icd": ("image_contrastive", loss_cfg.similarity,
                              loss_cfg.adaptive),
                      "plain_fd": ("plain", loss_cfg.similarity, False)}
    for t in tokens:
        if t not in _COMPONENT_TOKENS:
            raise ConfigError(f"unknown loss component {t!r}; "
                              f"expected one of {_COMPONENT_TOKENS}")
        if t in feature_tokens:
            if feature is not None:
                raise ConfigError(f"more than one feature component in {tokens}")
            feature, similarity, adaptive = feature_tokens[t]
    use_gt = "l1_gt" in tokens
    use_t = "l1_t" in tokens
    if not (use_gt or use_t or feature):
        raise ConfigError(f"loss_components {tokens} selects nothing")
    return Components(use_gt=use_gt, use_teacher_image=use_t, feature=feature,
                      adaptive=adaptive, similarity=similarity)


def mode_components(mode: str, loss_cfg: LossConfig,
                    loss_components: str = "") -> Components:
    """Resolve a mode name (plus optional component override) into terms.

    The override string is a '+'-joined token list (e.g. "l1_gt+fcd") for
    combinations the mode names cannot express. Without an override:
    baseline trains on GT only (alpha pinned to 0, teacher never runs),
    fcd/infonce_fcd pin alpha to 1, facd pins the adaptive gate on, and
    the remaining modes take adaptivity from the loss config.
    """
    if mode not in MODES:
        raise ConfigError(f"unknown mode {mode!r}; expected one of {MODES}")
    if loss_components:
        return _components_from_tokens(loss_components.split("+"), loss_cfg)
    table = {
        "baseline": Components(True, False, None, False),
        "image_kd": Components(True, True, None, loss_cfg.adaptive),
        "plain_fd": Components(True, True, "plain", loss_cfg.adaptive),
        "icd": Components(True, True, "image_contrastive", loss_cfg.adaptive,
                          loss_cfg.similarity),
        "fcd": Components(True, True, "contrastive", False, "euclidean"),
        "facd": Components(True, True, "contrastive", True, "euclidean"),
        "infonce_fcd": Components(True, True, "contrastive", False,
                                  "dot_product"),
    }
    return table[mode]


@dataclass
class TrainConfig:
    student: object                   # EdsrConfig | RcanConfig
    scale: int
    mode: str = "facd"
    teacher: object | None = None
    arch: str = "edsr"
    teacher_arch: str = ""            # defaults to arch
    loss: LossConfig = field(default_factory=LossConfig)
    batch: int = 16
    patch: int = 48
    lr0: float = 2e-4
    lr_half_epoch: int = 150
    epochs: int = 600
    steps_per_epoch: int = 50
    max_steps: int = 0                # 0: epochs*steps_per_epoch, else a cap
    seed: int = 0
    teacher_ckpt: str = ""
    pretrain_teacher_steps: int = 0
    ckpt_interval: int = 0            # snapshot every k steps (0: final only)
    loss_components: str = ""
    shave: int = -1                   # eval shave; -1 means "use scale"

    def total_steps(self) -> int:
        full = self.epochs * self.steps_per_epoch
        return min(full, self.max_steps) if self.max_steps else full

    def components(self) -> Components:
        return mode_components(self.mode, self.loss, self.loss_components)

    def validate(self):
        if self.arch not in ("edsr", "rcan"):
            raise ConfigError(f"arch must be 'edsr' or 'rcan', got {self.arch!r}")
        t_arch = self.teacher_arch or self.arch
        if t_arch not in ("edsr", "rcan"):
            raise ConfigError(f"teacher_arch must be 'edsr' or 'rcan', got {t_arch!r}")
        want = M.EdsrConfig if self.arch == "edsr" else M.RcanConfig
        if not isinstance(self.student, want):
            raise ConfigError(
                f"arch {self.arch!r} needs a {want.__name__} student config")
        self.student.validate()
        if self.student.scale != self.scale:
            raise ConfigError(f"student scale {self.student.scale} != run scale "
                              f"{self.scale}")
        if self.teacher is not None:
            t_want = M.EdsrConfig if t_arch == "edsr" else M.RcanConfig
            if not isinstance(self.teacher, t_want):
                raise ConfigError(
                    f"teacher_arch {t_arch!r} needs a {t_want.__name__} config")
            self.teacher.validate()
            if self.teacher.scale != self.scale:
                raise ConfigError(f"teacher scale {self.teacher.scale} != run "
                                  f"scale {self.scale}")
        self.loss.validate()
        comp = self.components()
        if self.batch < 1:
            raise ConfigError(f"batch must be >= 1, got {self.batch}")
        if comp.feature in ("contrastive", "image_contrastive") and self.batch < 2:
            raise ConfigError("contrastive losses need batch >= 2")
        if self.patch < 8:
            raise ConfigError(f"patch must be >= 8, got {self.patch}")
        if self.lr0 <= 0:
            raise ConfigError(f"lr0 must be > 0, got {self.lr0}")
        if self.lr_half_epoch < 1:
            raise ConfigError(f"lr_half_epoch must be >= 1, got {self.lr_half_epoch}")
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if self.steps_per_epoch < 1:
            raise ConfigError(
                f"steps_per_epoch must be >= 1, got {self.steps_per_epoch}")
        if self.max_steps < 0:
            raise ConfigError(f"max_steps must be >= 0, got {self.max_steps}")
        if self.ckpt_interval < 0:
            raise ConfigError(f"ckpt_interval must be >= 0, got {self.ckpt_interval}")
        if self.pretrain_teacher_steps < 0:
            raise ConfigError("pretrain_teacher_steps must be >= 0")
        if comp.needs_teacher and self.teacher is None and not self.teacher_ckpt:
            raise ConfigError(
                f"mode {self.mode!r} needs a teacher: set teacher_ckpt or a "
                f"teacher config (with pretrain_teacher_steps)")
        if self.pretrain_teacher_steps and self.teacher is None:
            raise ConfigError("pretrain_teacher_steps needs a teacher config")

    def fingerprint(self) -> dict:
        """The invariants a resume checkpoint must agree on."""
        return {
            "arch": self.arch,
            "teacher_arch": self.teacher_arch or self.arch,
            "student": M.config_to_dict(self.student),
            "teacher": M.config_to_dict(self.teacher) if self.teacher else None,
            "scale": self.scale,
            "mode": self.mode,
            "loss_components": self.loss_components,
            "loss": {"lambda_facd": self.loss.lambda_facd,
                     "w": list(self.loss.w),
                     "similarity": self.loss.similarity,
                     "adaptive": self.loss.adaptive,
                     "infonce_temperature": self.loss.infonce_temperature,
                     "eps_norm": self.loss.eps_norm,
                     "eps_denom": self.loss.eps_denom},
            "batch": self.batch, "patch": self.patch, "lr0": self.lr0,
            "lr_half_epoch": self.lr_half_epoch, "epochs": self.epochs,
            "steps_per_epoch": self.steps_per_epoch,
            "max_steps": self.max_steps, "seed": self.seed,
        }


@dataclass
class TrainState:
    student: M.SRNetwork
    regressors: list
    optimizer: torch.optim.Adam
    components: Components
    step: int = 0

    def param_names(self) -> list:
        names = [f"student.{n}" for n, _ in self.student.named_parameters()]
        for j, reg in enumerate(self.regressors, start=1):
            names += [f"reg{j}.{n}" for n, _ in reg.named_parameters()]
        return names

    def parameters(self) -> list:
        params = list(self.student.parameters())
        for reg in self.regressors:
            params += list(reg.parameters())
        return params


def _teacher_forward(teacher, lr_t, want_taps):
    teacher.eval()
    with torch.no_grad():
        if want_taps:
            return teacher.forward_with_taps(lr_t)
        return teacher(lr_t), None


def train_step(state: TrainState, batch, teacher, cfg: TrainConfig) -> LossBreakdown:
    """One optimization step on one batch; mutates state in place."""
    comp = state.components
    lr = lr_at_epoch(cfg, state.step // cfg.steps_per_epoch)
    for group in state.optimizer.param_groups:
        group["lr"] = lr

    lr_t = torch.from_numpy(np.ascontiguousarray(batch.lr))
    hr_t = torch.from_numpy(np.ascontiguousarray(batch.hr))

    state.student.train()
    if comp.needs_taps:
        sr_s, taps_s = state.student.forward_with_taps(lr_t)
    else:
        sr_s, taps_s = state.student(lr_t), None

    sr_t, taps_t = None, None
    if comp.needs_teacher:
        if teacher is None:
            raise ConfigError(f"mode {cfg.mode!r} needs a teacher model")
        sr_t, taps_t = _teacher_forward(teacher, lr_t, comp.needs_taps)

    n = lr_t.shape[0]
    ones = torch.ones(n, dtype=sr_s.dtype)
    zeros = torch.zeros(n, dtype=sr_s.dtype)
    alpha = adaptive_indicator(sr_s, sr_t, hr_t) if comp.adaptive else ones
    if not comp.needs_teacher:
        alpha = zeros  # no teacher in play: report and apply a closed gate

    # Image-space terms. The coupled (2-alpha)/alpha split only applies when
    # both supervisions are present; standalone terms are plain batch means.
    if comp.use_gt and comp.use_teacher_image:
        l_gt, l_teacher = image_loss_terms(sr_s, sr_t, hr_t, alpha)
    elif comp.use_gt:
        l_gt, _ = image_loss_terms(sr_s, None, hr_t, zeros)
        l_teacher = sr_s.new_zeros(())
    elif comp.use_teacher_image:
        l_gt = sr_s.new_zeros(())
        l_teacher = (alpha * (sr_s - sr_t).abs().reshape(n, -1).sum(1)).sum() / n
    else:
        l_gt = sr_s.new_zeros(())
        l_teacher = sr_s.new_zeros(())

    if comp.feature == "contrastive":
        fcfg = replace(cfg.loss, similarity=comp.similarity)
        l_feat = facd_loss(taps_s, taps_t, state.regressors, alpha, fcfg)
    elif comp.feature == "image_contrastive":
        fcfg = replace(cfg.loss, similarity=comp.similarity)
        l_feat = icd_loss(sr_s, sr_t, alpha, fcfg)
    elif comp.feature == "plain":
        l_feat = plain_fd_loss(taps_s, taps_t, state.regressors, cfg.loss)
    else:
        l_feat = sr_s.new_zeros(())

    objective = l_gt + l_teacher + cfg.loss.lambda_facd * l_feat
    if not torch.isfinite(objective):
        raise NonFiniteLoss(state.step,
                            f"l_gt={float(l_gt.detach()):g} "
                            f"l_teacher={float(l_teacher.detach()):g} "
                            f"l_facd={float(l_feat.detach()):g}")

    state.optimizer.zero_grad(set_to_none=True)
    objective.backward()
    state.optimizer.step()
    state.step += 1
    return total_loss(l_gt, l_teacher, l_feat, cfg.loss, alpha)


def _save_train_state(path, state: TrainState, cfg: TrainConfig):
    arrays = ckpt.state_arrays(state.student, "student.")
    for j, reg in enumerate(state.regressors, start=1):
        arrays.update(ckpt.state_arrays(reg, f"reg{j}."))
    opt_sd = state.optimizer.state_dict()
    names = state.param_names()
    optim_step = 0
    for idx, st in opt_sd["state"].items():
        name = names[idx]
        arrays[f"optim.{name}.exp_avg"] = st["exp_avg"].numpy().copy()
        arrays[f"optim.{name}.exp_avg_sq"] = st["exp_avg_sq"].numpy().copy()
        optim_step = int(st["step"])
    meta = {
        "format": ckpt.FORMAT,
        "kind": "train_state",
        "arch": state.student.arch,
        "config": M.config_to_dict(state.student.cfg),
        "scale": state.student.scale,
        "step": state.step,
        "optim_step": optim_step,
        "mode": cfg.mode,
        "regressors": [{"c_in": r.c_in, "c_out": r.c_out}
                       for r in state.regressors],
        "fingerprint": cfg.fingerprint(),
    }
    ckpt.save_arrays(path, arrays, meta)


def _load_train_state(path, state: TrainState, cfg: TrainConfig):
    arrays, meta = ckpt.load_arrays(path)
    if meta.get("kind") != "train_state":
        raise CheckpointMismatch(f"{path}: kind {meta.get('kind')!r} cannot resume")
    if meta.get("fingerprint") != cfg.fingerprint():
        raise CheckpointMismatch(
            f"{path}: training fingerprint differs from the current config")
    ckpt._load_tensors(state.student, arrays, "student.", path)
    want_regs = meta.get("regressors", [])
    if len(want_regs) != len(state.regressors):
        raise CheckpointMismatch(f"{path}: regressor count mismatch")
    for j, reg in enumerate(state.regressors, start=1):
        ckpt._load_tensors(reg, arrays, f"reg{j}.", path)
    optim_step = int(meta.get("optim_step", 0))
    if optim_step:
        names = state.param_names()
        template = state.optimizer.state_dict()
        opt_state = {}
        for idx, name in enumerate(names):
            try:
                exp_avg = arrays[f"optim.{name}.exp_avg"]
                exp_avg_sq = arrays[f"optim.{name}.exp_avg_sq"]
            except KeyError as exc:
                raise CheckpointMismatch(
                    f"{path}: missing optimizer moments for {name}") from exc
            opt_state[idx] = {
                "step": torch.tensor(float(optim_step)),
                "exp_avg": torch.from_numpy(np.ascontiguousarray(exp_avg)),
                "exp_avg_sq": torch.from_numpy(np.ascontiguousarray(exp_avg_sq)),
            }
        template["state"] = opt_state
        for group in template["param_groups"]:
            group["params"] = list(range(len(names)))
        state.optimizer.load_state_dict(template)
    state.step = int(meta["step"])


@dataclass
class FitResult:
    final_checkpoint: str
    metrics_path: str
    state: TrainState
    teacher_checkpoint: str = ""
    final_eval: EvalReport | None = None


def _resolve_teacher(cfg: TrainConfig, train_set: ImageSet, out_dir: Path):
    """Load or pretrain the frozen teacher. Returns (model|None, ckpt path)."""
    comp = cfg.components()
    if not comp.needs_teacher:
        return None, ""
    if cfg.teacher_ckpt:
        teacher, meta = ckpt.build_from_checkpoint(cfg.teacher_ckpt)
        t_arch = cfg.teacher_arch or cfg.arch
        if teacher.arch != t_arch:
            raise CheckpointMismatch(
                f"teacher checkpoint arch {teacher.arch!r} != configured {t_arch!r}")
        if cfg.teacher is not None and M.config_to_dict(cfg.teacher) != meta["config"]:
            raise CheckpointMismatch(
                f"teacher checkpoint config {meta['config']} != configured "
                f"{M.config_to_dict(cfg.teacher)}")
        if teacher.scale != cfg.scale:
            raise CheckpointMismatch(
                f"teacher checkpoint scale {teacher.scale} != run scale {cfg.scale}")
        return teacher, str(cfg.teacher_ckpt)
    if cfg.pretrain_teacher_steps < 1:
        raise ConfigError("teacher required: set teacher_ckpt or "
                          "pretrain_teacher_steps > 0")
    steps = cfg.pretrain_teacher_steps
    sub = replace(
        cfg,
        student=cfg.teacher,
        teacher=None,
        arch=cfg.teacher_arch or cfg.arch,
        teacher_arch="",
        mode="baseline",
        loss_components="",
        teacher_ckpt="",
        pretrain_teacher_steps=0,
        ckpt_interval=0,
        epochs=max(1, math.ceil(steps / cfg.steps_per_epoch)),
        max_steps=steps,
        seed=derive_seed(cfg.seed, _TAG_TEACHER),
    )
    result = fit(sub, train_set, out_dir=out_dir / "teacher_pretrain")
    teacher, _ = ckpt.build_from_checkpoint(result.final_checkpoint)
    return teacher, result.final_checkpoint


def fit(cfg: TrainConfig, train_set: ImageSet, eval_set: ImageSet | None = None,
        out_dir="runs/run", resume: str = "") -> FitResult:
    """Train a student per the config; write checkpoints and metrics.

    Emits ``metrics/train_log.ndjson`` (one record per step: step, epoch,
    lr, l_gt, l_teacher, l_facd, total, alpha_mean) and, when an eval set
    is given, ``metrics/eval_log.ndjson`` (one record per epoch). The
    final training state lands in ``checkpoints/final.ckpt``.
    """
    cfg.validate()
    out_dir = Path(out_dir)
    (out_dir / "checkpoints").mkdir(parents=True, exist_ok=True)
    (out_dir / "metrics").mkdir(parents=True, exist_ok=True)

    comp = cfg.components()
    teacher, teacher_ckpt_path = _resolve_teacher(cfg, train_set, out_dir)

    student = M.build_model(cfg.arch, cfg.student,
                            seed=derive_seed(cfg.seed, _TAG_STUDENT))
    regressors = []
    if comp.needs_regressors:
        c_out = teacher.cfg.channels
        for j in range(1, 4):
            regressors.append(M.build_regressor(
                cfg.student.channels, c_out, seed=derive_seed(cfg.seed, _TAG_REG, j)))

    state = TrainState(student=student, regressors=regressors, optimizer=None,
                       components=comp)
    state.optimizer = torch.optim.Adam(state.parameters(), lr=cfg.lr0,
                                       betas=(0.9, 0.999), eps=1e-8)
    if resume:
        _load_train_state(resume, state, cfg)

    total = cfg.total_steps()
    metrics_path = out_dir / "metrics" / "train_log.ndjson"
    eval_path = out_dir / "metrics" / "eval_log.ndjson"
    mode_f = "a" if resume else "w"
    with open(metrics_path, mode_f) as mf, open(eval_path, mode_f) as ef:
        while state.step < total:
            step = state.step
            seed = derive_seed(cfg.seed, _TAG_DATA, step)
            batch = sample_batch(train_set, cfg.patch, cfg.scale, cfg.batch, seed)
            breakdown = train_step(state, batch, teacher, cfg)
            record = {"step": step, "epoch": step // cfg.steps_per_epoch,
                      "lr": lr_at_epoch(cfg, step // cfg.steps_per_epoch)}
            record.update(breakdown.as_dict())
            mf.write(json.dumps(record) + "\n")
            mf.flush()
            done = state.step
            if cfg.ckpt_interval and done % cfg.ckpt_interval == 0 and done < total:
                _save_train_state(out_dir / "checkpoints" / f"step_{done:06d}.ckpt",
                                  state, cfg)
            if eval_set is not None and done % cfg.steps_per_epoch == 0:
                rep = evaluate(student, eval_set, cfg.scale,
                               shave=None if cfg.shave < 0 else cfg.shave)
                ef.write(json.dumps({"epoch": (done - 1) // cfg.steps_per_epoch,
                                     "step": done,
                                     "mean_psnr": round(rep.mean_psnr, 6)}) + "\n")
                ef.flush()

    final_path = out_dir / "checkpoints" / "final.ckpt"
    _save_train_state(final_path, state, cfg)
    final_eval = None
    if eval_set is not None:
        final_eval = evaluate(student, eval_set, cfg.scale,
                              shave=None if cfg.shave < 0 else cfg.shave)
    return FitResult(final_checkpoint=str(final_path),
                     metrics_path=str(metrics_path), state=state,
                     teacher_checkpoint=teacher_ckpt_path,
                     final_eval=final_eval)


ABLATION_AXES = ("components", "attention", "domain", "similarity", "adaptive")


def expand_axis(base: TrainConfig, axis: str) -> list:
    """Expand one ablation axis into labeled config variants."""
    if axis == "components":
        rows = [
            ("l1_gt", {"mode": "baseline", "loss_components": ""}),
            ("l1_gt+l1_t", {"mode": "image_kd", "loss_components": ""}),
            ("l1_gt+fcd", {"mode": "fcd", "loss_components": "l1_gt+fcd"}),
            ("l1_t+fcd", {"mode": "fcd", "loss_components": "l1_t+fcd"}),
            ("l1_gt+l1_t+fcd", {"mode": "fcd", "loss_components": ""}),
            ("l1_gt+l1_t+facd", {"mode": "facd", "loss_components": ""}),
        ]
        return [(label, replace(base, **kw)) for label, kw in rows]
    if axis == "attention":
        rows = [("w_equal", TAP_WEIGHTS_EQUAL), ("w_deep", TAP_WEIGHTS_DEEP),
                ("w_shallow", TAP_WEIGHTS_SHALLOW)]
        return [(label, replace(base, mode="fcd", loss_components="",
                                loss=replace(base.loss, w=w)))
                for label, w in rows]
    if axis == "domain":
        return [(m, replace(base, mode=m, loss_components=""))
                for m in ("icd", "fcd")]
    if axis == "similarity":
        return [(m, replace(base, mode=m, loss_components=""))
                for m in ("fcd", "infonce_fcd")]
    if axis == "adaptive":
        return [(m, replace(base, mode=m, loss_components=""))
                for m in ("fcd", "facd")]
    raise ConfigError(f"unknown ablation axis {axis!r}; "
                      f"expected one of {ABLATION_AXES}")


def run_ablation(variants, train_set: ImageSet, eval_set: ImageSet,
                 seeds, out_dir) -> list:
    """Train every (label, config) variant across seeds; score on eval_set.

    Returns rows (label, mean, sd, per-seed psnrs), sd the sample standard
    deviation (0 for a single seed). Partial results are persisted after
    every finished run so an interrupted sweep keeps its completed work.
    """
    if len(seeds) < 1:
        raise ConfigError("run_ablation needs at least one seed")
    out_dir = Path(out_dir)
    (out_dir / "reports").mkdir(parents=True, exist_ok=True)
    partial_path = out_dir / "reports" / "ablation_partial.json"
    partial = {}

    # A shared teacher keeps variants comparable: pretrain once if needed.
    shared_teacher = ""
    base_needs = any(cfg.components().needs_teacher for _, cfg in variants)
    if base_needs:
        first = next(cfg for _, cfg in variants if cfg.components().needs_teacher)
        if first.teacher_ckpt:
            shared_teacher = first.teacher_ckpt
        else:
            teacher, path = _resolve_teacher(first, train_set, out_dir)
            shared_teacher = path

    rows = []
    for label, cfg in variants:
        psnrs = []
        for seed in seeds:
            run_cfg = replace(cfg, seed=int(seed))
            if run_cfg.components().needs_teacher:
                run_cfg = replace(run_cfg, teacher_ckpt=shared_teacher,
                                  pretrain_teacher_steps=0)
            run_dir = out_dir / label.replace("+", "_") / f"seed{seed}"
            result = fit(run_cfg, train_set, out_dir=run_dir)
            model, _ = ckpt.build_from_checkpoint(result.final_checkpoint)
            rep = evaluate(model, eval_set, run_cfg.scale,
                           shave=None if run_cfg.shave < 0 else run_cfg.shave)
            psnrs.append(rep.mean_psnr)
            partial.setdefault(label, {})[str(seed)] = round(rep.mean_psnr, 6)
            partial_path.write_text(json.dumps(partial, indent=1, sort_keys=True))
        mean = float(np.mean(psnrs))
        sd = float(np.std(psnrs, ddof=1)) if len(psnrs) > 1 else 0.0
        rows.append((label, mean, sd, psnrs))

    report = {"seeds": [int(s) for s in seeds],
              "rows": [{"label": l, "mean_psnr": round(m, 6),
                        "sd": round(s, 6),
                        "per_seed": [round(p, 6) for p in ps]}
                       for l, m, s, ps in rows]}
    (out_dir / "reports" / "ablation.json").write_text(
        json.dumps(report, indent=1, sort_keys=True))
    (out_dir / "reports" / "ablation.txt").write_text(format_ablation_table(rows))
    return rows


def format_ablation_table(rows) -> str:
    width = max([len(l) for l, *_ in rows] + [7])
    lines = [f"{'variant'.ljust(width)}  mean_psnr_db  sd_db  per_seed"]
    for label, mean, sd, psnrs in rows:
        per = " ".join(f"{p:.4f}" for p in psnrs)
        lines.append(f"{label.ljust(width)}  {mean:11.4f}  {sd:5.4f}  {per}")
    return "\n".join(lines)
