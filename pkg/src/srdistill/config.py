"""Flat `key = value` run configuration.

One file describes a whole run (training, evaluation, ablation, stats).
Parsing is strict: unknown keys, malformed lines, duplicate keys, and
untypeable values are all ConfigError, and the message always names the
offending key so misspellings are caught instead of silently ignored.
"""

from __future__ import annotations

from dataclasses import dataclass, fields
from pathlib import Path

from .errors import ConfigError
from .losses import LossConfig
from .models import EdsrConfig, RcanConfig, default_res_scaling
from .train import TrainConfig, mode_components

_TRUE = ("1", "true", "yes", "on")
_FALSE = ("0", "false", "no", "off")


def _cast_int(key, raw):
    try:
        return int(raw, 0)
    except ValueError:
        raise ConfigError(f"config key {key!r}: expected an integer, got {raw!r}")


def _cast_float(key, raw):
    try:
        return float(raw)
    except ValueError:
        raise ConfigError(f"config key {key!r}: expected a number, got {raw!r}")


def _cast_bool(key, raw):
    low = raw.strip().lower()
    if low in _TRUE:
        return True
    if low in _FALSE:
        return False
    raise ConfigError(f"config key {key!r}: expected true/false, got {raw!r}")


def _cast_str(key, raw):
    return raw.strip()


def _cast_floats(key, raw):
    try:
        return tuple(float(x) for x in raw.split(",") if x.strip() != "")
    except ValueError:
        raise ConfigError(f"config key {key!r}: expected comma-separated "
                          f"numbers, got {raw!r}")


def _cast_ints(key, raw):
    try:
        return tuple(int(x) for x in raw.split(",") if x.strip() != "")
    except ValueError:
        raise ConfigError(f"config key {key!r}: expected comma-separated "
                          f"integers, got {raw!r}")


# key -> (caster, default, help)
REGISTRY = {
    "arch": (_cast_str, "edsr", "network family: edsr | rcan"),
    "teacher_arch": (_cast_str, "", "teacher family (default: same as arch)"),
    "scale": (_cast_int, 4, "upscaling factor: 2 | 3 | 4"),
    "mode": (_cast_str, "facd",
             "baseline | image_kd | plain_fd | icd | fcd | facd | infonce_fcd"),
    "loss_components": (_cast_str, "",
                        "override: '+'-joined terms, e.g. l1_gt+fcd"),

    "student_channels": (_cast_int, 64, "student trunk width"),
    "student_blocks": (_cast_int, 16, "student residual blocks (edsr)"),
    "student_groups": (_cast_int, 10, "student residual groups (rcan)"),
    "student_blocks_per_group": (_cast_int, 6, "student blocks per group (rcan)"),
    "student_reduction": (_cast_int, 16, "student attention reduction (rcan)"),
    "student_res_scaling": (_cast_float, -1.0,
                            "student residual scaling; -1 = auto (0.1 for "
                            "256-channel edsr trunks, else 1.0)"),

    "teacher_channels": (_cast_int, 256, "teacher trunk width"),
    "teacher_blocks": (_cast_int, 32, "teacher residual blocks (edsr)"),
    "teacher_groups": (_cast_int, 10, "teacher residual groups (rcan)"),
    "teacher_blocks_per_group": (_cast_int, 20, "teacher blocks per group (rcan)"),
    "teacher_reduction": (_cast_int, 16, "teacher attention reduction (rcan)"),
    "teacher_res_scaling": (_cast_float, -1.0, "teacher residual scaling; -1 = auto"),

    "lambda_facd": (_cast_float, 4.0, "weight of the feature-domain loss"),
    "tap_weights": (_cast_floats, (0.5, 0.3, 0.2),
                    "per-tap weights, shallow to deep; must sum to 1"),
    "similarity": (_cast_str, "euclidean", "euclidean | dot_product"),
    "adaptive": (_cast_bool, False,
                 "per-sample teacher gating for modes that leave it free"),
    "infonce_temperature": (_cast_float, 0.07, "dot-product softmax temperature"),
    "eps_norm": (_cast_float, 1e-8, "normalization epsilon"),
    "eps_denom": (_cast_float, 1e-8, "contrastive denominator epsilon"),

    "batch": (_cast_int, 16, "patches per step"),
    "patch": (_cast_int, 48, "LR patch side"),
    "lr0": (_cast_float, 2e-4, "initial learning rate"),
    "lr_half_epoch": (_cast_int, 150, "epoch at which the rate halves"),
    "epochs": (_cast_int, 600, "training epochs"),
    "steps_per_epoch": (_cast_int, 50, "optimizer steps per epoch"),
    "max_steps": (_cast_int, 0, "hard cap on steps (0 = epochs*steps_per_epoch)"),
    "seed": (_cast_int, 0, "master seed; all randomness derives from it"),
    "ckpt_interval": (_cast_int, 0, "snapshot every k steps (0 = final only)"),
    "pretrain_teacher_steps": (_cast_int, 0,
                               "pretrain the teacher in-run for k steps when "
                               "no teacher_ckpt is given"),

    "train_dir": (_cast_str, "", "directory of training .png images"),
    "eval_dir": (_cast_str, "", "directory of evaluation .png images"),
    "out_dir": (_cast_str, "runs/run", "output root (checkpoints/, metrics/, "
                                       "reports/, images/)"),
    "teacher_ckpt": (_cast_str, "", "teacher checkpoint path"),
    "student_ckpt": (_cast_str, "", "student checkpoint path (eval/stats)"),

    "n_samples": (_cast_int, 256, "patches for the stats subcommand"),
    "shave": (_cast_int, -1, "border shave for PSNR (-1 = scale)"),
    "dump_images": (_cast_bool, False, "write SR outputs during eval"),
    "ablate_seeds": (_cast_ints, (0, 1, 2), "seeds used by the ablate subcommand"),
}


@dataclass
class RunConfig:
    arch: str
    teacher_arch: str
    scale: int
    mode: str
    loss_components: str
    student_channels: int
    student_blocks: int
    student_groups: int
    student_blocks_per_group: int
    student_reduction: int
    student_res_scaling: float
    teacher_channels: int
    teacher_blocks: int
    teacher_groups: int
    teacher_blocks_per_group: int
    teacher_reduction: int
    teacher_res_scaling: float
    lambda_facd: float
    tap_weights: tuple
    similarity: str
    adaptive: bool
    infonce_temperature: float
    eps_norm: float
    eps_denom: float
    batch: int
    patch: int
    lr0: float
    lr_half_epoch: int
    epochs: int
    steps_per_epoch: int
    max_steps: int
    seed: int
    ckpt_interval: int
    pretrain_teacher_steps: int
    train_dir: str
    eval_dir: str
    out_dir: str
    teacher_ckpt: str
    student_ckpt: str
    n_samples: int
    shave: int
    dump_images: bool
    ablate_seeds: tuple

    def loss_config(self) -> LossConfig:
        return LossConfig(lambda_facd=self.lambda_facd, w=tuple(self.tap_weights),
                          similarity=self.similarity, adaptive=self.adaptive,
                          infonce_temperature=self.infonce_temperature,
                          eps_norm=self.eps_norm, eps_denom=self.eps_denom)

    def _model_config(self, role: str, arch: str):
        pick = lambda k: getattr(self, f"{role}_{k}")
        rs = pick("res_scaling")
        if arch == "edsr":
            if rs < 0:
                rs = default_res_scaling(pick("channels"))
            return EdsrConfig(channels=pick("channels"), blocks=pick("blocks"),
                              scale=self.scale, res_scaling=rs)
        if arch == "rcan":
            if rs < 0:
                rs = 1.0
            return RcanConfig(channels=pick("channels"), groups=pick("groups"),
                              blocks_per_group=pick("blocks_per_group"),
                              reduction=pick("reduction"), scale=self.scale,
                              res_scaling=rs)
        raise ConfigError(f"config key 'arch': expected edsr or rcan, got {arch!r}")

    def student_config(self):
        return self._model_config("student", self.arch)

    def teacher_config(self):
        return self._model_config("teacher", self.teacher_arch or self.arch)

    def to_train_config(self) -> TrainConfig:
        loss = self.loss_config()
        comp = mode_components(self.mode, loss, self.loss_components)
        teacher = None
        # teacher_ckpt wins: its metadata carries the architecture, so the
        # teacher_* keys only matter for in-run pretraining.
        if not self.teacher_ckpt and (comp.needs_teacher
                                      or self.pretrain_teacher_steps > 0):
            teacher = self.teacher_config()
        return TrainConfig(
            student=self.student_config(), scale=self.scale, mode=self.mode,
            teacher=teacher, arch=self.arch, teacher_arch=self.teacher_arch,
            loss=loss, batch=self.batch, patch=self.patch, lr0=self.lr0,
            lr_half_epoch=self.lr_half_epoch, epochs=self.epochs,
            steps_per_epoch=self.steps_per_epoch, max_steps=self.max_steps,
            seed=self.seed, teacher_ckpt=self.teacher_ckpt,
            pretrain_teacher_steps=self.pretrain_teacher_steps,
            ckpt_interval=self.ckpt_interval,
            loss_components=self.loss_components, shave=self.shave,
        )


def parse_config_text(text: str, origin: str = "<config>") -> RunConfig:
    values = {k: default for k, (_, default, _) in REGISTRY.items()}
    seen = set()
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"{origin}:{lineno}: expected 'key = value', "
                              f"got {line!r}")
        key, _, val = line.partition("=")
        key = key.strip()
        if key not in REGISTRY:
            raise ConfigError(f"{origin}:{lineno}: unknown config key {key!r}")
        if key in seen:
            raise ConfigError(f"{origin}:{lineno}: duplicate config key {key!r}")
        seen.add(key)
        caster = REGISTRY[key][0]
        values[key] = caster(key, val.strip())
    return RunConfig(**values)


def parse_config_file(path) -> RunConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    return parse_config_text(path.read_text(), origin=str(path))


def registry_help() -> str:
    lines = []
    for key, (_, default, help_text) in REGISTRY.items():
        lines.append(f"{key} (default {default!r}): {help_text}")
    return "\n".join(lines)
