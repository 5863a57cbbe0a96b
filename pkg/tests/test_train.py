"""Training loop tests: schedule, mode resolution, single steps, full fits,
resume semantics, and the ablation driver.

Everything here runs on deliberately tiny networks (8 channels, 1 block)
and 8px patches so the whole module stays in the low seconds.
"""

import json
import math
from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest
import torch

import srdistill.checkpoint as ck
import srdistill.models as M
import srdistill.train as T
from srdistill.data import sample_batch
from srdistill.errors import CheckpointMismatch, ConfigError, NonFiniteLoss
from srdistill.losses import (LossConfig, TAP_WEIGHTS_DEEP, TAP_WEIGHTS_EQUAL,
                              TAP_WEIGHTS_SHALLOW)

from conftest import make_image_set


def tiny_cfg(mode="facd", **kw):
    base = dict(
        student=M.EdsrConfig(channels=8, blocks=1, scale=2),
        teacher=M.EdsrConfig(channels=12, blocks=1, scale=2),
        scale=2, mode=mode, batch=2, patch=8, lr0=1e-3, lr_half_epoch=1,
        epochs=2, steps_per_epoch=2, pretrain_teacher_steps=2, seed=7,
    )
    base.update(kw)
    return T.TrainConfig(**base)


def make_state(cfg, student_seed=11, teacher_seed=99):
    """Hand-built TrainState plus teacher, bypassing fit()."""
    comp = cfg.components()
    student = M.build_model(cfg.arch, cfg.student, seed=student_seed)
    teacher = None
    if comp.needs_teacher and cfg.teacher is not None:
        teacher = M.build_model(cfg.teacher_arch or cfg.arch, cfg.teacher,
                                seed=teacher_seed)
    regressors = []
    if comp.needs_regressors:
        regressors = [M.build_regressor(cfg.student.channels,
                                        cfg.teacher.channels, seed=20 + j)
                      for j in range(3)]
    state = T.TrainState(student=student, regressors=regressors,
                         optimizer=None, components=comp)
    state.optimizer = torch.optim.Adam(state.parameters(), lr=cfg.lr0,
                                       betas=(0.9, 0.999), eps=1e-8)
    return state, teacher


def small_batch(cfg, seed=5):
    images = make_image_set(2, 24, 24, seed=3)
    return sample_batch(images, cfg.patch, cfg.scale, cfg.batch, seed)


# ------------------------------------------------------------ schedule

def test_lr_schedule_halves_exactly_at_boundary():
    cfg = tiny_cfg(lr0=2e-4, lr_half_epoch=150)
    assert T.lr_at_epoch(cfg, 0) == 2e-4
    assert T.lr_at_epoch(cfg, 149) == 2e-4
    assert T.lr_at_epoch(cfg, 150) == 1e-4
    assert T.lr_at_epoch(cfg, 599) == 1e-4


def test_lr_schedule_reaches_optimizer():
    cfg = tiny_cfg(mode="baseline", teacher=None, pretrain_teacher_steps=0,
                   steps_per_epoch=1, lr_half_epoch=1)
    state, teacher = make_state(cfg)
    T.train_step(state, small_batch(cfg), teacher, cfg)
    assert state.optimizer.param_groups[0]["lr"] == cfg.lr0
    T.train_step(state, small_batch(cfg, seed=6), teacher, cfg)
    assert state.optimizer.param_groups[0]["lr"] == cfg.lr0 * 0.5


def test_derive_seed_stable_and_order_sensitive():
    assert T.derive_seed(3, 4, 5) == T.derive_seed(3, 4, 5)
    assert T.derive_seed(3, 4, 5) != T.derive_seed(5, 4, 3)
    seeds = {T.derive_seed(0, tag, k) for tag in (101, 202, 303, 404)
             for k in range(64)}
    assert len(seeds) == 4 * 64
    assert all(0 <= s < 2 ** 32 for s in seeds)


def test_adam_update_matches_scalar_reference():
    # Double-precision scalar parameter against a hand-rolled Adam.
    lr, b1, b2, eps = 1e-3, 0.9, 0.999, 1e-8
    p = torch.zeros((), dtype=torch.float64, requires_grad=True)
    opt = torch.optim.Adam([p], lr=lr, betas=(b1, b2), eps=eps)
    ref, m, v = 0.0, 0.0, 0.0
    for t in range(1, 101):
        g = math.sin(float(t)) * 0.7 + 0.3
        opt.zero_grad(set_to_none=True)
        p.grad = torch.tensor(g, dtype=torch.float64)
        opt.step()
        m = m + (1.0 - b1) * (g - m)
        v = v * b2 + (1.0 - b2) * g * g
        step_size = lr / (1.0 - b1 ** t)
        denom = math.sqrt(v) / math.sqrt(1.0 - b2 ** t) + eps
        ref = ref - step_size * (m / denom)
        assert abs(float(p.detach()) - ref) <= 1e-12 * max(1.0, abs(ref))


# ------------------------------------------------------------ mode table

MODE_TABLE = {
    # mode: (use_gt, use_teacher_image, feature, adaptive, similarity)
    "baseline": (True, False, None, False, "euclidean"),
    "image_kd": (True, True, None, False, "euclidean"),
    "plain_fd": (True, True, "plain", False, "euclidean"),
    "icd": (True, True, "image_contrastive", False, "euclidean"),
    "fcd": (True, True, "contrastive", False, "euclidean"),
    "facd": (True, True, "contrastive", True, "euclidean"),
    "infonce_fcd": (True, True, "contrastive", False, "dot_product"),
}


@pytest.mark.parametrize("mode", T.MODES)
def test_mode_components_table(mode):
    use_gt, use_t, feature, adaptive, sim = MODE_TABLE[mode]
    comp = T.mode_components(mode, LossConfig())
    assert comp.use_gt is use_gt
    assert comp.use_teacher_image is use_t
    assert comp.feature == feature
    assert comp.adaptive is adaptive
    assert comp.similarity == sim
    assert comp.needs_teacher is (use_t or feature is not None or adaptive)
    assert comp.needs_taps is (feature in ("contrastive", "plain"))
    assert comp.needs_regressors is comp.needs_taps


def test_mode_components_follow_loss_config_where_unpinned():
    # icd / image_kd / plain_fd inherit adaptivity from the loss config;
    # fcd / facd / infonce_fcd pin it regardless.
    cfg = LossConfig(adaptive=True, similarity="dot_product")
    assert T.mode_components("image_kd", cfg).adaptive is True
    assert T.mode_components("plain_fd", cfg).adaptive is True
    icd = T.mode_components("icd", cfg)
    assert icd.adaptive is True and icd.similarity == "dot_product"
    assert T.mode_components("fcd", cfg).adaptive is False
    assert T.mode_components("fcd", cfg).similarity == "euclidean"
    assert T.mode_components("facd", cfg).adaptive is True
    assert T.mode_components("infonce_fcd", cfg).similarity == "dot_product"


def test_mode_components_rejects_unknown_mode():
    with pytest.raises(ConfigError, match="unknown mode"):
        T.mode_components("sgd", LossConfig())


@pytest.mark.parametrize("tokens,expect", [
    ("l1_gt", (True, False, None, False, "euclidean")),
    ("l1_t", (False, True, None, False, "euclidean")),
    ("l1_gt+l1_t", (True, True, None, False, "euclidean")),
    ("l1_gt+fcd", (True, False, "contrastive", False, "euclidean")),
    ("l1_t+fcd", (False, True, "contrastive", False, "euclidean")),
    ("l1_gt+facd", (True, False, "contrastive", True, "euclidean")),
    ("l1_gt+infonce_fcd", (True, False, "contrastive", False, "dot_product")),
    ("plain_fd", (False, False, "plain", False, "euclidean")),
    ("icd", (False, False, "image_contrastive", False, "euclidean")),
])
def test_component_override_tokens(tokens, expect):
    comp = T.mode_components("facd", LossConfig(), loss_components=tokens)
    assert (comp.use_gt, comp.use_teacher_image, comp.feature,
            comp.adaptive, comp.similarity) == expect


def test_component_override_rejections():
    with pytest.raises(ConfigError, match="unknown loss component"):
        T.mode_components("facd", LossConfig(), loss_components="l1_gt+bogus")
    with pytest.raises(ConfigError, match="more than one feature"):
        T.mode_components("facd", LossConfig(), loss_components="fcd+icd")
    with pytest.raises(ConfigError, match="selects nothing"):
        T._components_from_tokens([], LossConfig())


def test_empty_override_falls_back_to_mode_table():
    assert T.mode_components("facd", LossConfig(), "") == \
        T.mode_components("facd", LossConfig())


# ------------------------------------------------------------ train_step

def test_train_step_freezes_teacher_and_updates_student():
    cfg = tiny_cfg(mode="fcd")  # pinned gate: the feature term always flows
    state, teacher = make_state(cfg)
    t_before = [p.detach().clone() for p in teacher.parameters()]
    s_before = [p.detach().clone() for p in state.student.parameters()]
    r_before = [p.detach().clone() for p in state.regressors[0].parameters()]
    T.train_step(state, small_batch(cfg), teacher, cfg)
    assert all(torch.equal(a, b)
               for a, b in zip(t_before, teacher.parameters()))
    assert any(not torch.equal(a, b)
               for a, b in zip(s_before, state.student.parameters()))
    assert any(not torch.equal(a, b)
               for a, b in zip(r_before, state.regressors[0].parameters()))
    assert state.step == 1


def test_train_step_identical_teacher_opens_gate_fully():
    # Same config and seed on both sides: sr_s == sr_t, ties gate to 1,
    # and the teacher imitation term vanishes identically.
    cfg = tiny_cfg(teacher=M.EdsrConfig(channels=8, blocks=1, scale=2))
    state, _ = make_state(cfg)
    twin = M.build_model(cfg.arch, cfg.student, seed=11)
    bd = T.train_step(state, small_batch(cfg), twin, cfg)
    assert bd.alpha_mean == 1.0
    assert bd.l_teacher == 0.0
    assert bd.l_facd > 0.0
    assert bd.total == pytest.approx(bd.l_gt + cfg.loss.lambda_facd * bd.l_facd)


def test_train_step_baseline_runs_without_teacher():
    cfg = tiny_cfg(mode="baseline", teacher=None, pretrain_teacher_steps=0)
    state, teacher = make_state(cfg)
    assert teacher is None
    bd = T.train_step(state, small_batch(cfg), None, cfg)
    assert bd.l_teacher == 0.0 and bd.l_facd == 0.0
    assert bd.alpha_mean == 0.0
    assert bd.total == bd.l_gt > 0.0


def test_train_step_requires_teacher_when_mode_does():
    cfg = tiny_cfg()
    state, _ = make_state(cfg)
    with pytest.raises(ConfigError, match="needs a teacher"):
        T.train_step(state, small_batch(cfg), None, cfg)


def test_adaptive_gate_closes_on_poisoned_teacher():
    # Shift the teacher's output far off target: every sample prefers GT.
    cfg_facd = tiny_cfg(mode="facd")
    cfg_fcd = tiny_cfg(mode="fcd")
    batch = small_batch(cfg_facd)

    state, teacher = make_state(cfg_facd)
    with torch.no_grad():
        teacher.tail.conv.bias.fill_(10.0)
    bd = T.train_step(state, batch, teacher, cfg_facd)
    assert bd.alpha_mean == 0.0
    assert bd.l_teacher == 0.0 and bd.l_facd == 0.0
    assert bd.total == bd.l_gt

    # fcd pins the gate open, so the same teacher still contributes.
    state2, teacher2 = make_state(cfg_fcd)
    with torch.no_grad():
        teacher2.tail.conv.bias.fill_(10.0)
    bd2 = T.train_step(state2, batch, teacher2, cfg_fcd)
    assert bd2.alpha_mean == 1.0
    assert bd2.l_teacher > 0.0 and bd2.l_facd > 0.0


def test_train_step_raises_on_divergence():
    cfg = tiny_cfg(mode="baseline", teacher=None, pretrain_teacher_steps=0,
                   lr0=1e30)
    state, _ = make_state(cfg)
    with pytest.raises(NonFiniteLoss, match="non-finite loss at step") as exc:
        for k in range(10):
            T.train_step(state, small_batch(cfg, seed=k), None, cfg)
    assert exc.value.step >= 1


# ------------------------------------------------------------ fit

def run_sets():
    return make_image_set(3, 24, 24, seed=31), make_image_set(2, 24, 24, seed=32)


def test_fit_layout_and_metric_schema(tmp_path):
    train_set, eval_set = run_sets()
    cfg = tiny_cfg()
    result = T.fit(cfg, train_set, eval_set, out_dir=tmp_path / "run")
    assert Path(result.final_checkpoint) == tmp_path / "run/checkpoints/final.ckpt"
    assert Path(result.final_checkpoint).exists()
    assert Path(result.teacher_checkpoint).exists()
    assert (tmp_path / "run/teacher_pretrain/checkpoints/final.ckpt").exists()
    assert result.state.step == cfg.total_steps() == 4
    assert result.final_eval is not None and result.final_eval.mean_psnr > 0

    lines = [json.loads(l) for l in
             Path(result.metrics_path).read_text().splitlines()]
    assert [l["step"] for l in lines] == [0, 1, 2, 3]
    for rec in lines:
        assert set(rec) == {"step", "epoch", "lr", "l_gt", "l_teacher",
                            "l_facd", "total", "alpha_mean"}
        assert rec["epoch"] == rec["step"] // cfg.steps_per_epoch
        assert rec["lr"] == T.lr_at_epoch(cfg, rec["epoch"])
        assert 0.0 <= rec["alpha_mean"] <= 1.0
        assert rec["total"] == pytest.approx(
            rec["l_gt"] + rec["l_teacher"]
            + cfg.loss.lambda_facd * rec["l_facd"], rel=1e-6)

    evals = [json.loads(l) for l in
             (tmp_path / "run/metrics/eval_log.ndjson").read_text().splitlines()]
    assert [e["step"] for e in evals] == [2, 4]
    assert all(set(e) == {"epoch", "step", "mean_psnr"} for e in evals)


def test_fit_is_bitwise_deterministic(tmp_path):
    train_set, _ = run_sets()
    cfg = tiny_cfg()
    a = T.fit(cfg, train_set, out_dir=tmp_path / "a")
    b = T.fit(cfg, train_set, out_dir=tmp_path / "b")
    assert Path(a.final_checkpoint).read_bytes() == \
        Path(b.final_checkpoint).read_bytes()
    assert Path(a.metrics_path).read_text() == Path(b.metrics_path).read_text()


def pretrained_teacher(tmp_path, train_set):
    t_cfg = T.TrainConfig(student=M.EdsrConfig(channels=12, blocks=1, scale=2),
                          scale=2, mode="baseline", batch=2, patch=8, lr0=1e-3,
                          epochs=1, steps_per_epoch=2, max_steps=2, seed=5)
    return T.fit(t_cfg, train_set, out_dir=tmp_path / "teacher").final_checkpoint


def test_fit_resume_matches_unbroken_run(tmp_path):
    train_set, _ = run_sets()
    t_path = pretrained_teacher(tmp_path, train_set)
    cfg = tiny_cfg(teacher=None, pretrain_teacher_steps=0, teacher_ckpt=t_path)

    unbroken = T.fit(cfg, train_set, out_dir=tmp_path / "full")
    snap = T.fit(replace(cfg, ckpt_interval=2), train_set,
                 out_dir=tmp_path / "snap")
    mid = tmp_path / "snap/checkpoints/step_000002.ckpt"
    assert mid.exists()

    resumed = T.fit(cfg, train_set, out_dir=tmp_path / "resumed",
                    resume=str(mid))
    assert Path(resumed.final_checkpoint).read_bytes() == \
        Path(unbroken.final_checkpoint).read_bytes()
    # The resumed log holds exactly the replayed tail.
    lines = [json.loads(l) for l in
             Path(resumed.metrics_path).read_text().splitlines()]
    assert [l["step"] for l in lines] == [2, 3]
    full_lines = [json.loads(l) for l in
                  Path(unbroken.metrics_path).read_text().splitlines()]
    assert full_lines[2:] == lines
    # ckpt_interval is not part of the fingerprint, so snap/full agree too.
    assert Path(snap.final_checkpoint).read_bytes() == \
        Path(unbroken.final_checkpoint).read_bytes()


def test_fit_resume_rejects_changed_config(tmp_path):
    train_set, _ = run_sets()
    t_path = pretrained_teacher(tmp_path, train_set)
    cfg = tiny_cfg(teacher=None, pretrain_teacher_steps=0, teacher_ckpt=t_path,
                   ckpt_interval=2)
    run = T.fit(cfg, train_set, out_dir=tmp_path / "run")
    mid = tmp_path / "run/checkpoints/step_000002.ckpt"
    with pytest.raises(CheckpointMismatch, match="fingerprint"):
        T.fit(replace(cfg, lr0=2e-3), train_set, out_dir=tmp_path / "other",
              resume=str(mid))


def test_fit_resume_rejects_plain_model_checkpoint(tmp_path):
    train_set, _ = run_sets()
    model = M.build_model("edsr", M.EdsrConfig(channels=8, blocks=1, scale=2))
    path = tmp_path / "model.ckpt"
    ck.save_model(path, model)
    cfg = tiny_cfg(mode="baseline", teacher=None, pretrain_teacher_steps=0)
    with pytest.raises(CheckpointMismatch, match="cannot resume"):
        T.fit(cfg, train_set, out_dir=tmp_path / "run", resume=str(path))


def test_fit_demands_teacher_provenance(tmp_path):
    train_set, _ = run_sets()
    cfg = tiny_cfg(pretrain_teacher_steps=0)
    with pytest.raises(ConfigError, match="teacher required"):
        T.fit(cfg, train_set, out_dir=tmp_path / "run")


def test_total_steps_cap():
    assert tiny_cfg().total_steps() == 4
    assert tiny_cfg(max_steps=3).total_steps() == 3
    assert tiny_cfg(max_steps=99).total_steps() == 4


# ------------------------------------------------------------ ablations

def test_expand_axis_components_rows():
    base = tiny_cfg()
    rows = T.expand_axis(base, "components")
    assert [label for label, _ in rows] == [
        "l1_gt", "l1_gt+l1_t", "l1_gt+fcd", "l1_t+fcd",
        "l1_gt+l1_t+fcd", "l1_gt+l1_t+facd"]
    comps = {label: cfg.components() for label, cfg in rows}
    assert not comps["l1_gt"].needs_teacher
    assert comps["l1_gt+l1_t"] == T.mode_components("image_kd", base.loss)
    assert comps["l1_gt+fcd"].use_gt and not comps["l1_gt+fcd"].use_teacher_image
    assert comps["l1_t+fcd"].use_teacher_image and not comps["l1_t+fcd"].use_gt
    assert comps["l1_gt+l1_t+fcd"].feature == "contrastive"
    assert not comps["l1_gt+l1_t+fcd"].adaptive
    assert comps["l1_gt+l1_t+facd"].adaptive
    assert base.mode == "facd"  # base untouched


def test_expand_axis_attention_rows():
    rows = T.expand_axis(tiny_cfg(), "attention")
    got = {label: cfg.loss.w for label, cfg in rows}
    assert got == {"w_equal": TAP_WEIGHTS_EQUAL, "w_deep": TAP_WEIGHTS_DEEP,
                   "w_shallow": TAP_WEIGHTS_SHALLOW}
    assert all(cfg.mode == "fcd" for _, cfg in rows)


@pytest.mark.parametrize("axis,labels", [
    ("domain", ["icd", "fcd"]),
    ("similarity", ["fcd", "infonce_fcd"]),
    ("adaptive", ["fcd", "facd"]),
])
def test_expand_axis_mode_rows(axis, labels):
    rows = T.expand_axis(tiny_cfg(), axis)
    assert [label for label, _ in rows] == labels
    assert all(cfg.mode == label for label, cfg in rows)


def test_expand_axis_rejects_unknown():
    with pytest.raises(ConfigError, match="unknown ablation axis"):
        T.expand_axis(tiny_cfg(), "dropout")


def test_run_ablation_smoke(tmp_path):
    train_set, eval_set = run_sets()
    base = tiny_cfg(epochs=1, max_steps=2)
    rows = T.run_ablation(T.expand_axis(base, "adaptive"), train_set, eval_set,
                          seeds=(0, 1), out_dir=tmp_path)
    assert [r[0] for r in rows] == ["fcd", "facd"]
    for label, mean, sd, psnrs in rows:
        assert len(psnrs) == 2 and sd >= 0.0
        assert mean == pytest.approx(float(np.mean(psnrs)))

    report = json.loads((tmp_path / "reports/ablation.json").read_text())
    assert report["seeds"] == [0, 1]
    assert [r["label"] for r in report["rows"]] == ["fcd", "facd"]
    assert all(len(r["per_seed"]) == 2 for r in report["rows"])
    partial = json.loads((tmp_path / "reports/ablation_partial.json").read_text())
    assert set(partial) == {"fcd", "facd"}

    table = (tmp_path / "reports/ablation.txt").read_text()
    assert table.splitlines()[0].startswith("variant")
    assert "mean_psnr_db" in table and "facd" in table
    # One shared teacher for the whole sweep.
    assert (tmp_path / "teacher_pretrain/checkpoints/final.ckpt").exists()


def test_run_ablation_needs_a_seed(tmp_path):
    train_set, eval_set = run_sets()
    with pytest.raises(ConfigError, match="at least one seed"):
        T.run_ablation(T.expand_axis(tiny_cfg(), "adaptive"), train_set,
                       eval_set, seeds=(), out_dir=tmp_path)


def test_format_ablation_table_layout():
    rows = [("baseline", 26.99, 0.01, [26.98, 27.0]),
            ("l1_gt+l1_t+facd", 27.01, 0.02, [27.0, 27.02])]
    text = T.format_ablation_table(rows)
    lines = text.splitlines()
    assert lines[0].split() == ["variant", "mean_psnr_db", "sd_db", "per_seed"]
    assert lines[1].startswith("baseline")
    assert "27.0100" in lines[2] and "26.9800" in lines[1]
