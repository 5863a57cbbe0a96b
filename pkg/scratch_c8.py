"""Throwaway experiment: desk-scale distillation direction-of-effect."""
import sys, time, tempfile
from pathlib import Path
import numpy as np
import srdistill as sd
import srdistill.checkpoint as ck


def synth_corpus(n, size=64, seed=0):
    """Dense oriented bar textures + long step edges; no flat regions."""
    root = np.random.default_rng(seed)
    images = []
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    for _ in range(n):
        rng = np.random.default_rng(root.integers(2**63))
        field = np.zeros((size, size))
        # dense square-wave textures covering the whole frame
        for _ in range(rng.integers(2, 5)):
            theta = rng.uniform(0, np.pi)
            period = rng.uniform(3.0, 9.0)
            phase = rng.uniform(0, period)
            coord = np.cos(theta) * xx + np.sin(theta) * yy
            duty = rng.uniform(0.35, 0.65)
            bars = ((coord + phase) % period) < (period * duty)
            field += rng.uniform(0.3, 0.8) * bars
        # a few long sharp edges
        for _ in range(rng.integers(1, 4)):
            theta = rng.uniform(0, 2 * np.pi)
            off = rng.uniform(0.25 * size, 0.75 * size)
            sgn = np.cos(theta) * xx + np.sin(theta) * yy - off
            field += rng.uniform(-0.8, 0.8) * (sgn > 0)
        field -= field.min()
        field /= max(field.max(), 1e-9)
        img = np.zeros((3, size, size), dtype=np.float32)
        for c in range(3):
            lo, hi = sorted(rng.uniform(0.02, 0.98, 2))
            img[c] = (lo + (hi - lo) * field).astype(np.float32)
        images.append(img)
    return sd.ImageSet.from_arrays(images, source_dir=f"synth{seed}")


def run(scale, lr0, half_epoch, batch, patch, t_steps, s_steps, seeds,
        modes=("baseline", "facd"), teacher_only=False):
    train_set = synth_corpus(24, seed=100)
    eval_set = synth_corpus(6, seed=200)
    t_cfg = sd.EdsrConfig(32, 6, scale)
    s_cfg = sd.EdsrConfig(16, 3, scale)
    work = Path(tempfile.mkdtemp(prefix="c8_"))
    t0 = time.time()
    teach_cfg = sd.TrainConfig(student=t_cfg, scale=scale, mode="baseline",
                               batch=batch, patch=patch, lr0=lr0,
                               lr_half_epoch=half_epoch,
                               epochs=(t_steps + 49) // 50, steps_per_epoch=50,
                               max_steps=t_steps, seed=12345)
    t_res = sd.fit(teach_cfg, train_set, out_dir=work / "teacher")
    teacher, _ = ck.build_from_checkpoint(t_res.final_checkpoint)
    t_rep = sd.evaluate(teacher, eval_set, scale)
    bi = sd.evaluate(sd.BicubicUpscaler(scale), eval_set, scale)
    print(f"x{scale} lr0={lr0} half={half_epoch} b={batch} p={patch}: "
          f"teacher {t_rep.mean_psnr:.3f}  bicubic {bi.mean_psnr:.3f} "
          f"({time.time()-t0:.0f}s)", flush=True)
    if teacher_only:
        return

    rows = {}
    for mode in modes:
        vals = []
        for seed in seeds:
            cfg = sd.TrainConfig(student=s_cfg, scale=scale, mode=mode,
                                 batch=batch, patch=patch, lr0=lr0,
                                 lr_half_epoch=half_epoch,
                                 epochs=(s_steps + 49) // 50, steps_per_epoch=50,
                                 max_steps=s_steps, seed=seed,
                                 teacher_ckpt=t_res.final_checkpoint
                                 if mode != "baseline" else "")
            res = sd.fit(cfg, train_set, out_dir=work / f"{mode}_s{seed}")
            model, _ = ck.build_from_checkpoint(res.final_checkpoint)
            rep = sd.evaluate(model, eval_set, scale)
            vals.append(rep.mean_psnr)
            print(f"  {mode} seed {seed}: {rep.mean_psnr:.4f}  "
                  f"({time.time()-t0:.0f}s)", flush=True)
        rows[mode] = vals
    b = np.array(rows[modes[0]])
    f = np.array(rows[modes[1]])
    wins = int((f > b).sum())
    print(f"{modes[0]} mean {b.mean():.4f}  {modes[1]} mean {f.mean():.4f}  "
          f"diff {f.mean()-b.mean():+.4f}  wins {wins}/{len(seeds)}", flush=True)
    print("PASS" if (f.mean() >= b.mean() - 0.02 and wins >= 2) else "FAIL",
          flush=True)


if __name__ == "__main__":
    import argparse
    p = argparse.ArgumentParser()
    p.add_argument("--scale", type=int, default=2)
    p.add_argument("--lr0", type=float, default=1e-3)
    p.add_argument("--half-epoch", type=int, default=20)
    p.add_argument("--batch", type=int, default=16)
    p.add_argument("--patch", type=int, default=12)
    p.add_argument("--t-steps", type=int, default=2000)
    p.add_argument("--s-steps", type=int, default=1500)
    p.add_argument("--seeds", type=str, default="0,1,2")
    p.add_argument("--teacher-only", action="store_true")
    a = p.parse_args()
    run(a.scale, a.lr0, a.half_epoch, a.batch, a.patch, a.t_steps, a.s_steps,
        [int(s) for s in a.seeds.split(",")], teacher_only=a.teacher_only)
