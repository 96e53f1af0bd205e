"""Compiled kernels vs the numpy fallback on propose-sized inputs.

Usage: python benchmarks/bench_kernels.py [--repeat 3] [--seed 0]
"""
import argparse
import time

import numpy as np

from prop3d import kernels
from prop3d.energy import ClassModel, build_scene_grids
from prop3d.io.synthetic import SyntheticSceneSpec, generate_synthetic_scene
from prop3d.sampler import ProposeConfig, enumerate_candidates, rank_order, score_candidates
from prop3d.voxels import box_ranges


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t)
    return min(times), out


def workloads(seed):
    """Kernel inputs taken from one KITTI-scale synthetic scene."""
    sc = generate_synthetic_scene(SyntheticSceneSpec.kitti_scale(seed))
    model = ClassModel("car", (-1.0, -1.0, -1.0, 0.01), [(3.9, 1.56, 1.6), (4.3, 1.5, 1.7)], 0.78, 0.05, 0.1)
    cfg = ProposeConfig()
    grids = build_scene_grids(sc.cloud, cfg.grid, sc.plane, [model])
    cands = score_candidates(enumerate_candidates(model, sc.plane, grids.spec, grids.occ, sc.calib), grids, model)
    rp, _ = box_ranges(grids.spec, cands.boxes, cfg.margin)
    order = rank_order(cands)
    occ = grids.occupancy.values
    cam = grids.spec.to_voxel(np.zeros(3))
    S_ht = grids.height[model.name].S
    return {
        "box_sums": lambda k: k.box_sums(grids.occ.S, cands.ranges),
        "potentials": lambda k: k.potentials(grids.occ.S, grids.free.S, S_ht, cands.ranges, rp, 1e-6, 1e3),
        "carve": lambda k: k.carve(occ, cam),
        "nms_rects": lambda k: k.nms_rects(cands.rects[order], cfg.K, cfg.delta),
    }, len(cands), int(occ.sum())


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)
    py = kernels.get_backend("python")
    try:
        cy = kernels.get_backend("cython")
    except ImportError:
        cy = None
        print("compiled kernels not built; timing the numpy fallback only")
    work, n_cands, n_occ = workloads(args.seed)
    print(f"{n_cands:,} candidates, {n_occ:,} occupied voxels, best of {args.repeat}")
    print(f"{'kernel':<12}{'python ms':>12}{'cython ms':>12}{'speedup':>10}  same")
    for name, fn in work.items():
        tp, op = best_of(lambda: fn(py), args.repeat)
        if cy is None:
            print(f"{name:<12}{1e3 * tp:>12.1f}")
            continue
        tc, oc = best_of(lambda: fn(cy), args.repeat)
        print(f"{name:<12}{1e3 * tp:>12.1f}{1e3 * tc:>12.1f}{tp / tc:>9.1f}x  {np.array_equal(op, oc)}")


if __name__ == "__main__":
    main()
