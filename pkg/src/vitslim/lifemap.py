"""Per-image life maps: CSV grid, heatmap PGM and one keep mask per slimming stage."""

from __future__ import annotations

import csv
import math

import numpy as np

from .errors import ContractError, ExportError
from .images import write_pgm_bytes
from .inference import select_survivors
from .schedule import SlimSchedule


def _grid_side(N: int) -> int:
    side = math.isqrt(N)
    if side * side != N:
        raise ContractError(f"{N} patches do not form a square grid")
    return side


def stage_layers(schedule: SlimSchedule) -> list:
    """First layer that runs with each stage's reduced patch set."""
    return [min(t + 1, schedule.T) for t in schedule.t_slim]


def lifemap_arrays(lives, schedule: SlimSchedule, t_base: int) -> dict:
    tau = np.asarray(getattr(lives, "tau", lives), dtype=np.float64)
    if tau.shape != (schedule.N,):
        raise ContractError(f"expected {schedule.N} lives, got shape {tau.shape}")
    side = _grid_side(schedule.N)
    clamped = np.clip(tau, t_base, schedule.T)
    span = schedule.T - t_base
    scale = (clamped - t_base) / span if span > 0 else np.ones_like(clamped)
    heat = np.rint(scale * 255.0).astype(np.uint8)
    survivors = select_survivors(tau, schedule)
    layers = stage_layers(schedule)
    masks = [survivors.mask(t, schedule.N).reshape(side, side) for t in layers]
    return {"grid": clamped.reshape(side, side), "heatmap": heat.reshape(side, side),
            "masks": masks, "layers": layers}


def export_lifemap(lives, schedule: SlimSchedule, path_prefix, t_base: int, figure: bool = False) -> list:
    """Write ``<prefix>_lives.csv``, ``<prefix>_heatmap.pgm`` and ``<prefix>_stage<k>.pgm``.

    Lives are clamped to ``[t_base, T]``; in the masks 255 marks a kept
    patch. Returns the written paths.
    """
    arrays = lifemap_arrays(lives, schedule, t_base)
    prefix = str(path_prefix)
    written = []
    try:
        path = f"{prefix}_lives.csv"
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            for row in arrays["grid"]:
                writer.writerow([f"{v:.6f}" for v in row])
        written.append(path)
        path = f"{prefix}_heatmap.pgm"
        write_pgm_bytes(path, arrays["heatmap"])
        written.append(path)
        for k, mask in enumerate(arrays["masks"], start=1):
            path = f"{prefix}_stage{k}.pgm"
            write_pgm_bytes(path, np.where(mask, 255, 0).astype(np.uint8))
            written.append(path)
        if figure:
            from .plotting import lifemap_figure

            path = f"{prefix}_lifemap.png"
            lifemap_figure(arrays["grid"], arrays["masks"], arrays["layers"], path, t_base, schedule.T)
            written.append(path)
    except OSError as exc:
        raise ExportError(f"cannot write {path}: {exc.strerror or exc}") from exc
    return written


def read_lives_csv(path) -> np.ndarray:
    """Row-major lives from a CSV written by :func:`export_lifemap`."""
    with open(path, newline="") as fh:
        return np.array([[float(v) for v in row] for row in csv.reader(fh)]).reshape(-1)
