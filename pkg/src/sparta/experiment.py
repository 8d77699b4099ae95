"""Experiment runner: train, evaluate, sweep, dump features.

A run directory holds ``config.txt`` (the fully resolved config),
``checkpoint.bin``, ``result.json``, ``epochs.jsonl`` and one
``trace_<attack>.csv`` per evaluation attack.  Re-running from
``config.txt`` reproduces ``result.json`` byte for byte.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import attacks as A
from . import data as D
from . import models as M
from . import seeding
from . import tensor as T
from . import training as TR
from .config import ExperimentConfig


class UnknownLayerError(KeyError):
    pass


@dataclass
class ResultRow:
    model: str
    clean_err: float
    adv_err: dict[str, float]

    def to_json(self) -> str:
        return json.dumps({"model": self.model, "clean_err": self.clean_err, "adv_err": self.adv_err},
                          indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "ResultRow":
        d = json.loads(text)
        return cls(d["model"], d["clean_err"], d["adv_err"])


def load_data(cfg: ExperimentConfig) -> tuple[D.Dataset, D.Dataset]:
    """(train, test); without a test source the training set is reused."""
    if cfg.source == "synth":
        spec = cfg.synth
        test_spec = D.SynthSpec(spec.class_count, cfg.synth_test_per_class, spec.extent, spec.seed,
                                spec.margin, spec.noise, spec.texture, spec.marker_pixels)
        return D.make_synth(spec, "train"), D.make_synth(test_spec, "test")
    if cfg.source == "cifar10":
        tr = D.load_cifar10(cfg.paths["cifar10"])
        te = cfg.paths["cifar10_test"]
        return tr, (D.load_cifar10(te) if te else tr)
    tr = D.load_dataset(cfg.paths["file"])
    te = cfg.paths["test_file"]
    return tr, (D.load_dataset(te) if te else tr)


def build(cfg: ExperimentConfig, data: D.Dataset) -> M.ModelState:
    """Fresh model for ``data``; in transfer mode the donor's DSCANets are grafted in, frozen."""
    bb = cfg.backbone(data.image_shape, data.class_count)
    model = M.build_model(bb, cfg.strategy(bb), seeding.subseed(cfg.seed, "init"))
    if cfg.donor:
        donor = M.load_checkpoint(cfg.donor)
        model = M.transplant_activations(donor, model, cfg.slot_pairs(bb))
    return model


def evaluate_model(model: M.ModelState, test: D.Dataset, cfg: ExperimentConfig,
                   out_dir: Path | None = None) -> ResultRow:
    clean = TR.evaluate(model, test, cfg.eval_batch_size)
    adv = {}
    for atk in cfg.eval_attacks:
        s = seeding.subseed(cfg.seed, "eval", atk.label())
        xa, _, trace = A.attack_dataset(model, test, atk, s, cfg.eval_batch_size)
        adv[atk.label()] = float(np.mean(A.predict(model, xa, cfg.eval_batch_size) != test.labels))
        if out_dir is not None:
            trace.to_csv(out_dir / f"trace_{atk.label()}.csv")
    return ResultRow(model.strategy_tag(), clean, adv)


def run(cfg: ExperimentConfig, log=None) -> ResultRow:
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.txt").write_text(cfg.to_text())
    train, test = load_data(cfg)
    model = build(cfg, train)
    jsonl = open(out / "epochs.jsonl", "w")

    def on_epoch(rep):
        jsonl.write(rep.to_json() + "\n")
        jsonl.flush()
        if log:
            log(f"epoch {rep.epoch}: loss {rep.train_loss:.4f} clean_err {rep.clean_err:.4f} ({rep.seconds:.1f}s)")

    try:
        model, _ = TR.train(model, train, cfg.train, eval_dataset=test, on_epoch=on_epoch)
    finally:
        jsonl.close()
    M.save_checkpoint(model, out / "checkpoint.bin")
    row = evaluate_model(model, test, cfg, out)
    (out / "result.json").write_text(row.to_json())
    return row


# --------------------------------------------------------------------- sweep


def sweep_epsilon(model: M.ModelState, test: D.Dataset, cfg: ExperimentConfig,
                  eps_grid=None) -> tuple[list[tuple[float, float]], float]:
    """Error at each budget (same steps, step size scaled with epsilon) and the grid mean."""
    grid = list(cfg.sweep_epsilons if eps_grid is None else eps_grid)
    if not grid:
        raise ValueError("epsilon grid is empty")
    if any(b < a for a, b in zip(grid, grid[1:])):
        raise ValueError("epsilon grid must be ascending")
    base = A.AttackConfig(16.0, cfg.sweep_steps, None, cfg.eval_attacks[0].targeted if cfg.eval_attacks else True)
    seed = seeding.subseed(cfg.seed, "sweep")
    rows = [(float(e), A.evaluate_robustness(model, test, base.with_epsilon(e), seed, cfg.eval_batch_size))
            for e in grid]
    return rows, float(np.mean([r[1] for r in rows]))


def write_sweep_csv(path, rows) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["epsilon", "error"])
        for e, err in rows:
            w.writerow([repr(e), repr(err)])


def read_sweep_csv(path) -> list[tuple[float, float]]:
    with open(path, newline="") as f:
        r = csv.reader(f)
        if next(r) != ["epsilon", "error"]:
            raise ValueError(f"{path}: unexpected sweep header")
        return [(float(e), float(err)) for e, err in r]


# ------------------------------------------------------------ feature dumps


def normalize_map(m: np.ndarray) -> np.ndarray:
    """Min-max to 0..255 (uint8); a constant map becomes uniform 128."""
    lo, hi = float(m.min()), float(m.max())
    if hi == lo:
        return np.full(m.shape, 128, dtype=np.uint8)
    return np.round((m - lo) / (hi - lo) * 255.0).astype(np.uint8)


def write_pgm(path, img: np.ndarray) -> None:
    h, w = img.shape
    Path(path).write_bytes(f"P5\n{w} {h}\n255\n".encode() + np.ascontiguousarray(img, dtype=np.uint8).tobytes())


def read_pgm(path) -> np.ndarray:
    data = Path(path).read_bytes()
    tokens, pos = [], 0
    while len(tokens) < 4:
        while data[pos:pos + 1].isspace():
            pos += 1
        start = pos
        while not data[pos:pos + 1].isspace():
            pos += 1
        tokens.append(data[start:pos].decode())
    pos += 1
    if tokens[0] != "P5" or tokens[3] != "255":
        raise ValueError(f"{path}: not an 8-bit binary PGM")
    w, h = int(tokens[1]), int(tokens[2])
    return np.frombuffer(data[pos:pos + w * h], dtype=np.uint8).reshape(h, w)


def dump_features(model: M.ModelState, x, layer_path: str, out_dir) -> list[Path]:
    """PGM maps of one slot's activation input ("before") and output ("after").

    Writes ``<layer>_n<i>_c<ch>_<stage>.pgm`` per image and channel, plus the
    raw float maps as ``<layer>_<stage>.tensor`` (tensor serialization).
    """
    names = {M.slot_name(s) for s in model.cfg.slots()}
    if layer_path not in names:
        raise UnknownLayerError(f"unknown layer {layer_path!r}; slots are {', '.join(sorted(names))}")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cap: dict = {}
    M.forward(model, x, "eval", capture=cap)
    before, after = cap[layer_path]
    written = []
    for stage, maps in (("before", before), ("after", after)):
        raw = out / f"{layer_path}_{stage}.tensor"
        with open(raw, "wb") as f:
            T.write_tensor(f, maps)
        written.append(raw)
        for i in range(maps.shape[0]):
            for c in range(maps.shape[3]):
                p = out / f"{layer_path}_n{i}_c{c:03d}_{stage}.pgm"
                write_pgm(p, normalize_map(maps[i, :, :, c]))
                written.append(p)
    return written
