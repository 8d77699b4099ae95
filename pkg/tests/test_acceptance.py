"""Acceptance suite: one test and one PASS/FAIL line per criterion.

Criteria 4-6 share trained ResNet-8 models on the 10x10 synthetic task
(module-scoped fixture, roughly 10-15 minutes on one CPU).
"""

import json
import subprocess
import sys
import time

import numpy as np
import pytest

from sparta import activations as A
from sparta import attacks as AT
from sparta import autodiff as ad
from sparta import data as D
from sparta import experiment as E
from sparta import models as M
from sparta import training as TR

from conftest import ACCEPTANCE_LINES, random_dscanet


def verdict(n, title, ok, detail):
    line = f"criterion {n} ({title}): {'PASS' if ok else 'FAIL'}; {detail}"
    print(line)
    ACCEPTANCE_LINES.append(line)
    assert ok, line


# ------------------------------------------------------------------ 1


def test_criterion_1_gradient_suite():
    t0 = time.time()
    worst, failures, checked = 0.0, [], 0
    for tag in A.ALL_TAGS:
        for seed in range(100):
            r = np.random.default_rng([1, seed])
            n, c = int(r.integers(1, 3)), int(r.integers(1, 9))
            if tag == "SpartaShared":
                share = int(r.choice([1, 2]))
                h = w = int(r.choice([2, 4]))
                kind = A.ActivationKind(tag, share)
            else:
                h, w = int(r.integers(1, 6)), int(r.integers(1, 6))
                kind = A.ActivationKind(tag)
            x = r.normal(size=(n, h, w, c))
            p = random_dscanet(c, r, kind.use_dpnet) if kind.is_sparta else None
            cot = r.normal(size=x.shape)
            consts = p.tensors if p else {}

            def fn(x):
                leaves = {k: x.tape.constant(v) for k, v in consts.items()} or None
                return ad.sum(ad.mul(A.apply_var(kind, x, leaves), cot))

            scale = float(np.abs(cot * A._run(kind, x, p)).sum())
            res = ad.check_gradients(fn, {"x": x}, kinks=[0.0], scale=scale)
            checked += 1
            worst = max(worst, res.max_rel_error)
            if not res.passed(1e-4):
                failures.append((tag, seed, res.max_rel_error))
    dt = time.time() - t0
    verdict(1, "gradient suite", not failures and dt < 120,
            f"{checked} cases over {len(A.ALL_TAGS)} activations, worst rel err {worst:.2e}, "
            f"{len(failures)} failures, {dt:.1f}s")


# ------------------------------------------------------------------ 2


def test_criterion_2_structure():
    r = np.random.default_rng(2)
    notes, ok = [], True

    # suppression bound on 1e5 elements per SPARTA variant
    x = r.normal(0, 3, size=(10, 10, 10, 100))
    for tag in ("Sparta", "SpartaNoDPNet", "SpartaOnActFeat"):
        p = random_dscanet(100, r, tag != "SpartaNoDPNet", scale=2.0)
        y = A.sparta_forward(x, p, tag)
        good = bool(np.all(y >= 0) and np.all(y <= np.maximum(x, 0)))
        ok &= good
    y = A.sparta_shared_forward(x, random_dscanet(100, r, scale=2.0), 2)
    ok &= bool(np.all(y >= 0) and np.all(y <= np.maximum(x, 0)))
    notes.append(f"bound on {x.size} elements x4 variants: {ok}")

    # detached derivative equals the attention on positive inputs
    xs = r.normal(size=(2, 5, 5, 8))
    p = random_dscanet(8, r)
    tape = ad.Tape()
    xv = tape.leaf(xs, name="x")
    cap = {}
    leaves = {k: tape.constant(v) for k, v in p.tensors.items()}
    g = tape.backward(ad.sum(A.apply_var(A.ActivationKind("Sparta"), xv, leaves, detach_attention=True,
                                         capture=cap)))["x"]
    dev = float(np.max(np.abs(g[xs > 0] - cap["attention"][xs > 0])))
    ok &= dev <= 1e-12
    notes.append(f"detached derivative dev {dev:.1e}")

    shared = A.sparta_shared_forward(xs, p, 1).tobytes() == A.sparta_forward(xs, p).tobytes()
    nonneg = np.abs(xs)
    actfeat = A.sparta_forward(nonneg, p, "SpartaOnActFeat").tobytes() == A.sparta_forward(nonneg, p).tobytes()
    z = r.normal(0, 4, size=10_000)
    sw = A.swish_relu(z)
    ident = bool(np.array_equal(sw[z >= 0], A.swish(z)[z >= 0]) and np.all(sw[z < 0] == 0))
    ok &= shared and actfeat and ident
    notes.append(f"shared n=1 bitwise {shared}, on-activated bitwise {actfeat}, swish-relu identity {ident}")
    verdict(2, "activation structure", ok, "; ".join(notes))


# ------------------------------------------------------------------ 3


def test_criterion_3_attack_contract():
    cfg = M.BackboneConfig(((1, 4), (1, 8)), (6, 6, 3))
    model = M.build_model(cfg, M.ReplacementStrategy(M.parse_slots("G*.Blast", cfg), A.ActivationKind("Sparta")), 3)
    r = np.random.default_rng(3)
    violations = 0
    for i in range(200):
        x = np.round(r.uniform(0, 255, size=(2, 6, 6, 3)))
        x[0, 0] = 0.0
        x[1, 0] = 255.0
        eps = float(r.choice([0.0, r.uniform(0, 64)]))
        steps = int(r.integers(1, 6))
        step = 0.0 if eps == 0 else float(eps * r.uniform(0.05, 1.0))
        acfg = AT.AttackConfig(eps, steps, step, bool(r.integers(2)), bool(r.integers(2)))
        xa, trace = AT.pgd(model, x, r.integers(0, 10, size=2), acfg, int(r.integers(1 << 30)))
        if np.max(np.abs(xa - x)) > eps or xa.min() < 0 or xa.max() > 255 or trace.losses.shape[0] != steps + 1:
            violations += 1

    ds = D.make_synth(D.SynthSpec(10, 5, (6, 6, 3), 3))
    clean = TR.evaluate(model, ds)
    null = AT.evaluate_robustness(model, ds, AT.AttackConfig(0, 5), 7)
    a1 = AT.attack_dataset(model, ds, AT.AttackConfig(16, 5, random_start=True), 11)
    a2 = AT.attack_dataset(model, ds, AT.AttackConfig(16, 5, random_start=True), 11)
    repro = a1[0].tobytes() == a2[0].tobytes() and a1[2].losses.tobytes() == a2[2].losses.tobytes()
    verdict(3, "attack contract", violations == 0 and null == clean and repro,
            f"{violations}/200 projection violations, eps=0 err {null} vs clean {clean}, bitwise repro {repro}")


# ------------------------------------------------------------- 4 to 6

EXTENT = (10, 10, 3)
EPOCHS = 8
PGD10 = AT.AttackConfig(16.0, 10)


def _train_cfg(mode):
    return TR.TrainConfig(epochs=EPOCHS, mode=mode, lr_decay_epochs=(int(EPOCHS * 0.6), int(EPOCHS * 0.85)))


@pytest.fixture(scope="module")
def desk():
    train = D.make_synth(D.SynthSpec(10, 200, EXTENT, 0, 120.0, 25.0))
    test = D.make_synth(D.SynthSpec(10, 50, EXTENT, 0, 120.0, 25.0), "test")
    cfg = M.BackboneConfig.resnet8(EXTENT)
    sparta = M.ReplacementStrategy(M.parse_slots("G*.Blast", cfg), A.ActivationKind("Sparta"))
    out = {"train": train, "test": test}

    def fit(name, model, mode):
        t = time.time()
        out[name], _ = TR.train(model, train, _train_cfg(mode))
        out[name + ".seconds"] = time.time() - t

    fit("relu.std", M.build_model(cfg, seed=0), "standard")
    fit("relu.adv", M.build_model(cfg, seed=0), "adversarial")
    fit("sparta.std", M.build_model(cfg, sparta, seed=0), "standard")
    fit("sparta.adv", M.build_model(cfg, sparta, seed=0), "adversarial")
    recipient = M.transplant_activations(out["sparta.std"], M.build_model(cfg, sparta, seed=1))
    fit("transfer.adv", recipient, "adversarial")
    return out


def test_criterion_4_standard_vs_adversarial(desk):
    te = desk["test"]
    clean = TR.evaluate(desk["relu.std"], te)
    adv_std = AT.evaluate_robustness(desk["relu.std"], te, PGD10, 1)
    adv_at = AT.evaluate_robustness(desk["relu.adv"], te, PGD10, 1)
    t_std, t_adv = desk["relu.std.seconds"], desk["relu.adv.seconds"]
    ok = clean <= 0.10 and adv_std >= 0.90 and adv_at <= adv_std - 0.20 and max(t_std, t_adv) <= 600
    verdict(4, "standard vs adversarial training", ok,
            f"ReLU ResNet-8 {EXTENT[0]}x{EXTENT[1]} synth: standard clean {clean:.1%}, PGD-10 {adv_std:.1%}; "
            f"adversarial PGD-10 {adv_at:.1%}; train {t_std:.0f}s / {t_adv:.0f}s")


def test_criterion_5_loss_traces(desk, tmp_path):
    te = desk["test"]
    notes, ok = [], True
    finals = {}
    for name in ("relu.std", "sparta.std"):
        _, _, trace = AT.attack_dataset(desk[name], te, PGD10, 5)
        path = tmp_path / f"trace_{name}.csv"
        trace.to_csv(path)
        rows = AT.read_trace_csv(path)
        mean = np.array([r[1] for r in rows])
        std = np.array([r[2] for r in rows])
        frac = float(np.mean(np.diff(mean) <= 0))
        good = len(rows) == PGD10.steps + 1 and np.all(np.isfinite(mean)) and np.all(np.isfinite(std)) and frac >= 0.9
        ok &= bool(good)
        finals[name] = mean[-1]
        notes.append(f"{name} {len(rows)} rows, non-increasing {frac:.0%}, final mean loss {mean[-1]:.3f}")
    order = "SPARTA above ReLU" if finals["sparta.std"] > finals["relu.std"] else "SPARTA not above ReLU"
    verdict(5, "loss traces", ok, "; ".join(notes) + f"; ordering (reported only): {order}")


def test_criterion_6_transfer(desk):
    donor, rec, joint = desk["sparta.std"], desk["transfer.adv"], desk["sparta.adv"]
    same = all(rec.params[k].tobytes() == donor.params[k].tobytes()
               for s in donor.sparta_slots() for k in donor.activation_keys(s))
    te = desk["test"]
    c_rec, c_joint = TR.evaluate(rec, te), TR.evaluate(joint, te)
    a_rec = AT.evaluate_robustness(rec, te, PGD10, 1)
    a_joint = AT.evaluate_robustness(joint, te, PGD10, 1)
    verdict(6, "transfer contract", same and abs(c_rec - c_joint) <= 0.10,
            f"DSCANet bytes equal donor {same}; clean err transfer {c_rec:.1%} vs joint {c_joint:.1%}; "
            f"PGD-10 transfer {a_rec:.1%} vs joint {a_joint:.1%}; "
            f"train {desk['transfer.adv.seconds']:.0f}s / {desk['sparta.adv.seconds']:.0f}s")


# ------------------------------------------------------------------ 7


def _dscanet_count(c):
    co = min(256, c)
    canet = (c * co + co) + (co * c + c)
    sanet = (c * co + co) + (co * co + co)
    dpnet = co * (co + 1) + (co + 1)
    return canet + sanet + dpnet


def test_criterion_7_parameter_accounting():
    cfg = M.BackboneConfig.resnet18()
    relu = M.build_model(cfg).parameter_count()
    slots = M.parse_slots("G*.Blast", cfg)
    sp = M.build_model(cfg, M.ReplacementStrategy(slots, A.ActivationKind("Sparta"))).parameter_count()
    analytic = sum(_dscanet_count(cfg.slot_channels(s)) for s in slots)
    overhead = (sp - relu) / relu
    verdict(7, "parameter accounting", sp - relu == analytic and overhead < 0.10,
            f"ResNet-18 ReLU {relu:,}, SPARTA G*.Blast {sp:,}, delta {sp - relu:,} "
            f"(analytic {analytic:,}), overhead {overhead:.2%}")


# ------------------------------------------------------------------ 8

CLI_CFG = """\
data.synth = true
synth.train_per_class = 8
synth.test_per_class = 4
synth.extent = 8x8x3
strategy.slots = G*.Blast
strategy.activation = Sparta
train.epochs = 2
train.batch_size = 40
eval.attacks = 0:1, 16:5
dump.layer = G1.B1
sweep.epsilons = 0,8,16
sweep.steps = 3
"""


def _sparta(args, cwd):
    return subprocess.run([sys.executable, "-m", "sparta.cli", *args], cwd=cwd, capture_output=True, text=True)


def test_criterion_8_io(tmp_path):
    notes = []
    r = np.random.default_rng(8)
    raw = bytes(np.concatenate([np.concatenate([[r.integers(0, 10)], r.integers(0, 256, 3072)])
                                for _ in range(5)]).astype(np.uint8))
    cifar_ok = D.encode_cifar10(D.decode_cifar10(raw)) == raw
    notes.append(f"CIFAR round trip bitwise {cifar_ok}")

    (tmp_path / "c.cfg").write_text(CLI_CFG)
    outs = []
    for run in ("a", "b"):
        res = _sparta(["train", "--config", "c.cfg", "--out", run, "--plot"], tmp_path)
        assert res.returncode == 0, res.stderr
        outs.append(tmp_path / run)
    ident = all((outs[0] / f).read_bytes() == (outs[1] / f).read_bytes()
                for f in ("result.json", "checkpoint.bin", "trace_PGD-1@0.csv", "trace_PGD-5@16.csv"))
    notes.append(f"two invocations byte-identical {ident}")

    a = outs[0]
    assert _sparta(["sweep", "--config", "c.cfg", "--out", "a", "--plot"], tmp_path).returncode == 0
    assert _sparta(["dump-features", "--config", "c.cfg", "--out", "a", "--checkpoint", "a/checkpoint.bin"],
                   tmp_path).returncode == 0
    parsed = []
    row = E.ResultRow.from_json((a / "result.json").read_text())
    parsed.append(row.adv_err["PGD-1@0"] == row.clean_err)
    parsed.append(len(AT.read_trace_csv(a / "trace_PGD-5@16.csv")) == 6)
    parsed.append([json.loads(l)["epoch"] for l in (a / "epochs.jsonl").read_text().splitlines()] == [0, 1])
    parsed.append(len(E.read_sweep_csv(a / "sweep.csv")) == 3)
    parsed.append("mean_error" in json.loads((a / "sweep_summary.json").read_text()))
    parsed.append(M.load_checkpoint(a / "checkpoint.bin").strategy_tag() == row.model)
    from sparta import config as C
    parsed.append(C.load(a / "config.txt").to_text() == (a / "config.txt").read_text())
    pgm = E.read_pgm(a / "features" / "G1.B1_n0_c000_after.pgm")
    parsed.append(pgm.shape == (8, 8))
    parsed.append(all((a / f).read_bytes()[:4] == b"\x89PNG" for f in ("traces.png", "sweep.png")))
    reparse = all(parsed)
    notes.append(f"CLI outputs re-parse {reparse} ({sum(parsed)}/{len(parsed)})")
    verdict(8, "I/O", cifar_ok and ident and reparse, "; ".join(notes))
