"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run with ``pytest tests/test_acceptance.py -v -s`` to see the lines inline;
they are also collected into the "acceptance criteria" section of the
terminal summary.
"""

import json
import time
from fractions import Fraction

import numpy as np
import pytest

import conftest
from conftest import max_rel_err
from sterf import cli
from sterf.arch import build_network, preset
from sterf.autodiff import Tape
from sterf.blocks import SN, MixerKind, channel_mixer_conv, mlpixer, snn_block, srb, ssc
from sterf.config import parse_arch_config
from sterf.erf import (make_spatial_stimulus, make_temporal_stimulus, sample_input, spatial_erf,
                       spatial_reduce, stimulus_gradient, support_radius, temporal_erf,
                       temporal_reduce)
from sterf.network import Network
from sterf.neurons import LifParams, lif_simulate
from sterf.oracle import (MIXER_TAGS, finite_difference, jacobian_aggregate, jittered_input,
                          random_small_network)
from sterf.rng import randn, stream_seed
from test_blocks import _hand_count


def report(n, ok, detail):
    line = f"ACCEPTANCE {n} {'PASS' if ok else 'FAIL'}: {detail}"
    conftest.ACCEPTANCE_LINES.append(line)
    print(line)
    assert ok, line


def test_criterion_1_engine_matches_jacobian_oracle():
    start = time.perf_counter()
    worst = 0.0
    for i in range(25):
        net = random_small_network(1000 + i, mixer=MIXER_TAGS[i % 3])
        x = sample_input(net, 42, 0)
        shape = net.output_shape()
        sp = spatial_erf(net, samples=1).per_channel
        te = temporal_erf(net, samples=1).values
        js = spatial_reduce(jacobian_aggregate(net, make_spatial_stimulus(shape), x))
        jt = temporal_reduce(jacobian_aggregate(net, make_temporal_stimulus(shape), x))
        worst = max(worst, np.abs(sp - js).max(), np.abs(te - jt).max())
    elapsed = time.perf_counter() - start
    report(1, worst <= 1e-10 and elapsed < 60,
           f"25 random nets, max abs diff {worst:.3e} (<= 1e-10), {elapsed:.1f}s (< 60s)")


def test_criterion_2_soft_mode_finite_differences():
    start = time.perf_counter()
    worst = 0.0
    for i in range(10):
        net = random_small_network(2000 + i, mode="soft", mixer=MIXER_TAGS[i % 3], max_hw=6,
                                   max_t=2, channels=(2,))
        x = jittered_input(net, net.input_tensor_shape, i)
        stim = randn(net.output_shape(), stream_seed(7, i))
        tape = Tape()
        trace = net.forward(tape, tape.input(x))
        g = tape.backward(trace.outputs[net.stages[-1].name], stim)[trace.input.id]
        worst = max(worst, max_rel_err(g, finite_difference(net, stim, x, h=1e-5)))
    elapsed = time.perf_counter() - start
    report(2, worst <= 1e-5 and elapsed < 60,
           f"10 soft nets, max rel err {worst:.3e} (<= 1e-5), {elapsed:.1f}s (< 60s)")


def test_criterion_3_lif_dynamics():
    start = time.perf_counter()
    exact = lif_simulate(np.array([Fraction(3, 5)] * 5, dtype=object),
                         LifParams(beta=Fraction(1), theta=Fraction(1), reset="soft"))
    train = tuple(int(s) for s in exact.s)
    worst = 0.0
    for beta in (0.3, 0.5, 0.9):
        net = Network.from_layers([SN("sn", output="membrane")], (1, 4, 4), 5,
                                  LifParams(beta=beta, theta=1e6))
        v = temporal_erf(net, samples=4).values
        worst = max(worst, max(abs(v[t] / v[0] - beta ** t) for t in range(5)))
    elapsed = time.perf_counter() - start
    report(3, train == (0, 1, 0, 1, 1) and worst <= 1e-9 and elapsed < 5,
           f"spike train {train}, decay-law max err {worst:.3e} (<= 1e-9), {elapsed:.2f}s")


def _abs_support(layer, c=4, hw=16, samples=4):
    net = Network.from_layers([layer], (c, hw, hw), 2, LifParams())
    erf = spatial_erf(net, samples=samples, bn_stats=False)
    m = np.abs(erf.per_channel).sum(axis=0)
    return support_radius(m), m[hw // 2, hw // 2]


def test_criterion_4_support_radius_law():
    start = time.perf_counter()
    cases = {"ssc": (ssc("b", 4), 3), "conv_k3 mixer": (channel_mixer_conv("m", 4), 2),
             "snn_block conv_k3": (snn_block("b", 4, MixerKind("conv_k3", 4)), 5)}
    found, ok = {}, True
    for label, (layer, bound) in cases.items():
        r, centre = _abs_support(layer)
        found[label] = r
        ok &= r <= bound and centre > 0
    for label, build in (("mlpixer", mlpixer), ("srb", srb)):
        r, centre = _abs_support(build("m", 4))
        found[label] = r
        ok &= r == 0 and centre > 0
    elapsed = time.perf_counter() - start
    detail = ", ".join(f"{k} r={v:g}" for k, v in found.items())
    report(4, ok and elapsed < 30, f"{detail} (bounds 3/2/5/0/0), {elapsed:.1f}s")


def test_criterion_5_globality_with_statistics():
    start = time.perf_counter()
    mins = {}
    for label, build in (("mlpixer", mlpixer), ("srb", srb)):
        net = Network.from_layers([build("m", 4)], (4, 8, 8), 4, LifParams())
        mag = sum(np.abs(stimulus_gradient(net, sample_input(net, 42, i), "output")).sum(axis=(0, 1, 2))
                  for i in range(20))
        mins[label] = float(mag.min())
    elapsed = time.perf_counter() - start
    ok = all(v > 1e-14 for v in mins.values()) and elapsed < 10
    report(5, ok, ", ".join(f"{k} min |grad| {v:.3e}" for k, v in mins.items())
           + f" (> 1e-14 everywhere on 8x8), {elapsed:.1f}s")


def test_criterion_6_mixer_ordering_at_stage1(tmp_path):
    start = time.perf_counter()
    names = ["meta-sdt-tiny-desk", "meta-sdt-tiny-desk-mlpixer", "meta-sdt-tiny-desk-srb"]
    m = cli.cmd_compare([preset(n) for n in names], probe="stage1", samples=60, seed=42,
                        out_dir=tmp_path, labels=["conv_k3", "mlpixer", "srb"])
    r = {row["config"]: row["r95"] for row in m["rows"]}
    elapsed = time.perf_counter() - start
    ok = r["mlpixer"] > r["conv_k3"] and r["srb"] > r["conv_k3"] and elapsed < 600
    report(6, ok, f"stage1 r95 conv_k3={r['conv_k3']:.4f} mlpixer={r['mlpixer']:.4f} "
                  f"srb={r['srb']:.4f}; need mlpixer > conv_k3 and srb > conv_k3, {elapsed:.0f}s")


def test_criterion_7_protocol_defaults(tmp_path):
    start = time.perf_counter()
    spec = parse_arch_config('input = [2, 5, 5]\ntimesteps = 3\n[[stages]]\nname = "s"\n'
                             '[[stages.blocks]]\nkind = "identity"\n')
    m = json.loads(json.dumps(cli.cmd_spatial(spec, out_dir=tmp_path)))
    args = cli.build_parser().parse_args(["spatial", "--arch", "x", "--out", "o"])
    net = build_network(spec)
    stim = make_spatial_stimulus(net.output_shape())
    draws = [sample_input(net, 42, i) for i in range(60)]
    checks = {
        "manifest samples 60": m["samples"] == 60,
        "manifest seed 42": m["seed"] == 42,
        "CLI defaults": (args.samples, args.seed) == (60, 42),
        "N(0,1) input": m["protocol"]["input_distribution"].startswith("N(0,1)")
        and abs(np.mean(draws)) < 0.05 and abs(np.std(draws) - 1) < 0.05,
        "unit centre stimulus": m["protocol"]["stimulus_value"] == 1.0
        and np.array_equal(np.nonzero(stim)[3], np.full(6, 2)) and stim.sum() == 6
        and set(np.unique(stim)) == {0.0, 1.0},
    }
    elapsed = time.perf_counter() - start
    bad = [k for k, v in checks.items() if not v]
    report(7, not bad and elapsed < 1, f"checked {', '.join(checks)}; failed {bad or 'none'}, "
                                       f"{elapsed:.2f}s")


def test_criterion_8_rerun_hash_identical(tmp_path, monkeypatch):
    start = time.perf_counter()
    desk = preset("meta-sdt-tiny-desk")
    monkeypatch.setenv("STERF_THREADS", "1")
    cli.cmd_spatial(desk, "stage1", 8, 42, tmp_path / "sp")
    cli.cmd_temporal(desk, "stage1a", 8, 42, tmp_path / "te")
    cli.cmd_compare([desk, preset("meta-sdt-tiny-desk-srb")], "stage1a", 4, 42, tmp_path / "cmp",
                    labels=["conv_k3", "srb"])
    monkeypatch.setenv("STERF_THREADS", "4")
    results = {}
    for name in ("sp", "te", "cmp"):
        ok, diffs = cli.cmd_rerun(tmp_path / name / "manifest.json", tmp_path / f"{name}-again")
        results[name] = ok and not diffs
    elapsed = time.perf_counter() - start
    report(8, all(results.values()) and elapsed < 120,
           f"spatial/temporal/compare reruns under STERF_THREADS=4 identical: {results}, "
           f"{elapsed:.1f}s")


def test_criterion_9_parameter_accounting():
    start = time.perf_counter()
    weights = lambda layer: sum(int(np.prod(s.shape)) for s in layer.specs() if s.name.endswith(".weight"))
    srb_w, conv_w = weights(srb("m", 16, 4)), weights(channel_mixer_conv("m", 16, 4))
    counts = {}
    ok = srb_w == 2048 and conv_w == 18432
    for name, dims, mixer in (("meta-sdt-tiny", (16, 32, 64, 128, 192), "conv_k3"),
                              ("meta-sdt-tiny-srb", (16, 32, 64, 128, 192), "srb"),
                              ("meta-sdt-tiny-desk", (8, 16, 32, 64, 96), "conv_k3"),
                              ("meta-sdt-tiny-desk-srb", (8, 16, 32, 64, 96), "srb")):
        counts[name] = build_network(preset(name)).parameter_count()
        ok &= counts[name] == _hand_count(dims, 3, 7, mixer=mixer)
    elapsed = time.perf_counter() - start
    report(9, ok and elapsed < 1, f"srb {srb_w} vs conv_k3 {conv_w} weights at C=16, eps=4; "
                                  f"full counts {counts} match hand formula, {elapsed:.2f}s")
