"""``sterf`` command line: spatial, temporal, compare, verify, rerun.

Exit codes: 0 success, 1 usage or config error, 2 numeric failure.
"""

from __future__ import annotations

import argparse
import os
import platform
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .arch import build_network
from .config import load_arch, parse_arch_config, serialize_arch
from .erf import (DEFAULT_SAMPLES, DEFAULT_SEED, normalize_for_viz, spatial_erf, spread_metrics,
                  temporal_erf)
from .errors import ConfigError, GraphReferenceError, NumericError, SterfError
from .export import (OutputError, csv_text, sha256_file, write_grid_csv, write_json,
                     write_pgm, write_temporal_csv)

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC = 0, 1, 2
DEFAULT_GAMMA = 0.5

PROTOCOL = {
    "input_distribution": "N(0,1) i.i.d. per element",
    "stimulus_value": 1.0,
}


class UsageError(SterfError):
    pass


def _prepare(spec, mode: str | None):
    if mode is not None:
        spec = replace(spec, neuron=spec.neuron.replace(mode=mode))
    return spec


def _network(spec, weights: str | None):
    net = build_network(spec)
    if weights:
        net.load_weights(weights)
    return net


def _out_dir(path) -> Path:
    out = Path(path)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OutputError(f"cannot create output directory {out}: {exc.strerror or exc}") from None
    return out


def _outputs(out: Path, names) -> dict:
    return {n: {"path": n, "sha256": sha256_file(out / n)} for n in names}


def _manifest(command: str, spec, net, *, seed, samples, stimulus, probes, bn_stats, gamma,
              outputs, started, extra=None) -> dict:
    m = {
        "tool": "sterf", "version": __version__, "python": platform.python_version(),
        "numpy": np.__version__, "command": command, "arch_toml": serialize_arch(spec),
        "arch": spec.to_dict(), "seed": seed, "samples": samples, "stimulus": stimulus,
        "probes": probes, "bn_stats": bn_stats, "gamma": gamma,
        "weights": net.weights_source if net.weights_sha256 is None
        else {"path": net.weights_source, "sha256": net.weights_sha256},
        "protocol": dict(PROTOCOL, stimulus_positions=(
            "centre pixel (H//2, W//2) at every timestep and channel" if stimulus == "spatial"
            else "every pixel and channel at the final timestep")),
        "outputs": outputs,
        "threads": int(os.environ.get("STERF_THREADS", "1") or 1),
        "duration_s": round(time.perf_counter() - started, 6),
    }
    if extra:
        m.update(extra)
    return m


def cmd_spatial(spec, probe: str = "output", samples: int = DEFAULT_SAMPLES, seed: int = DEFAULT_SEED,
                out_dir=".", *, bn_stats: bool = True, gamma: float = DEFAULT_GAMMA,
                weights: str | None = None) -> dict:
    started = time.perf_counter()
    net = _network(spec, weights)
    probe = net.check_probe(probe)
    out = _out_dir(out_dir)
    erf = spatial_erf(net, probe, samples, seed, bn_stats=bn_stats)
    if not np.isfinite(erf.grid).all():
        raise NumericError("spatial ERF contains non-finite values")
    report = spread_metrics(erf)
    write_grid_csv(erf.grid, out / "grid.csv")
    write_pgm(normalize_for_viz(erf, gamma), out / "heatmap.pgm")
    write_json(dict(report.to_dict(), probe=probe, shape=list(erf.grid.shape)), out / "spread.json")
    manifest = _manifest("spatial", spec, net, seed=seed, samples=samples, stimulus="spatial",
                         probes=[probe], bn_stats=bn_stats, gamma=gamma,
                         outputs=_outputs(out, ["grid.csv", "heatmap.pgm", "spread.json"]),
                         started=started)
    write_json(manifest, out / "manifest.json")
    return manifest


def cmd_temporal(spec, probe: str = "output", samples: int = DEFAULT_SAMPLES, seed: int = DEFAULT_SEED,
                 out_dir=".", *, bn_stats: bool = True, weights: str | None = None) -> dict:
    started = time.perf_counter()
    net = _network(spec, weights)
    probe = net.check_probe(probe)
    out = _out_dir(out_dir)
    erf = temporal_erf(net, probe, samples, seed, bn_stats=bn_stats)
    if not np.isfinite(erf.values).all():
        raise NumericError("temporal ERF contains non-finite values")
    write_temporal_csv(erf.values, out / "temporal.csv")
    manifest = _manifest("temporal", spec, net, seed=seed, samples=samples, stimulus="temporal",
                         probes=[probe], bn_stats=bn_stats, gamma=None,
                         outputs=_outputs(out, ["temporal.csv"]), started=started)
    write_json(manifest, out / "manifest.json")
    return manifest


def _safe(label: str) -> str:
    return "".join(ch if ch.isalnum() or ch in "-_." else "_" for ch in label)


def cmd_compare(specs: list, probe: str | None = None, samples: int = DEFAULT_SAMPLES,
                seed: int = DEFAULT_SEED, out_dir=".", *, labels: list[str] | None = None,
                bn_stats: bool = True, gamma: float = DEFAULT_GAMMA) -> dict:
    """r95 and entropy per (config, stage probe), same input stream for every config."""
    started = time.perf_counter()
    if len(specs) < 2:
        raise UsageError("compare needs at least two architectures (repeat --arch)")
    shapes = {(s.input, s.timesteps) for s in specs}
    if len(shapes) > 1:
        raise ConfigError(f"compared architectures disagree on input shape/timesteps: {sorted(shapes)}")
    labels = labels or [f"config{i}" for i in range(len(specs))]
    out = _out_dir(out_dir)
    rows, files = [], []
    for i, (spec, label) in enumerate(zip(specs, labels)):
        net = build_network(spec)
        probes = [net.check_probe(probe)] if probe else [s.name for s in net.stages]
        for p in probes:
            erf = spatial_erf(net, p, samples, seed, bn_stats=bn_stats)
            if not np.isfinite(erf.grid).all():
                raise NumericError(f"{label}/{p}: spatial ERF contains non-finite values")
            rep = spread_metrics(erf)
            heat = f"heatmap_{i}_{_safe(label)}_{p}.pgm"
            write_pgm(normalize_for_viz(erf, gamma), out / heat)
            files.append(heat)
            rows.append({"index": i, "config": label, "probe": p, "r95": rep.r95,
                         "mass_entropy": rep.mass_entropy, "centroid_y": rep.centroid[0],
                         "centroid_x": rep.centroid[1]})
    header = ["index", "config", "probe", "r95", "mass_entropy", "centroid_y", "centroid_x"]
    table = [header] + [[r[k] for k in header] for r in rows]
    (out / "compare.csv").write_text(csv_text(table), newline="")
    width = max(len(r["config"]) for r in rows)
    lines = [f"{'config':<{width}}  {'probe':<10} {'r95':>10} {'entropy':>10}"]
    lines += [f"{r['config']:<{width}}  {r['probe']:<10} {r['r95']:>10.4f} {r['mass_entropy']:>10.4f}"
              for r in rows]
    (out / "compare.txt").write_text("\n".join(lines) + "\n")
    files += ["compare.csv", "compare.txt"]
    manifest = {
        "tool": "sterf", "version": __version__, "command": "compare",
        "configs": [{"label": lab, "arch_toml": serialize_arch(s)} for lab, s in zip(labels, specs)],
        "seed": seed, "samples": samples, "stimulus": "spatial", "probe": probe,
        "bn_stats": bn_stats, "gamma": gamma, "weights": "random-init",
        "protocol": dict(PROTOCOL, stimulus_positions="centre pixel (H//2, W//2) at every "
                                                       "timestep and channel"),
        "rows": rows, "outputs": _outputs(out, files),
        "threads": int(os.environ.get("STERF_THREADS", "1") or 1),
        "duration_s": round(time.perf_counter() - started, 6),
    }
    write_json(manifest, out / "manifest.json")
    return manifest


def cmd_verify(networks: int = 6, seed: int = 0, spec=None, probe: str = "output",
               stream=None) -> bool:
    """Run the oracle suite and print one ComparisonReport per check."""
    stream = stream or sys.stdout
    from .autodiff import Tape
    from .erf import make_spatial_stimulus, make_temporal_stimulus, sample_input, spatial_reduce, \
        temporal_reduce
    from .neurons import LifParams
    from .oracle import (compare, finite_difference, jacobian_aggregate, jittered_input,
                         lif_chain_closed_form, random_small_network)
    from .rng import randn

    reports = []

    def engine_vs_jacobian(net, label, probe="output"):
        out_shape = net.output_shape(probe)
        x = sample_input(net, seed, 0)
        sp = spatial_erf(net, probe, 1, seed)
        te = temporal_erf(net, probe, 1, seed)
        js = jacobian_aggregate(net, make_spatial_stimulus(out_shape), x, probe)
        jt = jacobian_aggregate(net, make_temporal_stimulus(out_shape), x, probe)
        reports.append(compare(sp.per_channel, spatial_reduce(js), atol=1e-10,
                               label=f"{label} spatial vs jacobian"))
        reports.append(compare(te.values, temporal_reduce(jt), atol=1e-10,
                               label=f"{label} temporal vs jacobian"))

    for i in range(networks):
        engine_vs_jacobian(random_small_network(seed + i), f"net{i}")
    for i in range(max(1, networks // 2)):
        net = random_small_network(seed + 1000 + i, mode="soft", max_hw=6, max_t=2, channels=(2,))
        x = jittered_input(net, net.input_tensor_shape, seed + i)
        stim = randn(net.output_shape(), seed + 7 + i)
        tape = Tape()
        trace = net.forward(tape, x)
        g = tape.backward(trace.outputs[net.stages[-1].name], stim)[trace.input.id]
        reports.append(compare(g, finite_difference(net, stim, x), rtol=1e-5,
                               label=f"soft{i} tape vs finite differences"))
    for beta in (0.3, 0.5, 0.9):
        from .blocks import SN
        from .network import Network
        lif = LifParams(beta=beta, theta=1e6)
        net = Network.from_layers([SN("sn", output="membrane")], (1, 1, 1), 5, lif)
        vals = temporal_erf(net, samples=1).values
        closed = [lif_chain_closed_form(lif, 5, t) for t in range(5)]
        reports.append(compare(vals / vals[0], closed, atol=1e-9, label=f"lif chain beta={beta}"))
    if spec is not None:
        net = build_network(spec)
        try:
            engine_vs_jacobian(net, "arch", probe)
        except SterfError as exc:
            print(f"SKIP arch vs jacobian: {exc}", file=stream)
    for rep in reports:
        print(rep, file=stream)
    ok = all(r.passed for r in reports)
    print(f"{'ALL PASS' if ok else 'FAILURES'}: {sum(r.passed for r in reports)}/{len(reports)}",
          file=stream)
    return ok


def cmd_rerun(manifest_path, out_dir) -> tuple[bool, dict]:
    """Re-execute a spatial/temporal/compare manifest and compare output hashes."""
    import json
    m = json.loads(Path(manifest_path).read_text())
    command = m.get("command")
    weights = m.get("weights")
    wpath = weights.get("path") if isinstance(weights, dict) else None
    if command == "spatial":
        new = cmd_spatial(parse_arch_config(m["arch_toml"]), m["probes"][0], m["samples"], m["seed"],
                          out_dir, bn_stats=m["bn_stats"], gamma=m["gamma"], weights=wpath)
    elif command == "temporal":
        new = cmd_temporal(parse_arch_config(m["arch_toml"]), m["probes"][0], m["samples"], m["seed"],
                           out_dir, bn_stats=m["bn_stats"], weights=wpath)
    elif command == "compare":
        specs = [parse_arch_config(c["arch_toml"]) for c in m["configs"]]
        new = cmd_compare(specs, m["probe"], m["samples"], m["seed"], out_dir,
                          labels=[c["label"] for c in m["configs"]], bn_stats=m["bn_stats"],
                          gamma=m["gamma"])
    else:
        raise ConfigError(f"{manifest_path}: unknown manifest command {command!r}")
    diffs = {name: (entry["sha256"], new["outputs"].get(name, {}).get("sha256"))
             for name, entry in m["outputs"].items()
             if entry["sha256"] != new["outputs"].get(name, {}).get("sha256")}
    return not diffs, diffs


# -- argument parsing -----------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _common(p, multi_arch=False):
    if multi_arch:
        p.add_argument("--arch", action="append", required=True,
                       help="config file or preset name; repeat for each architecture")
    else:
        p.add_argument("--arch", required=True, help="config file or preset name")
    p.add_argument("--mixer", choices=("conv_k3", "mlpixer", "srb"))
    p.add_argument("--epsilon", type=float)
    p.add_argument("--probe", default=None, help="stage name, 'input' or 'output'")
    p.add_argument("--samples", type=int, default=DEFAULT_SAMPLES)
    p.add_argument("--seed", type=int, default=DEFAULT_SEED)
    p.add_argument("--bn-stats", choices=("on", "off"), default="on",
                   help="off freezes batch statistics in the backward pass")
    p.add_argument("--mode", choices=("spike", "soft"))
    p.add_argument("--out", required=True, help="output directory")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="sterf", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"sterf {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name in ("spatial", "temporal"):
        p = sub.add_parser(name, help=f"{name} ERF of one architecture")
        _common(p)
        p.add_argument("--weights", help="weight file to load instead of random init")
        if name == "spatial":
            p.add_argument("--gamma", type=float, default=DEFAULT_GAMMA)
    p = sub.add_parser("compare", help="spread metrics across architectures and stages")
    _common(p, multi_arch=True)
    p.add_argument("--gamma", type=float, default=DEFAULT_GAMMA)
    p = sub.add_parser("verify", help="run the oracle suite")
    p.add_argument("--arch", help="also check this architecture against the Jacobian oracle")
    p.add_argument("--probe", default="output")
    p.add_argument("--networks", type=int, default=6)
    p.add_argument("--seed", type=int, default=0)
    p = sub.add_parser("rerun", help="re-run a manifest and check output hashes")
    p.add_argument("manifest")
    p.add_argument("--out", required=True)
    return parser


def _run(args) -> int:
    if args.command == "verify":
        spec = load_arch(args.arch) if args.arch else None
        return EXIT_OK if cmd_verify(args.networks, args.seed, spec, args.probe) else EXIT_NUMERIC
    if args.command == "rerun":
        ok, diffs = cmd_rerun(args.manifest, args.out)
        for name, (old, new) in diffs.items():
            print(f"MISMATCH {name}: {old} != {new}")
        print("reproduced: all output hashes match" if ok else "reproduction FAILED")
        return EXIT_OK if ok else EXIT_NUMERIC
    if args.samples < 1:
        raise UsageError("--samples must be >= 1")
    bn = args.bn_stats == "on"
    if args.command == "compare":
        specs = [_prepare(load_arch(a, args.mixer, args.epsilon), args.mode) for a in args.arch]
        m = cmd_compare(specs, args.probe, args.samples, args.seed, args.out, labels=args.arch,
                        bn_stats=bn, gamma=args.gamma)
        print(Path(args.out, "compare.txt").read_text(), end="")
        return EXIT_OK
    spec = _prepare(load_arch(args.arch, args.mixer, args.epsilon), args.mode)
    probe = args.probe or "output"
    if args.command == "spatial":
        m = cmd_spatial(spec, probe, args.samples, args.seed, args.out, bn_stats=bn,
                        gamma=args.gamma, weights=args.weights)
    else:
        m = cmd_temporal(spec, probe, args.samples, args.seed, args.out, bn_stats=bn,
                         weights=args.weights)
    print(f"wrote {', '.join(m['outputs'])}, manifest.json to {args.out}")
    return EXIT_OK


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        return _run(args)
    except (NumericError, FloatingPointError) as exc:
        print(f"sterf: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (UsageError, ConfigError, GraphReferenceError, OutputError, OSError) as exc:
        print(f"sterf: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SterfError as exc:
        print(f"sterf: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
