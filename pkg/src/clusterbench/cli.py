"""Command-line front end.

Subcommands: ``synth-model``, ``calibrate``, ``witness``, ``teleport``,
``plan`` and ``report``.  Every run writes its outputs plus a
``manifest.json`` to the output directory.  Outputs carry the manifest hash
and are byte-identical for the same configuration and seed; wall time is
kept in the manifest only.

Exit status: 0 on success, 2 for bad configuration, 1 for runtime failures.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import math
import os
import platform
import sys
import time
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from .calibration import CalibrationDataset, CalibrationError, calibrate, design_random_states, simulate_calibration
from .config import ConfigError, parse_alpha_grid, parse_angle, parse_range, read_config
from .graphs import GraphFormatError, graph_from_name
from .mitigation import GENERATOR_MODES, maximize_exit_rate, select_generator_set, write_report
from .noise import ModelFormatError, NoiseRanges, ReadoutNoiseModel, format_model, read_model, synth_device
from .teleport import TeleportConfig, build_wire_circuit, fit_oscillation, group_perturbations, scan_alpha
from .witness import (
    WitnessPlan,
    genuine_entanglement_verdict,
    plan_samples,
    required_samples,
    run_witness,
    settings_csv,
    summary_json,
)

log = logging.getLogger("clusterbench")

OUT_DIR_ENV = "CLUSTERBENCH_OUT_DIR"
DEFAULT_OUT_DIR = "clusterbench-out"

# options that name input files; their content is hashed into the manifest
_INPUT_KEYS = ("model", "data", "rates", "graph")


class _ArgumentParser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


def _build_parser() -> argparse.ArgumentParser:
    p = _ArgumentParser(prog="clusterbench", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"clusterbench {__version__}")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key = value file; command-line flags take precedence")
    common.add_argument("--seed", type=int, help="master seed (default 0)")
    common.add_argument("--workers", type=int, help="worker processes (default 1)")
    common.add_argument("--out-dir", help=f"output directory (default ${OUT_DIR_ENV} or ./{DEFAULT_OUT_DIR})")
    common.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_ArgumentParser)

    s = sub.add_parser("synth-model", parents=[common], help="write a synthetic readout-noise model")
    s.add_argument("--n", type=int, help="qubit count")
    s.add_argument("--graph", help="take n (and default pairs) from a graph")
    s.add_argument("--eps", help="range lo:hi of 0->1 flip probabilities")
    s.add_argument("--eta", help="range lo:hi of 1->0 flip probabilities")
    s.add_argument("--pair-rate", help="range lo:hi of correlated pair rates")
    s.add_argument("--pairs", choices=("chain", "graph", "none", "all"), help="which pairs get correlated terms")
    s.add_argument("--depolarizing", type=float, help="per-layer depolarizing probability")

    s = sub.add_parser("calibrate", parents=[common], help="estimate a noise model from calibration data")
    s.add_argument("--model", help="ground-truth model to simulate a campaign from")
    s.add_argument("--data", help="existing calibration records (JSON lines)")
    s.add_argument("--states", type=int, help="random preparations (default 2 n^2)")
    s.add_argument("--shots", type=int, help="shots per preparation (default 1000)")
    s.add_argument("--mode", choices=GENERATOR_MODES, help="generator set (default most_correlated)")
    s.add_argument("--graph", help="graph for nearest_neighbor mode")
    s.add_argument("--threshold", type=float, help="correlation threshold (default 0.3)")
    s.add_argument("--unconditioned", action="store_true", default=None,
                   help="do not require the other qubits to read correctly")

    s = sub.add_parser("witness", parents=[common], help="run a fidelity-witness campaign")
    s.add_argument("--graph", help="chain:N, grid-sparse:RxC, grid-full:RxC[/n] or a graph file")
    s.add_argument("--model", help="noise model file or 'none'")
    s.add_argument("--method", choices=("raw", "tp", "ctmp"), help="mitigation (default raw)")
    s.add_argument("--rates", help="calibrated rate model for ctmp (default: the noise model's own)")
    s.add_argument("--epsilon", type=float, help="target half-width")
    s.add_argument("--delta", type=float, help="failure probability (default 0.003)")
    s.add_argument("--settings", type=int, help="explicit M")
    s.add_argument("--shots", type=int, help="explicit K")
    s.add_argument("--samples", type=int, help="CTMP walks per shot (default 1)")
    s.add_argument("--error-mode", choices=("hoeffding", "empirical"))

    s = sub.add_parser("teleport", parents=[common], help="scan teleportation fidelity against alpha")
    s.add_argument("--n", type=int, help="resource qubits")
    s.add_argument("--input", help="0, 1, +, -, +i or -i")
    s.add_argument("--kind", help="s, sb_odd or sb_even")
    s.add_argument("--groups", type=int, help="parallel perturbation groups (default 1)")
    s.add_argument("--alphas", help="start:stop:count or a comma list (default 0:pi:25)")
    s.add_argument("--beta", help="beta angle (default 0)")
    s.add_argument("--shots", type=int, help="shots per alpha (default 1000)")
    s.add_argument("--model", help="readout model over n+1 bits or 'none'")
    s.add_argument("--mitigate", choices=("none", "tp"))
    s.add_argument("--mode", choices=("sample", "exact"), help="sampled estimate or exact expectation")
    s.add_argument("--window-cap", type=int)

    s = sub.add_parser("plan", parents=[common], help="Hoeffding sample planner")
    s.add_argument("--epsilon", type=float)
    s.add_argument("--delta", type=float)
    s.add_argument("--gamma-overhead", type=float, help="overhead Gamma (default 1)")
    s.add_argument("--shots", type=int, help="fix K")
    s.add_argument("--rigorous", action="store_true", default=None, help="require M >= N")

    s = sub.add_parser("report", parents=[common], help="collect run summaries into one CSV")
    s.add_argument("runs", nargs="*", help="run directories (default: subdirectories of --out-dir)")
    return p


class _Options:
    """Flags override config-file values, which override defaults."""

    def __init__(self, args: argparse.Namespace, config: dict[str, str]):
        self.args = args
        self.config = config
        known = set(vars(args)) | {"runs"}
        unknown = sorted(set(config) - known)
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        self.resolved: dict[str, object] = {}

    def get(self, key: str, kind=str, default=None):
        val = getattr(self.args, key, None)
        if val is None and key in self.config:
            raw = self.config[key]
            try:
                if kind is bool:
                    val = raw.strip().lower() in ("1", "true", "yes", "on")
                else:
                    val = kind(raw)
            except ValueError as exc:
                raise ConfigError(f"config key {key}: cannot parse {raw!r}") from exc
        if val is None:
            val = default
        self.resolved[key] = val
        return val


def _sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


class _Run:
    def __init__(self, command: str, opts: _Options, out_dir: Path):
        self.command = command
        self.opts = opts
        self.out_dir = out_dir
        self.outputs: list[str] = []
        self.t0 = time.perf_counter()
        self._hash: str | None = None

    def manifest_core(self) -> dict:
        inputs = {}
        for key in _INPUT_KEYS:
            val = self.opts.resolved.get(key)
            if isinstance(val, str) and val.lower() != "none" and Path(val).is_file():
                inputs[key] = _sha256_file(val)
        return {
            "subcommand": self.command,
            "options": {k: v for k, v in sorted(self.opts.resolved.items()) if k not in ("out_dir", "workers", "verbose")},
            "inputs": inputs,
            "versions": {"clusterbench": __version__, "numpy": np.__version__, "scipy": scipy.__version__},
        }

    @property
    def hash(self) -> str:
        if self._hash is None:
            blob = json.dumps(self.manifest_core(), sort_keys=True, default=str).encode()
            self._hash = hashlib.sha256(blob).hexdigest()
        return self._hash

    def write(self, name: str, text: str, comment: str | None = "#") -> Path:
        """Write an output file, stamping the manifest hash (as a comment line when ``comment`` is set)."""
        path = self.out_dir / name
        if comment is not None:
            text = f"{comment} manifest sha256:{self.hash}\n" + text
        path.write_text(text)
        self.outputs.append(name)
        return path

    def write_json(self, name: str, doc: dict) -> Path:
        doc = dict(doc, manifest=f"sha256:{self.hash}")
        return self.write(name, json.dumps(doc, indent=2, sort_keys=True, default=_json_default) + "\n", None)

    def finish(self) -> None:
        core = self.manifest_core()
        core.update({
            "manifest_hash": self.hash,
            "config_path": self.opts.args.config,
            "outputs": self.outputs,
            "python": platform.python_version(),
            "wall_time": round(time.perf_counter() - self.t0, 3),
        })
        (self.out_dir / "manifest.json").write_text(json.dumps(core, indent=2, sort_keys=True, default=str) + "\n")


def _json_default(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"cannot serialise {type(obj).__name__}")


def _load_model(spec: str | None, n: int | None = None) -> ReadoutNoiseModel | None:
    if spec is None or spec.lower() == "none":
        return None
    try:
        model = read_model(spec)
    except OSError as exc:
        raise ConfigError(f"cannot read model {spec}: {exc.strerror}") from exc
    if n is not None and model.n != n:
        raise ConfigError(f"model {spec} has n={model.n}, expected {n}")
    return model


def _load_graph(spec: str | None):
    if spec is None:
        raise ConfigError("--graph is required")
    return graph_from_name(spec)


# ------------------------------------------------------------------ commands


def _cmd_synth_model(opts: _Options, run: _Run) -> int:
    seed = opts.get("seed", int, 0)
    graph_spec = opts.get("graph")
    graph = graph_from_name(graph_spec) if graph_spec else None
    n = opts.get("n", int, graph.n if graph else None)
    if n is None or n < 1:
        raise ConfigError("--n (or --graph) is required")
    defaults = NoiseRanges()
    ranges = NoiseRanges(
        parse_range(opts.get("eps", str, "")) if opts.get("eps") else defaults.eps,
        parse_range(opts.get("eta", str, "")) if opts.get("eta") else defaults.eta,
        parse_range(opts.get("pair_rate", str, "")) if opts.get("pair_rate") else defaults.pair_rate,
    )
    which = opts.get("pairs", str, "graph" if graph else "chain")
    if which == "none":
        pairs = []
    elif which == "all":
        pairs = [(j, k) for j in range(n) for k in range(j + 1, n)]
    elif which == "graph":
        if graph is None:
            raise ConfigError("--pairs graph needs --graph")
        pairs = list(graph.edges)
    else:
        pairs = None
    depol = opts.get("depolarizing", float)
    model = synth_device(n, seed, ranges, pairs, depol)
    run.write("model.txt", format_model(model))
    gamma = maximize_exit_rate(model).gamma
    run.write_json("model_summary.json", {"n": n, "terms": len(model.generator_terms), "gamma": gamma,
                                          "Gamma": math.exp(2 * gamma)})
    print(f"wrote model with n={n}, {len(model.generator_terms)} generator terms, gamma={gamma:.6g}")
    return 0


def _cmd_calibrate(opts: _Options, run: _Run) -> int:
    seed = opts.get("seed", int, 0)
    data_path = opts.get("data")
    model_path = opts.get("model")
    if (data_path is None) == (model_path is None):
        raise ConfigError("give exactly one of --data or --model")
    mode = opts.get("mode", str, "most_correlated")
    threshold = opts.get("threshold", float, 0.3)
    conditioned = not opts.get("unconditioned", bool, False)
    graph_spec = opts.get("graph")
    graph = graph_from_name(graph_spec) if graph_spec else None
    if mode == "nearest_neighbor" and graph is None:
        raise ConfigError("nearest_neighbor mode needs --graph")
    if data_path is not None:
        data = CalibrationDataset.from_jsonl(data_path)
    else:
        model = _load_model(model_path)
        states_n = opts.get("states", int, 2 * model.n ** 2)
        shots = opts.get("shots", int, 1000)
        rng = np.random.default_rng(np.random.SeedSequence(seed))
        states = design_random_states(model.n, states_n, rng)
        data = simulate_calibration(model, states, shots, rng)
        run.write("calibration.jsonl", data.to_jsonl(header={"manifest": f"sha256:{run.hash}"}), None)
    if graph is not None and graph.n != data.n:
        raise ConfigError(f"graph has n={graph.n}, data has n={data.n}")
    result = calibrate(data, conditioned=conditioned)
    rates = select_generator_set(mode, result, graph, threshold)
    model_out = ReadoutNoiseModel(data.n, result.tp_params, tuple(rates.terms))
    run.write("rates.txt", format_model(model_out))
    run.write("covariance.csv", result.covariance.to_csv())
    gres = maximize_exit_rate(rates)
    from .mitigation import tp_overhead

    tp_gamma, tp_Gamma = tp_overhead(result.tp_params)
    summary = {
        "n": data.n,
        "records": len(data),
        "total_shots": data.total,
        "conditioned": conditioned,
        "mode": mode,
        "pairs": sorted(list(p) for p in rates.pairs()),
        "clamped_rates": rates.clamped,
        "failed_pairs": {f"{j},{k}": msg for (j, k), msg in sorted(result.failed_pairs.items())},
        "tp": {"gamma": tp_gamma, "Gamma": tp_Gamma},
        "ctmp": {"gamma": gres.gamma, "Gamma": math.exp(2 * gres.gamma), "exact": gres.exact, "method": gres.method},
    }
    run.write_json("calibration_summary.json", summary)
    print(f"calibrated n={data.n}: TP Gamma={tp_Gamma:.6g}, CTMP[{mode}] gamma={gres.gamma:.6g} "
          f"Gamma={math.exp(2 * gres.gamma):.6g}, {len(rates.pairs())} pairs")
    return 0


def _cmd_witness(opts: _Options, run: _Run) -> int:
    seed = opts.get("seed", int, 0)
    workers = opts.get("workers", int, 1)
    graph = _load_graph(opts.get("graph"))
    model = _load_model(opts.get("model", str, "none"), graph.n)
    method = opts.get("method", str, "raw").lower()
    if method not in ("raw", "tp", "ctmp"):
        raise ConfigError(f"unknown method {method!r}")
    delta = opts.get("delta", float, 0.003)
    M, K = opts.get("settings", int), opts.get("shots", int)
    eps = opts.get("epsilon", float)
    T = opts.get("samples", int, 1)
    error_mode = opts.get("error_mode", str, "hoeffding")
    rates_path = opts.get("rates")
    rate_model = _load_model(rates_path, graph.n) if rates_path else None
    tp_params = rate_model.tp_rates if (rate_model is not None and method == "tp") else None
    rate_set = None
    gamma = 0.0
    Gamma = 1.0
    if method == "ctmp":
        from .calibration import RateSet

        terms = (rate_model or model).generator_terms if (rate_model or model) is not None else ()
        rate_set = RateSet(list(terms), graph.n)
        gamma = maximize_exit_rate(rate_set).gamma
        Gamma = math.exp(2 * gamma)
    elif method == "tp":
        from .mitigation import tp_overhead

        src = tp_params if tp_params is not None else (model.tp_rates if model is not None else np.zeros((graph.n, 2)))
        Gamma = tp_overhead(src)[1]
    if M is not None and K is not None:
        plan = WitnessPlan.explicit(M, K, delta, Gamma)
    elif eps is not None:
        plan = plan_samples(eps, delta, Gamma, K)
    else:
        raise ConfigError("give --settings and --shots, or --epsilon")
    result = run_witness(graph, model, plan, method, seed=np.random.SeedSequence(seed), tp_params=tp_params,
                         rate_set=rate_set, T=T, ctmp_gamma=gamma if method == "ctmp" else None, workers=workers,
                         error_mode=error_mode)
    run.write("settings.csv", settings_csv(result))
    text = summary_json(result, {"manifest": f"sha256:{run.hash}"})
    run.write("witness_summary.json", text, None)
    verdict = genuine_entanglement_verdict(result)
    est = result.estimate
    print(f"fidelity {est.value:.6f} +/- {est.half_width:.6f} ({est.error_mode}, {est.method}, "
          f"M={est.M}, K={est.K}); verdict: {verdict.label} (margin {verdict.margin:+.4f})")
    return 0


def _cmd_teleport(opts: _Options, run: _Run) -> int:
    seed = opts.get("seed", int, 0)
    n = opts.get("n", int)
    if n is None:
        raise ConfigError("--n is required")
    label = opts.get("input", str, "0")
    kind = opts.get("kind", str, "sb_odd")
    groups = opts.get("groups", int, 1)
    alphas = parse_alpha_grid(opts.get("alphas", str, "0:pi:25"))
    beta = parse_angle(opts.get("beta", str, "0"))
    shots = opts.get("shots", int, 1000)
    model = _load_model(opts.get("model", str, "none"), n + 1)
    mitigate = opts.get("mitigate", str, "none")
    mode = opts.get("mode", str, "sample")
    cap = opts.get("window_cap", int, 6)
    if mitigate == "tp" and model is None:
        raise ConfigError("--mitigate tp needs --model")
    try:
        config = TeleportConfig(n, label, group_perturbations(kind, groups, 0.0, beta), shots, model, cap)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    tp = model.tp_rates if mitigate == "tp" else None
    scan = scan_alpha(config, alphas, mode=mode, rng=np.random.SeedSequence(seed), tp_params=tp)
    run.write("alpha_scan.csv", scan.to_csv())
    harmonics = max(1, groups)
    doc = {"n": n, "input": config.input_label, "kind": config.perturbations[0].kind if groups else None,
           "groups": groups, "beta": beta, "shots": shots, "mode": mode, "mitigation": mitigate,
           "final_basis": build_wire_circuit(config).final_basis_label}
    if alphas.size >= 4 * harmonics + 2:
        fit = fit_oscillation(alphas, scan.fidelity, harmonics=harmonics)
        doc["fit"] = fit.as_dict()
        print(f"{alphas.size} alphas, mean fidelity {scan.fidelity.mean():.4f}, fluctuation {fit.fluctuation:.4f}")
    else:
        doc["fit"] = None
        print(f"{alphas.size} alphas, mean fidelity {scan.fidelity.mean():.4f} (too few points to fit)")
    run.write_json("fit.json", doc)
    return 0


def _cmd_plan(opts: _Options, run: _Run) -> int:
    eps = opts.get("epsilon", float)
    delta = opts.get("delta", float, 0.003)
    Gamma = opts.get("gamma_overhead", float, 1.0)
    if eps is None:
        raise ConfigError("--epsilon is required")
    try:
        plan = plan_samples(eps, delta, Gamma, opts.get("shots", int), bool(opts.get("rigorous", bool, False)))
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    exact = required_samples(eps, delta, Gamma)
    run.write_json("plan.json", dict(plan.as_dict(), N_unrounded=exact))
    print(f"N={plan.N_required}")
    print(f"M={plan.M} K={plan.K} (M*K={plan.N}, unrounded bound {exact:.6f})")
    return 0


def _cmd_report(opts: _Options, run: _Run) -> int:
    runs = opts.args.runs or sorted(p for p in run.out_dir.parent.glob("*") if (p / "manifest.json").is_file()
                                    and p != run.out_dir)
    rows = []
    for d in map(Path, runs):
        summary = d / "witness_summary.json"
        manifest = d / "manifest.json"
        if not summary.is_file() or not manifest.is_file():
            continue
        doc = json.loads(summary.read_text())
        wall = json.loads(manifest.read_text()).get("wall_time", float("nan"))
        est = doc["estimate"]
        rows.append({"method": est["method"], "n": est["n"], "M": est["M"], "K": est["K"], "T": est["T"],
                     "value": repr(float(est["value"])), "std_error": repr(float(est["std_error"])),
                     "gamma": repr(float(est["gamma"])), "Gamma": repr(float(est["Gamma"])),
                     "wall_time": f"{float(wall):.3f}"})
    if not rows:
        raise ConfigError("no witness runs found")
    text = write_report(rows)
    run.write("report.csv", text)
    sys.stdout.write(text)
    return 0


_COMMANDS = {
    "synth-model": _cmd_synth_model,
    "calibrate": _cmd_calibrate,
    "witness": _cmd_witness,
    "teleport": _cmd_teleport,
    "plan": _cmd_plan,
    "report": _cmd_report,
}

_CONFIG_ERRORS = (ConfigError, GraphFormatError, ModelFormatError, CalibrationError)


def main(argv: list[str] | None = None) -> int:
    try:
        args = _build_parser().parse_args(argv)
    except ConfigError as exc:
        print(f"clusterbench: error: {exc}", file=sys.stderr)
        return 2
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        config = read_config(args.config) if args.config else {}
        opts = _Options(args, config)
        out_dir = Path(opts.get("out_dir", str, os.environ.get(OUT_DIR_ENV, DEFAULT_OUT_DIR)))
        if args.command == "report" and not args.runs:
            target = out_dir / "report"
        else:
            target = out_dir
        target.mkdir(parents=True, exist_ok=True)
        if args.command == "report" and not args.runs:
            runs = sorted(p for p in out_dir.glob("*") if (p / "manifest.json").is_file() and p != target)
            args.runs = [str(p) for p in runs]
        run = _Run(args.command, opts, target)
        code = _COMMANDS[args.command](opts, run)
        run.finish()
        return code
    except _CONFIG_ERRORS as exc:
        print(f"clusterbench: config error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - every runtime failure maps to exit 1
        log.debug("runtime failure", exc_info=True)
        print(f"clusterbench: error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
