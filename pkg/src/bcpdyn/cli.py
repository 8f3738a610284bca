"""Command line runner: ``bcpdyn {validate,run,graph,domain,choi}``.

Experiments are described by a JSON config::

    {
      "d": 2,
      "family": [
        {"label": "Z", "kind": "dephasing", "basis": "computational", "p": 0.75},
        {"label": "X", "kind": "dephasing", "basis": "fourier", "p": 0.75}
      ],
      "driver": {"kind": "periodic", "sequence": ["Z", "X"]},
      "n_steps": 200,
      "seeds": [0, 1, 2, 3],
      "analyses": {"spectrum": false},
      "tolerances": {"rank_tol": 1e-9, "equality_tol": 1e-7},
      "out": "results"
    }

Exit codes: 0 success, 1 validation or analysis failure, 2 config or IO error.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import algebra, channels, cocycle, drivers, entanglement
from .channels import Channel, ChannelError

EXIT_OK, EXIT_FAIL, EXIT_CONFIG = 0, 1, 2

ANALYSES = ("domain_chain", "lyapunov", "spectrum", "kuperberg", "esp", "eb_report", "first_eb", "met")


class ConfigError(Exception):
    pass


@dataclass
class ExperimentConfig:
    d: int
    family: list[dict]
    driver: dict
    n_steps: int
    seeds: list[int]
    analyses: dict[str, bool]
    tolerances: dict
    out: Path
    base_dir: Path = field(default_factory=Path.cwd)

    def echo(self) -> dict:
        return {
            "d": self.d,
            "family": self.family,
            "driver": self.driver,
            "n_steps": self.n_steps,
            "seeds": self.seeds,
            "analyses": self.analyses,
            "tolerances": self.tolerances,
        }

    def run_options(self) -> cocycle.RunOptions:
        t = self.tolerances
        return cocycle.RunOptions(
            tol=t.get("rank_tol", algebra.DEFAULT_RANK_TOL),
            equality_tol=t.get("equality_tol", algebra.DEFAULT_EQUALITY_TOL),
            domain_every=t.get("domain_every"),
            window=t.get("window"),
            block=t.get("block", 16),
        )


def _resolve(base: Path, p: str) -> Path:
    path = Path(p)
    return path if path.is_absolute() else base / path


def load_config(path: str | Path, overrides: dict | None = None) -> ExperimentConfig:
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    base = path.parent
    overrides = overrides or {}
    try:
        d = int(raw["d"])
        family = list(raw["family"])
        driver = dict(raw.get("driver", {"kind": "iid"}))
        n_steps = int(raw.get("n_steps", 100))
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"malformed config: {exc}") from exc
    seeds = overrides.get("seeds") or raw.get("seeds", [0])
    if not seeds:
        raise ConfigError("seeds must be nonempty")
    analyses = {a: True for a in ANALYSES}
    analyses.update(raw.get("analyses", {}))
    tolerances = dict(raw.get("tolerances", {}))
    tolerances.update(overrides.get("tolerances", {}))
    for k, v in tolerances.items():
        if v is not None and not (isinstance(v, (int, float)) and v > 0):
            raise ConfigError(f"tolerance {k} must be positive, got {v!r}")
    if n_steps < 1:
        raise ConfigError("n_steps must be positive")
    for entry in family:
        if "file" in entry and not _resolve(base, entry["file"]).is_file():
            raise ConfigError(f"channel file not found: {entry['file']}")
    g = driver.get("graph")
    if isinstance(g, str) and not _resolve(base, g).is_file():
        raise ConfigError(f"graph file not found: {g}")
    # a command-line --out is taken relative to the working directory, a config "out" to the config
    out = Path(overrides["out"]) if overrides.get("out") else _resolve(base, raw.get("out", "results"))
    return ExperimentConfig(d, family, driver, n_steps, [int(s) for s in seeds], analyses,
                            tolerances, out, base)


def build_channel(entry: dict, d: int, base: Path) -> Channel:
    """Channel described by one family entry; generators validate, raw data does not."""
    label = str(entry.get("label", ""))
    kind = entry.get("kind", "file" if "file" in entry else None)
    if kind == "file":
        ch = channels.load_channel(_resolve(base, entry["file"]))
        ch = ch.with_label(label or ch.label)
    elif kind == "identity":
        ch = channels.identity_channel(d)
    elif kind == "depolarizing":
        ch = channels.completely_depolarizing(d)
    elif kind == "dephasing":
        ch = channels.dephasing(d, entry.get("basis", "computational"), float(entry["p"]))
    elif kind == "pinching":
        ch = channels.pinching(d, entry.get("basis", "computational"))
    elif kind == "mixed_unitary":
        ch = channels.random_mixed_unitary(d, int(entry.get("m", 2)), int(entry["seed"]),
                                           entry.get("block_sizes"))
    elif kind == "unitary":
        ch = channels.unitary_channel(channels.complex_from_json(entry["matrix"]))
    elif kind == "kraus":
        ks = tuple(channels.complex_from_json(k) for k in entry["kraus"])
        ch = Channel(d, channels.kraus_to_superop(ks), ks)
    elif kind == "superop":
        ch = Channel(d, channels.complex_from_json(entry["superop"]))
    else:
        raise ConfigError(f"unknown channel kind {kind!r}")
    if ch.d != d:
        raise ConfigError(f"channel {label!r} has dimension {ch.d}, config says {d}")
    return ch.with_label(label or ch.label)


def build_family(cfg: ExperimentConfig) -> drivers.ChannelFamily:
    chans = []
    for i, entry in enumerate(cfg.family):
        ch = build_channel(entry, cfg.d, cfg.base_dir)
        chans.append(ch if ch.label else ch.with_label(f"ch{i}"))
    return drivers.ChannelFamily(tuple(chans))


def build_driver(cfg: ExperimentConfig, family: drivers.ChannelFamily, seed: int) -> drivers.Driver:
    dcfg = dict(cfg.driver)
    g = dcfg.get("graph")
    if isinstance(g, str):
        dcfg["graph"] = drivers.load_graph(_resolve(cfg.base_dir, g))
    elif isinstance(g, dict) and "cyclic" in g:
        c = g["cyclic"]
        dcfg["graph"] = drivers.cyclic_algorithm_graph(int(c["N"]), int(c["ell"]), c.get("assign"),
                                                       c.get("ppt", ()))
    return drivers.driver_from_config(dcfg, seed, family)


# -- output helpers ------------------------------------------------------------------


def _clean(obj):
    """JSON-safe copy: numpy scalars to Python, non-finite floats to sentinels."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        if math.isnan(x):
            return "nan"
        if math.isinf(x):
            return "-inf" if x < 0 else "inf"
        return x
    if obj is None:
        return None
    if isinstance(obj, (int, str)):
        return obj
    return str(obj)


def _dump(obj, path: Path) -> None:
    path.write_text(json.dumps(_clean(obj), indent=1, sort_keys=True) + "\n")


def _log_or_sentinel(x: float):
    return "-inf" if x <= 0 else repr(float(np.log(x)))


def analyze(cfg: ExperimentConfig, seed: int) -> tuple[dict, list[list], list[list], np.ndarray]:
    family = build_family(cfg)
    drv = build_driver(cfg, family, seed)
    run_ = cocycle.run(family, drv, cfg.n_steps, cfg.run_options())
    stab = cocycle.stabilized_domain(run_)
    m_inf = stab.algebra
    on = cfg.analyses
    result: dict = {
        "seed": seed,
        "status": "ok",
        "index_log": "index_log.txt",
        "tau_hat": stab.tau_hat if not stab.pending else "pending",
        "m_infinity_dim": m_inf.dim,
        "m_infinity_abelian": algebra.is_abelian(m_inf),
        "reprojections": run_.reprojections,
    }
    if on.get("domain_chain"):
        result["domain_chain"] = run_.chain_dims
        result["index_contraction"] = cocycle.index_contraction(run_, stab)
    if on.get("lyapunov"):
        result["kappa"] = cocycle.lyapunov_kappa(run_, m_inf).to_dict()
    if on.get("spectrum"):
        result["spectrum"] = cocycle.lyapunov_spectrum(run_).to_dict()
    e = algebra.conditional_expectation(m_inf)
    if on.get("kuperberg"):
        result["records"] = cocycle.kuperberg_records(run_, e)
    if on.get("esp"):
        result["esp"] = cocycle.esp_check(run_).to_dict()
    if on.get("met"):
        result["met_report"] = cocycle.verify_met_structure(run_, m_inf, strict=False).to_dict()
    eb_rows = []
    if on.get("eb_report"):
        rep = entanglement.asymptotic_eb_report(run_, m_inf)
        result["eb_report"] = rep.to_dict()
        eb_rows = [[r["n"], r["ppt"], r["eb_sufficient"], "" if r["dist_upper"] is None else repr(r["dist_upper"])]
                   for r in rep.rows]
    if on.get("first_eb"):
        result["first_eb"] = entanglement.first_eb_time(run_).to_dict()
    checkpoints = {r.n: r.dim for r in run_.domain_chain}
    ts = []
    for n, s in cocycle.replay(run_):
        if n in checkpoints:
            ts.append([n, checkpoints[n], _log_or_sentinel(float(np.linalg.norm(s - e.superop, 2))),
                       _log_or_sentinel(float(run_.dist_delta1[n - 1]))])
    return result, ts, eb_rows, run_.index_log


def _write_csv(path: Path, header: list[str], rows: list[list]) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    path.write_text(buf.getvalue())


def _run_seed(cfg: ExperimentConfig, seed: int) -> dict:
    out = cfg.out / f"seed_{seed}"
    out.mkdir(parents=True, exist_ok=True)
    try:
        result, ts, eb_rows, idx = analyze(cfg, seed)
    except Exception as exc:  # worker failure is recorded, not propagated
        result = {"seed": seed, "status": "failed", "error": f"{type(exc).__name__}: {exc}"}
        _dump({"config": cfg.echo(), **result}, out / "run.json")
        return result
    (out / "index_log.txt").write_text("".join(f"{i}\n" for i in idx))
    _write_csv(out / "timeseries.csv", ["n", "dim", "log_dist_to_E", "log_dist_to_Delta1"], ts)
    if eb_rows:
        _write_csv(out / "eb.csv", ["n", "ppt", "eb_cert", "dist_upper"], eb_rows)
    _dump({"config": cfg.echo(), **result}, out / "run.json")
    return result


def summarize(cfg: ExperimentConfig, results: list[dict]) -> dict:
    ok = [r for r in results if r.get("status") == "ok"]
    summary: dict = {
        "config": cfg.echo(),
        "seeds": [r["seed"] for r in results],
        "failed_seeds": [r["seed"] for r in results if r.get("status") != "ok"],
    }
    kappas = [r["kappa"] for r in ok if "kappa" in r]
    if kappas:
        if all(k["status"] == "no-complement" for k in kappas):
            summary["kappa"] = "no-complement"
        else:
            vals = [float("-inf") if k["kappa_hat"] == "-inf" else k["kappa_hat"]
                    for k in kappas if k["kappa_hat"] is not None]
            finite = [v for v in vals if math.isfinite(v)]
            summary["kappa"] = {
                "values": vals,
                "mean": float(np.mean(finite)) if finite else "-inf",
                "spread": float(np.max(finite) - np.min(finite)) if finite else 0.0,
                "std": float(np.std(finite)) if finite else 0.0,
            }
    hist: dict[str, int] = {}
    for r in ok:
        key = str(r["tau_hat"])
        hist[key] = hist.get(key, 0) + 1
    summary["tau_hat_histogram"] = hist
    verdicts: dict[str, int] = {}
    for r in ok:
        v = r.get("eb_report", {}).get("verdict")
        if v:
            verdicts[v] = verdicts.get(v, 0) + 1
    summary["verdicts"] = verdicts
    summary["m_infinity_dims"] = sorted({r["m_infinity_dim"] for r in ok})
    return summary


# -- commands --------------------------------------------------------------------------


def cmd_validate(args) -> int:
    cfg = load_config(args.config)
    failed = False
    for i, entry in enumerate(cfg.family):
        label = entry.get("label", f"ch{i}")
        try:
            ch = build_channel(entry, cfg.d, cfg.base_dir)
            report = channels.validate_bcp(ch, cfg.tolerances.get("bcp_tol"))
        except (ChannelError, channels.BcpValidationError) as exc:
            print(f"{label}: INVALID ({exc})")
            failed = True
            continue
        status = "ok" if report.ok else "FAIL " + ",".join(report.failures())
        print(f"{label}: {status} residuals={['%.3g' % r for r in report.worst_violations]}")
        failed |= not report.ok
    return EXIT_FAIL if failed else EXIT_OK


def cmd_run(args) -> int:
    overrides: dict = {"tolerances": {}}
    if args.seeds:
        overrides["seeds"] = [int(s) for s in args.seeds.split(",")]
    if args.out:
        overrides["out"] = args.out
    for key in ("rank_tol", "equality_tol", "window", "block", "domain_every"):
        val = getattr(args, key, None)
        if val is not None:
            overrides["tolerances"][key] = val
    cfg = load_config(args.config, overrides)
    try:
        build_family(cfg)
    except channels.BcpValidationError as exc:
        print(f"family validation failed: {exc}", file=sys.stderr)
        return EXIT_FAIL
    try:
        cfg.out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ConfigError(f"cannot create output directory {cfg.out}: {exc}") from exc
    if args.workers > 1 and len(cfg.seeds) > 1:
        with ProcessPoolExecutor(max_workers=args.workers) as pool:
            results = list(pool.map(_run_seed, [cfg] * len(cfg.seeds), cfg.seeds))
    else:
        results = [_run_seed(cfg, s) for s in cfg.seeds]
    summary = summarize(cfg, results)
    _dump(summary, cfg.out / "summary.json")
    print(json.dumps({"tau_hat_histogram": summary["tau_hat_histogram"],
                      "failed_seeds": summary["failed_seeds"]}, sort_keys=True))
    return EXIT_FAIL if summary["failed_seeds"] else EXIT_OK


def cmd_graph(args) -> int:
    assign = {}
    for a in args.assign or []:
        if "=" not in a:
            raise ConfigError(f"--assign expects VERTEX=CHANNEL, got {a!r}")
        v, c = a.split("=", 1)
        assign[v] = c
    g = drivers.cyclic_algorithm_graph(args.N, args.ell, assign, args.ppt or ())
    if args.config:
        cfg = load_config(args.config)
        family = build_family(cfg)
        missing = sorted(set(g.channels) - set(family.labels))
        if missing:
            raise ConfigError(f"unresolved channel labels: {missing}")
        if not args.ppt:
            marks = [g.labels[i] for i, c in enumerate(g.channels)
                     if entanglement.is_ppt(family[family.index(c)])]
            g = drivers.cyclic_algorithm_graph(args.N, args.ell, assign, marks)
    pi = drivers.stationary_distribution(g)
    try:
        drivers.save_graph(g, args.out)
    except OSError as exc:
        raise ConfigError(f"cannot write {args.out}: {exc}") from exc
    for lab, p in zip(g.labels, pi):
        print(f"{lab}\t{p:.12g}")
    return EXIT_OK


def _load_channel_arg(path: str) -> Channel:
    try:
        return channels.load_channel(path)
    except FileNotFoundError as exc:
        raise ConfigError(f"channel file not found: {path}") from exc
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read channel file {path}: {exc}") from exc


def cmd_domain(args) -> int:
    ch = _load_channel_arg(args.channel)
    report = channels.validate_bcp(ch)
    if not report.ok:
        print(f"not bcp: {report.failures()}", file=sys.stderr)
        return EXIT_FAIL
    dom = algebra.multiplicative_domain(ch, args.rank_tol or algebra.DEFAULT_RANK_TOL)
    print(json.dumps({"d": ch.d, "dim": dom.dim, "abelian": algebra.is_abelian(dom),
                      "notes": list(dom.notes)}, sort_keys=True))
    if args.out:
        algebra.save_subspace(dom, args.out)
    return EXIT_OK


def cmd_choi(args) -> int:
    ch = _load_channel_arg(args.channel)
    c = entanglement.choi(ch)
    eb, how = entanglement.is_eb(ch)
    print(json.dumps(_clean({
        "d": ch.d,
        "eigenvalues": c.eigenvalues(),
        "pt_min_eigenvalue": entanglement.ppt_margin(ch),
        "ppt": entanglement.is_ppt(ch),
        "eb_certified": eb,
        "eb_method": how,
    }), sort_keys=True))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="bcpdyn", description=__doc__.split("\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", help="validate every channel of a config")
    p.add_argument("--config", required=True)
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("run", help="run the configured experiment for every seed")
    p.add_argument("--config", required=True)
    p.add_argument("--seeds", help="comma-separated seed list overriding the config")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out")
    p.add_argument("--rank-tol", dest="rank_tol", type=float)
    p.add_argument("--equality-tol", dest="equality_tol", type=float)
    p.add_argument("--window", type=int)
    p.add_argument("--block", type=int)
    p.add_argument("--domain-every", dest="domain_every", type=int)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("graph", help="write the cyclic algorithm/error Markov graph")
    p.add_argument("N", type=int)
    p.add_argument("ell", type=int)
    p.add_argument("--assign", action="append", metavar="VERTEX=CHANNEL")
    p.add_argument("--ppt", action="append", metavar="VERTEX")
    p.add_argument("--config", help="resolve channel labels against this config's family")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_graph)

    p = sub.add_parser("domain", help="multiplicative domain of a channel file")
    p.add_argument("channel")
    p.add_argument("--rank-tol", dest="rank_tol", type=float)
    p.add_argument("--out")
    p.set_defaults(func=cmd_domain)

    p = sub.add_parser("choi", help="Choi spectrum and PPT/EB certificates of a channel file")
    p.add_argument("channel")
    p.set_defaults(func=cmd_choi)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except KeyError as exc:
        print(f"config error: missing or unknown key {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ChannelError, drivers.GraphError, ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
