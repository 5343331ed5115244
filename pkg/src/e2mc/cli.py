"""Command-line entry point: ``e2mc <command> [options]``.

Commands: pretrain, continue, audit, probe, sweep, report.  Every command
writes ``config.json`` (the resolved run config) into ``--out`` and never
writes to its inputs.

Exit codes: 0 success, 2 configuration error, 3 numeric abort,
4 corrupted input data.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import struct
import sys
import zlib
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import diagnostics as diag
from .config import RunConfig, load_run_config, PRESETS
from .criteria import Addon, CriterionSpec
from .errors import (
    ConfigError, DegenerateTestError, FormatError, NumericError, ParameterError,
    StratificationError,
)
from .experiments import cell_name, e2mc_variant
from .trainer import ModelState, continue_pretraining, init_model, load_dataset, train
from .trainer.checkpoint import MAGIC as CKPT_MAGIC, from_bytes, to_bytes
from .trainer.loop import TRACE_FIELDS, check_compatible

log = logging.getLogger("e2mc")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_DATA = 0, 2, 3, 4

EMB_MAGIC = b"EMB1"


# -- embedding files ----------------------------------------------------------

def embedding_to_bytes(z) -> bytes:
    """``EMB1``, u32 n, u32 d, row-major little-endian f64, CRC-32 of all before."""
    z = np.ascontiguousarray(z, dtype="<f8")
    if z.ndim != 2:
        raise ParameterError("embedding matrix must be 2-d")
    body = EMB_MAGIC + struct.pack("<II", *z.shape) + z.tobytes()
    return body + struct.pack("<I", zlib.crc32(body))


def embedding_from_bytes(blob: bytes) -> np.ndarray:
    if len(blob) < 16 or blob[:4] != EMB_MAGIC:
        raise FormatError("not an EMB1 embedding file")
    body, (crc,) = blob[:-4], struct.unpack("<I", blob[-4:])
    if zlib.crc32(body) != crc:
        raise FormatError("embedding file checksum mismatch")
    n, d = struct.unpack_from("<II", body, 4)
    if len(body) != 12 + 8 * n * d:
        raise FormatError(f"payload length {len(body) - 12} does not match n={n}, d={d}")
    return np.frombuffer(body, "<f8", n * d, 12).reshape(n, d).astype(np.float64)


def embedding_to_csv(z) -> str:
    z = np.asarray(z, dtype=np.float64)
    out = io.StringIO()
    out.write(",".join(f"z{j}" for j in range(z.shape[1])) + "\n")
    for row in z:
        out.write(",".join(repr(float(v)) for v in row) + "\n")
    return out.getvalue()


def embedding_from_csv(text: str) -> np.ndarray:
    rows = list(csv.reader(io.StringIO(text)))
    if len(rows) < 2:
        raise FormatError("CSV embedding needs a header and at least one row")
    width = len(rows[0])
    try:
        data = [[float(v) for v in r] for r in rows[1:] if r]
    except ValueError as e:
        raise FormatError(f"non-numeric CSV entry: {e}") from e
    if any(len(r) != width for r in data):
        raise FormatError("ragged CSV embedding rows")
    return np.array(data, dtype=np.float64).reshape(len(data), width)


def read_embeddings(path) -> np.ndarray:
    blob = Path(path).read_bytes()
    if blob[:4] == EMB_MAGIC:
        return embedding_from_bytes(blob)
    try:
        text = blob.decode("utf-8")
    except UnicodeDecodeError as e:
        raise FormatError(f"{path} is neither EMB1 nor UTF-8 CSV") from e
    return embedding_from_csv(text)


def write_embeddings(z, path) -> None:
    p = Path(path)
    if p.suffix == ".csv":
        p.write_text(embedding_to_csv(z))
    else:
        p.write_bytes(embedding_to_bytes(z))


# -- shared helpers -----------------------------------------------------------

def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _guard_inputs(out_file: Path, *inputs) -> None:
    for src in inputs:
        if src is not None and Path(src).resolve() == out_file.resolve():
            raise ConfigError(f"output {out_file} would overwrite input {src}", "$.out")


def _write_snapshot(out: Path, cfg: RunConfig, extra: dict | None = None) -> None:
    doc = cfg.to_dict()
    if extra:
        doc["_command"] = extra
    (out / "config.json").write_text(json.dumps(doc, sort_keys=True, indent=2) + "\n")


def _trace_csv(trace: list[dict]) -> str:
    out = io.StringIO()
    w = csv.writer(out, lineterminator="\n")
    w.writerow(TRACE_FIELDS)
    for row in trace:
        w.writerow([repr(row[k]) for k in TRACE_FIELDS])
    return out.getvalue()


def _load_checkpoint(path) -> ModelState:
    return from_bytes(Path(path).read_bytes())


def _init(cfg: RunConfig) -> ModelState:
    m = cfg.model
    return init_model(cfg.train, m.encoder_hidden, m.rep_dim, m.projector_hidden, m.embed_dim)


def _config(args) -> RunConfig:
    cfg = load_run_config(args.config, args.preset, args.seed)
    if getattr(args, "epochs", None) is not None:
        cfg = replace(cfg, cont=replace(cfg.cont, epochs=args.epochs))
    return cfg


def _model_report(model: ModelState, cfg: RunConfig, spec: CriterionSpec, probe: bool = True):
    x, y = load_dataset(cfg.train.dataset)
    d = cfg.diagnostics
    return diag.build_report(
        model.embed(x), spec.compact_transform, d.bins, d.k_list, d.metric,
        representations=model.represent(x) if probe else None,
        labels=y if probe else None,
        fractions=d.fractions, seeds=d.probe_seeds, entropy_cfg=spec.entropy,
        uniformity_n=d.uniformity_n, seed=cfg.train.seed, test_fraction=d.probe_test_fraction,
    )


def _emit_figures(out: Path, stem: str, report, hist, z, transform) -> None:
    if hist is not None:
        (out / f"{stem}_nn_hist.csv").write_text(diag.histogram_csv(hist))
        (out / f"{stem}_nn_hist.svg").write_text(diag.histogram_svg(hist))
    if report.uniformity_pvalues is not None:
        pv = report.uniformity_pvalues
        lines = [",".join(f"d{j}" for j in range(len(pv)))]
        lines += [",".join(repr(v) for v in row) for row in pv]
        (out / f"{stem}_uniformity.csv").write_text("\n".join(lines) + "\n")
    if z.shape[1] >= 2:
        from .transforms import apply_array
        u = apply_array(transform, np.asarray(z)[:, :2])
        (out / f"{stem}_scatter_d0_d1.svg").write_text(diag.scatter_svg(u))


# -- commands -----------------------------------------------------------------

def cmd_pretrain(args) -> int:
    cfg = _config(args)
    if cfg.train.criterion.addon is not Addon.NONE:
        raise ConfigError("pretrain runs the base criterion only; set addon to none",
                          "$.criterion.addon")
    out = _out_dir(args)
    model, trace = train(_init(cfg), cfg.train)
    (out / "checkpoint.e2mc").write_bytes(to_bytes(model))
    (out / "trace.csv").write_text(_trace_csv(trace))
    _write_snapshot(out, cfg, {"command": "pretrain"})
    return EXIT_OK


def cmd_continue(args) -> int:
    cfg = _config(args)
    spec = cfg.train.criterion
    out = _out_dir(args)
    target = out / "checkpoint.e2mc"
    _guard_inputs(target, args.checkpoint)
    base = _load_checkpoint(args.checkpoint)
    check_compatible(base, spec)
    model, trace = continue_pretraining(
        base, spec, cfg.train, epochs=cfg.cont.epochs, lr_factor=cfg.cont.lr_factor,
    )
    target.write_bytes(to_bytes(model))
    (out / "trace.csv").write_text(_trace_csv(trace))
    _write_snapshot(out, cfg, {"command": "continue", "checkpoint": str(args.checkpoint)})
    if args.no_report:
        return EXIT_OK
    before, hb = _model_report(base, cfg, spec)
    after, ha = _model_report(model, cfg, spec)
    after.significance = _significance(base, model, cfg)
    x, _ = load_dataset(cfg.train.dataset)
    for stem, rep, hist, m in (("before", before, hb, base), ("after", after, ha, model)):
        (out / f"report_{stem}.json").write_text(rep.to_json() + "\n")
        _emit_figures(out, stem, rep, hist, m.embed(x), spec.compact_transform)
    return EXIT_OK


def _significance(before: ModelState, after: ModelState, cfg: RunConfig) -> dict:
    """McNemar and paired permutation tests on the smallest-fraction probe."""
    x, y = load_dataset(cfg.train.dataset)
    frac = min(cfg.diagnostics.fractions)
    seed = cfg.diagnostics.probe_seeds[0] if cfg.diagnostics.probe_seeds else 0
    tf = cfg.diagnostics.probe_test_fraction
    _, pa, te = diag.linear_probe(before.represent(x), y, frac, seed, tf, return_predictions=True)
    _, pb, _ = diag.linear_probe(after.represent(x), y, frac, seed, tf, return_predictions=True)
    res = {"fraction": frac, "probe_seed": seed, "n_test": int(te.size)}
    try:
        chi2, p = diag.mcnemar_test(pa, pb, y[te])
        res["mcnemar"] = {"chi2": chi2, "p": p}
    except DegenerateTestError:
        res["mcnemar"] = None
    res["permutation_p"] = diag.paired_permutation_test(
        pb == y[te], pa == y[te], cfg.diagnostics.n_resamples, seed=seed,
    )
    return res


def cmd_audit(args) -> int:
    cfg = _config(args)
    out = _out_dir(args)
    spec = cfg.train.criterion
    transform = args.transform or spec.compact_transform
    blob = Path(args.input).read_bytes()
    reps = labels = None
    if blob[:4] == CKPT_MAGIC:
        model = from_bytes(blob)
        x, labels = load_dataset(cfg.train.dataset)
        z = model.embed(x)
        reps = model.represent(x)
    else:
        z = read_embeddings(args.input)
    if args.standardize:
        sd = z.std(axis=0)
        sd[sd == 0] = 1.0
        z = (z - z.mean(axis=0)) / sd
    d = cfg.diagnostics
    report, hist = diag.build_report(
        z, transform, d.bins, d.k_list, d.metric, reps, labels, d.fractions,
        d.probe_seeds, spec.entropy, uniformity_n=d.uniformity_n, seed=cfg.train.seed,
        test_fraction=d.probe_test_fraction,
    )
    (out / "report.json").write_text(report.to_json() + "\n")
    _emit_figures(out, "audit", report, hist, z, transform)
    _write_snapshot(out, cfg, {
        "command": "audit", "input": str(args.input), "standardize": args.standardize,
        "transform": str(getattr(transform, "value", transform)),
    })
    return EXIT_OK


def _probe_csv(rows: list[dict]) -> str:
    lines = ["fraction,mean,se,n"]
    lines += [f"{r['fraction']!r},{r['mean']!r},{r['se']!r},{r['n']}" for r in rows]
    return "\n".join(lines) + "\n"


def cmd_probe(args) -> int:
    cfg = _config(args)
    if args.fractions:
        cfg = replace(cfg, diagnostics=replace(cfg.diagnostics, fractions=tuple(args.fractions)))
    out = _out_dir(args)
    model = _load_checkpoint(args.checkpoint)
    x, y = load_dataset(cfg.train.dataset)
    d = cfg.diagnostics
    rows = diag.probe_table(model.represent(x), y, d.fractions, d.probe_seeds,
                            d.probe_test_fraction)
    (out / "probe.csv").write_text(_probe_csv(rows))
    _write_snapshot(out, cfg, {"command": "probe", "checkpoint": str(args.checkpoint)})
    return EXIT_OK


SWEEP_FIELDS = ("beta", "gamma", "epochs", "status", "probe_fraction", "probe_mean",
                "probe_se", "overlap", "median_log_p", "mean_entropy", "final_loss")


def _sweep_metrics(model, cfg, spec) -> dict:
    x, y = load_dataset(cfg.train.dataset)
    d = cfg.diagnostics
    frac = min(d.fractions)
    row = diag.probe_table(model.represent(x), y, (frac,), d.probe_seeds, d.probe_test_fraction)[0]
    rep, _ = diag.build_report(
        model.embed(x), spec.compact_transform, d.bins, d.k_list, d.metric,
        entropy_cfg=spec.entropy, uniformity_n=d.uniformity_n, seed=cfg.train.seed,
    )
    return {
        "probe_fraction": frac, "probe_mean": row["mean"], "probe_se": row["se"],
        "overlap": rep.nn_histograms["overlap"] if rep.nn_histograms else float("nan"),
        "median_log_p": rep.uniformity_median_log_p,
        "mean_entropy": rep.mean_marginal_entropy,
    }


def run_sweep(cfg: RunConfig, base: ModelState) -> list[dict]:
    """One row per (beta, gamma, epochs) cell, all continued from ``base``.

    Epoch counts are reached incrementally from one continuation per
    (beta, gamma); with a constant schedule this equals separate runs.
    A failing cell is recorded and the sweep moves on.
    """
    rows = []
    base_spec = replace(cfg.train.criterion, addon=Addon.NONE, beta=0.0, gamma=0.0)
    epochs = sorted(set(cfg.sweep.epochs))
    for b in cfg.sweep.betas:
        for g in cfg.sweep.gammas:
            spec = e2mc_variant(base_spec, beta=b, gamma=g)
            model, done, last = base, 0, float("nan")
            failed = None
            for e in epochs:
                row = {"beta": b, "gamma": g, "epochs": e}
                if failed is None:
                    try:
                        if e > done:
                            model, trace = continue_pretraining(
                                model, spec, cfg.train, epochs=e - done,
                                lr_factor=cfg.cont.lr_factor,
                            )
                            last = trace[-1]["loss"]
                            done = e
                        row.update(_sweep_metrics(model, cfg, spec))
                        row["final_loss"] = last
                        row["status"] = "ok"
                    except (NumericError, ParameterError, ArithmeticError) as err:
                        failed = f"failed: {type(err).__name__}: {str(err).splitlines()[0]}"
                        log.warning("sweep cell %s failed: %s", cell_name(b, g), failed)
                if failed is not None:
                    row["status"] = failed
                rows.append(row)
    return rows


def _sweep_csv(rows: list[dict]) -> str:
    out = io.StringIO()
    w = csv.writer(out, lineterminator="\n")
    w.writerow(SWEEP_FIELDS)
    for r in rows:
        w.writerow([repr(r[k]) if isinstance(r.get(k), float) else r.get(k, "") for k in SWEEP_FIELDS])
    return out.getvalue()


def cmd_sweep(args) -> int:
    cfg = _config(args)
    if args.betas:
        cfg = replace(cfg, sweep=replace(cfg.sweep, betas=tuple(args.betas)))
    if args.gammas:
        cfg = replace(cfg, sweep=replace(cfg.sweep, gammas=tuple(args.gammas)))
    if args.sweep_epochs:
        cfg = replace(cfg, sweep=replace(cfg.sweep, epochs=tuple(args.sweep_epochs)))
    out = _out_dir(args)
    if args.checkpoint:
        base = _load_checkpoint(args.checkpoint)
        check_compatible(base, cfg.train.criterion)
    else:
        pre = replace(cfg.train, criterion=replace(cfg.train.criterion, addon=Addon.NONE))
        base, _ = train(_init(cfg), pre)
        (out / "base_checkpoint.e2mc").write_bytes(to_bytes(base))
    rows = run_sweep(cfg, base)
    (out / "sweep.csv").write_text(_sweep_csv(rows))
    _write_snapshot(out, cfg, {"command": "sweep", "checkpoint": args.checkpoint})
    return EXIT_OK


def cmd_report(args) -> int:
    """Side-by-side CSV of headline numbers from several report JSON files."""
    out = _out_dir(args)
    keys = ("n", "d", "transform", "mean_marginal_entropy", "covariance_offdiag_fro",
            "uniformity_median_p", "uniformity_median_log_p")
    lines = ["report," + ",".join(keys) + ",nn_overlap"]
    for path in args.reports:
        try:
            rep = json.loads(Path(path).read_text())
        except json.JSONDecodeError as e:
            raise FormatError(f"{path}: not a JSON report ({e})") from e
        ov = (rep.get("nn_histograms") or {}).get("overlap", "")
        lines.append(",".join([str(path)] + [str(rep.get(k, "")) for k in keys] + [str(ov)]))
    (out / "summary.csv").write_text("\n".join(lines) + "\n")
    return EXIT_OK


# -- argument parsing ---------------------------------------------------------

def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="RunConfig JSON (overlays --preset)")
    p.add_argument("--preset", choices=sorted(PRESETS), help="named reference settings")
    p.add_argument("--seed", type=int, help="seed for data generation and training")
    p.add_argument("--out", required=True, help="output directory")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="e2mc", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("pretrain", help="train a base SSL model from scratch")
    _common(p)
    p.set_defaults(func=cmd_pretrain)

    p = sub.add_parser("continue", help="continued pre-training from a checkpoint")
    _common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--epochs", type=int, help="override continue.epochs")
    p.add_argument("--no-report", action="store_true", help="skip before/after diagnostics")
    p.set_defaults(func=cmd_continue)

    p = sub.add_parser("audit", help="diagnostics for an embedding file or checkpoint")
    _common(p)
    p.add_argument("input", help="EMB1 file, CSV with header, or checkpoint")
    p.add_argument("--transform", choices=["sigmoid", "gaussian_cdf", "identity"])
    p.add_argument("--standardize", action="store_true",
                   help="z-score columns before the compact transform")
    p.set_defaults(func=cmd_audit)

    p = sub.add_parser("probe", help="linear-probe accuracy table for a checkpoint")
    _common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--fractions", type=float, nargs="+")
    p.set_defaults(func=cmd_probe)

    p = sub.add_parser("sweep", help="grid over beta, gamma and continued epochs")
    _common(p)
    p.add_argument("--checkpoint", help="shared base checkpoint (pre-trained if omitted)")
    p.add_argument("--betas", type=float, nargs="+")
    p.add_argument("--gammas", type=float, nargs="+")
    p.add_argument("--sweep-epochs", type=int, nargs="+")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("report", help="summarize report JSON files into one CSV")
    p.add_argument("reports", nargs="+")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_report)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, StratificationError) as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericError as e:
        print(f"numeric abort: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except FormatError as e:
        print(f"corrupted input: {e}", file=sys.stderr)
        return EXIT_DATA
    except FileNotFoundError as e:
        print(f"missing input: {e}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
