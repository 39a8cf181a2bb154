"""Command-line driver: validate | train | approx | ablate | report.

Every command reads a JSON configuration document and (except
``validate``) writes its artifacts into the directory given by ``--out``,
never anywhere else. Artifact names embed the seed and a hash of the
effective configuration; wall-clock data and timestamps live in a separate
``run_meta``/``timing`` sidecar so re-running a command with the same
config and seed reproduces the CSV and model bytes exactly.

Exit codes: 0 success, 2 configuration rejected, 3 structure or parameter
violation, 4 numeric failure, 5 missing or malformed input file.
"""

import argparse
import hashlib
import json
import math
import sys
import time
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path

from .baselines import ArtConfig, LassoConfig
from .errors import (
    BlockconvError,
    ConfigError,
    FormatError,
    NumericError,
    ParameterError,
    StructureError,
)
from .experiments import (
    TARGETS,
    MethodsConfig,
    MetricsRow,
    SignalDataset,
    aggregate_rows,
    assign_splits,
    history_csv_text,
    load_mnist_idx,
    loss_ablation,
    make_measurement_model,
    report_csv_text,
    run_approximation_study,
    run_cs_experiment,
    summary_text,
    synth_sparse_dataset,
)
from .network import OverlapSpec, StageSpec, save_model, validate_nonoverlap, validate_overlap
from .numerics import SeededRng
from .training import AdamWConfig, LossConfig, ScheduleConfig, TrainConfig

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_STRUCTURE = 3
EXIT_NUMERIC = 4
EXIT_IO = 5

COMMANDS = ("validate", "train", "approx", "ablate", "report")

_EPILOG = """\
exit codes:
  0  success
  2  configuration rejected (diagnostics listed on stderr)
  3  structure or parameter violation
  4  numeric failure (non-finite values)
  5  missing or malformed input file
"""


@dataclass
class RunConfig:
    """A fully validated command invocation."""

    command: str
    doc: dict
    seed: int
    out_dir: Path


def _is_int(v):
    return isinstance(v, int) and not isinstance(v, bool)


def _is_num(v):
    return _is_int(v) or isinstance(v, float)


def _positive_int(v):
    return _is_int(v) and v >= 1


def _int_list(v):
    return isinstance(v, list) and len(v) >= 1 and all(_positive_int(x) for x in v)


_TRAINING_KEYS = {
    "epochs": (True, _positive_int, "positive integer"),
    "batch_size": (True, _positive_int, "positive integer"),
    "alpha": (False, lambda v: _is_num(v) and 0.0 <= v <= 1.0, "number in [0, 1]"),
    "learning_rate": (False, lambda v: _is_num(v) and v >= 0, "number >= 0"),
    "beta1": (False, lambda v: _is_num(v) and 0.0 <= v < 1.0, "number in [0, 1)"),
    "beta2": (False, lambda v: _is_num(v) and 0.0 <= v < 1.0, "number in [0, 1)"),
    "epsilon": (False, lambda v: _is_num(v) and v > 0, "number > 0"),
    "weight_decay": (False, lambda v: _is_num(v) and v >= 0, "number >= 0"),
    "lr_decay_factor": (False, lambda v: _is_num(v) and 0.0 < v <= 1.0, "number in (0, 1]"),
    "lr_decay_period": (False, _positive_int, "positive integer"),
}

_EXPERIMENT_KEYS = {
    "kind": (True, lambda v: v in ("synthetic-sparse", "mnist-idx", "celeba-crops"),
             "one of synthetic-sparse, mnist-idx, celeba-crops"),
    "m": (True, _positive_int, "positive integer"),
    "n": (True, _positive_int, "positive integer"),
    "delta": (True, lambda v: _is_num(v) and v >= 0, "number >= 0"),
    "sparsity": (False, _positive_int, "positive integer"),
    "images": (False, lambda v: isinstance(v, str), "path string"),
    "labels": (False, lambda v: isinstance(v, str), "path string"),
    "images_dir": (False, lambda v: isinstance(v, str), "path string"),
    "limit": (False, _positive_int, "positive integer"),
    "train_count": (True, _positive_int, "positive integer"),
    "validation_count": (True, lambda v: _is_int(v) and v >= 0, "integer >= 0"),
    "test_count": (True, _positive_int, "positive integer"),
}

_SCHEMAS = {
    "validate": {
        "network": {
            "n": (True, _positive_int, "positive integer"),
            "ks": (True, _int_list, "non-empty list of positive integers"),
            "cs": (False, _int_list, "non-empty list of positive integers"),
        },
        "overlap": {
            "n": (True, _positive_int, "positive integer"),
            "layers": (True,
                       lambda v: isinstance(v, list) and len(v) >= 1 and all(
                           isinstance(p, list) and len(p) == 2 and all(_positive_int(x) for x in p)
                           for p in v),
                       "list of [kernel, stride] pairs"),
        },
    },
    "train": {
        "experiment": _EXPERIMENT_KEYS,
        "network": {
            "n": (False, _positive_int, "positive integer"),
            "ks": (True, _int_list, "non-empty list of positive integers"),
            "cs": (True, _int_list, "non-empty list of positive integers"),
        },
        "training": _TRAINING_KEYS,
        "baselines": {
            "art_sweeps": (False, _positive_int, "positive integer"),
            "art_relaxation": (False, lambda v: _is_num(v) and 0.0 < v <= 2.0,
                               "number in (0, 2]"),
            "lasso_lambda": (False, lambda v: v is None or (_is_num(v) and v >= 0),
                             "number >= 0 or null for grid selection"),
            "lasso_max_iters": (False, _positive_int, "positive integer"),
            "lasso_tol": (False, lambda v: _is_num(v) and v >= 0, "number >= 0"),
        },
    },
    "approx": {
        "approx": {
            "target": (True, lambda v: v in TARGETS,
                       "one of " + ", ".join(sorted(TARGETS))),
            "n": (True, _positive_int, "positive integer"),
            "plans": (True,
                      lambda v: isinstance(v, list) and len(v) >= 1 and all(
                          isinstance(p, dict) and set(p) == {"ks", "cs"}
                          and _int_list(p["ks"]) and _int_list(p["cs"])
                          for p in v),
                      'list of {"ks": [...], "cs": [...]} plans'),
            "grid_resolution": (False, lambda v: _is_int(v) and v >= 2, "integer >= 2"),
            "train_points": (False, _positive_int, "positive integer"),
        },
        "training": _TRAINING_KEYS,
    },
    "report": {
        "report": {
            "csv": (True, lambda v: isinstance(v, str), "path string"),
        },
    },
}
_SCHEMAS["ablate"] = {
    "experiment": _EXPERIMENT_KEYS,
    "network": _SCHEMAS["train"]["network"],
    "training": _TRAINING_KEYS,
    "ablate": {
        "alphas": (True,
                   lambda v: isinstance(v, list) and len(v) >= 1 and all(
                       _is_num(a) and 0.0 <= a <= 1.0 for a in v),
                   "non-empty list of numbers in [0, 1]"),
    },
}

# Sections a command accepts but does not require.
_OPTIONAL_SECTIONS = {
    "validate": {"overlap"},
    "train": {"baselines"},
    "approx": set(),
    "ablate": set(),
    "report": set(),
}


def _check_section(name, schema, section, diagnostics):
    if not isinstance(section, dict):
        diagnostics.append(f"{name}: must be an object")
        return
    for key in sorted(section):
        if key not in schema:
            diagnostics.append(f"{name}.{key}: unknown key")
    for key, (required, check, description) in schema.items():
        if key not in section:
            if required:
                diagnostics.append(f"{name}.{key}: missing required key ({description})")
            continue
        if not check(section[key]):
            diagnostics.append(f"{name}.{key}: expected {description}, got {section[key]!r}")


def _cross_checks(command, doc, diagnostics):
    """Constraints spanning keys; run only on sections that passed shape checks."""
    if diagnostics:
        return

    def structure(n, ks, where):
        check = validate_nonoverlap(n, ks)
        if not check.ok:
            diagnostics.append(f"{where}: {check.message}")

    if command == "validate":
        net = doc["network"]
        if "cs" in net and len(net["cs"]) != len(net["ks"]):
            diagnostics.append("network.cs: must pair one kernel count per stage")
    if command in ("train", "ablate"):
        exp, net = doc["experiment"], doc["network"]
        if len(net["cs"]) != len(net["ks"]):
            diagnostics.append("network.cs: must pair one kernel count per stage")
        else:
            structure(exp["n"], net["ks"], "network.ks")
        if "n" in net and net["n"] != exp["n"]:
            diagnostics.append(
                f"network.n: {net['n']} disagrees with experiment.n = {exp['n']}")
        if exp["n"] >= exp["m"]:
            diagnostics.append(
                f"experiment.n: compressive sensing needs n < m, got n={exp['n']}, m={exp['m']}")
        if exp["kind"] == "synthetic-sparse":
            if "sparsity" not in exp:
                diagnostics.append("experiment.sparsity: required for synthetic-sparse")
            elif exp["sparsity"] > exp["m"]:
                diagnostics.append(
                    f"experiment.sparsity: {exp['sparsity']} exceeds m = {exp['m']}")
        if exp["kind"] == "mnist-idx":
            for key in ("images", "labels"):
                if key not in exp:
                    diagnostics.append(f"experiment.{key}: required for mnist-idx")
        if doc["training"]["batch_size"] > exp["train_count"]:
            diagnostics.append(
                f"training.batch_size: {doc['training']['batch_size']} exceeds "
                f"train_count = {exp['train_count']}")
        lam = doc.get("baselines", {}).get("lasso_lambda")
        if command == "train" and lam is None and exp["validation_count"] == 0:
            diagnostics.append(
                "baselines.lasso_lambda: grid selection needs validation_count > 0; "
                "set an explicit value")
    if command == "approx":
        approx = doc["approx"]
        for i, plan in enumerate(approx["plans"]):
            if len(plan["ks"]) != len(plan["cs"]):
                diagnostics.append(
                    f"approx.plans[{i}]: ks and cs must have the same length")
            else:
                structure(approx["n"], plan["ks"], f"approx.plans[{i}].ks")
        if approx["target"] == "sine-product-mix" and approx["n"] < 4:
            diagnostics.append("approx.target: sine-product-mix needs n >= 4")
        if approx["target"] == "sine-product" and approx["n"] < 2:
            diagnostics.append("approx.target: sine-product needs n >= 2")


def parse_config(text, command, seed_override=None):
    """Validate a configuration document for ``command``.

    Returns a RunConfig (out_dir unset) or raises ConfigError carrying the
    complete list of diagnostics, each prefixed with its key path. Nothing
    is read from disk and no work starts until the document is fully clean.
    """
    if command not in COMMANDS:
        raise ConfigError([f"unknown command {command!r}"])
    diagnostics = []
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as err:
        raise ConfigError([f"document is not valid JSON: {err}"]) from err
    if not isinstance(doc, dict):
        raise ConfigError(["top level must be a JSON object"])

    schema = _SCHEMAS[command]
    needs_seed = command != "report"
    for section in sorted(doc):
        if section == "seed":
            continue
        if section not in schema:
            diagnostics.append(f"{section}: unknown section for command {command!r}")
    for section, keys in schema.items():
        if section not in doc:
            if section in _OPTIONAL_SECTIONS[command]:
                continue
            diagnostics.append(f"{section}: missing required section")
            continue
        _check_section(section, keys, doc[section], diagnostics)

    seed = seed_override
    if seed is None:
        seed = doc.get("seed")
        if needs_seed and seed is None:
            diagnostics.append("seed: missing required key (non-negative integer)")
    if seed is not None and not (_is_int(seed) and seed >= 0):
        diagnostics.append(f"seed: expected non-negative integer, got {seed!r}")
        seed = None

    _cross_checks(command, doc, diagnostics)
    if diagnostics:
        raise ConfigError(diagnostics)
    effective = dict(doc)
    if seed is not None:
        effective["seed"] = seed
    return RunConfig(command=command, doc=effective, seed=0 if seed is None else seed,
                     out_dir=None)


def config_hash(doc):
    """Ten hex digits over the canonical JSON of the effective config."""
    canonical = json.dumps(doc, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()[:10]


def _train_config(doc):
    training = doc["training"]
    return TrainConfig(
        epochs=training["epochs"],
        batch_size=training["batch_size"],
        seed=doc["seed"],
        loss=LossConfig(alpha=float(training.get("alpha", 0.0))),
        optimizer=AdamWConfig(
            learning_rate=float(training.get("learning_rate", 0.001)),
            beta1=float(training.get("beta1", 0.9)),
            beta2=float(training.get("beta2", 0.999)),
            epsilon=float(training.get("epsilon", 1e-8)),
            weight_decay=float(training.get("weight_decay", 0.003)),
        ),
        schedule=ScheduleConfig(
            factor=float(training.get("lr_decay_factor", 1.0)),
            period=int(training.get("lr_decay_period", 1)),
        ),
    )


def _load_dataset(doc):
    exp = doc["experiment"]
    rng = SeededRng(doc["seed"]).child("dataset")
    total = exp["train_count"] + exp["validation_count"] + exp["test_count"]
    if exp["kind"] == "synthetic-sparse":
        dataset = synth_sparse_dataset(exp["m"], exp["sparsity"], total, rng)
    elif exp["kind"] == "mnist-idx":
        dataset = load_mnist_idx(exp["images"], exp["labels"], limit=exp.get("limit"))
        if dataset.m != exp["m"]:
            raise StructureError(
                f"IDX images are {dataset.m}-dimensional but the config says m={exp['m']}")
        if dataset.signals.shape[0] < total:
            raise ParameterError(
                f"split counts need {total} signals but the IDX files hold "
                f"{dataset.signals.shape[0]}")
        dataset = _first_signals(dataset, total)
    else:
        raise ParameterError(
            "celeba-crops is shipped as a documented long-run configuration only; "
            "no loader is included")
    return assign_splits(dataset, exp["train_count"], exp["validation_count"],
                         exp["test_count"], rng.child("splits"))


def _first_signals(dataset, total):
    """First ``total`` signals of a dataset (keeps IDX file order)."""
    return SignalDataset(
        signals=dataset.signals[:total],
        tags=dataset.tags[:total],
        provenance=dataset.provenance,
        width=dataset.width,
        height=dataset.height,
    )


def _methods_config(doc):
    base = doc.get("baselines", {})
    return MethodsConfig(
        cascade=tuple(zip(doc["network"]["ks"], doc["network"]["cs"])),
        art=ArtConfig(
            sweeps=base.get("art_sweeps", 200),
            relaxation=float(base.get("art_relaxation", 1.0)),
        ),
        lasso=LassoConfig(
            lam=base.get("lasso_lambda"),
            max_iters=base.get("lasso_max_iters", 1000),
            tol=float(base.get("lasso_tol", 1e-10)),
        ),
    )


def _write(path, text):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)


def _write_meta(cfg, tag, wall_seconds, extra=None):
    meta = {
        "command": cfg.command,
        "config_hash": config_hash(cfg.doc),
        "seed": cfg.seed,
        "timestamp_utc": datetime.now(timezone.utc).isoformat(),
        "wall_seconds": wall_seconds,
    }
    if extra:
        meta.update(extra)
    _write(cfg.out_dir / f"run_meta_{tag}.json", json.dumps(meta, indent=2) + "\n")


def _run_validate(cfg):
    net = cfg.doc["network"]
    check = validate_nonoverlap(net["n"], net["ks"])
    if not check.ok:
        print(check.message, file=sys.stderr)
        return EXIT_STRUCTURE
    lengths = []
    length = net["n"]
    for k in net["ks"]:
        length //= k
        lengths.append(length)
    print(f"structure ok: input {net['n']}, stage lengths "
          + " -> ".join(str(v) for v in lengths))
    if "overlap" in cfg.doc:
        spec = OverlapSpec(cfg.doc["overlap"]["n"],
                           tuple(tuple(p) for p in cfg.doc["overlap"]["layers"]))
        overlap_check = validate_overlap(spec)
        print(f"overlap {'ok' if overlap_check.ok else 'violation'}: {overlap_check.message}")
        if not overlap_check.ok:
            return EXIT_STRUCTURE
    return EXIT_OK


def _run_train(cfg):
    started = time.perf_counter()
    exp = cfg.doc["experiment"]
    model = make_measurement_model(exp["n"], exp["m"], exp["delta"], cfg.seed)
    dataset = _load_dataset(cfg.doc)
    report, net = run_cs_experiment(model, dataset, _methods_config(cfg.doc),
                                    _train_config(cfg.doc))
    tag = f"s{cfg.seed}_{config_hash(cfg.doc)}"
    _write(cfg.out_dir / f"report_{tag}.csv", report_csv_text(report))
    _write(cfg.out_dir / f"history_{tag}.csv", history_csv_text(report.history))
    _write(cfg.out_dir / f"summary_{tag}.txt", summary_text(report))
    save_model(net, cfg.out_dir / f"model_{tag}.json")
    _write_meta(cfg, tag, time.perf_counter() - started,
                {"report_wall_seconds": report.wall_seconds,
                 "epoch_wall_seconds": [s.wall_seconds for s in report.history]})
    for method, stats in report.means.items():
        print(f"{method}: mean rre {stats['rre']:.4f}, mean psnr {stats['psnr']:.3f}, "
              f"mean ssim {stats['ssim']:.4f}")
    return EXIT_OK


def _run_approx(cfg):
    started = time.perf_counter()
    approx = cfg.doc["approx"]
    plans = [(plan["ks"], plan["cs"]) for plan in approx["plans"]]
    results = run_approximation_study(
        approx["target"], approx["n"], plans,
        approx.get("grid_resolution", 7), _train_config(cfg.doc),
        train_points=approx.get("train_points", 2048),
    )
    tag = f"s{cfg.seed}_{config_hash(cfg.doc)}"
    lines = ["ks,cs,sup_error,final_train_loss"]
    for res in results:
        ks = " ".join(str(k) for k in res.ks)
        cs = " ".join(str(c) for c in res.cs)
        lines.append(f"{ks},{cs},{res.sup_error!r},{res.final_train_loss!r}")
    _write(cfg.out_dir / f"approx_{tag}.csv", "\n".join(lines) + "\n")
    _write_meta(cfg, tag, time.perf_counter() - started)
    for res in results:
        print(f"plan ks={list(res.ks)} cs={list(res.cs)}: sup error {res.sup_error:.5f}")
    return EXIT_OK


def _run_ablate(cfg):
    started = time.perf_counter()
    exp = cfg.doc["experiment"]
    model = make_measurement_model(exp["n"], exp["m"], exp["delta"], cfg.seed)
    dataset = _load_dataset(cfg.doc)
    specs = [StageSpec(k, c) for k, c in zip(cfg.doc["network"]["ks"],
                                             cfg.doc["network"]["cs"])]
    rows = loss_ablation(model, dataset, specs,
                         _train_config(cfg.doc), cfg.doc["ablate"]["alphas"])
    tag = f"s{cfg.seed}_{config_hash(cfg.doc)}"
    lines = ["alpha,rre,psnr,ssim"]
    for row in rows:
        lines.append(f"{row.alpha!r},{row.rre!r},{row.psnr!r},{row.ssim!r}")
    _write(cfg.out_dir / f"ablation_{tag}.csv", "\n".join(lines) + "\n")
    _write_meta(cfg, tag, time.perf_counter() - started)
    for row in rows:
        print(f"alpha {row.alpha}: rre {row.rre:.4f}, psnr {row.psnr:.3f}, "
              f"ssim {row.ssim:.4f}")
    return EXIT_OK


def _run_report(cfg):
    csv_path = Path(cfg.doc["report"]["csv"])
    try:
        text = csv_path.read_text(encoding="utf-8")
    except OSError as err:
        raise FormatError(f"cannot read report CSV {csv_path}: {err}") from err
    lines = [ln for ln in text.splitlines() if ln]
    if not lines or lines[0] != "method,item,rre,psnr,ssim":
        raise FormatError(f"{csv_path}: not a report CSV (unexpected header)")
    rows = []
    for ln in lines[1:]:
        method, item, rre_v, psnr_v, ssim_v = ln.split(",")
        rows.append(MetricsRow(method=method, item=int(item), rre=float(rre_v),
                               psnr=float(psnr_v), ssim=float(ssim_v)))
    means = aggregate_rows(rows)
    out_lines = ["re-rendered summary", f"source: {csv_path.name}",
                 "method mean_rre mean_psnr mean_ssim"]
    for method, stats in means.items():
        out_lines.append(f"{method} {stats['rre']!r} {stats['psnr']!r} {stats['ssim']!r}")
    tag = config_hash(cfg.doc)
    _write(cfg.out_dir / f"resummary_{tag}.txt", "\n".join(out_lines) + "\n")
    for line in out_lines[2:]:
        print(line)
    return EXIT_OK


_RUNNERS = {
    "validate": _run_validate,
    "train": _run_train,
    "approx": _run_approx,
    "ablate": _run_ablate,
    "report": _run_report,
}


def dispatch(cfg):
    """Run a validated command; artifacts go under cfg.out_dir only."""
    needs_out = cfg.command != "validate"
    if needs_out:
        if cfg.out_dir is None:
            raise ConfigError(["--out is required for this command"])
        cfg.out_dir = Path(cfg.out_dir)
        cfg.out_dir.mkdir(parents=True, exist_ok=True)
    return _RUNNERS[cfg.command](cfg)


def main(argv=None):
    parser = argparse.ArgumentParser(
        prog="blockconv",
        description="Block-convolution cascades: structure checks, training, "
                    "approximation studies, and reports.",
        epilog=_EPILOG,
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    sub = parser.add_subparsers(dest="command", required=True)
    help_lines = {
        "validate": "check a cascade structure (and optional sliding-window plan)",
        "train": "run the compressive-sensing experiment and write reports",
        "approx": "run the approximation study over stage plans",
        "ablate": "sweep the loss relaxation weight",
        "report": "re-render a report CSV into a summary",
    }
    for command in COMMANDS:
        cmd = sub.add_parser(command, help=help_lines[command])
        cmd.add_argument("--config", required=True, help="path to the JSON config")
        cmd.add_argument("--out", default=None, help="output directory for artifacts")
        cmd.add_argument("--seed", type=int, default=None,
                         help="override the config seed")
    args = parser.parse_args(argv)
    try:
        try:
            text = Path(args.config).read_text(encoding="utf-8")
        except OSError as err:
            print(f"cannot read config: {err}", file=sys.stderr)
            return EXIT_IO
        cfg = parse_config(text, args.command, seed_override=args.seed)
        cfg.out_dir = Path(args.out) if args.out else None
        return dispatch(cfg)
    except ConfigError as err:
        for diagnostic in err.diagnostics:
            print(f"config: {diagnostic}", file=sys.stderr)
        return EXIT_CONFIG
    except (StructureError, ParameterError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_STRUCTURE
    except NumericError as err:
        print(f"numeric error: {err}", file=sys.stderr)
        return EXIT_NUMERIC
    except (FormatError, OSError) as err:
        print(f"input error: {err}", file=sys.stderr)
        return EXIT_IO
    except BlockconvError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_STRUCTURE


if __name__ == "__main__":
    sys.exit(main())
