"""Compressive-sensing pipeline and the empirical approximation study.

The measurement model is x = A y + v with A an (n, m) Gaussian matrix,
A_ij ~ N(0, 1/n), and v ~ N(0, delta * I) (delta is the per-component
noise variance). Experiments train a cascade to invert the model and
compare it against the classical solvers on identical test measurements.

Reserved child-stream tags under an experiment seed: "dataset" (signal
generation), "init" (network parameters), "warmup-measure", "val-noise",
"test-noise" (fixed per-item noise shared by all methods), plus the
training loop's own "shuffle"/"measure" tags.
"""

import math
import struct
import time
from dataclasses import dataclass, field, replace

import numpy as np

from . import network as network_mod
from .baselines import ArtConfig, LassoConfig, art_solve, lasso_solve
from .errors import FormatError, ParameterError, StructureError
from .metrics import ImagePair, psnr, rre, ssim
from .network import StageSpec, build_cascade, validate_nonoverlap
from .numerics import SeededRng, as_dense, gaussian_sample
from .training import LossConfig, glorot_init, train

__all__ = [
    "MeasurementModel",
    "SignalDataset",
    "MethodsConfig",
    "MetricsRow",
    "ExperimentReport",
    "PlanResult",
    "AblationRow",
    "TARGETS",
    "make_measurement_model",
    "measure",
    "load_mnist_idx",
    "synth_sparse_dataset",
    "assign_splits",
    "select_lasso_lam",
    "run_cs_experiment",
    "run_approximation_study",
    "loss_ablation",
    "report_csv_text",
    "history_csv_text",
    "summary_text",
]

IDX_IMAGE_MAGIC = 2051  # 0x00000803
IDX_LABEL_MAGIC = 2049  # 0x00000801

LASSO_LAM_FACTORS = (0.001, 0.01, 0.05, 0.1)


@dataclass(frozen=True)
class MeasurementModel:
    """A fixed Gaussian measurement matrix with its noise level and seed."""

    matrix: np.ndarray  # (n, m), entries ~ N(0, 1/n)
    delta: float  # per-component noise variance
    seed: int

    @property
    def n(self):
        return self.matrix.shape[0]

    @property
    def m(self):
        return self.matrix.shape[1]


def make_measurement_model(n, m, delta, seed):
    """Draw the (n, m) measurement matrix, n < m, entries N(0, 1/n)."""
    if not 1 <= n < m:
        raise ParameterError(f"compressive sensing needs 1 <= n < m, got n={n}, m={m}")
    if delta < 0.0:
        raise ParameterError(f"noise level must be >= 0, got {delta}")
    rng = SeededRng(seed).child("measurement-matrix")
    matrix = gaussian_sample(rng, (n, m), 0.0, 1.0 / math.sqrt(n))
    return MeasurementModel(matrix=matrix, delta=float(delta), seed=int(seed))


def measure(model, y, rng):
    """x = A y + v with v ~ N(0, delta I) drawn fresh from ``rng``.

    y may be a single length-m signal or an (N, m) batch.
    """
    y = as_dense(y)
    if y.shape[-1] != model.m:
        raise StructureError(f"signal length {y.shape[-1]} does not match m={model.m}")
    clean = y @ model.matrix.T
    return clean + gaussian_sample(rng, clean.shape, 0.0, math.sqrt(model.delta))


@dataclass
class SignalDataset:
    """Signals in [0, 1] with disjoint split tags and image geometry."""

    signals: np.ndarray  # (count, m)
    tags: list  # "train" | "validation" | "test", one per signal
    provenance: str
    width: int
    height: int

    def __post_init__(self):
        self.signals = as_dense(self.signals, rank=2)
        if len(self.tags) != self.signals.shape[0]:
            raise StructureError(
                f"{len(self.tags)} tags for {self.signals.shape[0]} signals"
            )
        bad = set(self.tags) - {"train", "validation", "test"}
        if bad:
            raise ParameterError(f"unknown split tags: {sorted(bad)}")
        if self.width * self.height != self.signals.shape[1]:
            raise StructureError(
                f"{self.width}x{self.height} does not tile length {self.signals.shape[1]}"
            )
        if self.signals.size and (self.signals.min() < 0.0 or self.signals.max() > 1.0):
            raise ParameterError("signal values must lie in [0, 1]")

    @property
    def m(self):
        return self.signals.shape[1]

    def split(self, tag):
        mask = np.array([t == tag for t in self.tags])
        return self.signals[mask]


def _read_idx_header(data, fmt, path, kind):
    size = struct.calcsize(fmt)
    if len(data) < size:
        raise FormatError(
            f"{path}: truncated {kind} header, needed {size} bytes at offset 0, "
            f"got {len(data)}"
        )
    return struct.unpack_from(fmt, data, 0), size


def load_mnist_idx(images_path, labels_path, limit=None):
    """Parse the big-endian IDX image/label pair into a SignalDataset.

    Pixels are scaled to [0, 1] by dividing by 255 and flattened row-major.
    Every signal is tagged "train"; use assign_splits() to partition. The
    label payload is validated against the image count but not returned
    (recovery needs only the images).
    """
    with open(images_path, "rb") as fh:
        image_data = fh.read()
    (magic, count, rows, cols), offset = _read_idx_header(
        image_data, ">IIII", images_path, "image"
    )
    if magic != IDX_IMAGE_MAGIC:
        raise FormatError(
            f"{images_path}: bad image magic 0x{magic:08x} at offset 0, "
            f"expected 0x{IDX_IMAGE_MAGIC:08x}"
        )
    expected = offset + count * rows * cols
    if len(image_data) != expected:
        raise FormatError(
            f"{images_path}: image payload ends at {len(image_data)}, "
            f"expected {expected} (offset {offset} + {count}x{rows}x{cols})"
        )
    with open(labels_path, "rb") as fh:
        label_data = fh.read()
    (label_magic, label_count), label_offset = _read_idx_header(
        label_data, ">II", labels_path, "label"
    )
    if label_magic != IDX_LABEL_MAGIC:
        raise FormatError(
            f"{labels_path}: bad label magic 0x{label_magic:08x} at offset 0, "
            f"expected 0x{IDX_LABEL_MAGIC:08x}"
        )
    if len(label_data) != label_offset + label_count:
        raise FormatError(
            f"{labels_path}: label payload ends at {len(label_data)}, "
            f"expected {label_offset + label_count}"
        )
    if label_count != count:
        raise FormatError(
            f"label count {label_count} differs from image count {count}"
        )
    if limit is not None:
        count = min(count, int(limit))
    pixels = np.frombuffer(image_data, dtype=np.uint8, offset=offset,
                           count=count * rows * cols)
    signals = pixels.reshape(count, rows * cols).astype(np.float64) / 255.0
    return SignalDataset(
        signals=signals,
        tags=["train"] * count,
        provenance="MNIST-IDX",
        width=cols,
        height=rows,
    )


def synth_sparse_dataset(m, sparsity, count, rng, width=None, height=None):
    """Signals with exactly ``sparsity`` nonzeros, values uniform in [0.2, 1].

    Support positions are uniform without replacement. Geometry defaults to
    the square sqrt(m) x sqrt(m). All signals are tagged "train"; use
    assign_splits() to partition.
    """
    if not 1 <= sparsity <= m:
        raise ParameterError(f"need 1 <= sparsity <= m, got sparsity={sparsity}, m={m}")
    if width is None or height is None:
        side = int(math.isqrt(m))
        if side * side != m:
            raise ParameterError(
                f"m={m} is not a perfect square; pass width and height explicitly"
            )
        width = height = side
    signals = np.zeros((count, m))
    for i in range(count):
        support = rng.permutation(m)[:sparsity]
        signals[i, support] = 0.2 + 0.8 * rng.uniform((sparsity,))
    return SignalDataset(
        signals=signals,
        tags=["train"] * count,
        provenance=f"synthetic-sparse(s={sparsity})",
        width=width,
        height=height,
    )


def assign_splits(dataset, train_count, validation_count, test_count, rng):
    """Shuffle the signals into disjoint train/validation/test splits."""
    total = train_count + validation_count + test_count
    if total != dataset.signals.shape[0]:
        raise ParameterError(
            f"split counts sum to {total} but the dataset holds "
            f"{dataset.signals.shape[0]} signals"
        )
    order = rng.permutation(total)
    tags = [""] * total
    for rank, idx in enumerate(order):
        if rank < train_count:
            tags[idx] = "train"
        elif rank < train_count + validation_count:
            tags[idx] = "validation"
        else:
            tags[idx] = "test"
    return SignalDataset(
        signals=dataset.signals,
        tags=tags,
        provenance=dataset.provenance,
        width=dataset.width,
        height=dataset.height,
    )


@dataclass(frozen=True)
class MethodsConfig:
    """Everything the three compared methods need."""

    cascade: tuple  # StageSpec sequence
    art: ArtConfig = field(default_factory=ArtConfig)
    lasso: LassoConfig = field(default_factory=lambda: LassoConfig(lam=None))

    def __post_init__(self):
        object.__setattr__(
            self,
            "cascade",
            tuple(s if isinstance(s, StageSpec) else StageSpec(*s) for s in self.cascade),
        )


@dataclass(frozen=True)
class MetricsRow:
    method: str
    item: int
    rre: float
    psnr: float
    ssim: float


@dataclass
class ExperimentReport:
    """Per-item metric rows with per-method means and run provenance."""

    rows: list  # MetricsRow
    means: dict  # method -> {"rre": .., "psnr": .., "ssim": ..}
    config: dict
    seed: int
    wall_seconds: float
    history: list = field(default_factory=list)  # EpochStats from training


def aggregate_rows(rows):
    """Per-method arithmetic means; infinite PSNR rows are excluded from
    the PSNR mean only."""
    methods = []
    for row in rows:
        if row.method not in methods:
            methods.append(row.method)
    means = {}
    for method in methods:
        chosen = [r for r in rows if r.method == method]
        finite_psnr = [r.psnr for r in chosen if math.isfinite(r.psnr)]
        means[method] = {
            "rre": float(np.mean([r.rre for r in chosen])),
            "psnr": float(np.mean(finite_psnr)) if finite_psnr else math.inf,
            "ssim": float(np.mean([r.ssim for r in chosen])),
        }
    return means


def _metric_rows(method, recovered, truths, width, height):
    rows = []
    for i in range(truths.shape[0]):
        pair = ImagePair(recovered[i], truths[i], width=width, height=height)
        rows.append(MetricsRow(method=method, item=i, rre=rre(pair),
                               psnr=psnr(pair), ssim=ssim(pair)))
    return rows


def select_lasso_lam(model, measurements, truths, base_cfg,
                     factors=LASSO_LAM_FACTORS):
    """Pick the grid lam minimizing mean relative error on held-out pairs.

    Candidates are factor * median over items of ||A^T x||_inf.
    """
    if measurements.shape[0] == 0:
        raise ParameterError(
            "lasso lam selection needs a nonempty held-out split; "
            "set an explicit lam instead"
        )
    scale = float(np.median(np.abs(measurements @ model.matrix).max(axis=-1)))
    best_lam, best_err = None, math.inf
    for factor in factors:
        lam = factor * scale
        cfg = replace(base_cfg, lam=lam)
        errors = []
        for x, y in zip(measurements, truths):
            estimate = lasso_solve(model.matrix, x, cfg)
            errors.append(np.linalg.norm(estimate - y) / np.linalg.norm(y))
        err = float(np.mean(errors))
        if err < best_err:
            best_lam, best_err = lam, err
    return best_lam


def _train_cascade(model, dataset, specs, train_cfg):
    """Build and train a cascade on freshly measured train signals.

    Measurement noise is regenerated every epoch (fresh v per signal per
    epoch); the validation measurements are drawn once.
    """
    check = validate_nonoverlap(model.n, [s.k for s in specs])
    if not check.ok:
        raise StructureError(check.message)
    y_train = dataset.split("train")
    y_val = dataset.split("validation")
    if y_train.shape[0] == 0:
        raise ParameterError("dataset has no train split")
    rng = SeededRng(train_cfg.seed)
    net = build_cascade(model.n, specs, dataset.m, glorot_init, rng.child("init"))
    x_warmup = measure(model, y_train, rng.child("warmup-measure"))
    validation = None
    if y_val.shape[0]:
        x_val = measure(model, y_val, rng.child("val-noise"))
        validation = (x_val, y_val)
    net, history = train(
        net,
        (x_warmup, y_train),
        train_cfg,
        validation=validation,
        remeasure=lambda epoch, r: measure(model, y_train, r),
    )
    return net, history


def run_cs_experiment(model, dataset, methods, train_cfg):
    """Train the cascade, run both baselines, and score all three methods
    on bitwise-identical test measurements (one noise draw per test item).
    """
    started = time.perf_counter()
    y_test = dataset.split("test")
    if y_test.shape[0] == 0:
        raise ParameterError("dataset has no test split")
    net, history = _train_cascade(model, dataset, methods.cascade, train_cfg)
    rng = SeededRng(train_cfg.seed)
    x_test = measure(model, y_test, rng.child("test-noise"))

    rows = []
    recovered = network_mod.forward(net, x_test)
    rows += _metric_rows("cascade", recovered, y_test, dataset.width, dataset.height)

    lasso_cfg = methods.lasso
    if lasso_cfg.lam is None:
        y_val = dataset.split("validation")
        x_val = measure(model, y_val, rng.child("val-noise")) if y_val.shape[0] else y_val
        lam = select_lasso_lam(model, x_val, y_val, lasso_cfg)
        lasso_cfg = replace(lasso_cfg, lam=lam)
    lasso_rec = np.stack([lasso_solve(model.matrix, x, lasso_cfg) for x in x_test])
    rows += _metric_rows("lasso", lasso_rec, y_test, dataset.width, dataset.height)

    art_rec = np.stack([art_solve(model.matrix, x, methods.art) for x in x_test])
    rows += _metric_rows("art", art_rec, y_test, dataset.width, dataset.height)

    config = {
        "n": model.n,
        "m": model.m,
        "delta": model.delta,
        "model_seed": model.seed,
        "provenance": dataset.provenance,
        "ks": [s.k for s in methods.cascade],
        "cs": [s.c for s in methods.cascade],
        "epochs": train_cfg.epochs,
        "batch_size": train_cfg.batch_size,
        "alpha": train_cfg.loss.alpha,
        "lasso_lam": lasso_cfg.lam,
        "art_sweeps": methods.art.sweeps,
        "art_relaxation": methods.art.relaxation,
        "test_items": int(y_test.shape[0]),
    }
    return ExperimentReport(
        rows=rows,
        means=aggregate_rows(rows),
        config=config,
        seed=train_cfg.seed,
        wall_seconds=time.perf_counter() - started,
        history=history,
    ), net


def _sine_product(points):
    return np.sin(np.pi * points[..., 0]) * np.cos(np.pi * points[..., 1])


def _sine_product_mix(points):
    if points.shape[-1] < 4:
        raise ParameterError("sine-product-mix needs n >= 4")
    return _sine_product(points) + 0.2 * points[..., 2] * points[..., 3]


TARGETS = {
    "constant-half": lambda points: np.full(points.shape[:-1], 0.5),
    "first-coordinate": lambda points: points[..., 0],
    "mean": lambda points: points.mean(axis=-1),
    "sine-product": _sine_product,
    "sine-product-mix": _sine_product_mix,
}


@dataclass(frozen=True)
class PlanResult:
    ks: tuple
    cs: tuple
    sup_error: float
    final_train_loss: float


def _uniform_grid(n, resolution):
    axes = [np.linspace(0.0, 1.0, resolution)] * n
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack(mesh, axis=-1).reshape(-1, n)


def run_approximation_study(target, n, plans, grid_resolution, train_cfg,
                            train_points=2048):
    """Regress a named target on [0, 1]^n with each stage plan; report the
    sup-norm error over a held-out uniform lattice.

    ``plans`` is a list of (k-list, c-list) pairs; every plan must satisfy
    the structure identity, and all plans are validated before any
    training starts.
    """
    fn = TARGETS[target] if isinstance(target, str) else target
    specs_per_plan = []
    for ks, cs in plans:
        if len(ks) != len(cs):
            raise StructureError(f"plan ({ks}, {cs}) pairs {len(ks)} ks with {len(cs)} cs")
        check = validate_nonoverlap(n, ks)
        if not check.ok:
            raise StructureError(check.message)
        specs_per_plan.append([StageSpec(k, c) for k, c in zip(ks, cs)])
    rng = SeededRng(train_cfg.seed)
    x_train = rng.child("train-points").uniform((train_points, n))
    y_train = as_dense(fn(x_train)).reshape(-1, 1)
    grid = _uniform_grid(n, grid_resolution)
    grid_truth = as_dense(fn(grid))
    results = []
    for plan_index, specs in enumerate(specs_per_plan):
        net = build_cascade(n, specs, 1, glorot_init, rng.child("init", plan_index))
        net, history = train(net, (x_train, y_train), train_cfg)
        predicted = network_mod.forward(net, grid)[:, 0]
        results.append(PlanResult(
            ks=tuple(s.k for s in specs),
            cs=tuple(s.c for s in specs),
            sup_error=float(np.max(np.abs(predicted - grid_truth))),
            final_train_loss=history[-1].train_loss,
        ))
    return results


@dataclass(frozen=True)
class AblationRow:
    alpha: float
    rre: float
    psnr: float
    ssim: float


def loss_ablation(model, dataset, specs, train_cfg, alphas):
    """One cascade training per alpha, identical seeds otherwise; metrics
    are scored on the same test measurements for every run."""
    if any(not 0.0 <= a <= 1.0 for a in alphas):
        raise ParameterError(f"alphas must lie in [0, 1], got {list(alphas)}")
    y_test = dataset.split("test")
    if y_test.shape[0] == 0:
        raise ParameterError("dataset has no test split")
    x_test = measure(model, y_test, SeededRng(train_cfg.seed).child("test-noise"))
    rows = []
    for alpha in sorted(alphas):
        cfg = replace(train_cfg, loss=LossConfig(alpha))
        net, _ = _train_cascade(model, dataset, specs, cfg)
        recovered = network_mod.forward(net, x_test)
        means = aggregate_rows(
            _metric_rows("cascade", recovered, y_test, dataset.width, dataset.height)
        )["cascade"]
        rows.append(AblationRow(alpha=float(alpha), rre=means["rre"],
                                psnr=means["psnr"], ssim=means["ssim"]))
    return rows


def _fmt(value):
    """Shortest round-trip decimal; 'inf'/'nan' for the sentinels."""
    return repr(float(value))


def report_csv_text(report):
    lines = ["method,item,rre,psnr,ssim"]
    for row in report.rows:
        lines.append(
            f"{row.method},{row.item},{_fmt(row.rre)},{_fmt(row.psnr)},{_fmt(row.ssim)}"
        )
    return "\n".join(lines) + "\n"


def history_csv_text(history):
    lines = ["epoch,lr,train_loss,val_rre"]
    for stats in history:
        lines.append(
            f"{stats.epoch},{_fmt(stats.lr)},{_fmt(stats.train_loss)},{_fmt(stats.val_rre)}"
        )
    return "\n".join(lines) + "\n"


def summary_text(report):
    lines = [
        "compressive-sensing summary",
        f"seed: {report.seed}",
    ]
    for key in sorted(report.config):
        lines.append(f"{key}: {report.config[key]}")
    lines.append("method mean_rre mean_psnr mean_ssim")
    for method, stats in report.means.items():
        lines.append(
            f"{method} {_fmt(stats['rre'])} {_fmt(stats['psnr'])} {_fmt(stats['ssim'])}"
        )
    return "\n".join(lines) + "\n"
