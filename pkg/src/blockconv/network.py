"""Cascade assembly, structure validation, and whole-network passes.

A cascade chains single-hidden-layer block-convolution stages. Stage i
consumes a vector of length n / (k_1 ... k_{i-1}), so a cascade over input
length n is well-formed exactly when n equals the product of its kernel
lengths; the final stage then produces a single position. Between stages,
each stage's q feature channels are collapsed to one channel by its
unbiased beta projection; at the final stage the collapse is performed by
the output head, an (m x c_last) unbiased matrix whose rows act as m
parallel projections (a multi-output network is m single-output networks
sharing everything but the output row).
"""

import json
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import ParameterError, StructureError
from .layers import ConvKernelBank, beta_project, forward_cached, stage_backward, _bank_backward
from .numerics import as_dense, ensure_finite

__all__ = [
    "StageSpec",
    "NetworkStage",
    "CascadeNet",
    "OverlapSpec",
    "Validation",
    "validate_nonoverlap",
    "validate_overlap",
    "build_cascade",
    "forward",
    "backward",
    "blockwise_lift",
    "save_model",
    "load_model",
    "dump_model",
    "parse_model",
]

MODEL_FORMAT = "blockconv-cascade"
MODEL_VERSION = 1


@dataclass(frozen=True)
class StageSpec:
    """One stage plan: kernel length k and kernel count c."""

    k: int
    c: int

    def __post_init__(self):
        if self.k < 1 or self.c < 1:
            raise ParameterError(f"stage needs k >= 1 and c >= 1, got k={self.k}, c={self.c}")


@dataclass
class NetworkStage:
    """A built stage: kernel bank plus the inter-stage projection.

    ``beta`` is None on the final stage only; there the output head plays
    the projection's role.
    """

    bank: ConvKernelBank
    beta: Optional[np.ndarray]

    def __post_init__(self):
        if self.beta is not None:
            self.beta = as_dense(self.beta, rank=1)
            if self.beta.shape[0] != self.bank.q:
                raise StructureError(
                    f"projection length {self.beta.shape[0]} does not match "
                    f"kernel count {self.bank.q}"
                )


@dataclass
class CascadeNet:
    """An ordered list of stages plus the unbiased output head."""

    n: int
    m: int
    stages: list
    head: np.ndarray  # (m, c_last)

    def __post_init__(self):
        self.head = as_dense(self.head, rank=2)
        ks = [s.bank.k for s in self.stages]
        check = validate_nonoverlap(self.n, ks)
        if not check.ok:
            raise StructureError(check.message)
        for s in self.stages[:-1]:
            if s.beta is None:
                raise StructureError("only the final stage may omit its projection")
        if self.stages[-1].beta is not None:
            raise StructureError("the final stage's projection is the output head")
        if self.head.shape != (self.m, self.stages[-1].bank.q):
            raise StructureError(
                f"head shape {self.head.shape} does not match (m={self.m}, "
                f"c_last={self.stages[-1].bank.q})"
            )

    def specs(self):
        return [StageSpec(s.bank.k, s.bank.q) for s in self.stages]

    def parameters(self):
        """Trainable arrays as (name, array) pairs in a fixed order."""
        out = []
        for i, stage in enumerate(self.stages):
            out.append((f"stage{i}.weights", stage.bank.weights))
            out.append((f"stage{i}.biases", stage.bank.biases))
            if stage.beta is not None:
                out.append((f"stage{i}.beta", stage.beta))
        out.append(("head", self.head))
        return out


@dataclass(frozen=True)
class OverlapSpec:
    """Input length plus per-layer (kernel length, stride) pairs, stride < kernel."""

    n: int
    layers: tuple

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple((int(k), int(s)) for k, s in self.layers))
        if self.n < 1 or not self.layers:
            raise ParameterError("overlap spec needs n >= 1 and at least one layer")


@dataclass(frozen=True)
class Validation:
    """Outcome of a structure check; message explains any violation."""

    ok: bool
    message: str = ""

    def __bool__(self):
        return self.ok


def validate_nonoverlap(n, ks):
    """Check the block-cascade structure identity: n equals the product of ks."""
    n = int(n)
    ks = [int(k) for k in ks]
    if n < 1 or not ks or any(k < 1 for k in ks):
        return Validation(False, f"need n >= 1 and positive kernel lengths, got n={n}, ks={ks}")
    product = 1
    for k in ks:
        product *= k
    if product != n:
        return Validation(
            False,
            f"kernel lengths {ks} multiply to {product}, but the input length is {n}; "
            "a block cascade needs them to factor the input length exactly",
        )
    return Validation(True, f"kernel lengths {ks} factor the input length {n}")


def validate_overlap(spec):
    """Check the sliding-window cascade identity (with s_0 defined as 1).

    The identity n - sum_i (k_i * prod_{j<i} s_j - prod_{j<=i} s_j) =
    prod_j s_j holds exactly when every layer's windows tile its input and
    the final layer emits a single position. Strides >= kernel lengths are
    a domain error, not a violation.
    """
    for i, (k, s) in enumerate(spec.layers):
        if k < 1 or s < 1:
            raise ParameterError(f"layer {i} needs k >= 1 and s >= 1, got (k={k}, s={s})")
        if s >= k:
            raise ParameterError(
                f"layer {i} has stride {s} >= kernel length {k}; sliding-window "
                "layers require s < k"
            )
    deficit = 0
    stride_product = 1  # prod of s_1 .. s_i, with the implicit s_0 = 1
    for k, s in spec.layers:
        before = stride_product
        stride_product *= s
        deficit += k * before - stride_product
    if spec.n - deficit != stride_product:
        return Validation(
            False,
            f"input length {spec.n} minus the window deficit {deficit} is "
            f"{spec.n - deficit}, but the stride product is {stride_product}; "
            "the layers do not reduce the input to a single position",
        )
    return Validation(
        True,
        f"layers {list(spec.layers)} tile input length {spec.n} down to one position",
    )


def build_cascade(n, specs, m, init, rng):
    """Assemble a cascade with freshly initialized parameters.

    ``init(fan_in, fan_out, rng, shape=...)`` supplies every weight array
    (kernel banks, projections, head rows); biases start at zero. Raises
    StructureError when the kernel lengths do not factor n.
    """
    specs = [s if isinstance(s, StageSpec) else StageSpec(*s) for s in specs]
    check = validate_nonoverlap(n, [s.k for s in specs])
    if not check.ok:
        raise StructureError(check.message)
    if m < 1:
        raise ParameterError(f"output dimension must be >= 1, got {m}")
    stages = []
    for i, spec in enumerate(specs):
        weights = init(spec.k, spec.c, rng, shape=(spec.c, spec.k))
        bank = ConvKernelBank(weights, np.zeros(spec.c))
        last = i == len(specs) - 1
        beta = None if last else init(spec.c, 1, rng, shape=(spec.c,))
        stages.append(NetworkStage(bank, beta))
    head = init(specs[-1].c, 1, rng, shape=(m, specs[-1].c))
    return CascadeNet(n=int(n), m=int(m), stages=stages, head=head)


def _stage_value(stage, value, caches=None):
    """Evaluate one stage on ``value``; append its cache when collecting."""
    cache = forward_cached(value, stage.bank)
    if caches is not None:
        caches.append(cache)
    if stage.beta is None:
        return cache.post[..., 0, :]
    return beta_project(cache.post, stage.beta)


def _apply_head(head, features):
    """Unbiased head map. einsum keeps each output row's reduction order
    independent of m, so output i is bitwise the single-output result."""
    return np.einsum("...c,mc->...m", features, head, optimize=False)


def forward(net, x, with_caches=False):
    """Evaluate the cascade on x (length n, or batched (..., n)).

    Stages fold left to right; each applies its block layer, the sigmoid,
    and its projection; the head maps the final stage's activated features
    to the m outputs. With ``with_caches`` the per-stage intermediates are
    returned for backward().
    """
    x = as_dense(x)
    if x.shape[-1] != net.n:
        raise StructureError(f"input length {x.shape[-1]} does not match network n={net.n}")
    ensure_finite(x, "network input")
    caches = [] if with_caches else None
    value = x
    for stage in net.stages:
        value = _stage_value(stage, value, caches)
    out = _apply_head(net.head, value)
    return (out, caches) if with_caches else out


def backward(net, caches, grad_out):
    """Chain-rule gradients for every parameter, given d(loss)/d(output).

    ``caches`` must come from the matching forward(..., with_caches=True)
    call. Returns a dict keyed like CascadeNet.parameters(); gradients are
    summed over any batch axes.
    """
    grad_out = as_dense(grad_out)
    if len(caches) != len(net.stages):
        raise StructureError(
            f"{len(caches)} caches for {len(net.stages)} stages; pass the caches "
            "from the matching forward call"
        )
    last = caches[-1]
    c_last = net.stages[-1].bank.q
    if last.post.shape[-2:] != (1, c_last):
        raise StructureError("final cache does not match the network's last stage")
    if grad_out.shape != last.post.shape[:-2] + (net.m,):
        raise StructureError(
            f"grad_out shape {grad_out.shape} does not match output shape "
            f"{last.post.shape[:-2] + (net.m,)}"
        )
    grads = {}
    features = last.post[..., 0, :]
    grads["head"] = grad_out.reshape(-1, net.m).T @ features.reshape(-1, c_last)
    grad_features = grad_out @ net.head
    grad_value, grad_w, grad_b = _bank_backward(
        last, net.stages[-1].bank, grad_features[..., None, :]
    )
    idx = len(net.stages) - 1
    grads[f"stage{idx}.weights"] = grad_w
    grads[f"stage{idx}.biases"] = grad_b
    for i in range(len(net.stages) - 2, -1, -1):
        stage = net.stages[i]
        grad_value, grad_w, grad_b, grad_beta = stage_backward(
            caches[i], stage.bank, stage.beta, grad_value
        )
        grads[f"stage{i}.weights"] = grad_w
        grads[f"stage{i}.biases"] = grad_b
        grads[f"stage{i}.beta"] = grad_beta
    return grads


def blockwise_lift(f, x, k):
    """Apply a scalar block function to each disjoint length-k block of x."""
    x = as_dense(x, rank=1)
    k = int(k)
    if k < 1 or x.shape[0] % k != 0:
        raise StructureError(
            f"block length {k} does not tile input length {x.shape[0]}"
        )
    return np.array([float(f(block)) for block in x.reshape(-1, k)])


def dump_model(net):
    """Serialize a cascade to versioned JSON text.

    Floats are written with shortest round-trip representation, so loading
    reproduces every 64-bit value exactly and equal nets serialize to equal
    bytes.
    """
    doc = {
        "format": MODEL_FORMAT,
        "version": MODEL_VERSION,
        "n": net.n,
        "m": net.m,
        "stages": [
            {
                "k": stage.bank.k,
                "c": stage.bank.q,
                "weights": stage.bank.weights.tolist(),
                "biases": stage.bank.biases.tolist(),
                "beta": None if stage.beta is None else stage.beta.tolist(),
            }
            for stage in net.stages
        ],
        "head": net.head.tolist(),
    }
    return json.dumps(doc, sort_keys=True, separators=(",", ":")) + "\n"


def parse_model(text):
    """Rebuild a cascade from dump_model() output."""
    doc = json.loads(text)
    if doc.get("format") != MODEL_FORMAT:
        raise StructureError(f"not a {MODEL_FORMAT} document: format={doc.get('format')!r}")
    if doc.get("version") != MODEL_VERSION:
        raise StructureError(f"unsupported model version {doc.get('version')!r}")
    stages = []
    for entry in doc["stages"]:
        bank = ConvKernelBank(np.array(entry["weights"], dtype=np.float64),
                              np.array(entry["biases"], dtype=np.float64))
        if (bank.q, bank.k) != (entry["c"], entry["k"]):
            raise StructureError(
                f"stage arrays {bank.weights.shape} disagree with recorded "
                f"(c={entry['c']}, k={entry['k']})"
            )
        beta = entry["beta"]
        stages.append(NetworkStage(bank, None if beta is None else np.array(beta)))
    return CascadeNet(n=doc["n"], m=doc["m"], stages=stages,
                      head=np.array(doc["head"], dtype=np.float64))


def save_model(net, path):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(dump_model(net))


def load_model(path):
    with open(path, "r", encoding="utf-8") as fh:
        return parse_model(fh.read())
