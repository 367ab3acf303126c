"""Build pruning instances from calibration activations.

Three layer layouts share one quadratic form.  Dense layers prune input
neurons (one row group per input); convolutions prune input channels,
whose weights occupy k_h*k_w consecutive rows of the patch-matrix layout;
attention output projections prune heads, i.e. head-sized row blocks.

Hessians and linear terms are raw sums over calibration samples (no 1/N):
scaling both by the same constant moves neither the optimal selection nor
the refit weights, and the stored constant keeps the reconstruction loss
self-consistent.  Reports expose a per-sample-normalized loss separately.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import matrixio
from .errors import ShapeMismatchError
from .linalg import as_matrix, damp, spd_factor, symmetrize
from .problem import GroupPartition, QuadraticProblem, expand_weights
from .search import (
    DEFAULT_EXTRA_SWAPS,
    PruneReport,
    TraceEntry,
    make_schedule,
    run_local_search,
)
from .updates import DEFAULT_REBUILD_EVERY

ACTIVATIONS = ("identity", "relu")


def prune_count_for(tau: float, p: int) -> int:
    """floor(tau * p), guarded against representation error so that e.g.
    tau=0.3 of 10 groups prunes 3, not floor(2.9999...)."""
    if not 0.0 <= tau <= 1.0:
        raise ValueError("tau must lie in [0, 1]")
    return int(np.floor(tau * p + 1e-9))


@dataclass(frozen=True)
class CalibrationBatch:
    """Paired activation streams: pruned-model inputs and dense-model inputs.

    The streams coincide until sequential propagation makes them diverge.
    """

    x: np.ndarray
    x_hat: np.ndarray

    def __post_init__(self):
        x = as_matrix(self.x, "calibration inputs")
        x_hat = as_matrix(self.x_hat, "dense-stream inputs")
        if x.shape != x_hat.shape:
            raise ShapeMismatchError(
                f"stream shapes differ: {x.shape} vs {x_hat.shape}"
            )
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "x_hat", x_hat)

    @classmethod
    def of(cls, x, x_hat=None) -> "CalibrationBatch":
        x = as_matrix(x, "calibration inputs")
        return cls(x, x if x_hat is None else x_hat)

    @property
    def sample_count(self) -> int:
        return self.x.shape[0]


@dataclass(frozen=True)
class ConvSpec:
    c_in: int
    c_out: int
    k_h: int
    k_w: int
    f_h: int
    f_w: int
    padding: int = 0
    stride: int = 1

    def __post_init__(self):
        for name in ("c_in", "c_out", "k_h", "k_w", "f_h", "f_w"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.padding < 0 or self.stride < 1:
            raise ValueError("padding must be >= 0 and stride >= 1")
        if self.out_h < 1 or self.out_w < 1:
            raise ValueError("kernel does not fit inside the padded feature map")

    @property
    def out_h(self) -> int:
        return (self.f_h + 2 * self.padding - self.k_h) // self.stride + 1

    @property
    def out_w(self) -> int:
        return (self.f_w + 2 * self.padding - self.k_w) // self.stride + 1

    @property
    def patch_len(self) -> int:
        return self.c_in * self.k_h * self.k_w

    def to_json_dict(self) -> dict:
        return {
            "c_in": self.c_in, "c_out": self.c_out,
            "k_h": self.k_h, "k_w": self.k_w,
            "f_h": self.f_h, "f_w": self.f_w,
            "padding": self.padding, "stride": self.stride,
        }


def im2col(feature_map: np.ndarray, spec: ConvSpec) -> np.ndarray:
    """Patch matrix: one row per output position, channel-major taps.

    Row layout is all k_h*k_w taps of channel 0, then channel 1, etc., so
    pruning channel j zeroes rows j*k_h*k_w .. (j+1)*k_h*k_w - 1.
    """
    fm = np.asarray(feature_map, dtype=np.float64)
    if fm.shape != (spec.c_in, spec.f_h, spec.f_w):
        raise ShapeMismatchError(
            f"feature map shape {fm.shape} does not match spec "
            f"({spec.c_in}, {spec.f_h}, {spec.f_w})"
        )
    if spec.padding:
        fm = np.pad(fm, ((0, 0), (spec.padding, spec.padding), (spec.padding, spec.padding)))
    windows = np.lib.stride_tricks.sliding_window_view(fm, (spec.k_h, spec.k_w), axis=(1, 2))
    windows = windows[:, :: spec.stride, :: spec.stride]
    patches = windows.transpose(1, 2, 0, 3, 4).reshape(spec.out_h * spec.out_w, spec.patch_len)
    return np.ascontiguousarray(patches)


def flatten_filter_bank(weights, spec: ConvSpec) -> np.ndarray:
    """Filter bank as a (c_in*k_h*k_w) x c_out matrix, one filter per column,
    row order matching the patch layout."""
    w = np.asarray(weights, dtype=np.float64)
    if w.ndim == 4:
        if w.shape != (spec.c_out, spec.c_in, spec.k_h, spec.k_w):
            raise ShapeMismatchError(
                f"filter bank shape {w.shape} does not match spec"
            )
        return np.ascontiguousarray(w.reshape(spec.c_out, spec.patch_len).T)
    w = as_matrix(w, "filter bank")
    if w.shape != (spec.patch_len, spec.c_out):
        raise ShapeMismatchError(
            f"flattened filter bank must be {spec.patch_len}x{spec.c_out}, got {w.shape}"
        )
    return w


def conv_forward(feature_map: np.ndarray, w_mat: np.ndarray, spec: ConvSpec) -> np.ndarray:
    """Convolution as a patch-matrix product; returns (c_out, out_h, out_w)."""
    out = im2col(feature_map, spec) @ w_mat
    return out.T.reshape(spec.c_out, spec.out_h, spec.out_w)


def _check_positive_definite(hessian: np.ndarray) -> None:
    spd_factor(hessian)  # raises NotPositiveDefiniteError when damping is too small


def build_dense(batch: CalibrationBatch, w_hat, damping: float = 1e-4) -> QuadraticProblem:
    """Instance for pruning input neurons of a dense layer."""
    w_hat = as_matrix(w_hat, "dense weights")
    if batch.x.shape[1] != w_hat.shape[0]:
        raise ShapeMismatchError(
            f"inputs have {batch.x.shape[1]} features but weights have "
            f"{w_hat.shape[0]} rows"
        )
    target = batch.x_hat @ w_hat
    hessian = damp(symmetrize(batch.x.T @ batch.x), damping)
    _check_positive_definite(hessian)
    return QuadraticProblem(
        hessian=hessian,
        linear=batch.x.T @ target,
        partition=GroupPartition.dense(w_hat.shape[0]),
        const_term=0.5 * float(np.sum(target * target)),
        sample_count=batch.sample_count,
    )


def build_conv(samples, weights, spec: ConvSpec, damping: float = 1e-4,
               dense_samples=None) -> QuadraticProblem:
    """Instance for pruning input channels of a convolutional layer.

    ``samples`` feed the quadratic term (pruned-model stream); the targets
    come from the original filters applied to ``dense_samples`` (defaults
    to the same maps when the streams have not diverged).
    """
    w_mat = flatten_filter_bank(weights, spec)
    if dense_samples is None:
        dense_samples = samples
    if len(samples) != len(dense_samples):
        raise ShapeMismatchError("stream sample counts differ")
    # Stacking all patch matrices keeps one accumulation order, so a 1x1
    # kernel reproduces the dense builder bit for bit.
    patches = np.vstack([im2col(fm, spec) for fm in samples])
    target = np.vstack([im2col(fm, spec) for fm in dense_samples]) @ w_mat
    hessian = damp(symmetrize(patches.T @ patches), damping)
    _check_positive_definite(hessian)
    return QuadraticProblem(
        hessian=hessian,
        linear=patches.T @ target,
        partition=GroupPartition.contiguous(spec.patch_len, spec.k_h * spec.k_w, "conv"),
        const_term=0.5 * float(np.sum(target * target)),
        sample_count=len(samples),
    )


def build_attention(batch: CalibrationBatch, w_hat, n_heads: int,
                    damping: float = 1e-4) -> QuadraticProblem:
    """Instance for pruning heads of an attention output projection: the
    dense build with head-sized contiguous row groups."""
    w_hat = as_matrix(w_hat, "projection weights")
    if n_heads < 1 or w_hat.shape[0] % n_heads:
        raise ShapeMismatchError(
            f"{w_hat.shape[0]} rows not divisible into {n_heads} heads"
        )
    dense = build_dense(batch, w_hat, damping)
    partition = GroupPartition.contiguous(w_hat.shape[0], w_hat.shape[0] // n_heads, "attention")
    return QuadraticProblem(
        hessian=dense.hessian,
        linear=dense.linear,
        partition=partition,
        const_term=dense.const_term,
        sample_count=dense.sample_count,
    )


# ---------------------------------------------------------------------------
# Sequential layer chains
# ---------------------------------------------------------------------------


@dataclass
class ChainLayer:
    """One prunable layer in a sequential chain.

    ``tau`` is the fraction of groups to prune (floor rounding, so tau=0
    marks the layer unprunable).  ``activation`` applies after the layer.
    """

    kind: str
    weights: np.ndarray
    tau: float
    activation: str = "identity"
    conv: ConvSpec | None = None
    n_heads: int | None = None

    def __post_init__(self):
        if self.kind not in ("dense", "conv", "attention"):
            raise ValueError(f"unknown layer kind {self.kind!r}")
        if not 0.0 <= self.tau <= 1.0:
            raise ValueError("tau must lie in [0, 1]")
        if self.activation not in ACTIVATIONS:
            raise ValueError(
                f"unsupported activation {self.activation!r}; choose from {ACTIVATIONS}"
            )
        if self.kind == "conv" and self.conv is None:
            raise ValueError("conv layer requires a ConvSpec")
        if self.kind == "attention" and not self.n_heads:
            raise ValueError("attention layer requires n_heads")


@dataclass
class PrunedLayer:
    report: PruneReport
    weights: np.ndarray  # full-shape matrix, pruned rows zeroed


@dataclass
class ChainResult:
    layers: list[PrunedLayer]
    dense_output: object  # matrix, or list of feature maps for conv chains
    pruned_output: object

    @property
    def reports(self) -> list[PruneReport]:
        return [layer.report for layer in self.layers]


def _activate(value, tag: str):
    if tag == "identity":
        return value
    if isinstance(value, list):
        return [np.maximum(v, 0.0) for v in value]
    return np.maximum(value, 0.0)


def _layer_problem(layer: ChainLayer, pruned_stream, dense_stream, damping):
    if layer.kind == "conv":
        return build_conv(pruned_stream, layer.weights, layer.conv, damping,
                          dense_samples=dense_stream)
    batch = CalibrationBatch(pruned_stream, dense_stream)
    if layer.kind == "attention":
        return build_attention(batch, layer.weights, layer.n_heads, damping)
    return build_dense(batch, layer.weights, damping)


def _propagate(layer: ChainLayer, stream, weights_mat):
    if layer.kind == "conv":
        return [conv_forward(fm, weights_mat, layer.conv) for fm in stream]
    return stream @ weights_mat


def prune_chain(layers, calibration, preset: str = "nested", t_hat: int | None = None,
                extra_swaps: int = DEFAULT_EXTRA_SWAPS, damping: float = 1e-4,
                direction: str = "min_impact",
                rebuild_every: int | None = DEFAULT_REBUILD_EVERY,
                keep_timing: bool = True) -> ChainResult:
    """Prune a chain layer by layer, maintaining two activation streams.

    The dense stream flows through the original weights and provides each
    layer's targets; the pruned stream flows through the already-pruned
    weights and provides each layer's inputs.  Layers marked tau=0 are
    left untouched (weights and stream pass through unchanged).
    """
    layers = list(layers)
    if not layers:
        raise ValueError("chain has no layers")
    if any(l.kind == "conv" for l in layers) and any(l.kind != "conv" for l in layers):
        raise ShapeMismatchError("mixed conv / matrix chains are not supported")
    if layers[0].kind == "conv":
        pruned_stream = [np.asarray(fm, dtype=np.float64) for fm in calibration]
        dense_stream = [fm.copy() for fm in pruned_stream]
    else:
        pruned_stream = as_matrix(calibration, "calibration inputs")
        dense_stream = pruned_stream.copy()

    results: list[PrunedLayer] = []
    for layer in layers:
        dense_mat = _dense_weight_matrix(layer)
        p_prime_cap = _group_count(layer)
        p_prime = prune_count_for(layer.tau, p_prime_cap)
        if p_prime > 0:
            problem = _layer_problem(layer, pruned_stream, dense_stream, damping)
            step = t_hat if t_hat is not None else (2 if layer.kind in ("conv", "attention") else 10)
            schedule = make_schedule(preset, p_prime, t_hat=step, extra_swaps=extra_swaps)
            report, state = run_local_search(
                problem, schedule, direction=direction,
                rebuild_every=rebuild_every, method=preset, keep_timing=keep_timing,
            )
            weights_mat = expand_weights(problem, state.pruned, state.weights)
            pruned_lin = _propagate(layer, pruned_stream, weights_mat)
            dense_lin = _propagate(layer, dense_stream, dense_mat)
        else:
            # Untouched layer: report its true stream discrepancy rather
            # than the damped quadratic, which would add a pure ridge bias.
            weights_mat = dense_mat
            pruned_lin = _propagate(layer, pruned_stream, weights_mat)
            dense_lin = _propagate(layer, dense_stream, dense_mat)
            loss = _stream_gap(dense_lin, pruned_lin)
            samples = _sample_count(pruned_stream)
            report = PruneReport(
                pruned_groups=(),
                objective=loss,
                reconstruction_loss=loss,
                method="no_prune",
                trace=[TraceEntry(0, 0, loss)],
                speedup=1.0,
                normalized_loss=loss / samples if samples else None,
            )
        results.append(PrunedLayer(report=report, weights=weights_mat))
        pruned_stream = _activate(pruned_lin, layer.activation)
        dense_stream = _activate(dense_lin, layer.activation)
    return ChainResult(layers=results, dense_output=dense_stream, pruned_output=pruned_stream)


def _group_count(layer: ChainLayer) -> int:
    if layer.kind == "conv":
        return layer.conv.c_in
    if layer.kind == "attention":
        return int(layer.n_heads)
    return _dense_weight_matrix(layer).shape[0]


def _sample_count(stream) -> int:
    return len(stream) if isinstance(stream, list) else stream.shape[0]


def _stream_gap(dense_out, pruned_out) -> float:
    if isinstance(dense_out, list):
        return 0.5 * float(sum(np.sum((a - b) ** 2) for a, b in zip(dense_out, pruned_out)))
    return 0.5 * float(np.sum((dense_out - pruned_out) ** 2))


def _dense_weight_matrix(layer: ChainLayer) -> np.ndarray:
    if layer.kind == "conv":
        return flatten_filter_bank(layer.weights, layer.conv)
    return as_matrix(layer.weights, "layer weights")


# ---------------------------------------------------------------------------
# Chain descriptions on disk
# ---------------------------------------------------------------------------


def load_chain(path) -> tuple[list[ChainLayer], object]:
    """Read a chain JSON file; returns (layers, calibration data).

    Weight paths are relative to the chain file.  Calibration is either a
    matrix file ("calibration": "inputs.bin") or, for conv chains, a
    directory of feature-map tensors ("calibration": {"dir": "maps"}).
    """
    path = Path(path)
    with open(path) as fh:
        desc = json.load(fh)
    base = path.parent
    layers = []
    for entry in desc["layers"]:
        kind = entry["kind"]
        weights = matrixio.read_matrix(base / entry["weight"])
        conv = ConvSpec(**entry["conv"]) if kind == "conv" else None
        layers.append(ChainLayer(
            kind=kind,
            weights=weights,
            tau=float(entry.get("tau", 0.0)),
            activation=entry.get("activation", "identity"),
            conv=conv,
            n_heads=entry.get("n_heads"),
        ))
    calib = desc["calibration"]
    if isinstance(calib, dict):
        data = matrixio.read_feature_dir(base / calib["dir"])
    else:
        data = matrixio.read_matrix(base / calib)
    return layers, data
