"""Client/cloud cost accounting for one recognition session.

FLOPs are counted by tracing the ops of a real single-clip forward pass
(:class:`~tsdistill.tensor.OpTrace`) and pricing each op with
:func:`count_flops`. A multiply-accumulate counts as 2 FLOPs. Transmission
counts raw payload scalars only, with no container or codec overhead.
"""
from __future__ import annotations

import csv
from dataclasses import asdict, dataclass, replace

import numpy as np

from . import nets, selectors
from .errors import ArgumentError
from .nets import ModelParams, NetConfig
from .tensor import OpRecord, OpTrace, Tensor
from .tsd import distill

DEPLOYMENTS = ("cloud_only", "split")
SPLITTABLE = ("tsd", "attn")
_ELEMENTWISE = {"add", "sub", "mul", "scale", "relu", "add_bias", "cross_entropy"}
_LAYOUT = {"reshape", "permute", "diag"}


@dataclass(frozen=True)
class CostReport:
    """Per-video costs; FLOP and frame counts already include all Q clips."""

    variant: str
    deployment: str
    T: int
    T_s: int
    Q: int
    client_params: int
    cloud_params: int
    client_flops: int
    cloud_flops: int
    frames_processed_client: int
    frames_transmitted: int
    frames_processed_cloud: int
    bytes_transmitted: int

    @property
    def total_flops(self) -> int:
        return self.client_flops + self.cloud_flops


CSV_COLUMNS = ("variant", "deployment", "clips", "T", "T_s", "client_params", "client_flops",
               "frames_processed_client", "frames_transmitted", "frames_processed_cloud",
               "cloud_params", "cloud_flops", "bytes_transmitted")


def _prod(shape) -> int:
    return int(np.prod(shape, dtype=np.int64))


def count_flops(desc: OpRecord) -> int:
    """FLOPs of one op given its input and output shapes.

    matmul ``m x k x n`` costs ``2mkn`` (times any batch extent); conv3d costs
    ``2 Kt Kh Kw Cin Cout To Ho Wo``; elementwise ops and reductions cost one
    per element; a column softmax of length ``n`` costs ``4n``; pure layout
    ops are free.
    """
    shapes = (desc.input_shapes, desc.output_shape)
    if desc.input_shapes is None or desc.output_shape is None or any(
            s is None for s in desc.input_shapes):
        raise ArgumentError(f"descriptor for {desc.op!r} is not fully shaped: {shapes}")
    ins, out = desc.input_shapes, tuple(desc.output_shape)
    op = desc.op
    if op == "matmul":
        return 2 * _prod(out) * int(ins[0][-1])
    if op == "conv3d":
        kt, kh, kw, c_in, _ = ins[1]
        return 2 * kt * kh * kw * c_in * _prod(out)
    if op == "depthwise_conv3d":
        kt, kh, kw, _ = ins[1]
        return 2 * kt * kh * kw * _prod(out)
    if op in _ELEMENTWISE:
        return _prod(out)
    if op == "mean":
        return _prod(ins[0])
    if op == "softmax_cols":
        return 4 * _prod(ins[0])
    if op in _LAYOUT:
        return 0
    raise ArgumentError(f"no FLOP rule for op {op!r}")


def trace_flops(records) -> int:
    return sum(count_flops(r) for r in records)


def _selection(variant, params, T, T_s, dtype) -> Tensor:
    if variant == "uniform":
        idx = selectors.uniform_indices(T, T_s, 0)
    elif variant == "rand":
        idx = selectors.random_indices(T, T_s, 0)
    else:
        w = nets.attention_weights(params).data
        idx = selectors.attention_indices(w, T_s)
    return Tensor._wrap(selectors.one_hot_P(idx, T, dtype))


def _client_pass(x: Tensor, params: ModelParams, variant, cfg: NetConfig) -> Tensor:
    """Frame selection or distillation; returns the frames handed to the main network."""
    if variant == "i3d":
        return x
    if variant == "tsd":
        return distill(x, nets.tsd_transform(x, params, cfg))
    return distill(x, _selection(variant, params, cfg.T, cfg.T_s, x.dtype))


def _check(params: ModelParams, variant, deployment, T, T_s, Q):
    if variant not in ("i3d", "rand", "uniform", "attn", "tsd"):
        raise ArgumentError(f"unknown variant {variant!r}")
    if deployment not in DEPLOYMENTS:
        raise ArgumentError(f"deployment must be one of {DEPLOYMENTS}, got {deployment!r}")
    if deployment == "split" and variant not in SPLITTABLE:
        raise ArgumentError(f"variant {variant!r} has no client component to split off")
    if Q < 1 or not 1 <= T_s <= T:
        raise ArgumentError(f"need Q >= 1 and 1 <= T_s <= T, got Q={Q}, T={T}, T_s={T_s}")
    if variant == "tsd" and (params.tsd_weights().T, params.tsd_weights().T_s) != (T, T_s):
        raise ArgumentError(f"TSD weights are built for T={params.tsd_weights().T}, "
                            f"T_s={params.tsd_weights().T_s}, not T={T}, T_s={T_s}")
    if variant == "attn" and params.attention["logits"].shape[0] != T:
        raise ArgumentError(f"attention weights cover {params.attention['logits'].shape[0]} "
                            f"frames, session has T={T}")


def simulate_session(params: ModelParams, variant: str, deployment: str, T: int, T_s: int,
                     Q: int, geometry: NetConfig) -> CostReport:
    """Cost of recognizing one video from Q clips of T frames.

    ``geometry`` supplies frame side, channel count and scalar dtype. Under
    ``split`` the extractor, TSD block (or attention scoring) and the
    distillation product run on the client and only the T_s output frames are
    sent; under ``cloud_only`` the raw T frames are sent and everything runs in
    the cloud. Pure accounting: nothing leaves the process.
    """
    _check(params, variant, deployment, T, T_s, Q)
    cfg = replace(geometry, T=T, T_s=T_s)
    fill = np.full((T, cfg.input_hw, cfg.input_hw, cfg.in_channels), 0.5, dtype=cfg.np_dtype)
    with OpTrace() as client_trace:
        y = _client_pass(Tensor._wrap(fill), params, variant, cfg)
    with OpTrace() as main_trace:
        nets.recognize(y, params.main, cfg)
    front, main = trace_flops(client_trace.records), trace_flops(main_trace.records)
    front_params = params.count(("extractor", "tsd", "attention"))
    main_params = params.count(("main",))
    main_frames = y.shape[0]
    if deployment == "split":
        client_flops, cloud_flops = Q * front, Q * main
        client_params, cloud_params = front_params, main_params
        frames_client, sent = Q * T, Q * main_frames
    else:
        client_flops, cloud_flops = 0, Q * (front + main)
        client_params, cloud_params = 0, front_params + main_params
        frames_client, sent = 0, Q * T
    frame_bytes = cfg.input_hw * cfg.input_hw * cfg.in_channels * cfg.np_dtype.itemsize
    return CostReport(variant=variant, deployment=deployment, T=T, T_s=T_s, Q=Q,
                      client_params=client_params, cloud_params=cloud_params,
                      client_flops=client_flops, cloud_flops=cloud_flops,
                      frames_processed_client=frames_client, frames_transmitted=sent,
                      frames_processed_cloud=sent, bytes_transmitted=sent * frame_bytes)


def report_row(r: CostReport) -> dict:
    row = asdict(r)
    row["clips"] = row.pop("Q")
    return {k: row[k] for k in CSV_COLUMNS}


def write_cost_csv(path, reports):
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=CSV_COLUMNS)
        writer.writeheader()
        for r in reports:
            writer.writerow(report_row(r))
