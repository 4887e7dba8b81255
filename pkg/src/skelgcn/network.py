"""Block stack: spatial graph conv, attention, temporal conv, classification.

A block runs adaptive (or fixed-graph) spatial convolution, batch norm and
ReLU, the attention module, a kt x 1 temporal convolution with batch norm
and ReLU, and finally adds a skip branch (1x1 strided conv when channels
or stride differ, identity otherwise). The full model normalizes the raw
input per body/joint/channel feature, folds bodies into the batch, stacks
nine such blocks by default, pools over frames and joints, averages the
bodies back together, and applies a linear classifier.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as tz
from .agc import (AgclParams, BaselineGcnParams, agcl_forward, baseline_gcn_forward,
                  he_uniform, init_agcl, init_baseline, unfreeze_global_graph)
from .attention import StcParams, default_spatial_kernel, init_stc, stc_forward
from .errors import ConfigError, ShapeError
from .graph import SkeletonTopology, partitioned_adjacency
from .tensor import RunningStats, Tensor

DEFAULT_CHANNELS = (64, 64, 64, 128, 128, 128, 256, 256, 256)
DEFAULT_STRIDES = (1, 1, 1, 2, 1, 1, 2, 1, 1)
BN_EPS = 1e-5
BN_MOMENTUM = 0.1


@dataclass(frozen=True)
class BlockSpec:
    c_in: int
    c_out: int
    stride_t: int = 1
    adaptive: bool = True
    attention: bool = True

    def __post_init__(self):
        if self.stride_t not in (1, 2):
            raise ConfigError(f"block stride must be 1 or 2, got {self.stride_t}")


@dataclass(frozen=True)
class ModelConfig:
    topology: SkeletonTopology
    blocks: tuple[BlockSpec, ...]
    num_classes: int
    in_channels: int = 3
    max_frames: int = 300
    bodies: int = 2
    kernel_t: int = 9
    kernel_s: int = 0           # 0 = auto (largest odd <= min(9, V))
    kernel_t_att: int = 9
    reduction: int = 2
    embed_divisor: int = 4
    strategy: str = "warmstart"
    arrangement: str = "sequential"
    mask_enabled: bool = False
    dtype: str = "float32"

    def resolved_kernel_s(self) -> int:
        return self.kernel_s if self.kernel_s else default_spatial_kernel(self.topology.num_joints)

    def np_dtype(self):
        if self.dtype == "float32":
            return np.float32
        if self.dtype == "float64":
            return np.float64
        raise ConfigError(f"unsupported dtype {self.dtype!r}")


def default_blocks(in_channels: int = 3, channels=DEFAULT_CHANNELS, strides=DEFAULT_STRIDES,
                   adaptive: bool = True, attention: bool = True) -> tuple[BlockSpec, ...]:
    if len(channels) != len(strides):
        raise ConfigError(f"{len(channels)} channel counts but {len(strides)} strides")
    specs = []
    prev = in_channels
    for c, s in zip(channels, strides):
        specs.append(BlockSpec(c_in=prev, c_out=c, stride_t=s,
                               adaptive=adaptive, attention=attention))
        prev = c
    return tuple(specs)


@dataclass
class BnParams:
    gamma: Tensor
    beta: Tensor
    running: RunningStats


def init_bn(channels: int, dtype) -> BnParams:
    return BnParams(gamma=Tensor(np.ones(channels, dtype=dtype), requires_grad=True),
                    beta=Tensor(np.zeros(channels, dtype=dtype), requires_grad=True),
                    running=RunningStats(channels, dtype=dtype))


@dataclass
class BlockParams:
    spec: BlockSpec
    gcn: AgclParams | BaselineGcnParams
    bn1: BnParams
    att: StcParams | None
    tconv_w: Tensor
    bn2: BnParams
    residual: str
    residual_w: Tensor | None


@dataclass
class ModelParams:
    config: ModelConfig
    data_bn: BnParams
    blocks: list[BlockParams]
    classifier_w: Tensor
    classifier_b: Tensor
    adjacency: np.ndarray = field(repr=False, default=None)


def init_model(cfg: ModelConfig, seed: int = 0) -> ModelParams:
    """Deterministically initialize all parameters from `seed`."""
    rng = np.random.default_rng(seed)
    dtype = cfg.np_dtype()
    adj = partitioned_adjacency(cfg.topology).normalized
    v = cfg.topology.num_joints
    blocks = []
    for spec in cfg.blocks:
        if spec.adaptive:
            gcn = init_agcl(adj, spec.c_in, spec.c_out, rng, dtype=dtype,
                            strategy=cfg.strategy, embed_divisor=cfg.embed_divisor)
        else:
            gcn = init_baseline(adj, spec.c_in, spec.c_out, rng, dtype=dtype,
                                mask_enabled=cfg.mask_enabled)
        att = None
        if spec.attention:
            att = init_stc(spec.c_out, rng, dtype=dtype,
                           kernel_s=cfg.resolved_kernel_s(), kernel_t=cfg.kernel_t_att,
                           reduction=cfg.reduction, arrangement=cfg.arrangement)
        tconv = Tensor(he_uniform(rng, (spec.c_out, spec.c_out, cfg.kernel_t, 1),
                                  spec.c_out * cfg.kernel_t, dtype), requires_grad=True)
        if spec.c_in == spec.c_out and spec.stride_t == 1:
            residual, residual_w = "identity", None
        else:
            residual = "conv"
            residual_w = Tensor(he_uniform(rng, (spec.c_out, spec.c_in), spec.c_in, dtype),
                                requires_grad=True)
        blocks.append(BlockParams(spec=spec, gcn=gcn, bn1=init_bn(spec.c_out, dtype),
                                  att=att, tconv_w=tconv, bn2=init_bn(spec.c_out, dtype),
                                  residual=residual, residual_w=residual_w))
    c_last = cfg.blocks[-1].c_out
    bound = np.sqrt(1.0 / c_last)
    classifier_w = Tensor(rng.uniform(-bound, bound, size=(c_last, cfg.num_classes)).astype(dtype),
                          requires_grad=True)
    classifier_b = Tensor(np.zeros(cfg.num_classes, dtype=dtype), requires_grad=True)
    return ModelParams(config=cfg, data_bn=init_bn(cfg.bodies * v * cfg.in_channels, dtype),
                       blocks=blocks, classifier_w=classifier_w, classifier_b=classifier_b,
                       adjacency=adj)


def block_forward(f_in: Tensor, spec: BlockSpec, bp: BlockParams, mode: str = "train",
                  kernel_t: int = 9, capture: dict | None = None) -> Tensor:
    if f_in.shape[1] != spec.c_in:
        raise ShapeError(f"block expects C_in={spec.c_in}, got input {f_in.shape}")
    if isinstance(bp.gcn, AgclParams):
        y = agcl_forward(f_in, bp.gcn, capture=capture)
    else:
        y = baseline_gcn_forward(f_in, bp.gcn.A, bp.gcn)
    y = tz.relu(tz.batch_norm(y, bp.bn1.gamma, bp.bn1.beta, bp.bn1.running,
                              mode=mode, eps=BN_EPS, momentum=BN_MOMENTUM))
    if spec.attention and bp.att is not None:
        y = stc_forward(y, bp.att, capture=capture)
    y = tz.conv(y, bp.tconv_w, stride_t=spec.stride_t, pad_t=(kernel_t - 1) // 2)
    y = tz.relu(tz.batch_norm(y, bp.bn2.gamma, bp.bn2.beta, bp.bn2.running,
                              mode=mode, eps=BN_EPS, momentum=BN_MOMENTUM))
    if bp.residual == "identity":
        res = f_in
    else:
        res = tz.conv(f_in, bp.residual_w.reshape((spec.c_out, spec.c_in, 1, 1)),
                      stride_t=spec.stride_t)
    return y + res


def model_forward(x, params: ModelParams, mode: str = "train",
                  capture: list[dict] | None = None) -> Tensor:
    """Class scores [N, num_classes] from input [N, C, T, V, M]."""
    cfg = params.config
    if not isinstance(x, Tensor):
        x = tz.constant(np.asarray(x), dtype=cfg.np_dtype())
    if x.ndim != 5:
        raise ShapeError(f"model input must be [N, C, T, V, M], got {x.shape}")
    n, c, t, v, m = x.shape
    for axis, (got, want) in enumerate(zip((c, v, m), (cfg.in_channels, cfg.topology.num_joints, cfg.bodies))):
        if got != want:
            raise ShapeError(f"model input axis {('C', 'V', 'M')[axis]} is {got}, config says {want}")

    h = x.transpose((0, 4, 3, 1, 2)).reshape((n, m * v * c, t))
    h = tz.batch_norm(h, params.data_bn.gamma, params.data_bn.beta, params.data_bn.running,
                      mode=mode, eps=BN_EPS, momentum=BN_MOMENTUM)
    h = h.reshape((n, m, v, c, t)).transpose((0, 1, 3, 4, 2)).reshape((n * m, c, t, v))
    for i, bp in enumerate(params.blocks):
        cap = None
        if capture is not None:
            cap = {"block": i}
            capture.append(cap)
        h = block_forward(h, bp.spec, bp, mode=mode, kernel_t=cfg.kernel_t, capture=cap)
    feat = tz.reduce_mean(h, (2, 3))                       # [N*M, C_last]
    feat = tz.reduce_mean(feat.reshape((n, m, feat.shape[1])), (1,))
    return tz.matmul(feat, params.classifier_w) + params.classifier_b


def named_parameters(params: ModelParams):
    """Yield (name, tensor, decay) for every learnable parameter, in a stable order.

    `decay` marks parameters subject to weight decay; batch-norm affine
    terms and biases are exempt.
    """
    yield "data_bn.gamma", params.data_bn.gamma, False
    yield "data_bn.beta", params.data_bn.beta, False
    for i, bp in enumerate(params.blocks):
        pre = f"block{i}"
        gcn = bp.gcn
        if isinstance(gcn, AgclParams):
            for k, t in enumerate(gcn.B):
                yield f"{pre}.gcn.B.{k}", t, True
            for k, t in enumerate(gcn.W):
                yield f"{pre}.gcn.W.{k}", t, True
            for k, t in enumerate(gcn.Wtheta):
                yield f"{pre}.gcn.theta.{k}", t, True
            for k, t in enumerate(gcn.Wphi):
                yield f"{pre}.gcn.phi.{k}", t, True
            yield f"{pre}.gcn.gate", gcn.gate_alpha, True
            if gcn.gate_b is not None:
                yield f"{pre}.gcn.gate_b", gcn.gate_b, True
        else:
            for k, t in enumerate(gcn.W):
                yield f"{pre}.gcn.W.{k}", t, True
            if gcn.mask is not None:
                for k, t in enumerate(gcn.mask):
                    yield f"{pre}.gcn.mask.{k}", t, True
        if gcn.residual_w is not None:
            yield f"{pre}.gcn.residual_w", gcn.residual_w, True
        yield f"{pre}.bn1.gamma", bp.bn1.gamma, False
        yield f"{pre}.bn1.beta", bp.bn1.beta, False
        if bp.att is not None:
            yield f"{pre}.att.gs_w", bp.att.gs_w, True
            yield f"{pre}.att.gs_b", bp.att.gs_b, False
            yield f"{pre}.att.gt_w", bp.att.gt_w, True
            yield f"{pre}.att.gt_b", bp.att.gt_b, False
            yield f"{pre}.att.w1", bp.att.w1, True
            yield f"{pre}.att.b1", bp.att.b1, False
            yield f"{pre}.att.w2", bp.att.w2, True
            yield f"{pre}.att.b2", bp.att.b2, False
        yield f"{pre}.tconv_w", bp.tconv_w, True
        yield f"{pre}.bn2.gamma", bp.bn2.gamma, False
        yield f"{pre}.bn2.beta", bp.bn2.beta, False
        if bp.residual_w is not None:
            yield f"{pre}.residual_w", bp.residual_w, True
    yield "classifier.w", params.classifier_w, True
    yield "classifier.b", params.classifier_b, False


def named_buffers(params: ModelParams):
    """Yield (name, array) for non-learnable state (running statistics)."""
    yield "data_bn.running_mean", params.data_bn.running.mean
    yield "data_bn.running_var", params.data_bn.running.var
    for i, bp in enumerate(params.blocks):
        yield f"block{i}.bn1.running_mean", bp.bn1.running.mean
        yield f"block{i}.bn1.running_var", bp.bn1.running.var
        yield f"block{i}.bn2.running_mean", bp.bn2.running.mean
        yield f"block{i}.bn2.running_var", bp.bn2.running.var


def trainable_parameters(params: ModelParams):
    """Like named_parameters but excluding gradient-frozen global graphs."""
    frozen = {f"block{i}.gcn.B.{k}"
              for i, bp in enumerate(params.blocks)
              if isinstance(bp.gcn, AgclParams) and bp.gcn.b_frozen
              for k in range(len(bp.gcn.B))}
    for name, t, decay in named_parameters(params):
        if name not in frozen:
            yield name, t, decay


def unfreeze_model(params: ModelParams) -> None:
    for bp in params.blocks:
        if isinstance(bp.gcn, AgclParams):
            unfreeze_global_graph(bp.gcn)


def zero_grads(params: ModelParams) -> None:
    for _, t, _ in named_parameters(params):
        t.grad = None


def count_parameters(params: ModelParams) -> int:
    return sum(t.size for _, t, _ in named_parameters(params))


def config_to_dict(cfg: ModelConfig) -> dict:
    return {
        "topology": {
            "preset": cfg.topology.preset,
            "num_joints": cfg.topology.num_joints,
            "edges": [list(e) for e in cfg.topology.edges],
            "center_joint": cfg.topology.center_joint,
        },
        "blocks": [[b.c_in, b.c_out, b.stride_t, b.adaptive, b.attention] for b in cfg.blocks],
        "num_classes": cfg.num_classes,
        "in_channels": cfg.in_channels,
        "max_frames": cfg.max_frames,
        "bodies": cfg.bodies,
        "kernel_t": cfg.kernel_t,
        "kernel_s": cfg.kernel_s,
        "kernel_t_att": cfg.kernel_t_att,
        "reduction": cfg.reduction,
        "embed_divisor": cfg.embed_divisor,
        "strategy": cfg.strategy,
        "arrangement": cfg.arrangement,
        "mask_enabled": cfg.mask_enabled,
        "dtype": cfg.dtype,
    }


def config_from_dict(d: dict) -> ModelConfig:
    from .graph import build_topology

    topo_d = d["topology"]
    if topo_d["preset"] in ("ntu25", "kinetics18"):
        topo = build_topology(topo_d["preset"], center_joint=topo_d["center_joint"])
    else:
        topo = build_topology("custom", custom_edges=[tuple(e) for e in topo_d["edges"]],
                              center_joint=topo_d["center_joint"])
    if topo.num_joints != topo_d["num_joints"]:
        raise ConfigError(f"topology joint count {topo.num_joints} != recorded {topo_d['num_joints']}")
    blocks = tuple(BlockSpec(c_in=b[0], c_out=b[1], stride_t=b[2], adaptive=bool(b[3]),
                             attention=bool(b[4])) for b in d["blocks"])
    return ModelConfig(topology=topo, blocks=blocks, num_classes=d["num_classes"],
                       in_channels=d["in_channels"], max_frames=d["max_frames"],
                       bodies=d["bodies"], kernel_t=d["kernel_t"], kernel_s=d["kernel_s"],
                       kernel_t_att=d["kernel_t_att"], reduction=d["reduction"],
                       embed_divisor=d["embed_divisor"], strategy=d["strategy"],
                       arrangement=d["arrangement"], mask_enabled=d["mask_enabled"],
                       dtype=d["dtype"])
