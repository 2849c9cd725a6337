"""Finite-difference checks for every primitive and composite block, at float64."""
from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable, Dict, List, Sequence

import numpy as np

from . import functional as F
from . import tensor as T
from .attention import CBAM, CbamConfig, Fusion, FusionConfig
from .backbone import MBConv
from .gradcheck import GradcheckReport, gradcheck
from .nn import Module
from .objectives import LossConfig, combined_loss
from .tensor import Tensor
from .transformer import ClassifierHead, EncoderBlock, HeadConfig, PatchEmbed, ViTConfig

@dataclass
class SuiteResult:
    name: str
    report: GradcheckReport
    seconds: float


def _weighted(out: Tensor, rng: np.random.Generator) -> Tensor:
    """Random linear functional so every output coordinate contributes a distinct weight."""
    w = rng.standard_normal(out.shape)
    return (out * w).sum()


def _distinct(rng, shape, spread: float = 1.0) -> np.ndarray:
    """Values with well-separated entries (keeps max/relu away from ties and kinks)."""
    n = int(np.prod(shape))
    # offsets of k + 0.25 about the centre are never zero, so relu never sits on its kink
    vals = (rng.permutation(n) - (n - 1) / 2 + 0.25) / n * 4 * spread + rng.uniform(-0.05, 0.05, n) / n
    return vals.reshape(shape)


def _module(m: Module) -> Module:
    return m.to(np.float64)


def primitive_checks(rng: np.random.Generator) -> Dict[str, Callable[[], GradcheckReport]]:
    r = lambda *s: rng.standard_normal(s)  # noqa: E731
    pos = lambda *s: rng.uniform(0.5, 2.0, s)  # noqa: E731
    b, c = int(rng.integers(1, 3)), int(rng.integers(1, 4))
    h, w = int(rng.integers(3, 7)), int(rng.integers(3, 7))
    o = int(rng.integers(1, 4))
    wt = lambda out: _weighted(out, np.random.default_rng(7))  # noqa: E731

    checks = {
        "add": lambda: gradcheck(lambda a, b_: wt(a + b_), [r(2, 3), r(1, 3)]),
        "sub": lambda: gradcheck(lambda a, b_: wt(a - b_), [r(2, 3), r(2, 1)]),
        "mul": lambda: gradcheck(lambda a, b_: wt(a * b_), [r(2, 3), r(3)]),
        "div": lambda: gradcheck(lambda a, b_: wt(a / b_), [r(2, 3), pos(2, 3)]),
        "neg": lambda: gradcheck(lambda a: wt(-a), [r(4)]),
        "pow": lambda: gradcheck(lambda a: wt(a ** 2.5), [pos(3, 2)]),
        "exp": lambda: gradcheck(lambda a: wt(T.exp(a)), [r(3, 2)]),
        "log": lambda: gradcheck(lambda a: wt(T.log(a)), [pos(3, 2)]),
        "sqrt": lambda: gradcheck(lambda a: wt(T.sqrt(a)), [pos(3, 2)]),
        "clamp": lambda: gradcheck(lambda a: wt(T.clamp(a, -10.0, 10.0)), [r(3, 2)]),
        "sum": lambda: gradcheck(lambda a: wt(a.sum(axis=1)), [r(3, 4)]),
        "mean": lambda: gradcheck(lambda a: wt(a.mean(axis=(0, 2), keepdims=True)), [r(2, 3, 4)]),
        "max": lambda: gradcheck(lambda a: wt(a.max(axis=1)), [_distinct(rng, (3, 5))]),
        "reshape": lambda: gradcheck(lambda a: wt(a.reshape(6, 2)), [r(3, 4)]),
        "transpose": lambda: gradcheck(lambda a: wt(a.transpose(2, 0, 1)), [r(2, 3, 4)]),
        "broadcast_to": lambda: gradcheck(lambda a: wt(T.broadcast_to(a, (3, 2, 4))), [r(1, 2, 1)]),
        "getitem": lambda: gradcheck(lambda a: wt(a[:, 1:3]), [r(3, 4)]),
        "concat": lambda: gradcheck(lambda a, b_: wt(T.concat([a, b_], axis=1)), [r(2, 3), r(2, 5)]),
        "pad": lambda: gradcheck(lambda a: wt(T.pad(a, ((0, 0), (1, 2)))), [r(2, 3)]),
        "matmul": lambda: gradcheck(lambda a, b_: wt(a @ b_), [r(2, 3, 4), r(4, 5)]),
        "linear": lambda: gradcheck(lambda x, wm, bv: wt(F.linear(x, wm, bv)), [r(2, 3, 4), r(5, 4), r(5)]),
        "conv2d_same_s1": lambda: gradcheck(
            lambda x, k, bv: wt(F.conv2d(x, k, bv, 1, "same")), [r(b, c, h, w), r(o, c, 3, 3), r(o)]),
        "conv2d_same_s2": lambda: gradcheck(
            lambda x, k: wt(F.conv2d(x, k, None, 2, "same")), [r(b, c, h, w), r(o, c, 3, 3)]),
        "conv2d_explicit_pad": lambda: gradcheck(
            lambda x, k: wt(F.conv2d(x, k, None, 1, 1)), [r(b, c, h, w), r(o, c, 2, 2)]),
        "conv2d_1x1": lambda: gradcheck(
            lambda x, k, bv: wt(F.conv2d(x, k, bv)), [r(b, c, h, w), r(o, c, 1, 1), r(o)]),
        "depthwise_conv2d_s1": lambda: gradcheck(
            lambda x, k: wt(F.depthwise_conv2d(x, k, None, 1)), [r(b, c, h, w), r(c, 1, 3, 3)]),
        "depthwise_conv2d_s2": lambda: gradcheck(
            lambda x, k, bv: wt(F.depthwise_conv2d(x, k, bv, 2)), [r(b, c, h, w), r(c, 1, 3, 3), r(c)]),
        "maxpool2d": lambda: gradcheck(
            lambda x: wt(F.pool2d(x, "max", 2, 2)), [_distinct(rng, (b, c, 4, 6))]),
        "avgpool2d": lambda: gradcheck(lambda x: wt(F.pool2d(x, "avg", 3, 1)), [r(b, c, h, w)]),
        "global_maxpool": lambda: gradcheck(
            lambda x: wt(F.global_pool(x, "max")), [_distinct(rng, (b, c, h, w))]),
        "global_avgpool": lambda: gradcheck(lambda x: wt(F.global_pool(x, "avg")), [r(b, c, h, w)]),
        "bilinear_up": lambda: gradcheck(lambda x: wt(F.bilinear_resize(x, 7, 5)), [r(b, c, 3, 4)]),
        "bilinear_down": lambda: gradcheck(lambda x: wt(F.bilinear_resize(x, 2, 3)), [r(b, c, 5, 6)]),
        "sigmoid": lambda: gradcheck(lambda x: wt(F.sigmoid(x)), [r(3, 4)]),
        "relu": lambda: gradcheck(lambda x: wt(F.relu(x)), [_distinct(rng, (3, 4))]),
        "gelu": lambda: gradcheck(lambda x: wt(F.gelu(x)), [r(3, 4)]),
        "silu": lambda: gradcheck(lambda x: wt(F.silu(x)), [r(3, 4)]),
        "softmax": lambda: gradcheck(lambda x: wt(F.softmax(x, axis=-1)), [r(2, 3, 5)]),
        "layernorm": lambda: gradcheck(
            lambda x, g, bv: wt(F.layernorm(x, g, bv, 1e-6)), [r(2, 3, 6), r(6), r(6)]),
        "batchnorm_train": lambda: gradcheck(
            lambda x, g, bv: wt(F.batchnorm(x, g, bv, np.zeros(c), np.ones(c), True)),
            [r(3, c, 3, 2), r(c), r(c)]),
        "batchnorm_eval": lambda: gradcheck(
            lambda x, g, bv: wt(F.batchnorm(x, g, bv, r(c) * 0 + 0.3, np.full(c, 2.0), False)),
            [r(3, c, 3, 2), r(c), r(c)]),
        "dropout_train": lambda: gradcheck(
            lambda x: wt(F.dropout(x, 0.3, True, np.random.default_rng(11))), [r(4, 5)]),
    }
    return checks


def block_checks(rng: np.random.Generator) -> Dict[str, Callable[[], GradcheckReport]]:
    r = lambda *s: rng.standard_normal(s)  # noqa: E731
    wt = lambda out: _weighted(out, np.random.default_rng(13))  # noqa: E731

    def module_check(module: Module, build_input: Sequence[np.ndarray], call) -> GradcheckReport:
        m = _module(module)
        return gradcheck(lambda *xs: wt(call(m, *xs)), build_input, params=m.parameters())

    def mbconv(stride):
        m = MBConv(3, 3 if stride == 1 else 4, stride, 2, np.random.default_rng(1))
        return lambda: module_check(m, [r(2, 3, 5, 5)], lambda mm, x: mm(x))

    def cbam():
        m = CBAM(4, CbamConfig(reduction=2, spatial_kernel=3), np.random.default_rng(2))

        def check():
            x = _distinct(rng, (2, 4, 4, 4))
            _clear_relu_kinks(m, x)
            return module_check(m, [x], lambda mm, t: mm(t))
        return check

    def fusion():
        m = Fusion((2, 3, 4), FusionConfig(width=3), np.random.default_rng(3))
        return lambda: module_check(
            m, [r(2, 2, 4, 4), r(2, 3, 2, 2), r(2, 4, 1, 1)], lambda mm, a, b_, c_: mm([a, b_, c_]))

    def patch_encoder():
        cfg = ViTConfig(embed_dim=8, heads=2, depth=1, mlp_ratio=2)
        emb = PatchEmbed(2, (2, 2), cfg, np.random.default_rng(4))
        emb.pos_embed.data = np.random.default_rng(5).normal(0, 0.1, emb.pos_embed.shape)
        blk = EncoderBlock(cfg, np.random.default_rng(6))
        holder = _Pair(emb, blk)
        return lambda: module_check(holder, [r(1, 2, 7, 6)], lambda mm, x: mm.second(mm.first(x)))

    def head():
        m = ClassifierHead(6, HeadConfig(hidden=4, dropout=0.0), np.random.default_rng(7))
        _unit_scale(m.fc1, rng)
        return lambda: module_check(m, [r(5, 6)], lambda mm, x: mm.logits(x))

    def end_to_end():
        cfg = ViTConfig(embed_dim=8, heads=2, depth=1, mlp_ratio=2)
        emb = PatchEmbed(3, (2, 2), cfg, np.random.default_rng(8))
        blk = EncoderBlock(cfg, np.random.default_rng(9))
        hd = ClassifierHead(8, HeadConfig(hidden=4, dropout=0.0), np.random.default_rng(10))
        _unit_scale(hd.fc1, rng)
        hd.bn._buffers["running_mean"][:] = 0.1
        holder = _Pair(_Pair(emb, blk), hd).eval()
        return lambda: module_check(
            holder, [r(1, 3, 8, 8)],
            lambda mm, x: F.sigmoid(mm.second.logits(mm.first.second(mm.first.first(x))[:, 0])))

    def loss():
        y = (np.arange(6) % 2).astype(np.float64)
        return lambda: gradcheck(
            lambda z: combined_loss(F.sigmoid(z), y, LossConfig()), [r(6, 1)])

    return {
        "mbconv_residual": mbconv(1),
        "mbconv_stride2": mbconv(2),
        "cbam": cbam(),
        "fusion": fusion(),
        "patchify_encoder_block": patch_encoder(),
        "head": head(),
        "patchify_block_head": end_to_end(),
        "combined_loss": loss(),
    }


def _unit_scale(linear, rng: np.random.Generator) -> None:
    """Redraw weights so pre-activations have unit scale.

    Train-mode batchnorm over a handful of rows divides by the batch std; with
    the 0.02-std default init that std is tiny, the third derivative explodes
    and central differences at h=1e-4 stop resolving the true slope.
    """
    fan_in = linear.weight.shape[1]
    linear.weight.data = rng.standard_normal(linear.weight.shape) / np.sqrt(fan_in)


def _clear_relu_kinks(cbam: CBAM, x: np.ndarray, margin: float = 0.05) -> None:
    """Shift channel-MLP hidden biases until no pre-activation sits within ``margin`` of zero.

    A perturbation of size h across the relu kink makes central differences meaningless.
    """
    fc1 = cbam.channel.fc1
    descriptors = np.concatenate([x.mean(axis=(2, 3)), x.max(axis=(2, 3))])
    for _ in range(100):
        z = descriptors @ fc1.weight.data.T.astype(np.float64) + fc1.bias.data
        close = np.any(np.abs(z) < margin, axis=0)
        if not close.any():
            return
        fc1.bias.data = fc1.bias.data + np.where(close, 2 * margin, 0.0).astype(fc1.bias.dtype)


class _Pair(Module):
    def __init__(self, first: Module, second: Module):
        self.first, self.second = first, second


def run_suite(seed: int = 0, names: Sequence[str] = ()) -> List[SuiteResult]:
    rng = np.random.default_rng(seed)
    checks = {**primitive_checks(rng), **block_checks(rng)}
    results = []
    for name, check in checks.items():
        if names and name not in names:
            continue
        t0 = time.perf_counter()
        report = check()
        results.append(SuiteResult(name, report, time.perf_counter() - t0))
    return results
