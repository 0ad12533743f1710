"""Shared builders for synthetic data and small models."""

import zlib

import numpy as np

from afnet import autograd as ag
from afnet.autograd import RunningStats
from afnet.features import Waveform, write_wav
from afnet.model import AfConfig, DrnConfig, build_model
from afnet.trainer import Dataset


def band_fixture(n_per_class, seed, F=16, T=128, strength=0.6):
    """Genuine maps carry extra energy in a low band, spoof maps in a high band."""
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((2 * n_per_class, F, T)).astype(np.float32)
    lo, hi = F // 8, F // 8 + max(F // 5, 1)
    X[:n_per_class, lo:hi] += strength
    X[n_per_class:, F - hi : F - lo] += strength
    y = np.r_[np.ones(n_per_class), np.zeros(n_per_class)].astype(int)
    ids = [f"s{seed}_{i:03d}" for i in range(2 * n_per_class)]
    return Dataset(ids, X, y)


def micro_model(F=16, T=32, nonlinearity="sigmoid", seed=0, dtype=np.float64, blocks=2, levels=2):
    return build_model((F, T), AfConfig(nonlinearity, unet_levels=levels),
                       DrnConfig.micro(blocks), seed=seed, dtype=dtype)


def tone(freq_hz, seconds=0.4, rate=16000, amp=0.5, noise=0.0, seed=0):
    rng = np.random.default_rng(seed)
    t = np.arange(int(seconds * rate)) / rate
    x = amp * np.sin(2 * np.pi * freq_hz * t) + noise * rng.standard_normal(t.size)
    return Waveform(np.clip(x, -1, 1), rate)


# acceptance summary lines, printed by the terminal-summary hook in conftest
ACCEPTANCE_LINES = {}


def write_corpus(directory, n_per_class=3, seconds=0.4, seed=0):
    """Genuine files are 1 kHz tones, spoof files 5 kHz tones; returns the key dict."""
    directory.mkdir(parents=True, exist_ok=True)
    key = {}
    for i in range(n_per_class):
        for label, freq, code in (("gen", 1000.0, 1), ("spf", 5000.0, 0)):
            utt = f"{label}{i:02d}"
            wave = tone(freq + 40 * i + 13 * seed, seconds, noise=0.05, seed=i + 7 * code + 100 * seed)
            write_wav(directory / f"{utt}.wav", wave)
            key[utt] = code
    return key


def weighted(fn, shape_rng_seed=99):
    """Scalarize an op output with fixed random weights so every entry matters."""
    cache = {}

    def loss(p):
        y = fn(p)
        if "w" not in cache:
            cache["w"] = np.random.default_rng(shape_rng_seed).standard_normal(y.shape)
        return ag.sum_all(ag.mul(y, cache["w"]))

    return loss


# op name -> (graph, parameter shapes)
OP_CASES = {
    "conv2d_d1": (lambda p: ag.conv2d(p["x"], p["k"], p["b"], padding=1), {"x": (2, 2, 6, 7), "k": (3, 2, 3, 3), "b": (3,)}),
    "conv2d_d2_s2": (lambda p: ag.conv2d(p["x"], p["k"], dilation=2, padding=1, stride=2), {"x": (1, 2, 9, 8), "k": (2, 2, 3, 3)}),
    "conv2d_d4": (lambda p: ag.conv2d(p["x"], p["k"], dilation=4, padding=4), {"x": (1, 1, 10, 10), "k": (2, 1, 3, 3)}),
    "maxpool": (lambda p: ag.maxpool2d(p["x"], 2), {"x": (2, 2, 6, 8)}),
    "bilinear": (lambda p: ag.bilinear_upsample(p["x"], 7, 9), {"x": (1, 2, 3, 4)}),
    "relu": (lambda p: ag.activation(p["x"], "relu"), {"x": (1, 1, 4, 5)}),
    "elu": (lambda p: ag.activation(p["x"], "elu"), {"x": (1, 1, 4, 5)}),
    "sigmoid": (lambda p: ag.activation(p["x"], "sigmoid"), {"x": (1, 1, 4, 5)}),
    "tanh": (lambda p: ag.activation(p["x"], "tanh"), {"x": (1, 1, 4, 5)}),
    "softmax_time": (lambda p: ag.axis_softmax(p["x"], "time"), {"x": (1, 2, 3, 5)}),
    "softmax_freq": (lambda p: ag.axis_softmax(p["x"], "frequency"), {"x": (1, 2, 3, 5)}),
    "bn_train": (lambda p: ag.batchnorm2d(p["x"], p["g"], p["b"]), {"x": (3, 2, 3, 4), "g": (2,), "b": (2,)}),
    "bn_eval": (lambda p: ag.batchnorm2d(p["x"], p["g"], p["b"], RunningStats(np.array([0.3, -1.0]), np.array([2.0, 0.5])), "eval"),
                {"x": (2, 2, 3, 3), "g": (2,), "b": (2,)}),
    "add": (lambda p: ag.add(p["a"], p["b"]), {"a": (1, 2, 3, 3), "b": (1, 2, 3, 3)}),
    "mul": (lambda p: ag.mul(p["a"], p["b"]), {"a": (1, 2, 3, 3), "b": (1, 2, 3, 3)}),
    "concat": (lambda p: ag.concat([p["a"], p["b"]]), {"a": (1, 2, 3, 3), "b": (1, 1, 3, 3)}),
    "global_mean_pool": (lambda p: ag.global_mean_pool(p["x"]), {"x": (2, 3, 4, 5)}),
    "linear": (lambda p: ag.linear(p["x"], p["w"], p["b"]), {"x": (3, 4, 1, 1), "w": (2, 4), "b": (2,)}),
    "reshape": (lambda p: ag.reshape(p["x"], (1, 6, 2, 1)), {"x": (1, 3, 2, 2)}),
    "sum_all": (lambda p: ag.sum_all(p["x"]), {"x": (2, 1, 2, 3)}),
    "bce": (lambda p: ag.bce_with_logits(p["z"], np.array([1, 0, 1, 0])), {"z": (4,)}),
}

SCALAR_OPS = ("bce", "sum_all")


def op_grad_check(name, tolerance=1e-4):
    """Central-difference check of one entry of OP_CASES in double precision."""
    fn, shapes = OP_CASES[name]
    rng = np.random.default_rng(zlib.crc32(name.encode()))
    params = {k: rng.standard_normal(s) for k, s in shapes.items()}
    loss = fn if name in SCALAR_OPS else weighted(fn)
    return ag.grad_check(loss, params, tolerance=tolerance, h=1e-5)
