"""Small MNIST convolutional classifiers in plain numpy.

Model A: 8 3x3 ReLU filters -> 2x2 max pool -> softmax (13,610 parameters).
Model B: the same front end plus a 20-unit ReLU layer (27,350 parameters).
Parameters live in one flat vector so they can be packed, transmitted and
averaged like any other model.
"""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

IMAGE = 28
KERNEL = 3
FILTERS = 8
CLASSES = 10
CONV_OUT = IMAGE - KERNEL + 1
POOLED = CONV_OUT // 2
FLAT = POOLED * POOLED * FILTERS


class ConvNet:
    strongly_convex = False

    def __init__(self, hidden=None):
        self.hidden = hidden
        shapes = [("conv_w", (KERNEL * KERNEL, FILTERS)), ("conv_b", (FILTERS,))]
        if hidden is None:
            shapes += [("out_w", (FLAT, CLASSES)), ("out_b", (CLASSES,))]
        else:
            shapes += [("fc_w", (FLAT, hidden)), ("fc_b", (hidden,)),
                       ("out_w", (hidden, CLASSES)), ("out_b", (CLASSES,))]
        self.shapes = shapes
        self.dim = sum(int(np.prod(s)) for _, s in shapes)

    def unpack(self, theta):
        params, pos = {}, 0
        for name, shape in self.shapes:
            size = int(np.prod(shape))
            params[name] = theta[pos:pos + size].reshape(shape)
            pos += size
        return params

    def init_params(self, rng):
        """He-normal weights, zero biases."""
        parts = []
        for name, shape in self.shapes:
            if name.endswith("_b"):
                parts.append(np.zeros(shape))
            else:
                parts.append(rng.standard_normal(shape) * np.sqrt(2.0 / shape[0]))
        return np.concatenate([p.ravel() for p in parts])

    def _forward(self, theta, X):
        p = self.unpack(theta)
        X = X.reshape(-1, IMAGE, IMAGE)
        n = X.shape[0]
        patches = sliding_window_view(X, (KERNEL, KERNEL), axis=(1, 2)).reshape(
            n, CONV_OUT, CONV_OUT, KERNEL * KERNEL)
        pre = patches @ p["conv_w"] + p["conv_b"]
        act = np.maximum(pre, 0.0)
        windows = act.reshape(n, POOLED, 2, POOLED, 2, FILTERS).transpose(
            0, 1, 3, 5, 2, 4).reshape(n, POOLED, POOLED, FILTERS, 4)
        arg = windows.argmax(axis=-1)
        pooled = np.take_along_axis(windows, arg[..., None], axis=-1)[..., 0]
        flat = pooled.reshape(n, FLAT)
        cache = {"p": p, "patches": patches, "pre": pre, "arg": arg, "flat": flat}
        if self.hidden is None:
            logits = flat @ p["out_w"] + p["out_b"]
        else:
            z = flat @ p["fc_w"] + p["fc_b"]
            hid = np.maximum(z, 0.0)
            cache.update(z=z, hid=hid)
            logits = hid @ p["out_w"] + p["out_b"]
        return logits, cache

    def logits(self, theta, X):
        return self._forward(theta, X)[0]

    @staticmethod
    def _log_softmax(logits):
        shifted = logits - logits.max(axis=1, keepdims=True)
        return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))

    def loss(self, theta, X, y):
        logp = self._log_softmax(self.logits(theta, X))
        return float(-np.mean(logp[np.arange(len(y)), y.astype(int)]))

    def grad(self, theta, X, y):
        logits, c = self._forward(theta, X)
        p = c["p"]
        n = logits.shape[0]
        dlog = np.exp(self._log_softmax(logits))
        dlog[np.arange(n), y.astype(int)] -= 1.0
        dlog /= n
        g = {}
        if self.hidden is None:
            g["out_w"] = c["flat"].T @ dlog
            g["out_b"] = dlog.sum(axis=0)
            dflat = dlog @ p["out_w"].T
        else:
            g["out_w"] = c["hid"].T @ dlog
            g["out_b"] = dlog.sum(axis=0)
            dz = (dlog @ p["out_w"].T) * (c["z"] > 0)
            g["fc_w"] = c["flat"].T @ dz
            g["fc_b"] = dz.sum(axis=0)
            dflat = dz @ p["fc_w"].T
        dwin = np.zeros((n, POOLED, POOLED, FILTERS, 4))
        np.put_along_axis(dwin, c["arg"][..., None],
                          dflat.reshape(n, POOLED, POOLED, FILTERS)[..., None], axis=-1)
        dact = dwin.reshape(n, POOLED, POOLED, FILTERS, 2, 2).transpose(
            0, 1, 4, 2, 5, 3).reshape(n, CONV_OUT, CONV_OUT, FILTERS)
        dpre = dact * (c["pre"] > 0)
        g["conv_w"] = c["patches"].reshape(-1, KERNEL * KERNEL).T @ dpre.reshape(-1, FILTERS)
        g["conv_b"] = dpre.reshape(-1, FILTERS).sum(axis=0)
        return np.concatenate([g[name].ravel() for name, _ in self.shapes])

    def predict(self, theta, X, chunk=2000):
        out = [self.logits(theta, X[i:i + chunk]).argmax(axis=1)
               for i in range(0, len(X), chunk)]
        return np.concatenate(out)

    def accuracy(self, theta, X, y):
        return float(np.mean(self.predict(theta, X) == y))


def build_model_a():
    return ConvNet(hidden=None)


def build_model_b():
    return ConvNet(hidden=20)
