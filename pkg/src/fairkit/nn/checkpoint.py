"""Binary parameter checkpoints.

Layout (little-endian)::

    b"FKNT" | u32 version | u32 layer count
    per layer: u32 kind tag | f64 hyper | u32 n_dims | u32 dims...
               | u64 n_weights | f64 weights... | u64 n_biases | f64 biases...

Linear dims are ``(n_in, n_out)``; embedding dims are ``(dim, *cardinalities)``;
every other layer stores its width.
"""
from __future__ import annotations

import struct

import numpy as np

from ..errors import ContractError
from .net import KINDS, DenseNet, Layer

MAGIC = b"FKNT"
VERSION = 1


def dumps(net):
    out = [MAGIC, struct.pack("<II", VERSION, len(net.layers))]
    for layer in net.layers:
        if layer.kind == "linear":
            dims = layer.weights.shape
        elif layer.kind == "embedding":
            dims = (layer.weights.shape[1], *layer.cardinalities)
        else:
            dims = (layer.width,)
        w = np.empty(0) if layer.weights is None else layer.weights
        b = np.empty(0) if layer.biases is None else layer.biases
        out.append(struct.pack("<IdI", KINDS.index(layer.kind), layer.hyper, len(dims)))
        out.append(struct.pack(f"<{len(dims)}I", *dims))
        out.append(struct.pack("<Q", w.size))
        out.append(np.ascontiguousarray(w, dtype="<f8").tobytes())
        out.append(struct.pack("<Q", b.size))
        out.append(np.ascontiguousarray(b, dtype="<f8").tobytes())
    return b"".join(out)


def loads(data):
    if data[:4] != MAGIC:
        raise ContractError("not a fairkit checkpoint")
    version, n_layers = struct.unpack_from("<II", data, 4)
    if version != VERSION:
        raise ContractError(f"unsupported checkpoint version {version}")
    pos = 12
    layers = []
    for _ in range(n_layers):
        tag, hyper, n_dims = struct.unpack_from("<IdI", data, pos)
        pos += struct.calcsize("<IdI")
        dims = struct.unpack_from(f"<{n_dims}I", data, pos)
        pos += 4 * n_dims
        (nw,) = struct.unpack_from("<Q", data, pos)
        pos += 8
        w = np.frombuffer(data, dtype="<f8", count=nw, offset=pos).astype(np.float64)
        pos += 8 * nw
        (nb,) = struct.unpack_from("<Q", data, pos)
        pos += 8
        b = np.frombuffer(data, dtype="<f8", count=nb, offset=pos).astype(np.float64)
        pos += 8 * nb
        kind = KINDS[tag]
        if kind == "linear":
            layers.append(Layer(kind, w.reshape(dims), b))
        elif kind == "embedding":
            dim, cards = dims[0], tuple(dims[1:])
            layers.append(Layer(kind, w.reshape(-1, dim), None, cardinalities=cards))
        else:
            layers.append(Layer(kind, hyper=hyper, width=dims[0]))
    return DenseNet(layers)


def save(net, path):
    with open(path, "wb") as fh:
        fh.write(dumps(net))


def load(path):
    with open(path, "rb") as fh:
        return loads(fh.read())
