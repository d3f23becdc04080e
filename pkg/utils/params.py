"""
Portable parameter files.

Layout, all little-endian:
    magic  b"SSMP" | version u16 | network count u16
    per network:
        name length u16 | name utf-8 | head length u16 | head utf-8
        dropout f64 | layer dim count u16 | dims u32 * count
        per layer: weight (out x in, row-major) f64 | bias (out) f64
"""
import io
import logging
import struct

import numpy as np
import torch

from .errors import ParamsFileError
from .networks import Mlp

logger = logging.getLogger(__name__)

MAGIC = b"SSMP"
VERSION = 1
_F8 = np.dtype("<f8")


def _write_str(buf: io.BytesIO, text: str) -> None:
    raw = text.encode("utf-8")
    buf.write(struct.pack("<H", len(raw)))
    buf.write(raw)


def _read(buf: io.BytesIO, n: int) -> bytes:
    chunk = buf.read(n)
    if len(chunk) != n:
        raise ParamsFileError("parameter file is truncated")
    return chunk


def _read_str(buf: io.BytesIO) -> str:
    (n,) = struct.unpack("<H", _read(buf, 2))
    try:
        return _read(buf, n).decode("utf-8")
    except UnicodeDecodeError:
        raise ParamsFileError("parameter file has a corrupted name field")


def dumps(networks: dict[str, Mlp]) -> bytes:
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<HH", VERSION, len(networks)))
    for name in sorted(networks):
        net = networks[name]
        _write_str(buf, name)
        _write_str(buf, net.head)
        buf.write(struct.pack("<dH", net.dropout_rate, len(net.dims)))
        buf.write(struct.pack(f"<{len(net.dims)}I", *net.dims))
        for layer in net.layers:
            buf.write(layer.weight.detach().numpy().astype(_F8).tobytes())
            buf.write(layer.bias.detach().numpy().astype(_F8).tobytes())
    return buf.getvalue()


def loads(data: bytes) -> dict[str, Mlp]:
    buf = io.BytesIO(data)
    if _read(buf, 4) != MAGIC:
        raise ParamsFileError("not a parameter file (bad magic)")
    version, count = struct.unpack("<HH", _read(buf, 4))
    if version != VERSION:
        raise ParamsFileError(f"parameter file version {version}, expected {VERSION}")
    networks = {}
    for _ in range(count):
        name = _read_str(buf)
        head = _read_str(buf)
        dropout, n_dims = struct.unpack("<dH", _read(buf, 10))
        dims = struct.unpack(f"<{n_dims}I", _read(buf, 4 * n_dims))
        try:
            net = Mlp(dims[0], dims[-1], head=head, dropout_rate=dropout)
        except (ValueError, IndexError, ZeroDivisionError, RuntimeError) as e:
            raise ParamsFileError(f"network {name}: {e}")
        if net.dims != tuple(dims):
            raise ParamsFileError(f"network {name}: hidden dims {dims} do not match {net.dims}")
        with torch.no_grad():
            for layer in net.layers:
                w = np.frombuffer(_read(buf, layer.weight.numel() * 8), dtype=_F8)
                b = np.frombuffer(_read(buf, layer.bias.numel() * 8), dtype=_F8)
                layer.weight.copy_(torch.from_numpy(w.reshape(layer.weight.shape).copy()))
                layer.bias.copy_(torch.from_numpy(b.copy()))
        networks[name] = net
    if buf.read(1):
        raise ParamsFileError("trailing bytes after the last network")
    return networks


def save_params(path: str, networks: dict[str, Mlp]) -> None:
    with open(path, "wb") as f:
        f.write(dumps(networks))
    logger.info("Saved %d network(s) to %s", len(networks), path)


def load_params(path: str) -> dict[str, Mlp]:
    try:
        with open(path, "rb") as f:
            data = f.read()
    except OSError as e:
        raise ParamsFileError(f"cannot read {path}: {e}")
    return loads(data)
