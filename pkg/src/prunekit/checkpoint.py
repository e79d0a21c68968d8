"""``PKPT`` checkpoint container.

Layout (all integers little-endian)::

    b"PKPT" | u32 version | section*

Each section is ``4-byte tag | u64 payload length | payload``. Tags:

    ARCH  architecture text (see ``arch_to_text``)
    CONF  run config text (see ``config_to_text``), may be empty
    TENS  u32 count, then per tensor: name, u8 ndim, u64 extents, float64 data
    MASK  u32 count, then per layer: name, u32 length, int8 filter states
    STAT  i64 epoch, f64 alpha, f64 lambda_h, u32 count, then per layer:
          name, f64 rate, u32 n_hard, u32 indices, u32 n_soft, u32 indices

Names are ``u16 length | utf-8 bytes``. Bias tensors are stored as
``<layer>.bias``.
"""
from __future__ import annotations

import io
import struct
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .arch import ArchSpec, arch_from_text, arch_to_text
from .network import Network
from .pruning import FilterMask, PruneState
from .tensor import Tensor

MAGIC = b"PKPT"
VERSION = 1


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    network: Network
    mask: FilterMask
    state: Optional[PruneState] = None
    config_text: str = ""

    @property
    def arch(self) -> ArchSpec:
        return self.network.arch


def _name(buf: io.BytesIO, s: str) -> None:
    b = s.encode()
    buf.write(struct.pack("<H", len(b)) + b)


def _section(out: io.BytesIO, tag: bytes, payload: bytes) -> None:
    out.write(tag + struct.pack("<Q", len(payload)) + payload)


def dumps(ckpt: Checkpoint) -> bytes:
    out = io.BytesIO()
    out.write(MAGIC + struct.pack("<I", VERSION))
    _section(out, b"ARCH", arch_to_text(ckpt.arch).encode())
    _section(out, b"CONF", ckpt.config_text.encode())

    tensors = list(ckpt.network.parameters())
    buf = io.BytesIO()
    buf.write(struct.pack("<I", len(tensors)))
    for name, t in tensors:
        _name(buf, name)
        buf.write(struct.pack("<B", t.data.ndim))
        buf.write(struct.pack(f"<{t.data.ndim}Q", *t.data.shape))
        buf.write(t.data.astype("<f8").tobytes())
    _section(out, b"TENS", buf.getvalue())

    buf = io.BytesIO()
    buf.write(struct.pack("<I", len(ckpt.mask)))
    for lid, states in ckpt.mask.items():
        _name(buf, lid)
        buf.write(struct.pack("<I", len(states)) + states.astype(np.int8).tobytes())
    _section(out, b"MASK", buf.getvalue())

    if ckpt.state is not None:
        st = ckpt.state
        buf = io.BytesIO()
        buf.write(struct.pack("<qddI", st.t, st.alpha, st.lambda_h, len(st.rates)))
        for lid, rate in st.rates.items():
            hard, soft = st.selection.get(lid, ((), ()))
            _name(buf, lid)
            buf.write(struct.pack("<d", rate))
            for idx in (hard, soft):
                idx = np.asarray(idx, dtype="<u4")
                buf.write(struct.pack("<I", idx.size) + idx.tobytes())
        _section(out, b"STAT", buf.getvalue())
    return out.getvalue()


class _Reader:
    def __init__(self, data: bytes):
        self.data, self.pos = data, 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise CheckpointError("truncated checkpoint")
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def name(self) -> str:
        (n,) = self.unpack("<H")
        return self.take(n).decode()

    def array(self, dtype: str, count: int) -> np.ndarray:
        return np.frombuffer(self.take(np.dtype(dtype).itemsize * count), dtype=dtype).copy()


def loads(data: bytes) -> Checkpoint:
    r = _Reader(data)
    if r.take(4) != MAGIC:
        raise CheckpointError("bad magic: not a PKPT checkpoint")
    (version,) = r.unpack("<I")
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version} (expected {VERSION})")
    sections = {}
    while r.pos < len(data):
        tag = r.take(4)
        (length,) = r.unpack("<Q")
        sections[tag] = r.take(length)
    for tag in (b"ARCH", b"TENS", b"MASK"):
        if tag not in sections:
            raise CheckpointError(f"missing section {tag.decode()}")
    try:
        arch = arch_from_text(sections[b"ARCH"].decode())
        s = _Reader(sections[b"TENS"])
        weights, biases = {}, {}
        (count,) = s.unpack("<I")
        for _ in range(count):
            name = s.name()
            (ndim,) = s.unpack("<B")
            shape = s.unpack(f"<{ndim}Q")
            arr = s.array("<f8", int(np.prod(shape, dtype=np.int64))).reshape(shape)
            if name.endswith(".bias"):
                biases[name[:-5]] = Tensor(arr)
            else:
                weights[name] = Tensor(arr)

        s = _Reader(sections[b"MASK"])
        mask = FilterMask()
        (count,) = s.unpack("<I")
        for _ in range(count):
            lid = s.name()
            (n,) = s.unpack("<I")
            mask[lid] = s.array("i1", n)

        state = None
        if b"STAT" in sections:
            s = _Reader(sections[b"STAT"])
            t, alpha, lam, count = s.unpack("<qddI")
            state = PruneState(t, alpha, lam, {})
            for _ in range(count):
                lid = s.name()
                (rate,) = s.unpack("<d")
                picks = []
                for _ in range(2):
                    (k,) = s.unpack("<I")
                    picks.append(s.array("<u4", k).astype(np.intp))
                state.rates[lid] = rate
                state.selection[lid] = (picks[0], picks[1])
    except (UnicodeDecodeError, ValueError) as e:
        if isinstance(e, CheckpointError):
            raise
        raise CheckpointError(f"corrupt checkpoint: {e}") from None
    for l in arch.layers:
        if l.kind == "conv":
            expect = (l.out_channels, l.in_channels, l.kernel, l.kernel)
        elif l.kind == "linear":
            expect = (l.out_channels, l.in_channels)
            if l.id not in biases:
                raise CheckpointError(f"missing bias for {l.id}")
        else:
            continue
        if l.id not in weights or weights[l.id].shape != expect:
            got = weights[l.id].shape if l.id in weights else None
            raise CheckpointError(f"tensor {l.id} has shape {got}, architecture expects {expect}")
    return Checkpoint(Network(arch, weights, biases), mask, state,
                      sections.get(b"CONF", b"").decode())


def save(path, ckpt: Checkpoint) -> None:
    with open(path, "wb") as f:
        f.write(dumps(ckpt))


def load(path) -> Checkpoint:
    with open(path, "rb") as f:
        return loads(f.read())
