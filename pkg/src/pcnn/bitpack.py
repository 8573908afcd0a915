"""Bit-packed inference: kernel/activation packing, XNOR-popcount convolution,
model export/import, checkpoints and memory accounting.

Packing convention: bit = 1 means the entry is positive. Bits are LSB-first
inside little-endian 64-bit words, so element ``t`` of a row lives in word
``t // 64`` at bit ``t % 64``. Each output channel's ``in_ch*kh*kw`` entries
(flattened in that order) start on a fresh word.

Export file layout (all little-endian)::

    b"PCNN" | version u16 | flags u16 | record count u32
    record*  : tag u8 | name length u16 | name utf-8 | body length u32 | body
    crc32 u32 over every preceding byte

Container records (sequential, residual) are followed by their children in
pre-order. Projection layers store only the packed quantized kernels and the
scale ``a``; latent kernels and projection matrices are never written,
except inside the optional training-state record of a checkpoint.
"""

from __future__ import annotations

import io
import json
import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import tensor as T
from .layers import (BatchNorm2d, Conv2d, Flatten, GlobalAvgPool, Linear, MaxPool2d, Module, Residual,
                     Sequential, named_buffers, named_params)
from .proj_conv import ProjConv, binarize_activations

MAGIC = b"PCNN"
VERSION = 1
FLAG_TRAINING_STATE = 1
FORMAT_HEADER_BYTES = 12 + 4  # magic, version, flags, record count; trailing crc

TAG_SEQUENTIAL = 1
TAG_RESIDUAL = 2
TAG_PROJ_CONV = 3
TAG_CONV = 4
TAG_BATCHNORM = 5
TAG_LINEAR = 6
TAG_MAXPOOL = 7
TAG_AVGPOOL = 8
TAG_FLATTEN = 9
TAG_TRAINING_STATE = 0x80

TAG_NAMES = {TAG_SEQUENTIAL: "sequential", TAG_RESIDUAL: "residual", TAG_PROJ_CONV: "proj_conv",
             TAG_CONV: "conv", TAG_BATCHNORM: "batchnorm", TAG_LINEAR: "linear", TAG_MAXPOOL: "maxpool",
             TAG_AVGPOOL: "avgpool", TAG_FLATTEN: "flatten", TAG_TRAINING_STATE: "training_state"}


class PackError(ValueError):
    pass


class FormatError(ValueError):
    pass


class IntegrityError(FormatError):
    pass


# ---------------------------------------------------------------------------
# packing

def _pack_rows(bits: np.ndarray) -> np.ndarray:
    """(rows, n) bool -> (rows, ceil(n/64)) uint64, LSB-first."""
    rows, n = bits.shape
    nwords = max(1, -(-n // 64))
    padded = np.zeros((rows, nwords * 64), dtype=np.uint8)
    padded[:, :n] = bits
    return np.packbits(padded, axis=1, bitorder="little").view("<u8").reshape(rows, nwords)


def _unpack_rows(words: np.ndarray, n: int) -> np.ndarray:
    rows = words.shape[0]
    raw = np.ascontiguousarray(words, dtype="<u8").view(np.uint8).reshape(rows, -1)
    return np.unpackbits(raw, axis=1, bitorder="little")[:, :n].astype(bool)


@dataclass
class PackedKernel:
    dims: tuple[int, int, int, int]  # (out_ch, in_ch, kh, kw)
    words: np.ndarray  # (out_ch, words_per_row) uint64
    scale: float

    @property
    def row_bits(self) -> int:
        return self.dims[1] * self.dims[2] * self.dims[3]

    @property
    def bit_count(self) -> int:
        return self.dims[0] * self.row_bits

    def signs(self) -> np.ndarray:
        """The +-1 pattern as (out_ch, in_ch, kh, kw) bools (True = +)."""
        return _unpack_rows(self.words, self.row_bits).reshape(self.dims)


def pack(kernel: np.ndarray, scale: float | None = None) -> PackedKernel:
    """Pack a kernel whose entries are all ``+scale`` or ``-scale``."""
    kernel = np.asarray(kernel)
    if kernel.ndim != 4:
        raise T.ShapeError(f"kernel must be rank 4, got {kernel.shape}")
    a = abs(float(kernel.flat[0])) if scale is None else abs(float(scale))
    flat = kernel.reshape(kernel.shape[0], -1)
    a_typed = kernel.dtype.type(a)
    bad = ~((flat == a_typed) | (flat == -a_typed)) | (a == 0)
    if np.any(bad):
        idx = np.unravel_index(int(np.argmax(bad.ravel())), kernel.shape)
        raise PackError(f"entry {tuple(int(i) for i in idx)} = {kernel[idx]!r} is not +-{a!r}")
    return PackedKernel(tuple(int(d) for d in kernel.shape), _pack_rows(flat > 0), a)


def unpack(pk: PackedKernel, dtype=T.DTYPE) -> np.ndarray:
    a = dtype(pk.scale)
    return np.where(pk.signs(), a, -a).astype(dtype)


@dataclass
class PackedActivations:
    """+-1 feature maps packed along channels for every pixel: words (n, h, w, words_per_pixel)."""

    shape: tuple[int, int, int, int]  # (n, c, h, w)
    words: np.ndarray
    scale: float = 1.0


def pack_activations(x: np.ndarray, scale: float = 1.0) -> PackedActivations:
    x = np.asarray(x)
    s = x.dtype.type(scale) if np.issubdtype(x.dtype, np.floating) else scale
    if not np.all((x == s) | (x == -s)):
        raise PackError(f"activations must be +-{scale}")
    n, c, h, w = x.shape
    bits = (x > 0).transpose(0, 2, 3, 1).reshape(n * h * w, c)
    return PackedActivations(x.shape, _pack_rows(bits).reshape(n, h, w, -1), float(scale))


def unpack_activations(pa: PackedActivations, dtype=T.DTYPE) -> np.ndarray:
    n, c, h, w = pa.shape
    bits = _unpack_rows(pa.words.reshape(n * h * w, -1), c).reshape(n, h, w, c).transpose(0, 3, 1, 2)
    s = dtype(pa.scale)
    return np.where(bits, s, -s).astype(dtype)


def _channel_mask(c: int) -> np.ndarray:
    nw = max(1, -(-c // 64))
    mask = np.full(nw, np.uint64(0xFFFFFFFFFFFFFFFF))
    rem = c % 64
    if rem:
        mask[-1] = np.uint64((1 << rem) - 1)
    return mask


def kernel_offset_words(pk: PackedKernel) -> np.ndarray:
    """Re-lay a packed kernel as per-offset channel words: (kh, kw, out_ch, words_per_pixel)."""
    o, c, kh, kw = pk.dims
    signs = pk.signs()  # (o, c, kh, kw)
    per_offset = signs.transpose(2, 3, 0, 1).reshape(kh * kw * o, c)
    return _pack_rows(per_offset).reshape(kh, kw, o, -1)


def xnor_conv(x: PackedActivations, kernel: PackedKernel, stride: int = 1, pad: int = 0,
              offset_words: np.ndarray | None = None, chunk: int = 64) -> np.ndarray:
    """Integer +-1 convolution via XNOR and popcount.

    Returns ``sum(x_unpacked_sign * w_sign)`` per output element as int32
    (N, O, Ho, Wo). Zero padding contributes nothing: padded pixels are
    excluded through a validity map instead of being encoded as a sign.
    Multiply by ``kernel.scale * x.scale`` for the real-valued result.
    """
    n, c, h, w = x.shape
    o, ci, kh, kw = kernel.dims
    _, _, ho, wo = T.conv_output_shape(x.shape, kernel.dims, stride, pad)
    if offset_words is None:
        offset_words = kernel_offset_words(kernel)
    cmask = _channel_mask(c)
    xp = np.pad(x.words, ((0, 0), (pad, pad), (pad, pad), (0, 0)))
    valid = np.pad(np.ones((h, w), dtype=np.int32), pad)
    hs, ws = stride * (ho - 1) + 1, stride * (wo - 1) + 1
    out = np.zeros((n, ho, wo, o), dtype=np.int32)
    for s in range(0, n, chunk):
        acc = out[s:s + chunk]
        for dy in range(kh):
            for dx in range(kw):
                xs = xp[s:s + chunk, dy:dy + hs:stride, dx:dx + ws:stride]  # (b, ho, wo, nw)
                vs = valid[dy:dy + hs:stride, dx:dx + ws:stride]
                agree = np.bitwise_count(~(xs[:, :, :, None, :] ^ offset_words[dy, dx]) & cmask)
                acc += vs[None, :, :, None] * (2 * agree.sum(axis=-1, dtype=np.int32) - c)
    return np.ascontiguousarray(out.transpose(0, 3, 1, 2))


# ---------------------------------------------------------------------------
# inference-only layer

class PackedProjConv(Module):
    """Projection layer reconstructed from an export: packed kernels and a scale only."""

    def __init__(self, packed: PackedKernel, J: int, stride: int, pad: int, binarize_input: bool,
                 engine: str = "float", name: str = ""):
        self.name = name
        self.packed, self.J = packed, J
        self.stride, self.pad = stride, pad
        self.binarize_input = binarize_input
        self.engine = engine
        o, c, kh, kw = packed.dims
        self.out_ch, self.in_ch, self.k = o // J, c, kh
        self._chat = unpack(packed).reshape(J, o // J, c, kh, kw)
        self._offset_words = None

    def inference_param_count(self) -> int:
        return self.packed.bit_count

    def forward(self, x, train=False):
        xb = binarize_activations(x) if self.binarize_input else x
        groups = T.channel_split(xb, self.J)
        if self.engine == "xnor" and self.binarize_input:
            if self._offset_words is None:
                self._offset_words = kernel_offset_words(self.packed)
            outs = []
            o = self.out_ch
            for j, xj in enumerate(groups):
                sub = PackedKernel((o,) + self.packed.dims[1:], self.packed.words[j * o:(j + 1) * o],
                                   self.packed.scale)
                counts = xnor_conv(pack_activations(xj), sub, self.stride, self.pad,
                                   offset_words=self._offset_words[:, :, j * o:(j + 1) * o])
                outs.append(counts.astype(x.dtype) * x.dtype.type(self.packed.scale))
            return T.channel_concat(outs)
        return T.channel_concat([T.conv2d(xj, self._chat[j], self.stride, self.pad)
                                 for j, xj in enumerate(groups)])


class InferenceModel:
    """An imported network; ``forward`` always runs in evaluation mode."""

    def __init__(self, root: Module, version: int, records: list[tuple[int, str]]):
        self.root, self.version, self.records = root, version, records

    def forward(self, x: np.ndarray) -> np.ndarray:
        return self.root.forward(x, train=False)

    __call__ = forward

    def set_engine(self, engine: str) -> None:
        from .layers import named_modules
        for _, m in named_modules(self.root):
            if isinstance(m, PackedProjConv):
                m.engine = engine

    def predict(self, x: np.ndarray, batch_size: int = 500) -> np.ndarray:
        return np.concatenate([self.forward(x[s:s + batch_size]).argmax(axis=1)
                               for s in range(0, len(x), batch_size)])


# ---------------------------------------------------------------------------
# serialization

def _f32(a) -> bytes:
    return np.ascontiguousarray(a, dtype="<f4").tobytes()


def _record(tag: int, name: str, body: bytes = b"") -> bytes:
    nb = name.encode("utf-8")
    return struct.pack("<BH", tag, len(nb)) + nb + struct.pack("<I", len(body)) + body


def _encode(mod: Module) -> list[bytes]:
    name = mod.name or ""
    if isinstance(mod, Sequential):
        out = [_record(TAG_SEQUENTIAL, name, struct.pack("<I", len(mod.layers)))]
        for child in mod.layers:
            out += _encode(child)
        return out
    if isinstance(mod, Residual):
        out = [_record(TAG_RESIDUAL, name, struct.pack("<B", mod.shortcut is not None))]
        for child in mod.children():
            out += _encode(child)
        return out
    if isinstance(mod, ProjConv):
        omega, _, _, chat = mod.quantize()
        J, I, c, kh, kw = chat.shape
        pk = pack(chat.reshape(J * I, c, kh, kw), omega.scale)
        body = struct.pack("<HHHBBBBfI", J, I, c, kh, mod.stride, mod.pad, int(mod.binarize_input),
                           np.float32(pk.scale), pk.words.shape[1]) + pk.words.astype("<u8").tobytes()
        return [_record(TAG_PROJ_CONV, name, body)]
    if isinstance(mod, PackedProjConv):
        pk = mod.packed
        body = struct.pack("<HHHBBBBfI", mod.J, mod.out_ch, mod.in_ch, mod.k, mod.stride, mod.pad,
                           int(mod.binarize_input), np.float32(pk.scale), pk.words.shape[1]) \
            + pk.words.astype("<u8").tobytes()
        return [_record(TAG_PROJ_CONV, name, body)]
    if isinstance(mod, Conv2d):
        o, c, kh, _ = mod.weight.value.shape
        body = struct.pack("<HHBBBB", o, c, kh, mod.stride, mod.pad, mod.bias is not None)
        body += _f32(mod.weight.value) + (_f32(mod.bias.value) if mod.bias is not None else b"")
        return [_record(TAG_CONV, name, body)]
    if isinstance(mod, BatchNorm2d):
        body = struct.pack("<If", len(mod.gamma.value), mod.eps) + b"".join(
            _f32(v) for v in (mod.gamma.value, mod.beta.value, mod.running_mean, mod.running_var))
        return [_record(TAG_BATCHNORM, name, body)]
    if isinstance(mod, Linear):
        o, i = mod.weight.value.shape
        return [_record(TAG_LINEAR, name, struct.pack("<II", o, i) + _f32(mod.weight.value) + _f32(mod.bias.value))]
    if isinstance(mod, MaxPool2d):
        return [_record(TAG_MAXPOOL, name, struct.pack("<B", mod.k))]
    if isinstance(mod, GlobalAvgPool):
        return [_record(TAG_AVGPOOL, name)]
    if isinstance(mod, Flatten):
        return [_record(TAG_FLATTEN, name)]
    raise FormatError(f"cannot export module of type {type(mod).__name__}")


def _frame(records: list[bytes], flags: int = 0) -> bytes:
    payload = MAGIC + struct.pack("<HHI", VERSION, flags, len(records)) + b"".join(records)
    return payload + struct.pack("<I", zlib.crc32(payload) & 0xFFFFFFFF)


def export_bytes(model: Module) -> bytes:
    return _frame(_encode(model))


def export_model(model: Module, path) -> int:
    """Write the inference form of ``model``; returns the file size in bytes."""
    data = export_bytes(model)
    Path(path).write_bytes(data)
    return len(data)


def _read_records(data: bytes) -> tuple[int, int, list[tuple[int, str, bytes]]]:
    if len(data) < 16 or data[:4] != MAGIC:
        raise FormatError("bad magic: not a PCNN file")
    body, (crc,) = data[:-4], struct.unpack("<I", data[-4:])
    if zlib.crc32(body) & 0xFFFFFFFF != crc:
        raise IntegrityError("checksum mismatch: file is corrupted or was modified")
    version, flags, count = struct.unpack_from("<HHI", data, 4)
    if version != VERSION:
        raise FormatError(f"unsupported format version {version}")
    pos, records = 12, []
    for _ in range(count):
        tag, nlen = struct.unpack_from("<BH", body, pos)
        pos += 3
        name = body[pos:pos + nlen].decode("utf-8")
        pos += nlen
        (blen,) = struct.unpack_from("<I", body, pos)
        pos += 4
        records.append((tag, name, body[pos:pos + blen]))
        pos += blen
    if pos != len(body):
        raise FormatError(f"{len(body) - pos} trailing bytes after the last record")
    return version, flags, records


def _arr(buf: bytes, offset: int, count: int, shape=None) -> tuple[np.ndarray, int]:
    a = np.frombuffer(buf, dtype="<f4", count=count, offset=offset).astype(np.float32)
    return (a.reshape(shape) if shape is not None else a), offset + 4 * count


def _decode(records, pos: int, engine: str) -> tuple[Module, int]:
    tag, name, body = records[pos]
    pos += 1
    if tag == TAG_SEQUENTIAL:
        (n,) = struct.unpack("<I", body)
        kids = []
        for _ in range(n):
            kid, pos = _decode(records, pos, engine)
            kids.append(kid)
        return Sequential(*kids, name=name), pos
    if tag == TAG_RESIDUAL:
        (has_sc,) = struct.unpack("<B", body)
        pre, pos = _decode(records, pos, engine)
        main, pos = _decode(records, pos, engine)
        sc = None
        if has_sc:
            sc, pos = _decode(records, pos, engine)
        return Residual(pre, main, sc, name=name), pos
    if tag == TAG_PROJ_CONV:
        J, I, c, k, stride, pad, binar, scale, nw = struct.unpack_from("<HHHBBBBfI", body)
        off = struct.calcsize("<HHHBBBBfI")
        words = np.frombuffer(body, dtype="<u8", count=J * I * nw, offset=off).reshape(J * I, nw).copy()
        pk = PackedKernel((J * I, c, k, k), words, float(np.float32(scale)))
        return PackedProjConv(pk, J, stride, pad, bool(binar), engine, name=name), pos
    if tag == TAG_CONV:
        o, c, k, stride, pad, has_bias = struct.unpack_from("<HHBBBB", body)
        mod = Conv2d(c, o, k=k, stride=stride, pad=pad, bias=bool(has_bias), name=name)
        w, off = _arr(body, 8, o * c * k * k, (o, c, k, k))
        mod.weight.value = w
        if has_bias:
            mod.bias.value, _ = _arr(body, off, o)
        return mod, pos
    if tag == TAG_BATCHNORM:
        ch, eps = struct.unpack_from("<If", body)
        mod = BatchNorm2d(ch, eps=float(np.float32(eps)), name=name)
        off = 8
        mod.gamma.value, off = _arr(body, off, ch)
        mod.beta.value, off = _arr(body, off, ch)
        mod.running_mean, off = _arr(body, off, ch)
        mod.running_var, off = _arr(body, off, ch)
        mod.eps = eps
        return mod, pos
    if tag == TAG_LINEAR:
        o, i = struct.unpack_from("<II", body)
        mod = Linear(i, o, name=name)
        mod.weight.value, off = _arr(body, 8, o * i, (o, i))
        mod.bias.value, _ = _arr(body, off, o)
        return mod, pos
    if tag == TAG_MAXPOOL:
        return MaxPool2d(struct.unpack("<B", body)[0], name=name), pos
    if tag == TAG_AVGPOOL:
        return GlobalAvgPool(name=name), pos
    if tag == TAG_FLATTEN:
        return Flatten(name=name), pos
    raise FormatError(f"unknown record tag {tag}")


def import_bytes(data: bytes, engine: str = "float") -> InferenceModel:
    version, _, records = _read_records(data)
    layer_records = [r for r in records if r[0] != TAG_TRAINING_STATE]
    if not layer_records:
        raise FormatError("file contains no layers")
    root, pos = _decode(layer_records, 0, engine)
    if pos != len(layer_records):
        raise FormatError("layer records left over after the root module")
    return InferenceModel(root, version, [(t, n) for t, n, _ in records])


def import_model(path, engine: str = "float") -> InferenceModel:
    return import_bytes(Path(path).read_bytes(), engine)


def inspect_records(path) -> list[dict]:
    """Tag, name and body size of every record in an export file."""
    _, _, records = _read_records(Path(path).read_bytes())
    return [{"tag": TAG_NAMES.get(t, t), "name": n, "bytes": len(b)} for t, n, b in records]


# ---------------------------------------------------------------------------
# checkpoints

def save_checkpoint(path, trainer) -> int:
    """Export records plus a training-state record (latent kernels, projections, optimizer)."""
    st = trainer.state
    arrays = {f"param/{n}": p.value for n, p in named_params(trainer.model)}
    arrays.update({f"buffer/{n}": b for n, b in named_buffers(trainer.model)})
    arrays.update({f"momentum/{n}": v for n, v in st.momentum.items()})
    buf = io.BytesIO()
    np.savez(buf, **arrays)
    meta = json.dumps({
        "config": trainer.config.to_text(),
        "k": st.k, "epoch": st.epoch,
        "rng": trainer.rng.bit_generator.state,
        "history": st.history,
        "image_shape": getattr(trainer, "image_shape", None),
    }, default=float).encode()
    state_body = struct.pack("<I", len(meta)) + meta + buf.getvalue()
    data = _frame(_encode(trainer.model) + [_record(TAG_TRAINING_STATE, "training_state", state_body)],
                  FLAG_TRAINING_STATE)
    Path(path).write_bytes(data)
    return len(data)


def load_checkpoint(path):
    """Rebuild a ``Trainer`` from a checkpoint written by ``save_checkpoint``."""
    from .trainer import TrainConfig, Trainer, TrainState

    _, flags, records = _read_records(Path(path).read_bytes())
    state_recs = [b for t, _, b in records if t == TAG_TRAINING_STATE]
    if not (flags & FLAG_TRAINING_STATE) or not state_recs:
        raise FormatError(f"{path} is an inference export without training state")
    body = state_recs[0]
    (mlen,) = struct.unpack_from("<I", body)
    meta = json.loads(body[4:4 + mlen])
    arrays = np.load(io.BytesIO(body[4 + mlen:]))
    config = TrainConfig.from_text(meta["config"])
    image_shape = tuple(meta["image_shape"]) if meta.get("image_shape") else None
    trainer = Trainer(config, image_shape=image_shape)
    for n, p in named_params(trainer.model):
        p.value = arrays[f"param/{n}"].copy()
    for n, b in named_buffers(trainer.model):
        b[...] = arrays[f"buffer/{n}"]
    trainer.state = TrainState(k=meta["k"], epoch=meta["epoch"],
                               momentum={k[len("momentum/"):]: arrays[k].copy()
                                         for k in arrays.files if k.startswith("momentum/")},
                               history=meta["history"])
    trainer.rng.bit_generator.state = meta["rng"]
    return trainer


# ---------------------------------------------------------------------------
# memory accounting

@dataclass(frozen=True)
class LayerSpec:
    name: str
    params: int
    binary: bool


@dataclass
class MemoryReport:
    rows: list[dict] = field(default_factory=list)
    full_bits: int = 0
    compressed_bits: int = 0

    @property
    def ratio(self) -> float:
        return self.full_bits / self.compressed_bits

    def table(self) -> str:
        lines = [f"{'Model':<12}{'Memory usage':>16}{'Memory saving':>16}",
                 f"{'PCNN':<12}{self.compressed_bits / 1e6:>11.1f} Mbit{self.ratio:>14.2f} x",
                 f"{'Full':<12}{self.full_bits / 1e6:>11.1f} Mbit{'-':>16}"]
        return "\n".join(lines)


def memory_report(layers: list[LayerSpec], J: int = 1, binary_bits: int = 1, full_bits: int = 32) -> MemoryReport:
    """Storage of a network: ``full_bits`` per full-precision weight, ``binary_bits``
    per binary weight. Binary layers grow linearly with J; the reference is the
    same network stored entirely in full precision at J = 1."""
    rep = MemoryReport()
    for spec in layers:
        full = full_bits * spec.params
        comp = binary_bits * spec.params * J if spec.binary else full
        rep.rows.append({"layer": spec.name, "params": spec.params, "binary": spec.binary,
                         "full_bits": full, "compressed_bits": comp})
        rep.full_bits += full
        rep.compressed_bits += comp
    return rep


def resnet18_layers() -> list[LayerSpec]:
    """ResNet-18 (ImageNet, 1000 classes) parameter list.

    Binary: every 3x3 convolution inside the residual stages. Full precision:
    the 7x7 stem, the classifier, the 1x1 downsampling shortcuts and all
    batch-norm affine parameters.
    """
    specs = [LayerSpec("conv1", 3 * 64 * 49, False), LayerSpec("bn1", 2 * 64, False)]
    cin = 64
    for stage, cout in enumerate((64, 128, 256, 512), start=1):
        for block in range(2):
            first = cin if block == 0 else cout
            p = f"layer{stage}.{block}"
            specs += [LayerSpec(f"{p}.conv1", first * cout * 9, True), LayerSpec(f"{p}.bn1", 2 * cout, False),
                      LayerSpec(f"{p}.conv2", cout * cout * 9, True), LayerSpec(f"{p}.bn2", 2 * cout, False)]
            if block == 0 and first != cout:
                specs += [LayerSpec(f"{p}.downsample.conv", first * cout, False),
                          LayerSpec(f"{p}.downsample.bn", 2 * cout, False)]
        cin = cout
    specs.append(LayerSpec("fc", 512 * 1000 + 1000, False))
    return specs


def model_layers(model: Module) -> list[LayerSpec]:
    """Layer list of a built network; J is already folded into the projection layers' counts."""
    from .layers import named_modules
    specs = []
    for name, m in named_modules(model):
        if isinstance(m, ProjConv):
            specs.append(LayerSpec(name, m.inference_param_count(), True))
        elif isinstance(m, PackedProjConv):
            specs.append(LayerSpec(name, m.packed.bit_count, True))
        elif m.params() and not isinstance(m, (Sequential, Residual)):
            specs.append(LayerSpec(name, sum(p.size for p in m.params().values()), False))
    return specs


ARCH_LAYERS = {"resnet18": resnet18_layers, "resnet18-like": resnet18_layers}
