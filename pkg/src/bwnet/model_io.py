"""Bit-exact model file format with float32 and packed-binary encodings.

Layout (all integers little-endian):

    offset 0   magic "BWN1" (4 bytes)
    offset 4   format version, u16 (currently 1)
    offset 6   parameter record count, u16
    offset 8   network description length, u32
    offset 12  network description, UTF-8 (see layers.spec_to_text)
    ...        parameter records, one per trainable tensor:
                 kind u8 | encoding u8 | name_len u16 | name UTF-8
                 | rank u8 | extents u32 x rank | payload
    EOF-4      CRC32 (IEEE) over every preceding byte, u32

Payloads: encoding 0 stores prod(extents) float32 values; encoding 1 stores
F = extents[0] filters of n = prod(extents[1:]) sign bits packed LSB-first
into little-endian 64-bit words (each filter padded with zero bits to a
word boundary), followed by F float32 scales.  Files carry no timestamps,
so identical inputs produce byte-identical files.
"""

from __future__ import annotations

import os
import struct
import tempfile
import zlib
from dataclasses import dataclass

import numpy as np

from .binarize import WORD_BITS, BinaryFilterBank
from .errors import BwnError, ConfigError, FormatError
from .layers import NetworkSpec, iter_param_layers, spec_from_text, spec_to_text

MAGIC = b"BWN1"
FORMAT_VERSION = 1
ENC_FLOAT32 = 0
ENC_PACKED = 1

KIND_CODES = {
    "float_conv2d": 0,
    "binary_conv2d": 1,
    "linear": 2,
    "relu": 3,
    "prelu": 4,
    "residual_block": 5,
    "pool": 6,
    "flatten": 7,
}
KIND_NAMES = {code: name for name, code in KIND_CODES.items()}

SCALE_BYTES = 4  # one float32 scale per filter in packed records


class BadMagicError(FormatError):
    """The file does not start with the expected magic bytes."""


class VersionError(FormatError):
    """The file declares an unsupported format version."""


class CrcError(FormatError):
    """The trailing CRC32 does not match the file contents."""


class TruncatedError(FormatError):
    """The file ends before a declared field or record is complete."""


def packed_words_per_filter(bits_per_filter: int) -> int:
    return (bits_per_filter + WORD_BITS - 1) // WORD_BITS


def pack_weights(bank: BinaryFilterBank) -> bytes:
    """Serialize a bank's sign bits: filter-major little-endian 64-bit words."""
    return np.ascontiguousarray(bank.packed).tobytes(order="C")


def unpack_weights(data: bytes, bits_per_filter: int, num_filters: int,
                   strict: bool = True) -> np.ndarray:
    """Inverse of :func:`pack_weights`; returns float32 signs [F, n].

    Padding bits beyond each filter's n sign bits are ignored, but in
    strict mode any nonzero padding bit is a format error.
    """
    words = packed_words_per_filter(bits_per_filter)
    expected = num_filters * words * 8
    if len(data) != expected:
        raise FormatError(
            f"packed payload is {len(data)} bytes; {num_filters} filters of "
            f"{bits_per_filter} bits need exactly {expected}"
        )
    packed = np.frombuffer(data, dtype="<u8").reshape(num_filters, words)
    as_bytes = np.ascontiguousarray(packed).view(np.uint8).reshape(num_filters, -1)
    bits = np.unpackbits(as_bytes, axis=1, bitorder="little")
    if strict and bits[:, bits_per_filter:].any():
        raise FormatError("nonzero padding bits beyond the per-filter sign bits")
    return np.where(bits[:, :bits_per_filter] == 1, 1.0, -1.0).astype(np.float32)


@dataclass(frozen=True)
class ParamRecord:
    """Metadata of one parameter record, as read back from a file."""

    kind: str
    name: str
    encoding: int
    shape: tuple[int, ...]
    payload_bytes: int
    scales: np.ndarray | None
    first_word: int | None


def _record_header_bytes(name: str, rank: int) -> int:
    return 1 + 1 + 2 + len(name.encode("utf-8")) + 1 + 4 * rank


def _payload_bytes(shape: tuple[int, ...], encoding: int) -> int:
    numel = int(np.prod(shape))
    if encoding == ENC_FLOAT32:
        return 4 * numel
    filters = shape[0]
    bits = numel // filters
    return filters * (8 * packed_words_per_filter(bits) + SCALE_BYTES)


def _param_entries(spec: NetworkSpec, params: dict):
    """(kind, name, value, packable) for every parameter in walk order."""
    entries = []
    for layer in iter_param_layers(spec):
        if layer.kind in ("float_conv2d", "binary_conv2d"):
            entries.append((layer.kind, f"{layer.name}.weight",
                            params[f"{layer.name}.weight"],
                            layer.kind == "binary_conv2d"))
        elif layer.kind == "linear":
            entries.append((layer.kind, f"{layer.name}.weight",
                            params[f"{layer.name}.weight"], False))
            if layer.with_bias:
                entries.append((layer.kind, f"{layer.name}.bias",
                                params[f"{layer.name}.bias"], False))
        elif layer.kind == "prelu":
            entries.append((layer.kind, f"{layer.name}.slope",
                            params[f"{layer.name}.slope"], False))
    return entries


def save_model(path: str, spec: NetworkSpec, params: dict,
               encoding: str = "float32") -> None:
    """Write a model file atomically (temp file plus rename).

    ``encoding="float32"`` writes every parameter dense; ``"packed"``
    writes binary-conv weights as sign bits plus per-filter scales and
    everything else dense.
    """
    if encoding not in ("float32", "packed"):
        raise ConfigError(f"unknown model encoding '{encoding}'")
    try:
        entries = _param_entries(spec, params)
    except KeyError as exc:
        raise ConfigError(f"missing parameter {exc}") from None

    buf = bytearray()
    spec_text = spec_to_text(spec).encode("utf-8")
    buf += struct.pack("<4sHHI", MAGIC, FORMAT_VERSION, len(entries), len(spec_text))
    buf += spec_text
    for kind, name, value, packable in entries:
        if encoding == "packed" and packable:
            bank = value if isinstance(value, BinaryFilterBank) \
                else BinaryFilterBank.from_weights(value)
            shape = (bank.num_filters, *bank.filter_shape)
            payload = pack_weights(bank) + bank.scales.astype("<f4").tobytes()
            enc = ENC_PACKED
        else:
            if isinstance(value, BinaryFilterBank):
                raise ConfigError(
                    f"parameter '{name}' is packed; a float32 checkpoint needs "
                    "dense shadow weights"
                )
            shape = tuple(int(e) for e in value.shape)
            payload = np.ascontiguousarray(value, dtype="<f4").tobytes()
            enc = ENC_FLOAT32
        name_bytes = name.encode("utf-8")
        buf += struct.pack("<BBH", KIND_CODES[kind], enc, len(name_bytes))
        buf += name_bytes
        buf += struct.pack("<B", len(shape))
        buf += struct.pack(f"<{len(shape)}I", *shape)
        buf += payload
    buf += struct.pack("<I", zlib.crc32(bytes(buf)) & 0xFFFFFFFF)

    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp_path = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as handle:
            handle.write(bytes(buf))
        os.replace(tmp_path, path)
    except BaseException:
        if os.path.exists(tmp_path):
            os.unlink(tmp_path)
        raise


class _Cursor:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, count: int, what: str) -> bytes:
        if self.pos + count > len(self.data):
            raise TruncatedError(
                f"file ends inside {what} (needed {count} bytes at offset {self.pos})"
            )
        chunk = self.data[self.pos:self.pos + count]
        self.pos += count
        return chunk

    def unpack(self, fmt: str, what: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))


def _parse_file(data: bytes, strict_padding: bool):
    if len(data) < 16:
        raise TruncatedError(f"model file is only {len(data)} bytes long")
    stored_crc = struct.unpack("<I", data[-4:])[0]
    actual_crc = zlib.crc32(data[:-4]) & 0xFFFFFFFF
    if stored_crc != actual_crc:
        raise CrcError(
            f"CRC mismatch: stored {stored_crc:#010x}, computed {actual_crc:#010x}"
        )
    cur = _Cursor(data[:-4])
    magic, version, record_count, spec_len = cur.unpack("<4sHHI", "the header")
    if magic != MAGIC:
        raise BadMagicError(f"bad magic {magic!r}, expected {MAGIC!r}")
    if version != FORMAT_VERSION:
        raise VersionError(f"unsupported format version {version}")
    spec_text = cur.take(spec_len, "the network description").decode("utf-8")
    try:
        spec = spec_from_text(spec_text)
    except BwnError as exc:
        raise FormatError(f"invalid network description: {exc}") from None

    params: dict = {}
    records: list[ParamRecord] = []
    for index in range(record_count):
        what = f"parameter record {index}"
        kind_code, enc, name_len = cur.unpack("<BBH", what)
        if kind_code not in KIND_NAMES:
            raise FormatError(f"unknown layer kind code {kind_code} in {what}")
        name = cur.take(name_len, what).decode("utf-8")
        (rank,) = cur.unpack("<B", what)
        extents = cur.unpack(f"<{rank}I", what)
        shape = tuple(int(e) for e in extents)
        numel = int(np.prod(shape)) if shape else 0
        if numel <= 0:
            raise FormatError(f"record '{name}' declares an empty shape {shape}")
        if enc == ENC_FLOAT32:
            payload = cur.take(4 * numel, f"record '{name}' float payload")
            value = np.frombuffer(payload, dtype="<f4").reshape(shape).copy()
            params[name] = value
            records.append(ParamRecord(KIND_NAMES[kind_code], name, enc, shape,
                                       len(payload), None, None))
        elif enc == ENC_PACKED:
            filters = shape[0]
            bits = numel // filters
            sign_bytes = filters * 8 * packed_words_per_filter(bits)
            payload = cur.take(sign_bytes + SCALE_BYTES * filters,
                               f"record '{name}' packed payload")
            words = np.frombuffer(payload[:sign_bytes], dtype="<u8").reshape(
                filters, packed_words_per_filter(bits)
            ).copy()
            scales = np.frombuffer(payload[sign_bytes:], dtype="<f4").astype(np.float32)
            try:
                bank = BinaryFilterBank(
                    num_filters=filters,
                    bits_per_filter=bits,
                    packed=words,
                    scales=scales,
                    filter_shape=shape[1:],
                )
                if strict_padding:
                    unpack_weights(payload[:sign_bytes], bits, filters, strict=True)
            except BwnError as exc:
                raise FormatError(f"record '{name}': {exc}") from None
            params[name] = bank
            records.append(ParamRecord(KIND_NAMES[kind_code], name, enc, shape,
                                       len(payload), scales, int(words[0, 0])))
        else:
            raise FormatError(f"unknown encoding flag {enc} in record '{name}'")
    if cur.pos != len(cur.data):
        raise FormatError(
            f"{len(cur.data) - cur.pos} unexpected trailing bytes before the CRC"
        )
    return spec, params, records


def load_model(path: str, strict_padding: bool = True) -> tuple[NetworkSpec, dict]:
    """Read a model file back into (spec, params); enforces the CRC."""
    with open(path, "rb") as handle:
        data = handle.read()
    spec, params, _ = _parse_file(data, strict_padding)
    return spec, params


def read_records(path: str) -> tuple[NetworkSpec, list[ParamRecord]]:
    """Parse a model file for inspection without keeping dense payloads."""
    with open(path, "rb") as handle:
        data = handle.read()
    spec, _, records = _parse_file(data, strict_padding=False)
    return spec, records


@dataclass(frozen=True)
class LayerSizeRow:
    name: str
    kind: str
    param_count: int
    binarized: bool
    float_bytes: int
    packed_bytes: int


@dataclass(frozen=True)
class SizeReport:
    """Storage accounting for one model under both encodings.

    ``sign_bit_ratio`` compares raw float32 bits against raw sign bits for
    the binarizable parameters only (exactly 32 whenever any exist).  The
    file ratios include every real overhead: scales, per-filter padding,
    record headers, the network description and the CRC.
    """

    rows: tuple[LayerSizeRow, ...]
    float_param_bytes: int
    packed_param_bytes: int
    binarizable_params: int
    total_params: int
    sign_bit_ratio: float
    packed_equivalent_float32_params: float
    float_file_bytes: int
    packed_file_bytes: int
    file_ratio: float

    @property
    def param_ratio(self) -> float:
        return self.float_param_bytes / self.packed_param_bytes


def size_report(spec: NetworkSpec, params: dict | None = None) -> SizeReport:
    """Exact byte accounting for both encodings of a model.

    Works from shapes alone; ``params`` is only consulted to honor
    already-packed values.  A binarized conv layer with F filters of n
    weights costs 4*F*n float bytes versus F*(8*ceil(n/64) + 4) packed.
    """
    rows: list[LayerSizeRow] = []
    spec_len = len(spec_to_text(spec).encode("utf-8"))
    float_file = 12 + spec_len
    packed_file = 12 + spec_len
    float_param_bytes = 0
    packed_param_bytes = 0
    binarizable = 0
    total_params = 0

    for layer in iter_param_layers(spec):
        if layer.kind in ("float_conv2d", "binary_conv2d"):
            names = [(f"{layer.name}.weight",
                      (layer.out_channels, layer.in_channels, layer.kernel, layer.kernel))]
        elif layer.kind == "linear":
            names = [(f"{layer.name}.weight", (layer.out_features, layer.in_features))]
            if layer.with_bias:
                names.append((f"{layer.name}.bias", (layer.out_features,)))
        else:  # prelu
            names = [(f"{layer.name}.slope", (1,))]
        for name, shape in names:
            numel = int(np.prod(shape))
            packable = layer.kind == "binary_conv2d" and name.endswith(".weight")
            fbytes = 4 * numel
            pbytes = _payload_bytes(shape, ENC_PACKED if packable else ENC_FLOAT32)
            rows.append(LayerSizeRow(name, layer.kind, numel, packable, fbytes, pbytes))
            header = _record_header_bytes(name, len(shape))
            float_file += header + fbytes
            packed_file += header + pbytes
            float_param_bytes += fbytes
            packed_param_bytes += pbytes
            total_params += numel
            if packable:
                binarizable += numel
    float_file += 4  # CRC
    packed_file += 4

    sign_bit_ratio = (32.0 * binarizable) / binarizable if binarizable else 1.0
    return SizeReport(
        rows=tuple(rows),
        float_param_bytes=float_param_bytes,
        packed_param_bytes=packed_param_bytes,
        binarizable_params=binarizable,
        total_params=total_params,
        sign_bit_ratio=sign_bit_ratio,
        packed_equivalent_float32_params=binarizable / 32.0,
        float_file_bytes=float_file,
        packed_file_bytes=packed_file,
        file_ratio=float_file / packed_file,
    )


def format_size_report(report: SizeReport) -> str:
    lines = [
        f"{'layer':<24} {'kind':<14} {'params':>10} {'float B':>12} {'packed B':>12} {'ratio':>7}",
    ]
    for row in report.rows:
        ratio = row.float_bytes / row.packed_bytes
        lines.append(
            f"{row.name:<24} {row.kind:<14} {row.param_count:>10} "
            f"{row.float_bytes:>12} {row.packed_bytes:>12} {ratio:>7.2f}"
        )
    lines += [
        "",
        f"total parameters          : {report.total_params}",
        f"binarizable parameters    : {report.binarizable_params}"
        f" (sign storage = {report.packed_equivalent_float32_params:.1f}"
        " float32-equivalent parameters)",
        f"sign-bit ratio            : {report.sign_bit_ratio:.2f}x (raw bits, no overhead)",
        f"parameter payload bytes   : {report.float_param_bytes} -> {report.packed_param_bytes}"
        f" ({report.param_ratio:.2f}x)",
        f"whole file bytes          : {report.float_file_bytes} -> {report.packed_file_bytes}"
        f" ({report.file_ratio:.2f}x, includes scales, padding, headers)",
    ]
    return "\n".join(lines)
