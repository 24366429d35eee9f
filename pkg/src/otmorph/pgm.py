"""Minimal PGM (P2 ASCII / P5 binary) reader and writer.

Rows are stored top to bottom as in the file; callers decide the mapping to
domain coordinates.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .errors import ExportError, IngestionError

_WS = b" \t\r\n\x0b\x0c"


def _tokens(buf: bytes, start: int, count: int, path):
    """Read ``count`` whitespace-separated header tokens, skipping comments.

    Returns the tokens and the offset just past the last one.
    """
    out = []
    pos = start
    n = len(buf)
    while len(out) < count:
        while pos < n and buf[pos] in _WS:
            pos += 1
        if pos < n and buf[pos:pos + 1] == b"#":
            while pos < n and buf[pos] not in b"\r\n":
                pos += 1
            continue
        if pos >= n:
            raise IngestionError("unexpected end of header", path, pos)
        begin = pos
        while pos < n and buf[pos] not in _WS and buf[pos:pos + 1] != b"#":
            pos += 1
        out.append((buf[begin:pos], begin))
    return out, pos


def _int_token(tok, path) -> int:
    raw, pos = tok
    try:
        value = int(raw)
    except ValueError:
        raise IngestionError(f"expected an integer, found {raw[:20]!r}", path, pos) from None
    if value <= 0:
        raise IngestionError(f"expected a positive integer, found {value}", path, pos)
    return value


def read_pgm(path) -> tuple[np.ndarray, int]:
    """Return ``(pixels, maxval)``; ``pixels`` has shape ``(height, width)``."""
    path = Path(path)
    try:
        buf = path.read_bytes()
    except OSError as exc:
        raise IngestionError(f"cannot read file: {exc.strerror or exc}", path) from exc
    magic = buf[:2]
    if magic not in (b"P2", b"P5"):
        raise IngestionError(f"unsupported format {magic!r}, expected P2 or P5", path, 0)
    toks, pos = _tokens(buf, 2, 3, path)
    width, height, maxval = (_int_token(t, path) for t in toks)
    if maxval > 65535:
        raise IngestionError(f"maxval {maxval} exceeds 65535", path, toks[2][1])
    count = width * height
    if magic == b"P5":
        if pos >= len(buf) or buf[pos] not in _WS:
            raise IngestionError("missing whitespace after header", path, pos)
        pos += 1
        dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
        need = count * dtype.itemsize
        if len(buf) - pos < need:
            raise IngestionError(
                f"truncated payload: need {need} bytes, have {len(buf) - pos}", path, len(buf)
            )
        pixels = np.frombuffer(buf, dtype=dtype, count=count, offset=pos).astype(np.int64)
    else:
        body = buf[pos:]
        # strip comments from the ASCII body
        lines = [ln.split(b"#", 1)[0] for ln in body.splitlines()]
        words = b" ".join(lines).split()
        if len(words) < count:
            raise IngestionError(
                f"truncated payload: need {count} samples, have {len(words)}", path, len(buf)
            )
        try:
            pixels = np.array([int(w) for w in words[:count]], dtype=np.int64)
        except ValueError:
            raise IngestionError("non-integer sample in P2 payload", path, pos) from None
    if pixels.size and (pixels.min() < 0 or pixels.max() > maxval):
        raise IngestionError(f"sample outside [0, {maxval}]", path, pos)
    return pixels.reshape(height, width), maxval


def write_pgm(path, pixels: np.ndarray, maxval: int = 65535, binary: bool = True) -> None:
    pixels = np.asarray(pixels)
    if pixels.ndim != 2:
        raise ValueError("pixels must be 2D")
    height, width = pixels.shape
    data = np.clip(np.rint(pixels), 0, maxval).astype(np.int64)
    try:
        with open(path, "wb") as fh:
            if binary:
                fh.write(b"P5\n%d %d\n%d\n" % (width, height, maxval))
                dtype = ">u2" if maxval > 255 else "u1"
                fh.write(data.astype(dtype).tobytes())
            else:
                fh.write(b"P2\n%d %d\n%d\n" % (width, height, maxval))
                for row in data:
                    fh.write(b" ".join(b"%d" % v for v in row) + b"\n")
    except OSError as exc:
        raise ExportError(f"cannot write {path}: {exc.strerror or exc}") from exc
