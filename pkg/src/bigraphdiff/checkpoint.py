"""Self-describing checkpoint container.

Layout: the format tag line, an 8-byte little-endian header length, a
JSON header (configs, training state, and a manifest of parameter names,
shapes, and element offsets), then all parameter values followed by all
Adam moments as raw little-endian float64.
"""

import json
import struct

import numpy as np

from .errors import ParseError

FORMAT_TAG = "bigraphdiff-ckpt-v1"


def save_checkpoint(path, weights, extra=None):
    """Write weights (DenoiserWeights or any object with .store/.config).

    extra is a JSON-serializable dict merged into the header (training
    config, epoch counter, loss history, rng state, ...).
    """
    manifest = []
    offset = 0
    blobs = []
    moments = []
    for p in weights.store:
        manifest.append({"name": p.name, "shape": list(p.data.shape), "offset": offset})
        offset += p.data.size
        blobs.append(np.ascontiguousarray(p.data, dtype="<f8"))
        moments.append((np.ascontiguousarray(p.m, dtype="<f8"),
                        np.ascontiguousarray(p.v, dtype="<f8")))
    header = {
        "format": FORMAT_TAG,
        "config": weights.config.to_dict(),
        "params": manifest,
        "total": offset,
    }
    if extra:
        header.update(extra)
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write((FORMAT_TAG + "\n").encode("ascii"))
        f.write(struct.pack("<Q", len(header_bytes)))
        f.write(header_bytes)
        for b in blobs:
            f.write(b.tobytes())
        for m, v in moments:
            f.write(m.tobytes())
            f.write(v.tobytes())


def load_checkpoint(path, build_weights):
    """Read a checkpoint; build_weights(config_dict) -> weights object.

    Returns (weights, header).  Parameter values and Adam moments are
    restored bit-exactly.
    """
    with open(path, "rb") as f:
        tag = f.readline().decode("ascii", errors="replace").rstrip("\n")
        if tag != FORMAT_TAG:
            raise ParseError(f"not a {FORMAT_TAG} file (tag {tag!r})", line=1)
        raw = f.read(8)
        if len(raw) < 8:
            raise ParseError("truncated header length")
        (hlen,) = struct.unpack("<Q", raw)
        header_bytes = f.read(hlen)
        if len(header_bytes) < hlen:
            raise ParseError("truncated header")
        header = json.loads(header_bytes)
        data = f.read()
    total = header["total"]
    values = np.frombuffer(data, dtype="<f8", count=total)
    weights = build_weights(header["config"])
    params = {p.name: p for p in weights.store}
    if set(params) != {m["name"] for m in header["params"]}:
        raise ParseError("parameter manifest does not match rebuilt model")
    cursor = total
    moments = np.frombuffer(data, dtype="<f8", offset=cursor * 8)
    if moments.size < 2 * total:
        raise ParseError("truncated parameter data")
    mpos = 0
    for m in header["params"]:
        p = params[m["name"]]
        n = p.data.size
        p.tensor.data = values[m["offset"]:m["offset"] + n].reshape(p.data.shape).copy()
        p.m = moments[mpos:mpos + n].reshape(p.data.shape).copy()
        p.v = moments[mpos + n:mpos + 2 * n].reshape(p.data.shape).copy()
        mpos += 2 * n
    return weights, header
