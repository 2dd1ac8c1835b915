"""File formats: 8-bit PNG frames, Middlebury ``.flo`` flow, ``.pvol`` pixel
volumes, ``key=value`` configs and JSON sequence manifests."""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .imagecore import ParameterError, as_flow, as_frame, quantize8
from .pixelvolume import PixelVolume

FLO_MAGIC = 202021.25
PVOL_MAGIC = b"PVOL"


class FormatError(ValueError):
    """A file does not follow the format it claims to be in."""


def load_png(path) -> np.ndarray:
    """Load an 8-bit PNG as a float frame in [0, 1]."""
    with Image.open(path) as img:
        if img.mode not in ("L", "RGB"):
            img = img.convert("RGB" if img.mode in ("RGBA", "P", "CMYK") else "L")
        data = np.asarray(img, dtype=np.float64) / 255.0
    return as_frame(data)


def save_png(path, frame) -> None:
    frame = as_frame(frame)
    levels = quantize8(frame).astype(np.uint8)
    Image.fromarray(levels).save(path, format="PNG")


def write_flo(path, flow) -> None:
    flow = as_flow(flow).astype("<f4")
    h, w = flow.shape[:2]
    with open(path, "wb") as fh:
        fh.write(struct.pack("<fii", FLO_MAGIC, w, h))
        fh.write(flow.tobytes())


def read_flo(path) -> np.ndarray:
    with open(path, "rb") as fh:
        header = fh.read(12)
        if len(header) != 12:
            raise FormatError(f"{path}: truncated .flo header")
        magic, w, h = struct.unpack("<fii", header)
        if magic != FLO_MAGIC:
            raise FormatError(f"{path}: bad .flo magic {magic!r}")
        if w <= 0 or h <= 0:
            raise FormatError(f"{path}: bad .flo size {w}x{h}")
        data = np.frombuffer(fh.read(), dtype="<f4")
    if data.size != 2 * w * h:
        raise FormatError(f"{path}: expected {2 * w * h} values, found {data.size}")
    return data.reshape(h, w, 2).astype(np.float32)


def write_pvol(path, pv: PixelVolume) -> None:
    """``PVOL``, u32 width, u32 height, u32 k, float32 slices, u8 validity.

    Only grayscale volumes have a ``.pvol`` layout.
    """
    if pv.slices.ndim != 3:
        raise ParameterError(".pvol stores grayscale volumes only")
    with open(path, "wb") as fh:
        fh.write(PVOL_MAGIC)
        fh.write(struct.pack("<III", pv.width, pv.height, pv.k))
        fh.write(pv.slices.astype("<f4").tobytes())
        fh.write(pv.valid.astype(np.uint8).tobytes())


def read_pvol(path) -> PixelVolume:
    raw = Path(path).read_bytes()
    if raw[:4] != PVOL_MAGIC:
        raise FormatError(f"{path}: not a .pvol file")
    w, h, k = struct.unpack("<III", raw[4:16])
    n = w * h * k * k
    body = raw[16:]
    if len(body) != 5 * n:
        raise FormatError(f"{path}: expected {5 * n} payload bytes, found {len(body)}")
    slices = np.frombuffer(body[:4 * n], dtype="<f4").reshape(k * k, h, w).astype(np.float64)
    valid = np.frombuffer(body[4 * n:], dtype=np.uint8).reshape(k * k, h, w).astype(bool)
    return PixelVolume(slices, valid, k)


def read_keyvalue(path) -> dict[str, str]:
    """Parse ``key=value`` lines; ``#`` starts a comment."""
    out = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise FormatError(f"{path}:{lineno}: expected key=value")
        key, value = line.split("=", 1)
        out[key.strip()] = value.strip()
    return out


@dataclass
class SequenceEntry:
    name: str
    blurred: list[str]
    sharp: list[str] = field(default_factory=list)
    flows: list[str] = field(default_factory=list)  # flows[i]: frame i+1 -> i

    def check(self) -> None:
        n = len(self.blurred)
        if n == 0:
            raise FormatError(f"sequence {self.name!r} has no blurred frames")
        if self.sharp and len(self.sharp) != n:
            raise FormatError(f"sequence {self.name!r}: {len(self.sharp)} sharp vs {n} blurred frames")
        if self.flows and len(self.flows) != n - 1:
            raise FormatError(f"sequence {self.name!r}: expected {n - 1} flows, got {len(self.flows)}")


@dataclass
class Manifest:
    """Ordered frame lists per sequence; paths are relative to the manifest."""

    sequences: list[SequenceEntry]
    scene: dict = field(default_factory=dict)
    root: Path = Path(".")

    def resolve(self, rel: str) -> Path:
        return self.root / rel


def write_manifest(path, manifest: Manifest) -> None:
    doc = {
        "scene": manifest.scene,
        "sequences": [
            {"name": s.name, "blurred": s.blurred, "sharp": s.sharp, "flows": s.flows}
            for s in manifest.sequences
        ],
    }
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def read_manifest(path) -> Manifest:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
        seqs = [
            SequenceEntry(s["name"], list(s["blurred"]), list(s.get("sharp", [])), list(s.get("flows", [])))
            for s in doc["sequences"]
        ]
    except (KeyError, TypeError, json.JSONDecodeError) as exc:
        raise FormatError(f"{path}: malformed manifest ({exc})") from exc
    for s in seqs:
        s.check()
    return Manifest(seqs, doc.get("scene", {}), path.parent)
