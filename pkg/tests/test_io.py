import struct

import numpy as np
import pytest

from pvdeblur.io import (
    FormatError,
    Manifest,
    SequenceEntry,
    load_png,
    read_flo,
    read_keyvalue,
    read_manifest,
    read_pvol,
    save_png,
    write_flo,
    write_manifest,
    write_pvol,
)
from pvdeblur.pixelvolume import build_pixel_volume


@pytest.mark.parametrize("shape", [(9, 13), (9, 13, 3)])
def test_png_roundtrip_within_half_level(tmp_path, rng, shape):
    f = rng.random(shape)
    save_png(tmp_path / "f.png", f)
    back = load_png(tmp_path / "f.png")
    assert back.shape == shape
    assert np.abs(back - f).max() <= 1 / 510 + 1e-12


def test_png_exact_levels_roundtrip(tmp_path, rng):
    f = rng.integers(0, 256, (6, 7)) / 255.0
    save_png(tmp_path / "f.png", f)
    np.testing.assert_array_equal(load_png(tmp_path / "f.png"), f)


def test_flo_roundtrip_bit_exact(tmp_path, rng):
    flow = rng.normal(0, 5, (7, 11, 2)).astype(np.float32)
    write_flo(tmp_path / "a.flo", flow)
    back = read_flo(tmp_path / "a.flo")
    assert back.dtype == np.float32
    assert back.tobytes() == flow.tobytes()


def test_flo_layout(tmp_path):
    flow = np.zeros((2, 3, 2), dtype=np.float32)
    flow[1, 2] = (1.5, -2.0)
    write_flo(tmp_path / "a.flo", flow)
    raw = (tmp_path / "a.flo").read_bytes()
    assert raw[:4] == b"PIEH"
    assert struct.unpack("<ii", raw[4:12]) == (3, 2)
    assert struct.unpack("<ff", raw[12 + 8 * 5:12 + 8 * 6]) == (1.5, -2.0)


def test_flo_rejects_garbage(tmp_path):
    (tmp_path / "bad.flo").write_bytes(b"nope" + bytes(20))
    with pytest.raises(FormatError):
        read_flo(tmp_path / "bad.flo")
    (tmp_path / "short.flo").write_bytes(struct.pack("<fii", 202021.25, 4, 4) + bytes(8))
    with pytest.raises(FormatError):
        read_flo(tmp_path / "short.flo")


def test_pvol_roundtrip(tmp_path, rng):
    pv = build_pixel_volume(rng.random((6, 8)).astype(np.float32), rng.normal(0, 2, (6, 8, 2)), 3)
    write_pvol(tmp_path / "v.pvol", pv)
    back = read_pvol(tmp_path / "v.pvol")
    assert back.k == 3
    np.testing.assert_array_equal(back.valid, pv.valid)
    np.testing.assert_allclose(back.slices, pv.slices, atol=1e-7)


def test_pvol_rejects_truncated(tmp_path, rng):
    pv = build_pixel_volume(rng.random((4, 4)), np.zeros((4, 4, 2)), 3)
    write_pvol(tmp_path / "v.pvol", pv)
    raw = (tmp_path / "v.pvol").read_bytes()
    (tmp_path / "cut.pvol").write_bytes(raw[:-3])
    with pytest.raises(FormatError):
        read_pvol(tmp_path / "cut.pvol")


def test_keyvalue(tmp_path):
    (tmp_path / "c.cfg").write_text("# scene\nframes = 4\nvelocity=2,1  # px\n\n")
    assert read_keyvalue(tmp_path / "c.cfg") == {"frames": "4", "velocity": "2,1"}
    (tmp_path / "bad.cfg").write_text("frames 4\n")
    with pytest.raises(FormatError):
        read_keyvalue(tmp_path / "bad.cfg")


def test_manifest_roundtrip(tmp_path):
    m = Manifest([SequenceEntry("a", ["b0.png", "b1.png"], ["s0.png", "s1.png"], ["f1.flo"])],
                 {"seed": 3})
    write_manifest(tmp_path / "m.json", m)
    back = read_manifest(tmp_path / "m.json")
    assert back.sequences == m.sequences
    assert back.scene == {"seed": 3}
    assert back.resolve("b0.png") == tmp_path / "b0.png"


def test_manifest_inconsistent_lengths(tmp_path):
    m = Manifest([SequenceEntry("a", ["b0.png", "b1.png"], ["s0.png"])])
    write_manifest(tmp_path / "m.json", m)
    with pytest.raises(FormatError):
        read_manifest(tmp_path / "m.json")
    (tmp_path / "x.json").write_text("{}")
    with pytest.raises(FormatError):
        read_manifest(tmp_path / "x.json")
