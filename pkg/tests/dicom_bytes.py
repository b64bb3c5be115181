"""Hand-assembled DICOM Part-10 bytes for parser tests.

Explicit VR little endian only. The encoder here is deliberately
independent of the parser under test: every element is packed with
struct, and expected scalar values in the tests are computed from the
rescale formula by hand, not by running the loader.
"""

import struct

EXPLICIT_LE = "1.2.840.10008.1.2.1"
IMPLICIT_LE = "1.2.840.10008.1.2"

_LONG_VRS = {"OB", "OW", "OF", "SQ", "UT", "UN"}


def element(group, elem, vr, value):
    if isinstance(value, str):
        payload = value.encode("ascii")
        if len(payload) % 2:
            # UIs pad with NUL, text VRs with space
            payload += b"\x00" if vr == "UI" else b" "
    else:
        payload = bytes(value)
    head = struct.pack("<HH", group, elem) + vr.encode("ascii")
    if vr in _LONG_VRS:
        return head + b"\x00\x00" + struct.pack("<I", len(payload)) + payload
    return head + struct.pack("<H", len(payload)) + payload


def us(group, elem, *values):
    return element(group, elem, "US", struct.pack("<" + "H" * len(values), *values))


def ds(group, elem, *values):
    return element(group, elem, "DS", "\\".join(format(float(v), "g") for v in values))


def pack_pixels(values, signed=False):
    fmt = "<" + ("h" if signed else "H") * len(values)
    return struct.pack(fmt, *values)


def dicom_file(*, rows, cols, pixels, series_uid="1.2.826.0.1.1", position=(0.0, 0.0, 0.0),
               orientation=(1, 0, 0, 0, 1, 0), pixel_spacing=(1.0, 1.0), bits=16,
               signed=False, slope=1.0, intercept=0.0, modality="CT",
               thickness=None, transfer_syntax=EXPLICIT_LE):
    meta = element(0x0002, 0x0010, "UI", transfer_syntax)
    head = (
        b"\x00" * 128 + b"DICM"
        + element(0x0002, 0x0000, "UL", struct.pack("<I", len(meta)))
        + meta
    )
    body = b"".join([
        element(0x0008, 0x0060, "CS", modality),
        ds(0x0018, 0x0050, thickness) if thickness is not None else b"",
        element(0x0020, 0x000E, "UI", series_uid),
        ds(0x0020, 0x0032, *position),
        ds(0x0020, 0x0037, *orientation),
        us(0x0028, 0x0010, rows),
        us(0x0028, 0x0011, cols),
        ds(0x0028, 0x0030, *pixel_spacing),
        us(0x0028, 0x0100, bits),
        us(0x0028, 0x0103, 1 if signed else 0),
        ds(0x0028, 0x1052, intercept),
        ds(0x0028, 0x1053, slope),
        element(0x7FE0, 0x0010, "OW", pixels),
    ])
    return head + body
