"""Writes hand-built NIfTI-1 fixtures byte by byte with struct, independent of the C++ writer."""
import struct
from pathlib import Path

HERE = Path(__file__).resolve().parent


def header(dims, datatype, bitpix, pixdim, magic, vox_offset=352.0, slope=0.0, inter=0.0):
    h = bytearray(348)
    struct.pack_into("<i", h, 0, 348)
    dim = [len(dims)] + list(dims) + [1] * (7 - len(dims))
    struct.pack_into("<8h", h, 40, *dim)
    struct.pack_into("<h", h, 70, datatype)
    struct.pack_into("<h", h, 72, bitpix)
    struct.pack_into("<8f", h, 76, 1.0, *pixdim, *([1.0] * (7 - len(pixdim))))
    struct.pack_into("<f", h, 108, vox_offset)
    struct.pack_into("<f", h, 112, slope)
    struct.pack_into("<f", h, 116, inter)
    h[344:348] = magic
    return bytes(h) + b"\x00" * 4


def main():
    # 4x4x4 float32, value at flat index i is i * 0.5 (x fastest).
    payload = struct.pack("<64f", *[i * 0.5 for i in range(64)])
    (HERE / "f32_4x4x4.nii").write_bytes(header((4, 4, 4), 16, 32, (1.0, 1.0, 1.0), b"n+1\x00") + payload)

    # W=4, H=3, D=2 int16 with slope 2 and intercept 1: stored i, value 2i+1.
    payload = struct.pack("<24h", *range(24))
    (HERE / "i16_scaled_4x3x2.nii").write_bytes(
        header((4, 3, 2), 4, 16, (0.5, 1.0, 2.0), b"n+1\x00", slope=2.0, inter=1.0) + payload)

    # Two-file variant magic.
    (HERE / "pair_magic.nii").write_bytes(header((4, 4, 4), 16, 32, (1.0, 1.0, 1.0), b"ni1\x00", vox_offset=0.0))

    # Header promises 64 voxels but only 63 follow.
    payload = struct.pack("<63f", *[0.0] * 63)
    (HERE / "truncated.nii").write_bytes(header((4, 4, 4), 16, 32, (1.0, 1.0, 1.0), b"n+1\x00") + payload)

    # float64 datatype is outside the supported subset.
    payload = struct.pack("<8d", *[0.0] * 8)
    (HERE / "f64_2x2x2.nii").write_bytes(header((2, 2, 2), 64, 64, (1.0, 1.0, 1.0), b"n+1\x00") + payload)


if __name__ == "__main__":
    main()
