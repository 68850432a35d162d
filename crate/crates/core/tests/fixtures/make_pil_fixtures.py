"""Regenerates pil_golden.json with Pillow's ImageOps/ImageEnhance."""
import json
from pathlib import Path

from PIL import Image, ImageEnhance, ImageOps

W, H = 24, 16


def pixel(x, y, c, narrow):
    v = ((x * x * 7 + y * 13 + c * 29 + x * y * 3) * 31) % 256
    return 60 + v % 120 if narrow else v


def make(narrow):
    data = bytes(pixel(x, y, c, narrow) for y in range(H) for x in range(W) for c in range(3))
    return Image.frombytes("RGB", (W, H), data)


wide, narrow = make(False), make(True)
cases = {
    "equalize": ImageOps.equalize(wide),
    "solarize_128": ImageOps.solarize(wide, 128),
    "posterize_3": ImageOps.posterize(wide, 3),
    "autocontrast": ImageOps.autocontrast(narrow),
    "sharpness_2": ImageEnhance.Sharpness(wide).enhance(2.0),
}
out = {"width": W, "height": H, "cases": {k: list(v.tobytes()) for k, v in cases.items()}}
Path(__file__).with_name("pil_golden.json").write_text(json.dumps(out))
