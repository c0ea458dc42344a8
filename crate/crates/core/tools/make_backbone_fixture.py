"""Regenerate the tiny ONNX backbone fixture used by the `onnx` feature tests.

Writes into tests/fixtures/:
  tiny_backbone.onnx          three tapped outputs at strides 2, 4, 8
  tiny_backbone.sidecar.json  input size, normalization, layer shapes
  backbone_input_{0,1,2}.png  32x32 RGB inputs
  backbone_input_{0,1,2}.vadf features aligned and concatenated by torch

Usage: python3 tools/make_backbone_fixture.py
"""

import json
import struct
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F
from PIL import Image
from torch import nn

OUT = Path(__file__).resolve().parent.parent / "tests" / "fixtures"
SIZE = 32
MEAN = [0.485, 0.456, 0.406]
STD = [0.229, 0.224, 0.225]
NAMES = ["layer1", "layer2", "layer3"]


class Tiny(nn.Module):
    def __init__(self):
        super().__init__()
        self.c1 = nn.Conv2d(3, 4, 3, stride=2, padding=1)
        self.c2 = nn.Conv2d(4, 6, 3, stride=2, padding=1)
        self.c3 = nn.Conv2d(6, 8, 3, stride=2, padding=1)

    def forward(self, x):
        f1 = torch.relu(self.c1(x))
        f2 = torch.relu(self.c2(f1))
        f3 = torch.tanh(self.c3(f2))
        return f1, f2, f3


def write_vadf(path, t, boundaries):
    c, h, w = t.shape
    head = b"VADF" + struct.pack("<HBBIIIB", 1, 0, 0, c, h, w, len(boundaries))
    head += struct.pack(f"<{len(boundaries)}I", *boundaries)
    path.write_bytes(head + t.astype("<f4").tobytes())


def image(k):
    y, x = np.mgrid[0:SIZE, 0:SIZE]
    r = (x * 7 + k * 40) % 256
    g = (y * 5 + x * (k + 1)) % 256
    b = ((x - 16) ** 2 + (y - 16) ** 2 + k * 13) % 256
    return np.stack([r, g, b], axis=-1).astype(np.uint8)


def main():
    torch.manual_seed(0)
    model = Tiny().eval()
    OUT.mkdir(parents=True, exist_ok=True)
    dummy = torch.zeros(1, 3, SIZE, SIZE)
    torch.onnx.export(
        model,
        dummy,
        OUT / "tiny_backbone.onnx",
        input_names=["image"],
        output_names=NAMES,
        opset_version=13,
        dynamo=False,
    )
    mean = torch.tensor(MEAN).view(1, 3, 1, 1)
    std = torch.tensor(STD).view(1, 3, 1, 1)
    shapes = None
    for k in range(3):
        pixels = image(k)
        Image.fromarray(pixels, "RGB").save(OUT / f"backbone_input_{k}.png")
        x = torch.from_numpy(pixels).permute(2, 0, 1).unsqueeze(0).float() / 255.0
        x = (x - mean) / std
        with torch.no_grad():
            feats = model(x)
        shapes = [list(f.shape[1:]) for f in feats]
        h, w = feats[0].shape[2:]
        aligned = [
            f if f.shape[2:] == (h, w) else F.interpolate(f, size=(h, w), mode="bilinear", align_corners=False)
            for f in feats
        ]
        cat = torch.cat(aligned, dim=1)[0].numpy()
        bounds = np.cumsum([0] + [s[0] for s in shapes[:-1]]).tolist()
        write_vadf(OUT / f"backbone_input_{k}.vadf", cat, bounds)
    sidecar = {
        "backbone": "tiny-conv3",
        "input_size": [SIZE, SIZE],
        "preprocessing": {"mean": MEAN, "std": STD},
        "layers": [{"name": n, "shape": s} for n, s in zip(NAMES, shapes)],
    }
    (OUT / "tiny_backbone.sidecar.json").write_text(json.dumps(sidecar, indent=2) + "\n")


if __name__ == "__main__":
    main()
