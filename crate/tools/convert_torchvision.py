#!/usr/bin/env python3
"""Convert a torchvision MobileNetV2 checkpoint to an LWT weight file.

Usage:
    convert_torchvision.py --checkpoint mobilenet_v2-b0353104.pth -o imagenet.lwt
    convert_torchvision.py --torchvision-pretrained -o imagenet.lwt
    convert_torchvision.py --random-seed 0 --num-classes 3 -o random.lwt

Name mapping (torchvision -> lungline):

    features.0.0.weight                  stem.conv.weight
    features.0.1.{weight,bias,...}       stem.bn.{gamma,beta,running_mean,running_var}
    features.1.conv.0.0.weight           block0.dw.weight
    features.1.conv.0.1.*                block0.bn2.*
    features.1.conv.1.weight             block0.pw.weight
    features.1.conv.2.*                  block0.bn3.*
    features.{i+1}.conv.0.0.weight       block{i}.expand.weight      (i >= 1)
    features.{i+1}.conv.0.1.*            block{i}.bn1.*
    features.{i+1}.conv.1.0.weight       block{i}.dw.weight
    features.{i+1}.conv.1.1.*            block{i}.bn2.*
    features.{i+1}.conv.2.weight         block{i}.pw.weight
    features.{i+1}.conv.3.*              block{i}.bn3.*
    features.18.0.weight                 last.conv.weight
    features.18.1.*                      last.bn.*
    classifier.1.{weight,bias}           head.{weight,bias}

Batch-norm `weight`/`bias` become `gamma`/`beta`; `num_batches_tracked` is
dropped. Tensors are written as little-endian f32 in lungline's layer order.
"""

import argparse
import re
import struct
import sys

import numpy as np

BN_FIELDS = {
    "weight": "gamma",
    "bias": "beta",
    "running_mean": "running_mean",
    "running_var": "running_var",
}


def map_name(name):
    """Return the lungline name for a torchvision key, or None to skip it."""
    if name.endswith("num_batches_tracked"):
        return None
    m = re.fullmatch(r"features\.0\.([01])\.(\w+)", name)
    if m:
        idx, field = m.groups()
        return "stem.conv.weight" if idx == "0" else f"stem.bn.{BN_FIELDS[field]}"
    m = re.fullmatch(r"features\.18\.([01])\.(\w+)", name)
    if m:
        idx, field = m.groups()
        return "last.conv.weight" if idx == "0" else f"last.bn.{BN_FIELDS[field]}"
    m = re.fullmatch(r"classifier\.1\.(weight|bias)", name)
    if m:
        return f"head.{m.group(1)}"
    m = re.fullmatch(r"features\.(\d+)\.conv\.(\d+)(?:\.(\d+))?\.(\w+)", name)
    if m:
        feat, a, b, field = m.groups()
        block = int(feat) - 1
        key = (a, b)
        if block == 0:
            table = {("0", "0"): "dw", ("0", "1"): "bn2", ("1", None): "pw", ("2", None): "bn3"}
        else:
            table = {
                ("0", "0"): "expand",
                ("0", "1"): "bn1",
                ("1", "0"): "dw",
                ("1", "1"): "bn2",
                ("2", None): "pw",
                ("3", None): "bn3",
            }
        part = table.get(key)
        if part is None:
            raise KeyError(name)
        if part.startswith("bn"):
            return f"block{block}.{part}.{BN_FIELDS[field]}"
        return f"block{block}.{part}.weight"
    raise KeyError(f"unmapped checkpoint tensor {name}")


def layer_order_key(name):
    """Sort key reproducing lungline's parameter order."""
    if name.startswith("stem."):
        major = -1
    elif name.startswith("block"):
        major = int(name.split(".")[0][5:])
    elif name.startswith("last."):
        major = 10_000
    else:
        major = 20_000
    part = name.split(".")[-2] if name.count(".") >= 2 else name.split(".")[0]
    parts = ["conv", "expand", "bn1", "dw", "bn2", "pw", "bn3", "bn", "head"]
    minor = parts.index(part) if part in parts else len(parts)
    fields = ["weight", "bias", "gamma", "beta", "running_mean", "running_var"]
    return (major, minor, fields.index(name.split(".")[-1]))


def encode_lwt(entries):
    out = bytearray(b"LWTF")
    out += struct.pack("<II", 1, len(entries))
    for name, arr in entries:
        raw = name.encode("utf-8")
        arr = np.ascontiguousarray(arr, dtype="<f4")
        out += struct.pack("<H", len(raw)) + raw
        out += struct.pack("<BB", 0, arr.ndim)
        out += struct.pack(f"<{arr.ndim}I", *arr.shape)
        out += arr.tobytes()
    return bytes(out)


def convert_state_dict(state):
    entries = []
    for key, tensor in state.items():
        name = map_name(key)
        if name is not None:
            entries.append((name, tensor.detach().cpu().numpy().astype(np.float32)))
    entries.sort(key=lambda e: layer_order_key(e[0]))
    return entries


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    src = ap.add_mutually_exclusive_group(required=True)
    src.add_argument("--checkpoint", help="torchvision state_dict (.pth)")
    src.add_argument("--torchvision-pretrained", action="store_true",
                     help="download the IMAGENET1K_V1 weights through torchvision")
    src.add_argument("--random-seed", type=int,
                     help="randomly initialised model with randomised BN statistics")
    ap.add_argument("--num-classes", type=int, default=1000)
    ap.add_argument("-o", "--output", required=True)
    args = ap.parse_args(argv)

    import torch
    import torchvision

    if args.checkpoint:
        state = torch.load(args.checkpoint, map_location="cpu")
        state = state.get("state_dict", state)
    else:
        if args.torchvision_pretrained:
            weights = torchvision.models.MobileNet_V2_Weights.IMAGENET1K_V1
            model = torchvision.models.mobilenet_v2(weights=weights)
        else:
            torch.manual_seed(args.random_seed)
            model = torchvision.models.mobilenet_v2(num_classes=args.num_classes)
            with torch.no_grad():
                for m in model.modules():
                    if isinstance(m, torch.nn.BatchNorm2d):
                        m.weight.uniform_(0.5, 1.5)
                        m.bias.uniform_(-0.2, 0.2)
                        m.running_mean.uniform_(-0.2, 0.2)
                        m.running_var.uniform_(0.5, 2.0)
        state = model.state_dict()

    entries = convert_state_dict(state)
    data = encode_lwt(entries)
    with open(args.output, "wb") as f:
        f.write(data)
    print(f"wrote {len(entries)} tensors, {len(data)} bytes to {args.output}", file=sys.stderr)


if __name__ == "__main__":
    main()
