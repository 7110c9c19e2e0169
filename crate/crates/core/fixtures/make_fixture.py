#!/usr/bin/env python3
# SPDX-License-Identifier: MIT OR Apache-2.0
"""Builds the tiny-CNN fixture used by the test suites.

Generates a 10-class synthetic shapes set (1x24x24 grayscale), trains a
three-block CNN with torch and writes:

  tiny_cnn/model.toml   layer manifest
  tiny_cnn/model.bin    little-endian f32 weights in manifest order
  tiny_cnn/train.pack   2000 training images (dataset pack)
  tiny_cnn/queries.pack 200 held-out images
  tiny_cnn/hard.pack    100 two-shape blends labelled with the dominant shape
  tiny_cnn/reference_logits.json  torch logits for queries 0..4

Run from this directory: python3 make_fixture.py
"""

import json
import math
import os
import struct

import numpy as np
import torch
import torch.nn as nn

SIZE = 24
CLASSES = 10
OUT = os.path.join(os.path.dirname(os.path.abspath(__file__)), "tiny_cnn")


def draw(cls, rng):
    yy, xx = np.mgrid[0:SIZE, 0:SIZE].astype(np.float32)
    cx = rng.uniform(8, 16)
    cy = rng.uniform(8, 16)
    r = rng.uniform(4.5, 7.5)
    t = rng.uniform(1.2, 2.2)
    img = np.zeros((SIZE, SIZE), np.float32)
    dx, dy = xx - cx, yy - cy
    d = np.sqrt(dx * dx + dy * dy)
    if cls == 0:  # disk
        img[d <= r] = 1
    elif cls == 1:  # ring
        img[np.abs(d - r) <= t / 2 + 0.3] = 1
    elif cls == 2:  # filled square
        img[(np.abs(dx) <= r * 0.85) & (np.abs(dy) <= r * 0.85)] = 1
    elif cls == 3:  # hollow square
        m = np.maximum(np.abs(dx), np.abs(dy))
        img[np.abs(m - r * 0.85) <= t / 2 + 0.3] = 1
    elif cls == 4:  # triangle pointing up
        h = r * 1.6
        top = cy - h / 2
        rel = (yy - top) / h
        img[(rel >= 0) & (rel <= 1) & (np.abs(dx) <= rel * r)] = 1
    elif cls == 5:  # plus
        img[((np.abs(dx) <= t / 2 + 0.3) & (np.abs(dy) <= r)) | ((np.abs(dy) <= t / 2 + 0.3) & (np.abs(dx) <= r))] = 1
    elif cls == 6:  # diagonal cross
        a = np.abs(dx - dy) / math.sqrt(2)
        b = np.abs(dx + dy) / math.sqrt(2)
        img[((a <= t / 2 + 0.3) | (b <= t / 2 + 0.3)) & (d <= r * 1.1)] = 1
    elif cls == 7:  # horizontal stripes
        period = rng.uniform(4, 6)
        img[(np.mod(yy + rng.uniform(0, period), period) < period / 2) & (np.abs(dx) <= r) & (np.abs(dy) <= r)] = 1
    elif cls == 8:  # vertical stripes
        period = rng.uniform(4, 6)
        img[(np.mod(xx + rng.uniform(0, period), period) < period / 2) & (np.abs(dx) <= r) & (np.abs(dy) <= r)] = 1
    elif cls == 9:  # checkerboard patch
        p = rng.uniform(3, 4.5)
        chk = (np.floor((xx - cx) / p) + np.floor((yy - cy) / p)) % 2 == 0
        img[chk & (np.abs(dx) <= r) & (np.abs(dy) <= r)] = 1
    return img * rng.uniform(0.7, 1.0)


def make_set(n, rng):
    xs = np.zeros((n, 1, SIZE, SIZE), np.float32)
    ys = np.zeros(n, np.int64)
    for i in range(n):
        c = i % CLASSES
        img = draw(c, rng) + rng.normal(0, 0.08, (SIZE, SIZE)).astype(np.float32)
        xs[i, 0] = img
        ys[i] = c
    perm = rng.permutation(n)
    return xs[perm], ys[perm]


def make_hard(n, rng):
    xs = np.zeros((n, 1, SIZE, SIZE), np.float32)
    ys = np.zeros(n, np.int64)
    for i in range(n):
        a = i % CLASSES
        b = (a + 1 + rng.integers(0, CLASSES - 1)) % CLASSES
        w = rng.uniform(0.5, 0.6)
        img = w * draw(a, rng) + (1 - w) * draw(b, rng)
        img += rng.normal(0, 0.15, (SIZE, SIZE)).astype(np.float32)
        xs[i, 0] = img
        ys[i] = a
    return xs, ys


def write_pack(path, xs, ys):
    n, c, h, w = xs.shape
    with open(path, "wb") as f:
        f.write(struct.pack("<5I", n, c, h, w, len(ys)))
        f.write(xs.astype("<f4").tobytes())
        f.write(ys.astype("<u2").tobytes())


class TinyCnn(nn.Module):
    def __init__(self):
        super().__init__()
        self.c1 = nn.Conv2d(1, 16, 3, padding=1)
        self.c2 = nn.Conv2d(16, 32, 3, padding=1)
        self.c3 = nn.Conv2d(32, 32, 3, padding=1)
        self.fc = nn.Linear(32, CLASSES)

    def probes(self, x):
        a1 = torch.relu(self.c1(x))
        a2 = torch.relu(self.c2(torch.max_pool2d(a1, 2)))
        a3 = torch.relu(self.c3(torch.max_pool2d(a2, 2)))
        return a1, a2, a3

    def forward(self, x):
        return self.fc(self.probes(x)[2].mean(dim=(2, 3)))


def liveness_penalty(model, x, floor=0.05):
    # keeps every channel active on part of each batch
    total = 0.0
    for a in model.probes(x):
        m = a.mean(dim=(2, 3))
        total = total + torch.relu(floor - m.max(dim=0).values).sum()
    return total


def active_fraction(model, x):
    with torch.no_grad():
        return [(a.mean(dim=(2, 3)) > 0).float().mean(dim=0) for a in model.probes(x)]


def main():
    torch.manual_seed(0)
    torch.set_num_threads(1)
    rng = np.random.default_rng(0)
    os.makedirs(OUT, exist_ok=True)

    xtr, ytr = make_set(2000, rng)
    xq, yq = make_set(200, rng)
    xh, yh = make_hard(100, rng)

    model = TinyCnn()
    for m in (model.c1, model.c2, model.c3):
        nn.init.constant_(m.bias, 0.05)
    opt = torch.optim.Adam(model.parameters(), lr=2e-3)
    xt = torch.from_numpy(xtr)
    yt = torch.from_numpy(ytr)
    for epoch in range(60):
        perm = torch.randperm(len(xt))
        for i in range(0, len(xt), 64):
            idx = perm[i:i + 64]
            opt.zero_grad()
            xb = xt[idx]
            loss = nn.functional.cross_entropy(model(xb), yt[idx])
            (loss + liveness_penalty(model, xb)).backward()
            opt.step()
        with torch.no_grad():
            acc = (model(xt).argmax(1) == yt).float().mean().item()
        print(f"epoch {epoch} loss {loss.item():.4f} train acc {acc:.4f}")
        live = min(f.min().item() for f in active_fraction(model, xt))
        print(f"  least active channel fires on {live:.3f} of samples")
        if acc >= 0.985 and epoch >= 10 and live >= 0.05:
            break

    with torch.no_grad():
        acc_q = (model(torch.from_numpy(xq)).argmax(1) == torch.from_numpy(yq)).float().mean().item()
        hard_pred = model(torch.from_numpy(xh)).argmax(1).numpy()
        ref = model(torch.from_numpy(xq[:5])).numpy().tolist()
    print(f"query acc {acc_q:.4f}; hard misclassified {(hard_pred != yh).sum()}")

    layers = []
    blob = []
    offset = 0

    def weights(arr):
        nonlocal offset
        flat = arr.detach().numpy().astype("<f4").ravel()
        blob.append(flat.tobytes())
        start = offset
        offset += flat.size
        return start, flat.size

    def conv(m, probe):
        o, n = weights(m.weight)
        layers.append(dict(kind="conv2d", shape=list(m.weight.shape), stride=1, padding=1,
                           weight_offset=o, weight_len=n, is_probe=False))
        o, n = weights(m.bias)
        layers.append(dict(kind="bias_add", shape=[m.bias.shape[0]], weight_offset=o, weight_len=n, is_probe=False))
        layers.append(dict(kind="relu", is_probe=probe))

    conv(model.c1, True)
    layers.append(dict(kind="maxpool2d", size=2, stride=2, is_probe=False))
    conv(model.c2, True)
    layers.append(dict(kind="maxpool2d", size=2, stride=2, is_probe=False))
    conv(model.c3, True)
    layers.append(dict(kind="avgpool2d", is_probe=False))
    layers.append(dict(kind="flatten", is_probe=False))
    o, n = weights(model.fc.weight)
    layers.append(dict(kind="dense", shape=list(model.fc.weight.shape), weight_offset=o, weight_len=n, is_probe=False))
    o, n = weights(model.fc.bias)
    layers.append(dict(kind="bias_add", shape=[CLASSES], weight_offset=o, weight_len=n, is_probe=False))

    with open(os.path.join(OUT, "model.bin"), "wb") as f:
        for b in blob:
            f.write(b)

    def fmt(v):
        if isinstance(v, bool):
            return "true" if v else "false"
        if isinstance(v, str):
            return f'"{v}"'
        if isinstance(v, list):
            return "[" + ", ".join(str(x) for x in v) + "]"
        return str(v)

    with open(os.path.join(OUT, "model.toml"), "w") as f:
        f.write("# tiny CNN fixture, generated by make_fixture.py\n")
        f.write('name = "tiny-cnn"\n')
        f.write('blob = "model.bin"\n')
        f.write(f"input_shape = [1, {SIZE}, {SIZE}]\n")
        f.write(f"class_count = {CLASSES}\n")
        for layer in layers:
            f.write("\n[[layers]]\n")
            for k, v in layer.items():
                f.write(f"{k} = {fmt(v)}\n")

    write_pack(os.path.join(OUT, "train.pack"), xtr, ytr)
    write_pack(os.path.join(OUT, "queries.pack"), xq, yq)
    write_pack(os.path.join(OUT, "hard.pack"), xh, yh)
    with open(os.path.join(OUT, "reference_logits.json"), "w") as f:
        json.dump({"queries": list(range(5)), "logits": ref}, f, indent=1)


if __name__ == "__main__":
    main()
