#!/usr/bin/env python3
"""Regenerates the bundled model descriptors under crates/core/data/models."""
import json
import pathlib

OUT = pathlib.Path(__file__).resolve().parent.parent / "crates" / "core" / "data" / "models"


class Builder:
    def __init__(self, name, input_shape):
        self.name = name
        self.input_shape = input_shape
        self.layers = []

    def add(self, layer):
        self.layers.append(layer)
        return layer["name"]

    def conv(self, name, src, out, kernel, stride=1, pad=0, relu=False, groups=1):
        layer = {"name": name, "type": "conv", "inputs": [src], "out_channels": out,
                 "kernel": kernel, "stride": stride, "pad": pad, "relu": relu}
        if groups != 1:
            layer["groups"] = groups
        return self.add(layer)

    def pool(self, name, src, window, stride, pad=0):
        layer = {"name": name, "type": "maxpool", "inputs": [src], "window": window, "stride": stride}
        if pad:
            layer["pad"] = pad
        return self.add(layer)

    def lrn(self, name, src):
        return self.add({"name": name, "type": "lrn", "inputs": [src],
                         "local_size": 5, "alpha": 1e-4, "beta": 0.75, "k": 2.0})

    def fc(self, name, src, out, relu=False):
        return self.add({"name": name, "type": "fc", "inputs": [src], "out_channels": out, "relu": relu})

    def eltwise(self, name, a, b, relu=True):
        return self.add({"name": name, "type": "eltwise", "inputs": [a, b], "relu": relu})

    def relu(self, name, src):
        return self.add({"name": name, "type": "relu", "inputs": [src]})

    def dump(self):
        doc = {"name": self.name, "input_shape": self.input_shape, "layers": self.layers}
        (OUT / f"{self.name}.json").write_text(json.dumps(doc, indent=1) + "\n")


def alexnet():
    b = Builder("alexnet", [3, 227, 227])
    x = b.conv("conv1", "input", 96, 11, stride=4, relu=True)
    x = b.lrn("norm1", x)
    x = b.pool("pool1", x, 3, 2)
    x = b.conv("conv2", x, 256, 5, pad=2, relu=True, groups=2)
    x = b.lrn("norm2", x)
    x = b.pool("pool2", x, 3, 2)
    x = b.conv("conv3", x, 384, 3, pad=1, relu=True)
    x = b.conv("conv4", x, 384, 3, pad=1, relu=True, groups=2)
    x = b.conv("conv5", x, 256, 3, pad=1, relu=True, groups=2)
    x = b.pool("pool5", x, 3, 2)
    x = b.fc("fc6", x, 4096, relu=True)
    x = b.fc("fc7", x, 4096, relu=True)
    b.fc("fc8", x, 1000)
    b.dump()


def resnet(name, blocks):
    # Bottleneck ResNet with stride on the 3x3 conv. Batch norm is folded into conv bias.
    # Average pooling is unsupported, so the global pool is a 7x7 max pool.
    b = Builder(name, [3, 224, 224])
    x = b.conv("conv1", "input", 64, 7, stride=2, pad=3, relu=True)
    x = b.pool("pool1", x, 3, 2, pad=1)
    for stage, (count, width) in enumerate(zip(blocks, [64, 128, 256, 512]), start=2):
        for i in range(count):
            stride = 2 if (i == 0 and stage > 2) else 1
            tag = f"res{stage}_{i + 1}"
            out_ch = width * 4
            if i == 0:
                skip = b.conv(f"{tag}_proj", x, out_ch, 1, stride=stride)
            else:
                skip = x
            y = b.conv(f"{tag}_a", x, width, 1, relu=True)
            y = b.conv(f"{tag}_b", y, width, 3, stride=stride, pad=1, relu=True)
            y = b.conv(f"{tag}_c", y, out_ch, 1)
            x = b.eltwise(f"{tag}_sum", y, skip)
    x = b.pool("pool5", x, 7, 1)
    b.fc("fc1000", x, 1000)
    b.dump()


def toy_alexnet():
    b = Builder("toy_alexnet", [3, 32, 32])
    x = b.conv("conv1", "input", 16, 5, stride=1, pad=2, relu=True)
    x = b.lrn("norm1", x)
    x = b.pool("pool1", x, 3, 2)
    x = b.conv("conv2", x, 24, 3, pad=1, relu=True, groups=2)
    x = b.pool("pool2", x, 2, 2)
    x = b.fc("fc1", x, 64, relu=True)
    b.fc("fc2", x, 10)
    b.dump()


def toy_resnet():
    b = Builder("toy_resnet", [8, 16, 16])
    x = b.conv("stem", "input", 16, 3, pad=1, relu=True)
    y = b.conv("block1_a", x, 16, 3, pad=1, relu=True)
    y = b.conv("block1_b", y, 16, 3, pad=1)
    x = b.eltwise("block1_sum", y, x)
    skip = b.conv("block2_proj", x, 32, 1, stride=2)
    y = b.conv("block2_a", x, 32, 3, stride=2, pad=1, relu=True)
    y = b.conv("block2_b", y, 32, 3, pad=1)
    x = b.eltwise("block2_sum", y, skip)
    x = b.pool("pool", x, 8, 1)
    b.fc("fc", x, 10)
    b.dump()


if __name__ == "__main__":
    alexnet()
    resnet("resnet50", [3, 4, 6, 3])
    resnet("resnet152", [3, 8, 36, 3])
    toy_alexnet()
    toy_resnet()
