"""Build the 28x28 handwritten-digit fixture used by the test suite.

Source: the UCI optical-recognition digits bundled with scikit-learn
(1797 images, 8x8, 17 gray levels). Each image is resampled to 20x20 and
centered in a 28x28 frame, mirroring the MNIST layout, then written as IDX
files. The split is deterministic: a fixed permutation, last 500 for test.
"""

import os
import struct

import numpy as np
from PIL import Image
from sklearn.datasets import load_digits

OUT = os.path.join(os.path.dirname(__file__), "..", "data", "digits28")


def to_frame(img8):
    scaled = (img8 / 16.0 * 255.0).astype(np.uint8)
    small = Image.fromarray(scaled, mode="L").resize((20, 20), Image.BILINEAR)
    frame = np.zeros((28, 28), dtype=np.uint8)
    frame[4:24, 4:24] = np.asarray(small)
    return frame


def write_images(path, images):
    with open(path, "wb") as f:
        f.write(struct.pack(">IIII", 0x00000803, len(images), 28, 28))
        f.write(np.stack(images).astype(np.uint8).tobytes())


def write_labels(path, labels):
    with open(path, "wb") as f:
        f.write(struct.pack(">II", 0x00000801, len(labels)))
        f.write(np.asarray(labels, dtype=np.uint8).tobytes())


def main():
    digits = load_digits()
    order = np.random.RandomState(20230601).permutation(len(digits.images))
    frames = [to_frame(digits.images[i]) for i in order]
    labels = [int(digits.target[i]) for i in order]
    os.makedirs(OUT, exist_ok=True)
    write_images(os.path.join(OUT, "train-images-idx3-ubyte"), frames[:-500])
    write_labels(os.path.join(OUT, "train-labels-idx1-ubyte"), labels[:-500])
    write_images(os.path.join(OUT, "test-images-idx3-ubyte"), frames[-500:])
    write_labels(os.path.join(OUT, "test-labels-idx1-ubyte"), labels[-500:])


if __name__ == "__main__":
    main()
