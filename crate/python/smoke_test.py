"""Smoke test for the sbfnet_py extension module.

Run after building the extension (see README), e.g.
    python3 python/smoke_test.py
"""
import math
import os
import sys
import tempfile

import sbfnet_py as sb


def check(cond, what):
    if not cond:
        sys.exit(f"FAIL: {what}")
    print(f"ok  {what}")


check(sb.cosine_distance([1.0, 0.0], [1.0, 0.0]) == 0.0, "cosine of identical vectors is 0")
check(abs(sb.cosine_distance([1.0, 0.0], [0.0, 1.0]) - 1.0) < 1e-15, "orthogonal cosine is 1")
check(sb.euclidean_distance([0.0, 0.0], [3.0, 4.0]) == 5.0, "euclidean 3-4-5")
check(abs(sb.gaussian_rbf(1.0) - math.exp(-1.0)) < 1e-15, "default bandwidth gives exp(-d)")
check(abs(sb.triplet_loss([1.0, 0.0], [1.0, 0.0], [1.0, 0.0]) - 0.3) < 1e-15, "triplet with p == n is the margin")
mined = sb.mine_semi_hard([0.1], [0.05, 0.2, 0.35], 0.3)
check(mined == [(0, 1, "semi_hard")], "mining picks the nearest band negative")
try:
    sb.gaussian_rbf(0.5, 0.0)
    check(False, "zero bandwidth rejected")
except ValueError:
    check(True, "zero bandwidth rejected")

ds = sb.Dataset.gaussian_blobs(3, 12, 8, seed=1)
check(len(ds) == 36 and ds.class_count == 3 and ds.image_shape == [8, 8, 1], "synthetic dataset shape")
train, test = ds.split(0.25, seed=0)
check(len(train) + len(test) == len(ds) and test.class_counts() == [3, 3, 3], "stratified split")
check(len(train.augment(copies=4, seed=2)) == 5 * len(train), "augmentation is five-fold")

net = sb.SbfNet.train(train, centers_per_class=2, seed=0, kernel_iterations=10, mlp_iterations=200)
check(net.kernel_count == 6 and net.class_count == 3, "kernel count is classes x centers")
sims = net.similarity_vector(train.image(0))
check(len(sims) == 6 and all(0.0 <= s <= 1.0 for s in sims), "similarity vector width and range")
cls, probs = net.predict(test.image(0))
check(0 <= cls < 3 and abs(sum(probs) - 1.0) < 1e-9, "prediction is a distribution")
report = net.evaluate(test)
check(sum(map(sum, report["confusion"])) == len(test), "confusion matrix covers the test set")
print(f"    toy accuracy {report['accuracy']:.3f}")
try:
    net.evaluate(train.augment())
    check(False, "augmented evaluation rejected")
except ValueError:
    check(True, "augmented evaluation rejected")

with tempfile.TemporaryDirectory() as d:
    path = os.path.join(d, "net.sbfc")
    net.save(path)
    again = sb.SbfNet.load(path)
    check(again.predict_dataset(test) == net.predict_dataset(test), "save/load round trip")

mnist = os.path.join(os.path.dirname(__file__), "..", "data", "mnist-5k")
if os.path.isdir(mnist):
    m = sb.Dataset.load_idx_dir(mnist)
    check(len(m) == 5000 and m.image_shape == [28, 28, 1], "bundled MNIST sample loads")
print("smoke test passed")
