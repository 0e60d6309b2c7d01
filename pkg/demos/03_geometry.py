"""
Boxes, IoU, NMS and letterboxing
================================
"""

import numpy as np

from shelfpipe.geometry import BBox, Detection, iou, letterbox, nms, unmap_box

a = BBox(0, 0, 10, 10)
b = BBox(1, 1, 10, 10)
c = BBox(30, 0, 10, 10)
print("IoU(a, b) =", iou(a, b), "= 81/119")
print("IoU(a, c) =", iou(a, c))

# Greedy NMS keeps the best box of each overlapping cluster.
dets = [Detection(b, 0.8), Detection(c, 0.7), Detection(a, 0.9)]
for d in nms(dets, iou_thr=0.45):
    print("kept", d.box.as_tuple(), d.score)

# Letterbox a 640x480 image into a 640 square input: scale 1, 80 px bars.
t = letterbox(640, 480, 640)
print("scale", t.scale, "pad", (t.pad_x, t.pad_y))
box = BBox(100, 50, 200, 100)
mapped = t.map_box(box)
print("input-space box:", mapped.as_tuple(), "back:", unmap_box(t, mapped).as_tuple())

# The raster version uses nearest-neighbour resampling and gray padding.
img = np.random.default_rng(0).integers(0, 255, size=(480, 640, 3), dtype=np.uint8)
out = letterbox(640, 480, 320).apply(img)
print("letterboxed shape:", out.shape, "top bar value:", out[0, 0])
