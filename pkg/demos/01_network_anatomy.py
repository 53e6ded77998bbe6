"""
Network anatomy
===============

Build a fresh network, push one epoch through it and print the temporal
length, parameter count and receptive field of every layer.
"""

import numpy as np

from neoseize import fcnn

model = fcnn.init_model(seed=0)
epoch = np.random.default_rng(0).standard_normal(fcnn.INPUT_LENGTH)
trace = fcnn.forward(model, epoch)

per_layer, with_bn, without_bn = fcnn.count_params(model)
params = iter(per_layer)
conv_index = 0
print(f"{'layer':<8}{'length':>8}{'params':>8}{'rf':>6}")
for name, kind, _, _ in fcnn.ARCHITECTURE:
    length = trace.outputs[name].shape[-1]
    if kind == "conv":
        conv_index += 1
        rf, _ = fcnn.receptive_field(conv_index)
        print(f"{name:<8}{length:>8}{next(params):>8}{rf:>6}")
    elif kind == "bn":
        print(f"{name:<8}{length:>8}{next(params):>8}")
    else:
        print(f"{name:<8}{length:>8}{0:>8}")
print(f"totals: {without_bn} without batch norm, {with_bn} with")

# each of the 53 final positions sees 47 input samples, 4 samples apart
for index in (0, 1, 52):
    print(f"final position {index:2d} <- input samples {fcnn.final_window(index)}")
print("probabilities (background, seizure):", trace.probs[0].round(4))
