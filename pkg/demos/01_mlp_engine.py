"""Train the flat-vector MLP on synthetic blobs and sanity-check its gradients.

The whole engine works on one flat float64 vector per model, which is what
lets the rest of the system average, mix, and hash models as plain arrays.
"""

import numpy as np

from scei import (
    MlpArchitecture,
    TrainingConfig,
    evaluate,
    generate_synthetic,
    init_params,
    loss_and_grad,
    sgd_train,
)

arch = MlpArchitecture(input_dim=10, hidden_dims=(32, 32), output_dim=4)
print(f"architecture {arch.layer_dims}, {arch.param_count} parameters")

ds = generate_synthetic(num_classes=4, per_class=300, input_dim=10, separation=3.0, seed=5)
order = np.random.default_rng(0).permutation(len(ds))
train, test = ds.subset(order[:1000]), ds.subset(order[1000:])

params = init_params(arch, seed=1)
print(f"untrained accuracy: {evaluate(params, arch, test):.3f}")

cfg = TrainingConfig(batch_size=10, local_epochs=1, learning_rate=0.05, rng_seed=7)
for epoch in range(1, 6):
    params = sgd_train(params, arch, cfg, train)
    loss, _ = loss_and_grad(params, arch, train.features, train.labels)
    print(f"epoch {epoch}: train loss {loss:.4f}, test accuracy {evaluate(params, arch, test):.3f}")

# spot-check the analytic gradient against central differences
probe = init_params(arch, seed=2)
batch, labels = train.features[:8], train.labels[:8]
_, grad = loss_and_grad(probe, arch, batch, labels)
eps = 1e-5
errors = []
for i in range(0, arch.param_count, arch.param_count // 25):
    up, down = probe.copy(), probe.copy()
    up[i] += eps
    down[i] -= eps
    fd = (loss_and_grad(up, arch, batch, labels)[0] - loss_and_grad(down, arch, batch, labels)[0]) / (2 * eps)
    errors.append(abs(fd - grad[i]))
print(f"max |finite difference - analytic| over 25 sampled coordinates: {max(errors):.2e}")
