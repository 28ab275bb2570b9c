"""Tape-based autodiff on numpy arrays, checked against finite differences."""

import numpy as np

from permlm import numerics as nx

rng = np.random.default_rng(0)
x = nx.Tensor(rng.normal(size=(4, 3)), requires_grad=True)
w = nx.Tensor(rng.normal(size=(3, 5)), requires_grad=True)
targets = np.array([0, 4, 2, 1])

# only ops run under an active tape are recorded
with nx.Tape() as tape:
    logits = nx.gelu(nx.layer_norm(x @ w, nx.Tensor(np.ones(5)), nx.Tensor(np.zeros(5))))
    loss = nx.cross_entropy(logits, targets)
grads = nx.backward(loss, tape)
print("loss", loss.item())


def f():
    return nx.cross_entropy(nx.gelu(nx.layer_norm(x @ w, nx.Tensor(np.ones(5)), nx.Tensor(np.zeros(5)))), targets).item()


h = 1e-5
numeric = np.zeros_like(w.data)
for idx in np.ndindex(*w.shape):
    old = w.data[idx]
    w.data[idx] = old + h
    up = f()
    w.data[idx] = old - h
    down = f()
    w.data[idx] = old
    numeric[idx] = (up - down) / (2 * h)

print("max |analytic - numeric| for w:", np.abs(grads[w] - numeric).max())

# one Adam update with the warmup/decay schedule
opt = nx.Adam()
params = {"x": x, "w": w}
x.grad, w.grad = grads[x], grads[w]
lr = nx.lr_at_step(1, 100, 1e-3)
opt.step(params, lr)
print("lr at step 1 of 100:", lr)
