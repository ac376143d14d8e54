"""Pure-numpy gate kernels, the fallback when the compiled extension is absent.

Both backends implement the same two functions with identical semantics:

cell_forward(z, c_prev) -> (gates, c, h)
    z        (B, 4H) gate preactivations, blocks ordered f, i, o, g
    gates    (B, 4H) activated gates, same block order
    c, h     (B, H)  new cell and hidden state

cell_backward(gates, c_prev, c, dh, dc_in) -> (dz, dc_prev)
    dh       (B, H) total gradient flowing into h at this step
    dc_in    (B, H) cell gradient carried back from the next step
    dz       (B, 4H) gradient of the preactivations
    dc_prev  (B, H)  cell gradient for the previous step
"""

import numpy as np

BACKEND = "python"


def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def cell_forward(z, c_prev):
    H = c_prev.shape[1]
    gates = np.empty_like(z)
    gates[:, : 3 * H] = _sigmoid(z[:, : 3 * H])
    gates[:, 3 * H :] = np.tanh(z[:, 3 * H :])
    f = gates[:, :H]
    i = gates[:, H : 2 * H]
    o = gates[:, 2 * H : 3 * H]
    g = gates[:, 3 * H :]
    c = f * c_prev + i * g
    h = o * np.tanh(c)
    return gates, c, h


def cell_backward(gates, c_prev, c, dh, dc_in):
    H = c_prev.shape[1]
    f = gates[:, :H]
    i = gates[:, H : 2 * H]
    o = gates[:, 2 * H : 3 * H]
    g = gates[:, 3 * H :]
    tc = np.tanh(c)
    dc = dh * o * (1.0 - tc * tc) + dc_in
    dz = np.empty_like(gates)
    dz[:, :H] = dc * c_prev * f * (1.0 - f)
    dz[:, H : 2 * H] = dc * g * i * (1.0 - i)
    dz[:, 2 * H : 3 * H] = dh * tc * o * (1.0 - o)
    dz[:, 3 * H :] = dc * i * (1.0 - g * g)
    dc_prev = dc * f
    return dz, dc_prev
