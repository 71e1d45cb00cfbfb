"""Scalar-loop reference implementations used to check the vectorized code.

Everything here walks explicit Python loops over individual numbers so it
shares no code path with the numpy implementations under test.
"""
import math


def lrelu(x, slope=0.01):
    return x if x > 0 else slope * x


def sigmoid(x):
    if x >= 0:
        return 1.0 / (1.0 + math.exp(-x))
    e = math.exp(x)
    return e / (1.0 + e)


def dense(x, W, b, act=True, slope=0.01):
    """x: list of rows; W: nested list (n_in, n_out); b: list (n_out)."""
    out = []
    for row in x:
        r = []
        for j in range(len(b)):
            acc = b[j]
            for i in range(len(row)):
                acc += row[i] * W[i][j]
            r.append(lrelu(acc, slope) if act else acc)
        out.append(r)
    return out


def two_layer(x, p, a, b):
    h = dense(x, p[f"{a}.W"], p[f"{a}.b"][0])
    return dense(h, p[f"{b}.W"], p[f"{b}.b"][0])


def lstm_step(h_in, h_prev, c_prev, p, h_future=None):
    """Gate columns are blocked i, o, f, candidate."""
    W, U, b = p["lstm.W"], p["lstm.U"], p["lstm.b"][0]
    C = p.get("lstm.C")
    n = len(b) // 4
    hs, cs = [], []
    for r in range(len(h_in)):
        z = []
        for j in range(4 * n):
            acc = b[j]
            for i in range(len(h_in[r])):
                acc += h_in[r][i] * W[i][j]
            for i in range(len(h_prev[r])):
                acc += h_prev[r][i] * U[i][j]
            if h_future is not None:
                for i in range(len(h_future[r])):
                    acc += h_future[r][i] * C[i][j]
            z.append(acc)
        h_row, c_row = [], []
        for k in range(n):
            i_g = sigmoid(z[k])
            o_g = sigmoid(z[n + k])
            f_g = sigmoid(z[2 * n + k])
            g = math.tanh(z[3 * n + k])
            c = f_g * c_prev[r][k] + i_g * g
            c_row.append(c)
            h_row.append(o_g * math.tanh(c))
        hs.append(h_row)
        cs.append(c_row)
    return hs, cs


def decode(h, x, p, residual=True):
    z = dense(h, p["dec1.W"], p["dec1.b"][0])
    z = dense(z, p["dec2.W"], p["dec2.b"][0])
    z = dense(z, p["dec3.W"], p["dec3.b"][0], act=False)
    if residual:
        return [[x[r][j] + z[r][j] for j in range(len(z[r]))] for r in range(len(z))]
    return z


def init_state(x0, p, size):
    z = dense(x0, p["init1.W"], p["init1.b"][0])
    z = dense(z, p["init2.W"], p["init2.b"][0], act=False)
    return [row[:size] for row in z], [row[size:] for row in z]


def preprocess(positions, mean, std):
    """positions: nested list (L, K, 3) -> normalized (L, 3K) rows."""
    n = len(positions)
    rows = []
    for t in range(n):
        a, b = (0, 1) if t == 0 else (t - 1, t)
        row = []
        for j in range(len(positions[t])):
            for c in range(3):
                if j == 0:
                    v = positions[b][0][c] - positions[a][0][c]
                else:
                    v = positions[t][j][c] - positions[t][0][c]
                row.append(v)
        rows.append([(row[i] - mean[i]) / std[i] for i in range(len(row))])
    return rows


def mse(pred, truth):
    """pred/truth: nested (frames, D) lists."""
    total = 0.0
    for a, b in zip(pred, truth):
        total += sum((u - v) ** 2 for u, v in zip(a, b))
    return total / len(pred)


def aco(pred, truth):
    """Flat lists of meters -> centimeters."""
    total = sum(abs(u - v) for u, v in zip(pred, truth))
    return 100.0 * total / len(pred)


def amsgrad(theta, grads, lr, b1=0.9, b2=0.999, eps=1e-8):
    """Scalar AMSGrad run; returns the parameter after each step."""
    m = v = vmax = 0.0
    out = []
    for g in grads:
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        vmax = max(vmax, v)
        theta = theta - lr * m / (math.sqrt(vmax) + eps)
        out.append(theta)
    return out


def bilinear(grid, cell, origin, x, z):
    fx = (x - origin[0]) / cell
    fz = (z - origin[1]) / cell
    i = min(max(int(math.floor(fx)), 0), len(grid) - 2)
    j = min(max(int(math.floor(fz)), 0), len(grid[0]) - 2)
    u, w = fx - i, fz - j
    return ((1 - u) * (1 - w) * grid[i][j] + u * (1 - w) * grid[i + 1][j]
            + (1 - u) * w * grid[i][j + 1] + u * w * grid[i + 1][j + 1])
