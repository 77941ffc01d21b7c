"""Small feed-forward networks with a hand-written reverse pass and Adam.

Parameters live in one flat vector; layer weights and biases are views into
it, so optimisers work on the flat vector directly.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import ContractError, ParameterError

OUTPUTS = ("tanh_scaled", "linear", "residual_linear")


@dataclass(frozen=True)
class MLPSpec:
    input_dim: int
    hidden: tuple = (35, 35, 35, 35, 35)
    output_dim: int = 1
    output: str = "tanh_scaled"
    bound: float = 2.0
    zero_last: bool = False  # zero-initialise the output layer

    def __post_init__(self):
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        if self.input_dim < 1 or self.output_dim < 1 or any(h < 1 for h in self.hidden):
            raise ParameterError("all layer widths must be >= 1")
        if self.output not in OUTPUTS:
            raise ParameterError(f"output must be one of {OUTPUTS}")
        if self.output == "tanh_scaled" and not self.bound > 0:
            raise ParameterError("bound must be positive")
        if self.output == "residual_linear" and self.input_dim != self.output_dim:
            raise ParameterError("residual output needs input_dim == output_dim")

    @property
    def widths(self) -> list[int]:
        return [self.input_dim, *self.hidden, self.output_dim]

    @property
    def shapes(self) -> list[tuple[int, int]]:
        w = self.widths
        return list(zip(w[:-1], w[1:]))

    @property
    def n_params(self) -> int:
        return sum(a * b + b for a, b in self.shapes)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["hidden"] = list(self.hidden)
        return d

    @classmethod
    def from_dict(cls, d) -> "MLPSpec":
        return cls(**{**d, "hidden": tuple(d["hidden"])})


def policy_spec(input_dim: int, bound: float = 2.0) -> MLPSpec:
    return MLPSpec(input_dim=input_dim, hidden=(35,) * 5, output="tanh_scaled", bound=bound)


def adversary_spec() -> MLPSpec:
    return MLPSpec(input_dim=1, hidden=(10,), output_dim=1, output="residual_linear",
                   zero_last=True)


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def silu(z):
    return z * _sigmoid(z)


def silu_grad(z):
    s = _sigmoid(z)
    return s * (1.0 + z * (1.0 - s))


@dataclass
class Cache:
    owner: int
    version: int
    inputs: np.ndarray
    pre: list
    post: list
    out_pre: np.ndarray


class MLP:
    def __init__(self, spec: MLPSpec, params: np.ndarray | None = None, seed: int = 0):
        self.spec = spec
        self.seed = seed
        self._version = 0
        if params is None:
            params = self._init(seed)
        params = np.array(params, dtype=float)
        if params.shape != (spec.n_params,):
            raise ContractError(f"expected {spec.n_params} parameters, got {params.shape}")
        self._params = params

    def _init(self, seed):
        rng = np.random.default_rng(seed)
        chunks = []
        last = len(self.spec.shapes) - 1
        for k, (fan_in, fan_out) in enumerate(self.spec.shapes):
            bound = 1.0 / np.sqrt(fan_in)
            if k == last and self.spec.zero_last:
                chunks += [np.zeros(fan_in * fan_out), np.zeros(fan_out)]
            else:
                chunks += [rng.uniform(-bound, bound, fan_in * fan_out),
                           rng.uniform(-bound, bound, fan_out)]
        return np.concatenate(chunks)

    @property
    def params(self) -> np.ndarray:
        return self._params

    @params.setter
    def params(self, value):
        value = np.array(value, dtype=float)
        if value.shape != self._params.shape:
            raise ContractError("parameter vector has the wrong size")
        self._params = value
        self._version += 1

    def copy(self) -> "MLP":
        return MLP(self.spec, self._params.copy(), self.seed)

    def layers(self, flat=None):
        flat = self._params if flat is None else flat
        out, pos = [], 0
        for a, b in self.spec.shapes:
            W = flat[pos:pos + a * b].reshape(a, b)
            pos += a * b
            out.append((W, flat[pos:pos + b]))
            pos += b
        return out

    def forward(self, inputs):
        x = np.asarray(inputs, dtype=float)
        if x.ndim != 2 or x.shape[1] != self.spec.input_dim:
            raise ContractError(f"inputs must have shape (batch, {self.spec.input_dim})")
        pre, post = [], [x]
        h = x
        layers = self.layers()
        for W, b in layers[:-1]:
            z = h @ W + b
            h = silu(z)
            pre.append(z)
            post.append(h)
        W, b = layers[-1]
        z = h @ W + b
        if self.spec.output == "tanh_scaled":
            y = self.spec.bound * np.tanh(z)
        elif self.spec.output == "residual_linear":
            y = x + z
        else:
            y = z
        if not np.all(np.isfinite(y)):
            raise FloatingPointError("non-finite network output")
        return y, Cache(id(self), self._version, x, pre, post, z)

    def __call__(self, inputs):
        return self.forward(inputs)[0]

    def backward(self, cache: Cache, upstream):
        """Gradients of sum(upstream * outputs) w.r.t. parameters and inputs."""
        if cache.owner != id(self) or cache.version != self._version:
            raise ContractError("stale cache: parameters changed since forward")
        g = np.asarray(upstream, dtype=float)
        if g.shape != (cache.inputs.shape[0], self.spec.output_dim):
            raise ContractError("upstream gradient has the wrong shape")
        if self.spec.output == "tanh_scaled":
            t = np.tanh(cache.out_pre)
            g = g * self.spec.bound * (1.0 - t * t)
        grads = []
        layers = self.layers()
        for k in range(len(layers) - 1, -1, -1):
            W, _ = layers[k]
            grads.append((cache.post[k].T @ g, g.sum(axis=0)))
            g = g @ W.T
            if k > 0:
                g = g * silu_grad(cache.pre[k - 1])
        dx = g
        if self.spec.output == "residual_linear":
            dx = dx + np.asarray(upstream, dtype=float)
        flat = np.concatenate([np.concatenate([gW.ravel(), gb]) for gW, gb in reversed(grads)])
        return flat, dx


@dataclass
class Adam:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: np.ndarray | None = field(default=None, repr=False)
    v: np.ndarray | None = field(default=None, repr=False)

    def step(self, params, grad):
        """Bias-corrected Adam descent step; returns new parameters."""
        grad = np.asarray(grad, dtype=float)
        if self.m is None:
            self.m = np.zeros_like(grad)
            self.v = np.zeros_like(grad)
        if self.m.shape != grad.shape:
            raise ContractError("gradient shape changed between Adam steps")
        self.t += 1
        self.m = self.beta1 * self.m + (1 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1 - self.beta2) * grad * grad
        m_hat = self.m / (1 - self.beta1**self.t)
        v_hat = self.v / (1 - self.beta2**self.t)
        return np.asarray(params, dtype=float) - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


CHECKPOINT_FORMAT = "robhedge-checkpoint/1"


def save_checkpoint(path, nets: dict[str, MLP], meta: dict | None = None) -> None:
    """JSON header line followed by one parameter per line (exact repr)."""
    header = {"format": CHECKPOINT_FORMAT, "meta": meta or {},
              "nets": {name: {"spec": net.spec.to_dict(), "seed": net.seed,
                              "size": int(net.spec.n_params)}
                       for name, net in nets.items()}}
    with open(path, "w") as fh:
        fh.write(json.dumps(header, sort_keys=True) + "\n")
        for name in sorted(nets):
            fh.writelines(repr(float(v)) + "\n" for v in nets[name].params)


def load_checkpoint(path, expected: dict[str, MLPSpec] | None = None):
    """Returns ``(nets, meta)``; raises ContractError if a spec differs from ``expected``."""
    with open(path) as fh:
        header = json.loads(fh.readline())
        if header.get("format") != CHECKPOINT_FORMAT:
            raise ContractError(f"{path}: not a {CHECKPOINT_FORMAT} file")
        values = np.array([float(line) for line in fh if line.strip()])
    nets, pos = {}, 0
    for name, info in header["nets"].items():
        spec = MLPSpec.from_dict(info["spec"])
        if expected and name in expected and expected[name] != spec:
            raise ContractError(f"checkpoint net {name!r} has spec {spec}, "
                                f"expected {expected[name]}")
        size = info["size"]
        nets[name] = MLP(spec, values[pos:pos + size], seed=info["seed"])
        pos += size
    if pos != values.size:
        raise ContractError(f"{path}: parameter count mismatch")
    return nets, header["meta"]
