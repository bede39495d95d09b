"""Layered threshold networks: potentials, deterministic and sigmoid firing, stepping and runs."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from fractions import Fraction
from functools import cached_property
from typing import NamedTuple

import numpy as np

from .errors import InfeasibleParameters


@dataclass(frozen=True)
class Stochastic:
    lam: float  # sigmoid temperature
    bias: float
    seed: int = 0


@dataclass(frozen=True)
class NetworkParams:
    n: int
    layers_max: int
    tau: Fraction | float
    feedback: bool = False
    activation: Stochastic | None = None  # None means deterministic threshold firing

    def __post_init__(self):
        if self.n < 1 or self.layers_max < 1:
            raise ValueError(f"need n, layers_max >= 1, got {self.n}, {self.layers_max}")
        if not math.isfinite(float(self.tau)):
            raise ValueError("tau must be finite")


class LayeredNetwork:
    """Weights are indexed [layer][receiver, sender].

    ``uweight[l]`` feeds layer l from layer l-1 (l >= 1); ``dweight[l]`` feeds
    layer l from layer l+1 (l < layers_max). When ``grid`` is set, every weight
    is an integer multiple of it and thresholds are compared exactly.
    """

    def __init__(self, params: NetworkParams, uweight=None, dweight=None, grid: Fraction | None = None):
        shape = (params.layers_max + 1, params.n, params.n)
        self.params = params
        self.uweight = np.zeros(shape) if uweight is None else np.asarray(uweight, dtype=float)
        if params.feedback:
            self.dweight = np.zeros(shape) if dweight is None else np.asarray(dweight, dtype=float)
        else:
            self.dweight = None
        if self.uweight.shape != shape or (self.dweight is not None and self.dweight.shape != shape):
            raise ValueError(f"weight tensors must have shape {shape}")
        self.grid = grid

    @property
    def n(self) -> int:
        return self.params.n

    @property
    def layers_max(self) -> int:
        return self.params.layers_max

    def copy(self) -> LayeredNetwork:
        return LayeredNetwork(
            self.params,
            self.uweight.copy(),
            None if self.dweight is None else self.dweight.copy(),
            self.grid,
        )

    @cached_property
    def _units(self):
        """Integer weight tensors and the threshold in grid units, for exact comparison."""
        g = self.grid
        up = np.rint(self.uweight / float(g)).astype(np.int64)
        down = None if self.dweight is None else np.rint(self.dweight / float(g)).astype(np.int64)
        if not np.allclose(up * float(g), self.uweight, rtol=1e-12, atol=0):
            raise ValueError("upward weights are not multiples of the grid")
        if down is not None and not np.allclose(down * float(g), self.dweight, rtol=1e-12, atol=0):
            raise ValueError("downward weights are not multiples of the grid")
        return up, down, Fraction(self.params.tau) / g

    def invalidate(self):
        """Drop cached integer weights after editing weight tensors in place."""
        self.__dict__.pop("_units", None)

    # -- serialization ----------------------------------------------------
    def to_dict(self) -> dict:
        p = self.params
        tau = p.tau
        out = {
            "params": {
                "n": p.n,
                "layers_max": p.layers_max,
                "tau": [tau.numerator, tau.denominator] if isinstance(tau, Fraction) else float(tau),
                "feedback": p.feedback,
                "activation": None
                if p.activation is None
                else {"lambda": p.activation.lam, "bias": p.activation.bias, "seed": p.activation.seed},
            },
            "grid": None if self.grid is None else [self.grid.numerator, self.grid.denominator],
            "uweight": {str(l): self.uweight[l].tolist() for l in range(1, p.layers_max + 1)},
        }
        if self.dweight is not None:
            out["dweight"] = {str(l): self.dweight[l].tolist() for l in range(p.layers_max)}
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, data) -> LayeredNetwork:
        pp = data["params"]
        tau = pp["tau"]
        tau = Fraction(*tau) if isinstance(tau, list) else float(tau)
        act = pp.get("activation")
        act = None if act is None else Stochastic(act["lambda"], act["bias"], act["seed"])
        params = NetworkParams(pp["n"], pp["layers_max"], tau, pp["feedback"], act)
        net = cls(params, grid=None if data.get("grid") is None else Fraction(*data["grid"]))
        for l, rows in data["uweight"].items():
            net.uweight[int(l)] = rows
        for l, rows in data.get("dweight", {}).items():
            net.dweight[int(l)] = rows
        return net


@dataclass(frozen=True)
class NetworkState:
    firing: np.ndarray  # bool, shape (layers_max + 1, n)
    time: int = 0

    @classmethod
    def quiet(cls, net: LayeredNetwork, time: int = 0) -> NetworkState:
        return cls(np.zeros((net.layers_max + 1, net.n), dtype=bool), time)


class Potential(NamedTuple):
    upot: float
    dpot: float
    pot: float


def potential(net: LayeredNetwork, state: NetworkState, layer: int, neuron: int) -> Potential:
    """Incoming potential of one neuron given the current firing state."""
    if layer < 1 or layer > net.layers_max:
        raise ValueError(f"layer {layer} has no potential; layer 0 is input-driven")
    x = state.firing
    up = float(net.uweight[layer][neuron] @ x[layer - 1])
    down = 0.0
    if net.dweight is not None and layer < net.layers_max:
        down = float(net.dweight[layer][neuron] @ x[layer + 1])
    return Potential(up, down, up + down)


def layer_potentials(net: LayeredNetwork, firing: np.ndarray) -> np.ndarray:
    """Potentials of every neuron (row 0 is zero) given a firing state."""
    L = net.layers_max
    pots = np.zeros((L + 1, net.n))
    for l in range(1, L + 1):
        pots[l] = net.uweight[l] @ firing[l - 1]
        if net.dweight is not None and l < L:
            pots[l] += net.dweight[l] @ firing[l + 1]
    return pots


def _exact_fire(net: LayeredNetwork, firing: np.ndarray) -> np.ndarray:
    up, down, tau_units = net._units
    L = net.layers_max
    x = firing.astype(np.int64)
    out = np.zeros_like(firing)
    for l in range(1, L + 1):
        units = up[l] @ x[l - 1]
        if down is not None and l < L:
            units = units + down[l] @ x[l + 1]
        out[l] = units * tau_units.denominator >= tau_units.numerator
    return out


def firing_probability(x, lam: float):
    """Sigmoid 1/(1+e^{-x/lam}) evaluated without overflow."""
    return np.exp(-np.logaddexp(0.0, -np.asarray(x, dtype=float) / lam))


def step(net: LayeredNetwork, state: NetworkState, level0_input, rng: np.random.Generator | None = None) -> NetworkState:
    """Advance every layer simultaneously from ``state``; layer 0 copies the input."""
    inp = np.asarray(level0_input, dtype=bool)
    if inp.shape != (net.n,):
        raise ValueError(f"input must have length {net.n}")
    act = net.params.activation
    if act is None:
        if net.grid is not None:
            nxt = _exact_fire(net, state.firing)
        else:
            nxt = layer_potentials(net, state.firing) >= float(net.params.tau)
    else:
        if rng is None:
            raise ValueError("stochastic networks need a random generator")
        pots = layer_potentials(net, state.firing)
        nxt = np.zeros_like(state.firing)
        for l in range(1, net.layers_max + 1):
            draws = rng.random(net.n)
            nxt[l] = draws < firing_probability(pots[l] - act.bias, act.lam)
    nxt[0] = inp
    return NetworkState(nxt, state.time + 1)


@dataclass(frozen=True)
class OneShot:
    """Present a level-0 firing vector at a single time."""

    vector: np.ndarray
    start: int = 0

    def at(self, t: int) -> np.ndarray:
        return self.vector if t == self.start else np.zeros_like(self.vector)

    def constant_after(self, t: int) -> bool:
        return t > self.start


@dataclass(frozen=True)
class Persistent:
    """Present a level-0 firing vector at every time from ``start`` on."""

    vector: np.ndarray
    start: int = 0

    def at(self, t: int) -> np.ndarray:
        return self.vector if t >= self.start else np.zeros_like(self.vector)

    def constant_after(self, t: int) -> bool:
        return t > self.start


@dataclass
class ExecutionTrace:
    firing: np.ndarray  # bool, shape (T + 1, layers_max + 1, n)
    schedule: object
    stabilized_at: int | None = None  # set when the run stopped on a repeated state
    horizon: int = field(default=0)

    @property
    def last_time(self) -> int:
        return self.firing.shape[0] - 1

    def state(self, t: int) -> np.ndarray:
        """Firing at time t; beyond the last stored time, the stable state when one was reached."""
        if t <= self.last_time:
            return self.firing[t]
        if self.stabilized_at is None:
            raise IndexError(f"time {t} beyond the run")
        return self.firing[-1]

    def fired(self, layer: int, neuron: int, t: int) -> bool:
        return bool(self.state(t)[layer, neuron])

    def first_fire(self, layer: int, neuron: int) -> int | None:
        hits = np.flatnonzero(self.firing[:, layer, neuron])
        return int(hits[0]) if hits.size else None

    def first_fire_times(self, layer: int) -> np.ndarray:
        """First firing time per neuron of a layer, -1 for never."""
        col = self.firing[:, layer, :]
        any_ = col.any(axis=0)
        return np.where(any_, col.argmax(axis=0), -1)

    def to_dict(self) -> dict:
        """Per time, per layer firing bitvectors packed little-endian into hex strings."""
        packed = [
            [np.packbits(layer, bitorder="little").tobytes().hex() for layer in state]
            for state in self.firing
        ]
        return {"n": int(self.firing.shape[2]), "stabilized_at": self.stabilized_at, "states": packed}


def unpack_trace(data) -> np.ndarray:
    n = data["n"]
    states = [
        [np.unpackbits(np.frombuffer(bytes.fromhex(h), dtype=np.uint8), bitorder="little")[:n] for h in state]
        for state in data["states"]
    ]
    return np.array(states, dtype=bool)


def run(net: LayeredNetwork, schedule, horizon: int, stop_on_repeat: bool = False) -> ExecutionTrace:
    """Step from the quiet state over times 0..horizon.

    With ``stop_on_repeat`` a deterministic run ends early once the state and
    input both stop changing; the last stored state then holds forever.
    """
    rng = None
    if net.params.activation is not None:
        rng = np.random.default_rng(net.params.activation.seed)
        stop_on_repeat = False
    state = NetworkState.quiet(net)
    first = state.firing.copy()
    first[0] = schedule.at(0)
    state = NetworkState(first, 0)
    states = [first]
    stable = None
    for t in range(1, horizon + 1):
        state = step(net, state, schedule.at(t), rng)
        if stop_on_repeat and schedule.constant_after(t - 1) and np.array_equal(state.firing, states[-1]):
            stable = t - 1
            break
        states.append(state.firing)
    return ExecutionTrace(np.array(states), schedule, stable, horizon)


class SigmoidBounds(NamedTuple):
    delta_prime: float
    b1: float
    b2: float
    r1: float
    r2: float


def feasible_bias_range(lam: float, delta: float, k: int, lmax: int) -> tuple[float, float]:
    """Interval of biases for which the derived r1 >= 0 and r2 <= 1."""
    d = delta / k ** (lmax + 1)
    cut = lam * math.log((1 - d) / d)
    return cut, k - cut


def sigmoid_cutoffs(lam: float, bias: float, delta_prime: float, k: int, check: bool = True) -> SigmoidBounds:
    """Adjusted-potential cut points b1 < b2 with p(b1) = delta', p(b2) = 1 - delta', and r = (b + bias)/k."""
    if not 0 < delta_prime < 0.5:
        raise ValueError(f"delta' must lie in (0, 1/2), got {delta_prime}")
    if lam <= 0:
        raise ValueError(f"temperature must be positive, got {lam}")
    b1 = lam * math.log(delta_prime / (1 - delta_prime))
    b2 = lam * math.log((1 - delta_prime) / delta_prime)
    r1 = (b1 + bias) / k
    r2 = (b2 + bias) / k
    if check:
        residuals = {"r1 >= 0": r1, "r2 <= 1": 1 - r2}
        failed = [name for name, slack in residuals.items() if slack < 0]
        if failed:
            raise InfeasibleParameters(
                f"bias {bias} violates {', '.join(failed)} "
                f"(feasible bias range [{-b1:.6g}, {k - b2:.6g}])",
                residuals,
            )
    return SigmoidBounds(delta_prime, b1, b2, r1, r2)


def sigmoid_bounds(lam: float, bias: float, delta: float, k: int, lmax: int) -> SigmoidBounds:
    """Recognition fractions under which each rep misbehaves with probability at most delta/k^(lmax+1)."""
    if not 0 < delta < 1:
        raise ValueError(f"delta must lie in (0, 1), got {delta}")
    return sigmoid_cutoffs(lam, bias, delta / k ** (lmax + 1), k)
