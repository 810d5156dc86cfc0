"""Reverse-mode differentiation on a recorded tape of array primitives.

Every primitive stores its inputs, auxiliary constants, and output value, so
the tape can be replayed forward bit-exactly and walked backward with exact
adjoints. One tape belongs to a single forward/backward pair; independent
tapes may run on different threads.

Primitives: leaf, add, add_bias, mul, scale_rows, concat, linear, silu,
gather, segment_sum, sum_rows, edge_distances, edge_units, triplet_angles,
gaussian_rbf, angular_sbf, quadratic_well.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import basis as _basis
from . import graph as _graph


class TapeConsistencyError(RuntimeError):
    """Replaying the tape did not reproduce a recorded output bit-exactly."""


def silu(x: np.ndarray) -> np.ndarray:
    return x * _sigmoid(x)


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _silu_grad(x: np.ndarray) -> np.ndarray:
    s = _sigmoid(x)
    return s * (1.0 + x * (1.0 - s))


# Forward rules: fn(input_values, aux) -> value.
_FORWARD = {}
# Adjoint rules: fn(grad_out, input_values, value, aux) -> tuple of input grads.
_VJP = {}


def _op(name):
    def wrap(fns):
        fwd, vjp = fns
        _FORWARD[name] = fwd
        _VJP[name] = vjp
        return fns

    return wrap


_op("leaf")((lambda vals, aux: aux["value"], lambda g, vals, out, aux: ()))

_op("add")(
    (
        lambda vals, aux: vals[0] + vals[1],
        lambda g, vals, out, aux: (g, g),
    )
)

_op("add_bias")(
    (
        lambda vals, aux: vals[0] + vals[1][None, :],
        lambda g, vals, out, aux: (g, g.sum(axis=0)),
    )
)

_op("mul")(
    (
        lambda vals, aux: vals[0] * vals[1],
        lambda g, vals, out, aux: (g * vals[1], g * vals[0]),
    )
)

_op("scale_rows")(
    (
        lambda vals, aux: vals[0] * vals[1],
        lambda g, vals, out, aux: ((g * vals[1]).sum(axis=1, keepdims=True), g * vals[0]),
    )
)


def _concat_fwd(vals, aux):
    return np.concatenate([vals[0], vals[1]], axis=1)


def _concat_vjp(g, vals, out, aux):
    split = vals[0].shape[1]
    return g[:, :split], g[:, split:]


_op("concat")((_concat_fwd, _concat_vjp))


def _linear_fwd(vals, aux):
    y = vals[0] @ vals[1].T
    if len(vals) == 3:
        y = y + vals[2]
    return y


def _linear_vjp(g, vals, out, aux):
    gx = g @ vals[1]
    gw = g.T @ vals[0]
    if len(vals) == 3:
        return gx, gw, g.sum(axis=0)
    return gx, gw


_op("linear")((_linear_fwd, _linear_vjp))

_op("silu")(
    (
        lambda vals, aux: silu(vals[0]),
        lambda g, vals, out, aux: (g * _silu_grad(vals[0]),),
    )
)


def _gather_fwd(vals, aux):
    return vals[0][aux["idx"]]


def _gather_vjp(g, vals, out, aux):
    gx = np.zeros_like(vals[0])
    np.add.at(gx, aux["idx"], g)
    return (gx,)


_op("gather")((_gather_fwd, _gather_vjp))


def _segment_sum_fwd(vals, aux):
    x = vals[0]
    out = np.zeros((aux["num"],) + x.shape[1:], dtype=x.dtype)
    np.add.at(out, aux["seg"], x)
    return out


_op("segment_sum")(
    (
        _segment_sum_fwd,
        lambda g, vals, out, aux: (g[aux["seg"]],),
    )
)

_op("sum_rows")(
    (
        lambda vals, aux: vals[0].sum(axis=0, keepdims=True),
        lambda g, vals, out, aux: (np.broadcast_to(g, vals[0].shape).copy(),),
    )
)


def _edge_distances_fwd(vals, aux):
    return _graph.edge_distances(vals[0], aux["src"], aux["recv"])


def _edge_distances_vjp(g, vals, out, aux):
    unit = (vals[0][aux["recv"]] - vals[0][aux["src"]]) / out[:, None]
    contrib = g[:, None] * unit
    gx = np.zeros_like(vals[0])
    np.add.at(gx, aux["recv"], contrib)
    np.add.at(gx, aux["src"], -contrib)
    return (gx,)


_op("edge_distances")((_edge_distances_fwd, _edge_distances_vjp))


def _edge_units_fwd(vals, aux):
    return _graph.edge_unit_vectors(vals[0], aux["src"], aux["recv"])


def _edge_units_vjp(g, vals, out, aux):
    diff = vals[0][aux["recv"]] - vals[0][aux["src"]]
    d = np.sqrt((diff * diff).sum(axis=1))
    unit = diff / d[:, None]
    proj = (g * unit).sum(axis=1, keepdims=True)
    contrib = (g - proj * unit) / d[:, None]
    gx = np.zeros_like(vals[0])
    np.add.at(gx, aux["recv"], contrib)
    np.add.at(gx, aux["src"], -contrib)
    return (gx,)


_op("edge_units")((_edge_units_fwd, _edge_units_vjp))


def _triplet_angles_fwd(vals, aux):
    return _graph.triplet_angles(vals[0], aux["topology"])


def _triplet_angles_vjp(g, vals, out, aux):
    topo = aux["topology"]
    g_k, g_j, g_i = _graph.angle_gradients(vals[0], topo)
    k = topo.edge_src[topo.trip_in]
    j = topo.edge_recv[topo.trip_in]
    i = topo.edge_recv[topo.trip_out]
    gx = np.zeros_like(vals[0])
    np.add.at(gx, k, g[:, None] * g_k)
    np.add.at(gx, i, g[:, None] * g_i)
    np.add.at(gx, j, g[:, None] * g_j)
    return (gx,)


_op("triplet_angles")((_triplet_angles_fwd, _triplet_angles_vjp))


def _gaussian_rbf_fwd(vals, aux):
    return _basis.rbf_features(vals[0], aux["k_rbf"], aux["cutoff"])


def _gaussian_rbf_vjp(g, vals, out, aux):
    drad = _basis.rbf_features_ddist(vals[0], aux["k_rbf"], aux["cutoff"])
    return ((g * drad).sum(axis=1),)


_op("gaussian_rbf")((_gaussian_rbf_fwd, _gaussian_rbf_vjp))


def _angular_sbf_fwd(vals, aux):
    return _basis.sbf_features(vals[0], vals[1], aux["k_rbf"], aux["l_sbf"], aux["cutoff"])


def _angular_sbf_vjp(g, vals, out, aux):
    d_dist, d_ang = _basis.sbf_features_partials(
        vals[0], vals[1], aux["k_rbf"], aux["l_sbf"], aux["cutoff"]
    )
    return (g * d_dist).sum(axis=1), (g * d_ang).sum(axis=1)


_op("angular_sbf")((_angular_sbf_fwd, _angular_sbf_vjp))

_op("quadratic_well")(
    (
        lambda vals, aux: ((vals[0] - aux["center"]) ** 2)[:, None],
        lambda g, vals, out, aux: (2.0 * g[:, 0] * (vals[0] - aux["center"]),),
    )
)


@dataclass
class _Node:
    op: str
    inputs: tuple[int, ...]
    value: np.ndarray
    aux: dict


class Tape:
    """Records primitives during a forward pass; owns one backward pass."""

    def __init__(self):
        self._nodes: list[_Node] = []

    def __len__(self) -> int:
        return len(self._nodes)

    def value(self, nid: int) -> np.ndarray:
        return self._nodes[nid].value

    def _record(self, op: str, inputs: tuple[int, ...], aux: dict) -> int:
        vals = [self._nodes[i].value for i in inputs]
        value = _FORWARD[op](vals, aux)
        self._nodes.append(_Node(op, inputs, value, aux))
        return len(self._nodes) - 1

    # -- recording API ------------------------------------------------

    def leaf(self, value: np.ndarray) -> int:
        arr = np.asarray(value, dtype=np.float64)
        return self._record("leaf", (), {"value": arr})

    def add(self, a: int, b: int) -> int:
        return self._record("add", (a, b), {})

    def add_bias(self, x: int, b: int) -> int:
        return self._record("add_bias", (x, b), {})

    def mul(self, a: int, b: int) -> int:
        return self._record("mul", (a, b), {})

    def scale_rows(self, scale: int, mat: int) -> int:
        return self._record("scale_rows", (scale, mat), {})

    def concat(self, a: int, b: int) -> int:
        return self._record("concat", (a, b), {})

    def linear(self, x: int, w: int, b: int | None = None) -> int:
        inputs = (x, w) if b is None else (x, w, b)
        return self._record("linear", inputs, {})

    def silu(self, x: int) -> int:
        return self._record("silu", (x,), {})

    def gather(self, x: int, idx: np.ndarray) -> int:
        return self._record("gather", (x,), {"idx": np.asarray(idx, dtype=np.int64)})

    def segment_sum(self, x: int, seg: np.ndarray, num: int) -> int:
        return self._record(
            "segment_sum", (x,), {"seg": np.asarray(seg, dtype=np.int64), "num": int(num)}
        )

    def sum_rows(self, x: int) -> int:
        return self._record("sum_rows", (x,), {})

    def edge_distances(self, positions: int, src: np.ndarray, recv: np.ndarray) -> int:
        return self._record("edge_distances", (positions,), {"src": src, "recv": recv})

    def edge_units(self, positions: int, src: np.ndarray, recv: np.ndarray) -> int:
        return self._record("edge_units", (positions,), {"src": src, "recv": recv})

    def triplet_angles(self, positions: int, topology) -> int:
        return self._record("triplet_angles", (positions,), {"topology": topology})

    def gaussian_rbf(self, distances: int, k_rbf: int, cutoff: float) -> int:
        return self._record("gaussian_rbf", (distances,), {"k_rbf": k_rbf, "cutoff": cutoff})

    def angular_sbf(self, in_dist: int, angles: int, k_rbf: int, l_sbf: int, cutoff: float) -> int:
        return self._record(
            "angular_sbf", (in_dist, angles), {"k_rbf": k_rbf, "l_sbf": l_sbf, "cutoff": cutoff}
        )

    def quadratic_well(self, distances: int, center: float) -> int:
        return self._record("quadratic_well", (distances,), {"center": center})

    # -- replay and backward ------------------------------------------

    def verify_replay(self) -> None:
        """Re-run every primitive from its inputs; demand bit-exact outputs."""
        for nid, node in enumerate(self._nodes):
            vals = [self._nodes[i].value for i in node.inputs]
            redo = _FORWARD[node.op](vals, node.aux)
            same = redo.shape == node.value.shape and np.array_equal(redo, node.value)
            if not same:
                raise TapeConsistencyError(f"node {nid} ({node.op}) replay mismatch")

    def backward(
        self, seeds: dict[int, np.ndarray], check_replay: bool = False
    ) -> list[np.ndarray | None]:
        """Accumulate adjoints for every node reachable from the seeds.

        ``seeds`` maps node id to the upstream gradient of that node's
        output. Returns a per-node list of gradients (None where no
        gradient flowed). Accumulation runs in reverse recording order,
        which makes the result deterministic.
        """
        if check_replay:
            self.verify_replay()
        grads: list[np.ndarray | None] = [None] * len(self._nodes)
        for nid, seed in seeds.items():
            seed = np.asarray(seed, dtype=np.float64)
            if seed.shape != self._nodes[nid].value.shape:
                raise ValueError(
                    f"seed shape {seed.shape} does not match node {nid} "
                    f"value shape {self._nodes[nid].value.shape}"
                )
            grads[nid] = seed.copy() if grads[nid] is None else grads[nid] + seed
        for nid in range(len(self._nodes) - 1, -1, -1):
            g = grads[nid]
            node = self._nodes[nid]
            if g is None or node.op == "leaf":
                continue
            vals = [self._nodes[i].value for i in node.inputs]
            input_grads = _VJP[node.op](g, vals, node.value, node.aux)
            for iid, ig in zip(node.inputs, input_grads):
                if ig is None:
                    continue
                if grads[iid] is None:
                    grads[iid] = ig.copy()
                else:
                    grads[iid] = grads[iid] + ig
        return grads
