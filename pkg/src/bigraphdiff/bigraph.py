"""Bipartite cross-stream graph reasoning.

One stream's per-frame features are projected into a graph space defined
by the other stream, smoothed through a learned fully connected graph,
and projected back with a residual connection.  The block is applied
symmetrically in both directions with separate parameters.

Features are handled in channels x nodes layout; nodes are frames.  The
adjacency and edge-weight matrices have a fixed size (the padded graph
length), so shorter sequences are zero-padded on the graph path and
recover their true values through the residual.
"""

import numpy as np

from .autodiff import Tensor, affine, concat
from .errors import ShapeError


class BipartiteGraphParams:
    """Parameters of one bipartite graph block (both directions).

    Direction "a" updates stream a using a graph space defined by stream
    b, and vice versa.  graph_len is the fixed node count both A and W
    are sized for.
    """

    def __init__(self, store, prefix, channels_in, channels, graph_len, rng):
        self.channels_in = channels_in
        self.channels = channels
        self.graph_len = graph_len
        self.names = {}

        def reducer(key):
            # per-node affine map, the 1x1 convolution
            w = rng.normal(0.0, 0.02, size=(channels_in, channels))
            self.names[key + ".w"] = store.add(f"{prefix}.{key}.w", w).name
            self.names[key + ".b"] = store.add(f"{prefix}.{key}.b", np.zeros(channels)).name

        def back_projection(key):
            # zero-init so the whole block starts as the identity
            self.names[key + ".w"] = store.add(
                f"{prefix}.{key}.w", np.zeros((channels, channels_in))
            ).name
            self.names[key + ".b"] = store.add(f"{prefix}.{key}.b", np.zeros(channels_in)).name

        for d in ("a", "b"):
            reducer(f"phi_{d}")
            reducer(f"theta_{d}")
            back_projection(f"out_{d}")
            self.names[f"A_{d}"] = store.add(
                f"{prefix}.A_{d}", rng.normal(0.0, 0.02, size=(graph_len, graph_len))
            ).name
            self.names[f"W_{d}"] = store.add(
                f"{prefix}.W_{d}", rng.normal(0.0, 0.02, size=(graph_len, graph_len))
            ).name

        self._store = store

    def tensor(self, key):
        return self._store[self.names[key]]


def _node_affine(F, w, b):
    """Apply a per-node (1x1) map to channels x nodes features."""
    return affine(F.T, w, b).T


def project_to_graph(F_a, F_b, params, direction="a"):
    """V = theta_other(F_other) . phi_dir(F_dir); also returns H_other."""
    other = "b" if direction == "a" else "a"
    if F_a.shape[0] != params.channels_in or F_b.shape[0] != params.channels_in:
        raise ShapeError(
            f"expected {params.channels_in} channels, got {F_a.shape} and {F_b.shape}"
        )
    F_dir, F_other = (F_a, F_b) if direction == "a" else (F_b, F_a)
    phi = _node_affine(F_dir, params.tensor(f"phi_{direction}.w"), params.tensor(f"phi_{direction}.b"))
    H_other = _node_affine(F_other, params.tensor(f"theta_{other}.w"), params.tensor(f"theta_{other}.b"))
    V = H_other.T @ phi
    return V, H_other


def graph_reason(V, params, direction="a"):
    """Graph convolution with Laplacian-style smoothing: (I - A) V W."""
    A = params.tensor(f"A_{direction}")
    W = params.tensor(f"W_{direction}")
    if V.shape[0] != A.shape[0] or V.shape[1] != W.shape[0]:
        raise ShapeError(f"graph_reason: V {V.shape} vs A {A.shape}, W {W.shape}")
    eye = Tensor(np.eye(A.shape[0]))
    return (eye - A) @ V @ W


def project_back(M, H_other, F_dir, params, direction="a"):
    """Map graph features back to channel space and add the residual."""
    back = _node_affine(H_other @ M, params.tensor(f"out_{direction}.w"), params.tensor(f"out_{direction}.b"))
    return back + F_dir


def _one_direction(F_dir, F_other, params, direction):
    if direction == "a":
        V, H = project_to_graph(F_dir, F_other, params, "a")
    else:
        V, H = project_to_graph(F_other, F_dir, params, "b")
    M = graph_reason(V, params, direction)
    return project_back(M, H, F_dir, params, direction)


def bigraph_forward(S_a, S_b, params):
    """Update both frame x width streams through the graph block.

    Streams are transposed to channels x nodes, zero-padded to the fixed
    graph length, processed in both directions, then cropped back.
    """
    if S_a.shape != S_b.shape:
        raise ShapeError(f"stream shapes differ: {S_a.shape} vs {S_b.shape}")
    n, width = S_a.shape
    L = params.graph_len
    if n > L:
        raise ShapeError(f"sequence length {n} exceeds graph length {L}")

    def pad(S):
        F = S.T  # channels x nodes
        if n == L:
            return F
        return concat([F, Tensor(np.zeros((width, L - n)))], axis=1)

    F_a, F_b = pad(S_a), pad(S_b)
    out_a = _one_direction(F_a, F_b, params, "a")
    out_b = _one_direction(F_b, F_a, params, "b")
    return out_a.narrow(1, 0, n).T, out_b.narrow(1, 0, n).T
