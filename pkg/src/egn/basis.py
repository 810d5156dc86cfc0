"""Radial and angular basis features for edges and triplets.

The radial basis is a Gaussian comb on [0, cutoff] with gamma = (K/cutoff)^2;
the angular basis is cos(l * angle) for l = 0..L-1. Both depend only on
distances and angles, so features are invariant under rigid motion.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .graph import Geometry, GraphTopology


@dataclass(frozen=True)
class BasisFeatures:
    edge_rbf: np.ndarray  # (N_e, K)
    triplet_sbf: np.ndarray  # (N_t, K * L)


def rbf_centers(k_rbf: int, cutoff: float) -> np.ndarray:
    if k_rbf < 1:
        raise ValueError("k_rbf must be >= 1")
    if k_rbf == 1:
        return np.zeros(1, dtype=np.float64)
    return np.linspace(0.0, cutoff, k_rbf)


def rbf_gamma(k_rbf: int, cutoff: float) -> float:
    return (k_rbf / cutoff) ** 2


def rbf_features(distances: np.ndarray, k_rbf: int, cutoff: float) -> np.ndarray:
    """Gaussian radial features, entry (e, k) = exp(-gamma (d_e - c_k)^2)."""
    d = np.asarray(distances, dtype=np.float64)
    if d.size and (np.any(d <= 0.0) or np.any(d > cutoff)):
        raise ValueError("distances must lie in (0, cutoff]")
    centers = rbf_centers(k_rbf, cutoff)
    gamma = rbf_gamma(k_rbf, cutoff)
    return np.exp(-gamma * (d[:, None] - centers[None, :]) ** 2)


def rbf_features_ddist(distances: np.ndarray, k_rbf: int, cutoff: float) -> np.ndarray:
    """Derivative of each radial feature with respect to its distance."""
    d = np.asarray(distances, dtype=np.float64)
    centers = rbf_centers(k_rbf, cutoff)
    gamma = rbf_gamma(k_rbf, cutoff)
    delta = d[:, None] - centers[None, :]
    return -2.0 * gamma * delta * np.exp(-gamma * delta**2)


def sbf_features(
    in_edge_distances: np.ndarray,
    angles: np.ndarray,
    k_rbf: int,
    l_sbf: int,
    cutoff: float,
) -> np.ndarray:
    """Outer product of radial features of d_kj and cos(l * angle), flattened.

    Row layout: entry (t, k * l_sbf + l) = rbf_k(d_kj) * cos(l * angle_t).
    """
    if l_sbf < 1:
        raise ValueError("l_sbf must be >= 1")
    ang = np.asarray(angles, dtype=np.float64)
    if ang.size and (np.any(ang < -1e-12) or np.any(ang > np.pi + 1e-12)):
        raise ValueError("angles must lie in [0, pi]")
    radial = rbf_features(in_edge_distances, k_rbf, cutoff)  # (N, K)
    orders = np.arange(l_sbf, dtype=np.float64)
    angular = np.cos(ang[:, None] * orders[None, :])  # (N, L)
    return (radial[:, :, None] * angular[:, None, :]).reshape(ang.shape[0], k_rbf * l_sbf)


def sbf_features_partials(
    in_edge_distances: np.ndarray,
    angles: np.ndarray,
    k_rbf: int,
    l_sbf: int,
    cutoff: float,
):
    """Partial derivatives of the flattened SBF row w.r.t. (d_kj, angle)."""
    ang = np.asarray(angles, dtype=np.float64)
    n = ang.shape[0]
    radial = rbf_features(in_edge_distances, k_rbf, cutoff)
    dradial = rbf_features_ddist(in_edge_distances, k_rbf, cutoff)
    orders = np.arange(l_sbf, dtype=np.float64)
    angular = np.cos(ang[:, None] * orders[None, :])
    dangular = -orders[None, :] * np.sin(ang[:, None] * orders[None, :])
    d_dist = (dradial[:, :, None] * angular[:, None, :]).reshape(n, k_rbf * l_sbf)
    d_ang = (radial[:, :, None] * dangular[:, None, :]).reshape(n, k_rbf * l_sbf)
    return d_dist, d_ang


def compute_basis(
    geometry: Geometry, topology: GraphTopology, k_rbf: int, l_sbf: int, cutoff: float
) -> BasisFeatures:
    """Evaluate edge and triplet basis features for a built graph."""
    edge_rbf = rbf_features(geometry.distances, k_rbf, cutoff)
    in_dist = geometry.distances[topology.trip_in]
    triplet_sbf = sbf_features(in_dist, geometry.angles, k_rbf, l_sbf, cutoff)
    return BasisFeatures(edge_rbf, triplet_sbf)
