"""Finite-difference gradient checking for every differentiable operation,
shared by the test suite and the ``check`` CLI subcommand.
"""

from __future__ import annotations

import numpy as np

from .autodiff import Tensor, softmax_cross_entropy, tmax, tsum
from .nn import (AffineLayer, BatchNormState, affine, batch_norm, maxsub_pointlayer, mlp)
from .skpconv import GraphNeighborhood, kpconv_forward, make_kernel_layout, skpconv_forward
from .voting import classify_clusters, cluster_votes, predict_votes, vote_loss, VoteConfig


def finite_difference_check(build_loss, tensors, h=1e-4, rtol=1e-3, atol=1e-7):
    """Central finite differences against reverse-mode gradients.

    ``build_loss`` must rebuild the scalar loss from the live tensor values
    on every call. Returns the worst relative error over all elements.
    """
    loss = build_loss()
    for t in tensors:
        t.zero_grad()
    loss.backward()
    worst = 0.0
    for t in tensors:
        analytic = t.grad.copy()
        flat = t.data.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            up = build_loss().item()
            flat[i] = orig - h
            down = build_loss().item()
            flat[i] = orig
            numeric = (up - down) / (2 * h)
            a = analytic.reshape(-1)[i]
            err = abs(a - numeric) / max(abs(numeric), abs(a), atol / rtol)
            worst = max(worst, err)
    return worst


def _params(rng, *shapes):
    return [Tensor(rng.normal(size=s) if s else rng.normal(), requires_grad=True)
            for s in shapes]


def _random_parts(rng, n):
    """Stand-in parts with valid local frames, for the vote-head check."""
    from .partgraph import Part

    parts = []
    for i in range(n):
        e3 = rng.normal(size=3)
        e3 /= np.linalg.norm(e3)
        horizontal = e3 - e3[2] * np.array([0.0, 0.0, 1.0])
        v1 = horizontal / np.linalg.norm(horizontal)
        v3 = np.array([0.0, 0.0, 1.0])
        lrf = np.stack([v1, np.cross(v3, v1), v3])
        parts.append(Part(np.arange(1), rng.normal(size=3), 1.0, i, lrf=lrf, normal=e3))
    return parts


def gradient_suite(seeds=range(20), h=1e-4, rtol=1e-3):
    """Yield (operation name, worst relative error, pass flag) per op."""
    results = []

    def run(name, one_seed):
        worst = max(one_seed(np.random.default_rng(1000 + s)) for s in seeds)
        results.append((name, worst, worst <= rtol))

    def check_affine(rng):
        x, w, b = _params(rng, (3, 4), (4, 2), (2,))
        return finite_difference_check(lambda: tsum(affine(x, w, b)), [x, w, b], h, rtol)

    def check_maxsub(rng):
        x, w, b, lam = _params(rng, (2, 5, 3), (3, 4), (4,), ())
        return finite_difference_check(
            lambda: tsum(maxsub_pointlayer(x, w, b, lam)), [x, w, b, lam], h, rtol)

    def check_batch_norm(rng):
        x, gamma, beta = _params(rng, (4, 3), (3,), (3,))
        state = BatchNormState(gamma, beta, np.zeros(3), np.ones(3))
        return finite_difference_check(
            lambda: tsum(batch_norm(x, state, training=True)), [x, gamma, beta], h, rtol)

    def check_softmax_ce(rng):
        (logits,) = _params(rng, (5, 3))
        labels = rng.integers(0, 3, size=5)
        return finite_difference_check(
            lambda: softmax_cross_entropy(logits, labels), [logits], h, rtol)

    def make_conv_case(rng):
        centers = rng.normal(size=(5, 3))
        nbrs = GraphNeighborhood(
            neighbors=[sorted(set(rng.integers(0, 5, size=3).tolist()) - {i})
                       for i in range(5)],
            rotations=np.stack([np.eye(3)] * 5),
        )
        layout = make_kernel_layout(4, 0.9)
        feats, weights = _params(rng, (5, 3), (4, 3, 2))
        return centers, nbrs, layout, feats, weights

    def check_kpconv(rng):
        centers, nbrs, layout, feats, weights = make_conv_case(rng)
        return finite_difference_check(
            lambda: tsum(kpconv_forward(centers, feats, nbrs, layout, weights)),
            [feats, weights], h, rtol)

    def check_skpconv(rng):
        centers, nbrs, layout, feats, weights = make_conv_case(rng)
        return finite_difference_check(
            lambda: tsum(skpconv_forward(centers, feats, nbrs, layout, weights)),
            [feats, weights], h, rtol)

    def check_vote_head(rng):
        parts = _random_parts(rng, 4)
        feats, w0, b0, w1, b1 = _params(rng, (4, 6), (6, 3), (3,), (3, 3), (3,))
        head = [AffineLayer(w0, b0), AffineLayer(w1, b1)]

        def loss():
            return vote_loss(predict_votes(feats, parts, head, scale=1.5))

        return finite_difference_check(loss, [feats, w0, b0, w1, b1], h, rtol)

    def check_cluster_classifier(rng):
        parts = _random_parts(rng, 6)
        feats, w0, b0, w1, b1 = _params(rng, (6, 5), (5, 3), (3,), (3, 2), (2,))
        head = [AffineLayer(w0, b0), AffineLayer(w1, b1)]
        # zero vote head keeps cluster membership fixed while feats move
        zero_head = [AffineLayer(Tensor(np.zeros((5, 3))), Tensor(np.zeros(3)))]

        def loss():
            votes = predict_votes(feats, parts, zero_head, scale=1.0)
            clusters = cluster_votes(votes, VoteConfig(num_clusters=2, cluster_radius=5.0))
            classify_clusters(clusters, feats, head)
            return softmax_cross_entropy(clusters[0].logits, [1])

        return finite_difference_check(loss, [feats, w0, b0, w1, b1], h, rtol)

    run("affine", check_affine)
    run("maxsub_pointlayer", check_maxsub)
    run("batch_norm", check_batch_norm)
    run("softmax_cross_entropy", check_softmax_ce)
    run("kpconv_forward", check_kpconv)
    run("skpconv_forward", check_skpconv)
    run("vote_head", check_vote_head)
    run("cluster_classifier", check_cluster_classifier)
    return results
