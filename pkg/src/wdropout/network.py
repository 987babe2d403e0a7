"""Dense feed-forward network engine in plain numpy.

Float64 throughout.  Hidden layers are ReLU; dropout (inverted scaling,
``kept / (1 - drop_rate)``) acts on hidden activations only, never on the
input or the output layer.  A model carries either a ``point`` head
(``m`` outputs) or a ``gaussian`` head (``2m`` outputs: the first ``m``
are means, the last ``m`` are raw scale values to be squashed by the
loss / predictor).

Several stochastic forward passes are evaluated at once: masks are
stacked along a leading axis, activations become ``(n_masks, n_points,
width)`` tensors and every pass shares the same matrix multiplies.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

__all__ = [
    "HEAD_POINT",
    "HEAD_GAUSSIAN",
    "Mlp",
    "DropoutMask",
    "Gradients",
    "AdamState",
    "init_mlp",
    "sample_mask",
    "sample_masks",
    "forward",
    "forward_pass",
    "backward_pass",
    "adam_step",
    "split_gaussian_head",
    "save_model",
    "load_model",
]

HEAD_POINT = "point"
HEAD_GAUSSIAN = "gaussian"


@dataclass
class Mlp:
    """Weights ``(out, in)`` and biases ``(out,)`` per layer, plus head kind."""

    weights: list
    biases: list
    head: str = HEAD_POINT
    drop_rate: float = 0.0

    @property
    def n_layers(self) -> int:
        return len(self.weights)

    @property
    def n_inputs(self) -> int:
        return self.weights[0].shape[1]

    @property
    def n_outputs(self) -> int:
        """Width of the output layer (``2m`` for a gaussian head)."""
        return self.weights[-1].shape[0]

    @property
    def n_targets(self) -> int:
        """Dimension ``m`` of the regression target."""
        out = self.n_outputs
        return out // 2 if self.head == HEAD_GAUSSIAN else out

    @property
    def layer_sizes(self) -> tuple:
        return (self.n_inputs,) + tuple(w.shape[0] for w in self.weights)

    @property
    def hidden_sizes(self) -> tuple:
        return tuple(w.shape[0] for w in self.weights[:-1])

    def validate(self) -> None:
        if not self.weights or len(self.weights) != len(self.biases):
            raise ValueError("weights and biases must be non-empty and aligned")
        if self.head not in (HEAD_POINT, HEAD_GAUSSIAN):
            raise ValueError(f"unknown head kind: {self.head!r}")
        if not 0.0 <= self.drop_rate < 1.0:
            raise ValueError(f"drop_rate must be in [0, 1), got {self.drop_rate}")
        prev = self.n_inputs
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.ndim != 2 or b.ndim != 1 or w.shape[0] != b.shape[0]:
                raise ValueError(f"layer {i}: weight/bias shapes inconsistent")
            if w.shape[1] != prev:
                raise ValueError(
                    f"layer {i}: expected fan-in {prev}, got {w.shape[1]}"
                )
            if not (np.isfinite(w).all() and np.isfinite(b).all()):
                raise ValueError(f"layer {i}: non-finite parameters")
            prev = w.shape[0]
        if self.head == HEAD_GAUSSIAN and self.n_outputs % 2:
            raise ValueError("gaussian head needs an even output width")


@dataclass
class DropoutMask:
    """Stacked keep indicators, one ``(n_masks, width)`` array per hidden layer.

    With ``per_sample=False`` the leading axis enumerates sub-networks:
    every mask is applied to the whole batch and the forward pass is
    stacked ``n_masks`` high.  With ``per_sample=True`` the leading axis
    enumerates batch rows instead — standard dropout, one independent
    mask per training point, single stacked pass.
    """

    keep: tuple
    rescale: float
    per_sample: bool = False

    @property
    def n_masks(self) -> int:
        return 1 if not self.keep else self.keep[0].shape[0]


@dataclass
class Gradients:
    weights: list
    biases: list

    def all_finite(self) -> bool:
        return all(np.isfinite(g).all() for g in self.weights) and all(
            np.isfinite(g).all() for g in self.biases
        )


def init_mlp(layer_sizes, head=HEAD_POINT, drop_rate=0.0, rng=None) -> Mlp:
    """Build a model with He-normal hidden layers and a Glorot-uniform output.

    ``layer_sizes`` is ``[n_inputs, hidden..., m]`` where ``m`` is the target
    dimension; a gaussian head widens the final layer to ``2m`` internally.
    Biases start at zero.
    """
    sizes = [int(s) for s in layer_sizes]
    if len(sizes) < 3:
        raise ValueError("need at least [n_inputs, one hidden layer, n_targets]")
    if any(s < 1 for s in sizes):
        raise ValueError(f"all layer sizes must be >= 1, got {sizes}")
    if head not in (HEAD_POINT, HEAD_GAUSSIAN):
        raise ValueError(f"unknown head kind: {head!r}")
    if not 0.0 <= drop_rate < 1.0:
        raise ValueError(f"drop_rate must be in [0, 1), got {drop_rate}")
    if rng is None:
        rng = np.random.default_rng()

    out_sizes = sizes[1:]
    if head == HEAD_GAUSSIAN:
        out_sizes = out_sizes[:-1] + [2 * out_sizes[-1]]

    weights, biases = [], []
    fan_in = sizes[0]
    for i, fan_out in enumerate(out_sizes):
        if i < len(out_sizes) - 1:
            std = np.sqrt(2.0 / fan_in)
            w = rng.standard_normal((fan_out, fan_in)) * std
        else:
            limit = np.sqrt(6.0 / (fan_in + fan_out))
            w = rng.uniform(-limit, limit, size=(fan_out, fan_in))
        weights.append(np.asarray(w, dtype=np.float64))
        biases.append(np.zeros(fan_out, dtype=np.float64))
        fan_in = fan_out
    return Mlp(weights=weights, biases=biases, head=head, drop_rate=drop_rate)


def sample_masks(model: Mlp, rng, n_masks: int = 1, per_sample: bool = False) -> DropoutMask:
    """Draw ``n_masks`` independent inverted-dropout masks for the hidden layers.

    ``per_sample=True`` marks the masks as row-aligned with the input
    batch (``n_masks`` must then equal the number of rows fed to
    :func:`forward_pass`).
    """
    if n_masks < 1:
        raise ValueError("n_masks must be >= 1")
    p = model.drop_rate
    keep = tuple(
        (rng.random((n_masks, w.shape[0])) >= p).astype(np.float64)
        for w in model.weights[:-1]
    )
    return DropoutMask(keep=keep, rescale=1.0 / (1.0 - p), per_sample=per_sample)


def sample_mask(model: Mlp, rng) -> DropoutMask:
    return sample_masks(model, rng, 1)


def _mask_gate(mask: DropoutMask, k: int):
    """Keep indicators of hidden layer ``k`` aligned with ``(L, n, width)``."""
    return mask.keep[k][None, :, :] if mask.per_sample else mask.keep[k][:, None, :]


def forward_pass(model: Mlp, X, mask: DropoutMask | None = None, keep_cache=False):
    """Run ``X (n, d)`` through the net under each mask.

    Returns ``(preds, cache)`` with ``preds`` of shape
    ``(n_masks, n, n_outputs)`` (``n_masks = 1`` without a mask, i.e. the
    deterministic full network).  ``cache`` (if requested) holds what
    :func:`backward_pass` needs.
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != model.n_inputs:
        raise ValueError(f"expected X of shape (n, {model.n_inputs}), got {X.shape}")
    n_hidden = model.n_layers - 1
    if mask is not None and len(mask.keep) != n_hidden:
        raise ValueError("mask does not match the number of hidden layers")
    if mask is not None and mask.per_sample and mask.n_masks != X.shape[0]:
        raise ValueError(
            f"per-sample mask covers {mask.n_masks} rows, X has {X.shape[0]}"
        )

    L = 1 if mask is None or mask.per_sample else mask.n_masks
    a = np.broadcast_to(X[None, :, :], (L,) + X.shape)
    inputs, zs = [a], []
    for k in range(n_hidden):
        z = a @ model.weights[k].T + model.biases[k]
        h = np.maximum(z, 0.0)
        if mask is not None:
            h = h * (_mask_gate(mask, k) * mask.rescale)
        if keep_cache:
            zs.append(z)
            inputs.append(h)
        a = h
    preds = a @ model.weights[-1].T + model.biases[-1]
    cache = {"inputs": inputs, "zs": zs, "mask": mask} if keep_cache else None
    return preds, cache


def forward(model: Mlp, x, mask: DropoutMask | None = None):
    """Convenience wrapper: single points map to single outputs.

    ``x`` may be ``(d,)`` or ``(n, d)``.  Without a mask (or with a single
    mask) the leading mask axis is squeezed away.
    """
    x = np.asarray(x, dtype=np.float64)
    single_point = x.ndim == 1
    preds, _ = forward_pass(model, x[None, :] if single_point else x, mask)
    if single_point:
        preds = preds[:, 0, :]
    if preds.shape[0] == 1:
        preds = preds[0]
    return preds


def backward_pass(model: Mlp, cache, dpreds) -> Gradients:
    """Reverse-mode gradients of a scalar objective w.r.t. all parameters.

    ``dpreds`` is the adjoint of the stacked predictions returned by
    :func:`forward_pass` (same shape).  Contributions are summed over the
    mask and batch axes, so any averaging convention lives in the adjoint.
    """
    inputs, zs, mask = cache["inputs"], cache["zs"], cache["mask"]
    n_hidden = model.n_layers - 1
    dz = np.asarray(dpreds, dtype=np.float64)
    L = dz.shape[0]

    dweights = [None] * model.n_layers
    dbiases = [None] * model.n_layers
    for k in range(model.n_layers - 1, -1, -1):
        a_in = np.broadcast_to(inputs[k], (L,) + inputs[k].shape[1:])
        out_w = dz.shape[-1]
        dweights[k] = dz.reshape(-1, out_w).T @ a_in.reshape(-1, a_in.shape[-1])
        dbiases[k] = dz.sum(axis=(0, 1))
        if k > 0:
            da = dz @ model.weights[k]
            if mask is not None:
                da = da * (_mask_gate(mask, k - 1) * mask.rescale)
            dz = da * (zs[k - 1] > 0.0)
    return Gradients(weights=dweights, biases=dbiases)


def split_gaussian_head(preds):
    """Split raw gaussian-head outputs ``(..., 2m)`` into ``(mean, raw_scale)``."""
    m = preds.shape[-1] // 2
    if preds.shape[-1] != 2 * m:
        raise ValueError("gaussian head output width must be even")
    return preds[..., :m], preds[..., m:]


def save_model(model: Mlp, path) -> None:
    """Persist parameters and head metadata to a ``.npz`` file."""
    arrays = {"meta": np.array(
        json.dumps({"head": model.head, "drop_rate": model.drop_rate})
    )}
    for i, (w, b) in enumerate(zip(model.weights, model.biases)):
        arrays[f"w{i}"] = w
        arrays[f"b{i}"] = b
    np.savez(path, **arrays)


def load_model(path) -> Mlp:
    with np.load(path, allow_pickle=False) as data:
        meta = json.loads(str(data["meta"]))
        weights, biases = [], []
        i = 0
        while f"w{i}" in data:
            weights.append(np.asarray(data[f"w{i}"], dtype=np.float64))
            biases.append(np.asarray(data[f"b{i}"], dtype=np.float64))
            i += 1
    model = Mlp(
        weights=weights,
        biases=biases,
        head=meta["head"],
        drop_rate=float(meta["drop_rate"]),
    )
    model.validate()
    return model


@dataclass
class AdamState:
    """First/second moment accumulators mirroring a model's parameter lists."""

    lr: float
    beta1: float
    beta2: float
    eps: float
    t: int
    m_w: list
    v_w: list
    m_b: list
    v_b: list

    @classmethod
    def for_model(cls, model: Mlp, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        return cls(
            lr=lr,
            beta1=beta1,
            beta2=beta2,
            eps=eps,
            t=0,
            m_w=[np.zeros_like(w) for w in model.weights],
            v_w=[np.zeros_like(w) for w in model.weights],
            m_b=[np.zeros_like(b) for b in model.biases],
            v_b=[np.zeros_like(b) for b in model.biases],
        )


def adam_step(state: AdamState, model: Mlp, grads: Gradients) -> None:
    """One bias-corrected Adam update, in place.

    Raises ``ValueError`` on non-finite gradients before touching any
    parameter, so a failed step leaves model and state unchanged.
    """
    if not grads.all_finite():
        raise ValueError(f"non-finite gradients at step {state.t + 1}")
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**state.t
    c2 = 1.0 - b2**state.t
    for params, gs, ms, vs in (
        (model.weights, grads.weights, state.m_w, state.v_w),
        (model.biases, grads.biases, state.m_b, state.v_b),
    ):
        for p, g, m, v in zip(params, gs, ms, vs):
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * np.square(g)
            p -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
