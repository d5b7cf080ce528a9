"""Recurrent conditional VAE forecasting human controls.

The encoder is a GRU run over the history window. The posterior continues it
over the future steps (candidate robot controls and target human controls)
and maps the final state to μ and log σ². The decoder starts from
``tanh(W_init·h_hist + b_init)`` and unrolls one GRU step per future step on
``[z, candidate control, context]``.

Every weight matrix and bias is its own parameter group, so federated rates
are assigned layer-wise.
"""

from __future__ import annotations

import logging
from typing import Any, Dict, List, Optional, Tuple

import numpy as np

from src.autodiff.tape import Tape, Var, bind_params, collect_grad
from src.config.experiment import CvaeConfig
from src.forecast.features import (
    N_FEATURES,
    ForecastBatch,
    SequenceSample,
    denormalize_controls,
    future_rows,
    normalize_controls,
)
from src.params.store import ParamLayout, ParamVector
from src.sim.mpc import ForecastContext
from src.utils.errors import ContractViolation

log = logging.getLogger(__name__)

LOGVAR_FLOOR = -20.0
GATES = ("z", "r", "h")


def _gru_groups(prefix: str, n_in: int, hidden: int) -> List[Tuple[str, Tuple[int, ...]]]:
    groups = []
    for gate in GATES:
        groups += [
            (f"{prefix}_W{gate}", (n_in, hidden)),
            (f"{prefix}_U{gate}", (hidden, hidden)),
            (f"{prefix}_b{gate}", (hidden,)),
        ]
    return groups


def decoder_input_size(config: CvaeConfig) -> int:
    return config.latent + 2 + 1


def cvae_layout(config: CvaeConfig) -> ParamLayout:
    hidden, latent = config.hidden, config.latent
    groups = _gru_groups("enc", N_FEATURES, hidden)
    groups += [
        ("mu_W", (hidden, latent)),
        ("mu_b", (latent,)),
        ("logvar_W", (hidden, latent)),
        ("logvar_b", (latent,)),
        ("init_W", (hidden, hidden)),
        ("init_b", (hidden,)),
    ]
    groups += _gru_groups("dec", decoder_input_size(config), hidden)
    groups += [("out_W", (hidden, 2)), ("out_b", (2,))]
    return ParamLayout.from_shapes(groups)


def architecture(config: CvaeConfig) -> Dict[str, Any]:
    return {
        "model": "cvae-gru",
        "hidden": config.hidden,
        "latent": config.latent,
        "window": config.window,
        "future_len": config.future_len,
        "n_features": N_FEATURES,
    }


def _rng(seed: Any) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def _check_params(params: ParamVector, config: CvaeConfig) -> None:
    if params.layout != cvae_layout(config):
        raise ContractViolation("Parameters do not match the configured CVAE layout.")


def _as_batch(sample: SequenceSample | ForecastBatch) -> Tuple[ForecastBatch, bool]:
    if isinstance(sample, ForecastBatch):
        return sample, False
    target = sample.target if sample.target is not None else np.zeros_like(sample.candidate)
    return (
        ForecastBatch(
            sample.history[None],
            np.asarray(sample.candidate, dtype=np.float64)[None],
            np.asarray(target, dtype=np.float64)[None],
            np.array([float(sample.context)]),
        ),
        True,
    )


class _Graph:
    """Forward pieces of the network on one tape."""

    def __init__(self, tape: Tape, params: ParamVector, trainable: bool):
        self.tape = tape
        if trainable:
            self.p = bind_params(tape, params)
        else:
            self.p = {name: tape.const(t) for name, t in params.tensors().items()}

    def gru(self, prefix: str, x: Var, h: Var) -> Var:
        p, tape = self.p, self.tape
        z = tape.sigmoid(x @ p[f"{prefix}_Wz"] + h @ p[f"{prefix}_Uz"] + p[f"{prefix}_bz"])
        r = tape.sigmoid(x @ p[f"{prefix}_Wr"] + h @ p[f"{prefix}_Ur"] + p[f"{prefix}_br"])
        n = tape.tanh(x @ p[f"{prefix}_Wh"] + (r * h) @ p[f"{prefix}_Uh"] + p[f"{prefix}_bh"])
        return h + z * (n - h)

    def encode_history(self, history: np.ndarray) -> Var:
        n, window = history.shape[:2]
        hidden = self.p["enc_Uz"].shape[0]
        h = self.tape.const(np.zeros((n, hidden)))
        for t in range(window):
            h = self.gru("enc", self.tape.const(history[:, t, :]), h)
        return h

    def posterior(self, h_hist: Var, candidate: np.ndarray, target: np.ndarray) -> Tuple[Var, Var]:
        rows = future_rows(candidate, target)
        h = h_hist
        for t in range(rows.shape[1]):
            h = self.gru("enc", self.tape.const(rows[:, t, :]), h)
        mu = h @ self.p["mu_W"] + self.p["mu_b"]
        logvar = h @ self.p["logvar_W"] + self.p["logvar_b"]
        return mu, logvar

    def reparameterize(self, mu: Var, logvar: Var, eps: np.ndarray) -> Var:
        # Collapsed variances contribute no noise and no gradient
        mask = (logvar.value > LOGVAR_FLOOR).astype(np.float64)
        std = self.tape.exp(logvar * 0.5) * mask
        return mu + std * eps

    def decode(self, h_hist: Var, z: Var, candidate: np.ndarray, context: np.ndarray) -> Var:
        """Normalized predictions flattened to (N, steps*2)."""
        tape, p = self.tape, self.p
        h = tape.tanh(h_hist @ p["init_W"] + p["init_b"])
        candidate = normalize_controls(candidate)
        context = tape.const(np.asarray(context, dtype=np.float64)[:, None])
        outputs = []
        for t in range(candidate.shape[1]):
            x = tape.concat([z, tape.const(candidate[:, t, :]), context], axis=1)
            h = self.gru("dec", x, h)
            outputs.append(h @ p["out_W"] + p["out_b"])
        return tape.concat(outputs, axis=1)


def encode(
    params: ParamVector, sample: SequenceSample | ForecastBatch, config: CvaeConfig
) -> Tuple[np.ndarray, np.ndarray]:
    """Posterior (μ, log σ²) for a sample (1-D) or a batch (2-D)."""
    _check_params(params, config)
    batch, single = _as_batch(sample)
    graph = _Graph(Tape(), params, trainable=False)
    h_hist = graph.encode_history(batch.history)
    mu, logvar = graph.posterior(h_hist, batch.candidate, batch.target)
    if single:
        return mu.value[0].copy(), logvar.value[0].copy()
    return mu.value.copy(), logvar.value.copy()


def reparameterize(mu: np.ndarray, logvar: np.ndarray, seed: Any) -> np.ndarray:
    """z = μ + exp(logvar/2)·ε with ε from the seeded stream; σ = 0 at the floor."""
    mu = np.asarray(mu, dtype=np.float64)
    logvar = np.asarray(logvar, dtype=np.float64)
    eps = _rng(seed).standard_normal(mu.shape)
    std = np.where(logvar > LOGVAR_FLOOR, np.exp(0.5 * np.maximum(logvar, LOGVAR_FLOOR)), 0.0)
    return mu + std * eps


def decode(
    params: ParamVector,
    z: np.ndarray,
    candidate: np.ndarray,
    context: int | np.ndarray,
    history: np.ndarray,
    config: CvaeConfig,
) -> np.ndarray:
    """Predicted human controls in physical units, one pair per candidate step.

    ``history`` conditions the decoder's initial state. Unbatched inputs
    (z of shape (latent,), candidate (steps, 2), history (W, F)) give a
    (steps, 2) result.
    """
    _check_params(params, config)
    z = np.asarray(z, dtype=np.float64)
    candidate = np.asarray(candidate, dtype=np.float64)
    single = z.ndim == 1
    if single:
        z, candidate, history = z[None], candidate[None], np.asarray(history)[None]
    if z.shape[1] != config.latent:
        raise ContractViolation(f"Latent dimension {z.shape[1]} != {config.latent}.")
    context = np.broadcast_to(np.asarray(context, dtype=np.float64), (z.shape[0],))
    graph = _Graph(Tape(), params, trainable=False)
    h_hist = graph.encode_history(np.asarray(history, dtype=np.float64))
    flat = graph.decode(h_hist, graph.tape.const(z), candidate, context).value
    out = denormalize_controls(flat.reshape(z.shape[0], candidate.shape[1], 2))
    return out[0] if single else out


def _elbo_graph(
    graph: _Graph, batch: ForecastBatch, rng: np.random.Generator, beta_kl: float
) -> Tuple[Var, Var, Var]:
    if len(batch) == 0:
        raise ContractViolation("ELBO needs a non-empty batch.")
    tape = graph.tape
    h_hist = graph.encode_history(batch.history)
    mu, logvar = graph.posterior(h_hist, batch.candidate, batch.target)
    z = graph.reparameterize(mu, logvar, rng.standard_normal(mu.shape))
    prediction = graph.decode(h_hist, z, batch.candidate, batch.context)
    target = normalize_controls(batch.target).reshape(len(batch), -1)
    recon = tape.mean(tape.square(prediction - target))
    kl_terms = tape.exp(logvar) + tape.square(mu) - 1.0 - logvar
    kl = tape.sum(kl_terms) * (0.5 / len(batch))
    return recon + kl * beta_kl, recon, kl


def elbo_terms(
    params: ParamVector, batch: ForecastBatch, seed: Any, config: CvaeConfig
) -> Tuple[float, float]:
    """(reconstruction MSE, KL) averaged over the batch."""
    _check_params(params, config)
    graph = _Graph(Tape(), params, trainable=False)
    _, recon, kl = _elbo_graph(graph, batch, _rng(seed), config.beta_kl)
    return float(recon.value), float(kl.value)


def elbo_loss(params: ParamVector, batch: ForecastBatch, seed: Any, config: CvaeConfig) -> float:
    recon, kl = elbo_terms(params, batch, seed, config)
    return recon + config.beta_kl * kl


def elbo_loss_and_grad(
    params: ParamVector, batch: ForecastBatch, seed: Any, config: CvaeConfig
) -> Tuple[float, np.ndarray]:
    _check_params(params, config)
    tape = Tape()
    graph = _Graph(tape, params, trainable=True)
    loss, _, _ = _elbo_graph(graph, batch, _rng(seed), config.beta_kl)
    grads = tape.backward(loss)
    return float(loss.value), collect_grad(grads, graph.p, params.layout)


def sample_predictions(
    params: ParamVector, sample: SequenceSample, n: int, seed: Any, config: CvaeConfig
) -> np.ndarray:
    """``n`` prior-sampled forecasts, shape (n, steps, 2), physical units."""
    if n < 1:
        raise ContractViolation("sample_predictions needs n >= 1.")
    _check_params(params, config)
    z = _rng(seed).standard_normal((n, config.latent))
    candidate = np.repeat(np.asarray(sample.candidate, dtype=np.float64)[None], n, axis=0)
    history = np.repeat(np.asarray(sample.history)[None], n, axis=0)
    return decode(params, z, candidate, np.full(n, float(sample.context)), history, config)


class CvaeForecaster:
    """MPC forecaster backed by trained CVAE parameters."""

    def __init__(self, params: ParamVector, config: CvaeConfig):
        _check_params(params, config)
        self.params = params
        self.config = config

    def __call__(
        self,
        ctx: ForecastContext,
        candidates: np.ndarray,
        n_samples: int,
        rng: np.random.Generator,
    ) -> np.ndarray:
        n_candidates, steps = candidates.shape[:2]
        total = n_candidates * n_samples
        graph = _Graph(Tape(), self.params, trainable=False)
        # The history is shared, so encode it once and tile the state
        h_hist = graph.encode_history(np.asarray(ctx.history, dtype=np.float64)[None])
        h_tiled = graph.tape.const(np.repeat(h_hist.value, total, axis=0))
        z = graph.tape.const(rng.standard_normal((total, self.config.latent)))
        repeated = np.repeat(candidates, n_samples, axis=0)
        context = np.full(total, float(ctx.context))
        flat = graph.decode(h_tiled, z, repeated, context).value
        forecasts = denormalize_controls(flat.reshape(total, steps, 2))
        return forecasts.reshape(n_candidates, n_samples, steps, 2)
