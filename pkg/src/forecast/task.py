from typing import Dict, Iterator, Sequence, Tuple

import numpy as np

from src.config.experiment import CvaeConfig
from src.forecast.cvae import cvae_layout, decode, elbo_loss_and_grad, elbo_terms
from src.forecast.features import ForecastBatch, normalize_controls
from src.params.store import ParamVector, init_params


class ForecastTask:
    """Federated task wrapper around the CVAE ELBO."""

    name = "forecast"

    def __init__(self, config: CvaeConfig):
        self.config = config
        self.layout = cvae_layout(config)

    def init_params(self, seed: int) -> ParamVector:
        return init_params(self.layout, seed, self.config.init_scale)

    def iter_batches(
        self, dataset: ForecastBatch, batch_size: int, rng: np.random.Generator
    ) -> Iterator[ForecastBatch]:
        order = rng.permutation(len(dataset))
        for start in range(0, len(order), batch_size):
            yield dataset.take(order[start : start + batch_size])

    def loss_and_grad(
        self, params: ParamVector, batch: ForecastBatch, rng: np.random.Generator
    ) -> Tuple[float, np.ndarray]:
        return elbo_loss_and_grad(params, batch, rng, self.config)

    def evaluate(self, params: ParamVector, dataset: ForecastBatch) -> Dict[str, float]:
        # A fixed evaluation stream keeps held-out losses comparable across schemes
        recon, kl = elbo_terms(params, dataset, self.config.eval_seed, self.config)
        prior_z = np.random.default_rng(self.config.eval_seed).standard_normal(
            (len(dataset), self.config.latent)
        )
        predicted = decode(
            params, prior_z, dataset.candidate, dataset.context, dataset.history, self.config
        )
        prior_mse = float(np.mean(normalize_controls(predicted - dataset.target) ** 2))
        return {
            "loss": recon + self.config.beta_kl * kl,
            "recon": recon,
            "kl": kl,
            "prior_mse": prior_mse,
        }

    def pool(self, datasets: Sequence[ForecastBatch]) -> ForecastBatch:
        return ForecastBatch.concat(datasets)

    def size(self, dataset: ForecastBatch) -> int:
        return len(dataset)
