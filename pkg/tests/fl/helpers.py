from typing import Dict, Iterator, Sequence, Tuple

import numpy as np

from src.params.store import ParamLayout, ParamVector, init_params


class MeanTask:
    """Fit one vector to the mean of the client's rows (squared error)."""

    name = "mean"

    def __init__(self, groups: Sequence[Tuple[str, int]] = (("shared", 2), ("personal", 2))):
        self.layout = ParamLayout.from_shapes(list(groups))

    def init_params(self, seed: int) -> ParamVector:
        return init_params(self.layout, seed, 0.1)

    def iter_batches(self, dataset, batch_size: int, rng) -> Iterator[np.ndarray]:
        order = rng.permutation(len(dataset))
        for start in range(0, len(order), batch_size):
            yield dataset[order[start : start + batch_size]]

    def loss_and_grad(self, params, batch, rng):
        residual = params.values[None, :] - batch
        return float(np.mean(np.sum(residual**2, axis=1))), 2.0 * residual.mean(axis=0)

    def evaluate(self, params, dataset) -> Dict[str, float]:
        residual = params.values[None, :] - dataset
        return {"loss": float(np.mean(np.sum(residual**2, axis=1)))}

    def pool(self, datasets):
        return np.concatenate(list(datasets))

    def size(self, dataset) -> int:
        return len(dataset)


def client_data(center, n=16, seed=0, noise=0.1):
    rng = np.random.default_rng(seed)
    return np.asarray(center, dtype=float) + noise * rng.standard_normal((n, len(center)))
