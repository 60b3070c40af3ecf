"""One-dimensional convolutional estimator.

Architecture: eight channel-expanding convolutions (geometric from the input
channel count up to ``n_max``), max-pooling after each of the first four,
six channel-contracting convolutions (geometric from ``n_max`` down to one
channel), then three fully connected layers ending in a scalar.  Channel
counts are rounded to the nearest integer; the pooling kernel is the largest
integer that keeps the final length at least ``n_final``.  Convolutions use
kernel 3 with padding 1, preserving length so that only pooling shortens the
sequence (the architecture's length formulas require length-preserving
convolutions); activations are ReLU.  Training: Adam, batch 50, learning
rate 0.002, 40 epochs, root-mean-squared-error loss; reported performance is
the average of 25 independently trained members.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from mlest.data import LoadedDataset, rmse


@dataclass(frozen=True)
class ConvNetConfig:
    n_dil: int = 8
    n_con: int = 6
    n_pool: int = 4
    n_fc: int = 3
    n_max: int = 1024
    n_final: int = 10
    kernel_size: int = 3
    batch_size: int = 50
    learning_rate: float = 0.002
    epochs: int = 40
    ensemble_size: int = 25

    def channel_plan(self, n_var: int) -> list:
        """(in, out) channel pairs for all convolution layers."""
        ratio = self.n_max / n_var
        expand = [round(n_var * ratio ** (i / self.n_dil)) for i in range(self.n_dil + 1)]
        contract = [round(self.n_max ** (1 - j / self.n_con)) for j in range(self.n_con + 1)]
        seq = expand + contract[1:]
        return list(zip(seq[:-1], seq[1:]))

    def pool_kernel(self, n_input: int) -> int:
        """Largest kernel keeping the length >= n_final after n_pool poolings."""
        k = 1
        while True:
            length = n_input
            for _ in range(self.n_pool):
                length //= k + 1
            if length < self.n_final:
                return k
            k += 1

    def final_length(self, n_input: int) -> int:
        k = self.pool_kernel(n_input)
        length = n_input
        for _ in range(self.n_pool):
            length //= k
        return length


def build_network(config: ConvNetConfig, n_var: int, n_input: int) -> nn.Sequential:
    """Assemble the network for ``n_var`` channels and length ``n_input``."""
    plan = config.channel_plan(n_var)
    pool = config.pool_kernel(n_input)
    layers: list = []
    for i, (cin, cout) in enumerate(plan):
        layers.append(nn.Conv1d(cin, cout, config.kernel_size,
                                padding=config.kernel_size // 2))
        layers.append(nn.ReLU())
        if i < config.n_pool:
            layers.append(nn.MaxPool1d(pool))
    length = config.final_length(n_input)
    layers.append(nn.Flatten())
    for j in range(config.n_fc - 1):
        layers.append(nn.Linear(length, length))
        layers.append(nn.ReLU())
    layers.append(nn.Linear(length, 1))
    return nn.Sequential(*layers)


def shape_audit(config: ConvNetConfig, n_var: int, n_input: int) -> dict:
    """Forward a dummy batch and return the realized layer shapes."""
    net = build_network(config, n_var, n_input)
    x = torch.zeros(2, n_var, n_input)
    shapes = []
    with torch.no_grad():
        for layer in net:
            x = layer(x)
            shapes.append((type(layer).__name__, tuple(x.shape[1:])))
    return {
        "channel_plan": config.channel_plan(n_var),
        "pool_kernel": config.pool_kernel(n_input),
        "final_length": config.final_length(n_input),
        "layer_shapes": shapes,
        "output_shape": tuple(x.shape),
    }


def _rmse_loss(pred: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    return torch.sqrt(torch.mean((pred - target) ** 2) + 1e-12)


def train_member(x_train: np.ndarray, y_train: np.ndarray, config: ConvNetConfig,
                 seed: int) -> nn.Sequential:
    """Train one network; fully determined by (data, config, seed)."""
    torch.manual_seed(seed)
    n_var, n_input = x_train.shape[1], x_train.shape[2]
    net = build_network(config, n_var, n_input)
    optimizer = torch.optim.Adam(net.parameters(), lr=config.learning_rate)
    x = torch.from_numpy(np.ascontiguousarray(x_train, dtype=np.float32))
    y = torch.from_numpy(np.ascontiguousarray(y_train, dtype=np.float32)).reshape(-1, 1)
    gen = torch.Generator().manual_seed(seed + 1)
    net.train()
    for _ in range(config.epochs):
        order = torch.randperm(x.shape[0], generator=gen)
        for start in range(0, x.shape[0], config.batch_size):
            batch = order[start : start + config.batch_size]
            optimizer.zero_grad()
            loss = _rmse_loss(net(x[batch]), y[batch])
            loss.backward()
            optimizer.step()
    net.eval()
    return net


def _predict(net: nn.Sequential, x: np.ndarray, batch: int = 512) -> np.ndarray:
    out = []
    with torch.no_grad():
        for start in range(0, x.shape[0], batch):
            chunk = torch.from_numpy(np.ascontiguousarray(x[start : start + batch], dtype=np.float32))
            out.append(net(chunk).numpy().ravel())
    return np.concatenate(out)


@dataclass
class ConvEnsemble:
    members: list
    config: ConvNetConfig

    def predict(self, x: np.ndarray) -> np.ndarray:
        preds = np.stack([_predict(net, x) for net in self.members])
        return preds.mean(axis=0)

    def member_predictions(self, x: np.ndarray) -> np.ndarray:
        return np.stack([_predict(net, x) for net in self.members])


def train_conv_ensemble(x_train, y_train, config: ConvNetConfig,
                        n_models: int | None = None, base_seed: int = 0) -> ConvEnsemble:
    """Independently train ensemble members; prediction is the member mean.

    A member whose training-set predictions are non-finite is retrained once
    with a fresh seed and excluded (with a warning) if still divergent.
    """
    if n_models is None:
        n_models = config.ensemble_size
    members = []
    for m in range(n_models):
        net = train_member(x_train, y_train, config, seed=base_seed + m)
        if not np.isfinite(_predict(net, x_train)).all():
            net = train_member(x_train, y_train, config, seed=base_seed + m + 10_000)
            if not np.isfinite(_predict(net, x_train)).all():
                warnings.warn(f"ensemble member {m} diverged twice; excluded")
                continue
        members.append(net)
    if not members:
        raise RuntimeError("every ensemble member diverged")
    return ConvEnsemble(members=members, config=config)


@dataclass(frozen=True)
class ConvReport:
    target: str
    horizon: int
    sources: tuple
    rmse_test: float
    member_rmses: tuple
    train_size: int
    test_size: int

    @property
    def mean_member_rmse(self) -> float:
        return float(np.mean(self.member_rmses))


def evaluate_cnn(dataset: LoadedDataset, target: str, horizon: int,
                 config: ConvNetConfig, n_models: int | None = None,
                 base_seed: int = 0) -> ConvReport:
    """Train an ensemble on the shared split and report held-out RMSE."""
    x = dataset.channels[:, :, :horizon]
    y = dataset.target(target)
    tr, te = dataset.train_idx, dataset.test_idx
    ensemble = train_conv_ensemble(x[tr], y[tr], config, n_models, base_seed)
    member_preds = ensemble.member_predictions(x[te])
    member_rmses = tuple(rmse(p, y[te]) for p in member_preds)
    return ConvReport(
        target=target,
        horizon=horizon,
        sources=dataset.sources,
        rmse_test=rmse(member_preds.mean(axis=0), y[te]),
        member_rmses=member_rmses,
        train_size=len(tr),
        test_size=len(te),
    )


def finite_difference_gradient_error(seed: int = 0) -> float:
    """Max relative error between autograd and central finite differences on
    a tiny double-precision network (well under 100 parameters)."""
    torch.manual_seed(seed)
    net = nn.Sequential(
        nn.Conv1d(2, 2, 3, padding=1), nn.ReLU(), nn.MaxPool1d(2),
        nn.Flatten(), nn.Linear(6, 1),
    ).double()
    x = torch.randn(4, 2, 6, dtype=torch.float64)
    y = torch.randn(4, 1, dtype=torch.float64)

    def loss_value():
        return _rmse_loss(net(x), y)

    loss = loss_value()
    loss.backward()
    worst = 0.0
    eps = 1e-6
    for param in net.parameters():
        grad = param.grad
        flat = param.data.view(-1)
        for i in range(flat.numel()):
            orig = flat[i].item()
            flat[i] = orig + eps
            up = loss_value().item()
            flat[i] = orig - eps
            down = loss_value().item()
            flat[i] = orig
            fd = (up - down) / (2 * eps)
            ag = grad.view(-1)[i].item()
            denom = max(abs(fd), abs(ag), 1e-8)
            worst = max(worst, abs(fd - ag) / denom)
    return worst
