from __future__ import annotations

import math
from typing import Callable

import numpy as np
import pytest

from app.channelgen import GeometryConfig, sample_channels
from app.core.model import ChannelSet, SystemConfig

DESK_NOISE_W = 1e-11  # -80 dBm
DESK_GAMMA_P = 10.0 ** 1.5  # 15 dB


def _cn(rng: np.random.Generator, shape) -> np.ndarray:
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / math.sqrt(2.0)


@pytest.fixture
def make_cfg() -> Callable[..., SystemConfig]:
    """Unit-noise config factory; every test that cares overrides what it needs."""

    def factory(
        n_tx: int = 4,
        n_ris: int = 8,
        n_pr: int = 2,
        t_symbols: int = 50,
        noise_power: float = 1.0,
        gamma_p: float = 2.0,
        ber_target: float = 0.0786,
    ) -> SystemConfig:
        return SystemConfig.from_targets(
            n_tx=n_tx,
            n_ris=n_ris,
            n_pr=n_pr,
            t_symbols=t_symbols,
            noise_power=noise_power,
            gamma_p=gamma_p,
            ber_target=ber_target,
        )

    return factory


@pytest.fixture
def make_channels() -> Callable[..., ChannelSet]:
    """i.i.d. CN(0, scale^2) channels matching a config."""

    def factory(cfg: SystemConfig, seed: int = 0, direct_scale: float = 1.0, ris_scale: float = 1.0) -> ChannelSet:
        rng = np.random.default_rng(seed)
        return ChannelSet(
            h_pr=_cn(rng, (cfg.n_pr, cfg.n_tx)) * direct_scale,
            h_brx=_cn(rng, (cfg.n_tx,)) * direct_scale,
            g_mat=_cn(rng, (cfg.n_tx, cfg.n_ris)) * ris_scale,
            g_pr=_cn(rng, (cfg.n_pr, cfg.n_ris)),
            g_brx=_cn(rng, (cfg.n_ris,)),
        )

    return factory


@pytest.fixture
def desk_cfg(make_cfg) -> Callable[..., SystemConfig]:
    """Desk-scale defaults: -80 dBm noise, 15 dB SNR target, BER 0.0786 at T = 50."""

    def factory(n_tx: int = 4, n_ris: int = 32, n_pr: int = 2, ber_target: float = 0.0786) -> SystemConfig:
        return make_cfg(
            n_tx=n_tx, n_ris=n_ris, n_pr=n_pr, noise_power=DESK_NOISE_W, gamma_p=DESK_GAMMA_P, ber_target=ber_target,
        )

    return factory


@pytest.fixture
def desk_channels() -> Callable[[SystemConfig, int], ChannelSet]:
    def factory(cfg: SystemConfig, seed: int) -> ChannelSet:
        return sample_channels(GeometryConfig.default(cfg.n_pr), cfg, seed)

    return factory
