"""Model configuration and the parameter container tying the sub-networks together."""
from __future__ import annotations

from dataclasses import asdict, dataclass, fields

import numpy as np

from .encoder import Encoder, EncoderConfig
from .numerics import Module, Siren, load_checkpoint, save_checkpoint
from .spatial_inr import SpatialINR, SpatialINRConfig
from .temporal_inr import TemporalINR, TemporalINRConfig


class ConfigurationError(ValueError):
    pass


@dataclass(frozen=True)
class AblationFlags:
    use_flow: bool = True
    use_multiscale: bool = True
    single_network: bool = False

    @classmethod
    def from_variant(cls, variant):
        """'full', 'f', 'm' or 's' (ablation variant names)."""
        table = {"full": cls(), "f": cls(use_flow=False), "m": cls(use_multiscale=False),
                 "s": cls(single_network=True)}
        key = variant.lstrip("-")
        if key not in table:
            raise ConfigurationError(f"unknown ablation variant {variant!r}")
        return table[key]


@dataclass
class ModelConfig:
    feat_channels: int = 64
    num_blocks: int = 4
    spatial_channels: int = 64
    spatial_hidden: tuple = (64, 64, 256)
    temporal_hidden: tuple = (64, 64, 256)
    decoder_hidden: tuple = (64, 64, 256, 256)
    hidden_omega: float = 1.0
    num_flows: int = 2
    use_flow: bool = True
    use_multiscale: bool = True
    single_network: bool = False
    scale_delta: bool = True
    local_ensemble: bool = False
    cell_decode: bool = False
    dtype: str = "float64"
    seed: int = 0

    def __post_init__(self):
        for name in ("spatial_hidden", "temporal_hidden", "decoder_hidden"):
            setattr(self, name, tuple(int(v) for v in getattr(self, name)))
        if self.dtype not in ("float64", "float32"):
            raise ConfigurationError(f"dtype must be float64 or float32, got {self.dtype!r}")
        if self.num_flows not in (1, 2):
            raise ConfigurationError("num_flows must be 1 or 2")

    @property
    def flags(self):
        return AblationFlags(self.use_flow, self.use_multiscale, self.single_network)

    @property
    def np_dtype(self):
        return np.dtype(self.dtype)

    def to_dict(self):
        d = asdict(self)
        for k, v in d.items():
            if isinstance(v, tuple):
                d[k] = list(v)
        return d

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigurationError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def tiny(cls, **overrides):
        base = dict(feat_channels=16, spatial_channels=16, num_blocks=2)
        base.update(overrides)
        return cls(**base)


def content_dim(cfg):
    """Width of the motion-dependent part of the decoder input."""
    C, Cs, nf = cfg.feat_channels, cfg.spatial_channels, cfg.num_flows
    if cfg.single_network:
        return nf * C + 6 if cfg.use_flow else C + 7
    return nf * Cs if cfg.use_flow else Cs + 1


def decoder_in_dim(cfg):
    extra = cfg.feat_channels + 6 if cfg.use_multiscale else 0
    return content_dim(cfg) + extra


class Model(Module):
    """Encoder, spatial field, motion field (or single motion network) and RGB decoder."""

    def __init__(self, cfg=None, rng=None):
        cfg = cfg if cfg is not None else ModelConfig()
        rng = rng if rng is not None else np.random.default_rng(cfg.seed)
        dt = cfg.np_dtype
        self.cfg = cfg
        self.encoder = Encoder(EncoderConfig(feat_channels=cfg.feat_channels, num_blocks=cfg.num_blocks),
                               rng=rng, dtype=dt)
        if cfg.single_network:
            # one network from (nearest feature, offset, time) straight to flows
            self.spatial_inr = None
            self.temporal_inr = Siren(cfg.feat_channels + 3, cfg.temporal_hidden, 2 * cfg.num_flows,
                                      cfg.hidden_omega, rng=rng, dtype=dt)
        else:
            self.spatial_inr = SpatialINR(SpatialINRConfig(
                feat_channels=cfg.feat_channels, hidden_dims=cfg.spatial_hidden,
                out_dim=cfg.spatial_channels, hidden_omega=cfg.hidden_omega, scale_delta=cfg.scale_delta,
                local_ensemble=cfg.local_ensemble, cell_decode=cfg.cell_decode), rng=rng, dtype=dt)
            self.temporal_inr = TemporalINR(TemporalINRConfig(
                spatial_channels=cfg.spatial_channels, hidden_dims=cfg.temporal_hidden,
                num_flows=cfg.num_flows, hidden_omega=cfg.hidden_omega), rng=rng, dtype=dt)
        self.decoder_in_dim = decoder_in_dim(cfg)
        self.decoder = Siren(self.decoder_in_dim, cfg.decoder_hidden, 3, cfg.hidden_omega, rng=rng, dtype=dt)
        assert self.decoder.in_dim == content_dim(cfg) + (cfg.feat_channels + 6) * cfg.use_multiscale

    def param_dict(self):
        return dict(self.named_parameters())

    def state_arrays(self):
        return {name: p.data for name, p in self.named_parameters()}

    def load_arrays(self, arrays):
        params = self.param_dict()
        missing = set(params) - set(arrays)
        if missing:
            raise ConfigurationError(f"checkpoint lacks parameters: {sorted(missing)[:5]}")
        for name, p in params.items():
            a = np.asarray(arrays[name])
            if a.shape != p.shape:
                raise ConfigurationError(f"parameter {name}: checkpoint shape {a.shape} != model shape {p.shape}")
            p.data = a.astype(p.dtype)

    def save(self, path, meta=None, extra_arrays=None):
        arrays = dict(self.state_arrays())
        if extra_arrays:
            arrays.update(extra_arrays)
        return save_checkpoint(path, arrays, {"model": self.cfg.to_dict()}, meta)

    @classmethod
    def load(cls, path):
        arrays, config, meta = load_checkpoint(path)
        model = cls(ModelConfig.from_dict(config["model"]))
        model.load_arrays(arrays)
        return model
