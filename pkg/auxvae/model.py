"""The assembled AuxVAE: encoder, conditional decoder and predictor heads."""

from typing import Optional, Tuple

import torch
from torch import nn

from auxvae.config import FULL_MODEL, AblationSetting, EncoderConfig, derive_seed, model_hash
from auxvae.networks.base import AttentionTrace, EncoderOutput
from auxvae.networks.decoder import Decoder
from auxvae.networks.predictor import LoadRegressor, StyleClassifier
from auxvae.networks.registry import get_encoder
from auxvae.substrate import new_generator


class AuxVAE(nn.Module):
    """Generator (encoder + decoder) plus predictor (classifier + regressor).

    Every component draws its initial weights from a generator derived from
    ``seed`` and the component's parameter namespace, so variants that share a
    namespace start from identical weights.
    """

    def __init__(
        self,
        cfg: EncoderConfig,
        num_channels: int,
        num_styles: int,
        setting: AblationSetting = FULL_MODEL,
        seed: int = 0,
    ):
        super().__init__()
        self.cfg = cfg
        self.setting = setting
        self.num_channels = num_channels
        self.num_styles = num_styles

        def streams(name: str) -> torch.Generator:
            return new_generator(derive_seed(seed, name))

        self.encoder = get_encoder(setting.fusion, cfg, num_channels, streams)
        self.decoder = Decoder(cfg, num_channels, conditioned=setting.use_aux_input, streams=streams)
        self.classifier: Optional[StyleClassifier] = None
        if setting.use_aux_output:
            self.classifier = StyleClassifier(cfg.latent_dim, cfg.head_hidden, num_styles, streams)
        style_dim = num_styles if setting.use_aux_output else 0
        self.regressor = LoadRegressor(cfg.latent_dim, style_dim, cfg.head_hidden, streams)

    @property
    def uses_aux_input(self) -> bool:
        return self.setting.use_aux_input

    @property
    def uses_aux_output(self) -> bool:
        return self.classifier is not None

    def config_hash(self) -> str:
        return model_hash(self.cfg, self.setting, self.num_channels, self.num_styles)

    def encode(self, x: torch.Tensor, x_aux: Optional[torch.Tensor]) -> Tuple[EncoderOutput, Optional[AttentionTrace]]:
        return self.encoder(x, x_aux if self.uses_aux_input else None)

    def decode(self, z: torch.Tensor, x_aux: Optional[torch.Tensor]) -> torch.Tensor:
        return self.decoder(z, x_aux if self.uses_aux_input else None)

    def classify_style(self, z: torch.Tensor) -> torch.Tensor:
        if self.classifier is None:
            raise RuntimeError(f"variant {self.setting.name} has no style classifier")
        return self.classifier(z)

    def regress_load(self, z: torch.Tensor, style: Optional[torch.Tensor] = None) -> torch.Tensor:
        return self.regressor(z, style if self.uses_aux_output else None)
