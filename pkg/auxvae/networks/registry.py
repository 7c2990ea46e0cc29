"""Encoder registry keyed by fusion type."""

from typing import Dict, List, Type

from auxvae.config import EncoderConfig, Fusion
from auxvae.networks.base import AbstractEncoder, SeedStreams


def encoder_classes() -> Dict[str, Type[AbstractEncoder]]:
    from auxvae.networks.encoders import ConcatEncoder, CrossAttentionEncoder, PlainEncoder

    return {cls.NAME: cls for cls in (PlainEncoder, ConcatEncoder, CrossAttentionEncoder)}


def get_encoder(fusion: Fusion, cfg: EncoderConfig, num_channels: int, streams: SeedStreams) -> AbstractEncoder:
    classes = encoder_classes()
    name = Fusion(fusion).value
    if name not in classes:
        raise KeyError(f"no encoder registered for fusion '{name}'")
    return classes[name](cfg, num_channels, streams)


def fusion_names() -> List[str]:
    return list(encoder_classes())
