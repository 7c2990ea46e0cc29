"""Style-marginalized load prediction, evaluation metrics and latent/attention dumps."""

import logging
from typing import Dict, List, Optional, Tuple

import numpy as np
import pandas as pd
import torch
from pydantic import BaseModel, Field

from auxvae.config import InferenceConfig
from auxvae.data import TrialTensors
from auxvae.model import AuxVAE
from auxvae.models import TrialPrediction, style_names
from auxvae.substrate import reparameterize

logger = logging.getLogger(__name__)

EVAL_CHUNK = 64


class EvalReport(BaseModel):
    """Held-out metrics plus every per-trial prediction."""

    mae_lbs: float = Field(..., ge=0)
    style_accuracy: Optional[float] = Field(None, ge=0, le=1)
    predictions: List[TrialPrediction]
    mae_by_load: Dict[str, float] = Field(default_factory=dict)
    mae_by_style: Dict[str, float] = Field(default_factory=dict)
    style_confusion: Optional[List[List[int]]] = None


def marginalize(style_probs: torch.Tensor, conditional_loads: torch.Tensor) -> torch.Tensor:
    """sum_l pi_l * mu_l over the last axis."""
    return (style_probs * conditional_loads).sum(dim=-1)


@torch.no_grad()
def predict_load(
    model: Optional[AuxVAE],
    x: torch.Tensor,
    x_aux: torch.Tensor,
    icfg: InferenceConfig,
    generator: torch.Generator,
) -> Tuple[torch.Tensor, Optional[torch.Tensor]]:
    """Average over latent draws of the style-weighted conditional load means.

    Returns ``(y_hat, pi_bar)`` with shapes ``(B,)`` and ``(B, L)``; ``pi_bar``
    is ``None`` for variants without a style classifier. True styles are never
    consulted.
    """
    if model is None:
        raise ValueError("predict_load needs a trained model")
    was_training = model.training
    model.eval()
    try:
        posterior, _ = model.encode(x, x_aux)
        samples = 1 if icfg.deterministic_latent else icfg.num_latent_samples
        y_sum = torch.zeros(x.shape[0], dtype=x.dtype)
        pi_sum = torch.zeros(x.shape[0], model.num_styles, dtype=x.dtype) if model.uses_aux_output else None
        eye = torch.eye(model.num_styles, dtype=x.dtype)
        for _ in range(samples):
            if icfg.deterministic_latent:
                z = posterior.mu_z
            else:
                z = reparameterize(posterior.mu_z, posterior.sigma_z, generator)
            if pi_sum is None:
                y_sum += model.regress_load(z)
                continue
            pi = model.classify_style(z)
            loads = torch.stack(
                [model.regress_load(z, eye[l].expand(z.shape[0], -1)) for l in range(model.num_styles)], dim=-1
            )
            y_sum += marginalize(pi, loads)
            pi_sum += pi
    finally:
        model.train(was_training)
    return y_sum / samples, None if pi_sum is None else pi_sum / samples


def evaluate(model: AuxVAE, test: TrialTensors, icfg: InferenceConfig, generator: torch.Generator) -> EvalReport:
    """MAE of the marginalized prediction and accuracy of argmax(pi_bar) on a held-out set."""
    if len(test) == 0:
        raise ValueError("evaluation needs at least one trial")

    y_parts, pi_parts = [], []
    for start in range(0, len(test), EVAL_CHUNK):
        rows = slice(start, start + EVAL_CHUNK)
        y_hat, pi_bar = predict_load(model, test.loaded[rows], test.baseline[rows], icfg, generator)
        y_parts.append(y_hat)
        if pi_bar is not None:
            pi_parts.append(pi_bar)

    y_hat = torch.cat(y_parts).double().numpy()
    pi_bar = torch.cat(pi_parts).double().numpy() if pi_parts else None
    y_true = test.load.double().numpy()
    style_true = test.style.numpy()
    errors = np.abs(y_hat - y_true)

    style_pred = pi_bar.argmax(axis=1) if pi_bar is not None else None
    predictions = [
        TrialPrediction(
            participant_id=test.participant_ids[i],
            trial_id=test.trial_ids[i],
            true_load=float(y_true[i]),
            predicted_load=float(y_hat[i]),
            true_style=int(style_true[i]),
            predicted_style=None if style_pred is None else int(style_pred[i]),
            style_probs=None if pi_bar is None else pi_bar[i].tolist(),
        )
        for i in range(len(test))
    ]

    names = style_names(model.num_styles)
    mae_by_load = {f"{load:g}": float(errors[y_true == load].mean()) for load in np.unique(y_true)}
    mae_by_style = {names[s]: float(errors[style_true == s].mean()) for s in np.unique(style_true)}

    accuracy, confusion = None, None
    if style_pred is not None:
        accuracy = float(np.mean(style_pred == style_true))
        matrix = np.zeros((model.num_styles, model.num_styles), dtype=int)
        np.add.at(matrix, (style_true, style_pred), 1)
        confusion = matrix.tolist()

    return EvalReport(
        mae_lbs=float(errors.mean()),
        style_accuracy=accuracy,
        predictions=predictions,
        mae_by_load=mae_by_load,
        mae_by_style=mae_by_style,
        style_confusion=confusion,
    )


def predictions_frame(report: EvalReport, provenance: Optional[Dict[str, object]] = None) -> pd.DataFrame:
    """One row per trial: labels, prediction, argmax style and every pi_bar entry."""
    rows = []
    for p in report.predictions:
        row: Dict[str, object] = {
            "participant": p.participant_id,
            "trial": p.trial_id,
            "true_load": p.true_load,
            "predicted_load": p.predicted_load,
            "true_style": p.true_style,
            "predicted_style": p.predicted_style,
        }
        for l, prob in enumerate(p.style_probs or []):
            row[f"pi_{l}"] = prob
        rows.append({**row, **(provenance or {})})
    return pd.DataFrame(rows)


@torch.no_grad()
def inspect_trials(model: AuxVAE, test: TrialTensors, with_attention: bool = False) -> Dict[str, pd.DataFrame]:
    """Latent posteriors per trial and, for cross-attention variants, scores and fused features."""
    was_training = model.training
    model.eval()
    try:
        posterior, trace = model.encode(test.loaded, test.baseline)
    finally:
        model.train(was_training)

    latents = pd.DataFrame(
        {
            "participant": test.participant_ids,
            "trial": test.trial_ids,
            "load": test.load.double().numpy(),
            "style": test.style.numpy(),
        }
    )
    mu, sigma = posterior.mu_z.double().numpy(), posterior.sigma_z.double().numpy()
    latents = pd.concat(
        [
            latents,
            pd.DataFrame(mu, columns=[f"mu_{j}" for j in range(mu.shape[1])]),
            pd.DataFrame(sigma, columns=[f"sigma_{j}" for j in range(sigma.shape[1])]),
        ],
        axis=1,
    )
    frames = {"latents": latents}
    if trace is None or not with_attention:
        return frames

    frames["attention"] = _long_scores(test.trial_ids, {"loaded_to_baseline": trace.scores, "baseline_to_loaded": trace.aux_scores})
    frames["features"] = _long_features(
        test.trial_ids,
        {"loaded": trace.loaded_features, "baseline": trace.baseline_features, "fused": trace.fused},
    )
    return frames


def _long_scores(trial_ids, scores: Dict[str, torch.Tensor]) -> pd.DataFrame:
    parts = []
    for direction, tensor in scores.items():
        batch, heads, queries, keys = tensor.shape
        index = np.indices((batch, heads, queries, keys)).reshape(4, -1)
        parts.append(
            pd.DataFrame(
                {
                    "trial": np.asarray(trial_ids)[index[0]],
                    "direction": direction,
                    "head": index[1],
                    "query_step": index[2],
                    "key_step": index[3],
                    "score": tensor.double().numpy().reshape(-1),
                }
            )
        )
    return pd.concat(parts, ignore_index=True)


def _long_features(trial_ids, features: Dict[str, Optional[torch.Tensor]]) -> pd.DataFrame:
    parts = []
    for stage, tensor in features.items():
        if tensor is None:
            continue
        batch, steps, width = tensor.shape
        frame = pd.DataFrame(tensor.double().numpy().reshape(batch * steps, width), columns=[f"f_{j}" for j in range(width)])
        frame.insert(0, "step", np.tile(np.arange(steps), batch))
        frame.insert(0, "stage", stage)
        frame.insert(0, "trial", np.repeat(np.asarray(trial_ids), steps))
        parts.append(frame)
    return pd.concat(parts, ignore_index=True)
