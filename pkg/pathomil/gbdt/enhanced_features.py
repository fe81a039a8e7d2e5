"""
Module provides the 23 enhanced slide-level features derived from the output of a MIL
model -- logits, probabilities, bag size, and descriptors of the attention distribution --
which serve as input of the gradient-boosted tree classifier.
"""
import math
import warnings
import numpy as np
from scipy.stats import skew, kurtosis

from ..models.output import ForwardOutput
from ..models.mil_model import MilModel
from ..models.clam import KIND_CLAM_SB


ENHANCED_FEATURE_NAMES = ["logit_0", "logit_1", "logit_2",
                          "prob_0", "prob_1", "prob_2",
                          "log_patch_count",
                          "attn_mean", "attn_std", "attn_min", "attn_max", "attn_median",
                          "attn_skewness", "attn_kurtosis", "attn_entropy",
                          "attn_normalized_entropy", "attn_top1", "attn_top5_mass",
                          "attn_top10_mass", "attn_gini",
                          "attn_q25", "attn_q75", "attn_iqr"]
N_ENHANCED_FEATURES = len(ENHANCED_FEATURE_NAMES)

_NORMALIZATION_TOLERANCE = 1e-6


def gini_coefficient(values: np.ndarray) -> float:
    """
    Gini coefficient of nonnegative values -- 0 for a uniform distribution.
    """
    x = np.sort(np.asarray(values, dtype=np.float64))
    n = x.shape[0]
    total = x.sum()
    if n == 0 or total <= 0:
        return 0.
    ranks = np.arange(1, n + 1)
    return float(np.sum((2 * ranks - n - 1) * x) / (n * total))


def shannon_entropy(p: np.ndarray) -> float:
    """
    Shannon entropy (nats) of a probability vector -- 0 log 0 is taken as 0.
    """
    p = np.asarray(p, dtype=np.float64)
    nonzero = p[p > 0]
    return float(-np.sum(nonzero * np.log(nonzero)))


def attention_statistics(attention: np.ndarray) -> np.ndarray:
    """
    Distribution descriptors of attention weights: mean, std, min, max, median, skewness,
    excess kurtosis, entropy, normalized entropy, top-1 weight, top-5 mass, top-10 mass,
    Gini coefficient, 25% and 75% quantiles, and interquartile range.

    Moments are population moments (skewness and kurtosis are 0 for numerically
    constant weights); quantiles interpolate linearly between order statistics.

    Parameters
    ----------
    attention : `numpy.ndarray`
        Attention weights (n) summing to 1.

    Returns
    -------
    `numpy.ndarray`
        16 statistics.
    """
    a = np.asarray(attention, dtype=np.float64).ravel()
    n = a.shape[0]
    if n == 0:
        raise ValueError("Attention weights must not be empty")

    std = float(a.std())
    skewness, excess_kurtosis = 0., 0.
    if np.ptp(a) > 0:
        with warnings.catch_warnings(), np.errstate(all="ignore"):
            warnings.simplefilter("ignore", RuntimeWarning)
            moments = (float(skew(a, bias=True)), float(kurtosis(a, fisher=True, bias=True)))
        # scipy yields nan for nearly constant weights
        if all(math.isfinite(m) for m in moments):
            skewness, excess_kurtosis = moments

    entropy = shannon_entropy(a)
    normalized_entropy = entropy / math.log(n) if n > 1 else 0.

    descending = np.sort(a)[::-1]
    q25, median, q75 = np.quantile(a, [.25, .5, .75], method="linear")

    return np.array([a.mean(), std, a.min(), a.max(), median, skewness, excess_kurtosis,
                     entropy, normalized_entropy, descending[0], descending[:5].sum(),
                     descending[:10].sum(), gini_coefficient(a), q25, q75, q75 - q25])


def build_enhanced_features(mil: ForwardOutput, attention: np.ndarray = None,
                            patch_count: int = None) -> np.ndarray:
    """
    Builds the 23 enhanced features of a slide -- see `ENHANCED_FEATURE_NAMES` for
    the order.

    Parameters
    ----------
    mil : :class:`~pathomil.models.output.ForwardOutput`
        Output of a MIL model (3 classes).
    attention : `numpy.ndarray`, optional
        Attention weights (n) summing to 1 -- if None, the attention of CLAM-SB or the
        attention branch of the predicted class (ABMIL) is used.

        The default is None.
    patch_count : `int`, optional
        Number of patches -- length of `attention` if None.

        The default is None.

    Returns
    -------
    `numpy.ndarray`
        23 features.
    """
    if not isinstance(mil, ForwardOutput):
        raise TypeError("'mil' must be an instance of 'pathomil.models.ForwardOutput' " +
                        f"but not of '{type(mil)}'")
    if mil.logits.shape != (3,):
        raise ValueError("Enhanced features require a 3-class MIL output")

    if attention is None:
        attention = mil.attention if mil.attention.ndim == 1 \
            else mil.attention[mil.predicted_class]
    attention = np.asarray(attention, dtype=np.float64).ravel()
    if abs(attention.sum() - 1.) > _NORMALIZATION_TOLERANCE:
        raise ValueError(f"Attention weights must sum to 1 but sum to {attention.sum()}")
    if np.any(attention < 0):
        raise ValueError("Attention weights can not be negative")
    if patch_count is None:
        patch_count = attention.shape[0]
    if not isinstance(patch_count, int) or patch_count < 1:
        raise ValueError("'patch_count' must be a positive integer")

    features = np.concatenate((mil.logits, mil.probs, [math.log1p(patch_count)],
                               attention_statistics(attention)))
    if not np.all(np.isfinite(features)):
        raise FloatingPointError("Enhanced features are not finite")
    return features


def build_gbdt_inputs(model: MilModel, bags: list[np.ndarray],
                      concat_embedding: bool = False) -> tuple[np.ndarray, list[str]]:
    """
    Builds the input matrix of the tree classifier from a trained MIL model
    (evaluation-mode forward pass per bag).

    Parameters
    ----------
    model : :class:`~pathomil.models.mil_model.MilModel`
        Trained MIL model.
    bags : `list[numpy.ndarray]`
        Instance features of every bag.
    concat_embedding : `bool`, optional
        If True, the bag embedding (CLAM-SB: pooled vector, ABMIL: bag vector of the
        predicted class) is appended to the 23 enhanced features.

        The default is False.

    Returns
    -------
    `tuple[numpy.ndarray, list[str]]`
        Input matrix (m x 23 or m x (23 + embedding size)) and the feature names.
    """
    if not isinstance(model, MilModel):
        raise TypeError("'model' must be an instance of 'pathomil.models.MilModel' " +
                        f"but not of '{type(model)}'")

    rows = []
    for bag in bags:
        out = model.forward(bag)
        features = build_enhanced_features(out)
        if concat_embedding:
            embedding = out.bag_embedding[0] if model.kind == KIND_CLAM_SB \
                else out.bag_embedding[out.predicted_class]
            features = np.concatenate((features, embedding))
        rows.append(features)

    names = list(ENHANCED_FEATURE_NAMES)
    if concat_embedding:
        dim = rows[0].shape[0] - N_ENHANCED_FEATURES if rows else 0
        names += [f"embedding_{i}" for i in range(dim)]

    X = np.array(rows, dtype=np.float64).reshape(len(rows), len(names))
    return X, names
