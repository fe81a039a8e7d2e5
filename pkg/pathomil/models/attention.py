"""
Module provides gated attention scoring and attention pooling together with their
backward passes.
"""
import numpy as np

from ..nn.core import softmax, sigmoid
from .params import ParameterSet


class GatedAttentionParams():
    """
    Parameters of a gated attention network:

        g_i = tanh(Wa h_i + ba) * sigmoid(Wb h_i + bb)
        score_i = Wscore g_i + bscore

    Parameters
    ----------
    Wa : `numpy.ndarray`
        Weights of the tanh branch (hidden x in).
    ba : `numpy.ndarray`
        Bias of the tanh branch (hidden,).
    Wb : `numpy.ndarray`
        Weights of the sigmoid gate (hidden x in).
    bb : `numpy.ndarray`
        Bias of the sigmoid gate (hidden,).
    Wscore : `numpy.ndarray`
        Scoring map (score_out x hidden).
    bscore : `numpy.ndarray`
        Scoring bias (score_out,).
    """
    def __init__(self, Wa: np.ndarray, ba: np.ndarray, Wb: np.ndarray, bb: np.ndarray,
                 Wscore: np.ndarray, bscore: np.ndarray):
        if Wa.shape != Wb.shape:
            raise ValueError(f"'Wa' and 'Wb' must share their shape: {Wa.shape} vs. {Wb.shape}")
        if ba.shape != (Wa.shape[0],) or bb.shape != (Wb.shape[0],):
            raise ValueError("Dimension mismatch of the gate biases")
        if Wscore.ndim != 2 or Wscore.shape[1] != Wa.shape[0]:
            raise ValueError(f"'Wscore' must be of shape (score_out, {Wa.shape[0]})")
        if bscore.shape != (Wscore.shape[0],):
            raise ValueError("Dimension mismatch of the scoring bias")

        self.__Wa = Wa
        self.__ba = ba
        self.__Wb = Wb
        self.__bb = bb
        self.__Wscore = Wscore
        self.__bscore = bscore

    @staticmethod
    def layout(prefix: str, in_dim: int, hidden: int,
               score_out: int) -> list[tuple[str, tuple[int]]]:
        """
        Returns the parameter layout of a gated attention network stored under `prefix`.

        Parameters
        ----------
        prefix : `str`
            Name of the network.
        in_dim : `int`
            Input dimensionality.
        hidden : `int`
            Dimensionality of the attention space.
        score_out : `int`
            Number of scores per instance.

        Returns
        -------
        `list[tuple[str, tuple[int]]]`
            Layout.
        """
        return [(f"{prefix}.Wa", (hidden, in_dim)), (f"{prefix}.ba", (hidden,)),
                (f"{prefix}.Wb", (hidden, in_dim)), (f"{prefix}.bb", (hidden,)),
                (f"{prefix}.Wscore", (score_out, hidden)), (f"{prefix}.bscore", (score_out,))]

    @staticmethod
    def from_parameter_set(params: ParameterSet, prefix: str) -> "GatedAttentionParams":
        """
        Creates views of a gated attention network stored in a parameter set.
        """
        return GatedAttentionParams(params[f"{prefix}.Wa"], params[f"{prefix}.ba"],
                                    params[f"{prefix}.Wb"], params[f"{prefix}.bb"],
                                    params[f"{prefix}.Wscore"], params[f"{prefix}.bscore"])

    @property
    def Wa(self) -> np.ndarray:
        return self.__Wa

    @property
    def ba(self) -> np.ndarray:
        return self.__ba

    @property
    def Wb(self) -> np.ndarray:
        return self.__Wb

    @property
    def bb(self) -> np.ndarray:
        return self.__bb

    @property
    def Wscore(self) -> np.ndarray:
        return self.__Wscore

    @property
    def bscore(self) -> np.ndarray:
        return self.__bscore

    @property
    def in_dim(self) -> int:
        """
        Gets the input dimensionality.

        Returns
        -------
        `int`
            Input dimensionality.
        """
        return self.__Wa.shape[1]

    @property
    def hidden(self) -> int:
        """
        Gets the dimensionality of the attention space.

        Returns
        -------
        `int`
            Hidden dimensionality.
        """
        return self.__Wa.shape[0]

    @property
    def score_out(self) -> int:
        """
        Gets the number of scores per instance.

        Returns
        -------
        `int`
            Number of scores.
        """
        return self.__Wscore.shape[0]

    def __str__(self) -> str:
        return f"in_dim: {self.in_dim} hidden: {self.hidden} score_out: {self.score_out}"


def gated_attention_forward(H: np.ndarray, p: GatedAttentionParams) -> tuple[np.ndarray, dict]:
    """
    Computes the raw attention scores of all instances and the cache required by
    :func:`~pathomil.models.attention.gated_attention_backward`.

    Parameters
    ----------
    H : `numpy.ndarray`
        Instance matrix (n x in).
    p : :class:`~pathomil.models.attention.GatedAttentionParams`
        Attention parameters.

    Returns
    -------
    `tuple[numpy.ndarray, dict]`
        Raw scores (n x score_out) and cache.
    """
    if H.ndim != 2 or H.shape[0] == 0:
        raise ValueError("'H' must be a non-empty 2d array")
    if H.shape[1] != p.in_dim:
        raise ValueError(f"Dimension mismatch: instances have {H.shape[1]} features but " +
                         f"the attention network expects {p.in_dim}")

    A_a = np.tanh(H @ p.Wa.T + p.ba)
    A_b = sigmoid(H @ p.Wb.T + p.bb)
    G = A_a * A_b
    scores = G @ p.Wscore.T + p.bscore

    return scores, {"H": H, "A_a": A_a, "A_b": A_b, "G": G}


def gated_attention_scores(H: np.ndarray, p: GatedAttentionParams) -> np.ndarray:
    """
    Computes the raw attention scores of all instances --
    i.e. Wscore (tanh(Wa h_i + ba) * sigmoid(Wb h_i + bb)) + bscore for every row h_i.

    Parameters
    ----------
    H : `numpy.ndarray`
        Instance matrix (n x in).
    p : :class:`~pathomil.models.attention.GatedAttentionParams`
        Attention parameters.

    Returns
    -------
    `numpy.ndarray`
        Raw scores (n x score_out).
    """
    return gated_attention_forward(H, p)[0]


def gated_attention_backward(d_scores: np.ndarray, cache: dict,
                             p: GatedAttentionParams) -> tuple[np.ndarray, dict]:
    """
    Backward pass of :func:`~pathomil.models.attention.gated_attention_forward`.

    Parameters
    ----------
    d_scores : `numpy.ndarray`
        Gradient with respect to the raw scores (n x score_out).
    cache : `dict`
        Cache returned by the forward pass.
    p : :class:`~pathomil.models.attention.GatedAttentionParams`
        Attention parameters.

    Returns
    -------
    `tuple[numpy.ndarray, dict]`
        Gradient with respect to the instances (n x in) and gradients of the parameters
        (keys "Wa", "ba", "Wb", "bb", "Wscore", "bscore").
    """
    H, A_a, A_b, G = cache["H"], cache["A_a"], cache["A_b"], cache["G"]
    if d_scores.shape != (H.shape[0], p.score_out):
        raise ValueError("Cache mismatch: gradient shape does not fit the cached forward pass")

    dG = d_scores @ p.Wscore
    d_pre_a = dG * A_b * (1. - A_a * A_a)
    d_pre_b = dG * A_a * A_b * (1. - A_b)

    grads = {"Wscore": d_scores.T @ G, "bscore": d_scores.sum(axis=0),
             "Wa": d_pre_a.T @ H, "ba": d_pre_a.sum(axis=0),
             "Wb": d_pre_b.T @ H, "bb": d_pre_b.sum(axis=0)}
    dH = d_pre_a @ p.Wa + d_pre_b @ p.Wb

    return dH, grads


def attention_pool(H: np.ndarray, raw_scores: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """
    Attention pooling -- i.e. a = softmax(raw_scores) and S = sum_i a_i h_i.

    Parameters
    ----------
    H : `numpy.ndarray`
        Instance matrix (n x d).
    raw_scores : `numpy.ndarray`
        Raw attention scores (n,).

    Returns
    -------
    `tuple[numpy.ndarray, numpy.ndarray]`
        Attention weights a (n,) and pooled vector S (d,).
    """
    raw_scores = np.asarray(raw_scores, dtype=np.float64)
    if H.ndim != 2 or H.shape[0] == 0:
        raise ValueError("Can not pool an empty bag")
    if raw_scores.shape != (H.shape[0],):
        raise ValueError(f"Dimension mismatch: {H.shape[0]} instances vs. " +
                         f"{raw_scores.shape} scores")

    a = softmax(raw_scores)
    return a, a @ H


def attention_pool_backward(dS: np.ndarray, H: np.ndarray, a: np.ndarray,
                            da: np.ndarray = None) -> tuple[np.ndarray, np.ndarray]:
    """
    Backward pass of :func:`~pathomil.models.attention.attention_pool`.

    Parameters
    ----------
    dS : `numpy.ndarray`
        Gradient with respect to the pooled vector (d,).
    H : `numpy.ndarray`
        Instance matrix (n x d).
    a : `numpy.ndarray`
        Attention weights (n,).
    da : `numpy.ndarray`, optional
        Additional gradient with respect to the attention weights.

        The default is None.

    Returns
    -------
    `tuple[numpy.ndarray, numpy.ndarray]`
        Gradients with respect to the instances (n x d) and to the raw scores (n,).
    """
    da_total = H @ dS
    if da is not None:
        da_total = da_total + da
    d_raw = a * (da_total - np.dot(a, da_total))

    return np.outer(a, dS), d_raw
