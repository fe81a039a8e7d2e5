"""
Module provides the result of a forward pass of a MIL head.
"""
import numpy as np

from ..nn.core import softmax


class ForwardOutput():
    """
    Result of a forward pass.

    Parameters
    ----------
    kind : `str`
        Model kind that produced this output.
    logits : `numpy.ndarray`
        Bag-level logits (K,).
    bag_embedding : `numpy.ndarray`
        Bag embedding(s) -- one row for CLAM-SB (pooled encoded vector), one row per class
        for ABMIL (class-specific bag vectors).
    attention : `numpy.ndarray`
        Attention weights -- shape (n,) for CLAM-SB and (K, n) for ABMIL.
    cache : `dict`
        Intermediate activations required by the backward pass.
    """
    def __init__(self, kind: str, logits: np.ndarray, bag_embedding: np.ndarray,
                 attention: np.ndarray, cache: dict):
        if not np.all(np.isfinite(logits)):
            raise FloatingPointError("Logits are not finite")

        self.__kind = kind
        self.__logits = logits
        self.__bag_embedding = bag_embedding
        self.__attention = attention
        self.__cache = cache

    @property
    def kind(self) -> str:
        """
        Gets the model kind.

        Returns
        -------
        `str`
            Model kind.
        """
        return self.__kind

    @property
    def logits(self) -> np.ndarray:
        """
        Gets the bag-level logits.

        Returns
        -------
        `numpy.ndarray`
            Logits.
        """
        return self.__logits

    @property
    def probs(self) -> np.ndarray:
        """
        Gets the class probabilities -- i.e. softmax of the logits.

        Returns
        -------
        `numpy.ndarray`
            Probabilities.
        """
        return softmax(self.__logits)

    @property
    def predicted_class(self) -> int:
        """
        Gets the predicted class -- i.e. argmax of the logits (lowest index on ties).

        Returns
        -------
        `int`
            Class label.
        """
        return int(np.argmax(self.__logits))

    @property
    def bag_embedding(self) -> np.ndarray:
        """
        Gets the bag embedding(s).

        Returns
        -------
        `numpy.ndarray`
            Bag embedding(s), one per row.
        """
        return self.__bag_embedding

    @property
    def attention(self) -> np.ndarray:
        """
        Gets the attention weights.

        Returns
        -------
        `numpy.ndarray`
            Attention weights.
        """
        return self.__attention

    @property
    def cache(self) -> dict:
        """
        Gets the cache of intermediate activations.

        Returns
        -------
        `dict`
            Cache.
        """
        return self.__cache

    @property
    def n_instances(self) -> int:
        """
        Gets the number of instances of the bag.

        Returns
        -------
        `int`
            Bag size.
        """
        return self.__attention.shape[-1]

    def __str__(self) -> str:
        return f"kind: {self.__kind} logits: {self.__logits} n_instances: {self.n_instances}"
