"""
Module provides the Adam optimizer with linear learning rate warmup and L2 regularization.
"""
from copy import deepcopy
from typing import Union
import numpy as np


Params = Union[np.ndarray, dict[str, np.ndarray]]


def _map(f, *trees: Params) -> Params:
    if isinstance(trees[0], dict):
        keys = trees[0].keys()
        for t in trees[1:]:
            if t.keys() != keys:
                raise ValueError("Parameter names do not match")
        return {k: f(*[t[k] for t in trees]) for k in keys}
    return f(*trees)


def _check_shapes(params: Params, grads: Params) -> None:
    if isinstance(params, dict):
        if not isinstance(grads, dict) or params.keys() != grads.keys():
            raise ValueError("Parameters and gradients must have the same names")
        for k in params:
            if params[k].shape != grads[k].shape:
                raise ValueError(f"Shape mismatch of '{k}': {params[k].shape} vs. " +
                                 f"{grads[k].shape}")
    elif params.shape != grads.shape:
        raise ValueError(f"Shape mismatch: {params.shape} vs. {grads.shape}")


class AdamState():
    """
    State and hyperparameters of the Adam optimizer.

    Parameters
    ----------
    base_lr : `float`
        Learning rate after the warmup phase.
    beta1 : `float`, optional
        Decay rate of the first moment.

        The default is 0.9
    beta2 : `float`, optional
        Decay rate of the second moment.

        The default is 0.999
    eps_num : `float`, optional
        Numerical stabilizer added to the square root of the second moment.

        The default is 1e-8
    weight_decay_l2 : `float`, optional
        L2 regularization strength -- reg * theta is added to the gradient.

        The default is 0.
    warmup_epochs : `int`, optional
        Number of epochs over which the learning rate is increased linearly.
        No warmup if 0.

        The default is 0.
    m : `numpy.ndarray` or `dict[str, numpy.ndarray]`, optional
        First moment accumulator -- zero-initialized at the first step if None.

        The default is None.
    v : `numpy.ndarray` or `dict[str, numpy.ndarray]`, optional
        Second moment accumulator -- zero-initialized at the first step if None.

        The default is None.
    step_count : `int`, optional
        Number of performed steps.

        The default is 0.
    """
    def __init__(self, base_lr: float, beta1: float = .9, beta2: float = .999,
                 eps_num: float = 1e-8, weight_decay_l2: float = 0., warmup_epochs: int = 0,
                 m: Params = None, v: Params = None, step_count: int = 0):
        if not isinstance(base_lr, (int, float)) or base_lr < 0:
            raise ValueError("'base_lr' must be a nonnegative number")
        if not 0 <= beta1 < 1 or not 0 <= beta2 < 1:
            raise ValueError("'beta1' and 'beta2' must be in [0, 1)")
        if eps_num <= 0:
            raise ValueError("'eps_num' must be positive")
        if weight_decay_l2 < 0:
            raise ValueError("'weight_decay_l2' can not be negative")
        if not isinstance(warmup_epochs, int) or warmup_epochs < 0:
            raise ValueError("'warmup_epochs' must be a nonnegative integer")
        if not isinstance(step_count, int) or step_count < 0:
            raise ValueError("'step_count' must be a nonnegative integer")

        self.__base_lr = float(base_lr)
        self.__beta1 = float(beta1)
        self.__beta2 = float(beta2)
        self.__eps_num = float(eps_num)
        self.__weight_decay_l2 = float(weight_decay_l2)
        self.__warmup_epochs = warmup_epochs
        self.__m = m
        self.__v = v
        self.__step_count = step_count

    @property
    def base_lr(self) -> float:
        """
        Gets the base learning rate.

        Returns
        -------
        `float`
            Learning rate.
        """
        return self.__base_lr

    @property
    def beta1(self) -> float:
        """
        Gets the decay rate of the first moment.

        Returns
        -------
        `float`
            Beta 1.
        """
        return self.__beta1

    @property
    def beta2(self) -> float:
        """
        Gets the decay rate of the second moment.

        Returns
        -------
        `float`
            Beta 2.
        """
        return self.__beta2

    @property
    def eps_num(self) -> float:
        """
        Gets the numerical stabilizer.

        Returns
        -------
        `float`
            Epsilon.
        """
        return self.__eps_num

    @property
    def weight_decay_l2(self) -> float:
        """
        Gets the L2 regularization strength.

        Returns
        -------
        `float`
            Regularization strength.
        """
        return self.__weight_decay_l2

    @property
    def warmup_epochs(self) -> int:
        """
        Gets the number of warmup epochs.

        Returns
        -------
        `int`
            Number of warmup epochs.
        """
        return self.__warmup_epochs

    @property
    def m(self) -> Params:
        """
        Gets the first moment accumulator.

        Returns
        -------
        `numpy.ndarray` or `dict[str, numpy.ndarray]`
            First moment -- None if no step was performed yet.
        """
        return deepcopy(self.__m)

    @property
    def v(self) -> Params:
        """
        Gets the second moment accumulator.

        Returns
        -------
        `numpy.ndarray` or `dict[str, numpy.ndarray]`
            Second moment -- None if no step was performed yet.
        """
        return deepcopy(self.__v)

    @property
    def step_count(self) -> int:
        """
        Gets the number of performed steps.

        Returns
        -------
        `int`
            Number of steps.
        """
        return self.__step_count

    def effective_lr(self, epoch: int) -> float:
        """
        Computes the learning rate used in a given epoch --
        i.e. base_lr * min(1, (epoch + 1) / warmup_epochs).

        Parameters
        ----------
        epoch : `int`
            Zero-based epoch index.

        Returns
        -------
        `float`
            Learning rate.
        """
        if self.__warmup_epochs == 0:
            return self.__base_lr
        return self.__base_lr * min(1., (epoch + 1) / self.__warmup_epochs)

    def _advance(self, m: Params, v: Params) -> "AdamState":
        return AdamState(self.__base_lr, self.__beta1, self.__beta2, self.__eps_num,
                         self.__weight_decay_l2, self.__warmup_epochs, m=m, v=v,
                         step_count=self.__step_count + 1)

    def _moments(self, params: Params) -> tuple[Params, Params]:
        if self.__m is None:
            zeros = _map(np.zeros_like, params)
            return zeros, _map(np.zeros_like, params)
        return self.__m, self.__v

    def __str__(self) -> str:
        return f"base_lr: {self.__base_lr} beta1: {self.__beta1} beta2: {self.__beta2} " +\
            f"eps_num: {self.__eps_num} weight_decay_l2: {self.__weight_decay_l2} " +\
            f"warmup_epochs: {self.__warmup_epochs} step_count: {self.__step_count}"


def adam_step(params: Params, grads: Params, state: AdamState,
              epoch: int) -> tuple[Params, AdamState]:
    """
    Performs a single Adam update (with bias correction).

    Neither `params` nor `state` are modified -- the updated parameters and the
    updated state are returned.

    Parameters
    ----------
    params : `numpy.ndarray` or `dict[str, numpy.ndarray]`
        Parameters.
    grads : `numpy.ndarray` or `dict[str, numpy.ndarray]`
        Gradients -- must mirror the structure of `params`.
    state : :class:`~pathomil.nn.optim.AdamState`
        Optimizer state.
    epoch : `int`
        Zero-based epoch index -- determines the warmup scaling of the learning rate.

    Returns
    -------
    `tuple`
        Updated parameters and updated optimizer state.
    """
    if not isinstance(state, AdamState):
        raise TypeError("'state' must be an instance of 'pathomil.nn.AdamState' " +
                        f"but not of '{type(state)}'")
    if not isinstance(epoch, int) or epoch < 0:
        raise ValueError("'epoch' must be a nonnegative integer")
    _check_shapes(params, grads)

    lr = state.effective_lr(epoch)
    beta1, beta2, eps, reg = state.beta1, state.beta2, state.eps_num, state.weight_decay_l2
    t = state.step_count + 1
    bias1 = 1. - beta1 ** t
    bias2 = 1. - beta2 ** t

    m, v = state._moments(params)
    if reg != 0:
        grads = _map(lambda theta, g: g + reg * theta, params, grads)
    m_new = _map(lambda m_, g: beta1 * m_ + (1. - beta1) * g, m, grads)
    v_new = _map(lambda v_, g: beta2 * v_ + (1. - beta2) * g * g, v, grads)
    params_new = _map(lambda theta, m_, v_:
                      theta - lr * (m_ / bias1) / (np.sqrt(v_ / bias2) + eps),
                      params, m_new, v_new)

    return params_new, state._advance(m_new, v_new)
