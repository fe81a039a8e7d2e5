"""
Module provides containers for learnable parameters and their gradients.

All parameters of a model live in one flat float64 vector; named views into this vector
expose the individual matrices and bias vectors.
"""
import math
from typing import Iterator
import numpy as np

from ..nn.core import AffineParams
from ..rng import CanonicalRng


class ParameterSet():
    """
    Ordered collection of named parameter arrays backed by a single flat vector.

    Parameters
    ----------
    layout : `list[tuple[str, tuple[int]]]`
        Ordered list of (name, shape) pairs.
    vector : `numpy.ndarray`, optional
        Flat vector holding all values in layout order -- it is used without copying.
        If None, all parameters are initialized with zeros.

        The default is None.
    """
    def __init__(self, layout: list[tuple[str, tuple[int]]], vector: np.ndarray = None):
        layout = [(str(name), tuple(int(s) for s in shape)) for name, shape in layout]
        names = [name for name, _ in layout]
        if len(set(names)) != len(names):
            raise ValueError("Parameter names must be unique")

        self.__layout = layout
        self.__offsets = {}
        offset = 0
        for name, shape in layout:
            size = math.prod(shape)
            self.__offsets[name] = (offset, offset + size, shape)
            offset += size
        self.__size = offset

        if vector is None:
            vector = np.zeros(self.__size, dtype=np.float64)
        else:
            if not isinstance(vector, np.ndarray):
                raise TypeError("'vector' must be an instance of 'numpy.ndarray' " +
                                f"but not of '{type(vector)}'")
            if vector.shape != (self.__size,):
                raise ValueError(f"'vector' must be of shape ({self.__size},) " +
                                 f"but not {vector.shape}")
            if vector.dtype != np.float64:
                vector = vector.astype(np.float64)
        self.__vector = vector

    @property
    def layout(self) -> list[tuple[str, tuple[int]]]:
        """
        Gets the layout -- i.e. ordered (name, shape) pairs.

        Returns
        -------
        `list[tuple[str, tuple[int]]]`
            Layout.
        """
        return list(self.__layout)

    @property
    def names(self) -> list[str]:
        """
        Gets the parameter names in layout order.

        Returns
        -------
        `list[str]`
            Names.
        """
        return [name for name, _ in self.__layout]

    @property
    def size(self) -> int:
        """
        Gets the total number of scalar parameters.

        Returns
        -------
        `int`
            Number of parameters.
        """
        return self.__size

    @property
    def vector(self) -> np.ndarray:
        """
        Gets the flat vector holding all values -- note that this is not a copy.

        Returns
        -------
        `numpy.ndarray`
            Flat vector.
        """
        return self.__vector

    def __getitem__(self, name: str) -> np.ndarray:
        if name not in self.__offsets:
            raise KeyError(f"Unknown parameter '{name}'")
        start, end, shape = self.__offsets[name]
        return self.__vector[start:end].reshape(shape)

    def __contains__(self, name: str) -> bool:
        return name in self.__offsets

    def __iter__(self) -> Iterator[str]:
        return iter(self.names)

    def items(self) -> Iterator[tuple[str, np.ndarray]]:
        """
        Iterates over (name, view) pairs in layout order.
        """
        for name, _ in self.__layout:
            yield name, self[name]

    def affine(self, prefix: str) -> AffineParams:
        """
        Returns the fully connected layer stored under `<prefix>.weight` and `<prefix>.bias`.

        Parameters
        ----------
        prefix : `str`
            Name of the layer.

        Returns
        -------
        :class:`~pathomil.nn.core.AffineParams`
            Views of the layer's parameters.
        """
        return AffineParams(self[f"{prefix}.weight"], self[f"{prefix}.bias"])

    def with_vector(self, vector: np.ndarray) -> "ParameterSet":
        """
        Creates a parameter set with the same layout but different values.

        Parameters
        ----------
        vector : `numpy.ndarray`
            Flat vector -- used without copying.

        Returns
        -------
        :class:`~pathomil.models.params.ParameterSet`
            New parameter set.
        """
        return ParameterSet(self.__layout, vector)

    def copy(self) -> "ParameterSet":
        """
        Returns a deep copy.
        """
        return ParameterSet(self.__layout, self.__vector.copy())

    def zeros_like(self) -> "GradientSet":
        """
        Returns a gradient set mirroring this layout, initialized with zeros.
        """
        return GradientSet(self.__layout)

    def to_dict(self) -> dict[str, np.ndarray]:
        """
        Returns copies of all parameters as a dictionary.
        """
        return {name: view.copy() for name, view in self.items()}

    def is_finite(self) -> bool:
        """
        Checks whether all values are finite.
        """
        return bool(np.all(np.isfinite(self.__vector)))

    def __eq__(self, other) -> bool:
        if not isinstance(other, ParameterSet):
            raise TypeError("Can not compare 'ParameterSet' instance " +
                            f"with '{type(other)}' instance")

        return self.__layout == other.layout and np.array_equal(self.__vector, other.vector)

    def __str__(self) -> str:
        return "\n".join(f"{name}: {shape}" for name, shape in self.__layout)


class GradientSet(ParameterSet):
    """
    Gradients of a :class:`~pathomil.models.params.ParameterSet` -- same layout,
    zero-initialized, accumulated in-place through :meth:`add`.
    """
    def add(self, name: str, grad: np.ndarray) -> None:
        """
        Accumulates a gradient.

        Parameters
        ----------
        name : `str`
            Parameter name.
        grad : `numpy.ndarray`
            Gradient -- must have the shape of the parameter.
        """
        view = self[name]
        if view.shape != np.shape(grad):
            raise ValueError(f"Shape mismatch of '{name}': {view.shape} vs. {np.shape(grad)}")
        view += grad

    def scale(self, factor: float) -> None:
        """
        Multiplies all gradients by a factor (in-place).
        """
        self.vector[:] *= factor

    def norm(self) -> float:
        """
        Returns the Euclidean norm of all gradients.
        """
        return float(np.linalg.norm(self.vector))


def xavier_init(layout: list[tuple[str, tuple[int]]], rng: CanonicalRng,
                zero_prefixes: list[str] = None) -> ParameterSet:
    """
    Initializes parameters -- matrices are drawn from
    Uniform(-sqrt(6/(fan_in+fan_out)), +sqrt(6/(fan_in+fan_out))) in layout order,
    vectors (biases) are set to zero.

    Parameters
    ----------
    layout : `list[tuple[str, tuple[int]]]`
        Ordered (name, shape) pairs.
    rng : :class:`~pathomil.rng.CanonicalRng`
        Random number generator.
    zero_prefixes : `list[str]`, optional
        Parameters whose names start with any of these prefixes are zero-initialized.

        The default is None.

    Returns
    -------
    :class:`~pathomil.models.params.ParameterSet`
        Initialized parameters.
    """
    if not isinstance(rng, CanonicalRng):
        raise TypeError("'rng' must be an instance of 'pathomil.rng.CanonicalRng' " +
                        f"but not of '{type(rng)}'")
    zero_prefixes = zero_prefixes or []

    params = ParameterSet(layout)
    for name, view in params.items():
        if view.ndim != 2 or any(name.startswith(p) for p in zero_prefixes):
            continue
        fan_out, fan_in = view.shape
        bound = math.sqrt(6. / (fan_in + fan_out))
        view[:] = rng.uniform_range(-bound, bound, view.shape)

    return params
