import os
import tempfile
import numpy as np

from pathomil.nn import relative_error


def get_temp_folder(folder_name: str = "pathomil-test") -> str:
    folder_tmp = os.path.join(tempfile.gettempdir(), folder_name)
    if not os.path.exists(folder_tmp):
        os.mkdir(folder_tmp)
    return folder_tmp


def assert_grad_close(analytic: np.ndarray, numeric: np.ndarray, rel_tol: float = 1e-4,
                      abs_tol: float = 1e-7) -> None:
    # Near-zero gradients are compared absolutely
    rel_err = relative_error(analytic, numeric)
    abs_err = float(np.max(np.abs(np.asarray(analytic) - np.asarray(numeric)), initial=0.))
    assert rel_err < rel_tol or abs_err < abs_tol, f"rel_err={rel_err} abs_err={abs_err}"
