"""
Module provides some helper functions.
"""
import os
from pathlib import Path


def create_path_if_not_exist(path_in: str) -> None:
    """
    Creates a directory and all its parent directories if they do not already exist.

    Parameters
    ----------
    path_in : `str`
        Path to be created.
    """
    Path(path_in).mkdir(parents=True, exist_ok=True)


def create_parent_if_not_exist(f_out: str) -> None:
    """
    Creates the directory of a file (and all its parents) if it does not already exist.
    """
    folder = os.path.dirname(os.path.abspath(f_out))
    create_path_if_not_exist(folder)


def slide_id_from_path(f_in: str) -> str:
    """
    Derives a slide ID from a file path -- i.e. the file name without its extension.

    Parameters
    ----------
    f_in : `str`
        Path to a slide or bag file.

    Returns
    -------
    `str`
        Slide ID.
    """
    return Path(f_in).stem
