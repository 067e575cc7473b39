from __future__ import annotations

from collections.abc import Callable
from pathlib import Path
from typing import TYPE_CHECKING

from ..evaluation import LeakageKind

if TYPE_CHECKING:
    from ..builder import PipelineBuilder


def install_ascad(path: str | Path, byte: int = 2) -> Callable[[PipelineBuilder], None]:
    """Create an installer that trains and attacks on an ASCAD HDF5 file.

    Profiling traces train the model and attack traces evaluate it; both
    groups are read from the same file. Labels are the S-box output of the
    chosen key byte, so the leakage model is switched to ``sbox_id``.

    Args:
        path: ASCAD ``.h5`` file
        byte: Key byte index

    Returns:
        Installer function for ASCAD input

    Example:
        builder.install(install_ascad("ASCAD.h5"))

    Note:
        Requires h5py to be installed:
        `pip install infoneat[ascad]`
    """

    def installer(builder: PipelineBuilder) -> None:
        try:
            import h5py  # noqa: F401
        except ImportError as e:
            raise ImportError(
                "h5py is required for ASCAD support. "
                "Install with: pip install infoneat[ascad]"
            ) from e

        source = Path(path)
        builder.with_paths(dataset=source, attack=source, ascad_byte=byte)
        builder.with_evaluation(leakage=LeakageKind.SBOX_ID.value)

    return installer
