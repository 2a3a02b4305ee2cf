import os

import h5py
import numpy as np
import pandas as pd

__all__ = ["SweepResults", "write_sweep"]


def write_sweep(filename: str, name: str, table: pd.DataFrame, description: str = ""):
    """
    Store a sweep table as a group of column datasets, replacing any
    group of the same name.
    """

    mode = "r+" if os.path.exists(filename) else "w"

    with h5py.File(filename, mode) as f:
        if "description" not in f:
            desc = f.create_group("description")
            desc.attrs["summary"] = b"boxmask ablation sweeps"

        if name in f:
            del f[name]

        group = f.create_group(name)
        group.attrs["description"] = description
        group.attrs["columns"] = [str(c) for c in table.columns]

        for column in table.columns:
            values = table[column].to_numpy()

            if values.dtype == object:
                group.create_dataset(
                    str(column),
                    data=[str(v) for v in values],
                    dtype=h5py.string_dtype(),
                )
            else:
                group.create_dataset(str(column), data=values)


class SweepResults:
    """
    Read back the sweep tables written by an Ablation.
    """

    def __init__(self, filename: str):
        """
        Read back the sweep tables written by an Ablation.

        :param filename: path to a sweep.h5 file
        """

        if not os.path.exists(filename):
            raise FileNotFoundError(f"No sweep results at {filename}")

        self.filename = filename

    @property
    def sweeps(self) -> list:

        with h5py.File(self.filename, "r") as f:
            return sorted(key for key in f if key != "description")

    def get_description(self, name: str) -> str:

        with h5py.File(self.filename, "r") as f:
            return str(f[name].attrs["description"])

    def get_table(self, name: str) -> pd.DataFrame:

        with h5py.File(self.filename, "r") as f:
            if name not in f:
                raise ValueError(f"Sweep {name} is not in {self.filename}")

            group = f[name]
            columns = [str(c) for c in group.attrs["columns"]]

            data = {}
            for column in columns:
                values = group[column][()]
                if values.dtype.kind in ("O", "S"):
                    values = np.array([v.decode() if isinstance(v, bytes) else v for v in values])
                data[column] = values

        return pd.DataFrame(data, columns=columns)
