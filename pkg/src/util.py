from os import path, getcwd, pardir, mkdir
from pprint import pformat
from time import time
from typing import Callable, TextIO, TypeVar

from pandas import DataFrame

ReturnType = TypeVar('ReturnType')

FLOAT_FORMAT = '%.17g'


def log_message(source: str, msg: str, log_file: TextIO | None = None, to_console: bool = True):
    """
    Print a message prefixed by the component that emitted it, optionally mirroring it into a log file.

    :param source: name of the emitting component, printed in brackets.
    :param msg: message to log.
    :param log_file: open text file that also receives the message.
    :param to_console: print to standard output.
    """
    msg = f'[{source}] ' + msg
    if log_file is not None:
        log_file.write(msg + '\n')
    if to_console:
        print(msg)


def chronometer(f: Callable[..., ReturnType], *args, **kwargs) -> tuple[ReturnType, float]:
    """
    :param f: function whose execution time will be measured.
    :param args: non-keyword arguments of function f.
    :param kwargs: keyword arguments of function f.
    :return: a tuple of length two, containing the return of function f and the execution time.
    """
    start_time = time()
    val = f(*args, **kwargs)
    return val, time() - start_time


def parse_float_list(text: str) -> list[float]:
    """
    Parse a comma separated list of floats such as ``1e-2,3e-3,1e-3``.

    :raises ValueError: if an entry is not a number or the list is empty.
    """
    values = [float(item) for item in text.split(',') if item.strip()]
    if not values:
        raise ValueError('Empty list of values.')
    return values


def _project_dir(name: str) -> str:
    current_dir = path.dirname(path.abspath(__file__))
    parent_dir = path.abspath(path.join(current_dir, pardir))
    return path.join(parent_dir, name)


def get_and_create_logs_dir() -> str:
    dir_logs = _project_dir('logs')
    if not path.isdir(dir_logs):
        mkdir(dir_logs)
    return dir_logs


def get_reports_dir() -> str:
    return path.join(path.abspath(getcwd()), 'reports')


def save_frame(
        df: DataFrame,
        save_dir: str | None,
        name: str,
        create_dir: bool = True,
        replace: bool = False) -> str:
    """
    Save a data frame as CSV with 17 significant digits.

    :param df: data to save.
    :param save_dir: target directory. If None, the ``reports`` directory of the working directory is used.
    :param name: file name without extension.
    :param create_dir: create the directory if it doesn't exist.
    :param replace: replace the file if it already exists; otherwise a ``-count`` suffix is appended.
    :return: path of the written file.
    :raises FileNotFoundError: if the directory doesn't exist and must not be created.
    """
    if save_dir is None:
        save_dir = get_reports_dir()
    if not path.isdir(save_dir):
        if create_dir:
            mkdir(save_dir)
        else:
            raise FileNotFoundError('Directory does not exist')
    save_path = path.join(save_dir, name + '.csv')
    if not replace:
        count = 1
        while path.isfile(save_path):
            save_path = path.join(save_dir, name + f'-{count}.csv')
            count += 1
    df.to_csv(save_path, index=False, float_format=FLOAT_FORMAT)
    return save_path


class RunReport:
    """
    A class for accumulating one row per validation run (problem, order) with user-defined properties and
    saving them as CSV.
    """

    def __init__(self, name: str = 'report'):
        self.name = name
        self._data = {
            'problem': [],
            'order': [],
        }
        self._props = {}
        self._finished_setup = False
        self._rows = 0

    def add_properties(self, props: list[str]):
        """
        Add properties to the report. Repeated properties are ignored.

        :raises RuntimeError: If property definition phase has already ended.
        """
        if self._finished_setup:
            raise RuntimeError('Property definition phase already ended.')
        for prop in props:
            if prop not in self._props:
                self._data[prop] = []
                self._props[prop] = False

    def add_run_data(self, problem_name: str, order: int):
        """
        Start a new row. The first call ends the property definition phase; later calls require every property
        of the previous row to be filled.

        :raises RuntimeError: If not all properties have been filled.
        """
        if self._finished_setup and not all(self._props.values()):
            raise RuntimeError(f'Not all properties have been filled in row {self._rows}.')
        if self._finished_setup:
            self._rows += 1
            for p_name in self._props:
                self._props[p_name] = False
        self._finished_setup = True
        self._data['problem'].append(problem_name)
        self._data['order'].append(order)

    def add_property_values(self, p_name: str, p_value):
        """
        :raises RuntimeError: If property definition phase has not ended yet.
        :raises ValueError: If the property is not defined.
        """
        if not self._finished_setup:
            raise RuntimeError('Property definition has not ended yet. Add run data in order to finish it.')
        if p_name not in self._props:
            raise ValueError(f'Property {p_name} not defined.')
        self._data[p_name].append(p_value)
        self._props[p_name] = True

    def _cleanup_rows(self):
        min_length = min(len(lst) for lst in self._data.values())
        for prop, lst in self._data.items():
            self._data[prop] = lst[:min_length]
        for prop in self._props:
            self._props[prop] = True

    def get_report_data(self) -> DataFrame:
        """
        :raises RuntimeError: If no data to save or if not all properties have been filled.
        """
        if not self._finished_setup:
            raise RuntimeError('No data to save.')
        if not all(self._props.values()):
            raise RuntimeError(
                f'Not all properties have been filled in row {self._rows}.\n_data={pformat(self._data)}')
        return DataFrame(data=self._data)

    def save_csv(self, save_dir: str | None = None, report_name: str | None = None,
                 replace: bool = False, cleanup: bool = False) -> str:
        """
        :param cleanup: drop a last row with unfilled properties before saving.
        """
        if cleanup:
            self._cleanup_rows()
        return save_frame(self.get_report_data(), save_dir, report_name or self.name, replace=replace)
