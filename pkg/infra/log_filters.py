# infra/log_filters.py
"""
Logging filters for CLI runs
Stamps records with the run context and keeps numpy arguments readable
"""

import logging
from typing import Optional

import numpy as np

ARRAY_PRECISION = 6
ARRAY_THRESHOLD = 20


def _render(arg):
    if isinstance(arg, np.ndarray):
        return np.array2string(arg, precision=ARRAY_PRECISION, threshold=ARRAY_THRESHOLD,
                               suppress_small=True, separator=", ")
    if isinstance(arg, np.floating):
        return float(arg)
    return arg


class RunContextFilter(logging.Filter):
    """Filter that tags records with `<command>:seed=<seed>` and compacts array args"""

    def __init__(self, command: str = "-", seed: Optional[int] = None):
        super().__init__()
        self.context = command if seed is None else f"{command}:seed={seed}"

    def filter(self, record):
        record.run = self.context
        if record.args:
            if isinstance(record.args, tuple):
                record.args = tuple(_render(a) for a in record.args)
            elif isinstance(record.args, dict):
                record.args = {k: _render(v) for k, v in record.args.items()}
        return True


LOG_FORMAT = '%(asctime)s - %(name)s - %(levelname)s - [%(run)s] %(message)s'


def configure_logging(level: str = "INFO", command: str = "-", seed: Optional[int] = None):
    """Configure the root logger once per process and attach the run-context filter"""
    logging.basicConfig(level=getattr(logging, level.upper(), logging.INFO), format=LOG_FORMAT, force=True)

    root_logger = logging.getLogger()
    for handler in root_logger.handlers:
        handler.addFilter(RunContextFilter(command, seed))
    return root_logger
