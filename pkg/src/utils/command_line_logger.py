import logging
import os
from typing import Optional

from colorlog import ColoredFormatter


class CommandLineLogger:
    """
    src.utils.command_line_logger.CommandLineLogger class.
    :desc: Utility class to log colorfully messages to console (and optionally mirror them to a plain-text file).
    """
    LOG_FORMAT_DEFAULT = "  %(log_color)s%(levelname)-8s%(reset)s | %(log_color)s%(name)s%(reset)s | " \
                         "%(log_color)s%(message)s%(reset)s"
    LOG_FILE_FORMAT = "%(asctime)s %(levelname)-8s %(name)s | %(message)s"

    @property
    def log_level(self) -> str:
        return self._log_level

    @log_level.setter
    def log_level(self, log_level: str):
        log_level = log_level.upper()
        if self._log_level == log_level:
            return
        self._log_level = log_level
        self._stream.setLevel(log_level)
        self._logger.setLevel(log_level)

    @property
    def log_format(self) -> str:
        return self._log_format

    @log_format.setter
    def log_format(self, log_format: str):
        if self._log_format == log_format:
            return
        self._log_format = log_format
        self._stream.setFormatter(ColoredFormatter(log_format))

    @property
    def logger(self) -> logging.Logger:
        return self._logger

    def __init__(self, log_level: Optional[str] = None, log_format: str = LOG_FORMAT_DEFAULT,
                 name: Optional[str] = None, log_file: Optional[str] = None):
        """
        CommandLineLogger constructor.
        :param (str) log_level: one of 'info', 'debug', 'warning', 'error', 'critical' (defaults to the `LOG_LEVEL`
                                environment variable, or 'info')
        :param (str) log_format: colorlog format of the console stream
        :param (str) name: logger name; loggers sharing a name share their handlers
        :param (str) log_file: if set, every record is also appended (uncolored) to this file
        """
        self._logger = logging.getLogger(f'flux.{name or "root"}')
        self._logger.propagate = False
        # Re-use the stream handler of an already configured logger with the same name
        streams = [_h for _h in self._logger.handlers if getattr(_h, '_flux_stream', False)]
        if streams:
            self._stream = streams[0]
        else:
            self._stream = logging.StreamHandler()
            self._stream._flux_stream = True
            self._logger.addHandler(self._stream)

        self._log_level = None
        self._log_format = None
        self.log_level = log_level or os.getenv('LOG_LEVEL', 'info')
        self.log_format = log_format

        if log_file is not None:
            self.attach_file(log_file)

    def attach_file(self, log_file: str) -> None:
        """
        Mirror records of this logger into the given plain-text file (once per file path).
        :param (str) log_file: path of the log file; parent directory must exist
        """
        log_file = os.path.abspath(log_file)
        for _h in self._logger.handlers:
            if isinstance(_h, logging.FileHandler) and _h.baseFilename == log_file:
                return
        file_handler = logging.FileHandler(log_file)
        file_handler.setFormatter(logging.Formatter(self.LOG_FILE_FORMAT))
        self._logger.addHandler(file_handler)

    def info(self, message: str, *args, **kwargs):
        return self.logger.info(message, *args, **kwargs)

    def debug(self, message: str, *args, **kwargs):
        return self.logger.debug(message, *args, **kwargs)

    def warning(self, message: str, *args, **kwargs):
        return self.logger.warning(message, *args, **kwargs)

    def error(self, message: str, *args, **kwargs):
        return self.logger.error(message, *args, **kwargs)

    def critical(self, message: str, *args, **kwargs):
        return self.logger.critical(message, *args, **kwargs)


def set_log_level(log_level: str) -> None:
    """
    Set the level of every logger created through `CommandLineLogger` so far (and of later ones, through the
    `LOG_LEVEL` environment variable).
    :param (str) log_level: one of 'info', 'debug', 'warning', 'error', 'critical'
    """
    log_level = log_level.upper()
    os.environ['LOG_LEVEL'] = log_level.lower()
    for name, logger in logging.root.manager.loggerDict.items():
        if not name.startswith('flux.') or not isinstance(logger, logging.Logger):
            continue
        logger.setLevel(log_level)
        for handler in logger.handlers:
            if getattr(handler, '_flux_stream', False):
                handler.setLevel(log_level)
