import logging

from rich.logging import RichHandler

LOG_FORMAT = '%(asctime)s %(levelname)s %(name)s: %(message)s'


def setup_logging(level=logging.INFO, log_file=None):
    """Route all package loggers to a rich console handler and an optional file"""
    root = logging.getLogger()
    root.setLevel(level)

    for handler in list(root.handlers):
        root.removeHandler(handler)
        handler.close()

    console = RichHandler(show_path=False, rich_tracebacks=True)
    console.setLevel(level)
    root.addHandler(console)

    if log_file is not None:
        file_handler = logging.FileHandler(log_file, encoding='utf-8')
        file_handler.setFormatter(logging.Formatter(LOG_FORMAT))
        file_handler.setLevel(logging.DEBUG)
        root.addHandler(file_handler)

    # emcee is chatty at INFO
    logging.getLogger('emcee').setLevel(logging.WARNING)
    return root
