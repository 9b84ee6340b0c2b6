import functools
import logging

import click

from services.errors import ScaWaveError

logger = logging.getLogger(__name__)

IO_EXIT_CODE = 2


class ExitCodeMiddleware:
    """Ошибки проекта и ввода-вывода -> сообщение в лог и код выхода"""

    def __call__(self, handler, *args, **kwargs):
        try:
            return handler(*args, **kwargs)
        except ScaWaveError as e:
            logger.error(f"{type(e).__name__}: {e}")
            click.echo(f"Error: {e}", err=True)
            raise click.exceptions.Exit(e.exit_code)
        except OSError as e:
            logger.error(f"I/O error: {e}")
            click.echo(f"Error: {e}", err=True)
            raise click.exceptions.Exit(IO_EXIT_CODE)


exit_codes = ExitCodeMiddleware()


def with_exit_codes(handler):
    @functools.wraps(handler)
    def wrapper(*args, **kwargs):
        return exit_codes(handler, *args, **kwargs)
    return wrapper
