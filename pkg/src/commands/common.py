import logging
from contextlib import contextmanager

import typer

from dependencies import get_representor
from errors import ConfigError, SteeringError

logger = logging.getLogger(__name__)


@contextmanager
def exit_on_error():
    """Maps pipeline errors to their exit codes with a one-line diagnostic on stderr."""
    try:
        yield
    except SteeringError as e:
        logger.debug("Command failed", exc_info=True)
        get_representor().error(str(e))
        raise typer.Exit(code=e.exit_code) from e
    except ValueError as e:
        # pydantic ValidationError is a ValueError; both mean a bad input
        logger.debug("Invalid input", exc_info=True)
        get_representor().error(f"Invalid input: {e}")
        raise typer.Exit(code=ConfigError.exit_code) from e
