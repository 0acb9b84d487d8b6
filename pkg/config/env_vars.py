import os
from typing import Any, Callable, Optional, Sequence


class EnvVariableInvalid(Exception):
    """Should be raised when an environment variable holds a value the setting cannot use"""


def env_flag(value: str) -> bool:
    return value.strip().lower() in ('1', 'true', 'yes', 'on')


def env_var(var_name: str, default: Any, cast: Callable[[str], Any] = str,
            choices: Optional[Sequence[Any]] = None) -> Any:
    var = os.environ.get(var_name)
    if var is None:
        return default
    try:
        value = cast(var)
    except ValueError:
        raise EnvVariableInvalid(var_name)
    if choices is not None and value not in choices:
        raise EnvVariableInvalid(var_name)
    return value
