"""Name-based registries for task functions and applications.

Tasks cross process boundaries by name, so the client and every worker must
load the same set of modules. load_builtin_tasks() imports all of them.
"""
import importlib
import logging
from typing import Callable, Dict, List, Optional, Type, Union

from .errors import RegistrationError

logger = logging.getLogger(__name__)

_TASKS: Dict[str, Callable] = {}
_APPS: Dict[str, type] = {}

BUILTIN_TASK_MODULES = (
    "tapsb.tasks",
    "tapsb.engine",
    "tapsb.apps.cholesky",
    "tapsb.apps.mapreduce",
    "tapsb.apps.synthetic",
    "tapsb.apps.failures",
)


def task(name: Optional[str] = None):
    """Register a function as a task under ``name`` (defaults to __name__)."""
    def decorator(fn: Callable) -> Callable:
        task_name = name or fn.__name__
        existing = _TASKS.get(task_name)
        if existing is not None and existing is not fn:
            if (existing.__module__, existing.__qualname__) != (fn.__module__, fn.__qualname__):
                raise RegistrationError(f"task name {task_name!r} already registered")
        _TASKS[task_name] = fn
        fn.task_name = task_name
        return fn
    return decorator


def task_name(function: Union[str, Callable]) -> str:
    if isinstance(function, str):
        return function
    name = getattr(function, "task_name", None)
    if name is None:
        raise RegistrationError(f"{function!r} is not a registered task")
    return name


def get_task(function: Union[str, Callable]) -> Callable:
    name = task_name(function)
    if name not in _TASKS:
        load_builtin_tasks()
    try:
        return _TASKS[name]
    except KeyError:
        raise RegistrationError(f"unknown task {name!r}") from None


def task_names() -> List[str]:
    return sorted(_TASKS)


def builtin_task_names() -> List[str]:
    """Names registered by the built-in modules, which every worker loads."""
    load_builtin_tasks()
    return sorted(name for name, fn in _TASKS.items() if fn.__module__ in BUILTIN_TASK_MODULES)


def register_app(name: str):
    """Register an AppConfig subclass under an application name."""
    def decorator(config_cls: type) -> type:
        existing = _APPS.get(name)
        if existing is not None and existing.__qualname__ != config_cls.__qualname__:
            raise RegistrationError(f"app name {name!r} already registered")
        _APPS[name] = config_cls
        config_cls.app_name = name
        return config_cls
    return decorator


def get_app_config(name: str) -> Type:
    load_builtin_tasks()
    try:
        return _APPS[name]
    except KeyError:
        raise RegistrationError(
            f"unknown app {name!r}; choose from {', '.join(app_names())}"
        ) from None


def app_names() -> List[str]:
    load_builtin_tasks()
    return sorted(_APPS)


def load_builtin_tasks() -> None:
    for module in BUILTIN_TASK_MODULES:
        importlib.import_module(module)
