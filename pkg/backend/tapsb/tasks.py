"""Small general-purpose tasks used for diagnostics and overhead measurements."""
import time

from .registry import task


@task()
def identity(value):
    return value


@task()
def const_5():
    return 5


@task()
def add1(value):
    return value + 1


@task()
def add(*values):
    return sum(values)


@task()
def noop(*args):
    return None


@task()
def sleep(seconds: float, value=None):
    time.sleep(seconds)
    return value


@task()
def fail(message: str = "task failed"):
    raise RuntimeError(message)
