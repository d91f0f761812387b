import multiprocessing
import os

from .exceptions import ConfigError

ROMAN = ["I", "II", "III", "IV", "V", "VI", "VII", "VIII", "IX", "X"]


def worker_count():
    """Worker processes to use: $AMEN_THREADS if set, otherwise all cores"""
    value = os.environ.get("AMEN_THREADS")
    if value is None or value.strip() == "":
        return multiprocessing.cpu_count()
    try:
        count = int(value)
    except ValueError:
        raise ConfigError("AMEN_THREADS", f"must be a positive integer, got '{value}'")
    if count < 1:
        raise ConfigError("AMEN_THREADS", f"must be a positive integer, got {count}")
    return count


def pool_map(func, items):
    """``map`` over a process pool when more than one worker is allowed.

    Order is preserved, so results do not depend on the worker count.
    """
    items = list(items)
    workers = min(worker_count(), len(items))
    if workers <= 1:
        return [func(x) for x in items]
    with multiprocessing.Pool(workers) as pool:
        return pool.map(func, items)


def scale_name(s):
    """1 -> 'Scale I'"""
    numeral = ROMAN[s - 1] if 1 <= s <= len(ROMAN) else str(s)
    return f"Scale {numeral}"


def dict_to_toml(d, comment=None):
    """Nested dict (one level of tables) -> tomlkit document"""
    import tomlkit

    toml = tomlkit.document()
    if comment:
        toml.add(tomlkit.comment(comment))
    for key, value in d.items():
        if isinstance(value, dict):
            table = tomlkit.table()
            for k, v in value.items():
                table.add(k, v)
            toml.add(key, table)
        else:
            toml.add(key, value)
    return toml
