import os
import sys
import json
import hashlib
from datetime import datetime
from loguru import logger
import macros
import settings
from errors import ConfigError


def load_json(path: str) -> dict:
    with open(path, 'r', encoding='utf-8') as fi:
        return json.load(fi)


def save_json(obj: dict, path: str) -> None:
    with open(path, 'w', encoding='utf-8') as fo:
        json.dump(obj, fo, indent=2, sort_keys=True, default=_jsonable)
        fo.write('\n')


def _jsonable(value):
    if hasattr(value, 'tolist'):
        return value.tolist()
    if hasattr(value, 'to_json'):
        return value.to_json()
    raise TypeError(f'Object of type {type(value).__name__} is not JSON serializable')


def config_hash(cfg: dict) -> str:
    text = json.dumps(cfg, sort_keys=True, default=_jsonable, separators=(',', ':'))
    return hashlib.sha256(text.encode('utf-8')).hexdigest()[:16]


def setup_logger(level: str = None) -> None:
    logger.remove()
    logger.add(sys.stderr, level=level or macros.LOG_LEVEL)
    if macros.TEST_OUTFILE:
        path = os.path.join(
            os.path.split(macros.__file__)[0],
            macros.TEST_OUTFILE.format(time=datetime.now(), pid=os.getpid()))
        logger.add(path, level='DEBUG')


def treeify(obj: dict, indent=4, headers=None, show_empty=False):
    headers = headers or []
    headers = {i: h for i, h in enumerate(headers)}
    lst = []
    def walk(d, depth):
        for k, v in d.items():
            if v == {} and not show_empty:
                continue
            lst.append(' '*(indent*depth) + headers.get(depth, '') + f' {k}:')
            if isinstance(v, dict):
                walk(v, depth+1)
            else:
                lst[-1] += f' {v!r}'
    walk(obj, 0)
    return '\n'.join(lst)


def _options():
    return {item: getattr(settings, item) for item in dir(settings)
            if not item.startswith('_') and not callable(getattr(settings, item))}


_defaults = _options()


def _coerce(item: str, default, value):
    """Convert `value` to the type of option `item`, checking its choices."""
    if hasattr(default, 'is_bool'):
        value = bool(value)
    elif hasattr(default, 'dtype'):
        if isinstance(value, (str, int, float)):
            value = [value]
        dtype = default.dtype or (type(value[0]) if value else str)
        try:
            value = [dtype(v) for v in value]
        except (TypeError, ValueError) as e:
            raise ConfigError(f'settings.{item}: cannot read {value!r} as a list of {dtype.__name__}') from e
    else:
        base = type(default).__bases__[0] if hasattr(default, 'choices') else type(default)
        if base is int and isinstance(value, float) and not value.is_integer():
            raise ConfigError(f'settings.{item}: expected an integer, got {value!r}')
        try:
            value = base(value)
        except (TypeError, ValueError) as e:
            raise ConfigError(f'settings.{item}: cannot read {value!r} as {base.__name__}') from e
    choices = getattr(default, 'choices', None)
    if choices is not None:
        bad = [v for v in (value if isinstance(value, list) else [value]) if v not in choices]
        if bad:
            raise ConfigError(f'settings.{item}: {bad[0]!r} is not one of {list(choices)}')
    return value


def overwrite_settings(config_file: str = None, **flags) -> dict:
    """Reset settings to defaults, then apply the JSON config file, then the flags.

    Precedence is flags > file > defaults. Flags whose value is None are ignored.
    Returns the effective plain values of all options.
    """
    for item, default in _defaults.items():
        setattr(settings, item, default)

    if config_file is not None:
        logger.info(f'{config_file} > settings')
        try:
            cfg = load_json(config_file)
        except (OSError, json.JSONDecodeError) as e:
            raise ConfigError(f'Cannot read config file {config_file}: {e}') from e
        if not isinstance(cfg, dict):
            raise ConfigError(f'Config file {config_file} must hold a JSON object')
        unknown = sorted(set(cfg) - set(_defaults))
        if unknown:
            raise ConfigError(f'Unknown config keys {unknown}')
        for item, value in cfg.items():
            value = _coerce(item, _defaults[item], value)
            setattr(settings, item, value)
            logger.info(f'settings.{item} = {value!r}')

    logger.info(f'arguments > settings')
    for item, value in flags.items():
        if value is None:
            continue
        if item not in _defaults:
            raise ConfigError(f'Unknown option {item}')
        value = _coerce(item, _defaults[item], value)
        setattr(settings, item, value)
        logger.info(f'settings.{item} = {value!r}')

    effective = {}
    for item in _defaults:
        value = getattr(settings, item)
        if hasattr(value, 'data'):
            value = value.data
        elif hasattr(value, 'choices'):
            value = type(value).__bases__[0](value)
        effective[item] = value
    return effective
