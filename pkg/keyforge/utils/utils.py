import os
import re
import sys
import json

import yaml
from keyforge.constant import MEBIBYTE
from keyforge.exception import InvalidConfigError, KeyforgeException

_SIZE_PATTERN = re.compile(r"^\s*(\d+)\s*([kmg]?)(i?b)?\s*$", re.IGNORECASE)
_SIZE_UNITS = {"": 1, "k": 1 << 10, "m": MEBIBYTE, "g": 1 << 30}


def write_yaml(file_path: str, data: dict = None) -> None:
    """
    Create yaml file
    :param file_path: str
    :param data: dict
    :return: None
    """
    try:
        os.makedirs(os.path.dirname(os.path.abspath(file_path)), exist_ok=True)
        with open(file_path, "w") as yaml_file:
            if data is not None:
                yaml.safe_dump(data, yaml_file, sort_keys=False)
    except Exception as e:
        raise KeyforgeException(e, sys) from e


def read_yaml(file_path: str) -> dict:
    """This function reads a yaml file and returns a dict"""
    try:
        with open(file_path, "rb") as yaml_file:
            return yaml.safe_load(yaml_file) or {}
    except Exception as e:
        raise KeyforgeException(e, sys) from e


def write_json(file_path: str, data) -> None:
    try:
        os.makedirs(os.path.dirname(os.path.abspath(file_path)), exist_ok=True)
        with open(file_path, "w") as json_file:
            json.dump(data, json_file, indent=2)
    except Exception as e:
        raise KeyforgeException(e, sys) from e


def read_json(file_path: str):
    try:
        with open(file_path) as json_file:
            return json.load(json_file)
    except Exception as e:
        raise KeyforgeException(e, sys) from e


def parse_size(value) -> int:
    """
    Byte size from an int or a string such as "4096", "64K", "16M" or "1MiB".
    """
    if isinstance(value, int):
        size = value
    else:
        match = _SIZE_PATTERN.match(str(value))
        if match is None:
            raise InvalidConfigError(f"unreadable size: {value!r}")
        size = int(match.group(1)) * _SIZE_UNITS[match.group(2).lower()]
    if size < 0:
        raise InvalidConfigError(f"size must not be negative, got {value!r}")
    return size


def parse_bool(value) -> bool:
    if isinstance(value, bool):
        return value
    text = str(value).strip().lower()
    if text in ("1", "true", "yes", "on"):
        return True
    if text in ("0", "false", "no", "off", ""):
        return False
    raise InvalidConfigError(f"unreadable boolean: {value!r}")


def lossy_text(data: bytes) -> str:
    return data.decode("utf-8", errors="replace")
