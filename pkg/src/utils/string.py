import datetime

import humanize


def to_human_readable(number: int, with_exact: bool = False) -> str:
    """
    Short human-readable count (e.g. 15120 -> '15.1K', 2400000 -> '2.4M'), used for parameter counts.
    :param (int) number: a non-negative integer
    :param (bool) with_exact: set to True to append the exact number in parentheses
    :return: a `str` object
    """
    text = humanize.naturalsize(number, format='%.1f').replace(' ', '').replace('Bytes', '').replace('Byte', '')
    text = text.replace('.0', '').replace('kB', 'K').replace('MB', 'M').replace('GB', 'B').replace('TB', 'T')
    return text + (f' ({number})' if with_exact else '')


def to_human_duration(seconds: float) -> str:
    """
    :return: e.g. '2 minutes and 3.50 seconds'
    """
    return humanize.precisedelta(datetime.timedelta(seconds=seconds), minimum_unit='seconds', format='%0.2f')
