"""Base-32 geohash encoding for grid aggregation."""

from __future__ import annotations

from functools import lru_cache

from .errors import InvalidArgumentError
from .model import GeoPoint

BASE32 = "0123456789bcdefghjkmnpqrstuvwxyz"
_DECODE = {c: i for i, c in enumerate(BASE32)}

MIN_PRECISION = 1
MAX_PRECISION = 8


@lru_cache(maxsize=262_144)
def encode(lat: float, lon: float, precision: int = 5) -> str:
    """Encode a point into a geohash cell of the given precision.

    Interval bisection, alternating longitude/latitude. Bisection compares
    against exact binary midpoints, so the emitted cell's bounding box
    always contains the point (quantizing via (lat+90)/180 loses that
    guarantee within one float ulp of cell boundaries). Pure, so results
    are memoized: grid aggregations re-encode the same record locations on
    every query.
    """
    _check_precision(precision)
    if not (-90.0 <= lat <= 90.0) or not (-180.0 <= lon <= 180.0):
        raise InvalidArgumentError(f"coordinates out of range: ({lat}, {lon})")
    lat_lo, lat_hi = -90.0, 90.0
    lon_lo, lon_hi = -180.0, 180.0
    chars: list[str] = []
    bits = 0
    current = 0
    lon_turn = True
    while len(chars) < precision:
        if lon_turn:
            mid = (lon_lo + lon_hi) / 2
            if lon >= mid:
                current = (current << 1) | 1
                lon_lo = mid
            else:
                current <<= 1
                lon_hi = mid
        else:
            mid = (lat_lo + lat_hi) / 2
            if lat >= mid:
                current = (current << 1) | 1
                lat_lo = mid
            else:
                current <<= 1
                lat_hi = mid
        lon_turn = not lon_turn
        bits += 1
        if bits == 5:
            chars.append(BASE32[current])
            bits = 0
            current = 0
    return "".join(chars)


def decode_bbox(geohash: str) -> tuple[float, float, float, float]:
    """Return the cell's (lat_lo, lat_hi, lon_lo, lon_hi) bounding box."""
    if not geohash:
        raise InvalidArgumentError("empty geohash")
    lat_lo, lat_hi = -90.0, 90.0
    lon_lo, lon_hi = -180.0, 180.0
    lon_turn = True
    for char in geohash:
        try:
            value = _DECODE[char]
        except KeyError:
            raise InvalidArgumentError(f"invalid geohash character: {char!r}") from None
        for shift in range(4, -1, -1):
            bit = (value >> shift) & 1
            if lon_turn:
                mid = (lon_lo + lon_hi) / 2
                if bit:
                    lon_lo = mid
                else:
                    lon_hi = mid
            else:
                mid = (lat_lo + lat_hi) / 2
                if bit:
                    lat_lo = mid
                else:
                    lat_hi = mid
            lon_turn = not lon_turn
    return lat_lo, lat_hi, lon_lo, lon_hi


def encode_point(point: GeoPoint, precision: int = 5) -> str:
    return encode(point.lat, point.lon, precision)


def _check_precision(precision: int) -> None:
    if not (MIN_PRECISION <= precision <= MAX_PRECISION):
        raise InvalidArgumentError(
            f"precision must be in {MIN_PRECISION}..{MAX_PRECISION}, got {precision}")
