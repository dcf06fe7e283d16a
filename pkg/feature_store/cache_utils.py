"""
EGA - Remote user-store cache utilities
The "user_features" cache alias stands in for the remote feature service;
one cache.get is one simulated RPC.
"""
import logging

from django.conf import settings
from django.core.cache import caches

logger = logging.getLogger(__name__)

USER_CACHE_ALIAS = "user_features"
PREFIX = getattr(settings, 'CACHE_KEY_PREFIX', 'ega')


def user_cache():
    return caches[USER_CACHE_ALIAS]


def make_cache_key(*args):
    """
    Generate a consistent cache key from arguments.

    Usage:
        key = make_cache_key('user', namespace, user_id)
    """
    parts = [PREFIX] + [str(arg) for arg in args if arg is not None]
    return ':'.join(parts)


def user_key(namespace, user_id):
    return make_cache_key('user', namespace, user_id)


def publish_payloads(payloads, namespace):
    """Write {user_id: payload} to the remote store in one batch."""
    data = {user_key(namespace, uid): payload for uid, payload in payloads.items()}
    user_cache().set_many(data, timeout=settings.EGA_USER_CACHE_TIMEOUT)
    logger.debug(f"Published {len(data)} user payloads under namespace {namespace}")


def fetch_payload(namespace, user_id):
    """Single remote call; returns None on a miss."""
    key = user_key(namespace, user_id)
    payload = user_cache().get(key)
    logger.debug(f"Remote {'HIT' if payload is not None else 'MISS'}: {key}")
    return payload


def invalidate_namespace(namespace, user_ids):
    keys = [user_key(namespace, uid) for uid in user_ids]
    user_cache().delete_many(keys)
    logger.debug(f"Cache INVALIDATED: {len(keys)} users in {namespace}")
