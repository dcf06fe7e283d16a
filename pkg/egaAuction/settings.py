"""
Django Settings for the EGA auction pipeline
Desk-scale generative ad ranking, allocation and training.
"""
from pathlib import Path
from decouple import config

BASE_DIR = Path(__file__).resolve().parent.parent

# ==============================================================================
# CORE SETTINGS
# ==============================================================================
SECRET_KEY = config("SECRET_KEY", default="ega-desk-scale-not-a-secret")
DEBUG = config("DEBUG", default=False, cast=bool)
EGA_ENV = config("EGA_ENV", default="development")

ALLOWED_HOSTS = ["127.0.0.1", "localhost"]

# ==============================================================================
# INSTALLED APPS
# ==============================================================================
INSTALLED_APPS = [
    "django.contrib.contenttypes",

    # Local apps
    "numerics",
    "feature_store",
    "recformer",
    "aucformer",
    "training",
    "evaluation",
    "harness",

    # Third-party
    "rest_framework",
]

# ==============================================================================
# DATABASE
# ==============================================================================
# Nothing is persisted in a database; run artifacts live under --out.
DATABASES = {
    "default": {
        "ENGINE": "django.db.backends.sqlite3",
        "NAME": BASE_DIR / config("DB_NAME", default="db.sqlite3"),
    }
}

# ==============================================================================
# INTERNATIONALIZATION
# ==============================================================================
LANGUAGE_CODE = "en-us"
TIME_ZONE = "UTC"
USE_I18N = False
USE_TZ = True

# ==============================================================================
# REST FRAMEWORK
# ==============================================================================
REST_FRAMEWORK = {
    "DEFAULT_RENDERER_CLASSES": [
        "rest_framework.renderers.JSONRenderer",
    ],
    "COERCE_DECIMAL_TO_STRING": False,
}

# ==============================================================================
# NUMERICS
# ==============================================================================
EGA_DICE_MOMENTUM = config("EGA_DICE_MOMENTUM", default=0.99, cast=float)
EGA_DICE_EPSILON = config("EGA_DICE_EPSILON", default=1e-8, cast=float)
EGA_BCE_CLAMP = config("EGA_BCE_CLAMP", default=1e-7, cast=float)

# Worker count for request-parallel evaluation; 1 means single-threaded
# (bit-exact) mode and also pins BLAS to one thread.
EGA_N_JOBS = config("EGA_N_JOBS", default=1, cast=int)

# Desk-scale training checks take tens of minutes; off unless asked for.
EGA_DIRECTIONAL_TESTS = config("EGA_DIRECTIONAL_TESTS", default=False, cast=bool)

# ==============================================================================
# CACHING CONFIGURATION
# ==============================================================================
# The "user_features" alias is the simulated remote feature service. Use Redis
# if REDIS_URL is set, otherwise an in-process store.
EGA_USER_CACHE_TIMEOUT = config("EGA_USER_CACHE_TIMEOUT", default=0, cast=int) or None
CACHE_KEY_PREFIX = "ega"

REDIS_URL = config("REDIS_URL", default="")

if REDIS_URL:
    USER_FEATURE_CACHE = {
        "BACKEND": "django_redis.cache.RedisCache",
        "LOCATION": REDIS_URL,
        "TIMEOUT": EGA_USER_CACHE_TIMEOUT,
        "OPTIONS": {
            "CLIENT_CLASS": "django_redis.client.DefaultClient",
            "SOCKET_CONNECT_TIMEOUT": 5,
            "SOCKET_TIMEOUT": 5,
        },
        "KEY_PREFIX": CACHE_KEY_PREFIX,
    }
else:
    USER_FEATURE_CACHE = {
        "BACKEND": "django.core.cache.backends.locmem.LocMemCache",
        "LOCATION": "ega-user-features",
        "TIMEOUT": EGA_USER_CACHE_TIMEOUT,
        "OPTIONS": {
            "MAX_ENTRIES": 1_000_000,
        },
    }

CACHES = {
    "default": {
        "BACKEND": "django.core.cache.backends.locmem.LocMemCache",
        "LOCATION": "ega-default",
    },
    "user_features": USER_FEATURE_CACHE,
}

# ==============================================================================
# LOGGING
# ==============================================================================
EGA_LOG_LEVEL = config("EGA_LOG_LEVEL", default="INFO")

LOGGING = {
    "version": 1,
    "disable_existing_loggers": False,
    "formatters": {
        "verbose": {
            "format": "{levelname} {asctime} {module} {process:d} {thread:d} {message}",
            "style": "{",
        },
        "simple": {
            "format": "{levelname} {name} {message}",
            "style": "{",
        },
    },
    "handlers": {
        "console": {
            "class": "logging.StreamHandler",
            "level": "DEBUG",
            "formatter": "verbose" if DEBUG else "simple",
        },
    },
    "loggers": {
        "django": {
            "handlers": ["console"],
            "level": "WARNING",
            "propagate": True
        },
        **{
            app: {
                "handlers": ["console"],
                "level": EGA_LOG_LEVEL,
                "propagate": False,
            }
            for app in (
                "numerics",
                "feature_store",
                "recformer",
                "aucformer",
                "training",
                "evaluation",
                "harness",
            )
        },
    },
}

# ==============================================================================
# DEFAULT AUTO FIELD
# ==============================================================================
DEFAULT_AUTO_FIELD = "django.db.models.BigAutoField"
