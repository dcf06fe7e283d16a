#!/usr/bin/env python
"""Command-line entry point of the EGA pipeline (gen-data, training phases, evaluate, flops, report)."""
import os


def main():
    os.environ.setdefault('DJANGO_SETTINGS_MODULE', 'egaAuction.settings')
    try:
        import django
    except ImportError as exc:
        raise ImportError(
            "Couldn't import Django. Are you sure it's installed and "
            "available on your PYTHONPATH environment variable?"
        ) from exc
    django.setup()

    from harness.cli import cli
    cli(prog_name="ega")


if __name__ == '__main__':
    main()
