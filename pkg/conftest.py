import os

import django

os.environ.setdefault("DJANGO_SETTINGS_MODULE", "egaAuction.settings")
django.setup()
