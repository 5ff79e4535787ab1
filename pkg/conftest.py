import os

import django

os.environ.setdefault("DJANGO_SETTINGS_MODULE", "latent_regression.settings")
django.setup()
