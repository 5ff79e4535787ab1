from django.apps import AppConfig


class RhlpConfig(AppConfig):
    name = 'rhlp'
    verbose_name = 'Hidden logistic process regression'
