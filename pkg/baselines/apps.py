from django.apps import AppConfig


class BaselinesConfig(AppConfig):
    name = 'baselines'
    verbose_name = 'Baseline estimators'
