from django.apps import AppConfig


class ConfidenceConfig(AppConfig):
    name = 'confidence'
    verbose_name = 'Confidence bands'
