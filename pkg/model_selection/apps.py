from django.apps import AppConfig


class ModelSelectionConfig(AppConfig):
    name = 'model_selection'
    verbose_name = 'BIC model selection'
