from django.apps import AppConfig


class WorkbenchConfig(AppConfig):
    name = 'workbench'
    verbose_name = 'Command-line workbench'
