from django.apps import AppConfig


class ObjectiveAppConfig(AppConfig):
    name = 'objective'
    verbose_name = 'Label-Aligned Objective'
