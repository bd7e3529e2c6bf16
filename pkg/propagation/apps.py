from django.apps import AppConfig


class PropagationAppConfig(AppConfig):
    name = 'propagation'
    verbose_name = 'Prototype Propagation'
