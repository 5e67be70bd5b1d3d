from django.apps import AppConfig


class GgmConfig(AppConfig):
    default_auto_field = 'django.db.models.BigAutoField'
    name = 'ggm'
    verbose_name = 'Graphical model structure learning'
