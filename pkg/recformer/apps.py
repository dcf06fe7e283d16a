from django.apps import AppConfig


class RecformerConfig(AppConfig):
    default_auto_field = 'django.db.models.BigAutoField'
    name = 'recformer'
    verbose_name = 'Cluster-attention candidate encoder'
