from django.apps import AppConfig


class AucformerConfig(AppConfig):
    default_auto_field = 'django.db.models.BigAutoField'
    name = 'aucformer'
    verbose_name = 'Slot allocation and payment'
