from django.apps import AppConfig


class FeatureStoreConfig(AppConfig):
    default_auto_field = 'django.db.models.BigAutoField'
    name = 'feature_store'
    verbose_name = 'Hybrid feature service'
