from django.contrib import admin
from django.urls import path

urlpatterns = [
    # Experiment runs are browsed through the admin; the CLI is the main surface.
    path("admin/", admin.site.urls),
]
