from django.contrib import admin

from .models import ExperimentRun, RepetitionResult


class RepetitionResultInline(admin.TabularInline):
    model = RepetitionResult
    extra = 0
    fields = ['repetition', 'seed', 'status', 'error']
    readonly_fields = fields


@admin.register(ExperimentRun)
class ExperimentRunAdmin(admin.ModelAdmin):
    list_display = ['id', 'name', 'status', 'repetitions', 'master_seed', 'theorem_passed', 'created_at']
    list_filter = ['status']
    inlines = [RepetitionResultInline]


@admin.register(RepetitionResult)
class RepetitionResultAdmin(admin.ModelAdmin):
    list_display = ['run', 'repetition', 'seed', 'status']
    list_filter = ['status']
