from celery import shared_task

from experiments.experiment_service import ExperimentService


@shared_task
def run_repetition_task(config, repetition):
    """Run one repetition on a worker; failures come back as a failed result dict"""
    service = ExperimentService(config, record=False)
    return service.safe_repetition(repetition)


@shared_task
def run_experiment_task(config):
    """Run a whole experiment on a worker and record it"""
    summary = ExperimentService(config, record=True).run()
    return {'run_id': summary.run_id, 'status': summary.status, 'theorem_passed': summary.theorem_passed}
