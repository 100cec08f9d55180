import os

from celery import Celery
from celery.signals import after_setup_logger, after_setup_task_logger

from dgprotect.config import attach_file_handler, load_config, log_file_path

REDIS_URL = os.environ.get("REDIS_URL", "redis://redis:6379/0")

celery_app = Celery(
    "dgprotect_worker",
    broker=REDIS_URL,
    backend=REDIS_URL,
    include=["server.tasks"]
)

celery_app.conf.update(
    task_serializer="json",
    accept_content=["json"],
    result_serializer="json",
    timezone="UTC",
    enable_utc=True,
    # Sweeps run one power flow per candidate; report STARTED while they do
    task_track_started=True,
    worker_prefetch_multiplier=1,
    result_expires=24 * 3600,
)

# Worker logs go to the same dgprotect.log as the API
LOG_FILE = log_file_path(load_config().log_dir)


@after_setup_logger.connect
def setup_loggers(logger, *args, **kwargs):
    attach_file_handler(logger, LOG_FILE)


@after_setup_task_logger.connect
def setup_task_loggers(logger, *args, **kwargs):
    attach_file_handler(logger, LOG_FILE)
