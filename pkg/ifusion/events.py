RUN_STARTED = "RUN_STARTED"
STAGE_STARTED = "STAGE_STARTED"
EPOCH_COMPLETED = "EPOCH_COMPLETED"
SCATTER_EMITTED = "SCATTER_EMITTED"  # integrity snapshot on the valid split
CHECKPOINT_SAVED = "CHECKPOINT_SAVED"
EARLY_STOPPED = "EARLY_STOPPED"
EVAL_COMPLETED = "EVAL_COMPLETED"
RUN_COMPLETED = "RUN_COMPLETED"
RUN_FAILED = "RUN_FAILED"
