from .models import (
    Encoder,
    Classifier,
    build_models,
    load_models,
    save_models
)
from .metrics import (
    MetricsRecord,
    accuracy,
    evaluate,
    roc_auc
)
from .trainer import (
    Trainer,
    dump_features,
    gradient_check,
    train
)
