from typing import List

from fcf.handlers.common import Router
from fcf.handlers.filters import router as filters_router
from fcf.handlers.train import router as train_router
from fcf.handlers.detect import router as detect_router
from fcf.handlers.evaluate import router as evaluate_router
from fcf.handlers.synth import router as synth_router
from fcf.handlers.stats import router as stats_router


def get_all_routers() -> List[Router]:
    """Get all command routers."""
    return [
        filters_router,
        train_router,
        detect_router,
        evaluate_router,
        synth_router,
        stats_router,
    ]
