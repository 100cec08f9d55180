import logging
from typing import Any, Dict, List, Optional

from server.celery_app import celery_app
from server.utils import network_from_body
from dgprotect.config import load_config
from dgprotect.errors import DgProtectError, InfeasibleSiteError
from dgprotect.loadflow import select_site, sweep_dg


@celery_app.task(bind=True)
def sweep_task(self, network: Dict[str, Any], sizes: List[float],
               candidates: Optional[List[int]] = None, infeasible: Optional[List[int]] = None):
    """Loss sweep over candidate buses and sizes; returns rows plus the selected site."""
    config = load_config()
    logging.info(f"TASK START: sweep {self.request.id} sizes={sizes} candidates={candidates}")
    try:
        net = network_from_body(network)
        table = sweep_dg(
            net,
            candidates or net.bus_ids,
            sizes,
            config.system.base_mva,
            tolerance=config.loadflow.tolerance_pu,
            max_iterations=config.loadflow.max_iterations,
            dg_power_factor=config.dg_defaults.power_factor,
        )
    except DgProtectError as e:
        logging.error(f"Sweep {self.request.id} failed: {e}")
        return {"status": "error", "error": str(e)}

    rows = [
        {
            "bus": row.bus,
            "dg_size_mw": row.dg_size_mw,
            "losses_kw": row.losses_kw,
            "delta_vs_baseline_pct": table.delta_pct(row),
            "converged": row.converged,
        }
        for row in table.rows
    ]
    selected = None
    if table.rows:
        try:
            bus, size = select_site(table, infeasible or [])
            selected = {"bus": bus, "dg_size_mw": size}
        except InfeasibleSiteError as e:
            logging.warning(f"Sweep {self.request.id}: {e}")

    logging.info(f"SWEEP FINISHED {self.request.id}: {len(rows)} rows, selected {selected}")
    return {
        "status": "completed",
        "baseline_losses_kw": table.baseline_losses_kw,
        "rows": rows,
        "selected": selected,
    }
