from cffe.panel.panel_core import (
    EventTime,
    Observation,
    PanelDataset,
    balance_table,
    build_dataset,
    compute_event_time,
    redate,
    restrict,
    summary_stats,
)
from cffe.panel.panel_csv import PanelSchema, export_panel, load_panel

__all__ = [
    "EventTime",
    "Observation",
    "PanelDataset",
    "PanelSchema",
    "balance_table",
    "build_dataset",
    "compute_event_time",
    "export_panel",
    "load_panel",
    "redate",
    "restrict",
    "summary_stats",
]
